//! Evaluators selectable from the command line.

use std::collections::HashMap;
use std::io::Write;
use std::process::Command;
use std::sync::{Arc, Mutex};

use lidaraug_core::policy::write_policy;
use lidaraug_core::synth::{ProxyConfig, ProxyData};
use lidaraug_core::tune::{EvalError, Evaluator};
use lidaraug_core::PolicySpec;

/// Environment variable holding the path of the policy being scored.
pub const POLICY_ENV: &str = "LIDARAUG_POLICY";

/// The synthetic proxy objective, with scenes cached per seed.
#[derive(Default)]
pub struct ProxyEvaluator {
    cfg: ProxyConfig,
    cache: Mutex<HashMap<u64, Arc<ProxyData>>>,
}

impl ProxyEvaluator {
    pub fn new(cfg: ProxyConfig) -> Self {
        Self {
            cfg,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn data(&self, seed: u64) -> Result<Arc<ProxyData>, EvalError> {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(d) = cache.get(&seed) {
            return Ok(d.clone());
        }
        let d = Arc::new(ProxyData::new(&self.cfg, seed).map_err(|e| EvalError(e.to_string()))?);
        cache.insert(seed, d.clone());
        Ok(d)
    }
}

impl Evaluator for ProxyEvaluator {
    fn evaluate(&self, spec: &PolicySpec, m: f64, p: f64, seed: u64) -> Result<f64, EvalError> {
        self.data(seed)?.score(spec, m, p).map_err(EvalError)
    }
}

/// Runs `program args... m p seed` with the policy file path in
/// [`POLICY_ENV`] and reads one number from its standard output.
pub struct CommandEvaluator {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandEvaluator {
    /// Splits a command line on whitespace.
    pub fn parse(command: &str) -> Option<Self> {
        let mut parts = command.split_whitespace().map(String::from);
        let program = parts.next()?;
        Some(Self {
            program,
            args: parts.collect(),
        })
    }
}

impl Evaluator for CommandEvaluator {
    fn evaluate(&self, spec: &PolicySpec, m: f64, p: f64, seed: u64) -> Result<f64, EvalError> {
        let fail = |msg: String| EvalError(format!("{}: {msg}", self.program));
        let mut policy = tempfile::Builder::new()
            .suffix(".policy")
            .tempfile()
            .map_err(|e| fail(e.to_string()))?;
        policy
            .write_all(write_policy(spec).as_bytes())
            .map_err(|e| fail(e.to_string()))?;
        let out = Command::new(&self.program)
            .args(&self.args)
            .args([m.to_string(), p.to_string(), seed.to_string()])
            .env(POLICY_ENV, policy.path())
            .output()
            .map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!("exited with {}", out.status)));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let mut tokens = text.split_whitespace();
        match (tokens.next().map(str::parse::<f64>), tokens.next()) {
            (Some(Ok(v)), None) if !v.is_nan() => Ok(v),
            _ => Err(fail(format!(
                "expected one number on stdout, got {:?}",
                text.trim()
            ))),
        }
    }
}
