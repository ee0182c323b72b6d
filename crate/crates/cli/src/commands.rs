//! One function per subcommand.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use lidaraug_core::format::{parse_image, write_bank, write_frame, write_image, ImageFile};
use lidaraug_core::ops::{ExemplarBank, FireTag, OpKind};
use lidaraug_core::policy::{
    apply_resolved, check_inputs, write_policy, AugmentContext, DEFAULT_POLICY_TEXT,
};
use lidaraug_core::rangeview::{assign_rays, resolve_occlusion};
use lidaraug_core::synth::{generate_dataset, SceneConfig};
use lidaraug_core::tune::{
    align_all, search_mp, AlignmentResult, Anchor, CellStatus, Evaluator, OpGrid, SearchResult,
};
use lidaraug_core::{
    resolve, ClassId, Frame, ImageShape, PolicySpec, RangeGeometry, RangeImage, RngStream,
};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::evaluator::{CommandEvaluator, ProxyEvaluator};
use crate::files::{
    ensure_dir, list_frames, read_bank, read_frame, read_frames, read_policy, write_atomic,
    FRAME_EXT,
};
use crate::{
    AlignArgs, ApplyArgs, BuildBankArgs, ConfigError, DefaultPolicyArgs, EvaluatorArgs,
    GenerateArgs, Outcome, ProjectArgs, SearchArgs,
};

pub const MANIFEST_MAGIC: &str = "LAMANIFEST1";
pub const MANIFEST_NAME: &str = "manifest.txt";

fn config(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn frame_path(dir: &Path, frame_id: &str) -> PathBuf {
    dir.join(format!("{frame_id}.{FRAME_EXT}"))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the policy's canonical file text.
pub fn policy_hash(spec: &PolicySpec) -> String {
    hex(&Sha256::digest(write_policy(spec).as_bytes()))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<Outcome> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
            SceneConfig::parse(&text).map_err(|e| config(format!("{}: {e}", path.display())))?
        }
        None => SceneConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| config(e.to_string()))?;
    if args.prefix.chars().any(char::is_whitespace) {
        return Err(config(format!(
            "prefix {:?} contains whitespace",
            args.prefix
        )));
    }
    let frames = generate_dataset(&cfg, args.count, &args.prefix)?;
    ensure_dir(&args.out)?;
    frames
        .par_iter()
        .try_for_each(|f| write_atomic(&frame_path(&args.out, &f.frame_id), &write_frame(f)))?;
    let mut out = Outcome::default();
    out.say(format!(
        "wrote {} frames to {}",
        frames.len(),
        args.out.display()
    ));
    Ok(out)
}

/// Fire statistics of one `apply` run.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub policy_sha256: String,
    pub m: f64,
    pub p: f64,
    pub seed: u64,
    /// Every gate of the resolved policy with its probability and fire count.
    pub gates: Vec<(FireTag, f64, usize)>,
    /// Frame id and the gates that fired on it, sorted by frame id.
    pub frames: Vec<(String, Vec<FireTag>)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{MANIFEST_MAGIC}\npolicy_sha256 {}\nm {}\np {}\nseed {}\nframes {}\n",
            self.policy_sha256,
            self.m,
            self.p,
            self.seed,
            self.frames.len()
        );
        for (tag, prob, count) in &self.gates {
            s += &format!("fire {tag} {count} {prob}\n");
        }
        for (id, fires) in &self.frames {
            let tags: Vec<String> = fires.iter().map(ToString::to_string).collect();
            let tags = if tags.is_empty() {
                "-".to_string()
            } else {
                tags.join(",")
            };
            s += &format!("frame {id} {tags}\n");
        }
        s
    }

    pub fn fire_count(&self, tag: FireTag) -> Option<usize> {
        self.gates.iter().find(|(t, _, _)| *t == tag).map(|g| g.2)
    }
}

pub fn cmd_apply(args: &ApplyArgs) -> Result<Outcome> {
    let spec = read_policy(args.policy.as_deref())?;
    let policy = resolve(&spec, args.m, args.p).map_err(|e| config(e.to_string()))?;
    let bank = args.bank.as_deref().map(read_bank).transpose()?;

    let files = list_frames(&args.input)?;
    let parsed: Vec<_> = files.par_iter().map(|p| read_frame(p)).collect();
    let mut out = Outcome::default();
    // Ordinals follow the sorted listing so a frame's stream never depends on
    // whether its neighbours parsed.
    let mut inputs = Vec::new();
    for (ordinal, r) in parsed.into_iter().enumerate() {
        match r {
            Ok(f) => inputs.push((ordinal as u64, f)),
            Err(e) => out.failures.push(e),
        }
    }
    let mut seen = HashMap::new();
    for (ordinal, f) in &inputs {
        if let Some(prev) = seen.insert(f.frame_id.clone(), *ordinal) {
            return Err(config(format!(
                "frame id {} appears in both {} and {}",
                f.frame_id,
                files[prev as usize].display(),
                files[*ordinal as usize].display()
            )));
        }
    }

    let partner_frames: Vec<Frame> = match &args.partners {
        Some(dir) => {
            let (frames, failures) = read_frames(dir)?;
            if let Some(e) = failures.first() {
                return Err(config(format!("partner frame: {e}")));
            }
            frames.into_iter().map(|(_, f)| f).collect()
        }
        None => inputs.iter().map(|(_, f)| f.clone()).collect(),
    };
    let ctx = AugmentContext {
        bank: bank.as_ref(),
        partners: &partner_frames,
        geometry: None,
    };
    check_inputs(&policy, &ctx).map_err(|e| config(e.to_string()))?;

    ensure_dir(&args.out)?;
    let root = RngStream::new(args.seed);
    let results: Vec<Result<(String, Vec<FireTag>), String>> = inputs
        .into_par_iter()
        .map(|(ordinal, frame)| {
            let id = frame.frame_id.clone();
            let path = &files[ordinal as usize];
            let aug = apply_resolved(frame, &policy, &root.derive("frame", ordinal), &ctx)
                .map_err(|e| format!("{}: {e}", path.display()))?;
            write_atomic(&frame_path(&args.out, &id), &write_frame(&aug.frame))
                .map_err(|e| format!("{}: {e:#}", path.display()))?;
            Ok((id, aug.fires))
        })
        .collect();

    let mut frames = Vec::new();
    for r in results {
        match r {
            Ok(x) => frames.push(x),
            Err(e) => out.failures.push(e),
        }
    }
    frames.sort_by(|a, b| a.0.cmp(&b.0));
    let mut counts: BTreeMap<FireTag, usize> = BTreeMap::new();
    for (_, fires) in &frames {
        for tag in fires {
            *counts.entry(*tag).or_default() += 1;
        }
    }
    let manifest = Manifest {
        policy_sha256: policy_hash(&spec),
        m: args.m,
        p: args.p,
        seed: args.seed,
        gates: policy
            .gate_probabilities()
            .into_iter()
            .map(|(tag, prob)| (tag, prob, counts.get(&tag).copied().unwrap_or(0)))
            .collect(),
        frames,
    };
    write_atomic(&args.out.join(MANIFEST_NAME), &manifest.to_text())?;
    out.say(format!(
        "augmented {} frames into {} ({} failed)",
        manifest.frames.len(),
        args.out.display(),
        out.failures.len()
    ));
    Ok(out)
}

pub fn cmd_build_bank(args: &BuildBankArgs) -> Result<Outcome> {
    let classes: Vec<ClassId> = if args.classes.is_empty() {
        ClassId::ALL.to_vec()
    } else {
        args.classes
            .iter()
            .map(|c| c.parse().map_err(|e| config(format!("{e}"))))
            .collect::<Result<_>>()?
    };
    let (frames, failures) = read_frames(&args.input)?;
    let bank = ExemplarBank::from_frames(frames.iter().map(|(_, f)| f), &classes);
    write_atomic(&args.out, &write_bank(&bank))?;
    let mut out = Outcome {
        failures,
        ..Outcome::default()
    };
    for c in &classes {
        out.say(format!("{c} {}", bank.of_class(*c).len()));
    }
    out.say(format!(
        "wrote {} exemplars to {}",
        bank.len(),
        args.out.display()
    ));
    if bank.is_empty() {
        out.warnings.push("no exemplars extracted (count 0)".into());
    }
    Ok(out)
}

fn evaluator_from(args: &EvaluatorArgs) -> Result<Arc<dyn Evaluator>> {
    match &args.evaluator_cmd {
        Some(cmd) => Ok(Arc::new(
            CommandEvaluator::parse(cmd).ok_or_else(|| config("--evaluator-cmd is empty"))?,
        )),
        None => Ok(Arc::new(ProxyEvaluator::default())),
    }
}

fn parse_candidates(text: &str, line: usize) -> Result<Vec<Vec<f64>>> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return Ok(vec![vec![]]);
    }
    tokens
        .iter()
        .map(|t| {
            t.split(',')
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| config(format!("grids line {line}: bad number {v:?}")))
                })
                .collect()
        })
        .collect()
}

/// Reads lines of the form `Op prob-candidates | mag-candidates`. A candidate
/// for an op with several parameters of one driver joins them with commas;
/// an empty side stands for an op without parameters of that driver.
pub fn parse_grids(text: &str) -> Result<Vec<OpGrid>> {
    let mut grids: Vec<OpGrid> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (head, mag) = content
            .split_once('|')
            .ok_or_else(|| config(format!("grids line {line}: missing '|'")))?;
        let mut head = head.split_whitespace();
        let name = head
            .next()
            .ok_or_else(|| config(format!("grids line {line}: missing op")))?;
        let op: OpKind = name
            .parse()
            .map_err(|_| config(format!("grids line {line}: unknown op {name:?}")))?;
        if grids.iter().any(|g| g.op == op) {
            return Err(config(format!("grids line {line}: {op} listed twice")));
        }
        let prob = parse_candidates(&head.collect::<Vec<_>>().join(" "), line)?;
        let mag = parse_candidates(mag, line)?;
        grids.push(OpGrid::new(op, prob, mag));
    }
    Ok(grids)
}

pub fn alignment_report(r: &AlignmentResult) -> String {
    let join = |v: &[f64]| {
        if v.is_empty() {
            "-".to_string()
        } else {
            v.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",")
        }
    };
    let mut s = format!(
        "anchor m {} p {}\nevaluations {}\n",
        r.anchor.m, r.anchor.p, r.evaluations
    );
    for a in &r.ops {
        s += &format!(
            "op {} prob {} mag {} score {} evaluations {}\n",
            a.op,
            join(&a.prob),
            join(&a.mag),
            a.score + 0.0,
            a.evaluations
        );
    }
    s
}

/// `align` with the evaluator supplied by the caller.
pub fn run_align(args: &AlignArgs, evaluator: &dyn Evaluator) -> Result<Outcome> {
    let template = read_policy(args.policy.as_deref())?;
    let text = fs::read_to_string(&args.grids)
        .map_err(|e| config(format!("{}: {e}", args.grids.display())))?;
    let grids = parse_grids(&text)?;
    let anchor = Anchor {
        m: args.anchor_m,
        p: args.anchor_p,
    };
    let r = align_all(&template, &grids, evaluator, anchor, args.evaluator.seed)?;
    write_atomic(&args.out, &write_policy(&r.spec))?;
    if let Some(report) = &args.report {
        write_atomic(report, &alignment_report(&r))?;
    }
    let mut out = Outcome::default();
    out.say(format!(
        "aligned {} ops with {} evaluations",
        r.ops.len(),
        r.evaluations
    ));
    out.say(format!("wrote {}", args.out.display()));
    Ok(out)
}

pub fn cmd_align(args: &AlignArgs) -> Result<Outcome> {
    let eval = evaluator_from(&args.evaluator)?;
    run_align(args, eval.as_ref())
}

/// `search` with the evaluator supplied by the caller.
pub fn run_search(args: &SearchArgs, evaluator: &dyn Evaluator) -> Result<(Outcome, SearchResult)> {
    let spec = read_policy(args.policy.as_deref())?;
    if let Some(dir) = args
        .table
        .as_deref()
        .and_then(Path::parent)
        .filter(|d| !d.as_os_str().is_empty())
    {
        ensure_dir(dir)?;
    }
    let r = search_mp(
        &spec,
        &args.grid_m,
        &args.grid_p,
        evaluator,
        args.evaluator.seed,
        args.table.as_deref(),
    )
    .map_err(|e| match e {
        lidaraug_core::tune::TuneError::Io(_) => anyhow::Error::new(e),
        e => config(e.to_string()),
    })?;
    let mut out = Outcome::default();
    out.say(format!(
        "evaluated {} of {} cells",
        r.evaluated,
        r.table.rows.len()
    ));
    for row in r
        .table
        .rows
        .iter()
        .filter(|r| r.status == CellStatus::Failed)
    {
        out.failures
            .push(format!("cell m={} p={} failed", row.m, row.p));
    }
    match r.best {
        Some((m, p, score)) => out.say(format!("best m {m} p {p} score {score}")),
        None => out.say("best none"),
    }
    if let Some(t) = &args.table {
        out.say(format!("table {}", t.display()));
    }
    Ok((out, r))
}

pub fn cmd_search(args: &SearchArgs) -> Result<Outcome> {
    let eval = evaluator_from(&args.evaluator)?;
    run_search(args, eval.as_ref()).map(|(o, _)| o)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Frame to image, dropping occluded points; returns the image and how many were dropped.
pub fn project_frame(frame: &Frame, fallback: ImageShape) -> Result<(ImageFile, usize)> {
    let shape = frame.range_shape.unwrap_or(fallback);
    let geometry = RangeGeometry::standard(shape)?;
    let points = assign_rays(frame.points.clone(), &geometry)?;
    let (image, occluded) = RangeImage::scatter(&points, geometry)?;
    Ok((
        ImageFile {
            frame_id: frame.frame_id.clone(),
            image,
            boxes: frame.boxes.clone(),
        },
        occluded,
    ))
}

pub fn unproject_image(file: &ImageFile) -> Frame {
    Frame {
        frame_id: file.frame_id.clone(),
        points: file.image.to_points(),
        boxes: file.boxes.clone(),
        range_shape: Some(file.image.geometry().shape()),
    }
}

/// Every surviving point comes back bit for bit, and the image is rebuilt exactly.
fn frame_roundtrip(frame: &Frame, file: &ImageFile) -> Result<bool> {
    let shape = file.image.geometry().shape();
    let geometry = RangeGeometry::standard(shape)?;
    let mut kept = resolve_occlusion(assign_rays(frame.points.clone(), &geometry)?)?;
    kept.sort_by_key(|p| p.ray);
    let back = unproject_image(file);
    let points_match = kept.len() == back.points.len()
        && kept
            .iter()
            .zip(&back.points)
            .all(|(a, b)| a.bit_identical(b));
    let again = project_frame(&back, shape)?.0;
    Ok(points_match && again.image.bit_identical(&file.image) && again.boxes == file.boxes)
}

fn image_roundtrip(file: &ImageFile) -> Result<bool> {
    let back = unproject_image(file);
    let (again, occluded) = project_frame(&back, file.image.geometry().shape())?;
    Ok(occluded == 0 && again.image.bit_identical(&file.image) && again.boxes == file.boxes)
}

pub fn cmd_project(args: &ProjectArgs) -> Result<Outcome> {
    if args.out.is_none() && !args.roundtrip {
        return Err(config("nothing to do: give --out or --roundtrip"));
    }
    if args.rows == 0 || args.cols == 0 {
        return Err(config("--rows and --cols must be positive"));
    }
    let mut out = Outcome::default();
    let pass = if args.reverse {
        let file = parse_image(&read_text(&args.input)?)
            .with_context(|| args.input.display().to_string())?;
        let frame = unproject_image(&file);
        if let Some(path) = &args.out {
            write_atomic(path, &write_frame(&frame))?;
        }
        out.say(format!("points {}", frame.points.len()));
        args.roundtrip.then(|| image_roundtrip(&file)).transpose()?
    } else {
        let frame = read_frame(&args.input).map_err(anyhow::Error::msg)?;
        let fallback = ImageShape {
            rows: args.rows,
            cols: args.cols,
        };
        let (file, occluded) = project_frame(&frame, fallback)?;
        if let Some(path) = &args.out {
            write_atomic(path, &write_image(&file))?;
        }
        out.say(format!(
            "points {} kept {} occluded {occluded}",
            frame.points.len(),
            file.image.occupied()
        ));
        args.roundtrip
            .then(|| frame_roundtrip(&frame, &file))
            .transpose()?
    };
    match pass {
        Some(true) => out.say("roundtrip PASS"),
        Some(false) => {
            out.say("roundtrip FAIL");
            out.failures
                .push(format!("{}: roundtrip mismatch", args.input.display()));
        }
        None => {}
    }
    Ok(out)
}

pub fn cmd_default_policy(args: &DefaultPolicyArgs) -> Result<Outcome> {
    let mut out = Outcome::default();
    match &args.out {
        Some(path) => {
            write_atomic(path, DEFAULT_POLICY_TEXT)?;
            out.say(format!("wrote {}", path.display()));
        }
        None => out.say(DEFAULT_POLICY_TEXT.trim_end()),
    }
    Ok(out)
}
