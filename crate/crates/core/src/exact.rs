//! Exact rational arithmetic for policy formulas.
//!
//! Formula coefficients such as `0.036` or `1.4` and knob values such as
//! `p = 0.5` are decimal quantities. Evaluating them in binary floating point
//! gives results like `0.036 * 5 = 0.18000000000000002`. Policy resolution
//! therefore works on exact rationals and rounds to `f64` once, at the end.
//! A float input is read as the decimal it prints as (its shortest
//! round-trip representation), so `0.1_f64` means exactly `1/10`.

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

pub type Exact = BigRational;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid number {0:?}")]
pub struct ParseExactError(pub String);

/// Parses a decimal (`-7.5`, `1e-3`, `75`) or a fraction (`1/3`).
pub fn parse_exact(s: &str) -> Result<Exact, ParseExactError> {
    let err = || ParseExactError(s.to_string());
    if let Some((num, den)) = s.split_once('/') {
        let n = parse_exact(num)?;
        let d = parse_exact(den)?;
        if d.is_zero() {
            return Err(err());
        }
        return Ok(n / d);
    }
    let (negative, body) = match s.as_bytes().first() {
        Some(b'-') => (true, &s[1..]),
        Some(b'+') => (false, &s[1..]),
        _ => (false, s),
    };
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => {
            let e: i32 = body[i + 1..].parse().map_err(|_| err())?;
            (&body[..i], e)
        }
        None => (body, 0),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    if !int_part
        .bytes()
        .chain(frac_part.bytes())
        .all(|b| b.is_ascii_digit())
    {
        return Err(err());
    }
    let digits = format!("{int_part}{frac_part}");
    let mut numer: BigInt = digits.parse().map_err(|_| err())?;
    if negative {
        numer = -numer;
    }
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10u32);
    Ok(if scale >= 0 {
        BigRational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(numer, num_traits::pow(ten, (-scale) as usize))
    })
}

/// The decimal a finite float prints as. `None` for NaN and infinities.
pub fn exact_from_f64(x: f64) -> Option<Exact> {
    if !x.is_finite() {
        return None;
    }
    // `{:e}` is the shortest representation that parses back to `x`.
    parse_exact(&format!("{x:e}")).ok()
}

/// Nearest `f64` to an exact value.
pub fn exact_to_f64(r: &Exact) -> f64 {
    if let Some(s) = terminating_decimal(r) {
        // The std parser rounds correctly; use it whenever a decimal exists.
        if let Ok(v) = s.parse::<f64>() {
            return v;
        }
    }
    r.to_f64().unwrap_or(if r.is_negative() {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    })
}

/// Decimal expansion if the denominator has no prime factors besides 2 and 5.
fn terminating_decimal(r: &Exact) -> Option<String> {
    let mut den = r.denom().clone();
    let two = BigInt::from(2u32);
    let five = BigInt::from(5u32);
    let (mut twos, mut fives) = (0usize, 0usize);
    while den.is_even() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    if !den.is_one() {
        return None;
    }
    let places = twos.max(fives);
    let scaled: BigInt = r.numer() * num_traits::pow(BigInt::from(10u32), places) / r.denom();
    let (sign, mag) = scaled.into_parts();
    let mut digits = mag.to_str_radix(10);
    if places > 0 {
        if digits.len() <= places {
            digits = format!("{}{}", "0".repeat(places + 1 - digits.len()), digits);
        }
        digits.insert(digits.len() - places, '.');
        let trimmed = digits.trim_end_matches('0').trim_end_matches('.');
        digits = trimmed.to_string();
    }
    Some(if sign == Sign::Minus {
        format!("-{digits}")
    } else {
        digits
    })
}

/// Shortest faithful text: a decimal when one exists, else `numer/denom`.
pub fn format_exact(r: &Exact) -> String {
    terminating_decimal(r).unwrap_or_else(|| format!("{}/{}", r.numer(), r.denom()))
}

/// Rounds to the nearest integer, halves to even.
pub fn round_half_even(r: &Exact) -> BigInt {
    let floor = r.floor();
    let frac = r - &floor;
    let half = BigRational::new(BigInt::one(), BigInt::from(2u32));
    let base = floor.to_integer();
    if frac < half {
        base
    } else if frac > half || base.is_odd() {
        base + 1
    } else {
        base
    }
}

pub fn clamp(value: Exact, lo: Option<&Exact>, hi: Option<&Exact>) -> Exact {
    let mut v = value;
    if let Some(lo) = lo {
        if v < *lo {
            v = lo.clone();
        }
    }
    if let Some(hi) = hi {
        if v > *hi {
            v = hi.clone();
        }
    }
    v
}
