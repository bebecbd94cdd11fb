//! Model files: the pair `(mu, nu)` as JSON.
//!
//! ```json
//! {"mu": {"probs": ["1/2", "0", "1/2"]},
//!  "nu": {"2": [{"v": [1, -1], "p": "1"}]}}
//! ```
//!
//! Probabilities given as strings (`"p/q"`, integers or decimals) are kept
//! exact; JSON numbers are accepted but make the model floating-point only.
//! An optional `"unchecked": true` skips the criticality check.

use std::collections::BTreeMap;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde_json::Value;
use thiserror::Error;

use crate::distributions::{
    Atom, Criticality, DisplacementFamily, DistributionError, OffspringDistribution,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("malformed model: {0}")]
    Format(String),
    #[error("cannot parse probability {0:?}")]
    Probability(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

#[derive(Debug, Clone)]
enum Prob {
    Exact(BigRational),
    Float(f64),
}

/// Parses `"p/q"`, `"3"`, `"0.25"` or `"1.5e-3"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational, ModelError> {
    let err = || ModelError::Probability(s.to_string());
    let t = s.trim();
    if t.contains('/') {
        let r = BigRational::from_str(t).map_err(|_| err())?;
        return Ok(r);
    }
    let (mantissa, exp) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i32>().map_err(|_| err())?),
        None => (t, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((a, b)) => (a, b),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty()
        || !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit())
    {
        return Err(err());
    }
    let all: String = format!("{int_part}{frac_part}");
    let num = BigInt::from_str(if all.is_empty() { "0" } else { &all }).map_err(|_| err())?;
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut r = if scale >= 0 {
        BigRational::from_integer(num * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(num, num_traits::pow(ten, (-scale) as usize))
    };
    if neg {
        r = -r;
    }
    Ok(r)
}

fn parse_prob(v: &Value) -> Result<Prob, ModelError> {
    match v {
        Value::String(s) => parse_rational(s).map(Prob::Exact),
        Value::Number(x) => x
            .as_f64()
            .map(Prob::Float)
            .ok_or_else(|| ModelError::Probability(x.to_string())),
        other => Err(ModelError::Probability(other.to_string())),
    }
}

fn parse_coord(v: &Value) -> Result<f64, ModelError> {
    match v {
        Value::Number(x) => x
            .as_f64()
            .ok_or_else(|| ModelError::Format(format!("bad displacement {x}"))),
        Value::String(s) => Ok(rational_to_f64(&parse_rational(s)?)),
        other => Err(ModelError::Format(format!("bad displacement {other}"))),
    }
}

/// A parsed model file.
#[derive(Debug, Clone)]
pub struct Model {
    pub mu: OffspringDistribution,
    pub nu: Option<DisplacementFamily>,
    source: Value,
}

impl Model {
    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let v: Value = serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        Self::from_value(v)
    }

    pub fn from_value(source: Value) -> Result<Self, ModelError> {
        let fmt = |m: &str| ModelError::Format(m.to_string());
        let obj = source.as_object().ok_or_else(|| fmt("top level must be an object"))?;
        let check = match obj.get("unchecked") {
            Some(Value::Bool(true)) => Criticality::Unchecked,
            Some(Value::Bool(false)) | None => Criticality::Enforce,
            Some(_) => return Err(fmt("\"unchecked\" must be a boolean")),
        };
        let probs = obj
            .get("mu")
            .and_then(|m| m.get("probs"))
            .and_then(Value::as_array)
            .ok_or_else(|| fmt("missing mu.probs array"))?;
        let probs: Vec<Prob> = probs.iter().map(parse_prob).collect::<Result<_, _>>()?;
        let mu = if probs.iter().all(|p| matches!(p, Prob::Exact(_))) {
            let exact = probs
                .into_iter()
                .map(|p| match p {
                    Prob::Exact(r) => r,
                    Prob::Float(_) => unreachable!(),
                })
                .collect();
            OffspringDistribution::from_rationals(exact, check)?
        } else {
            let floats = probs
                .iter()
                .map(|p| match p {
                    Prob::Exact(r) => rational_to_f64(r),
                    Prob::Float(x) => *x,
                })
                .collect();
            OffspringDistribution::from_floats(floats, check)?
        };
        let nu = match obj.get("nu") {
            None | Some(Value::Null) => None,
            Some(Value::Object(laws)) => {
                let mut out = BTreeMap::new();
                for (key, atoms) in laws {
                    let k: usize = key
                        .parse()
                        .map_err(|_| ModelError::Format(format!("bad arity key {key:?}")))?;
                    let atoms = atoms
                        .as_array()
                        .ok_or_else(|| ModelError::Format(format!("nu.{key} must be an array")))?;
                    let mut parsed = Vec::with_capacity(atoms.len());
                    for a in atoms {
                        let vec = a
                            .get("v")
                            .and_then(Value::as_array)
                            .ok_or_else(|| ModelError::Format(format!("nu.{key}: atom without v")))?
                            .iter()
                            .map(parse_coord)
                            .collect::<Result<Vec<_>, _>>()?;
                        let p = a
                            .get("p")
                            .ok_or_else(|| ModelError::Format(format!("nu.{key}: atom without p")))?;
                        parsed.push(match parse_prob(p)? {
                            Prob::Exact(r) => Atom::exact(vec, r),
                            Prob::Float(x) => Atom::float(vec, x),
                        });
                    }
                    out.insert(k, parsed);
                }
                let fam = DisplacementFamily::new(out)?;
                fam.covers(&mu)?;
                Some(fam)
            }
            Some(_) => return Err(fmt("nu must be an object keyed by arity")),
        };
        Ok(Self { mu, nu, source })
    }

    /// The model as it was read, for echoing into artifacts.
    pub fn source(&self) -> &Value {
        &self.source
    }

    /// Offspring law and every displacement probability are rational.
    pub fn is_exact(&self) -> bool {
        self.mu.exact().is_some()
            && self.nu.as_ref().is_none_or(|nu| {
                nu.arities()
                    .all(|k| nu.law(k).unwrap().iter().all(|a| a.exact_prob.is_some()))
            })
    }

    /// `mu = (delta_0 + delta_2)/2`, `nu_2 = delta_(1,-1)`.
    pub fn binary_deterministic() -> Self {
        Self::from_json_str(
            r#"{"mu":{"probs":["1/2","0","1/2"]},"nu":{"2":[{"v":[1,-1],"p":"1"}]}}"#,
        )
        .expect("built-in model")
    }

    /// `mu` binary, `nu_2` uniform on `{(1,-1), (-1,1)}`.
    pub fn binary_symmetric() -> Self {
        Self::from_json_str(
            r#"{"mu":{"probs":["1/2","0","1/2"]},"nu":{"2":[{"v":[1,-1],"p":"1/2"},{"v":[-1,1],"p":"1/2"}]}}"#,
        )
        .expect("built-in model")
    }

    /// `mu` binary, `nu_2 = (delta_(2,-1) + delta_(0,-1))/2`: globally
    /// centered with non-zero per-type means and variances.
    pub fn binary_mixed() -> Self {
        Self::from_json_str(
            r#"{"mu":{"probs":["1/2","0","1/2"]},"nu":{"2":[{"v":[2,-1],"p":"1/2"},{"v":[0,-1],"p":"1/2"}]}}"#,
        )
        .expect("built-in model")
    }

    /// `mu = (1/4, 1/2, 1/4)` with symmetric unit steps.
    pub fn three_point() -> Self {
        Self::from_json_str(
            r#"{"mu":{"probs":["1/4","1/2","1/4"]},"nu":{"1":[{"v":[1],"p":"1/2"},{"v":[-1],"p":"1/2"}],"2":[{"v":[1,-1],"p":"1"}]}}"#,
        )
        .expect("built-in model")
    }
}

fn rational_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    if r.is_zero() {
        0.0
    } else if r.is_one() {
        1.0
    } else {
        r.to_f64().unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rationals() {
        let q = |a: i64, b: i64| BigRational::new(a.into(), b.into());
        assert_eq!(parse_rational("1/2").unwrap(), q(1, 2));
        assert_eq!(parse_rational("0.25").unwrap(), q(1, 4));
        assert_eq!(parse_rational("3").unwrap(), q(3, 1));
        assert_eq!(parse_rational("-1.5e-1").unwrap(), q(-3, 20));
        assert_eq!(parse_rational(".5").unwrap(), q(1, 2));
        assert_eq!(parse_rational("2e2").unwrap(), q(200, 1));
        for bad in ["", "abc", "1/0x", "1.2.3", "."] {
            assert!(parse_rational(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn example_model() {
        let m = Model::from_json_str(
            r#"{"mu": {"probs": ["1/2","0","1/2"]}, "nu": {"2": [{"v": [1,-1], "p": "1"}]}}"#,
        )
        .unwrap();
        assert!(m.is_exact());
        assert_eq!(m.mu.span(), 2);
        assert_eq!(m.source()["mu"]["probs"][0], "1/2");
    }

    #[test]
    fn float_models_are_not_exact() {
        let m = Model::from_json_str(
            r#"{"mu": {"probs": [0.5, 0, 0.5]}, "nu": {"2": [{"v": [1,-1], "p": 1.0}]}}"#,
        )
        .unwrap();
        assert!(!m.is_exact());
        let m = Model::from_json_str(
            r#"{"mu": {"probs": ["0.5", "0", "0.5"]}, "nu": {"2": [{"v": [1,-1], "p": 1.0}]}}"#,
        )
        .unwrap();
        assert!(m.mu.exact().is_some() && !m.is_exact());
    }

    #[test]
    fn rejects() {
        assert!(matches!(
            Model::from_json_str(r#"{"mu": {"probs": ["1/2","1/2"]}}"#),
            Err(ModelError::Distribution(DistributionError::Degenerate))
        ));
        assert!(matches!(
            Model::from_json_str(r#"{"mu": {"probs": ["1/4","1/4","1/2"]}}"#),
            Err(ModelError::Distribution(DistributionError::NotCritical { .. }))
        ));
        assert!(Model::from_json_str(r#"{"mu": {"probs": ["1/4","1/4","1/2"]}, "unchecked": true}"#).is_ok());
        assert!(matches!(
            Model::from_json_str(r#"{"mu":{"probs":["1/4","1/2","1/4"]},"nu":{"2":[{"v":[1,-1],"p":"1"}]}}"#),
            Err(ModelError::Distribution(DistributionError::MissingArity(1)))
        ));
        assert!(matches!(
            Model::from_json_str(r#"{"mu":{"probs":["1/2","0","1/2"]},"nu":{"2":[{"v":[1],"p":"1"}]}}"#),
            Err(ModelError::Distribution(DistributionError::BadAtom { arity: 2, .. }))
        ));
        assert!(matches!(Model::from_json_str("{"), Err(ModelError::Json(_))));
        assert!(matches!(Model::from_json_str("[]"), Err(ModelError::Format(_))));
    }

    #[test]
    fn builtins() {
        for m in [
            Model::binary_deterministic(),
            Model::binary_symmetric(),
            Model::binary_mixed(),
            Model::three_point(),
        ] {
            assert!(m.is_exact());
            assert!(m.nu.is_some());
        }
    }
}
