//! Coupon-weight sequences and their normalization into probability vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{ln_gamma, log_sum_exp, pairwise_sum};

/// Largest explicit weight list accepted.
pub const EXPLICIT_CAP: usize = 10_000_000;

/// Beyond this magnitude of ln a_k the weights are normalized in log space.
const LOG_PATH_THRESHOLD: f64 = 600.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FamilyError {
    #[error("parameter {name} must be {requirement}, got {value}")]
    BadParameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("N must be at least 1")]
    EmptyRange,
    #[error("start index must be at least {min} for this family, got {start}")]
    BadStart { start: u64, min: u64 },
    #[error("weight a_{index} = {value} is not strictly positive")]
    NonPositiveWeight { index: u64, value: f64 },
    #[error("weight a_{index} overflows double precision")]
    WeightOverflow { index: u64 },
    #[error("explicit list has {available} entries, {requested} requested")]
    ExplicitTooShort { available: usize, requested: usize },
    #[error("explicit list exceeds the {EXPLICIT_CAP}-entry cap")]
    ExplicitTooLong,
    #[error("cannot normalize an empty weight list")]
    EmptyWeights,
    #[error("probability p_{index} underflows to zero")]
    ProbabilityUnderflow { index: usize },
    #[error("probabilities sum to {sum}, not 1")]
    BadSum { sum: f64 },
}

/// The shape of a coupon-weight sequence a_k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyKind {
    /// a_k = 1
    Equal,
    /// a_k = k^{-p}
    #[serde(alias = "zipf_decay")]
    Zipf { p: f64 },
    /// a_k = exp(-p k^q), 0 < q < 1
    #[serde(alias = "stretched_exp_decay")]
    StretchedExp { p: f64, q: f64 },
    /// a_k = k
    Linear,
    /// a_k = k^p
    Power { p: f64 },
    /// a_k = e^{p k}
    #[serde(alias = "geometric_growth")]
    Geometric { p: f64 },
    /// a_k = ln k
    #[serde(alias = "log_growth")]
    Log,
    /// a_k = ln(k (ln k)^c)
    #[serde(alias = "log_log_growth", alias = "log_log")]
    Loglog { c: f64 },
    /// a_k = k!
    Factorial,
    /// a_k read from a list, k = 1, 2, ...
    Explicit { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    #[serde(flatten)]
    pub kind: FamilyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<u64>,
}

impl From<FamilyKind> for FamilySpec {
    fn from(kind: FamilyKind) -> Self {
        FamilySpec { kind, start: None }
    }
}

impl FamilySpec {
    pub fn new(kind: FamilyKind) -> Self {
        kind.into()
    }

    pub fn with_start(kind: FamilyKind, start: u64) -> Self {
        FamilySpec {
            kind,
            start: Some(start),
        }
    }

    /// First index k of the sequence.
    pub fn start_index(&self) -> u64 {
        self.start.unwrap_or(match self.kind {
            FamilyKind::Log | FamilyKind::Loglog { .. } => 3,
            _ => 1,
        })
    }

    pub fn is_decaying(&self) -> bool {
        matches!(
            self.kind,
            FamilyKind::Zipf { .. } | FamilyKind::StretchedExp { .. }
        )
    }

    /// True for the families with a_k → ∞.
    pub fn is_growing(&self) -> bool {
        matches!(
            self.kind,
            FamilyKind::Linear
                | FamilyKind::Power { .. }
                | FamilyKind::Geometric { .. }
                | FamilyKind::Log
                | FamilyKind::Loglog { .. }
                | FamilyKind::Factorial
        )
    }

    /// Short human-readable label, e.g. `zipf(p=1)`.
    pub fn label(&self) -> String {
        match &self.kind {
            FamilyKind::Equal => "equal".into(),
            FamilyKind::Zipf { p } => format!("zipf(p={p})"),
            FamilyKind::StretchedExp { p, q } => format!("stretched_exp(p={p};q={q})"),
            FamilyKind::Linear => "linear".into(),
            FamilyKind::Power { p } => format!("power(p={p})"),
            FamilyKind::Geometric { p } => format!("geometric(p={p})"),
            FamilyKind::Log => "log".into(),
            FamilyKind::Loglog { c } => format!("loglog(c={c})"),
            FamilyKind::Factorial => "factorial".into(),
            FamilyKind::Explicit { weights } => format!("explicit(len={})", weights.len()),
        }
    }

    pub fn validate(&self) -> Result<(), FamilyError> {
        fn positive(name: &'static str, v: f64) -> Result<(), FamilyError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(FamilyError::BadParameter {
                    name,
                    requirement: "positive and finite",
                    value: v,
                })
            }
        }
        let start = self.start_index();
        if start < 1 {
            return Err(FamilyError::BadStart { start, min: 1 });
        }
        match &self.kind {
            FamilyKind::Zipf { p } | FamilyKind::Power { p } | FamilyKind::Geometric { p } => {
                positive("p", *p)?
            }
            FamilyKind::StretchedExp { p, q } => {
                positive("p", *p)?;
                if !(*q > 0.0 && *q < 1.0) {
                    return Err(FamilyError::BadParameter {
                        name: "q",
                        requirement: "in (0, 1)",
                        value: *q,
                    });
                }
            }
            FamilyKind::Log => {
                if start < 2 {
                    return Err(FamilyError::BadStart { start, min: 2 });
                }
            }
            FamilyKind::Loglog { c } => {
                positive("c", *c)?;
                if start < 2 {
                    return Err(FamilyError::BadStart { start, min: 2 });
                }
                let first = loglog_log_weight(start as f64, *c);
                if !(first.is_finite() && first > 0.0) {
                    return Err(FamilyError::NonPositiveWeight {
                        index: start,
                        value: first,
                    });
                }
            }
            FamilyKind::Explicit { weights } => {
                if weights.is_empty() {
                    return Err(FamilyError::EmptyWeights);
                }
                if weights.len() > EXPLICIT_CAP {
                    return Err(FamilyError::ExplicitTooLong);
                }
                if let Some((i, w)) = weights
                    .iter()
                    .enumerate()
                    .find(|(_, w)| !(w.is_finite() && **w > 0.0))
                {
                    return Err(FamilyError::NonPositiveWeight {
                        index: i as u64 + 1,
                        value: *w,
                    });
                }
            }
            FamilyKind::Equal | FamilyKind::Linear | FamilyKind::Factorial => {}
        }
        Ok(())
    }

    /// ln a_k at a single index.
    pub fn log_weight_at(&self, k: u64) -> f64 {
        let kf = k as f64;
        match &self.kind {
            FamilyKind::Equal => 0.0,
            FamilyKind::Zipf { p } => -p * kf.ln(),
            FamilyKind::StretchedExp { p, q } => -p * kf.powf(*q),
            FamilyKind::Linear => kf.ln(),
            FamilyKind::Power { p } => p * kf.ln(),
            FamilyKind::Geometric { p } => p * kf,
            FamilyKind::Log => kf.ln().ln(),
            FamilyKind::Loglog { c } => loglog_log_weight(kf, *c).ln(),
            FamilyKind::Factorial => ln_gamma(kf + 1.0),
            FamilyKind::Explicit { weights } => weights[(k - 1) as usize].ln(),
        }
    }

    /// a_k at a single index; may be infinite for the fast-growing kinds.
    pub fn weight_at(&self, k: u64) -> f64 {
        let kf = k as f64;
        match &self.kind {
            FamilyKind::Equal => 1.0,
            FamilyKind::Zipf { p } => kf.powf(-p),
            FamilyKind::Linear => kf,
            FamilyKind::Power { p } => kf.powf(*p),
            FamilyKind::Log => kf.ln(),
            FamilyKind::Loglog { c } => loglog_log_weight(kf, *c),
            FamilyKind::Explicit { weights } => weights[(k - 1) as usize],
            _ => self.log_weight_at(k).exp(),
        }
    }

    fn check_range(&self, n: usize) -> Result<(), FamilyError> {
        self.validate()?;
        if n == 0 {
            return Err(FamilyError::EmptyRange);
        }
        if let FamilyKind::Explicit { weights } = &self.kind {
            let need = self.start_index() as usize - 1 + n;
            if need > weights.len() {
                return Err(FamilyError::ExplicitTooShort {
                    available: weights.len(),
                    requested: need,
                });
            }
        }
        Ok(())
    }

    fn indices(&self, n: usize) -> impl Iterator<Item = u64> {
        let s = self.start_index();
        s..s + n as u64
    }
}

/// ln(k (ln k)^c), the LogLog weight itself.
fn loglog_log_weight(k: f64, c: f64) -> f64 {
    k.ln() + c * k.ln().ln()
}

/// The weights a_start, ..., a_{start+N-1}.
pub fn weights(spec: &FamilySpec, n: usize) -> Result<Vec<f64>, FamilyError> {
    spec.check_range(n)?;
    spec.indices(n)
        .map(|k| {
            let a = spec.weight_at(k);
            if !a.is_finite() {
                Err(FamilyError::WeightOverflow { index: k })
            } else if a > 0.0 {
                Ok(a)
            } else {
                Err(FamilyError::NonPositiveWeight { index: k, value: a })
            }
        })
        .collect()
}

/// ln a_k over the same index range as [`weights`]; never overflows.
pub fn log_weights(spec: &FamilySpec, n: usize) -> Result<Vec<f64>, FamilyError> {
    spec.check_range(n)?;
    let lw: Vec<f64> = spec.indices(n).map(|k| spec.log_weight_at(k)).collect();
    if let Some((i, v)) = lw.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(FamilyError::NonPositiveWeight {
            index: spec.start_index() + i as u64,
            value: v.exp(),
        });
    }
    Ok(lw)
}

/// Normalized coupon probabilities p_k = a_k / Σ a_i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    p: Vec<f64>,
}

impl ProbVector {
    /// Wraps an already-normalized vector after checking it.
    pub fn new(p: Vec<f64>) -> Result<Self, FamilyError> {
        if p.is_empty() {
            return Err(FamilyError::EmptyWeights);
        }
        if let Some(i) = p.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(FamilyError::ProbabilityUnderflow { index: i });
        }
        let sum = pairwise_sum(&p);
        if (sum - 1.0).abs() > 1e-12 {
            return Err(FamilyError::BadSum { sum });
        }
        Ok(ProbVector { p })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n >= 1, "uniform vector needs at least one type");
        ProbVector {
            p: vec![1.0 / n as f64; n],
        }
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.p
    }

    /// True when every entry is bit-identical.
    pub fn is_uniform(&self) -> bool {
        self.p.iter().all(|&x| x == self.p[0])
    }
}

pub fn normalize(weights: &[f64]) -> Result<ProbVector, FamilyError> {
    if weights.is_empty() {
        return Err(FamilyError::EmptyWeights);
    }
    if let Some((i, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(w.is_finite() && **w > 0.0))
    {
        return Err(FamilyError::NonPositiveWeight {
            index: i as u64 + 1,
            value: *w,
        });
    }
    let total = pairwise_sum(weights);
    if !total.is_finite() {
        let lw: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        return normalize_log(&lw);
    }
    ProbVector::new(weights.iter().map(|w| w / total).collect())
}

/// Normalizes from ln a_k with a log-sum-exp denominator.
pub fn normalize_log(log_weights: &[f64]) -> Result<ProbVector, FamilyError> {
    if log_weights.is_empty() {
        return Err(FamilyError::EmptyWeights);
    }
    if let Some((i, v)) = log_weights
        .iter()
        .enumerate()
        .find(|(_, v)| v.is_nan() || **v == f64::INFINITY)
    {
        return Err(FamilyError::NonPositiveWeight {
            index: i as u64 + 1,
            value: v.exp(),
        });
    }
    let lse = log_sum_exp(log_weights);
    ProbVector::new(log_weights.iter().map(|l| (l - lse).exp()).collect())
}

/// Probability vector of the first N members of a family, switching to the
/// log-space path when the weights span too many orders of magnitude.
pub fn prob_vector(spec: &FamilySpec, n: usize) -> Result<ProbVector, FamilyError> {
    if spec.kind == FamilyKind::Equal {
        spec.check_range(n)?;
        return Ok(ProbVector::uniform(n));
    }
    let lw = log_weights(spec, n)?;
    if lw.iter().any(|l| l.abs() > LOG_PATH_THRESHOLD) {
        normalize_log(&lw)
    } else {
        normalize(&weights(spec, n)?)
    }
}
