//! Large-N expansions of E[U_j^N] for decaying weights a_k = 1/f(k).
//!
//! With δ = 1 / ln(f(N)/f'(N)),
//!
//! ```text
//! j = 2:  E ≈ (1/δ) [1 + δ ln δ + (γ - 1) δ]
//! j ≥ 3:  E ≈ 1/((j-1)! δ^{j-1}) [1 + (j-1) δ ln δ + ((j-1)γ - 2) δ]
//! ```
//!
//! with a relative remainder of order δ² ln² δ.

use serde::Serialize;
use thiserror::Error;

use crate::families::{FamilyKind, FamilySpec};
use crate::numeric::{ln_factorial, EULER_GAMMA};

/// The expansion is only evaluated when δ is below this value.
pub const DELTA_THRESHOLD: f64 = 0.5;

pub const REMAINDER_ORDER: &str = "O(delta^2 ln^2 delta)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsymptoticError {
    #[error("family {0} has no analytic f, f' for the expansion")]
    NotSmooth(String),
    #[error("f(N)/f'(N) = exp({log_ratio}) is not above 1 at N = {n}")]
    DomainTooSmall { n: f64, log_ratio: f64 },
    #[error("delta = {delta} at N = {n} is not below {DELTA_THRESHOLD}")]
    BelowThreshold { n: f64, delta: f64 },
    #[error("j must be at least 2, got {0}")]
    SmallJ(u32),
    #[error("N must be at least 2, got {0}")]
    SmallN(f64),
}

/// Decaying families a_k = 1/f(k) with closed-form f and f'.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothFamily {
    /// f(x) = x^p
    Zipf { p: f64 },
    /// f(x) = exp(p x^q)
    StretchedExp { p: f64, q: f64 },
}

impl TryFrom<&FamilySpec> for SmoothFamily {
    type Error = AsymptoticError;

    fn try_from(spec: &FamilySpec) -> Result<Self, Self::Error> {
        let reject = || AsymptoticError::NotSmooth(spec.label());
        if spec.validate().is_err() || spec.start_index() != 1 {
            return Err(reject());
        }
        match spec.kind {
            FamilyKind::Zipf { p } => Ok(SmoothFamily::Zipf { p }),
            FamilyKind::StretchedExp { p, q } => Ok(SmoothFamily::StretchedExp { p, q }),
            _ => Err(reject()),
        }
    }
}

impl SmoothFamily {
    pub fn f(&self, x: f64) -> f64 {
        match *self {
            SmoothFamily::Zipf { p } => x.powf(p),
            SmoothFamily::StretchedExp { p, q } => (p * x.powf(q)).exp(),
        }
    }

    pub fn f_prime(&self, x: f64) -> f64 {
        match *self {
            SmoothFamily::Zipf { p } => p * x.powf(p - 1.0),
            SmoothFamily::StretchedExp { p, q } => p * q * x.powf(q - 1.0) * self.f(x),
        }
    }

    /// ln(f(N)/f'(N)), simplified analytically so it never overflows.
    pub fn log_ratio(&self, n: f64) -> f64 {
        match *self {
            SmoothFamily::Zipf { p } => n.ln() - p.ln(),
            SmoothFamily::StretchedExp { p, q } => (1.0 - q) * n.ln() - (p * q).ln(),
        }
    }

    /// The Zipf parameters (ln-N scale, p) that reproduce this family's
    /// expansion: N ↦ N^{1-q}, p ↦ pq for the stretched exponential.
    fn zipf_equivalent(&self, n: f64) -> (f64, f64) {
        match *self {
            SmoothFamily::Zipf { p } => (n.ln(), p),
            SmoothFamily::StretchedExp { p, q } => ((1.0 - q) * n.ln(), p * q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionTerms {
    pub delta: f64,
    pub j: u32,
    pub term0: f64,
    pub term1: f64,
    pub term2: f64,
    pub value: f64,
    pub remainder_order: &'static str,
}

impl ExpansionTerms {
    fn new(delta: f64, j: u32, terms: [f64; 3]) -> Self {
        ExpansionTerms {
            delta,
            j,
            term0: terms[0],
            term1: terms[1],
            term2: terms[2],
            value: terms[0] + terms[1] + terms[2],
            remainder_order: REMAINDER_ORDER,
        }
    }
}

fn check_j(j: u32) -> Result<(), AsymptoticError> {
    if j < 2 {
        Err(AsymptoticError::SmallJ(j))
    } else {
        Ok(())
    }
}

/// δ = 1 / ln(f(N)/f'(N)).
pub fn delta(fam: &SmoothFamily, n: f64) -> Result<f64, AsymptoticError> {
    let lr = fam.log_ratio(n);
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(AsymptoticError::DomainTooSmall { n, log_ratio: lr });
    }
    Ok(1.0 / lr)
}

fn delta_checked(fam: &SmoothFamily, n: f64) -> Result<f64, AsymptoticError> {
    let d = delta(fam, n)?;
    if d >= DELTA_THRESHOLD {
        return Err(AsymptoticError::BelowThreshold { n, delta: d });
    }
    Ok(d)
}

/// 1 / ((j-1)! δ^{j-1}).
fn leading_factor(d: f64, j: u32) -> f64 {
    (-(ln_factorial(j - 1) + f64::from(j - 1) * d.ln())).exp()
}

/// Three-term expansion in δ.
pub fn delta_form(fam: &SmoothFamily, n: f64, j: u32) -> Result<ExpansionTerms, AsymptoticError> {
    check_j(j)?;
    let d = delta_checked(fam, n)?;
    let ld = d.ln();
    let terms = if j == 2 {
        [1.0 / d, ld, EULER_GAMMA - 1.0]
    } else {
        let lead = leading_factor(d, j);
        let jm1 = f64::from(j - 1);
        [
            lead,
            lead * jm1 * d * ld,
            lead * (jm1 * EULER_GAMMA - 2.0) * d,
        ]
    };
    Ok(ExpansionTerms::new(d, j, terms))
}

/// The same expansion written in powers of ln N instead of δ.
pub fn log_form(fam: &SmoothFamily, n: f64, j: u32) -> Result<ExpansionTerms, AsymptoticError> {
    check_j(j)?;
    let d = delta_checked(fam, n)?;
    let (big_l, p) = fam.zipf_equivalent(n);
    if !(big_l > 1.0) {
        return Err(AsymptoticError::DomainTooSmall {
            n,
            log_ratio: big_l,
        });
    }
    let ll = big_l.ln();
    let terms = if j == 2 {
        [big_l, -ll, EULER_GAMMA - 1.0 - p.ln()]
    } else {
        let jm1 = f64::from(j - 1);
        let lf1 = ln_factorial(j - 1);
        let lf2 = ln_factorial(j - 2);
        let pow1 = big_l.powi(j as i32 - 1);
        let pow2 = big_l.powi(j as i32 - 2);
        [
            pow1 / lf1.exp(),
            -pow2 * ll / lf2.exp(),
            (jm1 * (EULER_GAMMA - p.ln()) - 2.0) / lf1.exp() * pow2,
        ]
    };
    Ok(ExpansionTerms::new(d, j, terms))
}

/// ln(f(N)/f'(N))^{j-1} / (j-1)!.
pub fn leading_term(fam: &SmoothFamily, n: f64, j: u32) -> Result<f64, AsymptoticError> {
    check_j(j)?;
    let d = delta(fam, n)?;
    Ok(leading_factor(d, j))
}

/// (ln N)^{j-1} / (j-1)!, the equal-probability leading behaviour.
pub fn equal_leading(n: f64, j: u32) -> Result<f64, AsymptoticError> {
    check_j(j)?;
    if !(n >= 2.0) {
        return Err(AsymptoticError::SmallN(n));
    }
    Ok((f64::from(j - 1) * n.ln().ln() - ln_factorial(j - 1)).exp())
}

/// |reference − expansion| / (δ² ln² δ · leading factor); bounded in N when
/// the remainder has the advertised order.
pub fn normalized_remainder(terms: &ExpansionTerms, reference: f64) -> f64 {
    let d = terms.delta;
    let scale = d * d * d.ln().powi(2) * leading_factor(d, terms.j);
    (reference - terms.value).abs() / scale
}
