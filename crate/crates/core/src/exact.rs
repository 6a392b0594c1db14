//! Exact values for the equal-probability case and the two- and three-type
//! closed forms.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

pub type Rational = BigRational;

/// Largest N accepted by [`alternating_sum`].
pub const ALTERNATING_MAX_N: u64 = 200;

/// Up to this N the hyperharmonic numbers come from the defining recursion;
/// beyond it, from power sums via Newton's identities.
const RECURSION_MAX_N: u64 = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactError {
    #[error("N must be at least 1")]
    ZeroN,
    #[error("j must be at least 2, got {0}")]
    SmallJ(u32),
    #[error("alternating sum refuses N = {0} (limit {ALTERNATING_MAX_N})")]
    AlternatingTooLarge(u64),
    #[error("probability {0} outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),
    #[error("probabilities sum to {0}, not 1")]
    BadSum(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    Harmonic,
    Recursion,
    AlternatingSum,
    TwoTypes,
    ThreeTypes,
    MeanT,
    VarU2,
}

impl Formula {
    pub fn name(self) -> &'static str {
        match self {
            Formula::Harmonic => "harmonic",
            Formula::Recursion => "recursion",
            Formula::AlternatingSum => "alternating_sum",
            Formula::TwoTypes => "two_types",
            Formula::ThreeTypes => "three_types",
            Formula::MeanT => "mean_t",
            Formula::VarU2 => "var_u2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub value: Rational,
    pub as_float: f64,
    pub formula: Formula,
}

impl ExactResult {
    fn new(value: Rational, formula: Formula) -> Self {
        let as_float = to_f64(&value);
        ExactResult {
            value,
            as_float,
            formula,
        }
    }
}

/// Nearest double to a rational.
pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn check_n(n: u64) -> Result<(), ExactError> {
    if n == 0 {
        Err(ExactError::ZeroN)
    } else {
        Ok(())
    }
}

fn check_j(j: u32) -> Result<(), ExactError> {
    if j < 2 {
        Err(ExactError::SmallJ(j))
    } else {
        Ok(())
    }
}

/// Σ_{m=lo}^{hi-1} 1/m^e as an unreduced fraction, by binary splitting.
fn power_sum_split(lo: u64, hi: u64, e: u32) -> (BigInt, BigInt) {
    if hi - lo <= 16 {
        let mut num = BigInt::zero();
        let mut den = BigInt::one();
        for m in lo..hi {
            let d = BigInt::from(m).pow(e);
            num = num * &d + &den;
            den *= d;
        }
        return (num, den);
    }
    let mid = lo + (hi - lo) / 2;
    let (a, b) = power_sum_split(lo, mid, e);
    let (c, d) = power_sum_split(mid, hi, e);
    (a * &d + c * &b, b * d)
}

/// H_N^{(e)} = Σ_{m=1}^N 1/m^e.
pub fn power_sum(n: u64, e: u32) -> Rational {
    if n == 0 {
        return Rational::zero();
    }
    let (num, den) = power_sum_split(1, n + 1, e);
    Rational::new(num, den)
}

/// H_N = Σ_{m=1}^N 1/m.
pub fn harmonic(n: u64) -> Result<Rational, ExactError> {
    check_n(n)?;
    Ok(power_sum(n, 1))
}

/// E[U_j^N] for equal probabilities, exactly.
pub fn hyperharmonic(n: u64, j: u32) -> Result<Rational, ExactError> {
    check_n(n)?;
    check_j(j)?;
    if j == 2 {
        return Ok(power_sum(n, 1));
    }
    if n <= RECURSION_MAX_N {
        Ok(hyperharmonic_recursion(n, j))
    } else {
        Ok(hyperharmonic_newton(n, j))
    }
}

/// Streams E_l(m) = E_l(m-1) + E_{l-1}(m)/m for l = 2..j, with E_1 ≡ 1.
fn hyperharmonic_recursion(n: u64, j: u32) -> Rational {
    let depth = (j - 1) as usize;
    let mut levels = vec![Rational::zero(); depth];
    for m in 1..=n {
        let inv = Rational::new(BigInt::one(), BigInt::from(m));
        levels[0] += &inv;
        for l in 1..depth {
            let add = &levels[l - 1] * &inv;
            levels[l] += add;
        }
    }
    levels.pop().unwrap_or_else(Rational::one)
}

/// h_{j-1}(1, 1/2, ..., 1/N) from r·h_r = Σ_{i=1}^r P_i h_{r-i}.
fn hyperharmonic_newton(n: u64, j: u32) -> Rational {
    let r_max = (j - 1) as usize;
    let powers: Vec<Rational> = (1..=r_max as u32).map(|e| power_sum(n, e)).collect();
    let mut h = vec![Rational::one()];
    for r in 1..=r_max {
        let mut acc = Rational::zero();
        for i in 1..=r {
            acc += &powers[i - 1] * &h[r - i];
        }
        h.push(acc / BigInt::from(r));
    }
    h.pop().expect("r_max >= 1")
}

/// Σ_{k=1}^N C(N,k) (-1)^{k+1} / k^{j-1}; rational-only oracle.
pub fn alternating_sum(n: u64, j: u32) -> Result<Rational, ExactError> {
    check_n(n)?;
    check_j(j)?;
    if n > ALTERNATING_MAX_N {
        return Err(ExactError::AlternatingTooLarge(n));
    }
    let mut num = BigInt::zero();
    let mut den = BigInt::one();
    let mut binom = BigInt::one();
    for k in 1..=n {
        binom = binom * BigInt::from(n - k + 1) / BigInt::from(k);
        let d = BigInt::from(k).pow(j - 1);
        let term = if k % 2 == 1 {
            binom.clone()
        } else {
            -binom.clone()
        };
        num = num * &d + term * &den;
        den *= d;
    }
    Ok(Rational::new(num, den))
}

pub fn harmonic_result(n: u64) -> Result<ExactResult, ExactError> {
    Ok(ExactResult::new(harmonic(n)?, Formula::Harmonic))
}

pub fn hyperharmonic_result(n: u64, j: u32) -> Result<ExactResult, ExactError> {
    let formula = if j == 2 {
        Formula::Harmonic
    } else {
        Formula::Recursion
    };
    Ok(ExactResult::new(hyperharmonic(n, j)?, formula))
}

pub fn alternating_sum_result(n: u64, j: u32) -> Result<ExactResult, ExactError> {
    Ok(ExactResult::new(alternating_sum(n, j)?, Formula::AlternatingSum))
}

/// E[T_N] = N·H_N.
pub fn mean_t_equal(n: u64) -> Result<ExactResult, ExactError> {
    let h = harmonic(n)?;
    Ok(ExactResult::new(h * BigInt::from(n), Formula::MeanT))
}

/// Var[U_2^N] = 4 Σ_{m≤N} H_m/m − 3 H_N − H_N².
pub fn variance_u2_equal(n: u64) -> Result<ExactResult, ExactError> {
    let h = harmonic(n)?;
    let s = hyperharmonic(n, 3)?;
    let v = s * BigInt::from(4) - &h * BigInt::from(3) - &h * &h;
    Ok(ExactResult::new(v, Formula::VarU2))
}

fn exact_float(x: f64) -> Rational {
    Rational::from_float(x).expect("finite float")
}

fn open_unit(p: f64) -> Result<Rational, ExactError> {
    if p.is_finite() && p > 0.0 && p < 1.0 {
        Ok(exact_float(p))
    } else {
        Err(ExactError::ProbabilityOutOfRange(p))
    }
}

/// E[U_j^2] = 2 − p_1^j − p_2^j with p_2 = 1 − p_1, evaluated exactly at
/// the given double p_1.
pub fn two_types(p1: f64, j: u32) -> Result<ExactResult, ExactError> {
    check_j(j)?;
    let a = open_unit(p1)?;
    let b = Rational::one() - &a;
    let two = Rational::from_integer(BigInt::from(2));
    let v = two - num_traits::pow(a, j as usize) - num_traits::pow(b, j as usize);
    Ok(ExactResult::new(v, Formula::TwoTypes))
}

/// E[U_2^3] for three types, evaluated exactly at the given doubles.
pub fn three_types_j2(p1: f64, p2: f64, p3: f64) -> Result<ExactResult, ExactError> {
    let ps = [open_unit(p1)?, open_unit(p2)?, open_unit(p3)?];
    let sum = p1 + p2 + p3;
    if (sum - 1.0).abs() > 1e-12 {
        return Err(ExactError::BadSum(sum));
    }
    let sq: Vec<Rational> = ps.iter().map(|p| p * p).collect();
    let mut v = Rational::from_integer(BigInt::from(3)) + &sq[0] + &sq[1] + &sq[2];
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let s = &ps[a] + &ps[b];
        v -= (&sq[a] + &sq[b]) / (&s * &s);
    }
    debug_assert!(v.is_positive());
    Ok(ExactResult::new(v, Formula::ThreeTypes))
}
