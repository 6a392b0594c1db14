//! Small numerical primitives shared by the engines.

/// Euler–Mascheroni constant to 20 significant digits.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_61;

/// exp(x) underflows to zero below this argument.
pub const EXP_UNDERFLOW: f64 = -745.0;

const FACTORIALS: [f64; 21] = [
    1.0,
    1.0,
    2.0,
    6.0,
    24.0,
    120.0,
    720.0,
    5040.0,
    40320.0,
    362880.0,
    3628800.0,
    39916800.0,
    479001600.0,
    6227020800.0,
    87178291200.0,
    1307674368000.0,
    20922789888000.0,
    355687428096000.0,
    6402373705728000.0,
    121645100408832000.0,
    2432902008176640000.0,
];

/// ln(n!) from a lookup table for n ≤ 20 and log-gamma beyond.
pub fn ln_factorial(n: u32) -> f64 {
    match FACTORIALS.get(n as usize) {
        Some(f) => f.ln(),
        None => statrs::function::gamma::ln_gamma(f64::from(n) + 1.0),
    }
}

/// n! as a float; `None` once it stops being representable.
pub fn factorial(n: u32) -> Option<f64> {
    if let Some(f) = FACTORIALS.get(n as usize) {
        return Some(*f);
    }
    let v = ln_factorial(n).exp();
    v.is_finite().then_some(v)
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Returns `(1 - e^{-x}, e^{-x})` for `x >= 0`, both with full relative
/// precision: `expm1` near zero, a plain `exp` once `e^{-x} <= e^{-1/2}`.
#[inline]
pub fn one_minus_exp_neg(x: f64) -> (f64, f64) {
    if x < 0.5 {
        let om = -(-x).exp_m1();
        (om, 1.0 - om)
    } else {
        let e = (-x).exp();
        (1.0 - e, e)
    }
}

/// ln(1 - e^{-x}) for `x > 0`.
#[inline]
pub fn ln_one_minus_exp_neg(x: f64) -> f64 {
    if x < std::f64::consts::LN_2 {
        (-(-x).exp_m1()).ln()
    } else {
        (-(-x).exp()).ln_1p()
    }
}

/// Pairwise (cascade) summation. The result depends only on the order of
/// `xs`, never on how the caller produced them.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Stable log(Σ exp(xs)).
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let shifted: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    max + pairwise_sum(&shifted).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorial_table_matches_log_gamma() {
        for n in 0..=20u32 {
            let lg = ln_gamma(f64::from(n) + 1.0);
            assert!((ln_factorial(n) - lg).abs() < 1e-12 * lg.abs().max(1.0), "n={n}");
        }
        assert!((ln_factorial(25) - 58.003_605_222_980_52).abs() < 1e-10);
        assert_eq!(factorial(170).map(f64::is_finite), Some(true));
        assert_eq!(factorial(171), None);
    }

    #[test]
    fn one_minus_exp_is_accurate_at_both_ends() {
        let (om, e) = one_minus_exp_neg(1e-20);
        assert_eq!(om, 1e-20);
        assert_eq!(e, 1.0);
        let (om, e) = one_minus_exp_neg(40.0);
        assert_eq!(om, 1.0);
        assert!((e / (-40.0f64).exp() - 1.0).abs() < 1e-15);
        assert!((ln_one_minus_exp_neg(1e-12) - (1e-12f64).ln()).abs() < 1e-9);
        assert!((ln_one_minus_exp_neg(50.0) + (-50.0f64).exp()).abs() < 1e-35);
    }

    #[test]
    fn log_sum_exp_handles_huge_arguments() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }
}
