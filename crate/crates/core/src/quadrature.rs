//! Numerical evaluation of E[U_j^N] for arbitrary probability vectors.
//!
//! The expectation is
//!
//! ```text
//! Σ_k ∫_0^∞ p_k e^{-p_k t} (p_k t)^{j-1}/(j-1)! · Π_{i≠k} (1 - e^{-p_i t}) dt
//! ```
//!
//! Every term shares the full survival product, so each node costs one pass
//! over the probabilities: S(t) = Σ_i ln(1 - e^{-p_i t}) is accumulated once
//! and the k-th factor is divided back out.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::families::ProbVector;
use crate::numeric::{ln_factorial, ln_one_minus_exp_neg, one_minus_exp_neg, pairwise_sum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panel_doublings: u32,
    pub nodes_per_panel: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_panel_doublings: 16,
            nodes_per_panel: 64,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<(), QuadratureError> {
        let ok = self.rel_tol.is_finite()
            && self.rel_tol > 0.0
            && self.abs_tol.is_finite()
            && self.abs_tol > 0.0
            && self.nodes_per_panel >= 2
            && self.max_panel_doublings <= 30;
        if ok {
            Ok(())
        } else {
            Err(QuadratureError::BadConfig(*self))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectationResult {
    pub value: f64,
    pub error_estimate: f64,
    pub nodes_used: u64,
    #[serde(skip)]
    pub elapsed: Duration,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("invalid quadrature configuration {0:?}")]
    BadConfig(QuadratureConfig),
    #[error("j must be at least 2, got {0}")]
    SmallJ(u32),
    #[error("t must be positive and finite, got {0}")]
    BadTime(f64),
    #[error("panel doubling budget exhausted; best value {} ± {}", best.value, best.error_estimate)]
    NonConvergence { best: ExpectationResult },
}

/// Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            weights[i] = w;
            nodes[n - 1 - i] = x;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = 0.5 * (b - a);
        let m = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (m + h * x, h * w))
    }
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// One integration interval together with the rule that places its panel
/// edges for a given panel count.
pub(crate) struct Segment<'a> {
    pub edges: Box<dyn Fn(usize) -> Vec<f64> + Sync + 'a>,
    pub initial_panels: usize,
}

impl<'a> Segment<'a> {
    pub fn uniform(a: f64, b: f64, initial_panels: usize) -> Self {
        Segment {
            edges: Box::new(move |n| {
                (0..=n)
                    .map(|i| {
                        if i == n {
                            b
                        } else {
                            a + (b - a) * (i as f64 / n as f64)
                        }
                    })
                    .collect()
            }),
            initial_panels,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PanelOutcome {
    pub value: f64,
    pub error: f64,
    pub nodes: u64,
    pub converged: bool,
}

fn integrate_level<F>(f: &F, rule: &GaussLegendre, edges: &[f64]) -> f64
where
    F: Fn(f64) -> f64 + Sync,
{
    let points: Vec<(f64, f64)> = edges
        .windows(2)
        .flat_map(|w| rule.mapped(w[0], w[1]).collect::<Vec<_>>())
        .collect();
    let vals: Vec<f64> = points.par_iter().map(|&(x, w)| w * f(x)).collect();
    pairwise_sum(&vals)
}

/// Composite Gauss–Legendre over several segments, doubling each segment's
/// panel count until two successive levels agree to within the tolerance
/// share of that segment.
pub(crate) fn integrate_segments<F>(
    f: &F,
    segments: &[Segment<'_>],
    cfg: &QuadratureConfig,
) -> PanelOutcome
where
    F: Fn(f64) -> f64 + Sync,
{
    let rule = GaussLegendre::new(cfg.nodes_per_panel);
    let m = segments.len().max(1) as f64;
    let mut current: Vec<f64> = Vec::with_capacity(segments.len());
    let mut deltas = vec![f64::INFINITY; segments.len()];
    let mut done = vec![false; segments.len()];
    let mut nodes = 0u64;
    for seg in segments {
        let edges = (seg.edges)(seg.initial_panels);
        nodes += (rule.len() * (edges.len() - 1)) as u64;
        current.push(integrate_level(f, &rule, &edges));
    }
    for level in 1..=cfg.max_panel_doublings {
        for (s, seg) in segments.iter().enumerate() {
            if done[s] {
                continue;
            }
            let edges = (seg.edges)(seg.initial_panels << level);
            nodes += (rule.len() * (edges.len() - 1)) as u64;
            let v = integrate_level(f, &rule, &edges);
            deltas[s] = (v - current[s]).abs();
            current[s] = v;
        }
        let total = pairwise_sum(&current);
        let share = (cfg.rel_tol * total.abs()).max(cfg.abs_tol) / m;
        for s in 0..segments.len() {
            if level >= 2 && deltas[s] <= share {
                done[s] = true;
            }
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    let value = pairwise_sum(&current);
    let error: f64 = deltas.iter().filter(|d| d.is_finite()).sum();
    PanelOutcome {
        value,
        error,
        nodes,
        converged: done.iter().all(|&d| d),
    }
}

/// Sorted rates with the per-node cutoffs needed by the shared integrand.
struct Integrand {
    rates: Vec<f64>,
    j: u32,
    ln_fact: f64,
    /// Beyond this rate·t the term's Gamma weight is negligible.
    x_cut: f64,
}

/// ln(1 - e^{-x}) is below 2e-22 in magnitude past this point.
const SURVIVAL_CUT: f64 = 50.0;
/// exp(S) with S below this contributes nothing in double precision.
const LOG_FLOOR: f64 = -750.0;

impl Integrand {
    fn new(p: &[f64], j: u32) -> Self {
        let mut rates = p.to_vec();
        rates.sort_by(f64::total_cmp);
        let ln_fact = ln_factorial(j - 1);
        let jm1 = f64::from(j - 1);
        let mut x_cut = jm1.max(1.0);
        while jm1 * x_cut.ln() - x_cut - ln_fact + x_cut.ln_1p() > -45.0 {
            x_cut += 1.0;
        }
        Integrand {
            rates,
            j,
            ln_fact,
            x_cut: x_cut.max(SURVIVAL_CUT),
        }
    }

    /// exp(S(t)) · Σ_k r_k e^{-r_k t} (r_k t)^{j-1} / (1 - e^{-r_k t}),
    /// divided by (j-1)!.
    fn eval(&self, t: f64) -> f64 {
        let r = &self.rates;
        let end = r.partition_point(|&rk| rk * t < self.x_cut);
        let s_end = r.partition_point(|&rk| rk * t < SURVIVAL_CUT);
        let pow = self.j as i32 - 2;
        let mut s_log = 0.0;
        let mut acc = 1.0f64;
        let mut g = 0.0;
        for (k, &rk) in r[..end].iter().enumerate() {
            let x = rk * t;
            let (om, e) = one_minus_exp_neg(x);
            if k < s_end {
                if om < 1e-150 {
                    s_log += om.ln();
                } else {
                    acc *= om;
                    if acc < 1e-150 {
                        s_log += acc.ln();
                        acc = 1.0;
                        if s_log < LOG_FLOOR {
                            return 0.0;
                        }
                    }
                }
                if s_log < LOG_FLOOR {
                    return 0.0;
                }
            }
            g += rk * e * x.powi(pow) * (x / om);
        }
        let s = s_log + acc.ln();
        if s < LOG_FLOOR || g == 0.0 {
            return 0.0;
        }
        (s - self.ln_fact).exp() * g
    }
}

fn check_inputs(j: u32, cfg: &QuadratureConfig) -> Result<(), QuadratureError> {
    cfg.validate()?;
    if j < 2 {
        return Err(QuadratureError::SmallJ(j));
    }
    Ok(())
}

fn finish(out: PanelOutcome, start: Instant) -> Result<ExpectationResult, QuadratureError> {
    let res = ExpectationResult {
        value: out.value,
        error_estimate: out.error,
        nodes_used: out.nodes,
        elapsed: start.elapsed(),
    };
    if out.converged {
        Ok(res)
    } else {
        Err(QuadratureError::NonConvergence { best: res })
    }
}

/// Smallest x (in whole steps) with N·Q(j, x) ≤ abs_tol, where Q is the
/// upper tail of the Gamma(j) distribution. Every term of the integrand is
/// p_k times a Gamma(j) density in p_k t, so truncating at t = x / p_min
/// discards at most abs_tol.
pub(crate) fn gamma_tail_cut(j: u32, n: f64, abs_tol: f64) -> f64 {
    let jm1 = f64::from(j - 1);
    let ln_fact = ln_factorial(j - 1);
    let target = abs_tol.ln() - n.ln();
    let mut x = (n / abs_tol).ln().max(jm1 + 2.0);
    // Q(j, x) ≤ x^{j-1} e^{-x} / (j-1)! · x / (x - j + 1) for x > j - 1.
    while jm1 * x.ln() - x - ln_fact + (x / (x - jm1)).ln() > target {
        x += 1.0;
    }
    x
}

fn median_inverse(p: &[f64]) -> f64 {
    let mut inv: Vec<f64> = p.iter().map(|x| 1.0 / x).collect();
    inv.sort_by(f64::total_cmp);
    let n = inv.len();
    if n % 2 == 1 {
        inv[n / 2]
    } else {
        0.5 * (inv[n / 2 - 1] + inv[n / 2])
    }
}

/// E[U_j^N] by quadrature in the time variable t.
pub fn expected_unfilled(
    p: &ProbVector,
    j: u32,
    cfg: &QuadratureConfig,
) -> Result<ExpectationResult, QuadratureError> {
    check_inputs(j, cfg)?;
    let start = Instant::now();
    let ps = p.as_slice();
    let n = ps.len() as f64;
    let p_min = ps.iter().copied().fold(f64::INFINITY, f64::min);
    let t_break = median_inverse(ps);
    let t_max = (gamma_tail_cut(j, n, cfg.abs_tol) / p_min).max(2.0 * t_break);
    let integrand = Integrand::new(ps, j);
    let f = |t: f64| integrand.eval(t);
    let segments = [
        Segment::uniform(0.0, t_break, 1),
        Segment::uniform(t_break, t_max, 1),
    ];
    finish(integrate_segments(&f, &segments, cfg), start)
}

/// The same expectation computed on (0, 1) after substituting x = e^{-t}.
///
/// The probabilities are rescaled to rates a_k = p_k / p_min (the value is
/// scale free), which puts the whole mass inside x ∈ [e^{-t'}, 1) with
/// t' of order ln(N / abs_tol). Panels are geometric in x and the Gauss–Legendre
/// nodes are placed in x itself, so this route shares no quadrature nodes
/// with [`expected_unfilled`].
pub fn expected_unfilled_on_unit_interval(
    p: &ProbVector,
    j: u32,
    cfg: &QuadratureConfig,
) -> Result<ExpectationResult, QuadratureError> {
    check_inputs(j, cfg)?;
    let start = Instant::now();
    let ps = p.as_slice();
    let n = ps.len() as f64;
    let p_min = ps.iter().copied().fold(f64::INFINITY, f64::min);
    let rates: Vec<f64> = ps.iter().map(|x| x / p_min).collect();
    let integrand = Integrand::new(&rates, j);
    let t_top = gamma_tail_cut(j, n, cfg.abs_tol);
    let f = |x: f64| {
        let t = -x.ln();
        if t <= 0.0 {
            return 0.0;
        }
        integrand.eval(t) / x
    };
    let segment = Segment {
        edges: Box::new(move |panels| {
            (0..=panels)
                .map(|i| (-t_top * (panels - i) as f64 / panels as f64).exp())
                .collect()
        }),
        initial_panels: (t_top / 4.0).ceil() as usize,
    };
    finish(integrate_segments(&f, &[segment], cfg), start)
}

/// S(t) = Σ_i ln(1 - e^{-p_i t}).
pub fn log_survival_sum(p: &ProbVector, t: f64) -> Result<f64, QuadratureError> {
    if !(t.is_finite() && t > 0.0) {
        return Err(QuadratureError::BadTime(t));
    }
    let terms: Vec<f64> = p
        .as_slice()
        .iter()
        .map(|&pi| ln_one_minus_exp_neg(pi * t))
        .collect();
    Ok(pairwise_sum(&terms))
}
