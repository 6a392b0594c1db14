//! Seeded Monte Carlo of the collection process.
//!
//! Replication `r` of a run with seed `s` draws from `ChaCha8Rng` seeded
//! with `s` on stream `r`, so every replication is a fixed function of
//! `(s, r)` no matter how the work is split across threads. Moments are
//! accumulated as exact integer sums.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::families::ProbVector;

/// Hard cap on draws per replication.
pub const DRAW_CAP: u64 = 10_000_000_000;

const CHUNK: u64 = 2048;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("replication needed more than {0} draws")]
    CapExceeded(u64),
    #[error("reps must be at least 1")]
    NoReps,
    #[error("j_max must be at least 2, got {0}")]
    SmallJ(u32),
}

/// Walker/Vose alias table: O(1) categorical draws after O(N) setup.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    pub fn new(p: &[f64]) -> Self {
        let n = p.len();
        let mut scaled: Vec<f64> = p.iter().map(|x| x * n as f64).collect();
        let mut prob = vec![1.0; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers are 1 up to rounding.
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
        }
        AliasTable { prob, alias }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }
}

#[derive(Debug, Clone)]
enum Draw {
    Uniform(usize),
    Alias(AliasTable),
}

/// A categorical sampler over coupon types.
#[derive(Debug, Clone)]
pub struct Sampler {
    draw: Draw,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CollectionOutcome {
    pub t: u64,
    pub counts: Vec<u64>,
}

impl Sampler {
    pub fn new(p: &ProbVector) -> Self {
        let draw = if p.is_uniform() {
            Draw::Uniform(p.n())
        } else {
            Draw::Alias(AliasTable::new(p.as_slice()))
        };
        Sampler { draw }
    }

    pub fn n(&self) -> usize {
        match &self.draw {
            Draw::Uniform(n) => *n,
            Draw::Alias(a) => a.prob.len(),
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.draw {
            Draw::Uniform(n) => rng.random_range(0..*n),
            Draw::Alias(a) => a.sample(rng),
        }
    }

    /// Fills `counts` (length N, zeroed by the caller) and returns T_N.
    fn collect_into<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        counts: &mut [u64],
        cap: u64,
    ) -> Result<u64, SimError> {
        let mut remaining = counts.len();
        let mut t = 0u64;
        while remaining > 0 {
            if t == cap {
                return Err(SimError::CapExceeded(cap));
            }
            let k = self.sample(rng);
            if counts[k] == 0 {
                remaining -= 1;
            }
            counts[k] += 1;
            t += 1;
        }
        Ok(t)
    }

    pub fn run_once_capped<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        cap: u64,
    ) -> Result<CollectionOutcome, SimError> {
        let mut counts = vec![0; self.n()];
        let t = self.collect_into(rng, &mut counts, cap)?;
        Ok(CollectionOutcome { t, counts })
    }

    pub fn run_once<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CollectionOutcome, SimError> {
        self.run_once_capped(rng, DRAW_CAP)
    }
}

/// Draws until every type has been seen once.
pub fn run_once<R: Rng + ?Sized>(
    p: &ProbVector,
    rng: &mut R,
) -> Result<CollectionOutcome, SimError> {
    Sampler::new(p).run_once(rng)
}

/// U_j = #{k : counts[k] < j} for j = 2..=j_max.
pub fn unfilled_from_counts(outcome: &CollectionOutcome, j_max: u32) -> Vec<u64> {
    unfilled_from_slice(&outcome.counts, j_max)
}

fn unfilled_from_slice(counts: &[u64], j_max: u32) -> Vec<u64> {
    let top = j_max as usize;
    let mut hist = vec![0u64; top];
    for &c in counts {
        if (c as usize) < top {
            hist[c as usize] += 1;
        }
    }
    let mut out = Vec::with_capacity(top.saturating_sub(1));
    let mut below = hist[0] + hist.get(1).copied().unwrap_or(0);
    for j in 2..=top {
        out.push(below);
        if j < top {
            below += hist[j];
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEstimate {
    pub reps: u64,
    pub seed: u64,
    pub j_max: u32,
    pub mean_t: f64,
    pub se_t: f64,
    pub var_t: f64,
    /// Entry i describes U_{i+2}.
    pub mean_u: Vec<f64>,
    pub se_u: Vec<f64>,
    pub var_u: Vec<f64>,
    /// `histogram[i][u]` counts replications with U_{i+2} = u.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Vec<Vec<u64>>>,
}

impl SimEstimate {
    pub fn mean_u_at(&self, j: u32) -> f64 {
        self.mean_u[(j - 2) as usize]
    }

    pub fn se_u_at(&self, j: u32) -> f64 {
        self.se_u[(j - 2) as usize]
    }

    /// Empirical CDF of U_j at u = 0..=N, if a histogram was kept.
    pub fn empirical_cdf(&self, j: u32) -> Option<Vec<f64>> {
        let row = self.histogram.as_ref()?.get((j - 2) as usize)?;
        let mut acc = 0u64;
        Some(
            row.iter()
                .map(|&c| {
                    acc += c;
                    acc as f64 / self.reps as f64
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    sum: u128,
    sum_sq: u128,
}

impl Moments {
    fn push(&mut self, x: u64) {
        let x = u128::from(x);
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(&mut self, other: &Moments) {
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    /// (mean, unbiased variance).
    fn summary(&self, n: u64) -> (f64, f64) {
        let nn = u128::from(n);
        let mean = self.sum as f64 / n as f64;
        if n < 2 {
            return (mean, 0.0);
        }
        let exact = nn
            .checked_mul(self.sum_sq)
            .zip(self.sum.checked_mul(self.sum))
            .map(|(a, b)| a - b);
        let var = match exact {
            Some(num) => num as f64 / (n as f64 * (n - 1) as f64),
            None => {
                let m2 = self.sum_sq as f64 / n as f64;
                ((m2 - mean * mean) * n as f64 / (n - 1) as f64).max(0.0)
            }
        };
        (mean, var)
    }
}

struct Partial {
    t: Moments,
    u: Vec<Moments>,
    hist: Option<Vec<Vec<u64>>>,
}

fn run_chunk(
    sampler: &Sampler,
    j_max: u32,
    seed: u64,
    reps: std::ops::Range<u64>,
    keep_hist: bool,
) -> Result<Partial, SimError> {
    let n = sampler.n();
    let width = (j_max - 1) as usize;
    let mut part = Partial {
        t: Moments::default(),
        u: vec![Moments::default(); width],
        hist: keep_hist.then(|| vec![vec![0; n + 1]; width]),
    };
    let mut counts = vec![0u64; n];
    for r in reps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r);
        counts.fill(0);
        let t = sampler.collect_into(&mut rng, &mut counts, DRAW_CAP)?;
        part.t.push(t);
        let u = unfilled_from_slice(&counts, j_max);
        for (i, &ui) in u.iter().enumerate() {
            part.u[i].push(ui);
            if let Some(h) = part.hist.as_mut() {
                h[i][ui as usize] += 1;
            }
        }
    }
    Ok(part)
}

fn estimate_impl(
    p: &ProbVector,
    j_max: u32,
    reps: u64,
    seed: u64,
    keep_hist: bool,
) -> Result<SimEstimate, SimError> {
    if reps == 0 {
        return Err(SimError::NoReps);
    }
    if j_max < 2 {
        return Err(SimError::SmallJ(j_max));
    }
    let sampler = Sampler::new(p);
    let chunks = reps.div_ceil(CHUNK);
    let parts: Vec<Partial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(reps);
            run_chunk(&sampler, j_max, seed, lo..hi, keep_hist)
        })
        .collect::<Result<_, _>>()?;
    let width = (j_max - 1) as usize;
    let mut t = Moments::default();
    let mut u = vec![Moments::default(); width];
    let mut hist = keep_hist.then(|| vec![vec![0u64; p.n() + 1]; width]);
    for part in &parts {
        t.merge(&part.t);
        for (a, b) in u.iter_mut().zip(&part.u) {
            a.merge(b);
        }
        if let (Some(h), Some(ph)) = (hist.as_mut(), part.hist.as_ref()) {
            for (row, prow) in h.iter_mut().zip(ph) {
                for (x, y) in row.iter_mut().zip(prow) {
                    *x += y;
                }
            }
        }
    }
    let root = (reps as f64).sqrt();
    let (mean_t, var_t) = t.summary(reps);
    let (mut mean_u, mut se_u, mut var_u) = (vec![], vec![], vec![]);
    for m in &u {
        let (mean, var) = m.summary(reps);
        mean_u.push(mean);
        var_u.push(var);
        se_u.push(var.sqrt() / root);
    }
    Ok(SimEstimate {
        reps,
        seed,
        j_max,
        mean_t,
        se_t: var_t.sqrt() / root,
        var_t,
        mean_u,
        se_u,
        var_u,
        histogram: hist,
    })
}

/// Sample means and standard errors of T_N and U_2..U_{j_max}.
pub fn estimate(
    p: &ProbVector,
    j_max: u32,
    reps: u64,
    seed: u64,
) -> Result<SimEstimate, SimError> {
    estimate_impl(p, j_max, reps, seed, false)
}

/// As [`estimate`], also keeping per-j histograms of U_j.
pub fn estimate_with_histogram(
    p: &ProbVector,
    j_max: u32,
    reps: u64,
    seed: u64,
) -> Result<SimEstimate, SimError> {
    estimate_impl(p, j_max, reps, seed, true)
}
