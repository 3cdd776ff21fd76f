//! Monte-Carlo moment checks of the forward and reverse processes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward_sample, forward_step, residual, reverse_step, OracleDenoiser};
use crate::error::{Error, Result};
use crate::numerics::DenseArray;
use crate::schedule::DiffusionSchedule;

pub const MEAN_SE_TOL: f64 = 4.0;
pub const VAR_REL_TOL: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McCheck {
    /// Closed-form forward draw vs `N(h_f + γ_t e, γ_t σ²)`.
    ForwardMarginal,
    /// `t` composed single-step transitions from `h_f` vs the same marginal.
    ComposedChain,
    /// Reverse step from the fixed state `h_f + γ_t e` vs
    /// `N(h_f + γ_{t−1} e, λ_t²)`.
    ReverseVariance,
    /// Reverse step from a marginal draw at `t` vs the marginal at `t−1`.
    ReverseMarginal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McRecord {
    pub check: McCheck,
    pub t: usize,
    /// Largest per-coordinate `|empirical mean − expected mean|`.
    pub mean_err: f64,
    /// Per-coordinate empirical/expected variance ratio furthest from 1.
    pub var_ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub samples: usize,
    pub records: Vec<McRecord>,
    pub all_pass: bool,
}

struct Moments {
    n: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    shift: Vec<f64>,
}

impl Moments {
    /// Accumulates around `shift` (the expected mean) to limit cancellation.
    fn new(shift: &DenseArray) -> Self {
        let d = shift.len();
        Self {
            n: 0,
            sum: vec![0.0; d],
            sum_sq: vec![0.0; d],
            shift: shift.data().to_vec(),
        }
    }

    fn push(&mut self, x: &DenseArray) {
        self.n += 1;
        for (j, &v) in x.data().iter().enumerate() {
            let d = v - self.shift[j];
            self.sum[j] += d;
            self.sum_sq[j] += d * d;
        }
    }

    fn record(&self, check: McCheck, t: usize, expect_var: f64) -> McRecord {
        let n = self.n as f64;
        let mut mean_err: f64 = 0.0;
        let mut worst_ratio: f64 = 1.0;
        let mut pass = true;
        for j in 0..self.sum.len() {
            let m = self.sum[j] / n;
            let var = (self.sum_sq[j] - n * m * m) / (n - 1.0);
            mean_err = mean_err.max(m.abs());
            let se = (expect_var / n).sqrt();
            if m.abs() > (MEAN_SE_TOL * se).max(1e-12) {
                pass = false;
            }
            let ratio = if expect_var == 0.0 {
                if var.abs() <= 1e-24 {
                    1.0
                } else {
                    f64::INFINITY
                }
            } else {
                var / expect_var
            };
            if (ratio - 1.0).abs() > VAR_REL_TOL {
                pass = false;
            }
            if (ratio - 1.0).abs() > (worst_ratio - 1.0).abs() {
                worst_ratio = ratio;
            }
        }
        McRecord {
            check,
            t,
            mean_err,
            var_ratio: worst_ratio,
            pass,
        }
    }
}

fn marginal_mean(h_f: &DenseArray, h_v: &DenseArray, g: f64) -> DenseArray {
    let mut m = h_f.scale(1.0 - g);
    m.add_assign_scaled(h_v, g);
    m
}

/// Runs every check at every `t ∈ {1..T}` with `n_samples` draws each.
pub fn mc_verify(
    s: &DiffusionSchedule,
    h_v: &DenseArray,
    h_f: &DenseArray,
    n_samples: usize,
    seed: u64,
) -> Result<McReport> {
    if n_samples < 1000 {
        return Err(Error::Param(format!("mc_verify needs ≥ 1000 samples, got {n_samples}")));
    }
    let h_v = h_v.as_matrix();
    let h_f = h_f.as_matrix();
    let e = residual(&h_v, &h_f)?;
    let steps = s.steps();
    let sigma2 = s.sigma() * s.sigma();
    let oracle = OracleDenoiser { h_f: h_f.clone() };
    let mut records = Vec::new();

    for t in 1..=steps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((t as u64) << 20));
        let g = s.gamma(t)?;
        let g_prev = s.gamma(t - 1)?;
        let mean_t = marginal_mean(&h_f, &h_v, g);
        let mean_prev = marginal_mean(&h_f, &h_v, g_prev);

        let mut fwd = Moments::new(&mean_t);
        for _ in 0..n_samples {
            fwd.push(&forward_sample(&h_f, &h_v, t, s, false, &mut rng)?);
        }
        records.push(fwd.record(McCheck::ForwardMarginal, t, g * sigma2));

        let mut chain = Moments::new(&mean_t);
        for _ in 0..n_samples {
            let mut h = h_f.clone();
            for k in 1..=t {
                h = forward_step(&h, &e, k, s, &mut rng)?;
            }
            chain.push(&h);
        }
        records.push(chain.record(McCheck::ComposedChain, t, g * sigma2));

        let lambda = if t > 1 { s.lambda(t)? } else { 0.0 };
        let mut rev = Moments::new(&mean_prev);
        for _ in 0..n_samples {
            rev.push(&reverse_step(&oracle, &mean_t, t, None, s, &mut rng)?);
        }
        records.push(rev.record(McCheck::ReverseVariance, t, lambda * lambda));

        let mut rev_m = Moments::new(&mean_prev);
        for _ in 0..n_samples {
            let h_t = forward_sample(&h_f, &h_v, t, s, false, &mut rng)?;
            rev_m.push(&reverse_step(&oracle, &h_t, t, None, s, &mut rng)?);
        }
        records.push(rev_m.record(McCheck::ReverseMarginal, t, g_prev * sigma2));
    }
    let all_pass = records.iter().all(|r| r.pass);
    Ok(McReport {
        samples: n_samples,
        records,
        all_pass,
    })
}
