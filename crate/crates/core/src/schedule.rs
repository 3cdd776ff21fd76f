//! Residual-injection coefficient schedule `γ_1 < … < γ_T = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleShape {
    #[default]
    Linear,
    Geometric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    gamma: Vec<f64>,
    alpha: Vec<f64>,
    sigma: f64,
}

impl DiffusionSchedule {
    /// Builds `steps` coefficients from `gamma_min` to exactly 1, evenly
    /// spaced (linear) or evenly spaced in log (geometric).
    pub fn new(steps: usize, gamma_min: f64, sigma: f64, shape: ScheduleShape) -> Result<Self> {
        if steps < 1 {
            return Err(Error::Param(format!("diffusion steps must be ≥ 1, got {steps}")));
        }
        if !(gamma_min > 0.0 && gamma_min < 1.0) {
            return Err(Error::Param(format!("gamma_min must lie in (0,1), got {gamma_min}")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Param(format!("sigma must be finite and ≥ 0, got {sigma}")));
        }
        let target: Vec<f64> = if steps == 1 {
            vec![1.0]
        } else {
            let last = (steps - 1) as f64;
            (0..steps)
                .map(|i| {
                    let frac = i as f64 / last;
                    match shape {
                        ScheduleShape::Linear => gamma_min + frac * (1.0 - gamma_min),
                        ScheduleShape::Geometric => gamma_min.powf(1.0 - frac),
                    }
                })
                .collect()
        };
        // Store increments such that the running float sum reproduces γ
        // bit-for-bit, ending at exactly 1.
        let mut gamma = Vec::with_capacity(steps);
        let mut alpha = Vec::with_capacity(steps);
        let mut prev = 0.0f64;
        for (i, &g) in target.iter().enumerate() {
            let goal = if i + 1 == steps {
                1.0
            } else if i == 0 {
                gamma_min
            } else {
                g
            };
            let mut a = goal - prev;
            let mut guard = 0;
            while prev + a != goal && guard < 8 {
                a = if prev + a < goal { a.next_up() } else { a.next_down() };
                guard += 1;
            }
            let next = prev + a;
            if !(a > 0.0) {
                return Err(Error::Param(format!(
                    "schedule is not strictly increasing at step {} (gamma_min {gamma_min}, {steps} steps)",
                    i + 1
                )));
            }
            alpha.push(a);
            gamma.push(next);
            prev = next;
        }
        Ok(Self { gamma, alpha, sigma })
    }

    pub fn steps(&self) -> usize {
        self.gamma.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn check(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.steps() {
            return Err(Error::Index {
                index: t,
                lo: 1,
                hi: self.steps(),
            });
        }
        Ok(())
    }

    /// `γ_t` for `0 ≤ t ≤ T`, with `γ_0 = 0`.
    pub fn gamma(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(0.0);
        }
        self.check(t)?;
        Ok(self.gamma[t - 1])
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }

    /// `α_t = γ_t − γ_{t−1}`, stored so that `γ_{t−1} + α_t == γ_t` exactly.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alpha[t - 1])
    }

    /// Reverse-step noise scale `sqrt(γ_{t−1}/γ_t · α_t) · σ`; zero at `t = 1`.
    pub fn lambda(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        let ratio = self.gamma(t - 1)? / self.gamma(t)?;
        Ok((ratio * self.alpha(t)?).sqrt() * self.sigma)
    }
}
