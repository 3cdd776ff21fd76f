//! Residual diffusion between the foreground target `h_f` and the pooled
//! video representation `h_v`.
//!
//! Marginal: `h_t ~ N(h_f + γ_t·e, γ_t·σ²·I)` with `e = h_v − h_f`, so
//! `h_0 = h_f` and the mean at `t = T` is `h_v`.

mod denoiser;
mod verify;

pub use denoiser::DenoiserNet;
pub use verify::{mc_verify, McCheck, McRecord, McReport};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{DenseArray, ParamStore, Tape, Var};
use crate::schedule::{DiffusionSchedule, ScheduleShape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub gamma_min: f64,
    pub sigma: f64,
    pub shape: ScheduleShape,
    /// Forward mean `h_v − γ_t·e` instead of `h_f + γ_t·e`.
    pub paper_literal_forward: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 8,
            gamma_min: 1e-2,
            sigma: 0.05,
            shape: ScheduleShape::Linear,
            paper_literal_forward: false,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.steps, self.gamma_min, self.sigma, self.shape)
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// `e = h_v − h_f`.
pub fn residual(h_v: &DenseArray, h_f: &DenseArray) -> Result<DenseArray> {
    if h_v.shape() != h_f.shape() {
        return Err(shape_err!("h_v {:?} vs h_f {:?}", h_v.shape(), h_f.shape()));
    }
    h_v.sub(h_f)
}

fn gaussian_like<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> DenseArray {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    DenseArray::new(shape.to_vec(), data).expect("shape matches")
}

/// One draw from the marginal at `t`. Rows of a batch are independent.
pub fn forward_sample<R: Rng + ?Sized>(
    h_f: &DenseArray,
    h_v: &DenseArray,
    t: usize,
    s: &DiffusionSchedule,
    literal: bool,
    rng: &mut R,
) -> Result<DenseArray> {
    let g = s.gamma(t)?;
    if t == 0 {
        return Err(Error::Index { index: 0, lo: 1, hi: s.steps() });
    }
    residual(h_v, h_f)?;
    // (1−γ)·from + γ·to is exact at both ends
    let (from, to) = if literal { (h_v, h_f) } else { (h_f, h_v) };
    let mut out = from.scale(1.0 - g);
    out.add_assign_scaled(to, g);
    if s.sigma() > 0.0 {
        let eps = gaussian_like(h_f.shape(), rng);
        out.add_assign_scaled(&eps, g.sqrt() * s.sigma());
    }
    Ok(out)
}

/// Single transition `t−1 → t`: mean shift `α_t·e`, variance `α_t·σ²`.
pub fn forward_step<R: Rng + ?Sized>(
    h_prev: &DenseArray,
    e: &DenseArray,
    t: usize,
    s: &DiffusionSchedule,
    rng: &mut R,
) -> Result<DenseArray> {
    let a = s.alpha(t)?;
    let mut out = h_prev.clone();
    out.add_assign_scaled(e, a);
    if s.sigma() > 0.0 {
        let eps = gaussian_like(h_prev.shape(), rng);
        out.add_assign_scaled(&eps, a.sqrt() * s.sigma());
    }
    Ok(out)
}

/// Anything that predicts `h_f` from `(h_t, t, c)`.
pub trait Denoise {
    fn denoise(&self, h_t: &DenseArray, t: usize, c: Option<&DenseArray>) -> Result<DenseArray>;
}

/// Trained network bound to its parameters.
pub struct NetDenoiser<'a> {
    pub net: &'a DenoiserNet,
    pub store: &'a ParamStore,
}

impl Denoise for NetDenoiser<'_> {
    fn denoise(&self, h_t: &DenseArray, t: usize, c: Option<&DenseArray>) -> Result<DenseArray> {
        let h = h_t.as_matrix();
        let steps = vec![t; h.rows()];
        let mut tape = Tape::new();
        let x = tape.constant(h);
        let c = c.map(|c| tape.constant(c.as_matrix()));
        let y = self.net.forward(&mut tape, self.store, x, &steps, c)?;
        Ok(tape.value(y).clone())
    }
}

/// Returns the true foreground target regardless of input.
pub struct OracleDenoiser {
    pub h_f: DenseArray,
}

impl Denoise for OracleDenoiser {
    fn denoise(&self, h_t: &DenseArray, _t: usize, _c: Option<&DenseArray>) -> Result<DenseArray> {
        if h_t.len() != self.h_f.len() {
            return Err(shape_err!("oracle holds {:?}, state is {:?}", self.h_f.shape(), h_t.shape()));
        }
        Ok(self.h_f.clone().reshape(h_t.shape().to_vec())?)
    }
}

/// `h_{t−1} = (γ_{t−1}/γ_t)·h_t + (α_t/γ_t)·φ(h_t, t, c) + λ_t·ε`, with no
/// noise at `t = 1`.
pub fn reverse_step<D: Denoise + ?Sized, R: Rng + ?Sized>(
    den: &D,
    h_t: &DenseArray,
    t: usize,
    c: Option<&DenseArray>,
    s: &DiffusionSchedule,
    rng: &mut R,
) -> Result<DenseArray> {
    let a = s.alpha(t)?;
    let g = s.gamma(t)?;
    let g_prev = s.gamma(t - 1)?;
    let pred = den.denoise(h_t, t, c)?;
    if pred.shape() != h_t.shape() {
        return Err(shape_err!("denoiser returned {:?} for {:?}", pred.shape(), h_t.shape()));
    }
    let mut out = h_t.scale(g_prev / g);
    out.add_assign_scaled(&pred, a / g);
    let lambda = s.lambda(t)?;
    if t > 1 && lambda > 0.0 {
        let eps = gaussian_like(h_t.shape(), rng);
        out.add_assign_scaled(&eps, lambda);
    }
    Ok(out)
}

/// States `h_T, h_{T−1}, …, h_0` of the reverse chain started at `h_v`.
pub fn reverse_trajectory<D: Denoise + ?Sized, R: Rng + ?Sized>(
    den: &D,
    h_v: &DenseArray,
    c: Option<&DenseArray>,
    s: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Vec<DenseArray>> {
    let mut states = Vec::with_capacity(s.steps() + 1);
    states.push(h_v.clone());
    for t in (1..=s.steps()).rev() {
        let next = reverse_step(den, states.last().expect("nonempty"), t, c, s, rng)?;
        states.push(next);
    }
    Ok(states)
}

pub fn infer_foreground<D: Denoise + ?Sized, R: Rng + ?Sized>(
    den: &D,
    h_v: &DenseArray,
    c: Option<&DenseArray>,
    s: &DiffusionSchedule,
    rng: &mut R,
) -> Result<DenseArray> {
    let mut h = h_v.clone();
    for t in (1..=s.steps()).rev() {
        h = reverse_step(den, &h, t, c, s, rng)?;
    }
    Ok(h)
}

/// `Σ‖pred − target‖² / B` for `B × D` inputs.
pub fn denoise_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let b = tape.value(pred).rows();
    if tape.value(pred).shape() != tape.value(target).shape() {
        return Err(shape_err!(
            "prediction {:?} vs target {:?}",
            tape.value(pred).shape(),
            tape.value(target).shape()
        ));
    }
    let d = tape.sub(pred, target)?;
    let sq = tape.square(d);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / b as f64))
}

/// Noised states for a batch: one uniform `t ∈ {1..T}` per row.
pub fn sample_training_states<R: Rng + ?Sized>(
    h_v: &DenseArray,
    h_f: &DenseArray,
    s: &DiffusionSchedule,
    literal: bool,
    rng: &mut R,
) -> Result<(DenseArray, Vec<usize>)> {
    let h_v = h_v.as_matrix();
    let h_f = h_f.as_matrix();
    if h_v.shape() != h_f.shape() || h_v.rows() == 0 {
        return Err(shape_err!("batch h_v {:?} vs h_f {:?}", h_v.shape(), h_f.shape()));
    }
    let mut steps = Vec::with_capacity(h_v.rows());
    let mut rows = Vec::with_capacity(h_v.rows());
    for i in 0..h_v.rows() {
        let t = rng.random_range(1..=s.steps());
        steps.push(t);
        let x = forward_sample(&h_f.row_array(i), &h_v.row_array(i), t, s, literal, rng)?;
        rows.push(x);
    }
    let refs: Vec<&DenseArray> = rows.iter().collect();
    Ok((DenseArray::vstack(&refs)?, steps))
}

/// Diffusion loss for a batch on an existing tape.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    net: &DenoiserNet,
    store: &ParamStore,
    h_v: &DenseArray,
    h_f: &DenseArray,
    c: Option<Var>,
    s: &DiffusionSchedule,
    literal: bool,
    rng: &mut R,
) -> Result<(Var, Vec<usize>)> {
    let (states, steps) = sample_training_states(h_v, h_f, s, literal, rng)?;
    let x = tape.constant(states);
    let pred = net.forward(tape, store, x, &steps, c)?;
    let target = tape.constant(h_f.as_matrix());
    Ok((denoise_loss(tape, pred, target)?, steps))
}

/// One gradient evaluation: samples states, computes the loss and adds its
/// parameter gradients into `store`. Returns the loss and the drawn steps.
pub fn train_step<R: Rng + ?Sized>(
    net: &DenoiserNet,
    store: &mut ParamStore,
    h_v: &DenseArray,
    h_f: &DenseArray,
    s: &DiffusionSchedule,
    c: Option<&DenseArray>,
    literal: bool,
    rng: &mut R,
) -> Result<(f64, Vec<usize>)> {
    let mut tape = Tape::new();
    let c = c.map(|c| tape.constant(c.as_matrix()));
    let (loss, steps) = diffusion_loss(&mut tape, net, store, h_v, h_f, c, s, literal, rng)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    tape.accumulate(&grads, store);
    Ok((value, steps))
}
