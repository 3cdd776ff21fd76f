use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numerics::{DenseArray, Tape, Var};

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;

/// Softmax cross-entropy over foreground segments only. `onehot` is
/// `N × C`; rows outside `fg_mask` are ignored.
pub fn cls_loss(tape: &mut Tape, logits: Var, onehot: &DenseArray, fg_mask: &[bool]) -> Result<Var> {
    let shape = tape.value(logits).shape().to_vec();
    if shape != onehot.shape() || shape[0] != fg_mask.len() {
        return Err(shape_err!(
            "logits {:?}, labels {:?}, mask {}",
            shape,
            onehot.shape(),
            fg_mask.len()
        ));
    }
    let idx: Vec<usize> = fg_mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    if idx.is_empty() {
        log::warn!("classification loss over an empty foreground mask");
        return Ok(tape.constant(DenseArray::scalar(0.0)));
    }
    let rows = tape.gather_rows(logits, &idx)?;
    let logp = tape.log_softmax_rows(rows);
    let picked = tape.mul_const(logp, &onehot.select_rows(&idx))?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, -1.0 / idx.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FgLossKind {
    Focal { gamma: f64, alpha: f64 },
    Bce,
}

impl Default for FgLossKind {
    fn default() -> Self {
        FgLossKind::Focal {
            gamma: FOCAL_GAMMA,
            alpha: FOCAL_ALPHA,
        }
    }
}

/// Per-segment binary foreground loss on logits (`N × 1` or `1 × N`),
/// averaged over segments.
pub fn fg_loss(tape: &mut Tape, scores: Var, fg_mask: &[bool], kind: FgLossKind) -> Result<Var> {
    let shape = tape.value(scores).shape().to_vec();
    if tape.value(scores).len() != fg_mask.len() {
        return Err(shape_err!("scores {:?} vs mask {}", shape, fg_mask.len()));
    }
    if fg_mask.is_empty() {
        return Ok(tape.constant(DenseArray::scalar(0.0)));
    }
    // z = −x on positives, x on negatives; the loss is a function of z alone
    let sign: Vec<f64> = fg_mask.iter().map(|&m| if m { -1.0 } else { 1.0 }).collect();
    let z = tape.mul_const(scores, &DenseArray::new(shape.clone(), sign)?)?;
    let nll = tape.softplus(z);
    let per = match kind {
        FgLossKind::Bce => nll,
        FgLossKind::Focal { gamma, alpha } => {
            // (1 − p_t)^γ = σ(z)^γ = exp(−γ·softplus(−z))
            let negz = tape.neg(z);
            let sp = tape.softplus(negz);
            let scaled = tape.scale(sp, -gamma);
            let modulating = tape.exp(scaled);
            let w: Vec<f64> = fg_mask.iter().map(|&m| if m { alpha } else { 1.0 - alpha }).collect();
            let weighted = tape.mul(modulating, nll)?;
            tape.mul_const(weighted, &DenseArray::new(shape, w)?)?
        }
    };
    Ok(tape.mean(per))
}

/// 1-D DIoU loss of two intervals; 0 when both collapse to the same point.
pub fn diou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    let enclosing = a.1.max(b.1) - a.0.min(b.0);
    if enclosing <= 0.0 {
        return 0.0;
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let d = (a.0 + a.1) / 2.0 - (b.0 + b.1) / 2.0;
    1.0 - iou + d * d / (enclosing * enclosing)
}

/// Mean DIoU loss of predicted `K × 2` intervals (start, end) against `gt`.
pub fn diou_loss(tape: &mut Tape, pred: Var, gt: &DenseArray) -> Result<Var> {
    let k = tape.value(pred).rows();
    if tape.value(pred).shape() != [k, 2] || gt.shape() != [k, 2] || k == 0 {
        return Err(shape_err!("diou needs matching K × 2 intervals, got {:?} and {:?}", tape.value(pred).shape(), gt.shape()));
    }
    let ps = tape.slice_cols(pred, 0, 1)?;
    let pe = tape.slice_cols(pred, 1, 1)?;
    let gs = tape.constant(gt.select_cols(0));
    let ge = tape.constant(gt.select_cols(1));

    let lo = tape.maximum(ps, gs)?;
    let hi = tape.minimum(pe, ge)?;
    let raw = tape.sub(hi, lo)?;
    let zero = tape.constant(DenseArray::zeros(&[k, 1]));
    let inter = tape.maximum(raw, zero)?;
    let plen = tape.sub(pe, ps)?;
    let glen = tape.sub(ge, gs)?;
    let both = tape.add(plen, glen)?;
    let union = tape.sub(both, inter)?;
    let outer_hi = tape.maximum(pe, ge)?;
    let outer_lo = tape.minimum(ps, gs)?;
    let enclosing = tape.sub(outer_hi, outer_lo)?;

    // rows with a degenerate enclosing span contribute 0; rows with an empty
    // union (two distinct points) have IoU 0
    let enc_v = tape.value(enclosing).clone();
    let uni_v = tape.value(union).clone();
    let keep = enc_v.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let enc_fix = tape.constant(enc_v.map(|v| if v > 0.0 { 0.0 } else { 1.0 }));
    let uni_fix = tape.constant(uni_v.map(|v| if v > 0.0 { 0.0 } else { 1.0 }));
    let enc_safe = tape.add(enclosing, enc_fix)?;
    let uni_safe = tape.add(union, uni_fix)?;

    let iou = tape.div(inter, uni_safe)?;
    let pc = tape.add(ps, pe)?;
    let gc = tape.add(gs, ge)?;
    let dc = tape.sub(pc, gc)?;
    let dist = tape.scale(dc, 0.5);
    let ratio = tape.div(dist, enc_safe)?;
    let pen = tape.square(ratio);
    let neg_iou = tape.neg(iou);
    let one_minus = tape.add_scalar(neg_iou, 1.0);
    let per = tape.add(one_minus, pen)?;
    let masked = tape.mul_const(per, &keep)?;
    Ok(tape.mean(masked))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub df: f64,
    pub cls: f64,
    pub fg: f64,
    pub loc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            df: 1.0,
            cls: 1.0,
            fg: 1.0,
            loc: 1.0,
        }
    }
}

/// Loss terms on a tape; absent terms count as 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossParts {
    pub df: Option<Var>,
    pub cls: Option<Var>,
    pub fg: Option<Var>,
    pub loc: Option<Var>,
}

/// Weighted sum of the present parts.
pub fn total_loss(tape: &mut Tape, parts: LossParts, w: LossWeights) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (v, wt) in [(parts.df, w.df), (parts.cls, w.cls), (parts.fg, w.fg), (parts.loc, w.loc)] {
        if let Some(v) = v {
            let term = tape.scale(v, wt);
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
    }
    Ok(acc.unwrap_or_else(|| tape.constant(DenseArray::scalar(0.0))))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_df: f64,
    pub l_cls: f64,
    pub l_fg: f64,
    pub l_loc: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(l_df: f64, l_cls: f64, l_fg: f64, l_loc: f64, w: LossWeights) -> Self {
        Self {
            l_df,
            l_cls,
            l_fg,
            l_loc,
            total: w.df * l_df + w.cls * l_cls + w.fg * l_fg + w.loc * l_loc,
        }
    }

    pub fn from_tape(tape: &Tape, parts: LossParts, w: LossWeights) -> Self {
        let get = |v: Option<Var>| v.map(|v| tape.scalar(v)).unwrap_or(0.0);
        Self::new(get(parts.df), get(parts.cls), get(parts.fg), get(parts.loc), w)
    }

    pub fn accumulate(&mut self, other: &LossReport) {
        self.l_df += other.l_df;
        self.l_cls += other.l_cls;
        self.l_fg += other.l_fg;
        self.l_loc += other.l_loc;
        self.total += other.total;
    }

    pub fn scaled(&self, k: f64) -> LossReport {
        LossReport {
            l_df: self.l_df * k,
            l_cls: self.l_cls * k,
            l_fg: self.l_fg * k,
            l_loc: self.l_loc * k,
            total: self.total * k,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_df, self.l_cls, self.l_fg, self.l_loc, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}
