//! Central-difference verification of tape gradients.

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Relative errors below this denominator are measured against it instead,
/// so coordinates whose true gradient is ~0 do not blow up the ratio.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

fn eval<F>(store: &ParamStore, f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::Shape(format!("objective must be scalar, got {:?}", v.shape())));
    }
    let s = v.data()[0];
    if !s.is_finite() {
        return Err(Error::NonFinite("objective evaluated to a non-finite value".into()));
    }
    Ok(s)
}

/// Compare the tape gradient of `f` against `(f(x+eps) − f(x−eps)) / 2eps`
/// for every coordinate of the parameters in `ids`.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    eps: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Param(format!("eps must be > 0, got {eps}")));
    }
    store.zero_grads();
    {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        if !tape.value(out).is_finite() {
            return Err(Error::NonFinite("objective evaluated to a non-finite value".into()));
        }
        let grads = tape.backward(out)?;
        tape.accumulate(&grads, store);
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    for &id in ids {
        let n = store.value(id).len();
        for i in 0..n {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = eval(store, &mut f);
            store.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = eval(store, &mut f);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let analytic = store.get(id).grad.data()[i];
            let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            let rel = (analytic - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseArray;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(shape: &[usize], seed: u64) -> (ParamStore, ParamId) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let id = s.add("x", DenseArray::randn(shape, 1.0, &mut rng));
        (s, id)
    }

    #[test]
    fn half_squared_norm() {
        let (mut s, id) = store_with(&[3, 4], 3);
        let r = finite_diff_check(&mut s, &[id], 1e-5, |t, st| {
            let x = t.param(st, id);
            let sq = t.square(x);
            let total = t.sum(sq);
            Ok(t.scale(total, 0.5))
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
        // gradient of ½‖x‖² is x exactly
        assert_eq!(s.get(id).grad, s.value(id).as_matrix());
    }

    #[test]
    fn constant_objective() {
        let (mut s, id) = store_with(&[2, 2], 4);
        let r = finite_diff_check(&mut s, &[id], 1e-5, |t, _| Ok(t.constant(DenseArray::scalar(2.5))))
            .unwrap();
        assert_eq!(r.max_rel_err, 0.0);
        assert!(s.get(id).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let (mut s, id) = store_with(&[1, 1], 5);
        let r = finite_diff_check(&mut s, &[id], 1e-5, |t, _| {
            Ok(t.constant(DenseArray::scalar(f64::NAN)))
        });
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert!(finite_diff_check(&mut s, &[id], 0.0, |t, st| Ok(t.param(st, id))).is_err());
    }

    // Every primitive on the tape, checked at seeded random points.
    #[test]
    fn primitives_pass() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut s = ParamStore::new();
            let a = s.add("a", DenseArray::randn(&[4, 3], 1.0, &mut rng));
            let b = s.add("b", DenseArray::randn(&[3, 5], 1.0, &mut rng));
            let c = s.add("c", DenseArray::randn(&[4, 3], 1.0, &mut rng));
            let row = s.add("row", DenseArray::randn(&[1, 3], 1.0, &mut rng));
            let pos = s.add("pos", DenseArray::randn(&[4, 3], 0.3, &mut rng).map(|v| v.abs() + 0.5));
            let w = DenseArray::randn(&[4, 3], 1.0, &mut rng);
            let ids = [a, b, c, row, pos];
            let r = finite_diff_check(&mut s, &ids, 1e-5, |t, st| {
                let a = t.param(st, a);
                let b = t.param(st, b);
                let c = t.param(st, c);
                let row = t.param(st, row);
                let pos = t.param(st, pos);
                let ab = t.matmul(a, b)?;
                let abt = t.matmul_t(ab, ab)?;
                let sm = t.softmax_rows(abt);
                let lsm = t.log_softmax_rows(ab);
                let g = t.gelu(a);
                let ar = t.add_row(g, row)?;
                let mr = t.mul_row(ar, row)?;
                let mx = t.maximum(mr, c)?;
                let mn = t.minimum(a, c)?;
                let dv = t.div(mn, pos)?;
                let ln = t.ln(pos);
                let sq = t.sqrt(pos);
                let sg = t.sigmoid(c);
                let sp = t.softplus(c);
                let gain = t.add_scalar(row, 1.0);
                let lnorm = t.layer_norm(c, gain, row)?;
                let cat = t.concat_cols(&[mx, dv])?;
                let sl = t.slice_cols(cat, 2, 3)?;
                let rows = t.concat_rows(&[sl, ln, sq])?;
                let gath = t.gather_rows(rows, &[0, 5, 5, 11])?;
                let mean_r = t.mean_rows(gath)?;
                let rep = t.repeat_rows(mean_r, 4)?;
                let uf = t.unfold(rep, 3, 1)?;
                let uf2 = t.unfold(lnorm, 3, 2)?;
                let mc = t.mul_const(sg, &w)?;
                let sc = t.sum_cols(sp);
                let mcol = t.mul_col(mc, sc)?;
                let e = t.exp(sm);
                let parts = [
                    t.sum(lsm),
                    t.sum(uf),
                    t.sum(uf2),
                    t.sum(mcol),
                    t.sum(e),
                ];
                let tr = t.transpose(ab);
                let trs = t.square(tr);
                let mut total = t.mean(trs);
                for p in parts {
                    total = t.add(total, p)?;
                }
                let sl_rows = t.slice_rows(lnorm, 1, 2)?;
                let sq2 = t.square(sl_rows);
                let extra = t.sum(sq2);
                let out = t.sub(total, extra)?;
                Ok(t.neg(out))
            })
            .unwrap();
            assert!(r.max_rel_err < 1e-4, "seed {seed}: {r:?}");
        }
    }
}
