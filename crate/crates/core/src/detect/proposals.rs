use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numerics::{sigmoid, DenseArray};

/// A scored candidate action instance in segment-index units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub video: usize,
    pub start: f64,
    pub end: f64,
    pub category: usize,
    pub score: f64,
}

/// `|a ∩ b| / |a ∪ b|`; 0 for disjoint or degenerate intervals.
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> f64 {
    if a.1 <= a.0 || b.1 <= b.0 {
        return 0.0;
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    inter / union
}

/// One proposal per segment whose foreground probability exceeds
/// `fg_threshold`. `dist` is `N × 2` (start, end distances from the segment
/// centre), `cls_logits` is `N × C` over `labels`, `fg_logits` has `N` entries.
pub fn decode_proposals(
    video: usize,
    dist: &DenseArray,
    cls_logits: &DenseArray,
    fg_logits: &DenseArray,
    labels: &[usize],
    fg_threshold: f64,
) -> Result<Vec<Proposal>> {
    let n = dist.rows();
    if dist.shape() != [n, 2] || cls_logits.rows() != n || fg_logits.len() != n || cls_logits.cols() != labels.len() {
        return Err(shape_err!(
            "decode: dist {:?}, logits {:?}, fg {:?}, {} labels",
            dist.shape(),
            cls_logits.shape(),
            fg_logits.shape(),
            labels.len()
        ));
    }
    let probs = cls_logits.softmax_rows();
    let len = n as f64;
    let mut out = Vec::new();
    for s in 0..n {
        let p_fg = sigmoid(fg_logits.data()[s]);
        if p_fg <= fg_threshold {
            continue;
        }
        let row = probs.row(s);
        let (best, p_cls) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, &p)| if p > acc.1 { (j, p) } else { acc });
        let c = s as f64 + 0.5;
        let start = (c - dist.get(s, 0)).max(0.0);
        let end = (c + dist.get(s, 1)).min(len);
        if end <= start {
            continue;
        }
        out.push(Proposal {
            video,
            start,
            end,
            category: labels[best],
            score: p_fg * p_cls,
        });
    }
    Ok(out)
}

/// Score descending, then earlier start, then lower category.
pub fn rank_order(a: &Proposal, b: &Proposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.total_cmp(&b.start))
        .then(a.category.cmp(&b.category))
        .then(a.end.total_cmp(&b.end))
        .then(a.video.cmp(&b.video))
}

/// Gaussian Soft-NMS applied within each (video, category) group.
pub fn soft_nms(props: &[Proposal], sigma_nms: f64, score_floor: f64) -> Vec<Proposal> {
    let mut groups: std::collections::BTreeMap<(usize, usize), Vec<Proposal>> = Default::default();
    for p in props {
        groups.entry((p.video, p.category)).or_default().push(p.clone());
    }
    let mut kept = Vec::with_capacity(props.len());
    for (_, mut pool) in groups {
        while !pool.is_empty() {
            let top = (0..pool.len())
                .min_by(|&i, &j| rank_order(&pool[i], &pool[j]))
                .expect("nonempty");
            let best = pool.swap_remove(top);
            for p in pool.iter_mut() {
                let o = tiou((best.start, best.end), (p.start, p.end));
                p.score *= (-(o * o) / sigma_nms).exp();
            }
            pool.retain(|p| p.score >= score_floor);
            kept.push(best);
        }
    }
    kept.sort_by(rank_order);
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prop(start: f64, end: f64, category: usize, score: f64) -> Proposal {
        Proposal {
            video: 0,
            start,
            end,
            category,
            score,
        }
    }

    #[test]
    fn tiou_cases() {
        assert_eq!(tiou((2.0, 7.0), (2.0, 7.0)), 1.0);
        assert!((tiou((0.0, 10.0), (5.0, 15.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(tiou((0.0, 1.0), (2.0, 3.0)), 0.0);
        assert_eq!(tiou((0.0, 1.0), (1.0, 3.0)), 0.0);
        assert_eq!(tiou((1.0, 1.0), (1.0, 1.0)), 0.0);
    }

    fn tiou_oracle(a: (f64, f64), b: (f64, f64)) -> f64 {
        // measure both sets on the sorted list of endpoints
        if a.1 <= a.0 || b.1 <= b.0 {
            return 0.0;
        }
        let mut pts = [a.0, a.1, b.0, b.1];
        pts.sort_by(f64::total_cmp);
        let (mut inter, mut union) = (0.0, 0.0);
        for w in pts.windows(2) {
            let mid = (w[0] + w[1]) / 2.0;
            let ina = a.0 <= mid && mid <= a.1;
            let inb = b.0 <= mid && mid <= b.1;
            let len = w[1] - w[0];
            if ina && inb {
                inter += len;
            }
            if ina || inb {
                union += len;
            }
        }
        if union == 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    #[test]
    fn tiou_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let a0 = rng.random_range(0.0..10.0);
            let b0 = rng.random_range(0.0..10.0);
            let a = (a0, a0 + rng.random_range(0.1..6.0));
            let b = (b0, b0 + rng.random_range(0.1..6.0));
            assert!((tiou(a, b) - tiou_oracle(a, b)).abs() < 1e-10);
        }
    }

    #[test]
    fn decode_cases() {
        let n = 10;
        let mut dist = DenseArray::filled(&[n, 2], 1.0);
        dist.set(5, 0, 2.0);
        dist.set(5, 1, 3.0);
        dist.set(0, 0, 10.0);
        let mut logits = DenseArray::zeros(&[n, 2]);
        logits.set(5, 1, 3.0);
        let mut fg = DenseArray::filled(&[n, 1], -10.0);
        fg.data_mut()[5] = 5.0;
        fg.data_mut()[0] = 5.0;
        let props = decode_proposals(3, &dist, &logits, &fg, &[7, 9], 0.5).unwrap();
        assert_eq!(props.len(), 2);
        let p5 = props.iter().find(|p| p.start > 1.0).unwrap();
        assert_eq!((p5.start, p5.end), (3.5, 8.5));
        assert_eq!(p5.category, 9);
        assert_eq!(p5.video, 3);
        let p_fg = sigmoid(5.0);
        let p_cls = 3f64.exp() / (1.0 + 3f64.exp());
        assert!((p5.score - p_fg * p_cls).abs() < 1e-15);
        let p0 = props.iter().find(|p| p.start == 0.0).unwrap();
        assert_eq!(p0.end, 1.5);
        assert!(decode_proposals(0, &dist, &logits, &fg, &[7, 9], 1.0).unwrap().is_empty());
    }

    #[test]
    fn decode_reproduces_ground_truth() {
        // distances measured from every segment centre inside [3, 9]
        let (gs, ge) = (3.0, 9.0);
        let n = 12;
        let mut dist = DenseArray::filled(&[n, 2], 0.5);
        let mut fg = DenseArray::filled(&[n, 1], -10.0);
        for s in 3..9 {
            let c = s as f64 + 0.5;
            dist.set(s, 0, c - gs);
            dist.set(s, 1, ge - c);
            fg.data_mut()[s] = 10.0;
        }
        let props = decode_proposals(0, &dist, &DenseArray::zeros(&[n, 1]), &fg, &[0], 0.5).unwrap();
        assert_eq!(props.len(), 6);
        for p in props {
            assert_eq!((p.start, p.end), (gs, ge));
            assert_eq!(tiou((p.start, p.end), (gs, ge)), 1.0);
        }
    }

    #[test]
    fn soft_nms_examples() {
        let one = vec![prop(1.0, 4.0, 0, 0.7)];
        assert_eq!(soft_nms(&one, 0.5, 0.001), one);

        let two = vec![prop(1.0, 4.0, 0, 0.8), prop(1.0, 4.0, 0, 0.9)];
        let out = soft_nms(&two, 0.5, 0.001);
        assert_eq!(out[0].score, 0.9);
        assert!((out[1].score - 0.8 * (-2f64).exp()).abs() < 1e-9);
        assert!((out[1].score - 0.10827).abs() < 1e-5);

        let apart = vec![prop(0.0, 1.0, 0, 0.5), prop(2.0, 3.0, 0, 0.6), prop(0.0, 1.0, 1, 0.4)];
        let out = soft_nms(&apart, 0.5, 0.001);
        let mut scores: Vec<f64> = out.iter().map(|p| p.score).collect();
        scores.sort_by(f64::total_cmp);
        assert_eq!(scores, vec![0.4, 0.5, 0.6]);
    }

    #[test]
    fn soft_nms_tie_break() {
        let props = vec![prop(5.0, 6.0, 1, 0.5), prop(2.0, 3.0, 1, 0.5), prop(2.0, 3.0, 0, 0.5)];
        let out = soft_nms(&props, 0.5, 0.001);
        let order: Vec<(f64, usize)> = out.iter().map(|p| (p.start, p.category)).collect();
        assert_eq!(order, vec![(2.0, 0), (2.0, 1), (5.0, 1)]);
    }

    /// Recomputes every decay from scratch against the kept list.
    fn soft_nms_oracle(props: &[Proposal], sigma: f64, floor: f64) -> Vec<Proposal> {
        let mut out = Vec::new();
        let mut cats: Vec<(usize, usize)> = props.iter().map(|p| (p.video, p.category)).collect();
        cats.sort();
        cats.dedup();
        for key in cats {
            let mut alive: Vec<Proposal> = props.iter().filter(|p| (p.video, p.category) == key).cloned().collect();
            let mut kept: Vec<Proposal> = Vec::new();
            loop {
                if alive.is_empty() {
                    break;
                }
                let mut bi = 0;
                for i in 1..alive.len() {
                    let (a, b) = (&alive[i], &alive[bi]);
                    let better = a.score > b.score
                        || (a.score == b.score && (a.start < b.start || (a.start == b.start && a.end < b.end)));
                    if better {
                        bi = i;
                    }
                }
                let best = alive.remove(bi);
                let mut next = Vec::new();
                for mut p in alive {
                    let o = tiou_oracle((best.start, best.end), (p.start, p.end));
                    p.score *= (-(o * o) / sigma).exp();
                    if p.score >= floor {
                        next.push(p);
                    }
                }
                alive = next;
                kept.push(best);
            }
            out.extend(kept);
        }
        out
    }

    #[test]
    fn soft_nms_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = rng.random_range(1..=5);
            let props: Vec<Proposal> = (0..n)
                .map(|_| {
                    let s = rng.random_range(0.0..8.0);
                    prop(s, s + rng.random_range(0.5..5.0), rng.random_range(0..2), rng.random_range(0.0..1.0))
                })
                .collect();
            let sigma = rng.random_range(0.05..1.0);
            let floor = rng.random_range(0.0..0.3);
            let got = soft_nms(&props, sigma, floor);
            let mut want = soft_nms_oracle(&props, sigma, floor);
            want.sort_by(rank_order);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                assert_eq!((g.start, g.end, g.category), (w.start, w.end, w.category));
                assert!((g.score - w.score).abs() < 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn small_sigma_acts_like_hard_nms(s in 0.0f64..5.0, len in 1.0f64..4.0, shift in 0.0f64..0.9) {
            let a = prop(s, s + len, 0, 0.9);
            let b = prop(s + shift * len, s + len + shift * len, 0, 0.6);
            prop_assume!(tiou((a.start, a.end), (b.start, b.end)) > 0.05);
            let out = soft_nms(&[a.clone(), b], 1e-6, 0.59);
            prop_assert_eq!(out, vec![a]);
        }
    }
}
