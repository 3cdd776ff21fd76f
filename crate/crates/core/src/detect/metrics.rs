use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::proposals::{rank_order, tiou, Proposal};

/// A ground-truth action instance tagged with its video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtSegment {
    pub video: usize,
    pub start: f64,
    pub end: f64,
    pub category: usize,
}

pub const DEFAULT_TIOU_GRID: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];

/// All-point interpolated AP of one class. Proposals are matched greedily in
/// score order to the best-overlapping unmatched ground truth of the same
/// video with `tIoU ≥ iou_thresh`.
pub fn average_precision(props: &[Proposal], gt: &[GtSegment], iou_thresh: f64) -> f64 {
    if gt.is_empty() {
        return if props.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<&Proposal> = props.iter().collect();
    order.sort_by(|a, b| rank_order(a, b));
    let mut used = vec![false; gt.len()];
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(order.len());
    for (rank, p) in order.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt.iter().enumerate() {
            if used[j] || g.video != p.video {
                continue;
            }
            let o = tiou((p.start, p.end), (g.start, g.end));
            if o >= iou_thresh && best.is_none_or(|(_, bo)| o > bo) {
                best = Some((j, o));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            tp += 1;
        }
        curve.push((tp as f64 / gt.len() as f64, tp as f64 / (rank + 1) as f64));
    }
    // precision envelope from the right, then area over recall steps
    let mut ap = 0.0;
    let mut env = 0.0f64;
    let mut prev_recall = curve.last().map(|c| c.0).unwrap_or(0.0);
    for &(r, p) in curve.iter().rev() {
        if r < prev_recall {
            ap += (prev_recall - r) * env;
            prev_recall = r;
        }
        env = env.max(p);
    }
    ap += prev_recall * env;
    ap
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    /// Threshold (formatted with one decimal) to mAP.
    pub map: BTreeMap<String, f64>,
    pub avg_map: f64,
    /// Class name to AP at each grid threshold.
    pub per_class: BTreeMap<String, Vec<f64>>,
}

pub fn threshold_key(t: f64) -> String {
    let s = format!("{t:.2}");
    s.trim_end_matches('0').to_string()
}

/// mAP over the classes present in `gt` at each threshold of `grid`, plus
/// the grid average.
pub fn mean_ap(props: &[Proposal], gt: &[GtSegment], grid: &[f64], class_name: impl Fn(usize) -> String) -> MapReport {
    let classes: BTreeSet<usize> = gt.iter().map(|g| g.category).collect();
    let mut per_class = BTreeMap::new();
    let mut map = BTreeMap::new();
    for &c in &classes {
        let p: Vec<Proposal> = props.iter().filter(|p| p.category == c).cloned().collect();
        let g: Vec<GtSegment> = gt.iter().filter(|g| g.category == c).cloned().collect();
        per_class.insert(class_name(c), grid.iter().map(|&t| average_precision(&p, &g, t)).collect::<Vec<_>>());
    }
    let mut total = 0.0;
    for (k, &t) in grid.iter().enumerate() {
        let m = if classes.is_empty() {
            0.0
        } else {
            per_class.values().map(|v: &Vec<f64>| v[k]).sum::<f64>() / classes.len() as f64
        };
        total += m;
        map.insert(threshold_key(t), m);
    }
    MapReport {
        map,
        avg_map: if grid.is_empty() { 0.0 } else { total / grid.len() as f64 },
        per_class,
    }
}
