//! Temporal detection: backbone, heads, proposals, Soft-NMS and tIoU mAP.

mod metrics;
mod proposals;

pub use metrics::{average_precision, mean_ap, threshold_key, GtSegment, MapReport, DEFAULT_TIOU_GRID};
pub use proposals::{decode_proposals, rank_order, soft_nms, tiou, Proposal};

mod backbone;
mod checkpoint;
mod model;
mod train;

pub use backbone::{backbone_forward, TemporalBackbone};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry};
pub use model::{DfAlign, LabelSet, Prediction, VideoOutput};
pub use train::{
    detect_all, evaluate, fit, ground_truth, steps_per_epoch, train_batch, train_epoch, MetricsReport,
};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    pub sigma_nms: f64,
    pub score_floor: f64,
    pub fg_threshold: f64,
    pub tiou_grid: Vec<f64>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            sigma_nms: 0.5,
            score_floor: 0.001,
            fg_threshold: 0.5,
            tiou_grid: DEFAULT_TIOU_GRID.to_vec(),
        }
    }
}
