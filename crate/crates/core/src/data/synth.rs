use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{foreground_mask, Annotation, CategorySplit, VideoSample};
use crate::error::{Error, Result};
use crate::numerics::DenseArray;

/// Knobs of the synthetic open-vocabulary benchmark.
///
/// Foreground segments are `prototype[c] + fg_noise·ε`. Background segments
/// are `scene + bg_noise·ε`, where the scene is one unit direction per video
/// (scaled by `scene_scale`), drawn from a bank of `num_scenes` directions
/// shared by both splits, or fresh per video when `num_scenes == 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_categories: usize,
    pub videos_per_split: usize,
    pub segments_per_video: usize,
    pub feature_dim: usize,
    pub actions_per_video: [usize; 2],
    pub action_length: [usize; 2],
    pub fg_noise: f64,
    pub bg_noise: f64,
    pub split_ratio: f64,
    pub seed: u64,
    pub num_scenes: usize,
    pub scene_scale: f64,
    /// Weight of a direction common to every category prototype.
    pub shared_weight: f64,
    /// Prototypes are drawn from a random subspace of this rank (0 = the
    /// full feature space).
    pub prototype_rank: usize,
    pub classes_per_video: usize,
    pub allow_overlap: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_categories: 20,
            videos_per_split: 120,
            segments_per_video: 64,
            feature_dim: 32,
            actions_per_video: [1, 3],
            action_length: [4, 12],
            fg_noise: 0.3,
            bg_noise: 0.3,
            split_ratio: 0.5,
            seed: 0,
            num_scenes: 8,
            scene_scale: 1.0,
            shared_weight: 0.0,
            prototype_rank: 0,
            classes_per_video: 1,
            allow_overlap: false,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_categories < 2 {
            return bad("data.num_categories must be ≥ 2".into());
        }
        if self.segments_per_video == 0 || self.feature_dim == 0 || self.videos_per_split == 0 {
            return bad("data sizes must be positive".into());
        }
        let [amin, amax] = self.actions_per_video;
        let [lmin, lmax] = self.action_length;
        if amin == 0 || amin > amax {
            return bad(format!("data.actions_per_video must be 1 ≤ lo ≤ hi, got {amin}..{amax}"));
        }
        if lmin == 0 || lmin > lmax {
            return bad(format!("data.action_length must be 1 ≤ lo ≤ hi, got {lmin}..{lmax}"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("data.split_ratio must lie in (0,1), got {}", self.split_ratio));
        }
        for (name, v) in [
            ("fg_noise", self.fg_noise),
            ("bg_noise", self.bg_noise),
            ("scene_scale", self.scene_scale),
            ("shared_weight", self.shared_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("data.{name} must be finite and ≥ 0, got {v}"));
            }
        }
        if self.prototype_rank > self.feature_dim {
            return bad(format!(
                "data.prototype_rank {} exceeds data.feature_dim {}",
                self.prototype_rank, self.feature_dim
            ));
        }
        let seen = self.num_seen();
        if seen == 0 || seen == self.num_categories {
            return bad("split ratio leaves one side of the split empty".into());
        }
        let smallest = seen.min(self.num_categories - seen);
        if self.classes_per_video == 0 || self.classes_per_video > smallest {
            return bad(format!(
                "data.classes_per_video must lie in 1..={smallest}, got {}",
                self.classes_per_video
            ));
        }
        Ok(())
    }

    pub fn num_seen(&self) -> usize {
        (self.split_ratio * self.num_categories as f64).round() as usize
    }
}

/// Generated benchmark: two video lists plus the split they were drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<VideoSample>,
    pub test: Vec<VideoSample>,
    pub split: CategorySplit,
}

fn unit<R: Rng>(dim: usize, rng: &mut R) -> DenseArray {
    loop {
        let v = DenseArray::randn(&[1, dim], 1.0, rng);
        if v.norm() > 1e-8 {
            return v.normalized();
        }
    }
}

fn place(cfg: &SyntheticConfig, lengths: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let n = cfg.segments_per_video;
    if cfg.allow_overlap {
        return Ok(lengths.iter().map(|&l| rng.random_range(0..=n - l)).collect());
    }
    let total: usize = lengths.iter().sum();
    if total > n {
        return Err(Error::Generation(format!(
            "{} actions of total length {total} do not fit in {n} segments",
            lengths.len()
        )));
    }
    // split the free segments into len+1 gaps
    let free = n - total;
    let mut cuts: Vec<usize> = (0..lengths.len()).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut starts = Vec::with_capacity(lengths.len());
    let mut pos = 0;
    let mut prev_cut = 0;
    for (k, &l) in lengths.iter().enumerate() {
        pos += cuts[k] - prev_cut;
        prev_cut = cuts[k];
        starts.push(pos);
        pos += l;
    }
    Ok(starts)
}

fn make_video(
    cfg: &SyntheticConfig,
    id: String,
    classes: &[usize],
    prototypes: &DenseArray,
    scenes: &[DenseArray],
    rng: &mut ChaCha8Rng,
) -> Result<VideoSample> {
    let n = cfg.segments_per_video;
    let d = cfg.feature_dim;
    let m = rng.random_range(cfg.actions_per_video[0]..=cfg.actions_per_video[1]);
    let lengths: Vec<usize> = (0..m)
        .map(|_| rng.random_range(cfg.action_length[0]..=cfg.action_length[1].min(n)))
        .collect();
    let starts = place(cfg, &lengths, rng)?;
    let mut pool = classes.to_vec();
    pool.shuffle(rng);
    pool.truncate(cfg.classes_per_video);
    let annotations: Vec<Annotation> = starts
        .iter()
        .zip(&lengths)
        .map(|(&s, &l)| Annotation {
            start: s as f64,
            end: (s + l) as f64,
            category: pool[rng.random_range(0..pool.len())],
        })
        .collect();

    let scene = if scenes.is_empty() {
        unit(d, rng).scale(cfg.scene_scale)
    } else {
        scenes[rng.random_range(0..scenes.len())].clone()
    };
    let mask = foreground_mask(&annotations, n);
    let mut features = DenseArray::zeros(&[n, d]);
    for (i, &fg) in mask.iter().enumerate() {
        let (base, noise) = if fg {
            let c = annotations
                .iter()
                .find(|a| a.contains(i as f64 + 0.5))
                .map(|a| a.category)
                .expect("foreground segment has an annotation");
            (prototypes.row_array(c), cfg.fg_noise)
        } else {
            (scene.clone(), cfg.bg_noise)
        };
        let eps = DenseArray::randn(&[1, d], 1.0, rng);
        let row = features.row_mut(i);
        for j in 0..d {
            row[j] = base.data()[j] + noise * eps.data()[j];
        }
    }
    Ok(VideoSample {
        id,
        features,
        annotations,
    })
}

/// Deterministic in `cfg` (seed included).
pub fn generate_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let [_, amax] = cfg.actions_per_video;
    let [lmin, _] = cfg.action_length;
    if !cfg.allow_overlap && amax * lmin > cfg.segments_per_video {
        return Err(Error::Generation(format!(
            "{amax} actions of length ≥ {lmin} cannot be packed into {} segments",
            cfg.segments_per_video
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.num_categories;
    let d = cfg.feature_dim;

    let shared = unit(d, &mut rng);
    let basis: Vec<DenseArray> = (0..cfg.prototype_rank).map(|_| unit(d, &mut rng)).collect();
    let mut proto_rows = Vec::with_capacity(c);
    for _ in 0..c {
        let u = if basis.is_empty() {
            unit(d, &mut rng)
        } else {
            loop {
                let mut u = DenseArray::zeros(&[1, d]);
                for b in &basis {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    u.add_assign_scaled(b, z);
                }
                if u.norm() > 1e-8 {
                    break u.normalized();
                }
            }
        };
        let mut p = u.clone();
        p.add_assign_scaled(&shared, cfg.shared_weight);
        proto_rows.push(p.normalized().into_data());
    }
    let prototypes = DenseArray::from_rows(&proto_rows)?;

    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(&mut rng);
    let n_seen = cfg.num_seen();
    let mut seen = order[..n_seen].to_vec();
    let mut unseen = order[n_seen..].to_vec();
    seen.sort_unstable();
    unseen.sort_unstable();

    let scenes: Vec<DenseArray> = (0..cfg.num_scenes)
        .map(|_| unit(d, &mut rng).scale(cfg.scene_scale))
        .collect();

    let split = CategorySplit {
        seen: seen.clone(),
        unseen: unseen.clone(),
        prototypes: prototypes.clone(),
        category_names: (0..c).map(|i| format!("action_{i:02}")).collect(),
    };
    split.check_disjoint()?;

    let base_seed: u64 = rng.random();
    let make_split = |prefix: &str, classes: &[usize], salt: u64| -> Result<Vec<VideoSample>> {
        (0..cfg.videos_per_split)
            .map(|k| {
                let mut vrng = ChaCha8Rng::seed_from_u64(base_seed ^ (salt << 32) ^ k as u64);
                make_video(
                    cfg,
                    format!("{prefix}_{k:04}"),
                    classes,
                    &prototypes,
                    &scenes,
                    &mut vrng,
                )
            })
            .collect()
    };
    let train = make_split("train", &seen, 1)?;
    let test = make_split("test", &unseen, 2)?;
    Ok(Dataset { train, test, split })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            videos_per_split: 6,
            segments_per_video: 32,
            feature_dim: 8,
            ..Default::default()
        }
    }

    #[test]
    fn half_split_is_disjoint() {
        let ds = generate_dataset(&small()).unwrap();
        assert_eq!(ds.split.seen.len(), 10);
        assert_eq!(ds.split.unseen.len(), 10);
        for c in &ds.split.seen {
            assert!(!ds.split.unseen.contains(c));
        }
        for v in &ds.train {
            assert!(v.annotations.iter().all(|a| ds.split.seen.contains(&a.category)));
        }
        for v in &ds.test {
            assert!(v.annotations.iter().all(|a| ds.split.unseen.contains(&a.category)));
        }
    }

    #[test]
    fn three_quarter_split() {
        let cfg = SyntheticConfig {
            split_ratio: 0.75,
            ..small()
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!((ds.split.seen.len(), ds.split.unseen.len()), (15, 5));
    }

    #[test]
    fn deterministic() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&SyntheticConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train[0].features, c.train[0].features);
    }

    #[test]
    fn zero_noise_foreground_is_prototype() {
        let cfg = SyntheticConfig {
            fg_noise: 0.0,
            ..small()
        };
        let ds = generate_dataset(&cfg).unwrap();
        for v in ds.train.iter().chain(&ds.test) {
            for (i, fg) in v.foreground_mask().into_iter().enumerate() {
                if fg {
                    let c = v.covering(i).unwrap().category;
                    assert_eq!(v.features.row(i), ds.split.prototypes.row(c));
                }
            }
        }
    }

    #[test]
    fn annotations_valid_and_non_overlapping() {
        let ds = generate_dataset(&small()).unwrap();
        for v in ds.train.iter().chain(&ds.test) {
            assert!(!v.annotations.is_empty());
            let mut spans: Vec<(f64, f64)> = v.annotations.iter().map(|a| (a.start, a.end)).collect();
            spans.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in spans.windows(2) {
                assert!(w[0].1 <= w[1].0);
            }
            for a in &v.annotations {
                assert!(0.0 <= a.start && a.start < a.end && a.end <= 32.0);
            }
        }
        for i in 0..ds.split.prototypes.rows() {
            let n: f64 = ds.split.prototypes.row(i).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_packing() {
        let cfg = SyntheticConfig {
            segments_per_video: 10,
            actions_per_video: [3, 3],
            action_length: [4, 4],
            ..small()
        };
        assert!(matches!(generate_dataset(&cfg), Err(Error::Generation(_))));
    }

    #[test]
    fn bad_ratio_is_config_error() {
        let cfg = SyntheticConfig {
            split_ratio: 1.0,
            ..small()
        };
        assert!(matches!(generate_dataset(&cfg), Err(Error::Config(_))));
    }
}
