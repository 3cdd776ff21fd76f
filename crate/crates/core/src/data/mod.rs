//! Videos, annotations, category splits and the foreground/video pooling
//! that feeds the diffusion targets.

mod io;
mod synth;

pub use io::{
    load_annotations, load_dataset, load_features, save_annotations, save_dataset, save_features,
    AnnotationRecord, DatasetManifest,
};
pub use synth::{generate_dataset, Dataset, SyntheticConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseArray;

/// One labelled action instance, in segment-index units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub start: f64,
    pub end: f64,
    pub category: usize,
}

impl Annotation {
    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub id: String,
    /// `N × D_in` segment features.
    pub features: DenseArray,
    pub annotations: Vec<Annotation>,
}

impl VideoSample {
    pub fn num_segments(&self) -> usize {
        self.features.rows()
    }

    /// Segment `i` is foreground when its centre `i + 0.5` lies inside any
    /// annotation.
    pub fn foreground_mask(&self) -> Vec<bool> {
        foreground_mask(&self.annotations, self.num_segments())
    }

    /// Annotation covering segment `i`'s centre, first match wins.
    pub fn covering(&self, i: usize) -> Option<&Annotation> {
        let c = i as f64 + 0.5;
        self.annotations.iter().find(|a| a.contains(c))
    }
}

pub fn foreground_mask(annotations: &[Annotation], n: usize) -> Vec<bool> {
    (0..n)
        .map(|i| {
            let c = i as f64 + 0.5;
            annotations.iter().any(|a| a.contains(c))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategorySplit {
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    /// One unit-norm row per category; doubles as the category's text embedding.
    pub prototypes: DenseArray,
    pub category_names: Vec<String>,
}

impl CategorySplit {
    pub fn num_categories(&self) -> usize {
        self.category_names.len()
    }

    pub fn check_disjoint(&self) -> Result<()> {
        if let Some(c) = self.seen.iter().find(|c| self.unseen.contains(c)) {
            return Err(Error::Validation(format!("category {c} is both seen and unseen")));
        }
        Ok(())
    }

    pub fn names_of(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.category_names[i].clone()).collect()
    }
}

/// `h_v`: mean of the segment features.
pub fn video_repr(feats: &DenseArray) -> Result<DenseArray> {
    if feats.rows() == 0 || feats.is_empty() {
        return Err(Error::Precondition("video has no segments".into()));
    }
    feats.mean_rows()
}

/// `h_f`: mean of the foreground segment features, all classes pooled.
pub fn foreground_target(v: &VideoSample, feats: &DenseArray) -> Result<DenseArray> {
    let idx: Vec<usize> = v
        .foreground_mask()
        .iter()
        .enumerate()
        .filter_map(|(i, &fg)| fg.then_some(i))
        .collect();
    if idx.is_empty() {
        return Err(Error::Precondition(format!("video {} has no foreground segments", v.id)));
    }
    feats.select_rows(&idx).mean_rows()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(rows: Vec<Vec<f64>>, anns: Vec<Annotation>) -> VideoSample {
        VideoSample {
            id: "v".into(),
            features: DenseArray::from_rows(&rows).unwrap(),
            annotations: anns,
        }
    }

    #[test]
    fn constant_sequence_pools_to_itself() {
        let v = sample(vec![vec![1.5, -2.0]; 5], vec![]);
        assert_eq!(video_repr(&v.features).unwrap().data(), &[1.5, -2.0]);
        let two = DenseArray::from_rows(&[vec![1.0, 3.0], vec![3.0, -1.0]]).unwrap();
        assert_eq!(video_repr(&two).unwrap().data(), &[2.0, 1.0]);
    }

    #[test]
    fn mean_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = DenseArray::randn(&[16, 4], 1.0, &mut rng);
        let mut acc = [0.0; 4];
        for i in 0..16 {
            for j in 0..4 {
                acc[j] += f.get(i, j);
            }
        }
        let h = video_repr(&f).unwrap();
        for j in 0..4 {
            assert!((h.data()[j] - acc[j] / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_video_is_rejected() {
        assert!(video_repr(&DenseArray::zeros(&[0, 3])).is_err());
    }

    #[test]
    fn foreground_cases() {
        let all = sample(
            vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            vec![Annotation { start: 0.0, end: 2.0, category: 0 }],
        );
        assert_eq!(
            foreground_target(&all, &all.features).unwrap(),
            video_repr(&all.features).unwrap()
        );

        let single = sample(
            vec![vec![0.0, 0.0], vec![7.0, -1.0], vec![0.0, 0.0]],
            vec![Annotation { start: 1.0, end: 2.0, category: 3 }],
        );
        assert_eq!(foreground_target(&single, &single.features).unwrap().data(), &[7.0, -1.0]);

        // half foreground (a), half background (b): h_f = a, h_v = (a+b)/2
        let a = [1.0, 0.0];
        let b = [0.0, 3.0];
        let half = sample(
            vec![a.to_vec(), a.to_vec(), b.to_vec(), b.to_vec()],
            vec![Annotation { start: 0.0, end: 2.0, category: 0 }],
        );
        let hf = foreground_target(&half, &half.features).unwrap();
        let hv = video_repr(&half.features).unwrap();
        assert_eq!(hf.data(), &a);
        assert_eq!(hv.data(), &[0.5, 1.5]);
        let e = hv.sub(&hf).unwrap();
        assert_eq!(e.data(), &[(b[0] - a[0]) / 2.0, (b[1] - a[1]) / 2.0]);

        let none = sample(vec![vec![1.0]], vec![]);
        assert!(matches!(
            foreground_target(&none, &none.features),
            Err(Error::Precondition(_))
        ));
    }
}
