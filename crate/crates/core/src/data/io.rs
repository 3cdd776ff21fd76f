//! `DFAFEAT1` feature files, JSONL annotation files and the dataset directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Annotation, CategorySplit, Dataset, SyntheticConfig, VideoSample};
use crate::error::{Error, Result};
use crate::numerics::DenseArray;

const MAGIC: &[u8; 8] = b"DFAFEAT1";
const HEADER_LEN: usize = 8 + 3 * 4;

fn parse_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn save_features(path: &Path, feats: &DenseArray) -> Result<()> {
    let m = feats.as_matrix();
    let (n, d) = (m.rows(), m.cols());
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Shape(format!("dimension {v} exceeds u32")))
    };
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&dim(n)?.to_le_bytes());
    buf.extend_from_slice(&dim(d)?.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: &Path) -> Result<DenseArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(path, &bytes)
}

fn decode_features(path: &Path, bytes: &[u8]) -> Result<DenseArray> {
    if bytes.len() < 8 {
        return Err(parse_err(path, bytes.len(), "truncated magic"));
    }
    if &bytes[..8] != MAGIC {
        return Err(parse_err(path, 0, "bad magic, expected DFAFEAT1"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(parse_err(path, bytes.len(), "truncated header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (n, d, reserved) = (word(8), word(12), word(16));
    if reserved != 0 {
        return Err(parse_err(path, 16, format!("reserved field is {reserved}, expected 0")));
    }
    let count = n
        .checked_mul(d)
        .ok_or_else(|| parse_err(path, 8, "N·D overflows"))?;
    let expect = count
        .checked_mul(8)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| parse_err(path, 8, "payload size overflows"))?;
    if bytes.len() < expect {
        // first byte of the first incomplete value
        let whole = (bytes.len() - HEADER_LEN) / 8;
        return Err(parse_err(
            path,
            HEADER_LEN + whole * 8,
            format!("truncated payload: {n}×{d} needs {expect} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > expect {
        return Err(parse_err(path, expect, "trailing bytes after payload"));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    DenseArray::new(vec![n, d], data)
}

/// One line of an annotation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub video: String,
    pub start: f64,
    pub end: f64,
    pub category: usize,
}

impl AnnotationRecord {
    pub fn annotation(&self) -> Annotation {
        Annotation {
            start: self.start,
            end: self.end,
            category: self.category,
        }
    }
}

pub fn save_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(path, &text)
}

fn parse_annotations(path: &Path, text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for (lineno, line) in text.split_inclusive('\n').enumerate() {
        let start = offset;
        offset += line.len();
        let body = line.trim_end_matches(['\n', '\r']);
        if body.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(body).map_err(|e| {
            // serde_json columns are 1-based byte columns within the line
            let col = e.column().saturating_sub(1).min(body.len());
            parse_err(path, start + col, e.to_string())
        })?;
        if !(rec.start.is_finite() && rec.end.is_finite()) {
            return Err(Error::Validation(format!(
                "{} line {}: video {} has a non-finite boundary",
                path.display(),
                lineno + 1,
                rec.video
            )));
        }
        if rec.end < rec.start {
            return Err(Error::Validation(format!(
                "{} line {}: video {} has end {} < start {}",
                path.display(),
                lineno + 1,
                rec.video,
                rec.end,
                rec.start
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// `dataset.json` in a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: SyntheticConfig,
    pub config_hash: String,
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    pub category_names: Vec<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("features").join(format!("{id}.feat"))
}

fn records(videos: &[VideoSample]) -> Vec<AnnotationRecord> {
    videos
        .iter()
        .flat_map(|v| {
            v.annotations.iter().map(|a| AnnotationRecord {
                video: v.id.clone(),
                start: a.start,
                end: a.end,
                category: a.category,
            })
        })
        .collect()
}

pub fn save_dataset(dir: &Path, ds: &Dataset, cfg: &SyntheticConfig, config_hash: &str) -> Result<()> {
    fs::create_dir_all(dir.join("features")).map_err(|e| Error::io(dir, e))?;
    let manifest = DatasetManifest {
        config: cfg.clone(),
        config_hash: config_hash.to_string(),
        seen: ds.split.seen.clone(),
        unseen: ds.split.unseen.clone(),
        category_names: ds.split.category_names.clone(),
        train: ds.train.iter().map(|v| v.id.clone()).collect(),
        test: ds.test.iter().map(|v| v.id.clone()).collect(),
    };
    let path = dir.join("dataset.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    save_features(&dir.join("prototypes.feat"), &ds.split.prototypes)?;
    for v in ds.train.iter().chain(&ds.test) {
        save_features(&feature_path(dir, &v.id), &v.features)?;
    }
    save_annotations(&dir.join("train.jsonl"), &records(&ds.train))?;
    save_annotations(&dir.join("test.jsonl"), &records(&ds.test))?;
    Ok(())
}

fn load_split(
    dir: &Path,
    file: &str,
    ids: &[String],
    labels: &[usize],
    n_total: usize,
) -> Result<Vec<VideoSample>> {
    let path = dir.join(file);
    let mut by_video: BTreeMap<String, Vec<Annotation>> = BTreeMap::new();
    for r in load_annotations(&path)? {
        if !labels.contains(&r.category) {
            return Err(Error::Validation(format!(
                "{}: video {} uses category {} outside its split",
                path.display(),
                r.video,
                r.category
            )));
        }
        by_video.entry(r.video.clone()).or_default().push(r.annotation());
    }
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let features = load_features(&feature_path(dir, id))?;
        let annotations = by_video.remove(id).unwrap_or_default();
        let n = features.rows() as f64;
        if features.rows() == 0 {
            return Err(Error::Validation(format!("video {id} has no segments")));
        }
        if let Some(a) = annotations.iter().find(|a| a.start < 0.0 || a.end > n || a.start >= a.end) {
            return Err(Error::Validation(format!(
                "video {id}: annotation [{}, {}] outside 0..{n}",
                a.start, a.end
            )));
        }
        if let Some(a) = annotations.iter().find(|a| a.category >= n_total) {
            return Err(Error::Validation(format!("video {id}: unknown category {}", a.category)));
        }
        out.push(VideoSample {
            id: id.clone(),
            features,
            annotations,
        });
    }
    if let Some(extra) = by_video.keys().next() {
        return Err(Error::Validation(format!(
            "{}: annotations for unknown video {extra}",
            path.display()
        )));
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let path = dir.join("dataset.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| {
        let offset = text
            .split_inclusive('\n')
            .take(e.line().saturating_sub(1))
            .map(str::len)
            .sum::<usize>()
            + e.column().saturating_sub(1);
        parse_err(&path, offset, e.to_string())
    })?;
    let prototypes = load_features(&dir.join("prototypes.feat"))?;
    let split = CategorySplit {
        seen: manifest.seen.clone(),
        unseen: manifest.unseen.clone(),
        prototypes,
        category_names: manifest.category_names.clone(),
    };
    split.check_disjoint()?;
    if split.prototypes.rows() != split.num_categories() {
        return Err(Error::Validation(format!(
            "{} prototypes for {} categories",
            split.prototypes.rows(),
            split.num_categories()
        )));
    }
    let c = split.num_categories();
    let train = load_split(dir, "train.jsonl", &manifest.train, &split.seen, c)?;
    let test = load_split(dir, "test.jsonl", &manifest.test, &split.unseen, c)?;
    Ok((Dataset { train, test, split }, manifest))
}
