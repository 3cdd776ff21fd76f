use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::RunConfig;
use crate::data::{generate_dataset, Dataset};
use crate::detect::{evaluate, fit, MetricsReport};
use crate::error::{Error, Result};

/// Dotted config key → values to sweep. Cells are the cartesian product in
/// key order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Grid(pub BTreeMap<String, Vec<Value>>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub overrides: BTreeMap<String, Value>,
    pub config_hash: String,
    pub runs: Vec<MetricsReport>,
    /// Mean avg mAP over seeds.
    pub mean: f64,
    /// Sample standard deviation of avg mAP over seeds (0 for one seed).
    pub std: f64,
    /// Mean evaluation wall-clock seconds over seeds.
    pub wall_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_hash: String,
    pub grid: Grid,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

/// Every combination of one value per axis; one empty cell for an empty grid.
pub fn cartesian(grid: &Grid) -> Vec<BTreeMap<String, Value>> {
    let mut cells = vec![BTreeMap::new()];
    for (key, values) in &grid.0 {
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                values.iter().map(move |v| {
                    let mut c = cell.clone();
                    c.insert(key.clone(), v.clone());
                    c
                })
            })
            .collect();
    }
    cells
}

fn set_path(root: &mut Value, key: &str, v: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("grid key {key}: {part} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), v);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Err(Error::Config("empty grid key".into()))
}

/// `base` with `overrides` applied and revalidated.
pub fn apply_overrides(base: &RunConfig, overrides: &BTreeMap<String, Value>) -> Result<RunConfig> {
    let mut v = serde_json::to_value(base).expect("config serialises");
    for (k, val) in overrides {
        set_path(&mut v, k, val.clone())?;
    }
    RunConfig::from_json(&v.to_string())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains and evaluates every (cell, seed) pair concurrently. Datasets are
/// generated once per distinct `data` section.
pub fn run_ablation(base: &RunConfig, grid: &Grid) -> Result<AblationReport> {
    if grid.0.values().any(|v| v.is_empty()) {
        return Err(Error::Config("every grid axis needs at least one value".into()));
    }
    let cells = cartesian(grid);
    let configs: Vec<RunConfig> = cells.iter().map(|c| apply_overrides(base, c)).collect::<Result<_>>()?;
    let mut datasets: Vec<(String, Dataset)> = Vec::new();
    let mut data_index = Vec::with_capacity(configs.len());
    for cfg in &configs {
        let key = serde_json::to_string(&cfg.data).expect("data config serialises");
        let i = match datasets.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                datasets.push((key, generate_dataset(&cfg.data)?));
                datasets.len() - 1
            }
        };
        data_index.push(i);
    }
    let jobs: Vec<(usize, u64)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, cfg)| cfg.train.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<MetricsReport> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let data = &datasets[data_index[i]].1;
            let model = fit(&configs[i], data, seed, |_, _| {})?;
            evaluate(&model, data, seed)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(cells.len());
    let mut it = results.into_iter();
    for (cell, cfg) in cells.into_iter().zip(&configs) {
        let runs: Vec<MetricsReport> = it.by_ref().take(cfg.train.seeds.len()).collect();
        let scores: Vec<f64> = runs.iter().map(|r| r.avg_map).collect();
        let (mean, std) = mean_std(&scores);
        let wall_s = runs.iter().map(|r| r.wall_s).sum::<f64>() / runs.len() as f64;
        rows.push(AblationRow {
            overrides: cell,
            config_hash: cfg.hash(),
            runs,
            mean,
            std,
            wall_s,
        });
    }
    Ok(AblationReport {
        config_hash: base.hash(),
        grid: grid.clone(),
        seeds: base.train.seeds.clone(),
        rows,
    })
}

impl AblationReport {
    pub fn row(&self, key: &str, value: &Value) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.overrides.get(key) == Some(value))
    }

    /// Markdown table: one column per axis, then avg mAP as mean ± std and
    /// mean evaluation time.
    pub fn table(&self) -> String {
        let axes: Vec<&String> = self.grid.0.keys().collect();
        let mut out = String::new();
        let mut header: Vec<String> = axes.iter().map(|a| a.to_string()).collect();
        header.extend(["avg mAP".to_string(), "eval s".to_string()]);
        out.push_str(&format!("| {} |\n", header.join(" | ")));
        out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
        for r in &self.rows {
            let mut cols: Vec<String> = axes
                .iter()
                .map(|a| match &r.overrides[*a] {
                    Value::String(s) => s.clone(),
                    v => v.to_string(),
                })
                .collect();
            cols.push(format!("{:.4} ± {:.4}", r.mean, r.std));
            cols.push(format!("{:.3}", r.wall_s));
            out.push_str(&format!("| {} |\n", cols.join(" | ")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn cartesian_product_in_key_order() {
        let grid: Grid = serde_json::from_value(json!({"b": [1, 2], "a": ["x", "y", "z"]})).unwrap();
        let cells = cartesian(&grid);
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0]["a"], json!("x"));
        assert_eq!(cells[0]["b"], json!(1));
        assert_eq!(cells[1]["b"], json!(2));
        assert_eq!(cartesian(&Grid::default()).len(), 1);
    }

    #[test]
    fn overrides_are_validated() {
        let base = RunConfig::default();
        let ok = apply_overrides(&base, &BTreeMap::from([("suc.condition_type".into(), json!("none"))])).unwrap();
        assert_eq!(ok.suc.condition_type, crate::suc::ConditionType::None);
        for bad in [("suc.nope", json!(1)), ("model.dim", json!("wide")), ("train.lr.x", json!(1))] {
            let e = apply_overrides(&base, &BTreeMap::from([(bad.0.into(), bad.1)])).unwrap_err();
            assert!(e.is_config(), "{e}");
        }
    }

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
