use std::collections::BTreeSet;

use dfalign::config::RunConfig;
use dfalign::data::generate_dataset;
use dfalign::detect::{evaluate, fit, ground_truth, load_checkpoint, mean_ap, save_checkpoint, DfAlign, Proposal};

fn tiny() -> RunConfig {
    RunConfig::from_json(
        r#"{"data": {"videos_per_split": 6, "segments_per_video": 32},
            "model": {"dim": 8, "heads": 2, "hidden": 16, "backbone_layers": 1, "blocks": 1},
            "fpa": {"proj_hidden": 8}, "suc": {"fsa_layers": 1}, "train": {"epochs": 2, "seeds": [1]}}"#,
    )
    .unwrap()
}

#[test]
fn planted_ground_truth_scores_one() {
    let cfg = RunConfig::default();
    let data = generate_dataset(&cfg.data).unwrap();
    let gt = ground_truth(&data.test);
    let props: Vec<Proposal> = gt
        .iter()
        .map(|g| Proposal {
            video: g.video,
            start: g.start,
            end: g.end,
            category: g.category,
            score: 1.0,
        })
        .collect();
    let report = mean_ap(&props, &gt, &cfg.detect.tiou_grid, |c| c.to_string());
    assert_eq!(report.avg_map, 1.0);
    assert!(report.map.values().all(|&m| m == 1.0));
}

#[test]
fn evaluation_scores_unseen_classes_only_and_is_pure() {
    let cfg = tiny();
    let data = generate_dataset(&cfg.data).unwrap();
    let model = fit(&cfg, &data, 1, |_, _| {}).unwrap();
    let a = evaluate(&model, &data, 1).unwrap();
    let b = evaluate(&model, &data, 1).unwrap();
    assert_eq!((&a.map, &a.per_class, a.avg_map), (&b.map, &b.per_class, b.avg_map));

    let unseen: BTreeSet<String> = data.split.names_of(&data.split.unseen).into_iter().collect();
    assert!(!a.per_class.is_empty());
    assert!(a.per_class.keys().all(|k| unseen.contains(k)));
    assert_eq!(a.config_hash, cfg.hash());
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let cfg = tiny();
    let data = generate_dataset(&cfg.data).unwrap();
    let model = fit(&cfg, &data, 1, |_, _| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &model, 1).unwrap();
    let (back, manifest) = load_checkpoint(&path).unwrap();
    assert_eq!(manifest.seed, 1);
    let a = evaluate(&model, &data, 1).unwrap();
    let b = evaluate(&back, &data, 1).unwrap();
    assert_eq!((&a.map, a.avg_map), (&b.map, b.avg_map));
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny();
    let data = generate_dataset(&cfg.data).unwrap();
    let mut logs = (Vec::new(), Vec::new());
    let a: DfAlign = fit(&cfg, &data, 1, |e, r| logs.0.push((e, *r))).unwrap();
    let b: DfAlign = fit(&cfg, &data, 1, |e, r| logs.1.push((e, *r))).unwrap();
    assert_eq!(logs.0, logs.1);
    for (p, q) in a.store.iter().zip(b.store.iter()) {
        assert_eq!(p.value, q.value, "{}", p.name);
    }
}
