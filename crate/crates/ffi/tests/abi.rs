use std::ffi::{CStr, CString};
use std::ptr;

use dfalign_ffi::*;

fn last_error() -> String {
    let p = dfa_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const TINY: &str = r#"{"data": {"videos_per_split": 4, "segments_per_video": 16, "feature_dim": 8,
    "actions_per_video": [1, 2], "action_length": [2, 5]},
    "model": {"dim": 8, "heads": 2, "hidden": 16, "backbone_layers": 1, "blocks": 1},
    "fpa": {"proj_hidden": 8}, "suc": {"fsa_layers": 1}, "train": {"epochs": 1, "seeds": [4]}}"#;

fn tiny_config() -> *mut DfaConfig {
    let json = CString::new(TINY).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { dfa_config_from_json(json.as_ptr(), &mut cfg) }, DfaStatus::Ok);
    cfg
}

#[test]
fn config_errors_map_to_status_codes() {
    let json = CString::new(r#"{"bogus": 1}"#).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { dfa_config_from_json(json.as_ptr(), &mut cfg) }, DfaStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("bogus"));

    assert_eq!(unsafe { dfa_config_from_json(ptr::null(), &mut cfg) }, DfaStatus::NullPointer);
    let bad = [0xffu8, 0];
    assert_eq!(
        unsafe { dfa_config_from_json(bad.as_ptr() as *const _, &mut cfg) },
        DfaStatus::InvalidUtf8
    );
}

#[test]
fn config_hash_and_json() {
    let cfg = tiny_config();
    let mut small = [0 as std::ffi::c_char; 16];
    assert_eq!(unsafe { dfa_config_hash(cfg, small.as_mut_ptr(), small.len()) }, DfaStatus::BufferTooSmall);
    let mut buf = [0 as std::ffi::c_char; 65];
    assert_eq!(unsafe { dfa_config_hash(cfg, buf.as_mut_ptr(), buf.len()) }, DfaStatus::Ok);
    let hash = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string();
    let expected = dfalign::config::RunConfig::from_json(TINY).unwrap().hash();
    assert_eq!(hash, expected);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { dfa_config_to_json(cfg, &mut json) }, DfaStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_string();
    assert_eq!(dfalign::config::RunConfig::from_json(&text).unwrap().hash(), expected);
    unsafe {
        dfa_string_free(json);
        dfa_config_free(cfg);
    }
}

#[test]
fn train_save_load_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let mut ds = ptr::null_mut();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(dfa_dataset_generate(cfg, &mut ds), DfaStatus::Ok);
        let ds_dir = CString::new(dir.path().join("ds").to_str().unwrap()).unwrap();
        assert_eq!(dfa_dataset_save(ds, cfg, ds_dir.as_ptr()), DfaStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(dfa_dataset_load(ds_dir.as_ptr(), &mut loaded), DfaStatus::Ok);
        let mut n = 0usize;
        assert_eq!(dfa_dataset_num_videos(loaded, DfaSplit::Test, &mut n), DfaStatus::Ok);
        assert_eq!(n, 4);

        assert_eq!(dfa_model_train(cfg, loaded, 4, &mut model), DfaStatus::Ok);
        let ckpt = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(dfa_model_save(model, ckpt.as_ptr()), DfaStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(dfa_model_load(ckpt.as_ptr(), &mut back), DfaStatus::Ok);

        let mut a = ptr::null_mut();
        let mut b = ptr::null_mut();
        assert_eq!(dfa_model_evaluate(model, loaded, &mut a), DfaStatus::Ok);
        assert_eq!(dfa_model_evaluate(back, loaded, &mut b), DfaStatus::Ok);
        let parse = |p: *mut std::ffi::c_char| {
            let mut v: serde_json::Value = serde_json::from_str(CStr::from_ptr(p).to_str().unwrap()).unwrap();
            v.as_object_mut().unwrap().remove("wall_s");
            v
        };
        assert_eq!(parse(a), parse(b));
        assert!(parse(a)["avg_map"].is_number());

        let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(dfa_model_load(missing.as_ptr(), &mut none), DfaStatus::Io);
        assert!(none.is_null());

        dfa_string_free(a);
        dfa_string_free(b);
        dfa_model_free(back);
        dfa_model_free(model);
        dfa_dataset_free(loaded);
        dfa_dataset_free(ds);
        dfa_config_free(cfg);
        dfa_model_free(ptr::null_mut());
    }
}

#[test]
fn soft_nms_example() {
    let p = DfaProposal {
        video: 0,
        start: 0.0,
        end: 10.0,
        category: 1,
        score: 0.9,
    };
    let input = [p, DfaProposal { score: 0.8, ..p }];
    let mut out = [p; 2];
    let mut n = 0;
    let s = unsafe { dfa_soft_nms(input.as_ptr(), 2, 0.5, 0.001, out.as_mut_ptr(), &mut n) };
    assert_eq!(s, DfaStatus::Ok);
    assert_eq!(n, 2);
    assert_eq!(out[0].score, 0.9);
    assert!((out[1].score - 0.8 * (-2.0f64).exp()).abs() < 1e-12);
    assert_eq!(unsafe { dfa_soft_nms(input.as_ptr(), 2, 0.0, 0.001, out.as_mut_ptr(), &mut n) }, DfaStatus::Config);
    assert_eq!(unsafe { dfa_soft_nms(ptr::null(), 0, 0.5, 0.001, ptr::null_mut(), &mut n) }, DfaStatus::Ok);
    assert_eq!(n, 0);
    assert!((dfa_tiou(0.0, 10.0, 5.0, 15.0) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn mc_verify_passes_at_zero_sigma() {
    let json = CString::new(r#"{"diffusion": {"steps": 2, "sigma": 0.0}, "model": {"dim": 4, "heads": 2}}"#).unwrap();
    let mut cfg = ptr::null_mut();
    let mut pass = -1;
    unsafe {
        assert_eq!(dfa_config_from_json(json.as_ptr(), &mut cfg), DfaStatus::Ok);
        assert_eq!(dfa_mc_verify(cfg, 2000, 1, &mut pass), DfaStatus::Ok);
        assert_eq!(pass, 1);
        assert_eq!(dfa_mc_verify(cfg, 10, 1, &mut pass), DfaStatus::Config);
        dfa_config_free(cfg);
    }
}
