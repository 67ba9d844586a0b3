use std::ffi::{CStr, CString};
use std::ptr;

use mofusion_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mof_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn config(scenario: u8, task: u8) -> *mut MofConfig {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { mof_config_new(scenario, task, &mut cfg) }, MofStatus::Ok);
    assert!(!cfg.is_null());
    cfg
}

fn simulate(cfg: *const MofConfig, seed: u64, index: u64) -> *mut MofRun {
    let mut run = ptr::null_mut();
    assert_eq!(
        unsafe { mof_run_simulate(cfg, seed, index, &mut run) },
        MofStatus::Ok,
        "{}",
        last_error()
    );
    run
}

fn truth(run: *const MofRun) -> Vec<[f64; 4]> {
    let mut n = 0usize;
    assert_eq!(unsafe { mof_run_truth_count(run, &mut n) }, MofStatus::Ok);
    (0..n)
        .map(|i| {
            let mut s = [0.0; 4];
            assert_eq!(unsafe { mof_run_truth(run, i, s.as_mut_ptr()) }, MofStatus::Ok);
            s
        })
        .collect()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(mof_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn invalid_task_reports_config_error() {
    let mut cfg = ptr::null_mut();
    let status = unsafe { mof_config_new(1, 3, &mut cfg) };
    assert_ne!(status, MofStatus::Ok);
    assert!(cfg.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_arguments_are_rejected() {
    assert_eq!(unsafe { mof_config_new(1, 1, ptr::null_mut()) }, MofStatus::NullPointer);
    let mut run = ptr::null_mut();
    assert_eq!(
        unsafe { mof_run_simulate(ptr::null(), 0, 0, &mut run) },
        MofStatus::NullPointer
    );
    assert!(last_error().contains("null"));
    let mut n = 0usize;
    assert_eq!(unsafe { mof_fusion_len(ptr::null(), &mut n) }, MofStatus::NullPointer);
    unsafe {
        mof_config_free(ptr::null_mut());
        mof_run_free(ptr::null_mut());
        mof_network_free(ptr::null_mut());
        mof_fusion_free(ptr::null_mut());
    }
}

#[test]
fn missing_files_map_to_io_status() {
    let path = CString::new("/nonexistent/model.ckpt").unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { mof_network_load(path.as_ptr(), &mut net) }, MofStatus::Io);
    let path = CString::new("/nonexistent/config.toml").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { mof_config_load(path.as_ptr(), &mut cfg) }, MofStatus::Io);
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(&p, "scenario = 2\ntask = 2\n").unwrap();
    let path = CString::new(p.to_str().unwrap()).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { mof_config_load(path.as_ptr(), &mut cfg) },
        MofStatus::Ok,
        "{}",
        last_error()
    );
    let run = simulate(cfg, 5, 0);
    unsafe {
        mof_run_free(run);
        mof_config_free(cfg);
    }
}

#[test]
fn simulation_is_deterministic_per_seed_and_index() {
    let cfg = config(1, 1);
    let (a, b, c) = (simulate(cfg, 9, 4), simulate(cfg, 9, 4), simulate(cfg, 9, 5));
    assert_eq!(truth(a), truth(b));
    let mut count = 0usize;
    assert_eq!(unsafe { mof_run_truth_count(c, &mut count) }, MofStatus::Ok);
    let mut s = [0.0; 4];
    assert_eq!(unsafe { mof_run_truth(a, 1000, s.as_mut_ptr()) }, MofStatus::OutOfRange);
    unsafe {
        mof_run_free(a);
        mof_run_free(b);
        mof_run_free(c);
        mof_config_free(cfg);
    }
}

#[test]
fn bayesian_fusion_components_and_gospa() {
    let cfg = config(1, 1);
    let mut scored = 0;
    for index in 0..10 {
        let run = simulate(cfg, 2, index);
        let mut fusion = ptr::null_mut();
        assert_eq!(
            unsafe { mof_fuse(cfg, run, ptr::null(), &mut fusion) },
            MofStatus::Ok,
            "{}",
            last_error()
        );
        let mut n = 0usize;
        assert_eq!(unsafe { mof_fusion_len(fusion, &mut n) }, MofStatus::Ok);
        for i in 0..n {
            let (mut r, mut mean, mut cov) = (0.0, [0.0; 4], [0.0; 16]);
            let status = unsafe { mof_fusion_component(fusion, i, &mut r, mean.as_mut_ptr(), cov.as_mut_ptr()) };
            assert_eq!(status, MofStatus::Ok);
            assert!((0.0..=1.0).contains(&r));
            assert!(mean.iter().all(|v| v.is_finite()));
            for a in 0..4 {
                assert!(cov[5 * a] > 0.0);
                for b in 0..4 {
                    assert!((cov[4 * a + b] - cov[4 * b + a]).abs() <= 1e-9 * cov[5 * a].max(cov[5 * b]));
                }
            }
        }
        let status = unsafe { mof_fusion_component(fusion, n, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
        assert_eq!(status, MofStatus::OutOfRange);
        let mut report = MofMetricReport::default();
        assert_eq!(unsafe { mof_gospa(cfg, fusion, run, 0.5, &mut report) }, MofStatus::Ok);
        let parts = report.localization + report.missed + report.false_detection;
        assert!((parts - report.total).abs() < 1e-9);
        let mut empty = MofMetricReport::default();
        assert_eq!(unsafe { mof_gospa(cfg, fusion, run, 1.0, &mut empty) }, MofStatus::Ok);
        assert_eq!(empty.total, truth(run).len() as f64);
        assert_eq!(empty.missed, empty.total);
        scored += 1;
        unsafe {
            mof_fusion_free(fusion);
            mof_run_free(run);
        }
    }
    assert_eq!(scored, 10);
    unsafe { mof_config_free(cfg) };
}

#[test]
fn transformer_fusion_uses_loaded_network() {
    use mofusion::fusenet::checkpoint::save_network;
    use mofusion::fusenet::NetConfig;
    use mofusion::harness::{build_net, ExperimentConfig};

    let dir = tempfile::tempdir().unwrap();
    let defaults = ExperimentConfig::default();
    let exp = ExperimentConfig {
        model_dim: 16,
        network: NetConfig {
            ffn_dim: 32,
            num_queries: 5,
            ..defaults.network.clone()
        },
        ..defaults
    };
    let net = build_net(&exp, &exp.task_spec().unwrap(), 1).unwrap();
    let p = dir.path().join("net.ckpt");
    save_network(&p, &net).unwrap();
    let path = CString::new(p.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { mof_network_load(path.as_ptr(), &mut handle) },
        MofStatus::Ok,
        "{}",
        last_error()
    );
    let cfg = config(1, 1);
    let run = simulate(cfg, 3, 0);
    let mut fusion = ptr::null_mut();
    assert_eq!(
        unsafe { mof_fuse(cfg, run, handle, &mut fusion) },
        MofStatus::Ok,
        "{}",
        last_error()
    );
    let mut n = 0usize;
    assert_eq!(unsafe { mof_fusion_len(fusion, &mut n) }, MofStatus::Ok);
    assert_eq!(n, 5);
    unsafe {
        mof_fusion_free(fusion);
        mof_run_free(run);
        mof_network_free(handle);
        mof_config_free(cfg);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mofusion.h")).unwrap();
    for name in [
        "mof_last_error",
        "mof_version",
        "mof_config_new",
        "mof_config_load",
        "mof_config_free",
        "mof_run_simulate",
        "mof_run_free",
        "mof_run_truth_count",
        "mof_run_truth",
        "mof_network_load",
        "mof_network_free",
        "mof_fuse",
        "mof_fusion_free",
        "mof_fusion_len",
        "mof_fusion_component",
        "mof_gospa",
        "MOF_STATUS_OK",
        "MOF_STATUS_PANIC",
        "MofMetricReport",
        "typedef struct MofConfig MofConfig",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
