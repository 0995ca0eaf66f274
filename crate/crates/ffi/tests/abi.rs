use std::ffi::{CStr, CString};
use std::ptr;

use fedcond_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(fedcond_last_error()) }.to_string_lossy().into_owned()
}

const QUICK: &str = r#"
seed = 4
strategies = ["fedavg", "ifca", "conditional"]
[dataset]
name = "synthetic"
per_class_cap = 0
[dataset.synthetic]
classes = 4
dim = 5
train_per_class = 40
test_per_class = 10
[heterogeneity]
family = "E1"
k = 2
clients_per_cluster = 2
[stats]
l = 4
[model]
hidden_dim = 8
[training]
epochs = 2
"#;

#[test]
fn fingerprint_of_two_rows_is_rank_one() {
    // Z = [0 | 1 0], [1 | 0 1]: centered rows are +-(0.5, -0.5, 0.5), so the
    // covariance is v v^T * 2 with ||v||^2 = 0.75.
    let x = [0.0, 1.0];
    let y = [0usize, 1];
    let mut out = [f64::NAN; 3];
    let s = unsafe { fedcond_fingerprint(x.as_ptr(), y.as_ptr(), 2, 1, 2, 3, out.as_mut_ptr()) };
    assert_eq!(s, FedcondStatus::Ok);
    assert!((out[0] - 1.5).abs() < 1e-12);
    assert_eq!(&out[1..], &[0.0, 0.0]);
    assert_eq!(last_error(), "");
}

#[test]
fn bad_arguments_map_to_status_codes() {
    let mut out = 0.0;
    let s = unsafe { fedcond_ari(ptr::null(), ptr::null(), 3, &mut out) };
    assert_eq!(s, FedcondStatus::NullArgument);
    assert!(last_error().contains("truth"));

    let x = [0.0, 1.0];
    let y = [0usize, 7];
    let mut fp = [0.0; 2];
    let s = unsafe { fedcond_fingerprint(x.as_ptr(), y.as_ptr(), 2, 1, 2, 2, fp.as_mut_ptr()) };
    assert_eq!(s, FedcondStatus::Fingerprint);

    let mut cfg = ptr::null_mut();
    let text = CString::new("strategies = []").unwrap();
    let s = unsafe { fedcond_config_from_toml(text.as_ptr(), &mut cfg) };
    assert_eq!(s, FedcondStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().starts_with("config stage"));
}

#[test]
fn ari_of_relabeled_partition_is_one() {
    let a = [0usize, 0, 1, 1, 2];
    let b = [5usize, 5, 3, 3, 9];
    let mut out = 0.0;
    assert_eq!(unsafe { fedcond_ari(a.as_ptr(), b.as_ptr(), 5, &mut out) }, FedcondStatus::Ok);
    assert_eq!(out, 1.0);
}

#[test]
fn run_and_inspect_a_report() {
    let text = CString::new(QUICK).unwrap();
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(fedcond_config_from_toml(text.as_ptr(), &mut cfg), FedcondStatus::Ok);
        assert_eq!(fedcond_config_set_seed(cfg, 8), FedcondStatus::Ok);
        let mut report = ptr::null_mut();
        assert_eq!(fedcond_run(cfg, ptr::null(), 1, &mut report), FedcondStatus::Ok);

        let mut n = 0;
        assert_eq!(fedcond_report_strategy_count(report, &mut n), FedcondStatus::Ok);
        assert_eq!(n, 3);
        let mut names = Vec::new();
        for i in 0..n {
            let (mut name, mut acc, mut ari) = (ptr::null(), 0.0, 0.0);
            assert_eq!(fedcond_report_strategy(report, i, &mut name, &mut acc, &mut ari), FedcondStatus::Ok);
            names.push(CStr::from_ptr(name).to_str().unwrap().to_string());
            assert!((0.0..=1.0).contains(&acc));
            assert_eq!(ari.is_nan(), names[i] != "ifca");
        }
        assert_eq!(names, ["fedavg", "ifca", "conditional"]);
        let (mut name, mut acc, mut ari) = (ptr::null(), 0.0, 0.0);
        assert_eq!(
            fedcond_report_strategy(report, 3, &mut name, &mut acc, &mut ari),
            FedcondStatus::InvalidArgument
        );

        let mut json = ptr::null_mut();
        assert_eq!(fedcond_report_to_json(report, &mut json), FedcondStatus::Ok);
        let value: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(value["config"]["seed"], 8);
        fedcond_string_free(json);

        let tmp = tempfile::tempdir().unwrap();
        let dir = CString::new(tmp.path().to_str().unwrap()).unwrap();
        assert_eq!(fedcond_report_write(report, dir.as_ptr(), false, true), FedcondStatus::Ok);
        assert!(tmp.path().join("summary.csv").exists());
        assert!(!tmp.path().join("report.json").exists());

        fedcond_report_free(report);
        fedcond_config_free(cfg);
        fedcond_config_free(ptr::null_mut());
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(fedcond_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
