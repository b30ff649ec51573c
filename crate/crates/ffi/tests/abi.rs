use std::ffi::{CStr, CString};
use std::ptr;

use streamkmeans_ffi::*;

const UNIFORM: &str = "type = \"piecewise1d\"\nbreakpoints = [0.0, 1.0]\ndensities = [1.0]\n";

const RUN: &str = r#"
schema_version = 1
seed = 11
k = 2
iterations = 3000
stride = 500

[distribution]
type = "piecewise1d"
breakpoints = [0.0, 1.0]
densities = [1.0]

[schedule]
policy = "generalized_lloyd"
alpha = 0.7
beta = 0.8
"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(skm_last_error()) }.to_string_lossy().into_owned()
}

fn uniform() -> *mut SkmDistribution {
    let text = CString::new(UNIFORM).unwrap();
    let mut d = ptr::null_mut();
    assert_eq!(unsafe { skm_distribution_from_toml(text.as_ptr(), &mut d) }, SkmStatus::Ok);
    d
}

#[test]
fn objective_on_the_unit_interval() {
    let d = uniform();
    unsafe {
        assert_eq!(skm_distribution_dimension(d), 1);
        let w = [0.2, 0.6];
        let mut masses = [0.0; 2];
        assert_eq!(skm_masses(d, w.as_ptr(), 2, masses.as_mut_ptr()), SkmStatus::Ok);
        assert!((masses[0] - 0.4).abs() < 1e-15 && (masses[1] - 0.6).abs() < 1e-15);

        // cells [0, .4] and [.4, 1]: 1/2 ((2·.2³ + .2³ + .4³) / 3)
        let mut f = 0.0;
        assert_eq!(skm_cost(d, w.as_ptr(), 2, &mut f), SkmStatus::Ok);
        assert!((f - 0.088 / 6.0).abs() < 1e-15, "{f}");

        let mut g = [0.0; 2];
        assert_eq!(skm_gradient(d, w.as_ptr(), 2, g.as_mut_ptr()), SkmStatus::Ok);
        assert!(g[0].abs() < 1e-15);
        assert!((g[1] - 0.6 * (0.6 - 0.7)).abs() < 1e-15);
        skm_distribution_free(d);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let mut d = ptr::null_mut();
        let bad = CString::new("type = \"piecewise1d\"\nbreakpoints = [1.0, 0.0]\ndensities = [1.0]").unwrap();
        assert_eq!(skm_distribution_from_toml(bad.as_ptr(), &mut d), SkmStatus::Config);
        assert!(d.is_null());
        assert!(!last_error().is_empty());

        let junk = CString::new("not toml [").unwrap();
        assert_eq!(skm_distribution_from_toml(junk.as_ptr(), &mut d), SkmStatus::Config);
        assert_eq!(skm_distribution_from_toml(ptr::null(), &mut d), SkmStatus::NullPointer);

        let u = uniform();
        let same = [0.5, 0.5];
        let mut f = 0.0;
        assert_eq!(skm_cost(u, same.as_ptr(), 2, &mut f), SkmStatus::Contract);
        assert!(last_error().contains("degenerate"), "{}", last_error());
        assert_eq!(skm_cost(ptr::null(), same.as_ptr(), 2, &mut f), SkmStatus::NullPointer);
        skm_distribution_free(u);

        let mut t = 0;
        assert_eq!(skm_horizon(0.5, 1, &mut t), SkmStatus::Input);
        assert_eq!(skm_horizon(std::f64::consts::LN_2, 10, &mut t), SkmStatus::Ok);
        assert_eq!(t, 19);
    }
}

#[test]
fn exact_moments_of_a_mixture_are_a_capability_error() {
    let text = CString::new(
        "type = \"gauss_mix\"\nweights = [1.0]\nmeans = [[0.0, 0.0]]\nsigmas = [0.3]\nradius = 1.0\n",
    )
    .unwrap();
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(skm_distribution_from_toml(text.as_ptr(), &mut d), SkmStatus::Ok);
        assert_eq!(skm_distribution_dimension(d), 2);
        let w = [0.1, 0.0, -0.1, 0.0];
        let mut m = [0.0; 2];
        assert_eq!(skm_masses(d, w.as_ptr(), 2, m.as_mut_ptr()), SkmStatus::Capability);
        skm_distribution_free(d);
    }
}

#[test]
fn run_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new(RUN).unwrap();
    let path = CString::new(dir.path().join("trace.csv").to_str().unwrap()).unwrap();
    unsafe {
        let mut r = ptr::null_mut();
        assert_eq!(skm_run_new(cfg.as_ptr(), &mut r), SkmStatus::Ok);
        let (mut k, mut d) = (0, 0);
        assert_eq!(skm_run_shape(r, &mut k, &mut d), SkmStatus::Ok);
        assert_eq!((k, d), (2, 1));

        let mut taken = 0;
        assert_eq!(skm_run_step(r, 1000, &mut taken), SkmStatus::Ok);
        assert_eq!(taken, 1000);
        assert_eq!(skm_run_step(r, 5000, &mut taken), SkmStatus::Ok);
        assert_eq!(taken, 2000);
        assert_eq!(skm_run_iteration(r), 3000);

        let mut small = [0.0; 1];
        assert_eq!(skm_run_centers(r, small.as_mut_ptr(), 1), SkmStatus::Buffer);
        let mut w = [0.0; 2];
        assert_eq!(skm_run_centers(r, w.as_mut_ptr(), 2), SkmStatus::Ok);
        assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));

        assert_eq!(skm_run_finish(r, path.as_ptr()), SkmStatus::Ok);
        assert_eq!(skm_run_step(r, 1, &mut taken), SkmStatus::State);
        assert_eq!(taken, 0);
        let mut after = [0.0; 2];
        assert_eq!(skm_run_centers(r, after.as_mut_ptr(), 2), SkmStatus::Ok);
        assert_eq!(after, w);
        assert_eq!(skm_run_iteration(r), 3000);
        skm_run_free(r);
    }
    let text = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(text.starts_with("n,I,H_0,H_1,"));
    assert_eq!(text.lines().last().unwrap().split(',').next(), Some("3000"));
}

#[test]
fn run_matches_the_library() {
    let cfg = CString::new(RUN).unwrap();
    let lib = streamkmeans::run(&streamkmeans::RunConfig::from_toml_str(RUN).unwrap()).unwrap();
    let expected = lib.trace.final_row().centers.as_flat().to_vec();
    unsafe {
        let mut r = ptr::null_mut();
        assert_eq!(skm_run_new(cfg.as_ptr(), &mut r), SkmStatus::Ok);
        assert_eq!(skm_run_step(r, u64::MAX, ptr::null_mut()), SkmStatus::Ok);
        let mut w = [0.0; 2];
        assert_eq!(skm_run_centers(r, w.as_mut_ptr(), 2), SkmStatus::Ok);
        assert_eq!(w.to_vec(), expected);
        skm_run_free(r);
    }
}

#[test]
fn invalid_run_config_is_rejected() {
    let cfg = CString::new(RUN.replace("alpha = 0.7", "alpha = 0.5")).unwrap();
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { skm_run_new(cfg.as_ptr(), &mut r) }, SkmStatus::Config);
    assert!(r.is_null());
    assert!(last_error().contains("2/3 < alpha < beta < 1"), "{}", last_error());
}

#[test]
fn header_declares_the_abi() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/streamkmeans.h")).unwrap();
    for name in [
        "typedef struct SkmDistribution SkmDistribution;",
        "typedef struct SkmRun SkmRun;",
        "SKM_STATUS_OK = 0",
        "SKM_STATUS_PANIC = 9",
        "skm_distribution_from_toml(",
        "skm_masses(",
        "skm_cost(",
        "skm_gradient(",
        "skm_run_new(",
        "skm_run_step(",
        "skm_run_centers(",
        "skm_run_finish(",
        "skm_run_free(",
        "skm_horizon(",
        "skm_last_error(",
    ] {
        assert!(h.contains(name), "missing {name}");
    }
    assert!(h.contains("size_t k"));
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(skm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
