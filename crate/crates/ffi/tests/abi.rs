use std::ffi::{CStr, CString};
use std::ptr;

use stickydiff_ffi::*;

fn last_error() -> String {
    let p = sd_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tiny_dataset() -> *mut SdDataset {
    // two treatments, two samples each, three probes
    let values = [0.2, 0.5, 0.8, 0.25, 0.5, 0.75, 0.7, 0.5, 0.2, 0.75, 0.45, 0.3];
    let treatments = [1u32, 1, 2, 2];
    let positions = [100u64, 150, 400];
    let mut ds = ptr::null_mut();
    let st = unsafe { sd_dataset_new(values.as_ptr(), 4, 3, treatments.as_ptr(), positions.as_ptr(), &mut ds) };
    assert_eq!(st, SdStatus::Ok);
    ds
}

#[test]
fn dataset_round_trip_and_pvalues() {
    let ds = tiny_dataset();
    unsafe {
        assert_eq!(sd_dataset_n_samples(ds), 4);
        assert_eq!(sd_dataset_n_probes(ds), 3);
        let mut pv = [0.0; 3];
        assert_eq!(sd_dataset_pvalues(ds, SdTest::Anova, pv.as_mut_ptr(), 3), SdStatus::Ok);
        assert!(pv.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(sd_dataset_pvalues(ds, SdTest::KruskalWallis, pv.as_mut_ptr(), 2), SdStatus::Invalid);
        assert!(last_error().contains("expected 3"));
        sd_dataset_free(ds);
    }
}

#[test]
fn invalid_inputs_set_status_and_message() {
    let mut ds = ptr::null_mut();
    let values = [0.5; 4];
    let bad_positions = [5u64, 5];
    let treatments = [1u32, 2];
    let st = unsafe { sd_dataset_new(values.as_ptr(), 2, 2, treatments.as_ptr(), bad_positions.as_ptr(), &mut ds) };
    assert_eq!(st, SdStatus::Invalid);
    assert!(ds.is_null());
    assert!(last_error().contains("strictly increasing"));

    let st = unsafe { sd_dataset_new(ptr::null(), 2, 2, treatments.as_ptr(), bad_positions.as_ptr(), &mut ds) };
    assert_eq!(st, SdStatus::NullPointer);

    let cfg = CString::new("{\"schema\": \"stickydiff.sim/1\"}").unwrap();
    let st = unsafe { sd_dataset_simulate(cfg.as_ptr(), 1, &mut ds) };
    assert_eq!(st, SdStatus::Invalid);
    assert!(last_error().contains("missing field"));

    unsafe {
        sd_dataset_free(ptr::null_mut());
        sd_fit_free(ptr::null_mut());
        assert_eq!(sd_dataset_n_probes(ptr::null()), 0);
    }
    let path = CString::new("/nonexistent/dataset.tsv").unwrap();
    let st = unsafe { sd_dataset_load(path.as_ptr(), path.as_ptr(), &mut ds) };
    assert_eq!(st, SdStatus::Invalid);
}

#[test]
fn simulated_fit_is_reproducible() {
    let sim = CString::new(
        r#"{"schema": "stickydiff.sim/1", "p": 12, "n_treatments": 2, "n_per_treatment": 3, "sigma2_0": 0.36,
            "eta_0": 0.05, "true_params": {"alpha1": 20.0, "alpha2": 20.0, "d2": 0.33, "beta": 20.0, "gamma": 0.9,
            "rho2": 0.3, "mu_g": 0.0, "tau_g2": 1.0}, "tau_chi2": 0.1225, "read_depth_mean": 50.0,
            "baseline_levels": [0.8, 0.5, 0.2], "hmm_kappa": 0.004, "truncation_l": 20, "distances": {"kind": "uniform"}}"#,
    )
    .unwrap();
    let mcmc = CString::new(r#"{"schema": "stickydiff.mcmc/1", "burn_in": 50, "samples": 100, "truncation_l": 10}"#).unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { sd_dataset_simulate(sim.as_ptr(), 4, &mut ds) }, SdStatus::Ok);
    let mut results = Vec::new();
    for _ in 0..2 {
        let mut fit = ptr::null_mut();
        let st = unsafe { sd_fit_run(ds, mcmc.as_ptr(), 11, &mut fit) };
        assert_eq!(st, SdStatus::Ok, "{}", last_error());
        unsafe {
            assert_eq!(sd_fit_n_probes(fit), 12);
            assert_eq!(sd_fit_stored_draws(fit), 100);
            let mut w = [0.0; 12];
            assert_eq!(sd_fit_diff_prob(fit, w.as_mut_ptr(), 12), SdStatus::Ok);
            let mut calls = [0u8; 12];
            let mut n = usize::MAX;
            assert_eq!(sd_fit_calls(fit, calls.as_mut_ptr(), 12, &mut n), SdStatus::Ok);
            assert_eq!(calls.iter().filter(|&&c| c == 1).count(), n);
            let (mut est, mut se) = (f64::NAN, f64::NAN);
            assert_eq!(sd_fit_order_evidence(fit, &mut est, &mut se), SdStatus::Ok);
            assert!(est.is_finite() && se >= 0.0);
            results.push((w, calls, est));
            sd_fit_free(fit);
        }
    }
    assert_eq!(results[0], results[1]);
    let bad = CString::new(r#"{"schema": "stickydiff.mcmc/1", "thin": 0}"#).unwrap();
    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { sd_fit_run(ds, bad.as_ptr(), 1, &mut fit) }, SdStatus::Invalid);
    unsafe { sd_dataset_free(ds) };
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(sd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/stickydiff.h")).unwrap();
    for name in [
        "sd_last_error_message",
        "sd_version",
        "sd_dataset_new",
        "sd_dataset_load",
        "sd_dataset_simulate",
        "sd_dataset_pvalues",
        "sd_dataset_free",
        "sd_fit_run",
        "sd_fit_diff_prob",
        "sd_fit_calls",
        "sd_fit_order_evidence",
        "sd_fit_free",
        "typedef struct SdDataset SdDataset",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let dir = tempfile_dir();
    let src = dir.join("use_header.c");
    std::fs::write(
        &src,
        "#include \"stickydiff.h\"\nint main(void) { SdDataset *d = 0; return sd_dataset_n_probes(d) == 0 ? 0 : 1; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    match std::process::Command::new(&cc).args(["-std=c99", "-fsyntax-only", "-Wall", "-Werror", "-I", include]).arg(&src).status() {
        Ok(status) => assert!(status.success(), "{cc} rejected the header"),
        Err(_) => eprintln!("no C compiler found; header compile check skipped"),
    }
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("stickydiff-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
