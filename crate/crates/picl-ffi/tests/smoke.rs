//! Exercise the C ABI from Rust: handle lifecycle, error reporting, the
//! metric entry points against known values, and a tiny end-to-end
//! pipeline run. A separate test compiles the generated header with the
//! system C compiler.

use std::ffi::{CStr, CString};

use picl_ffi::{
    picl_adapt, picl_config_default, picl_config_free, picl_config_get, picl_config_load,
    picl_config_set, picl_eer, picl_evaluate, picl_generate, picl_last_error, picl_min_dcf,
    picl_pretrain, picl_version, PiclEvalMetrics, PiclStatus,
};

fn last_error() -> String {
    let mut buf = vec![0i8; 512];
    let n = unsafe { picl_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(buf.len() - 1)].iter().map(|&b| b as u8).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

#[test]
fn version_is_a_cstring() {
    let v = unsafe { CStr::from_ptr(picl_version()) };
    assert!(!v.to_str().unwrap().is_empty());
}

#[test]
fn config_set_get_and_validation() {
    let cfg = picl_config_default(7);
    assert!(!cfg.is_null());

    let key = CString::new("loss.tau").unwrap();
    let value = CString::new("0.1").unwrap();
    let status = unsafe { picl_config_set(cfg, key.as_ptr(), value.as_ptr()) };
    assert_eq!(status, PiclStatus::Ok);

    let mut buf = vec![0i8; 64];
    let n = unsafe { picl_config_get(cfg, key.as_ptr(), buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    let got = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    assert_eq!(got, "0.1");

    // Invalid value is rejected and leaves the config unchanged.
    let bad = CString::new("0").unwrap();
    let status = unsafe { picl_config_set(cfg, key.as_ptr(), bad.as_ptr()) };
    assert_eq!(status, PiclStatus::InvalidArgument);
    assert!(last_error().contains("tau"));
    let n = unsafe { picl_config_get(cfg, key.as_ptr(), buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    let got = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    assert_eq!(got, "0.1");

    // Unknown keys report -1.
    let unknown = CString::new("loss.nonsense").unwrap();
    let n = unsafe { picl_config_get(cfg, unknown.as_ptr(), buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, -1);

    unsafe { picl_config_free(cfg) };
}

#[test]
fn config_load_missing_file_returns_null_with_message() {
    let path = CString::new("/nonexistent/picl.cfg").unwrap();
    let cfg = unsafe { picl_config_load(path.as_ptr()) };
    assert!(cfg.is_null());
    assert!(last_error().contains("missing artifact"), "{}", last_error());
}

#[test]
fn null_arguments_are_rejected() {
    let status = unsafe { picl_config_set(std::ptr::null_mut(), std::ptr::null(), std::ptr::null()) };
    assert_eq!(status, PiclStatus::NullArgument);
    let mut eer_out = 0.0;
    let status = unsafe { picl_eer(std::ptr::null(), std::ptr::null(), 0, &mut eer_out, std::ptr::null_mut()) };
    assert_eq!(status, PiclStatus::InvalidArgument);
}

#[test]
fn metric_entry_points_match_known_values() {
    // Perfectly separated trials: EER 0, minDCF 0.
    let scores = [0.9, 0.8, 0.2, 0.1];
    let labels: [u8; 4] = [1, 1, 0, 0];
    let (mut eer_out, mut th) = (f64::NAN, f64::NAN);
    let status = unsafe {
        picl_eer(scores.as_ptr(), labels.as_ptr(), 4, &mut eer_out, &mut th)
    };
    assert_eq!(status, PiclStatus::Ok);
    assert_eq!(eer_out, 0.0);
    assert!(th.is_finite());

    let mut dcf = f64::NAN;
    let status = unsafe {
        picl_min_dcf(
            scores.as_ptr(),
            labels.as_ptr(),
            4,
            10.0,
            1.0,
            0.01,
            &mut dcf,
            std::ptr::null_mut(),
        )
    };
    assert_eq!(status, PiclStatus::Ok);
    assert_eq!(dcf, 0.0);

    // Degenerate trial set (no nontargets) is a clean error.
    let one = [0.5];
    let one_label: [u8; 1] = [1];
    let status = unsafe {
        picl_eer(one.as_ptr(), one_label.as_ptr(), 1, &mut eer_out, std::ptr::null_mut())
    };
    assert_eq!(status, PiclStatus::InvalidArgument);
}

#[test]
fn tiny_pipeline_through_the_abi() {
    let tmp = tempfile::tempdir().unwrap();
    let out = CString::new(tmp.path().to_str().unwrap()).unwrap();
    let cfg = picl_config_default(5);
    for (key, value) in [
        ("world.source_speakers", "5"),
        ("world.target_speakers", "4"),
        ("world.utterances_per_speaker", "8"),
        ("world.input_dim", "10"),
        ("encoder.hidden_dim", "16"),
        ("encoder.embedding_dim", "8"),
        ("pretrain.epochs", "4"),
        ("adapt.epochs", "2"),
        ("batch.source", "8"),
        ("batch.target", "8"),
        ("trial.max_pairs", "30"),
    ] {
        let key = CString::new(key).unwrap();
        let value = CString::new(value).unwrap();
        let status = unsafe { picl_config_set(cfg, key.as_ptr(), value.as_ptr()) };
        assert_eq!(status, PiclStatus::Ok, "{}", last_error());
    }

    // Adapt before pretrain: missing artifact.
    unsafe {
        assert_eq!(picl_generate(cfg, out.as_ptr()), PiclStatus::Ok, "{}", last_error());
        assert_eq!(picl_adapt(cfg, out.as_ptr()), PiclStatus::MissingArtifact);
        assert_eq!(picl_pretrain(cfg, out.as_ptr()), PiclStatus::Ok, "{}", last_error());
        assert_eq!(picl_adapt(cfg, out.as_ptr()), PiclStatus::Ok, "{}", last_error());
    }

    let mut metrics = PiclEvalMetrics {
        source_eer: f64::NAN,
        source_min_dcf: f64::NAN,
        target_eer: f64::NAN,
        target_min_dcf: f64::NAN,
    };
    let status = unsafe { picl_evaluate(cfg, out.as_ptr(), &mut metrics) };
    assert_eq!(status, PiclStatus::Ok, "{}", last_error());
    assert!(metrics.source_eer.is_finite() && (0.0..=1.0).contains(&metrics.source_eer));
    assert!(metrics.target_min_dcf.is_finite() && metrics.target_min_dcf <= 1.0 + 1e-12);
    assert!(tmp.path().join("adapted.ckpt").exists());

    unsafe { picl_config_free(cfg) };
    unsafe { picl_config_free(std::ptr::null_mut()) }; // NULL free is a no-op
}
