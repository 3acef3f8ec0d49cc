use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ltfeas::astro::{write_catalog, synth_catalog, SynthOptions};
use ltfeas::baselines::train_knn;
use ltfeas::features::{feature_names, FeatureTable, Scaler};
use ltfeas::pipeline::{save_model, Classifier};
use ltfeas_ffi::*;

fn last_error() -> String {
    let p = ltf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn kepler_round_trip_through_abi() {
    let r0 = [1.0, 0.0, 0.0];
    let v0 = [0.0, 1.1, 0.05];
    let (mut r1, mut v1) = ([0.0; 3], [0.0; 3]);
    let (mut r2, mut v2) = ([0.0; 3], [0.0; 3]);
    unsafe {
        assert_eq!(ltf_kepler_propagate(r0.as_ptr(), v0.as_ptr(), 2.5, r1.as_mut_ptr(), v1.as_mut_ptr()), LtfStatus::Ok);
        assert_eq!(ltf_kepler_propagate(r1.as_ptr(), v1.as_ptr(), -2.5, r2.as_mut_ptr(), v2.as_mut_ptr()), LtfStatus::Ok);
    }
    for k in 0..3 {
        assert!((r2[k] - r0[k]).abs() < 1e-10);
        assert!((v2[k] - v0[k]).abs() < 1e-10);
    }
    assert!(ltf_last_error().is_null());
}

#[test]
fn lambert_quarter_circle() {
    let r1 = [1.0, 0.0, 0.0];
    let r2 = [0.0, 1.0, 0.0];
    let (mut v1, mut v2) = ([0.0; 3], [0.0; 3]);
    let st = unsafe { ltf_lambert(r1.as_ptr(), r2.as_ptr(), std::f64::consts::FRAC_PI_2, 1, v1.as_mut_ptr(), v2.as_mut_ptr()) };
    assert_eq!(st, LtfStatus::Ok);
    assert!((v1[0]).abs() < 1e-9 && (v1[1] - 1.0).abs() < 1e-9);
    assert!((v2[0] + 1.0).abs() < 1e-9 && v2[1].abs() < 1e-9);
}

#[test]
fn errors_set_status_and_message() {
    let (mut r, mut v) = ([0.0; 3], [0.0; 3]);
    let st = unsafe { ltf_kepler_propagate(ptr::null(), [0.0; 3].as_ptr(), 1.0, r.as_mut_ptr(), v.as_mut_ptr()) };
    assert_eq!(st, LtfStatus::NullPointer);
    assert!(last_error().contains("null"));

    let rect = [1.0, 0.0, 0.0];
    let st = unsafe { ltf_kepler_propagate(rect.as_ptr(), [0.5, 0.0, 0.0].as_ptr(), 1.0, r.as_mut_ptr(), v.as_mut_ptr()) };
    assert_eq!(st, LtfStatus::NumericalFailure);
    assert!(last_error().contains("rectilinear"));

    let mut f = 0.0;
    assert_eq!(unsafe { ltf_f_measure(f64::NAN, 0.5, 1.0, &mut f) }, LtfStatus::Undefined);
    assert_eq!(unsafe { ltf_f_measure(0.0, 0.0, 1.0, &mut f) }, LtfStatus::Ok);
    assert_eq!(f, 0.0);
    assert_eq!(unsafe { ltf_f_measure(0.9707, 0.9877, 1.0, &mut f) }, LtfStatus::Ok);
    assert!((f - 0.9792).abs() < 1e-4);

    let mut cat = ptr::null_mut();
    let missing = CString::new("/nonexistent/catalog.csv").unwrap();
    assert_eq!(unsafe { ltf_catalog_load(missing.as_ptr(), &mut cat) }, LtfStatus::DataError);
    assert!(cat.is_null());
}

fn knn_model(dir: &Path) -> std::path::PathBuf {
    let names = feature_names();
    let keep: Vec<String> = names[..12].to_vec();
    let rows: Vec<Vec<f64>> = (0..30).map(|i| (0..12).map(|j| ((i * 7 + j * 3) % 11) as f64).collect()).collect();
    let labels: Vec<usize> = (0..30).map(|i| i % 2).collect();
    let table = FeatureTable::new(keep, rows, labels).unwrap();
    let scaler = Scaler::fit_table(&table).unwrap();
    let z = scaler.apply_table(&table).unwrap();
    let clf = Classifier::Knn {
        model: train_knn(&z.rows, &z.labels, 5).unwrap(),
    };
    let path = dir.join("knn.json");
    save_model(&path, &clf, &scaler).unwrap();
    path
}

#[test]
fn predictor_and_catalog_handles() {
    let dir = tempfile::tempdir().unwrap();
    let model = CString::new(knn_model(dir.path()).to_str().unwrap()).unwrap();
    let cat_path = dir.path().join("cat.csv");
    write_catalog(&synth_catalog(6, 4, &SynthOptions::default()), &cat_path).unwrap();
    let cat_c = CString::new(cat_path.to_str().unwrap()).unwrap();

    let mut pred = ptr::null_mut();
    let mut cat = ptr::null_mut();
    unsafe {
        assert_eq!(ltf_predictor_load(model.as_ptr(), &mut pred), LtfStatus::Ok);
        assert_eq!(ltf_catalog_load(cat_c.as_ptr(), &mut cat), LtfStatus::Ok);
        let mut n = 0usize;
        assert_eq!(ltf_catalog_len(cat, &mut n), LtfStatus::Ok);
        assert_eq!(n, 6);
        assert_eq!(ltf_predictor_input_width(pred, &mut n), LtfStatus::Ok);
        assert_eq!(n, 12);

        let row = vec![1.0; ltf_feature_count()];
        let mut p = -1.0;
        assert_eq!(ltf_predictor_predict_row(pred, row.as_ptr(), row.len(), &mut p), LtfStatus::Ok);
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(ltf_predictor_predict_row(pred, row.as_ptr(), 5, &mut p), LtfStatus::DataError);

        assert_eq!(
            ltf_predictor_predict_transfer(pred, cat, 1, 2, 59000.0, 1500.0, 700.0, 10.0, &mut p),
            LtfStatus::Ok
        );
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(
            ltf_predictor_predict_transfer(pred, cat, 1, 77, 59000.0, 1500.0, 700.0, 10.0, &mut p),
            LtfStatus::DataError
        );
        assert!(last_error().contains("77"));

        ltf_predictor_free(pred);
        ltf_catalog_free(cat);
        ltf_catalog_free(ptr::null_mut());
    }
}

#[test]
fn synth_catalog_handle() {
    let mut cat = ptr::null_mut();
    unsafe {
        assert_eq!(ltf_catalog_synth(0, 1, &mut cat), LtfStatus::InvalidConfig);
        assert_eq!(ltf_catalog_synth(9, 1, &mut cat), LtfStatus::Ok);
        let mut n = 0;
        ltf_catalog_len(cat, &mut n);
        assert_eq!(n, 9);
        ltf_catalog_free(cat);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ltfeas.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "ltf_kepler_propagate",
        "ltf_lambert",
        "ltf_last_error",
        "ltf_predictor_predict_transfer",
        "LTF_STATUS_OK",
        "typedef struct LtfPredictor LtfPredictor",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ double f; return ltf_f_measure(0.5, 0.5, 1.0, &f) == LTF_STATUS_OK ? 0 : 1; }}\n",
            header.display()
        ),
    )
    .unwrap();
    match Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg(&src).output() {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler found; header syntax not checked"),
    }
}
