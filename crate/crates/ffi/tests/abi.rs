use std::ffi::{CStr, CString};
use std::ptr;

use nearood::gaussian::{fit_gaussians, FeatureSet, ScoreMethod};
use nearood::numerics::RngState;
use nearood::trainer::{extract_features, ClassifierParams};
use nearood::Matrix;
use nearood_ffi::*;

fn last_error() -> String {
    let p = nood_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn sample(rows: usize, dim: usize, classes: usize, seed: u64) -> (Vec<f64>, Vec<i64>) {
    let mut rng = RngState::new(seed);
    let labels: Vec<i64> = (0..rows).map(|i| (i % classes) as i64).collect();
    let x = labels
        .iter()
        .flat_map(|&l| {
            (0..dim)
                .map(|j| rng.normal() + if j == 0 { 3.0 * l as f64 } else { 0.0 })
                .collect::<Vec<_>>()
        })
        .collect();
    (x, labels)
}

fn fit(x: &[f64], labels: &[i64], dim: usize, classes: usize) -> *mut NoodModel {
    let mut model = ptr::null_mut();
    let status = unsafe {
        nood_model_fit(
            x.as_ptr(),
            labels.as_ptr(),
            labels.len(),
            dim,
            classes,
            false,
            &mut model,
        )
    };
    assert_eq!(status, NoodStatus::Ok, "{}", last_error());
    model
}

#[test]
fn scores_match_the_library() {
    let (dim, classes) = (4, 3);
    let (x, labels) = sample(90, dim, classes, 7);
    let model = fit(&x, &labels, dim, classes);

    let features = FeatureSet::new(
        Matrix::new(90, dim, x.clone()).unwrap(),
        labels.iter().map(|&l| Some(l as usize)).collect(),
        classes,
        "ffi",
    )
    .unwrap();
    let reference = fit_gaussians(&features).unwrap();
    let (probe, _) = sample(10, dim, classes, 8);
    let probe_m = Matrix::new(10, dim, probe.clone()).unwrap();

    for (method, lib_method) in [
        (NoodScoreMethod::Md, ScoreMethod::Md),
        (NoodScoreMethod::Rmd, ScoreMethod::Rmd),
    ] {
        let mut out = vec![0.0; 10];
        let status =
            unsafe { nood_model_score(model, method, probe.as_ptr(), 10, dim, out.as_mut_ptr()) };
        assert_eq!(status, NoodStatus::Ok);
        assert_eq!(
            out,
            reference.score_matrix(&probe_m, lib_method).unwrap().scores
        );
    }
    let mut d = 0.0;
    assert_eq!(
        unsafe { nood_model_mahalanobis(model, probe.as_ptr(), dim, 2, &mut d) },
        NoodStatus::Ok
    );
    assert_eq!(d, reference.mahalanobis(&probe[..dim], 2).unwrap());
    unsafe { nood_model_free(model) };
}

#[test]
fn save_and_load_preserve_scores() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    let (x, labels) = sample(40, 3, 2, 1);
    let model = fit(&x, &labels, 3, 2);
    assert_eq!(
        unsafe { nood_model_save(model, path.as_ptr()) },
        NoodStatus::Ok
    );
    let mut loaded = ptr::null_mut();
    assert_eq!(
        unsafe { nood_model_load(path.as_ptr(), &mut loaded) },
        NoodStatus::Ok
    );

    let (mut a, mut b) = (vec![0.0; 40], vec![0.0; 40]);
    unsafe {
        nood_model_score(
            model,
            NoodScoreMethod::Rmd,
            x.as_ptr(),
            40,
            3,
            a.as_mut_ptr(),
        );
        nood_model_score(
            loaded,
            NoodScoreMethod::Rmd,
            x.as_ptr(),
            40,
            3,
            b.as_mut_ptr(),
        );
    }
    assert_eq!(a, b);
    let (mut p, mut c) = (0, 0);
    assert_eq!(
        unsafe { nood_model_dims(loaded, &mut p, &mut c) },
        NoodStatus::Ok
    );
    assert_eq!((p, c), (3, 2));
    unsafe {
        nood_model_free(model);
        nood_model_free(loaded);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut model = ptr::null_mut();
    let x = [0.0, 1.0];
    // OOD label in the training set
    let labels = [0, -1];
    let s = unsafe { nood_model_fit(x.as_ptr(), labels.as_ptr(), 2, 1, 1, false, &mut model) };
    assert_eq!(s, NoodStatus::Data);
    assert!(model.is_null());
    assert!(last_error().contains("OOD"));

    let s = unsafe { nood_model_fit(ptr::null(), labels.as_ptr(), 2, 1, 1, false, &mut model) };
    assert_eq!(s, NoodStatus::InvalidArgument);
    assert!(last_error().contains("features"));

    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(
        unsafe { nood_model_load(missing.as_ptr(), &mut model) },
        NoodStatus::Data
    );

    let mut t = 0.0;
    assert_eq!(
        unsafe { nood_threshold_at_tpr(ptr::null(), 0, 0.95, &mut t) },
        NoodStatus::Data
    );
    let id = [1.0];
    assert_eq!(
        unsafe { nood_threshold_at_tpr(id.as_ptr(), 1, 1.5, &mut t) },
        NoodStatus::Config
    );

    unsafe { nood_model_free(ptr::null_mut()) };
}

#[test]
fn metrics_match_the_library() {
    let id = [0.9, 0.4, 0.4, 0.8];
    let ood = [0.1, 0.4, 0.5];
    let (mut a, mut pin, mut pout, mut t) = (0.0, 0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(
            nood_auroc(id.as_ptr(), 4, ood.as_ptr(), 3, &mut a),
            NoodStatus::Ok
        );
        assert_eq!(
            nood_aupr(id.as_ptr(), 4, ood.as_ptr(), 3, NoodPositive::Id, &mut pin),
            NoodStatus::Ok
        );
        assert_eq!(
            nood_aupr(
                id.as_ptr(),
                4,
                ood.as_ptr(),
                3,
                NoodPositive::Ood,
                &mut pout
            ),
            NoodStatus::Ok
        );
        assert_eq!(
            nood_threshold_at_tpr(id.as_ptr(), 4, 0.5, &mut t),
            NoodStatus::Ok
        );
    }
    use nearood::metrics::{aupr, auroc, threshold_at_tpr, Positive};
    assert_eq!(a, auroc(&id, &ood).unwrap());
    assert_eq!(pin, aupr(&id, &ood, Positive::Id).unwrap());
    assert_eq!(pout, aupr(&id, &ood, Positive::Ood).unwrap());
    assert_eq!(t, threshold_at_tpr(&id, 0.5).unwrap());
    assert_eq!(t, 0.8);
}

#[test]
fn classifier_features_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.json");
    let params = ClassifierParams::init(&[5, 6, 4, 3], &mut RngState::new(3)).unwrap();
    params.save(&file).unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();

    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { nood_classifier_load(path.as_ptr(), &mut handle) },
        NoodStatus::Ok
    );
    let (mut d, mut p, mut c) = (0, 0, 0);
    assert_eq!(
        unsafe { nood_classifier_dims(handle, &mut d, &mut p, &mut c) },
        NoodStatus::Ok
    );
    assert_eq!((d, p, c), (5, 4, 3));

    let (x, _) = sample(7, 5, 2, 4);
    let mut out = vec![0.0; 7 * 4];
    let s = unsafe { nood_classifier_features(handle, x.as_ptr(), 7, 5, out.as_mut_ptr()) };
    assert_eq!(s, NoodStatus::Ok);
    let expected = extract_features(&params, &Matrix::new(7, 5, x).unwrap(), &[None; 7]).unwrap();
    assert_eq!(out, expected.features.as_slice());
    unsafe { nood_classifier_free(handle) };
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(nood_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
