use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use nsktr_ffi::*;

fn last_error() -> String {
    let p = nsktr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tensor(dims: &[usize], values: &[f64]) -> *mut NsktrTensor {
    let mut t = ptr::null_mut();
    let st = unsafe { nsktr_tensor_new(dims.len(), dims.as_ptr(), values.as_ptr(), &mut t) };
    assert_eq!(st, NsktrStatus::Ok);
    t
}

/// Deterministic pseudo-random values in [-1, 1).
fn values(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

#[test]
fn tensor_round_trip_through_handles_and_files() {
    let v = values(1, 24);
    let t = tensor(&[2, 3, 4], &v);
    unsafe {
        assert_eq!(nsktr_tensor_ndims(t), 3);
        assert_eq!(nsktr_tensor_len(t), 24);
        let mut dims = [0usize; 3];
        assert_eq!(nsktr_tensor_dims(t, dims.as_mut_ptr(), 3), NsktrStatus::Ok);
        assert_eq!(dims, [2, 3, 4]);
        let mut back = vec![0.0; 24];
        assert_eq!(nsktr_tensor_values(t, back.as_mut_ptr(), 24), NsktrStatus::Ok);
        assert_eq!(back, v);
        assert_eq!(nsktr_tensor_values(t, back.as_mut_ptr(), 23), NsktrStatus::InvalidArgument);

        let dir = tempfile::tempdir().unwrap();
        let file = CString::new(dir.path().join("t.nskt").to_str().unwrap()).unwrap();
        assert_eq!(nsktr_tensor_write(t, file.as_ptr()), NsktrStatus::Ok);
        let mut r = ptr::null_mut();
        assert_eq!(nsktr_tensor_read(file.as_ptr(), &mut r), NsktrStatus::Ok);
        let mut again = vec![0.0; 24];
        nsktr_tensor_values(r, again.as_mut_ptr(), 24);
        assert_eq!(again, v);
        nsktr_tensor_free(r);
        nsktr_tensor_free(t);
        nsktr_tensor_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut t = ptr::null_mut();
        let dims = [2usize, 0];
        assert_eq!(nsktr_tensor_new(2, dims.as_ptr(), ptr::null(), &mut t), NsktrStatus::InvalidArgument);
        assert!(last_error().contains("dim"), "{}", last_error());
        assert!(t.is_null());
        let dims = [2usize, 2];
        assert_eq!(nsktr_tensor_new(2, dims.as_ptr(), ptr::null(), &mut t), NsktrStatus::NullPointer);
        assert_eq!(nsktr_tensor_read(ptr::null(), &mut t), NsktrStatus::NullPointer);
        let missing = CString::new("/nonexistent/x.nskt").unwrap();
        assert_eq!(nsktr_tensor_read(missing.as_ptr(), &mut t), NsktrStatus::DataError);
        assert!(last_error().contains("/nonexistent/x.nskt"));
        assert_eq!(nsktr_options_new(0, &mut ptr::null_mut()), NsktrStatus::InvalidArgument);
        let mut o = ptr::null_mut();
        assert_eq!(nsktr_options_new(1, &mut o), NsktrStatus::Ok);
        assert_eq!(nsktr_options_set_mode(o, 0, -1.0, 0.0, 0.0, false), NsktrStatus::InvalidArgument);
        assert_eq!(nsktr_options_set_admm(o, 0.0, 1e-5, false), NsktrStatus::InvalidArgument);
        assert_eq!(nsktr_options_set_outer(o, 0, 1e-6), NsktrStatus::InvalidArgument);
        nsktr_options_free(o);
        assert_eq!(nsktr_model_ndims(ptr::null()), 0);
        assert!(nsktr_model_objective(ptr::null()).is_nan());
    }
}

#[test]
fn fit_predict_and_model_files() {
    // Noiseless rank-1 linear data on 4 x 3 covariates.
    let u = [1.0, 0.5, 0.0, 2.0];
    let w = [0.3, 1.0, 0.7];
    let n = 60;
    let mut samples = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let x = values(100 + i as u64, 12);
        let mut s = 0.0;
        for b in 0..3 {
            for a in 0..4 {
                s += x[a + 4 * b] * u[a] * w[b];
            }
        }
        samples.push(tensor(&[4, 3], &x));
        y.push(s);
    }
    unsafe {
        let ptrs: Vec<*const NsktrTensor> = samples.iter().map(|&p| p as *const _).collect();
        let mut data = ptr::null_mut();
        assert_eq!(
            nsktr_dataset_new(ptrs.as_ptr(), n, y.as_ptr(), NsktrLoss::Linear, &mut data),
            NsktrStatus::Ok
        );
        assert_eq!(nsktr_dataset_len(data), n);
        let mut bad = ptr::null_mut();
        assert_eq!(
            nsktr_dataset_new(ptrs.as_ptr(), n, y.as_ptr(), NsktrLoss::Logistic, &mut bad),
            NsktrStatus::DataError
        );

        let mut opts = ptr::null_mut();
        assert_eq!(nsktr_options_new(1, &mut opts), NsktrStatus::Ok);
        assert_eq!(nsktr_options_set_seed(opts, 5), NsktrStatus::Ok);
        assert_eq!(nsktr_options_set_outer(opts, 200, 1e-12), NsktrStatus::Ok);
        assert_eq!(nsktr_options_set_admm(opts, 1.0, 1e-8, true), NsktrStatus::Ok);
        assert_eq!(nsktr_options_set_mode(opts, 1, 0.0, 0.0, 0.0, true), NsktrStatus::Ok);
        let mut model = ptr::null_mut();
        assert_eq!(nsktr_fit(data, opts, &mut model), NsktrStatus::Ok, "{}", last_error());
        assert_eq!((nsktr_model_rank(model), nsktr_model_ndims(model)), (1, 2));
        assert!(nsktr_model_iterations(model) >= 1);
        assert!(nsktr_model_objective(model) < 1e-4);

        let mut f1 = [0.0; 3];
        assert_eq!(nsktr_model_factor(model, 1, f1.as_mut_ptr(), 3), NsktrStatus::Ok);
        assert!(f1.iter().all(|&v| v >= 0.0));
        assert_eq!(nsktr_model_factor(model, 2, f1.as_mut_ptr(), 3), NsktrStatus::InvalidArgument);

        let mut p = 0.0;
        assert_eq!(nsktr_model_predict(model, samples[0], &mut p), NsktrStatus::Ok);
        assert!((p - y[0]).abs() < 1e-3 * (1.0 + y[0].abs()), "{p} vs {}", y[0]);

        let dir = tempfile::tempdir().unwrap();
        let file = CString::new(dir.path().join("m.nskm").to_str().unwrap()).unwrap();
        assert_eq!(nsktr_model_write(model, file.as_ptr()), NsktrStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(nsktr_model_read(file.as_ptr(), &mut loaded), NsktrStatus::Ok);
        let mut q = 0.0;
        nsktr_model_predict(loaded, samples[0], &mut q);
        assert_eq!(p, q);
        let wrong = tensor(&[3, 4], &values(1, 12));
        assert_eq!(nsktr_model_predict(loaded, wrong, &mut q), NsktrStatus::InvalidArgument);

        nsktr_tensor_free(wrong);
        nsktr_model_free(loaded);
        nsktr_model_free(model);
        nsktr_options_free(opts);
        nsktr_dataset_free(data);
        for s in samples {
            nsktr_tensor_free(s);
        }
    }
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/nsktr.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["nsktr_fit", "nsktr_model_predict", "nsktr_last_error", "typedef struct NsktrModel NsktrModel"] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-x", "c", header]).output()
    else {
        eprintln!("no C compiler found; header syntax not checked");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
