//! IDX parsing, synthetic tasks, batching and the probe statistics.

use nalgebra::{DMatrix, DVector};
use widthlab::data::{batches, mnist_from_bytes, parse_idx_images, parse_idx_labels, synthetic_task, write_idx_images, write_idx_labels, SyntheticKind};
use widthlab::probes::{collapse_statistic, fit_scaling_exponent, numerical_rank};
use widthlab::Target;

fn idx_pair() -> (Vec<u8>, Vec<u8>) {
    let imgs: Vec<Vec<u8>> = (0..3u8).map(|k| (0..6u8).map(|i| k * 40 + i).collect()).collect();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    write_idx_images(&mut a, 2, 3, &imgs).unwrap();
    write_idx_labels(&mut b, &[7, 0, 9]).unwrap();
    (a, b)
}

#[test]
fn idx_header_layout() {
    let (a, b) = idx_pair();
    assert_eq!(&a[..16], &[0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 3]);
    assert_eq!(&b[..8], &[0, 0, 8, 1, 0, 0, 0, 3]);
    let (r, c, px) = parse_idx_images(&a).unwrap();
    assert_eq!((r, c, px.len()), (2, 3, 3));
    assert_eq!(px[2], vec![80, 81, 82, 83, 84, 85]);
    assert_eq!(parse_idx_labels(&b).unwrap(), vec![7, 0, 9]);
}

#[test]
fn idx_errors() {
    let (a, b) = idx_pair();
    assert!(parse_idx_images(&a[..a.len() - 1]).is_err());
    assert!(parse_idx_images(&a[..10]).is_err());
    assert!(parse_idx_images(&b).is_err());
    assert!(parse_idx_labels(&a).is_err());
    assert!(parse_idx_labels(&b[..9]).is_err());
    let mut two = Vec::new();
    write_idx_labels(&mut two, &[1, 2]).unwrap();
    assert!(mnist_from_bytes(&a, &two).is_err());
    let mut big = Vec::new();
    write_idx_labels(&mut big, &[1, 2, 10]).unwrap();
    assert!(mnist_from_bytes(&a, &big).is_err());
}

#[test]
fn mnist_pixels_scaled_to_unit_interval() {
    let (a, b) = idx_pair();
    let ds = mnist_from_bytes(&a, &b).unwrap();
    assert_eq!((ds.len(), ds.d, ds.classes), (3, 6, Some(10)));
    assert_eq!(ds.targets[0], Target::Class(7));
    assert!((ds.inputs[1][0] - 40.0 / 255.0).abs() < 1e-15);
}

#[test]
fn bundled_subset_loads() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-subset/");
    let ds = widthlab::data::load_mnist_idx(
        std::path::Path::new(&format!("{root}images-idx3-ubyte.gz")),
        std::path::Path::new(&format!("{root}labels-idx1-ubyte.gz")),
    )
    .unwrap();
    assert_eq!(ds.d, 784);
    assert!(ds.len() >= 5000);
    assert!(ds.inputs.iter().take(100).all(|x| x.iter().all(|&v| (0.0..=1.0).contains(&v))));
}

#[test]
fn synthetic_task_properties() {
    let ds = synthetic_task(16, 64, 0, SyntheticKind::TwoClass).unwrap();
    assert_eq!(ds.len(), 64);
    assert!(ds.targets.iter().all(|t| matches!(t, Target::Scalar(y) if y.abs() == 1.0)));
    let norm2: f64 = ds.inputs.iter().map(|x| x.norm_squared()).sum::<f64>() / 64.0;
    assert!((norm2 - 1.0).abs() < 0.2, "{norm2}");
    assert!(ds.inputs[0].dot(&ds.inputs[1]).abs() > 0.0);
    assert_eq!(ds, synthetic_task(16, 64, 0, SyntheticKind::TwoClass).unwrap());
    let reg = synthetic_task(16, 8, 0, SyntheticKind::GaussRegression).unwrap();
    assert!(reg.targets.iter().all(|t| matches!(t, Target::Scalar(y) if y.abs() < 1.0)));
    assert!(synthetic_task(0, 8, 0, SyntheticKind::TwoClass).is_err());
}

#[test]
fn batch_counts() {
    assert_eq!(batches(1000, 512, 0, 1).unwrap().len(), 1);
    assert_eq!(batches(1000, 100, 0, 3).unwrap().len(), 30);
    assert!(batches(10, 11, 0, 1).is_err());
    assert!(batches(10, 0, 0, 1).is_err());
    assert_eq!(batches(50, 7, 4, 2).unwrap(), batches(50, 7, 4, 2).unwrap());
}

#[test]
fn rank_frozen_cases() {
    assert_eq!(numerical_rank(&DMatrix::identity(12, 12), 12).unwrap(), 12);
    let u = DVector::from_fn(30, |i, _| i as f64 + 1.0);
    let v = DVector::from_fn(40, |i, _| (i as f64).sin() + 2.0);
    assert_eq!(numerical_rank(&(&u * v.transpose()), 30).unwrap(), 1);
    assert_eq!(numerical_rank(&DMatrix::zeros(5, 5), 5).unwrap(), 0);
    let mut m = DMatrix::identity(4, 4);
    m[(0, 0)] = f64::NAN;
    assert!(numerical_rank(&m, 4).is_err());
    // A singular value below sigma_max * m * 1e-7 does not count.
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-3, 1e-7]));
    assert_eq!(numerical_rank(&d, 100).unwrap(), 2);
}

#[test]
fn collapse_frozen_cases() {
    assert_eq!(collapse_statistic(&DMatrix::from_element(6, 6, 2.5)), 0.0);
    let m = DMatrix::from_row_slice(1, 4, &[1.0, 3.0, 1.0, 3.0]);
    assert!((collapse_statistic(&m) - 0.5).abs() < 1e-15);
}

#[test]
fn fit_frozen_cases() {
    let w = [64.0, 256.0, 1024.0, 4096.0];
    let v: Vec<f64> = w.iter().map(|m: &f64| 3.0 * m.powf(-0.5)).collect();
    let f = fit_scaling_exponent(&w, &v).unwrap();
    assert!((f.slope + 0.5).abs() < 1e-12 && (f.intercept - 3f64.ln()).abs() < 1e-12 && f.residual < 1e-12);
    assert!(fit_scaling_exponent(&w[..2], &v[..2]).is_err());
    assert!(fit_scaling_exponent(&w, &[1.0, 0.0, 1.0, 1.0]).is_err());
    assert!(fit_scaling_exponent(&w, &v[..3]).is_err());
}
