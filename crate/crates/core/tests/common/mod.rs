#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use volnet::linalg::companion_radius;
use volnet::panel::TimePanel;

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn iid_panel(rng: &mut ChaCha8Rng, n: usize, t: usize) -> TimePanel {
    TimePanel::from_values(normal_matrix(rng, n, t)).unwrap()
}

/// Random VAR(p) rescaled so the companion spectral radius equals `radius`.
pub fn stable_var(rng: &mut ChaCha8Rng, n: usize, p: usize, radius: f64) -> Vec<DMatrix<f64>> {
    let mut coefs: Vec<DMatrix<f64>> = (0..p).map(|_| normal_matrix(rng, n, n) / n as f64).collect();
    let r = companion_radius(&coefs);
    let c = radius / r;
    for (k, f) in coefs.iter_mut().enumerate() {
        *f *= c.powi(k as i32 + 1);
    }
    coefs
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = normal_matrix(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * n as f64
}

/// F1 score of the nonzero pattern of `est` against `truth`, skipping the
/// diagonal when `off_diagonal` is set.
pub fn support_f1(est: &[DMatrix<f64>], truth: &[DMatrix<f64>], off_diagonal: bool) -> f64 {
    let n = truth[0].nrows();
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for k in 0..truth.len().max(est.len()) {
        for i in 0..n {
            for j in 0..n {
                if off_diagonal && i == j {
                    continue;
                }
                let t = truth.get(k).is_some_and(|m| m[(i, j)] != 0.0);
                let e = est.get(k).is_some_and(|m| m[(i, j)] != 0.0);
                match (t, e) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fnn += 1,
                    _ => {}
                }
            }
        }
    }
    if tp + fp + fnn == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fnn) as f64
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
