//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Sample covariance of a panel stored as series × time, demeaned, divided by T.
pub fn sample_covariance(values: &DMatrix<f64>) -> DMatrix<f64> {
    let t = values.ncols();
    let mut centered = values.clone();
    for mut row in centered.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    let mut cov = &centered * centered.transpose();
    cov /= t as f64;
    symmetrize(&mut cov);
    cov
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in idx.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Companion matrix of the VAR `x_t = sum_k coefs[k] x_{t-k-1} + e_t`.
pub fn companion(coefs: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = coefs.len();
    let d = coefs.first().map_or(0, |c| c.nrows());
    let mut comp = DMatrix::zeros(d * p, d * p);
    for (k, c) in coefs.iter().enumerate() {
        comp.view_mut((0, k * d), (d, d)).copy_from(c);
    }
    for k in 1..p {
        for i in 0..d {
            comp[(k * d + i, (k - 1) * d + i)] = 1.0;
        }
    }
    comp
}

/// Spectral radius of the companion matrix; zero for an empty lag list.
pub fn companion_radius(coefs: &[DMatrix<f64>]) -> f64 {
    if coefs.is_empty() || coefs[0].nrows() == 0 {
        return 0.0;
    }
    let comp = companion(coefs);
    if comp.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    comp.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Cholesky factor, retrying once with `ridge_rel * trace / n` on the diagonal.
/// The flag reports whether the ridge was needed.
pub fn cholesky_with_ridge(m: &DMatrix<f64>, ridge_rel: f64) -> Result<(DMatrix<f64>, bool)> {
    if let Some(ch) = Cholesky::<f64, Dyn>::new(m.clone()) {
        return Ok((ch.l(), false));
    }
    let n = m.nrows().max(1);
    let ridge = ridge_rel * (m.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut r = m.clone();
    for i in 0..m.nrows() {
        r[(i, i)] += ridge;
    }
    Cholesky::<f64, Dyn>::new(r)
        .map(|ch| (ch.l(), true))
        .ok_or_else(|| Error::Singular("covariance is not positive definite".into()))
}

/// Inverse of a symmetric positive (semi)definite matrix; adds a ridge of
/// `ridge_rel * trace / n` when the condition number exceeds `max_cond`.
pub fn spd_inverse(m: &DMatrix<f64>, max_cond: f64, ridge_rel: f64) -> Result<(DMatrix<f64>, bool)> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    let mut work = m.clone();
    let mut repaired = false;
    if !(min > 0.0) || max / min > max_cond {
        let ridge = ridge_rel * (m.trace() / n.max(1) as f64).abs().max(f64::MIN_POSITIVE);
        for i in 0..n {
            work[(i, i)] += ridge;
        }
        repaired = true;
    }
    let ch = Cholesky::<f64, Dyn>::new(work)
        .ok_or_else(|| Error::Singular("matrix not positive definite after ridge".into()))?;
    let mut inv = ch.inverse();
    symmetrize(&mut inv);
    Ok((inv, repaired))
}

/// Linear-interpolation quantile of already sorted data, `p` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        len => {
            let pos = p.clamp(0.0, 1.0) * (len - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let da = a[i] - ma;
        let db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
