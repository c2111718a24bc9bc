//! Lag-window spectral density estimation and frequency-domain tools.
//!
//! Frequencies live on the grid `theta_h = pi * h / M`. Only `h = 0..=M` is
//! stored; negative frequencies are obtained by conjugation.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Cholesky, Complex, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::panel::TimePanel;

pub type C64 = Complex<f64>;

/// Upper bound on the memory a spectral grid may occupy.
pub const SPECTRAL_MEMORY_LIMIT: usize = 8 << 30;

const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SpectralDensity {
    /// Lag-window bandwidth; zero for spectra not estimated from data.
    pub bandwidth: usize,
    /// Grid size `M`.
    pub grid_size: usize,
    /// Number of observations behind the estimate.
    pub sample_size: usize,
    /// `matrices[h]` is the spectral matrix at `theta_h`, `h = 0..=M`.
    pub matrices: Vec<DMatrix<C64>>,
}

impl SpectralDensity {
    pub fn from_matrices(
        matrices: Vec<DMatrix<C64>>,
        sample_size: usize,
    ) -> Result<SpectralDensity> {
        if matrices.len() < 2 {
            return Err(Error::InvalidParameter("spectral grid needs M >= 1".into()));
        }
        let n = matrices[0].nrows();
        for m in &matrices {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: m.nrows().max(m.ncols()),
                });
            }
            check_hermitian(m)?;
        }
        Ok(SpectralDensity {
            bandwidth: 0,
            grid_size: matrices.len() - 1,
            sample_size,
            matrices,
        })
    }

    /// Evaluates `f(theta)` on the grid `h = 0..=M`.
    pub fn from_fn(
        grid_size: usize,
        sample_size: usize,
        f: impl Fn(f64) -> DMatrix<C64>,
    ) -> Result<SpectralDensity> {
        let mats = (0..=grid_size)
            .map(|h| f(PI * h as f64 / grid_size as f64))
            .collect();
        Self::from_matrices(mats, sample_size)
    }

    pub fn n(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn frequency(&self, h: i64) -> f64 {
        PI * h as f64 / self.grid_size as f64
    }

    /// Spectral matrix at `theta_h` for `h` in `-M..=M`.
    pub fn at(&self, h: i64) -> DMatrix<C64> {
        let idx = h.unsigned_abs() as usize;
        assert!(idx <= self.grid_size, "frequency index {h} outside grid");
        if h >= 0 {
            self.matrices[idx].clone()
        } else {
            self.matrices[idx].map(|z| z.conj())
        }
    }

    /// Quadrature weight of grid point `h` (0..=M) when averaging over
    /// `[-pi, pi)`: the 2M distinct frequencies each get `1 / 2M`.
    pub fn grid_weight(&self, h: usize) -> f64 {
        let m = self.grid_size as f64;
        if h == 0 || h == self.grid_size {
            0.5 / m
        } else {
            1.0 / m
        }
    }

    /// Sub-spectrum for the given series indices.
    pub fn select(&self, idx: &[usize]) -> SpectralDensity {
        let matrices = self
            .matrices
            .iter()
            .map(|m| DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])]))
            .collect();
        SpectralDensity {
            bandwidth: self.bandwidth,
            grid_size: self.grid_size,
            sample_size: self.sample_size,
            matrices,
        }
    }
}

fn check_hermitian(m: &DMatrix<C64>) -> Result<()> {
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    if worst > HERMITIAN_TOL * scale {
        Err(Error::NotHermitian(worst))
    } else {
        Ok(())
    }
}

/// Default lag-window bandwidth `floor(sqrt(T))`.
pub fn default_bandwidth(t: usize) -> usize {
    ((t as f64).sqrt().floor() as usize).max(1)
}

/// Bartlett lag window.
pub fn bartlett(x: f64) -> f64 {
    (1.0 - x.abs()).max(0.0)
}

/// Sample autocovariance `(1/T) sum_t y_{t+k} y_t'` of a demeaned panel.
pub fn sample_autocovariance(centered: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let t = centered.ncols();
    let lead = centered.columns(k, t - k);
    let lag = centered.columns(0, t - k);
    (lead * lag.transpose()) / t as f64
}

fn demeaned(values: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = values.clone();
    for mut row in out.row_iter_mut() {
        let m = row.mean();
        row.add_scalar_mut(-m);
    }
    out
}

/// Bartlett lag-window estimator
/// `Sigma(theta) = (1/2pi) sum_{|k|<B} w(k/B) Gamma_k e^{-ik theta}`.
pub fn estimate_spectral_density(
    panel: &TimePanel,
    bandwidth: usize,
    grid_size: usize,
) -> Result<SpectralDensity> {
    let (n, t) = panel.values.shape();
    if bandwidth == 0 || grid_size == 0 {
        return Err(Error::InvalidParameter(
            "bandwidth and grid size must be positive".into(),
        ));
    }
    if bandwidth >= t {
        return Err(Error::InvalidParameter(format!(
            "bandwidth {bandwidth} must be smaller than T = {t}"
        )));
    }
    let bytes = n * n * (grid_size + 1) * std::mem::size_of::<C64>();
    if bytes > SPECTRAL_MEMORY_LIMIT {
        return Err(Error::MemoryLimit {
            bytes,
            limit: SPECTRAL_MEMORY_LIMIT,
        });
    }
    let y = demeaned(&panel.values);
    let weighted: Vec<DMatrix<f64>> = (0..bandwidth)
        .into_par_iter()
        .map(|k| sample_autocovariance(&y, k) * bartlett(k as f64 / bandwidth as f64))
        .collect();

    let matrices = (0..=grid_size)
        .into_par_iter()
        .map(|h| {
            let theta = PI * h as f64 / grid_size as f64;
            let mut re = weighted[0].clone();
            let mut im = DMatrix::<f64>::zeros(n, n);
            for (k, g) in weighted.iter().enumerate().skip(1) {
                let (s, c) = (k as f64 * theta).sin_cos();
                let gt = g.transpose();
                re += (g + &gt) * c;
                // e^{-ik theta} Gamma_k + e^{ik theta} Gamma_k'
                im -= (g - &gt) * s;
            }
            DMatrix::from_fn(n, n, |i, j| {
                let r = 0.5 * (re[(i, j)] + re[(j, i)]);
                let m = 0.5 * (im[(i, j)] - im[(j, i)]);
                C64::new(r, m) / (2.0 * PI)
            })
        })
        .collect();

    Ok(SpectralDensity {
        bandwidth,
        grid_size,
        sample_size: t,
        matrices,
    })
}

/// Per-frequency eigenvalues (decreasing) and leading eigenvectors.
#[derive(Debug, Clone)]
pub struct DynamicEigenStructure {
    pub eigenvalues: Vec<DVector<f64>>,
    /// n × q per frequency, phase-normalized.
    pub eigenvectors: Vec<DMatrix<C64>>,
}

impl DynamicEigenStructure {
    /// Frequency-averaged i-th eigenvalue, averaging over `[-pi, pi)`.
    pub fn mean_eigenvalues(&self, spec: &SpectralDensity) -> Vec<f64> {
        average_over_grid(spec, &self.eigenvalues)
    }

    /// Comma-separated dump: `frequency,lambda_1,...,lambda_n`.
    pub fn to_csv(&self, spec: &SpectralDensity) -> String {
        let mut out = String::from("frequency");
        for i in 0..spec.n() {
            let _ = write!(out, ",lambda_{}", i + 1);
        }
        out.push('\n');
        for (h, vals) in self.eigenvalues.iter().enumerate() {
            let _ = write!(out, "{}", spec.frequency(h as i64));
            for v in vals.iter() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn average_over_grid(spec: &SpectralDensity, values: &[DVector<f64>]) -> Vec<f64> {
    let n = values[0].len();
    let mut mean = vec![0.0; n];
    for (h, vals) in values.iter().enumerate() {
        let w = spec.grid_weight(h);
        for i in 0..n {
            mean[i] += w * vals[i];
        }
    }
    mean
}

fn hermitian_eigen_desc(m: &DMatrix<C64>, q: usize) -> (DVector<f64>, DMatrix<C64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, q);
    for (dst, &src) in idx.iter().take(q).enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let (arg, _) = col
            .iter()
            .enumerate()
            .fold((0, -1.0), |(bi, bv), (i, z)| if z.norm() > bv { (i, z.norm()) } else { (bi, bv) });
        let pivot = col[arg];
        if pivot.norm() > 0.0 {
            let phase = pivot.conj() / pivot.norm();
            col *= phase;
            col[arg] = C64::new(col[arg].re, 0.0);
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

pub fn dynamic_eigen(spec: &SpectralDensity, q: usize) -> Result<DynamicEigenStructure> {
    if q > spec.n() {
        return Err(Error::InvalidParameter(format!(
            "q = {q} exceeds n = {}",
            spec.n()
        )));
    }
    for m in &spec.matrices {
        check_hermitian(m)?;
    }
    let (eigenvalues, eigenvectors) = spec
        .matrices
        .par_iter()
        .map(|m| hermitian_eigen_desc(m, q))
        .unzip();
    Ok(DynamicEigenStructure {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigenvalues only (decreasing) at every stored frequency.
pub fn dynamic_eigenvalues(spec: &SpectralDensity) -> Vec<DVector<f64>> {
    spec.matrices
        .par_iter()
        .map(|m| {
            let mut v: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
            v.sort_by(|a, b| b.total_cmp(a));
            DVector::from_vec(v)
        })
        .collect()
}

/// Frequency-averaged eigenvalues of a spectral density, decreasing.
pub fn mean_dynamic_eigenvalues(spec: &SpectralDensity) -> Vec<f64> {
    average_over_grid(spec, &dynamic_eigenvalues(spec))
}

/// Rank-q spectral projection `P_q Lambda_q P_q*` at each frequency.
pub fn common_spectrum_projection(spec: &SpectralDensity, q: usize) -> Result<SpectralDensity> {
    let n = spec.n();
    if q == 0 || q >= n {
        return Err(Error::InvalidParameter(format!(
            "projection rank q = {q} must satisfy 0 < q < n = {n}"
        )));
    }
    let eig = dynamic_eigen(spec, q)?;
    let matrices = eig
        .eigenvalues
        .par_iter()
        .zip(eig.eigenvectors.par_iter())
        .map(|(vals, vecs)| {
            let mut scaled = vecs.clone();
            for j in 0..q {
                let lam = vals[j].max(0.0);
                scaled.column_mut(j).scale_mut(lam);
            }
            let mut m = &scaled * vecs.adjoint();
            for i in 0..n {
                m[(i, i)].im = 0.0;
                for j in (i + 1)..n {
                    let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                    m[(i, j)] = v;
                    m[(j, i)] = v.conj();
                }
            }
            m
        })
        .collect();
    Ok(SpectralDensity {
        bandwidth: spec.bandwidth,
        grid_size: spec.grid_size,
        sample_size: spec.sample_size,
        matrices,
    })
}

/// Autocovariances `Gamma_0..Gamma_L`, with `Gamma_k = E[x_t x_{t-k}']`;
/// negative lags are transposes.
#[derive(Debug, Clone)]
pub struct AutocovarianceSequence {
    pub lags: Vec<DMatrix<f64>>,
    pub sample_size: usize,
}

impl AutocovarianceSequence {
    pub fn max_lag(&self) -> usize {
        self.lags.len() - 1
    }

    pub fn n(&self) -> usize {
        self.lags[0].nrows()
    }

    pub fn get(&self, k: isize) -> DMatrix<f64> {
        if k >= 0 {
            self.lags[k as usize].clone()
        } else {
            self.lags[(-k) as usize].transpose()
        }
    }

    pub fn select(&self, idx: &[usize]) -> AutocovarianceSequence {
        AutocovarianceSequence {
            lags: self
                .lags
                .iter()
                .map(|g| DMatrix::from_fn(idx.len(), idx.len(), |a, b| g[(idx[a], idx[b])]))
                .collect(),
            sample_size: self.sample_size,
        }
    }
}

/// Inverse Fourier transform over the 2M distinct grid frequencies:
/// `Gamma_k = (pi/M) sum_h Sigma(theta_h) e^{ik theta_h}`, with the
/// coincident endpoints `theta = +-pi` counted once.
pub fn autocovariances(spec: &SpectralDensity, max_lag: usize) -> Result<AutocovarianceSequence> {
    let m = spec.grid_size;
    if max_lag > m {
        return Err(Error::InvalidParameter(format!(
            "max lag {max_lag} exceeds grid size M = {m}"
        )));
    }
    let n = spec.n();
    let lags = (0..=max_lag)
        .into_par_iter()
        .map(|k| {
            let mut acc = DMatrix::<C64>::zeros(n, n);
            for h in 0..=m {
                let w = spec.grid_weight(h) * 2.0 * m as f64;
                let theta = PI * h as f64 / m as f64;
                let e = C64::from_polar(1.0, k as f64 * theta);
                let s = &spec.matrices[h];
                if h == 0 || h == m {
                    // Stored once; the mirrored point is the same frequency.
                    acc += s * (e * w);
                } else {
                    acc += s * e + s.map(|z| z.conj()) * e.conj();
                }
            }
            acc.map(|z| z.re * PI / m as f64)
        })
        .collect();
    Ok(AutocovarianceSequence {
        lags,
        sample_size: spec.sample_size,
    })
}

/// Partial spectral coherence at every stored frequency.
#[derive(Debug, Clone)]
pub struct PscField {
    pub matrices: Vec<DMatrix<C64>>,
    /// Whether a ridge was added before inverting `Sigma(theta_h)`.
    pub regularized: Vec<bool>,
}

pub fn partial_spectral_coherence(spec: &SpectralDensity) -> Result<PscField> {
    let n = spec.n();
    let results: Vec<Result<(DMatrix<C64>, bool)>> = spec
        .matrices
        .par_iter()
        .map(|s| {
            let min_eig = s
                .symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let mut work = s.clone();
            let mut ridge_fired = false;
            if !(min_eig > 1e-10) {
                let trace: f64 = (0..n).map(|i| s[(i, i)].re).sum();
                let ridge = 1e-8 * (trace / n as f64).abs().max(f64::MIN_POSITIVE);
                for i in 0..n {
                    work[(i, i)] += C64::new(ridge, 0.0);
                }
                ridge_fired = true;
            }
            let g = Cholesky::new(work)
                .ok_or_else(|| Error::Singular("spectral matrix not invertible".into()))?
                .inverse();
            let psc = DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    C64::new(1.0, 0.0)
                } else {
                    -g[(i, j)] / (g[(i, i)].re * g[(j, j)].re).sqrt()
                }
            });
            Ok((psc, ridge_fired))
        })
        .collect();
    let mut matrices = Vec::with_capacity(results.len());
    let mut regularized = Vec::with_capacity(results.len());
    for r in results {
        let (m, f) = r?;
        matrices.push(m);
        regularized.push(f);
    }
    Ok(PscField {
        matrices,
        regularized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise_panel(n: usize, t: usize, sd: f64, seed: u64) -> TimePanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = DMatrix::from_fn(n, t, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        TimePanel::from_values(v).unwrap()
    }

    fn random_psd(n: usize, rank: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
        let a = DMatrix::from_fn(n, rank, |_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        &a * a.adjoint()
    }

    #[test]
    fn white_noise_spectrum_is_flat() {
        let sd = 1.7;
        let panel = noise_panel(2, 10_000, sd, 3);
        let b = default_bandwidth(10_000);
        let spec = estimate_spectral_density(&panel, b, 2 * b).unwrap();
        let target = sd * sd / (2.0 * PI);
        for i in 0..2 {
            let mean: f64 = (0..=spec.grid_size)
                .map(|h| spec.grid_weight(h) * spec.matrices[h][(i, i)].re)
                .sum();
            assert!((mean - target).abs() < 0.1 * target, "{mean} vs {target}");
        }
    }

    #[test]
    fn zero_panel_gives_zero_spectrum() {
        let panel = TimePanel::from_values(DMatrix::zeros(3, 50)).unwrap();
        let spec = estimate_spectral_density(&panel, 5, 10).unwrap();
        assert!(spec.matrices.iter().all(|m| m.iter().all(|z| z.norm() == 0.0)));
    }

    #[test]
    fn estimate_is_hermitian_and_conjugate_symmetric() {
        let panel = noise_panel(4, 300, 1.0, 9);
        let spec = estimate_spectral_density(&panel, 12, 24).unwrap();
        for h in 0..=24i64 {
            let s = spec.at(h);
            assert_eq!(spec.at(-h), s.map(|z| z.conj()));
            assert!((&s - s.adjoint()).iter().all(|z| z.norm() < 1e-12));
        }
    }

    #[test]
    fn bandwidth_must_be_below_t() {
        let panel = noise_panel(2, 10, 1.0, 1);
        assert!(estimate_spectral_density(&panel, 10, 20).is_err());
    }

    #[test]
    fn eigen_of_diagonal_spectrum() {
        let spec = SpectralDensity::from_fn(8, 100, |_| {
            DMatrix::from_diagonal(&DVector::from_vec(vec![
                C64::new(1.0, 0.0),
                C64::new(3.0, 0.0),
                C64::new(2.0, 0.0),
            ]))
        })
        .unwrap();
        let eig = dynamic_eigen(&spec, 3).unwrap();
        for vals in &eig.eigenvalues {
            assert!((vals[0] - 3.0).abs() < 1e-12);
            assert!((vals[1] - 2.0).abs() < 1e-12);
            assert!((vals[2] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eigen_of_rank_one_spectrum() {
        let spec = SpectralDensity::from_fn(6, 100, |theta| {
            let v = DMatrix::from_column_slice(
                3,
                1,
                &[
                    C64::new(1.0, 0.0),
                    C64::from_polar(2.0, theta),
                    C64::from_polar(0.5, -theta),
                ],
            );
            &v * v.adjoint()
        })
        .unwrap();
        let eig = dynamic_eigen(&spec, 1).unwrap();
        for vals in &eig.eigenvalues {
            assert!((vals[0] - 5.25).abs() < 1e-10);
            assert!(vals[1].abs() < 1e-10 && vals[2].abs() < 1e-10);
        }
        // phase convention: largest-modulus entry is real positive
        for v in &eig.eigenvectors {
            let z = v[(1, 0)];
            assert!(z.re > 0.0 && z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn eigenvalues_preserve_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mats: Vec<_> = (0..=10).map(|_| random_psd(6, 6, &mut rng)).collect();
        let spec = SpectralDensity::from_matrices(mats, 100).unwrap();
        let eig = dynamic_eigen(&spec, 2).unwrap();
        for (m, vals) in spec.matrices.iter().zip(&eig.eigenvalues) {
            let tr: f64 = (0..6).map(|i| m[(i, i)].re).sum();
            assert!((vals.sum() - tr).abs() < 1e-8);
            assert!(vals.iter().all(|v| *v > -1e-8));
        }
    }

    #[test]
    fn non_hermitian_input_rejected() {
        let mut m = DMatrix::<C64>::identity(2, 2);
        m[(0, 1)] = C64::new(0.5, 0.0);
        assert!(matches!(
            SpectralDensity::from_matrices(vec![m.clone(), m], 10),
            Err(Error::NotHermitian(_))
        ));
    }

    #[test]
    fn projection_reproduces_low_rank_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mats: Vec<_> = (0..=12).map(|_| random_psd(5, 4, &mut rng)).collect();
        let spec = SpectralDensity::from_matrices(mats, 100).unwrap();
        let proj = common_spectrum_projection(&spec, 4).unwrap();
        for (a, b) in spec.matrices.iter().zip(&proj.matrices) {
            assert!((a - b).iter().all(|z| z.norm() < 1e-8));
        }

        let mats: Vec<_> = (0..=12).map(|_| random_psd(5, 1, &mut rng)).collect();
        let spec = SpectralDensity::from_matrices(mats, 100).unwrap();
        let proj = common_spectrum_projection(&spec, 1).unwrap();
        for (a, b) in spec.matrices.iter().zip(&proj.matrices) {
            assert!((a - b).iter().all(|z| z.norm() < 1e-10));
        }
    }

    #[test]
    fn projection_is_hermitian_psd_low_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mats: Vec<_> = (0..=8).map(|_| random_psd(6, 6, &mut rng)).collect();
        let spec = SpectralDensity::from_matrices(mats, 100).unwrap();
        let proj = common_spectrum_projection(&spec, 2).unwrap();
        for m in &proj.matrices {
            check_hermitian(m).unwrap();
            let mut v: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
            v.sort_by(|a, b| b.total_cmp(a));
            assert!(v.iter().all(|x| *x > -1e-8));
            assert!(v[2] < 1e-8 * v[0]);
        }
        assert!(common_spectrum_projection(&spec, 6).is_err());
    }

    #[test]
    fn flat_spectrum_inverts_to_white_noise() {
        let s2 = 2.5;
        let spec = SpectralDensity::from_fn(32, 100, |_| {
            DMatrix::<C64>::identity(3, 3) * C64::new(s2 / (2.0 * PI), 0.0)
        })
        .unwrap();
        let ac = autocovariances(&spec, 5).unwrap();
        assert!((&ac.lags[0] - DMatrix::identity(3, 3) * s2).amax() < 1e-12);
        for k in 1..=5 {
            assert!(ac.lags[k].amax() < 1e-6);
        }
        assert!(autocovariances(&spec, 33).is_err());
    }

    #[test]
    fn ar1_spectrum_round_trip() {
        let phi = 0.5;
        let spec = SpectralDensity::from_fn(512, 1000, |theta| {
            let d = C64::new(1.0, 0.0) - C64::from_polar(phi, -theta);
            DMatrix::from_element(1, 1, C64::new(1.0 / (2.0 * PI * d.norm_sqr()), 0.0))
        })
        .unwrap();
        let ac = autocovariances(&spec, 2).unwrap();
        let ratio = ac.lags[1][(0, 0)] / ac.lags[0][(0, 0)];
        assert!((ratio - phi).abs() < 1e-3);
        assert!((ac.lags[0][(0, 0)] - 1.0 / (1.0 - phi * phi)).abs() < 1e-6);
    }

    #[test]
    fn psc_examples() {
        let diag = SpectralDensity::from_fn(4, 100, |theta| {
            DMatrix::from_diagonal(&DVector::from_vec(vec![
                C64::new(1.0 + theta, 0.0),
                C64::new(2.0, 0.0),
                C64::new(0.5, 0.0),
            ]))
        })
        .unwrap();
        let psc = partial_spectral_coherence(&diag).unwrap();
        for m in &psc.matrices {
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        assert!(m[(i, j)].norm() < 1e-14);
                    }
                }
            }
        }

        let c = 0.3;
        let two = SpectralDensity::from_fn(4, 100, |_| {
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    C64::new(1.0, 0.0),
                    C64::new(c, 0.0),
                    C64::new(c, 0.0),
                    C64::new(1.0, 0.0),
                ],
            )
        })
        .unwrap();
        let psc = partial_spectral_coherence(&two).unwrap();
        for m in &psc.matrices {
            assert!((m[(0, 1)].norm() - c).abs() < 1e-12);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mats: Vec<_> = (0..=6).map(|_| random_psd(5, 7, &mut rng)).collect();
        let psc = partial_spectral_coherence(&SpectralDensity::from_matrices(mats, 10).unwrap())
            .unwrap();
        assert!(psc
            .matrices
            .iter()
            .all(|m| m.iter().all(|z| z.norm() <= 1.0 + 1e-8)));
    }

    #[test]
    fn psc_regularizes_singular_frequency() {
        let spec = SpectralDensity::from_fn(2, 10, |_| DMatrix::from_element(2, 2, C64::new(1.0, 0.0)))
            .unwrap();
        let psc = partial_spectral_coherence(&spec).unwrap();
        assert!(psc.regularized.iter().all(|r| *r));
    }
}
