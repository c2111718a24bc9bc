//! Partial correlation network of VAR residuals, eigenvector centrality, and
//! the centrality-ordered Cholesky factor.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_ridge, sample_covariance};
use crate::panel::TimePanel;
use crate::solver::{solve, Design, Penalty, SolverOptions};
use crate::sparse_var::bic;

#[derive(Debug, Clone)]
pub struct PcnConfig {
    pub lambda_grid_size: usize,
    pub lambda_min_ratio: f64,
    pub solver: SolverOptions,
}

impl Default for PcnConfig {
    fn default() -> Self {
        PcnConfig {
            lambda_grid_size: 30,
            lambda_min_ratio: 1e-3,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pcn {
    /// Symmetric partial correlations, zero diagonal.
    pub weights: DMatrix<f64>,
    /// `beta[(i, j)]`: coefficient of series `j` in the regression of `i`.
    pub beta: DMatrix<f64>,
    /// BIC-selected lambda per node.
    pub lambdas: Vec<f64>,
    /// Series with degenerate variance, left unconnected.
    pub dropped: Vec<usize>,
}

impl Pcn {
    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    /// Fraction of nonzero off-diagonal pairs.
    pub fn density(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        let nz = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.weights[(i, j)] != 0.0)
            .count();
        nz as f64 / (n * n - n) as f64
    }
}

/// AND-rule combination `sgn(b_ij) sqrt(b_ij b_ji)` of two node-wise coefficients.
pub fn and_rule(b_ij: f64, b_ji: f64) -> f64 {
    if b_ij == 0.0 || b_ji == 0.0 || b_ij.signum() != b_ji.signum() {
        0.0
    } else {
        (b_ij.signum() * (b_ij * b_ji).sqrt()).clamp(-1.0, 1.0)
    }
}

pub fn estimate_pcn(residuals: &TimePanel) -> Result<Pcn> {
    estimate_pcn_with(residuals, &PcnConfig::default())
}

/// Node-wise lasso of each residual series on all the others, BIC per node.
pub fn estimate_pcn_with(residuals: &TimePanel, cfg: &PcnConfig) -> Result<Pcn> {
    let n = residuals.n();
    let t = residuals.t();
    if cfg.lambda_grid_size == 0 || !(cfg.lambda_min_ratio > 0.0 && cfg.lambda_min_ratio <= 1.0) {
        return Err(Error::InvalidParameter("invalid PCN lambda grid".into()));
    }
    let v = &residuals.values;
    let moments = v * v.transpose() / t as f64;
    let scale = (0..n).map(|i| moments[(i, i)]).fold(0.0, f64::max);
    let dropped: Vec<usize> = (0..n)
        .filter(|&i| !(moments[(i, i)] > 1e-12 * scale.max(f64::MIN_POSITIVE)))
        .collect();
    let kept: Vec<usize> = (0..n).filter(|i| !dropped.contains(i)).collect();

    let fits: Vec<(usize, Vec<(usize, f64)>, f64)> = kept
        .par_iter()
        .map(|&i| {
            let others: Vec<usize> = kept.iter().copied().filter(|&j| j != i).collect();
            let raw = DMatrix::from_fn(others.len(), others.len(), |a, b| moments[(others[a], others[b])]);
            let design = Design::from_gram(&raw, t, true);
            let xty: Vec<f64> = others.iter().map(|&j| moments[(j, i)]).collect();
            let resp = design.response(&xty, moments[(i, i)]);
            let pen = Penalty::Coordinate { alpha: 1.0, weights: None };
            let lmax = pen.lambda_max(&design, &resp);
            let mut best = (f64::INFINITY, vec![0.0; others.len()], lmax);
            let mut warm: Option<Vec<f64>> = None;
            if lmax > 0.0 && !others.is_empty() {
                for k in 0..cfg.lambda_grid_size {
                    let frac = if cfg.lambda_grid_size == 1 {
                        0.0
                    } else {
                        k as f64 / (cfg.lambda_grid_size - 1) as f64
                    };
                    let lam = lmax * cfg.lambda_min_ratio.powf(frac);
                    let sol = solve(&design, &resp, &pen, lam, warm.as_deref(), &cfg.solver);
                    let b = bic(t, design.mse(&resp, &sol.coefs), sol.nonzeros());
                    if b < best.0 {
                        best = (b, sol.coefs.clone(), lam);
                    }
                    warm = Some(sol.coefs);
                }
            }
            let raw_coefs = design.unstandardize(&best.1);
            (i, others.into_iter().zip(raw_coefs).collect(), best.2)
        })
        .collect();

    let mut beta = DMatrix::zeros(n, n);
    let mut lambdas = vec![f64::NAN; n];
    for (i, coefs, lam) in fits {
        lambdas[i] = lam;
        for (j, b) in coefs {
            beta[(i, j)] = b;
        }
    }
    let mut weights = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let r = and_rule(beta[(i, j)], beta[(j, i)]);
            weights[(i, j)] = r;
            weights[(j, i)] = r;
        }
    }
    Ok(Pcn {
        weights,
        beta,
        lambdas,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CentralityMode {
    /// Entrywise absolute weights.
    Unsigned,
    /// Weights as given; nodes ranked by the magnitude of their score.
    Signed,
}

impl std::str::FromStr for CentralityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unsigned" => Ok(CentralityMode::Unsigned),
            "signed" => Ok(CentralityMode::Signed),
            other => Err(Error::InvalidParameter(format!("unknown centrality mode `{other}`"))),
        }
    }
}

/// Which eigenvector a directed network is scored by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Orientation {
    /// Left eigenvector: influence as a source.
    Left,
    /// Right eigenvector: exposure as a receiver.
    Right,
}

#[derive(Debug, Clone, Serialize)]
pub struct CentralityRanking {
    /// Unit L1 norm, largest-modulus entry positive.
    pub scores: Vec<f64>,
    /// Node indices, most central first.
    pub order: Vec<usize>,
    pub mode: CentralityMode,
    /// Power iteration failed and a full eigendecomposition was used.
    pub fallback: bool,
}

impl CentralityRanking {
    /// Position of each node in `order`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.order.len()];
        for (pos, &i) in self.order.iter().enumerate() {
            r[i] = pos;
        }
        r
    }
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;

fn normalize(x: &mut DVector<f64>) {
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    if l1 > 0.0 {
        *x /= l1;
    }
    let pivot = x.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
    if pivot < 0.0 {
        x.neg_mut();
    }
}

fn power_iteration(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = m.nrows();
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.618_033_988_75).fract());
    normalize(&mut x);
    for _ in 0..POWER_MAX_ITER {
        let mut next = m * &x;
        normalize(&mut next);
        let diff = (&next - &x).abs().sum();
        x = next;
        if diff < POWER_TOL {
            return Some(x);
        }
    }
    None
}

fn full_eigen_leading(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    let sym = (a - a.transpose()).amax() == 0.0;
    let mut x = if sym {
        let eig = nalgebra::SymmetricEigen::new(a.clone());
        let k = eig.eigenvalues.imax();
        eig.eigenvectors.column(k).into_owned()
    } else {
        let lambda = a
            .complex_eigenvalues()
            .iter()
            .filter(|z| z.im.abs() <= 1e-9 * z.norm().max(1.0))
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        if !lambda.is_finite() {
            return Err(Error::Numerical("no real leading eigenvalue".into()));
        }
        let shifted = a - DMatrix::identity(n, n) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Numerical("SVD failed in centrality fallback".into()))?;
        let k = svd.singular_values.imin();
        v_t.row(k).transpose()
    };
    normalize(&mut x);
    Ok(x)
}

pub fn eigenvector_centrality(
    weights: &DMatrix<f64>,
    mode: CentralityMode,
    directed: bool,
) -> Result<CentralityRanking> {
    eigenvector_centrality_oriented(weights, mode, directed, Orientation::Left)
}

/// Leading eigenvector of the (absolute) weight matrix, by power iteration on
/// `W + s I` with `s` the largest absolute row sum.
pub fn eigenvector_centrality_oriented(
    weights: &DMatrix<f64>,
    mode: CentralityMode,
    directed: bool,
    orientation: Orientation,
) -> Result<CentralityRanking> {
    let n = weights.nrows();
    if n == 0 || weights.ncols() != n {
        return Err(Error::InvalidParameter("centrality needs a nonempty square matrix".into()));
    }
    let peak = weights.amax();
    if peak == 0.0 || !peak.is_finite() {
        return Err(Error::InvalidParameter("centrality of an all-zero matrix".into()));
    }
    let mut a = match mode {
        CentralityMode::Unsigned => weights.abs(),
        CentralityMode::Signed => weights.clone(),
    };
    a /= peak;
    if directed && orientation == Orientation::Left {
        a.transpose_mut();
    }
    let shift = a.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
    let shifted = &a + DMatrix::identity(n, n) * shift;
    let (x, fallback) = match power_iteration(&shifted) {
        Some(x) => (x, false),
        None => (full_eigen_leading(&a)?, true),
    };
    let scores: Vec<f64> = x.iter().copied().collect();
    let keys: Vec<f64> = match mode {
        CentralityMode::Unsigned => scores.clone(),
        CentralityMode::Signed => scores.iter().map(|v| v.abs()).collect(),
    };
    let top = keys.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let quantized: Vec<i64> = keys.iter().map(|k| (k / top * 1e9).round() as i64).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| quantized[j].cmp(&quantized[i]).then(i.cmp(&j)));
    Ok(CentralityRanking {
        scores,
        order,
        mode,
        fallback,
    })
}

#[derive(Debug, Clone)]
pub struct CholeskiFactor {
    /// Lower triangular, in ranked order.
    pub r: DMatrix<f64>,
    /// `permutation[a]` is the original index of ranked position `a`.
    pub permutation: Vec<usize>,
    /// Sample covariance of the permuted residuals.
    pub covariance: DMatrix<f64>,
    pub ridged: bool,
}

pub fn order_and_choleski(residuals: &TimePanel, ranking: &CentralityRanking) -> Result<CholeskiFactor> {
    let n = residuals.n();
    let mut seen = vec![false; n];
    if ranking.order.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: ranking.order.len(),
        });
    }
    for &i in &ranking.order {
        if i >= n || seen[i] {
            return Err(Error::InvalidParameter("ranking is not a permutation".into()));
        }
        seen[i] = true;
    }
    let permuted = residuals.values.select_rows(ranking.order.iter());
    let cov = sample_covariance(&permuted);
    choleski_of(cov, ranking.order.clone())
}

/// Cholesky factor of an already-permuted covariance.
pub fn choleski_of(cov: DMatrix<f64>, permutation: Vec<usize>) -> Result<CholeskiFactor> {
    let (r, ridged) = cholesky_with_ridge(&cov, 1e-10)?;
    Ok(CholeskiFactor {
        r,
        permutation,
        covariance: cov,
        ridged,
    })
}
