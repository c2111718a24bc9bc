//! Moving-average filters, variance decompositions and the networks built from them.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::identify::CholeskiFactor;
use crate::linalg::{companion_radius, quantile_sorted};
use crate::panel::SectorMap;
use crate::sparse_var::SparseVarModel;

/// Truncated moving-average filter `D_0..D_h`, n × m per lag.
#[derive(Debug, Clone)]
pub struct VmaFilter {
    pub coefs: Vec<DMatrix<f64>>,
    pub shock_labels: Vec<String>,
    /// `permutation[a]` is the original index of the series at position `a`;
    /// `None` when rows are already in original order.
    pub permutation: Option<Vec<usize>>,
}

impl VmaFilter {
    pub fn horizon(&self) -> usize {
        self.coefs.len().saturating_sub(1)
    }

    pub fn n(&self) -> usize {
        self.coefs.first().map_or(0, |c| c.nrows())
    }

    pub fn shocks(&self) -> usize {
        self.coefs.first().map_or(0, |c| c.ncols())
    }
}

/// `D(L) = F(L)^{-1} R`: `D_0 = R`, `D_k = sum_{s=1..min(k,p)} F_s D_{k-s}`.
pub fn vma_from_var(coefs: &[DMatrix<f64>], impact: &DMatrix<f64>, horizon: usize) -> Vec<DMatrix<f64>> {
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(horizon + 1);
    out.push(impact.clone());
    for k in 1..=horizon {
        let mut d = DMatrix::zeros(impact.nrows(), impact.ncols());
        for s in 1..=k.min(coefs.len()) {
            d += &coefs[s - 1] * &out[k - s];
        }
        out.push(d);
    }
    out
}

/// Inverts a fitted VAR in the ranked ordering of the Cholesky factor.
pub fn invert_var(model: &SparseVarModel, chol: &CholeskiFactor, horizon: usize) -> Result<VmaFilter> {
    let n = model.n();
    if chol.r.nrows() != n || chol.permutation.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: chol.r.nrows(),
        });
    }
    let radius = model.radius();
    if !(radius < 1.0) {
        return Err(Error::Unstable(radius));
    }
    let perm = &chol.permutation;
    let permuted: Vec<DMatrix<f64>> = model
        .coefs
        .iter()
        .map(|f| DMatrix::from_fn(n, n, |a, b| f[(perm[a], perm[b])]))
        .collect();
    Ok(VmaFilter {
        coefs: vma_from_var(&permuted, &chol.r, horizon),
        shock_labels: perm.iter().map(|&i| format!("shock_{}", i + 1)).collect(),
        permutation: Some(perm.clone()),
    })
}

/// Stability-checked inversion of raw coefficients with a given impact matrix.
pub fn invert_coefs(coefs: &[DMatrix<f64>], impact: &DMatrix<f64>, horizon: usize) -> Result<VmaFilter> {
    let radius = companion_radius(coefs);
    if !(radius < 1.0) {
        return Err(Error::Unstable(radius));
    }
    Ok(VmaFilter {
        coefs: vma_from_var(coefs, impact, horizon),
        shock_labels: (1..=impact.ncols()).map(|j| format!("shock_{j}")).collect(),
        permutation: None,
    })
}

/// Forecast-error variance shares in percent; rows sum to 100.
#[derive(Debug, Clone)]
pub struct FevdMatrix {
    pub weights: DMatrix<f64>,
    pub horizon: usize,
    /// Ordering the rows and columns were computed in, if not the original.
    pub permutation: Option<Vec<usize>>,
}

impl FevdMatrix {
    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    /// Rows and columns mapped back to original series order.
    pub fn in_original_order(&self) -> FevdMatrix {
        match &self.permutation {
            Some(perm) if self.weights.is_square() => {
                let n = self.n();
                let mut w = DMatrix::zeros(n, n);
                for a in 0..n {
                    for b in 0..n {
                        w[(perm[a], perm[b])] = self.weights[(a, b)];
                    }
                }
                FevdMatrix {
                    weights: w,
                    horizon: self.horizon,
                    permutation: None,
                }
            }
            _ => self.clone(),
        }
    }
}

/// `w_ij = 100 sum_{k=0..h} d_{k,ij}^2 / sum_l sum_{k=0..h} d_{k,il}^2`, in filter order.
pub fn fevd(vma: &VmaFilter) -> Result<FevdMatrix> {
    let (n, m) = (vma.n(), vma.shocks());
    let mut acc = DMatrix::zeros(n, m);
    for d in &vma.coefs {
        acc += d.component_mul(d);
    }
    for i in 0..n {
        let total: f64 = acc.row(i).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ZeroRow(i));
        }
        acc.row_mut(i).scale_mut(100.0 / total);
    }
    Ok(FevdMatrix {
        weights: acc,
        horizon: vma.horizon(),
        permutation: vma.permutation.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NetworkKind {
    Lvdn,
    Lgcn,
    Pcn,
}

impl std::fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NetworkKind::Lvdn => "lvdn",
            NetworkKind::Lgcn => "lgcn",
            NetworkKind::Pcn => "pcn",
        })
    }
}

/// Weighted directed graph; `adjacency[(i, j)]` is the edge from `j` to `i`
/// for variance networks (share of `i` explained by `j`) and the coefficient
/// of `j` in the equation of `i` for Granger networks.
#[derive(Debug, Clone)]
pub struct Network {
    pub adjacency: DMatrix<f64>,
    pub labels: Vec<String>,
    pub sectors: Option<Vec<String>>,
    pub kind: NetworkKind,
}

impl Network {
    pub fn new(adjacency: DMatrix<f64>, labels: Vec<String>, kind: NetworkKind) -> Result<Network> {
        if !adjacency.is_square() || adjacency.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                actual: adjacency.nrows(),
            });
        }
        if adjacency.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("network weights must be finite".into()));
        }
        Ok(Network {
            adjacency,
            labels,
            sectors: None,
            kind,
        })
    }

    pub fn with_sectors(mut self, sectors: Option<Vec<String>>) -> Network {
        self.sectors = sectors;
        self
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Nonzero off-diagonal entries as `(row, col, weight)`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = self.adjacency[(i, j)];
                if i != j && w != 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// `#edges / (n^2 - n)`.
    pub fn density(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        self.edges().len() as f64 / (n * n - n) as f64
    }
}

/// Granger network with weights `sum_k F_k`.
pub fn lgcn(model: &SparseVarModel, labels: &[String]) -> Result<Network> {
    let n = model.n();
    let mut adj = DMatrix::zeros(n, n);
    for f in &model.coefs {
        adj += f;
    }
    Network::new(adj, labels.to_vec(), NetworkKind::Lgcn)
}

#[derive(Debug, Clone, Serialize)]
pub struct SectorDegrees {
    pub sector: String,
    pub size: usize,
    pub mean_from: f64,
    pub mean_to: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DegreeReport {
    /// Row sums excluding the diagonal.
    pub from: Vec<f64>,
    /// Column sums excluding the diagonal.
    pub to: Vec<f64>,
    pub total: f64,
    pub sectors: Vec<SectorDegrees>,
}

pub fn degrees(fevd: &FevdMatrix, sectors: &SectorMap) -> Result<DegreeReport> {
    degrees_of(&fevd.weights, sectors)
}

pub fn degrees_of(w: &DMatrix<f64>, sectors: &SectorMap) -> Result<DegreeReport> {
    let n = w.nrows();
    if !w.is_square() {
        return Err(Error::InvalidParameter("degrees need a square matrix".into()));
    }
    if sectors.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: sectors.n(),
        });
    }
    let from: Vec<f64> = (0..n).map(|i| w.row(i).sum() - w[(i, i)]).collect();
    let to: Vec<f64> = (0..n).map(|j| w.column(j).sum() - w[(j, j)]).collect();
    let total = if n > 0 { from.iter().sum::<f64>() / n as f64 } else { 0.0 };
    let sectors = sectors
        .names()
        .iter()
        .map(|name| {
            let members = sectors.members(name);
            let k = members.len() as f64;
            SectorDegrees {
                sector: name.clone(),
                size: members.len(),
                mean_from: members.iter().map(|&i| from[i]).sum::<f64>() / k,
                mean_to: members.iter().map(|&i| to[i]).sum::<f64>() / k,
            }
        })
        .collect();
    Ok(DegreeReport {
        from,
        to,
        total,
        sectors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ThresholdRule {
    /// Grid minimizer of the normalized reconstruction objective.
    Objective,
    /// Caller-supplied threshold.
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdPoint {
    /// Off-diagonal weight percentile, `None` for `tau = 0` or a fixed threshold.
    pub percentile: Option<f64>,
    pub tau: f64,
    pub objective: f64,
    pub density: f64,
}

#[derive(Debug, Clone)]
pub struct ThresholdResult {
    pub tau: f64,
    pub adjacency: DMatrix<f64>,
    pub curve: Vec<ThresholdPoint>,
    pub density: f64,
}

/// Percentiles scanned besides `tau = 0`.
pub const THRESHOLD_PERCENTILES: [f64; 11] = [50.0, 55.0, 60.0, 65.0, 70.0, 75.0, 80.0, 85.0, 90.0, 95.0, 99.0];

/// Zeroes off-diagonal entries below `tau`.
pub fn apply_threshold(w: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| {
        let v = w[(i, j)];
        if i != j && v < tau {
            0.0
        } else {
            v
        }
    })
}

fn off_diagonal_density(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    if n < 2 {
        return 0.0;
    }
    let nz = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && w[(i, j)] != 0.0)
        .count();
    nz as f64 / (n * n - n) as f64
}

/// Pseudo-inverse square root of a symmetric PSD matrix.
fn inv_sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let d = eig
        .eigenvalues
        .map(|v| if v > 1e-12 * top { 1.0 / v.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// `| N^{-1/2} W_tau W_tau' N^{-1/2} - I |_F` with `N = W W'`.
pub fn threshold_objective(w: &DMatrix<f64>, w_tau: &DMatrix<f64>) -> f64 {
    let root = inv_sqrt_psd(&(w * w.transpose()));
    let n = w.nrows();
    let m = &root * (w_tau * w_tau.transpose()) * &root - DMatrix::identity(n, n);
    m.norm()
}

pub fn threshold_lvdn(fevd: &FevdMatrix, rule: ThresholdRule) -> Result<ThresholdResult> {
    let w = &fevd.weights;
    if !w.is_square() {
        return Err(Error::InvalidParameter("thresholding needs a square FEVD".into()));
    }
    let n = w.nrows();
    let point = |percentile: Option<f64>, tau: f64| {
        let wt = apply_threshold(w, tau);
        ThresholdPoint {
            percentile,
            tau,
            objective: threshold_objective(w, &wt),
            density: off_diagonal_density(&wt),
        }
    };
    let curve: Vec<ThresholdPoint> = match rule {
        ThresholdRule::Fixed(tau) => {
            if !tau.is_finite() || tau < 0.0 {
                return Err(Error::InvalidParameter(format!("threshold {tau} must be >= 0")));
            }
            vec![point(None, tau)]
        }
        ThresholdRule::Objective => {
            let mut off: Vec<f64> = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| i != j)
                .map(|(i, j)| w[(i, j)])
                .collect();
            off.sort_by(f64::total_cmp);
            let mut pts = vec![point(None, 0.0)];
            for &pc in &THRESHOLD_PERCENTILES {
                let tau = if off.is_empty() { 0.0 } else { quantile_sorted(&off, pc / 100.0) };
                pts.push(point(Some(pc), tau));
            }
            pts
        }
    };
    let best = curve
        .iter()
        .enumerate()
        .fold(0, |b, (k, p)| if p.objective < curve[b].objective { k } else { b });
    let tau = curve[best].tau;
    let adjacency = apply_threshold(w, tau);
    let density = off_diagonal_density(&adjacency);
    Ok(ThresholdResult {
        tau,
        adjacency,
        curve,
        density,
    })
}
