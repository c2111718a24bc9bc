//! Sparse VAR(p) fitted equation by equation with penalized least squares.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{companion_radius, sample_covariance, spd_inverse};
use crate::panel::TimePanel;
use crate::solver::{
    adaptive_weights, kkt_violation, solve, Design, Penalty, PenaltyMethod, PenaltySpec,
    Response, RidgeSolver, SolverOptions,
};

/// How the global VAR order is read off the per-equation BIC values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OrderRule {
    /// Most frequent per-equation minimizer.
    Modal,
    /// Minimizer of the BIC summed over equations.
    SummedBic,
}

impl std::str::FromStr for OrderRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "modal" => Ok(OrderRule::Modal),
            "summed" | "summed-bic" | "system" => Ok(OrderRule::SummedBic),
            other => Err(Error::InvalidParameter(format!("unknown order rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SparseVarConfig {
    pub method: PenaltyMethod,
    /// Elastic-net mixing; ignored by the other penalties.
    pub alpha: f64,
    /// Adaptive-lasso pre-estimator strength; GCV-chosen when `None`.
    pub ridge: Option<f64>,
    pub p_grid: Vec<usize>,
    pub lambda_grid_size: usize,
    /// Smallest lambda on the path as a fraction of lambda_max.
    pub lambda_min_ratio: f64,
    pub order_rule: OrderRule,
    /// Stop a lambda path after this many consecutive points without a new
    /// BIC minimum; the full path is traced when `None`.
    pub path_patience: Option<usize>,
    pub solver: SolverOptions,
}

impl Default for SparseVarConfig {
    fn default() -> Self {
        SparseVarConfig {
            method: PenaltyMethod::ElasticNet,
            alpha: 0.5,
            ridge: None,
            p_grid: vec![1, 2, 3, 4, 5],
            lambda_grid_size: 30,
            lambda_min_ratio: 1e-3,
            order_rule: OrderRule::SummedBic,
            path_patience: Some(5),
            solver: SolverOptions::default(),
        }
    }
}

impl SparseVarConfig {
    pub fn with_method(method: PenaltyMethod) -> Self {
        SparseVarConfig {
            method,
            ..Default::default()
        }
    }

    fn validate(&self, t: usize) -> Result<()> {
        if self.p_grid.is_empty() || self.p_grid.contains(&0) {
            return Err(Error::InvalidParameter("VAR order grid must be nonempty and positive".into()));
        }
        if self.lambda_grid_size == 0 {
            return Err(Error::InvalidParameter("lambda grid must be nonempty".into()));
        }
        if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio <= 1.0) {
            return Err(Error::InvalidParameter("lambda_min_ratio must lie in (0, 1]".into()));
        }
        let p_max = *self.p_grid.iter().max().unwrap();
        if p_max + 2 > t {
            return Err(Error::TooFewObservations {
                required: p_max + 2,
                actual: t,
            });
        }
        PenaltySpec {
            method: self.method,
            lambda: 0.0,
            alpha: self.alpha,
            ridge: self.ridge,
        }
        .validate()
    }
}

/// Lagged design for every equation of a VAR(p); column `(k-1) n + j` holds
/// `z_{j, t-k}` and targets run over columns `start..T`.
pub struct VarDesign {
    pub p: usize,
    pub start: usize,
    pub design: Design,
    pub responses: Vec<Response>,
}

impl VarDesign {
    pub fn new(z: &DMatrix<f64>, p: usize, start: usize, method: PenaltyMethod) -> VarDesign {
        let (n, t) = z.shape();
        let n_obs = t - start;
        let d = n * p;
        let x = DMatrix::from_fn(n_obs, d, |s, c| {
            let (k, j) = (c / n + 1, c % n);
            z[(j, start + s - k)]
        });
        let y = z.columns(start, n_obs);
        let raw_gram = x.transpose() * &x / n_obs as f64;
        let raw_xty = x.transpose() * y.transpose() / n_obs as f64;
        let mut design = Design::from_gram(&raw_gram, n_obs, true);
        if method == PenaltyMethod::GroupLasso {
            design = design.with_groups((0..n).map(|j| (0..p).map(|k| k * n + j).collect()).collect());
        }
        let responses = (0..n)
            .map(|i| {
                let yty = y.row(i).norm_squared() / n_obs as f64;
                design.response(raw_xty.column(i).as_slice(), yty)
            })
            .collect();
        VarDesign {
            p,
            start,
            design,
            responses,
        }
    }
}

/// Penalty for one equation, with adaptive weights where needed.
fn row_penalty(
    vd: &VarDesign,
    ridge: Option<&RidgeSolver>,
    resp: &Response,
    method: PenaltyMethod,
    alpha: f64,
    ridge_strength: Option<f64>,
) -> (Penalty, Option<f64>) {
    match method {
        PenaltyMethod::ElasticNet => (Penalty::Coordinate { alpha, weights: None }, None),
        PenaltyMethod::AdaptiveLasso => {
            let owned;
            let solver = match ridge {
                Some(s) => s,
                None => {
                    owned = RidgeSolver::new(&vd.design);
                    &owned
                }
            };
            let (pre, gamma) = solver.fit(resp, ridge_strength);
            (
                Penalty::Coordinate {
                    alpha: 1.0,
                    weights: Some(adaptive_weights(&pre)),
                },
                Some(gamma),
            )
        }
        PenaltyMethod::GroupLasso => (Penalty::Group, None),
    }
}

/// `N log(RSS / N) + k log N`.
pub fn bic(n_obs: usize, mse: f64, nonzeros: usize) -> f64 {
    let n = n_obs as f64;
    n * mse.max(1e-300).ln() + nonzeros as f64 * n.ln()
}

/// Lambda path and BIC for one equation.
#[derive(Debug, Clone, Serialize)]
pub struct RowPath {
    /// Lambdas actually evaluated, decreasing.
    pub lambdas: Vec<f64>,
    pub bic: Vec<f64>,
    pub nonzeros: Vec<usize>,
    /// Index of the BIC minimum; the largest lambda wins ties.
    pub best: usize,
    #[serde(skip)]
    pub best_coefs: Vec<f64>,
    pub converged: bool,
    pub ridge: Option<f64>,
}

fn lambda_grid(lmax: f64, size: usize, min_ratio: f64) -> Vec<f64> {
    if !(lmax > 0.0) || !lmax.is_finite() {
        return vec![0.0];
    }
    if size == 1 {
        return vec![lmax];
    }
    (0..size)
        .map(|k| lmax * min_ratio.powf(k as f64 / (size - 1) as f64))
        .collect()
}

fn row_path(
    vd: &VarDesign,
    ridge: Option<&RidgeSolver>,
    row: usize,
    cfg: &SparseVarConfig,
) -> RowPath {
    let resp = &vd.responses[row];
    let (pen, gamma) = row_penalty(vd, ridge, resp, cfg.method, cfg.alpha, cfg.ridge);
    let lmax = pen.lambda_max(&vd.design, resp);
    let lambdas = if cfg.method == PenaltyMethod::ElasticNet && cfg.alpha == 0.0 {
        // Pure ridge has no finite lambda_max; anchor the path at the lasso one.
        let l1 = Penalty::Coordinate { alpha: 1.0, weights: None }.lambda_max(&vd.design, resp);
        lambda_grid(l1, cfg.lambda_grid_size, cfg.lambda_min_ratio)
    } else {
        lambda_grid(lmax, cfg.lambda_grid_size, cfg.lambda_min_ratio)
    };
    let n_obs = vd.design.n_obs;
    let mut warm: Option<Vec<f64>> = None;
    let mut out = RowPath {
        lambdas: lambdas.clone(),
        bic: Vec::with_capacity(lambdas.len()),
        nonzeros: Vec::with_capacity(lambdas.len()),
        best: 0,
        best_coefs: vec![0.0; vd.design.dim()],
        converged: true,
        ridge: gamma,
    };
    let mut best_val = f64::INFINITY;
    let mut stale = 0;
    for (k, &lam) in lambdas.iter().enumerate() {
        if cfg.path_patience.is_some_and(|p| stale >= p) {
            out.lambdas.truncate(k);
            break;
        }
        let sol = solve(&vd.design, resp, &pen, lam, warm.as_deref(), &cfg.solver);
        let nz = sol.nonzeros();
        let b = bic(n_obs, vd.design.mse(resp, &sol.coefs), nz);
        out.bic.push(b);
        out.nonzeros.push(nz);
        stale += 1;
        if b < best_val {
            stale = 0;
            best_val = b;
            out.best = k;
            out.best_coefs = sol.coefs.clone();
            out.converged = sol.converged;
        }
        warm = Some(sol.coefs);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderCandidate {
    pub p: usize,
    pub rows: Vec<RowPath>,
}

/// BIC search over `(p, lambda)`: lambda per equation, `p` global per the
/// configured [`OrderRule`] (smaller `p` wins ties). All orders share the
/// sample `t = p_max..T`.
#[derive(Debug, Clone, Serialize)]
pub struct BicSelection {
    pub candidates: Vec<OrderCandidate>,
    /// Order minimizing each equation's BIC.
    pub row_orders: Vec<usize>,
    pub selected_order: usize,
}

impl BicSelection {
    /// Selected `(p, lambda)` per equation at the chosen order.
    pub fn selected(&self) -> Vec<(usize, f64)> {
        let cand = self
            .candidates
            .iter()
            .find(|c| c.p == self.selected_order)
            .expect("selected order among candidates");
        cand.rows
            .iter()
            .map(|r| (cand.p, r.lambdas[r.best]))
            .collect()
    }
}

pub fn select_bic(panel: &TimePanel, cfg: &SparseVarConfig) -> Result<BicSelection> {
    cfg.validate(panel.t())?;
    let mut grid = cfg.p_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    let p_max = *grid.last().unwrap();
    let n = panel.n();
    let candidates: Vec<OrderCandidate> = grid
        .iter()
        .map(|&p| {
            let vd = VarDesign::new(&panel.values, p, p_max, cfg.method);
            let ridge = (cfg.method == PenaltyMethod::AdaptiveLasso).then(|| RidgeSolver::new(&vd.design));
            let rows = (0..n)
                .into_par_iter()
                .map(|i| row_path(&vd, ridge.as_ref(), i, cfg))
                .collect();
            OrderCandidate { p, rows }
        })
        .collect();
    let row_orders: Vec<usize> = (0..n)
        .map(|i| {
            let mut best = (f64::INFINITY, grid[0]);
            for c in &candidates {
                let b = c.rows[i].bic[c.rows[i].best];
                if b < best.0 {
                    best = (b, c.p);
                }
            }
            best.1
        })
        .collect();
    let selected_order = match cfg.order_rule {
        OrderRule::Modal => {
            let mut selected = grid[0];
            let mut best_count = 0;
            for &p in &grid {
                let count = row_orders.iter().filter(|&&q| q == p).count();
                if count > best_count {
                    best_count = count;
                    selected = p;
                }
            }
            selected
        }
        OrderRule::SummedBic => {
            let mut selected = (f64::INFINITY, grid[0]);
            for c in &candidates {
                let total: f64 = c.rows.iter().map(|r| r.bic[r.best]).sum();
                if total < selected.0 {
                    selected = (total, c.p);
                }
            }
            selected.1
        }
    };
    Ok(BicSelection {
        candidates,
        row_orders,
        selected_order,
    })
}

/// One penalized equation at a fixed penalty, on the sample `t = p..T`.
#[derive(Debug, Clone)]
pub struct RowFit {
    /// Length `n p`, entry `(k-1) n + j` is the coefficient on `z_{j, t-k}`.
    pub coefs: Vec<f64>,
    pub converged: bool,
    pub kkt: f64,
}

pub fn fit_penalized_row(
    panel: &TimePanel,
    row: usize,
    p: usize,
    penalty: &PenaltySpec,
) -> Result<RowFit> {
    penalty.validate()?;
    if row >= panel.n() {
        return Err(Error::InvalidParameter(format!("row {row} outside 0..{}", panel.n())));
    }
    if p == 0 || p + 2 > panel.t() {
        return Err(Error::TooFewObservations {
            required: p + 2,
            actual: panel.t(),
        });
    }
    let vd = VarDesign::new(&panel.values, p, p, penalty.method);
    let resp = &vd.responses[row];
    let (pen, _) = row_penalty(&vd, None, resp, penalty.method, penalty.alpha, penalty.ridge);
    let sol = solve(&vd.design, resp, &pen, penalty.lambda, None, &SolverOptions::default());
    let kkt = kkt_violation(&vd.design, resp, &pen, penalty.lambda, &sol.coefs);
    Ok(RowFit {
        coefs: vd.design.unstandardize(&sol.coefs),
        converged: sol.converged,
        kkt,
    })
}

#[derive(Debug, Clone)]
pub struct SparseVarModel {
    pub order: usize,
    /// `F_1..F_p`.
    pub coefs: Vec<DMatrix<f64>>,
    /// n × (T - p), aligned with the last `T - p` panel columns.
    pub residuals: TimePanel,
    pub covariance: DMatrix<f64>,
    /// Inverse residual covariance.
    pub precision: DMatrix<f64>,
    pub precision_repaired: bool,
    /// Lambda selected for each equation.
    pub lambdas: Vec<f64>,
    pub method: PenaltyMethod,
    pub alpha: f64,
    /// Ridge strengths of the adaptive-lasso pre-estimator per equation.
    pub ridge: Vec<Option<f64>>,
    pub selection: BicSelection,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl SparseVarModel {
    pub fn n(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn radius(&self) -> f64 {
        companion_radius(&self.coefs)
    }

    pub fn nonzeros(&self) -> usize {
        self.coefs.iter().map(|c| c.iter().filter(|v| **v != 0.0).count()).sum()
    }

    /// `z_t - sum_k F_k z_{t-k}` for `t = p..T`.
    pub fn residuals_of(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        var_residuals(&self.coefs, z)
    }

    /// `row,col,lag,value` for every nonzero coefficient, 1-based lags.
    pub fn to_triplets(&self, labels: &[String]) -> String {
        let mut out = String::from("row,col,lag,value\n");
        for (k, f) in self.coefs.iter().enumerate() {
            for i in 0..f.nrows() {
                for j in 0..f.ncols() {
                    let v = f[(i, j)];
                    if v != 0.0 {
                        let _ = writeln!(out, "{},{},{},{v}", labels[i], labels[j], k + 1);
                    }
                }
            }
        }
        out
    }
}

/// Residuals of a VAR on columns `p..T`.
pub fn var_residuals(coefs: &[DMatrix<f64>], z: &DMatrix<f64>) -> DMatrix<f64> {
    let p = coefs.len();
    let t = z.ncols();
    let mut out = z.columns(p, t - p).into_owned();
    for (k, f) in coefs.iter().enumerate() {
        let lagged = z.columns(p - k - 1, t - p);
        out -= f * lagged;
    }
    out
}

pub fn fit_sparse_var(panel: &TimePanel, cfg: &SparseVarConfig) -> Result<SparseVarModel> {
    let selection = select_bic(panel, cfg)?;
    let p = selection.selected_order;
    let (n, t) = (panel.n(), panel.t());
    let mut warnings = Vec::new();
    if (t as f64) <= (n * p) as f64 / 4.0 {
        warnings.push(format!("T = {t} is small relative to n p = {}", n * p));
    }
    let vd = VarDesign::new(&panel.values, p, p, cfg.method);
    let ridge = (cfg.method == PenaltyMethod::AdaptiveLasso).then(|| RidgeSolver::new(&vd.design));
    let paths: Vec<RowPath> = (0..n)
        .into_par_iter()
        .map(|i| row_path(&vd, ridge.as_ref(), i, cfg))
        .collect();
    let mut coefs = vec![DMatrix::zeros(n, n); p];
    for (i, path) in paths.iter().enumerate() {
        let raw = vd.design.unstandardize(&path.best_coefs);
        for (c, v) in raw.iter().enumerate() {
            coefs[c / n][(i, c % n)] = *v;
        }
    }
    let converged = paths.iter().all(|r| r.converged);
    if !converged {
        warnings.push("coordinate descent hit the sweep limit".into());
    }
    let resid = var_residuals(&coefs, &panel.values);
    let covariance = sample_covariance(&resid);
    let (precision, precision_repaired) = spd_inverse(&covariance, 1e12, 1e-8)?;
    let residuals = TimePanel {
        values: resid,
        labels: panel.labels.clone(),
        dates: panel.dates[p..].to_vec(),
        sectors: panel.sectors.clone(),
        means: None,
    };
    Ok(SparseVarModel {
        order: p,
        coefs,
        residuals,
        covariance,
        precision,
        precision_repaired,
        lambdas: paths.iter().map(|r| r.lambdas[r.best]).collect(),
        method: cfg.method,
        alpha: cfg.alpha,
        ridge: paths.iter().map(|r| r.ridge).collect(),
        selection,
        converged,
        warnings,
    })
}
