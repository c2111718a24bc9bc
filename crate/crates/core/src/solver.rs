//! Penalized least squares by coordinate descent on a precomputed Gram matrix.
//!
//! Problems are stated on the standardized design:
//! `(1/2N) |y - X b|^2 + P(b)` with each column of `X` scaled to unit mean square.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Adaptive-lasso weights floor pre-estimator magnitudes at this value.
pub const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum PenaltyMethod {
    ElasticNet,
    AdaptiveLasso,
    GroupLasso,
}

impl std::str::FromStr for PenaltyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "elastic-net" | "enet" => Ok(PenaltyMethod::ElasticNet),
            "adaptive-lasso" | "alasso" => Ok(PenaltyMethod::AdaptiveLasso),
            "group-lasso" | "glasso" => Ok(PenaltyMethod::GroupLasso),
            other => Err(Error::InvalidParameter(format!("unknown penalty `{other}`"))),
        }
    }
}

impl std::fmt::Display for PenaltyMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PenaltyMethod::ElasticNet => "elastic-net",
            PenaltyMethod::AdaptiveLasso => "adaptive-lasso",
            PenaltyMethod::GroupLasso => "group-lasso",
        })
    }
}

/// Penalty family plus strength.
///
/// Elastic net: `lambda * sum_j (alpha |b_j| + (1 - alpha) b_j^2)`.
/// Adaptive lasso: `lambda * sum_j w_j |b_j|`, `w_j = 1 / max(|b~_j|, 1e-6)` with
/// `b~` a ridge pre-estimate. Group lasso: `lambda * sum_g sqrt(|g|) |b_g|_2`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PenaltySpec {
    pub method: PenaltyMethod,
    pub lambda: f64,
    pub alpha: f64,
    /// Ridge strength of the adaptive-lasso pre-estimator; chosen by
    /// generalized cross-validation when `None`.
    pub ridge: Option<f64>,
}

impl PenaltySpec {
    pub fn new(method: PenaltyMethod, lambda: f64) -> Self {
        PenaltySpec {
            method,
            lambda,
            alpha: 0.5,
            ridge: None,
        }
    }

    pub fn elastic_net(lambda: f64, alpha: f64) -> Self {
        PenaltySpec {
            alpha,
            ..Self::new(PenaltyMethod::ElasticNet, lambda)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!("alpha = {} outside [0, 1]", self.alpha)));
        }
        if let Some(r) = self.ridge {
            if !(r > 0.0) {
                return Err(Error::InvalidParameter("ridge strength must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Standardized Gram matrix shared by every response regressed on the same design.
#[derive(Debug, Clone)]
pub struct Design {
    /// `X~' X~ / N` with unit diagonal (zero for constant-zero columns).
    pub gram: DMatrix<f64>,
    /// Root mean square of each raw column.
    pub scale: Vec<f64>,
    pub n_obs: usize,
    /// Column groups for the group lasso; singletons when `None`.
    pub groups: Option<Vec<Vec<usize>>>,
    group_lipschitz: Vec<f64>,
}

/// Cross-products of one response with the design.
#[derive(Debug, Clone)]
pub struct Response {
    /// `X~' y / N`.
    pub xty: DVector<f64>,
    /// `y' y / N`.
    pub yty: f64,
}

impl Design {
    /// From raw `X'X / N`; `standardize = false` keeps the raw scale.
    pub fn from_gram(raw: &DMatrix<f64>, n_obs: usize, standardize: bool) -> Design {
        let d = raw.nrows();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let v = raw[(j, j)].max(0.0).sqrt();
                if standardize {
                    v
                } else if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let gram = DMatrix::from_fn(d, d, |i, j| {
            if scale[i] > 0.0 && scale[j] > 0.0 {
                raw[(i, j)] / (scale[i] * scale[j])
            } else {
                0.0
            }
        });
        Design {
            gram,
            scale,
            n_obs,
            groups: None,
            group_lipschitz: Vec::new(),
        }
    }

    /// From an N × d design matrix.
    pub fn from_matrix(x: &DMatrix<f64>, standardize: bool) -> Design {
        let n = x.nrows();
        let raw = x.transpose() * x / n as f64;
        Design::from_gram(&raw, n, standardize)
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn with_groups(mut self, groups: Vec<Vec<usize>>) -> Design {
        self.group_lipschitz = groups
            .iter()
            .map(|g| {
                let sub = DMatrix::from_fn(g.len(), g.len(), |a, b| self.gram[(g[a], g[b])]);
                sub.symmetric_eigenvalues()
                    .iter()
                    .cloned()
                    .fold(0.0, f64::max)
            })
            .collect();
        self.groups = Some(groups);
        self
    }

    /// Response cross-products from raw `X'y / N` and `y'y / N`.
    pub fn response(&self, raw_xty: &[f64], raw_yty: f64) -> Response {
        let xty = DVector::from_iterator(
            self.dim(),
            raw_xty
                .iter()
                .zip(&self.scale)
                .map(|(v, s)| if *s > 0.0 { v / s } else { 0.0 }),
        );
        Response { xty, yty: raw_yty }
    }

    /// Coefficients on the raw scale from standardized ones.
    pub fn unstandardize(&self, b: &[f64]) -> Vec<f64> {
        b.iter()
            .zip(&self.scale)
            .map(|(v, s)| if *s > 0.0 { v / s } else { 0.0 })
            .collect()
    }

    /// Mean squared residual `|y - X b|^2 / N` for standardized `b`.
    pub fn mse(&self, resp: &Response, b: &[f64]) -> f64 {
        let b = DVector::from_column_slice(b);
        let gb = &self.gram * &b;
        (resp.yty - 2.0 * b.dot(&resp.xty) + b.dot(&gb)).max(0.0)
    }

    fn groups_or_singletons(&self) -> Vec<Vec<usize>> {
        self.groups
            .clone()
            .unwrap_or_else(|| (0..self.dim()).map(|j| vec![j]).collect())
    }
}

/// Resolved per-coordinate penalty.
#[derive(Debug, Clone)]
pub enum Penalty {
    /// `lambda * sum_j w_j (alpha |b_j| + (1 - alpha) b_j^2)`.
    Coordinate { alpha: f64, weights: Option<Vec<f64>> },
    /// `lambda * sum_g sqrt(|g|) |b_g|_2` over the design's groups.
    Group,
}

impl Penalty {
    fn weight(&self, j: usize) -> f64 {
        match self {
            Penalty::Coordinate {
                weights: Some(w), ..
            } => w[j],
            _ => 1.0,
        }
    }

    /// Smallest `lambda` at which the zero vector is optimal.
    pub fn lambda_max(&self, design: &Design, resp: &Response) -> f64 {
        match self {
            Penalty::Coordinate { alpha, .. } => {
                if *alpha <= 0.0 {
                    return f64::INFINITY;
                }
                (0..design.dim())
                    .map(|j| resp.xty[j].abs() / (alpha * self.weight(j)))
                    .fold(0.0, f64::max)
            }
            Penalty::Group => design
                .groups_or_singletons()
                .iter()
                .map(|g| {
                    let norm = g.iter().map(|&j| resp.xty[j].powi(2)).sum::<f64>().sqrt();
                    norm / (g.len() as f64).sqrt()
                })
                .fold(0.0, f64::max),
        }
    }

    fn value(&self, design: &Design, lambda: f64, b: &[f64]) -> f64 {
        match self {
            Penalty::Coordinate { alpha, .. } => {
                lambda
                    * b.iter()
                        .enumerate()
                        .map(|(j, v)| self.weight(j) * (alpha * v.abs() + (1.0 - alpha) * v * v))
                        .sum::<f64>()
            }
            Penalty::Group => {
                lambda
                    * design
                        .groups_or_singletons()
                        .iter()
                        .map(|g| {
                            (g.len() as f64).sqrt()
                                * g.iter().map(|&j| b[j] * b[j]).sum::<f64>().sqrt()
                        })
                        .sum::<f64>()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    /// Record the objective after every sweep.
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-7,
            max_sweeps: 10_000,
            trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Standardized-scale coefficients.
    pub coefs: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    pub objective_trace: Vec<f64>,
}

impl Solution {
    pub fn nonzeros(&self) -> usize {
        self.coefs.iter().filter(|v| **v != 0.0).count()
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Penalized objective at standardized `b`.
pub fn objective(design: &Design, resp: &Response, penalty: &Penalty, lambda: f64, b: &[f64]) -> f64 {
    0.5 * design.mse(resp, b) + penalty.value(design, lambda, b)
}

struct State<'a> {
    design: &'a Design,
    b: Vec<f64>,
    /// `X~'y/N - G b`.
    grad: Vec<f64>,
}

impl<'a> State<'a> {
    fn new(design: &'a Design, resp: &Response, warm: Option<&[f64]>) -> Self {
        let d = design.dim();
        let b = warm.map_or_else(|| vec![0.0; d], <[f64]>::to_vec);
        let bv = DVector::from_column_slice(&b);
        let g = &resp.xty - &design.gram * bv;
        State {
            design,
            b,
            grad: g.as_slice().to_vec(),
        }
    }

    /// Moves `b_j` by `delta`, updating the gradient on `within` only when given.
    fn shift(&mut self, j: usize, delta: f64, within: Option<&[usize]>) {
        let col = self.design.gram.column(j);
        match within {
            Some(idx) => {
                for &i in idx {
                    self.grad[i] -= col[i] * delta;
                }
            }
            None => {
                for (g, c) in self.grad.iter_mut().zip(col.iter()) {
                    *g -= c * delta;
                }
            }
        }
        self.b[j] += delta;
    }

    fn refresh(&mut self, resp: &Response) {
        let bv = DVector::from_column_slice(&self.b);
        let g = &resp.xty - &self.design.gram * bv;
        self.grad.copy_from_slice(g.as_slice());
    }

    /// [`State::smooth`] when `b` is supported on `coords`, whose gradient entries are current.
    fn smooth_on(&self, resp: &Response, coords: &[usize]) -> f64 {
        let s: f64 = coords.iter().map(|&j| self.b[j] * (resp.xty[j] + self.grad[j])).sum();
        0.5 * (resp.yty - s)
    }

    fn smooth(&self, resp: &Response) -> f64 {
        // |y - Xb|^2 / 2N = (yty - b'(xty + grad)) / 2
        let s: f64 = self
            .b
            .iter()
            .zip(resp.xty.iter().zip(&self.grad))
            .map(|(b, (c, g))| b * (c + g))
            .sum();
        0.5 * (resp.yty - s)
    }
}

fn coordinate_sweep(
    st: &mut State,
    penalty: &Penalty,
    alpha: f64,
    lambda: f64,
    coords: &[usize],
    within: Option<&[usize]>,
) -> f64 {
    let mut max_change: f64 = 0.0;
    for &j in coords {
        let gjj = st.design.gram[(j, j)];
        if gjj <= 0.0 {
            continue;
        }
        let w = penalty.weight(j);
        let rho = st.grad[j] + gjj * st.b[j];
        let new = soft_threshold(rho, lambda * alpha * w) / (gjj + 2.0 * lambda * (1.0 - alpha) * w);
        let delta = new - st.b[j];
        if delta != 0.0 {
            st.shift(j, delta, within);
            max_change = max_change.max(delta.abs());
        }
    }
    max_change
}

#[allow(clippy::too_many_arguments)]
fn group_sweep(
    st: &mut State,
    lambda: f64,
    groups: &[Vec<usize>],
    lips: &[f64],
    which: &[usize],
    tol: f64,
    within: Option<&[usize]>,
) -> f64 {
    let mut max_change: f64 = 0.0;
    for &gi in which {
        let g = &groups[gi];
        let l = lips[gi];
        if l <= 0.0 {
            continue;
        }
        let thresh = lambda * (g.len() as f64).sqrt() / l;
        let start: Vec<f64> = g.iter().map(|&j| st.b[j]).collect();
        let mut cur = start.clone();
        let mut local: Vec<f64> = g.iter().map(|&j| st.grad[j]).collect();
        for _ in 0..200 {
            let z: Vec<f64> = cur.iter().zip(&local).map(|(b, gr)| b + gr / l).collect();
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let factor = if norm > thresh { 1.0 - thresh / norm } else { 0.0 };
            let next: Vec<f64> = z.iter().map(|v| v * factor).collect();
            let mut step: f64 = 0.0;
            for (a, &ja) in g.iter().enumerate() {
                let mut acc = 0.0;
                for (b, &jb) in g.iter().enumerate() {
                    acc += st.design.gram[(ja, jb)] * (next[b] - cur[b]);
                }
                local[a] -= acc;
                step = step.max((next[a] - cur[a]).abs());
            }
            cur = next;
            if step < 0.1 * tol {
                break;
            }
        }
        for (a, &j) in g.iter().enumerate() {
            let delta = cur[a] - start[a];
            if delta != 0.0 {
                st.shift(j, delta, within);
                max_change = max_change.max(delta.abs());
            }
        }
    }
    max_change
}

/// Minimizes the penalized objective; `warm` seeds the iterate.
pub fn solve(
    design: &Design,
    resp: &Response,
    penalty: &Penalty,
    lambda: f64,
    warm: Option<&[f64]>,
    opts: &SolverOptions,
) -> Solution {
    let mut st = State::new(design, resp, warm);
    let mut trace = Vec::new();
    let mut sweeps = 0;
    let mut converged = false;
    match penalty {
        Penalty::Coordinate { alpha, .. } => {
            let all: Vec<usize> = (0..design.dim()).collect();
            while sweeps < opts.max_sweeps {
                let change = coordinate_sweep(&mut st, penalty, *alpha, lambda, &all, None);
                sweeps += 1;
                if opts.trace {
                    trace.push(st.smooth(resp) + penalty.value(design, lambda, &st.b));
                }
                if change < opts.tol {
                    converged = true;
                    break;
                }
                let active: Vec<usize> = all.iter().copied().filter(|&j| st.b[j] != 0.0).collect();
                while sweeps < opts.max_sweeps {
                    let change = coordinate_sweep(&mut st, penalty, *alpha, lambda, &active, Some(&active));
                    sweeps += 1;
                    if opts.trace {
                        trace.push(st.smooth_on(resp, &active) + penalty.value(design, lambda, &st.b));
                    }
                    if change < opts.tol {
                        break;
                    }
                }
                st.refresh(resp);
            }
        }
        Penalty::Group => {
            let groups = design.groups_or_singletons();
            let lips = if design.groups.is_some() {
                design.group_lipschitz.clone()
            } else {
                (0..design.dim()).map(|j| design.gram[(j, j)]).collect()
            };
            let all: Vec<usize> = (0..groups.len()).collect();
            while sweeps < opts.max_sweeps {
                let change = group_sweep(&mut st, lambda, &groups, &lips, &all, opts.tol, None);
                sweeps += 1;
                if opts.trace {
                    trace.push(st.smooth(resp) + penalty.value(design, lambda, &st.b));
                }
                if change < opts.tol {
                    converged = true;
                    break;
                }
                let active: Vec<usize> = all
                    .iter()
                    .copied()
                    .filter(|&g| groups[g].iter().any(|&j| st.b[j] != 0.0))
                    .collect();
                let coords: Vec<usize> = active.iter().flat_map(|&g| groups[g].iter().copied()).collect();
                while sweeps < opts.max_sweeps {
                    let change = group_sweep(&mut st, lambda, &groups, &lips, &active, opts.tol, Some(&coords));
                    sweeps += 1;
                    if opts.trace {
                        trace.push(st.smooth_on(resp, &coords) + penalty.value(design, lambda, &st.b));
                    }
                    if change < opts.tol {
                        break;
                    }
                }
                st.refresh(resp);
            }
        }
    }
    Solution {
        coefs: st.b,
        converged,
        sweeps,
        objective_trace: trace,
    }
}

/// Largest violation of the optimality conditions, relative to `max(1, lambda w)`.
pub fn kkt_violation(design: &Design, resp: &Response, penalty: &Penalty, lambda: f64, b: &[f64]) -> f64 {
    let bv = DVector::from_column_slice(b);
    let grad = &resp.xty - &design.gram * bv;
    let mut worst: f64 = 0.0;
    match penalty {
        Penalty::Coordinate { alpha, .. } => {
            for j in 0..design.dim() {
                if design.gram[(j, j)] <= 0.0 {
                    continue;
                }
                let w = penalty.weight(j);
                let g = grad[j] - 2.0 * lambda * (1.0 - alpha) * w * b[j];
                let bound = lambda * alpha * w;
                let v = if b[j] == 0.0 {
                    (g.abs() - bound).max(0.0)
                } else {
                    (g - bound * b[j].signum()).abs()
                };
                worst = worst.max(v / bound.max(1.0));
            }
        }
        Penalty::Group => {
            for g in design.groups_or_singletons() {
                let bound = lambda * (g.len() as f64).sqrt();
                let norm = g.iter().map(|&j| b[j] * b[j]).sum::<f64>().sqrt();
                let v = if norm == 0.0 {
                    (g.iter().map(|&j| grad[j].powi(2)).sum::<f64>().sqrt() - bound).max(0.0)
                } else {
                    g.iter()
                        .map(|&j| (grad[j] - bound * b[j] / norm).powi(2))
                        .sum::<f64>()
                        .sqrt()
                };
                worst = worst.max(v / bound.max(1.0));
            }
        }
    }
    worst
}

/// Ridge estimate `(G + gamma I)^{-1} c` on the standardized design, with
/// `gamma` picked by generalized cross-validation when `ridge` is `None`.
pub struct RidgeSolver {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    n_obs: usize,
}

/// Candidate ridge strengths scanned by generalized cross-validation.
pub const RIDGE_GRID: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];

impl RidgeSolver {
    pub fn new(design: &Design) -> RidgeSolver {
        let eig = nalgebra::SymmetricEigen::new(design.gram.clone());
        RidgeSolver {
            values: eig.eigenvalues.map(|v| v.max(0.0)),
            vectors: eig.eigenvectors,
            n_obs: design.n_obs,
        }
    }

    fn fit_with(&self, resp: &Response, gamma: f64) -> (Vec<f64>, f64) {
        let proj = self.vectors.transpose() * &resp.xty;
        let mut coef_eig = proj.clone();
        let mut df = 0.0;
        let mut rss = resp.yty;
        for k in 0..proj.len() {
            let e = self.values[k];
            let c = proj[k] / (e + gamma);
            coef_eig[k] = c;
            df += e / (e + gamma);
            rss += -2.0 * c * proj[k] + c * c * e;
        }
        let b = &self.vectors * coef_eig;
        let n = self.n_obs as f64;
        let denom = (1.0 - df / n).max(1e-12);
        (b.as_slice().to_vec(), rss.max(0.0) / (denom * denom))
    }

    /// Coefficients and the strength used.
    pub fn fit(&self, resp: &Response, ridge: Option<f64>) -> (Vec<f64>, f64) {
        if let Some(g) = ridge {
            return (self.fit_with(resp, g).0, g);
        }
        let mut best: Option<(Vec<f64>, f64, f64)> = None;
        for &g in &RIDGE_GRID {
            let (b, gcv) = self.fit_with(resp, g);
            if best.as_ref().is_none_or(|(_, _, v)| gcv < *v) {
                best = Some((b, g, gcv));
            }
        }
        let (b, g, _) = best.expect("nonempty grid");
        (b, g)
    }
}

/// Adaptive-lasso weights from a pre-estimate.
pub fn adaptive_weights(pre: &[f64]) -> Vec<f64> {
    pre.iter().map(|v| 1.0 / v.abs().max(WEIGHT_FLOOR)).collect()
}
