//! Generalised dynamic factor model: factor count, block VAR of the common
//! component, loadings and shocks, and the common/idiosyncratic split.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{
    companion_radius, correlation, sample_covariance, sym_eigen_desc,
};
use crate::lvdn::VmaFilter;
use crate::panel::TimePanel;
use crate::spectral::{
    default_bandwidth, estimate_spectral_density, mean_dynamic_eigenvalues,
    AutocovarianceSequence,
};

/// Settings of the factor-count information criterion.
#[derive(Debug, Clone)]
pub struct CriterionConfig {
    /// Number of nested subpanels `R`; subpanel `r` holds `ceil(n r / R)` series.
    pub subpanels: usize,
    /// Smallest `r` scanned; subpanels below it are skipped.
    pub first_subpanel: usize,
    pub c_max: f64,
    pub c_step: f64,
    /// Minimum number of consecutive grid points forming a stability interval.
    pub min_stable_points: usize,
    /// Lag-window bandwidth; `floor(sqrt T)` when `None`.
    pub bandwidth: Option<usize>,
    /// Frequency grid size; the bandwidth when `None`.
    pub grid_size: Option<usize>,
    /// Seed of the permutation defining the nested subpanels.
    pub seed: u64,
}

impl Default for CriterionConfig {
    fn default() -> Self {
        CriterionConfig {
            subpanels: 10,
            first_subpanel: 3,
            c_max: 10.0,
            c_step: 0.01,
            min_stable_points: 5,
            bandwidth: None,
            grid_size: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityPoint {
    pub c: f64,
    /// Factor count chosen on the full panel at this `c`.
    pub q: usize,
    /// Variance of the chosen count across subpanels.
    pub variance: f64,
}

#[derive(Debug, Clone)]
pub struct FactorCount {
    pub q: usize,
    /// Penalty scale at which `q` was read off.
    pub c: f64,
    /// Criterion value on the full panel at the chosen `c`, for `k = 0..=q_max`.
    pub curve: Vec<f64>,
    pub stability: Vec<StabilityPoint>,
    /// Per subpanel size, the count chosen at every grid point.
    pub subpanel_paths: Vec<(usize, Vec<usize>)>,
    /// Set when no stability interval was found and `c = 1` was used.
    pub fallback: bool,
}

impl FactorCount {
    /// Criterion diagnostics as `c,subpanel_size,q` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("c,subpanel_size,q\n");
        for (size, path) in &self.subpanel_paths {
            for (point, q) in self.stability.iter().zip(path) {
                let _ = writeln!(out, "{},{},{}", point.c, size, q);
            }
        }
        out
    }
}

/// `p(n, T) = min(n, sqrt T)^{-1/2} log min(n, sqrt T)`.
pub fn criterion_penalty(n: usize, t: usize) -> f64 {
    let m = (n as f64).min((t as f64).sqrt());
    m.ln() / m.sqrt()
}

fn standardized(panel: &TimePanel) -> TimePanel {
    let mut values = panel.values.clone();
    for mut row in values.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
        let sd = (row.norm_squared() / row.len() as f64).sqrt();
        if sd > 0.0 {
            row /= sd;
        }
    }
    panel.with_values(values)
}

struct Subpanel {
    log_tail: Vec<f64>,
    penalty: f64,
}

impl Subpanel {
    fn choose(&self, c: f64) -> usize {
        let mut best = 0;
        let mut best_val = f64::INFINITY;
        for (k, lt) in self.log_tail.iter().enumerate() {
            let v = lt + k as f64 * c * self.penalty;
            if v < best_val {
                best_val = v;
                best = k;
            }
        }
        best
    }

    fn curve(&self, c: f64) -> Vec<f64> {
        self.log_tail
            .iter()
            .enumerate()
            .map(|(k, lt)| lt + k as f64 * c * self.penalty)
            .collect()
    }
}

pub fn hallin_liska_q(panel: &TimePanel, q_max: usize) -> Result<FactorCount> {
    hallin_liska_q_with(panel, q_max, &CriterionConfig::default())
}

/// Information-criterion factor count with a stability scan over the
/// penalty scale `c` and nested random subpanels.
pub fn hallin_liska_q_with(
    panel: &TimePanel,
    q_max: usize,
    config: &CriterionConfig,
) -> Result<FactorCount> {
    let (n, t) = (panel.n(), panel.t());
    if q_max == 0 || q_max >= n {
        return Err(Error::InvalidParameter(format!(
            "q_max = {q_max} must satisfy 0 < q_max < n = {n}"
        )));
    }
    if config.subpanels == 0 || config.first_subpanel == 0 || config.first_subpanel > config.subpanels {
        return Err(Error::InvalidParameter("invalid subpanel range".into()));
    }
    if !(config.c_step > 0.0 && config.c_max > 0.0) {
        return Err(Error::InvalidParameter("penalty grid must be positive".into()));
    }
    let bandwidth = config.bandwidth.unwrap_or_else(|| default_bandwidth(t));
    let grid = config.grid_size.unwrap_or(bandwidth);
    let spec = estimate_spectral_density(&standardized(panel), bandwidth, grid)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let r_total = config.subpanels;
    let mut sizes: Vec<usize> = (config.first_subpanel..=r_total)
        .map(|r| (n * r).div_ceil(r_total).max(2))
        .collect();
    sizes.dedup();

    let subpanels: Vec<Subpanel> = sizes
        .par_iter()
        .map(|&size| {
            let mut idx = order[..size].to_vec();
            idx.sort_unstable();
            let eig = mean_dynamic_eigenvalues(&spec.select(&idx));
            let cap = q_max.min(size - 1);
            let log_tail = (0..=cap)
                .map(|k| {
                    let tail: f64 = eig[k..].iter().map(|v| v.max(0.0)).sum();
                    (tail / size as f64).max(f64::MIN_POSITIVE).ln()
                })
                .collect();
            Subpanel {
                log_tail,
                penalty: criterion_penalty(size, t),
            }
        })
        .collect();
    let full = subpanels.last().expect("at least one subpanel");

    let steps = (config.c_max / config.c_step).round() as usize;
    let mut stability = Vec::with_capacity(steps + 1);
    let mut paths: Vec<Vec<usize>> = vec![Vec::with_capacity(steps + 1); subpanels.len()];
    for s in 0..=steps {
        let c = s as f64 * config.c_step;
        let picks: Vec<usize> = subpanels.iter().map(|sp| sp.choose(c)).collect();
        let mean = picks.iter().sum::<usize>() as f64 / picks.len() as f64;
        let variance = picks
            .iter()
            .map(|&q| (q as f64 - mean).powi(2))
            .sum::<f64>()
            / picks.len() as f64;
        for (path, &q) in paths.iter_mut().zip(&picks) {
            path.push(q);
        }
        stability.push(StabilityPoint {
            c,
            q: *picks.last().unwrap(),
            variance,
        });
    }

    let mut chosen: Option<usize> = None;
    let mut s = 0;
    while s < stability.len() {
        if stability[s].variance != 0.0 {
            s += 1;
            continue;
        }
        let start = s;
        let q = stability[s].q;
        while s < stability.len() && stability[s].variance == 0.0 && stability[s].q == q {
            s += 1;
        }
        if q < q_max && s - start >= config.min_stable_points {
            chosen = Some(start);
            break;
        }
    }
    let (idx, fallback) = match chosen {
        Some(i) => (i, false),
        None => {
            let one = ((1.0 / config.c_step).round() as usize).min(stability.len() - 1);
            (one, true)
        }
    };
    let c = stability[idx].c;
    Ok(FactorCount {
        q: full.choose(c),
        c,
        curve: full.curve(c),
        stability,
        subpanel_paths: sizes.into_iter().zip(paths).collect(),
        fallback,
    })
}

/// Contiguous blocks of size `q + 1`; the last absorbs the remainder.
pub fn partition_blocks(n: usize, q: usize) -> Result<Vec<Vec<usize>>> {
    let d = q + 1;
    if q == 0 || d > n {
        return Err(Error::InvalidParameter(format!(
            "block size q + 1 = {d} must satisfy 2 <= q + 1 <= n = {n}"
        )));
    }
    let m = n / d;
    Ok((0..m)
        .map(|b| {
            let end = if b + 1 == m { n } else { (b + 1) * d };
            (b * d..end).collect()
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct VarBlock {
    pub indices: Vec<usize>,
    /// `A_1..A_p` for this block.
    pub coefs: Vec<DMatrix<f64>>,
    /// Information criterion per candidate order `1..=max_order`.
    pub criterion: Vec<f64>,
    /// Coefficients were shrunk to restore stability.
    pub shrunk: bool,
    /// The Toeplitz system needed a ridge beyond the default.
    pub regularized: bool,
}

impl VarBlock {
    pub fn order(&self) -> usize {
        self.coefs.len()
    }
}

/// Block-diagonal VAR `A(L) x_t = e_t`, `A(L) = I - sum_k A_k L^k`.
#[derive(Debug, Clone)]
pub struct BlockVarModel {
    pub n: usize,
    pub blocks: Vec<VarBlock>,
}

impl BlockVarModel {
    pub fn max_order(&self) -> usize {
        self.blocks.iter().map(VarBlock::order).max().unwrap_or(0)
    }

    /// Largest companion spectral radius over the blocks.
    pub fn radius(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| companion_radius(&b.coefs))
            .fold(0.0, f64::max)
    }

    /// Full n × n lag matrices `A_1..A_p` with zeros off the blocks.
    pub fn dense_coefs(&self) -> Vec<DMatrix<f64>> {
        let p = self.max_order();
        let mut out = vec![DMatrix::zeros(self.n, self.n); p];
        for b in &self.blocks {
            for (k, a) in b.coefs.iter().enumerate() {
                for (bi, &i) in b.indices.iter().enumerate() {
                    for (bj, &j) in b.indices.iter().enumerate() {
                        out[k][(i, j)] = a[(bi, bj)];
                    }
                }
            }
        }
        out
    }

    /// `A(L) y_t` with zero pre-sample values.
    pub fn filter(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = values.clone();
        let t = values.ncols();
        for b in &self.blocks {
            for (k, a) in b.coefs.iter().enumerate() {
                let lag = k + 1;
                for s in lag..t {
                    for (bi, &i) in b.indices.iter().enumerate() {
                        let mut acc = 0.0;
                        for (bj, &j) in b.indices.iter().enumerate() {
                            acc += a[(bi, bj)] * values[(j, s - lag)];
                        }
                        out[(i, s)] -= acc;
                    }
                }
            }
        }
        out
    }

    /// `A(L)^{-1} w_t` by recursion from zero pre-sample values.
    pub fn invert(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = values.clone();
        let t = values.ncols();
        for b in &self.blocks {
            for s in 0..t {
                for (k, a) in b.coefs.iter().enumerate() {
                    let lag = k + 1;
                    if s < lag {
                        break;
                    }
                    for (bi, &i) in b.indices.iter().enumerate() {
                        let mut acc = 0.0;
                        for (bj, &j) in b.indices.iter().enumerate() {
                            acc += a[(bi, bj)] * out[(j, s - lag)];
                        }
                        out[(i, s)] += acc;
                    }
                }
            }
        }
        out
    }
}

const STABLE_RADIUS: f64 = 0.999;
const SHRUNK_RADIUS: f64 = 0.99;

fn yule_walker(autocov: &AutocovarianceSequence, p: usize) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>, bool)> {
    let d = autocov.n();
    let mut g = DMatrix::zeros(d * p, d * p);
    for j in 0..p {
        for k in 0..p {
            let block = autocov.get(k as isize - j as isize);
            g.view_mut((j * d, k * d), (d, d)).copy_from(&block);
        }
    }
    let mut rhs = DMatrix::zeros(d * p, d);
    for k in 0..p {
        rhs.view_mut((k * d, 0), (d, d))
            .copy_from(&autocov.get(k as isize + 1).transpose());
    }
    let dp = d * p;
    let base = (g.trace() / dp as f64).abs().max(f64::MIN_POSITIVE);
    let mut solved = None;
    for (rel, flagged) in [(1e-10, false), (1e-6, true)] {
        let mut m = g.clone();
        for i in 0..dp {
            m[(i, i)] += rel * base;
        }
        if let Some(chol) = nalgebra::Cholesky::new(m) {
            solved = Some((chol.solve(&rhs), flagged));
            break;
        }
    }
    let (at, regularized) = solved.ok_or_else(|| {
        Error::Singular("block Toeplitz system of the Yule-Walker equations".into())
    })?;
    let coefs: Vec<DMatrix<f64>> = (0..p)
        .map(|k| at.view((k * d, 0), (d, d)).transpose())
        .collect();
    let mut sigma = autocov.get(0);
    for (k, a) in coefs.iter().enumerate() {
        sigma -= a * autocov.get(k as isize + 1).transpose();
    }
    Ok((coefs, sigma, regularized))
}

fn block_criterion(sigma: &DMatrix<f64>, rank: usize, p: usize, t: usize) -> f64 {
    let d = sigma.nrows();
    let (vals, _) = sym_eigen_desc(sigma);
    let scale = vals[0].abs().max(f64::MIN_POSITIVE);
    let log_pdet: f64 = vals
        .iter()
        .take(rank.min(d))
        .map(|v| v.max(1e-12 * scale).ln())
        .sum();
    let t_eff = (t.saturating_sub(p)).max(2) as f64;
    log_pdet + (p * d * d) as f64 * t_eff.ln() / t_eff
}

fn fit_block(
    autocov: &AutocovarianceSequence,
    indices: &[usize],
    rank: usize,
    max_order: usize,
) -> Result<VarBlock> {
    let sub = autocov.select(indices);
    let mut best: Option<(f64, Vec<DMatrix<f64>>, bool)> = None;
    let mut criterion = Vec::with_capacity(max_order);
    for p in 1..=max_order {
        let (coefs, sigma, regularized) = yule_walker(&sub, p)?;
        let ic = block_criterion(&sigma, rank, p, autocov.sample_size);
        criterion.push(ic);
        if best.as_ref().is_none_or(|(b, _, _)| ic < *b) {
            best = Some((ic, coefs, regularized));
        }
    }
    let (_, mut coefs, regularized) = best.expect("max_order >= 1");
    let radius = companion_radius(&coefs);
    let shrunk = !(radius < STABLE_RADIUS);
    if shrunk {
        let s = if radius.is_finite() && radius > 0.0 {
            SHRUNK_RADIUS / radius
        } else {
            0.0
        };
        let mut factor = 1.0;
        for a in &mut coefs {
            factor *= s;
            *a *= factor;
        }
    }
    Ok(VarBlock {
        indices: indices.to_vec(),
        coefs,
        criterion,
        shrunk,
        regularized,
    })
}

/// Yule–Walker block VAR on contiguous blocks of size `q + 1`.
pub fn estimate_block_var(
    autocov: &AutocovarianceSequence,
    q: usize,
    max_order: usize,
) -> Result<BlockVarModel> {
    let blocks = partition_blocks(autocov.n(), q)?;
    estimate_block_var_on(autocov, &blocks, q, max_order)
}

/// Yule–Walker block VAR on a caller-supplied partition.
pub fn estimate_block_var_on(
    autocov: &AutocovarianceSequence,
    blocks: &[Vec<usize>],
    q: usize,
    max_order: usize,
) -> Result<BlockVarModel> {
    let n = autocov.n();
    if max_order == 0 || max_order > autocov.max_lag() {
        return Err(Error::InvalidParameter(format!(
            "max order {max_order} must lie in 1..={}",
            autocov.max_lag()
        )));
    }
    let mut seen = vec![false; n];
    for &i in blocks.iter().flatten() {
        if i >= n || seen[i] {
            return Err(Error::InvalidParameter("blocks must partition the series".into()));
        }
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidParameter("blocks must partition the series".into()));
    }
    let fitted = blocks
        .par_iter()
        .map(|b| fit_block(autocov, b, q, max_order))
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockVarModel { n, blocks: fitted })
}

#[derive(Debug, Clone)]
pub struct FactorLoadings {
    /// n × q, columns are eigenvectors scaled by root eigenvalues.
    pub h: DMatrix<f64>,
    /// q × T unit-covariance factor shocks.
    pub u: DMatrix<f64>,
    /// Leading eigenvalues of the residual covariance.
    pub eigenvalues: Vec<f64>,
}

impl FactorLoadings {
    pub fn q(&self) -> usize {
        self.h.ncols()
    }
}

/// Principal components of the block-VAR residuals: `H = P Lambda^{1/2}` and
/// `u = Lambda^{-1/2} P' e`, each eigenvector oriented to a positive sum.
pub fn estimate_loadings_and_factors(residuals: &TimePanel, q: usize) -> Result<FactorLoadings> {
    let n = residuals.n();
    if q == 0 || q > n {
        return Err(Error::InvalidParameter(format!("q = {q} outside 1..={n}")));
    }
    let cov = sample_covariance(&residuals.values);
    let (vals, vecs) = sym_eigen_desc(&cov);
    let scale = vals[0].abs().max(f64::MIN_POSITIVE);
    if !(vals[q - 1] > 1e-12 * scale) || vals[0] <= 0.0 {
        return Err(Error::Singular(format!(
            "residual covariance has rank below q = {q}"
        )));
    }
    let mut p = vecs.columns(0, q).into_owned();
    for mut col in p.column_iter_mut() {
        if col.sum() < 0.0 {
            col.neg_mut();
        }
    }
    let mut centered = residuals.values.clone();
    for mut row in centered.row_iter_mut() {
        let m = row.mean();
        row.add_scalar_mut(-m);
    }
    let root = DVector::from_iterator(q, vals.iter().take(q).map(|v| v.sqrt()));
    let mut u = p.transpose() * &centered;
    for (k, mut row) in u.row_iter_mut().enumerate() {
        row /= root[k];
    }
    let mut h = p;
    for (k, mut col) in h.column_iter_mut().enumerate() {
        col *= root[k];
    }
    Ok(FactorLoadings {
        h,
        u,
        eigenvalues: vals.iter().take(q).copied().collect(),
    })
}

#[derive(Debug, Clone)]
pub struct CommonIdioSplit {
    pub common: TimePanel,
    pub idiosyncratic: TimePanel,
    /// Summed common variance over summed total variance.
    pub variance_share: f64,
    /// Leading columns computed from truncated recursions.
    pub burn_in: usize,
}

/// `X = A(L)^{-1} H u`, `Z = Y - X`.
pub fn split_common_idio(
    panel: &TimePanel,
    model: &BlockVarModel,
    loadings: &FactorLoadings,
) -> Result<CommonIdioSplit> {
    check_dims(panel, model, loadings)?;
    let radius = model.radius();
    if !(radius < 1.0) {
        return Err(Error::Unstable(radius));
    }
    let common = model.invert(&(&loadings.h * &loadings.u));
    let idio = &panel.values - &common;
    let total: f64 = sample_covariance(&panel.values).trace();
    let share = if total > 0.0 {
        sample_covariance(&common).trace() / total
    } else {
        0.0
    };
    Ok(CommonIdioSplit {
        common: panel.with_values(common),
        idiosyncratic: panel.with_values(idio),
        variance_share: share,
        burn_in: model.max_order(),
    })
}

fn check_dims(panel: &TimePanel, model: &BlockVarModel, loadings: &FactorLoadings) -> Result<()> {
    if model.n != panel.n() || loadings.h.nrows() != panel.n() {
        return Err(Error::DimensionMismatch {
            expected: panel.n(),
            actual: if model.n != panel.n() { model.n } else { loadings.h.nrows() },
        });
    }
    if loadings.u.ncols() != panel.t() {
        return Err(Error::DimensionMismatch {
            expected: panel.t(),
            actual: loadings.u.ncols(),
        });
    }
    Ok(())
}

/// Sign and scale for a single common shock: `K = s * sd(u)` with `s` making
/// the identified shock positively correlated with the cross-sectional mean
/// of the common component.
pub fn common_rotation(model: &BlockVarModel, loadings: &FactorLoadings) -> Result<DMatrix<f64>> {
    let q = loadings.q();
    if q != 1 {
        return Err(Error::MissingRotation(q));
    }
    let common = model.invert(&(&loadings.h * &loadings.u));
    let t = common.ncols();
    let mean: Vec<f64> = (0..t).map(|s| common.column(s).mean()).collect();
    let u: Vec<f64> = loadings.u.row(0).iter().copied().collect();
    let sign = if correlation(&u, &mean) < 0.0 { -1.0 } else { 1.0 };
    let mu = u.iter().sum::<f64>() / t as f64;
    let sd = (u.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / t as f64).sqrt();
    Ok(DMatrix::from_element(1, 1, sign * if sd > 0.0 { sd } else { 1.0 }))
}

/// Identified shocks `K^{-1} u`.
pub fn identified_shocks(loadings: &FactorLoadings, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = k
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("rotation K is not invertible".into()))?;
    Ok(inv * &loadings.u)
}

/// `B(L) = A(L)^{-1} H K` truncated at `horizon`.
pub fn common_lvdn_filter(
    model: &BlockVarModel,
    loadings: &FactorLoadings,
    horizon: usize,
    k: Option<&DMatrix<f64>>,
) -> Result<VmaFilter> {
    let q = loadings.q();
    let k = match k {
        Some(k) if k.nrows() == q && k.ncols() == q => k.clone(),
        Some(k) => {
            return Err(Error::DimensionMismatch {
                expected: q,
                actual: k.nrows(),
            })
        }
        None if q == 1 => common_rotation(model, loadings)?,
        None => return Err(Error::MissingRotation(q)),
    };
    if loadings.h.nrows() != model.n {
        return Err(Error::DimensionMismatch {
            expected: model.n,
            actual: loadings.h.nrows(),
        });
    }
    let a = model.dense_coefs();
    let mut coefs: Vec<DMatrix<f64>> = Vec::with_capacity(horizon + 1);
    coefs.push(&loadings.h * k);
    for step in 1..=horizon {
        let mut b = DMatrix::zeros(model.n, q);
        for s in 1..=step.min(a.len()) {
            b += &a[s - 1] * &coefs[step - s];
        }
        coefs.push(b);
    }
    Ok(VmaFilter {
        coefs,
        shock_labels: (1..=q).map(|j| format!("common_{j}")).collect(),
        permutation: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acov(lags: Vec<DMatrix<f64>>, t: usize) -> AutocovarianceSequence {
        AutocovarianceSequence { lags, sample_size: t }
    }

    #[test]
    fn remainder_goes_to_last_block() {
        let b = partition_blocks(5, 1).unwrap();
        assert_eq!(b, vec![vec![0, 1], vec![2, 3, 4]]);
        assert_eq!(partition_blocks(6, 2).unwrap(), vec![vec![0, 1, 2], vec![3, 4, 5]]);
        assert!(partition_blocks(2, 2).is_err());
    }

    #[test]
    fn white_noise_autocov_gives_zero_coefficients() {
        let n = 4;
        let mut lags = vec![DMatrix::identity(n, n)];
        lags.extend((0..4).map(|_| DMatrix::zeros(n, n)));
        let m = estimate_block_var(&acov(lags, 1000), 1, 4).unwrap();
        for b in &m.blocks {
            assert_eq!(b.order(), 1);
            assert!(b.coefs[0].amax() < 1e-9);
        }
    }

    #[test]
    fn recovers_bivariate_var1_from_exact_autocovariances() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        // Gamma_0 = A Gamma_0 A' + Sigma by fixed-point iteration.
        let mut g0 = sigma.clone();
        for _ in 0..500 {
            g0 = &a * &g0 * a.transpose() + &sigma;
        }
        let mut lags = vec![g0];
        for k in 1..=4 {
            let next = &a * &lags[k - 1];
            lags.push(next);
        }
        let m = estimate_block_var(&acov(lags, 100_000), 1, 4).unwrap();
        assert_eq!(m.blocks.len(), 1);
        let est = &m.blocks[0].coefs[0];
        assert!((est - &a).amax() < 0.02, "{est}");
        assert_eq!(m.blocks[0].order(), 1);
    }

    #[test]
    fn filter_and_invert_are_inverse() {
        let block = VarBlock {
            indices: vec![0, 1],
            coefs: vec![DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.0, 0.3])],
            criterion: vec![],
            shrunk: false,
            regularized: false,
        };
        let m = BlockVarModel { n: 2, blocks: vec![block] };
        let y = DMatrix::from_fn(2, 50, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let back = m.invert(&m.filter(&y));
        assert!((back - y).amax() < 1e-10);
    }

    #[test]
    fn rank_one_residuals_recover_loadings() {
        let h0 = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, -0.5, 0.7]);
        let u0 = DMatrix::from_fn(1, 400, |_, j| ((j as f64) * 0.37).sin() + 0.1 * ((j * j) % 13) as f64);
        let panel = TimePanel::from_values(&h0 * &u0).unwrap();
        let l = estimate_loadings_and_factors(&panel, 1).unwrap();
        let cos = (l.h.transpose() * &h0)[0] / (l.h.norm() * h0.norm());
        assert!((cos.abs() - 1.0).abs() < 1e-9);
        let a: Vec<f64> = l.u.row(0).iter().map(|v| v.abs()).collect();
        let b: Vec<f64> = u0.row(0).iter().map(|v| (v - u0.mean()).abs()).collect();
        assert!(correlation(&a, &b) > 0.999);
        let cov = sample_covariance(&l.u);
        assert!((cov[(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn equal_loadings_give_ones_direction() {
        let u0 = DMatrix::from_fn(1, 300, |_, j| ((j as f64) * 1.3).cos());
        let panel = TimePanel::from_values(DMatrix::from_element(3, 1, -2.0) * u0).unwrap();
        let l = estimate_loadings_and_factors(&panel, 1).unwrap();
        let h = l.h.column(0);
        assert!(h.iter().all(|v| (v - h[0]).abs() < 1e-9 && *v > 0.0));
    }

    #[test]
    fn geometric_common_filter() {
        let blocks = (0..2)
            .map(|i| VarBlock {
                indices: vec![i],
                coefs: vec![DMatrix::from_element(1, 1, 0.5)],
                criterion: vec![],
                shrunk: false,
                regularized: false,
            })
            .collect();
        let m = BlockVarModel { n: 2, blocks };
        let l = FactorLoadings {
            h: DMatrix::from_element(2, 1, 1.0),
            u: DMatrix::from_fn(1, 10, |_, j| j as f64),
            eigenvalues: vec![1.0],
        };
        let k = DMatrix::from_element(1, 1, 1.0);
        let f = common_lvdn_filter(&m, &l, 6, Some(&k)).unwrap();
        for (step, b) in f.coefs.iter().enumerate() {
            assert!((b[(0, 0)] - 0.5f64.powi(step as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn common_filter_sign_invariant() {
        let blocks = vec![VarBlock {
            indices: vec![0, 1],
            coefs: vec![DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.0, 0.2])],
            criterion: vec![],
            shrunk: false,
            regularized: false,
        }];
        let m = BlockVarModel { n: 2, blocks };
        let u = DMatrix::from_fn(1, 200, |_, j| ((j as f64) * 0.9).sin());
        let l = FactorLoadings {
            h: DMatrix::from_column_slice(2, 1, &[1.0, 0.5]),
            u: u.clone(),
            eigenvalues: vec![1.0],
        };
        let flipped = FactorLoadings {
            h: -&l.h,
            u: -u,
            eigenvalues: vec![1.0],
        };
        let a = common_lvdn_filter(&m, &l, 5, None).unwrap();
        let b = common_lvdn_filter(&m, &flipped, 5, None).unwrap();
        for (x, y) in a.coefs.iter().zip(&b.coefs) {
            assert!((x - y).amax() < 1e-12);
        }
        assert!(matches!(
            common_lvdn_filter(
                &m,
                &FactorLoadings {
                    h: DMatrix::zeros(2, 2),
                    u: DMatrix::zeros(2, 200),
                    eigenvalues: vec![1.0, 1.0]
                },
                5,
                None
            ),
            Err(Error::MissingRotation(2))
        ));
    }

    #[test]
    fn zero_loadings_leave_panel_idiosyncratic() {
        let panel = TimePanel::from_values(DMatrix::from_fn(3, 30, |i, j| (i + j) as f64)).unwrap();
        let m = BlockVarModel {
            n: 3,
            blocks: vec![VarBlock {
                indices: vec![0, 1, 2],
                coefs: vec![DMatrix::identity(3, 3) * 0.5],
                criterion: vec![],
                shrunk: false,
                regularized: false,
            }],
        };
        let l = FactorLoadings {
            h: DMatrix::zeros(3, 1),
            u: DMatrix::from_element(1, 30, 1.0),
            eigenvalues: vec![1.0],
        };
        let s = split_common_idio(&panel, &m, &l).unwrap();
        assert!(s.common.values.iter().all(|v| *v == 0.0));
        assert_eq!(s.idiosyncratic.values, panel.values);
        assert_eq!(s.variance_share, 0.0);
    }

    #[test]
    fn penalty_formula() {
        let p = criterion_penalty(30, 2000);
        assert!((p - 30f64.ln() / 30f64.sqrt()).abs() < 1e-12);
        let p = criterion_penalty(100, 400);
        assert!((p - 20f64.ln() / 20f64.sqrt()).abs() < 1e-12);
    }
}
