//! Two-step volatility network pipeline: a factor model on returns, then
//! factor models and sparse VAR networks on log-squared shocks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result, StageContext};
use crate::export::{
    adjacency_csv, edge_list, gexf, panel_csv, symmetric_edge_list, write_gzip, write_text,
};
use crate::gdfm::{
    common_lvdn_filter, estimate_block_var_on, estimate_loadings_and_factors, hallin_liska_q_with,
    identified_shocks, partition_blocks, BlockVarModel, CommonIdioSplit, CriterionConfig,
    FactorCount, FactorLoadings,
};
use crate::identify::{
    eigenvector_centrality, estimate_pcn_with, order_and_choleski, CentralityMode,
    CentralityRanking, CholeskiFactor, Pcn, PcnConfig,
};
use crate::linalg::{correlation, sample_covariance, spd_inverse};
use crate::lvdn::{
    degrees, fevd, invert_var, lgcn, threshold_lvdn, DegreeReport, FevdMatrix, Network,
    NetworkKind, ThresholdResult, ThresholdRule, VmaFilter,
};
use crate::panel::{center, SectorMap, TimePanel};
use crate::spectral::{
    autocovariances, common_spectrum_projection, default_bandwidth, estimate_spectral_density,
    sample_autocovariance,
};
use crate::sparse_var::{fit_sparse_var, SparseVarConfig, SparseVarModel};

/// Shocks smaller than this in absolute value are floored.
pub const SHOCK_FLOOR: f64 = 1e-8;
/// `log(1e-16)`, the proxy value of a floored shock.
pub const LOG_FLOOR: f64 = -36.841_361_487_904_734;

/// Stage names in execution order.
pub const STAGES: [&str; 8] = [
    "returns_factor_count",
    "returns_gdfm",
    "returns_sparse_var",
    "volatility_proxies",
    "volatility_factor_count",
    "volatility_gdfm",
    "idiosyncratic_var",
    "connectedness",
];

/// Resolves a user-supplied stage name.
pub fn parse_stage(name: &str) -> Result<&'static str> {
    STAGES
        .iter()
        .find(|s| s.eq_ignore_ascii_case(name.trim()))
        .copied()
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "unknown stage `{name}`; expected one of {}",
                STAGES.join(", ")
            ))
        })
}

#[derive(Debug, Clone)]
pub struct VolatilityProxies {
    /// `log eta^2`.
    pub sigma: TimePanel,
    /// `log v^2`.
    pub omega: TimePanel,
    pub sigma_floored: Vec<usize>,
    pub omega_floored: Vec<usize>,
}

fn log_square(panel: &TimePanel) -> Result<(TimePanel, Vec<usize>)> {
    let mut floored = vec![0; panel.n()];
    let mut values = panel.values.clone();
    for (i, mut row) in values.row_iter_mut().enumerate() {
        for x in row.iter_mut() {
            if !x.is_finite() {
                return Err(Error::Numerical(format!("non-finite shock in series `{}`", panel.labels[i])));
            }
            *x = if x.abs() < SHOCK_FLOOR {
                floored[i] += 1;
                LOG_FLOOR
            } else {
                (*x * *x).ln()
            };
        }
    }
    Ok((panel.with_values(values), floored))
}

/// Entrywise `log x^2`, with `|x| < 1e-8` mapped to `log 1e-16` and counted.
pub fn volatility_proxies(eta: &TimePanel, v: &TimePanel) -> Result<VolatilityProxies> {
    if eta.values.shape() != v.values.shape() {
        return Err(Error::DimensionMismatch {
            expected: eta.values.len(),
            actual: v.values.len(),
        });
    }
    let (sigma, sigma_floored) = log_square(eta)?;
    let (omega, omega_floored) = log_square(v)?;
    Ok(VolatilityProxies {
        sigma,
        omega,
        sigma_floored,
        omega_floored,
    })
}

#[derive(Debug, Clone)]
pub struct JointFactorCount {
    pub sigma: FactorCount,
    pub omega: FactorCount,
    /// Count on the stacked `2n` panel.
    pub joint: FactorCount,
}

impl JointFactorCount {
    pub fn qs(&self) -> (usize, usize, usize) {
        (self.sigma.q, self.omega.q, self.joint.q)
    }
}

pub fn joint_block_q(sigma: &TimePanel, omega: &TimePanel, q_max: usize) -> Result<JointFactorCount> {
    joint_block_q_with(sigma, omega, q_max, &CriterionConfig::default())
}

/// Factor counts of each panel and of the two stacked on top of each other.
pub fn joint_block_q_with(
    sigma: &TimePanel,
    omega: &TimePanel,
    q_max: usize,
    cfg: &CriterionConfig,
) -> Result<JointFactorCount> {
    if sigma.t() != omega.t() {
        return Err(Error::DimensionMismatch {
            expected: sigma.t(),
            actual: omega.t(),
        });
    }
    let stacked = sigma.stack(omega, ("_sigma", "_omega"))?;
    let clamp = |n: usize| q_max.min(n.saturating_sub(1)).max(1);
    Ok(JointFactorCount {
        sigma: hallin_liska_q_with(sigma, clamp(sigma.n()), cfg)?,
        omega: hallin_liska_q_with(omega, clamp(omega.n()), cfg)?,
        joint: hallin_liska_q_with(&stacked, clamp(stacked.n()), cfg)?,
    })
}

/// Per-sector percentages, one column per filter.
#[derive(Debug, Clone, Serialize)]
pub struct SectoralShareTable {
    pub sectors: Vec<String>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl SectoralShareTable {
    pub fn column_sums(&self) -> Vec<f64> {
        self.columns.iter().map(|(_, c)| c.iter().sum()).collect()
    }

    /// Appends the columns of `other`, which must list the same sectors.
    pub fn join(mut self, other: SectoralShareTable) -> Result<SectoralShareTable> {
        if self.sectors != other.sectors {
            return Err(Error::InvalidParameter("share tables list different sectors".into()));
        }
        self.columns.extend(other.columns);
        Ok(self)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sector");
        for (name, _) in &self.columns {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (j, s) in self.sectors.iter().enumerate() {
            out.push_str(s);
            for (_, c) in &self.columns {
                let _ = write!(out, ",{}", c[j]);
            }
            out.push('\n');
        }
        out
    }
}

/// Share of each sector in the summed squared responses to a single shock,
/// accumulated over lags `0..=horizon`, in percent.
pub fn sectoral_common_shares(
    filter: &VmaFilter,
    sectors: &SectorMap,
    horizon: usize,
) -> Result<SectoralShareTable> {
    if filter.shocks() != 1 {
        return Err(Error::InvalidParameter(format!(
            "sectoral shares need a single-shock filter, got {} shocks",
            filter.shocks()
        )));
    }
    let n = filter.n();
    if sectors.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: sectors.n(),
        });
    }
    let mut energy = vec![0.0; n];
    for b in filter.coefs.iter().take(horizon + 1) {
        for (i, e) in energy.iter_mut().enumerate() {
            *e += b[(i, 0)] * b[(i, 0)];
        }
    }
    let total: f64 = energy.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("common filter has zero energy".into()));
    }
    let shares = sectors
        .names()
        .iter()
        .map(|name| 100.0 * sectors.members(name).iter().map(|&i| energy[i]).sum::<f64>() / total)
        .collect();
    Ok(SectoralShareTable {
        sectors: sectors.names().to_vec(),
        columns: vec![("share".into(), shares)],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Whiteness {
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
    pub lags: usize,
    /// Whiteness rejected at the configured level.
    pub rejected: bool,
}

/// Multivariate portmanteau statistic
/// `T^2 sum_{k=1..m} tr(C_k' C_0^{-1} C_k C_0^{-1}) / (T - k)`, chi-squared with `n^2 m` dof.
pub fn portmanteau(panel: &TimePanel, lags: usize, level: f64) -> Result<Whiteness> {
    let (n, t) = (panel.n(), panel.t());
    if lags == 0 || lags + 1 >= t {
        return Err(Error::InvalidParameter(format!("portmanteau lags {lags} outside 1..{t}")));
    }
    let centered = center(panel).values;
    let c0 = sample_autocovariance(&centered, 0);
    let (inv, _) = spd_inverse(&c0, 1e12, 1e-10)?;
    let tf = t as f64;
    let mut q = 0.0;
    for k in 1..=lags {
        let ck = sample_autocovariance(&centered, k);
        let m = ck.transpose() * &inv * &ck * &inv;
        q += tf * tf * m.trace() / (tf - k as f64);
    }
    let dof = (n * n * lags) as f64;
    let dist = ChiSquared::new(dof).map_err(|e| Error::Numerical(e.to_string()))?;
    let p_value = 1.0 - dist.cdf(q);
    Ok(Whiteness {
        statistic: q,
        dof,
        p_value,
        lags,
        rejected: p_value < level,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Largest factor count considered by the criterion.
    pub q_max: usize,
    pub criterion: CriterionConfig,
    /// Lag-window bandwidth of the factor-model spectra; `floor(sqrt T)` when `None`.
    pub bandwidth: Option<usize>,
    /// Largest Yule–Walker order per block.
    pub max_block_order: usize,
    pub sparse_var: SparseVarConfig,
    pub pcn: PcnConfig,
    pub horizon: usize,
    /// Extra horizons at which total connectedness is reported.
    pub report_horizons: Vec<usize>,
    pub centrality: CentralityMode,
    pub threshold: ThresholdRule,
    pub whiteness_lags: usize,
    pub whiteness_level: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            q_max: 5,
            criterion: CriterionConfig::default(),
            bandwidth: None,
            max_block_order: 4,
            sparse_var: SparseVarConfig::default(),
            pcn: PcnConfig::default(),
            horizon: 20,
            report_horizons: vec![5, 10, 20],
            centrality: CentralityMode::Unsigned,
            threshold: ThresholdRule::Objective,
            whiteness_lags: 5,
            whiteness_level: 0.05,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Every violated precondition, empty when the configuration is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.q_max == 0 {
            out.push("q_max must be positive".into());
        }
        if self.max_block_order == 0 {
            out.push("max_block_order must be positive".into());
        }
        if self.horizon == 0 {
            out.push("horizon must be positive".into());
        }
        if self.report_horizons.contains(&0) {
            out.push("report horizons must be positive".into());
        }
        if self.bandwidth == Some(0) {
            out.push("bandwidth must be positive".into());
        }
        if self.whiteness_lags == 0 {
            out.push("whiteness_lags must be positive".into());
        }
        if !(self.whiteness_level > 0.0 && self.whiteness_level < 1.0) {
            out.push("whiteness_level must lie in (0, 1)".into());
        }
        if let ThresholdRule::Fixed(tau) = self.threshold {
            if !(tau >= 0.0 && tau.is_finite()) {
                out.push("threshold must be a nonnegative number".into());
            }
        }
        let sv = &self.sparse_var;
        if sv.p_grid.is_empty() || sv.p_grid.contains(&0) {
            out.push("VAR order grid must be nonempty and positive".into());
        }
        if sv.lambda_grid_size == 0 || self.pcn.lambda_grid_size == 0 {
            out.push("lambda grids must be nonempty".into());
        }
        if !(sv.alpha > 0.0 && sv.alpha <= 1.0) {
            out.push("alpha must lie in (0, 1]".into());
        }
        if let Some(r) = sv.ridge {
            if !(r > 0.0 && r.is_finite()) {
                out.push("ridge must be positive".into());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(p.join("; ")))
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "q_max": self.q_max,
            "criterion": {
                "subpanels": self.criterion.subpanels,
                "first_subpanel": self.criterion.first_subpanel,
                "c_max": self.criterion.c_max,
                "c_step": self.criterion.c_step,
                "min_stable_points": self.criterion.min_stable_points,
                "seed": self.seed,
            },
            "bandwidth": self.bandwidth,
            "max_block_order": self.max_block_order,
            "penalty": self.sparse_var.method.to_string(),
            "alpha": self.sparse_var.alpha,
            "ridge": self.sparse_var.ridge,
            "p_grid": self.sparse_var.p_grid,
            "lambda_grid_size": self.sparse_var.lambda_grid_size,
            "lambda_min_ratio": self.sparse_var.lambda_min_ratio,
            "order_rule": self.sparse_var.order_rule,
            "pcn_lambda_grid_size": self.pcn.lambda_grid_size,
            "horizon": self.horizon,
            "report_horizons": self.report_horizons,
            "centrality": self.centrality,
            "threshold": self.threshold,
            "whiteness_lags": self.whiteness_lags,
            "whiteness_level": self.whiteness_level,
            "seed": self.seed,
        })
    }
}

/// A fitted factor model: block VAR, loadings and the resulting split.
#[derive(Debug, Clone)]
pub struct GdfmFit {
    pub q: usize,
    pub model: BlockVarModel,
    pub loadings: FactorLoadings,
    /// Block-VAR residuals `A(L) Y`.
    pub residuals: TimePanel,
    pub split: CommonIdioSplit,
}

/// Spectral projection, Yule–Walker block VAR, principal components of its
/// residuals, and the common/idiosyncratic split at a given `q`.
pub fn fit_gdfm(
    panel: &TimePanel,
    q: usize,
    blocks: Option<Vec<Vec<usize>>>,
    bandwidth: Option<usize>,
    max_order: usize,
) -> Result<GdfmFit> {
    let bw = bandwidth.unwrap_or_else(|| default_bandwidth(panel.t()));
    let spec = estimate_spectral_density(panel, bw, bw.max(max_order))?;
    let common = common_spectrum_projection(&spec, q)?;
    let acov = autocovariances(&common, max_order)?;
    let blocks = match blocks {
        Some(b) => b,
        None => partition_blocks(panel.n(), q)?,
    };
    let model = estimate_block_var_on(&acov, &blocks, q, max_order)?;
    let residuals = panel.with_values(model.filter(&panel.values));
    let loadings = estimate_loadings_and_factors(&residuals, q)?;
    let split = crate::gdfm::split_common_idio(panel, &model, &loadings)?;
    Ok(GdfmFit {
        q,
        model,
        loadings,
        residuals,
        split,
    })
}

fn variance_share(common: &DMatrix<f64>, total: &DMatrix<f64>) -> f64 {
    let denom = sample_covariance(total).trace();
    if denom > 0.0 {
        sample_covariance(common).trace() / denom
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceShares {
    pub returns: f64,
    pub sigma: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

/// Sparse VAR and identification of one idiosyncratic panel.
#[derive(Debug, Clone)]
pub struct IdiosyncraticVar {
    pub var: SparseVarModel,
    pub pcn: Pcn,
    pub ranking: CentralityRanking,
    pub choleski: CholeskiFactor,
    pub filter: VmaFilter,
}

/// Networks and connectedness built from an [`IdiosyncraticVar`].
#[derive(Debug, Clone)]
pub struct Connectedness {
    /// FEVD in original series order.
    pub fevd: FevdMatrix,
    pub degrees: DegreeReport,
    pub threshold: ThresholdResult,
    pub lvdn: Network,
    pub lgcn: Network,
    pub pcn: Network,
    /// `(h, total connectedness)` for each reported horizon.
    pub by_horizon: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct TwoStepResult {
    pub config: PipelineConfig,
    pub returns_count: FactorCount,
    /// Factor count used at the returns level, at least one.
    pub returns_q: usize,
    pub returns_gdfm: GdfmFit,
    pub returns_var: SparseVarModel,
    pub returns_lgcn: Network,
    /// Level-common shocks `eta` and level-idiosyncratic innovations `v`, aligned.
    pub eta: TimePanel,
    pub v: TimePanel,
    pub proxies: VolatilityProxies,
    pub sigma_centered: TimePanel,
    pub omega_centered: TimePanel,
    pub joint: JointFactorCount,
    /// Factor model of the stacked volatility panel, absent when `q = 0`.
    pub volatility_gdfm: Option<GdfmFit>,
    pub sigma_split: CommonIdioSplit,
    pub omega_split: CommonIdioSplit,
    /// Identified market volatility shock, when the joint count is one.
    pub market_shock: Option<TimePanel>,
    pub sigma_filter: Option<VmaFilter>,
    pub omega_filter: Option<VmaFilter>,
    pub sectoral_shares: Option<SectoralShareTable>,
    pub sigma_whiteness: Whiteness,
    pub omega_var: IdiosyncraticVar,
    pub omega_network: Connectedness,
    /// Present only when the whiteness of the sigma idiosyncratic panel is rejected.
    pub sigma_var: Option<IdiosyncraticVar>,
    pub sigma_network: Option<Connectedness>,
    pub variance_shares: VarianceShares,
    pub sectors: SectorMap,
    pub timings: Vec<StageTiming>,
    pub warnings: Vec<String>,
}

struct Clock {
    timings: Vec<StageTiming>,
    start: Instant,
}

impl Clock {
    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage,
            seconds: (now - self.start).as_secs_f64(),
        });
        self.start = now;
    }
}

fn row_block(m: &DMatrix<f64>, start: usize, n: usize) -> DMatrix<f64> {
    m.rows(start, n).into_owned()
}

fn half_filter(f: &VmaFilter, start: usize, n: usize) -> VmaFilter {
    VmaFilter {
        coefs: f.coefs.iter().map(|b| row_block(b, start, n)).collect(),
        shock_labels: f.shock_labels.clone(),
        permutation: None,
    }
}

fn zero_split(panel: &TimePanel) -> CommonIdioSplit {
    CommonIdioSplit {
        common: panel.with_values(DMatrix::zeros(panel.n(), panel.t())),
        idiosyncratic: panel.clone(),
        variance_share: 0.0,
        burn_in: 0,
    }
}

fn idiosyncratic_var(
    panel: &TimePanel,
    cfg: &PipelineConfig,
    warnings: &mut Vec<String>,
    tag: &str,
) -> Result<IdiosyncraticVar> {
    let var = fit_sparse_var(panel, &cfg.sparse_var)?;
    warnings.extend(var.warnings.iter().map(|w| format!("{tag} VAR: {w}")));
    let pcn = estimate_pcn_with(&var.residuals, &cfg.pcn)?;
    let ranking = if pcn.weights.amax() > 0.0 {
        eigenvector_centrality(&pcn.weights, cfg.centrality, false)?
    } else {
        warnings.push(format!("{tag} PCN is empty; input order used for identification"));
        let n = pcn.n();
        CentralityRanking {
            scores: vec![1.0 / n as f64; n],
            order: (0..n).collect(),
            mode: cfg.centrality,
            fallback: true,
        }
    };
    let choleski = order_and_choleski(&var.residuals, &ranking)?;
    let horizon = cfg
        .report_horizons
        .iter()
        .copied()
        .chain([cfg.horizon])
        .max()
        .unwrap_or(cfg.horizon);
    let filter = invert_var(&var, &choleski, horizon)?;
    Ok(IdiosyncraticVar {
        var,
        pcn,
        ranking,
        choleski,
        filter,
    })
}

fn truncated(filter: &VmaFilter, h: usize) -> VmaFilter {
    VmaFilter {
        coefs: filter.coefs.iter().take(h + 1).cloned().collect(),
        shock_labels: filter.shock_labels.clone(),
        permutation: filter.permutation.clone(),
    }
}

fn connectedness(
    idio: &IdiosyncraticVar,
    labels: &[String],
    sectors: &SectorMap,
    cfg: &PipelineConfig,
) -> Result<Connectedness> {
    let w = fevd(&truncated(&idio.filter, cfg.horizon))?.in_original_order();
    let tol = 1e-8;
    for i in 0..w.n() {
        let s = w.weights.row(i).sum();
        if (s - 100.0).abs() > tol {
            return Err(Error::Numerical(format!("FEVD row {i} sums to {s}")));
        }
    }
    let deg = degrees(&w, sectors)?;
    let threshold = threshold_lvdn(&w, cfg.threshold)?;
    let mut hs: Vec<usize> = cfg.report_horizons.clone();
    hs.push(cfg.horizon);
    hs.sort_unstable();
    hs.dedup();
    let by_horizon = hs
        .into_iter()
        .map(|h| {
            let f = fevd(&truncated(&idio.filter, h))?;
            Ok((h, degrees(&f, &SectorMap::single(f.n()))?.total))
        })
        .collect::<Result<Vec<_>>>()?;
    let tags = (0..sectors.n()).map(|i| sectors.tag(i).to_string()).collect::<Vec<_>>();
    let lvdn = Network::new(w.weights.clone(), labels.to_vec(), NetworkKind::Lvdn)?
        .with_sectors(Some(tags.clone()));
    let granger = lgcn(&idio.var, labels)?.with_sectors(Some(tags.clone()));
    let pcn = Network::new(idio.pcn.weights.clone(), labels.to_vec(), NetworkKind::Pcn)?
        .with_sectors(Some(tags));
    Ok(Connectedness {
        fevd: w,
        degrees: deg,
        threshold,
        lvdn,
        lgcn: granger,
        pcn,
        by_horizon,
    })
}

/// Runs the full two-step procedure on a returns panel.
pub fn run_pipeline(returns: &TimePanel, cfg: &PipelineConfig) -> Result<TwoStepResult> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let mut clock = Clock {
        timings: Vec::new(),
        start: Instant::now(),
    };
    let n = returns.n();
    if n < 3 {
        return Err(Error::TooFewSeries {
            required: 3,
            actual: n,
        });
    }
    let sectors = SectorMap::for_panel(returns).unwrap_or_else(|| SectorMap::single(n));
    let criterion = CriterionConfig {
        bandwidth: cfg.bandwidth,
        seed: cfg.seed,
        ..cfg.criterion.clone()
    };
    let y = center(returns);

    let stage = STAGES[0];
    let returns_count = hallin_liska_q_with(&y, cfg.q_max.min(n - 1), &criterion).stage(stage)?;
    if returns_count.fallback {
        warnings.push("returns factor count: no stability interval, c = 1 used".into());
    }
    let returns_q = returns_count.q.max(1);
    if returns_count.q == 0 {
        warnings.push("returns factor count was 0; one factor used".into());
    }
    clock.lap(stage);

    let stage = STAGES[1];
    let returns_gdfm = fit_gdfm(&y, returns_q, None, cfg.bandwidth, cfg.max_block_order).stage(stage)?;
    clock.lap(stage);

    let stage = STAGES[2];
    let returns_var = fit_sparse_var(&returns_gdfm.split.idiosyncratic, &cfg.sparse_var).stage(stage)?;
    warnings.extend(returns_var.warnings.iter().map(|w| format!("returns VAR: {w}")));
    let returns_lgcn = lgcn(&returns_var, &returns.labels).stage(stage)?;
    clock.lap(stage);

    let stage = STAGES[3];
    let t = y.t();
    let p = returns_var.order;
    let s0 = returns_gdfm.split.burn_in.max(p);
    if t <= s0 + 2 * cfg.whiteness_lags + 2 {
        return Err(Error::TooFewObservations {
            required: s0 + 2 * cfg.whiteness_lags + 3,
            actual: t,
        })
        .stage(stage);
    }
    let eta = returns_gdfm.residuals.columns(s0, t);
    let v = returns_var.residuals.columns(s0 - p, t - p);
    let proxies = volatility_proxies(&eta, &v).stage(stage)?;
    for (name, counts) in [("sigma", &proxies.sigma_floored), ("omega", &proxies.omega_floored)] {
        let total: usize = counts.iter().sum();
        if total > 0 {
            warnings.push(format!("{total} {name} proxy entries floored"));
        }
    }
    let sigma_centered = center(&proxies.sigma);
    let omega_centered = center(&proxies.omega);
    clock.lap(stage);

    let stage = STAGES[4];
    let joint = joint_block_q_with(&sigma_centered, &omega_centered, cfg.q_max, &criterion).stage(stage)?;
    clock.lap(stage);

    let stage = STAGES[5];
    let (qs, qw, q) = joint.qs();
    let stacked = sigma_centered.stack(&omega_centered, ("_sigma", "_omega")).stage(stage)?;
    let (volatility_gdfm, sigma_split, omega_split) = if q == 0 {
        (None, zero_split(&sigma_centered), zero_split(&omega_centered))
    } else {
        let blocks = if (qs, qw, q) == (1, 1, 1) {
            let mut b = partition_blocks(n, 1).stage(stage)?;
            b.extend(
                partition_blocks(n, 1)
                    .stage(stage)?
                    .into_iter()
                    .map(|blk| blk.into_iter().map(|i| i + n).collect::<Vec<_>>()),
            );
            Some(b)
        } else {
            None
        };
        let fit = fit_gdfm(&stacked, q, blocks, cfg.bandwidth, cfg.max_block_order).stage(stage)?;
        let common = &fit.split.common.values;
        let half = |panel: &TimePanel, start: usize| {
            let c = row_block(common, start, n);
            CommonIdioSplit {
                variance_share: variance_share(&c, &panel.values),
                idiosyncratic: panel.with_values(&panel.values - &c),
                common: panel.with_values(c),
                burn_in: fit.split.burn_in,
            }
        };
        let (s, w) = (half(&sigma_centered, 0), half(&omega_centered, n));
        (Some(fit), s, w)
    };
    let mut market_shock = None;
    let mut sigma_filter = None;
    let mut omega_filter = None;
    let mut sectoral_shares = None;
    if let Some(fit) = &volatility_gdfm {
        if q == 1 {
            let b = common_lvdn_filter(&fit.model, &fit.loadings, cfg.horizon, None).stage(stage)?;
            let k = crate::gdfm::common_rotation(&fit.model, &fit.loadings).stage(stage)?;
            let shock = identified_shocks(&fit.loadings, &k).stage(stage)?;
            let common = &fit.split.common.values;
            let mean: Vec<f64> = (0..common.ncols()).map(|s| common.column(s).mean()).collect();
            let e: Vec<f64> = shock.row(0).iter().copied().collect();
            if correlation(&e, &mean) < 0.0 {
                return Err(Error::Numerical("market shock sign convention violated".into())).stage(stage);
            }
            let label = vec!["market".to_string()];
            market_shock = Some(TimePanel {
                values: shock,
                labels: label,
                dates: stacked.dates.clone(),
                sectors: None,
                means: None,
            });
            let bs = half_filter(&b, 0, n);
            let bw = half_filter(&b, n, n);
            let mut table = sectoral_common_shares(&bs, &sectors, cfg.horizon).stage(stage)?;
            table.columns[0].0 = "sigma".into();
            let mut tw = sectoral_common_shares(&bw, &sectors, cfg.horizon).stage(stage)?;
            tw.columns[0].0 = "omega".into();
            sectoral_shares = Some(table.join(tw).stage(stage)?);
            sigma_filter = Some(bs);
            omega_filter = Some(bw);
        } else {
            warnings.push(format!(
                "joint volatility factor count {q} > 1: market shock not identified"
            ));
        }
    }
    for (name, split, panel) in [
        ("sigma", &sigma_split, &sigma_centered),
        ("omega", &omega_split, &omega_centered),
    ] {
        let gap = (&split.common.values + &split.idiosyncratic.values - &panel.values).amax();
        if gap > 1e-9 * panel.values.amax().max(1.0) {
            return Err(Error::Numerical(format!("{name} split does not reconstruct the panel"))).stage(stage);
        }
    }
    clock.lap(stage);

    let stage = STAGES[6];
    let sigma_whiteness = portmanteau(&sigma_split.idiosyncratic, cfg.whiteness_lags, cfg.whiteness_level)
        .stage(stage)?;
    let omega_var = idiosyncratic_var(&omega_split.idiosyncratic, cfg, &mut warnings, "omega").stage(stage)?;
    let sigma_var = if sigma_whiteness.rejected {
        Some(idiosyncratic_var(&sigma_split.idiosyncratic, cfg, &mut warnings, "sigma").stage(stage)?)
    } else {
        warnings.push(format!(
            "sigma idiosyncratic panel not distinguishable from white noise (p = {:.4}); network skipped",
            sigma_whiteness.p_value
        ));
        None
    };
    clock.lap(stage);

    let stage = STAGES[7];
    let omega_network = connectedness(&omega_var, &returns.labels, &sectors, cfg).stage(stage)?;
    let sigma_network = sigma_var
        .as_ref()
        .map(|s| connectedness(s, &returns.labels, &sectors, cfg))
        .transpose()
        .stage(stage)?;
    clock.lap(stage);

    let variance_shares = VarianceShares {
        returns: returns_gdfm.split.variance_share,
        sigma: sigma_split.variance_share,
        omega: omega_split.variance_share,
    };
    Ok(TwoStepResult {
        config: cfg.clone(),
        returns_count,
        returns_q,
        returns_gdfm,
        returns_var,
        returns_lgcn,
        eta,
        v,
        proxies,
        sigma_centered,
        omega_centered,
        joint,
        volatility_gdfm,
        sigma_split,
        omega_split,
        market_shock,
        sigma_filter,
        omega_filter,
        sectoral_shares,
        sigma_whiteness,
        omega_var,
        omega_network,
        sigma_var,
        sigma_network,
        variance_shares,
        sectors,
        timings: clock.timings,
        warnings,
    })
}

/// One file of a result bundle, relative to the bundle root.
#[derive(Debug, Clone)]
pub struct BundleFile {
    pub path: PathBuf,
    pub contents: String,
    pub gzip: bool,
}

fn file(path: &str, contents: String) -> BundleFile {
    BundleFile {
        path: PathBuf::from(path),
        contents,
        gzip: false,
    }
}

fn gz(path: &str, panel: &TimePanel) -> BundleFile {
    BundleFile {
        path: PathBuf::from(format!("{path}.csv.gz")),
        contents: panel_csv(panel),
        gzip: true,
    }
}

fn degree_table(net: &Connectedness, ranking: &CentralityRanking, sectors: &SectorMap) -> String {
    let ranks = ranking.ranks();
    let mut out = String::from("label,sector,from_degree,to_degree,centrality,rank\n");
    for (i, l) in net.lvdn.labels.iter().enumerate() {
        let _ = writeln!(
            out,
            "{l},{},{},{},{},{}",
            sectors.tag(i),
            net.degrees.from[i],
            net.degrees.to[i],
            ranking.scores[i],
            ranks[i] + 1
        );
    }
    out
}

fn sector_table(net: &Connectedness) -> String {
    let mut out = String::from("sector,size,mean_from,mean_to\n");
    for s in &net.degrees.sectors {
        let _ = writeln!(out, "{},{},{},{}", s.sector, s.size, s.mean_from, s.mean_to);
    }
    out
}

fn threshold_table(net: &Connectedness) -> String {
    let mut out = String::from("percentile,tau,objective,density\n");
    for p in &net.threshold.curve {
        let pc = p.percentile.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(out, "{pc},{},{},{}", p.tau, p.objective, p.density);
    }
    out
}

fn network_files(out: &mut Vec<BundleFile>, tag: &str, idio: &IdiosyncraticVar, net: &Connectedness, sectors: &SectorMap) {
    let labels = &net.lvdn.labels;
    let thresholded = Network {
        adjacency: net.threshold.adjacency.clone(),
        ..net.lvdn.clone()
    };
    out.extend([
        file(&format!("networks/{tag}_lvdn_adjacency.csv"), adjacency_csv(labels, &net.lvdn.adjacency)),
        file(&format!("networks/{tag}_lvdn_edges.csv"), edge_list(&net.lvdn)),
        file(&format!("networks/{tag}_lvdn_thresholded_edges.csv"), edge_list(&thresholded)),
        file(&format!("networks/{tag}_lvdn.gexf"), gexf(&thresholded, Some(&net.degrees))),
        file(&format!("networks/{tag}_lgcn_edges.csv"), edge_list(&net.lgcn)),
        file(&format!("networks/{tag}_lgcn_adjacency.csv"), adjacency_csv(labels, &net.lgcn.adjacency)),
        file(&format!("networks/{tag}_pcn_edges.csv"), symmetric_edge_list(&net.pcn)),
        file(&format!("networks/{tag}_var_coefficients.csv"), idio.var.to_triplets(labels)),
        file(&format!("tables/{tag}_node_degrees.csv"), degree_table(net, &idio.ranking, sectors)),
        file(&format!("tables/{tag}_sector_degrees.csv"), sector_table(net)),
        file(&format!("tables/{tag}_threshold_curve.csv"), threshold_table(net)),
    ]);
}

impl TwoStepResult {
    /// Total connectedness of the omega LVDN at the configured horizon.
    pub fn total_connectedness(&self) -> f64 {
        self.omega_network.degrees.total
    }

    /// Every numeric output of the run, rendered as text.
    pub fn render(&self) -> Vec<BundleFile> {
        let mut out = vec![
            gz("panels/returns_common", &self.returns_gdfm.split.common),
            gz("panels/returns_idiosyncratic", &self.returns_gdfm.split.idiosyncratic),
            gz("panels/eta", &self.eta),
            gz("panels/v", &self.v),
            gz("panels/sigma", &self.proxies.sigma),
            gz("panels/omega", &self.proxies.omega),
            gz("panels/sigma_common", &self.sigma_split.common),
            gz("panels/sigma_idiosyncratic", &self.sigma_split.idiosyncratic),
            gz("panels/omega_common", &self.omega_split.common),
            gz("panels/omega_idiosyncratic", &self.omega_split.idiosyncratic),
        ];
        if let Some(m) = &self.market_shock {
            out.push(gz("panels/market_shock", m));
        }
        out.push(file("networks/returns_lgcn_edges.csv", edge_list(&self.returns_lgcn)));
        out.push(file(
            "networks/returns_var_coefficients.csv",
            self.returns_var.to_triplets(&self.returns_gdfm.split.common.labels),
        ));
        network_files(&mut out, "omega", &self.omega_var, &self.omega_network, &self.sectors);
        if let (Some(v), Some(c)) = (&self.sigma_var, &self.sigma_network) {
            network_files(&mut out, "sigma", v, c, &self.sectors);
        }

        let mut counts = String::from("panel,q,c,fallback\n");
        for (name, fc) in [
            ("returns", &self.returns_count),
            ("sigma", &self.joint.sigma),
            ("omega", &self.joint.omega),
            ("joint", &self.joint.joint),
        ] {
            let _ = writeln!(counts, "{name},{},{},{}", fc.q, fc.c, fc.fallback);
        }
        out.push(file("tables/factor_counts.csv", counts));
        out.push(file("tables/returns_criterion.csv", self.returns_count.to_csv()));
        let vs = &self.variance_shares;
        out.push(file(
            "tables/variance_shares.csv",
            format!("panel,common_share\nreturns,{}\nsigma,{}\nomega,{}\n", vs.returns, vs.sigma, vs.omega),
        ));
        if let Some(t) = &self.sectoral_shares {
            out.push(file("tables/sectoral_common_shares.csv", t.to_csv()));
        }
        let mut conn = String::from("network,horizon,total_connectedness\n");
        for (tag, net) in [("omega", Some(&self.omega_network)), ("sigma", self.sigma_network.as_ref())] {
            if let Some(net) = net {
                for (h, total) in &net.by_horizon {
                    let _ = writeln!(conn, "{tag},{h},{total}");
                }
            }
        }
        out.push(file("tables/connectedness.csv", conn));
        let w = &self.sigma_whiteness;
        out.push(file(
            "tables/whiteness.csv",
            format!(
                "panel,statistic,dof,p_value,lags,rejected\nsigma_idiosyncratic,{},{},{},{},{}\n",
                w.statistic, w.dof, w.p_value, w.lags, w.rejected
            ),
        ));
        out
    }

    /// Run summary, without timings.
    pub fn summary_json(&self) -> serde_json::Value {
        let (qs, qw, qj) = self.joint.qs();
        json!({
            "returns_q": self.returns_q,
            "returns_q_criterion": self.returns_count.q,
            "sigma_q": qs,
            "omega_q": qw,
            "joint_q": qj,
            "returns_var_order": self.returns_var.order,
            "omega_var_order": self.omega_var.var.order,
            "variance_shares": self.variance_shares,
            "total_connectedness": self.total_connectedness(),
            "lvdn_threshold": self.omega_network.threshold.tau,
            "lgcn_density": self.omega_network.lgcn.density(),
            "pcn_density": self.omega_var.pcn.density(),
            "sigma_network": self.sigma_network.is_some(),
            "proxy_floor_counts": {
                "sigma": self.proxies.sigma_floored.iter().sum::<usize>(),
                "omega": self.proxies.omega_floored.iter().sum::<usize>(),
            },
            "warnings": self.warnings,
        })
    }
}

/// Writes every rendered file plus `manifest.json` under `dir`. The
/// manifest records `run` (caller-supplied), the pipeline config, the
/// summary, stage timings and the file list.
pub fn write_bundle(result: &TwoStepResult, dir: &Path, run: serde_json::Value) -> Result<Vec<BundleFile>> {
    let files = result.render();
    for f in &files {
        let path = dir.join(&f.path);
        if f.gzip {
            write_gzip(&path, &f.contents)?;
        } else {
            write_text(&path, &f.contents)?;
        }
    }
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "run": run,
        "config": result.config.to_json(),
        "summary": result.summary_json(),
        "timings": result.timings,
        "files": files.iter().map(|f| f.path.to_string_lossy().into_owned()).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Numerical(e.to_string()))?;
    write_text(&dir.join("manifest.json"), &text)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proxy_values_and_floor() {
        let eta = TimePanel::from_values(DMatrix::from_row_slice(2, 3, &[1.0, 0.5f64.exp(), 0.0, 1.0, 1.0, 1.0])).unwrap();
        let p = volatility_proxies(&eta, &eta).unwrap();
        assert_eq!(p.sigma.values[(0, 0)], 0.0);
        assert!((p.sigma.values[(0, 1)] - 1.0).abs() < 1e-15);
        assert_eq!(p.sigma.values[(0, 2)], 1e-16f64.ln());
        assert_eq!(p.sigma_floored, vec![1, 0]);
    }

    #[test]
    fn equal_loadings_give_equal_sector_shares() {
        let n = 90;
        let filter = VmaFilter {
            coefs: vec![DMatrix::from_element(n, 1, 0.7), DMatrix::from_element(n, 1, 0.2)],
            shock_labels: vec!["m".into()],
            permutation: None,
        };
        let tags = (0..n).map(|i| format!("s{}", i / 9)).collect();
        let t = sectoral_common_shares(&filter, &SectorMap::from_tags(tags), 20).unwrap();
        assert_eq!(t.sectors.len(), 10);
        for v in &t.columns[0].1 {
            assert!((v - 10.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_sector_share() {
        let mut b = DMatrix::from_element(4, 1, 1.0);
        b[(0, 0)] = 0.0;
        b[(1, 0)] = 0.0;
        let filter = VmaFilter {
            coefs: vec![b],
            shock_labels: vec!["m".into()],
            permutation: None,
        };
        let tags = vec!["a".into(), "a".into(), "b".into(), "c".into()];
        let t = sectoral_common_shares(&filter, &SectorMap::from_tags(tags), 5).unwrap();
        assert_eq!(t.columns[0].1, vec![0.0, 50.0, 50.0]);
    }

    #[test]
    fn stage_names_parse() {
        assert_eq!(parse_stage("Connectedness").unwrap(), "connectedness");
        assert!(parse_stage("plotting").is_err());
    }
}
