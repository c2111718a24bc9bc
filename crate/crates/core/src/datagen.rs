//! Synthetic panels with known factor and sparse-VAR structure.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, StudentT};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{companion_radius, cholesky_with_ridge, sample_covariance, spd_inverse};
use crate::panel::TimePanel;

/// Companion radius every generated VAR is scaled below.
pub const TARGET_RADIUS: f64 = 0.9;
const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Innovations {
    Gaussian,
    /// Student-t with 5 degrees of freedom, rescaled to unit variance.
    StudentT5,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoadingSpec {
    pub mean: f64,
    pub sd: f64,
    /// Number of lagged loading terms beyond the contemporaneous one.
    pub lags: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DgpSpec {
    pub n: usize,
    pub t: usize,
    /// Number of common factors; zero gives a purely idiosyncratic panel.
    pub q: usize,
    /// AR(1) coefficient of each factor.
    pub factor_ar: Vec<f64>,
    pub loadings: LoadingSpec,
    pub var_order: usize,
    /// Fraction of nonzero entries per VAR coefficient matrix.
    pub var_density: f64,
    /// Fraction of nonzero off-diagonal pairs in the innovation precision.
    pub precision_density: f64,
    /// Target ratio of summed common variance to summed idiosyncratic variance.
    pub variance_ratio: f64,
    pub innovations: Innovations,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            n: 20,
            t: 1000,
            q: 1,
            factor_ar: vec![0.5],
            loadings: LoadingSpec {
                mean: 1.0,
                sd: 0.5,
                lags: 1,
            },
            var_order: 1,
            var_density: 0.05,
            precision_density: 0.0,
            variance_ratio: 1.0,
            innovations: Innovations::Gaussian,
            burn_in: 200,
            seed: 0,
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n < 2 {
            return bad(format!("n = {} but at least 2 series are required", self.n));
        }
        if self.t < 2 {
            return bad(format!("T = {} but at least 2 observations are required", self.t));
        }
        if self.factor_ar.len() != self.q {
            return bad(format!(
                "{} factor AR coefficients for q = {}",
                self.factor_ar.len(),
                self.q
            ));
        }
        if self.factor_ar.iter().any(|a| a.abs() >= 1.0) {
            return bad("factor AR coefficients must lie in (-1, 1)".into());
        }
        if self.var_order > 0 && !(self.var_density > 0.0 && self.var_density <= 1.0) {
            return bad("VAR density must lie in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.precision_density) {
            return bad("precision density must lie in [0, 1]".into());
        }
        if self.q > 0 && !(self.variance_ratio > 0.0) {
            return bad("variance ratio must be positive".into());
        }
        Ok(())
    }
}

/// Everything used to generate a panel.
#[derive(Debug, Clone, Serialize)]
pub struct GroundTruth {
    /// Idiosyncratic VAR coefficients, `Z_t = sum_k F_k Z_{t-k} + v_t`.
    pub var_coefs: Vec<DMatrix<f64>>,
    /// Innovation precision matrix.
    pub precision: DMatrix<f64>,
    pub innovation_cov: DMatrix<f64>,
    /// Loading matrices for lags `0..=lags`, n × q each, after variance rescaling.
    pub loadings: Vec<DMatrix<f64>>,
    /// q × T factor series.
    pub factors: DMatrix<f64>,
    /// q × T factor innovations.
    pub factor_shocks: DMatrix<f64>,
    pub common: DMatrix<f64>,
    pub idiosyncratic: DMatrix<f64>,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }
}

fn draw_shock(rng: &mut ChaCha8Rng, kind: Innovations) -> f64 {
    match kind {
        Innovations::Gaussian => rng.sample(StandardNormal),
        Innovations::StudentT5 => {
            let t: f64 = rng.sample(StudentT::new(5.0).expect("valid dof"));
            t / (5.0f64 / 3.0).sqrt()
        }
    }
}

/// Random sparse coefficient matrices with magnitudes in [0.2, 0.5], scaled
/// by bisection so the companion radius does not exceed [`TARGET_RADIUS`].
pub fn sparse_var_coefficients(
    n: usize,
    order: usize,
    density: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DMatrix<f64>>> {
    for _ in 0..MAX_REDRAWS {
        let coefs: Vec<DMatrix<f64>> = (0..order)
            .map(|_| {
                DMatrix::from_fn(n, n, |_, _| {
                    if rng.random_bool(density) {
                        let mag = rng.random_range(0.2..0.5);
                        if rng.random_bool(0.5) {
                            mag
                        } else {
                            -mag
                        }
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        let radius = companion_radius(&coefs);
        if !radius.is_finite() {
            continue;
        }
        if radius <= TARGET_RADIUS {
            return Ok(coefs);
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let scaled: Vec<_> = coefs.iter().map(|c| c * mid).collect();
            if companion_radius(&scaled) <= TARGET_RADIUS {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let scaled: Vec<_> = coefs.iter().map(|c| c * lo).collect();
        if companion_radius(&scaled) <= TARGET_RADIUS {
            return Ok(scaled);
        }
    }
    Err(Error::Numerical(format!(
        "no stable VAR draw after {MAX_REDRAWS} attempts"
    )))
}

/// Sparse diagonally dominant precision matrix; off-diagonal magnitudes in [0.3, 0.6].
pub fn sparse_precision(n: usize, density: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut c: DMatrix<f64> = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if density > 0.0 && rng.random_bool(density) {
                let mag = rng.random_range(0.3..0.6);
                let v = if rng.random_bool(0.5) { mag } else { -mag };
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| c[(i, j)].abs()).sum();
        c[(i, i)] = off + 0.5;
    }
    c
}

/// Simulates a sparse VAR with correlated innovations (`burn_in` discarded).
pub fn simulate_var(
    coefs: &[DMatrix<f64>],
    innovation_chol: &DMatrix<f64>,
    t: usize,
    burn_in: usize,
    kind: Innovations,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let n = innovation_chol.nrows();
    let total = t + burn_in;
    let mut z = DMatrix::zeros(n, total);
    for s in 0..total {
        let e = nalgebra::DVector::from_fn(n, |_, _| draw_shock(rng, kind));
        let mut x = innovation_chol * e;
        for (k, f) in coefs.iter().enumerate() {
            if s > k {
                x += f * z.column(s - k - 1);
            }
        }
        z.set_column(s, &x);
    }
    z.columns(burn_in, t).into_owned()
}

pub fn simulate(spec: &DgpSpec) -> Result<(TimePanel, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, t) = (spec.n, spec.t);

    let var_coefs = if spec.var_order == 0 {
        Vec::new()
    } else {
        sparse_var_coefficients(n, spec.var_order, spec.var_density, &mut rng)?
    };
    let precision = sparse_precision(n, spec.precision_density, &mut rng);
    let (innovation_cov, _) = spd_inverse(&precision, 1e12, 1e-10)?;
    let (chol, _) = cholesky_with_ridge(&innovation_cov, 1e-10)?;
    let idio = simulate_var(
        &var_coefs,
        &chol,
        t,
        spec.burn_in,
        spec.innovations,
        &mut rng,
    );

    let q = spec.q;
    let lags = spec.loadings.lags;
    let mut loadings: Vec<DMatrix<f64>> = (0..=lags)
        .map(|_| {
            DMatrix::from_fn(n, q, |_, _| {
                spec.loadings.mean + spec.loadings.sd * rng.sample::<f64, _>(StandardNormal)
            })
        })
        .collect();
    let total = t + spec.burn_in;
    let mut shocks = DMatrix::zeros(q, total);
    let mut factors = DMatrix::zeros(q, total);
    for s in 0..total {
        for k in 0..q {
            let u = draw_shock(&mut rng, spec.innovations);
            shocks[(k, s)] = u;
            let prev = if s > 0 { factors[(k, s - 1)] } else { 0.0 };
            factors[(k, s)] = spec.factor_ar[k] * prev + u;
        }
    }
    let shocks = shocks.columns(spec.burn_in, t).into_owned();
    let factors_full = factors;
    let factors = factors_full.columns(spec.burn_in, t).into_owned();
    let mut common = DMatrix::zeros(n, t);
    if q > 0 {
        for (l, lam) in loadings.iter().enumerate() {
            let lagged = factors_full.columns(spec.burn_in - l.min(spec.burn_in), t);
            common += lam * lagged;
        }
        let var_common: f64 = sample_covariance(&common).trace();
        let var_idio: f64 = sample_covariance(&idio).trace();
        if var_common > 0.0 {
            let scale = (spec.variance_ratio * var_idio / var_common).sqrt();
            common *= scale;
            for lam in &mut loadings {
                *lam *= scale;
            }
        }
    }
    let values = &common + &idio;
    let panel = TimePanel::from_values(values)?;
    Ok((
        panel,
        GroundTruth {
            var_coefs,
            precision,
            innovation_cov,
            loadings,
            factors,
            factor_shocks: shocks,
            common,
            idiosyncratic: idio,
        },
    ))
}

/// Returns panel whose shocks carry a common stochastic log-variance factor.
///
/// Level structure: one AR(1) factor with lag-1 loadings plus a sparse VAR
/// idiosyncratic part. The level-common shock is `exp(s_t / 2) z_t` and each
/// idiosyncratic innovation is `exp((a_i s_t + g_it) / 2) e_it`, where `s_t`
/// is an AR(1) market log-variance and `g_it` are independent AR(1) terms.
#[derive(Debug, Clone, Serialize)]
pub struct VolDgpSpec {
    pub n: usize,
    pub t: usize,
    pub level_factor_ar: f64,
    pub variance_ratio: f64,
    pub var_order: usize,
    pub var_density: f64,
    pub precision_density: f64,
    /// Persistence of the market log-variance.
    pub market_persistence: f64,
    /// Innovation sd of the market log-variance.
    pub market_vol_of_vol: f64,
    pub idio_persistence: f64,
    pub idio_vol_of_vol: f64,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for VolDgpSpec {
    fn default() -> Self {
        VolDgpSpec {
            n: 30,
            t: 2000,
            level_factor_ar: 0.3,
            variance_ratio: 0.5,
            var_order: 1,
            var_density: 0.05,
            precision_density: 0.05,
            market_persistence: 0.95,
            market_vol_of_vol: 0.4,
            idio_persistence: 0.9,
            idio_vol_of_vol: 0.3,
            burn_in: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VolTruth {
    pub market_log_variance: Vec<f64>,
    pub market_loadings: Vec<f64>,
    pub var_coefs: Vec<DMatrix<f64>>,
    pub level_loadings: Vec<DMatrix<f64>>,
}

pub fn simulate_volatility(spec: &VolDgpSpec) -> Result<(TimePanel, VolTruth)> {
    if spec.n < 2 || spec.t < 2 {
        return Err(Error::InvalidParameter("volatility DGP needs n >= 2 and T >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, t, burn) = (spec.n, spec.t, spec.burn_in);
    let total = t + burn;
    let var_coefs = if spec.var_order == 0 {
        Vec::new()
    } else {
        sparse_var_coefficients(n, spec.var_order, spec.var_density, &mut rng)?
    };
    let precision = sparse_precision(n, spec.precision_density, &mut rng);
    let (cov, _) = spd_inverse(&precision, 1e12, 1e-10)?;
    let (chol, _) = cholesky_with_ridge(&cov, 1e-10)?;
    let market_loadings: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let level_loadings: Vec<DMatrix<f64>> = (0..2)
        .map(|_| DMatrix::from_fn(n, 1, |_, _| 1.0 + 0.5 * rng.sample::<f64, _>(StandardNormal)))
        .collect();

    let mut s = vec![0.0; total];
    let mut g = vec![0.0; n];
    let mut factor = vec![0.0; total];
    let mut idio = DMatrix::zeros(n, total);
    for step in 0..total {
        let prev_s = if step > 0 { s[step - 1] } else { 0.0 };
        s[step] = spec.market_persistence * prev_s
            + spec.market_vol_of_vol * rng.sample::<f64, _>(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let prev_f = if step > 0 { factor[step - 1] } else { 0.0 };
        factor[step] = spec.level_factor_ar * prev_f + (0.5 * s[step]).exp() * z;

        let e = nalgebra::DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut v = &chol * e;
        for i in 0..n {
            g[i] = spec.idio_persistence * g[i]
                + spec.idio_vol_of_vol * rng.sample::<f64, _>(StandardNormal);
            v[i] *= (0.5 * (market_loadings[i] * s[step] + g[i])).exp();
        }
        for (k, f) in var_coefs.iter().enumerate() {
            if step > k {
                v += f * idio.column(step - k - 1);
            }
        }
        idio.set_column(step, &v);
    }
    let idio = idio.columns(burn, t).into_owned();
    let mut common = DMatrix::zeros(n, t);
    for (l, lam) in level_loadings.iter().enumerate() {
        let lagged = DMatrix::from_fn(1, t, |_, j| factor[burn + j - l]);
        common += lam * lagged;
    }
    let var_common = sample_covariance(&common).trace();
    let var_idio = sample_covariance(&idio).trace();
    let scale = (spec.variance_ratio * var_idio / var_common).sqrt();
    common *= scale;
    let panel = TimePanel::from_values(&common + &idio)?;
    Ok((
        panel,
        VolTruth {
            market_log_variance: s[burn..].to_vec(),
            market_loadings,
            var_coefs,
            level_loadings: level_loadings.into_iter().map(|l| l * scale).collect(),
        },
    ))
}
