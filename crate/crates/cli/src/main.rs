mod config;

use std::path::PathBuf;
use std::process;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use volnet::datagen::{simulate, simulate_volatility, DgpSpec, Innovations, VolDgpSpec};
use volnet::export::{panel_csv, write_text};
use volnet::identify::CentralityMode;
use volnet::lvdn::ThresholdRule;
use volnet::panel::{cumulate_returns, load_panel, log_returns, slice_period, PeriodFilter};
use volnet::solver::PenaltyMethod;
use volnet::sparse_var::OrderRule;
use volnet::volpipe::{parse_stage, run_pipeline, write_bundle, BundleFile, PipelineConfig, STAGES};
use volnet::{Error, ErrorKind};

use config::{List, Settings};

#[derive(Debug, Parser)]
#[command(name = "volnet", version, about = "Factor plus sparse VAR volatility networks")]
struct Cli {
    /// Worker threads; all available cores by default.
    #[arg(long, global = true)]
    threads: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the two-step pipeline on a price or return panel and write a result bundle.
    Run(RunArgs),
    /// Generate a synthetic panel with its ground truth.
    Simulate(SimulateArgs),
    /// Time every pipeline stage on a synthetic panel.
    Bench(BenchArgs),
}

/// Options shared by `run` and `bench`; each maps to a config key of the same name.
#[derive(Debug, Args)]
struct PipelineArgs {
    /// elastic-net, adaptive-lasso or group-lasso.
    #[arg(long)]
    penalty: Option<String>,
    /// Elastic-net mixing weight in (0, 1].
    #[arg(long)]
    alpha: Option<String>,
    /// Adaptive-lasso ridge strength; chosen by GCV when absent.
    #[arg(long)]
    ridge: Option<String>,
    /// Largest VAR order considered.
    #[arg(long = "p-max")]
    p_max: Option<String>,
    #[arg(long = "lambda-grid")]
    lambda_grid: Option<String>,
    #[arg(long = "lambda-min-ratio")]
    lambda_min_ratio: Option<String>,
    /// summed or modal.
    #[arg(long = "order-rule")]
    order_rule: Option<String>,
    /// Forecast horizon of the variance decompositions.
    #[arg(long)]
    horizon: Option<String>,
    /// unsigned or signed.
    #[arg(long)]
    centrality: Option<String>,
    /// `objective` or a fixed weight threshold.
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long = "q-max")]
    q_max: Option<String>,
    /// Lag-window bandwidth of the factor-model spectra.
    #[arg(long)]
    bandwidth: Option<String>,
    #[arg(long = "max-block-order")]
    max_block_order: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// `key = value` file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Delimited panel with a `date` column followed by one column per series.
    #[arg(long)]
    input: Option<String>,
    /// `label,sector` file.
    #[arg(long)]
    sectors: Option<String>,
    /// prices or returns.
    #[arg(long = "input-kind")]
    input_kind: Option<String>,
    /// Inclusive date range `YYYY-MM-DD:YYYY-MM-DD`.
    #[arg(long)]
    period: Option<String>,
    /// Bundle directory.
    #[arg(long)]
    out: Option<String>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// factor or volatility.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    t: Option<String>,
    /// Number of factors (factor model only).
    #[arg(long)]
    q: Option<String>,
    /// Factor AR coefficient shared by all factors.
    #[arg(long = "factor-ar")]
    factor_ar: Option<String>,
    #[arg(long = "var-order")]
    var_order: Option<String>,
    #[arg(long)]
    density: Option<String>,
    #[arg(long = "precision-density")]
    precision_density: Option<String>,
    /// Common to idiosyncratic variance ratio.
    #[arg(long)]
    ratio: Option<String>,
    /// gaussian or t5.
    #[arg(long)]
    innovations: Option<String>,
    #[arg(long = "burn-in")]
    burn_in: Option<String>,
    /// Number of equal-size synthetic sectors.
    #[arg(long = "n-sectors")]
    n_sectors: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    t: Option<String>,
    /// Comma-separated stage names to report; all by default.
    #[arg(long)]
    stages: Option<String>,
    /// Also write the timing report here.
    #[arg(long)]
    out: Option<String>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

enum Failure {
    Config(Vec<String>),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum InputKind {
    Prices,
    Returns,
}

impl FromStr for InputKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "prices" => Ok(InputKind::Prices),
            "returns" => Ok(InputKind::Returns),
            _ => Err("expected `prices` or `returns`".into()),
        }
    }
}

struct Threshold(ThresholdRule);

impl FromStr for Threshold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("objective") {
            return Ok(Threshold(ThresholdRule::Objective));
        }
        s.parse::<f64>()
            .map(|v| Threshold(ThresholdRule::Fixed(v)))
            .map_err(|_| "expected `objective` or a number".into())
    }
}

struct Model(bool);

impl FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "factor" => Ok(Model(false)),
            "volatility" => Ok(Model(true)),
            _ => Err("expected `factor` or `volatility`".into()),
        }
    }
}

struct Innov(Innovations);

impl FromStr for Innov {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Innov(Innovations::Gaussian)),
            "t5" | "student-t5" => Ok(Innov(Innovations::StudentT5)),
            _ => Err("expected `gaussian` or `t5`".into()),
        }
    }
}

fn pipeline_config(s: &mut Settings, a: &PipelineArgs) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    let sv = &mut cfg.sparse_var;
    sv.method = s.get_or::<PenaltyMethod>("penalty", a.penalty.as_deref(), sv.method);
    sv.alpha = s.get_or("alpha", a.alpha.as_deref(), sv.alpha);
    sv.ridge = s.get("ridge", a.ridge.as_deref());
    let p_max: usize = s.get_or("p-max", a.p_max.as_deref(), 5);
    sv.p_grid = (1..=p_max).collect();
    sv.lambda_grid_size = s.get_or("lambda-grid", a.lambda_grid.as_deref(), sv.lambda_grid_size);
    sv.lambda_min_ratio = s.get_or("lambda-min-ratio", a.lambda_min_ratio.as_deref(), sv.lambda_min_ratio);
    sv.order_rule = s.get_or::<OrderRule>("order-rule", a.order_rule.as_deref(), sv.order_rule);
    cfg.horizon = s.get_or("horizon", a.horizon.as_deref(), cfg.horizon);
    cfg.centrality = s.get_or::<CentralityMode>("centrality", a.centrality.as_deref(), cfg.centrality);
    if let Some(Threshold(t)) = s.get("threshold", a.threshold.as_deref()) {
        cfg.threshold = t;
    }
    cfg.q_max = s.get_or("q-max", a.q_max.as_deref(), cfg.q_max);
    cfg.bandwidth = s.get("bandwidth", a.bandwidth.as_deref());
    cfg.max_block_order = s.get_or("max-block-order", a.max_block_order.as_deref(), cfg.max_block_order);
    cfg.seed = s.get_or("seed", a.seed.as_deref(), cfg.seed);
    cfg.criterion.seed = cfg.seed;
    if !(cfg.sparse_var.lambda_min_ratio > 0.0 && cfg.sparse_var.lambda_min_ratio <= 1.0) {
        s.problems.push("lambda-min-ratio must lie in (0, 1]".into());
    }
    s.problems.extend(cfg.problems());
    cfg
}

fn threads(s: &mut Settings, flag: Option<&str>) -> Option<usize> {
    let t: Option<usize> = s.get("threads", flag);
    s.check(t != Some(0), "--threads must be positive");
    t
}

fn finish(s: Settings) -> Result<(), Failure> {
    let problems = s.finish();
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Config(problems))
    }
}

fn set_threads(n: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(vec![format!("cannot configure {n} threads: {e}")]))?;
    }
    Ok(())
}

/// SHA-256 over every rendered file, path and contents, in bundle order.
fn checksum(files: &[BundleFile]) -> String {
    let mut h = Sha256::new();
    for f in files {
        h.update(f.path.to_string_lossy().as_bytes());
        h.update([0u8]);
        h.update(f.contents.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn cmd_run(a: RunArgs, thread_flag: Option<&str>) -> Result<(), Failure> {
    let mut s = Settings::load(a.config.as_deref());
    let input: Option<PathBuf> = s.require("input", a.input.as_deref());
    let sectors: Option<PathBuf> = s.get("sectors", a.sectors.as_deref());
    let kind = s.get_or("input-kind", a.input_kind.as_deref(), InputKind::Prices);
    let period_raw: Option<String> = s.get("period", a.period.as_deref());
    let period = period_raw.as_deref().and_then(|p| match PeriodFilter::parse(p) {
        Ok(f) => Some(f),
        Err(e) => {
            s.problems.push(format!("--period `{p}`: {e}"));
            None
        }
    });
    let out: Option<PathBuf> = s.require("out", a.out.as_deref());
    let cfg = pipeline_config(&mut s, &a.pipeline);
    let n_threads = threads(&mut s, thread_flag);
    finish(s)?;
    let (input, out) = (input.unwrap(), out.unwrap());
    set_threads(n_threads)?;

    let report = load_panel(&input, sectors.as_deref())?;
    for label in &report.dropped {
        eprintln!("volnet: dropped series `{label}` with missing values");
    }
    let mut returns = match kind {
        InputKind::Prices => log_returns(&report.panel)?,
        InputKind::Returns => report.panel,
    };
    if let Some(p) = &period {
        returns = slice_period(&returns, p)?;
    }
    eprintln!("volnet: {} series, {} observations", returns.n(), returns.t());
    let result = run_pipeline(&returns, &cfg)?;
    let files = result.render();
    let sum = checksum(&files);
    let run = json!({
        "command": "run",
        "args": std::env::args().collect::<Vec<_>>(),
        "input": input,
        "sectors": sectors,
        "input_kind": format!("{kind:?}").to_lowercase(),
        "period": period_raw,
        "threads": n_threads,
        "n": returns.n(),
        "t": returns.t(),
        "dropped": report.dropped,
        "checksum": sum,
    });
    write_bundle(&result, &out, run)?;
    let (qs, qw, qj) = result.joint.qs();
    println!("returns q = {}, volatility q = ({qs}, {qw}, {qj})", result.returns_q);
    println!(
        "common variance shares: returns {:.4}, sigma {:.4}, omega {:.4}",
        result.variance_shares.returns, result.variance_shares.sigma, result.variance_shares.omega
    );
    println!("total connectedness (h = {}): {:.4}", cfg.horizon, result.total_connectedness());
    for w in &result.warnings {
        eprintln!("volnet: warning: {w}");
    }
    println!("checksum {sum}");
    println!("bundle written to {}", out.display());
    Ok(())
}

fn sector_tags(n: usize, k: usize) -> Vec<String> {
    (0..n).map(|i| format!("sector_{}", i * k / n + 1)).collect()
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), Failure> {
    let mut s = Settings::load(a.config.as_deref());
    let Model(volatility) = s.get_or("model", a.model.as_deref(), Model(false));
    let base = DgpSpec::default();
    let vbase = VolDgpSpec::default();
    let n: usize = s.get_or("n", a.n.as_deref(), if volatility { vbase.n } else { base.n });
    let t: usize = s.get_or("t", a.t.as_deref(), if volatility { vbase.t } else { base.t });
    let q: usize = s.get_or("q", a.q.as_deref(), base.q);
    let factor_ar: f64 = s.get_or(
        "factor-ar",
        a.factor_ar.as_deref(),
        if volatility { vbase.level_factor_ar } else { base.factor_ar[0] },
    );
    let var_order: usize = s.get_or("var-order", a.var_order.as_deref(), base.var_order);
    let density: f64 = s.get_or("density", a.density.as_deref(), base.var_density);
    let precision_density: f64 = s.get_or(
        "precision-density",
        a.precision_density.as_deref(),
        if volatility { vbase.precision_density } else { base.precision_density },
    );
    let ratio: f64 = s.get_or(
        "ratio",
        a.ratio.as_deref(),
        if volatility { vbase.variance_ratio } else { base.variance_ratio },
    );
    let Innov(innovations) = s.get_or("innovations", a.innovations.as_deref(), Innov(base.innovations));
    let burn_in: usize = s.get_or(
        "burn-in",
        a.burn_in.as_deref(),
        if volatility { vbase.burn_in } else { base.burn_in },
    );
    let n_sectors: usize = s.get_or("n-sectors", a.n_sectors.as_deref(), 1);
    let seed: u64 = s.get_or("seed", a.seed.as_deref(), 0);
    let out: Option<PathBuf> = s.require("out", a.out.as_deref());
    s.check(n_sectors >= 1 && n_sectors <= n.max(1), "--n-sectors must lie in 1..=n");
    let spec = DgpSpec {
        n,
        t,
        q,
        factor_ar: vec![factor_ar; q],
        loadings: base.loadings.clone(),
        var_order,
        var_density: density,
        precision_density,
        variance_ratio: ratio,
        innovations,
        burn_in,
        seed,
    };
    let vspec = VolDgpSpec {
        n,
        t,
        level_factor_ar: factor_ar,
        variance_ratio: ratio,
        var_order,
        var_density: density,
        precision_density,
        burn_in,
        seed,
        ..vbase
    };
    if volatility {
        s.check(n >= 2, format!("n = {n} but at least 2 series are required"));
        s.check(t >= 2, format!("T = {t} but at least 2 observations are required"));
        s.check(factor_ar.abs() < 1.0, "factor AR coefficient must lie in (-1, 1)");
        s.check(ratio > 0.0, "variance ratio must be positive");
        s.check(
            var_order == 0 || (density > 0.0 && density <= 1.0),
            "VAR density must lie in (0, 1]",
        );
        s.check((0.0..=1.0).contains(&precision_density), "precision density must lie in [0, 1]");
    } else if let Err(e) = spec.validate() {
        s.problems.push(e.to_string());
    }
    finish(s)?;
    let out = out.unwrap();

    let (panel, truth, spec_json) = if volatility {
        let (p, truth) = simulate_volatility(&vspec)?;
        let truth = serde_json::to_string_pretty(&truth).map_err(|e| Error::Numerical(e.to_string()))?;
        (p, truth, serde_json::to_value(&vspec))
    } else {
        let (p, truth) = simulate(&spec)?;
        (p, truth.to_json(), serde_json::to_value(&spec))
    };
    let tags = sector_tags(panel.n(), n_sectors);
    let panel = panel.with_sectors(tags.clone())?;
    let start = vec![100.0; panel.n()];
    let first = panel.dates[0].pred_opt().expect("synthetic dates start after the minimum date");
    let prices = cumulate_returns(&panel, &start, first);
    let mut sectors = String::from("label,sector\n");
    for (l, tag) in panel.labels.iter().zip(&tags) {
        sectors.push_str(&format!("{l},{tag}\n"));
    }
    let spec_json = spec_json.map_err(|e| Error::Numerical(e.to_string()))?;
    let files: Vec<(&str, String)> = vec![
        ("returns.csv", panel_csv(&panel)),
        ("prices.csv", panel_csv(&prices)),
        ("sectors.csv", sectors),
        ("truth.json", truth),
        ("spec.json", serde_json::to_string_pretty(&spec_json).expect("spec serializes")),
    ];
    for (name, text) in &files {
        write_text(&out.join(name), text)?;
    }
    println!("wrote {} series x {} observations to {}", panel.n(), panel.t(), out.display());
    Ok(())
}

fn cmd_bench(a: BenchArgs, thread_flag: Option<&str>) -> Result<(), Failure> {
    let mut s = Settings::load(a.config.as_deref());
    let n: usize = s.get_or("n", a.n.as_deref(), 90);
    let t: usize = s.get_or("t", a.t.as_deref(), 3457);
    let stages: Option<List<String>> = s.get("stages", a.stages.as_deref());
    let mut selected: Vec<&'static str> = Vec::new();
    match &stages {
        Some(List(names)) => {
            for name in names {
                match parse_stage(name) {
                    Ok(st) => selected.push(st),
                    Err(e) => s.problems.push(e.to_string()),
                }
            }
            s.check(!names.is_empty(), "--stages needs at least one stage name");
        }
        None => selected.extend(STAGES),
    }
    let out: Option<PathBuf> = s.get("out", a.out.as_deref());
    let cfg = pipeline_config(&mut s, &a.pipeline);
    s.check(n >= 3, format!("n = {n} but at least 3 series are required"));
    let n_threads = threads(&mut s, thread_flag);
    finish(s)?;
    set_threads(n_threads)?;

    let (panel, _) = simulate_volatility(&VolDgpSpec {
        n,
        t,
        seed: cfg.seed,
        ..Default::default()
    })?;
    let started = Instant::now();
    let result = run_pipeline(&panel, &cfg)?;
    let total = started.elapsed().as_secs_f64();
    let mut report = String::from("stage,seconds\n");
    for timing in result.timings.iter().filter(|x| selected.contains(&x.stage)) {
        report.push_str(&format!("{},{:.6}\n", timing.stage, timing.seconds));
    }
    print!("{report}");
    eprintln!("volnet: total {total:.3}s, n = {n}, T = {t}, {} threads", rayon::current_num_threads());
    eprintln!("checksum {}", checksum(&result.render()));
    if let Some(path) = out {
        write_text(&path, &report)?;
    }
    Ok(())
}

fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            process::exit(code);
        }
    };
    let threads = cli.threads.as_deref();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a, threads),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a, threads),
    };
    match outcome {
        Ok(()) => {}
        Err(Failure::Config(problems)) => {
            for p in &problems {
                eprintln!("volnet: config error: {p}");
            }
            process::exit(1);
        }
        Err(Failure::Run(e)) => {
            eprintln!("volnet: error: {e}");
            process::exit(exit_code(e.kind()));
        }
    }
}
