//! Config-driven runs: resolve a [`RunConfig`], execute one command, and
//! write outputs plus a manifest into the output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::diagnose::{self, DiagnoseOptions};
use crate::error::{Error, Result};
use crate::estimate::{self, IllustrativeOptions, NpregOptions};
use crate::reporting::ReportingMixture;
use crate::seed;
use crate::simulate::{self, DgpSpec, FigureOptions, ReportingSampler, Scale};
use crate::weights::{self, DeltaSpec};

pub const DEFAULT_N: usize = 10_000;
pub const DEFAULT_OUTPUT: &str = "ordlab_out";
const DIAGNOSE_BOOTSTRAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Weights,
    Table,
    Simulate,
    Estimate,
    Diagnose,
    Reproduce,
}

impl Command {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.into())).map_err(|_| Error::Config(format!("unknown command `{s}`")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Weights => "weights",
            Command::Table => "table",
            Command::Simulate => "simulate",
            Command::Estimate => "estimate",
            Command::Diagnose => "diagnose",
            Command::Reproduce => "reproduce",
        }
    }
}

/// Everything a run needs. Missing optional fields take documented defaults
/// during [`RunConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Inline DGP, used instead of a preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgp: Option<DgpSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub with_latent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub npreg: Option<NpregOptions>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fields set in `other` replace those here.
    pub fn overlay(mut self, other: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(command, preset, dgp, figure, deltas, categories, n, seed, jobs, output, bootstrap, rho, npreg);
        self.with_latent |= other.with_latent;
        self
    }

    pub fn command(&self) -> Result<Command> {
        self.command.ok_or_else(|| Error::Config("no command given".into()))
    }

    /// The DGP named by the preset or given inline, reseeded by `seed`.
    pub fn spec(&self) -> Result<DgpSpec> {
        let mut spec = match (&self.preset, &self.dgp) {
            (Some(_), Some(_)) => return Err(Error::Config("give either a preset or an inline dgp, not both".into())),
            (Some(p), None) => simulate::preset(p)?,
            (None, Some(d)) => d.clone(),
            (None, None) => return Err(Error::Config("a preset or inline dgp is required".into())),
        };
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn illustrative_scale(&self) -> Option<Scale> {
        match self.preset.as_deref() {
            Some("illustrative_binary") => Some(Scale::Binary),
            Some("illustrative_11") => Some(Scale::Eleven),
            _ => None,
        }
    }

    /// Checks the schema and fills every default, so the result replays the run.
    pub fn resolve(&self) -> Result<RunConfig> {
        let command = self.command()?;
        let mut c = self.clone();
        if c.seed.is_none() {
            return Err(Error::Config(format!("`{}` is stochastic and needs a seed", command.name())));
        }
        match c.jobs {
            Some(0) => return Err(Error::Config("jobs must be at least 1".into())),
            None => c.jobs = Some(1),
            _ => {}
        }
        c.output.get_or_insert_with(|| PathBuf::from(DEFAULT_OUTPUT));
        let figure_defaults = FigureOptions::default();
        match command {
            Command::Reproduce => {
                let f = c.figure.clone().ok_or_else(|| Error::Config("reproduce needs a figure name".into()))?;
                simulate::preset(&f)?;
                c.deltas.get_or_insert(figure_defaults.deltas);
                c.categories.get_or_insert(figure_defaults.categories);
            }
            Command::Table => {
                c.spec()?;
                c.deltas.get_or_insert(figure_defaults.deltas);
                c.categories.get_or_insert(figure_defaults.categories);
            }
            Command::Weights => {
                c.spec()?;
            }
            Command::Simulate => {
                c.spec()?;
                c.n.get_or_insert(DEFAULT_N);
                if c.illustrative_scale().is_some() {
                    c.rho.get_or_insert(0.0);
                }
            }
            Command::Estimate => {
                if c.illustrative_scale().is_none() {
                    return Err(Error::Config("estimate runs on the illustrative presets".into()));
                }
                c.n.get_or_insert(DEFAULT_N);
                c.rho.get_or_insert(0.0);
                c.bootstrap.get_or_insert(estimate::bootstrap::DEFAULT_REPLICATES);
                c.npreg.get_or_insert_with(NpregOptions::default);
            }
            Command::Diagnose => {
                c.spec()?;
                c.n.get_or_insert(DEFAULT_N);
                c.bootstrap.get_or_insert(DIAGNOSE_BOOTSTRAP);
                if c.illustrative_scale().is_some() {
                    c.rho.get_or_insert(0.0);
                }
            }
        }
        if let Some(cats) = &c.categories {
            if cats.iter().any(|&k| k < 2) {
                return Err(Error::Config("every scale needs at least 2 categories".into()));
            }
        }
        if c.n == Some(0) {
            return Err(Error::Config("n must be at least 1".into()));
        }
        Ok(c)
    }
}

/// Files written by a successful run, manifest last.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn population(spec: &DgpSpec) -> Result<ReportingMixture> {
    spec.mixture(spec.rbar, seed::derive(spec.seed, "population", &[]))
}

/// Weight decomposition of a DGP's population, as written to `weights.json`.
pub fn weights_report(spec: &DgpSpec) -> Result<Value> {
    let mixture = population(spec)?;
    let dist = &spec.latent_at_base;
    let cdf_slopes = (0..mixture.rbar()).map(|r| weights::cdf_slope_weight(&mixture, dist, r)).collect::<Result<Vec<_>>>()?;
    let mean_slope = weights::mean_slope_total(&mixture, dist)?.total;
    let discrete = weights::discrete_total(&mixture, dist, &spec.delta)?.total;
    let (cell, bounds) = match spec.delta {
        DeltaSpec::Constant(d) => {
            let cell = weights::ratio_cell(&mixture, dist, d)?;
            let bounds = match spec.reporting {
                ReportingSampler::Linear { .. } => Some(weights::bounds_check(&spec.scales(seed::derive(spec.seed, "population", &[]))?, dist, &dist.shifted(d), d)?),
                _ => None,
            };
            (Some(cell), bounds)
        }
        DeltaSpec::Distribution(_) => (None, None),
    };
    Ok(json!({
        "dgp": spec.name,
        "rbar": mixture.rbar(),
        "cdf_slope_weights": cdf_slopes,
        "mean_slope_total": mean_slope,
        "discrete_total": discrete,
        "ratio": cell,
        "bounds": bounds,
    }))
}

fn run_weights(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let path = out.join("weights.json");
    write_json(&path, &weights_report(&cfg.spec()?)?)?;
    Ok(vec![path])
}

fn run_table(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let spec = cfg.spec()?;
    let rows = weights::ratio_table(
        &spec,
        cfg.deltas.as_deref().unwrap_or_default(),
        cfg.categories.as_deref().unwrap_or_default(),
        seed::derive(spec.seed, "figure_table", &[]),
    )?;
    let path = out.join(format!("{}_ratio.csv", spec.name));
    weights::write_ratio_csv(&rows, File::create(&path)?)?;
    Ok(vec![path])
}

/// The sample a `simulate` or `diagnose` run works on.
pub fn dataset(cfg: &RunConfig) -> Result<simulate::Dataset> {
    let n = cfg.n.unwrap_or(DEFAULT_N);
    let seed = cfg.seed.unwrap_or_default();
    match cfg.illustrative_scale() {
        Some(scale) => simulate::build_illustrative(cfg.rho.unwrap_or(0.0), scale, n, seed),
        None => simulate::draw(&cfg.spec()?, n),
    }
}

fn run_simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let data = dataset(cfg)?;
    let path = out.join("dataset.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    data.write_csv(&mut w, cfg.with_latent)?;
    w.flush()?;
    Ok(vec![path])
}

fn run_estimate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let opts = IllustrativeOptions {
        rho: cfg.rho.unwrap_or(0.0),
        scale: cfg.illustrative_scale().expect("checked in resolve"),
        n: cfg.n.unwrap_or(DEFAULT_N),
        seed: cfg.seed.unwrap_or_default(),
        bootstrap: cfg.bootstrap.unwrap_or(estimate::bootstrap::DEFAULT_REPLICATES),
        npreg: cfg.npreg.clone().unwrap_or_default(),
    };
    let report = estimate::illustrative(&opts)?;
    let json_path = out.join("estimate.json");
    write_json(&json_path, &report)?;
    let table_path = out.join("estimate.txt");
    std::fs::write(&table_path, report.table())?;
    Ok(vec![json_path, table_path])
}

fn run_diagnose(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let seed = cfg.seed.unwrap_or_default();
    let bootstrap = cfg.bootstrap.unwrap_or(DIAGNOSE_BOOTSTRAP);
    let mut files = vec![];
    let mut report = serde_json::Map::new();
    let data = dataset(cfg)?;
    let (var, opts, data) = if cfg.illustrative_scale().is_some() {
        let logged = data.with_column(estimate::LOG_INCOME, data.column(estimate::INCOME)?.iter().map(|v| v.ln()).collect())?;
        let yitzhaki = diagnose::yitzhaki_weights(&logged.column(estimate::LOG_INCOME)?, diagnose::YITZHAKI_GRID)?;
        report.insert("yitzhaki_log_income".into(), serde_json::to_value(yitzhaki)?);
        let opts = DiagnoseOptions {
            continuous: vec![estimate::LOG_INCOME.into()],
            discrete: vec![estimate::MARRIED.into()],
            bootstrap,
            seed,
            ..Default::default()
        };
        (estimate::MARRIED, opts, logged)
    } else {
        let spec = cfg.spec()?;
        let mixture = population(&spec)?;
        let base = &spec.latent_at_base;
        let shifted = base.shifted(spec.delta.mean());
        report.insert("dominance_analytic".into(), serde_json::to_value(diagnose::dominance_analytic(base, &shifted, &mixture)?)?);
        report.insert("quantile_expansion".into(), serde_json::to_value(diagnose::quantile_expansion_check(base, &shifted, &mixture)?)?);
        let opts = DiagnoseOptions { discrete: vec!["x1".into()], bootstrap, seed, ..Default::default() };
        ("x1", opts, data)
    };
    let (lo, hi) = (0.0, 1.0);
    report.insert("dominance_data".into(), serde_json::to_value(diagnose::dominance_data(&data, var, lo, hi)?)?);
    if data.r.iter().copied().max().unwrap_or(0) >= 2 {
        let sign = diagnose::sign_overidentification(&data, var, &opts)?;
        let path = out.join("sign_overidentification.csv");
        sign.write_csv(File::create(&path)?)?;
        files.push(path);
        report.insert("sign_overidentification".into(), serde_json::to_value(sign)?);
    }
    let path = out.join("diagnostics.json");
    write_json(&path, &Value::Object(report))?;
    files.insert(0, path);
    Ok(files)
}

fn run_reproduce(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let opts = FigureOptions {
        deltas: cfg.deltas.clone().unwrap_or_default(),
        categories: cfg.categories.clone().unwrap_or_default(),
        ..FigureOptions::default()
    };
    let figure = cfg.figure.as_deref().expect("checked in resolve");
    simulate::reproduce_figure(figure, out, cfg.seed.unwrap_or_default(), &opts)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Runs the configured command on a pool of `jobs` threads.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let started = Instant::now();
    let cfg = config.resolve()?;
    let command = cfg.command()?;
    let out = cfg.output.clone().expect("resolved");
    std::fs::create_dir_all(&out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.expect("resolved"))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let files = pool.install(|| match command {
        Command::Weights => run_weights(&cfg, &out),
        Command::Table => run_table(&cfg, &out),
        Command::Simulate => run_simulate(&cfg, &out),
        Command::Estimate => run_estimate(&cfg, &out),
        Command::Diagnose => run_diagnose(&cfg, &out),
        Command::Reproduce => run_reproduce(&cfg, &out),
    })?;
    let outputs = files
        .iter()
        .map(|f| {
            let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(json!({ "file": name, "sha256": sha256_file(f)? }))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = out.join("manifest.json");
    write_json(
        &manifest,
        &json!({
            "command": command.name(),
            "config": cfg,
            "seed": cfg.seed,
            "versions": { "ordlab": env!("CARGO_PKG_VERSION"), "manifest": 1 },
            "outputs": outputs,
            "wall_time_seconds": started.elapsed().as_secs_f64(),
        }),
    )?;
    Ok(RunOutcome { files, manifest })
}

/// Process exit status for an error: 2 for bad input, 3 for numerical
/// failures, 1 for I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical { .. }
        | Error::RankDeficient(_)
        | Error::SingularPath(_)
        | Error::UndefinedRatio(_)
        | Error::Degenerate(_)
        | Error::InsufficientData(_) => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn kind(err: &Error) -> &'static str {
    match err {
        Error::InvalidDistribution(_) => "invalid_distribution",
        Error::Domain(_) => "domain",
        Error::InvalidProfile(_) => "invalid_profile",
        Error::InvalidMixture(_) => "invalid_mixture",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::OutOfRange(_) => "out_of_range",
        Error::ZeroDelta => "zero_delta",
        Error::UndefinedRatio(_) => "undefined_ratio",
        Error::UnknownPreset(_) => "unknown_preset",
        Error::RankDeficient(_) => "rank_deficient",
        Error::InsufficientData(_) => "insufficient_data",
        Error::Degenerate(_) => "degenerate",
        Error::SingularPath(_) => "singular_path",
        Error::UnknownColumn(_) => "unknown_column",
        Error::Numerical { .. } => "numerical",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

/// Machine-readable error description. Exit-status-3 errors always name
/// the failing operation.
pub fn error_json(err: &Error) -> Value {
    let op = match err {
        Error::Numerical { op, .. } => Some(*op),
        Error::RankDeficient(_) => Some("ols"),
        Error::SingularPath(_) => Some("recover_g"),
        Error::UndefinedRatio(_) => Some("ratio"),
        Error::InsufficientData(_) => Some("sample_size_check"),
        Error::Degenerate(_) => Some("degeneracy_check"),
        _ => None,
    };
    json!({
        "error": {
            "kind": kind(err),
            "operation": op,
            "message": err.to_string(),
            "exit_code": exit_code(err),
        }
    })
}
