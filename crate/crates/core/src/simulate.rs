//! Data-generating processes: named presets, simulated datasets, the
//! illustrative income/marriage example, and figure regeneration.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{normal, LatentDistribution};
use crate::reporting::{linear_profile, sampled_profile, DenseScale, LinearMode, ReportingMixture, ThresholdProfile};
use crate::seed;
use crate::weights::{self, DeltaSpec, RatioRow};

/// How the population of reporting functions is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportingSampler {
    /// Equally spaced thresholds between random endpoints.
    Linear {
        lower: LatentDistribution,
        upper: LatentDistribution,
        mode: LinearMode,
        /// Redraw a profile whose lower endpoint is not below its upper one.
        reject_crossing: bool,
    },
    /// Thresholds drawn i.i.d. and sorted.
    SampledThresholds { dist: LatentDistribution },
    /// A fixed list of profiles with equal shares.
    Fixed { profiles: Vec<ThresholdProfile> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: String,
    /// Latent law at the base covariate value.
    pub latent_at_base: LatentDistribution,
    pub delta: DeltaSpec,
    pub reporting: ReportingSampler,
    pub n_profiles: usize,
    /// Thresholds per profile.
    pub rbar: usize,
    pub seed: u64,
}

const MAX_REDRAWS: usize = 100_000;

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        self.latent_at_base.validate()?;
        self.delta.validate()?;
        if self.n_profiles == 0 || self.rbar == 0 {
            return Err(Error::Config("n_profiles and rbar must be at least 1".into()));
        }
        match &self.reporting {
            ReportingSampler::Linear { lower, upper, .. } => {
                lower.validate()?;
                upper.validate()?;
            }
            ReportingSampler::SampledThresholds { dist } => dist.validate()?,
            ReportingSampler::Fixed { profiles } => {
                if profiles.is_empty() || profiles.iter().any(|p| p.rbar() != profiles[0].rbar()) {
                    return Err(Error::Config("fixed profiles must be nonempty with equal length".into()));
                }
            }
        }
        Ok(())
    }

    fn endpoints(&self, seed: u64) -> Result<Vec<(f64, f64)>> {
        let ReportingSampler::Linear { lower, upper, reject_crossing, .. } = &self.reporting else {
            return Err(Error::Config(format!("preset `{}` has no linear reporting scales", self.name)));
        };
        (0..self.n_profiles)
            .map(|i| {
                let mut rng = seed::derived_rng(seed, "profile", &[i as u64]);
                for _ in 0..MAX_REDRAWS {
                    let (l, u) = (lower.draw(&mut rng), upper.draw(&mut rng));
                    if l < u {
                        return Ok((l, u));
                    }
                    if !reject_crossing {
                        break;
                    }
                }
                Err(Error::InvalidProfile(format!("could not draw lower < upper for profile {i}")))
            })
            .collect()
    }

    /// Population of `n_profiles` reporting functions with `rbar` thresholds each.
    pub fn mixture(&self, rbar: usize, seed: u64) -> Result<ReportingMixture> {
        self.validate()?;
        let profiles: Vec<ThresholdProfile> = match &self.reporting {
            ReportingSampler::Linear { mode, .. } => self
                .endpoints(seed)?
                .into_iter()
                .map(|(l, u)| linear_profile(l, u, rbar, *mode))
                .collect::<Result<_>>()?,
            ReportingSampler::SampledThresholds { dist } => (0..self.n_profiles)
                .map(|i| sampled_profile(dist, rbar, seed::derive(seed, "profile", &[i as u64])))
                .collect::<Result<_>>()?,
            ReportingSampler::Fixed { profiles } => profiles.clone(),
        };
        ReportingMixture::uniform(profiles)
    }

    /// The same population in the continuum limit.
    pub fn scales(&self, seed: u64) -> Result<Vec<(f64, DenseScale)>> {
        self.validate()?;
        let p = 1.0 / self.n_profiles as f64;
        self.endpoints(seed)?.into_iter().map(|(l, u)| Ok((p, DenseScale::new(l, u)?))).collect()
    }

    pub fn with_profiles(&self, n_profiles: usize) -> Self {
        Self { n_profiles, ..self.clone() }
    }
}

/// Presets built from heterogeneous reporting populations.
pub const SIMULATION_PRESETS: &[&str] = &[
    "normal",
    "dblnormal",
    "uniform",
    "lognormal",
    "lognormal_overlap",
    "lognormal_fixedends",
    "lognormal_uniform_thresholds",
    "lognormal_normal_thresholds",
];

pub const PRESETS: &[&str] = &[
    "normal",
    "dblnormal",
    "uniform",
    "lognormal",
    "lognormal_overlap",
    "lognormal_fixedends",
    "lognormal_uniform_thresholds",
    "lognormal_normal_thresholds",
    "illustrative_binary",
    "illustrative_11",
];

fn linear(lower: LatentDistribution, upper: LatentDistribution, reject_crossing: bool) -> ReportingSampler {
    ReportingSampler::Linear { lower, upper, mode: LinearMode::EqualBins, reject_crossing }
}

pub fn preset(name: &str) -> Result<DgpSpec> {
    use LatentDistribution as L;
    let lognormal = L::log_normal(0.0, 1.0);
    let (latent, reporting, n_profiles) = match name {
        "normal" => (L::standard_normal(), linear(L::uniform(-1.0, -0.5), L::uniform(0.5, 1.0), false), 1000),
        "dblnormal" => (
            L::mixture(vec![0.5, 0.5], vec![L::normal(-2.0, 1.0), L::normal(2.0, 1.0)]),
            linear(L::uniform(-3.0, -2.0), L::uniform(2.0, 3.0), false),
            1000,
        ),
        "uniform" => (L::uniform(0.0, 1.0), linear(L::uniform(0.0, 0.25), L::uniform(0.75, 1.0), false), 1000),
        "lognormal" => (lognormal, linear(L::uniform(0.01, 0.25), L::uniform(1.0, 3.0), false), 1000),
        "lognormal_overlap" => (lognormal, linear(L::uniform(0.01, 1.5), L::uniform(0.5, 3.0), true), 1000),
        "lognormal_fixedends" => (lognormal, linear(L::uniform(0.1, 0.1), L::uniform(0.2, 0.2), false), 1),
        "lognormal_uniform_thresholds" => {
            (lognormal, ReportingSampler::SampledThresholds { dist: L::uniform(0.1, 3.0) }, 1000)
        }
        "lognormal_normal_thresholds" => {
            (lognormal, ReportingSampler::SampledThresholds { dist: L::normal(2.0, 1.0) }, 1000)
        }
        "illustrative_binary" | "illustrative_11" => {
            let scale = if name == "illustrative_binary" { Scale::Binary } else { Scale::Eleven };
            let spec = DgpSpec {
                name: name.into(),
                latent_at_base: L::normal(BETA_LOG_INCOME * BASE_INCOME.ln(), 1.0),
                delta: DeltaSpec::Constant(BETA_MARRIED),
                reporting: ReportingSampler::Fixed { profiles: scale.profiles().to_vec() },
                n_profiles: 2,
                rbar: scale.rbar(),
                seed: 1,
            };
            return Ok(spec);
        }
        _ => return Err(Error::UnknownPreset(name.into())),
    };
    Ok(DgpSpec {
        name: name.into(),
        latent_at_base: latent,
        delta: DeltaSpec::Constant(1.0),
        reporting,
        n_profiles,
        rbar: 10,
        seed: 1,
    })
}

/// Simulated observations. Latent columns are for validation only.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub regressor_names: Vec<String>,
    pub r: Vec<u32>,
    /// One vector per regressor.
    pub x: Vec<Vec<f64>>,
    pub latent: Option<LatentColumns>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentColumns {
    pub h: Vec<f64>,
    pub u: Vec<f64>,
    pub profile: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Any column by CSV name: `R`, a regressor, or `H`, `U`, `profile`.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        if name == "R" {
            return Ok(self.r.iter().map(|&r| r as f64).collect());
        }
        if let Some(j) = self.regressor_names.iter().position(|n| n == name) {
            return Ok(self.x[j].clone());
        }
        match (name, &self.latent) {
            ("H", Some(l)) => Ok(l.h.clone()),
            ("U", Some(l)) => Ok(l.u.clone()),
            ("profile", Some(l)) => Ok(l.profile.iter().map(|&p| p as f64).collect()),
            _ => Err(Error::UnknownColumn(name.into())),
        }
    }

    /// Copy with an extra regressor column appended.
    pub fn with_column(&self, name: &str, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: values.len() });
        }
        if self.column(name).is_ok() {
            return Err(Error::Config(format!("column `{name}` already exists")));
        }
        let mut out = self.clone();
        out.regressor_names.push(name.into());
        out.x.push(values);
        Ok(out)
    }

    /// Rows picked by index, for resampling.
    pub fn select(&self, rows: &[usize]) -> Self {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            regressor_names: self.regressor_names.clone(),
            r: rows.iter().map(|&i| self.r[i]).collect(),
            x: self.x.iter().map(|c| pick(c)).collect(),
            latent: self.latent.as_ref().map(|l| LatentColumns {
                h: pick(&l.h),
                u: pick(&l.u),
                profile: rows.iter().map(|&i| l.profile[i]).collect(),
            }),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W, with_latent: bool) -> Result<()> {
        let latent = match (with_latent, &self.latent) {
            (true, Some(l)) => Some(l),
            (true, None) => return Err(Error::Config("dataset has no latent columns to write".into())),
            (false, _) => None,
        };
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["R".to_string()];
        header.extend(self.regressor_names.iter().cloned());
        if latent.is_some() {
            header.extend(["H", "U", "profile"].map(String::from));
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.r[i].to_string()];
            rec.extend(self.x.iter().map(|c| c[i].to_string()));
            if let Some(l) = latent {
                rec.extend([l.h[i].to_string(), l.u[i].to_string(), l.profile[i].to_string()]);
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the layout written by [`Dataset::write_csv`].
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        if header.first().map(String::as_str) != Some("R") {
            return Err(Error::Config("dataset header must start with `R`".into()));
        }
        let has_latent = header.len() >= 4 && header[header.len() - 3..] == ["H", "U", "profile"];
        let x_end = if has_latent { header.len() - 3 } else { header.len() };
        let names: Vec<String> = header[1..x_end].to_vec();
        if names.is_empty() || names.iter().any(|n| ["H", "U", "profile", "R"].contains(&n.as_str())) {
            return Err(Error::Config("dataset needs regressor columns between `R` and the latent columns".into()));
        }
        let mut data = Dataset {
            regressor_names: names.clone(),
            r: vec![],
            x: vec![vec![]; names.len()],
            latent: has_latent.then(|| LatentColumns { h: vec![], u: vec![], profile: vec![] }),
        };
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let bad = |col: &str| Error::Config(format!("row {}: column `{col}` is not a valid number", line + 1));
            data.r.push(rec[0].trim().parse().map_err(|_| bad("R"))?);
            for (j, name) in names.iter().enumerate() {
                let v: f64 = rec[1 + j].trim().parse().map_err(|_| bad(name))?;
                data.x[j].push(v);
            }
            if let Some(l) = data.latent.as_mut() {
                l.h.push(rec[x_end].trim().parse().map_err(|_| bad("H"))?);
                l.u.push(rec[x_end + 1].trim().parse().map_err(|_| bad("U"))?);
                l.profile.push(rec[x_end + 2].trim().parse().map_err(|_| bad("profile"))?);
            }
        }
        Ok(data)
    }
}

const CHUNK: usize = 4096;

/// Row chunks with their own derived streams, concatenated in order.
fn chunked<T: Send, F>(n: usize, root: u64, purpose: &str, row: F) -> Vec<T>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng, usize) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed::derived_rng(root, purpose, &[c as u64]);
            (c * CHUNK..((c + 1) * CHUNK).min(n)).map(|i| row(&mut rng, i)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

fn pick_delta<R: Rng + ?Sized>(points: &[(f64, f64)], rng: &mut R) -> f64 {
    if points.len() == 1 {
        return points[0].0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(d, p) in points {
        acc += p;
        if u < acc {
            return d;
        }
    }
    points[points.len() - 1].0
}

/// `n` rows with a binary treatment `x1`: treated rows have their latent
/// value shifted by a draw of the treatment effect.
pub fn draw(spec: &DgpSpec, n: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    let mixture = spec.mixture(spec.rbar, seed::derive(spec.seed, "population", &[]))?;
    let entries = mixture.entries();
    let deltas = spec.delta.points();
    let rows = chunked(n, spec.seed, "draw", |rng, _| {
        let v = rng.random_range(0..entries.len());
        let u = spec.latent_at_base.draw(rng);
        let treated = rng.random_bool(0.5);
        let d = pick_delta(&deltas, rng);
        let h = if treated { u + d } else { u };
        (entries[v].profile.report(h) as u32, treated as u8 as f64, h, u, v)
    });
    Ok(Dataset {
        regressor_names: vec!["x1".into()],
        r: rows.iter().map(|r| r.0).collect(),
        x: vec![rows.iter().map(|r| r.1).collect()],
        latent: Some(LatentColumns {
            h: rows.iter().map(|r| r.2).collect(),
            u: rows.iter().map(|r| r.3).collect(),
            profile: rows.iter().map(|r| r.4).collect(),
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastOracle {
    pub delta: f64,
    /// Simulated `E[R | x'] - E[R | x]` from paired draws.
    pub mean: f64,
    pub se: f64,
    /// `delta` times the contrast weight.
    pub analytic: f64,
    pub n: usize,
}

/// Monte Carlo check of the contrast identity: each draw shares its latent
/// noise and reporting type between `x` and `x'`.
pub fn contrast_oracle(mixture: &ReportingMixture, dist: &LatentDistribution, delta: f64, n: usize, root: u64) -> Result<ContrastOracle> {
    let analytic = delta * weights::discrete_total(mixture, dist, &DeltaSpec::Constant(delta))?.total;
    let entries = mixture.entries();
    let cum: Vec<f64> = entries
        .iter()
        .scan(0.0, |acc, e| {
            *acc += e.probability;
            Some(*acc)
        })
        .collect();
    let diffs = chunked(n, root, "contrast_oracle", |rng, _| {
        let u: f64 = rng.random();
        let v = cum.partition_point(|&c| c <= u).min(entries.len() - 1);
        let h = dist.draw(rng);
        let p = &entries[v].profile;
        p.report(h + delta) as f64 - p.report(h) as f64
    });
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(ContrastOracle { delta, mean, se: (var / n as f64).sqrt(), analytic, n })
}

pub const BETA_LOG_INCOME: f64 = -0.1;
pub const BETA_MARRIED: f64 = 1.0;
pub const BASE_INCOME: f64 = 50.0;
pub const INCOME_RANGE: (f64, f64) = (20.0, 200.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Binary,
    Eleven,
}

impl Scale {
    /// Pessimist then optimist profile.
    pub fn profiles(self) -> [ThresholdProfile; 2] {
        let build = |shift: f64| {
            let t = match self {
                Scale::Binary => vec![shift],
                Scale::Eleven => (0..10).map(|r| -5.0 + shift + r as f64).collect(),
            };
            ThresholdProfile::new(t).expect("fixed thresholds are sorted")
        };
        [build(0.0), build(-1.0)]
    }

    pub fn rbar(self) -> usize {
        match self {
            Scale::Binary => 1,
            Scale::Eleven => 10,
        }
    }
}

/// Share of optimistic reporters at income `y`.
pub fn optimist_share(rho: f64, y: f64) -> f64 {
    normal::cdf(rho * (y / BASE_INCOME).ln())
}

/// Income `x1` (log-normal around 50, truncated to [20, 200]), marriage `x2`,
/// and reports from a pessimist/optimist mix whose optimist share rises with
/// income when `rho > 0`.
pub fn build_illustrative(rho: f64, scale: Scale, n: usize, root: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    let log_income = LatentDistribution::truncated(
        LatentDistribution::standard_normal(),
        (INCOME_RANGE.0 / BASE_INCOME).ln(),
        (INCOME_RANGE.1 / BASE_INCOME).ln(),
    );
    log_income.validate()?;
    let profiles = scale.profiles();
    let rows = chunked(n, root, "illustrative", |rng, _| {
        let z = log_income.draw(rng);
        let income = BASE_INCOME * z.exp();
        let married = rng.random_bool(0.5) as u8 as f64;
        let u: f64 = rng.sample(StandardNormal);
        let optimist = seed::open_unit(rng) < normal::cdf(rho * z);
        let h = BETA_LOG_INCOME * income.ln() + BETA_MARRIED * married + u;
        let v = optimist as usize;
        (profiles[v].report(h) as u32, income, married, h, u, v)
    });
    Ok(Dataset {
        regressor_names: vec!["x1".into(), "x2".into()],
        r: rows.iter().map(|r| r.0).collect(),
        x: vec![rows.iter().map(|r| r.1).collect(), rows.iter().map(|r| r.2).collect()],
        latent: Some(LatentColumns {
            h: rows.iter().map(|r| r.3).collect(),
            u: rows.iter().map(|r| r.4).collect(),
            profile: rows.iter().map(|r| r.5).collect(),
        }),
    })
}

/// `E[R | income = y, married = m]` in the illustrative model.
pub fn analytic_cef_illustrative(rho: f64, y: f64, m: f64, scale: Scale) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain(format!("income must be positive, got {y}")));
    }
    let index = BETA_LOG_INCOME * y.ln() + BETA_MARRIED * m;
    let share = optimist_share(rho, y);
    let [pessimist, optimist] = scale.profiles();
    let expected = |p: &ThresholdProfile| p.thresholds().iter().map(|t| normal::cdf(index - t)).sum::<f64>();
    Ok(share * expected(&optimist) + (1.0 - share) * expected(&pessimist))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureOptions {
    pub deltas: Vec<f64>,
    /// Number of response categories per column.
    pub categories: Vec<usize>,
    pub histogram_categories: usize,
    pub profile_counts: Vec<usize>,
    pub sweep_categories: usize,
}

impl Default for FigureOptions {
    fn default() -> Self {
        Self {
            deltas: vec![-0.5, -0.1, 0.1, 0.5, 1.0, 5.0],
            categories: vec![2, 5, 11, 100],
            histogram_categories: 100,
            profile_counts: vec![1, 10, 11, 1000],
            sweep_categories: 11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub delta: f64,
    pub profile: usize,
    pub one_plus_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub n_profiles: usize,
    pub ratio: f64,
    pub thresholds_crossed: f64,
}

/// `1 + delta ratio` for every profile, per treatment effect.
pub fn delta_histogram(spec: &DgpSpec, deltas: &[f64], categories: usize, root: u64) -> Result<Vec<HistogramRow>> {
    let mixture = spec.mixture(categories - 1, seed::derive(root, "delta_histogram", &[]))?;
    let per_delta: Vec<Vec<HistogramRow>> = deltas
        .par_iter()
        .map(|&delta| {
            mixture
                .entries()
                .iter()
                .enumerate()
                .map(|(profile, e)| {
                    let d = weights::delta_ratio(&e.profile, &spec.latent_at_base, delta)?;
                    Ok(HistogramRow { delta, profile, one_plus_delta: 1.0 + d })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_delta.into_iter().flatten().collect())
}

/// Ratio and thresholds crossed as the number of reporting types varies.
pub fn profile_count_sweep(spec: &DgpSpec, deltas: &[f64], counts: &[usize], categories: usize, root: u64) -> Result<Vec<SweepRow>> {
    let cells: Vec<(usize, usize)> = (0..deltas.len()).flat_map(|i| (0..counts.len()).map(move |j| (i, j))).collect();
    cells
        .par_iter()
        .map(|&(i, j)| {
            let sub = spec.with_profiles(counts[j]);
            let mixture = sub.mixture(categories - 1, seed::derive(root, "profile_sweep", &[i as u64, j as u64]))?;
            let c = weights::ratio_cell(&mixture, &spec.latent_at_base, deltas[i])?;
            Ok(SweepRow {
                delta: deltas[i],
                n_profiles: counts[j],
                ratio: c.ratio,
                thresholds_crossed: weights::thresholds_crossed(&mixture, &spec.latent_at_base, deltas[i]),
            })
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the ratio table, the per-profile ratio histogram data and, for
/// linear presets, the profile-count sweep. Returns the files written.
pub fn reproduce_figure(name: &str, out_dir: &Path, root: u64, opts: &FigureOptions) -> Result<Vec<PathBuf>> {
    let spec = preset(name)?;
    if !SIMULATION_PRESETS.contains(&name) {
        return Err(Error::Config(format!("`{name}` has no simulation figure")));
    }
    if opts.categories.iter().chain([&opts.histogram_categories, &opts.sweep_categories]).any(|&k| k < 2) {
        return Err(Error::Config("every scale needs at least 2 categories".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut files = vec![];

    let table: Vec<RatioRow> = weights::ratio_table(&spec, &opts.deltas, &opts.categories, seed::derive(root, "figure_table", &[]))?;
    let path = out_dir.join(format!("{name}_ratio.csv"));
    weights::write_ratio_csv(&table, std::fs::File::create(&path)?)?;
    files.push(path);

    let hist = delta_histogram(&spec, &opts.deltas, opts.histogram_categories, root)?;
    let path = out_dir.join(format!("{name}_delta_hist.csv"));
    write_rows(&path, &hist)?;
    files.push(path);

    if matches!(spec.reporting, ReportingSampler::Linear { .. }) && spec.n_profiles > 1 {
        let sweep = profile_count_sweep(&spec, &opts.deltas, &opts.profile_counts, opts.sweep_categories, root)?;
        let path = out_dir.join(format!("{name}_profile_sweep.csv"));
        write_rows(&path, &sweep)?;
        files.push(path);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reporting::MixtureEntry;

    #[test]
    fn preset_examples() {
        assert_eq!(preset("normal").unwrap().latent_at_base, LatentDistribution::standard_normal());
        let fixed = preset("lognormal_fixedends").unwrap();
        assert_eq!(fixed.n_profiles, 1);
        let scales = fixed.scales(3).unwrap();
        assert_eq!(scales, vec![(1.0, DenseScale::new(0.1, 0.2).unwrap())]);
        let u = preset("uniform").unwrap();
        let ReportingSampler::Linear { lower, upper, .. } = u.reporting else { panic!("linear") };
        assert_eq!(lower, LatentDistribution::uniform(0.0, 0.25));
        assert_eq!(upper, LatentDistribution::uniform(0.75, 1.0));
        assert!(matches!(preset("nope"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn presets_round_trip_and_build() {
        for name in PRESETS {
            let spec = preset(name).unwrap();
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<DgpSpec>(&json).unwrap(), spec);
            let m = spec.mixture(spec.rbar, 9).unwrap();
            assert_eq!(m.rbar(), spec.rbar);
        }
    }

    #[test]
    fn overlap_preset_rejects_crossing_ends() {
        let spec = preset("lognormal_overlap").unwrap();
        let scales = spec.scales(4).unwrap();
        assert_eq!(scales.len(), 1000);
        assert!(scales.iter().all(|(_, s)| s.lower < s.upper));
    }

    #[test]
    fn binary_draw_mean() {
        let spec = DgpSpec {
            name: "binary".into(),
            latent_at_base: LatentDistribution::standard_normal(),
            delta: DeltaSpec::Constant(1e-300),
            reporting: ReportingSampler::Fixed { profiles: vec![ThresholdProfile::new(vec![0.0]).unwrap()] },
            n_profiles: 1,
            rbar: 1,
            seed: 4,
        };
        let d = draw(&spec, 1000).unwrap();
        let mean = d.r.iter().sum::<u32>() as f64 / 1000.0;
        assert!((mean - 0.5).abs() < 0.05);
    }

    #[test]
    fn rows_satisfy_report_identity() {
        let spec = preset("normal").unwrap();
        let d = draw(&spec, 5000).unwrap();
        let m = spec.mixture(spec.rbar, seed::derive(spec.seed, "population", &[])).unwrap();
        let l = d.latent.as_ref().unwrap();
        for i in 0..d.len() {
            assert_eq!(d.r[i] as usize, m.entries()[l.profile[i]].profile.report(l.h[i]));
        }
    }

    #[test]
    fn treated_reports_never_fall() {
        let p = ThresholdProfile::new(vec![-1.0, 0.0, 0.7]).unwrap();
        let mut rng = seed::rng(8);
        for _ in 0..1000 {
            let u: f64 = rng.sample(StandardNormal);
            assert!(p.report(u + 0.4) >= p.report(u));
        }
    }

    #[test]
    fn draws_are_reproducible() {
        let spec = preset("lognormal").unwrap();
        let a = draw(&spec, 10_000).unwrap();
        let b = draw(&spec, 10_000).unwrap();
        let (mut ca, mut cb) = (vec![], vec![]);
        a.write_csv(&mut ca, true).unwrap();
        b.write_csv(&mut cb, true).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn csv_round_trip() {
        let d = build_illustrative(0.5, Scale::Eleven, 300, 2).unwrap();
        let mut buf = vec![];
        d.write_csv(&mut buf, true).unwrap();
        assert!(buf.starts_with(b"R,x1,x2,H,U,profile\n"));
        assert_eq!(Dataset::read_csv(&buf[..]).unwrap(), d);
        let mut plain = vec![];
        d.write_csv(&mut plain, false).unwrap();
        assert!(plain.starts_with(b"R,x1,x2\n"));
        let back = Dataset::read_csv(&plain[..]).unwrap();
        assert!(back.latent.is_none());
        assert_eq!(back.r, d.r);
        assert!(Dataset::read_csv(&b"Y,x1\n1,2\n"[..]).is_err());
        assert!(Dataset::read_csv(&b"R,x1\nfoo,2\n"[..]).is_err());
    }

    #[test]
    fn illustrative_structure() {
        let d = build_illustrative(0.0, Scale::Binary, 10_000, 5).unwrap();
        let l = d.latent.as_ref().unwrap();
        let income = &d.x[0];
        assert!(income.iter().all(|&y| (20.0..=200.0).contains(&y)));
        for i in 0..d.len() {
            let h = BETA_LOG_INCOME * income[i].ln() + BETA_MARRIED * d.x[1][i] + l.u[i];
            assert!((h - l.h[i]).abs() < 1e-12);
            assert_eq!(d.r[i] as usize, Scale::Binary.profiles()[l.profile[i]].report(l.h[i]));
        }
        let v: Vec<f64> = l.profile.iter().map(|&p| p as f64).collect();
        let logy: Vec<f64> = income.iter().map(|y| y.ln()).collect();
        assert!(correlation(&v, &logy).abs() < 0.03);

        let d1 = build_illustrative(1.0, Scale::Binary, 10_000, 5).unwrap();
        let v1: Vec<f64> = d1.latent.as_ref().unwrap().profile.iter().map(|&p| p as f64).collect();
        let logy1: Vec<f64> = d1.x[0].iter().map(|y| y.ln()).collect();
        assert!(correlation(&v1, &logy1) > 0.3);
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn eleven_point_thresholds() {
        let [pess, opt] = Scale::Eleven.profiles();
        assert_eq!(opt.thresholds(), &(0..10).map(|r| -6.0 + r as f64).collect::<Vec<_>>()[..]);
        assert_eq!(pess.thresholds()[0], -5.0);
    }

    #[test]
    fn analytic_cef_values() {
        // Oracle values computed independently with scipy.
        let v = analytic_cef_illustrative(0.0, 50.0, 0.0, Scale::Binary).unwrap();
        assert!((v - 0.538_247_292_318_591_6).abs() < 1e-12);
        let pessimists = analytic_cef_illustrative(1e9, 49.999_999, 0.0, Scale::Binary).unwrap();
        assert!((pessimists - 0.347_823_853_977_471_1).abs() < 1e-7);
        let eleven = analytic_cef_illustrative(0.0, 50.0, 0.0, Scale::Eleven).unwrap();
        assert!((eleven - 5.608_794_850_815_941).abs() < 1e-10, "{eleven}");

        let grid: Vec<f64> = (20..=200).map(|y| y as f64).collect();
        let rho0: Vec<f64> = grid.iter().map(|&y| analytic_cef_illustrative(0.0, y, 0.0, Scale::Binary).unwrap()).collect();
        assert!(rho0.windows(2).all(|w| w[1] < w[0]));
        let rho1: Vec<f64> = grid.iter().map(|&y| analytic_cef_illustrative(1.0, y, 0.0, Scale::Binary).unwrap()).collect();
        let rising = rho1.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(rising as f64 > 0.8 * (grid.len() - 1) as f64);
        assert!(analytic_cef_illustrative(0.0, 0.0, 0.0, Scale::Binary).is_err());
    }

    #[test]
    fn oracle_matches_small_case() {
        let mix = ReportingMixture::new(vec![
            MixtureEntry { probability: 0.3, profile: ThresholdProfile::new(vec![-0.5, 0.5]).unwrap() },
            MixtureEntry { probability: 0.7, profile: ThresholdProfile::new(vec![0.0, 1.5]).unwrap() },
        ])
        .unwrap();
        let o = contrast_oracle(&mix, &LatentDistribution::standard_normal(), 0.8, 200_000, 3).unwrap();
        assert!((o.mean - o.analytic).abs() < 3.0 * o.se, "{o:?}");
    }

    #[test]
    fn weak_separability_cancels() {
        // Derivative weights are common to both regressors, so their ratio is the ratio of coefficients.
        let spec = preset("dblnormal").unwrap();
        let mix = spec.mixture(10, 2).unwrap();
        let form = crate::latent::IndexForm::LinearIndex { beta: vec![0.4, -1.3] };
        let g = weights::cef_gradient(&form, &LatentDistribution::mixture(vec![0.5, 0.5], vec![LatentDistribution::normal(-2.0, 1.0), LatentDistribution::normal(2.0, 1.0)]), &mix, &[0.2, 0.1]).unwrap();
        assert!((g[0] / g[1] - 0.4 / -1.3).abs() < 1e-12);
    }

    #[test]
    fn figure_files_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let opts = FigureOptions { categories: vec![2, 11], ..Default::default() };
        let a = reproduce_figure("normal", &dir.path().join("a"), 1, &opts).unwrap();
        let b = reproduce_figure("normal", &dir.path().join("b"), 1, &opts).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let text = std::fs::read_to_string(&a[0]).unwrap();
        assert!(text.starts_with("delta,rbar,ratio,w_xxp,w_x,w_xp,nb\n"));
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        for row in rd.deserialize::<RatioRow>() {
            assert!(row.unwrap().ratio >= 0.0);
        }
    }
}
