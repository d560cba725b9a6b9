//! Checks on observed reports: sign agreement across thresholds, slope-ratio
//! invariance, the quantile expansion identity, stochastic dominance and
//! variance weights of a regressor.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::bootstrap::{bootstrap_many, replicates, sample_sd};
use crate::estimate::npreg::{self, Bandwidths, CefFit, NpregData, NpregOptions};
use crate::estimate::npreg_data;
use crate::latent::LatentDistribution;
use crate::reporting::ReportingMixture;
use crate::seed;
use crate::simulate::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryValue {
    pub r: usize,
    /// `None` when the indicator `R <= r` has no variation.
    pub value: Option<f64>,
    pub se: Option<f64>,
    /// Excluded from the summary.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub all_same_sign: bool,
    pub max_spread: f64,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub name: String,
    pub per_category: Vec<CategoryValue>,
    pub summary: Summary,
    /// Categories with no variation in the indicator.
    pub skipped: Vec<usize>,
    /// Bootstrap standard error of `max_spread`, when computed.
    pub band: Option<f64>,
}

/// Sign agreement and spread over unflagged values. A value counts toward a
/// sign only when it exceeds its standard error in magnitude.
pub fn summarize(values: &[CategoryValue]) -> Summary {
    let live: Vec<&CategoryValue> = values.iter().filter(|c| !c.flagged && c.value.is_some()).collect();
    let significant = |c: &&CategoryValue| c.value.unwrap().abs() > c.se.unwrap_or(0.0);
    let pos = live.iter().filter(|c| significant(c) && c.value.unwrap() > 0.0).count();
    let neg = live.iter().filter(|c| significant(c) && c.value.unwrap() < 0.0).count();
    let majority_positive = pos >= neg;
    let mut violations = vec![];
    for c in values {
        if c.flagged {
            violations.push(format!("r={}: flagged", c.r));
        } else if let Some(v) = c.value {
            let sig = v.abs() > c.se.unwrap_or(0.0);
            if sig && pos > 0 && neg > 0 && (v > 0.0) != majority_positive {
                violations.push(format!("r={}: sign {v:+.4} opposes the majority", c.r));
            }
        }
    }
    let (lo, hi) = live.iter().map(|c| c.value.unwrap()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    Summary { all_same_sign: pos == 0 || neg == 0, max_spread: if live.len() > 1 { hi - lo } else { 0.0 }, violations }
}

impl DiagnosticReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "value", "se", "flagged"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.per_category {
            w.write_record([c.r.to_string(), opt(c.value), opt(c.se), c.flagged.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluation point; `None` in [`DiagnoseOptions::point`] averages over rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub continuous: Vec<f64>,
    pub discrete: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOptions {
    pub continuous: Vec<String>,
    pub discrete: Vec<String>,
    pub point: Option<Point>,
    pub bootstrap: usize,
    pub seed: u64,
    pub npreg: NpregOptions,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            continuous: vec![],
            discrete: vec![],
            point: None,
            bootstrap: 100,
            seed: 1,
            npreg: NpregOptions { bandwidths: Bandwidths::RuleOfThumb, ..Default::default() },
        }
    }
}

fn max_report(data: &Dataset) -> usize {
    data.r.iter().copied().max().unwrap_or(0) as usize
}

/// Training data for `1(R <= r)`, or `None` when it is constant.
fn indicator(base: &NpregData, reports: &[u32], r: usize) -> Option<NpregData> {
    let y: Vec<f64> = reports.iter().map(|&v| ((v as usize) <= r) as u8 as f64).collect();
    if y.iter().all(|&v| v == y[0]) {
        return None;
    }
    Some(NpregData { y, ..base.clone() })
}

fn base_data(data: &Dataset, opts: &DiagnoseOptions) -> Result<NpregData> {
    let c: Vec<&str> = opts.continuous.iter().map(String::as_str).collect();
    let d: Vec<&str> = opts.discrete.iter().map(String::as_str).collect();
    npreg_data(data, "R", &c, &d)
}

enum Effect {
    Slope(usize),
    Contrast { k: usize, hi: f64, lo: f64 },
}

fn effect(fit: &CefFit, e: &Effect, point: Option<&Point>) -> Result<f64> {
    match (e, point) {
        (Effect::Slope(j), Some(p)) => Ok(fit.predict(&p.continuous, &p.discrete)?.slope[*j]),
        (Effect::Slope(j), None) => npreg::avg_marginal_effect(fit, &fit.data().continuous_names[*j]),
        (Effect::Contrast { k, hi, lo }, Some(p)) => {
            let mut a = p.discrete.clone();
            let mut b = p.discrete.clone();
            a[*k] = *hi;
            b[*k] = *lo;
            Ok(fit.predict(&p.continuous, &a)?.value - fit.predict(&p.continuous, &b)?.value)
        }
        (Effect::Contrast { k, hi, lo }, None) => npreg::avg_discrete_contrast(fit, &fit.data().discrete_names[*k], *hi, *lo),
    }
}

/// Effect of `var` on `P(R <= r | x)` for every `r`: the slope for a
/// continuous regressor, the highest-minus-lowest level contrast for a
/// discrete one. Under the ordered-response model they share one sign.
pub fn sign_overidentification(data: &Dataset, var: &str, opts: &DiagnoseOptions) -> Result<DiagnosticReport> {
    let rbar = max_report(data);
    if rbar < 2 {
        return Err(Error::InsufficientData(format!("sign comparison needs at least two thresholds, reports top out at {rbar}")));
    }
    let base = base_data(data, opts)?;
    let e = if let Some(j) = opts.continuous.iter().position(|c| c == var) {
        Effect::Slope(j)
    } else if let Some(k) = opts.discrete.iter().position(|c| c == var) {
        let col = &base.discrete[k];
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        if hi == lo {
            return Err(Error::Degenerate(format!("`{var}` takes a single value")));
        }
        Effect::Contrast { k, hi, lo }
    } else {
        return Err(Error::UnknownColumn(var.into()));
    };
    let point = opts.point.as_ref();
    let per: Vec<Result<CategoryValue>> = (0..rbar)
        .into_par_iter()
        .map(|r| {
            let Some(train) = indicator(&base, &data.r, r) else {
                return Ok(CategoryValue { r, value: None, se: None, flagged: false });
            };
            let fit = CefFit::fit(train.clone(), &opts.npreg)?;
            let value = effect(&fit, &e, point)?;
            let se = if opts.bootstrap >= 2 {
                let root = seed::derive(opts.seed, "sign_overidentification", &[r as u64]);
                let b = bootstrap_many(train.n(), opts.bootstrap, root, |rows| Ok(vec![effect(&fit.refit(train.select(rows))?, &e, point)?]))?;
                Some(b.se[0])
            } else {
                None
            };
            Ok(CategoryValue { r, value: Some(value), se, flagged: false })
        })
        .collect();
    let per_category = per.into_iter().collect::<Result<Vec<_>>>()?;
    let skipped = per_category.iter().filter(|c| c.value.is_none()).map(|c| c.r).collect();
    Ok(DiagnosticReport { name: "sign_overidentification".into(), summary: summarize(&per_category), per_category, skipped, band: None })
}

/// Ratio of slopes in `var1` and `var2` of `P(R <= r | x)` at `point`, per
/// `r`. Weak separability makes the ratio constant across `r`. Categories
/// whose `var2` slope lies within one bootstrap SE of zero are flagged.
pub fn invariance_ratios(data: &Dataset, var1: &str, var2: &str, point: &Point, opts: &DiagnoseOptions) -> Result<DiagnosticReport> {
    let rbar = max_report(data);
    if rbar < 3 {
        return Err(Error::InsufficientData(format!("invariance ratios need at least three thresholds, reports top out at {rbar}")));
    }
    let find = |v: &str| {
        opts.continuous
            .iter()
            .position(|c| c == v)
            .ok_or_else(|| Error::Config(format!("`{v}` must be listed as a continuous regressor")))
    };
    let (j1, j2) = (find(var1)?, find(var2)?);
    if opts.bootstrap < 2 {
        return Err(Error::Config("invariance ratios need at least 2 bootstrap replicates".into()));
    }
    let base = base_data(data, opts)?;
    let trains: Vec<Option<NpregData>> = (0..rbar).map(|r| indicator(&base, &data.r, r)).collect();
    let slopes = |fit: &CefFit| -> Result<(f64, f64)> {
        let s = fit.predict(&point.continuous, &point.discrete)?.slope;
        Ok((s[j1], s[j2]))
    };
    let fits: Vec<Option<CefFit>> = trains
        .par_iter()
        .map(|t| t.as_ref().map(|t| CefFit::fit(t.clone(), &opts.npreg)).transpose())
        .collect::<Result<_>>()?;
    let full: Vec<Option<(f64, f64)>> = fits.iter().map(|f| f.as_ref().map(slopes).transpose()).collect::<Result<_>>()?;

    // One replicate refits every category on the same rows.
    let live: Vec<usize> = (0..rbar).filter(|&r| fits[r].is_some()).collect();
    let root = seed::derive(opts.seed, "invariance_ratios", &[]);
    let (reps, _) = replicates(data.len(), opts.bootstrap, root, |rows| {
        let mut out = vec![];
        for &r in &live {
            let fit = fits[r].as_ref().expect("live category").refit(trains[r].as_ref().expect("live category").select(rows))?;
            let (s1, s2) = slopes(&fit)?;
            out.push(s2);
            out.push(s1 / s2);
        }
        Ok(out)
    })?;
    let column = |j: usize| reps.iter().map(|v| v[j]).collect::<Vec<_>>();
    let mut per_category = vec![];
    for r in 0..rbar {
        match (full[r], live.iter().position(|&l| l == r)) {
            (Some((s1, s2)), Some(i)) => {
                let flagged = s2.abs() <= sample_sd(&column(2 * i));
                per_category.push(CategoryValue { r, value: Some(s1 / s2), se: Some(sample_sd(&column(2 * i + 1))), flagged });
            }
            _ => per_category.push(CategoryValue { r, value: None, se: None, flagged: false }),
        }
    }
    // Band: bootstrap SE of the spread over the categories kept in the full sample.
    let kept: Vec<usize> = live.iter().enumerate().filter(|(_, &r)| !per_category[r].flagged).map(|(i, _)| i).collect();
    let band = (kept.len() > 1).then(|| {
        let spreads: Vec<f64> = reps
            .iter()
            .map(|v| {
                let vals = kept.iter().map(|&i| v[2 * i + 1]);
                vals.clone().fold(f64::NEG_INFINITY, f64::max) - vals.fold(f64::INFINITY, f64::min)
            })
            .collect();
        sample_sd(&spreads)
    });
    let skipped = per_category.iter().filter(|c| c.value.is_none()).map(|c| c.r).collect();
    Ok(DiagnosticReport { name: "invariance_ratios".into(), summary: summarize(&per_category), per_category, skipped, band })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileExpansion {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Compares `E[R|x'] - E[R|x]` with the integral over quantile levels `u` of
/// the report difference at the two quantile functions. The integrand is
/// piecewise constant, changing only where a quantile crosses a threshold.
pub fn quantile_expansion_check(dist_x: &LatentDistribution, dist_xp: &LatentDistribution, mixture: &ReportingMixture) -> Result<QuantileExpansion> {
    dist_x.validate()?;
    dist_xp.validate()?;
    let lhs = mixture.expected_report(dist_xp) - mixture.expected_report(dist_x);
    // Each profile's integrand only steps at its own thresholds.
    let terms: Vec<f64> = mixture
        .entries()
        .par_iter()
        .map(|e| {
            let mut breaks = vec![0.0, 1.0];
            for &t in e.profile.thresholds() {
                breaks.push(dist_x.cdf(t));
                breaks.push(dist_xp.cdf(t));
            }
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
            let integral: f64 = breaks
                .windows(2)
                .filter(|w| w[1] > w[0])
                .map(|w| {
                    let u = 0.5 * (w[0] + w[1]);
                    let (q, qp) = (dist_x.quantile_unchecked(u), dist_xp.quantile_unchecked(u));
                    (e.profile.report(qp) as f64 - e.profile.report(q) as f64) * (w[1] - w[0])
                })
                .sum();
            e.probability * integral
        })
        .collect();
    let rhs: f64 = terms.iter().sum();
    Ok(QuantileExpansion { lhs, rhs, gap: (lhs - rhs).abs() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceRow {
    pub r: usize,
    pub cdf_x: f64,
    pub cdf_xp: f64,
    /// `P(R <= r | x') - P(R <= r | x)`; positive values oppose dominance of `x'`.
    pub diff: f64,
    pub se: Option<f64>,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub fosd_holds: bool,
    pub max_violation: f64,
    pub per_category: Vec<DominanceRow>,
}

fn dominance_report(per_category: Vec<DominanceRow>) -> DominanceReport {
    DominanceReport {
        fosd_holds: per_category.iter().all(|d| !d.violation),
        max_violation: per_category.iter().map(|d| d.diff).fold(0.0, f64::max),
        per_category,
    }
}

/// Whether reports at `x'` first-order dominate those at `x`, from the latent laws.
pub fn dominance_analytic(dist_x: &LatentDistribution, dist_xp: &LatentDistribution, mixture: &ReportingMixture) -> Result<DominanceReport> {
    dist_x.validate()?;
    dist_xp.validate()?;
    let rows = (0..mixture.rbar())
        .map(|r| {
            let (a, b) = (mixture.report_cdf(dist_x, r), mixture.report_cdf(dist_xp, r));
            DominanceRow { r, cdf_x: a, cdf_xp: b, diff: b - a, se: None, violation: b - a > 0.0 }
        })
        .collect();
    Ok(dominance_report(rows))
}

/// Sample form: a category violates when the CDF gap exceeds two standard errors.
pub fn dominance_empirical(reports_x: &[u32], reports_xp: &[u32]) -> Result<DominanceReport> {
    if reports_x.is_empty() || reports_xp.is_empty() {
        return Err(Error::InsufficientData("dominance needs reports at both points".into()));
    }
    let rbar = reports_x.iter().chain(reports_xp).copied().max().unwrap_or(0) as usize;
    let cdf = |s: &[u32], r: usize| s.iter().filter(|&&v| v as usize <= r).count() as f64 / s.len() as f64;
    let rows = (0..rbar)
        .map(|r| {
            let (a, b) = (cdf(reports_x, r), cdf(reports_xp, r));
            let se = (a * (1.0 - a) / reports_x.len() as f64 + b * (1.0 - b) / reports_xp.len() as f64).sqrt();
            DominanceRow { r, cdf_x: a, cdf_xp: b, diff: b - a, se: Some(se), violation: b - a > 2.0 * se }
        })
        .collect();
    Ok(dominance_report(rows))
}

/// Splits reports by the value of `var` and compares level `b` against `a`.
pub fn dominance_data(data: &Dataset, var: &str, a: f64, b: f64) -> Result<DominanceReport> {
    let col = data.column(var)?;
    let pick = |level: f64| col.iter().zip(&data.r).filter(|(v, _)| **v == level).map(|(_, r)| *r).collect::<Vec<_>>();
    dominance_empirical(&pick(a), &pick(b))
}

pub const YITZHAKI_GRID: usize = 4001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YitzhakiProfile {
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    /// Trapezoid integral of the weights over the grid.
    pub integral: f64,
}

/// Weights `w(t) = E[(X - E X) 1(X > t)] / Var X` on an even grid over the
/// sample range. They are nonnegative, vanish at both ends and integrate to one.
pub fn yitzhaki_weights(values: &[f64], grid_points: usize) -> Result<YitzhakiProfile> {
    if values.len() < 2 || grid_points < 2 {
        return Err(Error::InsufficientData("variance weights need at least two values and grid points".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Degenerate("zero or non-finite variance".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // tail[i] = sum over sorted[i..] of (x - mean)
    let mut tail = vec![0.0; sorted.len() + 1];
    for i in (0..sorted.len()).rev() {
        tail[i] = tail[i + 1] + (sorted[i] - mean);
    }
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let step = (hi - lo) / (grid_points - 1) as f64;
    let grid: Vec<f64> = (0..grid_points).map(|g| lo + g as f64 * step).collect();
    let weights: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let above = sorted.partition_point(|&x| x <= t);
            (tail[above] / (n * var)).max(0.0)
        })
        .collect();
    let integral = weights.windows(2).map(|w| 0.5 * (w[0] + w[1]) * step).sum();
    Ok(YitzhakiProfile { grid, weights, integral })
}
