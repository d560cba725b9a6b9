//! Estimation on observed reports: least squares, kernel regression, the
//! bootstrap, a control-function first stage and index recovery.

pub mod bootstrap;
pub mod control;
pub mod npreg;
pub mod ols;
pub mod recover;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::simulate::{build_illustrative, Dataset, Scale};

pub use bootstrap::{bootstrap, bootstrap_many, BootstrapResult, BootstrapSummary};
pub use control::control_function;
pub use npreg::{avg_discrete_contrast, avg_marginal_effect, local_ratio, local_ratio_log_slope, local_slope_ratio, CefFit, NpregData, NpregOptions};
pub use ols::ols;
pub use recover::recover_g;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub coefficients: BTreeMap<String, f64>,
    pub ses: BTreeMap<String, f64>,
    pub ratio: Option<f64>,
    pub ratio_se: Option<f64>,
    pub n: usize,
    pub dropped_rows: usize,
    pub cv_objective: Option<f64>,
    /// Numerator and denominator names of `ratio`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_of: Option<[String; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub residual_max_abs: Option<f64>,
}

impl RegressionResult {
    /// Sets `ratio` to the quotient of two coefficients.
    pub fn with_ratio(mut self, numerator: &str, denominator: &str) -> Result<Self> {
        let num = *self.coefficients.get(numerator).ok_or_else(|| Error::UnknownColumn(numerator.into()))?;
        let den = *self.coefficients.get(denominator).ok_or_else(|| Error::UnknownColumn(denominator.into()))?;
        if den == 0.0 {
            return Err(Error::UndefinedRatio(format!("`{denominator}` coefficient is zero")));
        }
        self.ratio = Some(num / den);
        self.ratio_of = Some([numerator.into(), denominator.into()]);
        Ok(self)
    }
}

/// Least squares of a dataset column on named regressor columns.
pub fn ols_columns(data: &Dataset, outcome: &str, regressors: &[&str]) -> Result<RegressionResult> {
    let y = data.column(outcome)?;
    let cols = regressors.iter().map(|r| data.column(r)).collect::<Result<Vec<_>>>()?;
    ols(&y, regressors, &cols)
}

/// Kernel-regression training data drawn from dataset columns.
pub fn npreg_data(data: &Dataset, outcome: &str, continuous: &[&str], discrete: &[&str]) -> Result<NpregData> {
    let cols = |names: &[&str]| names.iter().map(|c| data.column(c)).collect::<Result<Vec<_>>>();
    Ok(NpregData {
        y: data.column(outcome)?,
        continuous_names: continuous.iter().map(|s| s.to_string()).collect(),
        continuous: cols(continuous)?,
        discrete_names: discrete.iter().map(|s| s.to_string()).collect(),
        discrete: cols(discrete)?,
    })
}

pub const LOG_INCOME: &str = "log_x1";
pub const INCOME: &str = "x1";
pub const MARRIED: &str = "x2";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IllustrativeOptions {
    pub rho: f64,
    pub scale: Scale,
    pub n: usize,
    pub seed: u64,
    /// Bootstrap replicates; 0 skips standard errors for the ratios and kernel fit.
    pub bootstrap: usize,
    #[serde(default)]
    pub npreg: NpregOptions,
}

impl Default for IllustrativeOptions {
    fn default() -> Self {
        Self { rho: 0.0, scale: Scale::Binary, n: 10_000, seed: 1, bootstrap: bootstrap::DEFAULT_REPLICATES, npreg: NpregOptions::default() }
    }
}

/// Three estimators of the marriage/log-income trade-off on reports, plus
/// the infeasible regression on latent happiness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IllustrativeReport {
    pub options: IllustrativeOptions,
    /// Reports on log income and marriage.
    pub ols_log: RegressionResult,
    /// Local-linear fit: average income slope, marriage contrast, local ratio.
    pub nonparametric: RegressionResult,
    /// Reports on income in levels; the log-income slope is `beta * mean income`.
    pub ols_level: RegressionResult,
    pub infeasible_latent: RegressionResult,
}

/// Level-income coefficient rescaled to a log-income effect.
fn level_ratio(fit: &RegressionResult, mean_income: f64) -> f64 {
    fit.coefficients[MARRIED] / (fit.coefficients[INCOME] * mean_income)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn nonparametric_stats(fit: &CefFit) -> Result<(f64, f64, npreg::LocalRatio)> {
    Ok((
        avg_marginal_effect(fit, LOG_INCOME)?,
        avg_discrete_contrast(fit, MARRIED, 1.0, 0.0)?,
        local_ratio(fit, MARRIED, 1.0, 0.0, LOG_INCOME)?,
    ))
}

pub fn illustrative(opts: &IllustrativeOptions) -> Result<IllustrativeReport> {
    let raw = build_illustrative(opts.rho, opts.scale, opts.n, opts.seed)?;
    let data = raw.with_column(LOG_INCOME, raw.column(INCOME)?.iter().map(|v| v.ln()).collect())?;
    let income = data.column(INCOME)?;

    let mut ols_log = ols_columns(&data, "R", &[LOG_INCOME, MARRIED])?.with_ratio(MARRIED, LOG_INCOME)?;
    let mut ols_level = ols_columns(&data, "R", &[INCOME, MARRIED])?;
    let mean_income = mean(&income);
    ols_level.coefficients.insert(LOG_INCOME.into(), ols_level.coefficients[INCOME] * mean_income);
    ols_level.ratio = Some(level_ratio(&ols_level, mean_income));
    ols_level.ratio_of = Some([MARRIED.into(), LOG_INCOME.into()]);
    let infeasible_latent = ols_columns(&data, "H", &[LOG_INCOME, MARRIED])?;

    let train = npreg_data(&data, "R", &[LOG_INCOME], &[MARRIED])?;
    let fit = CefFit::fit(train.clone(), &opts.npreg)?;
    let (ame, contrast, lr) = nonparametric_stats(&fit)?;
    let mut nonparametric = RegressionResult {
        coefficients: [(LOG_INCOME.to_string(), ame), (MARRIED.to_string(), contrast)].into(),
        ses: BTreeMap::new(),
        ratio: Some(lr.value),
        ratio_se: None,
        n: lr.n,
        dropped_rows: lr.dropped_rows,
        cv_objective: fit.cv_objective,
        ratio_of: Some([MARRIED.into(), LOG_INCOME.into()]),
        warnings: lr.warning.into_iter().collect(),
        residual_max_abs: None,
    };

    if opts.bootstrap > 0 {
        let y = data.column("R")?;
        let log_income = data.column(LOG_INCOME)?;
        let married = data.column(MARRIED)?;
        let ols_boot = bootstrap_many(data.len(), opts.bootstrap, seed::derive(opts.seed, "ols_bootstrap", &[]), |rows| {
            let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let (yb, lb, ib, mb) = (pick(&y), pick(&log_income), pick(&income), pick(&married));
            let log_fit = ols(&yb, &[LOG_INCOME, MARRIED], &[lb, mb.clone()])?.with_ratio(MARRIED, LOG_INCOME)?;
            let level_fit = ols(&yb, &[INCOME, MARRIED], &[ib.clone(), mb])?;
            Ok(vec![log_fit.ratio.expect("ratio was set"), level_ratio(&level_fit, mean(&ib))])
        })?;
        ols_log.ratio_se = Some(ols_boot.se[0]);
        ols_level.ratio_se = Some(ols_boot.se[1]);

        let np_boot = bootstrap_many(data.len(), opts.bootstrap, seed::derive(opts.seed, "npreg_bootstrap", &[]), |rows| {
            let (a, c, r) = nonparametric_stats(&fit.refit(train.select(rows))?)?;
            Ok(vec![a, c, r.value])
        })?;
        nonparametric.ses = [(LOG_INCOME.to_string(), np_boot.se[0]), (MARRIED.to_string(), np_boot.se[1])].into();
        nonparametric.ratio_se = Some(np_boot.se[2]);
        if np_boot.failed > 0 {
            nonparametric.warnings.push(format!("{} of {} bootstrap replicates failed", np_boot.failed, opts.bootstrap));
        }
    }

    Ok(IllustrativeReport { options: opts.clone(), ols_log, nonparametric, ols_level, infeasible_latent })
}

impl IllustrativeReport {
    /// Plain-text table with one column per estimator on reports.
    pub fn table(&self) -> String {
        let cols = [("OLS log", &self.ols_log), ("Kernel", &self.nonparametric), ("OLS level", &self.ols_level)];
        let mut out = String::new();
        let _ = writeln!(out, "{:<22}{:>14}{:>14}{:>14}", "", cols[0].0, cols[1].0, cols[2].0);
        let cell = |v: Option<f64>| v.map_or(String::from("-"), |x| format!("{x:.4}"));
        let paren = |v: Option<f64>| v.map_or(String::new(), |x| format!("({x:.4})"));
        for (label, key) in [("log income", LOG_INCOME), ("married", MARRIED)] {
            let _ = writeln!(out, "{label:<22}{:>14}{:>14}{:>14}", cell(cols[0].1.coefficients.get(key).copied()), cell(cols[1].1.coefficients.get(key).copied()), cell(cols[2].1.coefficients.get(key).copied()));
            let _ = writeln!(out, "{:<22}{:>14}{:>14}{:>14}", "", paren(cols[0].1.ses.get(key).copied()), paren(cols[1].1.ses.get(key).copied()), paren(cols[2].1.ses.get(key).copied()));
        }
        let _ = writeln!(out, "{:<22}{:>14}{:>14}{:>14}", "married / log income", cell(cols[0].1.ratio), cell(cols[1].1.ratio), cell(cols[2].1.ratio));
        let _ = writeln!(out, "{:<22}{:>14}{:>14}{:>14}", "", paren(cols[0].1.ratio_se), paren(cols[1].1.ratio_se), paren(cols[2].1.ratio_se));
        let _ = writeln!(out, "{:<22}{:>14}{:>14}{:>14}", "observations", self.ols_log.n, self.nonparametric.n, self.ols_level.n);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_is_coefficient_quotient() {
        let x1: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let x2: Vec<f64> = (0..60).map(|i| (i % 2) as f64).collect();
        let y: Vec<f64> = (0..60).map(|i| 0.5 * x1[i] - 2.0 * x2[i] + (i as f64).cos() * 0.1).collect();
        let r = ols(&y, &["a", "b"], &[x1, x2]).unwrap().with_ratio("b", "a").unwrap();
        assert_eq!(r.ratio.unwrap(), r.coefficients["b"] / r.coefficients["a"]);
        assert!(matches!(r.clone().with_ratio("b", "nope"), Err(Error::UnknownColumn(_))));
        let json = serde_json::to_value(&r).unwrap();
        for key in ["coefficients", "ses", "ratio", "ratio_se", "n", "dropped_rows", "cv_objective"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn small_illustrative_run() {
        let opts = IllustrativeOptions { n: 3000, bootstrap: 4, npreg: NpregOptions { bandwidths: npreg::Bandwidths::RuleOfThumb, ..Default::default() }, ..Default::default() };
        let rep = illustrative(&opts).unwrap();
        assert!(rep.ols_log.ratio.unwrap() < 0.0);
        assert!(rep.nonparametric.coefficients[LOG_INCOME] < 0.0);
        assert!(rep.nonparametric.coefficients[MARRIED] > 0.0);
        assert!(rep.nonparametric.ratio_se.unwrap() > 0.0);
        assert!(rep.table().contains("married / log income"));
        assert_eq!(rep, illustrative(&opts).unwrap());
    }
}
