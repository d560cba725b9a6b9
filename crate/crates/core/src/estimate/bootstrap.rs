//! Row-resampling bootstrap with one derived seed per replicate.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_REPLICATES: usize = 500;

/// Spread of a vector statistic across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub replicates: usize,
    pub failed: usize,
    pub se: Vec<f64>,
    /// 95% percentile interval bounds.
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub se: f64,
    pub ci: (f64, f64),
    pub failed: usize,
}

/// Row indices drawn with replacement for replicate `b`.
pub fn resample(n: usize, root: u64, b: usize) -> Vec<usize> {
    let mut rng = seed::derived_rng(root, "bootstrap", &[b as u64]);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Type-7 sample quantile of sorted values.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Statistic values of the successful replicates, in replicate order, and
/// the number that failed (error or non-finite value).
pub fn replicates<F>(n: usize, replicates: usize, root: u64, stat: F) -> Result<(Vec<Vec<f64>>, usize)>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    if replicates < 2 {
        return Err(Error::Config(format!("bootstrap needs at least 2 replicates, got {replicates}")));
    }
    if n == 0 {
        return Err(Error::InsufficientData("bootstrap on an empty sample".into()));
    }
    let draws: Vec<Option<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|b| stat(&resample(n, root, b)).ok().filter(|v| v.iter().all(|x| x.is_finite())))
        .collect();
    let kept: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    if kept.len() < 2 {
        return Err(Error::numerical("bootstrap", format!("only {} of {replicates} replicates succeeded", kept.len())));
    }
    let dim = kept[0].len();
    if kept.iter().any(|v| v.len() != dim) {
        return Err(Error::numerical("bootstrap", "statistic length varies across replicates"));
    }
    let failed = replicates - kept.len();
    Ok((kept, failed))
}

/// Standard deviation with the `m - 1` denominator.
pub fn sample_sd(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    (values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0)).sqrt()
}

/// Bootstraps `stat` over `n` rows. Replicates whose statistic errors or is
/// non-finite are dropped and counted.
pub fn bootstrap_many<F>(n: usize, replicates: usize, root: u64, stat: F) -> Result<BootstrapSummary>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    let total = replicates;
    let (kept, failed) = self::replicates(n, total, root, stat)?;
    let mut summary = BootstrapSummary { replicates: total, failed, se: vec![], ci_lower: vec![], ci_upper: vec![] };
    for j in 0..kept[0].len() {
        let mut col: Vec<f64> = kept.iter().map(|v| v[j]).collect();
        summary.se.push(sample_sd(&col));
        col.sort_by(f64::total_cmp);
        summary.ci_lower.push(quantile_sorted(&col, 0.025));
        summary.ci_upper.push(quantile_sorted(&col, 0.975));
    }
    Ok(summary)
}

/// Scalar form of [`bootstrap_many`].
pub fn bootstrap<F>(n: usize, replicates: usize, root: u64, stat: F) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    let s = bootstrap_many(n, replicates, root, |rows| stat(rows).map(|v| vec![v]))?;
    Ok(BootstrapResult { se: s.se[0], ci: (s.ci_lower[0], s.ci_upper[0]), failed: s.failed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::LatentDistribution;

    #[test]
    fn mean_of_normal_sample() {
        let x = LatentDistribution::standard_normal().sample(400, 4).unwrap();
        let r = bootstrap(x.len(), 500, 9, |rows| Ok(rows.iter().map(|&i| x[i]).sum::<f64>() / rows.len() as f64)).unwrap();
        assert!((0.04..=0.06).contains(&r.se), "{}", r.se);
        assert!(r.ci.0 < r.ci.1);
        let again = bootstrap(x.len(), 500, 9, |rows| Ok(rows.iter().map(|&i| x[i]).sum::<f64>() / rows.len() as f64)).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn constant_statistic_has_zero_se() {
        let r = bootstrap(50, 20, 1, |_| Ok(3.0)).unwrap();
        assert_eq!(r.se, 0.0);
        assert_eq!(r.ci, (3.0, 3.0));
    }

    #[test]
    fn failed_replicates_are_counted() {
        let r = bootstrap(30, 40, 2, |rows| if rows[0] % 2 == 0 { Err(Error::Degenerate("odd".into())) } else { Ok(1.0) }).unwrap();
        assert!(r.failed > 0 && r.failed < 40);
        assert!(matches!(bootstrap(30, 1, 2, |_| Ok(1.0)), Err(Error::Config(_))));
    }

    #[test]
    fn schedule_invariant() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let stat = |rows: &[usize]| Ok(rows.iter().map(|&i| x[i]).sum::<f64>());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let one = pool.install(|| bootstrap(100, 64, 5, stat)).unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap().install(|| bootstrap(100, 64, 5, stat)).unwrap();
        assert_eq!(one, many);
    }

    #[test]
    fn type7_quantile() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert!((quantile_sorted(&v, 0.025) - 1.1).abs() < 1e-12);
    }
}
