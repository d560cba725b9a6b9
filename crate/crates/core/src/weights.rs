//! Weights that regressions of reports on covariates place on causal effects.
//!
//! The derivative of `E[R | x]` weights the latent effect by the latent
//! density at each threshold; a discrete contrast between `x` and `x'`
//! weights it by the density averaged over the interval of length `delta`
//! ending at each threshold. Everything here is exact up to quadrature.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{IndexForm, LatentDistribution};
use crate::quad;
use crate::reporting::{DenseScale, ReportingMixture, ThresholdProfile};
use crate::seed;
use crate::simulate::DgpSpec;

/// Treatment effect: a constant, or a finite distribution of `(delta, probability)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSpec {
    Constant(f64),
    Distribution(Vec<(f64, f64)>),
}

impl DeltaSpec {
    pub fn points(&self) -> Vec<(f64, f64)> {
        match self {
            Self::Constant(d) => vec![(*d, 1.0)],
            Self::Distribution(v) => v.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pts = self.points();
        if pts.is_empty() {
            return Err(Error::Config("empty treatment-effect distribution".into()));
        }
        if pts.iter().any(|(d, _)| *d == 0.0) {
            return Err(Error::ZeroDelta);
        }
        if pts.iter().any(|(d, p)| !d.is_finite() || !(*p > 0.0)) {
            return Err(Error::Config("treatment effects must be finite with positive probability".into()));
        }
        let total: f64 = pts.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("treatment-effect probabilities sum to {total}")));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.points().iter().map(|(d, p)| d * p).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileWeight {
    pub index: usize,
    pub probability: f64,
    /// Density (or averaged density) at each threshold.
    pub densities: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightBreakdown {
    pub per_profile: Vec<ProfileWeight>,
    pub total: f64,
    pub delta: Option<DeltaSpec>,
}

impl WeightBreakdown {
    fn from_profiles(per_profile: Vec<ProfileWeight>, delta: Option<DeltaSpec>) -> Self {
        let total = per_profile.iter().map(|p| p.probability * p.total).sum();
        Self { per_profile, total, delta }
    }
}

/// Average latent density over the interval between `t - delta` and `t`.
fn averaged_density(dist: &LatentDistribution, t: f64, delta: f64) -> f64 {
    let (a, b) = if delta > 0.0 { (t - delta, t) } else { (t, t - delta) };
    dist.mass_between(a, b) / delta.abs()
}

/// Share-weighted latent density at threshold `r`: minus the derivative of
/// `P(R <= r | x)` per unit of a location shift.
pub fn cdf_slope_weight(mixture: &ReportingMixture, dist: &LatentDistribution, r: usize) -> Result<f64> {
    if r >= mixture.rbar() {
        return Err(Error::OutOfRange(format!("category {r} has no threshold (top is {})", mixture.rbar())));
    }
    dist.validate()?;
    Ok(mixture.entries().iter().map(|e| e.probability * dist.pdf(e.profile.thresholds()[r])).sum())
}

/// Total weight in the derivative of `E[R | x]`.
pub fn mean_slope_total(mixture: &ReportingMixture, dist: &LatentDistribution) -> Result<WeightBreakdown> {
    dist.validate()?;
    let per_profile = mixture
        .entries()
        .iter()
        .enumerate()
        .map(|(index, e)| {
            let densities: Vec<f64> = e.profile.thresholds().iter().map(|&t| dist.pdf(t)).collect();
            ProfileWeight { index, probability: e.probability, total: densities.iter().sum(), densities }
        })
        .collect();
    Ok(WeightBreakdown::from_profiles(per_profile, None))
}

/// Total weight in the contrast `E[R | x'] - E[R | x]` per unit of effect,
/// with `dist` the latent law at `x`.
pub fn discrete_total(mixture: &ReportingMixture, dist: &LatentDistribution, delta: &DeltaSpec) -> Result<WeightBreakdown> {
    delta.validate()?;
    dist.validate()?;
    let pts = delta.points();
    let per_profile = mixture
        .entries()
        .iter()
        .enumerate()
        .map(|(index, e)| {
            let densities: Vec<f64> = e
                .profile
                .thresholds()
                .iter()
                .map(|&t| pts.iter().map(|&(d, p)| p * averaged_density(dist, t, d)).sum())
                .collect();
            ProfileWeight { index, probability: e.probability, total: densities.iter().sum(), densities }
        })
        .collect();
    Ok(WeightBreakdown::from_profiles(per_profile, Some(delta.clone())))
}

/// Relative gap between the contrast weight and the derivative weight for one profile.
pub fn delta_ratio(profile: &ThresholdProfile, dist: &LatentDistribution, delta: f64) -> Result<f64> {
    if delta == 0.0 {
        return Err(Error::ZeroDelta);
    }
    dist.validate()?;
    let slope: f64 = profile.thresholds().iter().map(|&t| dist.pdf(t)).sum();
    if !(slope > 0.0) {
        return Err(Error::UndefinedRatio("no latent density at any threshold".into()));
    }
    let discrete: f64 = profile.thresholds().iter().map(|&t| averaged_density(dist, t, delta)).sum();
    Ok(discrete / slope - 1.0)
}

/// `P(0 < R < rbar)` under `dist`, averaged over the mixture.
pub fn non_bunching(mixture: &ReportingMixture, dist: &LatentDistribution) -> f64 {
    mixture
        .entries()
        .iter()
        .map(|e| {
            let t = e.profile.thresholds();
            e.probability * dist.mass_between(t[0], t[t.len() - 1])
        })
        .sum()
}

/// Expected number of thresholds crossed when the latent value moves by `delta`.
pub fn thresholds_crossed(mixture: &ReportingMixture, dist: &LatentDistribution, delta: f64) -> f64 {
    mixture
        .entries()
        .iter()
        .map(|e| e.probability * e.profile.thresholds().iter().map(|&t| averaged_density(dist, t, delta)).sum::<f64>())
        .sum::<f64>()
        * delta.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioCell {
    pub delta: f64,
    pub w_xxp: f64,
    pub w_x: f64,
    pub w_xp: f64,
    pub ratio: f64,
    pub nb: f64,
}

/// Contrast weight relative to the average of the derivative weights at `x` and
/// `x' = x` shifted by `delta`.
pub fn ratio_cell(mixture: &ReportingMixture, dist: &LatentDistribution, delta: f64) -> Result<RatioCell> {
    let w_xxp = discrete_total(mixture, dist, &DeltaSpec::Constant(delta))?.total;
    let w_x = mean_slope_total(mixture, dist)?.total;
    let w_xp = mean_slope_total(mixture, &dist.shifted(delta))?.total;
    let denom = 0.5 * (w_x + w_xp);
    if !(denom > 0.0) {
        return Err(Error::UndefinedRatio(format!("derivative weights vanish at delta = {delta}")));
    }
    Ok(RatioCell { delta, w_xxp, w_x, w_xp, ratio: w_xxp / denom, nb: non_bunching(mixture, dist) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub delta: f64,
    pub rbar: usize,
    pub ratio: f64,
    pub w_xxp: f64,
    pub w_x: f64,
    pub w_xp: f64,
    pub nb: f64,
}

/// Ratio for every `(delta, categories)` cell. Grid values count response
/// categories, so a cell with `k` categories uses profiles with `k - 1`
/// thresholds. Each cell draws its own reporting population.
pub fn ratio_table(spec: &DgpSpec, deltas: &[f64], categories: &[usize], seed: u64) -> Result<Vec<RatioRow>> {
    let cells: Vec<(usize, usize)> =
        (0..deltas.len()).flat_map(|i| (0..categories.len()).map(move |j| (i, j))).collect();
    cells
        .par_iter()
        .map(|&(i, j)| {
            let k = categories[j];
            if k < 2 {
                return Err(Error::Config(format!("a scale needs at least 2 categories, got {k}")));
            }
            let cell_seed = seed::derive(seed, "ratio_table", &[i as u64, j as u64]);
            let mixture = spec.mixture(k - 1, cell_seed)?;
            let c = ratio_cell(&mixture, &spec.latent_at_base, deltas[i])?;
            Ok(RatioRow { delta: c.delta, rbar: k, ratio: c.ratio, w_xxp: c.w_xxp, w_x: c.w_x, w_xp: c.w_xp, nb: c.nb })
        })
        .collect()
}

pub fn write_ratio_csv<W: std::io::Write>(rows: &[RatioRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reporting population in the continuum limit: `(share, scale)` pairs.
pub type ScaleMixture = [(f64, DenseScale)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseTotals {
    pub w_x: f64,
    pub w_xxp: f64,
}

fn expected_avg_slope(scale: &DenseScale, dist: &LatentDistribution, delta: f64) -> f64 {
    let (lo, hi) = dist.integration_range();
    let a = scale.lower.min(scale.lower - delta).max(lo);
    let b = scale.upper.max(scale.upper - delta).min(hi);
    if a >= b {
        return 0.0;
    }
    let mut breaks = dist.breakpoints();
    breaks.extend([scale.lower, scale.lower - delta, scale.upper, scale.upper - delta]);
    let f = |h: f64| scale.avg_slope(h, delta).unwrap_or(0.0) * dist.pdf(h);
    quad::integrate_with_breaks(f, a, b, &breaks, quad::ABS_TOL).value
}

/// Derivative and contrast weights for continuum linear reporting with `rbar` top category.
pub fn dense_totals(scales: &ScaleMixture, dist: &LatentDistribution, rbar: f64, delta: f64) -> Result<DenseTotals> {
    if delta == 0.0 {
        return Err(Error::ZeroDelta);
    }
    dist.validate()?;
    let w_x = rbar * scales.iter().map(|(p, s)| p * dist.mass_between(s.lower, s.upper) / s.width()).sum::<f64>();
    let w_xxp = rbar * scales.iter().map(|(p, s)| p * expected_avg_slope(s, dist, delta)).sum::<f64>();
    Ok(DenseTotals { w_x, w_xxp })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub delta: f64,
    pub w_xxp: f64,
    pub w_x: f64,
    pub w_xp: f64,
    /// `w_xxp / (0.5 * (w_x + w_xp))`.
    pub ratio: f64,
    pub coarse_bounds: [f64; 2],
    pub in_coarse_bounds: bool,
    /// `w_xxp / w_x`, compared against the refined interval.
    pub ratio_to_w_x: f64,
    pub refined_lower: f64,
    pub refined_upper: f64,
    pub in_refined_bounds: bool,
    pub nb: f64,
    pub monotone_density_condition_holds: bool,
    pub variance_condition_holds: bool,
    /// The density condition is checked on a grid, not proven.
    pub density_check_is_heuristic: bool,
}

const SCAN_POINTS: usize = 101;
const SCAN_TOL: f64 = 1e-12;

fn monotone_on(dist: &LatentDistribution, a: f64, b: f64, increasing: bool) -> bool {
    let vals: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| dist.pdf(a + (b - a) * i as f64 / (SCAN_POINTS - 1) as f64))
        .collect();
    vals.windows(2).all(|w| if increasing { w[1] >= w[0] - SCAN_TOL } else { w[1] <= w[0] + SCAN_TOL })
}

/// Checks the ratio against the coarse `[1, 2]` and refined `[1/2, 1/NB^2]`
/// intervals, alongside the two conditions under which they are guaranteed.
pub fn bounds_check(
    scales: &ScaleMixture,
    dist_x: &LatentDistribution,
    dist_xp: &LatentDistribution,
    delta: f64,
) -> Result<BoundsReport> {
    if scales.is_empty() {
        return Err(Error::InvalidMixture("no reporting scales".into()));
    }
    let at_x = dense_totals(scales, dist_x, 1.0, delta)?;
    let at_xp = dense_totals(scales, dist_xp, 1.0, delta)?;
    let (w_x, w_xp, w_xxp) = (at_x.w_x, at_xp.w_x, at_x.w_xxp);
    let ratio = w_xxp / (0.5 * (w_x + w_xp));

    let d = delta.abs();
    let monotone = scales.iter().all(|(_, s)| {
        monotone_on(dist_x, s.lower - d, s.lower + d, true) && monotone_on(dist_x, s.upper - d, s.upper + d, false)
    });

    let nb_v: Vec<f64> = scales.iter().map(|(_, s)| dist_x.mass_between(s.lower, s.upper)).collect();
    let inv_len: Vec<f64> = scales.iter().map(|(_, s)| 1.0 / s.width()).collect();
    let mean = |v: &[f64]| scales.iter().zip(v).map(|((p, _), x)| p * x).sum::<f64>();
    let var = |v: &[f64]| {
        let m = mean(v);
        scales.iter().zip(v).map(|((p, _), x)| p * (x - m) * (x - m)).sum::<f64>()
    };
    let nb = mean(&nb_v);
    let variance_ok = var(&inv_len) <= var(&nb_v) * mean(&inv_len).powi(2);

    let refined_upper = 1.0 / (nb * nb);
    let ratio_to_w_x = w_xxp / w_x;
    Ok(BoundsReport {
        delta,
        w_xxp,
        w_x,
        w_xp,
        ratio,
        coarse_bounds: [1.0, 2.0],
        in_coarse_bounds: (1.0..=2.0).contains(&ratio),
        ratio_to_w_x,
        refined_lower: 0.5,
        refined_upper,
        in_refined_bounds: ratio_to_w_x >= 0.5 && ratio_to_w_x <= refined_upper,
        nb,
        monotone_density_condition_holds: monotone,
        variance_condition_holds: variance_ok,
        density_check_is_heuristic: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionDiag {
    pub t: Vec<f64>,
    pub density: Vec<f64>,
    pub unimodal: bool,
}

const UNIMODAL_TOL: f64 = 1e-9;

/// True when the series never rises again (beyond tolerance) after falling.
pub fn is_unimodal(values: &[f64]) -> bool {
    let mut peak = f64::NEG_INFINITY;
    let mut trough = f64::INFINITY;
    let mut falling = false;
    for &v in values {
        if !falling {
            if v < peak - UNIMODAL_TOL {
                falling = true;
                trough = v;
            } else {
                peak = peak.max(v);
            }
        } else if v > trough + UNIMODAL_TOL {
            return false;
        } else {
            trough = trough.min(v);
        }
    }
    true
}

/// Density of `T - H` where `T` is spread uniformly over the scale, on `t_grid`.
pub fn convolution_diag(scale: &DenseScale, dist: &LatentDistribution, t_grid: &[f64]) -> Result<ConvolutionDiag> {
    dist.validate()?;
    let density: Vec<f64> = t_grid
        .iter()
        .map(|&t| {
            let breaks: Vec<f64> = dist.breakpoints().into_iter().map(|b| b + t).collect();
            let (lo, hi) = dist.integration_range();
            let a = scale.lower.max(lo + t);
            let b = scale.upper.min(hi + t);
            if a >= b {
                return 0.0;
            }
            quad::integrate_with_breaks(|h| dist.pdf(h - t), a, b, &breaks, quad::ABS_TOL).value / scale.width()
        })
        .collect();
    let unimodal = is_unimodal(&density);
    Ok(ConvolutionDiag { t: t_grid.to_vec(), density, unimodal })
}

/// `E[R | x]` for an index-plus-error model.
pub fn cef(form: &IndexForm, noise: &LatentDistribution, mixture: &ReportingMixture, x: &[f64]) -> Result<f64> {
    Ok(mixture.expected_report(&noise.shifted(form.index(x)?)))
}

/// Gradient of `E[R | x]`: the derivative weight times the index gradient.
pub fn cef_gradient(form: &IndexForm, noise: &LatentDistribution, mixture: &ReportingMixture, x: &[f64]) -> Result<Vec<f64>> {
    let w = mean_slope_total(mixture, &noise.shifted(form.index(x)?))?.total;
    Ok(form.gradient(x)?.into_iter().map(|g| w * g).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::normal;
    use crate::reporting::{linear_profile, LinearMode, MixtureEntry};
    use proptest::prelude::*;

    fn single(t: &[f64]) -> ReportingMixture {
        ReportingMixture::single(ThresholdProfile::new(t.to_vec()).unwrap())
    }

    #[test]
    fn slope_weight_examples() {
        let w = cdf_slope_weight(&single(&[0.0]), &LatentDistribution::standard_normal(), 0).unwrap();
        assert!((w - 0.398_942_280_401_432_7).abs() < 1e-15);
        let w = cdf_slope_weight(&single(&[0.5]), &LatentDistribution::uniform(0.0, 1.0), 0).unwrap();
        assert_eq!(w, 1.0);
        let mix = ReportingMixture::uniform(vec![
            ThresholdProfile::new(vec![-1.0]).unwrap(),
            ThresholdProfile::new(vec![0.0]).unwrap(),
        ])
        .unwrap();
        let w = cdf_slope_weight(&mix, &LatentDistribution::standard_normal(), 0).unwrap();
        assert!((w - 0.320_45).abs() < 1e-5);
        assert!(matches!(cdf_slope_weight(&mix, &LatentDistribution::standard_normal(), 1), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn mean_slope_examples() {
        let eleven: Vec<f64> = (0..10).map(|r| -5.0 + r as f64).collect();
        let w = mean_slope_total(&single(&eleven), &LatentDistribution::standard_normal()).unwrap();
        // Oracle value from scipy; the densities at the ten integers -5..4 sum to almost exactly 1.
        assert!((w.total - 0.999_998_506_461_016_1).abs() < 1e-12, "{}", w.total);
        let p = linear_profile(0.25, 0.75, 2, LinearMode::EndpointExact).unwrap();
        let w = mean_slope_total(&ReportingMixture::single(p), &LatentDistribution::uniform(0.0, 1.0)).unwrap();
        assert_eq!(w.total, 2.0);
        let t = LatentDistribution::truncated(LatentDistribution::standard_normal(), 0.0, 1.0);
        assert_eq!(mean_slope_total(&single(&[2.0, 3.0]), &t).unwrap().total, 0.0);
    }

    #[test]
    fn discrete_examples() {
        let w = discrete_total(&single(&[0.5]), &LatentDistribution::uniform(0.0, 1.0), &DeltaSpec::Constant(0.2)).unwrap();
        assert!((w.total - 1.0).abs() < 1e-12);
        let w = discrete_total(&single(&[0.0]), &LatentDistribution::standard_normal(), &DeltaSpec::Constant(5.0)).unwrap();
        assert!((w.total - (0.5 - normal::cdf(-5.0)) / 5.0).abs() < 1e-15);
        assert!((w.total - 0.099_99).abs() < 1e-5);
        let zero = discrete_total(&single(&[0.0]), &LatentDistribution::standard_normal(), &DeltaSpec::Distribution(vec![(0.0, 1.0)]));
        assert!(matches!(zero, Err(Error::ZeroDelta)));
    }

    #[test]
    fn small_delta_matches_derivative() {
        let mix = single(&[-1.0, 0.2, 1.4]);
        for d in [LatentDistribution::normal(0.3, 0.8), LatentDistribution::log_normal(0.0, 1.0)] {
            let slope = mean_slope_total(&mix, &d).unwrap().total;
            let disc = discrete_total(&mix, &d, &DeltaSpec::Constant(1e-6)).unwrap().total;
            assert!(((disc - slope) / slope).abs() < 1e-4);
        }
    }

    #[test]
    fn delta_ratio_examples() {
        let u = LatentDistribution::uniform(0.0, 1.0);
        let p = ThresholdProfile::new(vec![0.4, 0.6]).unwrap();
        assert!(delta_ratio(&p, &u, 0.2).unwrap().abs() < 1e-12);
        let n = LatentDistribution::standard_normal();
        let d = delta_ratio(&ThresholdProfile::new(vec![0.0]).unwrap(), &n, 5.0).unwrap();
        assert!((d + 0.7494).abs() < 1e-4);
        assert!(delta_ratio(&p, &n, 1e-6).unwrap().abs() < 1e-4);
        let far = ThresholdProfile::new(vec![5.0]).unwrap();
        assert!(matches!(delta_ratio(&far, &u, 0.1), Err(Error::UndefinedRatio(_))));
    }

    #[test]
    fn histogram_mass_reassembles_contrast_weight() {
        let d = LatentDistribution::normal(0.1, 1.2);
        let profiles: Vec<_> = (0..7)
            .map(|i| linear_profile(-1.0 + 0.1 * i as f64, 0.5 + 0.07 * i as f64, 9, LinearMode::EqualBins).unwrap())
            .collect();
        let mix = ReportingMixture::uniform(profiles.clone()).unwrap();
        let delta = 0.7;
        let w = discrete_total(&mix, &d, &DeltaSpec::Constant(delta)).unwrap().total;
        let slopes = mean_slope_total(&mix, &d).unwrap();
        let reassembled: f64 = profiles
            .iter()
            .zip(&slopes.per_profile)
            .map(|(p, s)| s.probability * (1.0 + delta_ratio(p, &d, delta).unwrap()) * s.total)
            .sum();
        assert!((reassembled - w).abs() < 1e-12);
    }

    #[test]
    fn sign_convention_is_symmetric() {
        let mix = single(&[-0.8, -0.1, 0.6]);
        let d = LatentDistribution::standard_normal();
        for delta in [-0.5, 0.3, 2.0] {
            let forward = discrete_total(&mix, &d, &DeltaSpec::Constant(delta)).unwrap().total;
            let back = discrete_total(&mix, &d.shifted(delta), &DeltaSpec::Constant(-delta)).unwrap().total;
            assert!((forward - back).abs() < 1e-9);
        }
    }

    #[test]
    fn dense_examples() {
        let unit = DenseScale::new(0.0, 1.0).unwrap();
        let t = dense_totals(&[(1.0, unit)], &LatentDistribution::uniform(0.0, 1.0), 1.0, 0.1).unwrap();
        assert!((t.w_x - 1.0).abs() < 1e-12);

        let s = DenseScale::new(-0.7, 1.3).unwrap();
        let n = LatentDistribution::normal(0.2, 1.1);
        let t = dense_totals(&[(1.0, s)], &n, 10.0, 0.4).unwrap();
        let expect = 10.0 * (n.cdf(1.3) - n.cdf(-0.7)) / 2.0;
        assert!((t.w_x - expect).abs() < 1e-12);
    }

    #[test]
    fn dense_contrast_matches_closed_form() {
        // E[level(H + d) - level(H)] by direct quadrature of the clamp.
        let s = DenseScale::new(-0.5, 0.8).unwrap();
        let n = LatentDistribution::normal(0.1, 0.9);
        for delta in [-2.0, -0.3, 0.05, 0.9, 4.0] {
            let t = dense_totals(&[(1.0, s)], &n, 1.0, delta).unwrap();
            let contrast = quad::integrate_with_breaks(
                |h| (s.level(h + delta) - s.level(h)) * n.pdf(h),
                -9.0,
                9.0,
                &[s.lower, s.upper, s.lower - delta, s.upper - delta],
                1e-12,
            )
            .value;
            assert!((t.w_xxp * delta - contrast).abs() < 1e-9, "delta {delta}");
        }
    }

    #[test]
    fn refined_profiles_approach_dense_limit() {
        let scales = [(0.4, DenseScale::new(-1.0, 0.6).unwrap()), (0.6, DenseScale::new(-0.6, 0.9).unwrap())];
        let n = LatentDistribution::standard_normal();
        let dense = dense_totals(&scales, &n, 1000.0, 0.3).unwrap();
        let mix = ReportingMixture::new(
            scales
                .iter()
                .map(|(p, s)| MixtureEntry { probability: *p, profile: s.refine(1000, 1).unwrap() })
                .collect(),
        )
        .unwrap();
        let w_x = mean_slope_total(&mix, &n).unwrap().total;
        let w_xxp = discrete_total(&mix, &n, &DeltaSpec::Constant(0.3)).unwrap().total;
        assert!(((w_x - dense.w_x) / dense.w_x).abs() < 0.01);
        assert!(((w_xxp - dense.w_xxp) / dense.w_xxp).abs() < 0.01);
    }

    #[test]
    fn bounds_single_scale_small_delta() {
        let s = [(1.0, DenseScale::new(-1.0, 1.0).unwrap())];
        let n = LatentDistribution::standard_normal();
        let b = bounds_check(&s, &n, &n.shifted(1e-4), 1e-4).unwrap();
        assert!((b.ratio - 1.0).abs() < 1e-6);
        assert!(b.monotone_density_condition_holds);
        assert!(b.variance_condition_holds);
        assert!(b.nb >= 0.0 && b.nb <= 1.0 && b.refined_upper >= 1.0);
    }

    #[test]
    fn bounds_hold_under_conditions() {
        let n = LatentDistribution::standard_normal();
        let scales: Vec<_> = (0..20)
            .map(|i| (0.05, DenseScale::new(-1.0 + 0.02 * i as f64, 0.6 + 0.015 * i as f64).unwrap()))
            .collect();
        for delta in [-0.5, -0.1, 0.1, 0.5] {
            let b = bounds_check(&scales, &n, &n.shifted(delta), delta).unwrap();
            assert!(b.monotone_density_condition_holds);
            assert!(b.in_coarse_bounds, "{b:?}");
            if b.variance_condition_holds {
                assert!(b.in_refined_bounds, "{b:?}");
            }
        }
    }

    #[test]
    fn density_condition_fails_for_large_effects() {
        let n = LatentDistribution::standard_normal();
        let s = [(1.0, DenseScale::new(-0.7, 0.7).unwrap())];
        assert!(!bounds_check(&s, &n, &n.shifted(5.0), 5.0).unwrap().monotone_density_condition_holds);
    }

    #[test]
    fn convolution_examples() {
        let grid: Vec<f64> = (0..=80).map(|i| -4.0 + 0.1 * i as f64).collect();
        let c = convolution_diag(&DenseScale::new(-1.0, 1.0).unwrap(), &LatentDistribution::standard_normal(), &grid).unwrap();
        assert!(c.unimodal);

        let unit = DenseScale::new(0.0, 1.0).unwrap();
        let grid: Vec<f64> = (0..=40).map(|i| -1.0 + 0.05 * i as f64).collect();
        let c = convolution_diag(&unit, &LatentDistribution::uniform(0.0, 1.0), &grid).unwrap();
        for (t, d) in c.t.iter().zip(&c.density) {
            assert!((d - (1.0 - t.abs()).max(0.0)).abs() < 1e-6, "t={t}");
        }

        // symmetric about the scale midpoint minus the latent mean
        let s = DenseScale::new(-0.4, 1.2).unwrap();
        let n = LatentDistribution::normal(0.3, 0.7);
        let centre = 0.5 * (s.lower + s.upper) - 0.3;
        let offsets = [0.1, 0.5, 1.3];
        let left: Vec<f64> = offsets.iter().map(|o| centre - o).collect();
        let right: Vec<f64> = offsets.iter().map(|o| centre + o).collect();
        let a = convolution_diag(&s, &n, &left).unwrap();
        let b = convolution_diag(&s, &n, &right).unwrap();
        for (x, y) in a.density.iter().zip(&b.density) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn bimodal_series_detected() {
        assert!(is_unimodal(&[0.0, 1.0, 2.0, 1.0, 0.0]));
        assert!(is_unimodal(&[3.0, 2.0, 1.0]));
        assert!(!is_unimodal(&[0.0, 2.0, 1.0, 2.0, 0.0]));
    }

    #[test]
    fn corollary_cancellation() {
        let form = IndexForm::LinearIndex { beta: vec![0.7, -0.3] };
        let noise = LatentDistribution::standard_normal();
        let mix = single(&[-1.0, 0.0, 0.5]);
        let g = cef_gradient(&form, &noise, &mix, &[0.4, 1.0]).unwrap();
        assert!((g[0] / g[1] - 0.7 / -0.3).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn finite_differences_match_weight(mean in -1.5..1.5f64, sd in 0.5..2.0f64, t in -2.0..2.0f64, beta in -2.0..2.0f64) {
            let mix = single(&[t]);
            let h = 1e-4;
            let at = |x: f64| mix.report_cdf(&LatentDistribution::normal(mean + beta * x, sd), 0);
            let fd = (at(h) - at(0.0)) / h;
            let w = cdf_slope_weight(&mix, &LatentDistribution::normal(mean, sd), 0).unwrap();
            prop_assert!((fd + w * beta).abs() < 1e-3);
        }

        #[test]
        fn discrete_weight_is_nonnegative(delta in -5.0..5.0f64, t in -3.0..3.0f64) {
            prop_assume!(delta.abs() > 1e-9);
            let w = discrete_total(&single(&[t]), &LatentDistribution::log_normal(0.0, 1.0), &DeltaSpec::Constant(delta)).unwrap();
            prop_assert!(w.total >= 0.0);
            prop_assert!(w.per_profile.iter().all(|p| p.densities.iter().all(|d| *d >= 0.0)));
        }
    }
}
