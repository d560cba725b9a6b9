//! Reporting functions as sorted threshold lists, mixtures over reporting
//! types, and the continuum (dense) reporting scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentDistribution;

/// A weakly increasing reporting function, stored as its category thresholds.
///
/// Category `r` is reported exactly when `thresholds[r-1] < h <= thresholds[r]`,
/// so a latent value sitting on a threshold reports the lower category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile")]
pub struct ThresholdProfile {
    thresholds: Vec<f64>,
}

#[derive(Deserialize)]
struct RawProfile {
    thresholds: Vec<f64>,
}

impl TryFrom<RawProfile> for ThresholdProfile {
    type Error = Error;
    fn try_from(raw: RawProfile) -> Result<Self> {
        Self::new(raw.thresholds)
    }
}

impl ThresholdProfile {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::InvalidProfile("at least one threshold is required".into()));
        }
        if thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidProfile("thresholds must be finite".into()));
        }
        if thresholds.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidProfile("thresholds must be nondecreasing".into()));
        }
        Ok(Self { thresholds })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Highest category; the response space is `0..=rbar`.
    pub fn rbar(&self) -> usize {
        self.thresholds.len()
    }

    /// Number of thresholds strictly below `h`.
    pub fn report(&self, h: f64) -> usize {
        self.thresholds.partition_point(|&t| t < h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub probability: f64,
    pub profile: ThresholdProfile,
}

/// Population of reporting types with their shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture")]
pub struct ReportingMixture {
    entries: Vec<MixtureEntry>,
}

#[derive(Deserialize)]
struct RawMixture {
    entries: Vec<MixtureEntry>,
}

impl TryFrom<RawMixture> for ReportingMixture {
    type Error = Error;
    fn try_from(raw: RawMixture) -> Result<Self> {
        Self::new(raw.entries)
    }
}

impl ReportingMixture {
    pub fn new(entries: Vec<MixtureEntry>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::InvalidMixture("no reporting types".into()));
        };
        let rbar = first.profile.rbar();
        if entries.iter().any(|e| e.profile.rbar() != rbar) {
            return Err(Error::InvalidMixture("all profiles must share the same number of thresholds".into()));
        }
        if entries.iter().any(|e| !(e.probability > 0.0) || !e.probability.is_finite()) {
            return Err(Error::InvalidMixture("probabilities must be positive".into()));
        }
        let total: f64 = entries.iter().map(|e| e.probability).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!("probabilities sum to {total}")));
        }
        Ok(Self { entries })
    }

    pub fn single(profile: ThresholdProfile) -> Self {
        Self { entries: vec![MixtureEntry { probability: 1.0, profile }] }
    }

    /// Equal shares over the given profiles.
    pub fn uniform(profiles: Vec<ThresholdProfile>) -> Result<Self> {
        let p = 1.0 / profiles.len().max(1) as f64;
        let entries: Vec<_> = profiles.into_iter().map(|profile| MixtureEntry { probability: p, profile }).collect();
        Self::new(entries)
    }

    pub fn entries(&self) -> &[MixtureEntry] {
        &self.entries
    }

    pub fn rbar(&self) -> usize {
        self.entries[0].profile.rbar()
    }

    /// `P(R <= r)` when `H` follows `dist`; `r = rbar` gives 1.
    pub fn report_cdf(&self, dist: &LatentDistribution, r: usize) -> f64 {
        if r >= self.rbar() {
            return 1.0;
        }
        self.entries.iter().map(|e| e.probability * dist.cdf(e.profile.thresholds[r])).sum()
    }

    /// `E[R]` when `H` follows `dist`: the sum over categories of `P(R > r)`.
    pub fn expected_report(&self, dist: &LatentDistribution) -> f64 {
        self.entries
            .iter()
            .map(|e| e.probability * e.profile.thresholds.iter().map(|&t| dist.sf(t)).sum::<f64>())
            .sum()
    }
}

/// Thresholds placement for an individual linear reporting function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearMode {
    /// `lower + r (upper - lower) / rbar`, `r = 0..rbar`.
    PaperEq5,
    /// `lower + r (upper - lower) / (rbar - 1)`: the top threshold lands on `upper`.
    #[default]
    EndpointExact,
    /// `lower + (r + 1) (upper - lower) / (rbar + 1)`: the `rbar + 1` categories
    /// split `[lower, upper]` into equal bins, the outer two absorbing the tails.
    EqualBins,
}

pub fn linear_profile(lower: f64, upper: f64, rbar: usize, mode: LinearMode) -> Result<ThresholdProfile> {
    if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
        return Err(Error::InvalidProfile(format!("need lower < upper, got [{lower}, {upper}]")));
    }
    if rbar == 0 {
        return Err(Error::InvalidProfile("need at least one threshold".into()));
    }
    let width = upper - lower;
    let thresholds = (0..rbar)
        .map(|r| {
            let r = r as f64;
            match mode {
                _ if rbar == 1 && mode != LinearMode::EqualBins => lower,
                LinearMode::PaperEq5 => lower + r * width / rbar as f64,
                LinearMode::EndpointExact => lower + r * width / (rbar - 1) as f64,
                LinearMode::EqualBins => lower + (r + 1.0) * width / (rbar + 1) as f64,
            }
        })
        .collect();
    ThresholdProfile::new(thresholds)
}

/// `rbar` i.i.d. thresholds from `dist`, sorted; ties are kept.
pub fn sampled_profile(dist: &LatentDistribution, rbar: usize, seed: u64) -> Result<ThresholdProfile> {
    if rbar == 0 {
        return Err(Error::InvalidProfile("need at least one threshold".into()));
    }
    let mut t = dist.sample(rbar, seed)?;
    t.sort_by(f64::total_cmp);
    ThresholdProfile::new(t)
}

/// Continuum reporting function: `R / rbar = clamp((h - lower) / (upper - lower), 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseScale {
    pub lower: f64,
    pub upper: f64,
}

impl DenseScale {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidProfile(format!("need lower < upper, got [{lower}, {upper}]")));
        }
        Ok(Self { lower, upper })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Report as a fraction of the top category.
    pub fn level(&self, h: f64) -> f64 {
        ((h - self.lower) / self.width()).clamp(0.0, 1.0)
    }

    pub fn slope(&self, h: f64) -> f64 {
        if h > self.lower && h < self.upper {
            1.0 / self.width()
        } else {
            0.0
        }
    }

    /// Average slope over the interval between `y` and `y + delta`.
    pub fn avg_slope(&self, y: f64, delta: f64) -> Result<f64> {
        if delta == 0.0 {
            return Err(Error::ZeroDelta);
        }
        let (a, b) = if delta > 0.0 { (y, y + delta) } else { (y + delta, y) };
        let overlap = (b.min(self.upper) - a.max(self.lower)).max(0.0);
        Ok(overlap / (delta.abs() * self.width()))
    }

    /// The `n * rbar` equally spaced thresholds approximating this scale.
    pub fn refine(&self, rbar: usize, n: usize) -> Result<ThresholdProfile> {
        if n == 0 {
            return Err(Error::InvalidProfile("refinement index must be at least 1".into()));
        }
        linear_profile(self.lower, self.upper, rbar * n, LinearMode::PaperEq5)
    }
}

pub fn dense_slope(scale: &DenseScale, h: f64) -> f64 {
    scale.slope(h)
}

pub fn avg_slope(scale: &DenseScale, y: f64, delta: f64) -> Result<f64> {
    scale.avg_slope(y, delta)
}

pub fn dense_refine(scale: &DenseScale, rbar: usize, n: usize) -> Result<ThresholdProfile> {
    scale.refine(rbar, n)
}

/// Strictly increasing piecewise-linear map, extended linearly past the end knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    knots: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidProfile("a transform needs at least two knots".into()));
        }
        let increasing = knots.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1);
        if !increasing || knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidProfile("transform must be strictly increasing".into()));
        }
        Ok(Self { knots })
    }

    pub fn identity() -> Self {
        Self { knots: vec![(0.0, 0.0), (1.0, 1.0)] }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn apply(&self, x: f64) -> f64 {
        interpolate(&self.knots, x, |k| k.0, |k| k.1)
    }

    pub fn inverse(&self, y: f64) -> f64 {
        interpolate(&self.knots, y, |k| k.1, |k| k.0)
    }
}

fn interpolate(knots: &[(f64, f64)], v: f64, from: impl Fn(&(f64, f64)) -> f64, to: impl Fn(&(f64, f64)) -> f64) -> f64 {
    let i = knots.partition_point(|k| from(k) < v).clamp(1, knots.len() - 1);
    let (a, b) = (&knots[i - 1], &knots[i]);
    to(a) + (v - from(a)) * (to(b) - to(a)) / (from(b) - from(a))
}

/// Reporting function of latent `h` when the respondent reports `profile`
/// applied to the transformed value `transform(h)`.
pub fn compose_subjective(transform: &PiecewiseLinear, profile: &ThresholdProfile) -> Result<ThresholdProfile> {
    ThresholdProfile::new(profile.thresholds.iter().map(|&t| transform.inverse(t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(t: &[f64]) -> ThresholdProfile {
        ThresholdProfile::new(t.to_vec()).unwrap()
    }

    #[test]
    fn report_examples() {
        assert_eq!(profile(&[0.0]).report(0.0), 0);
        assert_eq!(profile(&[0.0]).report(0.1), 1);
        let eleven: Vec<f64> = (0..10).map(|r| -5.0 + r as f64).collect();
        assert_eq!(profile(&eleven).report(0.3), 6);
    }

    #[test]
    fn unsorted_thresholds_rejected() {
        assert!(ThresholdProfile::new(vec![1.0, 0.0]).is_err());
        assert!(serde_json::from_str::<ThresholdProfile>(r#"{"thresholds":[1,0]}"#).is_err());
    }

    #[test]
    fn linear_profile_examples() {
        let p = linear_profile(0.0, 10.0, 10, LinearMode::PaperEq5).unwrap();
        assert_eq!(p.thresholds(), &(0..10).map(|r| r as f64).collect::<Vec<_>>()[..]);
        assert_eq!(linear_profile(0.0, 1.0, 2, LinearMode::EndpointExact).unwrap().thresholds(), &[0.0, 1.0]);
        for mode in [LinearMode::PaperEq5, LinearMode::EndpointExact] {
            assert_eq!(linear_profile(-1.0, 1.0, 1, mode).unwrap().thresholds(), &[-1.0]);
        }
        assert_eq!(linear_profile(0.0, 1.0, 1, LinearMode::EqualBins).unwrap().thresholds(), &[0.5]);
        assert!(matches!(linear_profile(1.0, 1.0, 3, LinearMode::default()), Err(Error::InvalidProfile(_))));
    }

    #[test]
    fn sampled_profiles() {
        let p = sampled_profile(&LatentDistribution::uniform(0.1, 3.0), 3, 11).unwrap();
        assert_eq!(p.rbar(), 3);
        assert!(p.thresholds().iter().all(|t| (0.1..=3.0).contains(t)));

        let point = sampled_profile(&LatentDistribution::uniform(2.0, 2.0), 3, 0).unwrap();
        assert_eq!(point.thresholds(), &[2.0, 2.0, 2.0]);
        assert_eq!(point.report(2.0), 0);
        assert_eq!(point.report(2.0 + 1e-12), 3);

        let n = sampled_profile(&LatentDistribution::normal(2.0, 1.0), 10, 5).unwrap();
        assert!(n.thresholds().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(n, sampled_profile(&LatentDistribution::normal(2.0, 1.0), 10, 5).unwrap());
    }

    #[test]
    fn refinement_examples() {
        let unit = DenseScale::new(0.0, 1.0).unwrap();
        assert_eq!(unit.refine(1, 4).unwrap().thresholds(), &[0.0, 0.25, 0.5, 0.75]);
        assert_eq!(unit.refine(3, 1).unwrap(), linear_profile(0.0, 1.0, 3, LinearMode::PaperEq5).unwrap());
        let wide = DenseScale::new(-1.0, 1.0).unwrap().refine(1, 100).unwrap();
        let gap = wide.thresholds().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        assert!((gap - 0.02).abs() < 1e-12);
    }

    #[test]
    fn slope_examples() {
        let unit = DenseScale::new(0.0, 1.0).unwrap();
        assert_eq!(dense_slope(&unit, 0.5), 1.0);
        assert!((avg_slope(&unit, 0.9, 0.2).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(avg_slope(&unit, 2.0, 0.5).unwrap(), 0.0);
        assert!(matches!(avg_slope(&unit, 0.5, 0.0), Err(Error::ZeroDelta)));
        assert!((avg_slope(&unit, 0.3, -0.1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn avg_slope_tends_to_slope() {
        let s = DenseScale::new(-1.0, 2.0).unwrap();
        for h in [-0.5, 0.0, 1.7, 3.0, -4.0] {
            assert!((s.avg_slope(h, 1e-9).unwrap() - s.slope(h)).abs() < 1e-6);
        }
    }

    #[test]
    fn composition_examples() {
        let p = profile(&[0.0, 2.0]);
        assert_eq!(compose_subjective(&PiecewiseLinear::identity(), &p).unwrap(), p);
        let double = PiecewiseLinear::new(vec![(0.0, 0.0), (1.0, 2.0)]).unwrap();
        assert_eq!(compose_subjective(&double, &p).unwrap().thresholds(), &[0.0, 1.0]);
        let shift = PiecewiseLinear::new(vec![(0.0, 1.0), (1.0, 2.0)]).unwrap();
        assert_eq!(compose_subjective(&shift, &profile(&[0.0])).unwrap().thresholds(), &[-1.0]);
        assert!(PiecewiseLinear::new(vec![(0.0, 1.0), (1.0, 0.5)]).is_err());
    }

    #[test]
    fn mixture_validation() {
        let a = profile(&[0.0]);
        let b = profile(&[0.0, 1.0]);
        let bad = ReportingMixture::new(vec![
            MixtureEntry { probability: 0.5, profile: a.clone() },
            MixtureEntry { probability: 0.5, profile: b },
        ]);
        assert!(bad.is_err());
        let short = ReportingMixture::new(vec![MixtureEntry { probability: 0.9, profile: a }]);
        assert!(short.is_err());
    }

    #[test]
    fn expected_report_matches_cdf_sum() {
        let mix = ReportingMixture::uniform(vec![profile(&[-1.0, 0.0, 2.0]), profile(&[-0.5, 0.5, 1.0])]).unwrap();
        let d = LatentDistribution::normal(0.2, 1.3);
        let via_cdf: f64 = (0..3).map(|r| 1.0 - mix.report_cdf(&d, r)).sum();
        assert!((mix.expected_report(&d) - via_cdf).abs() < 1e-14);
    }

    fn sorted_profile() -> impl Strategy<Value = ThresholdProfile> {
        prop::collection::vec(-10.0..10.0f64, 1..15).prop_map(|mut v| {
            v.sort_by(f64::total_cmp);
            ThresholdProfile::new(v).unwrap()
        })
    }

    proptest! {
        #[test]
        fn report_is_threshold_characterised(p in sorted_profile(), h in -12.0..12.0f64) {
            let r = p.report(h);
            prop_assert!(r <= p.rbar());
            for k in 0..p.rbar() {
                prop_assert_eq!(r <= k, h <= p.thresholds()[k]);
            }
            let via_indicators = (0..p.rbar()).filter(|&k| r > k).count();
            prop_assert_eq!(r, via_indicators);
        }

        #[test]
        fn report_is_monotone(p in sorted_profile(), a in -12.0..12.0f64, b in -12.0..12.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(p.report(lo) <= p.report(hi));
        }

        #[test]
        fn report_is_left_continuous(p in sorted_profile()) {
            for &t in p.thresholds() {
                prop_assert_eq!(p.report(t), p.report(t - 1e-9));
                prop_assert!(p.report(t + 1e-9) > p.report(t));
            }
        }

        #[test]
        fn refinement_converges(lower in -3.0..0.0f64, width in 0.1..4.0f64, rbar in 1usize..5, n in 1usize..60, h in -5.0..5.0f64) {
            let s = DenseScale::new(lower, lower + width).unwrap();
            let p = s.refine(rbar, n).unwrap();
            let err = (p.report(h) as f64 / n as f64 - rbar as f64 * s.level(h)).abs();
            prop_assert!(err <= rbar as f64 / n as f64 + 1e-9);
        }

        #[test]
        fn composition_preserves_reports(
            p in sorted_profile(),
            slopes in prop::collection::vec(0.2..3.0f64, 3),
            h in -8.0..8.0f64,
        ) {
            let knots = vec![(-2.0, -2.0 * slopes[0]), (0.0, 0.0), (2.0, 2.0 * slopes[1]), (5.0, 2.0 * slopes[1] + 3.0 * slopes[2])];
            let t = PiecewiseLinear::new(knots).unwrap();
            let composed = compose_subjective(&t, &p).unwrap();
            prop_assert!(composed.thresholds().windows(2).all(|w| w[0] <= w[1]));
            let th = t.apply(h);
            let near_knot = p.thresholds().iter().any(|&k| (k - th).abs() < 1e-9);
            if !near_knot {
                prop_assert_eq!(composed.report(h), p.report(th));
            }
        }
    }
}
