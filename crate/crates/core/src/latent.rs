//! Continuous latent-outcome distributions and additive structural models.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::seed;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal helpers.
pub mod normal {
    use super::*;

    pub fn pdf(z: f64) -> f64 {
        INV_SQRT_2PI * (-0.5 * z * z).exp()
    }

    pub fn cdf(z: f64) -> f64 {
        0.5 * erfc(-z / std::f64::consts::SQRT_2)
    }

    /// Upper tail `1 - cdf(z)` without cancellation.
    pub fn sf(z: f64) -> f64 {
        0.5 * erfc(z / std::f64::consts::SQRT_2)
    }

    pub fn quantile(u: f64) -> f64 {
        StdNormal::standard().inverse_cdf(u)
    }
}

/// Distribution of latent happiness `H` (or of an additive error `U`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LatentDistribution {
    Normal { mean: f64, sd: f64 },
    /// `lo == hi` is a point mass, used for degenerate threshold draws.
    Uniform { lo: f64, hi: f64 },
    LogNormal { log_mean: f64, log_sd: f64 },
    Mixture { weights: Vec<f64>, components: Vec<LatentDistribution> },
    Truncated { base: Box<LatentDistribution>, lo: f64, hi: f64 },
    /// Location shift of `base` by `by`.
    Shifted { base: Box<LatentDistribution>, by: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub pdf: f64,
    pub cdf: f64,
}

const MIXTURE_QUANTILE_TAIL: f64 = 1e-12;
const TAIL_MASS: f64 = 1e-12;

impl LatentDistribution {
    pub fn normal(mean: f64, sd: f64) -> Self {
        Self::Normal { mean, sd }
    }

    pub fn standard_normal() -> Self {
        Self::Normal { mean: 0.0, sd: 1.0 }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self::Uniform { lo, hi }
    }

    pub fn log_normal(log_mean: f64, log_sd: f64) -> Self {
        Self::LogNormal { log_mean, log_sd }
    }

    pub fn mixture(weights: Vec<f64>, components: Vec<LatentDistribution>) -> Self {
        Self::Mixture { weights, components }
    }

    pub fn truncated(base: LatentDistribution, lo: f64, hi: f64) -> Self {
        Self::Truncated { base: Box::new(base), lo, hi }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDistribution(msg));
        match self {
            Self::Normal { mean, sd } => {
                if !mean.is_finite() || !sd.is_finite() || *sd <= 0.0 {
                    return bad(format!("normal needs finite mean and sd > 0, got ({mean}, {sd})"));
                }
            }
            Self::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() || lo > hi {
                    return bad(format!("uniform needs finite lo <= hi, got [{lo}, {hi}]"));
                }
            }
            Self::LogNormal { log_mean, log_sd } => {
                if !log_mean.is_finite() || !log_sd.is_finite() || *log_sd <= 0.0 {
                    return bad(format!("log-normal needs log_sd > 0, got ({log_mean}, {log_sd})"));
                }
            }
            Self::Mixture { weights, components } => {
                if weights.is_empty() || weights.len() != components.len() {
                    return bad("mixture needs one weight per component".into());
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return bad("mixture weights must be nonnegative".into());
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("mixture weights sum to {total}"));
                }
                for c in components {
                    c.validate()?;
                }
            }
            Self::Truncated { base, lo, hi } => {
                base.validate()?;
                if !(lo < hi) {
                    return bad(format!("truncation needs lo < hi, got [{lo}, {hi}]"));
                }
                if base.mass_between(*lo, *hi) <= 0.0 {
                    return bad(format!("base has no mass on [{lo}, {hi}]"));
                }
            }
            Self::Shifted { base, by } => {
                base.validate()?;
                if !by.is_finite() {
                    return bad("shift must be finite".into());
                }
            }
        }
        Ok(())
    }

    /// Density and distribution function at `h`, validating the parameters first.
    pub fn evaluate(&self, h: f64) -> Result<Evaluation> {
        if !h.is_finite() {
            return Err(Error::Domain(format!("evaluation point {h} is not finite")));
        }
        self.validate()?;
        Ok(Evaluation { pdf: self.pdf(h), cdf: self.cdf(h) })
    }

    /// Density; assumes a validated distribution.
    pub fn pdf(&self, h: f64) -> f64 {
        match self {
            Self::Normal { mean, sd } => normal::pdf((h - mean) / sd) / sd,
            Self::Uniform { lo, hi } => {
                if lo < hi && h >= *lo && h <= *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Self::LogNormal { log_mean, log_sd } => {
                if h <= 0.0 {
                    0.0
                } else {
                    normal::pdf((h.ln() - log_mean) / log_sd) / (h * log_sd)
                }
            }
            Self::Mixture { weights, components } => {
                weights.iter().zip(components).map(|(w, c)| w * c.pdf(h)).sum()
            }
            Self::Truncated { base, lo, hi } => {
                if h < *lo || h > *hi {
                    0.0
                } else {
                    base.pdf(h) / base.mass_between(*lo, *hi)
                }
            }
            Self::Shifted { base, by } => base.pdf(h - by),
        }
    }

    /// Distribution function; assumes a validated distribution.
    pub fn cdf(&self, h: f64) -> f64 {
        match self {
            Self::Normal { mean, sd } => normal::cdf((h - mean) / sd),
            Self::Uniform { lo, hi } => {
                if h < *lo {
                    0.0
                } else if h >= *hi {
                    1.0
                } else {
                    (h - lo) / (hi - lo)
                }
            }
            Self::LogNormal { log_mean, log_sd } => {
                if h <= 0.0 {
                    0.0
                } else {
                    normal::cdf((h.ln() - log_mean) / log_sd)
                }
            }
            Self::Mixture { weights, components } => {
                weights.iter().zip(components).map(|(w, c)| w * c.cdf(h)).sum()
            }
            Self::Truncated { base, lo, hi } => {
                if h <= *lo {
                    0.0
                } else if h >= *hi {
                    1.0
                } else {
                    (base.mass_between(*lo, h) / base.mass_between(*lo, *hi)).clamp(0.0, 1.0)
                }
            }
            Self::Shifted { base, by } => base.cdf(h - by),
        }
    }

    /// Upper tail `P(H > h)`, accurate far into the right tail.
    pub fn sf(&self, h: f64) -> f64 {
        match self {
            Self::Normal { mean, sd } => normal::sf((h - mean) / sd),
            Self::LogNormal { log_mean, log_sd } => {
                if h <= 0.0 {
                    1.0
                } else {
                    normal::sf((h.ln() - log_mean) / log_sd)
                }
            }
            Self::Mixture { weights, components } => {
                weights.iter().zip(components).map(|(w, c)| w * c.sf(h)).sum()
            }
            Self::Truncated { base, lo, hi } => {
                if h <= *lo {
                    1.0
                } else if h >= *hi {
                    0.0
                } else {
                    (base.mass_between(h, *hi) / base.mass_between(*lo, *hi)).clamp(0.0, 1.0)
                }
            }
            Self::Shifted { base, by } => base.sf(h - by),
            Self::Uniform { .. } => 1.0 - self.cdf(h),
        }
    }

    /// `P(a < H <= b)`, picking whichever tail keeps precision.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let fa = self.cdf(a);
        if fa > 0.5 {
            (self.sf(a) - self.sf(b)).max(0.0)
        } else {
            (self.cdf(b) - fa).max(0.0)
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("quantile level {u} outside (0, 1)")));
        }
        self.validate()?;
        Ok(self.quantile_unchecked(u))
    }

    pub(crate) fn quantile_unchecked(&self, u: f64) -> f64 {
        match self {
            Self::Normal { mean, sd } => mean + sd * normal::quantile(u),
            Self::Uniform { lo, hi } => lo + u * (hi - lo),
            Self::LogNormal { log_mean, log_sd } => (log_mean + log_sd * normal::quantile(u)).exp(),
            Self::Mixture { components, .. } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for c in components {
                    lo = lo.min(c.quantile_unchecked(MIXTURE_QUANTILE_TAIL));
                    hi = hi.max(c.quantile_unchecked(1.0 - MIXTURE_QUANTILE_TAIL));
                }
                bisect_cdf(self, u, lo, hi)
            }
            Self::Truncated { base, lo, hi } => {
                let flo = base.cdf(*lo);
                let fhi = base.cdf(*hi);
                if fhi - flo > 1e-8 {
                    let target = (flo + u * (fhi - flo)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                    base.quantile_unchecked(target).clamp(*lo, *hi)
                } else {
                    // Deep tail: the base cdf has no resolution left, bisect the truncated cdf.
                    bisect_cdf(self, u, *lo, *hi)
                }
            }
            Self::Shifted { base, by } => base.quantile_unchecked(u) + by,
        }
    }

    /// `n` deterministic draws for `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        let mut rng = seed::rng(seed);
        Ok((0..n).map(|_| self.draw(&mut rng)).collect())
    }

    /// One draw from a validated distribution.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            Self::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Self::LogNormal { log_mean, log_sd } => {
                let z: f64 = rng.sample(StandardNormal);
                (log_mean + log_sd * z).exp()
            }
            Self::Mixture { weights, components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (w, c) in weights.iter().zip(components) {
                    acc += w;
                    if u < acc {
                        return c.draw(rng);
                    }
                }
                let last = components.iter().zip(weights).rev().find(|(_, w)| **w > 0.0);
                last.map(|(c, _)| c).unwrap_or(&components[components.len() - 1]).draw(rng)
            }
            Self::Truncated { .. } => {
                let u = seed::open_unit(rng);
                self.quantile_unchecked(u)
            }
            Self::Shifted { base, by } => base.draw(rng) + by,
        }
    }

    /// Location shift by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        match self {
            Self::Normal { mean, sd } => Self::Normal { mean: mean + delta, sd: *sd },
            Self::Uniform { lo, hi } => Self::Uniform { lo: lo + delta, hi: hi + delta },
            Self::Mixture { weights, components } => Self::Mixture {
                weights: weights.clone(),
                components: components.iter().map(|c| c.shifted(delta)).collect(),
            },
            Self::Truncated { base, lo, hi } => Self::Truncated {
                base: Box::new(base.shifted(delta)),
                lo: lo + delta,
                hi: hi + delta,
            },
            Self::Shifted { base, by } => Self::Shifted { base: base.clone(), by: by + delta },
            Self::LogNormal { .. } => Self::Shifted { base: Box::new(self.clone()), by: delta },
        }
    }

    /// Closed support `[lo, hi]`, possibly infinite.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Self::Uniform { lo, hi } => (*lo, *hi),
            Self::LogNormal { .. } => (0.0, f64::INFINITY),
            Self::Mixture { components, .. } => components.iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), c| {
                    let (a, b) = c.support();
                    (lo.min(a), hi.max(b))
                },
            ),
            Self::Truncated { base, lo, hi } => {
                let (a, b) = base.support();
                (a.max(*lo), b.min(*hi))
            }
            Self::Shifted { base, by } => {
                let (a, b) = base.support();
                (a + by, b + by)
            }
        }
    }

    /// Finite integration range: the support, with infinite ends replaced
    /// by the 1e-12 tail quantiles.
    pub fn integration_range(&self) -> (f64, f64) {
        let (lo, hi) = self.support();
        let lo = if lo.is_finite() { lo } else { self.quantile_unchecked(TAIL_MASS) };
        let hi = if hi.is_finite() { hi } else { self.quantile_unchecked(1.0 - TAIL_MASS) };
        (lo, hi)
    }

    /// Points where the density jumps or has a kink.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Normal { .. } => vec![],
            Self::Uniform { lo, hi } => vec![*lo, *hi],
            Self::LogNormal { .. } => vec![0.0],
            Self::Mixture { components, .. } => components.iter().flat_map(|c| c.breakpoints()).collect(),
            Self::Truncated { base, lo, hi } => {
                let mut b = base.breakpoints();
                b.push(*lo);
                b.push(*hi);
                b
            }
            Self::Shifted { base, by } => base.breakpoints().into_iter().map(|p| p + by).collect(),
        }
    }

    /// True for families whose density is log-concave.
    pub fn is_log_concave(&self) -> bool {
        match self {
            Self::Normal { .. } | Self::Uniform { .. } => true,
            Self::Truncated { base, .. } | Self::Shifted { base, .. } => base.is_log_concave(),
            Self::LogNormal { .. } | Self::Mixture { .. } => false,
        }
    }
}

fn bisect_cdf(dist: &LatentDistribution, u: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dist.cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Deterministic part of an additive structural model `h(x, u) = index(x) + u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum IndexForm {
    LinearIndex { beta: Vec<f64> },
    /// `beta1 * ln(x1) + beta2 * x2`.
    LogLinear { beta1: f64, beta2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralModel {
    pub form: IndexForm,
    pub noise: LatentDistribution,
}

impl IndexForm {
    pub fn dimension(&self) -> usize {
        match self {
            Self::LinearIndex { beta } => beta.len(),
            Self::LogLinear { .. } => 2,
        }
    }

    pub fn index(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(match self {
            Self::LinearIndex { beta } => beta.iter().zip(x).map(|(b, v)| b * v).sum(),
            Self::LogLinear { beta1, beta2 } => beta1 * x[0].ln() + beta2 * x[1],
        })
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(match self {
            Self::LinearIndex { beta } => beta.clone(),
            Self::LogLinear { beta1, beta2 } => vec![beta1 / x[0], *beta2],
        })
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension() {
            return Err(Error::DimensionMismatch { expected: self.dimension(), got: x.len() });
        }
        if let Self::LogLinear { .. } = self {
            if !(x[0] > 0.0) {
                return Err(Error::Domain(format!("log-linear index needs x1 > 0, got {}", x[0])));
            }
        }
        Ok(())
    }
}

impl StructuralModel {
    pub fn new(form: IndexForm, noise: LatentDistribution) -> Self {
        Self { form, noise }
    }

    pub fn index(&self, x: &[f64]) -> Result<f64> {
        self.form.index(x)
    }

    pub fn outcome(&self, x: &[f64], u: f64) -> Result<f64> {
        Ok(self.index(x)? + u)
    }

    /// Distribution of `H` given `X = x`.
    pub fn latent_at(&self, x: &[f64]) -> Result<LatentDistribution> {
        Ok(self.noise.shifted(self.index(x)?))
    }

    /// `h(x', u) - h(x, u)`, the same for every `u`.
    pub fn treatment_effect(&self, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        Ok(self.index(x_prime)? - self.index(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;

    fn families() -> Vec<LatentDistribution> {
        vec![
            LatentDistribution::standard_normal(),
            LatentDistribution::normal(1.5, 0.3),
            LatentDistribution::uniform(0.0, 1.0),
            LatentDistribution::log_normal(0.0, 1.0),
            LatentDistribution::mixture(
                vec![0.5, 0.5],
                vec![LatentDistribution::normal(-2.0, 1.0), LatentDistribution::normal(2.0, 1.0)],
            ),
            LatentDistribution::truncated(LatentDistribution::standard_normal(), 0.0, 1.0),
            LatentDistribution::truncated(LatentDistribution::standard_normal(), (0.4f64).ln(), 4f64.ln()),
            LatentDistribution::log_normal(0.0, 1.0).shifted(0.7),
        ]
    }

    #[test]
    fn standard_normal_at_zero() {
        let e = LatentDistribution::standard_normal().evaluate(0.0).unwrap();
        assert!((e.pdf - 0.398_942_3).abs() < 1e-7);
        assert!((e.pdf - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert_eq!(e.cdf, 0.5);
    }

    #[test]
    fn uniform_identity() {
        let e = LatentDistribution::uniform(0.0, 1.0).evaluate(0.3).unwrap();
        assert_eq!(e.pdf, 1.0);
        assert!((e.cdf - 0.3).abs() < 1e-15);
    }

    #[test]
    fn symmetric_mixture_median() {
        let m = LatentDistribution::mixture(
            vec![0.5, 0.5],
            vec![LatentDistribution::normal(-2.0, 1.0), LatentDistribution::normal(2.0, 1.0)],
        );
        assert!((m.evaluate(0.0).unwrap().cdf - 0.5).abs() < 1e-15);
    }

    #[test]
    fn inverted_truncation_is_rejected() {
        let t = LatentDistribution::truncated(LatentDistribution::standard_normal(), 1.0, 0.0);
        assert!(matches!(t.evaluate(0.5), Err(Error::InvalidDistribution(_))));
        let t = LatentDistribution::truncated(LatentDistribution::standard_normal(), 1.0, 1.0);
        assert!(t.evaluate(0.5).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(LatentDistribution::standard_normal().quantile(0.5).unwrap(), 0.0);
        assert!((LatentDistribution::uniform(0.0, 1.0).quantile(0.25).unwrap() - 0.25).abs() < 1e-15);
        assert!((LatentDistribution::log_normal(0.0, 1.0).quantile(0.5).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn quantile_domain() {
        let n = LatentDistribution::standard_normal();
        for u in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(n.quantile(u), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn densities_integrate_to_one() {
        for d in families() {
            let (a, b) = d.integration_range();
            let r = quad::integrate_with_breaks(|h| d.pdf(h), a, b, &d.breakpoints(), 1e-11);
            assert!((r.value - 1.0).abs() < 1e-6, "{d:?}: {}", r.value);
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for d in families() {
            for k in 1..100 {
                let u = k as f64 / 100.0;
                let q = d.quantile(u).unwrap();
                assert!((d.cdf(q) - u).abs() < 1e-9, "{d:?} u={u}");
            }
            // quantile(cdf(h)) on the interior of the support
            for k in 1..20 {
                let u = k as f64 / 20.0;
                let h = d.quantile(u).unwrap();
                let back = d.quantile(d.cdf(h)).unwrap();
                assert!((back - h).abs() < 1e-9 * (1.0 + h.abs()), "{d:?} h={h} back={back}");
            }
        }
    }

    #[test]
    fn mixture_cdf_is_weighted_sum() {
        let comps = vec![LatentDistribution::normal(-1.0, 0.5), LatentDistribution::log_normal(0.2, 0.8)];
        let m = LatentDistribution::mixture(vec![0.3, 0.7], comps.clone());
        for k in -30..30 {
            let h = k as f64 * 0.2;
            let direct = 0.3 * comps[0].cdf(h) + 0.7 * comps[1].cdf(h);
            assert!((m.cdf(h) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn truncated_cdf_formula() {
        let base = LatentDistribution::normal(0.3, 1.2);
        let t = LatentDistribution::truncated(base.clone(), -0.5, 1.0);
        for k in 0..=20 {
            let h = -0.5 + 1.5 * k as f64 / 20.0;
            let expect = (base.cdf(h) - base.cdf(-0.5)) / (base.cdf(1.0) - base.cdf(-0.5));
            assert!((t.cdf(h) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let u = LatentDistribution::uniform(0.0, 1.0);
        let a = u.sample(3, 7).unwrap();
        assert_eq!(a, u.sample(3, 7).unwrap());
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn normal_sample_mean() {
        let s = LatentDistribution::standard_normal().sample(10_000, 1).unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 0.04, "{mean}");
    }

    #[test]
    fn truncated_draws_stay_inside() {
        let t = LatentDistribution::truncated(LatentDistribution::standard_normal(), 0.0, 1.0);
        assert!(t.sample(100, 3).unwrap().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    fn ks_distance(d: &LatentDistribution, sample: &mut [f64]) -> f64 {
        sample.sort_by(f64::total_cmp);
        let n = sample.len() as f64;
        sample
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = d.cdf(*x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn empirical_cdf_converges() {
        for (i, d) in families().into_iter().enumerate() {
            let mut s = d.sample(10_000, 100 + i as u64).unwrap();
            let ks = ks_distance(&d, &mut s);
            assert!(ks < 0.02, "{d:?}: KS {ks}");
        }
    }

    #[test]
    fn shift_moves_location() {
        let d = LatentDistribution::log_normal(0.0, 1.0);
        let s = d.shifted(2.0);
        assert!((s.quantile(0.5).unwrap() - 3.0).abs() < 1e-12);
        assert!((s.cdf(2.5) - d.cdf(0.5)).abs() < 1e-15);
    }

    #[test]
    fn treatment_effects() {
        let m = StructuralModel::new(
            IndexForm::LinearIndex { beta: vec![-0.1, 1.0] },
            LatentDistribution::standard_normal(),
        );
        let x = [50f64.ln(), 0.0];
        let xp = [50f64.ln(), 1.0];
        assert!((m.treatment_effect(&x, &xp).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(m.treatment_effect(&x, &x).unwrap(), 0.0);
        assert!(matches!(m.treatment_effect(&[1.0], &xp), Err(Error::DimensionMismatch { .. })));

        let ll = StructuralModel::new(
            IndexForm::LogLinear { beta1: -0.1, beta2: 1.0 },
            LatentDistribution::standard_normal(),
        );
        let te = ll.treatment_effect(&[50.0, 0.0], &[100.0, 0.0]).unwrap();
        assert!((te - (-0.1 * 2f64.ln())).abs() < 1e-15);
        assert!((te + 0.0693).abs() < 1e-4);
    }

    #[test]
    fn additive_in_u() {
        let m = StructuralModel::new(
            IndexForm::LogLinear { beta1: -0.1, beta2: 1.0 },
            LatentDistribution::standard_normal(),
        );
        let x = [70.0, 1.0];
        let d = m.outcome(&x, 0.9).unwrap() - m.outcome(&x, -0.4).unwrap();
        assert!((d - 1.3).abs() < 1e-14);
    }

    #[test]
    fn json_round_trip() {
        for d in families() {
            let s = serde_json::to_string(&d).unwrap();
            let back: LatentDistribution = serde_json::from_str(&s).unwrap();
            assert_eq!(d, back);
        }
    }
}
