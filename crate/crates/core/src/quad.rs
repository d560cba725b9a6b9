//! Adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
];

/// Absolute tolerance used by the weight formulas.
pub const ABS_TOL: f64 = 1e-10;
const REL_TOL: f64 = 1e-12;
const MAX_SEGMENTS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let s = f(center - dx) + f(center + dx);
        kronrod += w * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Integrates `f` over `[a, b]` to within `abs_tol` (or a relative 1e-12).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Integral {
    if a == b {
        return Integral { value: 0.0, error: 0.0 };
    }
    if a > b {
        let r = integrate(f, b, a, abs_tol);
        return Integral { value: -r.value, error: r.error };
    }
    let first = gk15(&f, a, b);
    let mut total = first.value;
    let mut total_err = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    while total_err > abs_tol.max(REL_TOL * total.abs()) && heap.len() < MAX_SEGMENTS {
        let worst = heap.pop().expect("heap is nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            break;
        }
        let left = gk15(&f, worst.a, mid);
        let right = gk15(&f, mid, worst.b);
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // Re-sum to drop the drift accumulated by incremental updates.
    let mut segs = heap.into_vec();
    segs.sort_by(|x, y| x.a.total_cmp(&y.a));
    Integral {
        value: segs.iter().map(|s| s.value).sum(),
        error: segs.iter().map(|s| s.error).sum(),
    }
}

/// Integrates over `[a, b]`, splitting at every interior breakpoint (kinks or jumps of `f`).
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], abs_tol: f64) -> Integral {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&p| p > a && p < b && p.is_finite()).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let pieces = (pts.len() - 1).max(1) as f64;
    let mut out = Integral { value: 0.0, error: 0.0 };
    for w in pts.windows(2) {
        let r = integrate(&f, w[0], w[1], abs_tol / pieces);
        out.value += r.value;
        out.error += r.error;
    }
    out
}

/// Composite 7-point Gauss–Legendre rule on `panels` equal pieces of `[a, b]`.
pub fn fixed_gauss<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let half = 0.5 * width;
    (0..panels)
        .map(|p| {
            let center = a + (p as f64 + 0.5) * width;
            let mut s = WG[3] * f(center);
            for (k, &w) in WG.iter().take(3).enumerate() {
                let dx = half * XGK[2 * k + 1];
                s += w * (f(center - dx) + f(center + dx));
            }
            s * half
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let r = integrate(|x| 3.0 * x * x + 2.0 * x + 1.0, 0.0, 2.0, 1e-12);
        assert!((r.value - 14.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let r = integrate(|x| x.exp(), 1.0, 0.0, 1e-12);
        assert!((r.value + (1f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_density_integrates_to_one() {
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let r = integrate(phi, -12.0, 12.0, 1e-13);
        assert!((r.value - 1.0).abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn breakpoints_handle_jumps() {
        let step = |x: f64| if x < 0.3 { 1.0 } else { 5.0 };
        let r = integrate_with_breaks(step, 0.0, 1.0, &[0.3], 1e-12);
        assert!((r.value - (0.3 + 5.0 * 0.7)).abs() < 1e-12);
    }

    #[test]
    fn fixed_rule_is_exact_to_degree_thirteen() {
        let v = fixed_gauss(|x| x.powi(13) + x.powi(12), -1.0, 2.0, 1);
        let exact = (2f64.powi(14) - 1.0) / 14.0 + (2f64.powi(13) + 1.0) / 13.0;
        assert!((v - exact).abs() < 1e-9 * exact);
        assert!((fixed_gauss(f64::sin, 0.0, std::f64::consts::PI, 4) - 2.0).abs() < 1e-13);
    }

    #[test]
    fn sqrt_singularity_converges() {
        let r = integrate(|x: f64| x.sqrt(), 0.0, 1.0, 1e-10);
        assert!((r.value - 2.0 / 3.0).abs() < 1e-9);
    }
}
