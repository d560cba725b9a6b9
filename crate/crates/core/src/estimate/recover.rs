//! Recovering a degree-one homogeneous index from its conditional mean.
//!
//! If `E[R | x]` is a monotone transform of `g(x)` and `g` is homogeneous of
//! degree one, then `d ln g / dx_j = rho_j / sum_i rho_i x_i` where `rho_i` is
//! the ratio of CEF partials in `x_i` and a reference `x_k`. Integrating along
//! a coordinate-wise path gives `g(x) / g(x*)`.

use crate::error::{Error, Result};
use crate::quad::fixed_gauss;

const PANELS: usize = 8;
const DENOMINATOR_FLOOR: f64 = 1e-8;

fn partial<F: Fn(&[f64]) -> f64>(cef: &F, x: &[f64], j: usize) -> f64 {
    let step = 1e-5 * x[j].abs().max(1.0);
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    up[j] += step;
    down[j] -= step;
    (cef(&up) - cef(&down)) / (2.0 * step)
}

/// `d ln g / dx_j` at `x`, or an error when the reference partial vanishes.
fn log_slope<F: Fn(&[f64]) -> f64>(cef: &F, x: &[f64], reference: usize, j: usize) -> Result<f64> {
    let grad: Vec<f64> = (0..x.len()).map(|i| partial(cef, x, i)).collect();
    if grad[reference].abs() < DENOMINATOR_FLOOR {
        return Err(Error::SingularPath(format!("reference partial {:.3e} at {x:?}", grad[reference])));
    }
    let rho: Vec<f64> = grad.iter().map(|g| g / grad[reference]).collect();
    let euler: f64 = rho.iter().zip(x).map(|(r, v)| r * v).sum();
    if euler.abs() < DENOMINATOR_FLOOR {
        return Err(Error::SingularPath(format!("index vanishes at {x:?}")));
    }
    Ok(rho[j] / euler)
}

/// `g(target) / g(base)`, moving one coordinate at a time in `order`
/// (index order when `None`).
pub fn recover_g<F>(cef: F, base: &[f64], reference: usize, target: &[f64], order: Option<&[usize]>) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let d = base.len();
    if target.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: target.len() });
    }
    if reference >= d {
        return Err(Error::OutOfRange(format!("reference coordinate {reference} of {d}")));
    }
    let default: Vec<usize> = (0..d).collect();
    let order = order.unwrap_or(&default);
    let mut seen = vec![false; d];
    for &j in order {
        if j >= d || std::mem::replace(&mut seen[j], true) {
            return Err(Error::Config("path order must be a permutation of the coordinates".into()));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Config("path order must be a permutation of the coordinates".into()));
    }
    let mut point = base.to_vec();
    let mut log_g = 0.0;
    let mut failure = None;
    for &j in order {
        if point[j] != target[j] {
            let fixed = point.clone();
            log_g += fixed_gauss(
                |v| {
                    let mut p = fixed.clone();
                    p[j] = v;
                    log_slope(&cef, &p, reference, j).unwrap_or_else(|e| {
                        failure.get_or_insert(e);
                        0.0
                    })
                },
                point[j],
                target[j],
                PANELS,
            );
            if let Some(e) = failure.take() {
                return Err(e);
            }
        }
        point[j] = target[j];
    }
    Ok(log_g.exp())
}
