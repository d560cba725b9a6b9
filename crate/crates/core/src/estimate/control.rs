//! Control-function first stage: the conditional rank of an endogenous
//! regressor given instruments and controls.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::latent::normal;
use crate::simulate::Dataset;

pub const ETA: &str = "eta";
/// Columns with at most this many distinct values get the discrete kernel.
const DISCRETE_LEVELS: usize = 10;
const DISCRETE_LAMBDA: f64 = 0.1;

enum Conditioner {
    Continuous { values: Vec<f64>, h: f64 },
    Discrete { values: Vec<f64> },
}

fn spread(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

fn distinct(v: &[f64]) -> usize {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s.len()
}

/// Smoothed conditional CDF of `endogenous` at each row given the
/// conditioning columns, appended as column `eta`.
pub fn control_function(data: &Dataset, endogenous: &str, instruments: &[&str], controls: &[&str]) -> Result<Dataset> {
    let n = data.len();
    if n < 100 {
        return Err(Error::InsufficientData(format!("control function needs at least 100 rows, got {n}")));
    }
    if instruments.is_empty() {
        return Err(Error::Config("control function needs at least one instrument".into()));
    }
    let x = data.column(endogenous)?;
    let bw = |v: &[f64]| 1.06 * spread(v) * (n as f64).powf(-0.2);
    let hx = bw(&x);
    if hx == 0.0 {
        return Err(Error::Degenerate(format!("`{endogenous}` has zero variance")));
    }
    let mut conds = vec![];
    for name in instruments {
        let values = data.column(name)?;
        let h = bw(&values);
        if h == 0.0 {
            return Err(Error::Degenerate(format!("instrument `{name}` has no variation")));
        }
        conds.push(Conditioner::Continuous { values, h });
    }
    for name in controls {
        let values = data.column(name)?;
        let h = bw(&values);
        if h == 0.0 {
            continue;
        }
        conds.push(if distinct(&values) <= DISCRETE_LEVELS {
            Conditioner::Discrete { values }
        } else {
            Conditioner::Continuous { values, h }
        });
    }
    let eta: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..n {
                let mut w = 1.0;
                let mut e = 0.0;
                for c in &conds {
                    match c {
                        Conditioner::Continuous { values, h } => e += ((values[j] - values[i]) / h).powi(2),
                        Conditioner::Discrete { values } => {
                            if values[j] != values[i] {
                                w *= DISCRETE_LAMBDA;
                            }
                        }
                    }
                }
                w *= (-0.5 * e).exp();
                num += w * normal::cdf((x[i] - x[j]) / hx);
                den += w;
            }
            (num / den).clamp(0.0, 1.0)
        })
        .collect();
    data.with_column(ETA, eta)
}
