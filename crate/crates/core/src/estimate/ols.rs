//! Least squares with an intercept and HC1 heteroskedasticity-robust errors.

use nalgebra::{DMatrix, DVector};

use super::RegressionResult;
use crate::error::{Error, Result};

pub const INTERCEPT: &str = "intercept";
const COLLINEAR_TOL: f64 = 1e-10;

/// Columns whose residual after projecting on the earlier columns vanishes.
fn collinear_columns(names: &[String], cols: &[Vec<f64>]) -> Vec<String> {
    let mut basis: Vec<Vec<f64>> = vec![];
    let mut bad = vec![];
    for (name, col) in names.iter().zip(cols) {
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r = col.clone();
        for q in &basis {
            let dot: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= COLLINEAR_TOL * norm0.max(1.0) {
            bad.push(name.clone());
        } else {
            basis.push(r.into_iter().map(|v| v / norm).collect());
        }
    }
    bad
}

/// Regresses `y` on an intercept and the named regressor columns.
pub fn ols(y: &[f64], names: &[&str], regressors: &[Vec<f64>]) -> Result<RegressionResult> {
    let n = y.len();
    let k = regressors.len() + 1;
    if names.len() != regressors.len() {
        return Err(Error::DimensionMismatch { expected: regressors.len(), got: names.len() });
    }
    if let Some(c) = regressors.iter().find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: c.len() });
    }
    if n <= k {
        return Err(Error::InsufficientData(format!("{n} rows for {k} coefficients")));
    }
    let mut all_names = vec![INTERCEPT.to_string()];
    all_names.extend(names.iter().map(|s| s.to_string()));
    let mut cols = vec![vec![1.0; n]];
    cols.extend(regressors.iter().cloned());
    let bad = collinear_columns(&all_names, &cols);
    if !bad.is_empty() {
        return Err(Error::RankDeficient(bad));
    }

    let x = DMatrix::from_fn(n, k, |i, j| cols[j][i]);
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * &x;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("ols", "normal equations are not positive definite"))?;
    let beta = chol.solve(&(x.transpose() * &yv));
    let resid = &yv - &x * &beta;
    let inv = chol.inverse();
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let row = x.row(i);
        let e2 = resid[i] * resid[i];
        meat += e2 * row.transpose() * row;
    }
    let cov = &inv * meat * &inv * (n as f64 / (n - k) as f64);
    let coefficients = all_names.iter().cloned().zip(beta.iter().copied()).collect();
    let ses = all_names.iter().cloned().zip((0..k).map(|j| cov[(j, j)].max(0.0).sqrt())).collect();
    Ok(RegressionResult {
        coefficients,
        ses,
        ratio: None,
        ratio_se: None,
        n,
        dropped_rows: 0,
        cv_objective: None,
        ratio_of: None,
        warnings: vec![],
        residual_max_abs: Some(resid.iter().fold(0.0, |m: f64, r| m.max(r.abs()))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::LatentDistribution;

    #[test]
    fn exact_linear_data_has_zero_residuals() {
        let x1: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let x2: Vec<f64> = (0..50).map(|i| ((i * 7) % 11) as f64).collect();
        let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 1.5 - 2.0 * a + 0.25 * b).collect();
        let r = ols(&y, &["a", "b"], &[x1, x2]).unwrap();
        assert!(r.residual_max_abs.unwrap() < 1e-10);
        assert!((r.coefficients["a"] + 2.0).abs() < 1e-10);
        assert!((r.coefficients["b"] - 0.25).abs() < 1e-10);
        assert!((r.coefficients[INTERCEPT] - 1.5).abs() < 1e-10);
    }

    #[test]
    fn duplicated_column_is_named() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y = x.clone();
        match ols(&y, &["x", "copy"], &[x.clone(), x]) {
            Err(Error::RankDeficient(cols)) => assert_eq!(cols, vec!["copy".to_string()]),
            other => panic!("{other:?}"),
        }
        let constant = vec![3.0; 20];
        assert!(matches!(ols(&y, &["c"], &[constant]), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn robust_errors_match_hand_formula() {
        // One regressor: HC1 variance of the slope is n/(n-2) * sum((x-xbar)^2 e^2) / Sxx^2.
        let x = LatentDistribution::standard_normal().sample(400, 1).unwrap();
        let noise = LatentDistribution::standard_normal().sample(400, 2).unwrap();
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, e)| 0.5 + a + e * (1.0 + a.abs())).collect();
        let r = ols(&y, &["x"], &[x.clone()]).unwrap();
        let n = x.len() as f64;
        let xbar = x.iter().sum::<f64>() / n;
        let b = r.coefficients["x"];
        let a = r.coefficients[INTERCEPT];
        let sxx: f64 = x.iter().map(|v| (v - xbar).powi(2)).sum();
        let meat: f64 = x.iter().zip(&y).map(|(v, w)| (v - xbar).powi(2) * (w - a - b * v).powi(2)).sum();
        let se = (meat / (sxx * sxx) * n / (n - 2.0)).sqrt();
        assert!((r.ses["x"] - se).abs() < 1e-10);
    }
}
