//! Local-linear kernel regression over mixed continuous and discrete regressors.
//!
//! Continuous regressors get a Gaussian product kernel, discrete ones the
//! unordered kernel `lambda^(number of mismatches)`. Bandwidths minimise the
//! leave-one-out squared error. With a single continuous regressor and many
//! rows, kernel sums are computed on a linearly binned grid; otherwise every
//! prediction sums over all rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRID_POINTS: usize = 1001;
const BINNED_MIN_ROWS: usize = 500;
const KERNEL_REACH: f64 = 5.0;
const MAX_SWEEPS: usize = 40;
const RESTARTS: usize = 3;
const GOLDEN_TOL: f64 = 2e-3;
const MAX_CONFIGS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Binned when there is one continuous regressor and enough rows.
    #[default]
    Auto,
    Exact,
    Binned,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidths {
    #[default]
    CrossValidated,
    /// `1.06 sd n^(-1/(4+q))` for each of `q` continuous regressors and `lambda = 0.1`.
    RuleOfThumb,
    Fixed { bandwidths: Vec<f64>, lambdas: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NpregOptions {
    pub bandwidths: Bandwidths,
    pub engine: Engine,
}

/// Training data for a fit: outcome plus named continuous and discrete columns.
#[derive(Debug, Clone, PartialEq)]
pub struct NpregData {
    pub y: Vec<f64>,
    pub continuous_names: Vec<String>,
    pub continuous: Vec<Vec<f64>>,
    pub discrete_names: Vec<String>,
    pub discrete: Vec<Vec<f64>>,
}

impl NpregData {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            y: pick(&self.y),
            continuous_names: self.continuous_names.clone(),
            continuous: self.continuous.iter().map(pick).collect(),
            discrete_names: self.discrete_names.clone(),
            discrete: self.discrete.iter().map(pick).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.continuous.is_empty() && self.discrete.is_empty() {
            return Err(Error::Config("kernel regression needs at least one regressor".into()));
        }
        if self.continuous.len() != self.continuous_names.len() || self.discrete.len() != self.discrete_names.len() {
            return Err(Error::Config("every regressor column needs a name".into()));
        }
        for c in self.continuous.iter().chain(&self.discrete) {
            if c.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: c.len() });
            }
        }
        if n < 50 {
            return Err(Error::InsufficientData(format!("kernel regression needs at least 50 rows, got {n}")));
        }
        for (name, c) in self.continuous_names.iter().zip(&self.continuous) {
            if sd(c) == 0.0 {
                return Err(Error::Degenerate(format!("`{name}` has zero variance")));
            }
        }
        Ok(())
    }
}

fn sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

/// Value and continuous-regressor slopes of the local-linear fit at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub value: f64,
    pub slope: Vec<f64>,
}

/// Solves `m x = v` in place for a small dense system; `None` when singular.
fn solve_small(m: &mut [f64], v: &mut [f64], dim: usize) -> Option<()> {
    let scale = (0..dim).map(|i| m[i * dim + i].abs()).fold(0.0, f64::max);
    for col in 0..dim {
        let piv = (col..dim).max_by(|&a, &b| m[a * dim + col].abs().total_cmp(&m[b * dim + col].abs()))?;
        if m[piv * dim + col].abs() <= 1e-12 * scale || scale == 0.0 {
            return None;
        }
        if piv != col {
            for j in 0..dim {
                m.swap(piv * dim + j, col * dim + j);
            }
            v.swap(piv, col);
        }
        for row in col + 1..dim {
            let f = m[row * dim + col] / m[col * dim + col];
            for j in col..dim {
                m[row * dim + j] -= f * m[col * dim + j];
            }
            v[row] -= f * v[col];
        }
    }
    for col in (0..dim).rev() {
        let mut s = v[col];
        for j in col + 1..dim {
            s -= m[col * dim + j] * v[j];
        }
        v[col] = s / m[col * dim + col];
    }
    Some(())
}

/// Local-linear estimate from one-regressor kernel sums; falls back to the
/// local constant when the local design is singular.
fn solve_sums(s0: f64, s1: f64, s2: f64, t0: f64, t1: f64) -> Option<(f64, f64)> {
    if !(s0 > 1e-300) {
        return None;
    }
    let det = s0 * s2 - s1 * s1;
    if det > 1e-10 * s0 * s2 {
        Some(((s2 * t0 - s1 * t1) / det, (s0 * t1 - s1 * t0) / det))
    } else {
        Some((t0 / s0, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Params {
    bandwidths: Vec<f64>,
    lambdas: Vec<f64>,
}

/// Per-cell binned counts and outcome sums on a common grid.
#[derive(Debug, Clone, PartialEq)]
struct Bins {
    lo: f64,
    step: f64,
    /// Discrete values of each observed cell.
    cells: Vec<Vec<f64>>,
    row_cell: Vec<usize>,
    counts: Vec<Vec<f64>>,
    sums: Vec<Vec<f64>>,
}

impl Bins {
    fn new(data: &NpregData) -> Self {
        let x = &data.continuous[0];
        let (lo, hi) = range(x);
        let step = (hi - lo) / (GRID_POINTS - 1) as f64;
        let mut cell_keys: Vec<Vec<f64>> = (0..data.n()).map(|i| data.discrete.iter().map(|c| c[i]).collect()).collect();
        let mut cells: Vec<Vec<f64>> = cell_keys.clone();
        cells.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        cells.dedup();
        let row_cell: Vec<usize> = cell_keys
            .drain(..)
            .map(|k| cells.iter().position(|c| *c == k).expect("cell was collected"))
            .collect();
        let mut counts = vec![vec![0.0; GRID_POINTS]; cells.len()];
        let mut sums = vec![vec![0.0; GRID_POINTS]; cells.len()];
        for i in 0..data.n() {
            let (g, t) = locate(lo, step, x[i]);
            let c = row_cell[i];
            counts[c][g] += 1.0 - t;
            sums[c][g] += (1.0 - t) * data.y[i];
            if t > 0.0 {
                counts[c][g + 1] += t;
                sums[c][g + 1] += t * data.y[i];
            }
        }
        Self { lo, step, cells, row_cell, counts, sums }
    }

    /// The five kernel sums on the grid for every cell.
    fn convolve(&self, h: f64) -> Vec<[Vec<f64>; 5]> {
        let reach = ((KERNEL_REACH * h / self.step).ceil() as usize).min(GRID_POINTS - 1);
        let offsets: Vec<(f64, f64, f64)> = (0..=reach)
            .map(|d| {
                let u = d as f64 * self.step;
                let k = (-0.5 * (u / h) * (u / h)).exp();
                (k, k * u, k * u * u)
            })
            .collect();
        let g_n = GRID_POINTS as isize;
        self.counts
            .iter()
            .zip(&self.sums)
            .map(|(c, s)| {
                let mut out: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; GRID_POINTS]);
                for g in 0..GRID_POINTS {
                    let mut acc = [0.0; 5];
                    let lo = (g as isize - reach as isize).max(0);
                    let hi = (g as isize + reach as isize).min(g_n - 1);
                    for k in lo..=hi {
                        let k = k as usize;
                        if c[k] == 0.0 {
                            continue;
                        }
                        let d = k as isize - g as isize;
                        let (w0, w1, w2) = offsets[d.unsigned_abs()];
                        let w1 = if d < 0 { -w1 } else { w1 };
                        acc[0] += c[k] * w0;
                        acc[1] += c[k] * w1;
                        acc[2] += c[k] * w2;
                        acc[3] += s[k] * w0;
                        acc[4] += s[k] * w1;
                    }
                    for m in 0..5 {
                        out[m][g] = acc[m];
                    }
                }
                out
            })
            .collect()
    }

    /// Kernel sums aggregated across cells for the discrete target `config`.
    fn aggregate(&self, conv: &[[Vec<f64>; 5]], lambdas: &[f64], config: &[f64]) -> [Vec<f64>; 5] {
        let mut out: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; GRID_POINTS]);
        for (cell, sums) in self.cells.iter().zip(conv) {
            let w = discrete_weight(lambdas, cell, config);
            if w == 0.0 {
                continue;
            }
            for m in 0..5 {
                out[m].iter_mut().zip(&sums[m]).for_each(|(o, s)| *o += w * s);
            }
        }
        out
    }
}

fn locate(lo: f64, step: f64, x: f64) -> (usize, f64) {
    let pos = ((x - lo) / step).clamp(0.0, (GRID_POINTS - 1) as f64);
    let g = (pos.floor() as usize).min(GRID_POINTS - 2);
    (g, pos - g as f64)
}

fn interp(v: &[f64], g: usize, t: f64) -> f64 {
    (1.0 - t) * v[g] + t * v[g + 1]
}

fn discrete_weight(lambdas: &[f64], a: &[f64], b: &[f64]) -> f64 {
    lambdas.iter().zip(a.iter().zip(b)).fold(1.0, |w, (l, (x, y))| if x == y { w } else { w * l })
}

/// Fitted value and slope on the grid for one discrete configuration.
#[derive(Debug, Clone, PartialEq)]
struct GridFit {
    config: Vec<f64>,
    value: Vec<f64>,
    slope: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Backend {
    Exact,
    Binned { bins: Bins, fits: Vec<GridFit> },
    /// No continuous regressors: fits depend only on per-cell sums.
    Cells(Vec<Cell>),
}

#[derive(Debug, Clone, PartialEq)]
struct Cell {
    config: Vec<f64>,
    count: f64,
    sum: f64,
}

fn cells_of(data: &NpregData) -> Vec<Cell> {
    let mut cells: Vec<Cell> = vec![];
    for i in 0..data.n() {
        let config: Vec<f64> = data.discrete.iter().map(|c| c[i]).collect();
        match cells.iter_mut().find(|c| c.config == config) {
            Some(c) => {
                c.count += 1.0;
                c.sum += data.y[i];
            }
            None => cells.push(Cell { config, count: 1.0, sum: data.y[i] }),
        }
    }
    cells.sort_by(|a, b| a.config.iter().zip(&b.config).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    cells
}

/// Kernel-weighted mean at `config`, optionally leaving out one row of that cell.
fn cells_value(cells: &[Cell], lambdas: &[f64], config: &[f64], leave_out: Option<f64>) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for c in cells {
        let w = discrete_weight(lambdas, &c.config, config);
        num += w * c.sum;
        den += w * c.count;
    }
    if let Some(y) = leave_out {
        num -= y;
        den -= 1.0;
    }
    (den > 1e-12).then(|| num / den)
}

fn cv_cells(data: &NpregData, cells: &[Cell], p: &Params) -> f64 {
    let mut total = 0.0;
    for i in 0..data.n() {
        let config: Vec<f64> = data.discrete.iter().map(|c| c[i]).collect();
        match cells_value(cells, &p.lambdas, &config, Some(data.y[i])) {
            Some(v) => total += (data.y[i] - v).powi(2),
            None => return f64::INFINITY,
        }
    }
    total / data.n() as f64
}

enum Scorer<'a> {
    Exact,
    Binned(&'a Bins),
    Cells(&'a [Cell]),
}

impl Scorer<'_> {
    fn score(&self, data: &NpregData, p: &Params) -> f64 {
        match self {
            Scorer::Exact => cv_exact(data, p),
            Scorer::Binned(b) => cv_binned(data, b, p),
            Scorer::Cells(c) => cv_cells(data, c, p),
        }
    }
}

/// A trained local-linear regression.
#[derive(Debug, Clone, PartialEq)]
pub struct CefFit {
    data: NpregData,
    pub bandwidths: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Leave-one-out mean squared error at the chosen bandwidths.
    pub cv_objective: Option<f64>,
    levels: Vec<Vec<f64>>,
    backend: Backend,
}

fn use_binned(data: &NpregData, engine: Engine) -> Result<bool> {
    match engine {
        Engine::Exact => Ok(false),
        Engine::Binned if data.continuous.len() != 1 => {
            Err(Error::Config("the binned engine needs exactly one continuous regressor".into()))
        }
        Engine::Binned => Ok(true),
        Engine::Auto => Ok(data.continuous.len() == 1 && data.n() >= BINNED_MIN_ROWS),
    }
}

fn levels_of(data: &NpregData) -> Vec<Vec<f64>> {
    data.discrete
        .iter()
        .map(|c| {
            let mut v: Vec<f64> = c.clone();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        })
        .collect()
}

fn rule_of_thumb(data: &NpregData) -> Params {
    let n = data.n() as f64;
    let rate = -1.0 / (4.0 + data.continuous.len() as f64);
    Params {
        bandwidths: data.continuous.iter().map(|c| 1.06 * sd(c) * n.powf(rate)).collect(),
        lambdas: vec![0.1; data.discrete.len()],
    }
}

/// Exact leave-one-out (when `skip` is set) local-linear fit at a point.
fn exact_fit(data: &NpregData, p: &Params, cont: &[f64], disc: &[f64], skip: Option<usize>) -> Option<LocalFit> {
    let q = data.continuous.len();
    let dim = q + 1;
    let mut m = vec![0.0; dim * dim];
    let mut v = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    z[0] = 1.0;
    for i in 0..data.n() {
        if Some(i) == skip {
            continue;
        }
        let mut w = 1.0;
        for (k, c) in data.discrete.iter().enumerate() {
            if c[i] != disc[k] {
                w *= p.lambdas[k];
            }
        }
        if w == 0.0 {
            continue;
        }
        let mut e = 0.0;
        for j in 0..q {
            let d = data.continuous[j][i] - cont[j];
            z[j + 1] = d;
            e += (d / p.bandwidths[j]).powi(2);
        }
        w *= (-0.5 * e).exp();
        if w == 0.0 {
            continue;
        }
        for a in 0..dim {
            v[a] += w * z[a] * data.y[i];
            for b in a..dim {
                m[a * dim + b] += w * z[a] * z[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            m[a * dim + b] = m[b * dim + a];
        }
    }
    let (s0, t0) = (m[0], v[0]);
    if !(s0 > 1e-300) {
        return None;
    }
    if solve_small(&mut m, &mut v, dim).is_some() {
        Some(LocalFit { value: v[0], slope: v[1..].to_vec() })
    } else {
        Some(LocalFit { value: t0 / s0, slope: vec![0.0; q] })
    }
}

fn row_point(data: &NpregData, i: usize) -> (Vec<f64>, Vec<f64>) {
    (data.continuous.iter().map(|c| c[i]).collect(), data.discrete.iter().map(|c| c[i]).collect())
}

fn cv_exact(data: &NpregData, p: &Params) -> f64 {
    let errs: Vec<f64> = (0..data.n())
        .into_par_iter()
        .map(|i| {
            let (c, d) = row_point(data, i);
            match exact_fit(data, p, &c, &d, Some(i)) {
                Some(f) => (data.y[i] - f.value).powi(2),
                None => f64::INFINITY,
            }
        })
        .collect();
    errs.iter().sum::<f64>() / data.n() as f64
}

fn cv_binned(data: &NpregData, bins: &Bins, p: &Params) -> f64 {
    let conv = bins.convolve(p.bandwidths[0]);
    let per_cell: Vec<[Vec<f64>; 5]> = bins.cells.iter().map(|cell| bins.aggregate(&conv, &p.lambdas, cell)).collect();
    let x = &data.continuous[0];
    let mut total = 0.0;
    for i in 0..data.n() {
        let s = &per_cell[bins.row_cell[i]];
        let (g, t) = locate(bins.lo, bins.step, x[i]);
        let at = |m: usize| interp(&s[m], g, t);
        let fit = solve_sums(at(0) - 1.0, at(1), at(2), at(3) - data.y[i], at(4));
        match fit {
            Some((a, _)) => total += (data.y[i] - a).powi(2),
            None => return f64::INFINITY,
        }
    }
    total / data.n() as f64
}

fn golden<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd { (c, fc) } else { (d, fd) }
}

/// Coordinate descent over log bandwidths and discrete lambdas.
fn cross_validate(data: &NpregData, scorer: &Scorer) -> (Params, f64) {
    let q = data.continuous.len();
    let bins = match scorer {
        Scorer::Binned(b) => Some(*b),
        _ => None,
    };
    let objective = |theta: &[f64]| {
        let p = Params { bandwidths: theta[..q].iter().map(|v| v.exp()).collect(), lambdas: theta[q..].to_vec() };
        scorer.score(data, &p)
    };
    let bounds: Vec<(f64, f64)> = data
        .continuous
        .iter()
        .map(|c| {
            let (lo, hi) = range(c);
            let width = hi - lo;
            let min = (0.005 * width).max(bins.map_or(0.0, |b| 3.0 * b.step));
            (min.ln(), (3.0 * width).ln())
        })
        .chain(std::iter::repeat_n((0.0, 1.0), data.discrete.len()))
        .collect();
    let rot = rule_of_thumb(data);
    let scales = [1.0, 0.25, 4.0];
    let lambda_starts = [0.2, 0.05, 0.6];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in 0..RESTARTS {
        let mut theta: Vec<f64> = rot
            .bandwidths
            .iter()
            .map(|h| (h * scales[r]).ln())
            .chain(std::iter::repeat_n(lambda_starts[r], data.discrete.len()))
            .collect();
        for (t, (lo, hi)) in theta.iter_mut().zip(&bounds) {
            *t = t.clamp(*lo, *hi);
        }
        let mut current = objective(&theta);
        for sweep in 0..MAX_SWEEPS {
            let before = current;
            for j in 0..theta.len() {
                let (lo, hi) = bounds[j];
                let (a, b) = if j < q {
                    ((theta[j] - 1.5).max(lo), (theta[j] + 1.5).min(hi))
                } else if sweep == 0 {
                    (lo, hi)
                } else {
                    ((theta[j] - 0.25).max(lo), (theta[j] + 0.25).min(hi))
                };
                let mut trial = theta.clone();
                let (arg, val) = golden(
                    |v| {
                        trial[j] = v;
                        objective(&trial)
                    },
                    a,
                    b,
                    GOLDEN_TOL,
                );
                if val < current {
                    theta[j] = arg;
                    current = val;
                }
            }
            if before - current <= 1e-9 * before.abs() {
                break;
            }
        }
        if best.as_ref().is_none_or(|(_, v)| current < *v) {
            best = Some((theta, current));
        }
    }
    let (theta, value) = best.expect("at least one restart");
    (Params { bandwidths: theta[..q].iter().map(|v| v.exp()).collect(), lambdas: theta[q..].to_vec() }, value)
}

fn configurations(levels: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let total: usize = levels.iter().map(Vec::len).product();
    if total > MAX_CONFIGS {
        return Err(Error::Config(format!("{total} discrete cells exceed the binned engine's limit of {MAX_CONFIGS}")));
    }
    let mut out = vec![vec![]];
    for l in levels {
        out = out.into_iter().flat_map(|prefix: Vec<f64>| l.iter().map(move |v| [prefix.clone(), vec![*v]].concat())).collect();
    }
    Ok(out)
}

fn grid_fits(bins: &Bins, p: &Params, levels: &[Vec<f64>]) -> Result<Vec<GridFit>> {
    let conv = bins.convolve(p.bandwidths[0]);
    configurations(levels)?
        .into_iter()
        .map(|config| {
            let s = bins.aggregate(&conv, &p.lambdas, &config);
            let mut value = vec![f64::NAN; GRID_POINTS];
            let mut slope = vec![f64::NAN; GRID_POINTS];
            for g in 0..GRID_POINTS {
                if let Some((a, b)) = solve_sums(s[0][g], s[1][g], s[2][g], s[3][g], s[4][g]) {
                    value[g] = a;
                    slope[g] = b;
                }
            }
            Ok(GridFit { config, value, slope })
        })
        .collect()
}

/// Leave-one-out mean squared error at given bandwidths and lambdas.
pub fn cv_score(data: &NpregData, bandwidths: &[f64], lambdas: &[f64], engine: Engine) -> Result<f64> {
    data.validate()?;
    let p = Params { bandwidths: bandwidths.to_vec(), lambdas: lambdas.to_vec() };
    if p.bandwidths.len() != data.continuous.len() || p.lambdas.len() != data.discrete.len() {
        return Err(Error::Config("one bandwidth per continuous and one lambda per discrete regressor".into()));
    }
    if data.continuous.is_empty() {
        return Ok(cv_cells(data, &cells_of(data), &p));
    }
    Ok(if use_binned(data, engine)? { cv_binned(data, &Bins::new(data), &p) } else { cv_exact(data, &p) })
}

impl CefFit {
    pub fn fit(data: NpregData, opts: &NpregOptions) -> Result<Self> {
        data.validate()?;
        let binned = use_binned(&data, opts.engine)?;
        let bins = binned.then(|| Bins::new(&data));
        let cells = data.continuous.is_empty().then(|| cells_of(&data));
        let scorer = match (&bins, &cells) {
            (Some(b), _) => Scorer::Binned(b),
            (None, Some(c)) => Scorer::Cells(c),
            (None, None) => Scorer::Exact,
        };
        let (params, cv) = match &opts.bandwidths {
            Bandwidths::CrossValidated => {
                let (p, v) = cross_validate(&data, &scorer);
                (p, Some(v))
            }
            Bandwidths::RuleOfThumb => (rule_of_thumb(&data), None),
            Bandwidths::Fixed { bandwidths, lambdas } => {
                if bandwidths.len() != data.continuous.len() || lambdas.len() != data.discrete.len() {
                    return Err(Error::Config("one bandwidth per continuous and one lambda per discrete regressor".into()));
                }
                if bandwidths.iter().any(|h| !(*h > 0.0)) || lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
                    return Err(Error::Config("bandwidths must be positive and lambdas in [0, 1]".into()));
                }
                (Params { bandwidths: bandwidths.clone(), lambdas: lambdas.clone() }, None)
            }
        };
        let levels = levels_of(&data);
        let backend = match (bins, cells) {
            (Some(bins), _) => {
                let fits = grid_fits(&bins, &params, &levels)?;
                Backend::Binned { bins, fits }
            }
            (None, Some(cells)) => Backend::Cells(cells),
            (None, None) => Backend::Exact,
        };
        Ok(Self { data, bandwidths: params.bandwidths, lambdas: params.lambdas, cv_objective: cv, levels, backend })
    }

    /// Same bandwidths and engine, new training rows.
    pub fn refit(&self, data: NpregData) -> Result<Self> {
        let engine = match self.backend {
            Backend::Exact | Backend::Cells(_) => Engine::Exact,
            Backend::Binned { .. } => Engine::Binned,
        };
        let opts = NpregOptions {
            bandwidths: Bandwidths::Fixed { bandwidths: self.bandwidths.clone(), lambdas: self.lambdas.clone() },
            engine,
        };
        Self::fit(data, &opts)
    }

    pub fn data(&self) -> &NpregData {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn is_binned(&self) -> bool {
        matches!(self.backend, Backend::Binned { .. })
    }

    /// Observed levels of a discrete regressor.
    pub fn levels(&self, discrete: usize) -> &[f64] {
        &self.levels[discrete]
    }

    pub fn continuous_index(&self, name: &str) -> Result<usize> {
        self.data.continuous_names.iter().position(|n| n == name).ok_or_else(|| Error::UnknownColumn(name.into()))
    }

    pub fn discrete_index(&self, name: &str) -> Result<usize> {
        self.data.discrete_names.iter().position(|n| n == name).ok_or_else(|| Error::UnknownColumn(name.into()))
    }

    pub fn predict(&self, cont: &[f64], disc: &[f64]) -> Result<LocalFit> {
        if cont.len() != self.data.continuous.len() || disc.len() != self.data.discrete.len() {
            return Err(Error::DimensionMismatch { expected: self.data.continuous.len() + self.data.discrete.len(), got: cont.len() + disc.len() });
        }
        let params = Params { bandwidths: self.bandwidths.clone(), lambdas: self.lambdas.clone() };
        match &self.backend {
            Backend::Exact => exact_fit(&self.data, &params, cont, disc, None)
                .ok_or_else(|| Error::numerical("npreg_predict", "no kernel weight at the evaluation point")),
            Backend::Cells(cells) => cells_value(cells, &self.lambdas, disc, None)
                .map(|value| LocalFit { value, slope: vec![] })
                .ok_or_else(|| Error::numerical("npreg_predict", "no kernel weight at the evaluation point")),
            Backend::Binned { bins, fits } => {
                let fit = fits
                    .iter()
                    .find(|f| f.config == disc)
                    .ok_or_else(|| Error::OutOfRange(format!("discrete values {disc:?} are not observed levels")))?;
                let (g, t) = locate(bins.lo, bins.step, cont[0]);
                let value = interp(&fit.value, g, t);
                let slope = interp(&fit.slope, g, t);
                if !value.is_finite() {
                    return Err(Error::numerical("npreg_predict", "no kernel weight at the evaluation point"));
                }
                // Linear continuation outside the grid.
                let edge = bins.lo + (g as f64 + t) * bins.step;
                Ok(LocalFit { value: value + slope * (cont[0] - edge), slope: vec![slope] })
            }
        }
    }

    /// Fit at training row `i`, optionally overriding one discrete value.
    fn predict_row(&self, i: usize, set: Option<(usize, f64)>) -> Result<LocalFit> {
        let (c, mut d) = row_point(&self.data, i);
        if let Some((k, v)) = set {
            d[k] = v;
        }
        self.predict(&c, &d)
    }
}

/// Mean over rows of the fitted slope in continuous regressor `var`.
pub fn avg_marginal_effect(fit: &CefFit, var: &str) -> Result<f64> {
    let j = fit.continuous_index(var)?;
    let slopes: Vec<f64> = (0..fit.n()).into_par_iter().map(|i| fit.predict_row(i, None).map(|f| f.slope[j])).collect::<Result<_>>()?;
    Ok(slopes.iter().sum::<f64>() / fit.n() as f64)
}

fn check_level(fit: &CefFit, k: usize, v: f64) -> Result<()> {
    if fit.levels(k).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("`{}` has no rows at level {v}", fit.data.discrete_names[k])))
    }
}

/// Mean over rows of the fitted difference between levels `a` and `b` of `var`.
pub fn avg_discrete_contrast(fit: &CefFit, var: &str, a: f64, b: f64) -> Result<f64> {
    let k = fit.discrete_index(var)?;
    check_level(fit, k, a)?;
    check_level(fit, k, b)?;
    if a == b {
        return Ok(0.0);
    }
    let diffs: Vec<f64> = (0..fit.n())
        .into_par_iter()
        .map(|i| Ok(fit.predict_row(i, Some((k, a)))?.value - fit.predict_row(i, Some((k, b)))?.value))
        .collect::<Result<_>>()?;
    Ok(diffs.iter().sum::<f64>() / fit.n() as f64)
}

pub const SLOPE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalRatio {
    pub value: f64,
    pub dropped_rows: usize,
    pub n: usize,
    /// Set when more than 1% of rows had a slope below the floor.
    pub warning: Option<String>,
}

fn contrast_over_slope<U>(fit: &CefFit, contrast_var: &str, a: f64, b: f64, slope_var: &str, unit: U) -> Result<LocalRatio>
where
    U: Fn(usize) -> f64 + Sync,
{
    let k = fit.discrete_index(contrast_var)?;
    let j = fit.continuous_index(slope_var)?;
    check_level(fit, k, a)?;
    check_level(fit, k, b)?;
    let terms: Vec<Option<f64>> = (0..fit.n())
        .into_par_iter()
        .map(|i| {
            let slope = fit.predict_row(i, None)?.slope[j] * unit(i);
            if slope.abs() < SLOPE_FLOOR {
                return Ok(None);
            }
            let contrast = fit.predict_row(i, Some((k, a)))?.value - fit.predict_row(i, Some((k, b)))?.value;
            Ok(Some(contrast / slope))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = terms.iter().flatten().copied().collect();
    let dropped = fit.n() - kept.len();
    if kept.is_empty() {
        return Err(Error::numerical("local_ratio", "every row has a local slope below the floor"));
    }
    let warning = (dropped as f64 > 0.01 * fit.n() as f64)
        .then(|| format!("{dropped} of {} rows dropped for near-zero slope", fit.n()));
    Ok(LocalRatio { value: kept.iter().sum::<f64>() / kept.len() as f64, dropped_rows: dropped, n: fit.n(), warning })
}

/// Mean over rows of the local contrast divided by the local slope.
pub fn local_ratio(fit: &CefFit, contrast_var: &str, a: f64, b: f64, slope_var: &str) -> Result<LocalRatio> {
    contrast_over_slope(fit, contrast_var, a, b, slope_var, |_| 1.0)
}

/// [`local_ratio`] with the slope taken per unit of `ln(slope_var)`, that is
/// `x * dm/dx` at each row. The slope variable must be positive.
pub fn local_ratio_log_slope(fit: &CefFit, contrast_var: &str, a: f64, b: f64, slope_var: &str) -> Result<LocalRatio> {
    let x = &fit.data().continuous[fit.continuous_index(slope_var)?];
    if x.iter().any(|v| *v <= 0.0) {
        return Err(Error::Domain(format!("`{slope_var}` must be positive to take slopes in logs")));
    }
    contrast_over_slope(fit, contrast_var, a, b, slope_var, |i| x[i])
}

/// Mean over rows of the ratio of two fitted slopes, dropping rows whose
/// denominator slope is below the floor.
pub fn local_slope_ratio(fit: &CefFit, numerator: &str, denominator: &str) -> Result<LocalRatio> {
    let (a, b) = (fit.continuous_index(numerator)?, fit.continuous_index(denominator)?);
    let terms: Vec<Option<f64>> = (0..fit.n())
        .into_par_iter()
        .map(|i| {
            let s = fit.predict_row(i, None)?.slope;
            Ok((s[b].abs() >= SLOPE_FLOOR).then(|| s[a] / s[b]))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = terms.iter().flatten().copied().collect();
    let dropped = fit.n() - kept.len();
    if kept.is_empty() {
        return Err(Error::numerical("local_slope_ratio", "every row has a local slope below the floor"));
    }
    let warning = (dropped as f64 > 0.01 * fit.n() as f64)
        .then(|| format!("{dropped} of {} rows dropped for near-zero slope", fit.n()));
    Ok(LocalRatio { value: kept.iter().sum::<f64>() / kept.len() as f64, dropped_rows: dropped, n: fit.n(), warning })
}
