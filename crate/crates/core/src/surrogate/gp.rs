//! Gaussian-process regression with a squared-exponential kernel.
//!
//! Inputs are standardized per column. The prior mean is the target mean
//! and the signal variance is the target variance, so the kernel matrix is
//! `σ_f² (R + ν I)` with `R` the unit-variance correlation matrix and `ν`
//! the relative nugget. The posterior mean only needs `R + ν I`, which is
//! why one factorization serves every target column with the same inputs.

use std::io::{Read, Write};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{column_standardization, is_constant, mean_sd};
use crate::binio;
use crate::error::{arg_err, Error, Result};
use crate::linalg;
use crate::Matrix;

const LENGTHSCALE_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
const MEDIAN_SAMPLE: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    /// Nugget as a fraction of the signal variance.
    pub nugget: f64,
    /// Fixed lengthscale in standardized input units; `None` uses the
    /// median pairwise distance.
    pub lengthscale: Option<f64>,
    /// Pick the lengthscale from {¼, ½, 1, 2, 4} × default by marginal
    /// likelihood, separately for each target column.
    pub refine: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { nugget: 1e-6, lengthscale: None, refine: false }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nugget > 0.0 && self.nugget < 1.0) {
            return arg_err(format!("gp nugget {} must lie in (0, 1)", self.nugget));
        }
        if let Some(l) = self.lengthscale {
            if !(l > 0.0 && l.is_finite()) {
                return arg_err(format!("gp lengthscale {l} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpModel {
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    /// Standardized training inputs, row-major.
    points: Vec<f64>,
    lengthscale: f64,
    mean: f64,
    /// `(R + ν I)⁻¹ (y − mean)`.
    weights: Vec<f64>,
}

/// Fit one model per target column, all sharing `inputs`.
pub(crate) fn fit_columns(inputs: &Matrix, columns: &[&[f64]], config: &GpConfig) -> Result<Vec<GpModel>> {
    let n = inputs.nrows();
    let d = inputs.ncols();
    for c in columns {
        if c.len() != n {
            return arg_err(format!("{n} input rows but a target column of length {}", c.len()));
        }
    }
    check_distinct_rows(inputs)?;
    let (input_mean, input_scale) = column_standardization(inputs);
    let mut points = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            points[i * d + j] = (inputs[(i, j)] - input_mean[j]) / input_scale[j];
        }
    }
    let base = match config.lengthscale {
        Some(l) => l,
        None => median_pairwise_distance(&points, n, d),
    };
    let candidates: Vec<f64> = if config.refine && config.lengthscale.is_none() {
        LENGTHSCALE_MULTIPLIERS.iter().map(|m| m * base).collect()
    } else {
        vec![base]
    };

    let template = GpModel { input_mean, input_scale, points, lengthscale: base, mean: 0.0, weights: vec![0.0; n] };
    // Per column: best (log marginal likelihood, lengthscale, weights) so far.
    // Candidates are visited one at a time so only one factor is alive.
    let mut best: Vec<Option<(f64, f64, Vec<f64>)>> = vec![None; columns.len()];
    if columns.iter().any(|c| !is_constant(c)) {
        let mut any_factor = false;
        for &l in &candidates {
            let r = correlation_matrix(&template.points, n, d, l, config.nugget);
            let Ok(chol) = linalg::cholesky(r) else { continue };
            any_factor = true;
            let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let scored = columns
                .par_iter()
                .map(|y| {
                    if is_constant(y) {
                        return Ok(None);
                    }
                    let (mean, sd) = mean_sd(y);
                    let var = sd * sd;
                    let centered = DVector::from_iterator(n, y.iter().map(|v| v - mean));
                    let half = chol
                        .solve_lower_triangular(&centered)
                        .ok_or_else(|| Error::Numerical("singular kernel factor".into()))?;
                    let lml = -0.5 * half.norm_squared() / var - 0.5 * log_det - 0.5 * n as f64 * var.ln();
                    let w = chol
                        .tr_solve_lower_triangular(&half)
                        .ok_or_else(|| Error::Numerical("singular kernel factor".into()))?;
                    Ok(Some((lml, w.as_slice().to_vec())))
                })
                .collect::<Result<Vec<_>>>()?;
            for (slot, s) in best.iter_mut().zip(scored) {
                if let Some((lml, w)) = s {
                    if slot.as_ref().is_none_or(|(b, _, _)| lml > *b) {
                        *slot = Some((lml, l, w));
                    }
                }
            }
        }
        if !any_factor {
            return Err(Error::Numerical(
                "kernel matrix is not positive definite for any candidate lengthscale".into(),
            ));
        }
    }

    columns
        .iter()
        .zip(best)
        .map(|(y, b)| match b {
            None => Ok(GpModel { mean: y[0], ..template.clone() }),
            Some((_, l, w)) => {
                if !w.iter().all(|v| v.is_finite()) {
                    return Err(Error::Numerical("non-finite GP weights".into()));
                }
                Ok(GpModel { mean: mean_sd(y).0, lengthscale: l, weights: w, ..template.clone() })
            }
        })
        .collect()
}

fn check_distinct_rows(inputs: &Matrix) -> Result<()> {
    let n = inputs.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let cmp = |a: usize, b: usize| {
        inputs
            .row(a)
            .iter()
            .zip(inputs.row(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    order.sort_by(|&a, &b| cmp(a, b));
    for w in order.windows(2) {
        if cmp(w[0], w[1]).is_eq() {
            return arg_err(format!("GP training inputs repeat: rows {} and {}", w[0].min(w[1]), w[0].max(w[1])));
        }
    }
    Ok(())
}

/// Median pairwise distance over at most `MEDIAN_SAMPLE` evenly strided rows.
fn median_pairwise_distance(points: &[f64], n: usize, d: usize) -> f64 {
    let rows: Vec<usize> =
        if n > MEDIAN_SAMPLE { (0..MEDIAN_SAMPLE).map(|i| i * n / MEDIAN_SAMPLE).collect() } else { (0..n).collect() };
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            dists.push(sq_dist(&points[i * d..(i + 1) * d], &points[j * d..(j + 1) * d]).sqrt());
        }
    }
    let m = dists.len();
    let upper = *dists.select_nth_unstable_by(m / 2, f64::total_cmp).1;
    let median = if m % 2 == 1 {
        upper
    } else {
        let lower = dists[..m / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lower triangle of `R + ν I`.
fn correlation_matrix(points: &[f64], n: usize, d: usize, lengthscale: f64, nugget: f64) -> Matrix {
    let inv = -0.5 / (lengthscale * lengthscale);
    let mut r = Matrix::zeros(n, n);
    r.as_mut_slice().par_chunks_mut(n).enumerate().for_each(|(j, col)| {
        let pj = &points[j * d..(j + 1) * d];
        col[j] = 1.0 + nugget;
        for i in j + 1..n {
            col[i] = (inv * sq_dist(&points[i * d..(i + 1) * d], pj)).exp();
        }
    });
    r
}

impl GpModel {
    pub fn dim(&self) -> usize {
        self.input_mean.len()
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Dual weights `(R + ν I)⁻¹ (y − mean)`. The training residual at row
    /// `i` is exactly `ν · weights[i]`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn predict(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let z: Vec<f64> =
            x.iter().zip(self.input_mean.iter().zip(&self.input_scale)).map(|(v, (m, s))| (v - m) / s).collect();
        let inv = -0.5 / (self.lengthscale * self.lengthscale);
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            if *w != 0.0 {
                acc += w * (inv * sq_dist(&self.points[i * d..(i + 1) * d], &z)).exp();
            }
        }
        self.mean + acc
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_vec(w, &self.input_mean)?;
        binio::write_vec(w, &self.input_scale)?;
        binio::write_vec(w, &self.points)?;
        binio::write_f64(w, self.lengthscale)?;
        binio::write_f64(w, self.mean)?;
        binio::write_vec(w, &self.weights)
    }

    pub(crate) fn read_from<R: Read>(r: &mut R, dim: usize) -> Result<Self> {
        let m = GpModel {
            input_mean: binio::read_vec(r)?,
            input_scale: binio::read_vec(r)?,
            points: binio::read_vec(r)?,
            lengthscale: binio::read_f64(r)?,
            mean: binio::read_f64(r)?,
            weights: binio::read_vec(r)?,
        };
        if m.input_mean.len() != dim
            || m.input_scale.len() != dim
            || m.points.len() != m.weights.len() * dim
            || !(m.lengthscale > 0.0)
        {
            return Err(Error::Format("inconsistent GP section".into()));
        }
        Ok(m)
    }
}
