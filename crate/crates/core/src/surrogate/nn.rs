//! One-hidden-layer network: logistic hidden units, linear output.
//!
//! Trained by full-batch gradient descent on half the mean squared error.
//! A step that raises the loss is retried at half the step size; an accepted
//! step grows the step size by 5%.

use std::io::{Read, Write};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{column_standardization, is_constant, mean_sd, TrainingSet};
use crate::binio;
use crate::design::RngSeed;
use crate::error::{arg_err, Error, Result};

const STEP_GROWTH: f64 = 1.05;
const MIN_STEP: f64 = 1e-30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    /// Stop once an accepted step changes the loss by less than this
    /// fraction.
    pub tolerance: f64,
    pub initial_step: f64,
}

impl Default for NnConfig {
    fn default() -> Self {
        NnConfig { hidden: 3, max_epochs: 10_000, tolerance: 1e-8, initial_step: 1.0 }
    }
}

impl NnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return arg_err("nn hidden must be at least 1");
        }
        if !(self.tolerance >= 0.0) {
            return arg_err("nn tolerance must be non-negative");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return arg_err("nn initial_step must be positive");
        }
        Ok(())
    }
}

/// Parameters are stored flat: hidden weights (`h × d`, row-major), hidden
/// biases (`h`), output weights (`h`), output bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    hidden: usize,
    params: Vec<f64>,
}

fn logistic(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

impl Network {
    pub fn fit(ts: &TrainingSet, config: &NnConfig, seed: RngSeed) -> Result<Network> {
        config.validate()?;
        let d = ts.dim();
        let h = config.hidden;
        let (input_mean, input_scale) = column_standardization(ts.inputs());
        let mut net = Network { input_mean, input_scale, hidden: h, params: vec![0.0; h * d + 2 * h + 1] };
        let (y_mean, y_sd) = mean_sd(ts.targets());
        if is_constant(ts.targets()) {
            net.params[h * d + 2 * h] = ts.targets()[0];
            return Ok(net);
        }
        let mut rng = seed.rng();
        for p in &mut net.params[..h * d + h] {
            *p = StandardNormal.sample(&mut rng);
        }
        for k in 0..h {
            let g: f64 = StandardNormal.sample(&mut rng);
            net.params[h * d + h + k] = g * y_sd;
        }
        net.params[h * d + 2 * h] = y_mean;

        let z = net.standardized(ts);
        let y = ts.targets();
        let (mut loss, mut grad) = net.loss_gradient_std(&z, y);
        if !loss.is_finite() {
            return Err(Error::Training("initial network loss is not finite".into()));
        }
        let mut step = config.initial_step;
        let mut trial = net.params.clone();
        for _ in 0..config.max_epochs {
            if loss == 0.0 || step < MIN_STEP {
                break;
            }
            for ((t, p), g) in trial.iter_mut().zip(&net.params).zip(&grad) {
                *t = p - step * g;
            }
            let candidate = Network { params: std::mem::take(&mut trial), ..net.clone() };
            let (new_loss, new_grad) = candidate.loss_gradient_std(&z, y);
            if new_loss.is_finite() && new_loss <= loss {
                let change = (loss - new_loss) / loss;
                trial = std::mem::replace(&mut net.params, candidate.params);
                loss = new_loss;
                grad = new_grad;
                step *= STEP_GROWTH;
                if change < config.tolerance {
                    break;
                }
            } else {
                trial = candidate.params;
                step *= 0.5;
            }
        }
        if !net.params.iter().all(|v| v.is_finite()) {
            return Err(Error::Training("network weights diverged".into()));
        }
        Ok(net)
    }

    pub fn dim(&self) -> usize {
        self.input_mean.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replace the flat parameter vector (same layout as [`params`](Self::params)).
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return arg_err(format!("expected {} parameters, got {}", self.params.len(), params.len()));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Training loss `Σ (f(x_i) − y_i)² / (2n)` and its gradient with
    /// respect to [`params`](Self::params).
    pub fn loss_gradient(&self, ts: &TrainingSet) -> Result<(f64, Vec<f64>)> {
        if ts.dim() != self.dim() {
            return arg_err(format!("network expects {} inputs, got {}", self.dim(), ts.dim()));
        }
        Ok(self.loss_gradient_std(&self.standardized(ts), ts.targets()))
    }

    fn standardized(&self, ts: &TrainingSet) -> Vec<f64> {
        let d = self.dim();
        let mut z = vec![0.0; ts.len() * d];
        for i in 0..ts.len() {
            for j in 0..d {
                z[i * d + j] = (ts.inputs()[(i, j)] - self.input_mean[j]) / self.input_scale[j];
            }
        }
        z
    }

    fn forward(&self, z: &[f64], hidden: &mut [f64]) -> f64 {
        let d = self.dim();
        let h = self.hidden;
        let p = &self.params;
        let mut out = p[h * d + 2 * h];
        for k in 0..h {
            let a = p[h * d + k] + (0..d).map(|j| p[k * d + j] * z[j]).sum::<f64>();
            hidden[k] = logistic(a);
            out += p[h * d + h + k] * hidden[k];
        }
        out
    }

    fn loss_gradient_std(&self, z: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dim();
        let h = self.hidden;
        let n = y.len();
        let mut grad = vec![0.0; self.params.len()];
        let mut hid = vec![0.0; h];
        let mut loss = 0.0;
        for (i, &target) in y.iter().enumerate() {
            let zi = &z[i * d..(i + 1) * d];
            let r = self.forward(zi, &mut hid) - target;
            loss += r * r;
            let e = r / n as f64;
            grad[h * d + 2 * h] += e;
            for k in 0..h {
                grad[h * d + h + k] += e * hid[k];
                let delta = e * self.params[h * d + h + k] * hid[k] * (1.0 - hid[k]);
                grad[h * d + k] += delta;
                for j in 0..d {
                    grad[k * d + j] += delta * zi[j];
                }
            }
        }
        (loss / (2.0 * n as f64), grad)
    }

    pub(crate) fn predict(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> =
            x.iter().zip(self.input_mean.iter().zip(&self.input_scale)).map(|(v, (m, s))| (v - m) / s).collect();
        let mut hid = vec![0.0; self.hidden];
        self.forward(&z, &mut hid)
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_u64(w, self.hidden as u64)?;
        binio::write_vec(w, &self.input_mean)?;
        binio::write_vec(w, &self.input_scale)?;
        binio::write_vec(w, &self.params)
    }

    pub(crate) fn read_from<R: Read>(r: &mut R, dim: usize) -> Result<Self> {
        let hidden = binio::read_usize(r, 1 << 20, "hidden unit count")?;
        let net = Network {
            hidden,
            input_mean: binio::read_vec(r)?,
            input_scale: binio::read_vec(r)?,
            params: binio::read_vec(r)?,
        };
        if net.input_mean.len() != dim
            || net.input_scale.len() != dim
            || net.params.len() != hidden * dim + 2 * hidden + 1
        {
            return Err(Error::Format("inconsistent network section".into()));
        }
        Ok(net)
    }
}
