//! Scalar regression models used to learn factor-matrix columns.
//!
//! Three kinds share one interface: a Gaussian process with a
//! squared-exponential kernel, a bagged regression forest, and a small
//! one-hidden-layer network. All fits are deterministic given the seed.

mod forest;
mod gp;
mod nn;

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::design::RngSeed;
use crate::error::{arg_err, Error, Result};
use crate::Matrix;

pub use forest::{Forest, ForestConfig};
pub use gp::{GpConfig, GpModel};
pub use nn::{Network, NnConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Gp,
    Rf,
    Nn,
}

impl SurrogateKind {
    pub fn name(self) -> &'static str {
        match self {
            SurrogateKind::Gp => "gp",
            SurrogateKind::Rf => "rf",
            SurrogateKind::Nn => "nn",
        }
    }

    fn tag(self) -> u64 {
        match self {
            SurrogateKind::Gp => 1,
            SurrogateKind::Rf => 2,
            SurrogateKind::Nn => 3,
        }
    }
}

impl std::fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gp" => Ok(SurrogateKind::Gp),
            "rf" => Ok(SurrogateKind::Rf),
            "nn" => Ok(SurrogateKind::Nn),
            other => arg_err(format!("unknown surrogate kind {other:?} (expected gp, rf or nn)")),
        }
    }
}

/// Hyperparameters for every kind; only the section matching the fitted
/// kind is consulted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub gp: GpConfig,
    pub rf: ForestConfig,
    pub nn: NnConfig,
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        self.gp.validate()?;
        self.rf.validate()?;
        self.nn.validate()
    }
}

/// Inputs (`n × d`) paired with one scalar target per row.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    inputs: Matrix,
    targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new(inputs: Matrix, targets: Vec<f64>) -> Result<Self> {
        if inputs.nrows() != targets.len() {
            return arg_err(format!("{} input rows but {} targets", inputs.nrows(), targets.len()));
        }
        if inputs.nrows() < 2 {
            return arg_err("a training set needs at least 2 rows");
        }
        if inputs.ncols() == 0 {
            return arg_err("training inputs need at least one column");
        }
        if !inputs.iter().all(|v| v.is_finite()) || !targets.iter().all(|v| v.is_finite()) {
            return arg_err("training data contain non-finite values");
        }
        Ok(TrainingSet { inputs, targets })
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }
}

/// A trained regression model.
#[derive(Clone, Debug, PartialEq)]
pub enum Surrogate {
    Gp(GpModel),
    Rf(Forest),
    Nn(Network),
}

/// Train one surrogate of the given kind.
pub fn fit(kind: SurrogateKind, ts: &TrainingSet, config: &SurrogateConfig, seed: RngSeed) -> Result<Surrogate> {
    config.validate()?;
    Ok(match kind {
        SurrogateKind::Gp => Surrogate::Gp(gp::fit_columns(ts.inputs(), &[ts.targets()], &config.gp)?.remove(0)),
        SurrogateKind::Rf => Surrogate::Rf(Forest::fit(ts, &config.rf, seed)?),
        SurrogateKind::Nn => Surrogate::Nn(Network::fit(ts, &config.nn, seed)?),
    })
}

/// One surrogate per column of `factor`, each trained on `inputs`.
///
/// Column `j` uses seed `seed.split(j)`. Gaussian-process columns share the
/// kernel factorizations, which depend only on the inputs.
pub fn fit_mode_surrogates(
    inputs: &Matrix,
    factor: &Matrix,
    kind: SurrogateKind,
    config: &SurrogateConfig,
    seed: RngSeed,
) -> Result<Vec<Surrogate>> {
    if inputs.nrows() != factor.nrows() {
        return arg_err(format!("{} input rows but the factor matrix has {} rows", inputs.nrows(), factor.nrows()));
    }
    config.validate()?;
    let columns: Vec<Vec<f64>> = factor.column_iter().map(|c| c.iter().copied().collect()).collect();
    let sets = columns.iter().map(|c| TrainingSet::new(inputs.clone(), c.clone())).collect::<Result<Vec<_>>>()?;
    match kind {
        SurrogateKind::Gp => {
            let refs: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
            Ok(gp::fit_columns(inputs, &refs, &config.gp)?.into_iter().map(Surrogate::Gp).collect())
        }
        _ => sets.par_iter().enumerate().map(|(j, ts)| fit(kind, ts, config, seed.split(j as u64))).collect(),
    }
}

impl Surrogate {
    pub fn kind(&self) -> SurrogateKind {
        match self {
            Surrogate::Gp(_) => SurrogateKind::Gp,
            Surrogate::Rf(_) => SurrogateKind::Rf,
            Surrogate::Nn(_) => SurrogateKind::Nn,
        }
    }

    /// Input dimension.
    pub fn dim(&self) -> usize {
        match self {
            Surrogate::Gp(m) => m.dim(),
            Surrogate::Rf(m) => m.dim(),
            Surrogate::Nn(m) => m.dim(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return arg_err(format!("{} surrogate expects {} inputs, got {}", self.kind(), self.dim(), x.len()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return arg_err("prediction input contains non-finite values");
        }
        Ok(match self {
            Surrogate::Gp(m) => m.predict(x),
            Surrogate::Rf(m) => m.predict(x),
            Surrogate::Nn(m) => m.predict(x),
        })
    }

    /// Predictions for every row of `points`.
    pub fn predict_rows(&self, points: &Matrix) -> Result<Vec<f64>> {
        let mut x = vec![0.0; points.ncols()];
        (0..points.nrows())
            .map(|i| {
                x.iter_mut().zip(points.row(i).iter()).for_each(|(d, s)| *d = *s);
                self.predict(&x)
            })
            .collect()
    }

    /// Kind tag, input dimension, then the kind-specific arrays.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_u64(w, self.kind().tag())?;
        binio::write_u64(w, self.dim() as u64)?;
        match self {
            Surrogate::Gp(m) => m.write_to(w),
            Surrogate::Rf(m) => m.write_to(w),
            Surrogate::Nn(m) => m.write_to(w),
        }
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let tag = binio::read_u64(r)?;
        let dim = binio::read_usize(r, 1 << 20, "surrogate input dimension")?;
        let s = match tag {
            1 => Surrogate::Gp(GpModel::read_from(r, dim)?),
            2 => Surrogate::Rf(Forest::read_from(r, dim)?),
            3 => Surrogate::Nn(Network::read_from(r, dim)?),
            other => return Err(Error::Format(format!("unknown surrogate tag {other}"))),
        };
        Ok(s)
    }
}

/// Per-column mean and scale used to standardize inputs. Constant columns
/// get unit scale.
pub(crate) fn column_standardization(inputs: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = inputs.nrows() as f64;
    inputs
        .column_iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 })
        })
        .unzip()
}

/// Mean and population standard deviation.
pub(crate) fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// True when the spread of `v` is negligible next to its magnitude.
pub(crate) fn is_constant(v: &[f64]) -> bool {
    let (_, sd) = mean_sd(v);
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    sd <= 1e-12 * scale || sd == 0.0
}
