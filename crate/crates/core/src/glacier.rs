//! Exact periodic shallow-ice solution used as a ground-truth simulator.
//!
//! Thickness is a radially symmetric steady dome (Bueler et al. 2005, the
//! profile shared by their tests C and D) plus a periodic bump confined to
//! the annulus `0.3 L < r < 0.9 L`. Time is in years and lengths in metres.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{latin_hypercube, uniform_sample, Bounds, RngSeed};
use crate::error::{arg_err, Error, Result};
use crate::tensor::Tensor;
use crate::Matrix;

/// Geometry of the static dome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlacierConstants {
    /// Margin radius `L` (m).
    pub length: f64,
    /// Thickness at the dome centre (m).
    pub center_thickness: f64,
    /// Glen flow-law exponent.
    pub glen_exponent: f64,
}

impl Default for GlacierConstants {
    fn default() -> Self {
        GlacierConstants { length: 750_000.0, center_thickness: 3600.0, glen_exponent: 3.0 }
    }
}

/// Full parameter set of one glacier evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlacierParams {
    pub constants: GlacierConstants,
    /// Perturbation amplitude `C_p` (m).
    pub amplitude: f64,
    /// Perturbation period `T_p` (years).
    pub period: f64,
}

impl GlacierParams {
    pub fn new(constants: GlacierConstants, amplitude: f64, period: f64) -> Result<Self> {
        let p = GlacierParams { constants, amplitude, period };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.constants;
        if !(c.length > 0.0 && c.center_thickness > 0.0 && c.glen_exponent > 1.0) {
            return arg_err(format!("invalid glacier constants {c:?}"));
        }
        if !(self.amplitude >= 0.0 && self.period > 0.0) {
            return arg_err(format!("amplitude must be >= 0 and period > 0 (got {}, {})", self.amplitude, self.period));
        }
        Ok(())
    }
}

/// Steady dome thickness `H_s(r)`.
pub fn static_profile(r: f64, c: &GlacierConstants) -> Result<f64> {
    if !(r >= 0.0) {
        return arg_err(format!("radius must be non-negative, got {r}"));
    }
    if r >= c.length {
        return Ok(0.0);
    }
    let n = c.glen_exponent;
    let s = r / c.length;
    let expo = n / (2.0 * n + 2.0);
    let inner = (1.0 + 1.0 / n) * s - 1.0 / n + (1.0 - s).powf(1.0 + 1.0 / n) - s.powf(1.0 + 1.0 / n);
    let scale = c.center_thickness / (1.0 - 1.0 / n).powf(expo);
    Ok(scale * inner.max(0.0).powf(expo))
}

/// `sin(2π t / period)` with the phase reduced to one period first.
fn periodic_sine(t: f64, period: f64) -> f64 {
    let phase = (t / period).rem_euclid(1.0);
    (2.0 * std::f64::consts::PI * phase).sin()
}

/// Periodic perturbation `P(r, t)`; zero outside the open annulus `(0.3 L, 0.9 L)`.
pub fn perturbation(r: f64, t: f64, amplitude: f64, period: f64, length: f64) -> f64 {
    if r <= 0.3 * length || r >= 0.9 * length {
        return 0.0;
    }
    let c = (std::f64::consts::PI * (r - 0.6 * length) / (0.6 * length)).cos();
    amplitude * periodic_sine(t, period) * c * c
}

/// Thickness `H = H_s(r) + P(r, t)` at map position `(x, y)`.
pub fn thickness(x: f64, y: f64, t: f64, period: f64, amplitude: f64, c: &GlacierConstants) -> f64 {
    let r = x.hypot(y);
    static_profile(r, c).expect("hypot is non-negative") + perturbation(r, t, amplitude, period, c.length)
}

/// Coordinate ranges of the glacier design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlacierRanges {
    /// Shared range of `x` and `y` (m).
    pub xy: (f64, f64),
    /// Time range (years).
    pub time: (f64, f64),
    /// Perturbation period range (years).
    pub period: (f64, f64),
    /// Perturbation amplitude range (m).
    pub amplitude: (f64, f64),
}

impl Default for GlacierRanges {
    fn default() -> Self {
        GlacierRanges { xy: (-5.0e5, 5.0e5), time: (0.0, 1.0e4), period: (1.0e3, 5.0e3), amplitude: (1.0e2, 4.0e2) }
    }
}

impl GlacierRanges {
    fn spatial(&self) -> Result<Bounds> {
        Bounds::new(vec![self.xy, self.xy])
    }

    fn parameters(&self) -> Result<Bounds> {
        Bounds::new(vec![self.period, self.amplitude])
    }
}

/// Cell limit above which [`build_glacier_tensor`] refuses without `force`.
pub const MAX_GLACIER_CELLS: u64 = 100_000_000;

/// Training tensor together with the coordinates of every mode.
#[derive(Clone, Debug)]
pub struct GlacierDesign {
    /// `s² × s × s²` thickness tensor, modes (space, time, parameters).
    pub tensor: Tensor,
    /// `s² × 2` rows of `(x, y)`.
    pub locations: Matrix,
    /// `s` time points.
    pub times: Vec<f64>,
    /// `s² × 2` rows of `(period, amplitude)`.
    pub parameters: Matrix,
}

impl GlacierDesign {
    /// Mode coordinates as matrices (time as an `s × 1` column).
    pub fn mode_inputs(&self) -> [Matrix; 3] {
        [self.locations.clone(), Matrix::from_column_slice(self.times.len(), 1, &self.times), self.parameters.clone()]
    }
}

/// Evaluate the glacier on an LHS/uniform design of size `s`.
///
/// Space and parameters use latin hypercubes of `s²` points, time uses `s`
/// uniform draws; cell `(i, j, k)` is the thickness at location `i`, time
/// `j` and parameter pair `k`.
pub fn build_glacier_tensor(
    s: usize,
    ranges: &GlacierRanges,
    constants: &GlacierConstants,
    seed: RngSeed,
    force: bool,
) -> Result<GlacierDesign> {
    if s < 2 {
        return arg_err(format!("design size s must be >= 2, got {s}"));
    }
    let cells = (s as u64).checked_pow(5).unwrap_or(u64::MAX);
    if cells > MAX_GLACIER_CELLS && !force {
        return Err(Error::ResourceGuard(format!(
            "s = {s} gives {cells} cells (limit {MAX_GLACIER_CELLS}); pass force to build anyway"
        )));
    }
    let s2 = s * s;
    let locations = latin_hypercube(s2, &ranges.spatial()?, seed.split(0))?;
    let times = uniform_sample(s, &Bounds::new(vec![ranges.time])?, seed.split(1))?;
    let parameters = latin_hypercube(s2, &ranges.parameters()?, seed.split(2))?;

    let mut data = vec![0.0; s2 * s * s2];
    data.par_chunks_mut(s2 * s).enumerate().for_each(|(k, slab)| {
        let (period, amplitude) = (parameters[(k, 0)], parameters[(k, 1)]);
        for (j, &t) in times.iter().enumerate() {
            for i in 0..s2 {
                slab[i + s2 * j] = thickness(locations[(i, 0)], locations[(i, 1)], t, period, amplitude, constants);
            }
        }
    });
    let tensor = Tensor::new(vec![s2, s, s2], data)?;
    Ok(GlacierDesign { tensor, locations, times, parameters })
}

/// One held-out evaluation point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlacierPoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub period: f64,
    pub amplitude: f64,
}

impl GlacierPoint {
    pub fn thickness(&self, c: &GlacierConstants) -> f64 {
        thickness(self.x, self.y, self.t, self.period, self.amplitude, c)
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.x, self.y, self.t, self.period, self.amplitude]
    }
}

/// Points with true thickness below this are redrawn by [`sample_test_points`].
pub const MIN_TEST_THICKNESS: f64 = 1.0;

/// Latin hypercube over all five coordinates, keeping only points whose true
/// thickness is at least [`MIN_TEST_THICKNESS`] (rejected points are redrawn
/// from further hypercubes).
pub fn sample_test_points(
    n: usize,
    ranges: &GlacierRanges,
    constants: &GlacierConstants,
    seed: RngSeed,
) -> Result<Vec<GlacierPoint>> {
    let bounds = Bounds::new(vec![ranges.xy, ranges.xy, ranges.time, ranges.period, ranges.amplitude])?;
    let mut out = Vec::with_capacity(n);
    for round in 0..1000u64 {
        let pts = latin_hypercube(n, &bounds, seed.split(round))?;
        for row in pts.row_iter() {
            let p = GlacierPoint { x: row[0], y: row[1], t: row[2], period: row[3], amplitude: row[4] };
            if p.thickness(constants) >= MIN_TEST_THICKNESS {
                out.push(p);
                if out.len() == n {
                    return Ok(out);
                }
            }
        }
    }
    Err(Error::Argument("test-point sampler could not find points with positive thickness".into()))
}

/// Mean absolute relative error `mean |(truth − pred) / truth|`.
pub fn mare(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() {
        return arg_err(format!("{} truth values but {} predictions", truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return arg_err("mare of an empty set");
    }
    let mut total = 0.0;
    for (i, (&t, &p)) in truth.iter().zip(pred).enumerate() {
        if t == 0.0 {
            return arg_err(format!("truth value {i} is zero; relative error undefined"));
        }
        total += ((t - p) / t).abs();
    }
    Ok(total / truth.len() as f64)
}
