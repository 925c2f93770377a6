//! Bayesian calibration of the agent model's speed and orientation radius.
//!
//! Observed positions are modelled as emulator output plus independent
//! Gaussian error with separate x and y variances. A Gibbs sampler draws the
//! variances from their inverse-gamma full conditionals and the two model
//! parameters by sampling over fixed grids.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::design::RngSeed;
use crate::emulator::TensorEmulator;
use crate::error::{arg_err, Error, Result};
use crate::Matrix;

/// One observed agent position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub agent: usize,
    pub time: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationSet {
    records: Vec<Observation>,
}

impl ObservationSet {
    pub fn new(records: Vec<Observation>) -> Result<Self> {
        if let Some(k) = records.iter().position(|r| !(r.x.is_finite() && r.y.is_finite())) {
            return arg_err(format!("observation {k} is not finite"));
        }
        Ok(ObservationSet { records })
    }

    /// Parse the trajectory CSV layout `agent_id,time_index,x,y`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Format(format!("line 1: {e}")))?;
        let expected = ["agent_id", "time_index", "x", "y"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Format(format!(
                "line 1: expected header `{}`, found `{}`",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::Format(format!("line {line}: {e}"))
            })?;
            let line = row.position().map_or(0, |p| p.line());
            let field = |k: usize| -> &str { row.get(k).unwrap_or("") };
            let index = |k: usize| {
                field(k)
                    .parse::<usize>()
                    .map_err(|_| Error::Format(format!("line {line}: `{}` is not a valid {}", field(k), expected[k])))
            };
            let real = |k: usize| match field(k).parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Format(format!("line {line}: `{}` is not a finite {}", field(k), expected[k]))),
            };
            records.push(Observation { agent: index(0)?, time: index(1)?, x: real(2)?, y: real(3)? });
        }
        Ok(ObservationSet { records })
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Error if any record falls outside an `agents × times` grid.
    pub fn check_grid(&self, agents: usize, times: usize) -> Result<()> {
        match self.records.iter().position(|r| r.agent >= agents || r.time >= times) {
            Some(k) => arg_err(format!(
                "observation {k} (agent {}, time {}) lies outside the {agents} × {times} emulator grid",
                self.records[k].agent, self.records[k].time
            )),
            None => Ok(()),
        }
    }

    /// Residual sums of squares against predicted `agent × time` positions.
    pub fn sse(&self, px: &Matrix, py: &Matrix) -> Result<(f64, f64)> {
        self.check_grid(px.nrows(), px.ncols())?;
        let (mut sx, mut sy) = (0.0, 0.0);
        for r in &self.records {
            sx += (r.x - px[(r.agent, r.time)]).powi(2);
            sy += (r.y - py[(r.agent, r.time)]).powi(2);
        }
        Ok((sx, sy))
    }
}

/// Predicted agent positions as a function of `(v, rho)`.
pub trait PositionModel: Sync {
    /// `(x, y)` positions, each `agents × times`.
    fn positions(&self, v: f64, rho: f64) -> Result<(Matrix, Matrix)>;
}

impl<F> PositionModel for F
where
    F: Fn(f64, f64) -> Result<(Matrix, Matrix)> + Sync,
{
    fn positions(&self, v: f64, rho: f64) -> Result<(Matrix, Matrix)> {
        self(v, rho)
    }
}

/// Emulators of x and y positions over `(agent, time, v, rho)`, with agent
/// and time as grid modes and v, rho as learned modes.
pub struct EmulatorPair {
    pub x: TensorEmulator,
    pub y: TensorEmulator,
}

impl EmulatorPair {
    pub fn new(x: TensorEmulator, y: TensorEmulator) -> Result<Self> {
        for e in [&x, &y] {
            if e.order() != 4 || e.learned_modes() != [2, 3] {
                return arg_err("position emulators need grid modes (agent, time) and learned modes (v, rho)");
            }
        }
        if x.output_dims() != y.output_dims() {
            return arg_err("x and y emulators cover different agent/time grids");
        }
        Ok(EmulatorPair { x, y })
    }
}

fn emulate_positions(e: &TensorEmulator, v: f64, rho: f64) -> Result<Matrix> {
    let t = e.emulate(&[&[v], &[rho]])?;
    let d = t.dims();
    let m = Matrix::from_column_slice(d[0], d[1], t.data());
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!("emulator output is not finite at v = {v}, rho = {rho}")));
    }
    Ok(m)
}

impl PositionModel for EmulatorPair {
    fn positions(&self, v: f64, rho: f64) -> Result<(Matrix, Matrix)> {
        Ok((emulate_positions(&self.x, v, rho)?, emulate_positions(&self.y, v, rho)?))
    }
}

/// Inverse gamma with density ∝ x^(−shape−1)·exp(−scale/x).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InverseGamma {
    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.scale > 0.0 && self.shape.is_finite() && self.scale.is_finite()) {
            return arg_err(format!(
                "inverse gamma needs positive shape and scale (got {}, {})",
                self.shape, self.scale
            ));
        }
        Ok(())
    }

    /// Full conditional after `n` Gaussian observations with residual sum of
    /// squares `sse`.
    pub fn posterior(&self, n: usize, sse: f64) -> InverseGamma {
        InverseGamma { shape: self.shape + n as f64 / 2.0, scale: self.scale + sse / 2.0 }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.shape > 1.0).then(|| self.scale / (self.shape - 1.0))
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.scale.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln() - self.scale / x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g: f64 = Gamma::new(self.shape, 1.0).expect("validated shape").sample(rng);
        self.scale / g
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformPrior {
    pub lo: f64,
    pub hi: f64,
}

impl UniformPrior {
    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo < self.hi && self.lo.is_finite() && self.hi.is_finite()) {
            return arg_err(format!("{name} prior needs lo < hi (got {}, {})", self.lo, self.hi));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }

    /// `n` equally spaced points from `lo` to `hi` inclusive.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![0.5 * (self.lo + self.hi)],
            _ => (0..n).map(|k| self.lo + (self.hi - self.lo) * k as f64 / (n - 1) as f64).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    pub rho: UniformPrior,
    pub v: UniformPrior,
    pub sigma2_x: InverseGamma,
    pub sigma2_y: InverseGamma,
}

impl Default for Priors {
    fn default() -> Self {
        let ig = InverseGamma { shape: 3.0, scale: 4.0 };
        Priors {
            rho: UniformPrior { lo: 5.0, hi: 60.0 },
            v: UniformPrior { lo: 1.0, hi: 5.0 },
            sigma2_x: ig,
            sigma2_y: ig,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        self.rho.validate("rho")?;
        self.v.validate("v")?;
        self.sigma2_x.validate()?;
        self.sigma2_y.validate()
    }
}

/// Default number of grid points per parameter.
pub const DEFAULT_GRID_POINTS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Grids {
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
}

impl Grids {
    /// `points` equally spaced values spanning each uniform prior.
    pub fn spanning(priors: &Priors, points: usize) -> Grids {
        Grids { rho: priors.rho.grid(points), v: priors.v.grid(points) }
    }
}

/// Gaussian log-likelihood of the observations at `(rho, v)`.
pub fn log_likelihood(
    obs: &ObservationSet,
    rho: f64,
    v: f64,
    sigma2_x: f64,
    sigma2_y: f64,
    model: &dyn PositionModel,
) -> Result<f64> {
    if !(sigma2_x > 0.0 && sigma2_y > 0.0) {
        return arg_err("variances must be positive");
    }
    if obs.is_empty() {
        return Ok(0.0);
    }
    let (px, py) = model.positions(v, rho)?;
    let (sx, sy) = obs.sse(&px, &py)?;
    Ok(gaussian_ll(obs.len(), sx, sigma2_x) + gaussian_ll(obs.len(), sy, sigma2_y))
}

fn gaussian_ll(n: usize, sse: f64, sigma2: f64) -> f64 {
    -0.5 * n as f64 * (2.0 * std::f64::consts::PI * sigma2).ln() - sse / (2.0 * sigma2)
}

/// Draw an index with probability ∝ `exp(log_weights)`.
pub fn sample_log_weights<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical(
            "every grid weight is zero or undefined; check the log-sum-exp inputs for non-finite likelihoods".into(),
        ));
    }
    let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, wk) in w.iter().enumerate() {
        if u < *wk {
            return Ok(k);
        }
        u -= wk;
    }
    Ok(w.iter().rposition(|&x| x > 0.0).unwrap_or(0))
}

/// Posterior draws, one entry per iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
    pub sigma2_x: Vec<f64>,
    pub sigma2_y: Vec<f64>,
    pub seed: RngSeed,
    /// Distinct `(v, rho)` grid cells at which the model was evaluated.
    pub model_evaluations: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// CSV with columns `iteration,rho_o,v,sigma2_x,sigma2_y`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,rho_o,v,sigma2_x,sigma2_y")?;
        for k in 0..self.len() {
            writeln!(w, "{k},{},{},{},{}", self.rho[k], self.v[k], self.sigma2_x[k], self.sigma2_y[k])?;
        }
        Ok(())
    }
}

struct SseCache<'a> {
    obs: &'a ObservationSet,
    model: &'a dyn PositionModel,
    grids: &'a Grids,
    cells: HashMap<(usize, usize), (f64, f64)>,
}

impl SseCache<'_> {
    /// Fill every missing `(rho index, v index)` cell among `cells`.
    fn fill(&mut self, cells: &[(usize, usize)]) -> Result<()> {
        let missing: Vec<(usize, usize)> = cells.iter().copied().filter(|c| !self.cells.contains_key(c)).collect();
        let (obs, model, grids) = (self.obs, self.model, self.grids);
        let computed = missing
            .par_iter()
            .map(|&(r, v)| {
                if obs.is_empty() {
                    return Ok(((r, v), (0.0, 0.0)));
                }
                let (px, py) = model.positions(grids.v[v], grids.rho[r])?;
                Ok(((r, v), obs.sse(&px, &py)?))
            })
            .collect::<Result<Vec<_>>>()?;
        self.cells.extend(computed);
        Ok(())
    }

    fn get(&self, cell: (usize, usize)) -> (f64, f64) {
        self.cells[&cell]
    }
}

fn conditional_grid_draw(
    cache: &mut SseCache,
    cells: Vec<(usize, usize)>,
    s2x: f64,
    s2y: f64,
    rng: &mut ChaCha20Rng,
) -> Result<usize> {
    cache.fill(&cells)?;
    let n = cache.obs.len();
    let lw: Vec<f64> = cells
        .iter()
        .map(|&c| {
            let (sx, sy) = cache.get(c);
            gaussian_ll(n, sx, s2x) + gaussian_ll(n, sy, s2y)
        })
        .collect();
    sample_log_weights(&lw, rng)
}

/// Run the Gibbs sampler for `iterations` sweeps.
///
/// Each sweep updates σ²_x, σ²_y, rho, then v, starting from the middle
/// grid points. Model output is cached per grid cell, so the model is
/// evaluated at most once per `(v, rho)` pair.
pub fn gibbs(
    obs: &ObservationSet,
    priors: &Priors,
    grids: &Grids,
    iterations: usize,
    seed: RngSeed,
    model: &dyn PositionModel,
) -> Result<Chain> {
    priors.validate()?;
    if iterations == 0 {
        return arg_err("at least one iteration is required");
    }
    if grids.rho.is_empty() || grids.v.is_empty() {
        return arg_err("parameter grids must be non-empty");
    }
    if !grids.rho.iter().all(|&r| priors.rho.contains(r)) || !grids.v.iter().all(|&v| priors.v.contains(v)) {
        return arg_err("grid points must lie inside the prior support");
    }
    let mut cache = SseCache { obs, model, grids, cells: HashMap::new() };
    let mut rng = seed.rng();
    let mut ri = grids.rho.len() / 2;
    let mut vi = grids.v.len() / 2;
    let mut chain = Chain {
        rho: Vec::with_capacity(iterations),
        v: Vec::with_capacity(iterations),
        sigma2_x: Vec::with_capacity(iterations),
        sigma2_y: Vec::with_capacity(iterations),
        seed,
        model_evaluations: 0,
    };
    let n = obs.len();
    for _ in 0..iterations {
        cache.fill(&[(ri, vi)])?;
        let (sx, sy) = cache.get((ri, vi));
        let s2x = priors.sigma2_x.posterior(n, sx).sample(&mut rng);
        let s2y = priors.sigma2_y.posterior(n, sy).sample(&mut rng);
        ri = conditional_grid_draw(&mut cache, (0..grids.rho.len()).map(|r| (r, vi)).collect(), s2x, s2y, &mut rng)?;
        vi = conditional_grid_draw(&mut cache, (0..grids.v.len()).map(|v| (ri, v)).collect(), s2x, s2y, &mut rng)?;
        let draw = (grids.rho[ri], grids.v[vi], s2x, s2y);
        assert!(
            priors.rho.contains(draw.0) && priors.v.contains(draw.1) && draw.2 > 0.0 && draw.3 > 0.0,
            "draw {draw:?} left the prior support"
        );
        chain.rho.push(draw.0);
        chain.v.push(draw.1);
        chain.sigma2_x.push(draw.2);
        chain.sigma2_y.push(draw.3);
    }
    chain.model_evaluations = if obs.is_empty() { 0 } else { cache.cells.len() };
    Ok(chain)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParamSummary {
    pub mean: f64,
    /// 2.5% quantile.
    pub lower: f64,
    /// 97.5% quantile.
    pub upper: f64,
    /// Most frequent value; meaningful for grid-sampled parameters.
    pub mode: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChainSummary {
    pub rho: ParamSummary,
    pub v: ParamSummary,
    pub sigma2_x: ParamSummary,
    pub sigma2_y: ParamSummary,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(draws: &[f64]) -> ParamSummary {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for d in draws {
        *counts.entry(d.to_bits()).or_default() += 1;
    }
    let mode = counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(f64::from_bits(b.0).total_cmp(&f64::from_bits(a.0))))
        .map(|(bits, _)| f64::from_bits(bits))
        .unwrap_or(f64::NAN);
    ParamSummary { mean, lower: quantile(&sorted, 0.025), upper: quantile(&sorted, 0.975), mode }
}

/// Means, central 95% intervals and modes after discarding `burn_in` draws.
pub fn chain_summary(chain: &Chain, burn_in: usize) -> Result<ChainSummary> {
    if burn_in >= chain.len() {
        return arg_err(format!("burn-in {burn_in} leaves no draws from a chain of {}", chain.len()));
    }
    Ok(ChainSummary {
        rho: summarize(&chain.rho[burn_in..]),
        v: summarize(&chain.v[burn_in..]),
        sigma2_x: summarize(&chain.sigma2_x[burn_in..]),
        sigma2_y: summarize(&chain.sigma2_y[burn_in..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_gamma_density_integrates_to_one() {
        let ig = InverseGamma { shape: 3.0, scale: 4.0 };
        let h = 1e-3;
        let total: f64 = (1..2_000_000).map(|k| ig.ln_pdf(k as f64 * h).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn quantile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.5), 2.0);
        assert_eq!(quantile(&s, 0.125), 0.5);
        assert_eq!(quantile(&s, 1.0), 4.0);
    }

    #[test]
    fn underflowing_weights_rejected() {
        let mut rng = RngSeed(0).rng();
        assert!(sample_log_weights(&[f64::NEG_INFINITY; 3], &mut rng).is_err());
        assert_eq!(sample_log_weights(&[-1e300, 0.0, -1e300], &mut rng).unwrap(), 1);
    }
}
