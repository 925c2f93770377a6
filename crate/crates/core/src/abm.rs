//! Collective-movement agent model with a no-collision zone and an
//! orientation zone.
//!
//! Each step every agent picks a unit direction from the previous state:
//! away from neighbours closer than `alpha`; otherwise the mean heading of
//! itself and neighbours within `[alpha, rho]`; otherwise its own heading.
//! It then moves `v` along that direction plus Gaussian noise.

use std::f64::consts::TAU;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::RngSeed;
use crate::error::{arg_err, Error, Result};
use crate::tensor::Tensor;
use crate::Matrix;

/// Refuse tensors larger than this many cells unless forced.
pub const MAX_ABM_CELLS: usize = 100_000_000;

const DEGENERATE: f64 = 1e-12;

pub type Vec2 = [f64; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbmParams {
    /// Speed per step.
    pub v: f64,
    /// Orientation radius.
    pub rho: f64,
    /// No-collision radius.
    pub alpha: f64,
    /// Variance of the per-coordinate location noise.
    pub noise_var: f64,
    /// Number of stored time points (initial state included).
    pub steps: usize,
}

impl AbmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v > 0.0 && self.v.is_finite()) {
            return arg_err(format!("speed v = {} must be positive", self.v));
        }
        if !(self.alpha > 0.0 && self.alpha < self.rho && self.rho.is_finite()) {
            return arg_err(format!("radii must satisfy 0 < alpha < rho (alpha = {}, rho = {})", self.alpha, self.rho));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return arg_err(format!("noise variance {} must be non-negative", self.noise_var));
        }
        if self.steps == 0 {
            return arg_err("at least one time point is required");
        }
        Ok(())
    }
}

/// Positions and unit headings of every agent at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct AbmState {
    positions: Vec<Vec2>,
    directions: Vec<Vec2>,
}

fn norm(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

fn unit_or_zero(v: Vec2) -> Vec2 {
    let n = norm(v);
    if n > 0.0 {
        [v[0] / n, v[1] / n]
    } else {
        [0.0, 0.0]
    }
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec2 {
    let theta = rng.random::<f64>() * TAU;
    [theta.cos(), theta.sin()]
}

impl AbmState {
    pub fn new(positions: Vec<Vec2>, directions: Vec<Vec2>) -> Result<Self> {
        if positions.is_empty() || positions.len() != directions.len() {
            return arg_err(format!(
                "{} positions and {} directions; need equal, non-zero counts",
                positions.len(),
                directions.len()
            ));
        }
        if !positions.iter().flatten().all(|v| v.is_finite()) {
            return arg_err("positions must be finite");
        }
        if let Some(i) = directions.iter().position(|d| (norm(*d) - 1.0).abs() > 1e-9) {
            return arg_err(format!("direction of agent {i} is not a unit vector"));
        }
        Ok(AbmState { positions, directions })
    }

    /// `agents` agents scattered uniformly over `[0, side]²`, each with a
    /// uniformly random heading.
    pub fn scatter(agents: usize, side: f64, seed: RngSeed) -> Result<Self> {
        if agents == 0 || !(side > 0.0 && side.is_finite()) {
            return arg_err("scatter needs at least one agent and a positive box side");
        }
        let mut rng = seed.rng();
        let positions = (0..agents).map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side]).collect();
        let directions = (0..agents).map(|_| random_unit(&mut rng)).collect();
        Ok(AbmState { positions, directions })
    }

    pub fn agents(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn directions(&self) -> &[Vec2] {
        &self.directions
    }

    /// Same state with every position shifted by `offset`.
    pub fn translated(&self, offset: Vec2) -> AbmState {
        AbmState {
            positions: self.positions.iter().map(|p| [p[0] + offset[0], p[1] + offset[1]]).collect(),
            directions: self.directions.clone(),
        }
    }
}

/// Which rule produced a heading.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DirectionCase {
    Repulsion,
    Orientation,
    Persistence,
}

/// New heading of agent `i` from the previous state, with the rule used.
///
/// Repulsion takes priority whenever another agent is closer than `alpha`;
/// agents at exactly the same spot contribute nothing. If the summed vector
/// vanishes the previous heading is kept, and if that is degenerate too a
/// random unit vector is drawn from `rng`.
pub fn direction_update<R: Rng + ?Sized>(
    state: &AbmState,
    i: usize,
    params: &AbmParams,
    rng: &mut R,
) -> (Vec2, DirectionCase) {
    let si = state.positions[i];
    let mut repel = [0.0, 0.0];
    let mut too_close = false;
    let mut orient = unit_or_zero(state.directions[i]);
    let mut has_orient = false;
    for (j, sj) in state.positions.iter().enumerate() {
        if j == i {
            continue;
        }
        let diff = [sj[0] - si[0], sj[1] - si[1]];
        let dist = norm(diff);
        if dist < params.alpha {
            too_close = true;
            if dist > 0.0 {
                repel[0] -= diff[0] / dist;
                repel[1] -= diff[1] / dist;
            }
        } else if !too_close && dist <= params.rho {
            has_orient = true;
            let dj = unit_or_zero(state.directions[j]);
            orient[0] += dj[0];
            orient[1] += dj[1];
        }
    }
    let (raw, case) = if too_close {
        (repel, DirectionCase::Repulsion)
    } else if has_orient {
        (orient, DirectionCase::Orientation)
    } else {
        (state.directions[i], DirectionCase::Persistence)
    };
    let n = norm(raw);
    if n >= DEGENERATE && n.is_finite() {
        return ([raw[0] / n, raw[1] / n], case);
    }
    let prev = state.directions[i];
    let pn = norm(prev);
    if pn >= DEGENERATE && pn.is_finite() {
        ([prev[0] / pn, prev[1] / pn], case)
    } else {
        (random_unit(rng), case)
    }
}

/// One synchronous step: every heading is computed from `state`, then all
/// agents move `v` along their heading plus `N(0, noise_var)` per coordinate.
pub fn abm_step<R: Rng + ?Sized>(state: &AbmState, params: &AbmParams, rng: &mut R) -> AbmState {
    step_counting(state, params, rng, &mut |_| {})
}

fn step_counting<R: Rng + ?Sized>(
    state: &AbmState,
    params: &AbmParams,
    rng: &mut R,
    on_case: &mut dyn FnMut(DirectionCase),
) -> AbmState {
    let directions: Vec<Vec2> = (0..state.agents())
        .map(|i| {
            let (d, case) = direction_update(state, i, params, rng);
            on_case(case);
            d
        })
        .collect();
    let noise = Normal::new(0.0, params.noise_var.sqrt()).expect("validated variance");
    let positions = state
        .positions
        .iter()
        .zip(&directions)
        .map(|(p, d)| {
            let mut next = [p[0] + params.v * d[0], p[1] + params.v * d[1]];
            if params.noise_var > 0.0 {
                next[0] += noise.sample(rng);
                next[1] += noise.sample(rng);
            }
            next
        })
        .collect();
    AbmState { positions, directions }
}

/// Agent positions over time: row = agent, column = time index.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectories {
    pub x: Matrix,
    pub y: Matrix,
}

impl Trajectories {
    pub fn agents(&self) -> usize {
        self.x.nrows()
    }

    pub fn steps(&self) -> usize {
        self.x.ncols()
    }

    /// Positions of every agent at time index `t`.
    pub fn positions_at(&self, t: usize) -> Vec<Vec2> {
        (0..self.agents()).map(|i| [self.x[(i, t)], self.y[(i, t)]]).collect()
    }

    /// CSV with columns `agent_id,time_index,x,y`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "agent_id,time_index,x,y")?;
        for t in 0..self.steps() {
            for i in 0..self.agents() {
                writeln!(w, "{i},{t},{},{}", self.x[(i, t)], self.y[(i, t)])?;
            }
        }
        Ok(())
    }
}

/// Run the model from `init`; column 0 holds the initial positions.
pub fn simulate(init: &AbmState, params: &AbmParams, seed: RngSeed) -> Result<Trajectories> {
    simulate_counting(init, params, seed).map(|(t, _)| t)
}

/// [`simulate`] that also reports how often each heading rule fired
/// (repulsion, orientation, persistence).
pub fn simulate_counting(init: &AbmState, params: &AbmParams, seed: RngSeed) -> Result<(Trajectories, [usize; 3])> {
    params.validate()?;
    let n = init.agents();
    let mut x = Matrix::zeros(n, params.steps);
    let mut y = Matrix::zeros(n, params.steps);
    let mut counts = [0usize; 3];
    let mut rng = seed.rng();
    let mut state = init.clone();
    for t in 0..params.steps {
        if t > 0 {
            state = step_counting(&state, params, &mut rng, &mut |c| {
                counts[c as usize] += 1;
            });
        }
        for (i, p) in state.positions.iter().enumerate() {
            x[(i, t)] = p[0];
            y[(i, t)] = p[1];
        }
    }
    if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
        return Err(Error::Numerical("trajectory left the finite range".into()));
    }
    Ok((Trajectories { x, y }, counts))
}

/// Noise streams used across the parameter combinations of a tensor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePolicy {
    /// Every combination replays the same noise stream.
    #[default]
    Shared,
    /// Combination `(a, b)` uses seed `seed.split(a).split(b)`.
    Independent,
}

/// Position tensors `(agent, time, v index, rho index)` for x and y.
#[derive(Clone, Debug, PartialEq)]
pub struct AbmTensors {
    pub x: Tensor,
    pub y: Tensor,
}

/// Simulate every `(v_a, rho_b)` pair from the same initial state.
///
/// `base` supplies `alpha`, `noise_var` and `steps`; its `v` and `rho` are
/// replaced per combination.
pub fn build_abm_tensors(
    speeds: &[f64],
    radii: &[f64],
    base: &AbmParams,
    init: &AbmState,
    seed: RngSeed,
    policy: NoisePolicy,
    force: bool,
) -> Result<AbmTensors> {
    if speeds.is_empty() || radii.is_empty() {
        return arg_err("parameter design needs at least one speed and one radius");
    }
    let n = init.agents();
    let t = base.steps;
    let cells = [n, t, speeds.len(), radii.len()]
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::ResourceGuard("tensor size overflows".into()))?;
    if cells > MAX_ABM_CELLS && !force {
        return Err(Error::ResourceGuard(format!(
            "ABM tensors would hold {cells} cells each (limit {MAX_ABM_CELLS}); reduce the design or force the build"
        )));
    }
    for &v in speeds {
        for &rho in radii {
            AbmParams { v, rho, ..base.clone() }.validate()?;
        }
    }
    let slab = n * t;
    let mut xs = vec![0.0; cells];
    let mut ys = vec![0.0; cells];
    xs.par_chunks_mut(slab).zip(ys.par_chunks_mut(slab)).enumerate().try_for_each(|(c, (xc, yc))| -> Result<()> {
        let a = c % speeds.len();
        let b = c / speeds.len();
        let params = AbmParams { v: speeds[a], rho: radii[b], ..base.clone() };
        let s = match policy {
            NoisePolicy::Shared => seed,
            NoisePolicy::Independent => seed.split(a as u64).split(b as u64),
        };
        let traj = simulate(init, &params, s)?;
        xc.copy_from_slice(traj.x.as_slice());
        yc.copy_from_slice(traj.y.as_slice());
        Ok(())
    })?;
    let dims = vec![n, t, speeds.len(), radii.len()];
    Ok(AbmTensors { x: Tensor::new(dims.clone(), xs)?, y: Tensor::new(dims, ys)? })
}

fn centroid(positions: &[Vec2]) -> Vec2 {
    let n = positions.len() as f64;
    let s = positions.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
    [s[0] / n, s[1] / n]
}

/// Mean distance of the agents from their centroid.
pub fn troop_spread(positions: &[Vec2]) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    let c = centroid(positions);
    positions.iter().map(|p| (p[0] - c[0]).hypot(p[1] - c[1])).sum::<f64>() / positions.len() as f64
}

/// Ratio of principal-axis lengths, `sqrt(λ_max / λ_min)` of the positional
/// covariance. Returns `f64::INFINITY` when the positions are collinear or
/// coincide.
pub fn troop_elongation(positions: &[Vec2]) -> f64 {
    if positions.len() < 2 {
        return f64::INFINITY;
    }
    let c = centroid(positions);
    let n = positions.len() as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in positions {
        let dx = p[0] - c[0];
        let dy = p[1] - c[1];
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (sxx, syy, sxy) = (sxx / n, syy / n, sxy / n);
    let mid = 0.5 * (sxx + syy);
    let rad = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
    let hi = mid + rad;
    let lo = mid - rad;
    if !(hi > 0.0) || lo <= DEGENERATE * hi {
        return f64::INFINITY;
    }
    (hi / lo).sqrt()
}

/// Spread and elongation at every time index.
pub fn metric_series(traj: &Trajectories) -> Vec<(f64, f64)> {
    (0..traj.steps())
        .map(|t| {
            let p = traj.positions_at(t);
            (troop_spread(&p), troop_elongation(&p))
        })
        .collect()
}

/// CSV with columns `time_index,spread,elongation`.
pub fn write_metric_csv<W: Write>(mut w: W, series: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "time_index,spread,elongation")?;
    for (t, (s, e)) in series.iter().enumerate() {
        writeln!(w, "{t},{s},{e}")?;
    }
    Ok(())
}
