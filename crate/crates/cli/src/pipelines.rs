//! Experiment pipelines. Each returns its result rows and, given an output
//! directory, writes tidy CSV files there.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use temu::abm::{
    build_abm_tensors, metric_series, simulate, write_metric_csv, AbmParams, AbmState, AbmTensors, Trajectories,
};
use temu::calibrate::{chain_summary, gibbs, Chain, ChainSummary, EmulatorPair, Grids, Observation, ObservationSet};
use temu::design::{latin_hypercube, uniform_sample, write_design_csv, Bounds};
use temu::glacier::{build_glacier_tensor, mare, sample_test_points, thickness, GlacierPoint};
use temu::surrogate::fit;
use temu::tensor::hosvd;
use temu::{HosvdFactors, Matrix, ModeSpec, RngSeed, SurrogateConfig, SurrogateKind, TensorEmulator, TrainingSet};

use crate::config::{
    AbmEmulatorKind, AbmExperimentConfig, CalibrateConfig, Combination, FlatBaselineConfig, GlacierExperimentConfig,
};
use crate::{CliError, Hint};

pub(crate) fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?))
}

fn held_out(
    cfg: &GlacierExperimentConfig,
    seed: RngSeed,
    replicate: usize,
) -> Result<(Vec<GlacierPoint>, Vec<f64>), CliError> {
    let pts = sample_test_points(cfg.test_points, &cfg.ranges, &cfg.constants, seed.split(0).split(replicate as u64))?;
    let truth = pts.iter().map(|p| p.thickness(&cfg.constants)).collect();
    Ok((pts, truth))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlacierRow {
    pub s: usize,
    pub combination: Combination,
    pub replicate: usize,
    pub mare: f64,
}

fn learned(kind: SurrogateKind, inputs: Matrix, config: &SurrogateConfig) -> ModeSpec {
    ModeSpec::Learned { kind, inputs, config: config.clone() }
}

/// Tensor emulators of the glacier at every size and combination.
///
/// Replicate `r` draws its held-out points from `seed.split(0).split(r)`, so
/// every size and combination is scored on the same points. The tensor of
/// size `s` uses `seed.split(1).split_path(&[r, s])` and its surrogates
/// `seed.split(2).split_path(&[r, s])`.
pub fn glacier_experiment(
    cfg: &GlacierExperimentConfig,
    seed: RngSeed,
    out: Option<&Path>,
) -> Result<Vec<GlacierRow>, CliError> {
    let mut rows = Vec::new();
    for replicate in 0..cfg.replicates {
        let (test, truth) = held_out(cfg, seed, replicate)?;
        for &s in &cfg.sizes {
            let path = [replicate as u64, s as u64];
            let design =
                build_glacier_tensor(s, &cfg.ranges, &cfg.constants, seed.split(1).split_path(&path), cfg.force)
                    .map_err(|e| e.with_hint("lower glacier.sizes or set glacier.force"))?;
            let ranks = [cfg.max_rank.min(s * s), s, cfg.max_rank.min(s * s)];
            log::info!("glacier s = {s}, replicate {replicate}: HOSVD at ranks {ranks:?}");
            let factors = hosvd(&design.tensor, &ranks)?;
            let inputs = design.mode_inputs();
            if let (Some(dir), true) = (out, cfg.save_artifacts) {
                let tag = format!("s{s}_r{replicate}");
                design.tensor.save(dir.join(format!("glacier_{tag}.temu1")))?;
                write_design_csv(create(dir, &format!("design_{tag}_space.csv"))?, &["x", "y"], &inputs[0])?;
                write_design_csv(create(dir, &format!("design_{tag}_time.csv"))?, &["t"], &inputs[1])?;
                write_design_csv(
                    create(dir, &format!("design_{tag}_parameters.csv"))?,
                    &["period", "amplitude"],
                    &inputs[2],
                )?;
            }
            for &combination in &cfg.combinations {
                let kinds = combination.kinds();
                let specs = (0..3).map(|k| learned(kinds[k], inputs[k].clone(), &cfg.surrogate)).collect();
                let emu = TensorEmulator::from_factors(factors.clone(), specs, seed.split(2).split_path(&path))?;
                let pred = test
                    .iter()
                    .map(|p| {
                        let a = p.as_array();
                        Ok(emu.emulate(&[&a[0..2], &a[2..3], &a[3..5]])?.data()[0])
                    })
                    .collect::<Result<Vec<f64>, CliError>>()?;
                let m = mare(&truth, &pred)?;
                log::info!("glacier s = {s}, replicate {replicate}, {combination}: MARE {m:.5}");
                if let (Some(dir), true) = (out, cfg.save_artifacts) {
                    emu.save(dir.join(format!("emulator_s{s}_r{replicate}_{combination}.temu")))?;
                }
                rows.push(GlacierRow { s, combination, replicate, mare: m });
            }
        }
    }
    if let Some(dir) = out {
        let mut w = create(dir, "glacier_errors.csv")?;
        writeln!(w, "s,combination,replicate,mare")?;
        for r in &rows {
            writeln!(w, "{},{},{},{}", r.s, r.combination, r.replicate, r.mare)?;
        }
        w.flush()?;
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlatRow {
    pub kind: SurrogateKind,
    pub replicate: usize,
    pub mare: f64,
}

/// Single surrogates trained directly on `(x, y, t, period, amplitude)`.
///
/// The held-out points of replicate `r` are those of [`glacier_experiment`]
/// with the same seed and glacier section. Training points use
/// `seed.split(3).split(r)` and the surrogate `seed.split(4).split(r)`.
pub fn flat_baseline(
    cfg: &FlatBaselineConfig,
    glacier: &GlacierExperimentConfig,
    seed: RngSeed,
    out: Option<&Path>,
) -> Result<Vec<FlatRow>, CliError> {
    let r = &glacier.ranges;
    let bounds = Bounds::new(vec![r.xy, r.xy, r.time, r.period, r.amplitude])?;
    let mut rows = Vec::new();
    for replicate in 0..cfg.replicates {
        let (test, truth) =
            held_out(&GlacierExperimentConfig { test_points: cfg.test_points, ..glacier.clone() }, seed, replicate)?;
        let x = latin_hypercube(cfg.train_points, &bounds, seed.split(3).split(replicate as u64))?;
        let y = x.row_iter().map(|p| thickness(p[0], p[1], p[2], p[3], p[4], &glacier.constants)).collect();
        let ts = TrainingSet::new(x, y)?;
        for &kind in &cfg.kinds {
            log::info!("flat baseline {kind}, replicate {replicate}: training on {} points", ts.len());
            let model = fit(kind, &ts, &cfg.surrogate, seed.split(4).split(replicate as u64))?;
            let pred = test.iter().map(|p| model.predict(&p.as_array())).collect::<temu::Result<Vec<f64>>>()?;
            let m = mare(&truth, &pred)?;
            log::info!("flat baseline {kind}, replicate {replicate}: MARE {m:.5}");
            rows.push(FlatRow { kind, replicate, mare: m });
        }
    }
    if let Some(dir) = out {
        let mut w = create(dir, "flat_errors.csv")?;
        writeln!(w, "kind,replicate,mare")?;
        for r in &rows {
            writeln!(w, "{},{},{}", r.kind, r.replicate, r.mare)?;
        }
        w.flush()?;
    }
    Ok(rows)
}

/// Parameter design, initial state and position tensors of the agent model.
pub struct AbmSetup {
    pub speeds: Vec<f64>,
    pub radii: Vec<f64>,
    pub init: AbmState,
    /// Seed of the simulation noise (shared policy) or its root (independent).
    pub noise_seed: RngSeed,
    pub tensors: AbmTensors,
}

impl AbmSetup {
    /// Speeds from `seed.split(0)`, radii from `seed.split(1)`, initial
    /// scatter from `seed.split(2)`, simulation noise from `seed.split(3)`.
    pub fn build(cfg: &AbmExperimentConfig, seed: RngSeed) -> Result<AbmSetup, CliError> {
        let speeds = uniform_sample(cfg.v_points, &Bounds::single(cfg.v_range.0, cfg.v_range.1)?, seed.split(0))?;
        let radii = uniform_sample(cfg.rho_points, &Bounds::single(cfg.rho_range.0, cfg.rho_range.1)?, seed.split(1))?;
        let init = AbmState::scatter(cfg.agents, cfg.init_box, seed.split(2))?;
        let noise_seed = seed.split(3);
        log::info!("simulating {} parameter combinations", speeds.len() * radii.len());
        let tensors =
            build_abm_tensors(&speeds, &radii, &base_params(cfg), &init, noise_seed, cfg.noise_policy, cfg.force)
                .map_err(|e| e.with_hint("reduce agents, steps or design points, or set force"))?;
        Ok(AbmSetup { speeds, radii, init, noise_seed, tensors })
    }

    /// Emulators of both tensors with the given surrogate assignment; x uses
    /// seed `seed.split(4)` and y `seed.split(5)`.
    pub fn emulators(
        &self,
        cfg: &AbmExperimentConfig,
        factors: &(HosvdFactors, HosvdFactors),
        kind: AbmEmulatorKind,
        seed: RngSeed,
    ) -> Result<EmulatorPair, CliError> {
        let (kx, ky) = kind.kinds();
        let v = Matrix::from_column_slice(self.speeds.len(), 1, &self.speeds);
        let rho = Matrix::from_column_slice(self.radii.len(), 1, &self.radii);
        let specs = |k: [SurrogateKind; 2]| {
            vec![
                ModeSpec::Grid,
                ModeSpec::Grid,
                learned(k[0], v.clone(), &cfg.surrogate),
                learned(k[1], rho.clone(), &cfg.surrogate),
            ]
        };
        let x = TensorEmulator::from_factors(factors.0.clone(), specs(kx), seed.split(4))?;
        let y = TensorEmulator::from_factors(factors.1.clone(), specs(ky), seed.split(5))?;
        Ok(EmulatorPair::new(x, y)?)
    }

    pub fn factors(&self, cfg: &AbmExperimentConfig) -> Result<(HosvdFactors, HosvdFactors), CliError> {
        let ranks = cfg.ranks.unwrap_or([cfg.agents, cfg.steps, cfg.v_points, cfg.rho_points]);
        let core: usize = ranks.iter().product();
        if core > 1_000_000 {
            log::warn!("core tensor has {core} elements; consider lower abm.ranks");
        }
        Ok((hosvd(&self.tensors.x, &ranks)?, hosvd(&self.tensors.y, &ranks)?))
    }
}

fn base_params(cfg: &AbmExperimentConfig) -> AbmParams {
    AbmParams { v: cfg.v_range.0, rho: cfg.rho_range.1, alpha: cfg.alpha, noise_var: cfg.noise_var, steps: cfg.steps }
}

fn emulated_trajectories(pair: &EmulatorPair, v: f64, rho: f64) -> Result<Trajectories, CliError> {
    use temu::calibrate::PositionModel;
    let (x, y) = pair.positions(v, rho)?;
    Ok(Trajectories { x, y })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbmRow {
    pub case: usize,
    pub v: f64,
    pub rho: f64,
    pub emulator: AbmEmulatorKind,
    /// Time-averaged absolute difference of troop spread.
    pub spread_error: f64,
    /// Time-averaged absolute difference of troop elongation over the time
    /// points where both series are finite.
    pub elongation_error: f64,
    /// Time-averaged simulated troop spread.
    pub mean_spread: f64,
}

fn discrepancy(sim: &[(f64, f64)], emu: &[(f64, f64)]) -> (f64, f64) {
    let spread = sim.iter().zip(emu).map(|(a, b)| (a.0 - b.0).abs()).sum::<f64>() / sim.len() as f64;
    let finite: Vec<f64> = sim
        .iter()
        .zip(emu)
        .filter(|(a, b)| a.1.is_finite() && b.1.is_finite())
        .map(|(a, b)| (a.1 - b.1).abs())
        .collect();
    let elong = if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 };
    (spread, elong)
}

/// Simulate each test case, emulate it with every configured emulator and
/// compare troop spread and elongation over time.
///
/// Test cases reuse the tensor's initial state and noise seed.
pub fn abm_experiment(cfg: &AbmExperimentConfig, seed: RngSeed, out: Option<&Path>) -> Result<Vec<AbmRow>, CliError> {
    let setup = AbmSetup::build(cfg, seed)?;
    let factors = setup.factors(cfg)?;
    let pairs = cfg
        .emulators
        .iter()
        .map(|&k| Ok((k, setup.emulators(cfg, &factors, k, seed)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut rows = Vec::new();
    for (c, case) in cfg.cases.iter().enumerate() {
        let case_no = c + 1;
        let params = AbmParams { v: case.v, rho: case.rho, ..base_params(cfg) };
        let sim = simulate(&setup.init, &params, setup.noise_seed)?;
        let sim_metrics = metric_series(&sim);
        let mean_spread = sim_metrics.iter().map(|m| m.0).sum::<f64>() / sim_metrics.len() as f64;
        if let Some(dir) = out {
            sim.write_csv(create(dir, &format!("case{case_no}_simulated.csv"))?)?;
            write_metric_csv(create(dir, &format!("case{case_no}_simulated_metrics.csv"))?, &sim_metrics)?;
        }
        for (kind, pair) in &pairs {
            let emu = emulated_trajectories(pair, case.v, case.rho)?;
            let emu_metrics = metric_series(&emu);
            let (spread_error, elongation_error) = discrepancy(&sim_metrics, &emu_metrics);
            log::info!(
                "case {case_no} (v = {}, rho = {}), {} emulator: spread error {spread_error:.4}, elongation error {elongation_error:.4}",
                case.v,
                case.rho,
                kind.name()
            );
            if let Some(dir) = out {
                emu.write_csv(create(dir, &format!("case{case_no}_{}.csv", kind.name()))?)?;
                write_metric_csv(create(dir, &format!("case{case_no}_{}_metrics.csv", kind.name()))?, &emu_metrics)?;
            }
            rows.push(AbmRow {
                case: case_no,
                v: case.v,
                rho: case.rho,
                emulator: *kind,
                spread_error,
                elongation_error,
                mean_spread,
            });
        }
    }
    if let Some(dir) = out {
        if cfg.save_artifacts {
            setup.tensors.x.save(dir.join("abm_x.temu1"))?;
            setup.tensors.y.save(dir.join("abm_y.temu1"))?;
            for (kind, pair) in &pairs {
                pair.x.save(dir.join(format!("emulator_x_{}.temu", kind.name())))?;
                pair.y.save(dir.join(format!("emulator_y_{}.temu", kind.name())))?;
            }
        }
        let mut w = create(dir, "abm_discrepancy.csv")?;
        writeln!(w, "case,v,rho,emulator,spread_error,elongation_error,mean_spread")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.case,
                r.v,
                r.rho,
                r.emulator.name(),
                r.spread_error,
                r.elongation_error,
                r.mean_spread
            )?;
        }
        w.flush()?;
    }
    Ok(rows)
}

pub struct CalibrationRun {
    pub observations: ObservationSet,
    pub grids: Grids,
    pub chain: Chain,
    pub summary: ChainSummary,
}

/// Position emulators for calibration, built from `cfg.abm` with the
/// configured surrogate assignment.
pub fn calibration_emulators(cfg: &CalibrateConfig, seed: RngSeed) -> Result<EmulatorPair, CliError> {
    let setup = AbmSetup::build(&cfg.abm, seed)?;
    let factors = setup.factors(&cfg.abm)?;
    setup.emulators(&cfg.abm, &factors, cfg.emulator, seed)
}

/// Emulated positions at `(v, rho)` with Gaussian noise of standard
/// deviation `noise_sd` added to each coordinate.
pub fn synthetic_observations(
    pair: &EmulatorPair,
    v: f64,
    rho: f64,
    noise_sd: f64,
    seed: RngSeed,
) -> Result<ObservationSet, CliError> {
    use rand_distr::{Distribution, Normal};
    use temu::calibrate::PositionModel;
    let (px, py) = pair.positions(v, rho)?;
    let normal = Normal::new(0.0, noise_sd).map_err(|e| CliError::Config(e.to_string()))?;
    let mut rng = seed.rng();
    let mut records = Vec::with_capacity(px.len());
    for time in 0..px.ncols() {
        for agent in 0..px.nrows() {
            let x = px[(agent, time)] + normal.sample(&mut rng);
            let y = py[(agent, time)] + normal.sample(&mut rng);
            records.push(Observation { agent, time, x, y });
        }
    }
    Ok(ObservationSet::new(records)?)
}

/// Gibbs sampling of `(rho, v, σ²_x, σ²_y)`.
///
/// Without `observations`, synthetic data are drawn from the emulators at
/// the configured truth with seed `seed.split(6)`. The chain uses
/// `seed.split(7)`.
pub fn calibrate(
    cfg: &CalibrateConfig,
    seed: RngSeed,
    observations: Option<ObservationSet>,
    emulators: Option<EmulatorPair>,
    out: Option<&Path>,
) -> Result<CalibrationRun, CliError> {
    let pair = match emulators {
        Some(p) => p,
        None => calibration_emulators(cfg, seed)?,
    };
    let synthetic = observations.is_none();
    let observations = match observations {
        Some(o) => o,
        None => {
            let s = cfg.synthetic;
            synthetic_observations(&pair, s.v, s.rho, s.noise_sd, seed.split(6))?
        }
    };
    let dims = pair.x.output_dims();
    observations.check_grid(dims[0], dims[1])?;
    let grids = Grids::spanning(&cfg.priors, cfg.grid_points);
    log::info!("Gibbs sampling {} iterations over {} observations", cfg.iterations, observations.len());
    let chain = gibbs(&observations, &cfg.priors, &grids, cfg.iterations, seed.split(7), &pair)?;
    let summary = chain_summary(&chain, cfg.burn_in)?;
    if let Some(dir) = out {
        let mut w = create(dir, "chain.csv")?;
        chain.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create(dir, "summary.json")?;
        serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| CliError::Other(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        if synthetic {
            let mut w = create(dir, "observations.csv")?;
            writeln!(w, "agent_id,time_index,x,y")?;
            for r in observations.records() {
                writeln!(w, "{},{},{},{}", r.agent, r.time, r.x, r.y)?;
            }
            w.flush()?;
        }
    }
    Ok(CalibrationRun { observations, grids, chain, summary })
}
