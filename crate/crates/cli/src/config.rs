//! Experiment configuration. Every section has defaults, and unknown keys
//! are rejected.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use temu::abm::NoisePolicy;
use temu::calibrate::{InverseGamma, Priors, UniformPrior};
use temu::glacier::{GlacierConstants, GlacierRanges};
use temu::{SurrogateConfig, SurrogateKind};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 2024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub out_dir: String,
    /// Surrogate hyperparameters for `fit`.
    pub surrogate: SurrogateConfig,
    pub glacier: GlacierExperimentConfig,
    pub flat: FlatBaselineConfig,
    pub abm: AbmExperimentConfig,
    pub calibrate: CalibrateConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: DEFAULT_SEED,
            out_dir: "temu-out".into(),
            surrogate: SurrogateConfig::default(),
            glacier: GlacierExperimentConfig::default(),
            flat: FlatBaselineConfig::default(),
            abm: AbmExperimentConfig::default(),
            calibrate: CalibrateConfig::default(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config, CliError> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let g = &self.glacier;
        if g.sizes.is_empty() || g.sizes.iter().any(|&s| s < 2) {
            return bad("glacier.sizes must be non-empty with every s >= 2".into());
        }
        if g.replicates == 0 || g.combinations.is_empty() || g.test_points == 0 || g.max_rank == 0 {
            return bad("glacier.replicates, combinations, test_points and max_rank must be non-zero".into());
        }
        let f = &self.flat;
        if f.train_points < 2 || f.replicates == 0 || f.kinds.is_empty() || f.test_points == 0 {
            return bad("flat.train_points >= 2 and non-zero replicates, kinds, test_points are required".into());
        }
        self.abm.validate("abm")?;
        let c = &self.calibrate;
        c.abm.validate("calibrate.abm")?;
        c.priors.validate().map_err(|e| CliError::Config(format!("calibrate.priors: {e}")))?;
        if c.grid_points == 0 || c.iterations == 0 || c.burn_in >= c.iterations {
            return bad("calibrate needs grid_points >= 1 and burn_in < iterations".into());
        }
        if !(c.synthetic.noise_sd >= 0.0) {
            return bad("calibrate.synthetic.noise_sd must be non-negative".into());
        }
        for s in [&self.surrogate, &g.surrogate, &f.surrogate, &self.abm.surrogate, &c.abm.surrogate] {
            s.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Surrogate kinds for the (space, time, parameter) glacier modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combination {
    Rf,
    Nn,
    Gp,
    /// GP for space and time, RF for parameters.
    Mixed,
}

impl Combination {
    pub fn kinds(self) -> [SurrogateKind; 3] {
        use SurrogateKind::*;
        match self {
            Combination::Rf => [Rf; 3],
            Combination::Nn => [Nn; 3],
            Combination::Gp => [Gp; 3],
            Combination::Mixed => [Gp, Gp, Rf],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Combination::Rf => "rf",
            Combination::Nn => "nn",
            Combination::Gp => "gp",
            Combination::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tensor-mode surrogates with GP lengthscale refinement.
fn experiment_surrogates() -> SurrogateConfig {
    let mut s = SurrogateConfig::default();
    s.gp.refine = true;
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlacierExperimentConfig {
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub combinations: Vec<Combination>,
    pub test_points: usize,
    /// Rank cap for the space and parameter modes; time stays full rank.
    pub max_rank: usize,
    pub ranges: GlacierRanges,
    pub constants: GlacierConstants,
    pub surrogate: SurrogateConfig,
    /// Build tensors above the cell limit.
    pub force: bool,
    /// Write tensors, designs and fitted emulators next to the error report.
    pub save_artifacts: bool,
}

impl Default for GlacierExperimentConfig {
    fn default() -> Self {
        GlacierExperimentConfig {
            sizes: vec![10, 20, 30],
            replicates: 1,
            combinations: vec![Combination::Rf, Combination::Nn, Combination::Gp, Combination::Mixed],
            test_points: 100,
            max_rank: 50,
            ranges: GlacierRanges::default(),
            constants: GlacierConstants::default(),
            surrogate: experiment_surrogates(),
            force: false,
            save_artifacts: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatBaselineConfig {
    pub train_points: usize,
    pub replicates: usize,
    pub kinds: Vec<SurrogateKind>,
    pub test_points: usize,
    pub surrogate: SurrogateConfig,
}

impl Default for FlatBaselineConfig {
    fn default() -> Self {
        FlatBaselineConfig {
            train_points: 10_000,
            replicates: 1,
            kinds: vec![SurrogateKind::Rf, SurrogateKind::Gp, SurrogateKind::Nn],
            test_points: 100,
            surrogate: SurrogateConfig::default(),
        }
    }
}

/// Surrogates for the (v, rho) modes of the x and y position emulators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AbmEmulatorKind {
    /// RF everywhere.
    Rf,
    /// x positions: GP for v, RF for rho; y positions: RF.
    Mixed,
    /// GP everywhere.
    Gp,
}

impl AbmEmulatorKind {
    /// `(x kinds, y kinds)` for the (v, rho) modes.
    pub fn kinds(self) -> ([SurrogateKind; 2], [SurrogateKind; 2]) {
        use SurrogateKind::*;
        match self {
            AbmEmulatorKind::Rf => ([Rf, Rf], [Rf, Rf]),
            AbmEmulatorKind::Mixed => ([Gp, Rf], [Rf, Rf]),
            AbmEmulatorKind::Gp => ([Gp, Gp], [Gp, Gp]),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AbmEmulatorKind::Rf => "rf",
            AbmEmulatorKind::Mixed => "mixed",
            AbmEmulatorKind::Gp => "gp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbmCase {
    pub v: f64,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbmExperimentConfig {
    pub agents: usize,
    pub steps: usize,
    pub v_points: usize,
    pub rho_points: usize,
    pub v_range: (f64, f64),
    pub rho_range: (f64, f64),
    pub alpha: f64,
    pub noise_var: f64,
    /// Side of the square in which initial positions are scattered.
    pub init_box: f64,
    pub noise_policy: NoisePolicy,
    /// Ranks for (agent, time, v, rho); full rank when absent.
    pub ranks: Option<[usize; 4]>,
    pub emulators: Vec<AbmEmulatorKind>,
    pub cases: Vec<AbmCase>,
    pub surrogate: SurrogateConfig,
    pub force: bool,
    pub save_artifacts: bool,
}

impl Default for AbmExperimentConfig {
    fn default() -> Self {
        AbmExperimentConfig {
            agents: 20,
            steps: 101,
            v_points: 32,
            rho_points: 32,
            v_range: (0.1, 1.0),
            rho_range: (5.0, 50.0),
            alpha: 0.5,
            noise_var: 0.025,
            init_box: 10.0,
            noise_policy: NoisePolicy::Shared,
            ranks: None,
            emulators: vec![AbmEmulatorKind::Rf, AbmEmulatorKind::Mixed],
            cases: vec![AbmCase { v: 0.5, rho: 35.0 }, AbmCase { v: 0.5, rho: 5.0 }],
            surrogate: experiment_surrogates(),
            force: false,
            save_artifacts: false,
        }
    }
}

impl AbmExperimentConfig {
    fn validate(&self, section: &str) -> Result<(), CliError> {
        let ok = self.agents >= 1
            && self.steps >= 1
            && self.v_points >= 2
            && self.rho_points >= 2
            && self.v_range.0 > 0.0
            && self.v_range.0 < self.v_range.1
            && self.alpha > 0.0
            && self.alpha < self.rho_range.0
            && self.rho_range.0 < self.rho_range.1
            && self.noise_var >= 0.0
            && self.init_box > 0.0;
        if !ok {
            return Err(CliError::Config(format!(
                "{section}: need agents, steps >= 1, at least 2 design points per parameter, \
                 0 < v range, 0 < alpha < rho range, noise_var >= 0 and init_box > 0"
            )));
        }
        if let Some(r) = self.ranks {
            let dims = [self.agents, self.steps, self.v_points, self.rho_points];
            if r.iter().zip(&dims).any(|(&r, &n)| r == 0 || r > n) {
                return Err(CliError::Config(format!("{section}.ranks {r:?} must lie in 1..=dims {dims:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticObservations {
    pub v: f64,
    pub rho: f64,
    /// Standard deviation of the Gaussian noise added to each coordinate.
    pub noise_sd: f64,
}

impl Default for SyntheticObservations {
    fn default() -> Self {
        SyntheticObservations { v: 0.5, rho: 35.0, noise_sd: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    /// Design of the training tensors behind the position emulators.
    pub abm: AbmExperimentConfig,
    pub emulator: AbmEmulatorKind,
    pub priors: Priors,
    pub grid_points: usize,
    pub iterations: usize,
    pub burn_in: usize,
    /// Used when no observation file is given.
    pub synthetic: SyntheticObservations,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        let ig = InverseGamma { shape: 3.0, scale: 4.0 };
        CalibrateConfig {
            abm: AbmExperimentConfig { init_box: 100.0, emulators: vec![AbmEmulatorKind::Mixed], ..Default::default() },
            emulator: AbmEmulatorKind::Mixed,
            priors: Priors {
                rho: UniformPrior { lo: 5.0, hi: 50.0 },
                v: UniformPrior { lo: 0.1, hi: 1.0 },
                sigma2_x: ig,
                sigma2_y: ig,
            },
            grid_points: temu::calibrate::DEFAULT_GRID_POINTS,
            iterations: 5000,
            burn_in: 1000,
            synthetic: SyntheticObservations::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(Config::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(Config::from_json(r#"{"sed": 1}"#), Err(CliError::Config(_))));
        assert!(matches!(Config::from_json(r#"{"glacier": {"size": [10]}}"#), Err(CliError::Config(_))));
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = Config::from_json(r#"{"glacier": {"sizes": [10], "combinations": ["mixed"]}}"#).unwrap();
        assert_eq!(cfg.glacier.sizes, vec![10]);
        assert_eq!(cfg.glacier.test_points, 100);
        assert_eq!(cfg.seed, DEFAULT_SEED);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_json(r#"{"glacier": {"sizes": [1]}}"#).is_err());
        assert!(Config::from_json(r#"{"calibrate": {"iterations": 10, "burn_in": 10}}"#).is_err());
        assert!(Config::from_json(r#"{"abm": {"ranks": [21, 101, 32, 32]}}"#).is_err());
    }
}
