//! Tensor emulators: a truncated HOSVD whose factor rows are either used
//! directly (grid modes) or predicted from continuous coordinates by
//! per-column surrogates (learned modes).
//!
//! The first-order [`SvdEmulator`] for matrices of simulator runs is the
//! two-mode special case and is kept as a baseline.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::binio;
use crate::design::RngSeed;
use crate::error::{arg_err, Error, Result};
use crate::surrogate::{fit_mode_surrogates, Surrogate, SurrogateConfig, SurrogateKind};
use crate::tensor::{hosvd, HosvdFactors, Tensor};
use crate::Matrix;

pub const EMULATOR_MAGIC: &[u8] = b"TEMU-EMULATOR1\n";

/// How one tensor mode is evaluated.
#[derive(Clone, Debug, PartialEq)]
pub enum ModeSpec {
    /// Only the training indices are available; factor rows are used as is.
    Grid,
    /// Factor columns are regressed on `inputs` (one row per index of the
    /// mode).
    Learned { kind: SurrogateKind, inputs: Matrix, config: SurrogateConfig },
}

impl ModeSpec {
    pub fn learned(kind: SurrogateKind, inputs: Matrix) -> Self {
        ModeSpec::Learned { kind, inputs, config: SurrogateConfig::default() }
    }

    pub fn is_grid(&self) -> bool {
        matches!(self, ModeSpec::Grid)
    }

    /// Short tag: `grid`, `gp`, `rf` or `nn`.
    pub fn tag(&self) -> &'static str {
        match self {
            ModeSpec::Grid => "grid",
            ModeSpec::Learned { kind, .. } => kind.name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LearnedMode {
    surrogates: Vec<Surrogate>,
    residuals: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorEmulator {
    factors: HosvdFactors,
    specs: Vec<ModeSpec>,
    learned: Vec<Option<LearnedMode>>,
}

/// Truncated HOSVD of `t` at `ranks`, then surrogates for every learned mode.
///
/// Mode `k` uses seed `seed.split(k)`; its column `j` uses
/// `seed.split(k).split(j)`.
pub fn build_emulator(t: &Tensor, ranks: &[usize], specs: Vec<ModeSpec>, seed: RngSeed) -> Result<TensorEmulator> {
    check_specs(t.dims(), &specs)?;
    let factors = hosvd(t, ranks)?;
    TensorEmulator::from_factors(factors, specs, seed)
}

fn check_specs(dims: &[usize], specs: &[ModeSpec]) -> Result<()> {
    if specs.len() != dims.len() {
        return arg_err(format!("{} mode specs for an order-{} tensor", specs.len(), dims.len()));
    }
    for (k, spec) in specs.iter().enumerate() {
        if let ModeSpec::Learned { inputs, config, .. } = spec {
            if inputs.nrows() != dims[k] {
                return arg_err(format!("mode {k}: {} input rows for a mode of size {}", inputs.nrows(), dims[k]));
            }
            if inputs.ncols() == 0 {
                return arg_err(format!("mode {k}: learned inputs need at least one column"));
            }
            config.validate()?;
        }
    }
    Ok(())
}

impl TensorEmulator {
    /// Fit surrogates on existing factors, so one decomposition can serve
    /// several surrogate combinations.
    pub fn from_factors(factors: HosvdFactors, specs: Vec<ModeSpec>, seed: RngSeed) -> Result<TensorEmulator> {
        check_specs(&factors.dims(), &specs)?;
        let mut learned = Vec::with_capacity(specs.len());
        for (k, spec) in specs.iter().enumerate() {
            let ModeSpec::Learned { kind, inputs, config } = spec else {
                learned.push(None);
                continue;
            };
            let u = &factors.factors()[k];
            let surrogates = fit_mode_surrogates(inputs, u, *kind, config, seed.split(k as u64))?;
            let mut residuals = Matrix::zeros(u.nrows(), u.ncols());
            for (j, s) in surrogates.iter().enumerate() {
                let fitted = s.predict_rows(inputs)?;
                for (i, f) in fitted.into_iter().enumerate() {
                    residuals[(i, j)] = u[(i, j)] - f;
                }
            }
            learned.push(Some(LearnedMode { surrogates, residuals }));
        }
        Ok(TensorEmulator { factors, specs, learned })
    }

    pub fn factors(&self) -> &HosvdFactors {
        &self.factors
    }

    pub fn specs(&self) -> &[ModeSpec] {
        &self.specs
    }

    pub fn order(&self) -> usize {
        self.specs.len()
    }

    /// Indices of the learned modes, ascending.
    pub fn learned_modes(&self) -> Vec<usize> {
        (0..self.order()).filter(|&k| !self.specs[k].is_grid()).collect()
    }

    /// Shape of an emulated output: the sizes of the grid modes, or `[1]`
    /// when every mode is learned.
    pub fn output_dims(&self) -> Vec<usize> {
        let dims = self.factors.dims();
        let out: Vec<usize> = (0..self.order()).filter(|&k| self.specs[k].is_grid()).map(|k| dims[k]).collect();
        if out.is_empty() {
            vec![1]
        } else {
            out
        }
    }

    pub fn surrogates(&self, mode: usize) -> Option<&[Surrogate]> {
        self.learned.get(mode)?.as_ref().map(|l| l.surrogates.as_slice())
    }

    /// Training residuals of a learned mode: factor rows minus surrogate
    /// predictions at the training inputs (`n_k × r_k`).
    pub fn residuals(&self, mode: usize) -> Option<&Matrix> {
        self.learned.get(mode)?.as_ref().map(|l| &l.residuals)
    }

    /// Replace the residual matrix of a learned mode.
    pub fn set_residuals(&mut self, mode: usize, residuals: Matrix) -> Result<()> {
        let Some(Some(l)) = self.learned.get_mut(mode) else {
            return arg_err(format!("mode {mode} is not a learned mode"));
        };
        if residuals.ncols() != l.residuals.ncols() || residuals.nrows() == 0 {
            return arg_err(format!(
                "residual matrix for mode {mode} must have {} columns and at least one row",
                l.residuals.ncols()
            ));
        }
        if !residuals.iter().all(|v| v.is_finite()) {
            return arg_err("residuals must be finite");
        }
        l.residuals = residuals;
        Ok(())
    }

    /// Surrogate predictions `û_k(query_k)` for every learned mode.
    pub fn learned_rows(&self, query: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let modes = self.learned_modes();
        if query.len() != modes.len() {
            return arg_err(format!("{} query vectors for {} learned modes", query.len(), modes.len()));
        }
        modes
            .iter()
            .zip(query)
            .map(|(&k, q)| {
                let l = self.learned[k].as_ref().expect("learned mode");
                l.surrogates
                    .iter()
                    .map(|s| {
                        let v = s.predict(q).map_err(|e| match e {
                            Error::Argument(m) => Error::Argument(format!("mode {k}: {m}")),
                            other => other,
                        })?;
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(Error::Numerical(format!("mode {k}: surrogate produced a non-finite value")))
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Emulated output at one coordinate vector per learned mode (ascending
    /// mode order).
    pub fn emulate(&self, query: &[&[f64]]) -> Result<Tensor> {
        let rows = self.learned_rows(query)?;
        self.contract(&rows)
    }

    /// Core contracted with the given learned-mode rows, then with the grid
    /// factors.
    pub fn contract(&self, rows: &[Vec<f64>]) -> Result<Tensor> {
        let modes = self.learned_modes();
        if rows.len() != modes.len() {
            return arg_err(format!("{} rows for {} learned modes", rows.len(), modes.len()));
        }
        let mut t = self.factors.core().clone();
        for (&k, row) in modes.iter().zip(rows) {
            let r = self.factors.ranks()[k];
            if row.len() != r {
                return arg_err(format!("mode {k}: row of length {} for rank {r}", row.len()));
            }
            t = t.mode_multiply(&Matrix::from_row_slice(1, r, row), k)?;
        }
        for k in 0..self.order() {
            if self.specs[k].is_grid() {
                t = t.mode_multiply(&self.factors.factors()[k], k)?;
            }
        }
        if !t.is_finite() {
            return Err(Error::Numerical("emulated output is not finite".into()));
        }
        Tensor::new(self.output_dims(), t.into_data())
    }

    /// `b` predictive samples. Replicate `i` draws, independently for each
    /// learned mode, one residual row (uniformly, with replacement) from
    /// seed `seed.split(i)` and adds it to that mode's surrogate row.
    pub fn bootstrap_predict(&self, query: &[&[f64]], b: usize, seed: RngSeed) -> Result<Vec<Tensor>> {
        if b == 0 {
            return arg_err("bootstrap needs at least one replicate");
        }
        let rows = self.learned_rows(query)?;
        let modes = self.learned_modes();
        let residuals: Vec<&Matrix> =
            modes.iter().map(|&k| &self.learned[k].as_ref().expect("learned").residuals).collect();
        (0..b)
            .into_par_iter()
            .map(|i| {
                let mut rng = seed.split(i as u64).rng();
                let shifted: Vec<Vec<f64>> = rows
                    .iter()
                    .zip(&residuals)
                    .map(|(row, res)| {
                        let j = rng.random_range(0..res.nrows());
                        row.iter().enumerate().map(|(c, v)| v + res[(j, c)]).collect()
                    })
                    .collect();
                self.contract(&shifted)
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TensorEmulator> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Magic line, ASCII header (`K`, dims, ranks, mode tags), the core in
    /// tensor-file format, factor matrices, then for each learned mode its
    /// inputs, residuals, JSON config and surrogates.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        w.write_all(EMULATOR_MAGIC)?;
        writeln!(w, "{}", self.order())?;
        writeln!(w, "{}", join(&self.factors.dims()))?;
        writeln!(w, "{}", join(self.factors.ranks()))?;
        writeln!(w, "{}", self.specs.iter().map(|s| s.tag()).collect::<Vec<_>>().join(" "))?;
        self.factors.core().write_to(&mut *w)?;
        for f in self.factors.factors() {
            binio::write_matrix(w, f)?;
        }
        for (spec, l) in self.specs.iter().zip(&self.learned) {
            if let (ModeSpec::Learned { inputs, config, .. }, Some(l)) = (spec, l) {
                binio::write_matrix(w, inputs)?;
                binio::write_matrix(w, &l.residuals)?;
                let json = serde_json::to_vec(config).map_err(|e| Error::Format(e.to_string()))?;
                binio::write_bytes(w, &json)?;
                for s in &l.surrogates {
                    s.write_to(w)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<TensorEmulator> {
        binio::expect_magic(r, EMULATOR_MAGIC)?;
        let parse_list = |line: String, what: &str| -> Result<Vec<usize>> {
            line.split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| Error::Format(format!("bad {what} entry {t:?}"))))
                .collect()
        };
        let k = binio::read_line(r, 32)?.trim().parse::<usize>().map_err(|_| Error::Format("bad mode count".into()))?;
        if k == 0 || k > 64 {
            return Err(Error::Format(format!("unsupported mode count {k}")));
        }
        let dims = parse_list(binio::read_line(r, 4096)?, "dimension")?;
        let ranks = parse_list(binio::read_line(r, 4096)?, "rank")?;
        let tags: Vec<String> = binio::read_line(r, 4096)?.split_whitespace().map(str::to_owned).collect();
        if dims.len() != k || ranks.len() != k || tags.len() != k {
            return Err(Error::Format("header lists disagree with the mode count".into()));
        }
        let core = Tensor::read_from(&mut *r)?;
        if core.dims() != ranks.as_slice() {
            return Err(Error::Format("core dimensions differ from the header ranks".into()));
        }
        let mut factors = Vec::with_capacity(k);
        for m in 0..k {
            let f = binio::read_matrix(r)?;
            if f.shape() != (dims[m], ranks[m]) {
                return Err(Error::Format(format!("factor {m} has the wrong shape")));
            }
            factors.push(f);
        }
        let factors = HosvdFactors::new(core, factors).map_err(|e| Error::Format(e.to_string()))?;
        let mut specs = Vec::with_capacity(k);
        let mut learned = Vec::with_capacity(k);
        for (m, tag) in tags.iter().enumerate() {
            if tag == "grid" {
                specs.push(ModeSpec::Grid);
                learned.push(None);
                continue;
            }
            let kind: SurrogateKind = tag.parse().map_err(|_| Error::Format(format!("unknown mode tag {tag:?}")))?;
            let inputs = binio::read_matrix(r)?;
            let residuals = binio::read_matrix(r)?;
            if inputs.nrows() != dims[m] || residuals.shape() != (dims[m], ranks[m]) {
                return Err(Error::Format(format!("mode {m} sections have the wrong shape")));
            }
            let config: SurrogateConfig = serde_json::from_slice(&binio::read_bytes(r)?)
                .map_err(|e| Error::Format(format!("mode {m} config: {e}")))?;
            let mut surrogates = Vec::with_capacity(ranks[m]);
            for _ in 0..ranks[m] {
                let s = Surrogate::read_from(r)?;
                if s.kind() != kind || s.dim() != inputs.ncols() {
                    return Err(Error::Format(format!("mode {m} surrogate does not match its spec")));
                }
                surrogates.push(s);
            }
            specs.push(ModeSpec::Learned { kind, inputs, config });
            learned.push(Some(LearnedMode { surrogates, residuals }));
        }
        Ok(TensorEmulator { factors, specs, learned })
    }
}

/// First-order emulator for a matrix of runs `C` (`M × N`, one column per
/// run): `c(θ) ≈ basis · v̂(θ)`, where `basis` is the leading `r` columns
/// of `U D` and `v̂` regresses the leading right singular vectors on the
/// run inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdEmulator {
    basis: Matrix,
    surrogates: Vec<Surrogate>,
    residuals: Matrix,
}

/// Surrogates use seed `seed.split(1)`, the seed of the second mode of a
/// two-mode [`TensorEmulator`], so both give the same predictions.
pub fn build_svd_emulator(
    c: &Matrix,
    r: usize,
    kind: SurrogateKind,
    inputs: &Matrix,
    config: &SurrogateConfig,
    seed: RngSeed,
) -> Result<SvdEmulator> {
    let (m, n) = c.shape();
    if r == 0 || r > m.min(n) {
        return arg_err(format!("rank {r} must lie in 1..={}", m.min(n)));
    }
    if inputs.nrows() != n {
        return arg_err(format!("{} input rows for {n} runs", inputs.nrows()));
    }
    let t = Tensor::from_matrix(c);
    let v = t.mode_singular_vectors(1, r)?;
    let basis = c * &v;
    let surrogates = fit_mode_surrogates(inputs, &v, kind, config, seed.split(1))?;
    let mut residuals = Matrix::zeros(n, r);
    for (j, s) in surrogates.iter().enumerate() {
        for (i, f) in s.predict_rows(inputs)?.into_iter().enumerate() {
            residuals[(i, j)] = v[(i, j)] - f;
        }
    }
    Ok(SvdEmulator { basis, surrogates, residuals })
}

impl SvdEmulator {
    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn residuals(&self) -> &Matrix {
        &self.residuals
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn emulate(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let v: Vec<f64> = self.surrogates.iter().map(|s| s.predict(theta)).collect::<Result<_>>()?;
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Numerical("surrogate produced a non-finite value".into()));
        }
        let out = &self.basis * nalgebra::DVector::from_vec(v);
        Ok(out.as_slice().to_vec())
    }
}
