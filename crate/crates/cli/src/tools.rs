//! File-level tools: fit an emulator to a stored tensor, predict, bootstrap
//! and describe files.

use std::io::{Read, Write};
use std::path::Path;

use temu::emulator::EMULATOR_MAGIC;
use temu::tensor::{hosvd, TENSOR_MAGIC};
use temu::{Matrix, ModeSpec, RngSeed, SurrogateConfig, SurrogateKind, Tensor, TensorEmulator};

use crate::CliError;

/// Numeric CSV with a header row; one matrix row per record.
pub fn read_matrix_csv(path: &Path) -> Result<Matrix, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut width = None;
    for row in rdr.records() {
        let row = row.map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        let line = row.position().map_or(0, |p| p.line());
        let parsed = row
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| {
                CliError::Core(temu::Error::Format(format!("{} line {line}: non-numeric field", path.display())))
            })?;
        if *width.get_or_insert(parsed.len()) != parsed.len() {
            return Err(CliError::Core(temu::Error::Format(format!(
                "{} line {line}: expected {} fields, found {}",
                path.display(),
                width.unwrap_or(0),
                parsed.len()
            ))));
        }
        values.extend(parsed);
    }
    let width =
        width.ok_or_else(|| CliError::Core(temu::Error::Format(format!("{}: no data rows", path.display()))))?;
    Ok(Matrix::from_row_slice(values.len() / width, width, &values))
}

/// Parse `grid` or `<kind>:<inputs.csv>` (kind one of gp, rf, nn).
pub fn parse_mode(arg: &str, config: &SurrogateConfig) -> Result<ModeSpec, CliError> {
    if arg == "grid" {
        return Ok(ModeSpec::Grid);
    }
    let (kind, path) = arg
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("mode `{arg}` must be `grid` or `<gp|rf|nn>:<inputs.csv>`")))?;
    let kind: SurrogateKind = kind.parse().map_err(|e| CliError::Config(format!("mode `{arg}`: {e}")))?;
    Ok(ModeSpec::Learned { kind, inputs: read_matrix_csv(Path::new(path))?, config: config.clone() })
}

/// Core size above which `fit` warns.
pub const CORE_WARNING: usize = 1_000_000;

/// Emulator of a stored tensor; ranks default to full.
pub fn fit_tensor(
    tensor: &Tensor,
    ranks: Option<&[usize]>,
    specs: Vec<ModeSpec>,
    seed: RngSeed,
) -> Result<TensorEmulator, CliError> {
    let ranks = ranks.map_or_else(|| tensor.dims().to_vec(), <[usize]>::to_vec);
    let core: usize = ranks.iter().product();
    if core > CORE_WARNING {
        log::warn!("core tensor has {core} elements; consider lower ranks");
    }
    let factors = hosvd(tensor, &ranks)?;
    Ok(TensorEmulator::from_factors(factors, specs, seed)?)
}

/// Split each query row into one slice per learned mode.
fn split_query<'a>(e: &TensorEmulator, row: &'a [f64]) -> Result<Vec<&'a [f64]>, CliError> {
    let widths: Vec<usize> = e
        .specs()
        .iter()
        .filter_map(|s| match s {
            ModeSpec::Learned { inputs, .. } => Some(inputs.ncols()),
            ModeSpec::Grid => None,
        })
        .collect();
    let total: usize = widths.iter().sum();
    if row.len() != total {
        return Err(CliError::Config(format!(
            "query rows need {total} columns (learned-mode input widths {widths:?}), found {}",
            row.len()
        )));
    }
    let mut parts = Vec::with_capacity(widths.len());
    let mut start = 0;
    for w in widths {
        parts.push(&row[start..start + w]);
        start += w;
    }
    Ok(parts)
}

fn write_cells<W: Write>(w: &mut W, prefix: &str, t: &Tensor) -> Result<(), CliError> {
    let dims = t.dims();
    let mut idx = vec![0usize; dims.len()];
    for v in t.data() {
        let cells: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
        writeln!(w, "{prefix},{},{v}", cells.join(","))?;
        for (k, n) in dims.iter().enumerate() {
            idx[k] += 1;
            if idx[k] < *n {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(())
}

fn index_header(order: usize) -> String {
    (0..order).map(|k| format!("index_{k}")).collect::<Vec<_>>().join(",")
}

/// Long-format CSV `query,index_0..,value` of every emulated output cell.
pub fn predict<W: Write>(e: &TensorEmulator, queries: &Matrix, mut w: W) -> Result<(), CliError> {
    writeln!(w, "query,{},value", index_header(e.output_dims().len()))?;
    for (q, row) in queries.row_iter().enumerate() {
        let row: Vec<f64> = row.iter().copied().collect();
        let t = e.emulate(&split_query(e, &row)?)?;
        write_cells(&mut w, &q.to_string(), &t)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format CSV `query,replicate,index_0..,value` of `b` bootstrap
/// samples per query; query `q` uses seed `seed.split(q)`.
pub fn bootstrap<W: Write>(
    e: &TensorEmulator,
    queries: &Matrix,
    b: usize,
    seed: RngSeed,
    mut w: W,
) -> Result<(), CliError> {
    writeln!(w, "query,replicate,{},value", index_header(e.output_dims().len()))?;
    for (q, row) in queries.row_iter().enumerate() {
        let row: Vec<f64> = row.iter().copied().collect();
        let samples = e.bootstrap_predict(&split_query(e, &row)?, b, seed.split(q as u64))?;
        for (i, t) in samples.iter().enumerate() {
            write_cells(&mut w, &format!("{q},{i}"), t)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Human-readable description of a tensor or emulator file.
pub fn describe(path: &Path) -> Result<String, CliError> {
    let mut head = [0u8; 15];
    let n = std::fs::File::open(path).and_then(|mut f| f.read(&mut head)).map_err(|e| CliError::io(path, e))?;
    let head = &head[..n];
    if head.starts_with(EMULATOR_MAGIC) {
        let e = TensorEmulator::load(path)?;
        let specs: Vec<&str> = e.specs().iter().map(ModeSpec::tag).collect();
        Ok(format!(
            "emulator\norder: {}\ndims: {:?}\nranks: {:?}\nmodes: {}\noutput dims: {:?}",
            e.order(),
            e.factors().dims(),
            e.factors().ranks(),
            specs.join(","),
            e.output_dims()
        ))
    } else if head.starts_with(TENSOR_MAGIC) {
        let t = Tensor::load(path)?;
        let (min, max) =
            t.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Ok(format!(
            "tensor\norder: {}\ndims: {:?}\ncells: {}\nfrobenius norm: {}\nmin: {min}\nmax: {max}",
            t.order(),
            t.dims(),
            t.len(),
            t.frobenius_norm()
        ))
    } else {
        Err(CliError::Core(temu::Error::Format(format!("{}: not a tensor or emulator file", path.display()))))
    }
}
