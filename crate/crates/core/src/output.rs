//! CSV and JSON artifacts: draws, occupancy, permutation traces, manifests.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::ChainOutput;
use crate::state::{ClassParams, ParameterState};

/// Shortest round-tripping decimal form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Dimensions of the class-indexed blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub classes: usize,
    pub fixed: usize,
    pub random: usize,
    pub survival: usize,
    pub hazard: usize,
}

impl Dims {
    pub fn of(state: &ParameterState) -> Self {
        let c = &state.classes[0];
        Self {
            classes: state.classes.len(),
            fixed: c.beta.len(),
            random: c.sigma_b.nrows(),
            survival: c.gamma.len(),
            hazard: c.gamma_h0.len(),
        }
    }

    /// Column names (1-based indices), `sigma_b` by its upper triangle.
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = (1..=self.classes).map(|g| format!("pi[{g}]")).collect();
        cols.push("sigma_y2".into());
        for g in 1..=self.classes {
            cols.extend((1..=self.fixed).map(|j| format!("beta[{g}][{j}]")));
            for r in 1..=self.random {
                cols.extend((r..=self.random).map(|c| format!("sigma_b[{g}][{r}][{c}]")));
            }
            cols.extend((1..=self.survival).map(|j| format!("gamma[{g}][{j}]")));
            cols.push(format!("alpha[{g}]"));
            cols.extend((1..=self.hazard).map(|j| format!("gamma_h0[{g}][{j}]")));
        }
        cols
    }
}

/// Flatten the parameters of a state in [`Dims::columns`] order.
pub fn state_row(state: &ParameterState) -> Vec<f64> {
    let mut row = state.pi.clone();
    row.push(state.sigma_y2);
    for c in &state.classes {
        row.extend(&c.beta);
        let q = c.sigma_b.nrows();
        for r in 0..q {
            row.extend((r..q).map(|k| c.sigma_b[(r, k)]));
        }
        row.extend(&c.gamma);
        row.push(c.alpha);
        row.extend(&c.gamma_h0);
    }
    row
}

/// Rebuild a state (without latent variables) from a flattened row.
pub fn state_from_row(dims: &Dims, row: &[f64]) -> Result<ParameterState> {
    let expected = dims.columns().len();
    if row.len() != expected {
        return Err(Error::Config(format!("draw row has {} values, expected {expected}", row.len())));
    }
    let mut it = row.iter().copied();
    let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
    let pi = take(dims.classes);
    let sigma_y2 = take(1)[0];
    let mut classes = Vec::with_capacity(dims.classes);
    for _ in 0..dims.classes {
        let beta = take(dims.fixed);
        let q = dims.random;
        let mut sigma_b = DMatrix::zeros(q, q);
        for r in 0..q {
            for (k, v) in (r..q).zip(take(q - r)) {
                sigma_b[(r, k)] = v;
                sigma_b[(k, r)] = v;
            }
        }
        let gamma = take(dims.survival);
        let alpha = take(1)[0];
        let gamma_h0 = take(dims.hazard);
        classes.push(ClassParams { beta, sigma_b, gamma, alpha, gamma_h0 });
    }
    Ok(ParameterState { classes, sigma_y2, pi, v: Vec::new(), b: Vec::new() })
}

/// Infer block sizes from draw column names.
pub fn dims_from_columns(cols: &[String]) -> Result<Dims> {
    let count = |prefix: &str| cols.iter().filter(|c| c.starts_with(prefix)).count();
    let classes = count("pi[");
    if classes == 0 {
        return Err(Error::Config("draws file has no pi[g] columns".into()));
    }
    let fixed = count("beta[1][");
    let sb = count("sigma_b[1][");
    let random = (((8 * sb + 1) as f64).sqrt() as usize - 1) / 2;
    let dims = Dims { classes, fixed, random, survival: count("gamma[1]["), hazard: count("gamma_h0[1][") };
    if dims.columns() != cols {
        return Err(Error::Config("draws file columns do not follow the expected layout".into()));
    }
    Ok(dims)
}

/// Retained draws read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawTable {
    pub iterations: Vec<usize>,
    pub draws: Vec<ParameterState>,
}

pub fn write_draws<W: Write>(writer: W, iterations: &[usize], draws: &[ParameterState]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if let Some(first) = draws.first() {
        let mut header = vec!["iteration".to_string()];
        header.extend(Dims::of(first).columns());
        w.write_record(&header)?;
    }
    for (t, d) in iterations.iter().zip(draws) {
        let mut rec = vec![t.to_string()];
        rec.extend(state_row(d).into_iter().map(fmt_f64));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_draws<R: Read>(reader: R) -> Result<DrawTable> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("iteration") {
        return Err(Error::Config("draws file must start with an 'iteration' column".into()));
    }
    let dims = dims_from_columns(&header[1..])?;
    let mut table = DrawTable { iterations: Vec::new(), draws: Vec::new() };
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::data("", row + 2, format!("cannot parse draw value '{s}'")))
        };
        let iteration = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::data("", row + 2, "bad iteration"))?;
        let values: Vec<f64> = rec.iter().skip(1).map(parse).collect::<Result<_>>()?;
        table.iterations.push(iteration);
        table.draws.push(state_from_row(&dims, &values)?);
    }
    Ok(table)
}

/// Draws CSV of a chain; iterations are reported 1-based.
pub fn write_chain_draws(path: &Path, output: &ChainOutput) -> Result<()> {
    let its: Vec<usize> = output.draw_iterations.iter().map(|t| t + 1).collect();
    write_draws(std::fs::File::create(path)?, &its, &output.draws)
}

/// `iteration,n_1..n_G` for every iteration (1-based).
pub fn write_occupancy<W: Write>(writer: W, occupancy: &[Vec<usize>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let g = occupancy.first().map_or(0, Vec::len);
    let mut header = vec!["iteration".to_string()];
    header.extend((1..=g).map(|k| format!("n_{k}")));
    w.write_record(&header)?;
    for (t, row) in occupancy.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(usize::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_occupancy<R: Read>(reader: R) -> Result<Vec<Vec<usize>>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<usize>().map_err(|_| Error::data("", k + 2, format!("bad count '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// `draw,iteration,label_1..label_G,tied` where `label_k` is the original
/// (1-based) label now called `k`.
pub fn write_permutations<W: Write>(
    writer: W,
    iterations: &[usize],
    permutations: &[Vec<usize>],
    tied_draws: &[usize],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let g = permutations.first().map_or(0, Vec::len);
    let mut header = vec!["draw".to_string(), "iteration".to_string()];
    header.extend((1..=g).map(|k| format!("label_{k}")));
    header.push("tied".into());
    w.write_record(&header)?;
    for (k, perm) in permutations.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string(), iterations.get(k).map_or(String::new(), usize::to_string)];
        rec.extend(perm.iter().map(|p| (p + 1).to_string()));
        rec.push(u8::from(tied_draws.binary_search(&k).is_ok()).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Posterior summary of one scalar column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, SD and central 95% interval of every column.
pub fn summarize_columns(columns: &[String], rows: &[Vec<f64>]) -> Vec<ColumnSummary> {
    columns
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            v.sort_by(f64::total_cmp);
            ColumnSummary {
                parameter: name.clone(),
                mean,
                sd,
                lower: quantile_sorted(&v, 0.025),
                median: quantile_sorted(&v, 0.5),
                upper: quantile_sorted(&v, 0.975),
            }
        })
        .collect()
}

pub fn summarize_draws(draws: &[ParameterState]) -> Vec<ColumnSummary> {
    if draws.is_empty() {
        return Vec::new();
    }
    let rows: Vec<Vec<f64>> = draws.iter().map(state_row).collect();
    summarize_columns(&Dims::of(&draws[0]).columns(), &rows)
}

/// Run manifest written next to every artifact set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub n_subjects: usize,
    pub retained_draws: usize,
    pub acceptance_rates: BTreeMap<String, f64>,
    pub extra: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            inputs: BTreeMap::new(),
            n_subjects: 0,
            retained_draws: 0,
            acceptance_rates: BTreeMap::new(),
            extra: serde_json::Value::Null,
        }
    }

    pub fn with_chain(mut self, output: &ChainOutput) -> Self {
        self.n_subjects = output.n;
        self.retained_draws = output.draws.len();
        self.acceptance_rates = output.acceptance_rates();
        self
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
