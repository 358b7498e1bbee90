//! CSV artifacts shared by both solvers and the plotting scripts.
//!
//! Every file starts with a header row. Reals are written in scientific
//! notation with 17 significant digits, which reads back bit-exactly.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::eval::{ExploitabilityReport, TrajectoryReport};
use crate::exact::StageDiagnostic;
use crate::prescription::{PolicyAtlas, Prescription};
use crate::rl::RlDiagnostic;
use crate::simplex::{build_grid, MeanFieldState, SimplexGrid};
use crate::tables::StageTables;

/// Formats a real so that parsing the text returns the same `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row of `diagnostics.csv`, common to both solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub stage: usize,
    pub grid_index: usize,
    pub converged: bool,
    pub iters: usize,
    pub residual: f64,
    /// Last sup-norm policy change (model-free solver only).
    pub change: Option<f64>,
    /// Distance to a different fixed point found by restarts (exact solver only).
    pub alternative: Option<f64>,
}

impl From<&StageDiagnostic> for DiagnosticRow {
    fn from(d: &StageDiagnostic) -> Self {
        Self {
            stage: d.stage,
            grid_index: d.grid_index,
            converged: d.converged,
            iters: d.iters,
            residual: d.residual,
            change: None,
            alternative: d.alternative,
        }
    }
}

impl From<&RlDiagnostic> for DiagnosticRow {
    fn from(d: &RlDiagnostic) -> Self {
        Self {
            stage: d.stage,
            grid_index: d.grid_index,
            converged: d.converged,
            iters: d.iters,
            residual: d.residual,
            change: Some(d.final_change),
            alternative: None,
        }
    }
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(File::create(path)?)))
}

fn finish<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))?.flush()?;
    Ok(())
}

fn z_header(n_types: usize) -> impl Iterator<Item = String> {
    (0..n_types).map(|i| format!("z_{i}"))
}

pub fn write_atlas(path: &Path, atlas: &PolicyAtlas) -> Result<()> {
    let grid = atlas.grid();
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string(), "z_index".to_string()];
    header.extend(z_header(grid.n_types()));
    header.extend(["x", "a", "prob"].map(String::from));
    w.write_record(&header)?;
    for t in 1..=atlas.horizon() {
        for (g, z) in grid.points().iter().enumerate() {
            let zs: Vec<String> = z.probs().iter().map(|p| fmt_real(*p)).collect();
            let gamma = atlas.at(t, g);
            for x in 0..gamma.n_types() {
                for a in 0..gamma.n_actions() {
                    let mut rec = vec![t.to_string(), g.to_string()];
                    rec.extend(zs.iter().cloned());
                    rec.extend([x.to_string(), a.to_string(), fmt_real(gamma.prob(x, a))]);
                    w.write_record(&rec)?;
                }
            }
        }
    }
    finish(w)
}

pub fn write_values(path: &Path, tables: &[StageTables]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "z_index", "x", "v"])?;
    for (i, table) in tables.iter().enumerate() {
        for g in 0..table.n_points() {
            for x in 0..table.n_types() {
                w.write_record([
                    (i + 1).to_string(),
                    g.to_string(),
                    x.to_string(),
                    fmt_real(table.v(g, x)),
                ])?;
            }
        }
    }
    finish(w)
}

pub fn write_diagnostics(path: &Path, rows: &[DiagnosticRow]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(fmt_real).unwrap_or_default();
    let mut w = writer(path)?;
    w.write_record([
        "t",
        "z_index",
        "converged",
        "iters",
        "residual",
        "change",
        "alternative",
    ])?;
    for d in rows {
        w.write_record([
            d.stage.to_string(),
            d.grid_index.to_string(),
            d.converged.to_string(),
            d.iters.to_string(),
            fmt_real(d.residual),
            opt(d.change),
            opt(d.alternative),
        ])?;
    }
    finish(w)
}

pub fn write_exploitability(path: &Path, report: &ExploitabilityReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "z_index", "x", "gap"])?;
    for t in 1..=report.horizon() {
        for g in 0..report.n_points() {
            for x in 0..report.n_types() {
                w.write_record([
                    t.to_string(),
                    g.to_string(),
                    x.to_string(),
                    fmt_real(report.gap(t, g, x)),
                ])?;
            }
        }
    }
    finish(w)
}

pub fn write_trajectory(path: &Path, report: &TrajectoryReport) -> Result<()> {
    let n_types = report.statistical_z.first().map_or(0, MeanFieldState::n_types);
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string(), "kind".to_string()];
    header.extend(z_header(n_types));
    w.write_record(&header)?;
    for (kind, flow) in [("stat", &report.statistical_z), ("emp", &report.empirical_z)] {
        for (i, z) in flow.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string(), kind.to_string()];
            rec.extend(z.probs().iter().map(|p| fmt_real(*p)));
            w.write_record(&rec)?;
        }
    }
    finish(w)
}

/// `t, atlas_distance, max_value_diff` per stage.
pub fn write_comparison(path: &Path, rows: &[(usize, f64, Option<f64>)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "atlas_distance", "max_value_diff"])?;
    for (t, tv, dv) in rows {
        w.write_record([t.to_string(), fmt_real(*tv), dv.map(fmt_real).unwrap_or_default()])?;
    }
    finish(w)
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().from_reader(File::open(path)?))
}

fn parse<T: std::str::FromStr>(field: &str, what: &str, line: u64) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Csv(format!("line {line}: cannot parse {what} from `{field}`")))
}

fn check_header(found: &csv::StringRecord, expected: &[String], path: &Path) -> Result<()> {
    if found.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Csv(format!(
            "{}: header `{}` does not match `{}`",
            path.display(),
            found.iter().collect::<Vec<_>>().join(","),
            expected.join(",")
        )));
    }
    Ok(())
}

/// Resolution `M` for which the simplex grid over `n_types` has `n_points`.
fn resolution_for(n_types: usize, n_points: usize) -> Result<usize> {
    let count = |m: usize| (1..n_types).fold(1u128, |acc, i| acc * (m + i) as u128 / i as u128);
    (1..=n_points)
        .find(|&m| count(m) == n_points as u128)
        .ok_or_else(|| Error::Csv(format!("{n_points} points is not a simplex grid over {n_types} types")))
}

/// Reads an atlas written by [`write_atlas`], rebuilding its grid and
/// checking the stored coordinates against it.
pub fn read_atlas(path: &Path) -> Result<PolicyAtlas> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let n_types = headers.len().checked_sub(5).filter(|n| *n >= 1).ok_or_else(|| {
        Error::Csv(format!(
            "{}: atlas header has {} columns",
            path.display(),
            headers.len()
        ))
    })?;
    let mut expected = vec!["t".to_string(), "z_index".to_string()];
    expected.extend(z_header(n_types));
    expected.extend(["x", "a", "prob"].map(String::from));
    check_header(&headers, &expected, path)?;

    struct Row {
        t: usize,
        g: usize,
        z: Vec<f64>,
        x: usize,
        a: usize,
        p: f64,
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, csv::Position::line);
        rows.push(Row {
            t: parse(&rec[0], "t", line)?,
            g: parse(&rec[1], "z_index", line)?,
            z: (0..n_types)
                .map(|i| parse(&rec[2 + i], "z", line))
                .collect::<Result<_>>()?,
            x: parse(&rec[2 + n_types], "x", line)?,
            a: parse(&rec[3 + n_types], "a", line)?,
            p: parse(&rec[4 + n_types], "prob", line)?,
        });
    }
    let horizon = rows.iter().map(|r| r.t).max().unwrap_or(0);
    let n_points = rows.iter().map(|r| r.g + 1).max().unwrap_or(0);
    let n_actions = rows.iter().map(|r| r.a + 1).max().unwrap_or(0);
    if horizon == 0 || rows.len() != horizon * n_points * n_types * n_actions {
        return Err(Error::Csv(format!(
            "{}: incomplete atlas ({} rows)",
            path.display(),
            rows.len()
        )));
    }
    let grid = Arc::new(build_grid(n_types, resolution_for(n_types, n_points)?)?);

    let mut probs = vec![vec![vec![f64::NAN; n_types * n_actions]; n_points]; horizon];
    for r in &rows {
        if r.t == 0 || r.x >= n_types {
            return Err(Error::Csv(format!(
                "{}: index out of range at t={}, x={}",
                path.display(),
                r.t,
                r.x
            )));
        }
        if grid
            .point(r.g)
            .probs()
            .iter()
            .zip(&r.z)
            .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(Error::Csv(format!(
                "{}: z_index {} does not match its coordinates",
                path.display(),
                r.g
            )));
        }
        probs[r.t - 1][r.g][r.x * n_actions + r.a] = r.p;
    }
    let stages = probs
        .into_iter()
        .map(|stage| {
            stage
                .into_iter()
                .map(|p| Prescription::new(n_types, n_actions, p))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    PolicyAtlas::new(grid, n_actions, stages)
}

/// Reads `values.csv` into per-stage tables with only `V` populated.
pub fn read_values(path: &Path, n_actions: usize) -> Result<Vec<StageTables>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    check_header(&headers, &["t", "z_index", "x", "v"].map(String::from), path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, csv::Position::line);
        let t: usize = parse(&rec[0], "t", line)?;
        let g: usize = parse(&rec[1], "z_index", line)?;
        let x: usize = parse(&rec[2], "x", line)?;
        let v: f64 = parse(&rec[3], "v", line)?;
        rows.push((t, g, x, v));
    }
    let horizon = rows.iter().map(|r| r.0).max().unwrap_or(0);
    let n_points = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let n_types = rows.iter().map(|r| r.2 + 1).max().unwrap_or(0);
    if horizon == 0 || rows.len() != horizon * n_points * n_types || rows.iter().any(|r| r.0 == 0) {
        return Err(Error::Csv(format!("{}: incomplete value table", path.display())));
    }
    let mut v = vec![vec![f64::NAN; n_points * n_types]; horizon];
    for (t, g, x, val) in rows {
        v[t - 1][g * n_types + x] = val;
    }
    v.into_iter()
        .map(|vals| StageTables::from_values(n_points, n_types, n_actions, vals, None))
        .collect()
}

/// Writes the grid coordinates: `z_index, z_0..z_{N-1}`.
pub fn write_grid(path: &Path, grid: &SimplexGrid) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["z_index".to_string()];
    header.extend(z_header(grid.n_types()));
    w.write_record(&header)?;
    for (g, z) in grid.points().iter().enumerate() {
        let mut rec = vec![g.to_string()];
        rec.extend(z.probs().iter().map(|p| fmt_real(*p)));
        w.write_record(&rec)?;
    }
    finish(w)
}

/// Whole-file read, used to compare artifacts byte for byte.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}
