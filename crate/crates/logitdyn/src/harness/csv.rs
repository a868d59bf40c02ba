//! CSV emission and parsing for trajectory records.
//!
//! The column layout is part of the tool's output contract:
//!
//! ```text
//! step,phase,optimizer,
//! p_0..p_{V-1}, g_0..g_{V-1},
//! e_frozen_1..e_frozen_{V-1}, e_refreshed_1..e_refreshed_{V-1},
//! lambda_1..lambda_{V-1}, alpha_0..alpha_{V-1},
//! y_star,tau,delta_bin,feasible,err_w,err_z,err_g
//! ```
//!
//! which is `7 + 6V` columns for `V` classes. Probability-indexed
//! columns are 0-based; modal columns are 1-based since mode 0 does not
//! exist. Floats are written with 17 significant digits so parsing them
//! back reproduces every bit; rows are sorted by `(optimizer, step)`.

use crate::error::{Error, Result};
use crate::harness::scenario::TrajectoryRecord;

/// Formats one float for emission; 17 significant digits round-trip
/// through `f64` exactly.
fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// The exact header line for a class count.
pub fn csv_header(v: usize) -> String {
    let mut cols: Vec<String> = vec!["step".into(), "phase".into(), "optimizer".into()];
    cols.extend((0..v).map(|i| format!("p_{i}")));
    cols.extend((0..v).map(|i| format!("g_{i}")));
    cols.extend((1..v).map(|k| format!("e_frozen_{k}")));
    cols.extend((1..v).map(|k| format!("e_refreshed_{k}")));
    cols.extend((1..v).map(|k| format!("lambda_{k}")));
    cols.extend((0..v).map(|i| format!("alpha_{i}")));
    for tail in [
        "y_star",
        "tau",
        "delta_bin",
        "feasible",
        "err_w",
        "err_z",
        "err_g",
    ] {
        cols.push(tail.into());
    }
    cols.join(",")
}

/// Renders records to CSV text. Records may arrive in any order; the
/// output is sorted by `(optimizer, step)` and is byte-stable across runs.
pub fn emit_csv(records: &[TrajectoryRecord]) -> Result<String> {
    let Some(first) = records.first() else {
        return Err(Error::EmptySelection("no records to emit".into()));
    };
    let v = first.probs.len();
    for rec in records {
        if rec.probs.len() != v {
            return Err(Error::DimensionMismatch(format!(
                "records mix class counts {v} and {}",
                rec.probs.len()
            )));
        }
    }

    let mut order: Vec<&TrajectoryRecord> = records.iter().collect();
    order.sort_by(|a, b| (&a.optimizer, a.step).cmp(&(&b.optimizer, b.step)));

    let mut out = String::new();
    out.push_str(&csv_header(v));
    out.push('\n');
    for rec in order {
        let mut cols: Vec<String> = vec![
            rec.step.to_string(),
            rec.phase.as_str().to_string(),
            rec.optimizer.clone(),
        ];
        cols.extend(rec.probs.as_slice().iter().map(|&x| fmt_float(x)));
        cols.extend(rec.residual.as_slice().iter().map(|&x| fmt_float(x)));
        cols.extend(rec.e_frozen.as_slice().iter().map(|&x| fmt_float(x)));
        cols.extend(rec.e_refreshed.as_slice().iter().map(|&x| fmt_float(x)));
        cols.extend(rec.eigenvalues.iter().map(|&x| fmt_float(x)));
        cols.extend(rec.alphas.alpha.iter().map(|&x| fmt_float(x)));
        cols.push(rec.alphas.y_star.to_string());
        cols.push(fmt_float(rec.top2.tau));
        cols.push(fmt_float(rec.top2.delta_bin));
        cols.push(if rec.top2.feasible {
            "1".into()
        } else {
            "0".into()
        });
        cols.push(fmt_float(rec.err_w));
        cols.push(fmt_float(rec.err_z));
        cols.push(fmt_float(rec.err_g));
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Writes [`emit_csv`] output to a file.
pub fn write_csv(path: &std::path::Path, records: &[TrajectoryRecord]) -> Result<()> {
    std::fs::write(path, emit_csv(records)?)?;
    Ok(())
}

/// One parsed CSV row; numeric fields carry exactly the emitted values.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRecord {
    pub step: usize,
    pub phase: String,
    pub optimizer: String,
    pub probs: Vec<f64>,
    pub residual: Vec<f64>,
    pub e_frozen: Vec<f64>,
    pub e_refreshed: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub alpha: Vec<f64>,
    pub y_star: usize,
    pub tau: f64,
    pub delta_bin: f64,
    pub feasible: bool,
    pub err_w: f64,
    pub err_z: f64,
    pub err_g: f64,
}

fn parse_float(field: &str, name: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::InvalidInput(format!("bad float in column {name}: {field:?}")))
}

fn parse_index(field: &str, name: &str) -> Result<usize> {
    field
        .parse::<usize>()
        .map_err(|_| Error::InvalidInput(format!("bad integer in column {name}: {field:?}")))
}

/// Parses CSV text produced by [`emit_csv`], validating the header
/// against the class count it implies.
pub fn parse_csv(text: &str) -> Result<Vec<CsvRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty CSV".into()))?;
    let ncols = header.split(',').count();
    if ncols < 7 + 6 * 2 || (ncols - 7) % 6 != 0 {
        return Err(Error::InvalidInput(format!(
            "column count {ncols} does not match any class count"
        )));
    }
    let v = (ncols - 7) / 6;
    if header != csv_header(v) {
        return Err(Error::InvalidInput(format!(
            "header does not match the layout for {v} classes"
        )));
    }

    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ncols {
            return Err(Error::InvalidInput(format!(
                "row {} has {} columns, expected {ncols}",
                lineno + 2,
                fields.len()
            )));
        }
        let mut it = fields.into_iter();
        let mut take = |name: &str| -> Result<&str> {
            it.next()
                .ok_or_else(|| Error::InvalidInput(format!("missing column {name}")))
        };
        let step = parse_index(take("step")?, "step")?;
        let phase = take("phase")?.to_string();
        if phase != "SFT" && phase != "POST" {
            return Err(Error::InvalidInput(format!("unknown phase {phase:?}")));
        }
        let optimizer = take("optimizer")?.to_string();
        let mut vec_of = |name: &str, n: usize| -> Result<Vec<f64>> {
            (0..n).map(|_| parse_float(take(name)?, name)).collect()
        };
        let probs = vec_of("p", v)?;
        let residual = vec_of("g", v)?;
        let e_frozen = vec_of("e_frozen", v - 1)?;
        let e_refreshed = vec_of("e_refreshed", v - 1)?;
        let eigenvalues = vec_of("lambda", v - 1)?;
        let alpha = vec_of("alpha", v)?;
        let y_star = parse_index(take("y_star")?, "y_star")?;
        let tau = parse_float(take("tau")?, "tau")?;
        let delta_bin = parse_float(take("delta_bin")?, "delta_bin")?;
        let feasible = match take("feasible")? {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::InvalidInput(format!("bad feasible flag {other:?}")));
            }
        };
        let err_w = parse_float(take("err_w")?, "err_w")?;
        let err_z = parse_float(take("err_z")?, "err_z")?;
        let err_g = parse_float(take("err_g")?, "err_g")?;
        out.push(CsvRecord {
            step,
            phase,
            optimizer,
            probs,
            residual,
            e_frozen,
            e_refreshed,
            eigenvalues,
            alpha,
            y_star,
            tau,
            delta_bin,
            feasible,
            err_w,
            err_z,
            err_g,
        });
    }
    Ok(out)
}
