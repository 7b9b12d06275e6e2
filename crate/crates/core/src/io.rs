//! On-disk formats: dataset CSV, ground-truth JSON, retained-sample NDJSON,
//! and support matrices for scoring.

use std::io::{BufRead, Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_model::{CausalParameters, Dataset, GroundTruthGraph};
use crate::state::Snapshot;

/// Reads a dataset with a mandatory header naming `Y1..YQ` then `X1..XS`.
pub fn read_dataset_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let q = names.iter().take_while(|h| h.starts_with('Y')).count();
    let s = names.len() - q;
    for (j, name) in names.iter().enumerate() {
        let expected = if j < q { format!("Y{}", j + 1) } else { format!("X{}", j - q + 1) };
        if *name != expected {
            return Err(Error::Parse {
                line: 1,
                message: format!("column {} is named {name:?}, expected {expected:?}", j + 1),
            });
        }
    }
    if q == 0 {
        return Err(Error::Parse { line: 1, message: "no Y columns in header".into() });
    }
    let mut values = Vec::new();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map_or(rows + 2, |p| p.line() as usize);
        if record.len() != q + s {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", q + s, record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("field {} ({:?}) is not a number", j + 1, field),
            })?;
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite value {field:?} at line {line}, field {}",
                    j + 1
                )));
            }
            values.push(v);
        }
        rows += 1;
    }
    let width = q + s;
    let y = DMatrix::from_fn(rows, q, |i, j| values[i * width + j]);
    let x = DMatrix::from_fn(rows, s, |i, j| values[i * width + q + j]);
    Dataset::new(y, x)
}

pub fn write_dataset_csv<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let header: Vec<String> = (1..=data.q())
        .map(|j| format!("Y{j}"))
        .chain((1..=data.s()).map(|j| format!("X{j}")))
        .collect();
    wtr.write_record(&header).map_err(csv_io)?;
    for i in 0..data.n() {
        let row: Vec<String> = data
            .y
            .row(i)
            .iter()
            .chain(data.x.row(i).iter())
            .map(|v| v.to_string())
            .collect();
        wtr.write_record(&row).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Ground-truth file: supports plus the generating parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    #[serde(flatten)]
    pub graph: GroundTruthGraph,
    #[serde(flatten)]
    pub params: CausalParameters,
}

impl TruthFile {
    pub fn new(params: CausalParameters) -> Self {
        Self { graph: GroundTruthGraph::from_params(&params), params }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let truth: Self = serde_json::from_str(text)?;
        truth.graph.validate()?;
        truth.params.validate()?;
        if GroundTruthGraph::from_params(&truth.params) != truth.graph {
            return Err(Error::Validation("supports disagree with the parameter matrices".into()));
        }
        Ok(truth)
    }
}

/// Parses a parameter file and validates the model assumptions.
pub fn parse_params(text: &str) -> Result<CausalParameters> {
    let params: CausalParameters = serde_json::from_str(text)?;
    params.validate()?;
    Ok(params)
}

pub fn write_samples_ndjson<W: Write>(mut writer: W, samples: &[Snapshot]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_samples_ndjson<R: BufRead>(reader: R) -> Result<Vec<Snapshot>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let snap = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(snap);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Extracts the primary-variable edge support from JSON text: a graph
/// estimate (`b_edges`), a truth file (`b_support`), or a bare array of 0/1
/// rows.
pub fn parse_b_support(text: &str) -> Result<DMatrix<bool>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let rows = match &value {
        serde_json::Value::Object(map) => map
            .get("b_edges")
            .or_else(|| map.get("b_support"))
            .ok_or_else(|| Error::Validation("no b_edges or b_support key".into()))?,
        other => other,
    };
    let rows: Vec<Vec<u8>> = serde_json::from_value(rows.clone())?;
    let q = rows.len();
    if rows.iter().any(|r| r.len() != q) {
        return Err(Error::Dimension("edge support must be square".into()));
    }
    if rows.iter().flatten().any(|&v| v > 1) {
        return Err(Error::Validation("support entries must be 0 or 1".into()));
    }
    Ok(DMatrix::from_fn(q, q, |i, j| rows[i][j] == 1))
}
