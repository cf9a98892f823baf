//! CSV schema.
//!
//! Datasets: one column per covariate plus `y`. Streams additionally carry
//! `t` (1-based time) and `location`. Every column other than `y`, `t` and
//! `location` is a covariate, in header order. Output tables start with one
//! `#` comment line identifying the format version and config digest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use qsl_core::online::{Batch, Stream};
use qsl_core::{Dataset, Observation};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

const RESERVED: [&str; 3] = ["y", "t", "location"];

fn open_reader(path: &Path) -> CliResult<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

struct Columns {
    features: Vec<usize>,
    y: usize,
    t: Option<usize>,
    location: Option<usize>,
}

fn columns(path: &Path, headers: &csv::StringRecord) -> CliResult<Columns> {
    let find = |name: &str| headers.iter().position(|h| h == name);
    let y = find("y").ok_or_else(|| CliError::Data(format!("{}: missing `y` column", path.display())))?;
    let features: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !RESERVED.contains(h))
        .map(|(i, _)| i)
        .collect();
    if features.is_empty() {
        return Err(CliError::Data(format!("{}: no covariate columns", path.display())));
    }
    Ok(Columns {
        features,
        y,
        t: find("t"),
        location: find("location"),
    })
}

fn parse_f64(path: &Path, line: usize, field: &str) -> CliResult<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::Data(format!("{}:{line}: `{field}` is not a finite number", path.display())))
}

fn read_rows(path: &Path) -> CliResult<(Columns, Vec<(usize, csv::StringRecord)>)> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(CliError::data)?.clone();
    let cols = columns(path, &headers)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec));
    }
    Ok((cols, rows))
}

fn observation(path: &Path, cols: &Columns, line: usize, rec: &csv::StringRecord) -> CliResult<Observation> {
    let x = cols
        .features
        .iter()
        .map(|&i| parse_f64(path, line, &rec[i]))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Observation::new(x, parse_f64(path, line, &rec[cols.y])?))
}

pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let (cols, rows) = read_rows(path)?;
    let obs = rows
        .iter()
        .map(|(line, rec)| observation(path, &cols, *line, rec))
        .collect::<CliResult<Vec<_>>>()?;
    Dataset::new(obs).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Rows may come in any order; they are grouped by `t`.
pub fn read_stream(path: &Path) -> CliResult<Stream> {
    let (cols, rows) = read_rows(path)?;
    let (Some(t_col), Some(loc_col)) = (cols.t, cols.location) else {
        return Err(CliError::Data(format!("{}: streams need `t` and `location` columns", path.display())));
    };
    let mut by_t: BTreeMap<usize, BTreeMap<String, Observation>> = BTreeMap::new();
    let mut locations = std::collections::BTreeSet::new();
    for (line, rec) in &rows {
        let t: usize = rec[t_col]
            .parse()
            .map_err(|_| CliError::Data(format!("{}:{line}: bad time `{}`", path.display(), &rec[t_col])))?;
        let loc = rec[loc_col].to_string();
        locations.insert(loc.clone());
        let obs = observation(path, &cols, *line, rec)?;
        if by_t.entry(t).or_default().insert(loc.clone(), obs).is_some() {
            return Err(CliError::Data(format!("{}:{line}: duplicate row for t={t}, location {loc}", path.display())));
        }
    }
    let batches = by_t
        .into_iter()
        .map(|(t, items)| Batch::new(t, items))
        .collect::<qsl_core::Result<Vec<_>>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Stream::new(locations, batches).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn feature_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|j| format!("x{j}")).collect()
}

/// Writes a `#` header line followed by CSV rows.
pub struct TableWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl TableWriter {
    pub fn create(path: &Path, header: &str) -> CliResult<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "# {header}")?;
        Ok(TableWriter {
            inner: csv::Writer::from_writer(file),
        })
    }

    pub fn record<I, T>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        Ok(self.inner.write_record(fields)?)
    }

    pub fn row<R: Serialize>(&mut self, row: &R) -> CliResult<()> {
        Ok(self.inner.serialize(row)?)
    }

    pub fn finish(mut self) -> CliResult<()> {
        Ok(self.inner.flush()?)
    }
}

pub fn write_rows<R: Serialize>(path: &Path, header: &str, rows: &[R]) -> CliResult<()> {
    let mut w = TableWriter::create(path, header)?;
    for r in rows {
        w.row(r)?;
    }
    w.finish()
}

pub fn read_rows_as<R: DeserializeOwned>(path: &Path) -> CliResult<Vec<R>> {
    let mut reader = open_reader(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| CliError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn write_dataset(path: &Path, header: &str, data: &Dataset) -> CliResult<()> {
    let mut w = TableWriter::create(path, header)?;
    let mut names = feature_names(data.dim());
    names.push("y".into());
    w.record(&names)?;
    for o in data {
        w.record(o.x.iter().chain([&o.y]).map(|v| v.to_string()))?;
    }
    w.finish()
}

pub fn write_stream(path: &Path, header: &str, stream: &Stream) -> CliResult<()> {
    let mut w = TableWriter::create(path, header)?;
    let mut names = vec!["t".to_string(), "location".to_string()];
    names.extend(feature_names(stream.dim()));
    names.push("y".into());
    w.record(&names)?;
    for b in stream.batches() {
        for (loc, o) in &b.items {
            let mut rec = vec![b.t.to_string(), loc.clone()];
            rec.extend(o.x.iter().chain([&o.y]).map(|v| v.to_string()));
            w.record(&rec)?;
        }
    }
    w.finish()
}
