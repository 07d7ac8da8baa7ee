use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rauq::trace::read_all;
use rauq::GenerationTrace;
use serde::Deserialize;

pub fn load_traces(path: &Path) -> Result<Vec<GenerationTrace>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let (_, traces) = read_all(file).with_context(|| format!("{}", path.display()))?;
    Ok(traces)
}

/// Opens `path` for writing, or wraps `stdout` when no path is given.
pub fn sink<'a>(path: Option<&Path>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(stdout),
    })
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// Shortest decimal that reads back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Deserialize)]
pub struct ScoreRow {
    pub trace_id: String,
    pub method: String,
    pub uncertainty: f64,
}

#[derive(Debug, Deserialize)]
struct QualityRow {
    trace_id: String,
    quality: f64,
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{}: row {}", path.display(), i + 2)))
        .collect()
}

pub fn read_quality(path: &Path) -> Result<HashMap<String, f64>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = HashMap::new();
    for (i, row) in rdr.deserialize::<QualityRow>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        if !row.quality.is_finite() {
            bail!("{}: row {}: quality must be finite", path.display(), i + 2);
        }
        if out.insert(row.trace_id.clone(), row.quality).is_some() {
            bail!("{}: duplicate quality for trace_id {}", path.display(), row.trace_id);
        }
    }
    Ok(out)
}
