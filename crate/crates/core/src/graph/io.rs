//! Line-delimited JSON datasets: one [`GraphInstance`] object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{GraphError, GraphInstance};

pub fn write_dataset(path: &Path, instances: &[GraphInstance]) -> Result<(), GraphError> {
    let io_err = |source| GraphError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for g in instances {
        let line = serde_json::to_string(g).expect("graph instances always serialize");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads a dataset; blank lines are skipped, malformed lines are reported with
/// their 1-based line number.
pub fn read_dataset(path: &Path) -> Result<Vec<GraphInstance>, GraphError> {
    let io_err = |source| GraphError::Io { path: path.display().to_string(), source };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = |msg: String| GraphError::Record { line: idx + 1, msg };
        let g: GraphInstance = serde_json::from_str(&line).map_err(|e| record(e.to_string()))?;
        g.validate().map_err(record)?;
        out.push(g);
    }
    Ok(out)
}
