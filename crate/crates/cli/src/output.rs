//! CSV writing. Every command writes through one writer per destination.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

/// Shortest representation that parses back to the same value.
pub fn float(x: f64) -> String {
    format!("{x}")
}

pub fn write_csv<W: Write>(sink: W, header: &[&str], rows: &[Vec<String>]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let fail = |p: &Path, e: csv::Error| CliError::io(p, std::io::Error::other(e));
    match path {
        Some(p) => {
            let file = std::fs::File::create(p).map_err(|e| CliError::io(p, e))?;
            write_csv(std::io::BufWriter::new(file), header, rows).map_err(|e| fail(p, e))
        }
        None => write_csv(std::io::stdout().lock(), header, rows).map_err(|e| fail(Path::new("<stdout>"), e)),
    }
}

/// `runs/out.csv` + `-baseline` -> `runs/out-baseline.csv`.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}
