use std::fs;
use std::io::{BufReader, Write};
use std::path::Path;

use dinfer::toy::Checkpoint;
use dinfer::{FeatureMatrix, Modality, Traces};

use crate::CliError;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), source: e }
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// Writes JSON to `path`, or to stdout when no path is given.
pub fn emit_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?);
            Ok(())
        }
    }
}

pub fn read_traces(path: &Path, modality: Modality) -> Result<Traces, CliError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    Ok(dinfer::parse_trace_stream(BufReader::new(f), modality)?)
}

pub fn write_traces(path: &Path, traces: &Traces) -> Result<(), CliError> {
    let mut buf = Vec::new();
    match traces {
        Traces::Arm(t) => dinfer::trace::write_trace_stream(&mut buf, t),
        Traces::Dm(t) => dinfer::trace::write_trace_stream(&mut buf, t),
    }
    .map_err(|e| io_err(path, e))?;
    write_atomic(path, &buf)
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix, CliError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    Ok(FeatureMatrix::read_csv(BufReader::new(f))?)
}

pub fn write_features(path: &Path, m: &FeatureMatrix) -> Result<(), CliError> {
    let mut buf = Vec::new();
    m.write_csv(&mut buf).map_err(|e| io_err(path, e))?;
    write_atomic(path, &buf)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    Ok(Checkpoint::read(BufReader::new(f))?)
}
