//! Line-delimited JSON readers and writers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

/// How unknown fields in a record are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    /// Unknown fields are logged and dropped.
    Lenient,
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl JsonlError {
    pub fn is_io(&self) -> bool {
        matches!(self, JsonlError::Io { .. })
    }
}

/// Parse one record, collecting the paths of fields the schema does not know.
pub fn parse_record<T: DeserializeOwned>(text: &str, strictness: Strictness) -> Result<T, String> {
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let value: T = serde_ignored::deserialize(&mut de, |path| unknown.push(path.to_string()))
        .map_err(|e| e.to_string())?;
    de.end().map_err(|e| e.to_string())?;
    if !unknown.is_empty() {
        match strictness {
            Strictness::Strict => return Err(format!("unknown field(s): {}", unknown.join(", "))),
            Strictness::Lenient => log::warn!("ignoring unknown field(s): {}", unknown.join(", ")),
        }
    }
    Ok(value)
}

/// Read every non-blank line of `path` as a `T`. Line numbers in errors are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
    strictness: Strictness,
) -> Result<Vec<T>, JsonlError> {
    read_jsonl_checked(path, strictness, |_: &T| Ok(()))
}

/// Like [`read_jsonl`], additionally running `check` on every record.
pub fn read_jsonl_checked<T: DeserializeOwned>(
    path: &Path,
    strictness: Strictness,
    check: impl Fn(&T) -> Result<(), String>,
) -> Result<Vec<T>, JsonlError> {
    let io_err = |source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record(&line, strictness)
            .and_then(|r| check(&r).map(|_| r))
            .map_err(|message| JsonlError::Schema {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            })?;
        out.push(record);
    }
    Ok(out)
}

pub fn to_jsonl_string<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let io_err = |source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(to_jsonl_string(records).as_bytes())
        .map_err(io_err)?;
    w.flush().map_err(io_err)
}
