//! JSON-lines file helpers. One serde value per line, written in input
//! order so identical data always produces identical bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug)]
pub enum JsonlError {
    Io(std::io::Error),
    Parse { line: usize, source: serde_json::Error },
    Serialize(serde_json::Error),
}

impl std::fmt::Display for JsonlError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            JsonlError::Io(e) => write!(f, "io error: {e}"),
            JsonlError::Parse { line, source } => write!(f, "line {line}: {source}"),
            JsonlError::Serialize(e) => write!(f, "serialize error: {e}"),
        }
    }
}

impl std::error::Error for JsonlError {}

impl From<std::io::Error> for JsonlError {
    fn from(e: std::io::Error) -> Self {
        JsonlError::Io(e)
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value =
            serde_json::from_str(&line).map_err(|source| JsonlError::Parse { line: i + 1, source })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    let mut writer = BufWriter::new(File::create(path)?);
    for item in items {
        let line = serde_json::to_string(item).map_err(JsonlError::Serialize)?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
