//! JSON-lines datasets: one `{"events": [{"t": .., "k": .., "v": ..}]}`
//! object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;
use thp_core::{Event, EventSequence, RelationalGraph};

use crate::error::{io_err, Result, ThpError};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    events: Vec<Event>,
}

/// Parses a dataset from a reader; `path` only labels errors.
pub fn read_dataset(reader: impl BufRead, path: &Path) -> Result<Vec<EventSequence>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| ThpError::Parse {
            path: path.to_path_buf(),
            line: n,
            message: e.to_string(),
        })?;
        let seq = EventSequence::new(parsed.events).map_err(|source| ThpError::Sequence {
            path: path.to_path_buf(),
            index: out.len(),
            line: n,
            source,
        })?;
        out.push(seq);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<EventSequence>> {
    let f = File::open(path).map_err(io_err(path))?;
    read_dataset(BufReader::new(f), path)
}

pub fn write_dataset(mut w: impl Write, seqs: &[EventSequence]) -> std::io::Result<()> {
    for s in seqs {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_dataset(path: &Path, seqs: &[EventSequence]) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    write_dataset(BufWriter::new(f), seqs).map_err(io_err(path))
}

/// Loads a graph file (JSON, or TOML by `.toml` extension) of the form
/// `{"num_vertices": n, "edges": [[a, b], ...]}`.
pub fn load_graph(path: &Path) -> Result<RelationalGraph> {
    crate::config::load_file(path)
}
