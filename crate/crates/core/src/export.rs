//! Batch export formats.
//!
//! * CSV: header `z1,...,zn` (or `x1,...,xn`), one row per sample, every value
//!   written with 17 significant digits.
//! * Binary: magic `CGS1`, then `rows` and `cols` as little-endian `u64`, then
//!   the values as little-endian `f64`, column-major.
//! * JSON: batch metadata plus row-major points.

use std::io::{self, BufRead, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::law::Space;
use crate::sampler::{Method, SampleBatch};

pub const MAGIC: &[u8; 4] = b"CGS1";

fn prefix(space: Space) -> char {
    match space {
        Space::X => 'x',
        Space::Z => 'z',
    }
}

pub fn write_csv<W: Write>(batch: &SampleBatch, mut out: W) -> io::Result<()> {
    let header: Vec<String> = (1..=batch.dim)
        .map(|i| format!("{}{i}", prefix(batch.space)))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for row in batch.iter_rows() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v:.16e}"));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()
}

/// Parses CSV written by [`write_csv`]: returns the column names and the
/// row-major values.
pub fn read_csv<R: BufRead>(input: R) -> Result<(Vec<String>, Vec<f64>)> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))?
        .map_err(|e| Error::Format(e.to_string()))?;
    let names: Vec<String> = header.split(',').map(str::to_owned).collect();
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(Error::Format(format!(
                "row {} has {} fields, expected {}",
                lineno + 1,
                fields.len(),
                names.len()
            )));
        }
        for f in fields {
            values.push(
                f.parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: {e}", lineno + 1)))?,
            );
        }
    }
    Ok((names, values))
}

pub fn write_binary<W: Write>(batch: &SampleBatch, mut out: W) -> io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(batch.rows as u64).to_le_bytes())?;
    out.write_all(&(batch.dim as u64).to_le_bytes())?;
    for j in 0..batch.dim {
        for r in 0..batch.rows {
            out.write_all(&batch.points[r * batch.dim + j].to_le_bytes())?;
        }
    }
    out.flush()
}

/// Column-major contents of a binary dump.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDump {
    pub rows: usize,
    pub cols: usize,
    pub columns: Vec<Vec<f64>>,
}

pub fn read_binary(bytes: &[u8]) -> Result<BinaryDump> {
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing CGS1 header".into()));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize;
    let (rows, cols) = (word(4), word(12));
    let body = &bytes[20..];
    if body.len() != rows * cols * 8 {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            rows * cols * 8,
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let columns = values.chunks(rows.max(1)).take(cols).map(<[f64]>::to_vec).collect();
    Ok(BinaryDump {
        rows,
        cols,
        columns,
    })
}

#[derive(Serialize)]
struct BatchDocument<'a> {
    method: Method,
    seed: u64,
    space: Space,
    generator: &'a str,
    normal_transform: &'a str,
    chunk_size: usize,
    redraws: u64,
    degenerate_use: bool,
    points: Vec<&'a [f64]>,
}

pub fn write_json<W: Write>(batch: &SampleBatch, mut out: W) -> io::Result<()> {
    let doc = BatchDocument {
        method: batch.method,
        seed: batch.seed,
        space: batch.space,
        generator: batch.generator(),
        normal_transform: batch.normal_transform(),
        chunk_size: batch.chunk_size,
        redraws: batch.redraws,
        degenerate_use: batch.degenerate_use,
        points: batch.iter_rows().collect(),
    };
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out)?;
    out.flush()
}
