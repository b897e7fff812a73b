//! On-disk formats the CLI speaks: `config.json` and dense weight matrices
//! in a text or binary layout.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const CONFIG_FILE: &str = "config.json";
pub const WEIGHT_MAGIC: &[u8; 4] = b"WMAT";
pub const WEIGHT_EXT: &str = "wmat";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightFormat {
    /// Line 1: `rows cols`; then one line per row of decimal floats.
    Text,
    /// `WMAT` magic, u32 rows, u32 cols, then rows*cols little-endian f32.
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeightFile {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    pub format: WeightFormat,
}

fn check_payload(path: &Path, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::Corruption(format!(
            "{}: declares a {rows}x{cols} matrix, both dims must be positive",
            path.display()
        )));
    }
    if data.len() != rows * cols {
        return Err(Error::Corruption(format!(
            "{}: declares {rows}x{cols} = {} values, payload has {}",
            path.display(),
            rows * cols,
            data.len()
        )));
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Corruption(format!(
            "{}: non-finite value at index {i}",
            path.display()
        )));
    }
    Ok(())
}

pub fn write_weight_file(
    path: &Path,
    rows: usize,
    cols: usize,
    data: &[f32],
    format: WeightFormat,
) -> Result<()> {
    check_payload(path, rows, cols, data)?;
    match format {
        WeightFormat::Text => {
            // f32 Display prints the shortest decimal that parses back to the
            // same bits, so text round-trips exactly.
            let mut out = format!("{rows} {cols}\n");
            for r in 0..rows {
                let row = &data[r * cols..(r + 1) * cols];
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
            fs::write(path, out)?;
        }
        WeightFormat::Binary => {
            let mut out = Vec::with_capacity(12 + data.len() * 4);
            out.extend_from_slice(WEIGHT_MAGIC);
            out.extend_from_slice(&(rows as u32).to_le_bytes());
            out.extend_from_slice(&(cols as u32).to_le_bytes());
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(path, out)?;
        }
    }
    Ok(())
}

/// Read either layout; the `WMAT` magic picks binary, anything else parses
/// as text.
pub fn read_weight_file(path: &Path) -> Result<DenseWeightFile> {
    let bytes = fs::read(path)?;
    if bytes.len() >= 4 && &bytes[..4] == WEIGHT_MAGIC {
        return read_binary(path, &bytes);
    }
    read_text(path, &bytes)
}

fn read_binary(path: &Path, bytes: &[u8]) -> Result<DenseWeightFile> {
    if bytes.len() < 12 {
        return Err(Error::Corruption(format!(
            "{}: truncated weight header",
            path.display()
        )));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    if payload.len() != rows.saturating_mul(cols).saturating_mul(4) {
        return Err(Error::Corruption(format!(
            "{}: {rows}x{cols} needs {} payload bytes, found {}",
            path.display(),
            rows.saturating_mul(cols) * 4,
            payload.len()
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    check_payload(path, rows, cols, &data)?;
    Ok(DenseWeightFile {
        rows,
        cols,
        data,
        format: WeightFormat::Binary,
    })
}

fn read_text(path: &Path, bytes: &[u8]) -> Result<DenseWeightFile> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Corruption(format!("{}: not UTF-8 text", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Corruption(format!("{}: empty weight file", path.display())))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let parse_dim = |s: &str| {
        s.parse::<usize>().map_err(|_| {
            Error::Corruption(format!(
                "{}: header must be 'rows cols', got '{header}'",
                path.display()
            ))
        })
    };
    if dims.len() != 2 {
        return Err(Error::Corruption(format!(
            "{}: header must be 'rows cols', got '{header}'",
            path.display()
        )));
    }
    let (rows, cols) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in lines.enumerate() {
        if i >= rows && line.trim().is_empty() {
            continue;
        }
        for tok in line.split_whitespace() {
            let v: f32 = tok.parse().map_err(|_| {
                Error::Corruption(format!(
                    "{}: line {}: '{tok}' is not a float",
                    path.display(),
                    i + 2
                ))
            })?;
            data.push(v);
        }
    }
    check_payload(path, rows, cols, &data)?;
    Ok(DenseWeightFile {
        rows,
        cols,
        data,
        format: WeightFormat::Text,
    })
}

/// Read `config.json`; malformed content is a config error, not corruption,
/// so the CLI exits with the usage code.
pub fn read_config(path: &Path) -> Result<ModelConfig> {
    let bytes = fs::read(path)?;
    let cfg: ModelConfig = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_config(path: &Path, cfg: &ModelConfig) -> Result<()> {
    cfg.validate()?;
    let mut json = serde_json::to_vec_pretty(cfg)?;
    json.push(b'\n');
    fs::write(path, json)?;
    Ok(())
}
