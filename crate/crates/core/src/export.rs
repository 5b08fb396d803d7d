//! Inspection artifacts: binary PGM images and plain CSV tables.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// 8-bit grayscale image mapping `lo → 0` and `hi → 255` linearly; values
/// outside `[lo, hi]` are clipped. `values` is row-major `rows × cols`.
pub fn pgm_bytes(values: &[f64], rows: usize, cols: usize, lo: f64, hi: f64) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(Error::shape("pgm", &[rows, cols], &[values.len()]));
    }
    if !(hi > lo) {
        return Err(Error::contract(format!("empty pixel range [{lo}, {hi}]")));
    }
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| pixel(v, lo, hi)));
    Ok(out)
}

pub fn pixel(v: f64, lo: f64, hi: f64) -> u8 {
    let s = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (s * 255.0).round() as u8
}

pub fn write_pgm(path: impl AsRef<Path>, values: &[f64], rows: usize, cols: usize, lo: f64, hi: f64) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, pgm_bytes(values, rows, cols, lo, hi)?).map_err(|e| Error::io(path, e))
}

/// Parse a P5 image written by [`pgm_bytes`]: `(rows, cols, pixels)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |reason: &str| Error::Format {
        kind: "pgm",
        reason: reason.into(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not text"))?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected an 8-bit P5 image"));
    }
    let cols: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let rows: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let pixels = &bytes[pos + 1..];
    if pixels.len() != rows * cols {
        return Err(bad("pixel count does not match header"));
    }
    Ok((rows, cols, pixels.to_vec()))
}

/// CSV text with an optional header; numbers use Rust's shortest
/// round-tripping formatting.
pub fn csv_string<T: Display>(header: Option<&[&str]>, rows: &[Vec<T>]) -> String {
    let mut s = String::new();
    if let Some(h) = header {
        s.push_str(&h.join(","));
        s.push('\n');
    }
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn write_csv<T: Display>(path: impl AsRef<Path>, header: Option<&[&str]>, rows: &[Vec<T>]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, csv_string(header, rows)).map_err(|e| Error::io(path, e))
}

/// Numeric rows of a CSV; a first line that does not parse is taken as the
/// header and returned separately.
pub fn parse_csv<T: FromStr>(text: &str) -> Result<(Option<Vec<String>>, Vec<Vec<T>>)> {
    let mut header = None;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<T>, _> = line.split(',').map(|c| c.trim().parse()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if n == 0 => header = Some(line.split(',').map(str::to_string).collect()),
            Err(_) => {
                return Err(Error::Format {
                    kind: "csv",
                    reason: format!("line {} is not numeric", n + 1),
                })
            }
        }
    }
    Ok((header, rows))
}

pub fn read_csv<T: FromStr>(path: impl AsRef<Path>) -> Result<(Option<Vec<String>>, Vec<Vec<T>>)> {
    let path = path.as_ref();
    parse_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
