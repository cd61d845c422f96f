//! Binary PGM (P5, maxval 255) reader and writer.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Read one token, skipping whitespace and `#` comment lines.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(bytes[start..*pos].to_vec())
}

/// Read a grayscale frame; values land in [0,255] as f64.
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;

    let mut pos = 0;
    let magic = next_token(&bytes, &mut pos)
        .ok_or_else(|| Error::format(path, "truncated header"))?;
    if magic != b"P5" {
        return Err(Error::format(path, "not a binary PGM (missing P5 magic)"));
    }
    let mut dim = |name: &str| -> Result<usize> {
        let tok = next_token(&bytes, &mut pos)
            .ok_or_else(|| Error::format(path, format!("missing {name}")))?;
        std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::format(path, format!("invalid {name}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let maxval = dim("maxval")?;
    if maxval != 255 {
        return Err(Error::format(path, format!("unsupported maxval {maxval} (expected 255)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let expected = width * height;
    if bytes.len() < pos + expected {
        return Err(Error::format(
            path,
            format!("raster truncated: expected {expected} bytes"),
        ));
    }
    let data = bytes[pos..pos + expected]
        .iter()
        .map(|&b| f64::from(b))
        .collect();
    Tensor::new(vec![height, width], data)
}

/// Write a frame as binary PGM; values are clamped to [0,255] and rounded.
pub fn write_pgm(path: &Path, frame: &Tensor) -> Result<()> {
    if frame.shape().len() != 2 {
        return Err(Error::dimension("write_pgm", frame.shape_string(), "HxW"));
    }
    let (h, w) = (frame.shape()[0], frame.shape()[1]);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "P5\n{w} {h}\n255\n").map_err(|e| Error::io(path, e))?;
    let raster: Vec<u8> = frame
        .data()
        .iter()
        .map(|&v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    out.write_all(&raster).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
