//! Signals on disk: flat little-endian `f64` binary, or a single-column
//! CSV when the path ends in `.csv`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{CdimError, Result};

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn encode_binary(signal: &[f64]) -> Vec<u8> {
    signal.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_binary(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(CdimError::Format(format!(
            "binary signal length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write_signal(path: impl AsRef<Path>, signal: &[f64]) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        let mut out = fs::File::create(path)?;
        for v in signal {
            writeln!(out, "{v:?}")?;
        }
        Ok(())
    } else {
        Ok(fs::write(path, encode_binary(signal))?)
    }
}

pub fn read_signal(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    if is_csv(path) {
        let text = fs::read_to_string(path)?;
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .enumerate()
            .map(|(i, l)| {
                l.parse::<f64>()
                    .map_err(|_| CdimError::Format(format!("{}: row {} is not a number: {l:?}", path.display(), i + 1)))
            })
            .collect()
    } else {
        decode_binary(&fs::read(path)?)
    }
}
