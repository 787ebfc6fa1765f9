//! File formats: batch persistence (CSV and the ULAB1 binary dump), report
//! CSVs, and the regression dataset reader.
//!
//! All floats are serialized with 17 significant digits in scientific
//! notation so reruns produce byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::model::RegressionData;
use crate::sim::SampleBatch;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad ULAB1 magic")]
    BadMagic,
    #[error("truncated ULAB1 payload")]
    Truncated,
    #[error("csv parse error at line {line}: {reason}")]
    CsvParse { line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// 17-significant-digit scientific notation; fixed and locale-independent.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a batch as CSV with header `chain,x_1,..,x_d`.
pub fn write_batch_csv(batch: &SampleBatch, path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "chain")?;
    for j in 1..=batch.dim() {
        write!(w, ",x_{j}")?;
    }
    writeln!(w)?;
    // surviving rows keep their original chain index
    let diverged: std::collections::BTreeSet<usize> =
        batch.diverged.iter().map(|d| d.chain).collect();
    let mut chain = 0usize;
    for row in batch.values.rows() {
        while diverged.contains(&chain) {
            chain += 1;
        }
        write!(w, "{chain}")?;
        for v in row.iter() {
            write!(w, ",{}", format_f64(*v))?;
        }
        writeln!(w)?;
        chain += 1;
    }
    w.flush()?;
    Ok(())
}

const ULAB_MAGIC: &[u8; 5] = b"ULAB1";

/// Compact little-endian dump: magic "ULAB1", u32 n_chains, u32 d, f64 values
/// in row-major order.
pub fn write_batch_ulab(batch: &SampleBatch, path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(ULAB_MAGIC)?;
    w.write_all(&(batch.n_samples() as u32).to_le_bytes())?;
    w.write_all(&(batch.dim() as u32).to_le_bytes())?;
    for v in batch.values.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a ULAB1 dump back as a plain value matrix.
pub fn read_batch_ulab(path: &Path) -> Result<Array2<f64>, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|_| IoError::Truncated)?;
    if &magic != ULAB_MAGIC {
        return Err(IoError::BadMagic);
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|_| IoError::Truncated)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf).map_err(|_| IoError::Truncated)?;
    let d = u32::from_le_bytes(u32buf) as usize;
    let mut values = Array2::zeros((n, d));
    let mut f64buf = [0u8; 8];
    for i in 0..n {
        for j in 0..d {
            r.read_exact(&mut f64buf).map_err(|_| IoError::Truncated)?;
            values[[i, j]] = f64::from_le_bytes(f64buf);
        }
    }
    Ok(values)
}

/// Reads a regression dataset CSV with header `x_1,..,x_d,y`.
pub fn read_regression_csv(path: &Path) -> Result<RegressionData, IoError> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines().enumerate();
    let (_, header) = lines.next().ok_or(IoError::CsvParse {
        line: 1,
        reason: "empty file".into(),
    })?;
    let header = header?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.last() != Some(&"y") || cols.len() < 2 {
        return Err(IoError::CsvParse {
            line: 1,
            reason: "expected header x_1,..,x_d,y".into(),
        });
    }
    let d = cols.len() - 1;
    let mut points = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != d + 1 {
            return Err(IoError::CsvParse {
                line: i + 1,
                reason: format!("expected {} fields, got {}", d + 1, fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64, IoError> {
            s.parse::<f64>().map_err(|e| IoError::CsvParse {
                line: i + 1,
                reason: e.to_string(),
            })
        };
        let x: Vec<f64> = fields[..d]
            .iter()
            .map(|s| parse(s))
            .collect::<Result<_, _>>()?;
        let y = parse(fields[d])?;
        points.push((x, y));
    }
    Ok(RegressionData::new(points, d)?)
}

/// Writes a regression dataset CSV with header `x_1,..,x_d,y`.
pub fn write_regression_csv(data: &RegressionData, path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    for j in 1..=data.dim() {
        write!(w, "x_{j},")?;
    }
    writeln!(w, "y")?;
    for (x, y) in data.points() {
        for v in x {
            write!(w, "{},", format_f64(*v))?;
        }
        writeln!(w, "{}", format_f64(y))?;
    }
    w.flush()?;
    Ok(())
}
