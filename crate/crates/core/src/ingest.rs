//! Embedding-matrix ingestion.
//!
//! Embeddings exported from any model are read either as CSV (header
//! `f0,f1,...,f{d-1}`, one sample per row) or as raw little-endian 64-bit
//! floats in row-major order. CSV floats are written as shortest round-trip
//! decimals; the raw format is bit-lossless and preferred for bulk data.

use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Csv,
    RawF64Le,
}

impl EmbeddingFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            EmbeddingFormat::Csv => "csv",
            EmbeddingFormat::RawF64Le => "raw-f64-le",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(EmbeddingFormat::Csv),
            "raw" | "raw-f64-le" => Ok(EmbeddingFormat::RawF64Le),
            other => Err(Error::Config(format!("unknown embedding format '{other}'"))),
        }
    }

    /// Conventional file extension.
    pub fn extension(&self) -> &'static str {
        match self {
            EmbeddingFormat::Csv => "csv",
            EmbeddingFormat::RawF64Le => "raw",
        }
    }
}

/// A declared embedding file: path, format, expected dimension, and an
/// optional expected row count (validated after loading when given).
#[derive(Debug, Clone)]
pub struct EmbeddingFile {
    pub path: PathBuf,
    pub format: EmbeddingFormat,
    pub dim: usize,
    pub rows: Option<usize>,
}

impl EmbeddingFile {
    pub fn new(path: impl Into<PathBuf>, format: EmbeddingFormat, dim: usize) -> Self {
        EmbeddingFile {
            path: path.into(),
            format,
            dim,
            rows: None,
        }
    }

    pub fn with_rows(mut self, rows: usize) -> Self {
        self.rows = Some(rows);
        self
    }
}

/// Load an embedding matrix (rows are samples, columns the d features).
///
/// Every row must carry exactly `dim` finite values; violations report the
/// offending row (1-based, counting the CSV header as row 1).
pub fn load_embedding_matrix(file: &EmbeddingFile) -> Result<Vec<Vec<f64>>> {
    if file.dim == 0 {
        return Err(Error::Config("embedding dimension must be >= 1".into()));
    }
    let rows = match file.format {
        EmbeddingFormat::Csv => load_csv(&file.path, file.dim)?,
        EmbeddingFormat::RawF64Le => load_raw(&file.path, file.dim)?,
    };
    if let Some(expected) = file.rows {
        if rows.len() != expected {
            return Err(Error::Ingest {
                row: rows.len(),
                message: format!("expected {expected} rows, file holds {}", rows.len()),
            });
        }
    }
    Ok(rows)
}

fn expected_header(dim: usize) -> String {
    (0..dim)
        .map(|k| format!("f{k}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn load_csv(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Config(format!(
            "cannot read embedding file {}: {e}",
            path.display()
        ))
    })?;
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h.trim_end_matches('\r'),
        None => {
            return Err(Error::Ingest {
                row: 1,
                message: "empty file".into(),
            })
        }
    };
    let expected = expected_header(dim);
    if header != expected {
        return Err(Error::Ingest {
            row: 1,
            message: format!("header '{header}' does not match expected '{expected}'"),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let row_number = idx + 1; // 1-based file line
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim {
            return Err(Error::Ingest {
                row: row_number,
                message: format!("expected {dim} fields, found {}", fields.len()),
            });
        }
        let mut row = Vec::with_capacity(dim);
        for f in fields {
            let value: f64 = f.trim().parse().map_err(|_| Error::Ingest {
                row: row_number,
                message: format!("cannot parse '{f}' as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Ingest {
                    row: row_number,
                    message: format!("non-finite value '{f}'"),
                });
            }
            row.push(value);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn load_raw(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path).map_err(|e| {
        Error::Config(format!(
            "cannot read embedding file {}: {e}",
            path.display()
        ))
    })?;
    let row_bytes = 8 * dim;
    if bytes.len() % row_bytes != 0 {
        return Err(Error::Ingest {
            row: 0,
            message: format!(
                "file length {} is not a multiple of {row_bytes} (8 * dim)",
                bytes.len()
            ),
        });
    }
    let mut rows = Vec::with_capacity(bytes.len() / row_bytes);
    for (r, chunk) in bytes.chunks_exact(row_bytes).enumerate() {
        let mut row = Vec::with_capacity(dim);
        for c in chunk.chunks_exact(8) {
            let value = f64::from_le_bytes(c.try_into().unwrap());
            if !value.is_finite() {
                return Err(Error::Ingest {
                    row: r + 1,
                    message: "non-finite value in raw stream".into(),
                });
            }
            row.push(value);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Write an embedding matrix in the given format.
pub fn write_embedding_matrix(
    path: &Path,
    format: EmbeddingFormat,
    rows: &[Vec<f64>],
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Domain(
            "refusing to write an empty embedding matrix".into(),
        ));
    }
    let dim = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::Ingest {
                row: i + 1,
                message: format!("ragged row: expected {dim} values, got {}", r.len()),
            });
        }
    }
    let mut out = fs::File::create(path)?;
    match format {
        EmbeddingFormat::Csv => {
            let mut text = expected_header(dim);
            text.push('\n');
            for r in rows {
                let mut first = true;
                for v in r {
                    if !first {
                        text.push(',');
                    }
                    text.push_str(&format!("{v}"));
                    first = false;
                }
                text.push('\n');
            }
            out.write_all(text.as_bytes())?;
        }
        EmbeddingFormat::RawF64Le => {
            let mut bytes = Vec::with_capacity(rows.len() * dim * 8);
            for r in rows {
                for v in r {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            out.write_all(&bytes)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::NormalSource;

    fn temp_path(name: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("cavstab_ingest_{}_{name}", std::process::id()));
        p
    }

    #[test]
    fn small_csv_parses() {
        let path = temp_path("small.csv");
        fs::write(&path, "f0,f1\n1,2\n3,4\n").unwrap();
        let file = EmbeddingFile::new(&path, EmbeddingFormat::Csv, 2);
        let m = load_embedding_matrix(&file).unwrap();
        assert_eq!(m, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        fs::remove_file(&path).ok();
    }

    #[test]
    fn raw_round_trip_is_bit_identical() {
        let mut source = NormalSource::from_seed(6);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let mut r = vec![0.0f64; 8];
                source.fill_normal(&mut r);
                r
            })
            .collect();
        let path = temp_path("round.raw");
        write_embedding_matrix(&path, EmbeddingFormat::RawF64Le, &rows).unwrap();
        let file = EmbeddingFile::new(&path, EmbeddingFormat::RawF64Le, 8);
        let back = load_embedding_matrix(&file).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        fs::remove_file(&path).ok();
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let rows = vec![vec![0.1, -2.5e-7], vec![123456.789, 0.0]];
        let path = temp_path("csvround.csv");
        write_embedding_matrix(&path, EmbeddingFormat::Csv, &rows).unwrap();
        let back =
            load_embedding_matrix(&EmbeddingFile::new(&path, EmbeddingFormat::Csv, 2)).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        fs::remove_file(&path).ok();
    }

    #[test]
    fn nan_row_is_reported_with_its_number() {
        let path = temp_path("bad.csv");
        fs::write(&path, "f0,f1\n1,2\nnan,4\n").unwrap();
        let err =
            load_embedding_matrix(&EmbeddingFile::new(&path, EmbeddingFormat::Csv, 2)).unwrap_err();
        match err {
            Error::Ingest { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected error {other}"),
        }
        fs::remove_file(&path).ok();
    }

    #[test]
    fn ragged_and_mismatched_rows_are_errors() {
        let path = temp_path("ragged.csv");
        fs::write(&path, "f0,f1\n1,2,3\n").unwrap();
        assert!(matches!(
            load_embedding_matrix(&EmbeddingFile::new(&path, EmbeddingFormat::Csv, 2)),
            Err(Error::Ingest { row: 2, .. })
        ));
        fs::write(&path, "f0,f1,f2\n1,2,3\n").unwrap();
        // Declared dimension 2 but file header says 3: header mismatch.
        assert!(matches!(
            load_embedding_matrix(&EmbeddingFile::new(&path, EmbeddingFormat::Csv, 2)),
            Err(Error::Ingest { row: 1, .. })
        ));
        fs::remove_file(&path).ok();
    }

    #[test]
    fn declared_row_count_is_enforced() {
        let path = temp_path("rows.csv");
        fs::write(&path, "f0\n1\n2\n3\n").unwrap();
        let ok = EmbeddingFile::new(&path, EmbeddingFormat::Csv, 1).with_rows(3);
        assert_eq!(load_embedding_matrix(&ok).unwrap().len(), 3);
        let bad = EmbeddingFile::new(&path, EmbeddingFormat::Csv, 1).with_rows(5);
        assert!(matches!(
            load_embedding_matrix(&bad),
            Err(Error::Ingest { .. })
        ));
        fs::remove_file(&path).ok();
    }

    #[test]
    fn raw_length_must_be_row_multiple() {
        let path = temp_path("short.raw");
        fs::write(&path, [0u8; 20]).unwrap();
        assert!(matches!(
            load_embedding_matrix(&EmbeddingFile::new(&path, EmbeddingFormat::RawF64Le, 2)),
            Err(Error::Ingest { .. })
        ));
        fs::remove_file(&path).ok();
    }
}
