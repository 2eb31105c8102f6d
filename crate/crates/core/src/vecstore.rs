//! Keyed dense vectors and the canonical key serialization that makes
//! joining on a float-valued data field well defined.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::dataset::RawRecord;

/// A dense feature vector addressed by its canonical key.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyedVector {
    pub key: String,
    pub values: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum VecstoreError {
    #[error("component {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VecstoreError + '_ {
    move |source| VecstoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes a vector to its canonical key: each component as fixed-point
/// with exactly 6 fractional digits (round-half-to-even, negative zero
/// normalized), joined by commas. Locale-independent and deterministic, so
/// equal keys mean equal-to-6-digits vectors.
pub fn canonical_key(values: &[f64]) -> Result<String, VecstoreError> {
    let mut key = String::with_capacity(values.len() * 10);
    let mut component = String::new();
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(VecstoreError::NonFinite { index, value });
        }
        if index > 0 {
            key.push(',');
        }
        component.clear();
        write!(component, "{value:.6}").expect("formatting a finite f64 cannot fail");
        if component == "-0.000000" {
            key.push_str("0.000000");
        } else {
            key.push_str(&component);
        }
    }
    Ok(key)
}

/// Turns normalized records into keyed vectors, one per record, preserving
/// order. The key is derived from the channel values, so records with
/// identical readings collide; the joiner accounts for that.
pub fn vectorize(records: &[RawRecord]) -> Result<Vec<KeyedVector>, VecstoreError> {
    records
        .iter()
        .map(|record| {
            Ok(KeyedVector {
                key: canonical_key(&record.channels)?,
                values: record.channels.clone(),
            })
        })
        .collect()
}

/// Writes vectors as `key<TAB>v1,...,vC` lines. Values use the shortest
/// representation that parses back to the same float, so
/// write-read-write is byte-stable.
pub fn write_vectors(path: &Path, vectors: &[KeyedVector]) -> Result<(), VecstoreError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for vector in vectors {
        write!(w, "{}\t", vector.key).map_err(io_err(path))?;
        for (i, value) in vector.values.iter().enumerate() {
            if i > 0 {
                write!(w, ",").map_err(io_err(path))?;
            }
            write!(w, "{value}").map_err(io_err(path))?;
        }
        writeln!(w).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a vector file back. All lines must have the same component count;
/// pass `expected_dim` to also pin the dimensionality.
pub fn read_vectors(
    path: &Path,
    expected_dim: Option<usize>,
) -> Result<Vec<KeyedVector>, VecstoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut vectors = Vec::new();
    let mut dim = expected_dim;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line.split_once('\t').ok_or_else(|| VecstoreError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: "missing tab between key and values".into(),
        })?;
        let values = parse_components(rest, path, line_no)?;
        match dim {
            Some(d) if d != values.len() => {
                return Err(VecstoreError::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("expected {d} components, found {}", values.len()),
                });
            }
            Some(_) => {}
            None => dim = Some(values.len()),
        }
        vectors.push(KeyedVector {
            key: key.to_string(),
            values,
        });
    }
    Ok(vectors)
}

pub(crate) fn parse_components(
    s: &str,
    path: &Path,
    line_no: u64,
) -> Result<Vec<f64>, VecstoreError> {
    s.split(',')
        .map(|field| {
            let value: f64 = field.parse().map_err(|_| VecstoreError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("cannot parse component {field:?}"),
            })?;
            if !value.is_finite() {
                return Err(VecstoreError::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("non-finite component {field:?}"),
                });
            }
            Ok(value)
        })
        .collect()
}
