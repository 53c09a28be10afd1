//! Plain-text manifest plus raw little-endian f32 blob.
//!
//! `<stem>.txt` holds one line per tensor: `name shape byte_offset`, with
//! the shape written as `d0,d1,...` (`-` for a scalar). `<stem>.bin` is the
//! concatenation of every tensor's data in manifest order.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::params::ParamStore;
use crate::tensor::Tensor;

const HEADER: &str = "# tensor manifest v1: name shape byte_offset";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Manifest { path: PathBuf, line: usize, detail: String },
    #[error("{path}: blob has {actual} bytes, manifest needs {expected}")]
    BlobSize { path: PathBuf, expected: usize, actual: usize },
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("txt")
}

pub fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        "-".to_string()
    } else {
        shape.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

pub fn write_tensors<'a>(stem: &Path, entries: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Result<(), IoError> {
    let mut manifest = String::from(HEADER);
    manifest.push('\n');
    let mut blob = Vec::new();
    for (name, t) in entries {
        manifest.push_str(&format!("{name} {} {}\n", format_shape(t.shape()), blob.len()));
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mp = manifest_path(stem);
    let bp = blob_path(stem);
    fs::write(&mp, manifest).map_err(io_err(&mp))?;
    fs::write(&bp, blob).map_err(io_err(&bp))?;
    Ok(())
}

pub fn read_tensors(stem: &Path) -> Result<Vec<(String, Tensor<f32>)>, IoError> {
    let mp = manifest_path(stem);
    let bp = blob_path(stem);
    let text = fs::read_to_string(&mp).map_err(io_err(&mp))?;
    let blob = fs::read(&bp).map_err(io_err(&bp))?;
    let bad = |line: usize, detail: String| IoError::Manifest {
        path: mp.clone(),
        line,
        detail,
    };
    let mut out = Vec::new();
    let mut expected = 0usize;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, shape, offset] = fields[..] else {
            return Err(bad(lineno, format!("expected 3 fields, got {}", fields.len())));
        };
        let shape: Vec<usize> = if shape == "-" {
            Vec::new()
        } else {
            shape
                .split(',')
                .map(|d| d.parse::<usize>().map_err(|e| bad(lineno, format!("shape {shape:?}: {e}"))))
                .collect::<Result<_, _>>()?
        };
        let offset: usize = offset.parse().map_err(|e| bad(lineno, format!("offset {offset:?}: {e}")))?;
        if offset != expected {
            return Err(bad(lineno, format!("offset {offset} but previous tensors end at {expected}")));
        }
        let numel: usize = shape.iter().product();
        let end = offset + numel * 4;
        if end > blob.len() {
            return Err(IoError::BlobSize {
                path: bp,
                expected: end,
                actual: blob.len(),
            });
        }
        let data = blob[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name.to_string(), Tensor::new(&shape, data).expect("numel matches")));
        expected = end;
    }
    if expected != blob.len() {
        return Err(IoError::BlobSize {
            path: bp,
            expected,
            actual: blob.len(),
        });
    }
    Ok(out)
}

pub fn save_params(stem: &Path, store: &ParamStore<f32>) -> Result<(), IoError> {
    write_tensors(stem, store.iter().map(|(_, n, t)| (n, t)))
}

pub fn load_params(stem: &Path) -> Result<ParamStore<f32>, IoError> {
    let mut store = ParamStore::new();
    for (name, t) in read_tensors(stem)? {
        store.insert(&name, t).map_err(|e| IoError::Manifest {
            path: manifest_path(stem),
            line: 0,
            detail: e.to_string(),
        })?;
    }
    Ok(store)
}
