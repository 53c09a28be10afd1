//! Training checkpoints: `checkpoint.toml` plus parameter and optimizer
//! tensor files, one directory per step.
//!
//! All randomness is derived from `(seed, step, ...)`, so the seed and the
//! step pointer are the complete RNG state.

use std::fs;
use std::path::{Path, PathBuf};

use mixedit_tensor::io::{read_tensors, write_tensors};
use mixedit_tensor::{OptimizerState, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flow::Pipeline;
use crate::instruction::Vocab;

pub const FORMAT_VERSION: u32 = 1;
const LATEST: &str = "latest";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format: u32,
    /// Number of completed optimizer steps.
    pub step: u64,
    /// Stage that the next step belongs to (or the last stage when done).
    pub stage: usize,
    pub seed: u64,
    pub vocab_words: Vec<String>,
    pub vocab_max_len: usize,
    pub config: RunConfig,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore<f32>,
    pub opt: OptimizerState<f32>,
}

impl Checkpoint {
    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::from_sorted_words(self.meta.vocab_words.clone(), self.meta.vocab_max_len)
    }

    /// Pipeline rebuilt from the stored configuration and vocabulary.
    pub fn pipeline(&self) -> Result<Pipeline> {
        self.meta.config.pipeline_with_vocab(self.vocab()?)
    }
}

pub fn checkpoints_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoints")
}

pub fn step_dir(run_dir: &Path, step: u64) -> PathBuf {
    checkpoints_dir(run_dir).join(format!("step_{step:08}"))
}

fn corrupt(path: &Path, detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Writes `ckpt` under `run_dir` and points `latest` at it. The directory
/// is written under a temporary name and renamed into place.
pub fn save(run_dir: &Path, ckpt: &Checkpoint) -> Result<PathBuf> {
    let dir = step_dir(run_dir, ckpt.meta.step);
    let tmp = dir.with_extension("tmp");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(Error::io(&tmp))?;
    }
    fs::create_dir_all(&tmp).map_err(Error::io(&tmp))?;

    let meta = toml::to_string(&ckpt.meta).map_err(|e| corrupt(&tmp, e.to_string()))?;
    let meta_path = tmp.join("checkpoint.toml");
    fs::write(&meta_path, meta).map_err(Error::io(&meta_path))?;

    let io = |e: mixedit_tensor::io::IoError| corrupt(&tmp, e.to_string());
    write_tensors(&tmp.join("params"), ckpt.params.iter().map(|(_, n, t)| (n, t))).map_err(io)?;
    let names: Vec<&str> = ckpt.params.iter().map(|(_, n, _)| n).collect();
    write_tensors(&tmp.join("adam_m"), names.iter().copied().zip(&ckpt.opt.m)).map_err(io)?;
    write_tensors(&tmp.join("adam_v"), names.iter().copied().zip(&ckpt.opt.v)).map_err(io)?;
    let step_path = tmp.join("adam_step");
    fs::write(&step_path, format!("{}\n", ckpt.opt.step)).map_err(Error::io(&step_path))?;

    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(Error::io(&dir))?;
    }
    fs::rename(&tmp, &dir).map_err(Error::io(&dir))?;
    let latest = checkpoints_dir(run_dir).join(LATEST);
    let name = dir.file_name().expect("step dir has a name").to_string_lossy().into_owned();
    fs::write(&latest, format!("{name}\n")).map_err(Error::io(&latest))?;
    Ok(dir)
}

/// Directory named by `checkpoints/latest`, if any.
pub fn latest(run_dir: &Path) -> Result<Option<PathBuf>> {
    let path = checkpoints_dir(run_dir).join(LATEST);
    if !path.exists() {
        return Ok(None);
    }
    let name = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let name = name.trim();
    if name.is_empty() || name.contains(['/', '\\']) || name == ".." {
        return Err(corrupt(&path, format!("invalid pointer {name:?}")));
    }
    Ok(Some(checkpoints_dir(run_dir).join(name)))
}

fn load_tensors(dir: &Path, stem: &str) -> Result<Vec<(String, Tensor<f32>)>> {
    read_tensors(&dir.join(stem)).map_err(|e| corrupt(dir, e.to_string()))
}

/// Loads and validates a checkpoint directory.
pub fn load(dir: &Path) -> Result<Checkpoint> {
    let meta_path = dir.join("checkpoint.toml");
    if !meta_path.exists() {
        return Err(corrupt(dir, "missing checkpoint.toml"));
    }
    let text = fs::read_to_string(&meta_path).map_err(Error::io(&meta_path))?;
    let meta: CheckpointMeta = toml::from_str(&text).map_err(|e| corrupt(&meta_path, e.to_string().replace('\n', " ")))?;
    if meta.format != FORMAT_VERSION {
        return Err(corrupt(&meta_path, format!("format {} but reader is {FORMAT_VERSION}", meta.format)));
    }
    meta.config.validate().map_err(|e| corrupt(&meta_path, e.to_string()))?;

    let mut params = ParamStore::new();
    for (name, t) in load_tensors(dir, "params")? {
        params.insert(&name, t).map_err(|e| corrupt(dir, e.to_string()))?;
    }
    let ckpt_stub = Checkpoint {
        meta,
        params,
        opt: OptimizerState { m: Vec::new(), v: Vec::new(), step: 0 },
    };
    let pipe = ckpt_stub.pipeline().map_err(|e| corrupt(dir, e.to_string()))?;
    pipe.dit.check_params(&ckpt_stub.params).map_err(|e| corrupt(dir, e.to_string()))?;

    let moments = |stem: &str| -> Result<Vec<Tensor<f32>>> {
        let loaded = load_tensors(dir, stem)?;
        if loaded.len() != ckpt_stub.params.len() {
            return Err(corrupt(dir, format!("{stem} has {} tensors, params {}", loaded.len(), ckpt_stub.params.len())));
        }
        loaded
            .into_iter()
            .zip(ckpt_stub.params.iter())
            .map(|((name, t), (_, pname, p))| {
                if name != pname || t.shape() != p.shape() {
                    Err(corrupt(dir, format!("{stem} entry {name} does not match parameter {pname}")))
                } else {
                    Ok(t)
                }
            })
            .collect()
    };
    let m = moments("adam_m")?;
    let v = moments("adam_v")?;
    let step_path = dir.join("adam_step");
    let opt_step: u64 = fs::read_to_string(&step_path)
        .map_err(Error::io(&step_path))?
        .trim()
        .parse()
        .map_err(|_| corrupt(&step_path, "optimizer step is not an integer"))?;
    if opt_step != ckpt_stub.meta.step {
        return Err(corrupt(dir, format!("optimizer step {opt_step} but checkpoint step {}", ckpt_stub.meta.step)));
    }
    let all_finite = |ts: &[Tensor<f32>]| ts.iter().all(|t| t.data().iter().all(|x| x.is_finite()));
    if !all_finite(ckpt_stub.params.tensors()) || !all_finite(&m) || !all_finite(&v) {
        return Err(corrupt(dir, "non-finite values"));
    }
    Ok(Checkpoint {
        opt: OptimizerState { m, v, step: opt_step },
        ..ckpt_stub
    })
}
