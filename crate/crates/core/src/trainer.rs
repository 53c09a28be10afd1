//! Schedule-driven training loop with checkpoint/resume.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mixedit_tensor::{OptimizerState, ParamStore};

use crate::checkpoint::{self, Checkpoint, CheckpointMeta, FORMAT_VERSION};
use crate::config::RunConfig;
use crate::curriculum::Schedule;
use crate::error::{Error, Result};
use crate::flow::{LossReport, Pipeline};
use crate::synth::{gen_dataset, sample_from_seed, DatasetManifest, EditSample, Origin, Split, SynthConfig, Task};

pub const TRAIN_MANIFEST: &str = "data/train_manifest.txt";
pub const HELDOUT_MANIFEST: &str = "data/heldout_manifest.txt";
pub const TRAIN_LOG: &str = "train_log.txt";

/// Train and held-out manifests of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: DatasetManifest,
    pub heldout: DatasetManifest,
}

fn pool_counts(tasks: &[Task], n: usize) -> Vec<(Task, Origin, usize)> {
    tasks
        .iter()
        .flat_map(|&t| [Origin::Image, Origin::Video].map(|o| (t, o, n)))
        .collect()
}

impl Corpus {
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        let tasks = cfg.task_list()?;
        let synth = cfg.synth_config();
        let (train, _) = gen_dataset(&pool_counts(&tasks, cfg.data.train_per_pool), cfg.seed, Split::Train, &synth)?;
        let (heldout, _) = gen_dataset(&pool_counts(&tasks, cfg.data.heldout_per_pool), cfg.seed, Split::HeldOut, &synth)?;
        Ok(Corpus { train, heldout })
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let dir = run_dir.join("data");
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        self.train.save(&run_dir.join(TRAIN_MANIFEST))?;
        self.heldout.save(&run_dir.join(HELDOUT_MANIFEST))
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let train = DatasetManifest::load(&run_dir.join(TRAIN_MANIFEST))?;
        let heldout = DatasetManifest::load(&run_dir.join(HELDOUT_MANIFEST))?;
        Ok(Corpus { train, heldout })
    }

    /// Held-out samples of the given tasks and origins, at most `per_pool`
    /// of each pool.
    pub fn heldout_samples(&self, tasks: &[Task], origins: &[Origin], per_pool: usize) -> Result<Vec<EditSample>> {
        let cfg = self.heldout.synth_config();
        let mut out = Vec::new();
        for &task in tasks {
            for &origin in origins {
                for e in self.heldout.pool(task, origin).into_iter().take(per_pool) {
                    out.push(sample_from_seed(e.task, e.origin, e.seed, &cfg)?);
                }
            }
        }
        Ok(out)
    }
}

/// Seeds of each training pool, looked up by curriculum draws.
#[derive(Clone, Debug)]
struct Pools {
    seeds: BTreeMap<(Task, Origin), Vec<u64>>,
    synth: SynthConfig,
}

impl Pools {
    fn new(m: &DatasetManifest) -> Self {
        let mut seeds: BTreeMap<(Task, Origin), Vec<u64>> = BTreeMap::new();
        for e in &m.entries {
            seeds.entry((e.task, e.origin)).or_default().push(e.seed);
        }
        Pools {
            seeds,
            synth: m.synth_config(),
        }
    }

    fn get(&self, task: Task, origin: Origin, slot: u64) -> Result<EditSample> {
        let pool = self
            .seeds
            .get(&(task, origin))
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::Data(format!("training corpus has no {task} {origin} samples")))?;
        let seed = pool[(slot % pool.len() as u64) as usize];
        sample_from_seed(task, origin, seed, &self.synth)
    }
}

/// One logged optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub stage: usize,
    pub image_fraction: f64,
    pub report: LossReport,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step {} loss {} supervised {} t {} stage {} image_fraction {}",
            self.step, self.report.loss, self.report.supervised, self.report.t, self.stage, self.image_fraction
        )
    }
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub schedule: Schedule,
    /// One pipeline per stage; they differ only in masking ratio.
    stage_pipes: Vec<Pipeline>,
    pools: Pools,
    pub params: ParamStore<f32>,
    pub opt: OptimizerState<f32>,
    /// Completed optimizer steps.
    pub step: u64,
}

impl Trainer {
    pub fn new(cfg: RunConfig, train: &DatasetManifest) -> Result<Self> {
        let pipe = cfg.pipeline()?;
        let params = pipe.dit.init::<f32>(cfg.seed)?;
        let opt = OptimizerState::new(params.tensors());
        Self::assemble(cfg, pipe, train, params, opt, 0)
    }

    pub fn from_checkpoint(ckpt: Checkpoint, train: &DatasetManifest) -> Result<Self> {
        let pipe = ckpt.pipeline()?;
        Self::assemble(ckpt.meta.config, pipe, train, ckpt.params, ckpt.opt, ckpt.meta.step)
    }

    fn assemble(
        cfg: RunConfig,
        pipe: Pipeline,
        train: &DatasetManifest,
        params: ParamStore<f32>,
        opt: OptimizerState<f32>,
        step: u64,
    ) -> Result<Self> {
        let schedule = cfg.schedule()?;
        let synth = cfg.synth_config();
        if train.synth_config() != synth {
            return Err(Error::Data(format!(
                "corpus is {}px/{} frames, config wants {}px/{} frames",
                train.size, train.video_frames, synth.size, synth.video_frames
            )));
        }
        let stage_pipes = schedule
            .stages
            .iter()
            .map(|s| {
                let mut p = pipe.clone();
                if let Some(r) = s.mask_ratio {
                    p.opts.mask_ratio = r;
                }
                p
            })
            .collect();
        Ok(Trainer {
            cfg,
            schedule,
            stage_pipes,
            pools: Pools::new(train),
            params,
            opt,
            step,
        })
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.stage_pipes[0]
    }

    pub fn total_steps(&self) -> u64 {
        self.schedule.total_steps()
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    /// Stage and batch of global step `step`.
    pub fn batch(&self, step: u64) -> Result<(usize, Vec<EditSample>)> {
        let mut stage = 0;
        let mut samples = Vec::with_capacity(self.cfg.train.batch_size);
        for b in 0..self.cfg.train.batch_size {
            let d = self.schedule.next_sample(step, b)?;
            stage = d.stage;
            samples.push(self.pools.get(d.task, d.origin, d.slot)?);
        }
        Ok((stage, samples))
    }

    /// Runs the next optimizer step.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let step = self.step;
        let (stage, samples) = self.batch(step)?;
        let report = self.stage_pipes[stage].train_step(&mut self.params, &mut self.opt, &samples, self.cfg.seed, step)?;
        self.step += 1;
        Ok(StepRecord {
            step,
            stage,
            image_fraction: self.schedule.stages[stage].image_fraction,
            report,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let stage = self
            .schedule
            .stage_at(self.step)
            .unwrap_or(self.schedule.stages.len() - 1);
        let vocab = &self.pipeline().vocab;
        Checkpoint {
            meta: CheckpointMeta {
                format: FORMAT_VERSION,
                step: self.step,
                stage,
                seed: self.cfg.seed,
                vocab_words: vocab.words().to_vec(),
                vocab_max_len: vocab.max_len(),
                config: self.cfg.clone(),
            },
            params: self.params.clone(),
            opt: self.opt.clone(),
        }
    }

    /// Trains until `until` completed steps (capped at the schedule total),
    /// calling `on_line` with every log line.
    pub fn run_until(&mut self, until: u64, mut on_line: impl FnMut(&str) -> Result<()>) -> Result<Vec<StepRecord>> {
        let until = until.min(self.total_steps());
        let boundaries = self.schedule.boundaries();
        let mut records = Vec::new();
        while self.step < until {
            if let Some(stage) = boundaries.iter().position(|&b| b == self.step) {
                on_line(&format!(
                    "# stage {stage} starts at step {} image_fraction {} tasks {}",
                    self.step,
                    self.schedule.stages[stage].image_fraction,
                    self.schedule.stages[stage].tasks.join(",")
                ))?;
            }
            let rec = self.train_step()?;
            on_line(&rec.to_string())?;
            records.push(rec);
        }
        Ok(records)
    }
}

/// Training of a run directory: resumes from `checkpoints/latest` when
/// present, appends to the loss log, and checkpoints every
/// `checkpoint_every` steps and at the end.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join(TRAIN_LOG)
    }

    /// Trainer resumed from the latest checkpoint, or fresh from `cfg`.
    pub fn trainer(&self, cfg: &RunConfig) -> Result<Trainer> {
        let corpus = Corpus::load(&self.root)?;
        match checkpoint::latest(&self.root)? {
            Some(dir) => {
                let ckpt = checkpoint::load(&dir)?;
                if ckpt.meta.config != *cfg {
                    return Err(Error::Checkpoint {
                        path: dir,
                        detail: "run configuration differs from the checkpoint's".into(),
                    });
                }
                Trainer::from_checkpoint(ckpt, &corpus.train)
            }
            None => Trainer::new(cfg.clone(), &corpus.train),
        }
    }

    /// Drops log lines for steps at or after `step` so a resumed run
    /// appends exactly the lines an uninterrupted run would have written.
    fn truncate_log(&self, step: u64) -> Result<()> {
        let path = self.log_path();
        if !path.exists() {
            return Ok(());
        }
        let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
        let mut kept = String::new();
        for line in text.lines() {
            if log_line_step(line).is_some_and(|s| s >= step) {
                break;
            }
            kept.push_str(line);
            kept.push('\n');
        }
        fs::write(&path, kept).map_err(Error::io(&path))
    }

    /// Trains up to `until` total steps (the full schedule when `None`).
    pub fn train(&self, cfg: &RunConfig, until: Option<u64>) -> Result<Trainer> {
        let mut trainer = self.trainer(cfg)?;
        self.truncate_log(trainer.step)?;
        let path = self.log_path();
        let mut log = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(Error::io(&path))?;
        let until = until.unwrap_or(u64::MAX).min(trainer.total_steps());
        let every = trainer.cfg.checkpoint_every;
        while trainer.step < until {
            let next = ((trainer.step / every + 1) * every).min(until);
            trainer.run_until(next, |line| writeln!(log, "{line}").map_err(Error::io(&path)))?;
            log.flush().map_err(Error::io(&path))?;
            checkpoint::save(&self.root, &trainer.checkpoint())?;
        }
        Ok(trainer)
    }
}

/// Step number of a loss line, `None` for comments.
pub fn log_line_step(line: &str) -> Option<u64> {
    let mut it = line.split_whitespace();
    match (it.next(), it.next()) {
        (Some("step"), Some(n)) => n.parse().ok(),
        (Some("#"), Some("stage")) => {
            let words: Vec<&str> = line.split_whitespace().collect();
            words.iter().position(|w| *w == "at").and_then(|i| words.get(i + 2)).and_then(|n| n.parse().ok())
        }
        _ => None,
    }
}

/// Loss values of the `step` lines of a log.
pub fn parse_log_losses(text: &str) -> Vec<(u64, f64)> {
    text.lines()
        .filter_map(|l| {
            let w: Vec<&str> = l.split_whitespace().collect();
            match w.as_slice() {
                ["step", s, "loss", v, ..] => Some((s.parse().ok()?, v.parse().ok()?)),
                _ => None,
            }
        })
        .collect()
}
