//! Run configuration file (TOML). Every field has a default; unknown keys
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{build_codec, CodecParams};
use crate::curriculum::{default_stages, Schedule, StageSpec};
use crate::error::{Error, Result};
use crate::eval::DEFAULT_THRESHOLD_DB;
use crate::flow::{Pipeline, TrainOptions};
use crate::inference::SamplerConfig;
use crate::instruction::{Vocab, DEFAULT_MAX_LEN};
use crate::model::{Dit, ModelConfig};
use crate::synth::{template_texts, Origin, SynthConfig, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub seed: u64,
    pub patch: usize,
    /// Defaults to 2: a 9-frame clip then has 5 latent frames, and a 0.25
    /// masking ratio hides one of them (with 4 it would hide none).
    pub temporal: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            seed: 0,
            patch: 8,
            temporal: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub size: usize,
    pub video_frames: usize,
    pub max_instruction_len: usize,
    /// Training samples generated per `(task, origin)` pool.
    pub train_per_pool: usize,
    /// Held-out samples generated per `(task, origin)` pool.
    pub heldout_per_pool: usize,
    pub tasks: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            size: 16,
            video_frames: 9,
            max_instruction_len: DEFAULT_MAX_LEN,
            train_per_pool: 200,
            heldout_per_pool: 25,
            tasks: Task::ALL.iter().map(|t| t.name().to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub stages: Vec<StageSpec>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { stages: default_stages() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub steps: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection { steps: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold_db: f64,
    /// Origins of the held-out samples that are scored.
    pub origins: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold_db: DEFAULT_THRESHOLD_DB,
            origins: vec!["image".into(), "video".into()],
        }
    }
}

impl EvalConfig {
    pub fn origin_list(&self) -> Result<Vec<Origin>> {
        self.origins.iter().map(|o| o.parse()).collect()
    }
}

/// Budgets of the ablation table and mixing-ratio sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub stage1_steps: u64,
    pub stage2_steps: u64,
    /// `[video, image]` ratios of the sweep.
    pub ratios: Vec<[u32; 2]>,
    /// Held-out samples per `(task, origin)` pool used for scoring.
    pub eval_per_pool: usize,
    pub eval_origins: Vec<String>,
    /// Every row is trained once per seed.
    pub seeds: Vec<u64>,
    /// Seeds of the token-noise direction check.
    pub noise_seeds: Vec<u64>,
    pub noise_steps: u64,
    /// `[video, image]` mix of the token-noise direction check.
    pub noise_ratio: [u32; 2],
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            stage1_steps: 300,
            stage2_steps: 60,
            ratios: vec![[1, 1], [1, 2], [1, 3], [1, 4]],
            eval_per_pool: 4,
            eval_origins: vec!["video".into()],
            seeds: vec![0],
            noise_seeds: vec![0, 1, 2],
            noise_steps: 300,
            noise_ratio: [1, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory, relative to the run directory.
    pub output_dir: String,
    pub checkpoint_every: u64,
    pub codec: CodecConfig,
    pub model: ModelConfig,
    pub train: TrainOptions,
    pub data: DataConfig,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerSection,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: ".".into(),
            checkpoint_every: 500,
            codec: CodecConfig::default(),
            model: ModelConfig::default(),
            train: TrainOptions::default(),
            data: DataConfig::default(),
            schedule: ScheduleConfig::default(),
            sampler: SamplerSection::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn codec_params(&self) -> CodecParams {
        CodecParams {
            seed: self.codec.seed,
            patch: self.codec.patch,
            temporal: self.codec.temporal,
            channels: 3,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            size: self.data.size,
            video_frames: self.data.video_frames,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            steps: self.sampler.steps,
            seed: self.seed,
        }
    }

    pub fn task_list(&self) -> Result<Vec<Task>> {
        self.data.tasks.iter().map(|t| t.parse()).collect()
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.schedule.stages.clone(), self.seed)
    }

    /// Vocabulary of every instruction template.
    pub fn vocab(&self) -> Result<Vocab> {
        let texts = template_texts();
        Vocab::from_texts(texts.iter().map(String::as_str), self.data.max_instruction_len)
    }

    pub fn pipeline_with_vocab(&self, vocab: Vocab) -> Result<Pipeline> {
        let codec = build_codec(self.codec_params())?;
        let dit = Dit::new(self.model.clone(), codec.latent_dim(), vocab.len(), vocab.max_len())?;
        Ok(Pipeline {
            codec,
            vocab,
            dit,
            opts: self.train.clone(),
        })
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        self.pipeline_with_vocab(self.vocab()?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let c = &self.codec;
        if c.patch == 0 || c.temporal == 0 {
            return bad("codec patch and temporal must be positive".into());
        }
        if self.data.size == 0 || self.data.size % c.patch != 0 {
            return bad(format!("image size {} not divisible by patch {}", self.data.size, c.patch));
        }
        if self.data.video_frames < 2 || (self.data.video_frames - 1) % c.temporal != 0 {
            return bad(format!(
                "video_frames {} must be at least 2 and satisfy f = 1 (mod {})",
                self.data.video_frames, c.temporal
            ));
        }
        if (self.train.repeat - 1) % c.temporal != 0 {
            return bad(format!("repeat {} must satisfy N = 1 (mod {})", self.train.repeat, c.temporal));
        }
        if self.data.max_instruction_len == 0 {
            return bad("max_instruction_len must be positive".into());
        }
        let tasks = self.task_list()?;
        if tasks.is_empty() {
            return bad("data.tasks is empty".into());
        }
        self.model.validate()?;
        self.train.validate()?;
        let schedule = self.schedule()?;
        for stage in &schedule.stages {
            for t in stage.task_list()? {
                if !tasks.contains(&t) {
                    return bad(format!("stage task {t} is not generated by data.tasks"));
                }
            }
        }
        if self.sampler.steps == 0 {
            return bad("sampler.steps must be positive".into());
        }
        if !self.eval.threshold_db.is_finite() {
            return bad("eval.threshold_db must be finite".into());
        }
        self.eval.origin_list()?;
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        let a = &self.ablation;
        if a.stage1_steps == 0 || a.ratios.is_empty() || a.eval_per_pool == 0 {
            return bad("ablation budgets and ratio list must be non-empty".into());
        }
        if a.seeds.is_empty() || a.noise_seeds.is_empty() || a.noise_steps == 0 {
            return bad("ablation seeds and noise-check budget must be non-empty".into());
        }
        if a.ratios.iter().chain([&a.noise_ratio]).any(|r| r[0] + r[1] == 0) {
            return bad("ablation ratio 0:0".into());
        }
        for o in &a.eval_origins {
            o.parse::<Origin>()?;
        }
        Ok(())
    }
}
