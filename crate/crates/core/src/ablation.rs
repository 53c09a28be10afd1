//! Component ablation table, mixing-ratio sweep and the token-noise
//! direction check. Every row trains from scratch in memory and is scored
//! on the shared held-out split.

use std::fmt;

use crate::config::RunConfig;
use crate::curriculum::{default_stages, ratio_fraction, ratio_sweep, StageSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, fmt_f, task_sr, SampleMetrics};
use crate::synth::{EditSample, Origin};
use crate::trainer::{Corpus, Trainer};

/// Which components a row enables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Toggles {
    /// Image data mixed into stage 1.
    pub image: bool,
    /// Images repeated into pseudo-videos.
    pub repeat: bool,
    /// Frame-wise token noise on image samples.
    pub noise: bool,
    /// Second curriculum stage.
    pub stage2: bool,
}

impl Toggles {
    pub const fn new(image: bool, repeat: bool, noise: bool, stage2: bool) -> Self {
        Toggles {
            image,
            repeat,
            noise,
            stage2,
        }
    }
}

/// The five cumulative rows, from the video-only baseline to everything on.
pub const TABLE_ROWS: [Toggles; 5] = [
    Toggles::new(false, false, false, false),
    Toggles::new(true, false, false, false),
    Toggles::new(true, true, false, false),
    Toggles::new(true, true, true, false),
    Toggles::new(true, true, true, true),
];

fn stage_base(base: &RunConfig, index: usize) -> StageSpec {
    base.schedule
        .stages
        .get(index)
        .cloned()
        .unwrap_or_else(|| default_stages()[index].clone())
}

/// Run configuration of one table row.
pub fn row_config(base: &RunConfig, t: Toggles, seed: u64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    let mut s1 = stage_base(base, 0);
    s1.steps = base.ablation.stage1_steps;
    if !t.image {
        s1.image_fraction = 0.0;
    }
    let mut stages = vec![s1];
    if t.stage2 {
        let mut s2 = stage_base(base, 1);
        s2.steps = base.ablation.stage2_steps;
        if s2.steps == 0 {
            return Err(Error::Config("stage-2 ablation row needs ablation.stage2_steps > 0".into()));
        }
        stages.push(s2);
    }
    cfg.schedule.stages = stages;
    cfg.train.repeat_images = t.repeat;
    cfg.train.mask_images = t.noise;
    cfg.validate()?;
    Ok(cfg)
}

/// Single-stage configuration mixing `video:image` with every component
/// except stage 2 enabled.
pub fn ratio_config(base: &RunConfig, video: u32, image: u32, seed: u64) -> Result<RunConfig> {
    let mut s1 = stage_base(base, 0);
    s1.steps = base.ablation.stage1_steps;
    let sweep = ratio_sweep(&[(video, image)], &s1, seed)?;
    let mut cfg = row_config(base, TABLE_ROWS[3], seed)?;
    cfg.schedule.stages = sweep[0].stages.clone();
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowMetrics {
    pub steps: u64,
    pub samples: usize,
    pub mean_psnr: f64,
    pub mean_mse: f64,
    pub task_sr: f64,
    /// Means over multi-frame outputs; `NaN` when there are none.
    pub consistency: f64,
    pub target_consistency: f64,
    pub dynamics_error: f64,
    /// Mean training loss over the last tenth of the steps.
    pub final_loss: f64,
}

fn nan_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn summarize(reports: &[SampleMetrics], threshold_db: f64, steps: u64, final_loss: f64) -> Result<RowMetrics> {
    let b = task_sr(reports, threshold_db)?;
    let n = reports.len() as f64;
    Ok(RowMetrics {
        steps,
        samples: reports.len(),
        mean_psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
        mean_mse: reports.iter().map(|r| r.mse).sum::<f64>() / n,
        task_sr: b.task_sr,
        consistency: nan_mean(reports.iter().map(|r| r.consistency)),
        target_consistency: nan_mean(reports.iter().filter(|r| !r.consistency.is_nan()).map(|r| r.target_consistency)),
        dynamics_error: nan_mean(reports.iter().map(|r| r.dynamics_error())),
        final_loss,
    })
}

/// Trains `cfg` from its seed and scores `eval` samples.
pub fn train_and_score(cfg: &RunConfig, corpus: &Corpus, eval: &[EditSample]) -> Result<(RowMetrics, Vec<SampleMetrics>)> {
    let mut trainer = Trainer::new(cfg.clone(), &corpus.train)?;
    let total = trainer.total_steps();
    let records = trainer.run_until(total, |_| Ok(()))?;
    let tail = (records.len() / 10).max(1);
    let final_loss = records[records.len() - tail..].iter().map(|r| r.report.loss).sum::<f64>() / tail as f64;
    let reports = evaluate(
        trainer.pipeline(),
        &trainer.params,
        eval,
        &cfg.sampler_config(),
        cfg.eval.threshold_db,
    )?;
    Ok((summarize(&reports, cfg.eval.threshold_db, total, final_loss)?, reports))
}

#[derive(Clone, Debug, PartialEq)]
pub enum RowKind {
    Table(Toggles),
    /// `video:image` sweep point.
    Ratio(u32, u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub kind: RowKind,
    pub seed: u64,
    pub metrics: RowMetrics,
}

pub const ABLATION_CSV_HEADER: &str = "row,seed,image,repeat,noise,stage2,ratio,steps,samples,mean_psnr_db,mean_mse,task_sr,consistency,target_consistency,dynamics_error,final_loss";

fn mark(b: bool) -> &'static str {
    if b {
        "+"
    } else {
        "-"
    }
}

impl fmt::Display for AblationRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (label, t, ratio) = match self.kind {
            RowKind::Table(t) => ("table", t, "-".to_string()),
            RowKind::Ratio(v, i) => ("ratio", TABLE_ROWS[3], format!("{v}:{i}")),
        };
        let m = &self.metrics;
        write!(
            f,
            "{label},{},{},{},{},{},{ratio},{},{},{},{},{},{},{},{},{}",
            self.seed,
            mark(t.image),
            mark(t.repeat),
            mark(t.noise),
            mark(t.stage2),
            m.steps,
            m.samples,
            fmt_f(m.mean_psnr),
            fmt_f(m.mean_mse),
            fmt_f(m.task_sr),
            fmt_f(m.consistency),
            fmt_f(m.target_consistency),
            fmt_f(m.dynamics_error),
            fmt_f(m.final_loss)
        )
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{r}\n"));
    }
    s
}

/// Shared held-out split of the ablation harness.
pub fn ablation_eval_set(base: &RunConfig, corpus: &Corpus) -> Result<Vec<EditSample>> {
    let origins = base
        .ablation
        .eval_origins
        .iter()
        .map(|o| o.parse())
        .collect::<Result<Vec<Origin>>>()?;
    corpus.heldout_samples(&base.task_list()?, &origins, base.ablation.eval_per_pool)
}

/// Every table row, then every sweep ratio, for each ablation seed.
/// `progress` sees each finished row.
pub fn ablation_matrix(
    base: &RunConfig,
    corpus: &Corpus,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let eval = ablation_eval_set(base, corpus)?;
    let mut rows = Vec::new();
    for &seed in &base.ablation.seeds {
        let mut kinds: Vec<RowKind> = TABLE_ROWS.iter().map(|&t| RowKind::Table(t)).collect();
        kinds.extend(base.ablation.ratios.iter().map(|r| RowKind::Ratio(r[0], r[1])));
        for kind in kinds {
            let cfg = match kind {
                RowKind::Table(t) => row_config(base, t, seed)?,
                RowKind::Ratio(v, i) => ratio_config(base, v, i, seed)?,
            };
            let (metrics, _) = train_and_score(&cfg, corpus, &eval)?;
            let row = AblationRow { kind, seed, metrics };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Outcome of one seed of the token-noise direction check.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseOutcome {
    pub seed: u64,
    pub with_noise: f64,
    pub without_noise: f64,
}

impl NoiseOutcome {
    /// Noise is no worse than no noise.
    pub fn noise_holds(&self) -> bool {
        self.with_noise <= self.without_noise
    }
}

/// Configuration of the direction check: one stage at the configured
/// `video:image` mix, repetition on, token noise as given.
pub fn noise_config(base: &RunConfig, noise: bool, seed: u64) -> Result<RunConfig> {
    let [v, i] = base.ablation.noise_ratio;
    let mut cfg = row_config(base, Toggles::new(true, true, noise, false), seed)?;
    cfg.schedule.stages[0].image_fraction = ratio_fraction(v, i)?;
    cfg.schedule.stages[0].steps = base.ablation.noise_steps;
    cfg.validate()?;
    Ok(cfg)
}

/// Video dynamics error with and without token noise for each noise seed,
/// scored on held-out moving-shape videos.
pub fn noise_direction(
    base: &RunConfig,
    corpus: &Corpus,
    mut progress: impl FnMut(&NoiseOutcome),
) -> Result<Vec<NoiseOutcome>> {
    let tasks = noise_config(base, true, 0)?.schedule.stages[0].task_list()?;
    let eval = corpus.heldout_samples(&tasks, &[Origin::Video], base.ablation.eval_per_pool)?;
    let mut out = Vec::new();
    for &seed in &base.ablation.noise_seeds {
        let err = |noise| -> Result<f64> { Ok(train_and_score(&noise_config(base, noise, seed)?, corpus, &eval)?.0.dynamics_error) };
        let o = NoiseOutcome {
            seed,
            with_noise: err(true)?,
            without_noise: err(false)?,
        };
        progress(&o);
        out.push(o);
    }
    Ok(out)
}

pub const NOISE_CSV_HEADER: &str = "seed,dynamics_error_noise,dynamics_error_no_noise,noise_no_worse";

pub fn noise_csv(outcomes: &[NoiseOutcome]) -> String {
    let mut s = format!("{NOISE_CSV_HEADER}\n");
    for o in outcomes {
        s.push_str(&format!(
            "{},{},{},{}\n",
            o.seed,
            fmt_f(o.with_noise),
            fmt_f(o.without_noise),
            u8::from(o.noise_holds())
        ));
    }
    s
}
