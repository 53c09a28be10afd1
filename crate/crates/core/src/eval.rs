//! Oracle-based metrics: PSNR against the exact target, adjacent-frame
//! cosine consistency, and per-task success rates.

use std::collections::BTreeMap;

use mixedit_tensor::ParamStore;

use crate::codec::{LatentVideo, VideoClip};
use crate::error::{Error, Result};
use crate::flow::Pipeline;
use crate::inference::{edit, SamplerConfig};
use crate::synth::{EditSample, Origin, Task};

pub const PSNR_CAP: f64 = 99.0;
pub const DEFAULT_THRESHOLD_DB: f64 = 25.0;

pub fn mse(a: &VideoClip, b: &VideoClip) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Eval(format!(
            "clip shapes differ: {}x{}x{}x{} vs {}x{}x{}x{}",
            a.frames, a.channels, a.height, a.width, b.frames, b.channels, b.height, b.width
        )));
    }
    Ok(a.pixels.iter().zip(&b.pixels).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.pixels.len() as f64)
}

/// `10 log10(1 / mse)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &VideoClip, b: &VideoClip) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(m: f64) -> f64 {
    if m <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 && bb == 0.0 {
        1.0
    } else if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
    }
}

fn mean_adjacent_cosine(frames: usize, frame: impl Fn(usize) -> Vec<f32>) -> Result<f64> {
    if frames < 2 {
        return Err(Error::Eval("temporal consistency needs at least two frames".into()));
    }
    let total: f64 = (1..frames).map(|f| cosine(&frame(f - 1), &frame(f))).sum();
    Ok(total / (frames - 1) as f64)
}

/// Mean cosine similarity of adjacent flattened pixel frames.
pub fn temporal_consistency(v: &VideoClip) -> Result<f64> {
    mean_adjacent_cosine(v.frames, |f| v.frame(f).to_vec())
}

/// Mean cosine similarity of adjacent flattened latent frames.
pub fn latent_temporal_consistency(z: &LatentVideo) -> Result<f64> {
    mean_adjacent_cosine(z.frames, |f| z.frame(f).to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMetrics {
    pub task: Task,
    pub origin: Origin,
    pub seed: u64,
    pub psnr: f64,
    pub mse: f64,
    /// Pixel consistency of the output, `NaN` for single-frame outputs.
    pub consistency: f64,
    pub target_consistency: f64,
    pub success: bool,
}

impl SampleMetrics {
    /// `|consistency(output) - consistency(target)|`.
    pub fn dynamics_error(&self) -> f64 {
        (self.consistency - self.target_consistency).abs()
    }
}

fn consistency_or_nan(v: &VideoClip) -> f64 {
    temporal_consistency(v).unwrap_or(f64::NAN)
}

pub fn score(output: &VideoClip, sample: &EditSample, threshold_db: f64) -> Result<SampleMetrics> {
    let m = mse(output, &sample.target)?;
    let p = psnr_from_mse(m);
    Ok(SampleMetrics {
        task: sample.task,
        origin: sample.origin,
        seed: sample.seed,
        psnr: p,
        mse: m,
        consistency: consistency_or_nan(output),
        target_consistency: consistency_or_nan(&sample.target),
        success: p >= threshold_db,
    })
}

/// Edits and scores every sample.
pub fn evaluate(
    pipe: &Pipeline,
    params: &ParamStore<f32>,
    samples: &[EditSample],
    sampler: &SamplerConfig,
    threshold_db: f64,
) -> Result<Vec<SampleMetrics>> {
    samples
        .iter()
        .map(|s| score(&edit(pipe, params, s, sampler)?, s, threshold_db))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSummary {
    pub task: Task,
    pub samples: usize,
    pub mean_psnr: f64,
    pub mean_mse: f64,
    pub success_rate: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskBreakdown {
    pub tasks: Vec<TaskSummary>,
    /// Fraction of tasks whose mean PSNR reaches the threshold.
    pub task_sr: f64,
    pub threshold_db: f64,
}

/// Groups reports by task (in task order) and applies the threshold to each
/// task's mean PSNR.
pub fn task_sr(reports: &[SampleMetrics], threshold_db: f64) -> Result<TaskBreakdown> {
    if reports.is_empty() {
        return Err(Error::Eval("no reports to summarize".into()));
    }
    let mut groups: BTreeMap<Task, Vec<&SampleMetrics>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.task).or_default().push(r);
    }
    let tasks: Vec<TaskSummary> = groups
        .into_iter()
        .map(|(task, rs)| {
            let n = rs.len() as f64;
            let mean_psnr = rs.iter().map(|r| r.psnr).sum::<f64>() / n;
            TaskSummary {
                task,
                samples: rs.len(),
                mean_psnr,
                mean_mse: rs.iter().map(|r| r.mse).sum::<f64>() / n,
                success_rate: rs.iter().filter(|r| r.psnr >= threshold_db).count() as f64 / n,
                passed: mean_psnr >= threshold_db,
            }
        })
        .collect();
    let task_sr = tasks.iter().filter(|t| t.passed).count() as f64 / tasks.len() as f64;
    Ok(TaskBreakdown {
        tasks,
        task_sr,
        threshold_db,
    })
}

pub const SAMPLE_CSV_HEADER: &str = "task,origin,seed,psnr_db,mse,consistency,target_consistency,success";
pub const TASK_CSV_HEADER: &str = "task,samples,mean_psnr_db,mean_mse,success_rate,passed";

pub(crate) fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.6}")
    }
}

pub fn samples_csv(reports: &[SampleMetrics]) -> String {
    let mut s = format!("{SAMPLE_CSV_HEADER}\n");
    for r in reports {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.task,
            r.origin,
            r.seed,
            fmt_f(r.psnr),
            fmt_f(r.mse),
            fmt_f(r.consistency),
            fmt_f(r.target_consistency),
            u8::from(r.success)
        ));
    }
    s
}

pub fn tasks_csv(b: &TaskBreakdown) -> String {
    let mut s = format!("{TASK_CSV_HEADER}\n");
    for t in &b.tasks {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.task,
            t.samples,
            fmt_f(t.mean_psnr),
            fmt_f(t.mean_mse),
            fmt_f(t.success_rate),
            u8::from(t.passed)
        ));
    }
    s
}

/// Parses a table written by [`samples_csv`].
pub fn parse_samples_csv(text: &str) -> Result<Vec<SampleMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some(SAMPLE_CSV_HEADER) {
        return Err(Error::Eval("unexpected sample table header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Eval(format!("malformed sample row {l:?}"));
            if f.len() != 8 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(SampleMetrics {
                task: f[0].parse()?,
                origin: f[1].parse()?,
                seed: f[2].parse().map_err(|_| bad())?,
                psnr: num(f[3])?,
                mse: num(f[4])?,
                consistency: num(f[5])?,
                target_consistency: num(f[6])?,
                success: f[7] == "1",
            })
        })
        .collect()
}
