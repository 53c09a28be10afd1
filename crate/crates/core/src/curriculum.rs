//! Staged image/video mixing schedule.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};
use crate::synth::{Origin, Task};

/// Stage-1 mix: two million images against 350 thousand videos.
pub const STAGE1_IMAGE_FRACTION: f64 = 2000.0 / 2350.0;
/// Stage-2 mix: 260 thousand images against 116 thousand videos.
pub const STAGE2_IMAGE_FRACTION: f64 = 260.0 / 376.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub image_fraction: f64,
    pub steps: u64,
    /// Task names; see [`Task::name`].
    pub tasks: Vec<String>,
    /// Relative task weights; empty means uniform.
    #[serde(default)]
    pub task_weights: Vec<f64>,
    /// Overrides the training masking ratio for this stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_ratio: Option<f64>,
}

impl StageSpec {
    pub fn task_list(&self) -> Result<Vec<Task>> {
        self.tasks.iter().map(|t| t.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schedule(m));
        if !(0.0..=1.0).contains(&self.image_fraction) {
            return bad(format!("image_fraction {} outside [0, 1]", self.image_fraction));
        }
        if self.steps == 0 {
            return bad("stage step budget must be positive".into());
        }
        if self.tasks.is_empty() {
            return bad("stage has no tasks".into());
        }
        self.task_list()?;
        if !self.task_weights.is_empty() {
            if self.task_weights.len() != self.tasks.len() {
                return bad(format!("{} weights for {} tasks", self.task_weights.len(), self.tasks.len()));
            }
            if self.task_weights.iter().any(|w| !(*w >= 0.0)) || self.task_weights.iter().sum::<f64>() <= 0.0 {
                return bad("task weights must be non-negative with a positive sum".into());
            }
        }
        if let Some(r) = self.mask_ratio {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("mask_ratio {r} outside [0, 1)"));
            }
        }
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        if self.task_weights.is_empty() {
            vec![1.0; self.tasks.len()]
        } else {
            self.task_weights.clone()
        }
    }
}

fn names(tasks: &[Task]) -> Vec<String> {
    tasks.iter().map(|t| t.name().to_string()).collect()
}

pub fn single_reference_tasks() -> Vec<Task> {
    Task::ALL.into_iter().filter(|t| !t.is_multi_reference()).collect()
}

/// Default two-stage schedule; multi-reference editing joins in stage 2.
pub fn default_stages() -> Vec<StageSpec> {
    vec![
        StageSpec {
            image_fraction: STAGE1_IMAGE_FRACTION,
            steps: 2000,
            tasks: names(&single_reference_tasks()),
            task_weights: Vec::new(),
            mask_ratio: None,
        },
        StageSpec {
            image_fraction: STAGE2_IMAGE_FRACTION,
            steps: 400,
            tasks: names(&Task::ALL),
            task_weights: Vec::new(),
            mask_ratio: None,
        },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub stages: Vec<StageSpec>,
    pub seed: u64,
}

/// One curriculum decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Draw {
    pub stage: usize,
    pub task: Task,
    pub origin: Origin,
    /// Uniform word used to pick an entry from the `(task, origin)` pool.
    pub slot: u64,
}

impl Schedule {
    pub fn new(stages: Vec<StageSpec>, seed: u64) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Schedule("schedule has no stages".into()));
        }
        for s in &stages {
            s.validate()?;
        }
        Ok(Schedule { stages, seed })
    }

    pub fn total_steps(&self) -> u64 {
        self.stages.iter().map(|s| s.steps).sum()
    }

    /// First global step of each stage.
    pub fn boundaries(&self) -> Vec<u64> {
        self.stages
            .iter()
            .scan(0, |acc, s| {
                let start = *acc;
                *acc += s.steps;
                Some(start)
            })
            .collect()
    }

    pub fn stage_at(&self, step: u64) -> Result<usize> {
        let mut end = 0;
        for (i, s) in self.stages.iter().enumerate() {
            end += s.steps;
            if step < end {
                return Ok(i);
            }
        }
        Err(Error::Schedule(format!("step {step} beyond schedule of {} steps", self.total_steps())))
    }

    /// Draw for batch slot `index` of `step`; a pure function of
    /// `(seed, step, index)`.
    pub fn next_sample(&self, step: u64, index: usize) -> Result<Draw> {
        let stage = self.stage_at(step)?;
        let spec = &self.stages[stage];
        let mut rng = rng_from(&[stream::CURRICULUM, self.seed, step, index as u64]);
        let origin = if rng.random_bool(spec.image_fraction) {
            Origin::Image
        } else {
            Origin::Video
        };
        let weights = spec.weights();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let tasks = spec.task_list()?;
        let mut task = *tasks.last().expect("validated non-empty");
        for (t, w) in tasks.iter().zip(&weights) {
            if u < *w {
                task = *t;
                break;
            }
            u -= w;
        }
        Ok(Draw {
            stage,
            task,
            origin,
            slot: rng.random(),
        })
    }
}

/// Image fraction of a `video:image` ratio.
pub fn ratio_fraction(video: u32, image: u32) -> Result<f64> {
    if video + image == 0 {
        return Err(Error::Schedule("ratio 0:0 has no data".into()));
    }
    Ok(image as f64 / (video + image) as f64)
}

/// One single-stage schedule per `video:image` ratio, identical to `base`
/// except for the image fraction.
pub fn ratio_sweep(ratios: &[(u32, u32)], base: &StageSpec, seed: u64) -> Result<Vec<Schedule>> {
    ratios
        .iter()
        .map(|&(v, i)| {
            let stage = StageSpec {
                image_fraction: ratio_fraction(v, i)?,
                ..base.clone()
            };
            Schedule::new(vec![stage], seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_fractions() {
        assert!((STAGE1_IMAGE_FRACTION - 0.851).abs() < 1e-3);
        assert!((STAGE2_IMAGE_FRACTION - 0.691).abs() < 1e-3);
    }

    #[test]
    fn stage_boundaries() {
        let s = Schedule::new(default_stages(), 3).unwrap();
        assert_eq!(s.total_steps(), 2400);
        assert_eq!(s.boundaries(), vec![0, 2000]);
        assert_eq!(s.stage_at(1999).unwrap(), 0);
        assert_eq!(s.stage_at(2000).unwrap(), 1);
        assert!(s.stage_at(2400).is_err());
        assert!(s.next_sample(2400, 0).is_err());
    }

    #[test]
    fn replay_is_identical() {
        let s = Schedule::new(default_stages(), 3).unwrap();
        assert_eq!(s.next_sample(17, 2).unwrap(), s.next_sample(17, 2).unwrap());
    }

    #[test]
    fn sweep_fractions() {
        let base = &default_stages()[0];
        let sweep = ratio_sweep(&[(1, 1), (1, 2), (1, 3), (1, 4)], base, 0).unwrap();
        let f: Vec<f64> = sweep.iter().map(|s| s.stages[0].image_fraction).collect();
        assert_eq!(f, vec![0.5, 2.0 / 3.0, 0.75, 0.8]);
        assert!(sweep.iter().all(|s| s.stages[0].steps == base.steps));
    }

    #[test]
    fn invalid_stage() {
        let mut s = default_stages()[0].clone();
        s.tasks = vec!["paint_everything".into()];
        assert!(s.validate().is_err());
        let mut s = default_stages()[0].clone();
        s.image_fraction = 1.5;
        assert!(Schedule::new(vec![s], 0).is_err());
    }
}
