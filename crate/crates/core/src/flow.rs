//! Flow-matching objective and the training update.

use mixedit_tensor::{adamw_step, clip_grad_norm, AdamW, Element, OptimizerState, ParamStore, Tape, Tensor, Var};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::{Codec, LatentVideo, VideoClip};
use crate::error::{Error, Result};
use crate::instruction::Vocab;
use crate::model::Dit;
use crate::rng::{gaussian_vec, rng_from, stream, Rng};
use crate::sequence::{apply_frame_noise, build_sequence, repeat_image, sample_temporal_mask, SequenceLayout, TemporalMask};
use crate::synth::{EditSample, Origin};

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `t = logistic(z)` with `z ~ Normal(mu, sigma)`.
pub fn sample_timestep(rng: &mut Rng, mu: f64, sigma: f64) -> Result<f64> {
    let normal = Normal::new(mu, sigma).map_err(|e| Error::Loss(format!("timestep distribution: {e}")))?;
    if !(sigma > 0.0) {
        return Err(Error::Loss(format!("timestep sigma {sigma} must be positive")));
    }
    Ok(logistic(normal.sample(rng)))
}

fn check_pair(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Loss(format!("length mismatch {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// `t * x1 + (1 - t) * x0`, exact at both endpoints.
pub fn interpolate(x0: &[f32], x1: &[f32], t: f64) -> Result<Vec<f32>> {
    check_pair(x0, x1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Loss(format!("timestep {t} outside [0, 1]")));
    }
    Ok(x0
        .iter()
        .zip(x1)
        .map(|(&a, &b)| {
            if t == 0.0 {
                a
            } else if t == 1.0 {
                b
            } else {
                (t * b as f64 + (1.0 - t) * a as f64) as f32
            }
        })
        .collect())
}

/// `x1 - x0`.
pub fn velocity(x0: &[f32], x1: &[f32]) -> Result<Vec<f32>> {
    check_pair(x0, x1)?;
    Ok(x0.iter().zip(x1).map(|(&a, &b)| b - a).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub supervised: usize,
    pub masked: usize,
    /// Mean squared error per target latent frame (masked frames included).
    pub per_frame: Vec<f64>,
    pub t: f64,
}

fn check_weights(n: usize, weights: &[f32]) -> Result<f64> {
    if weights.len() != n {
        return Err(Error::Loss(format!("{} weights for {n} tokens", weights.len())));
    }
    if weights.iter().any(|&w| w != 0.0 && w != 1.0) {
        return Err(Error::Loss("loss weights must be 0 or 1".into()));
    }
    let sum: f64 = weights.iter().map(|&w| w as f64).sum();
    if sum == 0.0 {
        return Err(Error::Loss("every token is masked; nothing to supervise".into()));
    }
    Ok(sum)
}

/// Differentiable masked loss on `[tokens, dim]` predictions:
/// `sum(w * (pred - v)^2) / max(1, sum(w) * dim)`.
pub fn loss_masked_var<'t, E: Element>(pred: Var<'t, E>, v: &[E], weights: &[f32]) -> Result<Var<'t, E>> {
    let shape = pred.shape();
    if shape.len() != 2 || shape[0] * shape[1] != v.len() {
        return Err(Error::Loss(format!("prediction {shape:?} vs {} target values", v.len())));
    }
    let (n, d) = (shape[0], shape[1]);
    let wsum = check_weights(n, weights)?;
    let tape = pred.tape();
    let diff = pred.sub(tape.constant(Tensor::new(&shape, v.to_vec())?))?;
    let sq = diff.sqr();
    let all_ones = weights.iter().all(|&w| w == 1.0);
    let weighted = if all_ones {
        sq
    } else {
        let w: Vec<E> = weights.iter().flat_map(|&w| std::iter::repeat_n(E::from_f64_lossy(w as f64), d)).collect();
        sq.mul(tape.constant(Tensor::new(&shape, w)?))?
    };
    let denom = (wsum * d as f64).max(1.0);
    Ok(weighted.sum_all().mul_scalar(E::one() / E::from_f64_lossy(denom)))
}

/// Plain mean squared error over all elements.
pub fn mse_var<'t, E: Element>(pred: Var<'t, E>, v: &[E]) -> Result<Var<'t, E>> {
    let shape = pred.shape();
    let tape = pred.tape();
    let diff = pred.sub(tape.constant(Tensor::new(&shape, v.to_vec())?))?;
    Ok(diff.sqr().mean_all())
}

/// Masked loss evaluated directly on buffers (`tokens x dim`, row-major),
/// with `tokens_per_frame` tokens in each latent frame.
pub fn loss_masked(pred: &[f32], v: &[f32], weights: &[f32], dim: usize, tokens_per_frame: usize) -> Result<LossReport> {
    check_pair(pred, v)?;
    if dim == 0 || pred.len() % dim != 0 {
        return Err(Error::Loss(format!("buffer of {} values is not a multiple of dim {dim}", pred.len())));
    }
    let n = pred.len() / dim;
    let tape = Tape::<f32>::new();
    let p = tape.constant(Tensor::new(&[n, dim], pred.to_vec())?);
    let loss = loss_masked_var(p, v, weights)?.value().item()? as f64;
    let supervised = weights.iter().filter(|&&w| w != 0.0).count();
    Ok(LossReport {
        loss,
        supervised,
        masked: n - supervised,
        per_frame: per_frame_mse(pred, v, dim * tokens_per_frame.max(1)),
        t: f64::NAN,
    })
}

fn per_frame_mse(pred: &[f32], v: &[f32], frame_len: usize) -> Vec<f64> {
    pred.chunks(frame_len)
        .zip(v.chunks(frame_len))
        .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64)
        .collect()
}

/// Knobs of the per-sample training pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    /// Frame count of the pseudo-video built from an image.
    pub repeat: usize,
    /// When false, images stay single-frame clips.
    pub repeat_images: bool,
    pub mask_ratio: f64,
    pub mask_images: bool,
    pub mask_videos: bool,
    pub mask_reference_too: bool,
    pub t_mu: f64,
    pub t_sigma: f64,
    pub batch_size: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let adam = AdamW::default();
        TrainOptions {
            repeat: 9,
            repeat_images: true,
            mask_ratio: 0.25,
            mask_images: true,
            mask_videos: false,
            mask_reference_too: false,
            t_mu: 0.0,
            t_sigma: 1.0,
            batch_size: 8,
            grad_clip: 1.0,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            weight_decay: adam.weight_decay,
        }
    }
}

impl TrainOptions {
    pub fn adamw(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.repeat == 0 {
            return bad("repeat must be positive".into());
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return bad(format!("mask_ratio {} outside [0, 1)", self.mask_ratio));
        }
        if !(self.t_sigma > 0.0) || !self.t_mu.is_finite() {
            return bad("timestep distribution needs finite mu and positive sigma".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("invalid optimizer hyperparameters".into());
        }
        if self.grad_clip < 0.0 || self.weight_decay < 0.0 || !(self.adam_eps > 0.0) {
            return bad("grad_clip, weight_decay and adam_eps must be non-negative".into());
        }
        Ok(())
    }
}

/// Everything the model consumes for one training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub layout: SequenceLayout,
    /// `[references, x_t]` flat tokens.
    pub tokens: Vec<f32>,
    /// Velocity target on the target tokens.
    pub v: Vec<f32>,
    pub text_ids: Vec<usize>,
    pub t: f64,
    pub mask: TemporalMask,
}

/// Frozen parts of the pipeline plus the trainable architecture.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub codec: Codec,
    pub vocab: Vocab,
    pub dit: Dit,
    pub opts: TrainOptions,
}

impl Pipeline {
    /// Pixel clip as the model sees it: images become pseudo-videos unless
    /// repetition is disabled.
    pub fn lift(&self, clip: &VideoClip, origin: Origin) -> Result<VideoClip> {
        match origin {
            Origin::Image if self.opts.repeat_images => repeat_image(clip, self.opts.repeat, self.codec.params().temporal),
            _ => Ok(clip.clone()),
        }
    }

    pub fn encode_refs(&self, sample: &EditSample) -> Result<Vec<LatentVideo>> {
        sample
            .references
            .iter()
            .map(|r| self.codec.encode(&self.lift(r, sample.origin)?))
            .collect()
    }

    fn masking_active(&self, origin: Origin) -> bool {
        self.opts.mask_ratio > 0.0
            && match origin {
                Origin::Image => self.opts.mask_images,
                Origin::Video => self.opts.mask_videos,
            }
    }

    /// Draw order: mask, noise `x0`, timestep, masked-frame noise, then
    /// reference noise when enabled.
    pub fn prepare(&self, sample: &EditSample, rng: &mut Rng) -> Result<Prepared> {
        let mut refs = self.encode_refs(sample)?;
        let x1 = self.codec.encode(&self.lift(&sample.target, sample.origin)?)?;
        let mask = if self.masking_active(sample.origin) {
            sample_temporal_mask(x1.frames, self.opts.mask_ratio, rng)?
        } else {
            TemporalMask::none(x1.frames)
        };
        let x0 = gaussian_vec(rng, x1.tokens.len());
        let t = sample_timestep(rng, self.opts.t_mu, self.opts.t_sigma)?;
        let v = velocity(&x0, &x1.tokens)?;
        let xt = x1.with_tokens(interpolate(&x0, &x1.tokens, t)?)?;
        let xt = apply_frame_noise(&xt, &mask, rng)?;
        if self.opts.mask_reference_too && mask.count() > 0 {
            for r in &mut refs {
                let bits: Vec<bool> = (0..r.frames).map(|k| mask.bits.get(k).copied().unwrap_or(false)).collect();
                *r = apply_frame_noise(r, &TemporalMask { bits, ratio: mask.ratio }, rng)?;
            }
        }
        let ref_views: Vec<&LatentVideo> = refs.iter().collect();
        let (layout, tokens) = build_sequence(&ref_views, &xt, Some(&mask))?;
        Ok(Prepared {
            layout,
            tokens,
            v,
            text_ids: self.vocab.tokenize(&sample.instruction),
            t,
            mask,
        })
    }

    /// Predicted velocity and loss of one prepared sample on `tape`.
    pub fn sample_loss<'t, E: Element>(
        &self,
        tape: &'t Tape<E>,
        params: &ParamStore<E>,
        p: &Prepared,
    ) -> Result<(Var<'t, E>, Var<'t, E>)> {
        let tokens: Vec<E> = p.tokens.iter().map(|&x| E::from_f64_lossy(x as f64)).collect();
        let v: Vec<E> = p.v.iter().map(|&x| E::from_f64_lossy(x as f64)).collect();
        let pred = self.dit.forward(tape, params, &tokens, &p.layout, &p.text_ids, p.t)?;
        let loss = loss_masked_var(pred, &v, &p.layout.loss_weight)?;
        Ok((pred, loss))
    }

    /// Mean loss and accumulated gradients over `samples`, without
    /// updating anything. Sample `b` draws from the stream `(seed, step, b)`.
    pub fn batch_gradients(
        &self,
        params: &ParamStore<f32>,
        samples: &[EditSample],
        seed: u64,
        step: u64,
    ) -> Result<(LossReport, Vec<Tensor<f32>>)> {
        if samples.is_empty() {
            return Err(Error::Loss("empty batch".into()));
        }
        let scale = 1.0 / samples.len() as f64;
        let mut grads: Vec<Tensor<f32>> = params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut report = LossReport {
            loss: 0.0,
            supervised: 0,
            masked: 0,
            per_frame: Vec::new(),
            t: 0.0,
        };
        for (b, sample) in samples.iter().enumerate() {
            let mut rng = rng_from(&[stream::TRAIN, seed, step, b as u64]);
            let prep = self.prepare(sample, &mut rng)?;
            let tape = Tape::new();
            let (pred, loss) = self.sample_loss(&tape, params, &prep)?;
            let value = loss.value().item()? as f64;
            if !value.is_finite() {
                return Err(Error::Loss(format!("non-finite loss {value} at step {step}")));
            }
            report.loss += value * scale;
            let g = tape.backward(loss.mul_scalar(scale as f32))?;
            for (acc, gi) in grads.iter_mut().zip(g.for_store(params)) {
                acc.add_assign(&gi)?;
            }
            report.supervised += prep.layout.supervised_tokens();
            report.masked += prep.layout.target_tokens() - prep.layout.supervised_tokens();
            report.t += prep.t * scale;
            let frames = per_frame_mse(pred.value().data(), &prep.v, prep.layout.tokens_per_frame() * prep.layout.dim);
            if report.per_frame.len() != frames.len() {
                report.per_frame = vec![0.0; frames.len()];
            }
            report.per_frame.iter_mut().zip(frames).for_each(|(a, f)| *a += f * scale);
        }
        Ok((report, grads))
    }

    /// One optimizer update on a batch; deterministic in `(samples, seed, step)`.
    pub fn train_step(
        &self,
        params: &mut ParamStore<f32>,
        opt: &mut OptimizerState<f32>,
        samples: &[EditSample],
        seed: u64,
        step: u64,
    ) -> Result<LossReport> {
        let (report, mut grads) = self.batch_gradients(params, samples, seed, step)?;
        if self.opts.grad_clip > 0.0 {
            clip_grad_norm(&mut grads, self.opts.grad_clip);
        }
        adamw_step(params.tensors_mut(), &grads, opt, &self.opts.adamw())?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_is_stable() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) >= 0.0 && logistic(800.0) <= 1.0);
    }

    #[test]
    fn endpoints_and_formula() {
        let x0 = [0.0f32, 1.0, -3.0];
        let x1 = [2.0f32, 1.0, 5.5];
        assert_eq!(interpolate(&x0, &x1, 0.0).unwrap(), x0);
        assert_eq!(interpolate(&x0, &x1, 1.0).unwrap(), x1);
        assert_eq!(interpolate(&x0, &x1, 0.25).unwrap()[0], 0.5);
        assert_eq!(interpolate(&x0, &x1, 0.7).unwrap()[1], 1.0);
        assert_eq!(velocity(&x0, &x1).unwrap(), vec![2.0, 0.0, 8.5]);
        assert!(interpolate(&x0, &x1[..2], 0.5).is_err());
    }

    #[test]
    fn hand_computed_masked_loss() {
        let d = 4;
        let pred = [3.0f32, 0.0, 0.0, 0.0, 100.0, 0.0, 0.0, 0.0];
        let v = [0.0f32; 8];
        let r = loss_masked(&pred, &v, &[1.0, 0.0], d, 1).unwrap();
        assert_eq!(r.loss, 9.0 / 4.0);
        assert_eq!((r.supervised, r.masked), (1, 1));
        assert!(loss_masked(&pred, &v, &[0.0, 0.0], d, 1).is_err());
        assert_eq!(loss_masked(&v, &v, &[1.0, 1.0], d, 1).unwrap().loss, 0.0);
    }
}
