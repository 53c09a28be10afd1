//! Euler integration of the learned velocity field and end-to-end editing.

use mixedit_tensor::{ParamStore, Tape};

use crate::codec::{LatentVideo, VideoClip};
use crate::error::{Error, Result};
use crate::flow::Pipeline;
use crate::rng::{gaussian_vec, rng_from, stream};
use crate::sequence::build_sequence;
use crate::synth::{EditSample, Origin};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { steps: 20, seed: 0 }
    }
}

/// Integrates `dx/dt = field(x, t)` from `t = 0` to `1` with `steps`
/// uniform Euler steps starting at `x`.
pub fn euler_integrate(
    mut x: Vec<f32>,
    steps: usize,
    mut field: impl FnMut(&[f32], f64) -> Result<Vec<f32>>,
) -> Result<Vec<f32>> {
    if steps == 0 {
        return Err(Error::Model("sampler needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    for k in 0..steps {
        let t = k as f64 / steps as f64;
        let v = field(&x, t)?;
        if v.len() != x.len() {
            return Err(Error::Model(format!("velocity has {} values, state has {}", v.len(), x.len())));
        }
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi = (*xi as f64 + dt * vi as f64) as f32;
        }
    }
    Ok(x)
}

/// Target latent of `target_frames` latent frames generated from the
/// references and instruction ids.
pub fn euler_sample(
    pipe: &Pipeline,
    params: &ParamStore<f32>,
    refs: &[LatentVideo],
    text_ids: &[usize],
    target_frames: usize,
    cfg: &SamplerConfig,
    noise_key: u64,
) -> Result<LatentVideo> {
    let first = refs.first().ok_or_else(|| Error::Model("at least one reference is required".into()))?;
    let shape = LatentVideo::zeros(target_frames, first.grid_h, first.grid_w, first.dim, first.codec_seed);
    let mut rng = rng_from(&[stream::SAMPLER, cfg.seed, noise_key]);
    let seed_noise = gaussian_vec(&mut rng, shape.tokens.len());
    let ref_views: Vec<&LatentVideo> = refs.iter().collect();
    let x = euler_integrate(seed_noise, cfg.steps, |x, t| {
        let xt = shape.with_tokens(x.to_vec())?;
        let (layout, tokens) = build_sequence(&ref_views, &xt, None)?;
        let tape = Tape::new();
        let v = pipe.dit.forward(&tape, params, &tokens, &layout, text_ids, t)?;
        let out = v.value().data().to_vec();
        Ok(out)
    })?;
    shape.with_tokens(x)
}

/// Mean over frames, giving a single-frame clip.
pub fn temporal_mean(clip: &VideoClip) -> VideoClip {
    let n = clip.frame_len();
    let mut acc = vec![0f64; n];
    for f in 0..clip.frames {
        acc.iter_mut().zip(clip.frame(f)).for_each(|(a, &p)| *a += p as f64);
    }
    let pixels = acc.into_iter().map(|a| (a / clip.frames as f64) as f32).collect();
    VideoClip {
        frames: 1,
        pixels,
        ..clip.clone()
    }
}

/// Generated target clip for `sample`. Image-origin outputs are reduced to
/// a single frame by averaging the decoded pseudo-video.
pub fn edit(pipe: &Pipeline, params: &ParamStore<f32>, sample: &EditSample, cfg: &SamplerConfig) -> Result<VideoClip> {
    let z = edit_latent(pipe, params, sample, cfg)?;
    let clip = pipe.codec.decode(&z)?;
    Ok(match sample.origin {
        Origin::Image if clip.frames > 1 => temporal_mean(&clip),
        _ => clip,
    })
}

pub fn edit_latent(pipe: &Pipeline, params: &ParamStore<f32>, sample: &EditSample, cfg: &SamplerConfig) -> Result<LatentVideo> {
    let refs = pipe.encode_refs(sample)?;
    let ids = pipe.vocab.tokenize(&sample.instruction);
    euler_sample(pipe, params, &refs, &ids, refs[0].frames, cfg, sample.seed)
}

/// Norms of the change in the sampled latent between consecutive step
/// counts `k, 2k, 4k, ...` (`levels` counts).
pub fn k_doubling_increments(
    pipe: &Pipeline,
    params: &ParamStore<f32>,
    sample: &EditSample,
    cfg: &SamplerConfig,
    levels: usize,
) -> Result<Vec<(usize, f64)>> {
    let mut prev: Option<LatentVideo> = None;
    let mut out = Vec::new();
    for i in 0..levels {
        let k = cfg.steps << i;
        let z = edit_latent(pipe, params, sample, &SamplerConfig { steps: k, ..*cfg })?;
        if let Some(p) = &prev {
            let d: f64 = p.tokens.iter().zip(&z.tokens).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
            out.push((k, d.sqrt()));
        }
        prev = Some(z);
    }
    Ok(out)
}
