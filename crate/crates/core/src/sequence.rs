//! Image repetition, frame-wise token noise and reference/target sequence
//! layout with per-segment temporal indices.

use rand::seq::index::sample;

use crate::codec::{LatentVideo, VideoClip};
use crate::error::{Error, Result};
use crate::rng::{gaussian_vec, Rng};

/// Clip with `n` copies of the single frame of `image`.
pub fn repeat_image(image: &VideoClip, n: usize, temporal: usize) -> Result<VideoClip> {
    if image.frames != 1 {
        return Err(Error::Sequence(format!("repeat_image needs one frame, got {}", image.frames)));
    }
    if n == 0 || temporal == 0 || (n - 1) % temporal != 0 {
        return Err(Error::Sequence(format!(
            "repeat count {n} must satisfy N = 1 (mod {temporal})"
        )));
    }
    Ok(VideoClip {
        frames: n,
        pixels: image.pixels.repeat(n),
        ..image.clone()
    })
}

/// Which latent frames are replaced by noise (`true` = masked).
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalMask {
    pub bits: Vec<bool>,
    pub ratio: f64,
}

impl TemporalMask {
    pub fn none(len: usize) -> Self {
        TemporalMask {
            bits: vec![false; len],
            ratio: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// `floor(ratio * len)`, capped so at least one frame stays supervised.
pub fn masked_count(len: usize, ratio: f64) -> usize {
    ((ratio * len as f64).floor() as usize).min(len.saturating_sub(1))
}

pub fn sample_temporal_mask(len: usize, ratio: f64, rng: &mut Rng) -> Result<TemporalMask> {
    if len == 0 {
        return Err(Error::Sequence("mask length must be positive".into()));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Sequence(format!("mask ratio {ratio} outside [0, 1)")));
    }
    let mut bits = vec![false; len];
    for i in sample(rng, len, masked_count(len, ratio)) {
        bits[i] = true;
    }
    Ok(TemporalMask { bits, ratio })
}

/// Replaces every token of each masked latent frame with standard Gaussian
/// samples, drawn frame by frame in increasing order.
pub fn apply_frame_noise(z: &LatentVideo, mask: &TemporalMask, rng: &mut Rng) -> Result<LatentVideo> {
    if mask.len() != z.frames {
        return Err(Error::Sequence(format!(
            "mask length {} but latent has {} frames",
            mask.len(),
            z.frames
        )));
    }
    let mut out = z.clone();
    for (k, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        let noise = gaussian_vec(rng, out.frame_len());
        out.frame_mut(k).copy_from_slice(&noise);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Reference(usize),
    Target,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub role: Role,
    pub temporal_len: usize,
    /// Index of the segment's first token in the flat sequence.
    pub offset: usize,
}

/// Token order and rotary indices of a `[ref_1, ..., ref_n, target]` sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceLayout {
    pub segments: Vec<Segment>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub t_idx: Vec<usize>,
    pub h_idx: Vec<usize>,
    pub w_idx: Vec<usize>,
    /// One weight per target token, in target token order.
    pub loss_weight: Vec<f32>,
}

impl SequenceLayout {
    pub fn tokens_per_frame(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn num_tokens(&self) -> usize {
        self.t_idx.len()
    }

    pub fn num_references(&self) -> usize {
        self.segments.len() - 1
    }

    pub fn target(&self) -> &Segment {
        self.segments.last().expect("layout has a target segment")
    }

    pub fn target_tokens(&self) -> usize {
        self.target().temporal_len * self.tokens_per_frame()
    }

    pub fn target_offset(&self) -> usize {
        self.target().offset
    }

    /// 0 for reference tokens, 1 for target tokens.
    pub fn role_ids(&self) -> Vec<usize> {
        let off = self.target_offset();
        (0..self.num_tokens()).map(|i| usize::from(i >= off)).collect()
    }

    pub fn supervised_tokens(&self) -> usize {
        self.loss_weight.iter().filter(|&&w| w != 0.0).count()
    }
}

/// Layout for references of the given temporal lengths and a target,
/// each segment's temporal index restarting at 0.
pub fn build_layout(
    ref_lens: &[usize],
    target_len: usize,
    grid_h: usize,
    grid_w: usize,
    dim: usize,
    mask: Option<&TemporalMask>,
) -> Result<SequenceLayout> {
    if ref_lens.is_empty() {
        return Err(Error::Sequence("at least one reference is required".into()));
    }
    if let Some(m) = mask {
        if m.len() != target_len {
            return Err(Error::Sequence(format!(
                "mask length {} but target has {target_len} latent frames",
                m.len()
            )));
        }
    }
    let hw = grid_h * grid_w;
    let mut segments = Vec::with_capacity(ref_lens.len() + 1);
    let (mut t_idx, mut h_idx, mut w_idx) = (Vec::new(), Vec::new(), Vec::new());
    let lens = ref_lens.iter().copied().chain(std::iter::once(target_len));
    for (k, len) in lens.enumerate() {
        let role = if k < ref_lens.len() { Role::Reference(k) } else { Role::Target };
        segments.push(Segment {
            role,
            temporal_len: len,
            offset: t_idx.len(),
        });
        for t in 0..len {
            for h in 0..grid_h {
                for w in 0..grid_w {
                    t_idx.push(t);
                    h_idx.push(h);
                    w_idx.push(w);
                }
            }
        }
    }
    let mut loss_weight = Vec::with_capacity(target_len * hw);
    for t in 0..target_len {
        let masked = mask.is_some_and(|m| m.bits[t]);
        loss_weight.extend(std::iter::repeat_n(if masked { 0.0 } else { 1.0 }, hw));
    }
    Ok(SequenceLayout {
        segments,
        grid_h,
        grid_w,
        dim,
        t_idx,
        h_idx,
        w_idx,
        loss_weight,
    })
}

/// Concatenates reference and target latents into one flat token buffer
/// (`tokens x dim`) with its layout.
pub fn build_sequence(
    refs: &[&LatentVideo],
    target: &LatentVideo,
    mask: Option<&TemporalMask>,
) -> Result<(SequenceLayout, Vec<f32>)> {
    for r in refs {
        if (r.grid_h, r.grid_w, r.dim) != (target.grid_h, target.grid_w, target.dim) {
            return Err(Error::Sequence(format!(
                "reference grid {}x{}x{} does not match target {}x{}x{}",
                r.grid_h, r.grid_w, r.dim, target.grid_h, target.grid_w, target.dim
            )));
        }
    }
    let lens: Vec<usize> = refs.iter().map(|r| r.frames).collect();
    let layout = build_layout(&lens, target.frames, target.grid_h, target.grid_w, target.dim, mask)?;
    let mut tokens = Vec::with_capacity(layout.num_tokens() * target.dim);
    for r in refs {
        tokens.extend_from_slice(&r.tokens);
    }
    tokens.extend_from_slice(&target.tokens);
    Ok((layout, tokens))
}
