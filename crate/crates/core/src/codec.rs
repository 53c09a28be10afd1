//! Exactly invertible patch codec standing in for a video VAE.
//!
//! Pixel frame 0 is encoded on its own; every later group of `temporal`
//! frames becomes one latent frame. Each spatial `patch x patch` block of a
//! group is flattened and multiplied by a fixed orthonormal matrix, so
//! decoding is a transpose and round trips are exact up to rounding.

use crate::error::{Error, Result};
use crate::rng::{gaussian_vec, rng_from, stream};

/// Pixel clip with layout `frames x channels x height x width`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl VideoClip {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if frames == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(Error::Codec("clip dimensions must be positive".into()));
        }
        if pixels.len() != frames * channels * height * width {
            return Err(Error::Codec(format!(
                "pixel buffer has {} values, expected {frames}x{channels}x{height}x{width}",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Codec(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(VideoClip {
            frames,
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn filled(frames: usize, channels: usize, height: usize, width: usize, value: f32) -> Self {
        VideoClip {
            frames,
            channels,
            height,
            width,
            pixels: vec![value; frames * channels * height * width],
        }
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        let n = self.frame_len();
        &self.pixels[f * n..(f + 1) * n]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.pixels[f * n..(f + 1) * n]
    }

    pub fn index(&self, f: usize, c: usize, y: usize, x: usize) -> usize {
        ((f * self.channels + c) * self.height + y) * self.width + x
    }

    pub fn get(&self, f: usize, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[self.index(f, c, y, x)]
    }

    pub fn same_shape(&self, other: &VideoClip) -> bool {
        (self.frames, self.channels, self.height, self.width) == (other.frames, other.channels, other.height, other.width)
    }

    /// Clip made of a single frame of this one.
    pub fn single_frame(&self, f: usize) -> VideoClip {
        VideoClip {
            frames: 1,
            channels: self.channels,
            height: self.height,
            width: self.width,
            pixels: self.frame(f).to_vec(),
        }
    }
}

/// Latent tokens with layout `frames x grid_h x grid_w x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVideo {
    pub frames: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub tokens: Vec<f32>,
    pub codec_seed: u64,
}

impl LatentVideo {
    pub fn zeros(frames: usize, grid_h: usize, grid_w: usize, dim: usize, codec_seed: u64) -> Self {
        LatentVideo {
            frames,
            grid_h,
            grid_w,
            dim,
            tokens: vec![0.0; frames * grid_h * grid_w * dim],
            codec_seed,
        }
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn num_tokens(&self) -> usize {
        self.frames * self.tokens_per_frame()
    }

    pub fn frame_len(&self) -> usize {
        self.tokens_per_frame() * self.dim
    }

    pub fn frame(&self, k: usize) -> &[f32] {
        let n = self.frame_len();
        &self.tokens[k * n..(k + 1) * n]
    }

    pub fn frame_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.tokens[k * n..(k + 1) * n]
    }

    pub fn same_layout(&self, other: &LatentVideo) -> bool {
        (self.frames, self.grid_h, self.grid_w, self.dim) == (other.frames, other.grid_h, other.grid_w, other.dim)
    }

    pub fn with_tokens(&self, tokens: Vec<f32>) -> Result<LatentVideo> {
        if tokens.len() != self.tokens.len() {
            return Err(Error::Codec(format!(
                "token buffer has {} values, expected {}",
                tokens.len(),
                self.tokens.len()
            )));
        }
        Ok(LatentVideo { tokens, ..self.clone() })
    }
}

/// Codec parameters; the matrices are a pure function of these.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecParams {
    pub seed: u64,
    pub patch: usize,
    pub temporal: usize,
    pub channels: usize,
}

impl CodecParams {
    /// Token dimension `patch^2 * channels * temporal`.
    pub fn latent_dim(&self) -> usize {
        self.patch * self.patch * self.channels * self.temporal
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    /// Latent length `1 + (frames - 1) / temporal` for an accepted frame count.
    pub fn latent_frames(&self, frames: usize) -> Result<usize> {
        if frames == 0 || (frames - 1) % self.temporal != 0 {
            return Err(Error::Codec(format!(
                "frame count {frames} must satisfy f = 1 (mod {})",
                self.temporal
            )));
        }
        Ok(1 + (frames - 1) / self.temporal)
    }

    pub fn pixel_frames(&self, latent_frames: usize) -> usize {
        1 + (latent_frames.max(1) - 1) * self.temporal
    }
}

/// Frozen encoder/decoder pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Codec {
    params: CodecParams,
    /// `dim x patch_dim`, orthonormal columns, row-major.
    first: Vec<f32>,
    /// `dim x dim`, orthogonal, row-major.
    rest: Vec<f32>,
}

/// Orthonormal columns from modified Gram-Schmidt on seeded Gaussian
/// columns, run twice for numerical orthogonality. Returns `rows x cols`
/// row-major.
fn orthonormal_columns(rows: usize, cols: usize, seed_parts: &[u64]) -> Vec<f32> {
    let mut rng = rng_from(seed_parts);
    let mut q: Vec<Vec<f64>> = (0..cols)
        .map(|_| gaussian_vec(&mut rng, rows).into_iter().map(f64::from).collect())
        .collect();
    for j in 0..cols {
        for _pass in 0..2 {
            for i in 0..j {
                let (done, rest) = q.split_at_mut(j);
                let dot: f64 = done[i].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
                rest[0].iter_mut().zip(&done[i]).for_each(|(v, u)| *v -= dot * u);
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        q[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut out = vec![0f32; rows * cols];
    for (j, col) in q.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            out[i * cols + j] = v as f32;
        }
    }
    out
}

/// `out = m @ x` for row-major `m` (`rows x cols`), accumulated in f64.
fn matvec(m: &[f32], rows: usize, cols: usize, x: &[f32], out: &mut [f32]) {
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &m[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() as f32;
    }
}

/// `out = m^T @ z` for row-major `m` (`rows x cols`), accumulated in f64.
fn matvec_t(m: &[f32], rows: usize, cols: usize, z: &[f32], out: &mut [f32]) {
    let mut acc = vec![0f64; cols];
    for r in 0..rows {
        let zr = z[r] as f64;
        for (a, &w) in acc.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *a += w as f64 * zr;
        }
    }
    out.iter_mut().zip(acc).for_each(|(o, a)| *o = a as f32);
}

pub fn build_codec(params: CodecParams) -> Result<Codec> {
    if params.patch == 0 || params.temporal == 0 || params.channels == 0 {
        return Err(Error::Codec(format!("invalid codec parameters {params:?}")));
    }
    let d = params.latent_dim();
    let k = params.patch_dim();
    let first = orthonormal_columns(d, k, &[stream::CODEC, params.seed, 0]);
    let rest = orthonormal_columns(d, d, &[stream::CODEC, params.seed, 1]);
    Ok(Codec { params, first, rest })
}

impl Codec {
    pub fn params(&self) -> CodecParams {
        self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.params.latent_dim()
    }

    /// Row-major `dim x patch_dim` first-frame matrix.
    pub fn first_matrix(&self) -> &[f32] {
        &self.first
    }

    /// Row-major `dim x dim` matrix for later frame groups.
    pub fn rest_matrix(&self) -> &[f32] {
        &self.rest
    }

    fn check_clip(&self, v: &VideoClip) -> Result<usize> {
        let p = self.params.patch;
        if v.channels != self.params.channels {
            return Err(Error::Codec(format!(
                "clip has {} channels, codec expects {}",
                v.channels, self.params.channels
            )));
        }
        if v.height % p != 0 || v.width % p != 0 {
            return Err(Error::Codec(format!(
                "clip size {}x{} not divisible by patch {p}",
                v.height, v.width
            )));
        }
        self.params.latent_frames(v.frames)
    }

    /// Writes the shifted patch of frame `f` at grid cell `(gy, gx)` into `out`
    /// (`channels x patch x patch` order).
    fn gather_patch(&self, v: &VideoClip, f: usize, gy: usize, gx: usize, out: &mut [f32]) {
        let p = self.params.patch;
        let mut i = 0;
        for c in 0..v.channels {
            for py in 0..p {
                let start = v.index(f, c, gy * p + py, gx * p);
                for &px in &v.pixels[start..start + p] {
                    out[i] = px - 0.5;
                    i += 1;
                }
            }
        }
    }

    fn scatter_patch(&self, v: &mut VideoClip, f: usize, gy: usize, gx: usize, vals: &[f32]) {
        let p = self.params.patch;
        let mut i = 0;
        for c in 0..v.channels {
            for py in 0..p {
                let start = v.index(f, c, gy * p + py, gx * p);
                for px in &mut v.pixels[start..start + p] {
                    *px = (vals[i] + 0.5).clamp(0.0, 1.0);
                    i += 1;
                }
            }
        }
    }

    pub fn encode(&self, v: &VideoClip) -> Result<LatentVideo> {
        let l = self.check_clip(v)?;
        let p = self.params.patch;
        let (gh, gw) = (v.height / p, v.width / p);
        let d = self.latent_dim();
        let k = self.params.patch_dim();
        let st = self.params.temporal;
        let mut z = LatentVideo::zeros(l, gh, gw, d, self.params.seed);
        let mut u = vec![0f32; d];
        for lf in 0..l {
            for gy in 0..gh {
                for gx in 0..gw {
                    let off = ((lf * gh + gy) * gw + gx) * d;
                    let token = &mut z.tokens[off..off + d];
                    if lf == 0 {
                        self.gather_patch(v, 0, gy, gx, &mut u[..k]);
                        matvec(&self.first, d, k, &u[..k], token);
                    } else {
                        for j in 0..st {
                            let f = 1 + (lf - 1) * st + j;
                            self.gather_patch(v, f, gy, gx, &mut u[j * k..(j + 1) * k]);
                        }
                        matvec(&self.rest, d, d, &u, token);
                    }
                }
            }
        }
        Ok(z)
    }

    /// Inverse of [`Codec::encode`]; the spatial size is `grid * patch`.
    pub fn decode(&self, z: &LatentVideo) -> Result<VideoClip> {
        let d = self.latent_dim();
        if z.dim != d {
            return Err(Error::Codec(format!("latent dim {} but codec dim {d}", z.dim)));
        }
        if z.frames == 0 || z.tokens.len() != z.frames * z.grid_h * z.grid_w * d {
            return Err(Error::Codec("latent token buffer does not match its layout".into()));
        }
        let p = self.params.patch;
        let k = self.params.patch_dim();
        let st = self.params.temporal;
        let frames = self.params.pixel_frames(z.frames);
        let mut v = VideoClip::filled(frames, self.params.channels, z.grid_h * p, z.grid_w * p, 0.5);
        let mut u = vec![0f32; d];
        for lf in 0..z.frames {
            for gy in 0..z.grid_h {
                for gx in 0..z.grid_w {
                    let off = ((lf * z.grid_h + gy) * z.grid_w + gx) * d;
                    let token = &z.tokens[off..off + d];
                    if lf == 0 {
                        matvec_t(&self.first, d, k, token, &mut u[..k]);
                        self.scatter_patch(&mut v, 0, gy, gx, &u[..k]);
                    } else {
                        matvec_t(&self.rest, d, d, token, &mut u);
                        for j in 0..st {
                            let f = 1 + (lf - 1) * st + j;
                            self.scatter_patch(&mut v, f, gy, gx, &u[j * k..(j + 1) * k]);
                        }
                    }
                }
            }
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(patch: usize, temporal: usize) -> CodecParams {
        CodecParams {
            seed: 7,
            patch,
            temporal,
            channels: 3,
        }
    }

    fn gram_error(m: &[f32], rows: usize, cols: usize) -> f64 {
        let mut worst = 0f64;
        for i in 0..cols {
            for j in 0..cols {
                let dot: f64 = (0..rows).map(|r| m[r * cols + i] as f64 * m[r * cols + j] as f64).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        worst
    }

    #[test]
    fn matrices_are_orthonormal() {
        let c = build_codec(params(4, 4)).unwrap();
        let d = c.latent_dim();
        assert!(gram_error(c.rest_matrix(), d, d) < 1e-5);
        assert!(gram_error(c.first_matrix(), d, c.params().patch_dim()) < 1e-5);
    }

    #[test]
    fn same_seed_same_matrices() {
        let a = build_codec(params(4, 2)).unwrap();
        let b = build_codec(params(4, 2)).unwrap();
        assert_eq!(a, b);
        let other = build_codec(CodecParams { seed: 8, ..params(4, 2) }).unwrap();
        assert_ne!(a.rest_matrix(), other.rest_matrix());
    }

    #[test]
    fn latent_length_formula() {
        let p = params(8, 4);
        assert_eq!(p.latent_frames(49).unwrap(), 13);
        assert_eq!(p.latent_frames(1).unwrap(), 1);
        assert_eq!(p.latent_frames(9).unwrap(), 3);
        assert!(p.latent_frames(8).is_err());
    }

    #[test]
    fn gray_clip_has_zero_latents_after_first_frame() {
        let c = build_codec(params(4, 4)).unwrap();
        let z = c.encode(&VideoClip::filled(9, 3, 8, 8, 0.5)).unwrap();
        assert_eq!(z.frames, 3);
        assert!(z.tokens.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_latent_decodes_to_gray() {
        let c = build_codec(params(4, 4)).unwrap();
        let z = LatentVideo::zeros(3, 2, 2, c.latent_dim(), 7);
        let v = c.decode(&z).unwrap();
        assert_eq!((v.frames, v.height, v.width), (9, 8, 8));
        assert!(v.pixels.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn encode_rejects_bad_shapes() {
        let c = build_codec(params(4, 4)).unwrap();
        assert!(matches!(c.encode(&VideoClip::filled(8, 3, 8, 8, 0.5)), Err(Error::Codec(_))));
        assert!(matches!(c.encode(&VideoClip::filled(5, 3, 6, 8, 0.5)), Err(Error::Codec(_))));
        let z = LatentVideo::zeros(1, 1, 1, 10, 7);
        assert!(c.decode(&z).is_err());
    }
}
