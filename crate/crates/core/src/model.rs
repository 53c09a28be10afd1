//! Toy diffusion transformer over `[references, target]` latent tokens.
//!
//! Blocks are pre-norm (RMS) with self-attention under 3-axis rotary
//! embeddings, cross-attention to the instruction embedding and a SiLU MLP.
//! The timestep embedding and a reference/target role embedding are added
//! to every token after the input projection.

use mixedit_tensor::{concat, Element, ParamId, ParamStore, Tape, Tensor, Var};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruction::{embed_var, PAD};
use crate::rng::{rng_from, stream};
use crate::sequence::SequenceLayout;

/// What the output head produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prediction {
    /// The head output is the velocity.
    Velocity,
    /// The head output is the clean latent `x1`, converted to a velocity as
    /// `(x1_hat - x_t) / max(1 - t, clean_floor)`.
    Clean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub depth: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_text: usize,
    pub rope_theta: f64,
    /// Fractions of the head dimension given to the (t, h, w) rotary bands.
    pub rope_split: [f64; 3],
    pub mlp_ratio: usize,
    /// Width of the sinusoidal timestep features.
    pub time_dim: usize,
    pub prediction: Prediction,
    pub clean_floor: f64,
    /// Initial value of every entry of the self-attention query/key biases.
    pub qk_bias_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 4,
            d_model: 128,
            heads: 4,
            d_text: 64,
            rope_theta: 10_000.0,
            rope_split: [0.5, 0.25, 0.25],
            mlp_ratio: 4,
            time_dim: 64,
            prediction: Prediction::Clean,
            clean_floor: 0.05,
            qk_bias_init: 2.0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    /// Even band widths `(t, h, w)` summing to the head dimension.
    pub fn rope_bands(&self) -> [usize; 3] {
        let hd = self.head_dim();
        let even = |x: f64| 2 * ((x * hd as f64 / 2.0).round() as usize);
        let t = even(self.rope_split[0]).min(hd);
        let h = even(self.rope_split[1]).min(hd - t);
        [t, h, hd - t - h]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depth == 0 || self.d_model == 0 || self.heads == 0 || self.d_text == 0 || self.mlp_ratio == 0 {
            return bad("model sizes must be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.head_dim() % 2 != 0 {
            return bad(format!("head_dim {} must be even", self.head_dim()));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return bad(format!("time_dim {} must be positive and even", self.time_dim));
        }
        if self.rope_split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.rope_split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("rope_split {:?} must be fractions summing to 1", self.rope_split));
        }
        if self.rope_bands().iter().any(|b| b % 2 != 0) {
            return bad("rope bands must have even width".into());
        }
        if !(self.rope_theta > 1.0) {
            return bad(format!("rope_theta {} must exceed 1", self.rope_theta));
        }
        if !(self.clean_floor > 0.0 && self.clean_floor <= 1.0) {
            return bad(format!("clean_floor {} must be in (0, 1]", self.clean_floor));
        }
        Ok(())
    }
}

/// Rotation angle of every coordinate pair of one head for a token at
/// `(t, h, w)`; the pair's band decides which index it uses.
pub fn rope_angles(cfg: &ModelConfig, t: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.head_dim() / 2);
    for (band, idx) in cfg.rope_bands().into_iter().zip([t, h, w]) {
        for j in 0..band / 2 {
            let freq = cfg.rope_theta.powf(-2.0 * j as f64 / band as f64);
            out.push(idx as f64 * freq);
        }
    }
    out
}

/// Rotates one head vector: pair `(2i, 2i+1)` turns by its band's angle.
pub fn rope_rotate(v: &[f64], cfg: &ModelConfig, t: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    for (i, a) in rope_angles(cfg, t, h, w).into_iter().enumerate() {
        let (c, s) = (a.cos(), a.sin());
        let (x0, x1) = (v[2 * i], v[2 * i + 1]);
        out[2 * i] = x0 * c - x1 * s;
        out[2 * i + 1] = x1 * c + x0 * s;
    }
    out
}

/// `cos` and `sin` tables of shape `[tokens, head_dim / 2, 1]`.
fn rope_tables<E: Element>(cfg: &ModelConfig, layout: &SequenceLayout) -> Result<(Tensor<E>, Tensor<E>)> {
    let n = layout.num_tokens();
    let pairs = cfg.head_dim() / 2;
    let mut cos = Vec::with_capacity(n * pairs);
    let mut sin = Vec::with_capacity(n * pairs);
    for i in 0..n {
        for a in rope_angles(cfg, layout.t_idx[i], layout.h_idx[i], layout.w_idx[i]) {
            cos.push(E::from_f64_lossy(a.cos()));
            sin.push(E::from_f64_lossy(a.sin()));
        }
    }
    Ok((Tensor::new(&[n, pairs, 1], cos)?, Tensor::new(&[n, pairs, 1], sin)?))
}

/// Applies the rotation to `x` of shape `[heads, tokens, head_dim]`.
fn rope_var<'t, E: Element>(x: Var<'t, E>, cos: Var<'t, E>, sin: Var<'t, E>) -> Result<Var<'t, E>> {
    let s = x.shape();
    let pairs = x.reshape(&[s[0], s[1], s[2] / 2, 2])?;
    let x0 = pairs.narrow(3, 0, 1)?;
    let x1 = pairs.narrow(3, 1, 1)?;
    let y0 = x0.mul(cos)?.sub(x1.mul(sin)?)?;
    let y1 = x1.mul(cos)?.add(x0.mul(sin)?)?;
    Ok(concat(&[y0, y1], 3)?.reshape(&s)?)
}

/// Sinusoidal features of `t` (scaled by 1000), `[cos | sin]`.
pub fn timestep_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half).map(|j| 10_000f64.powf(-(j as f64) / half as f64)).collect();
    let mut out: Vec<f64> = freqs.iter().map(|f| (1000.0 * t * f).cos()).collect();
    out.extend(freqs.iter().map(|f| (1000.0 * t * f).sin()));
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Normal(f64),
    Zeros,
    Ones,
    Const(f64),
}

#[derive(Clone, Debug, PartialEq)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

#[derive(Clone, Copy, Debug)]
struct BlockIds {
    norm1: ParamId,
    qkv: ParamId,
    qk_bias: ParamId,
    attn_out: ParamId,
    norm2: ParamId,
    cross_q: ParamId,
    cross_kv: ParamId,
    cross_out: ParamId,
    norm3: ParamId,
    mlp_w1: ParamId,
    mlp_b1: ParamId,
    mlp_w2: ParamId,
    mlp_b2: ParamId,
}

/// Architecture description; parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Dit {
    cfg: ModelConfig,
    d_lat: usize,
    vocab_size: usize,
    max_len: usize,
    specs: Vec<ParamSpec>,
    in_w: ParamId,
    in_b: ParamId,
    role: ParamId,
    time_w1: ParamId,
    time_b1: ParamId,
    time_w2: ParamId,
    time_b2: ParamId,
    text_table: ParamId,
    text_pos: ParamId,
    blocks: Vec<BlockIds>,
    out_norm: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Standard deviation for projection weights.
const PROJ_STD: f64 = 0.02;
const NORM_EPS: f64 = 1e-6;
/// Additive attention bias at PAD instruction positions.
const PAD_BIAS: f64 = -1e9;

impl Dit {
    pub fn new(cfg: ModelConfig, d_lat: usize, vocab_size: usize, max_len: usize) -> Result<Self> {
        cfg.validate()?;
        if d_lat == 0 || vocab_size < 2 || max_len == 0 {
            return Err(Error::Model(format!(
                "invalid sizes d_lat={d_lat} vocab={vocab_size} max_len={max_len}"
            )));
        }
        let mut specs = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, init: Init| {
            specs.push(ParamSpec { name, shape, init });
            ParamId(specs.len() - 1)
        };
        let (d, dt, hid) = (cfg.d_model, cfg.d_text, cfg.d_model * cfg.mlp_ratio);
        let in_w = add("in.w".into(), vec![d_lat, d], Init::Normal(PROJ_STD));
        let in_b = add("in.b".into(), vec![d], Init::Zeros);
        let role = add("role".into(), vec![2, d], Init::Normal(1.0));
        let time_w1 = add("time.w1".into(), vec![cfg.time_dim, d], Init::Normal(PROJ_STD));
        let time_b1 = add("time.b1".into(), vec![d], Init::Zeros);
        let time_w2 = add("time.w2".into(), vec![d, d], Init::Normal(PROJ_STD));
        let time_b2 = add("time.b2".into(), vec![d], Init::Zeros);
        let text_table = add("text.table".into(), vec![vocab_size, dt], Init::Normal(1.0));
        let text_pos = add("text.pos".into(), vec![max_len, dt], Init::Normal(1.0));
        let blocks = (0..cfg.depth)
            .map(|i| BlockIds {
                norm1: add(format!("b{i}.norm1"), vec![d], Init::Ones),
                qkv: add(format!("b{i}.qkv"), vec![d, 3 * d], Init::Normal(PROJ_STD)),
                qk_bias: add(format!("b{i}.qk_bias"), vec![2 * d], Init::Const(cfg.qk_bias_init)),
                attn_out: add(format!("b{i}.attn_out"), vec![d, d], Init::Normal(PROJ_STD)),
                norm2: add(format!("b{i}.norm2"), vec![d], Init::Ones),
                cross_q: add(format!("b{i}.cross_q"), vec![d, d], Init::Normal(PROJ_STD)),
                cross_kv: add(format!("b{i}.cross_kv"), vec![dt, 2 * d], Init::Normal(PROJ_STD)),
                cross_out: add(format!("b{i}.cross_out"), vec![d, d], Init::Normal(PROJ_STD)),
                norm3: add(format!("b{i}.norm3"), vec![d], Init::Ones),
                mlp_w1: add(format!("b{i}.mlp_w1"), vec![d, hid], Init::Normal(PROJ_STD)),
                mlp_b1: add(format!("b{i}.mlp_b1"), vec![hid], Init::Zeros),
                mlp_w2: add(format!("b{i}.mlp_w2"), vec![hid, d], Init::Normal(PROJ_STD)),
                mlp_b2: add(format!("b{i}.mlp_b2"), vec![d], Init::Zeros),
            })
            .collect();
        let out_norm = add("out.norm".into(), vec![d], Init::Ones);
        let out_w = add("out.w".into(), vec![d, d_lat], Init::Zeros);
        let out_b = add("out.b".into(), vec![d_lat], Init::Zeros);
        Ok(Dit {
            cfg,
            d_lat,
            vocab_size,
            max_len,
            specs,
            in_w,
            in_b,
            role,
            time_w1,
            time_b1,
            time_w2,
            time_b2,
            text_table,
            text_pos,
            blocks,
            out_norm,
            out_w,
            out_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn d_lat(&self) -> usize {
        self.d_lat
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Seeded initial parameters.
    pub fn init<E: Element>(&self, seed: u64) -> Result<ParamStore<E>> {
        let mut store = ParamStore::new();
        for (i, spec) in self.specs.iter().enumerate() {
            let n: usize = spec.shape.iter().product();
            let data: Vec<E> = match spec.init {
                Init::Zeros => vec![E::zero(); n],
                Init::Ones => vec![E::one(); n],
                Init::Const(c) => vec![E::from_f64_lossy(c); n],
                Init::Normal(std) => {
                    let mut rng = rng_from(&[stream::INIT, seed, i as u64]);
                    (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            E::from_f64_lossy(std * z)
                        })
                        .collect()
                }
            };
            store.insert(&spec.name, Tensor::new(&spec.shape, data)?)?;
        }
        Ok(store)
    }

    /// Checks that `store` holds exactly this architecture's parameters.
    pub fn check_params<E: Element>(&self, store: &ParamStore<E>) -> Result<()> {
        if store.len() != self.specs.len() {
            return Err(Error::Model(format!(
                "expected {} parameters, found {}",
                self.specs.len(),
                store.len()
            )));
        }
        for (i, spec) in self.specs.iter().enumerate() {
            let id = ParamId(i);
            if store.name(id) != spec.name || store.get(id).shape() != spec.shape.as_slice() {
                return Err(Error::Model(format!(
                    "parameter {i} is {} {:?}, expected {} {:?}",
                    store.name(id),
                    store.get(id).shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Ids of the instruction embedding tables.
    pub fn text_params(&self) -> (ParamId, ParamId) {
        (self.text_table, self.text_pos)
    }

    pub fn head_params(&self) -> (ParamId, ParamId) {
        (self.out_w, self.out_b)
    }

    /// Predicted velocity for the target tokens, shape
    /// `[target_tokens, d_lat]`. `tokens` is the flat `[tokens, d_lat]`
    /// sequence described by `layout`, with the target segment holding `x_t`.
    pub fn forward<'t, E: Element>(
        &self,
        tape: &'t Tape<E>,
        params: &ParamStore<E>,
        tokens: &[E],
        layout: &SequenceLayout,
        text_ids: &[usize],
        t: f64,
    ) -> Result<Var<'t, E>> {
        let head = self.forward_head(tape, params, tokens, layout, text_ids, t)?;
        match self.cfg.prediction {
            Prediction::Velocity => Ok(head),
            Prediction::Clean => {
                let nt = layout.target_tokens();
                let off = layout.target_offset() * self.d_lat;
                let xt = Tensor::new(&[nt, self.d_lat], tokens[off..off + nt * self.d_lat].to_vec())?;
                let scale = 1.0 / (1.0 - t).max(self.cfg.clean_floor);
                Ok(head.sub(tape.constant(xt))?.mul_scalar(E::from_f64_lossy(scale)))
            }
        }
    }

    /// Raw output head on the target tokens (before any prediction-mode
    /// conversion).
    pub fn forward_head<'t, E: Element>(
        &self,
        tape: &'t Tape<E>,
        params: &ParamStore<E>,
        tokens: &[E],
        layout: &SequenceLayout,
        text_ids: &[usize],
        t: f64,
    ) -> Result<Var<'t, E>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Model(format!("timestep {t} outside [0, 1]")));
        }
        let n = layout.num_tokens();
        if layout.dim != self.d_lat || tokens.len() != n * self.d_lat {
            return Err(Error::Model(format!(
                "token buffer of {} values does not match layout {}x{} (model d_lat {})",
                tokens.len(),
                n,
                layout.dim,
                self.d_lat
            )));
        }
        if text_ids.len() != self.max_len {
            return Err(Error::Model(format!(
                "instruction has {} ids, expected {}",
                text_ids.len(),
                self.max_len
            )));
        }
        let p = |id: ParamId| tape.param(params, id);
        let cfg = &self.cfg;
        let (d, heads, hd) = (cfg.d_model, cfg.heads, cfg.head_dim());

        let input = tape.constant(Tensor::new(&[n, self.d_lat], tokens.to_vec())?);
        let mut x = input.matmul(p(self.in_w))?.add(p(self.in_b))?;

        let feats: Vec<E> = timestep_features(t, cfg.time_dim).into_iter().map(E::from_f64_lossy).collect();
        let temb = tape
            .constant(Tensor::new(&[1, cfg.time_dim], feats)?)
            .matmul(p(self.time_w1))?
            .add(p(self.time_b1))?
            .silu()
            .matmul(p(self.time_w2))?
            .add(p(self.time_b2))?;
        let roles = p(self.role).gather(&layout.role_ids())?;
        x = x.add(temb)?.add(roles)?;

        let text = embed_var(text_ids, p(self.text_table), p(self.text_pos))?;
        let live_text = text_ids.iter().any(|&i| i != PAD);
        let pad_bias: Vec<E> = text_ids
            .iter()
            .map(|&i| E::from_f64_lossy(if i == PAD { PAD_BIAS } else { 0.0 }))
            .collect();
        let pad_bias = tape.constant(Tensor::new(&[1, 1, self.max_len], pad_bias)?);

        let (cos, sin) = rope_tables::<E>(cfg, layout)?;
        let (cos, sin) = (tape.constant(cos), tape.constant(sin));
        let scale = E::from_f64_lossy(1.0 / (hd as f64).sqrt());
        let eps = E::from_f64_lossy(NORM_EPS);
        let heads_of = |v: Var<'t, E>, len: usize| -> Result<Var<'t, E>> { Ok(v.reshape(&[len, heads, hd])?.permute(&[1, 0, 2])?) };
        let merge = |v: Var<'t, E>, len: usize| -> Result<Var<'t, E>> { Ok(v.permute(&[1, 0, 2])?.reshape(&[len, d])?) };

        for b in &self.blocks {
            let h = x.rms_norm(eps)?.mul(p(b.norm1))?;
            let qkv = h.matmul(p(b.qkv))?.split(1, &[2 * d, d])?;
            let qk = qkv[0].add(p(b.qk_bias))?.split(1, &[d, d])?;
            let q = rope_var(heads_of(qk[0], n)?, cos, sin)?;
            let k = rope_var(heads_of(qk[1], n)?, cos, sin)?;
            let v = heads_of(qkv[1], n)?;
            let attn = q.matmul(k.transpose(1, 2)?)?.mul_scalar(scale).softmax()?;
            let out = merge(attn.matmul(v)?, n)?.matmul(p(b.attn_out))?;
            x = x.add(out)?;

            if live_text {
                let h = x.rms_norm(eps)?.mul(p(b.norm2))?;
                let q = heads_of(h.matmul(p(b.cross_q))?, n)?;
                let kv = text.matmul(p(b.cross_kv))?.split(1, &[d, d])?;
                let k = heads_of(kv[0], self.max_len)?;
                let v = heads_of(kv[1], self.max_len)?;
                let attn = q.matmul(k.transpose(1, 2)?)?.mul_scalar(scale).add(pad_bias)?.softmax()?;
                let out = merge(attn.matmul(v)?, n)?.matmul(p(b.cross_out))?;
                x = x.add(out)?;
            }

            let h = x.rms_norm(eps)?.mul(p(b.norm3))?;
            let h = h.matmul(p(b.mlp_w1))?.add(p(b.mlp_b1))?.silu();
            x = x.add(h.matmul(p(b.mlp_w2))?.add(p(b.mlp_b2))?)?;
        }

        let target = x.narrow(0, layout.target_offset(), layout.target_tokens())?;
        let h = target.rms_norm(eps)?.mul(p(self.out_norm))?;
        Ok(h.matmul(p(self.out_w))?.add(p(self.out_b))?)
    }
}
