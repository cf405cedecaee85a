use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tokens::{Tokenization, Tokenizer};
use crate::error::{bail, Result};
use crate::rng::{Rng, SeedStream};
use crate::store::LayerLayout;
use crate::tensor::{Activation, Scalar, Tape, Tensor, Var};

/// Shape of the encoder, decoder and projection head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub tokenization: Tokenization,
    pub use_compression_token: bool,
    pub blocks: usize,
    pub heads: usize,
    pub token_dim: usize,
    pub ffn_dim: usize,
    pub latent_dim: usize,
    pub input_dim: usize,
    pub dropout: f64,
    pub projection_dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            tokenization: Tokenization::PerNeuron,
            use_compression_token: true,
            blocks: 2,
            heads: 1,
            token_dim: 128,
            ffn_dim: 512,
            latent_dim: 50,
            input_dim: 100,
            dropout: 0.1,
            projection_dim: 64,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Defaults for `layout` with latent size `round(N / c)`.
    pub fn for_layout(layout: &LayerLayout, compression_ratio: f64) -> Self {
        let latent = ((layout.n as f64 / compression_ratio).round() as usize).max(1);
        Self {
            input_dim: layout.n,
            latent_dim: latent,
            ..Self::default()
        }
    }

    pub fn compression_ratio(&self) -> f64 {
        self.input_dim as f64 / self.latent_dim as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.latent_dim >= self.input_dim {
            bail!(Config, "latent dim {} must satisfy 0 < L < N = {}", self.latent_dim, self.input_dim);
        }
        if self.blocks == 0 || self.heads == 0 || self.token_dim == 0 || self.ffn_dim == 0 || self.projection_dim == 0 {
            bail!(Config, "blocks, heads, token, ffn and projection dims must be positive");
        }
        if self.token_dim % self.heads != 0 {
            bail!(Config, "token dim {} is not divisible by {} heads", self.token_dim, self.heads);
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(Config, "dropout {} must lie in [0, 1)", self.dropout);
        }
        Ok(())
    }
}

/// A latent vector together with the checkpoint it encodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRep {
    pub z: Vec<f32>,
    pub model: usize,
    pub epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    Fan(usize),
    Embedding,
    Ones,
    Zeros,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

const BLOCK_PARAMS: usize = 16;

fn linear_specs(out: &mut Vec<ParamSpec>, name: &str, o: usize, i: usize) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![o, i],
        init: Init::Fan(i),
    });
    out.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![o],
        init: Init::Fan(i),
    });
}

fn block_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize, f: usize) {
    let norm = |out: &mut Vec<ParamSpec>, n: &str| {
        out.push(ParamSpec {
            name: format!("{prefix}.{n}.gamma"),
            shape: vec![d],
            init: Init::Ones,
        });
        out.push(ParamSpec {
            name: format!("{prefix}.{n}.beta"),
            shape: vec![d],
            init: Init::Zeros,
        });
    };
    norm(out, "norm1");
    for p in ["query", "key", "value", "attn_out"] {
        linear_specs(out, &format!("{prefix}.{p}"), d, d);
    }
    norm(out, "norm2");
    linear_specs(out, &format!("{prefix}.ffn1"), f, d);
    linear_specs(out, &format!("{prefix}.ffn2"), d, f);
}

/// Parameter specs of the encoder, decoder and head groups.
fn specs(cfg: &EncoderConfig, tok: &Tokenizer) -> [Vec<ParamSpec>; 3] {
    let (d, t, p, l) = (cfg.token_dim, tok.tokens, tok.width, cfg.latent_dim);
    let comp = cfg.use_compression_token;
    let seq = t + usize::from(comp);
    let summary = if comp { d } else { t * d };

    let mut enc = Vec::new();
    linear_specs(&mut enc, "encoder.lift", d, p);
    enc.push(ParamSpec {
        name: "encoder.position".into(),
        shape: vec![seq, d],
        init: Init::Embedding,
    });
    if comp {
        enc.push(ParamSpec {
            name: "encoder.compression_token".into(),
            shape: vec![d],
            init: Init::Embedding,
        });
    }
    for b in 0..cfg.blocks {
        block_specs(&mut enc, &format!("encoder.block{b}"), d, cfg.ffn_dim);
    }
    linear_specs(&mut enc, "encoder.to_latent", l, summary);

    let mut dec = Vec::new();
    linear_specs(&mut dec, "decoder.from_latent", summary, l);
    dec.push(ParamSpec {
        name: "decoder.query".into(),
        shape: vec![t, d],
        init: Init::Embedding,
    });
    for b in 0..cfg.blocks {
        block_specs(&mut dec, &format!("decoder.block{b}"), d, cfg.ffn_dim);
    }
    linear_specs(&mut dec, "decoder.out", p, d);

    let mut head = Vec::new();
    linear_specs(&mut head, "head.hidden", d, l);
    linear_specs(&mut head, "head.out", cfg.projection_dim, d);
    [enc, dec, head]
}

/// Parameter groups. Each group is optimized separately so that objectives
/// which leave a group unused never touch its state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Encoder = 0,
    Decoder = 1,
    Head = 2,
}

/// Tape handles of every parameter, per group.
#[derive(Debug, Clone)]
pub struct Bound {
    pub groups: [Vec<Var>; 3],
}

/// Attention autoencoder with a projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperModel {
    pub config: EncoderConfig,
    pub tokenizer: Tokenizer,
    pub layout_hash: u64,
    pub groups: [Vec<Tensor<f32>>; 3],
    pub names: [Vec<String>; 3],
}

const LN_EPS: f64 = 1e-5;
const EVAL_CHUNK: usize = 256;

fn dropout<T: Scalar>(tape: &mut Tape<T>, x: Var, p: f64, rng: Option<&mut Rng>) -> Result<Var> {
    match rng {
        Some(r) => tape.dropout(x, p, true, r),
        None => Ok(x),
    }
}

impl HyperModel {
    pub fn new(config: EncoderConfig, layout: &LayerLayout) -> Result<Self> {
        config.validate()?;
        if config.input_dim != layout.n {
            bail!(Config, "encoder input dim {} does not match layout {} with N = {}", config.input_dim, layout.arch_name, layout.n);
        }
        let tokenizer = Tokenizer::new(config.tokenization, layout)?;
        if tokenizer.tokens > 1024 {
            log::warn!("{} tokens per sample; attention cost grows quadratically", tokenizer.tokens);
        }
        let stream = SeedStream::new(config.seed);
        let all = specs(&config, &tokenizer);
        let mut groups: [Vec<Tensor<f32>>; 3] = Default::default();
        let mut names: [Vec<String>; 3] = Default::default();
        for (g, specs) in all.iter().enumerate() {
            for (i, s) in specs.iter().enumerate() {
                let mut rng = stream.rng_for(&[g as u64, i as u64]);
                let n: usize = s.shape.iter().product();
                let data: Vec<f32> = match s.init {
                    Init::Fan(fan) => {
                        let a = 1.0 / (fan as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-a..a) as f32).collect()
                    }
                    Init::Embedding => {
                        let d = Normal::new(0.0, 0.02).expect("valid std");
                        (0..n).map(|_| d.sample(&mut rng) as f32).collect()
                    }
                    Init::Ones => vec![1.0; n],
                    Init::Zeros => vec![0.0; n],
                };
                groups[g].push(Tensor::param(&s.shape, data)?);
                names[g].push(s.name.clone());
            }
        }
        Ok(Self {
            config,
            tokenizer,
            layout_hash: layout.hash,
            groups,
            names,
        })
    }

    pub fn param_count(&self) -> usize {
        self.groups.iter().flatten().map(Tensor::numel).sum()
    }

    /// Rebuilds the expected names and shapes, for validating loaded files.
    pub(crate) fn expected_shapes(config: &EncoderConfig, tok: &Tokenizer) -> [Vec<(String, Vec<usize>)>; 3] {
        specs(config, tok).map(|g| g.into_iter().map(|s| (s.name, s.shape)).collect())
    }

    pub fn check_layout(&self, layout: &LayerLayout) -> Result<()> {
        if layout.hash != self.layout_hash {
            bail!(Layout, "encoder was trained on layout {:016x} but got {:016x} ({})", self.layout_hash, layout.hash, layout.arch_name);
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape<f32>) -> Bound {
        bind_groups(tape, &self.groups)
    }

    // ----- differentiable pieces ------------------------------------------

    fn block<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var, mut rng: Option<&mut Rng>) -> Result<Var> {
        let h = tape.layer_norm(x, p[0], p[1], LN_EPS)?;
        let a = self.attention(tape, &p[2..10], h)?;
        let a = dropout(tape, a, self.config.dropout, rng.as_deref_mut())?;
        let x = tape.add(x, a)?;
        let h = tape.layer_norm(x, p[10], p[11], LN_EPS)?;
        let h = tape.linear(h, p[12], Some(p[13]))?;
        let h = tape.activation(h, Activation::Gelu);
        let h = tape.linear(h, p[14], Some(p[15]))?;
        let h = dropout(tape, h, self.config.dropout, rng)?;
        tape.add(x, h)
    }

    fn attention<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], h: Var) -> Result<Var> {
        let s = tape.shape(h).to_vec();
        let (b, n, d) = (s[0], s[1], s[2]);
        let heads = self.config.heads;
        let dh = d / heads;
        let q = tape.linear(h, p[0], Some(p[1]))?;
        let k = tape.linear(h, p[2], Some(p[3]))?;
        let v = tape.linear(h, p[4], Some(p[5]))?;
        let split = |tape: &mut Tape<T>, t: Var| -> Result<Var> {
            if heads == 1 {
                return Ok(t);
            }
            let t = tape.reshape(t, &[b, n, heads, dh])?;
            let t = tape.permute(t, &[0, 2, 1, 3])?;
            tape.reshape(t, &[b * heads, n, dh])
        };
        let (q, k, v) = (split(tape, q)?, split(tape, k)?, split(tape, v)?);
        let scores = tape.bmm(q, k, false, true)?;
        let scores = tape.scale(scores, T::from_f64(1.0 / (dh as f64).sqrt()));
        let att = tape.softmax(scores);
        let mut o = tape.bmm(att, v, false, false)?;
        if heads > 1 {
            o = tape.reshape(o, &[b, heads, n, dh])?;
            o = tape.permute(o, &[0, 2, 1, 3])?;
            o = tape.reshape(o, &[b, n, d])?;
        }
        tape.linear(o, p[6], Some(p[7]))
    }

    /// `[b, tokens, width]` grid to `[b, L]` latents.
    pub fn encode_vars<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, grid: Var, mut rng: Option<&mut Rng>) -> Result<Var> {
        let p = &bound.groups[Group::Encoder as usize];
        let b = tape.shape(grid)[0];
        let d = self.config.token_dim;
        let mut x = tape.linear(grid, p[0], Some(p[1]))?;
        let mut at = 3;
        if self.config.use_compression_token {
            let ct = tape.expand(p[3], b)?;
            let ct = tape.reshape(ct, &[b, 1, d])?;
            x = tape.concat(ct, x, 1)?;
            at = 4;
        }
        x = tape.add_broadcast(x, p[2])?;
        for i in 0..self.config.blocks {
            x = self.block(tape, &p[at + i * BLOCK_PARAMS..at + (i + 1) * BLOCK_PARAMS], x, rng.as_deref_mut())?;
        }
        let h = if self.config.use_compression_token {
            let h = tape.narrow(x, 1, 0, 1)?;
            tape.reshape(h, &[b, d])?
        } else {
            tape.reshape(x, &[b, self.tokenizer.tokens * d])?
        };
        let o = at + self.config.blocks * BLOCK_PARAMS;
        tape.linear(h, p[o], Some(p[o + 1]))
    }

    /// `[b, L]` latents to a `[b, tokens, width]` grid.
    pub fn decode_vars<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, z: Var, mut rng: Option<&mut Rng>) -> Result<Var> {
        let p = &bound.groups[Group::Decoder as usize];
        let b = tape.shape(z)[0];
        let (t, d) = (self.tokenizer.tokens, self.config.token_dim);
        let h = tape.linear(z, p[0], Some(p[1]))?;
        let mut x = if self.config.use_compression_token {
            let e = tape.expand(h, t)?;
            tape.permute(e, &[1, 0, 2])?
        } else {
            tape.reshape(h, &[b, t, d])?
        };
        x = tape.add_broadcast(x, p[2])?;
        for i in 0..self.config.blocks {
            x = self.block(tape, &p[3 + i * BLOCK_PARAMS..3 + (i + 1) * BLOCK_PARAMS], x, rng.as_deref_mut())?;
        }
        let o = 3 + self.config.blocks * BLOCK_PARAMS;
        tape.linear(x, p[o], Some(p[o + 1]))
    }

    /// Decoded grid to flat `[b, N]` weights.
    pub fn ungrid_vars<T: Scalar>(&self, tape: &mut Tape<T>, grid: Var) -> Result<Var> {
        tape.gather(grid, self.tokenizer.cells())
    }

    /// Unit-norm projections of `[b, L]` latents.
    pub fn project_vars<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, z: Var) -> Result<Var> {
        let p = &bound.groups[Group::Head as usize];
        let h = tape.linear(z, p[0], Some(p[1]))?;
        let h = tape.activation(h, Activation::Relu);
        let h = tape.linear(h, p[2], Some(p[3]))?;
        Ok(tape.l2_normalize(h))
    }

    /// Flat `[b, N]` weights as a tape constant grid.
    pub fn grid_constant<T: Scalar>(&self, tape: &mut Tape<T>, flat: &[f32], b: usize) -> Result<Var> {
        let g = self.tokenizer.tokenize(flat, b)?;
        tape.constant(&[b, self.tokenizer.tokens, self.tokenizer.width], g.into_iter().map(|v| T::from_f64(v as f64)).collect())
    }

    // ----- evaluation mode ------------------------------------------------

    fn chunked(&self, input: &[f32], width: usize, f: impl Fn(&[f32], usize) -> Result<Vec<f32>> + Sync) -> Result<Vec<f32>> {
        if width == 0 || input.len() % width != 0 {
            bail!(Dimension, "input of {} values is not a whole number of rows of {width}", input.len());
        }
        let parts: Vec<Result<Vec<f32>>> = input
            .par_chunks(EVAL_CHUNK * width)
            .map(|c| f(c, c.len() / width))
            .collect();
        let mut out = Vec::new();
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Latents of `b` flat weight vectors with dropout off.
    pub fn encode(&self, flat: &[f32]) -> Result<Vec<f32>> {
        self.chunked(flat, self.config.input_dim, |c, b| {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            let g = self.grid_constant(&mut tape, c, b)?;
            let z = self.encode_vars(&mut tape, &bound, g, None)?;
            Ok(tape.value(z).to_vec())
        })
    }

    pub fn decode(&self, z: &[f32]) -> Result<Vec<f32>> {
        self.chunked(z, self.config.latent_dim, |c, b| {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            let zv = tape.constant(&[b, self.config.latent_dim], c.to_vec())?;
            let g = self.decode_vars(&mut tape, &bound, zv, None)?;
            let w = self.ungrid_vars(&mut tape, g)?;
            Ok(tape.value(w).to_vec())
        })
    }

    pub fn reconstruct(&self, flat: &[f32]) -> Result<Vec<f32>> {
        self.decode(&self.encode(flat)?)
    }

    pub fn project(&self, z: &[f32]) -> Result<Vec<f32>> {
        self.chunked(z, self.config.latent_dim, |c, b| {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            let zv = tape.constant(&[b, self.config.latent_dim], c.to_vec())?;
            let p = self.project_vars(&mut tape, &bound, zv)?;
            Ok(tape.value(p).to_vec())
        })
    }
}

/// Places parameter tensors of any precision on a tape.
pub fn bind_groups<T: Scalar>(tape: &mut Tape<T>, groups: &[Vec<Tensor<T>>; 3]) -> Bound {
    Bound {
        groups: [0, 1, 2].map(|g| groups[g].iter().map(|t| tape.leaf(t)).collect()),
    }
}
