//! Small trainable contextual encoder with hand-written reverse-mode
//! differentiation, its optimizer, gradient verification, and checkpoint
//! I/O. Shared by the discriminator, the estimator, and the downstream
//! classifier.
//!
//! The encoder is a pre-norm transformer: each block applies self-attention
//! and a two-layer GELU feed-forward over layer-normalized inputs with
//! residual connections, followed by one final normalization. Learned
//! position embeddings are added to the token embeddings. Config covers
//! anything from the d=16 gradient-check models to full-scale settings.

mod checkpoint;
mod gradcheck;
mod loss;
mod ops;
mod optimizer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{mse_per_dim, softmax_rows, token_cross_entropy};
pub use ops::{LayerNorm, LinearLayer};
pub use optimizer::{Adam, AdamConfig};

use std::fmt;
use std::io;

use ndarray::Array2;
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;
use crate::text::Vocab;

/// Floating-point element type for model math. Training runs in `f32`;
/// `f64` exists for finite-difference gradient verification and runs the
/// same code path.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::ops::MulAssign
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("value representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("sequence length {len} exceeds the configured maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    IdOutOfRange { id: usize, vocab_size: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("no trainable windows: every center token is out of corpus")]
    NoTrainableWindows,
    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    CheckpointCorrupt { offset: u64, reason: String },
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint holds a {found:?} model, expected {expected:?}")]
    CheckpointKind { found: String, expected: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reserved vocabulary ids. Mirrors the ids [`Vocab`] assigns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub pad: usize,
    pub unk: usize,
    pub mask: usize,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        SpecialTokens {
            pad: Vocab::PAD,
            unk: Vocab::UNK,
            mask: Vocab::MASK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    /// Model width (the per-token representation dimension).
    pub d: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub max_seq_len: usize,
    pub ffn_multiplier: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults; width and depth stay fully configurable.
    pub fn desk(vocab_size: usize, seed: u64) -> Self {
        EncoderConfig {
            vocab_size,
            d: 64,
            num_heads: 4,
            num_layers: 2,
            max_seq_len: 32,
            ffn_multiplier: 4,
            dropout: 0.1,
            seed,
        }
    }

    fn validate(&self) {
        assert!(self.d % self.num_heads == 0, "d must divide into heads");
        assert!(self.num_layers >= 1 && self.max_seq_len >= 1);
        assert!(self.vocab_size > Vocab::MASK, "vocab must cover specials");
        assert!((0.0..1.0).contains(&self.dropout));
    }
}

#[derive(Debug, Clone)]
pub struct AttentionParams<T> {
    pub wq: Array2<T>,
    pub bq: Array2<T>,
    pub wk: Array2<T>,
    pub bk: Array2<T>,
    pub wv: Array2<T>,
    pub bv: Array2<T>,
    pub wo: Array2<T>,
    pub bo: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct FeedForwardParams<T> {
    pub w1: Array2<T>,
    pub b1: Array2<T>,
    pub w2: Array2<T>,
    pub b2: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct Block<T> {
    pub ln1: LayerNorm<T>,
    pub attn: AttentionParams<T>,
    pub ln2: LayerNorm<T>,
    pub ffn: FeedForwardParams<T>,
}

/// The encoder: token and position tables plus transformer blocks.
#[derive(Debug, Clone)]
pub struct EncoderModel<T> {
    pub config: EncoderConfig,
    pub tok_emb: Array2<T>,
    pub pos_emb: Array2<T>,
    pub blocks: Vec<Block<T>>,
    pub final_norm: LayerNorm<T>,
}

const INIT_STD: f64 = 0.02;

impl<T: Scalar> EncoderModel<T> {
    pub fn new(config: EncoderConfig) -> Self {
        config.validate();
        let mut rng = seeding::rng(seeding::derive_str(config.seed, "encoder-init"));
        let d = config.d;
        let h = config.d * config.ffn_multiplier;
        let proj = |rng: &mut ChaCha8Rng| ops::random_normal::<T>(d, d, INIT_STD, rng);
        let blocks = (0..config.num_layers)
            .map(|_| Block {
                ln1: LayerNorm::identity(d),
                attn: AttentionParams {
                    wq: proj(&mut rng),
                    bq: Array2::zeros((1, d)),
                    wk: proj(&mut rng),
                    bk: Array2::zeros((1, d)),
                    wv: proj(&mut rng),
                    bv: Array2::zeros((1, d)),
                    wo: proj(&mut rng),
                    bo: Array2::zeros((1, d)),
                },
                ln2: LayerNorm::identity(d),
                ffn: FeedForwardParams {
                    w1: ops::random_normal(d, h, INIT_STD, &mut rng),
                    b1: Array2::zeros((1, h)),
                    w2: ops::random_normal(h, d, INIT_STD, &mut rng),
                    b2: Array2::zeros((1, d)),
                },
            })
            .collect();
        EncoderModel {
            tok_emb: ops::random_normal(config.vocab_size, d, INIT_STD, &mut rng),
            pos_emb: ops::random_normal(config.max_seq_len, d, INIT_STD, &mut rng),
            blocks,
            final_norm: LayerNorm::identity(d),
            config,
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderModel {
            config: self.config.clone(),
            tok_emb: Array2::zeros(self.tok_emb.raw_dim()),
            pos_emb: Array2::zeros(self.pos_emb.raw_dim()),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1: b.ln1.zeros_like(),
                    attn: AttentionParams {
                        wq: Array2::zeros(b.attn.wq.raw_dim()),
                        bq: Array2::zeros(b.attn.bq.raw_dim()),
                        wk: Array2::zeros(b.attn.wk.raw_dim()),
                        bk: Array2::zeros(b.attn.bk.raw_dim()),
                        wv: Array2::zeros(b.attn.wv.raw_dim()),
                        bv: Array2::zeros(b.attn.bv.raw_dim()),
                        wo: Array2::zeros(b.attn.wo.raw_dim()),
                        bo: Array2::zeros(b.attn.bo.raw_dim()),
                    },
                    ln2: b.ln2.zeros_like(),
                    ffn: FeedForwardParams {
                        w1: Array2::zeros(b.ffn.w1.raw_dim()),
                        b1: Array2::zeros(b.ffn.b1.raw_dim()),
                        w2: Array2::zeros(b.ffn.w2.raw_dim()),
                        b2: Array2::zeros(b.ffn.b2.raw_dim()),
                    },
                })
                .collect(),
            final_norm: self.final_norm.zeros_like(),
        }
    }

    fn validate_input(&self, ids: &[usize]) -> Result<(), NeuralError> {
        if ids.is_empty() {
            return Err(NeuralError::EmptySequence);
        }
        if ids.len() > self.config.max_seq_len {
            return Err(NeuralError::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(NeuralError::IdOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Contextual representations in inference mode: dropout off,
    /// deterministic. `pad_mask[i]` is true for real (attended) positions.
    pub fn encode(&self, ids: &[usize], pad_mask: &[bool]) -> Result<Array2<T>, NeuralError> {
        let (y, _) = self.forward(ids, pad_mask, &mut None)?;
        Ok(y)
    }

    /// Forward pass; pass a dropout RNG to run in training mode.
    pub fn forward(
        &self,
        ids: &[usize],
        pad_mask: &[bool],
        dropout_rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<T>, EncoderCache<T>), NeuralError> {
        self.validate_input(ids)?;
        assert_eq!(ids.len(), pad_mask.len(), "mask length must match ids");
        let len = ids.len();
        let d = self.config.d;
        let p = self.config.dropout;

        let mut x = Array2::zeros((len, d));
        for (i, &id) in ids.iter().enumerate() {
            for c in 0..d {
                x[[i, c]] = self.tok_emb[[id, c]] + self.pos_emb[[i, c]];
            }
        }
        let drop = |x: &mut Array2<T>, rng: &mut Option<&mut ChaCha8Rng>| -> Option<Array2<T>> {
            match rng {
                Some(rng) if p > 0.0 => {
                    let mask = ops::dropout_mask::<T>(x.nrows(), x.ncols(), p, rng);
                    *x *= &mask;
                    Some(mask)
                }
                _ => None,
            }
        };
        let emb_drop = drop(&mut x, dropout_rng);

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (normed1, ln1) = block.ln1.forward(&x);
            let (attn_out, attn) = attention_forward(&block.attn, &normed1, pad_mask, self.config.num_heads);
            let mut attn_out = attn_out;
            let attn_drop = drop(&mut attn_out, dropout_rng);
            let x_mid = &x + &attn_out;

            let (normed2, ln2) = block.ln2.forward(&x_mid);
            let (ffn_out, ffn) = ffn_forward(&block.ffn, &normed2);
            let mut ffn_out = ffn_out;
            let ffn_drop = drop(&mut ffn_out, dropout_rng);
            let x_out = &x_mid + &ffn_out;

            blocks.push(BlockCache {
                ln1,
                attn,
                attn_drop,
                ln2,
                ffn,
                ffn_drop,
            });
            x = x_out;
        }
        let (y, final_ln) = self.final_norm.forward(&x);
        Ok((
            y,
            EncoderCache {
                ids: ids.to_vec(),
                emb_drop,
                blocks,
                final_ln,
            },
        ))
    }

    /// Reverse pass: accumulate parameter gradients into `grads` (a
    /// `zeros_like` clone of the model) given the output gradient.
    pub fn backward(&self, d_out: &Array2<T>, cache: &EncoderCache<T>, grads: &mut Self) {
        let mut dx = self
            .final_norm
            .backward(d_out, &cache.final_ln, &mut grads.final_norm);
        for (block, bc, gb) in itertools_rev(&self.blocks, &cache.blocks, &mut grads.blocks) {
            // feed-forward half
            let mut d_ffn_out = dx.clone();
            if let Some(mask) = &bc.ffn_drop {
                d_ffn_out *= mask;
            }
            let d_normed2 = ffn_backward(&block.ffn, &d_ffn_out, &bc.ffn, &mut gb.ffn);
            dx += &block.ln2.backward(&d_normed2, &bc.ln2, &mut gb.ln2);

            // attention half
            let mut d_attn_out = dx.clone();
            if let Some(mask) = &bc.attn_drop {
                d_attn_out *= mask;
            }
            let d_normed1 = attention_backward(
                &block.attn,
                &d_attn_out,
                &bc.attn,
                self.config.num_heads,
                &mut gb.attn,
            );
            dx += &block.ln1.backward(&d_normed1, &bc.ln1, &mut gb.ln1);
        }
        if let Some(mask) = &cache.emb_drop {
            dx *= mask;
        }
        for (i, &id) in cache.ids.iter().enumerate() {
            for c in 0..self.config.d {
                grads.tok_emb[[id, c]] = grads.tok_emb[[id, c]] + dx[[i, c]];
                grads.pos_emb[[i, c]] = grads.pos_emb[[i, c]] + dx[[i, c]];
            }
        }
    }
}

fn itertools_rev<'a, T>(
    blocks: &'a [Block<T>],
    caches: &'a [BlockCache<T>],
    grads: &'a mut [Block<T>],
) -> impl Iterator<Item = (&'a Block<T>, &'a BlockCache<T>, &'a mut Block<T>)> {
    blocks
        .iter()
        .zip(caches)
        .zip(grads)
        .map(|((b, c), g)| (b, c, g))
        .rev()
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    ids: Vec<usize>,
    emb_drop: Option<Array2<T>>,
    blocks: Vec<BlockCache<T>>,
    final_ln: ops::LayerNormCache<T>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    ln1: ops::LayerNormCache<T>,
    attn: AttentionCache<T>,
    attn_drop: Option<Array2<T>>,
    ln2: ops::LayerNormCache<T>,
    ffn: FfnCache<T>,
    ffn_drop: Option<Array2<T>>,
}

#[derive(Debug, Clone)]
struct AttentionCache<T> {
    x: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    ctx: Array2<T>,
}

#[derive(Debug, Clone)]
struct FfnCache<T> {
    x: Array2<T>,
    pre: Array2<T>,
    act: Array2<T>,
}

fn attention_forward<T: Scalar>(
    params: &AttentionParams<T>,
    x: &Array2<T>,
    pad_mask: &[bool],
    num_heads: usize,
) -> (Array2<T>, AttentionCache<T>) {
    use ndarray::s;
    let (len, d) = x.dim();
    let dh = d / num_heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());

    let q = &x.dot(&params.wq) + &params.bq;
    let k = &x.dot(&params.wk) + &params.bk;
    let v = &x.dot(&params.wv) + &params.bv;

    let mut ctx = Array2::zeros((len, d));
    let mut probs = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let scores = qh.dot(&kh.t()).mapv(|s| s * scale);
        let a = ops::masked_softmax(&scores, pad_mask);
        ctx.slice_mut(cols).assign(&a.dot(&vh));
        probs.push(a);
    }
    let out = &ctx.dot(&params.wo) + &params.bo;
    (
        out,
        AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            probs,
            ctx,
        },
    )
}

fn attention_backward<T: Scalar>(
    params: &AttentionParams<T>,
    d_out: &Array2<T>,
    cache: &AttentionCache<T>,
    num_heads: usize,
    grads: &mut AttentionParams<T>,
) -> Array2<T> {
    use ndarray::{s, Axis};
    let (len, d) = cache.x.dim();
    let dh = d / num_heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());

    grads.wo += &cache.ctx.t().dot(d_out);
    grads.bo += &d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_ctx = d_out.dot(&params.wo.t());

    let mut dq = Array2::zeros((len, d));
    let mut dk = Array2::zeros((len, d));
    let mut dv = Array2::zeros((len, d));
    for h in 0..num_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let a = &cache.probs[h];
        let qh = cache.q.slice(cols);
        let kh = cache.k.slice(cols);
        let vh = cache.v.slice(cols);
        let d_ctx_h = d_ctx.slice(cols);

        let da = d_ctx_h.dot(&vh.t());
        dv.slice_mut(cols).assign(&a.t().dot(&d_ctx_h));
        let ds = ops::masked_softmax_backward(a, &da).mapv(|v| v * scale);
        dq.slice_mut(cols).assign(&ds.dot(&kh));
        dk.slice_mut(cols).assign(&ds.t().dot(&qh));
    }

    grads.wq += &cache.x.t().dot(&dq);
    grads.bq += &dq.sum_axis(Axis(0)).insert_axis(Axis(0));
    grads.wk += &cache.x.t().dot(&dk);
    grads.bk += &dk.sum_axis(Axis(0)).insert_axis(Axis(0));
    grads.wv += &cache.x.t().dot(&dv);
    grads.bv += &dv.sum_axis(Axis(0)).insert_axis(Axis(0));

    let mut dx = dq.dot(&params.wq.t());
    dx += &dk.dot(&params.wk.t());
    dx += &dv.dot(&params.wv.t());
    dx
}

fn ffn_forward<T: Scalar>(
    params: &FeedForwardParams<T>,
    x: &Array2<T>,
) -> (Array2<T>, FfnCache<T>) {
    let pre = &x.dot(&params.w1) + &params.b1;
    let act = ops::gelu(&pre);
    let out = &act.dot(&params.w2) + &params.b2;
    (
        out,
        FfnCache {
            x: x.clone(),
            pre,
            act,
        },
    )
}

fn ffn_backward<T: Scalar>(
    params: &FeedForwardParams<T>,
    d_out: &Array2<T>,
    cache: &FfnCache<T>,
    grads: &mut FeedForwardParams<T>,
) -> Array2<T> {
    use ndarray::Axis;
    grads.w2 += &cache.act.t().dot(d_out);
    grads.b2 += &d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_act = d_out.dot(&params.w2.t());
    let d_pre = ops::gelu_backward(&cache.pre, &d_act);
    grads.w1 += &cache.x.t().dot(&d_pre);
    grads.b1 += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
    d_pre.dot(&params.w1.t())
}

/// Uniform named view over a model's parameter tensors; drives the
/// optimizer, checkpointing, and coordinate-level gradient checks.
pub trait HasTensors<T: Scalar> {
    fn tensors(&self) -> Vec<(String, &Array2<T>)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<T>)>;
}

impl<T: Scalar> HasTensors<T> for EncoderModel<T> {
    fn tensors(&self) -> Vec<(String, &Array2<T>)> {
        let mut out: Vec<(String, &Array2<T>)> = vec![
            ("tok_emb".into(), &self.tok_emb),
            ("pos_emb".into(), &self.pos_emb),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            out.push((format!("{p}.ln1.gain"), &b.ln1.gain));
            out.push((format!("{p}.ln1.bias"), &b.ln1.bias));
            out.push((format!("{p}.attn.wq"), &b.attn.wq));
            out.push((format!("{p}.attn.bq"), &b.attn.bq));
            out.push((format!("{p}.attn.wk"), &b.attn.wk));
            out.push((format!("{p}.attn.bk"), &b.attn.bk));
            out.push((format!("{p}.attn.wv"), &b.attn.wv));
            out.push((format!("{p}.attn.bv"), &b.attn.bv));
            out.push((format!("{p}.attn.wo"), &b.attn.wo));
            out.push((format!("{p}.attn.bo"), &b.attn.bo));
            out.push((format!("{p}.ln2.gain"), &b.ln2.gain));
            out.push((format!("{p}.ln2.bias"), &b.ln2.bias));
            out.push((format!("{p}.ffn.w1"), &b.ffn.w1));
            out.push((format!("{p}.ffn.b1"), &b.ffn.b1));
            out.push((format!("{p}.ffn.w2"), &b.ffn.w2));
            out.push((format!("{p}.ffn.b2"), &b.ffn.b2));
        }
        out.push(("final_norm.gain".into(), &self.final_norm.gain));
        out.push(("final_norm.bias".into(), &self.final_norm.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<T>)> {
        let mut out: Vec<(String, &mut Array2<T>)> = vec![
            ("tok_emb".into(), &mut self.tok_emb),
            ("pos_emb".into(), &mut self.pos_emb),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("blocks.{i}");
            out.push((format!("{p}.ln1.gain"), &mut b.ln1.gain));
            out.push((format!("{p}.ln1.bias"), &mut b.ln1.bias));
            out.push((format!("{p}.attn.wq"), &mut b.attn.wq));
            out.push((format!("{p}.attn.bq"), &mut b.attn.bq));
            out.push((format!("{p}.attn.wk"), &mut b.attn.wk));
            out.push((format!("{p}.attn.bk"), &mut b.attn.bk));
            out.push((format!("{p}.attn.wv"), &mut b.attn.wv));
            out.push((format!("{p}.attn.bv"), &mut b.attn.bv));
            out.push((format!("{p}.attn.wo"), &mut b.attn.wo));
            out.push((format!("{p}.attn.bo"), &mut b.attn.bo));
            out.push((format!("{p}.ln2.gain"), &mut b.ln2.gain));
            out.push((format!("{p}.ln2.bias"), &mut b.ln2.bias));
            out.push((format!("{p}.ffn.w1"), &mut b.ffn.w1));
            out.push((format!("{p}.ffn.b1"), &mut b.ffn.b1));
            out.push((format!("{p}.ffn.w2"), &mut b.ffn.w2));
            out.push((format!("{p}.ffn.b2"), &mut b.ffn.b2));
        }
        out.push(("final_norm.gain".into(), &mut self.final_norm.gain));
        out.push(("final_norm.bias".into(), &mut self.final_norm.bias));
        out
    }
}

impl<T: Scalar> HasTensors<T> for LinearLayer<T> {
    fn tensors(&self) -> Vec<(String, &Array2<T>)> {
        let mut out = vec![("w".to_owned(), &self.w)];
        if let Some(b) = &self.b {
            out.push(("b".to_owned(), b));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<T>)> {
        let mut out = vec![("w".to_owned(), &mut self.w)];
        if let Some(b) = &mut self.b {
            out.push(("b".to_owned(), b));
        }
        out
    }
}

/// Prefix a tensor listing; used when composing encoder+head bundles.
pub fn prefixed<'a, T: Scalar>(
    prefix: &str,
    tensors: Vec<(String, &'a Array2<T>)>,
) -> Vec<(String, &'a Array2<T>)> {
    tensors
        .into_iter()
        .map(|(name, t)| (format!("{prefix}.{name}"), t))
        .collect()
}

/// Mutable variant of [`prefixed`].
pub fn prefixed_mut<'a, T: Scalar>(
    prefix: &str,
    tensors: Vec<(String, &'a mut Array2<T>)>,
) -> Vec<(String, &'a mut Array2<T>)> {
    tensors
        .into_iter()
        .map(|(name, t)| (format!("{prefix}.{name}"), t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(seed: u64) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 11,
            d: 16,
            num_heads: 2,
            num_layers: 1,
            max_seq_len: 8,
            ffn_multiplier: 2,
            dropout: 0.0,
            seed,
        }
    }

    #[test]
    fn encode_produces_finite_output_for_single_pad() {
        let model = EncoderModel::<f32>::new(tiny_config(1));
        let y = model.encode(&[Vocab::PAD], &[false]).unwrap();
        assert_eq!(y.dim(), (1, 16));
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn encode_is_deterministic_in_inference_mode() {
        let model = EncoderModel::<f32>::new(tiny_config(2));
        let ids = [3usize, 5, 7, 4];
        let mask = [true; 4];
        let a = model.encode(&ids, &mask).unwrap();
        let b = model.encode(&ids, &mask).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn permuting_tokens_changes_some_output_row() {
        let model = EncoderModel::<f32>::new(tiny_config(3));
        let mask = [true; 4];
        let a = model.encode(&[3, 5, 7, 4], &mask).unwrap();
        let b = model.encode(&[5, 3, 7, 4], &mask).unwrap();
        assert!(a.iter().zip(b.iter()).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn encode_rejects_bad_inputs() {
        let model = EncoderModel::<f32>::new(tiny_config(4));
        assert!(matches!(
            model.encode(&[], &[]),
            Err(NeuralError::EmptySequence)
        ));
        assert!(matches!(
            model.encode(&[1; 9], &[true; 9]),
            Err(NeuralError::SequenceTooLong { len: 9, max: 8 })
        ));
        assert!(matches!(
            model.encode(&[11], &[true]),
            Err(NeuralError::IdOutOfRange { id: 11, .. })
        ));
    }

    #[test]
    fn attention_probs_sum_to_one_over_real_positions() {
        let model = EncoderModel::<f64>::new(tiny_config(5));
        let ids = [3usize, 5, 7, Vocab::PAD];
        let mask = [true, true, true, false];
        let (_, cache) = model.forward(&ids, &mask, &mut None).unwrap();
        for bc in &cache.blocks {
            for probs in &bc.attn.probs {
                for r in 0..probs.nrows() {
                    let sum: f64 = probs.row(r).sum();
                    assert!((sum - 1.0).abs() < 1e-6, "row {r} sums to {sum}");
                    assert_eq!(probs[[r, 3]], 0.0, "padded key must carry no weight");
                }
            }
        }
    }

    #[test]
    fn dropout_only_fires_in_training_mode() {
        let mut config = tiny_config(6);
        config.dropout = 0.5;
        let model = EncoderModel::<f32>::new(config);
        let ids = [3usize, 5, 7];
        let mask = [true; 3];
        let inference = model.encode(&ids, &mask).unwrap();
        assert_eq!(inference, model.encode(&ids, &mask).unwrap());
        let mut rng = seeding::rng(1);
        let (train_out, cache) = model.forward(&ids, &mask, &mut Some(&mut rng)).unwrap();
        assert!(cache.emb_drop.is_some());
        assert_ne!(train_out, inference);
    }

    #[test]
    fn full_encoder_gradients_match_finite_differences() {
        // loss = mean(y^2)/2 over all output entries, with one padded
        // position so the mask path is exercised too.
        let ids = vec![3usize, 5, 7, Vocab::PAD];
        let mask = vec![true, true, true, false];
        let count = (ids.len() * 16) as f64;
        let loss = {
            let ids = ids.clone();
            let mask = mask.clone();
            move |m: &EncoderModel<f64>| {
                let y = m.encode(&ids, &mask).unwrap();
                0.5 * y.iter().map(|v| v * v).sum::<f64>() / count
            }
        };
        let grad = {
            let ids = ids.clone();
            let mask = mask.clone();
            move |m: &EncoderModel<f64>| {
                let (y, cache) = m.forward(&ids, &mask, &mut None).unwrap();
                let mut grads = m.zeros_like();
                m.backward(&y.mapv(|v| v / count), &cache, &mut grads);
                grads
            }
        };
        let mut model = EncoderModel::<f64>::new(tiny_config(11));
        let report = grad_check(&mut model, loss, grad, 300, 1e-5, 1e-5, 9);
        assert!(
            report.passed(),
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst_coordinate
        );
    }

    #[test]
    fn tensor_views_align_between_model_and_zeros() {
        let model = EncoderModel::<f32>::new(tiny_config(7));
        let grads = model.zeros_like();
        let names_a: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
        let names_b: Vec<String> = grads.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names_a, names_b);
        for ((_, a), (_, b)) in model.tensors().iter().zip(grads.tensors().iter()) {
            assert_eq!(a.dim(), b.dim());
        }
    }
}
