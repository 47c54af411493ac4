//! Differentiable layer stack: dense layers, multi-head attention, encoder
//! and decoder layers, layer normalization and positional encoding.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Mat, Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
}

/// One fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: Mat,
    pub b: Mat,
}

impl DenseParams {
    pub fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-limit..limit));
        Self { w, b: Mat::zeros((1, fan_out)) }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { w: Mat::zeros((fan_in, fan_out)), b: Mat::zeros((1, fan_out)) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Mat,
    pub bias: Mat,
}

impl LayerNormParams {
    pub fn unit(d: usize) -> Self {
        Self { gain: Mat::from_elem((1, d), 1.0), bias: Mat::zeros((1, d)) }
    }
}

/// Multi-head attention: per-head q/k/v projections packed column-wise into
/// d x d matrices, an output projection, and the post-attention two-layer MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: DenseParams,
    pub wk: DenseParams,
    pub wv: DenseParams,
    pub wo: DenseParams,
    pub mlp: [DenseParams; 2],
    pub heads: usize,
}

impl AttentionParams {
    pub fn glorot(rng: &mut impl Rng, d: usize, heads: usize) -> Self {
        assert!(d % heads == 0, "width must divide into heads");
        Self {
            wq: DenseParams::glorot(rng, d, d),
            wk: DenseParams::glorot(rng, d, d),
            wv: DenseParams::glorot(rng, d, d),
            wo: DenseParams::glorot(rng, d, d),
            mlp: [DenseParams::glorot(rng, d, d), DenseParams::glorot(rng, d, d)],
            heads,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub attn: AttentionParams,
    pub mlp: [DenseParams; 2],
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerParams {
    pub self_attn: AttentionParams,
    pub cross_attn: AttentionParams,
    pub mlp: [DenseParams; 2],
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
    pub ln3: LayerNormParams,
}

/// Which tensor queries the decoder's cross-attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossAttentionOrder {
    /// Encoder memory is the query; the decoder stream provides keys/values.
    AsPrinted,
    /// Decoder stream queries the encoder memory.
    Conventional,
}

// ---- bound (on-tape) views of the parameter structs ----

#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormVars {
    pub gain: Var,
    pub bias: Var,
}

#[derive(Debug, Clone)]
pub struct AttentionVars {
    pub wq: DenseVars,
    pub wk: DenseVars,
    pub wv: DenseVars,
    pub wo: DenseVars,
    pub mlp: [DenseVars; 2],
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerVars {
    pub attn: AttentionVars,
    pub mlp: [DenseVars; 2],
    pub ln1: LayerNormVars,
    pub ln2: LayerNormVars,
}

#[derive(Debug, Clone)]
pub struct DecoderLayerVars {
    pub self_attn: AttentionVars,
    pub cross_attn: AttentionVars,
    pub mlp: [DenseVars; 2],
    pub ln1: LayerNormVars,
    pub ln2: LayerNormVars,
    pub ln3: LayerNormVars,
}

/// y = act(x W + b)
pub fn dense(tape: &mut Tape, x: Var, p: DenseVars, act: Activation) -> Var {
    let xw = tape.matmul(x, p.w);
    let y = tape.add_row(xw, p.b);
    match act {
        Activation::None => y,
        Activation::Relu => tape.relu(y),
    }
}

/// Two dense layers, ReLU on the first.
pub fn mlp2(tape: &mut Tape, x: Var, p: &[DenseVars; 2]) -> Var {
    let h = dense(tape, x, p[0], Activation::Relu);
    dense(tape, h, p[1], Activation::None)
}

/// Scaled dot-product attention over `heads` column blocks, concatenated and
/// passed through the output projection. No post-MLP; see [`attention`].
pub fn multi_head(tape: &mut Tape, q: Var, k: Var, v: Var, p: &AttentionVars) -> Var {
    let d = tape.shape(q).1;
    assert!(d % p.heads == 0, "width must divide into heads");
    let dh = d / p.heads;
    let qp = dense(tape, q, p.wq, Activation::None);
    let kp = dense(tape, k, p.wk, Activation::None);
    let vp = dense(tape, v, p.wv, Activation::None);
    let mut outs = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qi = tape.slice_cols(qp, lo, hi);
        let ki = tape.slice_cols(kp, lo, hi);
        let vi = tape.slice_cols(vp, lo, hi);
        let kt = tape.transpose(ki);
        let scores = tape.matmul(qi, kt);
        let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = tape.softmax_rows(scaled);
        outs.push(tape.matmul(weights, vi));
    }
    let cat = tape.concat_cols(&outs);
    dense(tape, cat, p.wo, Activation::None)
}

/// Full attention layer: multi-head attention followed by its two-layer MLP.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, p: &AttentionVars) -> Var {
    let mh = multi_head(tape, q, k, v, p);
    mlp2(tape, mh, &p.mlp)
}

/// Self-attention sublayer with residual, then the MLP sublayer with
/// residual, each followed by layer normalization.
pub fn encoder_layer(tape: &mut Tape, h: Var, p: &EncoderLayerVars) -> Var {
    let att = attention(tape, h, h, h, &p.attn);
    let a = tape.add(att, h);
    let an = tape.layer_norm(a, p.ln1.gain, p.ln1.bias, LAYER_NORM_EPS);
    let m = mlp2(tape, an, &p.mlp);
    let c = tape.add(m, an);
    tape.layer_norm(c, p.ln2.gain, p.ln2.bias, LAYER_NORM_EPS)
}

/// Self-attention sublayer, cross-attention sublayer against the encoder
/// memory `h_e`, then the MLP sublayer, each with residual + normalization.
///
/// Under [`CrossAttentionOrder::AsPrinted`] the encoder memory is the query,
/// so its length must match the decoder stream for the residual to typecheck
/// (both stages of the model query with the sequence length the encoder
/// consumes). The conventional order accepts any memory length.
pub fn decoder_layer(
    tape: &mut Tape,
    h: Var,
    h_e: Var,
    p: &DecoderLayerVars,
    order: CrossAttentionOrder,
) -> Var {
    let att = attention(tape, h, h, h, &p.self_attn);
    let a = tape.add(att, h);
    let an = tape.layer_norm(a, p.ln1.gain, p.ln1.bias, LAYER_NORM_EPS);
    let cross = match order {
        CrossAttentionOrder::AsPrinted => {
            assert_eq!(
                tape.shape(h_e).0,
                tape.shape(h).0,
                "memory-as-query cross attention needs matching sequence lengths"
            );
            attention(tape, h_e, an, an, &p.cross_attn)
        }
        CrossAttentionOrder::Conventional => attention(tape, an, h_e, h_e, &p.cross_attn),
    };
    let a2 = tape.add(cross, an);
    let a2n = tape.layer_norm(a2, p.ln2.gain, p.ln2.bias, LAYER_NORM_EPS);
    let m = mlp2(tape, a2n, &p.mlp);
    let c = tape.add(m, a2n);
    tape.layer_norm(c, p.ln3.gain, p.ln3.bias, LAYER_NORM_EPS)
}

/// Sinusoidal positional encoding for steps 1..=n (1-based), width d.
/// Even columns get sin(t / 10000^(i/d)), odd columns the matching cosine.
pub fn positional_encoding(n: usize, d: usize) -> Mat {
    assert!(d % 2 == 0, "positional encoding width must be even");
    Array2::from_shape_fn((n, d), |(t, i)| {
        let step = (t + 1) as f64;
        let exp = if i % 2 == 0 { i } else { i - 1 } as f64 / d as f64;
        let angle = step / 10000f64.powf(exp);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
