//! Named parameter tree of the two-stage model, plus tape binding.
//!
//! Stage-1 parameters all live under the `stage1.` prefix and stage-2 under
//! `stage2.`; the loss routing in the training module relies on that split.

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{
    AttentionParams, AttentionVars, DecoderLayerParams, DecoderLayerVars, DenseParams, DenseVars,
    EncoderLayerParams, EncoderLayerVars, LayerNormParams, LayerNormVars,
};
use crate::nn::tape::{Mat, Tape, Var};
use crate::rng::substream;

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    pub query_proj: DenseParams,
    pub encoders: Vec<EncoderLayerParams>,
    pub decoders: Vec<DecoderLayerParams>,
    /// Present only on the interpolation transformer, which emits spectra
    /// directly; the keypoints transformer is a feature extractor.
    pub output: Option<DenseParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOneParams {
    pub mlp_t: DenseParams,
    pub mlp_i: DenseParams,
    pub mlp_bi: Option<DenseParams>,
    pub tk: TransformerParams,
    pub mlp_e: DenseParams,
    pub mlp_d: DenseParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTwoParams {
    pub mlp_t: DenseParams,
    pub mlp_c: DenseParams,
    pub fuse: DenseParams,
    pub ti: TransformerParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub stage1: StageOneParams,
    pub stage2: StageTwoParams,
}

fn glorot_attention(rng: &mut ChaCha12Rng, d: usize, heads: usize) -> AttentionParams {
    AttentionParams::glorot(rng, d, heads)
}

fn glorot_encoder(rng: &mut ChaCha12Rng, d: usize, ff: usize, heads: usize) -> EncoderLayerParams {
    EncoderLayerParams {
        attn: glorot_attention(rng, d, heads),
        mlp: [DenseParams::glorot(rng, d, ff), DenseParams::glorot(rng, ff, d)],
        ln1: LayerNormParams::unit(d),
        ln2: LayerNormParams::unit(d),
    }
}

fn glorot_decoder(rng: &mut ChaCha12Rng, d: usize, ff: usize, heads: usize) -> DecoderLayerParams {
    DecoderLayerParams {
        self_attn: glorot_attention(rng, d, heads),
        cross_attn: glorot_attention(rng, d, heads),
        mlp: [DenseParams::glorot(rng, d, ff), DenseParams::glorot(rng, ff, d)],
        ln1: LayerNormParams::unit(d),
        ln2: LayerNormParams::unit(d),
        ln3: LayerNormParams::unit(d),
    }
}

fn glorot_transformer(
    rng: &mut ChaCha12Rng,
    cfg: &ModelConfig,
    query_width: usize,
    output_width: Option<usize>,
) -> TransformerParams {
    TransformerParams {
        query_proj: DenseParams::glorot(rng, query_width, cfg.d),
        encoders: (0..cfg.layers)
            .map(|_| glorot_encoder(rng, cfg.d, cfg.ff_width, cfg.heads))
            .collect(),
        decoders: (0..cfg.layers)
            .map(|_| glorot_decoder(rng, cfg.d, cfg.ff_width, cfg.heads))
            .collect(),
        output: output_width.map(|w| DenseParams::glorot(rng, cfg.d, w)),
    }
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains; drawn from
    /// the `init` substream of the seed in construction order.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = substream(seed, "init");
        let spec_dims = cfg.spectrum_dims()?;
        let (n_key_spec, _) = cfg.keypoint_spectrum_shape()?;
        let (n_h, _) = cfg.observed_spectrum_shape()?;
        let embed = cfg.embed_width;
        let stage1 = StageOneParams {
            mlp_t: DenseParams::glorot(&mut rng, spec_dims, embed),
            mlp_i: DenseParams::glorot(&mut rng, cfg.noise_dim, embed),
            mlp_bi: if cfg.use_bilinear {
                Some(DenseParams::glorot(&mut rng, (embed / 2) * (embed / 2), embed))
            } else {
                None
            },
            tk: glorot_transformer(&mut rng, cfg, spec_dims, None),
            mlp_e: DenseParams::glorot(&mut rng, cfg.d, cfg.d),
            mlp_d: DenseParams::glorot(&mut rng, n_h * cfg.d, n_key_spec * spec_dims),
        };
        let stage2 = StageTwoParams {
            mlp_t: DenseParams::glorot(&mut rng, spec_dims, embed),
            mlp_c: DenseParams::glorot(&mut rng, cfg.ctx_width, embed),
            fuse: DenseParams::glorot(&mut rng, 2 * embed, cfg.d),
            ti: glorot_transformer(&mut rng, cfg, spec_dims, Some(spec_dims)),
        };
        Ok(Self { stage1, stage2 })
    }

    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        stage1_tensors(&self.stage1, &mut out);
        stage2_tensors(&self.stage2, &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let names: Vec<String> = self.tensors().into_iter().map(|(n, _)| n).collect();
        let mut flat = Vec::new();
        stage1_flat(&mut self.stage1, &mut flat);
        stage2_flat(&mut self.stage2, &mut flat);
        debug_assert_eq!(names.len(), flat.len());
        names.into_iter().zip(flat).collect()
    }

    /// Shape check against a freshly initialized layout for `cfg`, naming the
    /// first tensor that disagrees.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = ModelParams::init(cfg, 0)?;
        let mine = self.tensors();
        let theirs = expected.tensors();
        if mine.len() != theirs.len() {
            return Err(Error::shape(format!(
                "parameter count {} does not match config ({})",
                mine.len(),
                theirs.len()
            )));
        }
        for ((name_a, a), (name_b, b)) in mine.iter().zip(theirs.iter()) {
            if name_a != name_b {
                return Err(Error::shape(format!("unexpected tensor {name_a}, wanted {name_b}")));
            }
            if a.shape() != b.shape() {
                return Err(Error::shape(format!(
                    "tensor {name_a} has shape {:?}, config expects {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// True for names owned by the coarse (keypoints) stage.
    pub fn is_stage1(name: &str) -> bool {
        name.starts_with("stage1.")
    }
}

// The named walk and the mutable walk below must visit tensors in the same
// order; tensors_mut zips them and asserts the lengths agree.

fn dense_tensors<'a>(prefix: &str, p: &'a DenseParams, out: &mut Vec<(String, &'a Mat)>) {
    out.push((format!("{prefix}.w"), &p.w));
    out.push((format!("{prefix}.b"), &p.b));
}

fn attn_tensors<'a>(prefix: &str, p: &'a AttentionParams, out: &mut Vec<(String, &'a Mat)>) {
    dense_tensors(&format!("{prefix}.wq"), &p.wq, out);
    dense_tensors(&format!("{prefix}.wk"), &p.wk, out);
    dense_tensors(&format!("{prefix}.wv"), &p.wv, out);
    dense_tensors(&format!("{prefix}.wo"), &p.wo, out);
    dense_tensors(&format!("{prefix}.mlp0"), &p.mlp[0], out);
    dense_tensors(&format!("{prefix}.mlp1"), &p.mlp[1], out);
}

fn ln_tensors<'a>(prefix: &str, p: &'a LayerNormParams, out: &mut Vec<(String, &'a Mat)>) {
    out.push((format!("{prefix}.gain"), &p.gain));
    out.push((format!("{prefix}.bias"), &p.bias));
}

fn transformer_tensors<'a>(
    prefix: &str,
    p: &'a TransformerParams,
    out: &mut Vec<(String, &'a Mat)>,
) {
    dense_tensors(&format!("{prefix}.query_proj"), &p.query_proj, out);
    for (i, layer) in p.encoders.iter().enumerate() {
        attn_tensors(&format!("{prefix}.enc{i}.attn"), &layer.attn, out);
        dense_tensors(&format!("{prefix}.enc{i}.mlp0"), &layer.mlp[0], out);
        dense_tensors(&format!("{prefix}.enc{i}.mlp1"), &layer.mlp[1], out);
        ln_tensors(&format!("{prefix}.enc{i}.ln1"), &layer.ln1, out);
        ln_tensors(&format!("{prefix}.enc{i}.ln2"), &layer.ln2, out);
    }
    for (i, layer) in p.decoders.iter().enumerate() {
        attn_tensors(&format!("{prefix}.dec{i}.self"), &layer.self_attn, out);
        attn_tensors(&format!("{prefix}.dec{i}.cross"), &layer.cross_attn, out);
        dense_tensors(&format!("{prefix}.dec{i}.mlp0"), &layer.mlp[0], out);
        dense_tensors(&format!("{prefix}.dec{i}.mlp1"), &layer.mlp[1], out);
        ln_tensors(&format!("{prefix}.dec{i}.ln1"), &layer.ln1, out);
        ln_tensors(&format!("{prefix}.dec{i}.ln2"), &layer.ln2, out);
        ln_tensors(&format!("{prefix}.dec{i}.ln3"), &layer.ln3, out);
    }
    if let Some(head) = &p.output {
        dense_tensors(&format!("{prefix}.output"), head, out);
    }
}

fn stage1_tensors<'a>(p: &'a StageOneParams, out: &mut Vec<(String, &'a Mat)>) {
    dense_tensors("stage1.mlp_t", &p.mlp_t, out);
    dense_tensors("stage1.mlp_i", &p.mlp_i, out);
    if let Some(bi) = &p.mlp_bi {
        dense_tensors("stage1.mlp_bi", bi, out);
    }
    transformer_tensors("stage1.tk", &p.tk, out);
    dense_tensors("stage1.mlp_e", &p.mlp_e, out);
    dense_tensors("stage1.mlp_d", &p.mlp_d, out);
}

fn stage2_tensors<'a>(p: &'a StageTwoParams, out: &mut Vec<(String, &'a Mat)>) {
    dense_tensors("stage2.mlp_t", &p.mlp_t, out);
    dense_tensors("stage2.mlp_c", &p.mlp_c, out);
    dense_tensors("stage2.fuse", &p.fuse, out);
    transformer_tensors("stage2.ti", &p.ti, out);
}

fn dense_flat<'a>(p: &'a mut DenseParams, out: &mut Vec<&'a mut Mat>) {
    out.push(&mut p.w);
    out.push(&mut p.b);
}

fn attn_flat<'a>(p: &'a mut AttentionParams, out: &mut Vec<&'a mut Mat>) {
    dense_flat(&mut p.wq, out);
    dense_flat(&mut p.wk, out);
    dense_flat(&mut p.wv, out);
    dense_flat(&mut p.wo, out);
    let [m0, m1] = &mut p.mlp;
    dense_flat(m0, out);
    dense_flat(m1, out);
}

fn ln_flat<'a>(p: &'a mut LayerNormParams, out: &mut Vec<&'a mut Mat>) {
    out.push(&mut p.gain);
    out.push(&mut p.bias);
}

fn transformer_flat<'a>(p: &'a mut TransformerParams, out: &mut Vec<&'a mut Mat>) {
    dense_flat(&mut p.query_proj, out);
    for layer in p.encoders.iter_mut() {
        attn_flat(&mut layer.attn, out);
        let [m0, m1] = &mut layer.mlp;
        dense_flat(m0, out);
        dense_flat(m1, out);
        ln_flat(&mut layer.ln1, out);
        ln_flat(&mut layer.ln2, out);
    }
    for layer in p.decoders.iter_mut() {
        attn_flat(&mut layer.self_attn, out);
        attn_flat(&mut layer.cross_attn, out);
        let [m0, m1] = &mut layer.mlp;
        dense_flat(m0, out);
        dense_flat(m1, out);
        ln_flat(&mut layer.ln1, out);
        ln_flat(&mut layer.ln2, out);
        ln_flat(&mut layer.ln3, out);
    }
    if let Some(head) = &mut p.output {
        dense_flat(head, out);
    }
}

fn stage1_flat<'a>(p: &'a mut StageOneParams, out: &mut Vec<&'a mut Mat>) {
    dense_flat(&mut p.mlp_t, out);
    dense_flat(&mut p.mlp_i, out);
    if let Some(bi) = &mut p.mlp_bi {
        dense_flat(bi, out);
    }
    transformer_flat(&mut p.tk, out);
    dense_flat(&mut p.mlp_e, out);
    dense_flat(&mut p.mlp_d, out);
}

fn stage2_flat<'a>(p: &'a mut StageTwoParams, out: &mut Vec<&'a mut Mat>) {
    dense_flat(&mut p.mlp_t, out);
    dense_flat(&mut p.mlp_c, out);
    dense_flat(&mut p.fuse, out);
    transformer_flat(&mut p.ti, out);
}

// ---- tape binding ----

#[derive(Debug, Clone)]
pub struct TransformerVars {
    pub query_proj: DenseVars,
    pub encoders: Vec<EncoderLayerVars>,
    pub decoders: Vec<DecoderLayerVars>,
    pub output: Option<DenseVars>,
}

#[derive(Debug, Clone)]
pub struct StageOneVars {
    pub mlp_t: DenseVars,
    pub mlp_i: DenseVars,
    pub mlp_bi: Option<DenseVars>,
    pub tk: TransformerVars,
    pub mlp_e: DenseVars,
    pub mlp_d: DenseVars,
}

#[derive(Debug, Clone)]
pub struct StageTwoVars {
    pub mlp_t: DenseVars,
    pub mlp_c: DenseVars,
    pub fuse: DenseVars,
    pub ti: TransformerVars,
}

/// Parameters bound to tape leaves. `names` maps every tensor name to its
/// tape variable so gradients can be collected per name after backward.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub stage1: StageOneVars,
    pub stage2: StageTwoVars,
    pub names: Vec<(String, Var)>,
}

struct Binder<'t> {
    tape: &'t mut Tape,
    names: Vec<(String, Var)>,
}

impl<'t> Binder<'t> {
    fn dense(&mut self, prefix: &str, p: &DenseParams) -> DenseVars {
        let w = self.tape.leaf(p.w.clone());
        let b = self.tape.leaf(p.b.clone());
        self.names.push((format!("{prefix}.w"), w));
        self.names.push((format!("{prefix}.b"), b));
        DenseVars { w, b }
    }

    fn layer_norm(&mut self, prefix: &str, p: &LayerNormParams) -> LayerNormVars {
        let gain = self.tape.leaf(p.gain.clone());
        let bias = self.tape.leaf(p.bias.clone());
        self.names.push((format!("{prefix}.gain"), gain));
        self.names.push((format!("{prefix}.bias"), bias));
        LayerNormVars { gain, bias }
    }

    fn attention(&mut self, prefix: &str, p: &AttentionParams) -> AttentionVars {
        AttentionVars {
            wq: self.dense(&format!("{prefix}.wq"), &p.wq),
            wk: self.dense(&format!("{prefix}.wk"), &p.wk),
            wv: self.dense(&format!("{prefix}.wv"), &p.wv),
            wo: self.dense(&format!("{prefix}.wo"), &p.wo),
            mlp: [
                self.dense(&format!("{prefix}.mlp0"), &p.mlp[0]),
                self.dense(&format!("{prefix}.mlp1"), &p.mlp[1]),
            ],
            heads: p.heads,
        }
    }

    fn transformer(&mut self, prefix: &str, p: &TransformerParams) -> TransformerVars {
        TransformerVars {
            query_proj: self.dense(&format!("{prefix}.query_proj"), &p.query_proj),
            encoders: p
                .encoders
                .iter()
                .enumerate()
                .map(|(i, layer)| EncoderLayerVars {
                    attn: self.attention(&format!("{prefix}.enc{i}.attn"), &layer.attn),
                    mlp: [
                        self.dense(&format!("{prefix}.enc{i}.mlp0"), &layer.mlp[0]),
                        self.dense(&format!("{prefix}.enc{i}.mlp1"), &layer.mlp[1]),
                    ],
                    ln1: self.layer_norm(&format!("{prefix}.enc{i}.ln1"), &layer.ln1),
                    ln2: self.layer_norm(&format!("{prefix}.enc{i}.ln2"), &layer.ln2),
                })
                .collect(),
            decoders: p
                .decoders
                .iter()
                .enumerate()
                .map(|(i, layer)| DecoderLayerVars {
                    self_attn: self.attention(&format!("{prefix}.dec{i}.self"), &layer.self_attn),
                    cross_attn: self.attention(&format!("{prefix}.dec{i}.cross"), &layer.cross_attn),
                    mlp: [
                        self.dense(&format!("{prefix}.dec{i}.mlp0"), &layer.mlp[0]),
                        self.dense(&format!("{prefix}.dec{i}.mlp1"), &layer.mlp[1]),
                    ],
                    ln1: self.layer_norm(&format!("{prefix}.dec{i}.ln1"), &layer.ln1),
                    ln2: self.layer_norm(&format!("{prefix}.dec{i}.ln2"), &layer.ln2),
                    ln3: self.layer_norm(&format!("{prefix}.dec{i}.ln3"), &layer.ln3),
                })
                .collect(),
            output: p.output.as_ref().map(|head| self.dense(&format!("{prefix}.output"), head)),
        }
    }
}

/// Enter every parameter tensor onto the tape as a leaf.
pub fn bind(tape: &mut Tape, params: &ModelParams) -> BoundModel {
    let mut b = Binder { tape, names: Vec::new() };
    let stage1 = StageOneVars {
        mlp_t: b.dense("stage1.mlp_t", &params.stage1.mlp_t),
        mlp_i: b.dense("stage1.mlp_i", &params.stage1.mlp_i),
        mlp_bi: params.stage1.mlp_bi.as_ref().map(|p| b.dense("stage1.mlp_bi", p)),
        tk: b.transformer("stage1.tk", &params.stage1.tk),
        mlp_e: b.dense("stage1.mlp_e", &params.stage1.mlp_e),
        mlp_d: b.dense("stage1.mlp_d", &params.stage1.mlp_d),
    };
    let stage2 = StageTwoVars {
        mlp_t: b.dense("stage2.mlp_t", &params.stage2.mlp_t),
        mlp_c: b.dense("stage2.mlp_c", &params.stage2.mlp_c),
        fuse: b.dense("stage2.fuse", &params.stage2.fuse),
        ti: b.transformer("stage2.ti", &params.stage2.ti),
    };
    let names = b.names;
    BoundModel { stage1, stage2, names }
}
