//! Forward passes of both prediction stages and the end-to-end sampler.

use ndarray::s;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::layers::{
    decoder_layer, dense, encoder_layer, positional_encoding, Activation, CrossAttentionOrder,
    DenseVars,
};
use crate::nn::tape::{Mat, Tape, Var};
use crate::rng::substream;
use crate::traj::{merge_points_to_box, split_box_to_points, TaskKind, Trajectory};
use crate::transforms::TransformKind;

use super::diff_transform::{interp_rows_op, inverse_transform_op};
use super::params::{bind, ModelParams, StageOneVars, StageTwoVars, TransformerVars};
use super::{ContextFeature, InterpolationMode, ModelConfig, PredictionSet};

/// Embedding of one observed spectrum combined with a noise draw.
pub struct EmbedOutput {
    /// Combined embedding `f_e` of shape (rows, d).
    pub f_embed: Var,
    /// Trajectory branch after optional bilinear replacement, (rows, embed).
    pub f_t: Var,
    /// Flattened per-step outer products when bilinear fusion is active,
    /// (rows, embed^2); logically a (rows, embed, embed) stack.
    pub bilinear_stack: Option<Var>,
}

/// Embed spectrum rows and a tiled noise vector, concatenating the halves.
/// With bilinear fusion enabled the trajectory branch is replaced by the
/// fused features of [`bilinear_fuse`].
pub fn embed_observation(
    tape: &mut Tape,
    spec: Var,
    noise: Var,
    s1: &StageOneVars,
    cfg: &ModelConfig,
) -> EmbedOutput {
    let rows = tape.shape(spec).0;
    let f_t = dense(tape, spec, s1.mlp_t, Activation::Relu);
    let (f_t, stack) = match s1.mlp_bi {
        Some(mlp_bi) if cfg.use_bilinear => {
            let (fused, stack) = bilinear_fuse(tape, f_t, mlp_bi);
            (fused, Some(stack))
        }
        _ => (f_t, None),
    };
    let tiled = tape.tile_rows(noise, rows);
    let f_i = dense(tape, tiled, s1.mlp_i, Activation::Relu);
    let f_embed = tape.concat_cols(&[f_t, f_i]);
    EmbedOutput { f_embed, f_t, bilinear_stack: stack }
}

/// Per-step outer product of the embedding with itself, 2x2 max pooling,
/// flattening, and the encoder MLP. Output keeps the (rows, embed) shape of
/// the input so it can replace the plain embedding. Also returns the
/// flattened outer-product stack.
pub fn bilinear_fuse(tape: &mut Tape, f_t: Var, mlp_bi: DenseVars) -> (Var, Var) {
    let (rows, w) = tape.shape(f_t);
    assert!(w % 2 == 0, "bilinear pooling needs an even embedding width");
    let stack = tape.outer_rows(f_t);
    let pooled_w = (w / 2) * (w / 2);
    let mut pooled_rows = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = tape.slice_rows(stack, r, r + 1);
        let square = tape.reshape(row, w, w);
        let pooled = tape.maxpool2(square);
        pooled_rows.push(tape.reshape(pooled, 1, pooled_w));
    }
    let flat = tape.concat_rows(&pooled_rows);
    let fused = dense(tape, flat, mlp_bi, Activation::Relu);
    (fused, stack)
}

/// Encoder stack over `enc_input`, decoder stack queried by the projection
/// of `query_raw`, positional encodings added to both sequential inputs.
fn run_transformer(
    tape: &mut Tape,
    t: &TransformerVars,
    enc_input: Var,
    query_raw: Var,
    order: CrossAttentionOrder,
) -> Var {
    let (n_e, d) = tape.shape(enc_input);
    let pe = tape.constant(positional_encoding(n_e, d));
    let mut h_e = tape.add(enc_input, pe);
    for layer in &t.encoders {
        h_e = encoder_layer(tape, h_e, layer);
    }
    let q = dense(tape, query_raw, t.query_proj, Activation::None);
    let n_q = tape.shape(q).0;
    let pe_q = tape.constant(positional_encoding(n_q, d));
    let mut h = tape.add(q, pe_q);
    for layer in &t.decoders {
        h = decoder_layer(tape, h, h_e, layer, order);
    }
    if let Some(head) = &t.output {
        h = dense(tape, h, *head, Activation::None);
    }
    h
}

pub struct Stage1Output {
    pub kspec: Var,
    /// Spatial keypoints, (n_key, M).
    pub spatial: Var,
    pub embed: EmbedOutput,
    /// Aggregated behavior feature, (rows, d).
    pub behavior: Var,
}

/// Coarse stage: spectrum + noise in, keypoint spectrum out. The raw
/// spectrum queries the transformer decoder through a learned projection.
pub fn keypoints_subnet(
    tape: &mut Tape,
    spec: Var,
    noise: Var,
    s1: &StageOneVars,
    cfg: &ModelConfig,
) -> Stage1Output {
    let (rows, _) = tape.shape(spec);
    let embed = embed_observation(tape, spec, noise, s1, cfg);
    let features = run_transformer(tape, &s1.tk, embed.f_embed, spec, cfg.cross_attention_order);
    let behavior = dense(tape, features, s1.mlp_e, Activation::Relu);
    let d = cfg.d;
    let flat = tape.reshape(behavior, 1, rows * d);
    let head = dense(tape, flat, s1.mlp_d, Activation::None);
    let (n_key_spec, spec_dims) = cfg.keypoint_spectrum_shape().expect("validated config");
    let kspec = tape.reshape(head, n_key_spec, spec_dims);
    let spatial = inverse_transform_op(tape, kspec, cfg.transform);
    Stage1Output { kspec, spatial, embed, behavior }
}

/// Spatial keypoints of a keypoint spectrum (outside any tape).
pub fn keypoints_to_spatial(kspec: &Mat, transform: TransformKind) -> Result<Trajectory> {
    Trajectory::new(transform.inverse_values(kspec)?)
}

pub struct Stage2Output {
    pub full_spec: Var,
    pub kspec_interp: Var,
    /// Fused stage-2 embedding; absent in linear interpolation mode.
    pub f_embed_key: Option<Var>,
}

/// Fine stage: interpolate the keypoint spectrum to the full point count and
/// refine it with the interpolation transformer, conditioned on the context
/// feature. In linear mode the network is bypassed entirely.
pub fn interpolation_subnet(
    tape: &mut Tape,
    kspec: Var,
    ctx: Var,
    s2: &StageTwoVars,
    cfg: &ModelConfig,
) -> Stage2Output {
    let (n_p, _) = cfg.full_spectrum_shape().expect("validated config");
    let kspec_interp = interp_rows_op(tape, kspec, n_p);
    if cfg.interpolation == InterpolationMode::Linear {
        return Stage2Output { full_spec: kspec_interp, kspec_interp, f_embed_key: None };
    }
    let f_t_key = dense(tape, kspec, s2.mlp_t, Activation::Relu);
    let f_t_interp = interp_rows_op(tape, f_t_key, n_p);
    let f_c = dense(tape, ctx, s2.mlp_c, Activation::Relu);
    let f_c_tiled = tape.tile_rows(f_c, n_p);
    let cat = tape.concat_cols(&[f_t_interp, f_c_tiled]);
    let f_embed_key = dense(tape, cat, s2.fuse, Activation::None);
    let full_spec =
        run_transformer(tape, &s2.ti, f_embed_key, kspec_interp, cfg.cross_attention_order);
    Stage2Output { full_spec, kspec_interp, f_embed_key: Some(f_embed_key) }
}

/// Shapes of every pipeline intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub spectrum: (usize, usize),
    pub f_t: (usize, usize),
    pub bilinear_stack: Option<(usize, usize, usize)>,
    pub f_embed: (usize, usize),
    pub behavior: (usize, usize),
    pub keypoint_spectrum: (usize, usize),
    pub spatial_keypoints: (usize, usize),
    pub interpolated_spectrum: (usize, usize),
    pub f_embed_key: Option<(usize, usize)>,
    pub full_spectrum: (usize, usize),
    pub prediction: (usize, usize),
}

fn check_observation(obs: &Trajectory, cfg: &ModelConfig) -> Result<()> {
    if obs.steps() != cfg.task.t_h || obs.dims() != cfg.task.model_dims() {
        return Err(Error::shape(format!(
            "observation is {}x{}, task expects {}x{}",
            obs.steps(),
            obs.dims(),
            cfg.task.t_h,
            cfg.task.model_dims()
        )));
    }
    Ok(())
}

fn gaussian_row(rng: &mut impl Rng, width: usize) -> Mat {
    Mat::from_shape_fn((1, width), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Draw K stochastic predictions for one observation. The observation is
/// consumed in the model's working frame (normalize first, denormalize the
/// samples after); a fixed seed reproduces the set bit for bit.
pub fn evnet_forward(
    obs: &Trajectory,
    ctx: &ContextFeature,
    params: &ModelParams,
    cfg: &ModelConfig,
    k: usize,
    seed: u64,
) -> Result<PredictionSet> {
    Ok(evnet_forward_traced(obs, ctx, params, cfg, k, seed)?.0)
}

/// [`evnet_forward`] plus the shape trace of the first sample's pass.
pub fn evnet_forward_traced(
    obs: &Trajectory,
    ctx: &ContextFeature,
    params: &ModelParams,
    cfg: &ModelConfig,
    k: usize,
    seed: u64,
) -> Result<(PredictionSet, ForwardTrace)> {
    cfg.validate()?;
    check_observation(obs, cfg)?;
    if k == 0 {
        return Err(Error::invalid("sample count K must be >= 1"));
    }
    if ctx.values.len() != cfg.ctx_width {
        return Err(Error::shape(format!(
            "context width {} does not match config ({})",
            ctx.values.len(),
            cfg.ctx_width
        )));
    }

    let spec = cfg.transform.forward(obs)?;
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let spec_var = tape.constant(spec.values.clone());
    let ctx_var = tape.constant(ctx.as_row());
    let mut rng = substream(seed, "noise");

    let mut set = PredictionSet {
        samples: Vec::with_capacity(k),
        keypoint_spectra: Vec::with_capacity(k),
        spatial_keypoints: Vec::with_capacity(k),
        full_spectra: Vec::with_capacity(k),
    };
    let mut trace = None;
    for _ in 0..k {
        let noise = tape.constant(gaussian_row(&mut rng, cfg.noise_dim));
        let s1 = keypoints_subnet(&mut tape, spec_var, noise, &bound.stage1, cfg);
        let s2 = interpolation_subnet(&mut tape, s1.kspec, ctx_var, &bound.stage2, cfg);
        let traj_full = inverse_transform_op(&mut tape, s2.full_spec, cfg.transform);
        let total = cfg.task.total_steps();
        let pred = tape.slice_rows(traj_full, cfg.task.t_h, total);

        set.samples.push(Trajectory::new(tape.value(pred).clone())?);
        set.keypoint_spectra.push(tape.value(s1.kspec).clone());
        set.spatial_keypoints.push(Trajectory::new(tape.value(s1.spatial).clone())?);
        set.full_spectra.push(tape.value(s2.full_spec).clone());

        if trace.is_none() {
            trace = Some(ForwardTrace {
                spectrum: tape.shape(spec_var),
                f_t: tape.shape(s1.embed.f_t),
                bilinear_stack: s1.embed.bilinear_stack.map(|v| {
                    let (rows, flat) = tape.shape(v);
                    let w = (flat as f64).sqrt() as usize;
                    (rows, w, w)
                }),
                f_embed: tape.shape(s1.embed.f_embed),
                behavior: tape.shape(s1.behavior),
                keypoint_spectrum: tape.shape(s1.kspec),
                spatial_keypoints: tape.shape(s1.spatial),
                interpolated_spectrum: tape.shape(s2.kspec_interp),
                f_embed_key: s2.f_embed_key.map(|v| tape.shape(v)),
                full_spectrum: tape.shape(s2.full_spec),
                prediction: tape.shape(pred),
            });
        }
    }
    Ok((set, trace.expect("k >= 1")))
}

/// Predict M=4 boxes with an M=2 coordinate model by running each corner
/// stream separately under identical noise draws, then merging.
pub fn co2bb_predict(
    obs_box: &Trajectory,
    ctx: &ContextFeature,
    params: &ModelParams,
    cfg: &ModelConfig,
    k: usize,
    seed: u64,
) -> Result<PredictionSet> {
    if cfg.task.kind != TaskKind::Co {
        return Err(Error::invalid("corner-wise box prediction requires a coordinate model"));
    }
    if obs_box.dims() != 4 {
        return Err(Error::shape(format!(
            "corner-wise prediction expects M=4 boxes, got M={}",
            obs_box.dims()
        )));
    }
    let [corner_a, corner_b] = split_box_to_points(obs_box)?;
    let set_a = evnet_forward(&corner_a, ctx, params, cfg, k, seed)?;
    let set_b = evnet_forward(&corner_b, ctx, params, cfg, k, seed)?;

    let mut merged = PredictionSet {
        samples: Vec::with_capacity(k),
        keypoint_spectra: Vec::with_capacity(k),
        spatial_keypoints: Vec::with_capacity(k),
        full_spectra: Vec::with_capacity(k),
    };
    for i in 0..k {
        merged.samples.push(merge_points_to_box(&set_a.samples[i], &set_b.samples[i])?);
        merged.spatial_keypoints.push(merge_points_to_box(
            &set_a.spatial_keypoints[i],
            &set_b.spatial_keypoints[i],
        )?);
        merged.keypoint_spectra.push(merge_spectra(
            &set_a.keypoint_spectra[i],
            &set_b.keypoint_spectra[i],
            cfg.transform,
        ));
        merged.full_spectra.push(merge_spectra(
            &set_a.full_spectra[i],
            &set_b.full_spectra[i],
            cfg.transform,
        ));
    }
    Ok(merged)
}

/// Column-merge two corner spectra into the canonical box layout (amplitude
/// columns of both corners first, then both phase blocks).
fn merge_spectra(a: &Mat, b: &Mat, kind: TransformKind) -> Mat {
    let rows = a.nrows();
    match kind {
        TransformKind::Identity => {
            let mut out = Mat::zeros((rows, a.ncols() + b.ncols()));
            out.slice_mut(s![.., 0..a.ncols()]).assign(a);
            out.slice_mut(s![.., a.ncols()..]).assign(b);
            out
        }
        _ => {
            let m = a.ncols() / 2;
            let mut out = Mat::zeros((rows, 2 * (a.ncols())));
            out.slice_mut(s![.., 0..m]).assign(&a.slice(s![.., 0..m]));
            out.slice_mut(s![.., m..2 * m]).assign(&b.slice(s![.., 0..m]));
            out.slice_mut(s![.., 2 * m..3 * m]).assign(&a.slice(s![.., m..2 * m]));
            out.slice_mut(s![.., 3 * m..4 * m]).assign(&b.slice(s![.., m..2 * m]));
            out
        }
    }
}
