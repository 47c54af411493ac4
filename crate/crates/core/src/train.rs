//! Loss functions, stage-wise gradient routing, and the training loop.
//!
//! The keypoints loss trains only the coarse stage and the point-wise loss
//! only the fine stage: the fine stage consumes the best keypoint spectrum
//! through a gradient stop, so one backward pass of the summed loss routes
//! itself.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{best_of_k, IouSelection};
use crate::model::forward::{interpolation_subnet, keypoints_subnet};
use crate::model::diff_transform::inverse_transform_op;
use crate::model::params::{bind, BoundModel, ModelParams};
use crate::model::{ContextFeature, ModelConfig};
use crate::nn::adam::AdamState;
use crate::nn::tape::{row_norm_mean, Grads, Mat, Tape, Var};
use crate::rng::substream_indexed;
use crate::traj::{apply_normalization, normalize_with, Trajectory};

/// One training example: an observed window and its future continuation, in
/// dataset-native units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub obs: Trajectory,
    pub future: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stochastic samples per agent for the min-over-k keypoints loss.
    pub k_train: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 3e-4, batch_size: 32, epochs: 100, k_train: 3, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::Config("learning rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.k_train == 0 {
            return Err(Error::Config("batch size, epochs and k_train must be positive".into()));
        }
        Ok(())
    }
}

/// Loss summary of one step (or one epoch when averaged).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub akl: f64,
    pub apl: f64,
    pub total: f64,
    /// Keypoint sample chosen by the min for the first agent of the batch.
    pub argmin_k: usize,
}

/// Minimum over samples of the mean keypoint displacement; ties go to the
/// lowest sample index.
pub fn akl_loss(spatial_keypoints: &[Trajectory], y_key: &Trajectory) -> Result<(f64, usize)> {
    if spatial_keypoints.is_empty() {
        return Err(Error::invalid("keypoints loss needs at least one sample"));
    }
    let mut best = (f64::INFINITY, 0usize);
    for (k, sample) in spatial_keypoints.iter().enumerate() {
        let value = apl_loss(sample, y_key)?;
        if value < best.0 {
            best = (value, k);
        }
    }
    Ok(best)
}

/// Mean over rows of the Euclidean row norms of `pred - truth`.
pub fn apl_loss(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    if pred.steps() != truth.steps() || pred.dims() != truth.dims() {
        return Err(Error::shape(format!(
            "loss operands are {}x{} vs {}x{}",
            pred.steps(),
            pred.dims(),
            truth.steps(),
            truth.dims()
        )));
    }
    let mut total = 0.0;
    for (p, t) in pred.values().rows().into_iter().zip(truth.values().rows()) {
        total += p
            .iter()
            .zip(t.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
    }
    Ok(total / pred.steps() as f64)
}

/// On-tape loss graph of one batch.
pub struct BatchLoss {
    pub akl: Var,
    pub apl: Var,
    pub total: Var,
    pub argmin_first: usize,
}

/// Build the combined loss of a batch on `tape`. Per agent: normalize, draw
/// `k_train` keypoint spectra, take the min keypoint loss, feed the winning
/// spectrum (gradient stopped) to the fine stage, and add the point-wise
/// loss of the reconstructed future.
pub fn build_batch_loss(
    tape: &mut Tape,
    bound: &BoundModel,
    batch: &[TrainSample],
    cfg: &ModelConfig,
    k_train: usize,
    rng: &mut ChaCha12Rng,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::invalid("batch must be nonempty"));
    }
    let ctx = ContextFeature::zero(cfg.ctx_width);
    let ctx_var = tape.constant(ctx.as_row());
    let key_rows = cfg.keypoints.future_rows(cfg.task.t_h);

    let mut akl_sum: Option<Var> = None;
    let mut apl_sum: Option<Var> = None;
    let mut argmin_first = 0usize;

    for (agent, sample) in batch.iter().enumerate() {
        let (obs_n, state) = normalize_with(&sample.obs, cfg.normalize.scale, cfg.normalize.anchor)?;
        let fut_n = apply_normalization(&sample.future, &state)?;
        let spec = cfg.transform.forward(&obs_n)?;
        let spec_var = tape.constant(spec.values.clone());

        let y_key = Mat::from_shape_fn((key_rows.len(), fut_n.dims()), |(i, d)| {
            fut_n.values()[[key_rows[i], d]]
        });
        let y_key_var = tape.constant(y_key);
        let y_var = tape.constant(fut_n.values().clone());

        let mut best: Option<(f64, Var, Var, usize)> = None;
        for k in 0..k_train {
            let noise = Mat::from_shape_fn((1, cfg.noise_dim), |_| {
                rng.sample::<f64, _>(StandardNormal)
            });
            let noise_var = tape.constant(noise);
            let s1 = keypoints_subnet(tape, spec_var, noise_var, &bound.stage1, cfg);
            let akl_k = row_norm_mean(tape, s1.spatial, y_key_var);
            let value = tape.value(akl_k)[[0, 0]];
            if best.as_ref().map_or(true, |(v, ..)| value < *v) {
                best = Some((value, akl_k, s1.kspec, k));
            }
        }
        let (_, akl_var, kspec, argmin) = best.expect("k_train >= 1");
        if agent == 0 {
            argmin_first = argmin;
        }

        let kspec_stopped = tape.stop_gradient(kspec);
        let s2 = interpolation_subnet(tape, kspec_stopped, ctx_var, &bound.stage2, cfg);
        let traj_full = inverse_transform_op(tape, s2.full_spec, cfg.transform);
        let pred = tape.slice_rows(traj_full, cfg.task.t_h, cfg.task.total_steps());
        let apl_var = row_norm_mean(tape, pred, y_var);

        akl_sum = Some(match akl_sum {
            Some(acc) => tape.add(acc, akl_var),
            None => akl_var,
        });
        apl_sum = Some(match apl_sum {
            Some(acc) => tape.add(acc, apl_var),
            None => apl_var,
        });
    }

    let scale = 1.0 / batch.len() as f64;
    let akl = tape.scale(akl_sum.expect("nonempty batch"), scale);
    let apl = tape.scale(apl_sum.expect("nonempty batch"), scale);
    let total = tape.add(akl, apl);
    Ok(BatchLoss { akl, apl, total, argmin_first })
}

/// Gradients of a scalar with respect to every named parameter, skipping
/// parameters the loss never touched.
pub fn collect_grads(grads: &Grads, bound: &BoundModel) -> BTreeMap<String, Mat> {
    let mut out = BTreeMap::new();
    for (name, var) in &bound.names {
        if let Some(g) = grads.of(*var) {
            out.insert(name.clone(), g.clone());
        }
    }
    out
}

pub struct StepOutcome {
    pub report: LossReport,
    pub grads: BTreeMap<String, Mat>,
}

/// One combined forward/backward pass over a batch.
pub fn combined_step(
    batch: &[TrainSample],
    params: &ModelParams,
    cfg: &ModelConfig,
    k_train: usize,
    rng: &mut ChaCha12Rng,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let loss = build_batch_loss(&mut tape, &bound, batch, cfg, k_train, rng)?;
    let report = LossReport {
        akl: tape.value(loss.akl)[[0, 0]],
        apl: tape.value(loss.apl)[[0, 0]],
        total: tape.value(loss.total)[[0, 0]],
        argmin_k: loss.argmin_first,
    };
    if !report.total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss (akl={}, apl={})",
            report.akl, report.apl
        )));
    }
    let grads = tape.backward(loss.total)?;
    Ok(StepOutcome { report, grads: collect_grads(&grads, &bound) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub akl: f64,
    pub apl: f64,
    pub total: f64,
}

/// Seeded full training loop: shuffled batches, Adam updates, one stats row
/// per epoch.
pub fn fit(
    dataset: &[TrainSample],
    cfg: &ModelConfig,
    train: &TrainConfig,
    params: &mut ModelParams,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    train.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let mut adam = AdamState::new(train.lr);
    let mut log = Vec::with_capacity(train.epochs);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..train.epochs {
        let mut shuffle_rng = substream_indexed(train.seed, "shuffle", epoch as u64);
        indices.shuffle(&mut shuffle_rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (batch_idx, chunk) in indices.chunks(train.batch_size).enumerate() {
            let batch: Vec<TrainSample> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let mut noise_rng = substream_indexed(
                train.seed,
                "train-noise",
                ((epoch as u64) << 24) | batch_idx as u64,
            );
            let outcome = combined_step(&batch, params, cfg, train.k_train, &mut noise_rng)?;
            adam.step(
                params.tensors_mut().into_iter().map(|(n, t)| (n, t)),
                &outcome.grads,
            )?;
            sums.0 += outcome.report.akl;
            sums.1 += outcome.report.apl;
            sums.2 += outcome.report.total;
            batches += 1;
        }
        let b = batches as f64;
        log.push(EpochStats { epoch, akl: sums.0 / b, apl: sums.1 / b, total: sums.2 / b });
    }
    Ok(log)
}

/// Mean best-of-K displacement error over a dataset, evaluated in the
/// normalized frame. Used as the overfit gauge for synthetic sets.
pub fn dataset_ade(
    dataset: &[TrainSample],
    params: &ModelParams,
    cfg: &ModelConfig,
    k: usize,
    seed: u64,
) -> Result<f64> {
    let ctx = ContextFeature::zero(cfg.ctx_width);
    let mut total = 0.0;
    for (i, sample) in dataset.iter().enumerate() {
        let (obs_n, state) = normalize_with(&sample.obs, cfg.normalize.scale, cfg.normalize.anchor)?;
        let fut_n = apply_normalization(&sample.future, &state)?;
        let set = crate::model::evnet_forward(
            &obs_n,
            &ctx,
            params,
            cfg,
            k,
            crate::rng::derive_seed(seed, "eval-noise", i as u64),
        )?;
        let report = best_of_k(&set.samples, &fut_n, cfg.task.kind, IouSelection::AdeTied)?;
        total += report.ade;
    }
    Ok(total / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::model::task_preset;
    use crate::traj::TaskKind;
    use crate::transforms::TransformKind;
    use ndarray::Array2;

    fn toy_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::small(TransformKind::Dft, task_preset(TaskKind::Co)).unwrap();
        cfg.d = 8;
        cfg.embed_width = 4;
        cfg.heads = 2;
        cfg.ff_width = 8;
        cfg.noise_dim = 4;
        cfg.ctx_width = 4;
        cfg.use_bilinear = true;
        cfg
    }

    fn linear_sample(vx: f64, vy: f64) -> TrainSample {
        let track = Trajectory::new(Array2::from_shape_fn((20, 2), |(t, d)| {
            if d == 0 {
                vx * t as f64
            } else {
                vy * t as f64
            }
        }))
        .unwrap();
        TrainSample { obs: track.slice_steps(0, 8), future: track.slice_steps(8, 12) }
    }

    #[test]
    fn akl_zero_when_one_sample_matches() {
        let y = Trajectory::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let off = Trajectory::from_rows(&[vec![2.0, 2.0], vec![4.0, 4.0]]).unwrap();
        let (value, argmin) = akl_loss(&[off, y.clone()], &y).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(argmin, 1);
    }

    #[test]
    fn akl_constant_distances() {
        let y = Trajectory::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let three = Trajectory::from_rows(&[vec![3.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let four = Trajectory::from_rows(&[vec![4.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let (value, argmin) = akl_loss(&[three, four], &y).unwrap();
        assert!((value - 3.0).abs() < 1e-12);
        assert_eq!(argmin, 0);
    }

    #[test]
    fn akl_matches_bruteforce() {
        use rand::Rng;
        let mut rng = substream(3, "akl-test");
        let y = Trajectory::new(Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0)))
            .unwrap();
        let samples: Vec<Trajectory> = (0..5)
            .map(|_| {
                Trajectory::new(Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0)))
                    .unwrap()
            })
            .collect();
        let (value, argmin) = akl_loss(&samples, &y).unwrap();
        // Brute force over every k.
        let all: Vec<f64> = samples.iter().map(|s| apl_loss(s, &y).unwrap()).collect();
        let min = all.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(value, min);
        assert_eq!(all[argmin], min);
    }

    #[test]
    fn apl_345_offset() {
        let y = Trajectory::from_rows(&vec![vec![0.0, 0.0]; 12]).unwrap();
        let pred = Trajectory::from_rows(&vec![vec![3.0, 4.0]; 12]).unwrap();
        assert!((apl_loss(&pred, &y).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(apl_loss(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn apl_matches_double_loop() {
        use rand::Rng;
        let mut rng = substream(7, "apl-test");
        let y = Trajectory::new(Array2::from_shape_fn((12, 4), |_| rng.gen_range(-2.0..2.0)))
            .unwrap();
        let pred = Trajectory::new(Array2::from_shape_fn((12, 4), |_| rng.gen_range(-2.0..2.0)))
            .unwrap();
        let value = apl_loss(&pred, &y).unwrap();
        let mut oracle = 0.0;
        for t in 0..12 {
            let mut sq = 0.0;
            for d in 0..4 {
                sq += (pred.values()[[t, d]] - y.values()[[t, d]]).powi(2);
            }
            oracle += sq.sqrt();
        }
        oracle /= 12.0;
        assert!((value - oracle).abs() < 1e-12);
    }

    #[test]
    fn gradient_partition_between_stages() {
        let cfg = toy_cfg();
        let params = ModelParams::init(&cfg, 5).unwrap();
        let batch = vec![linear_sample(0.4, -0.2)];
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &params);
        let mut rng = substream(9, "partition-test");
        let loss = build_batch_loss(&mut tape, &bound, &batch, &cfg, 2, &mut rng).unwrap();

        let akl_grads = tape.backward(loss.akl).unwrap();
        let apl_grads = tape.backward(loss.apl).unwrap();
        for (name, var) in &bound.names {
            let akl_norm = akl_grads.of(*var).map_or(0.0, |g| g.iter().map(|v| v * v).sum());
            let apl_norm = apl_grads.of(*var).map_or(0.0, |g| g.iter().map(|v| v * v).sum());
            if ModelParams::is_stage1(name) {
                assert_eq!(apl_norm, 0.0, "point-wise loss leaked into {name}");
            } else {
                assert_eq!(akl_norm, 0.0, "keypoints loss leaked into {name}");
            }
        }
        // Both stages receive some gradient from their own loss.
        let s1_total: f64 = bound
            .names
            .iter()
            .filter(|(n, _)| ModelParams::is_stage1(n))
            .map(|(_, v)| akl_grads.of(*v).map_or(0.0, |g| g.iter().map(|x| x * x).sum()))
            .sum();
        let s2_total: f64 = bound
            .names
            .iter()
            .filter(|(n, _)| !ModelParams::is_stage1(n))
            .map(|(_, v)| apl_grads.of(*v).map_or(0.0, |g| g.iter().map(|x| x * x).sum()))
            .sum();
        assert!(s1_total > 0.0);
        assert!(s2_total > 0.0);
    }

    #[test]
    fn report_totals_add_up() {
        let cfg = toy_cfg();
        let params = ModelParams::init(&cfg, 6).unwrap();
        let batch = vec![linear_sample(0.3, 0.1), linear_sample(-0.2, 0.5)];
        let mut rng = substream(10, "report-test");
        let outcome = combined_step(&batch, &params, &cfg, 2, &mut rng).unwrap();
        assert!(outcome.report.akl >= 0.0);
        assert!(outcome.report.apl >= 0.0);
        assert!(
            (outcome.report.total - outcome.report.akl - outcome.report.apl).abs() < 1e-12
        );
        assert!(outcome.report.argmin_k < 2);
    }

    #[test]
    fn min_over_k_monotone() {
        use rand::Rng;
        let mut rng = substream(11, "monotone-test");
        let y = Trajectory::new(Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0)))
            .unwrap();
        let mut samples: Vec<Trajectory> = Vec::new();
        let mut prev = f64::INFINITY;
        for _ in 0..8 {
            samples.push(
                Trajectory::new(Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0)))
                    .unwrap(),
            );
            let (value, _) = akl_loss(&samples, &y).unwrap();
            assert!(value <= prev);
            prev = value;
        }
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let cfg = toy_cfg();
        let mut params = ModelParams::init(&cfg, 7).unwrap();
        let before = params.clone();
        let dataset = vec![linear_sample(0.2, 0.3), linear_sample(0.5, -0.4)];
        let train = TrainConfig { lr: 0.0, batch_size: 2, epochs: 3, k_train: 2, seed: 1 };
        fit(&dataset, &cfg, &train, &mut params).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn fit_is_deterministic() {
        let cfg = toy_cfg();
        let dataset = vec![linear_sample(0.2, 0.3), linear_sample(0.5, -0.4)];
        let train = TrainConfig { lr: 1e-3, batch_size: 2, epochs: 4, k_train: 2, seed: 21 };
        let mut p1 = ModelParams::init(&cfg, 8).unwrap();
        let log1 = fit(&dataset, &cfg, &train, &mut p1).unwrap();
        let mut p2 = ModelParams::init(&cfg, 8).unwrap();
        let log2 = fit(&dataset, &cfg, &train, &mut p2).unwrap();
        assert_eq!(log1, log2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn fit_rejects_empty_dataset() {
        let cfg = toy_cfg();
        let mut params = ModelParams::init(&cfg, 9).unwrap();
        assert!(fit(&[], &cfg, &TrainConfig::default(), &mut params).is_err());
    }
}
