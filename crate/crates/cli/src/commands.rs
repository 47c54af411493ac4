//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use evnet_core::baselines::{lls_fit_predict, zero_vel_predict};
use evnet_core::config::RunConfig;
use evnet_core::data::{load_checkpoint, save_checkpoint};
use evnet_core::metrics::{best_of_k, MetricReport};
use evnet_core::model::{co2bb_predict, evnet_forward, ContextFeature, ModelConfig, ModelParams};
use evnet_core::rng::derive_seed;
use evnet_core::traj::{denormalize, normalize_with, TaskKind, Trajectory};
use evnet_core::train::{fit, TrainSample};
use evnet_core::transforms::energy_profile;
use evnet_core::{Error, Result};

use crate::dataset::{load_clips, role_windows, tail_observations, Role};
use crate::util::{atomic_write, opt_cell, parallel_map, sig6};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Predictor {
    Model,
    Lls,
    ZeroVel,
}

fn agent_seed(root: u64, agent: usize) -> u64 {
    derive_seed(root, "agent", agent as u64)
}

fn model_samples(
    obs: &Trajectory,
    params: &ModelParams,
    cfg: &ModelConfig,
    corner_wise: bool,
    k: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let (obs_n, state) = normalize_with(obs, cfg.normalize.scale, cfg.normalize.anchor)?;
    let ctx = ContextFeature::zero(cfg.ctx_width);
    let set = if corner_wise {
        co2bb_predict(&obs_n, &ctx, params, cfg, k, seed)?
    } else {
        evnet_forward(&obs_n, &ctx, params, cfg, k, seed)?
    };
    set.samples.iter().map(|s| denormalize(s, &state)).collect()
}

/// Checkpoint task must match the run task; corner-wise prediction instead
/// requires a coordinate checkpoint under a box run.
fn check_task_compat(run: &RunConfig, ckpt: &ModelConfig) -> Result<bool> {
    let task = run.prediction_task()?;
    if run.task.kind == TaskKind::Co2bb {
        if ckpt.task.kind != TaskKind::Co {
            return Err(Error::Config(
                "corner-wise prediction needs a coordinate-model checkpoint".into(),
            ));
        }
        if ckpt.task.t_h != task.t_h || ckpt.task.t_f != task.t_f {
            return Err(Error::Config("checkpoint horizons do not match the run task".into()));
        }
        return Ok(true);
    }
    if ckpt.task.kind != task.kind || ckpt.task.t_h != task.t_h || ckpt.task.t_f != task.t_f {
        return Err(Error::Config(format!(
            "checkpoint task {:?} ({}+{}) does not match run task {:?} ({}+{})",
            ckpt.task.kind, ckpt.task.t_h, ckpt.task.t_f, task.kind, task.t_h, task.t_f
        )));
    }
    Ok(false)
}

pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config();
    let clips = load_clips(cfg, None)?;
    let dataset: Vec<TrainSample> = role_windows(cfg, &clips, Role::Train)?
        .into_iter()
        .map(|(obs, future)| TrainSample { obs, future })
        .collect();

    let mut params = ModelParams::init(&model_cfg, train_cfg.seed)?;
    let log = fit(&dataset, &model_cfg, &train_cfg, &mut params)?;

    let mut csv = String::from("epoch,akl,apl,total\n");
    for row in &log {
        csv.push_str(&format!("{},{},{},{}\n", row.epoch, row.akl, row.apl, row.total));
    }
    atomic_write(&out_dir.join("epochs.csv"), &csv)?;
    std::fs::create_dir_all(out_dir)?;
    save_checkpoint(&params, &model_cfg, &out_dir.join("checkpoint.evn"))?;
    atomic_write(&out_dir.join("run_config.toml"), &cfg.to_toml())?;

    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        println!(
            "trained {} epochs on {} windows: total loss {} -> {}",
            log.len(),
            dataset.len(),
            sig6(first.total),
            sig6(last.total)
        );
    }
    Ok(())
}

pub fn cmd_eval(
    cfg: &RunConfig,
    out_dir: &Path,
    checkpoint: Option<&Path>,
    predictor: Predictor,
    k_override: Option<usize>,
    data_override: Option<&Path>,
) -> Result<()> {
    let task = cfg.prediction_task()?;
    let clips = load_clips(cfg, data_override)?;
    let windows = role_windows(cfg, &clips, Role::Test)?;
    let k = k_override.unwrap_or(cfg.metrics.k);
    let seed = cfg.train.seed;

    let loaded = match predictor {
        Predictor::Model => {
            let path = checkpoint
                .ok_or_else(|| Error::Config("--checkpoint is required with the model predictor".into()))?;
            let (params, ckpt_cfg) = load_checkpoint(path)?;
            let corner_wise = check_task_compat(cfg, &ckpt_cfg)?;
            Some((params, ckpt_cfg, corner_wise))
        }
        _ => None,
    };

    let reports: Vec<Result<MetricReport>> = parallel_map(&windows, |i, (obs, fut)| {
        let samples: Vec<Trajectory> = match predictor {
            Predictor::Lls => vec![lls_fit_predict(obs, task.t_f)?],
            Predictor::ZeroVel => vec![zero_vel_predict(obs, task.t_f)],
            Predictor::Model => {
                let (params, ckpt_cfg, corner_wise) = loaded.as_ref().expect("loaded above");
                model_samples(obs, params, ckpt_cfg, *corner_wise, k, agent_seed(seed, i))?
            }
        };
        best_of_k(&samples, fut, task.kind, cfg.metrics.iou_selection)
    });
    let reports: Vec<MetricReport> = reports.into_iter().collect::<Result<_>>()?;

    let mut csv = String::from("agent_id,ade,fde,cade,cfde,aiou,fiou,k_selected\n");
    for (i, r) in reports.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            i,
            sig6(r.ade),
            sig6(r.fde),
            opt_cell(r.cade),
            opt_cell(r.cfde),
            opt_cell(r.aiou),
            opt_cell(r.fiou),
            r.k_selected
        ));
    }
    atomic_write(&out_dir.join("per_agent.csv"), &csv)?;

    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
    let mut agg: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    agg.insert("ade".into(), sig6(mean(&|r| r.ade)).into());
    agg.insert("fde".into(), sig6(mean(&|r| r.fde)).into());
    if task.kind.is_box() {
        agg.insert("cade".into(), sig6(mean(&|r| r.cade.unwrap_or(0.0))).into());
        agg.insert("cfde".into(), sig6(mean(&|r| r.cfde.unwrap_or(0.0))).into());
        agg.insert("aiou".into(), sig6(mean(&|r| r.aiou.unwrap_or(0.0))).into());
        agg.insert("fiou".into(), sig6(mean(&|r| r.fiou.unwrap_or(0.0))).into());
    }
    agg.insert("n_agents".into(), (reports.len() as u64).into());
    let json = serde_json::to_string_pretty(&agg).expect("aggregate serializes");
    atomic_write(&out_dir.join("aggregate.json"), &json)?;
    println!("{json}");
    Ok(())
}

pub fn cmd_predict(
    cfg: &RunConfig,
    out_dir: &Path,
    checkpoint: &Path,
    input: &Path,
    k_override: Option<usize>,
) -> Result<()> {
    let task = cfg.prediction_task()?;
    let (params, ckpt_cfg) = load_checkpoint(checkpoint)?;
    let corner_wise = check_task_compat(cfg, &ckpt_cfg)?;
    let clips = load_clips(cfg, Some(input))?;
    let observations = tail_observations(&clips, &task);
    if observations.is_empty() {
        return Err(Error::invalid("input file holds no track of observation length"));
    }
    let k = k_override.unwrap_or(cfg.metrics.k);
    let seed = cfg.train.seed;

    let all: Vec<Result<Vec<Trajectory>>> = parallel_map(&observations, |i, obs| {
        model_samples(obs, &params, &ckpt_cfg, corner_wise, k, agent_seed(seed, i))
    });

    let dims = task.kind.data_dims();
    let mut csv = String::from("agent_id,k,t");
    for d in 1..=dims {
        csv.push_str(&format!(",v{d}"));
    }
    csv.push('\n');
    for (agent, samples) in all.into_iter().enumerate() {
        for (ki, sample) in samples?.iter().enumerate() {
            for t in 0..sample.steps() {
                csv.push_str(&format!("{agent},{ki},{}", t + 1));
                for d in 0..dims {
                    csv.push_str(&format!(",{}", sample.values()[[t, d]]));
                }
                csv.push('\n');
            }
        }
    }
    atomic_write(&out_dir.join("predictions.csv"), &csv)?;
    println!("wrote predictions for {} agents x {k} samples", observations.len());
    Ok(())
}

pub fn cmd_energy(cfg: &RunConfig, out_dir: &Path, data_override: Option<&Path>) -> Result<()> {
    let clips = load_clips(cfg, data_override)?;
    let windows = role_windows(cfg, &clips, Role::Test)?;
    let t_h = cfg.prediction_task()?.t_h;
    let mut time = vec![0.0; t_h];
    let mut freq = vec![0.0; t_h];
    let mut count = 0usize;
    for (obs, _) in &windows {
        let profile = energy_profile(obs)?;
        for (acc, v) in time.iter_mut().zip(&profile.time_fractions) {
            *acc += v;
        }
        for (acc, v) in freq.iter_mut().zip(&profile.freq_fractions) {
            *acc += v;
        }
        count += 1;
    }
    let mut csv = String::from("index,time_fraction,freq_fraction\n");
    for i in 0..t_h {
        csv.push_str(&format!(
            "{i},{},{}\n",
            sig6(time[i] / count as f64),
            sig6(freq[i] / count as f64)
        ));
    }
    atomic_write(&out_dir.join("energy.csv"), &csv)?;
    println!("energy profile over {count} windows written");
    Ok(())
}

pub fn cmd_baseline(
    cfg: &RunConfig,
    out_dir: &Path,
    predictor: Predictor,
    data_override: Option<&Path>,
) -> Result<()> {
    if predictor == Predictor::Model {
        return Err(Error::Config("baseline expects --predictor lls or zero-vel".into()));
    }
    let task = cfg.prediction_task()?;
    let clips = load_clips(cfg, data_override)?;
    let observations = tail_observations(&clips, &task);
    if observations.is_empty() {
        return Err(Error::invalid("dataset holds no track of observation length"));
    }
    let dims = task.kind.data_dims();
    let mut csv = String::from("agent_id,k,t");
    for d in 1..=dims {
        csv.push_str(&format!(",v{d}"));
    }
    csv.push('\n');
    for (agent, obs) in observations.iter().enumerate() {
        let pred = match predictor {
            Predictor::Lls => lls_fit_predict(obs, task.t_f)?,
            Predictor::ZeroVel => zero_vel_predict(obs, task.t_f),
            Predictor::Model => unreachable!(),
        };
        for t in 0..pred.steps() {
            csv.push_str(&format!("{agent},0,{}", t + 1));
            for d in 0..dims {
                csv.push_str(&format!(",{}", pred.values()[[t, d]]));
            }
            csv.push('\n');
        }
    }
    let name = match predictor {
        Predictor::Lls => "baseline_lls.csv",
        Predictor::ZeroVel => "baseline_zero_vel.csv",
        Predictor::Model => unreachable!(),
    };
    atomic_write(&out_dir.join(name), &csv)?;
    println!("baseline predictions for {} agents written", observations.len());
    Ok(())
}

pub fn out_dir(cfg: &RunConfig, cli_out: Option<&PathBuf>) -> PathBuf {
    cli_out.cloned().unwrap_or_else(|| PathBuf::from(&cfg.output.dir))
}
