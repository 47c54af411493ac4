//! Dataset assembly from a run configuration: annotation files or synthetic
//! generators, clip-level splits, and windowing.

use std::path::{Path, PathBuf};

use evnet_core::config::RunConfig;
use evnet_core::data::{load_annotations, make_splits, synth_generate, SplitMode};
use evnet_core::traj::{window_split, PredictionTask, Trajectory};
use evnet_core::{Error, Result};

pub struct Clip {
    pub name: String,
    pub tracks: Vec<Trajectory>,
}

/// All clips named by the config (or the `--data` override file, or the
/// synthetic generator when no files are configured).
pub fn load_clips(cfg: &RunConfig, override_path: Option<&Path>) -> Result<Vec<Clip>> {
    let task = cfg.prediction_task()?;
    if let Some(path) = override_path {
        return Ok(vec![load_clip(path, &task)?]);
    }
    if cfg.data.files.is_empty() {
        let tracks =
            synth_generate(cfg.data.synthetic, cfg.data.synthetic_count, &task, cfg.train.seed)?;
        return Ok(vec![Clip { name: "synthetic".into(), tracks }]);
    }
    cfg.data
        .files
        .iter()
        .map(|f| load_clip(&PathBuf::from(f), &task))
        .collect()
}

fn load_clip(path: &Path, task: &PredictionTask) -> Result<Clip> {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("clip")
        .to_string();
    let tracks = load_annotations(path, task)?;
    Ok(Clip { name, tracks })
}

pub enum Role {
    Train,
    Test,
}

/// Windows of the clips assigned to `role` by the configured split. Without
/// a split protocol every clip serves both roles.
pub fn role_windows(
    cfg: &RunConfig,
    clips: &[Clip],
    role: Role,
) -> Result<Vec<(Trajectory, Trajectory)>> {
    let task = cfg.prediction_task()?;
    let names: Vec<String> = clips.iter().map(|c| c.name.clone()).collect();
    let selected: Vec<&Clip> = match (&cfg.data.leave_out, &cfg.data.ratios) {
        (Some(name), None) => {
            let assignment = make_splits(&names, &SplitMode::LeaveOut { name: name.clone() })?;
            pick(clips, &assignment.train, &assignment.test, role)
        }
        (None, Some([train, val, test])) => {
            let assignment = make_splits(
                &names,
                &SplitMode::Ratio {
                    train: *train,
                    val: *val,
                    test: *test,
                    seed: cfg.data.split_seed,
                },
            )?;
            pick(clips, &assignment.train, &assignment.test, role)
        }
        _ => clips.iter().collect(),
    };
    let mut windows = Vec::new();
    for clip in selected {
        for track in &clip.tracks {
            windows.extend(window_split(track, &task, cfg.data.stride)?);
        }
    }
    if windows.is_empty() {
        return Err(Error::invalid("dataset produced no windows"));
    }
    Ok(windows)
}

fn pick<'a>(clips: &'a [Clip], train: &[String], test: &[String], role: Role) -> Vec<&'a Clip> {
    let wanted = match role {
        Role::Train => train,
        Role::Test => test,
    };
    clips.iter().filter(|c| wanted.contains(&c.name)).collect()
}

/// One observation per track: the trailing `t_h` steps. Tracks shorter than
/// the observation horizon are skipped.
pub fn tail_observations(clips: &[Clip], task: &PredictionTask) -> Vec<Trajectory> {
    let mut out = Vec::new();
    for clip in clips {
        for track in &clip.tracks {
            if track.steps() >= task.t_h {
                out.push(track.slice_steps(track.steps() - task.t_h, task.t_h));
            }
        }
    }
    out
}
