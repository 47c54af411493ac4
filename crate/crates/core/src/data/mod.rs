//! Annotation-file ingestion, dataset splits, and synthetic generators.

pub mod checkpoint;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::traj::{window_split, PredictionTask, TaskKind, Trajectory};

pub use checkpoint::{load_checkpoint, save_checkpoint};

/// One annotation line: `frame_id agent_id v1 .. vM`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub frame_id: i64,
    pub agent_id: i64,
    pub values: Vec<f64>,
}

/// Parse a delimiter-separated annotation file. The delimiter is detected
/// per line among comma, tab and whitespace; `#` starts a comment line.
pub fn parse_annotations(text: &str, dims: usize) -> Result<Vec<AnnotationRecord>> {
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if trimmed.contains(',') {
            trimmed.split(',').map(str::trim).collect()
        } else if trimmed.contains('\t') {
            trimmed.split('\t').map(str::trim).collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        if fields.len() != 2 + dims {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} columns, found {}", 2 + dims, fields.len()),
            });
        }
        let frame_id: i64 = fields[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad frame id {:?}", fields[0]),
        })?;
        let agent_id: i64 = fields[1].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad agent id {:?}", fields[1]),
        })?;
        let mut values = Vec::with_capacity(dims);
        for f in &fields[2..] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad value {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { line: line_no, msg: "non-finite value".into() });
            }
            values.push(v);
        }
        if !seen.insert((frame_id, agent_id)) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duplicate (frame {frame_id}, agent {agent_id})"),
            });
        }
        records.push(AnnotationRecord { frame_id, agent_id, values });
    }
    Ok(records)
}

/// Group records into per-agent tracks: sorted by frame, resampled at the
/// task's frame interval (anchored at each agent's first frame), and split
/// into separate contiguous tracks wherever a retained frame is missing.
pub fn tracks_from_records(
    records: Vec<AnnotationRecord>,
    task: &PredictionTask,
) -> Result<Vec<Trajectory>> {
    let mut by_agent: BTreeMap<i64, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        by_agent.entry(r.agent_id).or_default().push(r);
    }
    let interval = task.frame_interval;
    let mut tracks = Vec::new();
    for (_, mut recs) in by_agent {
        recs.sort_by_key(|r| r.frame_id);
        let first = recs[0].frame_id;
        let mut current: Vec<Vec<f64>> = Vec::new();
        let mut prev_frame: Option<i64> = None;
        for r in recs {
            if (r.frame_id - first) % interval != 0 {
                continue;
            }
            if let Some(prev) = prev_frame {
                if r.frame_id != prev + interval {
                    if !current.is_empty() {
                        tracks.push(Trajectory::from_rows(&current)?);
                    }
                    current = Vec::new();
                }
            }
            current.push(r.values);
            prev_frame = Some(r.frame_id);
        }
        if !current.is_empty() {
            tracks.push(Trajectory::from_rows(&current)?);
        }
    }
    Ok(tracks)
}

/// Load per-agent tracks from an annotation file.
pub fn load_annotations(path: &Path, task: &PredictionTask) -> Result<Vec<Trajectory>> {
    let text = std::fs::read_to_string(path)?;
    let records = parse_annotations(&text, task.kind.data_dims())?;
    tracks_from_records(records, task)
}

/// Split protocol over named clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// The named clip is the test set; every other clip trains.
    LeaveOut { name: String },
    /// Clip-level assignment by fractions with a seeded shuffle. Counts are
    /// floored, the remainder goes to train.
    Ratio { train: f64, val: f64, test: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Assign whole clips to train/val/test. No clip lands in two splits, so no
/// window can leak between them.
pub fn make_splits(clips: &[String], mode: &SplitMode) -> Result<SplitAssignment> {
    match mode {
        SplitMode::LeaveOut { name } => {
            if !clips.iter().any(|c| c == name) {
                return Err(Error::invalid(format!("unknown subset {name:?}")));
            }
            Ok(SplitAssignment {
                train: clips.iter().filter(|c| *c != name).cloned().collect(),
                val: Vec::new(),
                test: vec![name.clone()],
            })
        }
        SplitMode::Ratio { train, val, test, seed } => {
            let total = train + val + test;
            if !(total.is_finite() && (total - 1.0).abs() < 1e-9) {
                return Err(Error::invalid("split fractions must sum to 1"));
            }
            let mut order: Vec<String> = clips.to_vec();
            order.shuffle(&mut substream(*seed, "split"));
            let n = clips.len();
            let n_val = (val * n as f64).floor() as usize;
            let n_test = (test * n as f64).floor() as usize;
            let n_train = n - n_val - n_test;
            let train_set = order[..n_train].to_vec();
            let val_set = order[n_train..n_train + n_val].to_vec();
            let test_set = order[n_train + n_val..].to_vec();
            Ok(SplitAssignment { train: train_set, val: val_set, test: test_set })
        }
    }
}

/// Synthetic track families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Linear,
    Circular,
    RandomWalk,
    BoxTurn,
}

/// Generate `count` synthetic tracks of `task.total_steps()` steps each,
/// deterministic in the seed.
pub fn synth_generate(
    kind: SynthKind,
    count: usize,
    task: &PredictionTask,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return Err(Error::invalid("count must be >= 1"));
    }
    let m = task.kind.data_dims();
    match kind {
        SynthKind::BoxTurn if m != 4 && m != 6 => {
            return Err(Error::invalid("box_turn needs a box task (M = 4 or 6)"));
        }
        SynthKind::Linear | SynthKind::Circular if m % 2 != 0 => {
            return Err(Error::invalid("planar generators need an even M"));
        }
        _ => {}
    }
    let n = task.total_steps();
    let mut rng = substream(seed, "synth");
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let values = match kind {
            SynthKind::Linear => {
                let mut vals = ndarray::Array2::zeros((n, m));
                for d in 0..m {
                    let start = rng.gen_range(-5.0..5.0);
                    let vel = rng.gen_range(-1.0..1.0);
                    for t in 0..n {
                        vals[[t, d]] = start + vel * t as f64;
                    }
                }
                vals
            }
            SynthKind::Circular => {
                let mut vals = ndarray::Array2::zeros((n, m));
                // One arc per 2D plane of the frame vector.
                for pair in 0..m / 2 {
                    let cx = rng.gen_range(-5.0..5.0);
                    let cy = rng.gen_range(-5.0..5.0);
                    let radius = rng.gen_range(1.0..4.0);
                    let omega = rng.gen_range(0.1..0.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let phase = rng.gen_range(0.0..2.0 * PI);
                    for t in 0..n {
                        let a = phase + omega * t as f64;
                        vals[[t, 2 * pair]] = cx + radius * a.cos();
                        vals[[t, 2 * pair + 1]] = cy + radius * a.sin();
                    }
                }
                vals
            }
            SynthKind::RandomWalk => {
                let mut vals = ndarray::Array2::zeros((n, m));
                for d in 0..m {
                    let mut pos = rng.gen_range(-2.0..2.0);
                    for t in 0..n {
                        vals[[t, d]] = pos;
                        pos += rng.sample::<f64, _>(StandardNormal);
                    }
                }
                vals
            }
            SynthKind::BoxTurn => {
                // Center follows a turn; the half-extent shrinks through
                // zero and flips sign, so corner ordering inverts mid-track.
                let half = m / 2;
                let mut vals = ndarray::Array2::zeros((n, m));
                let speed = rng.gen_range(0.5..1.5);
                let turn = rng.gen_range(0.05..0.2);
                let heading0 = rng.gen_range(0.0..2.0 * PI);
                let e0 = rng.gen_range(0.5..1.5);
                let mut cx = rng.gen_range(-5.0..5.0);
                let mut cy = rng.gen_range(-5.0..5.0);
                for t in 0..n {
                    let heading = heading0 + turn * t as f64;
                    let frac = t as f64 / (n - 1).max(1) as f64;
                    let extent = e0 * (1.0 - 2.0 * frac);
                    for d in 0..half {
                        let center = match d {
                            0 => cx,
                            1 => cy,
                            _ => 0.5 * (cx + cy),
                        };
                        vals[[t, d]] = center - extent;
                        vals[[t, half + d]] = center + extent;
                    }
                    cx += speed * heading.cos();
                    cy += speed * heading.sin();
                }
                vals
            }
        };
        out.push(Trajectory::new(values)?);
    }
    Ok(out)
}

/// Windows of every track, flattened.
pub fn windows_of(
    tracks: &[Trajectory],
    task: &PredictionTask,
    stride: usize,
) -> Result<Vec<(Trajectory, Trajectory)>> {
    let mut out = Vec::new();
    for t in tracks {
        out.extend(window_split(t, task, stride)?);
    }
    Ok(out)
}

/// Built-in prediction tasks keyed by the synthetic generator's needs.
pub fn synth_task(kind: TaskKind) -> PredictionTask {
    crate::model::task_preset(kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn co_task() -> PredictionTask {
        PredictionTask::new(TaskKind::Co, 8, 12, 1).unwrap()
    }

    #[test]
    fn parses_all_delimiters() {
        for text in [
            "0 1 1.5 2.5\n1 1 2.5 3.5\n",
            "0,1,1.5,2.5\n1,1,2.5,3.5\n",
            "0\t1\t1.5\t2.5\n1\t1\t2.5\t3.5\n",
        ] {
            let recs = parse_annotations(text, 2).unwrap();
            assert_eq!(recs.len(), 2);
            assert_eq!(recs[0].values, vec![1.5, 2.5]);
        }
    }

    #[test]
    fn skips_comments_and_reports_line_numbers() {
        let text = "# header\n0 1 1.0 2.0\nbroken line\n";
        let err = parse_annotations(text, 2).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_frame_agent() {
        let text = "0 1 1.0 2.0\n0 1 3.0 4.0\n";
        assert!(parse_annotations(text, 2).is_err());
    }

    #[test]
    fn rejects_column_mismatch() {
        assert!(parse_annotations("0 1 1.0\n", 2).is_err());
    }

    #[test]
    fn groups_two_agents() {
        let mut text = String::new();
        for f in 0..20 {
            text.push_str(&format!("{f} 1 {0} {0}\n{f} 2 {1} {1}\n", f as f64, f as f64 * 2.0));
        }
        let tracks =
            tracks_from_records(parse_annotations(&text, 2).unwrap(), &co_task()).unwrap();
        assert_eq!(tracks.len(), 2);
        assert!(tracks.iter().all(|t| t.steps() == 20));
    }

    #[test]
    fn gap_splits_track() {
        let mut text = String::new();
        for f in 1..=10 {
            text.push_str(&format!("{f} 7 {0} {0}\n", f as f64));
        }
        for f in 20..30 {
            text.push_str(&format!("{f} 7 {0} {0}\n", f as f64));
        }
        let tracks =
            tracks_from_records(parse_annotations(&text, 2).unwrap(), &co_task()).unwrap();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].steps(), 10);
        assert_eq!(tracks[1].steps(), 10);
    }

    #[test]
    fn interval_resampling_keeps_every_sixth_frame() {
        let task = PredictionTask::new(TaskKind::Co, 8, 12, 6).unwrap();
        let mut text = String::new();
        for f in 0..120 {
            text.push_str(&format!("{f} 1 {0} {0}\n", f as f64));
        }
        let tracks = tracks_from_records(parse_annotations(&text, 2).unwrap(), &task).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].steps(), 20);
        assert_eq!(tracks[0].values()[[1, 0]], 6.0);
        assert_eq!(tracks[0].values()[[2, 0]], 12.0);
    }

    #[test]
    fn ingestion_is_order_insensitive() {
        let fwd = "0 1 0.0 0.0\n1 1 1.0 1.0\n2 1 2.0 2.0\n";
        let rev = "2 1 2.0 2.0\n0 1 0.0 0.0\n1 1 1.0 1.0\n";
        let a = tracks_from_records(parse_annotations(fwd, 2).unwrap(), &co_task()).unwrap();
        let b = tracks_from_records(parse_annotations(rev, 2).unwrap(), &co_task()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn leave_out_split() {
        let clips: Vec<String> =
            ["eth", "hotel", "univ", "zara1", "zara2"].iter().map(|s| s.to_string()).collect();
        let split = make_splits(&clips, &SplitMode::LeaveOut { name: "zara1".into() }).unwrap();
        assert_eq!(split.test, vec!["zara1".to_string()]);
        assert_eq!(split.train.len(), 4);
        assert!(!split.train.contains(&"zara1".to_string()));
        assert!(make_splits(&clips, &SplitMode::LeaveOut { name: "nope".into() }).is_err());
    }

    #[test]
    fn ratio_split_counts_and_determinism() {
        let clips: Vec<String> = (0..10).map(|i| format!("clip{i}")).collect();
        let mode = SplitMode::Ratio { train: 0.6, val: 0.2, test: 0.2, seed: 3 };
        let a = make_splits(&clips, &mode).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (6, 2, 2));
        let b = make_splits(&clips, &mode).unwrap();
        assert_eq!(a, b);
        // Disjoint and total.
        let mut all: Vec<&String> = a.train.iter().chain(&a.val).chain(&a.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn linear_tracks_are_affine() {
        let tracks = synth_generate(SynthKind::Linear, 4, &co_task(), 11).unwrap();
        for t in &tracks {
            assert_eq!(t.steps(), 20);
            // Second differences vanish on affine tracks.
            for d in 0..t.dims() {
                for i in 2..t.steps() {
                    let dd = t.values()[[i, d]] - 2.0 * t.values()[[i - 1, d]]
                        + t.values()[[i - 2, d]];
                    assert!(dd.abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn random_walk_unit_variance() {
        // 10^4 increments; sample variance of unit Gaussian steps is ~1.
        let task = PredictionTask::new(TaskKind::Co, 5000, 5001, 1).unwrap();
        let tracks = synth_generate(SynthKind::RandomWalk, 1, &task, 13).unwrap();
        let t = &tracks[0];
        let mut increments = Vec::new();
        for i in 1..t.steps() {
            increments.push(t.values()[[i, 0]] - t.values()[[i - 1, 0]]);
        }
        let mean: f64 = increments.iter().sum::<f64>() / increments.len() as f64;
        let var: f64 =
            increments.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / increments.len() as f64;
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn box_turn_inverts_corner_order() {
        let task = PredictionTask::new(TaskKind::Bb, 8, 12, 1).unwrap();
        let tracks = synth_generate(SynthKind::BoxTurn, 3, &task, 17).unwrap();
        for t in &tracks {
            let first = t.values()[[0, 2]] - t.values()[[0, 0]];
            let last = t.values()[[t.steps() - 1, 2]] - t.values()[[t.steps() - 1, 0]];
            assert!(first * last < 0.0, "extent should flip sign");
        }
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let a = synth_generate(SynthKind::Circular, 3, &co_task(), 5).unwrap();
        let b = synth_generate(SynthKind::Circular, 3, &co_task(), 5).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(SynthKind::Circular, 3, &co_task(), 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn box_turn_rejects_co_task() {
        assert!(synth_generate(SynthKind::BoxTurn, 1, &co_task(), 1).is_err());
    }
}
