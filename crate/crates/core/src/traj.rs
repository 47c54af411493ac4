//! Trajectory data model: prediction tasks, windowing, normalization and
//! box/corner splitting.

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An N-step, M-dimensional trajectory. Row `t` holds the M values of frame
/// `t` in dataset-native units (meters or pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    values: Array2<f64>,
}

impl Trajectory {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid("trajectory must have at least one step and one dimension"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory".into()));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("trajectory must have at least one step"));
        }
        let m = rows[0].len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::shape("ragged trajectory rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), m), flat)
            .map_err(|e| Error::shape(e.to_string()))?;
        Self::new(values)
    }

    /// Number of steps N.
    pub fn steps(&self) -> usize {
        self.values.nrows()
    }

    /// Values per frame M.
    pub fn dims(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn row(&self, t: usize) -> Array1<f64> {
        self.values.row(t).to_owned()
    }

    /// Contiguous slice of steps `[start, start+len)`.
    pub fn slice_steps(&self, start: usize, len: usize) -> Trajectory {
        Trajectory {
            values: self.values.slice(s![start..start + len, ..]).to_owned(),
        }
    }
}

/// Built-in prediction types and their frame dimensionality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// 2-dimensional coordinates.
    Co,
    /// Boxes predicted corner-wise by a coordinate model.
    Co2bb,
    /// 4-dimensional 2D boxes (top-left + bottom-right corners).
    Bb,
    /// 6-dimensional 3D boxes (two opposite corners).
    #[serde(rename = "3dbb")]
    Bb3d,
}

impl TaskKind {
    /// Values per frame for this prediction type.
    pub fn dims(self) -> usize {
        match self {
            TaskKind::Co => 2,
            TaskKind::Co2bb => 2,
            TaskKind::Bb => 4,
            TaskKind::Bb3d => 6,
        }
    }

    /// Points per frame (1 for coordinates, 2 for boxes).
    pub fn points_per_frame(self) -> usize {
        match self {
            TaskKind::Co => 1,
            TaskKind::Co2bb | TaskKind::Bb | TaskKind::Bb3d => 2,
        }
    }

    pub fn is_box(self) -> bool {
        self.points_per_frame() == 2
    }

    /// Frame dimensionality of the underlying dataset (co2bb consumes boxes).
    pub fn data_dims(self) -> usize {
        match self {
            TaskKind::Co => 2,
            TaskKind::Co2bb => 4,
            TaskKind::Bb => 4,
            TaskKind::Bb3d => 6,
        }
    }
}

/// Observation/prediction horizon configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionTask {
    pub kind: TaskKind,
    /// Observed steps.
    pub t_h: usize,
    /// Predicted steps.
    pub t_f: usize,
    /// Raw-frame stride used when resampling annotation files.
    pub frame_interval: i64,
}

impl PredictionTask {
    pub fn new(kind: TaskKind, t_h: usize, t_f: usize, frame_interval: i64) -> Result<Self> {
        if t_h < 2 {
            return Err(Error::invalid(format!("t_h must be >= 2, got {t_h}")));
        }
        if t_f < 1 {
            return Err(Error::invalid("t_f must be >= 1"));
        }
        if frame_interval < 1 {
            return Err(Error::invalid("frame_interval must be >= 1"));
        }
        Ok(Self { kind, t_h, t_f, frame_interval })
    }

    /// Dimensionality of the trajectories the model consumes.
    pub fn model_dims(&self) -> usize {
        self.kind.dims()
    }

    pub fn total_steps(&self) -> usize {
        self.t_h + self.t_f
    }
}

/// Future step indices supervised by the coarse stage. Times are absolute
/// step indices in `(t_h, t_h + t_f]`, strictly increasing, ending at the
/// prediction horizon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeypointSchedule {
    pub times: Vec<usize>,
}

impl KeypointSchedule {
    pub fn new(times: Vec<usize>, t_h: usize, t_f: usize) -> Result<Self> {
        if times.is_empty() || times.len() > t_f {
            return Err(Error::invalid(format!(
                "keypoint count must be in [1, {t_f}], got {}",
                times.len()
            )));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("keypoint times must be strictly increasing"));
        }
        if times[0] <= t_h || *times.last().unwrap() != t_h + t_f {
            return Err(Error::invalid(format!(
                "keypoint times must lie in ({t_h}, {}] and end at {}",
                t_h + t_f,
                t_h + t_f
            )));
        }
        Ok(Self { times })
    }

    /// Equally spaced keypoints over the prediction period:
    /// `t_h + i * t_f / n_key` for `i = 1..=n_key`. Requires `n_key | t_f`.
    pub fn uniform(t_h: usize, t_f: usize, n_key: usize) -> Result<Self> {
        if n_key == 0 || t_f % n_key != 0 {
            return Err(Error::invalid(format!(
                "uniform schedule needs n_key dividing t_f, got n_key={n_key}, t_f={t_f}"
            )));
        }
        let step = t_f / n_key;
        Self::new((1..=n_key).map(|i| t_h + i * step).collect(), t_h, t_f)
    }

    pub fn n_key(&self) -> usize {
        self.times.len()
    }

    /// Row indices into the future segment (row 0 = step t_h + 1).
    pub fn future_rows(&self, t_h: usize) -> Vec<usize> {
        self.times.iter().map(|&t| t - t_h - 1).collect()
    }
}

/// Where the normalization anchor comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    First,
    /// Position at the last observed step; predictions start at the origin.
    Last,
}

/// Inverse data for one normalization: `x_norm = (x - anchor) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationState {
    pub anchor: Array1<f64>,
    pub scale: f64,
}

/// Shift `obs` so the anchor row lands on the origin, then rescale.
pub fn normalize(obs: &Trajectory, scale: f64) -> Result<(Trajectory, NormalizationState)> {
    normalize_with(obs, scale, Anchor::Last)
}

pub fn normalize_with(
    obs: &Trajectory,
    scale: f64,
    anchor: Anchor,
) -> Result<(Trajectory, NormalizationState)> {
    if scale <= 0.0 {
        return Err(Error::invalid(format!("scale must be > 0, got {scale}")));
    }
    let row = match anchor {
        Anchor::First => 0,
        Anchor::Last => obs.steps() - 1,
    };
    let anchor_vec = obs.row(row);
    let mut values = obs.values().clone();
    for mut r in values.rows_mut() {
        for (v, a) in r.iter_mut().zip(anchor_vec.iter()) {
            *v = (*v - a) / scale;
        }
    }
    Ok((
        Trajectory { values },
        NormalizationState { anchor: anchor_vec, scale },
    ))
}

/// Apply an existing normalization state to another trajectory (e.g. the
/// future segment of the window whose observation produced the state).
pub fn apply_normalization(traj: &Trajectory, state: &NormalizationState) -> Result<Trajectory> {
    if traj.dims() != state.anchor.len() {
        return Err(Error::shape(format!(
            "trajectory has {} dims but anchor has {}",
            traj.dims(),
            state.anchor.len()
        )));
    }
    let mut values = traj.values().clone();
    for mut r in values.rows_mut() {
        for (v, a) in r.iter_mut().zip(state.anchor.iter()) {
            *v = (*v - a) / state.scale;
        }
    }
    Ok(Trajectory { values })
}

/// Undo [`normalize`]: `x = x_norm * scale + anchor`.
pub fn denormalize(traj: &Trajectory, state: &NormalizationState) -> Result<Trajectory> {
    if traj.dims() != state.anchor.len() {
        return Err(Error::shape(format!(
            "trajectory has {} dims but anchor has {}",
            traj.dims(),
            state.anchor.len()
        )));
    }
    let mut values = traj.values().clone();
    for mut r in values.rows_mut() {
        for (v, a) in r.iter_mut().zip(state.anchor.iter()) {
            *v = *v * state.scale + a;
        }
    }
    Ok(Trajectory { values })
}

/// Cut a track into (observation, future) windows at the given stride.
/// Tracks shorter than one horizon yield no windows.
pub fn window_split(
    track: &Trajectory,
    task: &PredictionTask,
    stride: usize,
) -> Result<Vec<(Trajectory, Trajectory)>> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    let total = task.total_steps();
    if track.steps() < total {
        return Ok(Vec::new());
    }
    let count = (track.steps() - total) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        out.push((
            track.slice_steps(start, task.t_h),
            track.slice_steps(start + task.t_h, task.t_f),
        ));
    }
    Ok(out)
}

/// Split a box trajectory (M = 4 or 6) into its two corner-point streams.
pub fn split_box_to_points(traj: &Trajectory) -> Result<[Trajectory; 2]> {
    let m = traj.dims();
    if m != 4 && m != 6 {
        return Err(Error::invalid(format!("box split requires M in {{4, 6}}, got {m}")));
    }
    let half = m / 2;
    let a = traj.values().slice(s![.., 0..half]).to_owned();
    let b = traj.values().slice(s![.., half..m]).to_owned();
    Ok([Trajectory { values: a }, Trajectory { values: b }])
}

/// Inverse of [`split_box_to_points`].
pub fn merge_points_to_box(a: &Trajectory, b: &Trajectory) -> Result<Trajectory> {
    if a.steps() != b.steps() || a.dims() != b.dims() {
        return Err(Error::shape("corner streams must share shape"));
    }
    let n = a.steps();
    let half = a.dims();
    let mut values = Array2::zeros((n, 2 * half));
    values.slice_mut(s![.., 0..half]).assign(a.values());
    values.slice_mut(s![.., half..2 * half]).assign(b.values());
    Ok(Trajectory { values })
}
