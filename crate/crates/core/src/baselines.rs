//! Closed-form predictors: per-dimension linear least squares and
//! zero-velocity extrapolation.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::traj::Trajectory;

/// Per-dimension affine fit `x(t) = b + w t` over 1-based step indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub intercepts: Vec<f64>,
    pub slopes: Vec<f64>,
}

/// Fit the observation by least squares per dimension and extrapolate the
/// fitted line over steps `t_h + 1 ..= t_h + t_f`.
pub fn lls_fit_predict(obs: &Trajectory, t_f: usize) -> Result<Trajectory> {
    Ok(lls_fit(obs)?.1.predict(obs.steps(), t_f))
}

/// Normal-equations solution. The design matrix has columns (1, t) with
/// t = 1..=t_h, so the 2x2 system inverts in closed form.
pub fn lls_fit(obs: &Trajectory) -> Result<(usize, LinearFit)> {
    let t_h = obs.steps();
    if t_h < 2 {
        return Err(Error::invalid("least squares needs at least two observed steps"));
    }
    let n = t_h as f64;
    let sum_t: f64 = (1..=t_h).map(|t| t as f64).sum();
    let sum_tt: f64 = (1..=t_h).map(|t| (t * t) as f64).sum();
    // (A^T A) = [[n, sum_t], [sum_t, sum_tt]]
    let det = n * sum_tt - sum_t * sum_t;
    let mut intercepts = Vec::with_capacity(obs.dims());
    let mut slopes = Vec::with_capacity(obs.dims());
    for d in 0..obs.dims() {
        let sum_x: f64 = (0..t_h).map(|t| obs.values()[[t, d]]).sum();
        let sum_tx: f64 = (0..t_h).map(|t| (t + 1) as f64 * obs.values()[[t, d]]).sum();
        intercepts.push((sum_tt * sum_x - sum_t * sum_tx) / det);
        slopes.push((n * sum_tx - sum_t * sum_x) / det);
    }
    Ok((t_h, LinearFit { intercepts, slopes }))
}

impl LinearFit {
    pub fn predict(&self, t_h: usize, t_f: usize) -> Trajectory {
        let m = self.intercepts.len();
        let values = Array2::from_shape_fn((t_f, m), |(i, d)| {
            let t = (t_h + i + 1) as f64;
            self.intercepts[d] + self.slopes[d] * t
        });
        Trajectory::new(values).expect("finite affine prediction")
    }
}

/// Every future frame repeats the last observed frame.
pub fn zero_vel_predict(obs: &Trajectory, t_f: usize) -> Trajectory {
    let last = obs.row(obs.steps() - 1);
    let values = Array2::from_shape_fn((t_f, obs.dims()), |(_, d)| last[d]);
    Trajectory::new(values).expect("finite constant prediction")
}
