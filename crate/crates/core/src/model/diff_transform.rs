//! Inverse transforms as differentiable tape ops.
//!
//! Forward values are computed by the reference transform implementations so
//! network outputs and offline reconstructions agree bit for bit; the
//! backward closures supply the analytic Jacobian-vector products.

use std::f64::consts::PI;

use crate::nn::tape::{Mat, Tape, Var};
use crate::transforms::TransformKind;

/// Inverse transform of a spectrum variable, producing the trajectory.
pub fn inverse_transform_op(tape: &mut Tape, spec: Var, kind: TransformKind) -> Var {
    match kind {
        TransformKind::Identity => spec,
        TransformKind::Haar => haar_inverse_op(tape, spec),
        TransformKind::Dft => dft_inverse_op(tape, spec),
    }
}

fn haar_inverse_op(tape: &mut Tape, spec: Var) -> Var {
    let value = TransformKind::Haar
        .inverse_values(tape.value(spec))
        .expect("even spectrum dims");
    let half = tape.shape(spec).0;
    let m = tape.shape(spec).1 / 2;
    tape.custom_unary(spec, value, move |g: &Mat| {
        // Transpose of the linear inverse map.
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        let mut out = Mat::zeros((half, 2 * m));
        for d in 0..m {
            for k in 0..half {
                out[[k, d]] = (g[[2 * k, d]] + g[[2 * k + 1, d]]) * inv_sqrt2;
                out[[k, m + d]] = (g[[2 * k, d]] - g[[2 * k + 1, d]]) * inv_sqrt2;
            }
        }
        out
    })
}

fn dft_inverse_op(tape: &mut Tape, spec: Var) -> Var {
    let spec_value = tape.value(spec).clone();
    let value = TransformKind::Dft
        .inverse_values(&spec_value)
        .expect("even spectrum dims");
    let n = spec_value.nrows();
    let m = spec_value.ncols() / 2;
    tape.custom_unary(spec, value, move |g: &Mat| {
        // x(t) = sum_k amp_k cos(phase_k + 2 pi k t / n) / sqrt(n)
        let norm = 1.0 / (n as f64).sqrt();
        let mut out = Mat::zeros((n, 2 * m));
        for d in 0..m {
            for k in 0..n {
                let amp = spec_value[[k, d]];
                let phase = spec_value[[k, m + d]];
                let mut d_amp = 0.0;
                let mut d_phase = 0.0;
                for t in 0..n {
                    let angle = phase + 2.0 * PI * (k as f64) * (t as f64) / (n as f64);
                    let (sin, cos) = angle.sin_cos();
                    d_amp += g[[t, d]] * cos;
                    d_phase -= g[[t, d]] * amp * sin;
                }
                out[[k, d]] = d_amp * norm;
                out[[k, m + d]] = d_phase * norm;
            }
        }
        out
    })
}

/// Piecewise-linear row resampling as a constant matrix product: source rows
/// sit at uniform parameters, endpoints pinned, a single row broadcasts.
pub fn interp_rows_op(tape: &mut Tape, x: Var, n_out: usize) -> Var {
    let n_in = tape.shape(x).0;
    let w = tape.constant(interp_matrix(n_in, n_out));
    tape.matmul(w, x)
}

/// The resampling matrix used by [`interp_rows_op`].
pub fn interp_matrix(n_in: usize, n_out: usize) -> Mat {
    assert!(n_in >= 1 && n_out >= 1);
    let mut w = Mat::zeros((n_out, n_in));
    if n_in == 1 {
        for j in 0..n_out {
            w[[j, 0]] = 1.0;
        }
        return w;
    }
    if n_out == 1 {
        w[[0, n_in - 1]] = 1.0;
        return w;
    }
    for j in 0..n_out {
        let pos = j as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 2);
        let frac = pos - lo as f64;
        w[[j, lo]] = 1.0 - frac;
        w[[j, lo + 1]] = frac;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use crate::rng::substream;
    use crate::traj::Trajectory;
    use crate::transforms;
    use ndarray::{arr2, Array2};
    use rand::Rng;

    fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = substream(seed, "diff-transform");
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn forward_matches_reference_bit_exact() {
        let traj = Trajectory::new(random_mat(8, 2, 1)).unwrap();
        let spec = transforms::dft_forward(&traj).unwrap();
        let mut tape = Tape::new();
        let sv = tape.leaf(spec.values.clone());
        let out = inverse_transform_op(&mut tape, sv, TransformKind::Dft);
        let reference = TransformKind::Dft.inverse_values(&spec.values).unwrap();
        assert_eq!(tape.value(out), &reference);
    }

    #[test]
    fn dft_inverse_gradients() {
        let spec = random_mat(5, 4, 2);
        let target = random_mat(5, 2, 3);
        let run = |s: &[Mat]| -> (f64, Mat) {
            let mut tape = Tape::new();
            let sv = tape.leaf(s[0].clone());
            let traj = inverse_transform_op(&mut tape, sv, TransformKind::Dft);
            let tv = tape.leaf(target.clone());
            let loss = crate::nn::tape::row_norm_mean(&mut tape, traj, tv);
            let value = tape.value(loss)[[0, 0]];
            let grads = tape.backward(loss).unwrap();
            (value, grads.dense(sv, (5, 4)))
        };
        let theta = vec![spec];
        let (_, analytic) = run(&theta);
        let err = grad_check(&theta, &[analytic], |s| run(s).0, 1e-6);
        assert!(err < 1e-6, "dft inverse grad error {err}");
    }

    #[test]
    fn haar_inverse_gradients() {
        let spec = random_mat(4, 6, 4);
        let target = random_mat(8, 3, 5);
        let run = |s: &[Mat]| -> (f64, Mat) {
            let mut tape = Tape::new();
            let sv = tape.leaf(s[0].clone());
            let traj = inverse_transform_op(&mut tape, sv, TransformKind::Haar);
            let tv = tape.leaf(target.clone());
            let loss = crate::nn::tape::row_norm_mean(&mut tape, traj, tv);
            let value = tape.value(loss)[[0, 0]];
            let grads = tape.backward(loss).unwrap();
            (value, grads.dense(sv, (4, 6)))
        };
        let theta = vec![spec];
        let (_, analytic) = run(&theta);
        let err = grad_check(&theta, &[analytic], |s| run(s).0, 1e-6);
        assert!(err < 1e-6, "haar inverse grad error {err}");
    }

    #[test]
    fn interp_identity_when_sizes_match() {
        let x = random_mat(5, 3, 6);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let out = interp_rows_op(&mut tape, xv, 5);
        assert_eq!(tape.value(out), &x);
    }

    #[test]
    fn interp_midpoint() {
        let mut tape = Tape::new();
        let xv = tape.leaf(arr2(&[[0.0], [2.0]]));
        let out = interp_rows_op(&mut tape, xv, 3);
        assert_eq!(tape.value(out), &arr2(&[[0.0], [1.0], [2.0]]));
    }

    #[test]
    fn interp_broadcasts_single_row() {
        let mut tape = Tape::new();
        let xv = tape.leaf(arr2(&[[5.0, -1.0]]));
        let out = interp_rows_op(&mut tape, xv, 20);
        assert_eq!(tape.shape(out), (20, 2));
        assert!(tape.value(out).rows().into_iter().all(|r| r[0] == 5.0 && r[1] == -1.0));
    }
}
