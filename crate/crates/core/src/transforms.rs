//! Per-dimension spectral transforms and energy analytics.
//!
//! The DFT uses the unitary convention (1/sqrt(N) in both directions) and the
//! Haar transform a single orthonormal decomposition level, so signal energy
//! is identical in the time and spectral domains.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::traj::Trajectory;

/// Transform selector. `Identity` passes trajectories through unchanged and
/// exists as a testing aid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Dft,
    Haar,
    Identity,
}

impl TransformKind {
    /// Spectrum shape `(points, dims)` for an N-step, M-dim trajectory.
    pub fn shape_map(self, n: usize, m: usize) -> Result<(usize, usize)> {
        match self {
            TransformKind::Dft => Ok((n, 2 * m)),
            TransformKind::Haar => {
                if n % 2 != 0 {
                    return Err(Error::invalid(format!("Haar requires even N, got {n}")));
                }
                Ok((n / 2, 2 * m))
            }
            TransformKind::Identity => Ok((n, m)),
        }
    }

    /// Whether every point count fed through this transform must be even.
    pub fn requires_even(self) -> bool {
        matches!(self, TransformKind::Haar)
    }

    pub fn forward(self, traj: &Trajectory) -> Result<Spectrum> {
        match self {
            TransformKind::Dft => dft_forward(traj),
            TransformKind::Haar => haar_forward(traj),
            TransformKind::Identity => Ok(Spectrum {
                values: traj.values().clone(),
                kind: self,
            }),
        }
    }

    pub fn inverse(self, spec: &Spectrum) -> Result<Trajectory> {
        match self {
            TransformKind::Dft => dft_inverse(spec),
            TransformKind::Haar => haar_inverse(spec),
            TransformKind::Identity => Trajectory::new(spec.values.clone()),
        }
    }

    /// Inverse applied to a raw value matrix (e.g. a network prediction that
    /// need not satisfy forward-spectrum invariants).
    pub fn inverse_values(self, values: &Array2<f64>) -> Result<Array2<f64>> {
        let spec = Spectrum { values: values.clone(), kind: self };
        Ok(self.inverse(&spec)?.into_values())
    }
}

/// A trajectory spectrum. For the DFT, columns `[0, M)` hold per-dimension
/// amplitudes and `[M, 2M)` the matching phases; for Haar, approximation then
/// detail coefficients. Identity spectra simply mirror the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: Array2<f64>,
    pub kind: TransformKind,
}

impl Spectrum {
    pub fn points(&self) -> usize {
        self.values.nrows()
    }

    pub fn dims(&self) -> usize {
        self.values.ncols()
    }

    /// Source-trajectory dimensionality.
    pub fn source_dims(&self) -> usize {
        match self.kind {
            TransformKind::Identity => self.dims(),
            _ => self.dims() / 2,
        }
    }
}

/// Unitary forward DFT per dimension, split into amplitude and phase columns.
/// Phases lie in (-pi, pi]; a bin with exactly zero amplitude gets phase 0.
pub fn dft_forward(traj: &Trajectory) -> Result<Spectrum> {
    let x = traj.values();
    let (n, m) = (x.nrows(), x.ncols());
    let norm = 1.0 / (n as f64).sqrt();
    let mut out = Array2::zeros((n, 2 * m));
    for d in 0..m {
        for k in 0..n {
            let mut re = 0.0;
            let mut im = 0.0;
            for t in 0..n {
                let angle = -2.0 * PI * (k as f64) * (t as f64) / (n as f64);
                let (sin, cos) = angle.sin_cos();
                re += x[[t, d]] * cos;
                im += x[[t, d]] * sin;
            }
            re *= norm;
            im *= norm;
            let amp = re.hypot(im);
            let mut phase = if amp == 0.0 { 0.0 } else { im.atan2(re) };
            if phase <= -PI {
                phase += 2.0 * PI;
            }
            out[[k, d]] = amp;
            out[[k, m + d]] = phase;
        }
    }
    Ok(Spectrum { values: out, kind: TransformKind::Dft })
}

/// Inverse DFT from amplitude/phase columns, discarding the imaginary part.
pub fn dft_inverse(spec: &Spectrum) -> Result<Trajectory> {
    Ok(dft_inverse_with_residue(spec)?.0)
}

/// Like [`dft_inverse`] but also reports the largest imaginary component
/// discarded during reconstruction (nonzero only for spectra that do not
/// come from a real signal).
pub fn dft_inverse_with_residue(spec: &Spectrum) -> Result<(Trajectory, f64)> {
    let (n, m) = split_dims(spec)?;
    let v = &spec.values;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("spectrum".into()));
    }
    let norm = 1.0 / (n as f64).sqrt();
    let mut out = Array2::zeros((n, m));
    let mut residue = 0.0f64;
    for d in 0..m {
        for t in 0..n {
            let mut re = 0.0;
            let mut im = 0.0;
            for k in 0..n {
                let amp = v[[k, d]];
                let phase = v[[k, m + d]];
                let angle = phase + 2.0 * PI * (k as f64) * (t as f64) / (n as f64);
                let (sin, cos) = angle.sin_cos();
                re += amp * cos;
                im += amp * sin;
            }
            out[[t, d]] = re * norm;
            residue = residue.max((im * norm).abs());
        }
    }
    Ok((Trajectory::new(out)?, residue))
}

/// Single-level orthonormal Haar transform per dimension.
pub fn haar_forward(traj: &Trajectory) -> Result<Spectrum> {
    let x = traj.values();
    let (n, m) = (x.nrows(), x.ncols());
    if n % 2 != 0 {
        return Err(Error::invalid(format!("Haar requires an even step count, got {n}")));
    }
    let half = n / 2;
    let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
    let mut out = Array2::zeros((half, 2 * m));
    for d in 0..m {
        for k in 0..half {
            let a = x[[2 * k, d]];
            let b = x[[2 * k + 1, d]];
            out[[k, d]] = (a + b) * inv_sqrt2;
            out[[k, m + d]] = (a - b) * inv_sqrt2;
        }
    }
    Ok(Spectrum { values: out, kind: TransformKind::Haar })
}

/// Inverse of [`haar_forward`].
pub fn haar_inverse(spec: &Spectrum) -> Result<Trajectory> {
    let (n, m) = split_dims(spec)?;
    let v = &spec.values;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("spectrum".into()));
    }
    let half = v.nrows();
    let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
    let mut out = Array2::zeros((n, m));
    for d in 0..m {
        for k in 0..half {
            let approx = v[[k, d]];
            let detail = v[[k, m + d]];
            out[[2 * k, d]] = (approx + detail) * inv_sqrt2;
            out[[2 * k + 1, d]] = (approx - detail) * inv_sqrt2;
        }
    }
    Trajectory::new(out)
}

fn split_dims(spec: &Spectrum) -> Result<(usize, usize)> {
    let cols = spec.values.ncols();
    if cols % 2 != 0 {
        return Err(Error::invalid(format!("spectrum dims must be even, got {cols}")));
    }
    let m = cols / 2;
    let n = match spec.kind {
        TransformKind::Haar => spec.values.nrows() * 2,
        _ => spec.values.nrows(),
    };
    Ok((n, m))
}

/// Per-step and per-frequency energy fractions of an observed trajectory,
/// averaged over dimensions with equal weight.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyProfile {
    pub time_fractions: Vec<f64>,
    pub freq_fractions: Vec<f64>,
    /// Set when the shifted trajectory carries no energy at all; the
    /// fractions are then uniform instead of NaN.
    pub degenerate: bool,
}

/// Shift the trajectory so it starts at the origin, then report the fraction
/// of total energy carried by each step and each DFT frequency bin.
pub fn energy_profile(obs: &Trajectory) -> Result<EnergyProfile> {
    let n = obs.steps();
    let m = obs.dims();
    if n < 2 {
        return Err(Error::invalid("energy profile needs at least two steps"));
    }
    let first = obs.row(0);
    let mut shifted = obs.values().clone();
    for mut r in shifted.rows_mut() {
        for (v, a) in r.iter_mut().zip(first.iter()) {
            *v -= a;
        }
    }
    let shifted = Trajectory::new(shifted)?;
    let spec = dft_forward(&shifted)?;

    let mut time = vec![0.0; n];
    let mut freq = vec![0.0; n];
    let mut live_dims = 0usize;
    for d in 0..m {
        let total: f64 = (0..n).map(|t| shifted.values()[[t, d]].powi(2)).sum();
        if total > 0.0 {
            live_dims += 1;
            for t in 0..n {
                time[t] += shifted.values()[[t, d]].powi(2) / total;
            }
            // Parseval: spectral energy of the shifted dim equals `total`.
            for k in 0..n {
                freq[k] += spec.values[[k, d]].powi(2) / total;
            }
        } else {
            for t in 0..n {
                time[t] += 1.0 / n as f64;
                freq[t] += 1.0 / n as f64;
            }
        }
    }
    for v in time.iter_mut().chain(freq.iter_mut()) {
        *v /= m as f64;
    }
    Ok(EnergyProfile { time_fractions: time, freq_fractions: freq, degenerate: live_dims == 0 })
}

/// Total signal energy in the time domain and under the given transform.
pub fn parseval_check(traj: &Trajectory, kind: TransformKind) -> Result<(f64, f64)> {
    let time: f64 = traj.values().iter().map(|v| v * v).sum();
    let freq = match kind {
        TransformKind::Dft => {
            let spec = dft_forward(traj)?;
            let m = traj.dims();
            spec.values.slice(s![.., 0..m]).iter().map(|v| v * v).sum()
        }
        TransformKind::Haar => {
            let spec = haar_forward(traj)?;
            spec.values.iter().map(|v| v * v).sum()
        }
        TransformKind::Identity => time,
    };
    Ok((time, freq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use num_complex::Complex64;
    use proptest::prelude::*;

    /// Independent direct-summation DFT over complex accumulators. Kept
    /// deliberately separate from the library path it checks.
    fn oracle_dft(signal: &[f64]) -> Vec<Complex64> {
        let n = signal.len();
        let norm = 1.0 / (n as f64).sqrt();
        (0..n)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (t, &v) in signal.iter().enumerate() {
                    let theta = -2.0 * PI * (k * t) as f64 / n as f64;
                    acc += Complex64::from_polar(v, theta);
                }
                acc * norm
            })
            .collect()
    }

    fn single_dim(values: &[f64]) -> Trajectory {
        Trajectory::from_rows(&values.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap()
    }

    fn random_traj(n: usize, m: usize, seed: u64) -> Trajectory {
        use rand::Rng;
        let mut rng = crate::rng::substream(seed, "transform-test");
        Trajectory::new(Array2::from_shape_fn((n, m), |_| rng.gen_range(-5.0..5.0))).unwrap()
    }

    #[test]
    fn dft_constant_signal() {
        let c = 1.75;
        let spec = dft_forward(&single_dim(&[c, c, c, c])).unwrap();
        // Unitary scaling puts sqrt(N) * c = 2c on the fundamental.
        assert!((spec.values[[0, 0]] - 2.0 * c).abs() < 1e-12);
        for k in 1..4 {
            assert!(spec.values[[k, 0]].abs() < 1e-12);
        }
    }

    #[test]
    fn dft_matches_direct_sum_oracle() {
        let signal = [0.0, 1.0, 2.0, 3.0];
        let spec = dft_forward(&single_dim(&signal)).unwrap();
        let oracle = oracle_dft(&signal);
        for k in 0..4 {
            assert!((spec.values[[k, 0]] - oracle[k].norm()).abs() < 1e-12);
            if oracle[k].norm() > 1e-12 {
                let mut expected = oracle[k].arg();
                if expected <= -PI {
                    expected += 2.0 * PI;
                }
                assert!((spec.values[[k, 1]] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dft_round_trip() {
        let traj = random_traj(8, 4, 1);
        let back = dft_inverse(&dft_forward(&traj).unwrap()).unwrap();
        let err = (back.values() - traj.values()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(err < 1e-9, "round trip error {err}");
    }

    #[test]
    fn dft_inverse_constant_case() {
        let c = 0.5;
        let spec = Spectrum {
            values: array![[2.0 * c, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
            kind: TransformKind::Dft,
        };
        let traj = dft_inverse(&spec).unwrap();
        for t in 0..4 {
            assert!((traj.values()[[t, 0]] - c).abs() < 1e-12);
        }
    }

    #[test]
    fn dft_inverse_reports_imag_residue() {
        // A lone n=1 bin is not conjugate-symmetric, so the reconstruction
        // carries an imaginary part the oracle can predict: |imag| peaks at
        // amp * |sin(phase + 2 pi t / N)| / sqrt(N).
        let spec = Spectrum {
            values: array![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
            kind: TransformKind::Dft,
        };
        let (_, residue) = dft_inverse_with_residue(&spec).unwrap();
        let expected = (0..4)
            .map(|t| (2.0 * PI * t as f64 / 4.0).sin().abs() / 2.0)
            .fold(0.0f64, f64::max);
        assert!((residue - expected).abs() < 1e-12);
        // Forward-produced spectra reconstruct with negligible residue.
        let traj = random_traj(8, 2, 3);
        let (_, residue) = dft_inverse_with_residue(&dft_forward(&traj).unwrap()).unwrap();
        assert!(residue < 1e-9);
    }

    #[test]
    fn dft_inverse_rejects_odd_dims() {
        let spec = Spectrum { values: Array2::zeros((4, 3)), kind: TransformKind::Dft };
        assert!(dft_inverse(&spec).is_err());
    }

    #[test]
    fn haar_pairwise_equal() {
        let spec = haar_forward(&single_dim(&[2.0, 2.0, -3.0, -3.0])).unwrap();
        let sqrt2 = 2.0f64.sqrt();
        assert!((spec.values[[0, 0]] - 2.0 * sqrt2).abs() < 1e-12);
        assert!((spec.values[[1, 0]] + 3.0 * sqrt2).abs() < 1e-12);
        assert!(spec.values[[0, 1]].abs() < 1e-12);
        assert!(spec.values[[1, 1]].abs() < 1e-12);
    }

    #[test]
    fn haar_direct_formula_oracle() {
        // Direct evaluation of the single-level pair formulas.
        let signal = [1.0, 2.0, 3.0, 4.0];
        let spec = haar_forward(&single_dim(&signal)).unwrap();
        let sqrt2 = 2.0f64.sqrt();
        let expected_approx = [(signal[0] + signal[1]) / sqrt2, (signal[2] + signal[3]) / sqrt2];
        let expected_detail = [(signal[0] - signal[1]) / sqrt2, (signal[2] - signal[3]) / sqrt2];
        assert!((expected_approx[0] - 3.0 / sqrt2).abs() < 1e-15);
        assert!((expected_approx[1] - 7.0 / sqrt2).abs() < 1e-15);
        for k in 0..2 {
            assert!((spec.values[[k, 0]] - expected_approx[k]).abs() < 1e-12);
            assert!((spec.values[[k, 1]] - expected_detail[k]).abs() < 1e-12);
            assert!((expected_detail[k] + 1.0 / sqrt2).abs() < 1e-12);
        }
        // Inverse reproduces the signal exactly.
        let back = haar_inverse(&spec).unwrap();
        for (t, &v) in signal.iter().enumerate() {
            assert!((back.values()[[t, 0]] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn haar_rejects_odd_length() {
        assert!(haar_forward(&single_dim(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn haar_inverse_constant() {
        let sqrt2 = 2.0f64.sqrt();
        let spec = Spectrum {
            values: array![[sqrt2, 0.0], [sqrt2, 0.0]],
            kind: TransformKind::Haar,
        };
        let traj = haar_inverse(&spec).unwrap();
        for t in 0..4 {
            assert!((traj.values()[[t, 0]] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_maps() {
        assert_eq!(TransformKind::Dft.shape_map(8, 2).unwrap(), (8, 4));
        assert_eq!(TransformKind::Haar.shape_map(20, 4).unwrap(), (10, 8));
        assert_eq!(TransformKind::Identity.shape_map(8, 2).unwrap(), (8, 2));
        assert!(TransformKind::Haar.shape_map(7, 2).is_err());
    }

    #[test]
    fn forward_shapes_follow_shape_map() {
        for kind in [TransformKind::Dft, TransformKind::Haar, TransformKind::Identity] {
            let traj = random_traj(8, 3, 5);
            let spec = kind.forward(&traj).unwrap();
            let (n, m) = kind.shape_map(8, 3).unwrap();
            assert_eq!((spec.points(), spec.dims()), (n, m));
        }
    }

    #[test]
    fn parseval_zeros() {
        let traj = Trajectory::new(Array2::zeros((4, 2))).unwrap();
        assert_eq!(parseval_check(&traj, TransformKind::Dft).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn parseval_ramp() {
        let (time, freq) = parseval_check(&single_dim(&[0.0, 1.0, 2.0, 3.0]), TransformKind::Dft).unwrap();
        assert!((time - 14.0).abs() < 1e-12);
        assert!((freq - 14.0).abs() < 1e-9);
        // Oracle: direct-sum spectral energy agrees.
        let oracle: f64 = oracle_dft(&[0.0, 1.0, 2.0, 3.0]).iter().map(|c| c.norm_sqr()).sum();
        assert!((oracle - 14.0).abs() < 1e-12);
    }

    #[test]
    fn parseval_both_transforms_random() {
        let traj = random_traj(8, 6, 11);
        for kind in [TransformKind::Dft, TransformKind::Haar] {
            let (time, freq) = parseval_check(&traj, kind).unwrap();
            assert!((time - freq).abs() / time < 1e-9);
        }
    }

    #[test]
    fn energy_profile_linear_is_monotone() {
        let profile = energy_profile(&single_dim(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])).unwrap();
        assert!(!profile.degenerate);
        for w in profile.time_fractions.windows(2) {
            assert!(w[0] < w[1]);
        }
        let last = *profile.time_fractions.last().unwrap();
        assert!(profile.time_fractions.iter().all(|&f| f <= last));
        // Ramp fundamental carries ~70% of the spectral energy.
        assert!((profile.freq_fractions[0] - 0.7).abs() < 1e-12);
        assert!((last - 0.35).abs() < 1e-12);
    }

    #[test]
    fn energy_profile_fractions_sum_to_one() {
        let profile = energy_profile(&random_traj(8, 2, 21)).unwrap();
        let t: f64 = profile.time_fractions.iter().sum();
        let f: f64 = profile.freq_fractions.iter().sum();
        assert!((t - 1.0).abs() < 1e-9);
        assert!((f - 1.0).abs() < 1e-9);
    }

    #[test]
    fn energy_profile_degenerate_is_uniform() {
        let profile = energy_profile(&single_dim(&[3.0; 8])).unwrap();
        assert!(profile.degenerate);
        for &f in &profile.time_fractions {
            assert!((f - 0.125).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn prop_dft_round_trip(seed in 0u64..500, n in 1usize..16, m in 1usize..5) {
            let traj = random_traj(n, m, seed);
            let back = dft_inverse(&dft_forward(&traj).unwrap()).unwrap();
            let err = (back.values() - traj.values()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            prop_assert!(err < 1e-9);
        }

        #[test]
        fn prop_haar_round_trip(seed in 0u64..500, half in 1usize..10, m in 1usize..5) {
            let traj = random_traj(half * 2, m, seed);
            let back = haar_inverse(&haar_forward(&traj).unwrap()).unwrap();
            let err = (back.values() - traj.values()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            prop_assert!(err < 1e-12);
        }

        #[test]
        fn prop_parseval(seed in 0u64..500, n in 1usize..12, m in 1usize..5) {
            let traj = random_traj(n * 2, m, seed);
            for kind in [TransformKind::Dft, TransformKind::Haar] {
                let (time, freq) = parseval_check(&traj, kind).unwrap();
                let denom = time.max(1e-12);
                prop_assert!((time - freq).abs() / denom < 1e-9);
            }
        }

        #[test]
        fn prop_dft_linearity_complex(seed in 0u64..200, n in 2usize..10) {
            // Linearity holds on the complex representation recovered from
            // amplitude/phase columns (phase alone is not linear).
            let a = random_traj(n, 1, seed);
            let b = random_traj(n, 1, seed + 1000);
            let sum = Trajectory::new(a.values() + b.values()).unwrap();
            let to_complex = |s: &Spectrum, k: usize| {
                Complex64::from_polar(s.values[[k, 0]], s.values[[k, 1]])
            };
            let sa = dft_forward(&a).unwrap();
            let sb = dft_forward(&b).unwrap();
            let ss = dft_forward(&sum).unwrap();
            for k in 0..n {
                let lhs = to_complex(&ss, k);
                let rhs = to_complex(&sa, k) + to_complex(&sb, k);
                prop_assert!((lhs - rhs).norm() < 1e-9);
            }
        }

        #[test]
        fn prop_haar_linearity(seed in 0u64..200, half in 1usize..8) {
            let a = random_traj(half * 2, 2, seed);
            let b = random_traj(half * 2, 2, seed + 1000);
            let sum = Trajectory::new(a.values() + b.values()).unwrap();
            let sa = haar_forward(&a).unwrap();
            let sb = haar_forward(&b).unwrap();
            let ss = haar_forward(&sum).unwrap();
            let err = (&sa.values + &sb.values - &ss.values)
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()));
            prop_assert!(err < 1e-12);
        }
    }
}
