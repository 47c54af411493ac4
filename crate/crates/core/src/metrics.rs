//! Displacement, center and IoU metrics plus the best-of-K protocol.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::{TaskKind, Trajectory};

/// Metrics of one prediction (or of the selected best-of-K sample). Box
/// metrics are absent for coordinate tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ade: f64,
    pub fde: f64,
    pub cade: Option<f64>,
    pub cfde: Option<f64>,
    pub aiou: Option<f64>,
    pub fiou: Option<f64>,
    pub k_selected: usize,
}

/// How AIoU/FIoU are chosen in the best-of-K protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouSelection {
    /// Report the IoU of the ADE-selected sample.
    AdeTied,
    /// Maximize AIoU and FIoU independently over samples.
    IndependentMax,
}

fn check_shapes(pred: &Trajectory, truth: &Trajectory) -> Result<()> {
    if pred.steps() != truth.steps() || pred.dims() != truth.dims() {
        return Err(Error::shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.steps(),
            pred.dims(),
            truth.steps(),
            truth.dims()
        )));
    }
    Ok(())
}

fn point_distance(pred: &Trajectory, truth: &Trajectory, t: usize, lo: usize, hi: usize) -> f64 {
    (lo..hi)
        .map(|d| (pred.values()[[t, d]] - truth.values()[[t, d]]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Average and final displacement error. Boxes average over their two
/// corner points per frame; coordinates treat the whole frame as one point.
pub fn displacement_errors(
    pred: &Trajectory,
    truth: &Trajectory,
    task: TaskKind,
) -> Result<(f64, f64)> {
    check_shapes(pred, truth)?;
    let m = task.points_per_frame();
    let dims = pred.dims();
    if dims % m != 0 {
        return Err(Error::shape(format!("{dims} dims not divisible into {m} points")));
    }
    let point_dims = dims / m;
    let t_f = pred.steps();
    let mut total = 0.0;
    let mut final_sum = 0.0;
    for t in 0..t_f {
        for p in 0..m {
            let d = point_distance(pred, truth, t, p * point_dims, (p + 1) * point_dims);
            total += d;
            if t == t_f - 1 {
                final_sum += d;
            }
        }
    }
    Ok((total / (m * t_f) as f64, final_sum / m as f64))
}

/// Displacement errors of the per-frame box centers.
pub fn center_errors(pred: &Trajectory, truth: &Trajectory, task: TaskKind) -> Result<(f64, f64)> {
    if !task.is_box() {
        return Err(Error::UnsupportedMetric("center errors need a box task".into()));
    }
    check_shapes(pred, truth)?;
    let centers = |t: &Trajectory| -> Trajectory {
        let half = t.dims() / 2;
        let values = ndarray::Array2::from_shape_fn((t.steps(), half), |(r, c)| {
            (t.values()[[r, c]] + t.values()[[r, half + c]]) / 2.0
        });
        Trajectory::new(values).expect("finite centers")
    };
    displacement_errors(&centers(pred), &centers(truth), TaskKind::Co)
}

/// Axis-aligned IoU of one frame. Corners may arrive in either order; each
/// axis is normalized to (lo, hi) before intersecting.
fn frame_iou(pred: &Trajectory, truth: &Trajectory, t: usize) -> f64 {
    let half = pred.dims() / 2;
    let mut inter = 1.0;
    let mut vol_a = 1.0;
    let mut vol_b = 1.0;
    for d in 0..half {
        let (a_lo, a_hi) = minmax(pred.values()[[t, d]], pred.values()[[t, half + d]]);
        let (b_lo, b_hi) = minmax(truth.values()[[t, d]], truth.values()[[t, half + d]]);
        inter *= (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0);
        vol_a *= a_hi - a_lo;
        vol_b *= b_hi - b_lo;
    }
    let union = vol_a + vol_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn minmax(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Average IoU over frames and IoU of the final frame.
pub fn iou_metrics(pred: &Trajectory, truth: &Trajectory, task: TaskKind) -> Result<(f64, f64)> {
    if !task.is_box() {
        return Err(Error::UnsupportedMetric("IoU needs a box task".into()));
    }
    check_shapes(pred, truth)?;
    let t_f = pred.steps();
    let mut sum = 0.0;
    let mut last = 0.0;
    for t in 0..t_f {
        let iou = frame_iou(pred, truth, t);
        sum += iou;
        if t == t_f - 1 {
            last = iou;
        }
    }
    Ok((sum / t_f as f64, last))
}

/// Best-of-K: select the sample minimizing ADE (ties go to the lowest k) and
/// report its metrics. IoU can optionally be maximized independently.
pub fn best_of_k(
    samples: &[Trajectory],
    truth: &Trajectory,
    task: TaskKind,
    iou_selection: IouSelection,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::invalid("best-of-K needs at least one sample"));
    }
    let mut best_k = 0;
    let mut best = (f64::INFINITY, f64::INFINITY);
    for (k, s) in samples.iter().enumerate() {
        let errs = displacement_errors(s, truth, task)?;
        if errs.0 < best.0 {
            best = errs;
            best_k = k;
        }
    }
    let selected = &samples[best_k];
    let (cade, cfde, aiou, fiou) = if task.is_box() {
        let (cade, cfde) = center_errors(selected, truth, task)?;
        let (aiou, fiou) = match iou_selection {
            IouSelection::AdeTied => iou_metrics(selected, truth, task)?,
            IouSelection::IndependentMax => {
                let mut best_a = 0.0f64;
                let mut best_f = 0.0f64;
                for s in samples {
                    let (a, f) = iou_metrics(s, truth, task)?;
                    best_a = best_a.max(a);
                    best_f = best_f.max(f);
                }
                (best_a, best_f)
            }
        };
        (Some(cade), Some(cfde), Some(aiou), Some(fiou))
    } else {
        (None, None, None, None)
    };
    Ok(MetricReport {
        ade: best.0,
        fde: best.1,
        cade,
        cfde,
        aiou,
        fiou,
        k_selected: best_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn traj_from(values: Array2<f64>) -> Trajectory {
        Trajectory::new(values).unwrap()
    }

    fn random_traj(n: usize, m: usize, seed: u64) -> Trajectory {
        let mut rng = substream(seed, "metrics-test");
        traj_from(Array2::from_shape_fn((n, m), |_| rng.gen_range(-4.0..4.0)))
    }

    #[test]
    fn exact_prediction_is_zero() {
        let y = random_traj(12, 2, 1);
        assert_eq!(displacement_errors(&y, &y, TaskKind::Co).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn co_offset_345() {
        let y = random_traj(12, 2, 2);
        let pred = traj_from(y.values() + &ndarray::arr2(&[[3.0, 4.0]]));
        let (ade, fde) = displacement_errors(&pred, &y, TaskKind::Co).unwrap();
        assert!((ade - 5.0).abs() < 1e-12);
        assert!((fde - 5.0).abs() < 1e-12);
    }

    #[test]
    fn bb_one_corner_offset() {
        // Corner A exact, corner B offset (0, 2): per printed m=2 average
        // each frame contributes (0 + 2) / 2 = 1.
        let y = random_traj(12, 4, 3);
        let mut shifted = y.values().clone();
        for mut row in shifted.rows_mut() {
            row[3] += 2.0;
        }
        let pred = traj_from(shifted);
        let (ade, fde) = displacement_errors(&pred, &y, TaskKind::Bb).unwrap();
        assert!((ade - 1.0).abs() < 1e-12);
        assert!((fde - 1.0).abs() < 1e-12);
    }

    #[test]
    fn displacement_matches_double_loop_oracle() {
        let y = random_traj(12, 6, 4);
        let pred = random_traj(12, 6, 5);
        let (ade, fde) = displacement_errors(&pred, &y, TaskKind::Bb3d).unwrap();
        // Independent re-implementation, loops written point-first.
        let mut total = 0.0;
        let mut final_total = 0.0;
        for p in 0..2 {
            for t in 0..12 {
                let mut sq = 0.0;
                for d in 0..3 {
                    let col = p * 3 + d;
                    sq += (pred.values()[[t, col]] - y.values()[[t, col]]).powi(2);
                }
                total += sq.sqrt();
                if t == 11 {
                    final_total += sq.sqrt();
                }
            }
        }
        assert!((ade - total / 24.0).abs() < 1e-12);
        assert!((fde - final_total / 2.0).abs() < 1e-12);
    }

    #[test]
    fn displacement_translation_invariant() {
        let y = random_traj(12, 2, 6);
        let pred = random_traj(12, 2, 7);
        let (ade, fde) = displacement_errors(&pred, &y, TaskKind::Co).unwrap();
        let shift = ndarray::arr2(&[[13.0, -4.0]]);
        let (ade2, fde2) = displacement_errors(
            &traj_from(pred.values() + &shift),
            &traj_from(y.values() + &shift),
            TaskKind::Co,
        )
        .unwrap();
        assert!((ade - ade2).abs() < 1e-9);
        assert!((fde - fde2).abs() < 1e-9);
    }

    #[test]
    fn center_errors_cancel_opposite_offsets() {
        let y = random_traj(12, 4, 8);
        let mut shifted = y.values().clone();
        for mut row in shifted.rows_mut() {
            row[0] += 1.0;
            row[2] -= 1.0;
        }
        let (cade, cfde) = center_errors(&traj_from(shifted), &y, TaskKind::Bb).unwrap();
        assert!(cade.abs() < 1e-12);
        assert!(cfde.abs() < 1e-12);
    }

    #[test]
    fn center_errors_shared_offset() {
        let y = random_traj(12, 4, 9);
        let shift = ndarray::arr2(&[[3.0, 4.0, 3.0, 4.0]]);
        let (cade, cfde) = center_errors(&traj_from(y.values() + &shift), &y, TaskKind::Bb).unwrap();
        assert!((cade - 5.0).abs() < 1e-12);
        assert!((cfde - 5.0).abs() < 1e-12);
        // Same error on both corners means cADE equals ADE.
        let (ade, _) = displacement_errors(&traj_from(y.values() + &shift), &y, TaskKind::Bb).unwrap();
        assert!((cade - ade).abs() < 1e-12);
    }

    #[test]
    fn center_errors_reject_co() {
        let y = random_traj(12, 2, 10);
        assert!(matches!(
            center_errors(&y, &y, TaskKind::Co),
            Err(Error::UnsupportedMetric(_))
        ));
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let a = traj_from(Array2::from_shape_fn((5, 4), |(t, d)| match d {
            0 | 1 => t as f64,
            _ => t as f64 + 2.0,
        }));
        assert_eq!(iou_metrics(&a, &a, TaskKind::Bb).unwrap(), (1.0, 1.0));
        let far = traj_from(a.values() + 100.0);
        assert_eq!(iou_metrics(&a, &far, TaskKind::Bb).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn iou_one_seventh() {
        let rows = 3;
        let a = traj_from(Array2::from_shape_fn((rows, 4), |(_, d)| match d {
            0 | 1 => 0.0,
            _ => 2.0,
        }));
        let b = traj_from(Array2::from_shape_fn((rows, 4), |(_, d)| match d {
            0 | 1 => 1.0,
            _ => 3.0,
        }));
        let (aiou, fiou) = iou_metrics(&a, &b, TaskKind::Bb).unwrap();
        assert!((aiou - 1.0 / 7.0).abs() < 1e-12);
        assert!((fiou - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn iou_handles_inverted_corners() {
        // Same box with corners swapped must compare as identical.
        let a = traj_from(ndarray::arr2(&[[0.0, 0.0, 2.0, 2.0]]));
        let swapped = traj_from(ndarray::arr2(&[[2.0, 2.0, 0.0, 0.0]]));
        assert_eq!(iou_metrics(&a, &swapped, TaskKind::Bb).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn iou_zero_volume_truth_is_zero() {
        let a = traj_from(ndarray::arr2(&[[0.0, 0.0, 2.0, 2.0]]));
        let degenerate = traj_from(ndarray::arr2(&[[1.0, 1.0, 1.0, 1.0]]));
        assert_eq!(iou_metrics(&a, &degenerate, TaskKind::Bb).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn iou_monte_carlo_oracle() {
        let a = traj_from(ndarray::arr2(&[[0.0, 0.0, 2.0, 2.0]]));
        let b = traj_from(ndarray::arr2(&[[1.0, 1.0, 3.0, 3.0]]));
        let (aiou, _) = iou_metrics(&a, &b, TaskKind::Bb).unwrap();
        // Containment sampling over the union's bounding box.
        let mut rng = substream(42, "iou-mc");
        let samples = 1_000_000usize;
        let mut in_union = 0u64;
        let mut in_inter = 0u64;
        for _ in 0..samples {
            let x = rng.gen_range(0.0..3.0);
            let y = rng.gen_range(0.0..3.0);
            let in_a = (0.0..=2.0).contains(&x) && (0.0..=2.0).contains(&y);
            let in_b = (1.0..=3.0).contains(&x) && (1.0..=3.0).contains(&y);
            if in_a || in_b {
                in_union += 1;
            }
            if in_a && in_b {
                in_inter += 1;
            }
        }
        let mc = in_inter as f64 / in_union as f64;
        assert!((aiou - mc).abs() < 0.005, "analytic {aiou} vs MC {mc}");
    }

    #[test]
    fn best_of_k_selects_exact_sample() {
        let y = random_traj(12, 2, 11);
        let off = traj_from(y.values() + 1.0);
        let report = best_of_k(
            &[off.clone(), y.clone(), off],
            &y,
            TaskKind::Co,
            IouSelection::AdeTied,
        )
        .unwrap();
        assert_eq!(report.k_selected, 1);
        assert_eq!(report.ade, 0.0);
        assert!(report.aiou.is_none());
    }

    #[test]
    fn best_of_k_single_sample() {
        let y = random_traj(12, 2, 12);
        let pred = traj_from(y.values() + &ndarray::arr2(&[[3.0, 4.0]]));
        let report = best_of_k(&[pred], &y, TaskKind::Co, IouSelection::AdeTied).unwrap();
        assert_eq!(report.k_selected, 0);
        assert!((report.ade - 5.0).abs() < 1e-12);
    }

    #[test]
    fn best_of_k_ties_take_lowest_index() {
        let y = random_traj(12, 2, 13);
        let off = traj_from(y.values() + 1.0);
        let report =
            best_of_k(&[off.clone(), off], &y, TaskKind::Co, IouSelection::AdeTied).unwrap();
        assert_eq!(report.k_selected, 0);
    }

    #[test]
    fn best_of_k_matches_exhaustive_oracle() {
        let y = random_traj(12, 4, 14);
        let samples: Vec<Trajectory> = (0..20).map(|k| random_traj(12, 4, 100 + k)).collect();
        let report = best_of_k(&samples, &y, TaskKind::Bb, IouSelection::AdeTied).unwrap();
        // Exhaustive oracle with independently written ADE.
        let mut best = (usize::MAX, f64::INFINITY);
        for (k, s) in samples.iter().enumerate() {
            let mut total = 0.0;
            for t in 0..12 {
                for p in 0..2 {
                    let dx = s.values()[[t, 2 * p]] - y.values()[[t, 2 * p]];
                    let dy = s.values()[[t, 2 * p + 1]] - y.values()[[t, 2 * p + 1]];
                    total += dx.hypot(dy);
                }
            }
            let ade = total / 24.0;
            if ade < best.1 {
                best = (k, ade);
            }
        }
        assert_eq!(report.k_selected, best.0);
        assert!((report.ade - best.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn prop_best_of_k_monotone_in_k(seed in 0u64..100, k in 1usize..10) {
            let y = random_traj(8, 2, seed);
            let samples: Vec<Trajectory> = (0..k).map(|i| random_traj(8, 2, 1000 + seed * 31 + i as u64)).collect();
            let shorter = best_of_k(&samples[..k.max(1) - 0], &y, TaskKind::Co, IouSelection::AdeTied).unwrap();
            let mut extended = samples.clone();
            extended.push(random_traj(8, 2, 5000 + seed));
            let longer = best_of_k(&extended, &y, TaskKind::Co, IouSelection::AdeTied).unwrap();
            prop_assert!(longer.ade <= shorter.ade + 1e-15);
        }

        #[test]
        fn prop_iou_symmetric_and_bounded(seed in 0u64..200) {
            let a = random_traj(4, 4, seed);
            let b = random_traj(4, 4, seed + 999);
            let (ab, fab) = iou_metrics(&a, &b, TaskKind::Bb).unwrap();
            let (ba, fba) = iou_metrics(&b, &a, TaskKind::Bb).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((fab - fba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((0.0..=1.0).contains(&fab));
        }
    }
}
