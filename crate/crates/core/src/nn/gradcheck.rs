//! Central finite-difference verification of analytic gradients.

use super::tape::Mat;

/// Compare an analytic gradient against central differences of `f` around
/// `theta`, coordinate by coordinate. Returns the maximum relative error
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn grad_check<F>(theta: &[Mat], analytic: &[Mat], mut f: F, h: f64) -> f64
where
    F: FnMut(&[Mat]) -> f64,
{
    assert!(h > 0.0);
    assert_eq!(theta.len(), analytic.len());
    let mut work: Vec<Mat> = theta.to_vec();
    let mut worst = 0.0f64;
    for ti in 0..theta.len() {
        assert_eq!(theta[ti].shape(), analytic[ti].shape());
        for idx in 0..theta[ti].len() {
            let (r, c) = (idx / theta[ti].ncols(), idx % theta[ti].ncols());
            let orig = work[ti][[r, c]];
            work[ti][[r, c]] = orig + h;
            let plus = f(&work);
            work[ti][[r, c]] = orig - h;
            let minus = f(&work);
            work[ti][[r, c]] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let exact = analytic[ti][[r, c]];
            let rel = (exact - numeric).abs() / (exact.abs() + numeric.abs() + 1e-12);
            worst = worst.max(rel);
        }
    }
    worst
}
