//! Shared helpers for unit tests.

/// Central finite-difference gradient of `f` at `at` with step `h`.
pub fn central_difference_score<F: Fn(&[f64]) -> f64>(f: F, at: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; at.len()];
    let mut work = at.to_vec();
    for k in 0..at.len() {
        let orig = work[k];
        work[k] = orig + h;
        let fp = f(&work);
        work[k] = orig - h;
        let fm = f(&work);
        work[k] = orig;
        grad[k] = (fp - fm) / (2.0 * h);
    }
    grad
}
