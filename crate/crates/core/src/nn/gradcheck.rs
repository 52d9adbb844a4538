/// Central finite differences for validating analytic gradients.
///
/// Stochastic pieces (dropout) must be frozen inside the loss closure —
/// re-seed the rng on every call so all perturbed evaluations see the
/// same masks.

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_deviation: f64,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_deviation <= tolerance
    }
}

/// Numeric gradient (f(p+h) - f(p-h)) / 2h, one coordinate at a time.
pub fn finite_difference_gradient<F>(mut f: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut perturbed = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let original = perturbed[i];
        perturbed[i] = original + h;
        let plus = f(&perturbed);
        perturbed[i] = original - h;
        let minus = f(&perturbed);
        perturbed[i] = original;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Relative deviation per coordinate, absolute when both gradients are
/// tiny (below 1e-6) so round-off does not dominate the ratio.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut max_deviation = 0.0f64;
    let mut worst_index = 0usize;
    for (i, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
        let diff = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let dev = if scale > 1e-6 { diff / scale } else { diff };
        if dev > max_deviation {
            max_deviation = dev;
            worst_index = i;
        }
    }
    GradCheckReport {
        max_deviation,
        worst_index,
        checked: analytic.len(),
    }
}

/// Convenience wrapper: analytic vs. central-difference gradient of `f`
/// at `params`.
pub fn check_gradient<F>(f: F, params: &[f64], analytic: &[f64], h: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = finite_difference_gradient(f, params, h);
    compare_gradients(analytic, &numeric)
}
