//! Exact L2 projection onto nondecreasing sequences (pool-adjacent-violators).
//!
//! The projection is the metric projection in the Euclidean norm, so it is
//! idempotent and preserves the mean of the input. A running-max repair would
//! also restore monotonicity but biases mass upward; the pooled averages do
//! not.

/// Pool-adjacent-violators: returns the closest (in L2) nondecreasing array.
pub fn isotonic_project(values: &[f64]) -> Vec<f64> {
    debug_assert!(values.iter().all(|v| v.is_finite()));
    let n = values.len();
    if n <= 1 {
        return values.to_vec();
    }

    // Blocks of pooled entries: (mean, weight).
    let mut mean: Vec<f64> = Vec::with_capacity(n);
    let mut weight: Vec<f64> = Vec::with_capacity(n);
    for &v in values {
        mean.push(v);
        weight.push(1.0);
        // Merge backwards while the new block violates monotonicity.
        while mean.len() > 1 {
            let j = mean.len() - 1;
            if mean[j - 1] <= mean[j] {
                break;
            }
            let w = weight[j - 1] + weight[j];
            mean[j - 1] = (weight[j - 1] * mean[j - 1] + weight[j] * mean[j]) / w;
            weight[j - 1] = w;
            mean.pop();
            weight.pop();
        }
    }

    let mut out = Vec::with_capacity(n);
    for (m, w) in mean.iter().zip(weight.iter()) {
        for _ in 0..(*w as usize) {
            out.push(*m);
        }
    }
    out
}

/// Projects in place; returns the squared L2 change `sum (new - old)^2`.
pub fn isotonic_project_inplace(values: &mut [f64]) -> f64 {
    // Fast path: already monotone (the common case between noisy steps).
    if values.windows(2).all(|w| w[0] <= w[1]) {
        return 0.0;
    }
    let projected = isotonic_project(values);
    let mut dist2 = 0.0;
    for (v, p) in values.iter_mut().zip(projected.iter()) {
        let d = *p - *v;
        dist2 += d * d;
        *v = *p;
    }
    dist2
}
