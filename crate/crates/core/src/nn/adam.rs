pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// One bias-corrected Adam update of `params` in place.
///
/// `step` is the 1-based index of this update.
pub fn adam_update(params: &mut [f64], grads: &[f64], first: &mut [f64], second: &mut [f64], step: u64, lr: f64) {
    debug_assert!(step >= 1);
    let t = step.min(i32::MAX as u64) as i32;
    let bias1 = 1.0 - BETA1.powi(t);
    let bias2 = 1.0 - BETA2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(first.iter_mut()).zip(second.iter_mut()) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = [0.3, -1.2];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, 0.1);
        assert_eq!(p, [0.3, -1.2]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = [2.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, 0.1);
        // m_hat = v_hat = 1, step = lr / (1 + eps)
        assert!((p[0] - (2.0 - 0.1 / (1.0 + EPSILON))).abs() < 1e-15);
    }

    /// Textbook Adam written out independently, with gradient `2 * theta`.
    fn reference_quadratic(theta0: f64, lr: f64, steps: u64) -> f64 {
        let (mut theta, mut m, mut v) = (theta0, 0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = 2.0 * theta;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powf(t as f64));
            let vh = v / (1.0 - 0.999f64.powf(t as f64));
            theta -= lr * mh / (vh.sqrt() + 1e-8);
        }
        theta
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = [1.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        for step in 1..=200 {
            let g = [2.0 * p[0]];
            adam_update(&mut p, &g, &mut m, &mut v, step, 0.05);
        }
        assert!(p[0].abs() < 0.05, "{}", p[0]);
        assert!((p[0] - reference_quadratic(1.0, 0.05, 200)).abs() < 1e-12);
    }
}
