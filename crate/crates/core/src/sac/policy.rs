//! Tanh-squashed diagonal Gaussian.

use std::f64::consts::PI;

/// Added inside `log(1 - a^2 + eps)` to keep the Jacobian term finite at the edges.
pub const SQUASH_EPS: f64 = 1e-6;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

/// Action and log-density for a reparameterised draw `a = tanh(mean + std * z)`.
pub fn squash(mean: f64, log_std: f64, z: f64) -> (f64, f64) {
    let a = (mean + log_std.exp() * z).tanh();
    let logp = -0.5 * z * z - log_std - HALF_LOG_2PI - (1.0 - a * a + SQUASH_EPS).ln();
    (a, logp)
}

/// Log-density of the squashed distribution at a given action in (-1, 1).
pub fn log_prob(mean: f64, log_std: f64, a: f64) -> f64 {
    let u = a.atanh();
    let z = (u - mean) / log_std.exp();
    -0.5 * z * z - log_std - HALF_LOG_2PI - (1.0 - a * a + SQUASH_EPS).ln()
}

/// Gradient of the reparameterised sample's log-density with respect to
/// `(mean, log_std)`, holding `z` fixed.
pub fn log_prob_grad(a: f64, log_std: f64, z: f64) -> (f64, f64) {
    let one_m = 1.0 - a * a;
    let kappa = 2.0 * a * one_m / (one_m + SQUASH_EPS);
    (kappa, -1.0 + kappa * log_std.exp() * z)
}

/// Differential entropy of the unsquashed Gaussian with this log std.
pub fn gaussian_entropy(log_std: f64) -> f64 {
    0.5 * (2.0 * PI * std::f64::consts::E).ln() + log_std
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_prob_agrees_with_sample_path() {
        for &(m, ls, z) in &[(0.3, -0.5, 0.7), (-1.2, 0.4, -1.1), (0.0, -2.0, 0.0)] {
            let (a, lp) = squash(m, ls, z);
            assert!((log_prob(m, ls, a) - lp).abs() < 1e-8);
        }
    }

    #[test]
    fn gradient_by_finite_difference() {
        let (m, ls, z) = (0.2, -0.7, 0.9);
        let h = 1e-6;
        let lp = |m: f64, ls: f64| squash(m, ls, z).1;
        let (a, _) = squash(m, ls, z);
        let (gm, gs) = log_prob_grad(a, ls, z);
        let fm = (lp(m + h, ls) - lp(m - h, ls)) / (2.0 * h);
        let fs = (lp(m, ls + h) - lp(m, ls - h)) / (2.0 * h);
        assert!((gm - fm).abs() < 1e-6, "{gm} {fm}");
        assert!((gs - fs).abs() < 1e-6, "{gs} {fs}");
    }

    #[test]
    fn degenerate_std_is_deterministic() {
        let (a, _) = squash(0.4, crate::nn::LOG_STD_MIN, 3.0);
        assert!((a - 0.4f64.tanh()).abs() < 1e-8);
    }
}
