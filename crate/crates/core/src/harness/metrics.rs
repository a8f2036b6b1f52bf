use std::f64::consts::TAU;

use serde::Serialize;

use crate::error::{Error, Result};

/// One logged control sample. `omega` and `psi` are the state after the
/// control period; `reward` is the unscaled `-1/2 (omega_d - omega)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub psi: f64,
    pub omega: f64,
    pub omega_d: f64,
    pub u_base: f64,
    pub pi_out: f64,
    pub u_total: f64,
    pub u_applied: f64,
    pub reward: f64,
}

impl Sample {
    pub fn error(&self) -> f64 {
        self.omega_d - self.omega
    }
}

/// Metrics of one complete revolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Revolution {
    /// Index `k` such that the revolution spans `psi` in `[2 pi k, 2 pi (k + 1))`
    /// (or the mirrored interval for reverse rotation).
    pub index: i64,
    /// Interpolated crossing times at both boundaries.
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
    pub mae: f64,
    pub mse: f64,
    pub mean_reward: f64,
}

/// Averages over the complete revolutions of a slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RevolutionMetrics {
    pub mae: f64,
    pub mse: f64,
    pub mean_reward: f64,
    pub revolutions: usize,
}

fn sector(psi: f64) -> i64 {
    (psi / TAU).floor() as i64
}

/// Splits a trajectory into complete revolutions.
///
/// Boundaries are the samples where `floor(psi / 2 pi)` changes; the crossing
/// time is linearly interpolated between the bracketing samples. Samples
/// before the first and after the last boundary are a partial revolution and
/// are dropped.
pub fn split_revolutions(samples: &[Sample]) -> Vec<Revolution> {
    let mut out = Vec::new();
    let mut start: Option<(usize, f64)> = None;
    for i in 1..samples.len() {
        let (a, b) = (&samples[i - 1], &samples[i]);
        let (ka, kb) = (sector(a.psi), sector(b.psi));
        if ka == kb {
            continue;
        }
        let boundary = TAU * ka.max(kb) as f64;
        let frac = if b.psi != a.psi {
            ((boundary - a.psi) / (b.psi - a.psi)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let t_cross = a.t + frac * (b.t - a.t);
        if let Some((s, t_start)) = start {
            out.push(summarize_slice(&samples[s..i], sector(samples[s].psi), t_start, t_cross));
        }
        start = Some((i, t_cross));
    }
    out
}

fn summarize_slice(slice: &[Sample], index: i64, t_start: f64, t_end: f64) -> Revolution {
    let n = slice.len() as f64;
    let (mut abs, mut sq, mut rew) = (0.0, 0.0, 0.0);
    for s in slice {
        let e = s.error();
        abs += e.abs();
        sq += e * e;
        rew += s.reward;
    }
    Revolution {
        index,
        t_start,
        t_end,
        samples: slice.len(),
        mae: abs / n,
        mse: sq / n,
        mean_reward: rew / n,
    }
}

/// Per-revolution MAE, MSE and mean reward, averaged over the complete
/// revolutions in `samples`.
pub fn compute_revolution_metrics(samples: &[Sample]) -> Result<RevolutionMetrics> {
    let revs = split_revolutions(samples);
    if revs.is_empty() {
        return Err(Error::NoRevolution);
    }
    let n = revs.len() as f64;
    Ok(RevolutionMetrics {
        mae: revs.iter().map(|r| r.mae).sum::<f64>() / n,
        mse: revs.iter().map(|r| r.mse).sum::<f64>() / n,
        mean_reward: revs.iter().map(|r| r.mean_reward).sum::<f64>() / n,
        revolutions: revs.len(),
    })
}

/// Per-sample averages over the whole slice; used when a window holds no
/// complete revolution.
pub fn sample_metrics(samples: &[Sample]) -> RevolutionMetrics {
    let n = samples.len().max(1) as f64;
    let r = summarize_slice(samples, 0, 0.0, 0.0);
    RevolutionMetrics {
        mae: if samples.is_empty() { 0.0 } else { r.mae },
        mse: if samples.is_empty() { 0.0 } else { r.mse },
        mean_reward: samples.iter().map(|s| s.reward).sum::<f64>() / n,
        revolutions: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(n: usize, omega: f64, err: f64, dt: f64) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let t = (i + 1) as f64 * dt;
                let e = err;
                Sample {
                    t,
                    psi: omega * t,
                    omega,
                    omega_d: omega + e,
                    u_base: 0.0,
                    pi_out: 0.0,
                    u_total: 0.0,
                    u_applied: 0.0,
                    reward: -0.5 * e * e,
                }
            })
            .collect()
    }

    #[test]
    fn perfect_tracking_is_zero() {
        let m = compute_revolution_metrics(&track(500, TAU, 0.0, 0.01)).unwrap();
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.revolutions, 4);
    }

    #[test]
    fn constant_offset() {
        let m = compute_revolution_metrics(&track(500, TAU, -0.3, 0.01)).unwrap();
        assert!((m.mae - 0.3).abs() < 1e-15);
        assert!((m.mse - 0.09).abs() < 1e-15);
        assert!((m.mean_reward + 0.045).abs() < 1e-15);
    }

    #[test]
    fn less_than_a_revolution_errors() {
        let s = track(50, TAU, 0.1, 0.01);
        assert!(matches!(
            compute_revolution_metrics(&s),
            Err(Error::NoRevolution)
        ));
        let m = sample_metrics(&s);
        assert!((m.mae - 0.1).abs() < 1e-15);
    }

    #[test]
    fn crossing_time_interpolated() {
        // psi = 2 pi t; boundary at t = 1 lies between samples.
        let s = track(250, TAU, 0.0, 0.013);
        let revs = split_revolutions(&s);
        assert!((revs[0].t_start - 1.0).abs() < 1e-12);
        assert!((revs[0].t_end - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reverse_rotation_counts() {
        let s = track(500, -TAU, 0.2, 0.01);
        let m = compute_revolution_metrics(&s).unwrap();
        assert!(m.revolutions >= 3);
        assert!((m.mae - 0.2).abs() < 1e-15);
    }
}
