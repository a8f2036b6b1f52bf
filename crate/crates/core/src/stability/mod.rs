//! Lyapunov gain conditions and error bounds for the tube-constrained
//! closed loop, specialised to the one-degree-of-freedom crank.
//!
//! With `x = (e, de)`, `e = q - q_r`, the certificate uses
//! `V = 1/2 x' P x`, `P = [[lambda ki, kp/2], [kp/2, lambda M(q)]]`.
//! All matrix norms reduce to extrema of scalar functions of the crank angle
//! over a dense periodic grid.

pub mod rollout;

use serde::{Deserialize, Serialize};

use crate::control::PIGains;
use crate::error::{Error, Result};
use crate::plant::{effective_inertia, gravity_torque, PlantParams};
use crate::residual::TubeMode;

pub use rollout::{adversarial_rollout, Adversary, RolloutReport, RolloutSpec};

/// Step of the central difference used for `dM/dpsi`.
pub const SLOPE_STEP: f64 = 1e-6;

/// Extrema of the configuration-dependent terms over `|q| <= eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SystemNorms {
    pub mu_m: f64,
    pub nu_m: f64,
    /// Friction/damping bound; the viscous coefficient.
    pub mu_b: f64,
    /// Bound on the inertia-rate term; `sup |dM/dpsi|`.
    pub mu_lq: f64,
    pub g0: f64,
    pub eta: f64,
    pub epsilon: f64,
}

/// Angles at which the norms are evaluated: the full period when
/// `eta >= pi`, otherwise `[-eta, eta]`; `n` points, both ends included.
pub fn norm_grid(eta: f64, n: usize) -> Vec<f64> {
    let half = eta.min(std::f64::consts::PI);
    let n = n.max(2);
    (0..n)
        .map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64)
        .collect()
}

fn central_slope(psi: f64, params: &PlantParams) -> Result<f64> {
    let h = SLOPE_STEP;
    Ok((effective_inertia(psi + h, params)? - effective_inertia(psi - h, params)?) / (2.0 * h))
}

pub fn compute_norms(params: &PlantParams, eta: f64, epsilon: f64, n_samples: usize) -> Result<SystemNorms> {
    params.validate()?;
    if n_samples < 360 {
        return Err(Error::Config(format!("norm grid needs >= 360 points, got {n_samples}")));
    }
    if !(eta > 0.0) || !(epsilon >= 0.0) {
        return Err(Error::Config("eta must be > 0 and epsilon >= 0".into()));
    }
    let (mut mu_m, mut nu_m, mut mu_lq, mut g0) = (f64::NEG_INFINITY, f64::INFINITY, 0.0f64, 0.0f64);
    for psi in norm_grid(eta, n_samples) {
        let m = effective_inertia(psi, params)?;
        mu_m = mu_m.max(m);
        nu_m = nu_m.min(m);
        mu_lq = mu_lq.max(central_slope(psi, params)?.abs());
        g0 = g0.max(gravity_torque(psi, params).abs());
    }
    if !(nu_m > 0.0) {
        return Err(Error::InvalidPlant(format!("effective inertia {nu_m} is not positive")));
    }
    Ok(SystemNorms {
        mu_m,
        nu_m,
        mu_b: params.c_fric,
        mu_lq,
        g0,
        eta,
        epsilon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateInput {
    pub kp: f64,
    pub ki: f64,
    pub lambda: f64,
    /// N m for absolute tubes, dimensionless for relative tubes.
    pub beta: f64,
    pub omega0: f64,
    pub alpha0: f64,
    pub theta0: f64,
    pub norms: SystemNorms,
}

/// One gain condition: holds iff `value > required`. `beta_limit` is the
/// largest relative tube width for which it still holds (relative mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Condition {
    pub satisfied: bool,
    pub value: f64,
    /// `+inf` marks an unsatisfiable condition.
    pub required: f64,
    pub beta_limit: f64,
}

impl Condition {
    fn new(value: f64, required: f64, beta_limit: f64) -> Self {
        Self {
            satisfied: value > required,
            value,
            required,
            beta_limit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateReport {
    pub mode: TubeMode,
    pub lambda: f64,
    pub lambda_cond: Condition,
    pub kp_cond: Condition,
    pub ki_cond: Condition,
    /// `nu(P)`, `mu(P)`, `nu(Q)` and the disturbance gain.
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    /// Asymptotic error radius; `+inf` when `alpha1` or `alpha3` is not positive.
    pub delta: f64,
    /// `d delta / d beta_a`; the absolute width enters the bound linearly.
    pub delta_per_beta: f64,
}

impl CertificateReport {
    pub fn certified(&self) -> bool {
        self.lambda_cond.satisfied
            && self.kp_cond.satisfied
            && self.ki_cond.satisfied
            && self.alpha1 > 0.0
            && self.alpha3 > 0.0
            && self.delta.is_finite()
    }

    /// Envelope on `|x(t)|` from an initial error norm `x0_norm`.
    pub fn envelope(&self, t: f64, x0_norm: f64) -> f64 {
        error_envelope(t, x0_norm, self)
    }
}

/// Eigenvalues (min, max) of the symmetric 2x2 matrix `[[a, b], [b, d]]`.
pub fn sym2_eigen(a: f64, b: f64, d: f64) -> (f64, f64) {
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mean - r, mean + r)
}

/// `(nu(P), mu(P))`. The eigenvalues of `P` increase with `M`, so the
/// extremes sit at the inertia extremes.
pub fn p_bounds(kp: f64, ki: f64, lambda: f64, norms: &SystemNorms) -> (f64, f64) {
    let lo = sym2_eigen(lambda * ki, 0.5 * kp, lambda * norms.nu_m).0;
    let hi = sym2_eigen(lambda * ki, 0.5 * kp, lambda * norms.mu_m).1;
    (lo, hi)
}

/// Smallest eigenvalue of the decay matrix `Q`.
pub fn q_lower(kp: f64, ki: f64, lambda: f64, norms: &SystemNorms) -> f64 {
    let (mu, nu) = (norms.mu_m, norms.nu_m);
    let s = kp / (2.0 * mu);
    let (lo, _) = sym2_eigen(nu * ki / (2.0 * mu), 0.5 * kp, (lambda - 1.0) * nu);
    s * lo
}

fn evaluate(input: &CertificateInput, mode: TubeMode) -> CertificateReport {
    let n = &input.norms;
    let (kp, ki, lam) = (input.kp, input.ki, input.lambda);
    let beta_r = match mode {
        TubeMode::Relative => input.beta,
        TubeMode::Absolute => 0.0,
    };
    let beta_a = match mode {
        TubeMode::Absolute => input.beta,
        TubeMode::Relative => 0.0,
    };
    let (alpha1, alpha2) = p_bounds(kp, ki, lam, n);
    let alpha3 = q_lower(kp, ki, lam, n);

    // lambda > kp^2 / (2 (1 - 2 beta_r) ki nu_M)
    let lam_factor = 1.0 - 2.0 * beta_r;
    let lam_required = if lam_factor > 0.0 {
        kp * kp / (2.0 * lam_factor * ki * n.nu_m)
    } else {
        f64::INFINITY
    };
    let lam_beta = 0.5 * (1.0 - kp * kp / (2.0 * ki * n.nu_m * lam));
    let lambda_cond = Condition::new(lam, lam_required, lam_beta);

    // kp > 2 mu_Lq omega0 / (1 - 1/lambda - 2 beta_r ki / lambda - sqrt(...))
    let root = if alpha1 > 0.0 {
        (n.epsilon * n.epsilon * alpha2 * n.mu_b / (lam * lam * alpha1 * n.nu_m)).sqrt()
    } else {
        f64::INFINITY
    };
    let base_margin = 1.0 - 1.0 / lam - root;
    let denom = base_margin - 2.0 * beta_r * ki / lam;
    let numer = 2.0 * n.mu_lq * input.omega0;
    let kp_required = if denom > 0.0 && lam > 0.0 { numer / denom } else { f64::INFINITY };
    let kp_beta = lam * (base_margin - numer / kp) / (2.0 * ki);
    let kp_cond = Condition::new(kp, kp_required, kp_beta);

    // ki > mu_M mu_B^2 omega0^2 / (2 (1 - beta_r) nu_M^2)
    let ki_numer = n.mu_m * n.mu_b * n.mu_b * input.omega0 * input.omega0;
    let ki_required = if beta_r < 1.0 {
        ki_numer / (2.0 * (1.0 - beta_r) * n.nu_m * n.nu_m)
    } else {
        f64::INFINITY
    };
    let ki_beta = 1.0 - ki_numer / (2.0 * n.nu_m * n.nu_m * ki);
    let ki_cond = Condition::new(ki, ki_required, ki_beta);

    let gain = (0.25 * kp * kp + lam * lam * n.mu_m * n.mu_m).sqrt();
    let alpha4 = gain * (input.alpha0 + (n.mu_b * input.omega0 + n.g0 + beta_a) / n.nu_m);
    let (delta, delta_per_beta) = if alpha1 > 0.0 && alpha3 > 0.0 {
        (
            alpha2 * alpha4 / (alpha1 * alpha3),
            alpha2 * gain / (n.nu_m * alpha1 * alpha3),
        )
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    CertificateReport {
        mode,
        lambda: lam,
        lambda_cond,
        kp_cond,
        ki_cond,
        alpha1,
        alpha2,
        alpha3,
        alpha4,
        delta,
        delta_per_beta,
    }
}

fn check_input(input: &CertificateInput) -> Result<()> {
    let vals = [input.kp, input.ki, input.lambda, input.beta, input.omega0, input.alpha0, input.theta0];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("certificate input"));
    }
    if !(input.lambda > 0.0) || !(input.ki > 0.0) || input.kp < 0.0 {
        return Err(Error::Config("certificate needs lambda > 0, ki > 0, kp >= 0".into()));
    }
    if input.beta < 0.0 || input.omega0 < 0.0 || input.alpha0 < 0.0 || input.theta0 < 0.0 {
        return Err(Error::Config("bounds and beta must be >= 0".into()));
    }
    Ok(())
}

/// Conditions and bound for an absolute tube of width `beta` (N m).
pub fn check_absolute(input: &CertificateInput) -> Result<CertificateReport> {
    check_input(input)?;
    Ok(evaluate(input, TubeMode::Absolute))
}

/// Conditions and bound for a relative tube of width `beta`.
pub fn check_relative(input: &CertificateInput) -> Result<CertificateReport> {
    check_input(input)?;
    Ok(evaluate(input, TubeMode::Relative))
}

pub fn check(input: &CertificateInput, mode: TubeMode) -> Result<CertificateReport> {
    match mode {
        TubeMode::Absolute => check_absolute(input),
        TubeMode::Relative => check_relative(input),
    }
}

/// `exp(-1/2 (alpha3/alpha2) t) (alpha2 / sqrt(alpha1)) |x0|^2 + delta`.
pub fn error_envelope(t: f64, x0_norm: f64, report: &CertificateReport) -> f64 {
    let rate = 0.5 * report.alpha3 / report.alpha2;
    (-rate * t).exp() * report.alpha2 / report.alpha1.sqrt() * x0_norm * x0_norm + report.delta
}

/// Log-spaced lambda candidates `[lambda_min (1 + 1e-6), span lambda_min]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaPolicy {
    pub points: usize,
    pub span: f64,
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        Self {
            points: 400,
            span: 100.0,
        }
    }
}

impl LambdaPolicy {
    pub fn grid(&self, lambda_min: f64) -> Vec<f64> {
        let lo = lambda_min * (1.0 + 1e-6);
        let hi = lambda_min * self.span;
        let n = self.points.max(2);
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    }

    /// Grid anchored at the lambda bound for this tube (at least 1, the
    /// smallest value for which the `kp` condition can hold).
    pub fn grid_for(&self, kp: f64, ki: f64, beta_r: f64, norms: &SystemNorms) -> Vec<f64> {
        let factor = (1.0 - 2.0 * beta_r).max(f64::MIN_POSITIVE);
        let lam_min = (kp * kp / (2.0 * factor * ki * norms.nu_m)).max(1.0);
        self.grid(lam_min)
    }
}

/// Runs `check` at every lambda of the policy grid and keeps the certified
/// report with the smallest `delta`; falls back to the smallest-`delta`
/// report when none certifies.
pub fn certify_with_policy(
    template: &CertificateInput,
    mode: TubeMode,
    policy: &LambdaPolicy,
) -> Result<CertificateReport> {
    let beta_r = if mode == TubeMode::Relative { template.beta } else { 0.0 };
    let grid = policy.grid_for(template.kp, template.ki, beta_r, &template.norms);
    let mut best: Option<CertificateReport> = None;
    for lambda in grid {
        let r = check(&CertificateInput { lambda, ..*template }, mode)?;
        best = Some(match best {
            None => r,
            Some(b) => {
                let better = match (r.certified(), b.certified()) {
                    (true, false) => true,
                    (false, true) => false,
                    _ => r.delta < b.delta,
                };
                if better {
                    r
                } else {
                    b
                }
            }
        });
    }
    best.ok_or_else(|| Error::Config("empty lambda grid".into()))
}

/// Reference bounds and the lambda candidates for a tube-width search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaSearch {
    pub omega0: f64,
    pub alpha0: f64,
    pub theta0: f64,
    /// Fixed candidates; feasibility at `beta` means some candidate certifies.
    pub lambdas: Vec<f64>,
    pub tol: f64,
}

impl BetaSearch {
    /// Candidates anchored at the `beta = 0` lambda bound.
    pub fn with_policy(gains: &PIGains, norms: &SystemNorms, omega0: f64, alpha0: f64, policy: &LambdaPolicy) -> Self {
        Self {
            omega0,
            alpha0,
            theta0: 0.0,
            lambdas: policy.grid_for(gains.kp, gains.ki, 0.0, norms),
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaMax {
    pub beta_max: f64,
    /// Lambda that certifies at `beta_max`, when one exists.
    pub lambda: Option<f64>,
    pub diagnostics: String,
}

/// Whether some candidate lambda certifies a relative tube of width `beta`.
pub fn relative_feasible(gains: &PIGains, norms: &SystemNorms, search: &BetaSearch, beta: f64) -> Option<f64> {
    search.lambdas.iter().copied().find(|&lambda| {
        let input = CertificateInput {
            kp: gains.kp,
            ki: gains.ki,
            lambda,
            beta,
            omega0: search.omega0,
            alpha0: search.alpha0,
            theta0: search.theta0,
            norms: *norms,
        };
        check_relative(&input).map(|r| r.certified()).unwrap_or(false)
    })
}

/// Largest relative tube width certified by some candidate lambda, by
/// bisection on `[0, 1/2)`. Every condition tightens as `beta` grows at fixed
/// lambda, so the feasible set is an interval starting at 0.
pub fn max_safe_beta(gains: &PIGains, norms: &SystemNorms, search: &BetaSearch) -> BetaMax {
    let Some(lam0) = relative_feasible(gains, norms, search, 0.0) else {
        return BetaMax {
            beta_max: 0.0,
            lambda: None,
            diagnostics: format!(
                "gains kp = {}, ki = {} are not certified at beta = 0 for any of {} lambda candidates",
                gains.kp,
                gains.ki,
                search.lambdas.len()
            ),
        };
    };
    let (mut lo, mut hi) = (0.0, 0.5);
    let mut lam = lam0;
    let tol = search.tol.max(1e-12) * 0.1;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match relative_feasible(gains, norms, search, mid) {
            Some(l) => {
                lo = mid;
                lam = l;
            }
            None => hi = mid,
        }
    }
    BetaMax {
        beta_max: lo,
        lambda: Some(lam),
        diagnostics: format!("bracket [{lo}, {hi}]"),
    }
}

/// Largest absolute tube width whose bound stays at or below `delta_cap`;
/// the bound is affine in the width. `None` when the report is not certified
/// or even zero width exceeds the cap.
pub fn max_absolute_beta(report_at_zero: &CertificateReport, delta_cap: f64) -> Option<f64> {
    if !report_at_zero.certified() || report_at_zero.delta > delta_cap {
        return None;
    }
    Some((delta_cap - report_at_zero.delta) / report_at_zero.delta_per_beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norms() -> SystemNorms {
        compute_norms(&PlantParams::table_i(), 4.0, 0.1, 3600).unwrap()
    }

    fn input(beta: f64) -> CertificateInput {
        CertificateInput {
            kp: 1.1,
            ki: 2.3,
            lambda: 30.0,
            beta,
            omega0: 2.0 * std::f64::consts::PI,
            alpha0: 0.0,
            theta0: 0.0,
            norms: norms(),
        }
    }

    #[test]
    fn constant_inertia_norms() {
        let p = PlantParams::table_i().crank_only();
        let n = compute_norms(&p, 4.0, 0.1, 720).unwrap();
        let m = p.crank_inertia();
        assert!((n.mu_m - m).abs() < 1e-15 && (n.nu_m - m).abs() < 1e-15);
        assert_eq!(n.mu_lq, 0.0);
        assert_eq!(n.mu_b, 0.0047);
    }

    #[test]
    fn small_grid_rejected() {
        assert!(compute_norms(&PlantParams::table_i(), 4.0, 0.1, 100).is_err());
    }

    #[test]
    fn zero_disturbance_gives_zero_delta() {
        let mut i = input(0.0);
        i.omega0 = 0.0;
        let r = check_absolute(&i).unwrap();
        assert_eq!(r.delta, 0.0);
    }

    #[test]
    fn relative_at_zero_equals_absolute_at_zero() {
        let a = check_absolute(&input(0.0)).unwrap();
        let r = check_relative(&input(0.0)).unwrap();
        assert_eq!(a.delta, r.delta);
        assert_eq!(a.lambda_cond, r.lambda_cond);
        assert_eq!(a.kp_cond, r.kp_cond);
        assert_eq!(a.ki_cond, r.ki_cond);
    }

    #[test]
    fn half_beta_makes_lambda_unsatisfiable() {
        let r = check_relative(&input(0.5)).unwrap();
        assert!(!r.lambda_cond.satisfied);
        assert!(r.lambda_cond.required.is_infinite());
        let r = check_relative(&input(0.49)).unwrap();
        let r2 = check_relative(&input(0.499)).unwrap();
        assert!(r2.lambda_cond.required > r.lambda_cond.required);
    }

    #[test]
    fn envelope_shape() {
        let r = check_relative(&input(0.1)).unwrap();
        let e0 = error_envelope(0.0, 0.3, &r);
        assert!((e0 - (r.alpha2 / r.alpha1.sqrt() * 0.09 + r.delta)).abs() < 1e-12);
        assert!((error_envelope(1e9, 0.3, &r) - r.delta).abs() < 1e-12);
        let half = 2.0 * r.alpha2 / r.alpha3;
        let t1 = error_envelope(half, 0.3, &r) - r.delta;
        let t2 = error_envelope(2.0 * half, 0.3, &r) - r.delta;
        assert!((t2 / t1 - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn eigen_of_diagonal() {
        assert_eq!(sym2_eigen(2.0, 0.0, 5.0), (2.0, 5.0));
    }
}
