//! Gain certificate for an experiment config: model norms, the report at
//! the configured tube and the largest certified relative tube.

use std::io::Write;
use std::path::Path;

use super::config::ExperimentConfig;
use crate::control::PIGains;
use crate::error::Result;
use crate::residual::TubeMode;
use crate::stability::{
    certify_with_policy, compute_norms, max_safe_beta, BetaMax, BetaSearch, CertificateInput,
    CertificateReport, Condition, SystemNorms,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Certification {
    pub gains: PIGains,
    pub mode: TubeMode,
    /// Tube width as certified (N m for absolute tubes).
    pub beta: f64,
    pub omega0: f64,
    pub alpha0: f64,
    pub norms: SystemNorms,
    pub report: CertificateReport,
    pub beta_max: BetaMax,
}

/// Certifies `gains` with the tube of `cfg.residual`. An absolute width in
/// peak-base units is resolved against `peak_base`.
pub fn certify_config(cfg: &ExperimentConfig, gains: PIGains, peak_base: f64) -> Result<Certification> {
    let st = &cfg.stability;
    let norms = compute_norms(&cfg.plant, st.eta, st.epsilon, st.norm_samples)?;
    let omega0 = cfg.reference.max_speed();
    let alpha0 = cfg.reference.max_accel();
    let resolved = cfg.residual.resolve(peak_base);
    let input = CertificateInput {
        kp: gains.kp,
        ki: gains.ki,
        lambda: 1.0,
        beta: resolved.beta,
        omega0,
        alpha0,
        theta0: st.theta0,
        norms,
    };
    let report = certify_with_policy(&input, resolved.mode, &st.lambda)?;
    let mut search = BetaSearch::with_policy(&gains, &norms, omega0, alpha0, &st.lambda);
    search.theta0 = st.theta0;
    search.tol = st.beta_tol;
    let beta_max = max_safe_beta(&gains, &norms, &search);
    Ok(Certification {
        gains,
        mode: resolved.mode,
        beta: resolved.beta,
        omega0,
        alpha0,
        norms,
        report,
        beta_max,
    })
}

fn condition_line(name: &str, c: &Condition) -> String {
    format!(
        "  {name:<7} {:<5} value {:.6e}  required > {:.6e}  beta limit {:.6}",
        if c.satisfied { "ok" } else { "FAIL" },
        c.value,
        c.required,
        c.beta_limit
    )
}

impl Certification {
    pub fn human_report(&self) -> String {
        let r = &self.report;
        let n = &self.norms;
        let mode = match self.mode {
            TubeMode::Absolute => "absolute",
            TubeMode::Relative => "relative",
        };
        let mut lines = vec![
            format!("gains          kp = {}, ki = {}", self.gains.kp, self.gains.ki),
            format!("tube           {mode}, beta = {}", self.beta),
            format!("reference      omega0 = {:.6} rad/s, alpha0 = {:.6} rad/s^2", self.omega0, self.alpha0),
            format!(
                "norms          M in [{:.6e}, {:.6e}], |dM/dpsi| <= {:.6e}, B = {:.6e}, |g| <= {:.6e}",
                n.nu_m, n.mu_m, n.mu_lq, n.mu_b, n.g0
            ),
            format!("               eta = {}, epsilon = {}", n.eta, n.epsilon),
            format!("lambda         {:.6} (smallest-bound point of the policy grid)", r.lambda),
            "conditions".to_string(),
            condition_line("lambda", &r.lambda_cond),
            condition_line("kp", &r.kp_cond),
            condition_line("ki", &r.ki_cond),
            format!(
                "alphas         {:.6e} {:.6e} {:.6e} {:.6e}",
                r.alpha1, r.alpha2, r.alpha3, r.alpha4
            ),
            format!("ultimate bound {:.6e}", r.delta),
            format!("certified      {}", r.certified()),
            format!("relative beta_max {:.6}", self.beta_max.beta_max),
        ];
        if self.beta_max.lambda.is_none() {
            lines.push(format!("  {}", self.beta_max.diagnostics));
        }
        lines.join("\n")
    }

    /// One-row CSV with the thresholds, alphas, bound and beta_max.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let r = &self.report;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "kp", "ki", "mode", "beta", "lambda", "lambda_required", "kp_required", "ki_required",
            "alpha1", "alpha2", "alpha3", "alpha4", "delta", "certified", "beta_max",
        ])?;
        let mode = match self.mode {
            TubeMode::Absolute => "absolute",
            TubeMode::Relative => "relative",
        };
        w.write_record([
            self.gains.kp.to_string(),
            self.gains.ki.to_string(),
            mode.to_string(),
            self.beta.to_string(),
            r.lambda.to_string(),
            r.lambda_cond.required.to_string(),
            r.kp_cond.required.to_string(),
            r.ki_cond.required.to_string(),
            r.alpha1.to_string(),
            r.alpha2.to_string(),
            r.alpha3.to_string(),
            r.alpha4.to_string(),
            r.delta.to_string(),
            r.certified().to_string(),
            self.beta_max.beta_max.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Writes `(t, e, de)` rows of a rollout trajectory.
pub fn write_trajectory(path: &Path, trajectory: &[(f64, f64, f64)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "t,e,de")?;
    for (t, e, de) in trajectory {
        writeln!(f, "{t},{e},{de}")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_gains_certify_and_report() {
        let cfg = ExperimentConfig::default();
        let c = certify_config(&cfg, cfg.base.gains(), 1.0).unwrap();
        assert_eq!(c.mode, TubeMode::Relative);
        let text = c.human_report();
        assert!(text.contains("beta_max"));
        // The reported width is certified iff it lies below beta_max.
        if c.report.certified() {
            assert!(c.beta <= c.beta_max.beta_max + cfg.stability.beta_tol);
        }
    }
}
