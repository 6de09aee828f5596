//! Zero-state detectability of an output pair `(h, f)` and the equivalence
//! between strong detectability and asymptotic stability for certificates
//! solving the nonlinear Liapunov equation or inequality.

use std::sync::Arc;

use log::{error, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::dynsys::{AffineControlSystem, StateFn, TimeVaryingField};
use crate::error::Result;
use crate::integrate::{integrate, IntegratorConfig, Termination};
use crate::invariance::{
    approximate_invariant_set, attractivity_probe, sample_zero_set, uniform_stability_probe, ProbeConfig,
    SetSample, StabilityStatus, StabilityVerdict, StartSet, Tube,
};
use crate::lyapunov::{check_h1, liapunov_residual, Certificate};
use crate::sampling::{norm, LowDiscrepancy};
use crate::verdict::{Status, Verdict, Witness, WorstCase};

/// Residual magnitude separating the Liapunov equation from the inequality.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Settings shared by the detectability verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct DetectConfig {
    /// Only starts with `‖x0‖ < eps0` are used. Defaults to half the domain
    /// radius.
    pub eps0: Option<f64>,
    pub horizon: f64,
    pub tol: f64,
    pub delta_resolution: f64,
    /// Stability horizon for the restricted ε-δ probe.
    pub stability_horizon: f64,
    /// Starts of the restricted dynamics are dropped once `|h| > tube_tol`.
    pub tube_tol: f64,
    pub t0_grid: Vec<f64>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            eps0: None,
            horizon: 1e4,
            tol: 0.05,
            delta_resolution: 0.05,
            stability_horizon: 100.0,
            tube_tol: 1e-10,
            t0_grid: vec![0.0],
        }
    }
}

impl DetectConfig {
    pub fn eps0_for(&self, system: &AffineControlSystem) -> f64 {
        self.eps0.unwrap_or(0.5 * system.domain_radius())
    }
}

/// Samples `E = ker h = {|h| ≤ tol}` in the domain ball.
pub fn kernel_sample(system: &AffineControlSystem, tol: f64, budget: usize, sampler: &LowDiscrepancy) -> SetSample {
    let h = system.output_fn();
    sample_zero_set(&*h, system.dim(), system.domain_radius(), tol, budget, sampler)
}

/// Default horizon for the invariant-set filter: ten times the slowest
/// decay timescale `‖x‖ / ‖f(x)‖` observed on the sample, limited to `[1, 100]`.
pub fn default_invariance_horizon(field: &TimeVaryingField, sample: &SetSample) -> f64 {
    let floor = 0.1 * field.domain_radius();
    let slowest = sample
        .points()
        .iter()
        .filter(|p| norm(p) >= floor)
        .map(|p| {
            let speed = norm(&field.eval(0.0, p));
            if speed > 0.0 {
                norm(p) / speed
            } else {
                f64::INFINITY
            }
        })
        .fold(0.1, f64::max);
    (10.0 * slowest).clamp(1.0, 100.0)
}

/// `N`: the maximal positive invariant subset of `ker h`, as a filtered cloud.
pub fn invariant_kernel(system: &AffineControlSystem, e: &SetSample, horizon: f64, tube_tol: f64) -> Result<SetSample> {
    approximate_invariant_set(system.drift(), e, system.output_fn(), horizon, tube_tol)
}

fn tube(system: &AffineControlSystem, tol: f64) -> Tube {
    let h: Arc<StateFn> = system.output_fn();
    Tube { w: h, tol }
}

/// Zero-state detectability at `eps0`: every start of `n_sample` with
/// `‖x0‖ < eps0` must reach `‖x(t0 + horizon)‖ < tol`. Starts that leave
/// the `ker h` tube are dropped with a warning.
pub fn zsd_verdict(system: &AffineControlSystem, n_sample: &SetSample, cfg: &DetectConfig) -> Result<Verdict> {
    let eps0 = cfg.eps0_for(system);
    let starts: Vec<(f64, &Vec<f64>)> = cfg
        .t0_grid
        .iter()
        .flat_map(|&t0| n_sample.points().iter().filter(|p| norm(p) < eps0).map(move |p| (t0, p)))
        .collect();
    if starts.is_empty() {
        return Ok(Verdict::new("zsd", Status::Inconclusive, cfg.tol, 0).with_note("no start of N inside eps0"));
    }
    let icfg = IntegratorConfig::new(cfg.horizon);
    let tb = tube(system, cfg.tube_tol);
    let finals: Vec<Option<f64>> = starts
        .par_iter()
        .map(|&(t0, x0)| -> Result<Option<f64>> {
            let traj = integrate(system.drift(), t0, x0, &icfg, &[])?;
            if !traj.knots().iter().all(|k| (tb.w)(&k.x).abs() <= tb.tol) {
                warn!("zsd start {x0:?} left the ker h tube; dropped");
                return Ok(None);
            }
            Ok(Some(match traj.terminated() {
                Termination::HorizonReached => norm(traj.final_state()),
                _ => f64::INFINITY,
            }))
        })
        .collect::<Result<_>>()?;
    let mut worst = WorstCase::default();
    let mut used = 0;
    for (&(t0, x0), f) in starts.iter().zip(&finals) {
        if let Some(n) = *f {
            used += 1;
            if !(n < cfg.tol) {
                worst.offer(n, || Witness::at_time(x0, t0, n));
            }
        }
    }
    let status = if used == 0 {
        Status::Inconclusive
    } else if worst.magnitude().is_some() {
        Status::Fail
    } else {
        Status::Pass
    };
    Ok(Verdict::new("zsd", status, cfg.tol, used).with_witness(worst.into_witness()))
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectabilityReport {
    pub zsd: Verdict,
    pub strong_zsd: Verdict,
    pub restricted_stability: StabilityVerdict,
    pub restricted_attractivity: StabilityVerdict,
    pub eps0: f64,
    pub n_points: usize,
}

impl DetectabilityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Strong zero-state detectability: zero-state detectability together with
/// stability of the dynamics restricted to `N`.
pub fn strong_zsd_verdict(
    system: &AffineControlSystem,
    n_sample: &SetSample,
    cfg: &DetectConfig,
    sampler: &LowDiscrepancy,
) -> Result<DetectabilityReport> {
    let eps0 = cfg.eps0_for(system);
    let zsd = zsd_verdict(system, n_sample, cfg)?;
    let starts = StartSet::Cloud {
        sample: n_sample.clone(),
        tube: Some(tube(system, cfg.tube_tol)),
    };
    let stab_cfg = ProbeConfig::new(cfg.stability_horizon).with_t0_grid(cfg.t0_grid.clone());
    let eps_list = [0.25 * eps0, 0.5 * eps0, eps0];
    let restricted_stability =
        uniform_stability_probe(system.drift(), &eps_list, cfg.delta_resolution, &starts, &stab_cfg, sampler)?;
    let attr_cfg = ProbeConfig::new(cfg.horizon).with_t0_grid(cfg.t0_grid.clone());
    let restricted_attractivity = attractivity_probe(system.drift(), eps0, cfg.tol, &starts, &attr_cfg, sampler)?;

    let status = match zsd.status {
        Status::Fail => Status::Fail,
        Status::Inconclusive => Status::Inconclusive,
        Status::Pass => match restricted_stability.status {
            StabilityStatus::Stable => Status::Pass,
            StabilityStatus::Unstable => Status::Fail,
            _ => Status::Inconclusive,
        },
    };
    let mut strong = Verdict::new("strong_zsd", status, cfg.tol, zsd.samples + restricted_stability.starts);
    if zsd.failed() {
        strong = strong.with_witness(zsd.witness.clone()).with_note("restricted dynamics not attractive");
    } else if let Some(w) = &restricted_stability.escape_witness {
        strong = strong
            .with_witness(Some(Witness::at_time(&w.x0, w.t0, w.escape_time)))
            .with_note("restricted dynamics not stable");
    }
    Ok(DetectabilityReport {
        zsd,
        strong_zsd: strong,
        restricted_stability,
        restricted_attractivity,
        eps0,
        n_points: n_sample.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualClass {
    /// `|∇V·f + |h|^q| ≤ 1e-10` on the sample.
    Equation,
    /// `∇V·f + |h|^q ≤ 1e-10` on the sample.
    Inequality,
    Violated,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualSweep {
    pub class: ResidualClass,
    pub max_abs: f64,
    pub max: f64,
    pub samples: usize,
    pub witness: Option<Witness>,
}

/// Evaluates the Liapunov residual on `samples` points of the domain ball.
pub fn residual_sweep(
    cert: &Certificate,
    system: &AffineControlSystem,
    q: f64,
    samples: usize,
    sampler: &LowDiscrepancy,
) -> ResidualSweep {
    let pts = sampler.ball(system.dim(), system.domain_radius(), samples);
    let res: Vec<f64> = pts.par_iter().map(|x| liapunov_residual(cert, system, q, x)).collect();
    let mut worst = WorstCase::default();
    let (mut max_abs, mut max) = (0.0f64, f64::NEG_INFINITY);
    for (x, &r) in pts.iter().zip(&res) {
        let r = if r.is_nan() { f64::INFINITY } else { r };
        max_abs = max_abs.max(r.abs());
        max = max.max(r);
        worst.offer(r, || Witness::at(x, r));
    }
    let class = if max_abs <= RESIDUAL_TOL {
        ResidualClass::Equation
    } else if max <= RESIDUAL_TOL {
        ResidualClass::Inequality
    } else {
        ResidualClass::Violated
    };
    ResidualSweep {
        class,
        max_abs,
        max,
        samples: pts.len(),
        witness: worst.into_witness(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Consistency {
    Consistent,
    /// Observed behaviour contradicts the equivalence: a toolkit-level alarm.
    Inconsistent,
    /// No valid certificate, so the equivalence says nothing.
    NotApplicable,
    /// Some verdict was inconclusive.
    Undetermined,
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem3Options {
    pub q: f64,
    pub residual_samples: usize,
    pub kernel_tol: f64,
    pub kernel_budget: usize,
    /// Horizon of the invariant-set filter; see [`default_invariance_horizon`].
    pub invariance_horizon: Option<f64>,
    pub detect: DetectConfig,
    /// ε for the full-dynamics stability probe; defaults to `eps0`.
    pub stability_eps: Option<f64>,
    /// Ball of the full-dynamics attractivity probe; defaults to `eps0`.
    pub attractivity_radius: Option<f64>,
}

impl Default for Theorem3Options {
    fn default() -> Self {
        Self {
            q: 2.0,
            residual_samples: 10_000,
            kernel_tol: 1e-10,
            kernel_budget: 200,
            invariance_horizon: None,
            detect: DetectConfig::default(),
            stability_eps: None,
            attractivity_radius: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem3Report {
    pub residual: ResidualSweep,
    pub h1: Verdict,
    pub certificate_valid: bool,
    pub invariance_horizon: f64,
    pub detectability: DetectabilityReport,
    pub stability: StabilityVerdict,
    pub attractivity: StabilityVerdict,
    pub asymptotically_stable: bool,
    pub consistency: Consistency,
    pub summary: String,
}

impl Theorem3Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Residual sweep, certificate check, strong detectability and full-dynamics
/// probes, followed by a check that the observations agree with
/// "strong z.s.d. ⟺ asymptotic stability" whenever the certificate is valid.
pub fn theorem3_pipeline(
    system: &AffineControlSystem,
    cert: &Certificate,
    opts: &Theorem3Options,
    sampler: &LowDiscrepancy,
) -> Result<Theorem3Report> {
    let residual = residual_sweep(cert, system, opts.q, opts.residual_samples, sampler);
    let h1 = check_h1(cert, system.domain_radius(), opts.residual_samples, sampler);
    let certificate_valid = h1.passed() && residual.class != ResidualClass::Violated;

    let e = kernel_sample(system, opts.kernel_tol, opts.kernel_budget, sampler);
    let invariance_horizon = opts
        .invariance_horizon
        .unwrap_or_else(|| default_invariance_horizon(system.drift(), &e));
    let n = invariant_kernel(system, &e, invariance_horizon, opts.detect.tube_tol)?;
    let detectability = strong_zsd_verdict(system, &n, &opts.detect, sampler)?;

    let eps0 = detectability.eps0;
    let t0 = opts.detect.t0_grid.clone();
    let stability = uniform_stability_probe(
        system.drift(),
        &[opts.stability_eps.unwrap_or(eps0)],
        opts.detect.delta_resolution,
        &StartSet::Sampled,
        &ProbeConfig::new(opts.detect.stability_horizon).with_t0_grid(t0.clone()),
        sampler,
    )?;
    let attractivity = attractivity_probe(
        system.drift(),
        opts.attractivity_radius.unwrap_or(eps0),
        opts.detect.tol,
        &StartSet::Sampled,
        &ProbeConfig::new(opts.detect.horizon).with_t0_grid(t0),
        sampler,
    )?;
    let asymptotically_stable = stability.is(StabilityStatus::Stable) && attractivity.is(StabilityStatus::Attractive);
    let undetermined = detectability.strong_zsd.status == Status::Inconclusive
        || stability.is(StabilityStatus::Inconclusive)
        || attractivity.is(StabilityStatus::Inconclusive);

    let (consistency, summary) = if !certificate_valid {
        (Consistency::NotApplicable, "no valid certificate; the detectability theorem is not applicable".to_string())
    } else if undetermined {
        (Consistency::Undetermined, "an inconclusive verdict prevents the comparison".to_string())
    } else if detectability.strong_zsd.passed() == asymptotically_stable {
        let what = if asymptotically_stable {
            "strong z.s.d. observed and the equilibrium is asymptotically stable"
        } else {
            "strong z.s.d. fails and the equilibrium is not asymptotically stable"
        };
        (Consistency::Consistent, what.to_string())
    } else {
        error!(
            "observed strong z.s.d. = {} but asymptotic stability = {asymptotically_stable}",
            detectability.strong_zsd.passed()
        );
        (
            Consistency::Inconsistent,
            "strong z.s.d. and observed asymptotic stability disagree".to_string(),
        )
    };
    Ok(Theorem3Report {
        residual,
        h1,
        certificate_valid,
        invariance_horizon,
        detectability,
        stability,
        attractivity,
        asymptotically_stable,
        consistency,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{corpus_get, CorpusOptions};
    use crate::invariance::SetLabel;

    fn example2() -> AffineControlSystem {
        corpus_get("example2", &CorpusOptions::default()).unwrap().system.control().unwrap().clone()
    }

    fn example1_pair() -> AffineControlSystem {
        let f = corpus_get("example1", &CorpusOptions::default()).unwrap().system.field().clone();
        AffineControlSystem::inputless("example1", f, |x| x[1] * x[1])
    }

    fn axis(half: f64, count: usize) -> SetSample {
        SetSample::new(
            (0..count).map(|k| vec![-half + 2.0 * half * k as f64 / (count - 1) as f64, 0.0]).collect(),
            1e-10,
            SetLabel::N,
        )
    }

    #[test]
    fn example2_is_strongly_detectable() {
        let sys = example2();
        let cfg = DetectConfig { eps0: Some(1.0), ..Default::default() };
        let n = axis(1.0, 21);
        assert!(zsd_verdict(&sys, &n, &cfg).unwrap().passed());
        let r = strong_zsd_verdict(&sys, &n, &cfg, &LowDiscrepancy::new(0)).unwrap();
        assert!(r.strong_zsd.passed(), "{:?}", r.strong_zsd);
        assert!(r.restricted_stability.is(StabilityStatus::Stable));
        assert!(r.restricted_attractivity.is(StabilityStatus::Attractive));
    }

    #[test]
    fn kernel_of_definite_output_is_the_origin() {
        let f = TimeVaryingField::from_exprs("decay", &["-x1", "-x2"]).unwrap();
        let sys = AffineControlSystem::inputless("def", f, |x| x[0] * x[0] + x[1] * x[1]);
        let e = kernel_sample(&sys, 1e-12, 100, &LowDiscrepancy::new(0));
        assert!(e.points().iter().all(|p| norm(p) < 1e-6));
        let cfg = DetectConfig { horizon: 10.0, ..Default::default() };
        let n = invariant_kernel(&sys, &e, 10.0, 1e-10).unwrap();
        assert!(!n.is_empty());
        assert!(zsd_verdict(&sys, &n, &cfg).unwrap().passed());
        let r = strong_zsd_verdict(&sys, &n, &cfg, &LowDiscrepancy::new(0)).unwrap();
        assert!(r.strong_zsd.passed());
    }

    #[test]
    fn identity_flow_with_zero_output_fails() {
        let f = TimeVaryingField::from_exprs("still", &["0", "0"]).unwrap();
        let sys = AffineControlSystem::inputless("still", f, |_| 0.0);
        let e = kernel_sample(&sys, 1e-12, 50, &LowDiscrepancy::new(0));
        assert_eq!(e.len(), 50);
        let cfg = DetectConfig { horizon: 10.0, ..Default::default() };
        let v = zsd_verdict(&sys, &e, &cfg).unwrap();
        assert!(v.failed());
        assert!(v.witness.is_some());
    }

    #[test]
    fn example1_kernel_not_attractive() {
        let sys = example1_pair();
        let cfg = DetectConfig { horizon: 100.0, ..Default::default() };
        let r = strong_zsd_verdict(&sys, &axis(1.0, 21), &cfg, &LowDiscrepancy::new(0)).unwrap();
        assert!(r.zsd.failed());
        assert!(r.strong_zsd.failed());
        assert!(r.restricted_stability.is(StabilityStatus::Stable));
    }

    #[test]
    fn empty_sample_is_inconclusive() {
        let empty = SetSample::new(Vec::new(), 1e-10, SetLabel::N);
        let v = zsd_verdict(&example2(), &empty, &DetectConfig::default()).unwrap();
        assert_eq!(v.status, Status::Inconclusive);
    }

    #[test]
    fn residual_classes() {
        let s = LowDiscrepancy::new(0);
        let half = Certificate::from_exprs("x2^2/2", 2, "x2^2/2", "-x2^4").unwrap();
        let r = residual_sweep(&half, &example2(), 2.0, 10_000, &s);
        assert_eq!(r.class, ResidualClass::Equation);
        assert!(r.max_abs < 1e-10);
        let v = Certificate::from_exprs("y^2", 2, "x2^2", "-2*x2^4").unwrap();
        let r = residual_sweep(&v, &example1_pair(), 2.0, 2000, &s);
        assert_eq!(r.class, ResidualClass::Inequality);
        // residual is -y^4
        let w = r.witness.unwrap();
        assert!((w.magnitude + w.x[1].powi(4)).abs() < 1e-15);
    }

    #[test]
    fn pipeline_on_example2_is_consistent() {
        let sys = example2();
        let cert = Certificate::from_exprs("x2^2/2", 2, "x2^2/2", "-x2^4").unwrap();
        let opts = Theorem3Options {
            residual_samples: 2000,
            kernel_budget: 60,
            detect: DetectConfig { eps0: Some(0.5), ..Default::default() },
            ..Default::default()
        };
        let r = theorem3_pipeline(&sys, &cert, &opts, &LowDiscrepancy::new(0)).unwrap();
        assert_eq!(r.residual.class, ResidualClass::Equation);
        assert!(r.certificate_valid);
        assert!(r.detectability.strong_zsd.passed());
        assert!(r.asymptotically_stable, "{:?} {:?}", r.stability.status, r.attractivity.status);
        assert_eq!(r.consistency, Consistency::Consistent);
    }

    #[test]
    fn pipeline_on_example1_is_consistent() {
        let sys = example1_pair();
        let cert = Certificate::from_exprs("y^2", 2, "x2^2", "-2*x2^4").unwrap();
        let opts = Theorem3Options {
            residual_samples: 2000,
            kernel_budget: 40,
            detect: DetectConfig { eps0: Some(0.6), horizon: 200.0, delta_resolution: 0.1, stability_horizon: 400.0, ..Default::default() },
            ..Default::default()
        };
        let r = theorem3_pipeline(&sys, &cert, &opts, &LowDiscrepancy::new(0)).unwrap();
        assert_eq!(r.residual.class, ResidualClass::Inequality);
        assert!(r.detectability.strong_zsd.failed());
        assert!(r.stability.is(StabilityStatus::Unstable));
        assert_eq!(r.consistency, Consistency::Consistent);
    }

    #[test]
    fn pipeline_without_certificate_is_not_applicable() {
        let f = TimeVaryingField::from_exprs("decay", &["-x1", "-x2"]).unwrap();
        let sys = AffineControlSystem::inputless("decay", f, |x| norm(x));
        let cert = Certificate::from_exprs("zero", 2, "0", "0").unwrap();
        let opts = Theorem3Options {
            residual_samples: 500,
            kernel_budget: 20,
            detect: DetectConfig { horizon: 20.0, stability_horizon: 20.0, ..Default::default() },
            ..Default::default()
        };
        let r = theorem3_pipeline(&sys, &cert, &opts, &LowDiscrepancy::new(0)).unwrap();
        assert_eq!(r.residual.class, ResidualClass::Violated);
        assert_eq!(r.consistency, Consistency::NotApplicable);
        assert!(r.summary.contains("not applicable"));
    }
}
