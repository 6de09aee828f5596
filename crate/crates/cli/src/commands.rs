//! Subcommand handlers, registered by name.

use std::collections::BTreeMap;

use lasalle_core::acceptance::run_all;
use lasalle_core::detect::{default_invariance_horizon, theorem3_pipeline, Consistency, DetectConfig, Theorem3Options};
use lasalle_core::integrate::{integrate, IntegratorConfig, Trajectory};
use lasalle_core::invariance::{
    approximate_invariant_set, barbalat_diagnostic, invariance_principle_check, omega_limit_estimate,
    sample_zero_set, set_distance, SetSample,
};
use lasalle_core::lyapunov::{check_hypotheses, Certificate, HypothesisOptions};
use lasalle_core::robust::{robust_verdict, sample_perturbations, RobustOptions, ShapeRegistry, ValidationWindow};
use lasalle_core::sampling::{norm, LowDiscrepancy};
use lasalle_core::Error;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::LoadedConfig;
use crate::output::{Envelope, OutDir, SCHEMA_VERSION};
use crate::CliError;

/// Everything a handler needs.
pub struct Context {
    pub config: LoadedConfig,
    pub seed: u64,
    pub out: OutDir,
    pub horizon: Option<f64>,
    pub tol: Option<f64>,
}

impl Context {
    fn sampler(&self) -> LowDiscrepancy {
        LowDiscrepancy::new(self.seed)
    }

    fn horizon_or(&self, default: f64) -> f64 {
        self.horizon.or(self.config.config.horizon).unwrap_or(default)
    }

    fn tol_or(&self, default: f64) -> f64 {
        self.tol.or(self.config.config.tol).unwrap_or(default)
    }

    fn integrator(&self, horizon: f64) -> IntegratorConfig {
        let s = &self.config.config.integrator;
        IntegratorConfig::new(horizon).with_tolerances(s.rel_tol, s.abs_tol).with_method(s.method.clone())
    }

    fn starts(&self, dim: usize, domain: f64) -> Vec<Vec<f64>> {
        let s = &self.config.config.starts;
        match &s.points {
            Some(p) => p.clone(),
            None => self.sampler().ball(dim, s.radius.unwrap_or(0.5 * domain), s.count),
        }
    }

    fn check_starts(&self, starts: &[Vec<f64>], dim: usize) -> Result<(), CliError> {
        match starts.iter().find(|p| p.len() != dim) {
            Some(p) => Err(CliError::Config(format!(
                "{}: initial point {p:?} has {} components, the system has {dim}",
                self.config.path,
                p.len()
            ))),
            None => Ok(()),
        }
    }

    fn envelope<T: Serialize>(&self, name: &'static str, horizons: Value, tolerances: Value, passed: bool, report: T) -> String {
        Envelope {
            schema_version: SCHEMA_VERSION,
            subcommand: name,
            config_hash: self.config.hash(),
            seed: self.seed,
            horizons,
            tolerances,
            passed,
            report,
        }
        .to_json()
    }
}

/// Whether all checks of the run passed.
pub type Outcome = bool;

pub trait Analysis: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, ctx: &Context) -> Result<Outcome, CliError>;
}

pub struct Registry {
    handlers: BTreeMap<&'static str, Box<dyn Analysis>>,
}

impl Registry {
    pub fn with_builtins() -> Self {
        let mut r = Self { handlers: BTreeMap::new() };
        r.register(Box::new(Simulate));
        r.register(Box::new(Hypotheses));
        r.register(Box::new(Invariance));
        r.register(Box::new(Detect));
        r.register(Box::new(Robust));
        r.register(Box::new(CorpusVerify));
        r
    }

    pub fn register(&mut self, a: Box<dyn Analysis>) {
        self.handlers.insert(a.name(), a);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Analysis> {
        self.handlers.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.handlers.keys().copied().collect()
    }
}

fn core(path: &str) -> impl Fn(Error) -> CliError + '_ {
    move |e| CliError::Core(format!("{path}: {e}"))
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

fn write_series(ctx: &Context, name: &str, traj: &Trajectory, cert: Option<&Certificate>, n: Option<&SetSample>) -> Result<(), CliError> {
    ctx.out.write_with(name, |w| {
        let io = |e: std::io::Error| CliError::Io(e.to_string());
        let mut header = vec!["t", "norm"];
        if cert.is_some() {
            header.push("v");
        }
        if n.is_some() {
            header.push("dist_n");
        }
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for k in traj.knots() {
            let mut row = vec![fmt(k.t), fmt(norm(&k.x))];
            if let Some(c) = cert {
                row.push(fmt(c.value(&k.x)));
            }
            if let Some(n) = n {
                row.push(fmt(set_distance(&k.x, n).map_err(core(&ctx.config.path))?));
            }
            writeln!(w, "{}", row.join(",")).map_err(io)?;
        }
        Ok(())
    })?;
    Ok(())
}

fn write_set(ctx: &Context, name: &str, s: &SetSample, dim: usize) -> Result<(), CliError> {
    ctx.out.write_with(name, |w| s.to_csv(w, dim).map_err(core(&ctx.config.path)))?;
    Ok(())
}

struct Simulate;

impl Analysis for Simulate {
    fn name(&self) -> &'static str {
        "simulate"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let field = ctx.config.field()?;
        let cert = match ctx.config.config.certificate {
            Some(_) => Some(ctx.config.certificate(field.dim())?),
            None => None,
        };
        let horizon = ctx.horizon_or(100.0);
        let cfg = ctx.integrator(horizon);
        cfg.validate().map_err(core(&ctx.config.path))?;
        let starts = ctx.starts(field.dim(), field.domain_radius());
        ctx.check_starts(&starts, field.dim())?;
        let mut runs = Vec::new();
        for (i, x0) in starts.iter().enumerate() {
            for (j, &t0) in ctx.config.config.starts.t0_grid.iter().enumerate() {
                let traj = integrate(&field, t0, x0, &cfg, &[]).map_err(core(&ctx.config.path))?;
                let stem = format!("traj_{i:03}_{j:02}");
                ctx.out.write_with(&format!("{stem}.csv"), |w| traj.to_csv(w).map_err(core(&ctx.config.path)))?;
                write_series(ctx, &format!("{stem}_series.csv"), &traj, cert.as_ref(), None)?;
                runs.push(json!({
                    "start": i,
                    "t0": t0,
                    "x0": x0,
                    "termination": traj.terminated(),
                    "final_time": traj.final_time(),
                    "final_state": traj.final_state(),
                    "knots": traj.knots().len(),
                    "trajectory_csv": format!("{stem}.csv"),
                    "series_csv": format!("{stem}_series.csv"),
                }));
            }
        }
        let text = ctx.envelope(
            "simulate",
            json!({ "horizon": horizon }),
            json!({ "rel_tol": cfg.rel_tol, "abs_tol": cfg.abs_tol }),
            true,
            json!({ "system": field.name(), "runs": runs }),
        );
        ctx.out.write_str("simulate.json", &text)?;
        Ok(true)
    }
}

struct Hypotheses;

impl Analysis for Hypotheses {
    fn name(&self) -> &'static str {
        "hypotheses"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let field = ctx.config.field()?;
        let cert = ctx.config.certificate(field.dim())?;
        let h = &ctx.config.config.hypotheses;
        let mut opts = HypothesisOptions::new(h.radius.unwrap_or(field.domain_radius()));
        opts.samples = h.samples;
        opts.t_range = h.t_range;
        opts.t_samples = h.t_samples;
        opts.zero_set_tol = ctx.config.config.invariance.zero_set_tol;
        opts.zero_set_budget = ctx.config.config.invariance.zero_set_budget;
        if opts.radius > field.domain_radius() {
            return Err(CliError::Config(format!(
                "{}: hypotheses.radius {} exceeds the domain radius {}",
                ctx.config.path,
                opts.radius,
                field.domain_radius()
            )));
        }
        let r = check_hypotheses(&cert, &field, &opts, &ctx.sampler());
        let passed = r.h1.passed() && r.h2.passed() && r.h3.passed();
        let text = ctx.envelope(
            "hypotheses",
            json!({ "t_range": opts.t_range }),
            json!({ "h1": r.h1.tolerance, "h2": r.h2.tolerance, "h3": r.h3.tolerance, "zero_set": opts.zero_set_tol }),
            passed,
            &r,
        );
        ctx.out.write_str("hypotheses.json", &text)?;
        Ok(passed)
    }
}

struct Invariance;

impl Analysis for Invariance {
    fn name(&self) -> &'static str {
        "invariance"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let path = &ctx.config.path;
        let field = ctx.config.field()?;
        let dim = field.dim();
        let cert = ctx.config.certificate(dim)?;
        let inv = &ctx.config.config.invariance;
        let sampler = ctx.sampler();
        let w = cert.bound_fn();
        let e = sample_zero_set(&*w, dim, field.domain_radius(), inv.zero_set_tol, inv.zero_set_budget, &sampler);
        let n_horizon = inv.n_horizon.unwrap_or_else(|| default_invariance_horizon(&field, &e));
        let n = approximate_invariant_set(&field, &e, w, n_horizon, inv.zero_set_tol).map_err(core(path))?;
        let horizon = ctx.horizon_or(200.0);
        let cfg = ctx.integrator(horizon);
        let starts = ctx.starts(dim, field.domain_radius());
        ctx.check_starts(&starts, dim)?;
        let t0_grid = &ctx.config.config.starts.t0_grid;
        let check = if n.is_empty() {
            None
        } else {
            Some(invariance_principle_check(&field, &n, &starts, t0_grid, &cfg).map_err(core(path))?)
        };

        let mut omega_rows = Vec::new();
        let mut per_start = Vec::new();
        for (i, x0) in starts.iter().enumerate() {
            let traj = integrate(&field, t0_grid[0], x0, &cfg, &[]).map_err(core(path))?;
            let omega = match omega_limit_estimate(&traj, inv.tail_fraction, inv.cluster_radius) {
                Ok(s) => Some(s),
                Err(Error::Inconclusive(_)) => None,
                Err(e) => return Err(core(path)(e)),
            };
            if let Some(o) = &omega {
                omega_rows.extend(o.points().iter().map(|p| (i, p.clone())));
            }
            write_series(ctx, &format!("distance_{i:03}.csv"), &traj, Some(&cert), (!n.is_empty()).then_some(&n))?;
            per_start.push(json!({
                "start": i,
                "x0": x0,
                "termination": traj.terminated(),
                "omega_points": omega.as_ref().map(SetSample::len),
                "barbalat": barbalat_diagnostic(&traj, &cert, &field),
            }));
        }
        write_set(ctx, "E.csv", &e, dim)?;
        write_set(ctx, "N.csv", &n, dim)?;
        ctx.out.write_with("omega.csv", |w| {
            let io = |e: std::io::Error| CliError::Io(e.to_string());
            let cols: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
            writeln!(w, "start,{}", cols.join(",")).map_err(io)?;
            for (i, p) in &omega_rows {
                let vals: Vec<String> = p.iter().map(|v| fmt(*v)).collect();
                writeln!(w, "{i},{}", vals.join(",")).map_err(io)?;
            }
            Ok(())
        })?;
        let passed = check.as_ref().is_some_and(|c| c.verdict.passed());
        let text = ctx.envelope(
            "invariance",
            json!({ "run": horizon, "n_filter": n_horizon }),
            json!({
                "zero_set": inv.zero_set_tol,
                "rel_tol": cfg.rel_tol,
                "abs_tol": cfg.abs_tol,
                "threshold": check.as_ref().map(|c| c.threshold),
            }),
            passed,
            json!({
                "e": e.metadata(),
                "n": n.metadata(),
                "check": check,
                "starts": per_start,
            }),
        );
        ctx.out.write_str("invariance.json", &text)?;
        Ok(passed)
    }
}

struct Detect;

impl Analysis for Detect {
    fn name(&self) -> &'static str {
        "detect"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let sys = ctx.config.control()?;
        let cert = ctx.config.certificate(sys.dim())?;
        let d = &ctx.config.config.detect;
        let inv = &ctx.config.config.invariance;
        let cfg = DetectConfig {
            eps0: d.eps0,
            horizon: ctx.horizon_or(1e4),
            tol: ctx.tol_or(0.05),
            delta_resolution: d.delta_resolution,
            stability_horizon: d.stability_horizon,
            tube_tol: inv.zero_set_tol,
            t0_grid: ctx.config.config.starts.t0_grid.clone(),
        };
        if let Some(e) = d.eps0 {
            if e > sys.domain_radius() {
                return Err(CliError::Config(format!("{}: detect.eps0 exceeds the domain radius", ctx.config.path)));
            }
        }
        let opts = Theorem3Options {
            q: d.q,
            residual_samples: d.residual_samples,
            kernel_tol: inv.zero_set_tol,
            kernel_budget: inv.zero_set_budget,
            invariance_horizon: inv.n_horizon,
            detect: cfg.clone(),
            stability_eps: None,
            attractivity_radius: None,
        };
        let r = theorem3_pipeline(&sys, &cert, &opts, &ctx.sampler()).map_err(core(&ctx.config.path))?;
        let passed = r.detectability.strong_zsd.passed() && r.asymptotically_stable && r.consistency == Consistency::Consistent;
        let text = ctx.envelope(
            "detect",
            json!({ "attractivity": cfg.horizon, "stability": cfg.stability_horizon, "invariance": r.invariance_horizon }),
            json!({ "target": cfg.tol, "tube": cfg.tube_tol, "residual": lasalle_core::detect::RESIDUAL_TOL }),
            passed,
            &r,
        );
        ctx.out.write_str("detect.json", &text)?;
        Ok(passed)
    }
}

struct Robust;

impl Analysis for Robust {
    fn name(&self) -> &'static str {
        "robust"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let path = &ctx.config.path;
        let sys = ctx.config.control()?;
        let cert = ctx.config.certificate(sys.dim())?;
        let phi = ctx.config.feedback()?;
        let rs = ctx.config.robust()?;
        let spec = rs.perturbation_spec(ctx.seed);
        if rs.ball_radius > sys.domain_radius() {
            return Err(CliError::Config(format!("{path}: robust.ball_radius exceeds the domain radius")));
        }
        let opts = RobustOptions {
            ball_radius: rs.ball_radius,
            horizon: ctx.horizon_or(1e4),
            tol: ctx.tol_or(0.05),
            t0_grid: ctx.config.config.starts.t0_grid.clone(),
            delta_resolution: rs.delta_resolution,
            stability_horizon: rs.stability_horizon,
            window: ValidationWindow::default(),
        };
        let family = sample_perturbations(&spec, &phi, &ShapeRegistry::with_builtins(), opts.window).map_err(core(path))?;
        let sampler = ctx.sampler();
        let r = robust_verdict(&sys, &phi, &cert, &spec, &family, &opts, &sampler).map_err(core(path))?;
        let passed = r.verdict.passed() && r.h2_chain_held;
        let text = ctx.envelope(
            "robust",
            json!({ "attractivity": opts.horizon, "stability": opts.stability_horizon }),
            json!({ "target": opts.tol, "chain_slack": lasalle_core::robust::CHAIN_SLACK, "sector_margin": lasalle_core::robust::SECTOR_MARGIN }),
            passed,
            &r,
        );
        ctx.out.write_str("robust.json", &text)?;
        Ok(passed)
    }
}

struct CorpusVerify;

impl Analysis for CorpusVerify {
    fn name(&self) -> &'static str {
        "corpus-verify"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let r = run_all(ctx.seed);
        for c in &r.criteria {
            eprintln!("{}", c.line());
        }
        let text = ctx.envelope("corpus-verify", json!({}), json!({}), r.all_passed, &r);
        ctx.out.write_str("corpus-verify.json", &text)?;
        Ok(r.all_passed)
    }
}
