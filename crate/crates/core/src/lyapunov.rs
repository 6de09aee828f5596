//! Certificates `(V, ∇V, W)` and sampled checks of the three hypotheses:
//!
//! * H1: `V ≥ 0` on the domain and `V(0) = 0`;
//! * H2: `∇V(x)·f(t, x) ≤ W(x) ≤ 0`;
//! * H3: `f` restricted to the zero set `E = {W = 0}` does not depend on `t`.
//!
//! Also the residual `∇V·f + |h|^q` of the nonlinear Liapunov equation for an
//! output pair `(h, f)`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::dynsys::{AffineControlSystem, InputFn, StateFn, TimeVaryingField};
use crate::error::{Error, Result};
use crate::expr::parse_state_expr;
use crate::invariance::{sample_zero_set, SetSample};
use crate::sampling::{dot, norm, LowDiscrepancy};
use crate::verdict::{Status, Verdict, Witness, WorstCase};

/// Slack allowed in the H2 inequality `dV/dt ≤ W`.
pub const H2_SLACK: f64 = 1e-10;
/// Slack allowed in `W ≤ 0`.
pub const W_SLACK: f64 = 1e-12;
/// Slack allowed in `V ≥ 0`.
pub const H1_SLACK: f64 = 1e-12;
/// `V(0)` must vanish to this precision.
pub const ORIGIN_TOL: f64 = 1e-14;
/// Relative time-invariance tolerance on the zero set.
pub const H3_TOL: f64 = 1e-10;
/// Mixed tolerance for supplied gradients against central differences.
pub const GRADIENT_TOL: f64 = 1e-6;

/// A candidate Liapunov-like function `V`, optionally with its gradient,
/// together with the bound function `W` of the H2 inequality.
#[derive(Clone)]
pub struct Certificate {
    name: String,
    dim: usize,
    value: Arc<StateFn>,
    gradient: Option<Arc<InputFn>>,
    bound: Arc<StateFn>,
}

impl fmt::Debug for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Certificate")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("gradient", &self.gradient.is_some())
            .finish()
    }
}

impl Certificate {
    pub fn new<V, W>(name: impl Into<String>, dim: usize, value: V, bound: W) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        W: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            value: Arc::new(value),
            gradient: None,
            bound: Arc::new(bound),
        }
    }

    pub fn with_gradient<G>(mut self, gradient: G) -> Self
    where
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn with_bound<W>(mut self, bound: W) -> Self
    where
        W: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.bound = Arc::new(bound);
        self
    }

    /// `V` and `W` from expressions over `x1..xn`. The gradient of `V` is
    /// obtained by forward-mode differentiation of the expression.
    pub fn from_exprs(name: impl Into<String>, dim: usize, value: &str, bound: &str) -> Result<Self> {
        let v = parse_state_expr(value, dim)?;
        let w = parse_state_expr(bound, dim)?;
        if v.uses("t") || w.uses("t") {
            return Err(Error::Certificate("V and W must not depend on t".into()));
        }
        let v2 = v.clone();
        let pad = move |x: &[f64]| {
            let mut vals = x.to_vec();
            vals.push(0.0);
            vals
        };
        Ok(Self::new(name, dim, move |x| v.eval(&pad(x)), move |x| w.eval(&pad(x))).with_gradient(
            move |x, g| {
                let mut vals = x.to_vec();
                vals.push(0.0);
                v2.eval_grad(&vals, g);
            },
        ))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn bound(&self, x: &[f64]) -> f64 {
        (self.bound)(x)
    }

    pub fn bound_fn(&self) -> Arc<StateFn> {
        self.bound.clone()
    }

    pub fn has_supplied_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// The supplied gradient, or central differences of `V` when none was
    /// supplied.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.gradient {
            Some(g) => {
                let mut out = vec![0.0; self.dim];
                g(x, &mut out);
                out
            }
            None => central_difference(&*self.value, x),
        }
    }
}

/// Central differences with step `1e-5 (1 + ‖x‖)`.
pub fn central_difference(f: &StateFn, x: &[f64]) -> Vec<f64> {
    let h = 1e-5 * (1.0 + norm(x));
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let xi = x[i];
            xp[i] = xi + h;
            let fp = f(&xp);
            xp[i] = xi - h;
            let fm = f(&xp);
            xp[i] = xi;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `dV/dt(t, x) = ∇V(x)·f(t, x)`.
pub fn derivative_along_field(cert: &Certificate, field: &TimeVaryingField, t: f64, x: &[f64]) -> Result<f64> {
    if norm(x) > field.domain_radius() {
        return Err(Error::Precondition(format!(
            "point norm {} exceeds domain radius {}",
            norm(x),
            field.domain_radius()
        )));
    }
    let g = cert.gradient(x);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Certificate(format!("gradient of `{}` is not finite at {x:?}", cert.name)));
    }
    Ok(dot(&g, &field.eval(t, x)))
}

/// Compares the supplied gradient with central differences at `points`
/// sampled points of the ball. Certificates without a supplied gradient
/// pass trivially.
pub fn check_gradient_consistency(cert: &Certificate, radius: f64, points: usize, sampler: &LowDiscrepancy) -> Verdict {
    let pts = sampler.ball(cert.dim, radius, points);
    let mut worst = WorstCase::default();
    let mut failed = false;
    if cert.has_supplied_gradient() {
        for p in &pts {
            let g = cert.gradient(p);
            let fd = central_difference(&*cert.value, p);
            let err = g
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
                .fold(0.0, f64::max);
            if err > GRADIENT_TOL {
                failed = true;
            }
            worst.offer(err, || Witness::at(p, err));
        }
    }
    let status = if failed { Status::Fail } else { Status::Pass };
    let mut v = Verdict::new("gradient_consistency", status, GRADIENT_TOL, pts.len());
    if failed {
        v = v.with_witness(worst.into_witness());
    }
    if !cert.has_supplied_gradient() {
        v = v.with_note("no supplied gradient; finite differences are used throughout");
    }
    v
}

/// H1: `V ≥ 0` on a sample of the ball and `V(0) = 0`.
pub fn check_h1(cert: &Certificate, radius: f64, samples: usize, sampler: &LowDiscrepancy) -> Verdict {
    let origin = vec![0.0; cert.dim];
    let v0 = cert.value(&origin);
    if !(v0.abs() <= ORIGIN_TOL) {
        return Verdict::new("h1", Status::Fail, H1_SLACK, 1)
            .with_witness(Some(Witness::at(&origin, v0.abs())))
            .with_note("V(0) != 0");
    }
    let pts = sampler.ball(cert.dim, radius, samples);
    let mut worst = WorstCase::default();
    for p in &pts {
        let v = cert.value(p);
        let magnitude = if v.is_nan() { f64::INFINITY } else { -v };
        if magnitude > H1_SLACK {
            worst.offer(magnitude, || Witness::at(p, magnitude));
        }
    }
    let status = if worst.magnitude().is_some() { Status::Fail } else { Status::Pass };
    Verdict::new("h1", status, H1_SLACK, pts.len() + 1).with_witness(worst.into_witness())
}

/// H2: `∇V·f(t, x) ≤ W(x) + 1e-10` and `W(x) ≤ 1e-12` on a grid of times in
/// `t_range` and a sample of the ball.
pub fn check_h2(
    cert: &Certificate,
    field: &TimeVaryingField,
    radius: f64,
    t_range: (f64, f64),
    t_samples: usize,
    x_samples: usize,
    sampler: &LowDiscrepancy,
) -> Verdict {
    let times = if field.is_autonomous() {
        vec![t_range.0]
    } else {
        sampler.interval(t_range.0, t_range.1, t_samples.max(1))
    };
    let pts = sampler.ball(field.dim(), radius.min(field.domain_radius()), x_samples);
    let mut worst = WorstCase::default();
    let mut evals = 0;
    for p in &pts {
        let w = cert.bound(p);
        for &t in &times {
            evals += 1;
            let dv = match derivative_along_field(cert, field, t, p) {
                Ok(v) => v,
                Err(_) => f64::NAN,
            };
            let chain = dv - w - H2_SLACK;
            let sign = w - W_SLACK;
            let magnitude = if dv.is_nan() || w.is_nan() { f64::INFINITY } else { chain.max(sign) };
            if magnitude > 0.0 {
                worst.offer(magnitude, || Witness::at_time(p, t, magnitude));
            }
        }
    }
    let status = if worst.magnitude().is_some() { Status::Fail } else { Status::Pass };
    Verdict::new("h2", status, H2_SLACK, evals).with_witness(worst.into_witness())
}

/// H3: for each point of the zero-set sample and each pair of grid times,
/// `‖f(t_i, x) - f(t_j, x)‖ ≤ 1e-10 (1 + ‖f(t_i, x)‖)`.
pub fn check_h3_time_invariance(field: &TimeVaryingField, e_sample: &SetSample, t_grid: &[f64]) -> Verdict {
    if e_sample.is_empty() {
        return Verdict::new("h3", Status::Inconclusive, H3_TOL, 0).with_note("empty zero-set sample");
    }
    let mut worst = WorstCase::default();
    let mut pairs = 0;
    for x in e_sample.points() {
        let values: Vec<Vec<f64>> = t_grid.iter().map(|&t| field.eval(t, x)).collect();
        for i in 0..t_grid.len() {
            for j in (i + 1)..t_grid.len() {
                pairs += 1;
                let diff: f64 = values[i]
                    .iter()
                    .zip(&values[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let excess = diff - H3_TOL * (1.0 + norm(&values[i]));
                if excess > 0.0 {
                    worst.offer(diff, || Witness {
                        x: x.clone(),
                        times: vec![t_grid[i], t_grid[j]],
                        magnitude: diff,
                    });
                }
            }
        }
    }
    let status = if worst.magnitude().is_some() { Status::Fail } else { Status::Pass };
    Verdict::new("h3", status, H3_TOL, pairs).with_witness(worst.into_witness())
}

/// `∇V(x)·f(x) + |h(x)|^q`: zero for solutions of the nonlinear Liapunov
/// equation, non-positive for solutions of the inequality.
pub fn liapunov_residual(cert: &Certificate, system: &AffineControlSystem, q: f64, x: &[f64]) -> f64 {
    let g = cert.gradient(x);
    dot(&g, &system.drift_at(x)) + system.output(x).abs().powf(q)
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub h1: Verdict,
    pub h2: Verdict,
    pub h3: Verdict,
    pub witnesses: Vec<Witness>,
    /// Size of the zero-set sample used for H3.
    pub zero_set_points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisOptions {
    pub radius: f64,
    pub samples: usize,
    pub t_range: (f64, f64),
    pub t_samples: usize,
    pub zero_set_tol: f64,
    pub zero_set_budget: usize,
}

impl HypothesisOptions {
    pub fn new(radius: f64) -> Self {
        Self {
            radius,
            samples: 10_000,
            t_range: (0.0, 10.0),
            t_samples: 10,
            zero_set_tol: 1e-10,
            zero_set_budget: 500,
        }
    }
}

/// Runs H1, H2 and H3. The zero set of `W` is sampled for H3.
pub fn check_hypotheses(
    cert: &Certificate,
    field: &TimeVaryingField,
    opts: &HypothesisOptions,
    sampler: &LowDiscrepancy,
) -> HypothesisReport {
    let h1 = check_h1(cert, opts.radius, opts.samples, sampler);
    let h2 = check_h2(cert, field, opts.radius, opts.t_range, opts.t_samples, opts.samples, sampler);
    let bound = cert.bound_fn();
    let e = sample_zero_set(&*bound, field.dim(), opts.radius, opts.zero_set_tol, opts.zero_set_budget, sampler);
    let grid = sampler.interval(opts.t_range.0, opts.t_range.1, opts.t_samples.max(2));
    let h3 = check_h3_time_invariance(field, &e, &grid);
    let witnesses = [&h1, &h2, &h3]
        .iter()
        .filter_map(|v| v.witness.clone())
        .collect();
    HypothesisReport {
        h1,
        h2,
        h3,
        witnesses,
        zero_set_points: e.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{corpus_get, CorpusOptions};
    use crate::invariance::SetLabel;

    fn ex1() -> TimeVaryingField {
        corpus_get("example1", &CorpusOptions::default()).unwrap().system.field().clone()
    }

    fn v_y2(w: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Certificate {
        Certificate::new("y^2", 2, |x| x[1] * x[1], w).with_gradient(|x, g| {
            g[0] = 0.0;
            g[1] = 2.0 * x[1];
        })
    }

    #[test]
    fn derivative_of_y_squared_along_example1() {
        let c = v_y2(|x| -2.0 * x[1].powi(4));
        let f = ex1().with_domain_radius(10.0);
        for y in [-1.5, -0.3, 0.0, 0.7, 2.0] {
            let d = derivative_along_field(&c, &f, 4.2, &[3.0, y]).unwrap();
            assert!((d + 2.0 * y.powi(4)).abs() < 1e-13);
        }
        assert_eq!(derivative_along_field(&c, &f, 0.0, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn derivative_of_hj_certificate_along_example3_drift() {
        let e = corpus_get("example3", &CorpusOptions { domain_radius: 3.0, ..Default::default() }).unwrap();
        let f = e.system.field();
        for a in [0.5f64, 1.0, 2.0] {
            let a2 = a * a;
            let c = Certificate::new("hj", 2, move |x| a2 * x[1].powi(4) / 4.0, |_| 0.0)
                .with_gradient(move |x, g| {
                    g[0] = 0.0;
                    g[1] = a2 * x[1].powi(3);
                });
            let want = -64.0 * a2;
            let d = derivative_along_field(&c, f, 0.0, &[1.0, 2.0]).unwrap();
            assert!((d - want).abs() < 1e-12);
            // cross-check: finite difference of V along the flow
            let x = [1.0, 2.0];
            let fx = f.eval(0.0, &x);
            let h = 1e-6;
            let fwd: Vec<f64> = x.iter().zip(&fx).map(|(a, b)| a + h * b).collect();
            let bwd: Vec<f64> = x.iter().zip(&fx).map(|(a, b)| a - h * b).collect();
            let fd = (c.value(&fwd) - c.value(&bwd)) / (2.0 * h);
            assert!((fd - want).abs() < 1e-5 * want.abs());
        }
    }

    #[test]
    fn derivative_outside_domain_is_precondition_error() {
        let c = v_y2(|_| 0.0);
        assert!(matches!(
            derivative_along_field(&c, &ex1(), 0.0, &[5.0, 0.0]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn h1_verdicts() {
        let s = LowDiscrepancy::new(0);
        assert!(check_h1(&v_y2(|_| 0.0), 2.0, 10_000, &s).passed());
        let bad = Certificate::new("x-y", 2, |x| x[0] - x[1], |_| 0.0);
        let v = check_h1(&bad, 2.0, 10_000, &s);
        assert!(v.failed());
        let w = v.witness.unwrap();
        assert!(w.x[0] < w.x[1]);
        let hj = Certificate::new("hj", 2, |x| 4.0 * x[1].powi(4) / 4.0, |_| 0.0);
        assert!(check_h1(&hj, 2.0, 10_000, &s).passed());
        let shifted = Certificate::new("shift", 2, |x| x[1] * x[1] + 1.0, |_| 0.0);
        assert!(check_h1(&shifted, 2.0, 100, &s).failed());
    }

    #[test]
    fn h2_verdicts() {
        let s = LowDiscrepancy::new(0);
        let f = ex1();
        let exact = v_y2(|x| -2.0 * x[1].powi(4));
        assert!(check_h2(&exact, &f, 2.0, (0.0, 1.0), 3, 10_000, &s).passed());
        let slack = v_y2(|_| 0.0);
        assert!(check_h2(&slack, &f, 2.0, (0.0, 1.0), 3, 10_000, &s).passed());
        let positive = v_y2(|x| x[1] * x[1]);
        let v = check_h2(&positive, &f, 2.0, (0.0, 1.0), 3, 10_000, &s);
        assert!(v.failed());
        assert!(v.witness.is_some());
    }

    #[test]
    fn h3_verdicts() {
        let grid: Vec<f64> = (0..10).map(f64::from).collect();
        let s = LowDiscrepancy::new(0);
        let e1 = SetSample::new(
            s.ball(2, 2.0, 50).into_iter().map(|p| vec![p[0], 0.0]).collect(),
            1e-10,
            SetLabel::E,
        );
        assert!(check_h3_time_invariance(&ex1(), &e1, &grid).passed());

        let tv = TimeVaryingField::from_exprs("tv", &["-x1 + sin(t)*x2", "-x2"]).unwrap();
        assert!(check_h3_time_invariance(&tv, &e1, &grid).passed());

        let mut pts = e1.points().to_vec();
        pts.push(vec![0.0, 0.5]);
        let off = SetSample::new(pts, 1e-10, SetLabel::Custom);
        let v = check_h3_time_invariance(&tv, &off, &[0.0, std::f64::consts::FRAC_PI_2]);
        assert!(v.failed());
        let w = v.witness.unwrap();
        assert_eq!(w.x, vec![0.0, 0.5]);
        assert!((w.magnitude - 0.5).abs() < 1e-12);

        let empty = SetSample::new(Vec::new(), 1e-10, SetLabel::E);
        assert_eq!(check_h3_time_invariance(&tv, &empty, &grid).status, Status::Inconclusive);
    }

    #[test]
    fn liapunov_residuals_for_example2() {
        let e = corpus_get("example2", &CorpusOptions { domain_radius: 6.0, ..Default::default() }).unwrap();
        let sys = e.system.control().unwrap();
        let half = Certificate::from_exprs("x2^2/2", 2, "x2^2/2", "-x2^4").unwrap();
        assert!(liapunov_residual(&half, sys, 2.0, &[5.0, 0.3]).abs() < 1e-16);
        assert_eq!(liapunov_residual(&half, sys, 2.0, &[0.0, 0.0]), 0.0);
        let full = Certificate::from_exprs("x2^2", 2, "x2^2", "0").unwrap();
        assert!((liapunov_residual(&full, sys, 2.0, &[0.0, 1.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn expression_certificates_have_exact_gradients() {
        let c = Certificate::from_exprs("mix", 2, "x1^2*x2 + sin(x2)", "0").unwrap();
        let v = check_gradient_consistency(&c, 2.0, 200, &LowDiscrepancy::new(1));
        assert!(v.passed());
        let wrong = Certificate::new("wrong", 2, |x| x[0] * x[0], |_| 0.0).with_gradient(|x, g| {
            g[0] = x[0];
            g[1] = 0.0;
        });
        assert!(check_gradient_consistency(&wrong, 2.0, 200, &LowDiscrepancy::new(1)).failed());
        assert!(Certificate::from_exprs("tv", 2, "t*x1", "0").is_err());
    }

    #[test]
    fn hypotheses_for_example1() {
        let c = v_y2(|x| -2.0 * x[1].powi(4));
        let mut opts = HypothesisOptions::new(2.0);
        opts.samples = 2000;
        let r = check_hypotheses(&c, &ex1(), &opts, &LowDiscrepancy::new(0));
        assert!(r.h1.passed() && r.h2.passed() && r.h3.passed());
        assert!(r.witnesses.is_empty());
        assert!(r.zero_set_points > 0);
    }
}
