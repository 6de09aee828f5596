//! Adaptive explicit Runge-Kutta integration with cubic Hermite dense output
//! and detection of crossings of origin-centred spheres.
//!
//! Embedded pairs are selected by name from a small registry (`dopri5`, the
//! default, and `cash-karp`). Step size control is the PI controller of
//! Hairer, Nørsett and Wanner.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynsys::TimeVaryingField;
use crate::error::{Error, Result};
use crate::sampling::{norm, LowDiscrepancy};

/// Butcher tableau of an embedded explicit pair. `err` holds the difference
/// between the propagated and embedded weights.
pub struct Tableau {
    pub c: &'static [f64],
    pub a: &'static [&'static [f64]],
    pub b: &'static [f64],
    pub err: &'static [f64],
    /// Last stage is evaluated at the propagated state (first same as last).
    pub fsal: bool,
    /// Order of the embedded (error) solution.
    pub error_order: u32,
}

static DOPRI5: Tableau = Tableau {
    c: &[0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0],
    a: &[
        &[],
        &[1.0 / 5.0],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
        &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
        &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
        &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ],
    b: &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0],
    err: &[
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ],
    fsal: true,
    error_order: 4,
};

static CASH_KARP: Tableau = Tableau {
    c: &[0.0, 1.0 / 5.0, 3.0 / 10.0, 3.0 / 5.0, 1.0, 7.0 / 8.0],
    a: &[
        &[],
        &[1.0 / 5.0],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[3.0 / 10.0, -9.0 / 10.0, 6.0 / 5.0],
        &[-11.0 / 54.0, 5.0 / 2.0, -70.0 / 27.0, 35.0 / 27.0],
        &[1631.0 / 55296.0, 175.0 / 512.0, 575.0 / 13824.0, 44275.0 / 110592.0, 253.0 / 4096.0],
    ],
    b: &[37.0 / 378.0, 0.0, 250.0 / 621.0, 125.0 / 594.0, 0.0, 512.0 / 1771.0],
    err: &[
        37.0 / 378.0 - 2825.0 / 27648.0,
        0.0,
        250.0 / 621.0 - 18575.0 / 48384.0,
        125.0 / 594.0 - 13525.0 / 55296.0,
        -277.0 / 14336.0,
        512.0 / 1771.0 - 1.0 / 4.0,
    ],
    fsal: false,
    error_order: 4,
};

/// One step of an embedded scheme.
pub trait StepScheme: Send + Sync {
    fn name(&self) -> &'static str;

    fn tableau(&self) -> &Tableau;

    fn stages(&self) -> usize {
        self.tableau().c.len()
    }

    /// Advances `(t, x)` by `h`. `k1 = f(t, x)`. Writes the new state into
    /// `x_new`, the local error estimate into `err` and `f(t + h, x_new)`
    /// into `k_new`.
    fn step(&self, field: &TimeVaryingField, t: f64, x: &[f64], k1: &[f64], h: f64, ws: &mut StepWork) -> StepStatus {
        let tab = self.tableau();
        let n = x.len();
        let s = tab.c.len();
        ws.k[0].copy_from_slice(k1);
        for i in 1..s {
            for d in 0..n {
                let mut acc = 0.0;
                for (j, aij) in tab.a[i].iter().enumerate() {
                    acc += aij * ws.k[j][d];
                }
                ws.stage_x[d] = x[d] + h * acc;
            }
            field.eval_into(t + tab.c[i] * h, &ws.stage_x, &mut ws.k[i]);
            if ws.k[i].iter().any(|v| !v.is_finite()) {
                return StepStatus::NonFinite {
                    t: t + tab.c[i] * h,
                    x: ws.stage_x.clone(),
                };
            }
        }
        for d in 0..n {
            let mut acc = 0.0;
            let mut e = 0.0;
            for j in 0..s {
                acc += tab.b[j] * ws.k[j][d];
                e += tab.err[j] * ws.k[j][d];
            }
            ws.x_new[d] = x[d] + h * acc;
            ws.err[d] = h * e;
        }
        if tab.fsal {
            ws.k_new.copy_from_slice(&ws.k[s - 1]);
        } else {
            field.eval_into(t + h, &ws.x_new, &mut ws.k_new);
            if ws.k_new.iter().any(|v| !v.is_finite()) {
                return StepStatus::NonFinite {
                    t: t + h,
                    x: ws.x_new.clone(),
                };
            }
        }
        StepStatus::Ok
    }
}

pub enum StepStatus {
    Ok,
    NonFinite { t: f64, x: Vec<f64> },
}

/// Scratch buffers for [`StepScheme::step`].
pub struct StepWork {
    k: Vec<Vec<f64>>,
    stage_x: Vec<f64>,
    pub x_new: Vec<f64>,
    pub err: Vec<f64>,
    pub k_new: Vec<f64>,
}

impl StepWork {
    pub fn new(stages: usize, dim: usize) -> Self {
        Self {
            k: vec![vec![0.0; dim]; stages],
            stage_x: vec![0.0; dim],
            x_new: vec![0.0; dim],
            err: vec![0.0; dim],
            k_new: vec![0.0; dim],
        }
    }
}

struct ExplicitPair {
    name: &'static str,
    tableau: &'static Tableau,
}

impl StepScheme for ExplicitPair {
    fn name(&self) -> &'static str {
        self.name
    }

    fn tableau(&self) -> &Tableau {
        self.tableau
    }
}

static SCHEMES: [ExplicitPair; 2] = [
    ExplicitPair { name: "dopri5", tableau: &DOPRI5 },
    ExplicitPair { name: "cash-karp", tableau: &CASH_KARP },
];

/// Looks up an embedded pair by name.
pub fn scheme(name: &str) -> Result<&'static dyn StepScheme> {
    SCHEMES
        .iter()
        .find(|s| s.name == name)
        .map(|s| s as &dyn StepScheme)
        .ok_or_else(|| Error::Config(format!("unknown integration method `{name}`")))
}

pub fn scheme_names() -> impl Iterator<Item = &'static str> {
    SCHEMES.iter().map(|s| s.name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub horizon: f64,
    pub method: String,
    pub max_steps: usize,
}

impl IntegratorConfig {
    pub fn new(horizon: f64) -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_step: horizon,
            horizon,
            method: "dopri5".into(),
            max_steps: 2_000_000,
        }
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        if self.max_step >= self.horizon {
            self.max_step = horizon;
        }
        self.horizon = horizon;
        self
    }

    pub fn with_method(mut self, method: impl Into<String>) -> Self {
        self.method = method.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step", self.max_step),
            ("horizon", self.horizon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.rel_tol < 1e-14 {
            return Err(Error::Config(format!("rel_tol must be at least 1e-14, got {}", self.rel_tol)));
        }
        scheme(&self.method)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    HorizonReached,
    LeftDomain,
    StepUnderflow,
    /// The configured `max_steps` budget ran out before the horizon.
    StepLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Outward,
    Inward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Knot {
    pub t: f64,
    pub x: Vec<f64>,
    pub dx: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SphereCrossing {
    pub t: f64,
    pub radius: f64,
    pub direction: Direction,
    pub x: Vec<f64>,
}

/// A dense numerical solution `x(t; t0, x0)`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    t0: f64,
    x0: Vec<f64>,
    knots: Vec<Knot>,
    events: Vec<SphereCrossing>,
    terminated: Termination,
    rel_tol: f64,
    abs_tol: f64,
}

impl Trajectory {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn events(&self) -> &[SphereCrossing] {
        &self.events
    }

    pub fn terminated(&self) -> Termination {
        self.terminated
    }

    pub fn rel_tol(&self) -> f64 {
        self.rel_tol
    }

    pub fn abs_tol(&self) -> f64 {
        self.abs_tol
    }

    pub fn final_time(&self) -> f64 {
        self.knots.last().map_or(self.t0, |k| k.t)
    }

    pub fn final_state(&self) -> &[f64] {
        &self.knots.last().expect("trajectory has at least one knot").x
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Cubic Hermite interpolation; `None` outside `[t0, final_time]`.
    pub fn interpolate(&self, t: f64) -> Option<Vec<f64>> {
        let first = self.knots.first()?;
        let last = self.knots.last()?;
        if t < first.t || t > last.t {
            return None;
        }
        let i = self.knots.partition_point(|k| k.t < t);
        if i < self.knots.len() && self.knots[i].t == t {
            return Some(self.knots[i].x.clone());
        }
        Some(hermite(&self.knots[i - 1], &self.knots[i], t))
    }

    pub fn first_crossing(&self, radius: f64, direction: Direction) -> Option<&SphereCrossing> {
        self.events
            .iter()
            .find(|e| e.radius == radius && e.direction == direction)
    }

    /// Elapsed times between the last outward crossing of `inner` and each
    /// following outward crossing of `outer`.
    pub fn sphere_transits(&self, inner: f64, outer: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut last_inner: Option<f64> = None;
        for e in &self.events {
            if e.direction != Direction::Outward {
                continue;
            }
            if e.radius == inner {
                last_inner = Some(e.t);
            } else if e.radius == outer {
                if let Some(t) = last_inner.take() {
                    out.push(e.t - t);
                }
            }
        }
        out
    }

    /// Writes `t,x1,...,xn` with one row per knot.
    pub fn to_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("x{i}")));
        wr.write_record(&header)?;
        for k in &self.knots {
            let mut row = vec![fmt_f64(k.t)];
            row.extend(k.x.iter().map(|v| fmt_f64(*v)));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes `t,radius,direction` with one row per recorded crossing.
    pub fn events_to_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "radius", "direction"])?;
        for e in &self.events {
            let dir = match e.direction {
                Direction::Outward => "outward",
                Direction::Inward => "inward",
            };
            wr.write_record([fmt_f64(e.t), fmt_f64(e.radius), dir.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

fn hermite(a: &Knot, b: &Knot, t: f64) -> Vec<f64> {
    let h = b.t - a.t;
    let s = (t - a.t) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    (0..a.x.len())
        .map(|d| h00 * a.x[d] + h10 * h * a.dx[d] + h01 * b.x[d] + h11 * h * b.dx[d])
        .collect()
}

fn error_norm(x: &[f64], x_new: &[f64], err: &[f64], rtol: f64, atol: f64) -> f64 {
    let n = x.len() as f64;
    let sum: f64 = x
        .iter()
        .zip(x_new)
        .zip(err)
        .map(|((a, b), e)| {
            let sk = atol + rtol * a.abs().max(b.abs());
            (e / sk) * (e / sk)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step(field: &TimeVaryingField, t0: f64, x0: &[f64], f0: &[f64], cfg: &IntegratorConfig, order: u32) -> f64 {
    let scaled = |v: &[f64]| -> f64 {
        let n = v.len() as f64;
        (v.iter()
            .zip(x0)
            .map(|(vi, xi)| {
                let sk = cfg.abs_tol + cfg.rel_tol * xi.abs();
                (vi / sk) * (vi / sk)
            })
            .sum::<f64>()
            / n)
            .sqrt()
    };
    let d0 = scaled(x0);
    let d1 = scaled(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(cfg.max_step).min(cfg.horizon);
    let x1: Vec<f64> = x0.iter().zip(f0).map(|(x, f)| x + h0 * f).collect();
    let f1 = field.eval(t0 + h0, &x1);
    if f1.iter().any(|v| !v.is_finite()) {
        return h0 * 1e-3;
    }
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = scaled(&diff) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(1.0 / f64::from(order + 1))
    };
    (100.0 * h0).min(h1).min(cfg.max_step).min(cfg.horizon)
}

const EVENT_SUBSAMPLES: usize = 8;
const EVENT_TIME_TOL: f64 = 1e-10;

/// Integrates `ẋ = f(t, x)` from `(t0, x0)` over `[t0, t0 + cfg.horizon]`.
///
/// Leaving the domain ball, step-size underflow and exhausting the step
/// budget are normal terminations recorded on the trajectory.
pub fn integrate(
    field: &TimeVaryingField,
    t0: f64,
    x0: &[f64],
    cfg: &IntegratorConfig,
    event_radii: &[f64],
) -> Result<Trajectory> {
    cfg.validate()?;
    let n = field.dim();
    if x0.len() != n {
        return Err(Error::Precondition(format!(
            "initial state has dimension {}, field has {n}",
            x0.len()
        )));
    }
    let r0 = norm(x0);
    if !(r0 <= field.domain_radius()) {
        return Err(Error::Precondition(format!(
            "initial point norm {r0} exceeds domain radius {}",
            field.domain_radius()
        )));
    }
    if let Some(r) = event_radii.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::Precondition(format!("event radius must be positive, got {r}")));
    }
    let scheme = scheme(&cfg.method)?;
    let order = scheme.tableau().error_order;
    let mut ws = StepWork::new(scheme.stages(), n);
    let mut ev_ws = StepWork::new(scheme.stages(), n);

    let f0 = field.eval(t0, x0);
    if f0.iter().any(|v| !v.is_finite()) {
        return Err(Error::FieldEvaluation { t: t0, x: x0.to_vec() });
    }
    let mut knots = vec![Knot {
        t: t0,
        x: x0.to_vec(),
        dx: f0,
    }];
    let mut events = Vec::new();
    let t_end = t0 + cfg.horizon;
    let mut h = initial_step(field, t0, x0, &knots[0].dx, cfg, order);
    let mut err_prev: f64 = 1e-4;
    let expo = 1.0 / f64::from(order + 1);
    let beta = 0.04;
    let alpha = expo - 0.75 * beta;
    let mut steps = 0usize;
    let mut rejected_last = false;

    let terminated = loop {
        let cur = knots.last().unwrap();
        let t = cur.t;
        if t >= t_end {
            break Termination::HorizonReached;
        }
        if steps >= cfg.max_steps {
            break Termination::StepLimit;
        }
        h = h.min(cfg.max_step);
        let remaining = t_end - t;
        let last_step = h >= remaining * (1.0 - 1e-12);
        if last_step {
            h = remaining;
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            break Termination::StepUnderflow;
        }
        steps += 1;
        match scheme.step(field, t, &cur.x, &cur.dx, h, &mut ws) {
            StepStatus::NonFinite { t: ts, x: xs } => {
                if norm(&xs) <= field.domain_radius() && norm(&cur.x) <= field.domain_radius() {
                    return Err(Error::FieldEvaluation { t: ts, x: xs });
                }
                h *= 0.25;
                rejected_last = true;
                continue;
            }
            StepStatus::Ok => {}
        }
        let err = error_norm(&cur.x, &ws.x_new, &ws.err, cfg.rel_tol, cfg.abs_tol);
        if !err.is_finite() {
            h *= 0.25;
            rejected_last = true;
            continue;
        }
        if err <= 1.0 {
            let t_new = if last_step { t_end } else { t + h };
            let knot = Knot {
                t: t_new,
                x: ws.x_new.clone(),
                dx: ws.k_new.clone(),
            };
            let prev = knots.last().unwrap().clone();
            for &r in event_radii {
                locate_crossings(field, scheme, &prev, &knot, r, &mut ev_ws, &mut events);
            }
            let left = norm(&knot.x) > field.domain_radius();
            knots.push(knot);
            if left {
                break Termination::LeftDomain;
            }
            let err_c = err.max(1e-10);
            let mut fac = 0.9 * err_c.powf(-alpha) * err_prev.powf(beta);
            fac = fac.clamp(0.2, 10.0);
            if rejected_last {
                fac = fac.min(1.0);
            }
            h *= fac;
            err_prev = err_c;
            rejected_last = false;
        } else {
            let fac = (0.9 * err.powf(-expo)).max(0.2);
            h *= fac;
            rejected_last = true;
        }
    };

    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(Trajectory {
        t0,
        x0: x0.to_vec(),
        knots,
        events,
        terminated,
        rel_tol: cfg.rel_tol,
        abs_tol: cfg.abs_tol,
    })
}

/// Finds crossings of `‖x‖ = radius` inside one accepted step. Brackets come
/// from the Hermite interpolant; each root is then bisected on a fresh
/// single step of the scheme from the left knot, so that event states carry
/// the accuracy of the integrator rather than that of the interpolant.
fn locate_crossings(
    field: &TimeVaryingField,
    scheme: &dyn StepScheme,
    a: &Knot,
    b: &Knot,
    radius: f64,
    ws: &mut StepWork,
    events: &mut Vec<SphereCrossing>,
) {
    let h = b.t - a.t;
    let m = EVENT_SUBSAMPLES;
    let mut samples = Vec::with_capacity(m + 1);
    for j in 0..=m {
        let tau = h * j as f64 / m as f64;
        let x = match j {
            0 => a.x.clone(),
            _ if j == m => b.x.clone(),
            _ => hermite(a, b, a.t + tau),
        };
        samples.push((tau, norm(&x) - radius));
    }
    let mut step_to = |tau: f64| -> Option<Vec<f64>> {
        if tau == 0.0 {
            return Some(a.x.clone());
        }
        if tau == h {
            return Some(b.x.clone());
        }
        match scheme.step(field, a.t, &a.x, &a.dx, tau, ws) {
            StepStatus::Ok => Some(ws.x_new.clone()),
            StepStatus::NonFinite { .. } => None,
        }
    };
    for w in samples.windows(2) {
        let (ta, ga) = w[0];
        let (tb, gb) = w[1];
        let outward = ga < 0.0 && gb >= 0.0;
        let inward = ga >= 0.0 && gb < 0.0;
        if !(outward || inward) {
            continue;
        }
        // Bisect on the scheme itself when its values bracket the root,
        // otherwise fall back to the interpolant.
        let (mut lo, mut hi) = (ta, tb);
        let glo = step_to(lo).map(|x| norm(&x) - radius);
        let ghi = step_to(hi).map(|x| norm(&x) - radius);
        let use_step = matches!((glo, ghi), (Some(l), Some(r)) if (l < 0.0) != (r < 0.0));
        let sign_lo_neg = if use_step { glo.unwrap() < 0.0 } else { ga < 0.0 };
        let tol = EVENT_TIME_TOL.min(1e-3 * h.abs()).max(4.0 * f64::EPSILON * b.t.abs().max(1.0));
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let gm = if use_step {
                step_to(mid).map_or(f64::NAN, |x| norm(&x) - radius)
            } else {
                norm(&hermite(a, b, a.t + mid)) - radius
            };
            if gm.is_nan() {
                break;
            }
            if (gm < 0.0) == sign_lo_neg {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let tau = 0.5 * (lo + hi);
        let x = if use_step {
            step_to(tau).unwrap_or_else(|| hermite(a, b, a.t + tau))
        } else {
            hermite(a, b, a.t + tau)
        };
        events.push(SphereCrossing {
            t: a.t + tau,
            radius,
            direction: if outward { Direction::Outward } else { Direction::Inward },
            x,
        });
    }
}

/// Sampled estimate of `sup ‖f(t, x)‖` over the closed ball and a time
/// window, inflated by 10 %. Half of the points lie on the bounding sphere.
///
/// This is an estimate, not a certified bound.
pub fn sup_norm_bound(
    field: &TimeVaryingField,
    radius: f64,
    t_range: (f64, f64),
    samples: usize,
    sampler: &LowDiscrepancy,
) -> Result<f64> {
    if radius > field.domain_radius() {
        return Err(Error::Precondition(format!(
            "radius {radius} exceeds domain radius {}",
            field.domain_radius()
        )));
    }
    let n = field.dim();
    let in_ball = samples.div_ceil(2);
    let on_sphere = samples - in_ball;
    let mut pts = sampler.ball(n, radius, in_ball);
    pts.extend(sampler.sphere(n, radius, on_sphere));
    let times: Vec<f64> = if field.is_autonomous() {
        vec![t_range.0]
    } else {
        let u = sampler.cube(1, pts.len());
        u.iter().map(|v| t_range.0 + (t_range.1 - t_range.0) * v[0]).collect()
    };
    let mut best: f64 = 0.0;
    let mut buf = vec![0.0; n];
    for (i, p) in pts.iter().enumerate() {
        let t = times[i.min(times.len() - 1)];
        field.eval_into(t, p, &mut buf);
        best = best.max(norm(&buf));
    }
    Ok(1.1 * best)
}

/// Lower bound `(eps0 - delta) / a` on the time needed to travel from the
/// sphere of radius `delta` to the sphere of radius `eps0` when `‖f‖ ≤ a`.
pub fn flight_time_lower_bound(eps0: f64, delta: f64, a: f64) -> Result<f64> {
    if !(eps0 > delta && delta > 0.0 && a > 0.0) {
        return Err(Error::Precondition(format!(
            "need eps0 > delta > 0 and a > 0, got eps0={eps0}, delta={delta}, a={a}"
        )));
    }
    Ok((eps0 - delta) / a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub value: f64,
    /// True when the value comes from sampled difference quotients rather
    /// than the field's hint.
    pub estimated: bool,
}

/// The field's Lipschitz hint, or a sampled difference-quotient estimate on
/// the ball when no hint is attached.
pub fn lipschitz_constant(
    field: &TimeVaryingField,
    radius: f64,
    t_range: (f64, f64),
    samples: usize,
    sampler: &LowDiscrepancy,
) -> LipschitzEstimate {
    if let Some(l) = field.lipschitz_hint() {
        return LipschitzEstimate { value: l, estimated: false };
    }
    let n = field.dim();
    let pts = sampler.ball(n, radius, samples);
    let dirs = sampler.sphere(n, 1.0, samples.max(1));
    let step = 1e-4 * radius.max(1e-12);
    let mut best: f64 = 0.0;
    for (i, p) in pts.iter().enumerate() {
        let t = t_range.0 + (t_range.1 - t_range.0) * (i as f64 / samples.max(1) as f64);
        let q: Vec<f64> = p.iter().zip(&dirs[i % dirs.len()]).map(|(a, d)| a + step * d).collect();
        let fp = field.eval(t, p);
        let fq = field.eval(t, &q);
        let diff: Vec<f64> = fp.iter().zip(&fq).map(|(a, b)| a - b).collect();
        best = best.max(norm(&diff) / step);
    }
    LipschitzEstimate { value: best, estimated: true }
}
