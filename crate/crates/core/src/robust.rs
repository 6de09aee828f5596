//! Robust stabilization by output feedback `u = φ(y)` under sector-bounded
//! perturbations of the feedback:
//!
//! * P1: time-invariant `p(y)` with `|p(y)| < a |φ(y)|` for `y ≠ 0`;
//! * P2: time-varying `p(y, t)` with `|p(y, t)| < (a - ε) |φ(y)|`.
//!
//! Families are finite and seeded. Their members are built from named
//! shapes `σ(y)` and time modulations `m(t)` held in registries.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynsys::{AffineControlSystem, StateFn, TimeVaryingField};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::integrate::Trajectory;
use crate::invariance::{
    attractivity_probe_observed, uniform_stability_probe_observed, ProbeConfig, StabilityStatus,
    StabilityVerdict, StartSet,
};
use crate::lyapunov::Certificate;
use crate::sampling::{dot, LowDiscrepancy};
use crate::verdict::{Status, Verdict, Witness, WorstCase};

/// Relative margin of the strict sector inequality.
pub const SECTOR_MARGIN: f64 = 1e-9;
/// Slack of `dV/dt ≤ W` along closed-loop trajectories.
pub const CHAIN_SLACK: f64 = 1e-8;
/// Dense validation points per member.
pub const SECTOR_SAMPLES: usize = 10_000;
/// Residual magnitude below which the Hamilton-Jacobi equation holds.
pub const HJ_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbationClass {
    P1,
    P2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub class: PerturbationClass,
    pub gain_a: f64,
    /// The ε of `(a - ε)|φ(y)|`; ignored for P1.
    pub margin_eps: f64,
    pub family_seed: u64,
    pub family_size: usize,
}

impl PerturbationSpec {
    pub fn p1(gain_a: f64, family_seed: u64, family_size: usize) -> Self {
        Self { class: PerturbationClass::P1, gain_a, margin_eps: 0.0, family_seed, family_size }
    }

    pub fn p2(gain_a: f64, margin_eps: f64, family_seed: u64, family_size: usize) -> Self {
        Self { class: PerturbationClass::P2, gain_a, margin_eps, family_seed, family_size }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain_a > 0.0) {
            return Err(Error::Config(format!("gain_a must be positive, got {}", self.gain_a)));
        }
        if self.class == PerturbationClass::P2 && !(self.margin_eps > 0.0 && self.margin_eps < self.gain_a) {
            return Err(Error::Config(format!(
                "P2 needs 0 < margin_eps < gain_a, got eps={} a={}",
                self.margin_eps, self.gain_a
            )));
        }
        if self.family_size == 0 {
            return Err(Error::Config("family_size must be positive".into()));
        }
        Ok(())
    }

    /// `a` for P1, `a - ε` for P2.
    pub fn sector_bound(&self) -> f64 {
        match self.class {
            PerturbationClass::P1 => self.gain_a,
            PerturbationClass::P2 => self.gain_a - self.margin_eps,
        }
    }
}

/// The output feedback `φ` with `φ(0) = 0`.
#[derive(Clone)]
pub struct Feedback {
    label: String,
    func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Feedback({})", self.label)
    }
}

impl Feedback {
    pub fn new<F>(label: impl Into<String>, func: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if func(0.0) != 0.0 {
            return Err(Error::Precondition("feedback must vanish at y = 0".into()));
        }
        Ok(Self { label: label.into(), func: Arc::new(func) })
    }

    pub fn identity() -> Self {
        Self { label: "y".into(), func: Arc::new(|y| y) }
    }

    /// `φ` from an expression in `y`.
    pub fn from_expr(source: &str) -> Result<Self> {
        let e = Expr::parse(source, &["y"])?;
        let label = e.source().to_string();
        Self::new(label, move |y| e.eval(&[y]))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, y: f64) -> f64 {
        (self.func)(y)
    }
}

/// A shape `σ(y)` with `|σ| ≤ 1`, parameterised by a rate `k`.
pub trait Shape: Send + Sync {
    fn name(&self) -> &'static str;
    fn eval(&self, k: f64, y: f64) -> f64;
}

/// A time modulation `m(t)` with `|m| ≤ 1`, parameterised by a rate `ω`.
pub trait Modulation: Send + Sync {
    fn name(&self) -> &'static str;
    fn eval(&self, w: f64, t: f64) -> f64;
}

struct Unit;
impl Shape for Unit {
    fn name(&self) -> &'static str {
        "one"
    }
    fn eval(&self, _k: f64, _y: f64) -> f64 {
        1.0
    }
}

struct Cosine;
impl Shape for Cosine {
    fn name(&self) -> &'static str {
        "cos"
    }
    fn eval(&self, k: f64, y: f64) -> f64 {
        (k * y).cos()
    }
}

struct Tanh;
impl Shape for Tanh {
    fn name(&self) -> &'static str {
        "tanh"
    }
    fn eval(&self, k: f64, y: f64) -> f64 {
        (k * y).tanh()
    }
}

/// `1 / (1 + k|y|)`: the perturbation saturates while keeping the sign of `φ`.
struct Saturation;
impl Shape for Saturation {
    fn name(&self) -> &'static str {
        "saturation"
    }
    fn eval(&self, k: f64, y: f64) -> f64 {
        1.0 / (1.0 + k * y.abs())
    }
}

struct CosTime;
impl Modulation for CosTime {
    fn name(&self) -> &'static str {
        "cos"
    }
    fn eval(&self, w: f64, t: f64) -> f64 {
        (w * t).cos()
    }
}

/// `(1 + ωt)^(-1/2)`.
struct Fade;
impl Modulation for Fade {
    fn name(&self) -> &'static str {
        "fade"
    }
    fn eval(&self, w: f64, t: f64) -> f64 {
        1.0 / (1.0 + w * t.abs()).sqrt()
    }
}

/// Smooth square wave `tanh(4 sin ωt) / tanh 4`.
struct SmoothSquare;
impl Modulation for SmoothSquare {
    fn name(&self) -> &'static str {
        "square"
    }
    fn eval(&self, w: f64, t: f64) -> f64 {
        (4.0 * (w * t).sin()).tanh() / 4f64.tanh()
    }
}

/// Name-keyed shapes and modulations used to build perturbation families.
pub struct ShapeRegistry {
    shapes: BTreeMap<&'static str, Arc<dyn Shape>>,
    modulations: BTreeMap<&'static str, Arc<dyn Modulation>>,
}

impl Default for ShapeRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ShapeRegistry {
    pub fn empty() -> Self {
        Self { shapes: BTreeMap::new(), modulations: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register_shape(Arc::new(Unit));
        r.register_shape(Arc::new(Cosine));
        r.register_shape(Arc::new(Tanh));
        r.register_shape(Arc::new(Saturation));
        r.register_modulation(Arc::new(CosTime));
        r.register_modulation(Arc::new(Fade));
        r.register_modulation(Arc::new(SmoothSquare));
        r
    }

    pub fn register_shape(&mut self, s: Arc<dyn Shape>) {
        self.shapes.insert(s.name(), s);
    }

    pub fn register_modulation(&mut self, m: Arc<dyn Modulation>) {
        self.modulations.insert(m.name(), m);
    }

    pub fn shape(&self, name: &str) -> Result<Arc<dyn Shape>> {
        self.shapes.get(name).cloned().ok_or_else(|| Error::NotFound(format!("shape {name}")))
    }

    pub fn modulation(&self, name: &str) -> Result<Arc<dyn Modulation>> {
        self.modulations
            .get(name)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("modulation {name}")))
    }

    pub fn shape_names(&self) -> Vec<&'static str> {
        self.shapes.keys().copied().collect()
    }

    pub fn modulation_names(&self) -> Vec<&'static str> {
        self.modulations.keys().copied().collect()
    }
}

pub type PerturbationFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// One member `p(y, t)` of a perturbation family.
#[derive(Clone)]
pub struct Perturbation {
    pub id: String,
    pub class: PerturbationClass,
    pub label: String,
    pub time_invariant: bool,
    func: Arc<PerturbationFn>,
}

impl fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Perturbation({}: {})", self.id, self.label)
    }
}

impl Perturbation {
    pub fn new<F>(id: impl Into<String>, class: PerturbationClass, label: impl Into<String>, time_invariant: bool, func: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self { id: id.into(), class, label: label.into(), time_invariant, func: Arc::new(func) }
    }

    pub fn zero(id: impl Into<String>, class: PerturbationClass) -> Self {
        Self::new(id, class, "0", true, |_, _| 0.0)
    }

    pub fn eval(&self, y: f64, t: f64) -> f64 {
        (self.func)(y, t)
    }

    pub fn func(&self) -> Arc<PerturbationFn> {
        self.func.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectorCheck {
    pub passed: bool,
    /// `max |p| / (bound |φ|)` over the dense sample.
    pub worst_ratio: f64,
    pub samples: usize,
    /// `p(0, t) = 0` at every sampled time.
    pub vanishes_at_zero: bool,
}

/// Dense check of `|p(y, t)| < (1 - 1e-9) bound |φ(y)|` for `y ≠ 0` on
/// `[-y_max, y_max] × [0, t_max]`. Time-invariant members are sampled in `y`
/// only.
pub fn sector_check(p: &Perturbation, feedback: &Feedback, bound: f64, y_max: f64, t_max: f64) -> SectorCheck {
    let (ny, nt) = if p.time_invariant { (SECTOR_SAMPLES, 1) } else { (100, SECTOR_SAMPLES / 100) };
    let mut worst: f64 = 0.0;
    let mut passed = true;
    let mut vanishes = true;
    for j in 0..nt {
        let t = if nt == 1 { 0.0 } else { t_max * j as f64 / (nt - 1) as f64 };
        if p.eval(0.0, t) != 0.0 {
            vanishes = false;
        }
        for i in 0..ny {
            // offset grid: y = 0 is never hit
            let y = y_max * (2.0 * (i as f64 + 0.5) / ny as f64 - 1.0);
            let phi = feedback.eval(y).abs();
            let v = p.eval(y, t).abs();
            let ratio = if phi > 0.0 { v / (bound * phi) } else if v == 0.0 { 0.0 } else { f64::INFINITY };
            worst = worst.max(ratio);
            if !(v < (1.0 - SECTOR_MARGIN) * bound * phi) && !(v == 0.0 && phi == 0.0) {
                passed = false;
            }
        }
    }
    SectorCheck {
        passed: passed && vanishes,
        worst_ratio: worst,
        samples: nt * ny,
        vanishes_at_zero: vanishes,
    }
}

/// Range of `y` and `t` over which generated members are validated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationWindow {
    pub y_max: f64,
    pub t_max: f64,
}

impl Default for ValidationWindow {
    fn default() -> Self {
        Self { y_max: 10.0, t_max: 100.0 }
    }
}

/// A deterministic family of `spec.family_size` members of the class.
///
/// Member 0 is the zero perturbation and member 1 a fixed canonical member
/// (`0.9 a cos(y) φ(y)` for P1, `(15/16)(a - ε) cos(3t) φ(y)` for P2). The
/// rest combine registered shapes and modulations with seeded rates and
/// gains of at most 95 % of the sector bound. Every member is validated
/// densely; a failure is a generation error.
pub fn sample_perturbations(
    spec: &PerturbationSpec,
    feedback: &Feedback,
    registry: &ShapeRegistry,
    window: ValidationWindow,
) -> Result<Vec<Perturbation>> {
    spec.validate()?;
    let bound = spec.sector_bound();
    let class = spec.class;
    let tag = match class {
        PerturbationClass::P1 => "p1",
        PerturbationClass::P2 => "p2",
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.family_seed);
    let shapes = registry.shape_names();
    let mods = registry.modulation_names();
    let mut members = vec![Perturbation::zero(format!("{tag}-0"), class)];
    for i in 1..spec.family_size {
        let id = format!("{tag}-{i}");
        let phi = feedback.clone();
        let member = if i == 1 {
            match class {
                PerturbationClass::P1 => {
                    let c = 0.9 * spec.gain_a;
                    Perturbation::new(id, class, format!("{c}·cos(y)·φ(y)"), true, move |y, _| c * y.cos() * phi.eval(y))
                }
                PerturbationClass::P2 => {
                    let c = 15.0 / 16.0 * bound;
                    Perturbation::new(id, class, format!("{c}·cos(3t)·φ(y)"), false, move |y, t| {
                        c * (3.0 * t).cos() * phi.eval(y)
                    })
                }
            }
        } else {
            let shape = registry.shape(shapes[rng.gen_range(0..shapes.len())])?;
            let k: f64 = rng.gen_range(0.5..3.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let c = sign * bound * rng.gen_range(0.1..0.95);
            match class {
                PerturbationClass::P1 => Perturbation::new(
                    id,
                    class,
                    format!("{c:.6}·{}(k={k:.4})·φ(y)", shape.name()),
                    true,
                    move |y, _| c * shape.eval(k, y) * phi.eval(y),
                ),
                PerturbationClass::P2 => {
                    let m = registry.modulation(mods[rng.gen_range(0..mods.len())])?;
                    let w: f64 = rng.gen_range(0.5..4.0);
                    Perturbation::new(
                        id,
                        class,
                        format!("{c:.6}·{}(k={k:.4})·{}(ω={w:.4})·φ(y)", shape.name(), m.name()),
                        false,
                        move |y, t| c * shape.eval(k, y) * m.eval(w, t) * phi.eval(y),
                    )
                }
            }
        };
        members.push(member);
    }
    for m in &members {
        let chk = sector_check(m, feedback, bound, window.y_max, window.t_max);
        if !chk.passed {
            return Err(Error::Generation(format!(
                "member {} ({}) violates its sector bound: ratio {}",
                m.id, m.label, chk.worst_ratio
            )));
        }
    }
    Ok(members)
}

/// The closed loop `ẋ = f(x) + g(x)(φ(h(x)) + p(h(x), t))`.
#[derive(Clone, Debug)]
pub struct ClosedLoop {
    pub base: AffineControlSystem,
    pub feedback: Feedback,
    pub perturbation: Perturbation,
}

impl ClosedLoop {
    /// Fails when `p(0, t) ≠ 0` at one of 101 sampled times in `[0, 100]`.
    pub fn new(base: AffineControlSystem, feedback: Feedback, perturbation: Perturbation) -> Result<Self> {
        for j in 0..=100 {
            let t = j as f64;
            if perturbation.eval(0.0, t) != 0.0 {
                return Err(Error::Precondition(format!("perturbation {} does not vanish at y = 0", perturbation.id)));
            }
        }
        Ok(Self { base, feedback, perturbation })
    }

    pub fn field(&self) -> TimeVaryingField {
        let phi = self.feedback.clone();
        let p = self.perturbation.func();
        let name = format!("{}+{}", self.base.name(), self.perturbation.id);
        self.base.with_output_feedback(name, move |y, t| phi.eval(y) + p(y, t))
    }
}

/// `∇V·f + (½ ∇V·g + φ(h))² - (1 - a²) φ(h)²`.
pub fn hj_residual(cert: &Certificate, system: &AffineControlSystem, feedback: &Feedback, gain_a: f64, x: &[f64]) -> f64 {
    let grad = cert.gradient(x);
    let phi = feedback.eval(system.output(x));
    let half_lg = 0.5 * dot(&grad, &system.input_field(x));
    dot(&grad, &system.drift_at(x)) + (half_lg + phi).powi(2) - (1.0 - gain_a * gain_a) * phi * phi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HjClass {
    Equation,
    Inequality,
    Violated,
}

#[derive(Debug, Clone, Serialize)]
pub struct HjSweep {
    pub class: HjClass,
    pub max_abs: f64,
    pub max: f64,
    pub samples: usize,
    pub witness: Option<Witness>,
}

/// Classifies the certificate on `samples` points of the domain ball.
pub fn hj_sweep(
    cert: &Certificate,
    system: &AffineControlSystem,
    feedback: &Feedback,
    gain_a: f64,
    samples: usize,
    sampler: &LowDiscrepancy,
) -> HjSweep {
    let pts = sampler.ball(system.dim(), system.domain_radius(), samples);
    let res: Vec<f64> = pts.par_iter().map(|x| hj_residual(cert, system, feedback, gain_a, x)).collect();
    let (mut max_abs, mut max) = (0.0f64, f64::NEG_INFINITY);
    let mut worst = WorstCase::default();
    for (x, &r) in pts.iter().zip(&res) {
        let r = if r.is_nan() { f64::INFINITY } else { r };
        max_abs = max_abs.max(r.abs());
        max = max.max(r);
        worst.offer(r.abs(), || Witness::at(x, r.abs()));
    }
    let class = if max_abs <= HJ_TOL {
        HjClass::Equation
    } else if max <= HJ_TOL {
        HjClass::Inequality
    } else {
        HjClass::Violated
    };
    HjSweep { class, max_abs, max, samples: pts.len(), witness: worst.into_witness() }
}

/// The two admissible bounds for the H2 chain of the closed loop:
/// `W1 = p(h)² - a² φ(h)²` (time-invariant `p`, evaluated at `t = 0`) and
/// `W2 = -(2aε - ε²) φ(h)²`.
pub fn derived_w_bounds(
    feedback: &Feedback,
    h: Arc<StateFn>,
    gain_a: f64,
    margin_eps: f64,
    p: &Perturbation,
) -> (Arc<StateFn>, Arc<StateFn>) {
    let (phi1, h1, pf) = (feedback.clone(), h.clone(), p.func());
    let a2 = gain_a * gain_a;
    let w1: Arc<StateFn> = Arc::new(move |x: &[f64]| {
        let y = h1(x);
        let phi = phi1.eval(y);
        pf(y, 0.0).powi(2) - a2 * phi * phi
    });
    let c = 2.0 * gain_a * margin_eps - margin_eps * margin_eps;
    let phi2 = feedback.clone();
    let w2: Arc<StateFn> = Arc::new(move |x: &[f64]| -c * phi2.eval(h(x)).powi(2));
    (w1, w2)
}

/// `max (dV/dt - W)` over the knots of a trajectory of `field`.
pub fn worst_chain_slack(traj: &Trajectory, cert: &Certificate, field: &TimeVaryingField, w: &StateFn) -> f64 {
    traj.knots()
        .iter()
        .map(|k| dot(&cert.gradient(&k.x), &field.eval(k.t, &k.x)) - w(&k.x))
        .fold(f64::NEG_INFINITY, |a, b| if b.is_nan() || b > a { b } else { a })
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustOptions {
    pub ball_radius: f64,
    pub horizon: f64,
    pub tol: f64,
    pub t0_grid: Vec<f64>,
    pub delta_resolution: f64,
    pub stability_horizon: f64,
    pub window: ValidationWindow,
}

impl Default for RobustOptions {
    fn default() -> Self {
        Self {
            ball_radius: 0.5,
            horizon: 1e4,
            tol: 0.05,
            t0_grid: vec![0.0],
            delta_resolution: 0.05,
            stability_horizon: 200.0,
            window: ValidationWindow::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MemberRecord {
    pub perturbation_id: String,
    pub class: PerturbationClass,
    pub label: String,
    pub sector_check: SectorCheck,
    pub out_of_class: bool,
    pub stability: Option<StabilityVerdict>,
    pub attractivity: Option<StabilityVerdict>,
    pub worst_h2_slack: Option<f64>,
    pub asymptotically_stable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustReport {
    pub verdict: Verdict,
    pub hj: HjSweep,
    pub h2_chain_held: bool,
    pub members: Vec<MemberRecord>,
}

impl RobustReport {
    /// The per-member records as a JSON array.
    pub fn members_json(&self) -> String {
        serde_json::to_string_pretty(&self.members).expect("records serialize")
    }
}

/// Runs stability and attractivity probes on the closed loop of every
/// in-class member. Passes when all of them are asymptotically stable.
/// Members failing the sector check are flagged out of class and skipped.
/// Along every simulated trajectory `dV/dt - W` is tracked, with `W` the
/// bound matching the member's class.
pub fn robust_verdict(
    system: &AffineControlSystem,
    feedback: &Feedback,
    cert: &Certificate,
    spec: &PerturbationSpec,
    family: &[Perturbation],
    opts: &RobustOptions,
    sampler: &LowDiscrepancy,
) -> Result<RobustReport> {
    spec.validate()?;
    let hj = hj_sweep(cert, system, feedback, spec.gain_a, 2000, sampler);
    let bound = spec.sector_bound();
    let mut members = Vec::with_capacity(family.len());
    for p in family {
        let sc = sector_check(p, feedback, bound, opts.window.y_max, opts.window.t_max);
        if !sc.passed {
            log::warn!("perturbation {} is outside class {:?}; excluded", p.id, spec.class);
            members.push(MemberRecord {
                perturbation_id: p.id.clone(),
                class: spec.class,
                label: p.label.clone(),
                sector_check: sc,
                out_of_class: true,
                stability: None,
                attractivity: None,
                worst_h2_slack: None,
                asymptotically_stable: false,
            });
            continue;
        }
        let cl = ClosedLoop::new(system.clone(), feedback.clone(), p.clone())?;
        let field = cl.field();
        let (w1, w2) = derived_w_bounds(feedback, system.output_fn(), spec.gain_a, spec.margin_eps, p);
        let w = match spec.class {
            PerturbationClass::P1 if p.time_invariant => w1,
            _ => w2,
        };
        let observer = |traj: &Trajectory| worst_chain_slack(traj, cert, &field, &*w);
        let stab_cfg = ProbeConfig::new(opts.stability_horizon).with_t0_grid(opts.t0_grid.clone());
        let stability = uniform_stability_probe_observed(
            &field,
            &[opts.ball_radius],
            opts.delta_resolution,
            &StartSet::Sampled,
            &stab_cfg,
            sampler,
            Some(&observer),
        )?;
        let attr_cfg = ProbeConfig::new(opts.horizon).with_t0_grid(opts.t0_grid.clone());
        let attractivity = attractivity_probe_observed(
            &field,
            opts.ball_radius,
            opts.tol,
            &StartSet::Sampled,
            &attr_cfg,
            sampler,
            Some(&observer),
        )?;
        let slack = match (stability.observed_max, attractivity.observed_max) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        let asymptotically_stable =
            stability.is(StabilityStatus::Stable) && attractivity.is(StabilityStatus::Attractive);
        members.push(MemberRecord {
            perturbation_id: p.id.clone(),
            class: spec.class,
            label: p.label.clone(),
            sector_check: sc,
            out_of_class: false,
            stability: Some(stability),
            attractivity: Some(attractivity),
            worst_h2_slack: slack,
            asymptotically_stable,
        });
    }
    let in_class: Vec<&MemberRecord> = members.iter().filter(|m| !m.out_of_class).collect();
    let h2_chain_held = in_class
        .iter()
        .all(|m| m.worst_h2_slack.map_or(true, |s| s <= CHAIN_SLACK));
    let mut worst = WorstCase::default();
    for m in in_class.iter().filter(|m| !m.asymptotically_stable) {
        let w = m
            .attractivity
            .as_ref()
            .and_then(|a| a.convergence_witness.as_ref())
            .map(|c| Witness::at_time(&c.x0, c.t0, c.final_norm))
            .or_else(|| {
                m.stability
                    .as_ref()
                    .and_then(|s| s.escape_witness.as_ref())
                    .map(|e| Witness::at_time(&e.x0, e.t0, e.escape_time))
            })
            .unwrap_or(Witness { x: Vec::new(), times: Vec::new(), magnitude: f64::INFINITY });
        worst.offer(w.magnitude, || w.clone());
    }
    let inconclusive = in_class.iter().any(|m| {
        m.stability.as_ref().is_some_and(|s| s.is(StabilityStatus::Inconclusive))
            || m.attractivity.as_ref().is_some_and(|a| a.is(StabilityStatus::Inconclusive))
    });
    let status = if in_class.is_empty() {
        Status::Inconclusive
    } else if worst.magnitude().is_some() {
        if inconclusive && in_class.iter().all(|m| {
            m.asymptotically_stable
                || m.stability.as_ref().is_some_and(|s| s.is(StabilityStatus::Inconclusive))
                || m.attractivity.as_ref().is_some_and(|a| a.is(StabilityStatus::Inconclusive))
        }) {
            Status::Inconclusive
        } else {
            Status::Fail
        }
    } else {
        Status::Pass
    };
    let excluded = members.len() - in_class.len();
    let mut verdict = Verdict::new("robust", status, opts.tol, in_class.len()).with_witness(worst.into_witness());
    if excluded > 0 {
        verdict = verdict.with_note(format!("{excluded} out-of-class member(s) excluded"));
    }
    Ok(RobustReport { verdict, hj, h2_chain_held, members })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{corpus_get, CorpusOptions};

    fn example3() -> AffineControlSystem {
        corpus_get("example3", &CorpusOptions::default()).unwrap().system.control().unwrap().clone()
    }

    fn hj_cert(a: f64) -> Certificate {
        let a2 = a * a;
        Certificate::new("a²x2⁴/4", 2, move |x| a2 * x[1].powi(4) / 4.0, |_| 0.0).with_gradient(move |x, g| {
            g[0] = 0.0;
            g[1] = a2 * x[1].powi(3);
        })
    }

    #[test]
    fn families_contain_zero_and_canonical_members() {
        let reg = ShapeRegistry::with_builtins();
        let phi = Feedback::identity();
        let p1 = sample_perturbations(&PerturbationSpec::p1(1.0, 7, 8), &phi, &reg, ValidationWindow::default()).unwrap();
        assert_eq!(p1.len(), 8);
        assert!(p1.iter().all(|p| p.time_invariant));
        for y in [-3.0, 0.0, 0.4, 2.0] {
            assert_eq!(p1[0].eval(y, 1.0), 0.0);
            assert!((p1[1].eval(y, 5.0) - 0.9 * y * y.cos()).abs() < 1e-15);
        }
        let p2 = sample_perturbations(&PerturbationSpec::p2(1.0, 0.2, 7, 8), &phi, &reg, ValidationWindow::default()).unwrap();
        for (y, t) in [(1.0, 0.0), (-0.5, 1.3)] {
            assert!((p2[1].eval(y, t) - 0.75 * y * (3.0 * t).cos()).abs() < 1e-15);
        }
        assert!(p2.iter().skip(1).all(|p| !p.time_invariant));
    }

    #[test]
    fn generation_is_deterministic() {
        let reg = ShapeRegistry::with_builtins();
        let phi = Feedback::identity();
        let spec = PerturbationSpec::p2(2.0, 0.5, 42, 8);
        let a = sample_perturbations(&spec, &phi, &reg, ValidationWindow::default()).unwrap();
        let b = sample_perturbations(&spec, &phi, &reg, ValidationWindow::default()).unwrap();
        let la: Vec<_> = a.iter().map(|p| p.label.clone()).collect();
        let lb: Vec<_> = b.iter().map(|p| p.label.clone()).collect();
        assert_eq!(la, lb);
        assert_eq!(a[5].eval(0.7, 2.1), b[5].eval(0.7, 2.1));
    }

    #[test]
    fn spec_validation() {
        assert!(PerturbationSpec::p2(1.0, 1.0, 0, 4).validate().is_err());
        assert!(PerturbationSpec::p2(1.0, 0.0, 0, 4).validate().is_err());
        assert!(PerturbationSpec::p1(0.0, 0, 4).validate().is_err());
        assert!(PerturbationSpec::p1(1.0, 0, 0).validate().is_err());
        assert_eq!(PerturbationSpec::p2(1.0, 0.2, 0, 4).sector_bound(), 0.8);
    }

    #[test]
    fn sector_check_flags_violations() {
        let phi = Feedback::identity();
        let bad = Perturbation::new("bad", PerturbationClass::P1, "-2ay", true, |y, _| -4.0 * y);
        let c = sector_check(&bad, &phi, 2.0, 10.0, 100.0);
        assert!(!c.passed);
        assert!((c.worst_ratio - 2.0).abs() < 1e-12);
        let edge = Perturbation::new("edge", PerturbationClass::P1, "ay", true, |y, _| 2.0 * y);
        assert!(!sector_check(&edge, &phi, 2.0, 10.0, 100.0).passed);
        let offset = Perturbation::new("off", PerturbationClass::P2, "0.1 cos t", false, |_, t| 0.1 * t.cos());
        let c = sector_check(&offset, &phi, 2.0, 10.0, 100.0);
        assert!(!c.vanishes_at_zero && !c.passed);
    }

    #[test]
    fn closed_loop_rejects_offset_perturbation() {
        let offset = Perturbation::new("off", PerturbationClass::P2, "0.1 cos t", false, |_, t| 0.1 * t.cos());
        assert!(ClosedLoop::new(example3(), Feedback::identity(), offset).is_err());
    }

    #[test]
    fn closed_loop_field() {
        let p = Perturbation::new("p", PerturbationClass::P2, "0.5 y cos t", false, |y, t| 0.5 * y * t.cos());
        let cl = ClosedLoop::new(example3(), Feedback::identity(), p).unwrap();
        let f = cl.field();
        let x = [0.3, 0.7];
        let y: f64 = 0.7f64.powi(3);
        let v = f.eval(0.0, &x);
        assert!((v[0] - (-0.027 + 1.5 * y)).abs() < 1e-15);
        assert!((v[1] + 0.343).abs() < 1e-15);
        let v = f.eval(std::f64::consts::FRAC_PI_2, &x);
        assert!((v[0] - (-0.027 + y)).abs() < 1e-15);
    }

    #[test]
    fn hj_residual_of_example3_certificate() {
        let sys = example3();
        let phi = Feedback::identity();
        for a in [0.5, 1.0, 2.0, 10.0] {
            let r = hj_residual(&hj_cert(a), &sys, &phi, a, &[1.3, 0.7]);
            assert!(r.abs() < 1e-12, "a={a}: {r}");
            assert_eq!(hj_residual(&hj_cert(a), &sys, &phi, a, &[0.0, 0.0]), 0.0);
        }
        let zero = Certificate::new("0", 2, |_| 0.0, |_| 0.0).with_gradient(|_, g| g.fill(0.0));
        let r = hj_residual(&zero, &sys, &phi, 0.5, &[0.0, 1.0]);
        assert!((r - 0.25).abs() < 1e-15);
        let sweep = hj_sweep(&hj_cert(2.0), &sys, &phi, 2.0, 10_000, &LowDiscrepancy::new(0));
        assert_eq!(sweep.class, HjClass::Equation);
        assert_eq!(hj_sweep(&zero, &sys, &phi, 0.5, 100, &LowDiscrepancy::new(0)).class, HjClass::Violated);
    }

    #[test]
    fn derived_bounds() {
        let sys = example3();
        let phi = Feedback::identity();
        let zero = Perturbation::zero("z", PerturbationClass::P1);
        let (w1, w2) = derived_w_bounds(&phi, sys.output_fn(), 1.0, 0.2, &zero);
        let x = [0.4, 0.9];
        assert!((w1(&x) + 0.9f64.powi(6)).abs() < 1e-15);
        assert!((w2(&x) + 0.36 * 0.9f64.powi(6)).abs() < 1e-15);
        // near the sector edge W1 approaches 0 from below
        let near = Perturbation::new("edge", PerturbationClass::P1, "", true, |y, _| (1.0 - 1e-9) * y);
        let (w1, _) = derived_w_bounds(&phi, sys.output_fn(), 1.0, 0.2, &near);
        let v = w1(&x);
        assert!(v < 0.0 && v > -1e-8);
        // kernel identity {W2 = 0} = {h = 0}
        for p in LowDiscrepancy::new(3).ball(2, 1.0, 500) {
            assert_eq!(w2(&p) == 0.0, sys.output(&p) == 0.0);
        }
    }

    #[test]
    fn zero_family_reduces_to_plain_closed_loop() {
        let sys = example3();
        let phi = Feedback::identity();
        let spec = PerturbationSpec::p1(2.0, 0, 1);
        let fam = sample_perturbations(&spec, &phi, &ShapeRegistry::with_builtins(), ValidationWindow::default()).unwrap();
        assert_eq!(fam.len(), 1);
        let opts = RobustOptions { horizon: 2000.0, tol: 0.1, stability_horizon: 50.0, ..Default::default() };
        let r = robust_verdict(&sys, &phi, &hj_cert(2.0), &spec, &fam, &opts, &LowDiscrepancy::new(0)).unwrap();
        assert!(r.verdict.passed(), "{:?}", r.verdict);
        assert!(r.h2_chain_held);
        assert!(r.members[0].worst_h2_slack.unwrap() <= CHAIN_SLACK);
    }

    #[test]
    fn injected_out_of_class_member_is_excluded() {
        let sys = example3();
        let phi = Feedback::identity();
        let spec = PerturbationSpec::p1(2.0, 0, 2);
        let mut fam = sample_perturbations(&spec, &phi, &ShapeRegistry::with_builtins(), ValidationWindow::default()).unwrap();
        fam.push(Perturbation::new("adversary", PerturbationClass::P1, "-2ay", true, |y, _| -4.0 * y));
        let opts = RobustOptions { horizon: 500.0, tol: 0.2, stability_horizon: 20.0, ..Default::default() };
        let r = robust_verdict(&sys, &phi, &hj_cert(2.0), &spec, &fam, &opts, &LowDiscrepancy::new(0)).unwrap();
        let adv = r.members.iter().find(|m| m.perturbation_id == "adversary").unwrap();
        assert!(adv.out_of_class);
        assert!(adv.stability.is_none());
        assert_eq!(r.members.iter().filter(|m| !m.out_of_class).count(), 2);
        assert!(r.verdict.note.as_deref().unwrap().contains("out-of-class"));
        let j: serde_json::Value = serde_json::from_str(&r.members_json()).unwrap();
        let rec = &j[0];
        for key in ["perturbation_id", "class", "sector_check", "stability", "attractivity", "worst_h2_slack"] {
            assert!(rec.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn feedback_from_expression() {
        let f = Feedback::from_expr("2*y - y^3").unwrap();
        assert_eq!(f.eval(1.0), 1.0);
        assert!(Feedback::from_expr("1 + y").is_err());
    }
}
