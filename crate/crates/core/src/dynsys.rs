//! System objects: time-varying vector fields, affine single-input
//! single-output control systems, closed-form solution oracles and the
//! registry of built-in example systems.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{parse_state_expr, Expr};

pub type FieldFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
pub type StateFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
pub type InputFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Default radius of the ball on which checks run for corpus systems.
pub const DEFAULT_DOMAIN_RADIUS: f64 = 2.0;

/// A vector field `f(t, x)` on a ball of radius `domain_radius`.
///
/// Cloning is cheap; the evaluation closure is shared.
#[derive(Clone)]
pub struct TimeVaryingField {
    name: String,
    dim: usize,
    func: Arc<FieldFn>,
    time_offset: f64,
    autonomous: bool,
    domain_radius: f64,
    lipschitz_hint: Option<f64>,
    bound_hint: Option<Arc<StateFn>>,
}

impl fmt::Debug for TimeVaryingField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeVaryingField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("time_offset", &self.time_offset)
            .field("autonomous", &self.autonomous)
            .field("domain_radius", &self.domain_radius)
            .field("lipschitz_hint", &self.lipschitz_hint)
            .finish()
    }
}

impl TimeVaryingField {
    pub fn new<F>(name: impl Into<String>, dim: usize, func: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        assert!(dim > 0, "state dimension must be positive");
        Self {
            name: name.into(),
            dim,
            func: Arc::new(func),
            time_offset: 0.0,
            autonomous: false,
            domain_radius: DEFAULT_DOMAIN_RADIUS,
            lipschitz_hint: None,
            bound_hint: None,
        }
    }

    /// A field that ignores `t`.
    pub fn autonomous<F>(name: impl Into<String>, dim: usize, func: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        let mut field = Self::new(name, dim, move |_t, x, out| func(x, out));
        field.autonomous = true;
        field
    }

    /// One expression per component over `x1..xn` and `t`.
    pub fn from_exprs(name: impl Into<String>, components: &[&str]) -> Result<Self> {
        let dim = components.len();
        if dim == 0 {
            return Err(Error::Precondition("a field needs at least one component".into()));
        }
        let exprs = components
            .iter()
            .map(|src| parse_state_expr(src, dim))
            .collect::<std::result::Result<Vec<Expr>, _>>()?;
        let autonomous = exprs.iter().all(|e| !e.uses("t"));
        let mut field = Self::new(name, dim, move |t, x, out| {
            let mut vals = Vec::with_capacity(dim + 1);
            vals.extend_from_slice(x);
            vals.push(t);
            for (o, e) in out.iter_mut().zip(&exprs) {
                *o = e.eval(&vals);
            }
        });
        field.autonomous = autonomous;
        Ok(field)
    }

    pub fn with_domain_radius(mut self, radius: f64) -> Self {
        assert!(radius > 0.0, "domain radius must be positive");
        self.domain_radius = radius;
        self
    }

    pub fn with_lipschitz_hint(mut self, l: f64) -> Self {
        self.lipschitz_hint = Some(l);
        self
    }

    pub fn with_bound_hint<F>(mut self, m: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.bound_hint = Some(Arc::new(m));
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    pub fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz_hint
    }

    pub fn bound_hint(&self, x: &[f64]) -> Option<f64> {
        self.bound_hint.as_ref().map(|m| m(x))
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn time_offset(&self) -> f64 {
        self.time_offset
    }

    #[inline]
    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.func)(t + self.time_offset, x, out);
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, x, &mut out);
        out
    }
}

/// The field `(t, x) ↦ f(t + shift, x)`.
///
/// Shifts accumulate in a single offset, so translating by `a` and then by
/// `b` evaluates the base field at exactly the same argument as translating
/// by `a + b`.
pub fn time_translate(field: &TimeVaryingField, shift: f64) -> TimeVaryingField {
    let mut out = field.clone();
    if !field.autonomous {
        out.time_offset = field.time_offset + shift;
    }
    out
}

/// `ẋ = f(x) + g(x) u`, `y = h(x)` with scalar input and output.
#[derive(Clone)]
pub struct AffineControlSystem {
    name: String,
    drift: TimeVaryingField,
    input: Arc<InputFn>,
    output: Arc<StateFn>,
}

impl fmt::Debug for AffineControlSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffineControlSystem")
            .field("name", &self.name)
            .field("drift", &self.drift)
            .finish()
    }
}

impl AffineControlSystem {
    pub fn new<G, H>(name: impl Into<String>, drift: TimeVaryingField, input: G, output: H) -> Self
    where
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        H: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            drift,
            input: Arc::new(input),
            output: Arc::new(output),
        }
    }

    /// A system with `g ≡ 0`: the pair `(h, f)` of an inputless system.
    pub fn inputless<H>(name: impl Into<String>, drift: TimeVaryingField, output: H) -> Self
    where
        H: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(name, drift, |_x, g| g.fill(0.0), output)
    }

    pub fn from_exprs(
        name: impl Into<String>,
        drift: &[&str],
        input: Option<&[&str]>,
        output: &str,
    ) -> Result<Self> {
        let name = name.into();
        let f = TimeVaryingField::from_exprs(format!("{name}/drift"), drift)?;
        if !f.is_autonomous() {
            return Err(Error::Precondition(
                "the drift of an affine control system must not depend on t".into(),
            ));
        }
        let dim = f.dim();
        let g: Vec<Expr> = match input {
            Some(srcs) => {
                if srcs.len() != dim {
                    return Err(Error::Precondition(format!(
                        "input field has {} components, drift has {dim}",
                        srcs.len()
                    )));
                }
                srcs.iter()
                    .map(|s| parse_state_expr(s, dim))
                    .collect::<std::result::Result<_, _>>()?
            }
            None => Vec::new(),
        };
        let h = parse_state_expr(output, dim)?;
        let with_t = |x: &[f64]| {
            let mut v = x.to_vec();
            v.push(0.0);
            v
        };
        Ok(Self::new(
            name,
            f,
            move |x, out| {
                if g.is_empty() {
                    out.fill(0.0);
                } else {
                    let v = with_t(x);
                    for (o, e) in out.iter_mut().zip(&g) {
                        *o = e.eval(&v);
                    }
                }
            },
            move |x| h.eval(&with_t(x)),
        ))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn drift(&self) -> &TimeVaryingField {
        &self.drift
    }

    pub fn drift_at(&self, x: &[f64]) -> Vec<f64> {
        self.drift.eval(0.0, x)
    }

    pub fn input_field(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        (self.input)(x, &mut g);
        g
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        (self.output)(x)
    }

    pub fn output_fn(&self) -> Arc<StateFn> {
        self.output.clone()
    }

    pub fn domain_radius(&self) -> f64 {
        self.drift.domain_radius()
    }

    pub fn with_domain_radius(mut self, radius: f64) -> Self {
        self.drift = self.drift.with_domain_radius(radius);
        self
    }

    /// The time-varying field `f(x) + g(x) u(h(x), t)`.
    pub fn with_output_feedback<U>(&self, name: impl Into<String>, feedback: U) -> TimeVaryingField
    where
        U: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        let drift = self.drift.clone();
        let input = self.input.clone();
        let output = self.output.clone();
        let dim = self.dim();
        TimeVaryingField::new(name, dim, move |t, x, out| {
            drift.eval_into(t, x, out);
            let u = feedback(output(x), t);
            if u != 0.0 {
                let mut g = [0.0; 8];
                let mut heap;
                let g: &mut [f64] = if dim <= 8 {
                    &mut g[..dim]
                } else {
                    heap = vec![0.0; dim];
                    &mut heap
                };
                input(x, g);
                for (o, gi) in out.iter_mut().zip(g.iter()) {
                    *o += gi * u;
                }
            }
        })
        .with_domain_radius(self.domain_radius())
    }
}

pub type OracleFn = dyn Fn(f64, f64, &[f64]) -> Vec<f64> + Send + Sync;

/// An exact solution oracle for some (or all) state components.
#[derive(Clone)]
pub struct ClosedFormSolution {
    components: Vec<usize>,
    eval: Arc<OracleFn>,
    horizon: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for ClosedFormSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosedFormSolution")
            .field("components", &self.components)
            .finish()
    }
}

impl ClosedFormSolution {
    /// `eval(t, t0, x0)` returns the values of `components`, in that order.
    pub fn new<E, H>(components: Vec<usize>, eval: E, horizon: H) -> Self
    where
        E: Fn(f64, f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
        H: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            components,
            eval: Arc::new(eval),
            horizon: Arc::new(horizon),
        }
    }

    pub fn components(&self) -> &[usize] {
        &self.components
    }

    pub fn eval(&self, t: f64, t0: f64, x0: &[f64]) -> Vec<f64> {
        (self.eval)(t, t0, x0)
    }

    /// Length of the forward interval on which the formula is valid.
    pub fn valid_horizon(&self, t0: f64, x0: &[f64]) -> f64 {
        (self.horizon)(t0, x0)
    }

    /// Max-norm distance between the oracle and `x` on the covered
    /// components.
    pub fn max_error(&self, t: f64, t0: f64, x0: &[f64], x: &[f64]) -> f64 {
        self.eval(t, t0, x0)
            .iter()
            .zip(&self.components)
            .map(|(v, &i)| (v - x[i]).abs())
            .fold(0.0, f64::max)
    }
}

/// The coupling term `Ψ` of the second example system.
#[derive(Clone)]
pub struct Psi {
    label: String,
    func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Psi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Psi({})", self.label)
    }
}

impl Default for Psi {
    fn default() -> Self {
        Self::square()
    }
}

impl Psi {
    /// `Ψ(x) = x²`, bounded by `a|x|^b` with `a = 1`, `b = 2`.
    pub fn square() -> Self {
        Self {
            label: "x^2".into(),
            func: Arc::new(|x| x * x),
        }
    }

    pub fn zero() -> Self {
        Self {
            label: "0".into(),
            func: Arc::new(|_| 0.0),
        }
    }

    /// An expression in the single variable `x`.
    pub fn from_expr(source: &str) -> Result<Self> {
        let e = Expr::parse(source, &["x"])?;
        let psi = Self {
            label: source.to_string(),
            func: Arc::new(move |x| e.eval(&[x])),
        };
        if psi.eval(0.0) != 0.0 {
            return Err(Error::Precondition(format!("Ψ(0) must be 0, got {}", psi.eval(0.0))));
        }
        Ok(psi)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.func)(x)
    }
}

/// Build options shared by all corpus systems.
#[derive(Debug, Clone)]
pub struct CorpusOptions {
    pub domain_radius: f64,
    pub psi: Psi,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            domain_radius: DEFAULT_DOMAIN_RADIUS,
            psi: Psi::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum CorpusSystem {
    Field(TimeVaryingField),
    Control(AffineControlSystem),
}

impl CorpusSystem {
    /// The uncontrolled dynamics.
    pub fn field(&self) -> &TimeVaryingField {
        match self {
            CorpusSystem::Field(f) => f,
            CorpusSystem::Control(c) => c.drift(),
        }
    }

    pub fn control(&self) -> Option<&AffineControlSystem> {
        match self {
            CorpusSystem::Field(_) => None,
            CorpusSystem::Control(c) => Some(c),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub system: CorpusSystem,
    pub oracle: Option<ClosedFormSolution>,
}

/// A named built-in system.
pub trait CorpusBuilder: Send + Sync {
    fn name(&self) -> &'static str;
    fn summary(&self) -> &'static str;
    fn build(&self, opts: &CorpusOptions) -> CorpusEntry;
}

/// Separable solution of `ẋ = -x³`.
pub fn cubic_decay(x0: f64, dt: f64) -> f64 {
    x0 / (1.0 + 2.0 * x0 * x0 * dt).sqrt()
}

struct Example1;

impl CorpusBuilder for Example1 {
    fn name(&self) -> &'static str {
        "example1"
    }

    fn summary(&self) -> &'static str {
        "ẋ = y², ẏ = -y³ (stable restricted dynamics, unstable full dynamics)"
    }

    fn build(&self, opts: &CorpusOptions) -> CorpusEntry {
        let field = TimeVaryingField::autonomous("example1", 2, |x, out| {
            let y2 = x[1] * x[1];
            out[0] = y2;
            out[1] = -y2 * x[1];
        })
        .with_domain_radius(opts.domain_radius)
        .with_bound_hint(|x| {
            let y2 = x[1] * x[1];
            (y2 * y2 + y2 * y2 * y2).sqrt()
        });
        let oracle = ClosedFormSolution::new(
            vec![0, 1],
            |t, t0, x0| {
                let s = 1.0 + 2.0 * x0[1] * x0[1] * (t - t0);
                vec![x0[0] + 0.5 * s.ln(), x0[1] / s.sqrt()]
            },
            |_, _| f64::INFINITY,
        );
        CorpusEntry {
            system: CorpusSystem::Field(field),
            oracle: Some(oracle),
        }
    }
}

struct Example2;

impl CorpusBuilder for Example2 {
    fn name(&self) -> &'static str {
        "example2"
    }

    fn summary(&self) -> &'static str {
        "ẋ₁ = -x₁³ + Ψ(x₂), ẋ₂ = -x₂³ with output h = x₂² (Liapunov equation, q = 2)"
    }

    fn build(&self, opts: &CorpusOptions) -> CorpusEntry {
        let psi = opts.psi.clone();
        let drift = TimeVaryingField::autonomous("example2", 2, move |x, out| {
            out[0] = -x[0] * x[0] * x[0] + psi.eval(x[1]);
            out[1] = -x[1] * x[1] * x[1];
        })
        .with_domain_radius(opts.domain_radius);
        let system = AffineControlSystem::inputless("example2", drift, |x| x[1] * x[1]);
        let oracle = ClosedFormSolution::new(
            vec![1],
            |t, t0, x0| vec![cubic_decay(x0[1], t - t0)],
            |_, _| f64::INFINITY,
        );
        CorpusEntry {
            system: CorpusSystem::Control(system),
            oracle: Some(oracle),
        }
    }
}

struct Example3;

impl CorpusBuilder for Example3 {
    fn name(&self) -> &'static str {
        "example3"
    }

    fn summary(&self) -> &'static str {
        "ẋ₁ = -x₁³ + u, ẋ₂ = -x₂³, y = x₂³ (Hamilton-Jacobi certificate V = a²x₂⁴/4)"
    }

    fn build(&self, opts: &CorpusOptions) -> CorpusEntry {
        let drift = TimeVaryingField::autonomous("example3", 2, |x, out| {
            out[0] = -x[0] * x[0] * x[0];
            out[1] = -x[1] * x[1] * x[1];
        })
        .with_domain_radius(opts.domain_radius);
        let system = AffineControlSystem::new(
            "example3",
            drift,
            |_x, g| {
                g[0] = 1.0;
                g[1] = 0.0;
            },
            |x| x[1] * x[1] * x[1],
        );
        let oracle = ClosedFormSolution::new(
            vec![0, 1],
            |t, t0, x0| vec![cubic_decay(x0[0], t - t0), cubic_decay(x0[1], t - t0)],
            |_, _| f64::INFINITY,
        );
        CorpusEntry {
            system: CorpusSystem::Control(system),
            oracle: Some(oracle),
        }
    }
}

/// Name-keyed registry of built-in systems.
pub struct CorpusRegistry {
    builders: BTreeMap<&'static str, Box<dyn CorpusBuilder>>,
}

impl Default for CorpusRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl CorpusRegistry {
    pub fn empty() -> Self {
        Self { builders: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Example1));
        r.register(Box::new(Example2));
        r.register(Box::new(Example3));
        r
    }

    pub fn register(&mut self, builder: Box<dyn CorpusBuilder>) {
        self.builders.insert(builder.name(), builder);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.builders.keys().copied()
    }

    pub fn summary(&self, name: &str) -> Option<&'static str> {
        self.builders.get(name).map(|b| b.summary())
    }

    pub fn get(&self, name: &str, opts: &CorpusOptions) -> Result<CorpusEntry> {
        self.builders
            .get(name)
            .map(|b| b.build(opts))
            .ok_or_else(|| Error::NotFound(name.to_string()))
    }
}

/// Looks up a built-in system by name.
pub fn corpus_get(name: &str, opts: &CorpusOptions) -> Result<CorpusEntry> {
    CorpusRegistry::with_builtins().get(name, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::LowDiscrepancy;

    #[test]
    fn translation_of_autonomous_field_is_identity() {
        let entry = corpus_get("example1", &CorpusOptions::default()).unwrap();
        let f = entry.system.field();
        let g = time_translate(f, 5.0);
        for p in LowDiscrepancy::new(1).ball(2, 2.0, 50) {
            assert_eq!(f.eval(0.3, &p), g.eval(0.3, &p));
        }
        let z = time_translate(f, 0.0);
        assert_eq!(f.eval(1.0, &[0.4, 0.2]), z.eval(1.0, &[0.4, 0.2]));
    }

    #[test]
    fn translation_by_pi_flips_sine_field() {
        let f = TimeVaryingField::new("sin", 2, |t, x, out| {
            out[0] = t.sin() * x[0];
            out[1] = t.sin() * x[1];
        });
        let g = time_translate(&f, std::f64::consts::PI);
        let pts = LowDiscrepancy::new(2).cube(3, 100);
        for p in pts {
            let t = 20.0 * p[0] - 10.0;
            let x = [p[1], p[2]];
            let got = g.eval(t, &x);
            for i in 0..2 {
                assert!((got[i] + t.sin() * x[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn translation_composes_exactly() {
        let f = TimeVaryingField::from_exprs("tv", &["-x1 + sin(t)*x2", "-x2"]).unwrap();
        let pts = LowDiscrepancy::new(9).cube(5, 100);
        for p in pts {
            let (a, b, t) = (10.0 * p[0], 10.0 * p[1] - 5.0, 3.0 * p[2]);
            let lhs = time_translate(&time_translate(&f, a), b);
            let rhs = time_translate(&f, a + b);
            let x = [p[3], p[4]];
            assert_eq!(lhs.eval(t, &x), rhs.eval(t, &x));
        }
    }

    #[test]
    fn corpus_fields_vanish_at_origin() {
        let opts = CorpusOptions::default();
        let times = LowDiscrepancy::new(4).interval(-50.0, 50.0, 100);
        for name in CorpusRegistry::with_builtins().names() {
            let entry = corpus_get(name, &opts).unwrap();
            for &t in &times {
                assert_eq!(entry.system.field().eval(t, &[0.0, 0.0]), vec![0.0, 0.0], "{name}");
            }
            if let Some(c) = entry.system.control() {
                assert_eq!(c.output(&[0.0, 0.0]), 0.0);
            }
        }
    }

    #[test]
    fn example1_oracle_values() {
        let e = corpus_get("example1", &CorpusOptions::default()).unwrap();
        let o = e.oracle.unwrap();
        let v = o.eval(1.0, 0.0, &[0.0, 1.0]);
        assert!((v[0] - 0.5 * 3f64.ln()).abs() < 1e-15);
        assert!((v[1] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        // satisfies ẋ = y², ẏ = -y³ (central differences in t)
        let x0 = [0.3, -0.8];
        let h = 1e-5;
        let (p, m, c) = (o.eval(2.0 + h, 0.0, &x0), o.eval(2.0 - h, 0.0, &x0), o.eval(2.0, 0.0, &x0));
        assert!(((p[0] - m[0]) / (2.0 * h) - c[1] * c[1]).abs() < 1e-9);
        assert!(((p[1] - m[1]) / (2.0 * h) + c[1].powi(3)).abs() < 1e-9);
        assert_eq!(o.eval(3.0, 3.0, &[0.2, -0.7]), vec![0.2, -0.7]);
    }

    #[test]
    fn example2_oracle_starts_at_initial_condition() {
        let e = corpus_get("example2", &CorpusOptions::default()).unwrap();
        let o = e.oracle.unwrap();
        assert_eq!(o.components(), &[1]);
        assert_eq!(o.eval(0.0, 0.0, &[0.0, 1.0]), vec![1.0]);
        assert!((o.eval(4.0, 0.0, &[0.0, 1.0])[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_corpus_name() {
        let err = corpus_get("example9", &CorpusOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
    }

    #[test]
    fn expression_fields_detect_time_dependence() {
        assert!(TimeVaryingField::from_exprs("a", &["-x1^3 + x2^3", "-x2"]).unwrap().is_autonomous());
        assert!(!TimeVaryingField::from_exprs("b", &["sin(t)*x1"]).unwrap().is_autonomous());
        assert!(TimeVaryingField::from_exprs("c", &["x1 + q"]).is_err());
    }

    #[test]
    fn closed_loop_assembly() {
        let e = corpus_get("example3", &CorpusOptions::default()).unwrap();
        let sys = e.system.control().unwrap().clone();
        let cl = sys.with_output_feedback("cl", |y, _t| y);
        let v = cl.eval(0.0, &[1.0, 2.0]);
        assert_eq!(v, vec![-1.0 + 8.0, -8.0]);
    }

    #[test]
    fn psi_validation() {
        assert!(Psi::from_expr("x^2 + 1").is_err());
        assert_eq!(Psi::from_expr("sin(x)").unwrap().eval(0.0), 0.0);
    }
}
