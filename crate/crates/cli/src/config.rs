//! Analysis configuration files.
//!
//! A config is one JSON document. Expressions are inline strings over
//! `x1..xn` and `t`; output feedback expressions use `y`.

use std::path::Path;

use lasalle_core::dynsys::{corpus_get, AffineControlSystem, CorpusOptions, CorpusSystem, Psi, TimeVaryingField};
use lasalle_core::expr::ParseError;
use lasalle_core::lyapunov::Certificate;
use lasalle_core::robust::{Feedback, PerturbationClass, PerturbationSpec};
use lasalle_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub certificate: Option<CertificateSpec>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the default horizon of the subcommand.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Overrides the default verdict tolerance of the subcommand.
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub starts: StartsSpec,
    #[serde(default)]
    pub hypotheses: HypothesesSpec,
    #[serde(default)]
    pub invariance: InvarianceSpec,
    #[serde(default)]
    pub detect: DetectSpec,
    #[serde(default)]
    pub robust: Option<RobustSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SystemSpec {
    Corpus {
        corpus: String,
        #[serde(default)]
        domain_radius: Option<f64>,
        /// Ψ of example 2, as an expression in `x`.
        #[serde(default)]
        psi: Option<String>,
    },
    Expr {
        name: String,
        drift: Vec<String>,
        #[serde(default)]
        input: Option<Vec<String>>,
        #[serde(default)]
        output: Option<String>,
        #[serde(default)]
        domain_radius: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    pub v: String,
    pub w: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "default_out")]
    pub dir: String,
}

fn default_out() -> String {
    "out".into()
}

impl Default for Outputs {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default = "default_rel")]
    pub rel_tol: f64,
    #[serde(default = "default_abs")]
    pub abs_tol: f64,
    #[serde(default = "default_method")]
    pub method: String,
}

fn default_rel() -> f64 {
    1e-9
}
fn default_abs() -> f64 {
    1e-12
}
fn default_method() -> String {
    "dopri5".into()
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self { rel_tol: default_rel(), abs_tol: default_abs(), method: default_method() }
    }
}

/// Initial conditions: explicit points, or `count` sampled points in the
/// ball of radius `radius` (default half the domain radius).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartsSpec {
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "default_t0")]
    pub t0_grid: Vec<f64>,
}

fn default_count() -> usize {
    8
}
fn default_t0() -> Vec<f64> {
    vec![0.0]
}

impl Default for StartsSpec {
    fn default() -> Self {
        Self { points: None, count: default_count(), radius: None, t0_grid: default_t0() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesesSpec {
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_t_range")]
    pub t_range: (f64, f64),
    #[serde(default = "default_t_samples")]
    pub t_samples: usize,
}

fn default_samples() -> usize {
    10_000
}
fn default_t_range() -> (f64, f64) {
    (0.0, 10.0)
}
fn default_t_samples() -> usize {
    10
}

impl Default for HypothesesSpec {
    fn default() -> Self {
        Self { radius: None, samples: default_samples(), t_range: default_t_range(), t_samples: default_t_samples() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvarianceSpec {
    #[serde(default = "default_zero_tol")]
    pub zero_set_tol: f64,
    #[serde(default = "default_budget")]
    pub zero_set_budget: usize,
    /// Horizon used to filter E down to N; defaults to a flow-speed estimate.
    #[serde(default)]
    pub n_horizon: Option<f64>,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
    #[serde(default = "default_cluster")]
    pub cluster_radius: f64,
}

fn default_zero_tol() -> f64 {
    1e-10
}
fn default_budget() -> usize {
    200
}
fn default_tail() -> f64 {
    0.1
}
fn default_cluster() -> f64 {
    0.05
}

impl Default for InvarianceSpec {
    fn default() -> Self {
        Self {
            zero_set_tol: default_zero_tol(),
            zero_set_budget: default_budget(),
            n_horizon: None,
            tail_fraction: default_tail(),
            cluster_radius: default_cluster(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectSpec {
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub eps0: Option<f64>,
    #[serde(default = "default_delta_res")]
    pub delta_resolution: f64,
    #[serde(default = "default_stab_horizon")]
    pub stability_horizon: f64,
    #[serde(default = "default_samples")]
    pub residual_samples: usize,
}

fn default_q() -> f64 {
    2.0
}
fn default_delta_res() -> f64 {
    0.05
}
fn default_stab_horizon() -> f64 {
    100.0
}

impl Default for DetectSpec {
    fn default() -> Self {
        Self {
            q: default_q(),
            eps0: None,
            delta_resolution: default_delta_res(),
            stability_horizon: default_stab_horizon(),
            residual_samples: default_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustSpec {
    pub class: PerturbationClass,
    pub gain_a: f64,
    #[serde(default)]
    pub margin_eps: f64,
    #[serde(default = "default_family")]
    pub family_size: usize,
    /// `φ` as an expression in `y`.
    #[serde(default = "default_feedback")]
    pub feedback: String,
    #[serde(default = "default_ball")]
    pub ball_radius: f64,
    #[serde(default = "default_stab_horizon")]
    pub stability_horizon: f64,
    #[serde(default = "default_delta_res")]
    pub delta_resolution: f64,
}

fn default_family() -> usize {
    8
}
fn default_feedback() -> String {
    "y".into()
}
fn default_ball() -> f64 {
    0.5
}

impl RobustSpec {
    pub fn perturbation_spec(&self, seed: u64) -> PerturbationSpec {
        PerturbationSpec {
            class: self.class,
            gain_a: self.gain_a,
            margin_eps: self.margin_eps,
            family_seed: seed,
            family_size: self.family_size,
        }
    }
}

/// A parsed config together with the raw text it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: AnalysisConfig,
    pub source: String,
    pub path: String,
}

/// Hex SHA-256 of the config text.
pub fn config_hash(source: &str) -> String {
    let digest = Sha256::digest(source.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&source, &path.display().to_string())
    }

    pub fn parse(source: &str, path: &str) -> Result<Self, CliError> {
        let config: AnalysisConfig = serde_json::from_str(source).map_err(|e| {
            CliError::Config(format!("{path}:{}:{}: {e}", e.line(), e.column()))
        })?;
        let loaded = Self { config, source: source.to_string(), path: path.to_string() };
        loaded.validate()?;
        Ok(loaded)
    }

    /// The default config used when none is given.
    pub fn empty() -> Self {
        Self { config: AnalysisConfig::default(), source: String::new(), path: "<default>".into() }
    }

    pub fn hash(&self) -> String {
        config_hash(&self.source)
    }

    fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        let positive = [
            ("horizon", c.horizon),
            ("tol", c.tol),
            ("integrator.rel_tol", Some(c.integrator.rel_tol)),
            ("integrator.abs_tol", Some(c.integrator.abs_tol)),
            ("starts.radius", c.starts.radius),
            ("hypotheses.radius", c.hypotheses.radius),
            ("invariance.zero_set_tol", Some(c.invariance.zero_set_tol)),
            ("invariance.n_horizon", c.invariance.n_horizon),
            ("invariance.tail_fraction", Some(c.invariance.tail_fraction)),
            ("invariance.cluster_radius", Some(c.invariance.cluster_radius)),
            ("detect.q", Some(c.detect.q)),
            ("detect.eps0", c.detect.eps0),
            ("detect.delta_resolution", Some(c.detect.delta_resolution)),
            ("detect.stability_horizon", Some(c.detect.stability_horizon)),
        ];
        for (name, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(CliError::Config(format!("{}: {name} must be positive, got {v}", self.path)));
                }
            }
        }
        if let Some(r) = &c.robust {
            for (name, v) in [
                ("robust.ball_radius", r.ball_radius),
                ("robust.stability_horizon", r.stability_horizon),
                ("robust.delta_resolution", r.delta_resolution),
            ] {
                if !(v > 0.0) {
                    return Err(CliError::Config(format!("{}: {name} must be positive, got {v}", self.path)));
                }
            }
            r.perturbation_spec(c.seed).validate().map_err(|e| self.core_error(e))?;
        }
        if c.starts.t0_grid.is_empty() {
            return Err(CliError::Config(format!("{}: starts.t0_grid must not be empty", self.path)));
        }
        if let Some(SystemSpec::Corpus { corpus, .. }) = &c.system {
            if corpus_get(corpus, &CorpusOptions::default()).is_err() {
                return Err(CliError::Config(format!("{}: unknown corpus system `{corpus}`", self.path)));
            }
        }
        Ok(())
    }

    /// Locates `expr` in the config text and converts an expression parse
    /// error into a line/column diagnostic.
    fn expr_error(&self, expr: &str, err: &ParseError) -> CliError {
        let needle = serde_json::to_string(expr).unwrap_or_default();
        if let Some(at) = self.source.find(&needle) {
            let before = &self.source[..at];
            let line = before.matches('\n').count() + 1;
            let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1 + err.column;
            CliError::Config(format!("{}:{line}:{col}: {}", self.path, err.message))
        } else {
            CliError::Config(format!("{}: in `{expr}` at column {}: {}", self.path, err.column, err.message))
        }
    }

    fn core_error(&self, e: Error) -> CliError {
        CliError::Config(format!("{}: {e}", self.path))
    }

    fn with_exprs<T>(&self, exprs: &[&str], r: lasalle_core::Result<T>) -> Result<T, CliError> {
        r.map_err(|e| match e {
            Error::Parse(p) => {
                let bad = exprs
                    .iter()
                    .find(|s| lasalle_core::expr::Expr::parse(s, &["x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "t", "y"]).is_err())
                    .copied()
                    .unwrap_or("");
                self.expr_error(bad, &p)
            }
            other => self.core_error(other),
        })
    }

    fn require_system(&self) -> Result<&SystemSpec, CliError> {
        self.config.system.as_ref().ok_or_else(|| CliError::Config(format!("{}: `system` is required", self.path)))
    }

    /// Builds the configured system: a plain field or a control system.
    pub fn system(&self) -> Result<CorpusSystem, CliError> {
        match self.require_system()? {
            SystemSpec::Corpus { corpus, domain_radius, psi } => {
                let mut opts = CorpusOptions::default();
                if let Some(r) = domain_radius {
                    opts.domain_radius = *r;
                }
                if let Some(p) = psi {
                    opts.psi = self.with_exprs(&[p], Psi::from_expr(p))?;
                }
                Ok(corpus_get(corpus, &opts).map_err(|e| self.core_error(e))?.system)
            }
            SystemSpec::Expr { name, drift, input, output, domain_radius } => {
                let d: Vec<&str> = drift.iter().map(String::as_str).collect();
                let mut all = d.clone();
                let sys = match output {
                    Some(h) => {
                        let g: Option<Vec<&str>> = input.as_ref().map(|v| v.iter().map(String::as_str).collect());
                        all.extend(g.iter().flatten());
                        all.push(h);
                        let s = self.with_exprs(&all, AffineControlSystem::from_exprs(name.as_str(), &d, g.as_deref(), h))?;
                        CorpusSystem::Control(match domain_radius {
                            Some(r) => s.with_domain_radius(*r),
                            None => s,
                        })
                    }
                    None => {
                        if input.is_some() {
                            return Err(CliError::Config(format!("{}: `input` needs an `output`", self.path)));
                        }
                        let f = self.with_exprs(&all, TimeVaryingField::from_exprs(name.as_str(), &d))?;
                        CorpusSystem::Field(match domain_radius {
                            Some(r) => f.with_domain_radius(*r),
                            None => f,
                        })
                    }
                };
                Ok(sys)
            }
        }
    }

    pub fn field(&self) -> Result<TimeVaryingField, CliError> {
        Ok(self.system()?.field().clone())
    }

    pub fn control(&self) -> Result<AffineControlSystem, CliError> {
        self.system()?
            .control()
            .cloned()
            .ok_or_else(|| CliError::Config(format!("{}: this subcommand needs a system with an output", self.path)))
    }

    pub fn certificate(&self, dim: usize) -> Result<Certificate, CliError> {
        let spec = self
            .config
            .certificate
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{}: `certificate` is required", self.path)))?;
        let name = format!("V={}", spec.v);
        self.with_exprs(&[&spec.v, &spec.w], Certificate::from_exprs(name, dim, &spec.v, &spec.w))
    }

    pub fn feedback(&self) -> Result<Feedback, CliError> {
        let src = self.robust()?.feedback.as_str();
        self.with_exprs(&[src], Feedback::from_expr(src))
    }

    pub fn robust(&self) -> Result<&RobustSpec, CliError> {
        self.config.robust.as_ref().ok_or_else(|| CliError::Config(format!("{}: `robust` is required", self.path)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let c = LoadedConfig::parse(r#"{"system": {"corpus": "example2"}, "seed": 3}"#, "c.json").unwrap();
        assert_eq!(c.config.seed, 3);
        assert_eq!(c.config.outputs.dir, "out");
        assert!(c.control().is_ok());
    }

    #[test]
    fn syntax_errors_carry_line_and_column() {
        let err = LoadedConfig::parse("{\n  \"seed\": 1,\n  oops\n}", "c.json").unwrap_err();
        assert!(err.to_string().starts_with("c.json:3:3"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(LoadedConfig::parse(r#"{"seeds": 1}"#, "c.json").is_err());
    }

    #[test]
    fn nonpositive_overrides_are_rejected() {
        let err = LoadedConfig::parse(r#"{"tol": -1}"#, "c.json").unwrap_err();
        assert!(err.to_string().contains("tol must be positive"));
    }

    #[test]
    fn unknown_corpus_name() {
        assert!(LoadedConfig::parse(r#"{"system": {"corpus": "nope"}}"#, "c.json").is_err());
    }

    #[test]
    fn expression_errors_point_into_the_file() {
        let src = "{\n  \"system\": {\"corpus\": \"example1\"},\n  \"certificate\": {\"v\": \"x2^2 +\", \"w\": \"0\"}\n}";
        let c = LoadedConfig::parse(src, "c.json").unwrap();
        let err = c.certificate(2).unwrap_err().to_string();
        assert!(err.starts_with("c.json:3:"), "{err}");
    }

    #[test]
    fn expression_systems() {
        let src = r#"{"system": {"name": "lin", "drift": ["-x1 + x2", "-x2"], "input": ["0", "1"], "output": "x1", "domain_radius": 3}}"#;
        let c = LoadedConfig::parse(src, "c.json").unwrap();
        let s = c.control().unwrap();
        assert_eq!(s.domain_radius(), 3.0);
        assert_eq!(s.input_field(&[0.0, 0.0]), vec![0.0, 1.0]);
        let f = LoadedConfig::parse(r#"{"system": {"name": "f", "drift": ["-x1"]}}"#, "c.json").unwrap();
        assert!(f.control().is_err());
        assert!(f.field().is_ok());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash("{}"), config_hash("{}"));
        assert_ne!(config_hash("{}"), config_hash("{ }"));
        assert_eq!(config_hash("").len(), 64);
    }
}
