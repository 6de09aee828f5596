use std::fmt;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynsys::{StateFn, TimeVaryingField};
use crate::error::{Error, Result};
use crate::integrate::{integrate, Direction, IntegratorConfig, Termination, Trajectory};
use crate::sampling::{norm, LowDiscrepancy};

use super::sets::SetSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityStatus {
    Stable,
    Unstable,
    Attractive,
    NonAttractive,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EscapeWitness {
    pub t0: f64,
    pub x0: Vec<f64>,
    /// Time elapsed from `t0` to the first outward crossing of `radius`.
    pub escape_time: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceWitness {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub final_norm: f64,
    pub final_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsDelta {
    pub epsilon: f64,
    /// Largest working δ on the grid, `None` when none down to the
    /// resolution works.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub status: StabilityStatus,
    pub epsilon_delta_table: Vec<EpsDelta>,
    pub escape_witness: Option<EscapeWitness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_witness: Option<ConvergenceWitness>,
    pub horizon: f64,
    pub starts: usize,
    /// Largest value of the trajectory observer, when one was supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed_max: Option<f64>,
    /// Starts dropped because they left the zero-set tube.
    pub aborted: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl StabilityVerdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdicts serialize")
    }

    pub fn is(&self, status: StabilityStatus) -> bool {
        self.status == status
    }
}

/// Restricted-dynamics guard: a start is dropped as soon as a knot leaves
/// `{|W| ≤ tol}`.
#[derive(Clone)]
pub struct Tube {
    pub w: Arc<StateFn>,
    pub tol: f64,
}

impl fmt::Debug for Tube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tube").field("tol", &self.tol).finish()
    }
}

/// Where probe starts come from.
#[derive(Debug, Clone)]
pub enum StartSet {
    /// Low-discrepancy sphere (stability) or ball and boundary (attractivity)
    /// points.
    Sampled,
    /// Points of a set sample (restricted dynamics), optionally guarded by a
    /// tube around the zero set.
    Cloud { sample: SetSample, tube: Option<Tube> },
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub integrator: IntegratorConfig,
    pub t0_grid: Vec<f64>,
    pub sphere_points: usize,
    pub ball_points: usize,
    pub boundary_points: usize,
}

impl ProbeConfig {
    pub fn new(horizon: f64) -> Self {
        Self {
            integrator: IntegratorConfig::new(horizon),
            t0_grid: vec![0.0],
            sphere_points: 32,
            ball_points: 24,
            boundary_points: 8,
        }
    }

    pub fn with_t0_grid(mut self, grid: Vec<f64>) -> Self {
        self.t0_grid = grid;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.integrator.horizon
    }
}

/// Evaluated on every simulated trajectory, e.g. the worst slack of an
/// inequality along the knots.
pub type Observer<'a> = dyn Fn(&Trajectory) -> f64 + Sync + 'a;

fn fold_max(acc: Option<f64>, v: Option<f64>) -> Option<f64> {
    match (acc, v) {
        (Some(a), Some(b)) => Some(if b.is_nan() || b > a { b } else { a }),
        (a, b) => a.or(b),
    }
}

enum Outcome {
    Stayed(Trajectory),
    Escaped(f64),
    Aborted,
    Unfinished,
}

fn in_tube(traj: &Trajectory, tube: Option<&Tube>) -> bool {
    tube.map_or(true, |tb| traj.knots().iter().all(|k| (tb.w)(&k.x).abs() <= tb.tol))
}

fn run_start(
    field: &TimeVaryingField,
    t0: f64,
    x0: &[f64],
    cfg: &IntegratorConfig,
    radius: Option<f64>,
    tube: Option<&Tube>,
    observer: Option<&Observer<'_>>,
) -> Result<(Outcome, Option<f64>)> {
    let radii: Vec<f64> = radius.into_iter().collect();
    let traj = integrate(field, t0, x0, cfg, &radii)?;
    if !in_tube(&traj, tube) {
        warn!("start {x0:?} at t0={t0} left the zero-set tube; dropped");
        return Ok((Outcome::Aborted, None));
    }
    let seen = observer.map(|o| o(&traj));
    let outcome = match traj.terminated() {
        Termination::HorizonReached => Outcome::Stayed(traj),
        Termination::LeftDomain => {
            let t = radius
                .and_then(|r| traj.first_crossing(r, Direction::Outward))
                .map_or(traj.final_time(), |e| e.t);
            Outcome::Escaped(t - t0)
        }
        Termination::StepUnderflow | Termination::StepLimit => Outcome::Unfinished,
    };
    Ok((outcome, seen))
}

fn cloud_points(sample: &SetSample, radius: f64) -> Vec<Vec<f64>> {
    sample.points().iter().filter(|p| norm(p) <= radius).cloned().collect()
}

struct DeltaResult {
    works: bool,
    escape: Option<EscapeWitness>,
    starts: usize,
    aborted: usize,
    observed: Option<f64>,
}

/// Searches, for each ε, the largest δ on the grid `ε 2^(-k/4) ≥
/// delta_resolution` such that all starts with `‖x0‖ = δ` (or `≤ δ` for a
/// cloud) and all `t0` stay inside the ε-ball over the horizon.
///
/// Unstable when some ε admits no δ and the earliest escape at the
/// smallest δ happens before half the horizon; inconclusive when that
/// escape is later (possibly horizon-limited) or trajectories stopped early.
pub fn uniform_stability_probe(
    field: &TimeVaryingField,
    eps_list: &[f64],
    delta_resolution: f64,
    starts: &StartSet,
    cfg: &ProbeConfig,
    sampler: &LowDiscrepancy,
) -> Result<StabilityVerdict> {
    uniform_stability_probe_observed(field, eps_list, delta_resolution, starts, cfg, sampler, None)
}

/// [`uniform_stability_probe`] that also folds `observer` over every
/// simulated trajectory into `observed_max`.
pub fn uniform_stability_probe_observed(
    field: &TimeVaryingField,
    eps_list: &[f64],
    delta_resolution: f64,
    starts: &StartSet,
    cfg: &ProbeConfig,
    sampler: &LowDiscrepancy,
    observer: Option<&Observer<'_>>,
) -> Result<StabilityVerdict> {
    cfg.integrator.validate()?;
    if !(delta_resolution > 0.0) {
        return Err(Error::Precondition(format!("delta_resolution must be positive, got {delta_resolution}")));
    }
    for &eps in eps_list {
        if !(eps > 0.0 && eps <= field.domain_radius()) {
            return Err(Error::Precondition(format!(
                "epsilon {eps} outside (0, {}]",
                field.domain_radius()
            )));
        }
    }
    let horizon = cfg.horizon();
    let mut table = Vec::with_capacity(eps_list.len());
    let mut witness: Option<EscapeWitness> = None;
    let mut unresolved = false;
    let mut total = 0;
    let mut aborted = 0;
    let mut observed = None;
    for &eps in eps_list {
        let bounded = field.clone().with_domain_radius(eps * (1.0 + 1e-9));
        let mut found = None;
        let mut last_fail: Option<DeltaResult> = None;
        let mut k = 0;
        loop {
            let delta = eps * 2f64.powf(-(k as f64) / 4.0);
            if delta < delta_resolution {
                break;
            }
            let res = probe_delta(&bounded, eps, delta, starts, cfg, sampler, observer)?;
            total += res.starts;
            aborted += res.aborted;
            observed = fold_max(observed, res.observed);
            if res.works {
                found = Some(delta);
                break;
            }
            last_fail = Some(res);
            k += 1;
        }
        if found.is_none() {
            match last_fail.and_then(|r| r.escape) {
                Some(w) if w.escape_time < 0.5 * horizon => {
                    if witness.is_none() {
                        witness = Some(w);
                    }
                }
                _ => unresolved = true,
            }
        }
        table.push(EpsDelta { epsilon: eps, delta: found });
    }
    // a δ that keeps starts inside ε also keeps them inside any larger ε
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.sort_by(|&a, &b| table[a].epsilon.total_cmp(&table[b].epsilon));
    let mut best: Option<f64> = None;
    for &i in &order {
        best = match (best, table[i].delta) {
            (Some(b), Some(d)) => Some(b.max(d)),
            (b, d) => b.or(d),
        };
        if let Some(b) = best {
            table[i].delta = Some(b.min(table[i].epsilon));
        }
    }
    let all_found = table.iter().all(|e| e.delta.is_some());
    let (status, note) = if all_found {
        (StabilityStatus::Stable, None)
    } else if witness.is_some() {
        (StabilityStatus::Unstable, None)
    } else {
        debug_assert!(unresolved);
        (
            StabilityStatus::Inconclusive,
            Some("no δ found but the earliest escape is late in the horizon, or trajectories stopped early".into()),
        )
    };
    Ok(StabilityVerdict {
        status,
        epsilon_delta_table: table,
        escape_witness: if status == StabilityStatus::Unstable { witness } else { None },
        convergence_witness: None,
        horizon,
        starts: total,
        observed_max: observed,
        aborted,
        note,
    })
}

fn probe_delta(
    field: &TimeVaryingField,
    eps: f64,
    delta: f64,
    starts: &StartSet,
    cfg: &ProbeConfig,
    sampler: &LowDiscrepancy,
    observer: Option<&Observer<'_>>,
) -> Result<DeltaResult> {
    let (points, tube) = match starts {
        StartSet::Sampled => (sampler.sphere(field.dim(), delta, cfg.sphere_points), None),
        StartSet::Cloud { sample, tube } => (cloud_points(sample, delta), tube.as_ref()),
    };
    let jobs: Vec<(f64, &Vec<f64>)> =
        cfg.t0_grid.iter().flat_map(|&t0| points.iter().map(move |p| (t0, p))).collect();
    let outcomes: Vec<(Outcome, Option<f64>)> = jobs
        .par_iter()
        .map(|&(t0, x0)| run_start(field, t0, x0, &cfg.integrator, Some(eps), tube, observer))
        .collect::<Result<_>>()?;
    let mut escape: Option<EscapeWitness> = None;
    let mut works = true;
    let mut aborted = 0;
    let mut observed = None;
    for (&(t0, x0), (o, seen)) in jobs.iter().zip(&outcomes) {
        observed = fold_max(observed, *seen);
        match o {
            Outcome::Stayed(_) => {}
            Outcome::Aborted => aborted += 1,
            Outcome::Unfinished => works = false,
            Outcome::Escaped(t) => {
                works = false;
                if escape.as_ref().map_or(true, |w| *t < w.escape_time) {
                    escape = Some(EscapeWitness { t0, x0: x0.clone(), escape_time: *t, radius: eps });
                }
            }
        }
    }
    Ok(DeltaResult { works, escape, starts: jobs.len(), aborted, observed })
}

const WINDOWS: usize = 4;
const WINDOW_SAMPLES: usize = 16;

/// Maxima of `‖x‖` over consecutive windows of the second half of the run.
fn window_maxima(traj: &Trajectory) -> Vec<f64> {
    let (t0, t1) = (traj.t0(), traj.final_time());
    let half = t0 + 0.5 * (t1 - t0);
    let width = (t1 - half) / WINDOWS as f64;
    (0..WINDOWS)
        .map(|w| {
            let a = half + width * w as f64;
            let mut m: f64 = 0.0;
            for s in 0..=WINDOW_SAMPLES {
                let t = (a + width * s as f64 / WINDOW_SAMPLES as f64).min(t1);
                if let Some(x) = traj.interpolate(t) {
                    m = m.max(norm(&x));
                }
            }
            for k in traj.knots().iter().filter(|k| k.t >= a && k.t <= a + width) {
                m = m.max(norm(&k.x));
            }
            m
        })
        .collect()
}

/// Attractive when every start reaches `‖x(t0 + horizon)‖ < target_tol`
/// inside the domain and the windowed maxima of `‖x‖` over the second half
/// of the run do not increase.
pub fn attractivity_probe(
    field: &TimeVaryingField,
    ball_radius: f64,
    target_tol: f64,
    starts: &StartSet,
    cfg: &ProbeConfig,
    sampler: &LowDiscrepancy,
) -> Result<StabilityVerdict> {
    attractivity_probe_observed(field, ball_radius, target_tol, starts, cfg, sampler, None)
}

/// [`attractivity_probe`] that also folds `observer` over every simulated
/// trajectory into `observed_max`.
pub fn attractivity_probe_observed(
    field: &TimeVaryingField,
    ball_radius: f64,
    target_tol: f64,
    starts: &StartSet,
    cfg: &ProbeConfig,
    sampler: &LowDiscrepancy,
    observer: Option<&Observer<'_>>,
) -> Result<StabilityVerdict> {
    cfg.integrator.validate()?;
    if !(ball_radius > 0.0 && ball_radius <= field.domain_radius()) || !(target_tol > 0.0) {
        return Err(Error::Precondition(format!(
            "need 0 < ball_radius <= {} and target_tol > 0",
            field.domain_radius()
        )));
    }
    let (points, tube) = match starts {
        StartSet::Sampled => {
            let mut p = sampler.ball(field.dim(), ball_radius, cfg.ball_points);
            p.extend(sampler.sphere(field.dim(), ball_radius, cfg.boundary_points));
            (p, None)
        }
        StartSet::Cloud { sample, tube } => (cloud_points(sample, ball_radius), tube.as_ref()),
    };
    let jobs: Vec<(f64, &Vec<f64>)> =
        cfg.t0_grid.iter().flat_map(|&t0| points.iter().map(move |p| (t0, p))).collect();
    let outcomes: Vec<(Outcome, Option<f64>)> = jobs
        .par_iter()
        .map(|&(t0, x0)| run_start(field, t0, x0, &cfg.integrator, None, tube, observer))
        .collect::<Result<_>>()?;
    let mut worst: Option<ConvergenceWitness> = None;
    let mut aborted = 0;
    let mut failed = false;
    let mut observed = None;
    for (&(t0, x0), (o, seen)) in jobs.iter().zip(&outcomes) {
        observed = fold_max(observed, *seen);
        let (ok, final_norm, final_time) = match o {
            Outcome::Aborted => {
                aborted += 1;
                continue;
            }
            Outcome::Stayed(traj) => {
                let m = window_maxima(traj);
                let decreasing = m.windows(2).all(|w| w[1] <= w[0] + 1e-12);
                let n = norm(traj.final_state());
                (n < target_tol && decreasing, n, traj.final_time())
            }
            Outcome::Escaped(t) => (false, f64::INFINITY, t0 + t),
            Outcome::Unfinished => (false, f64::INFINITY, f64::NAN),
        };
        if !ok {
            failed = true;
            if worst.as_ref().map_or(true, |w| final_norm > w.final_norm) {
                worst = Some(ConvergenceWitness { t0, x0: x0.clone(), final_norm, final_time });
            }
        }
    }
    let considered = jobs.len() - aborted;
    let status = if considered == 0 {
        StabilityStatus::Inconclusive
    } else if failed {
        StabilityStatus::NonAttractive
    } else {
        StabilityStatus::Attractive
    };
    Ok(StabilityVerdict {
        status,
        epsilon_delta_table: Vec::new(),
        escape_witness: None,
        convergence_witness: worst,
        horizon: cfg.horizon(),
        starts: jobs.len(),
        observed_max: observed,
        aborted,
        note: (considered == 0).then(|| "no start available".to_string()),
    })
}
