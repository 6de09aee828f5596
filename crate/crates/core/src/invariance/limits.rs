use rayon::prelude::*;
use serde::Serialize;

use crate::dynsys::TimeVaryingField;
use crate::error::{Error, Result};
use crate::integrate::{integrate, IntegratorConfig, Termination, Trajectory};
use crate::lyapunov::Certificate;
use crate::sampling::{distance, dot};
use crate::verdict::{Status, Verdict, Witness, WorstCase};

use super::sets::{set_distance, SetLabel, SetSample};

/// Number of evenly spaced times at which tail distances are evaluated.
pub const TAIL_SAMPLES: usize = 64;
const TAIL_WINDOWS: usize = 4;

fn require_bounded(traj: &Trajectory) -> Result<()> {
    if traj.terminated() != Termination::HorizonReached {
        return Err(Error::Inconclusive(format!(
            "trajectory ended with {:?} before the horizon; limit analysis needs a bounded trajectory",
            traj.terminated()
        )));
    }
    Ok(())
}

/// Knot states after `start`, refined by interpolation so that consecutive
/// states are at most `spacing` apart.
fn tail_states(traj: &Trajectory, start: f64, spacing: f64) -> Vec<Vec<f64>> {
    let knots = traj.knots();
    let mut out: Vec<Vec<f64>> = Vec::new();
    for pair in knots.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.t < start {
            continue;
        }
        if out.is_empty() {
            let first = if a.t >= start { a.x.clone() } else { traj.interpolate(start).unwrap_or_else(|| a.x.clone()) };
            out.push(first);
        }
        let gap = distance(&a.x, &b.x);
        let pieces = (gap / spacing).ceil().max(1.0) as usize;
        for j in 1..pieces {
            let t = a.t + (b.t - a.t) * j as f64 / pieces as f64;
            if t > start {
                if let Some(x) = traj.interpolate(t) {
                    out.push(x);
                }
            }
        }
        out.push(b.x.clone());
    }
    if out.is_empty() {
        if let Some(k) = knots.last() {
            out.push(k.x.clone());
        }
    }
    out
}

/// Estimates the ω-limit set by greedy leader clustering of the states in
/// the last `tail_fraction` of the run. Cluster leaders are actual states.
pub fn omega_limit_estimate(traj: &Trajectory, tail_fraction: f64, cluster_radius: f64) -> Result<SetSample> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) || !(cluster_radius > 0.0) {
        return Err(Error::Precondition(format!(
            "need tail_fraction in (0, 1] and cluster_radius > 0, got {tail_fraction} and {cluster_radius}"
        )));
    }
    require_bounded(traj)?;
    let start = traj.final_time() - tail_fraction * (traj.final_time() - traj.t0());
    let mut leaders: Vec<Vec<f64>> = Vec::new();
    for x in tail_states(traj, start, 0.5 * cluster_radius) {
        if !leaders.iter().any(|c| distance(c, &x) <= cluster_radius) {
            leaders.push(x);
        }
    }
    Ok(SetSample::new(leaders, cluster_radius, SetLabel::Omega))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BarbalatDiagnostic {
    /// Oscillation of `∫ g` over the last quarter of the run is below 1e-6.
    pub integral_converged: bool,
    /// `max |g|` over the last quarter.
    pub tail_sup: f64,
    pub integral: f64,
    pub tail_oscillation: f64,
}

/// Evaluates `g(t) = ∇V(x(t))·f(t, x(t))` at the knots and its running
/// integral (Simpson's rule on each step, midpoints from the interpolant).
pub fn barbalat_diagnostic(traj: &Trajectory, cert: &Certificate, field: &TimeVaryingField) -> BarbalatDiagnostic {
    let knots = traj.knots();
    let g_at = |t: f64, x: &[f64]| dot(&cert.gradient(x), &field.eval(t, x));
    let g: Vec<f64> = knots.iter().map(|k| g_at(k.t, &k.x)).collect();
    let quarter = traj.final_time() - 0.25 * (traj.final_time() - traj.t0());
    let mut integral = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut tail_sup: f64 = 0.0;
    for i in 0..knots.len() {
        if i > 0 {
            let (a, b) = (knots[i - 1].t, knots[i].t);
            let mid = 0.5 * (a + b);
            let gm = traj.interpolate(mid).map_or(0.5 * (g[i] + g[i - 1]), |x| g_at(mid, &x));
            integral += (b - a) / 6.0 * (g[i - 1] + 4.0 * gm + g[i]);
        }
        if knots[i].t >= quarter {
            lo = lo.min(integral);
            hi = hi.max(integral);
            tail_sup = tail_sup.max(g[i].abs());
        }
    }
    let oscillation = if hi >= lo { hi - lo } else { 0.0 };
    BarbalatDiagnostic {
        integral_converged: oscillation < 1e-6,
        tail_sup,
        integral,
        tail_oscillation: oscillation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceStart {
    pub t0: f64,
    pub x0: Vec<f64>,
    /// Reached the horizon inside the domain.
    pub bounded: bool,
    pub median_tail_distance: f64,
    pub window_medians: Vec<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceCheck {
    pub verdict: Verdict,
    pub threshold: f64,
    pub horizon: f64,
    pub starts: Vec<InvarianceStart>,
    /// Starts whose trajectories left the domain: outside the bounded-trajectory
    /// hypothesis and excluded from the verdict.
    pub excluded: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Checks `d(x(t), N) → 0` along trajectories from every `(t0, x0)`.
///
/// Distances are evaluated at evenly spaced times in the last 10 % of the
/// run. A bounded start passes when the median is below
/// `10 (N.tolerance + rel_tol)` and the medians of four consecutive windows
/// do not increase by more than that threshold.
pub fn invariance_principle_check(
    field: &TimeVaryingField,
    n_sample: &SetSample,
    initial_points: &[Vec<f64>],
    t0_grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<InvarianceCheck> {
    if n_sample.is_empty() {
        return Err(Error::Precondition("invariant-set sample is empty".into()));
    }
    cfg.validate()?;
    let threshold = 10.0 * (n_sample.tolerance() + cfg.rel_tol);
    let jobs: Vec<(f64, &Vec<f64>)> = t0_grid
        .iter()
        .flat_map(|&t0| initial_points.iter().map(move |x| (t0, x)))
        .collect();
    let starts: Vec<InvarianceStart> = jobs
        .par_iter()
        .map(|&(t0, x0)| -> Result<InvarianceStart> {
            let traj = integrate(field, t0, x0, cfg, &[])?;
            let bounded = traj.terminated() == Termination::HorizonReached;
            let end = traj.final_time();
            let from = end - 0.1 * (end - t0);
            let mut d = Vec::with_capacity(TAIL_SAMPLES);
            for k in 0..TAIL_SAMPLES {
                let t = from + (end - from) * k as f64 / (TAIL_SAMPLES - 1) as f64;
                let x = traj.interpolate(t.min(end)).unwrap_or_else(|| traj.final_state().to_vec());
                d.push(set_distance(&x, n_sample)?);
            }
            let per = TAIL_SAMPLES / TAIL_WINDOWS;
            let window_medians: Vec<f64> = d.chunks(per).map(|c| median(&mut c.to_vec())).collect();
            let med = median(&mut d);
            let monotone = window_medians.windows(2).all(|w| w[1] <= w[0] + threshold);
            Ok(InvarianceStart {
                t0,
                x0: x0.clone(),
                bounded,
                median_tail_distance: med,
                window_medians,
                passed: bounded && med < threshold && monotone,
            })
        })
        .collect::<Result<_>>()?;
    let excluded = starts.iter().filter(|s| !s.bounded).count();
    let mut worst = WorstCase::default();
    for s in starts.iter().filter(|s| s.bounded && !s.passed) {
        worst.offer(s.median_tail_distance, || Witness::at_time(&s.x0, s.t0, s.median_tail_distance));
    }
    let considered = starts.len() - excluded;
    let status = if considered == 0 {
        Status::Inconclusive
    } else if worst.magnitude().is_some() {
        Status::Fail
    } else {
        Status::Pass
    };
    let mut verdict =
        Verdict::new("invariance_principle", status, threshold, considered).with_witness(worst.into_witness());
    if excluded > 0 {
        verdict = verdict.with_note(format!(
            "{excluded} start(s) left the domain and are reported outside the bounded-trajectory hypothesis"
        ));
    }
    Ok(InvarianceCheck {
        verdict,
        threshold,
        horizon: cfg.horizon,
        starts,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{corpus_get, cubic_decay, CorpusOptions};
    use crate::sampling::{norm, LowDiscrepancy};

    fn example2() -> TimeVaryingField {
        corpus_get("example2", &CorpusOptions::default()).unwrap().system.field().clone()
    }

    fn rotation() -> TimeVaryingField {
        TimeVaryingField::from_exprs("rotation", &["-x2", "x1"]).unwrap()
    }

    fn x_axis(half: f64, count: usize) -> SetSample {
        let pts = (0..count)
            .map(|k| vec![-half + 2.0 * half * k as f64 / (count - 1) as f64, 0.0])
            .collect();
        SetSample::new(pts, 1e-10, SetLabel::N)
    }

    #[test]
    fn omega_limit_of_converging_trajectory_is_one_cluster() {
        let traj = integrate(&example2(), 0.0, &[0.5, 0.5], &IntegratorConfig::new(200.0), &[]).unwrap();
        let r = 0.1;
        let om = omega_limit_estimate(&traj, 0.1, r).unwrap();
        assert_eq!(om.label(), SetLabel::Omega);
        assert_eq!(om.len(), 1);
        assert!(norm(&om.points()[0]) < 2.0 * r);
    }

    #[test]
    fn omega_limit_of_equilibrium() {
        let traj = integrate(&example2(), 0.0, &[0.0, 0.0], &IntegratorConfig::new(50.0), &[]).unwrap();
        let om = omega_limit_estimate(&traj, 0.5, 0.01).unwrap();
        assert_eq!(om.points(), &[vec![0.0, 0.0]]);
    }

    #[test]
    fn omega_limit_of_closed_orbit_covers_the_circle() {
        let traj = integrate(&rotation(), 0.0, &[1.0, 0.0], &IntegratorConfig::new(100.0), &[]).unwrap();
        let r = 0.1;
        let om = omega_limit_estimate(&traj, 0.2, r).unwrap();
        for c in om.points() {
            assert!((norm(c) - 1.0).abs() < 1e-6);
        }
        let mut angles: Vec<f64> = om.points().iter().map(|c| c[1].atan2(c[0])).collect();
        angles.sort_by(f64::total_cmp);
        let mut gaps: Vec<f64> = angles.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.push(angles[0] + std::f64::consts::TAU - angles[angles.len() - 1]);
        // chord length of the widest gap
        let widest = gaps.iter().cloned().fold(0.0, f64::max);
        assert!(2.0 * (widest / 2.0).sin() < 2.0 * r);
    }

    #[test]
    fn omega_limit_needs_a_bounded_trajectory() {
        let f = corpus_get("example1", &CorpusOptions::default()).unwrap().system.field().clone();
        let traj = integrate(&f, 0.0, &[0.0, 1.0], &IntegratorConfig::new(100.0), &[]).unwrap();
        assert_eq!(traj.terminated(), Termination::LeftDomain);
        assert!(matches!(omega_limit_estimate(&traj, 0.1, 0.1), Err(Error::Inconclusive(_))));
    }

    #[test]
    fn barbalat_for_example2() {
        let f = example2();
        let v = Certificate::from_exprs("x2^2/2", 2, "x2^2/2", "-x2^4").unwrap();
        let traj = integrate(&f, 0.0, &[0.5, 0.5], &IntegratorConfig::new(200.0), &[]).unwrap();
        let b = barbalat_diagnostic(&traj, &v, &f);
        // g = -x2^4 with x2 from the closed form
        // sup over the tail is attained at the first knot past t = 150
        assert!(b.tail_sup <= cubic_decay(0.5, 150.0).powi(4) * (1.0 + 1e-6));
        assert!(b.tail_sup >= cubic_decay(0.5, 160.0).powi(4));
        assert!(b.tail_sup < 1e-4);
        // ∫ g = V(x(T)) - V(x0)
        let want = 0.5 * cubic_decay(0.5, 200.0).powi(2) - 0.125;
        assert!((b.integral - want).abs() < 1e-5, "{} vs {want}", b.integral);
        // the remaining integral `V(x(150)) - V(x(200))` is still ~4e-4
        let want_osc = 0.5 * (cubic_decay(0.5, 150.0).powi(2) - cubic_decay(0.5, 200.0).powi(2));
        assert!((b.tail_oscillation - want_osc).abs() < 0.1 * want_osc);
        assert!(b.tail_oscillation > 1e-6);
        assert!(!b.integral_converged);

        let long = integrate(&f, 0.0, &[0.5, 0.5], &IntegratorConfig::new(400.0), &[]).unwrap();
        assert!(barbalat_diagnostic(&long, &v, &f).tail_sup < b.tail_sup);
    }

    #[test]
    fn barbalat_trivial_cases() {
        let f = example2();
        let v = Certificate::from_exprs("x2^2/2", 2, "x2^2/2", "-x2^4").unwrap();
        let eq = integrate(&f, 0.0, &[0.0, 0.0], &IntegratorConfig::new(10.0), &[]).unwrap();
        let b = barbalat_diagnostic(&eq, &v, &f);
        assert!(b.integral_converged);
        assert_eq!(b.tail_sup, 0.0);

        let rot = rotation();
        let energy = Certificate::from_exprs("r2", 2, "x1^2 + x2^2", "0").unwrap();
        let circ = integrate(&rot, 0.0, &[1.0, 0.0], &IntegratorConfig::new(20.0), &[]).unwrap();
        let b = barbalat_diagnostic(&circ, &energy, &rot);
        assert!(b.integral_converged);
        assert!(b.tail_sup < 1e-14);
    }

    #[test]
    fn distance_to_n_follows_the_closed_form() {
        // d(x(t), N) = |x2(t)| for the x1-axis; the median over the tail
        // decays like t^(-1/2), far above the combined tolerances at t = 200
        let n = x_axis(2.0, 2001);
        let starts = vec![vec![0.3, 0.4], vec![-0.2, -0.1]];
        let cfg = IntegratorConfig::new(200.0);
        let chk = invariance_principle_check(&example2(), &n, &starts, &[0.0], &cfg).unwrap();
        assert_eq!(chk.excluded, 0);
        for s in &chk.starts {
            let x2_mid = cubic_decay(s.x0[1], 190.0).abs();
            assert!((s.median_tail_distance - x2_mid).abs() < 2e-3, "{} vs {x2_mid}", s.median_tail_distance);
            assert!(s.window_medians.windows(2).all(|w| w[1] <= w[0]));
        }
        assert!(chk.verdict.failed());
        assert!(chk.threshold < 1e-7);
    }

    #[test]
    fn starts_in_n_pass_immediately() {
        // on the x-axis example 1 is at rest, so trajectories sit on sample points
        let f = corpus_get("example1", &CorpusOptions::default()).unwrap().system.field().clone();
        let n = x_axis(1.0, 21);
        let starts = vec![n.points()[3].clone(), n.points()[15].clone()];
        let chk = invariance_principle_check(&f, &n, &starts, &[0.0, 5.0], &IntegratorConfig::new(50.0)).unwrap();
        assert!(chk.verdict.passed(), "{:?}", chk.verdict);
        assert_eq!(chk.starts.len(), 4);
        for s in &chk.starts {
            assert!(s.median_tail_distance <= n.tolerance() + 1e-6);
        }
    }

    #[test]
    fn unbounded_starts_are_reported_separately() {
        let f = corpus_get("example1", &CorpusOptions::default()).unwrap().system.field().clone();
        let n = x_axis(2.0, 401);
        let s = LowDiscrepancy::new(0).ball(2, 0.5, 8);
        let chk = invariance_principle_check(&f, &n, &s, &[0.0], &IntegratorConfig::new(100.0)).unwrap();
        assert!(chk.excluded > 0);
        assert!(chk.verdict.note.is_some());
    }
}
