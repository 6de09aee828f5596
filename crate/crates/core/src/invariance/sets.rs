use std::io::Write;
use std::sync::Arc;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynsys::{StateFn, TimeVaryingField};
use crate::error::{Error, Result};
use crate::integrate::{fmt_f64, integrate, IntegratorConfig, Termination};
use crate::lyapunov::check_h3_time_invariance;
use crate::sampling::{distance, norm, LowDiscrepancy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetLabel {
    E,
    N,
    #[serde(rename = "omega")]
    Omega,
    #[serde(rename = "custom")]
    Custom,
}

/// A finite point cloud standing in for a subset of the domain ball.
#[derive(Debug, Clone, PartialEq)]
pub struct SetSample {
    points: Vec<Vec<f64>>,
    tolerance: f64,
    label: SetLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetadata {
    pub label: SetLabel,
    pub tolerance: f64,
    pub count: usize,
}

impl SetSample {
    pub fn new(points: Vec<Vec<f64>>, tolerance: f64, label: SetLabel) -> Self {
        Self { points, tolerance, label }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Membership slack used to generate the sample.
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn label(&self) -> SetLabel {
        self.label
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_label(mut self, label: SetLabel) -> Self {
        self.label = label;
        self
    }

    pub fn metadata(&self) -> SetMetadata {
        SetMetadata {
            label: self.label,
            tolerance: self.tolerance,
            count: self.points.len(),
        }
    }

    /// One row `x1,...,xn` per point. `dim` sets the header when the sample
    /// is empty.
    pub fn to_csv<W: Write>(&self, w: W, dim: usize) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.points.first().map_or(dim, Vec::len);
        wr.write_record((1..=n).map(|i| format!("x{i}")))?;
        for p in &self.points {
            wr.write_record(p.iter().map(|v| fmt_f64(*v)))?;
        }
        wr.flush()?;
        Ok(())
    }
}

const SCAN_POINTS: usize = 32;

fn bisect(w: &StateFn, p: &mut [f64], d: usize, mut lo: f64, mut hi: f64) -> f64 {
    p[d] = lo;
    let f_lo = w(p);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        p[d] = mid;
        let f = w(p);
        if f == 0.0 {
            return mid;
        }
        if (f < 0.0) == (f_lo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    p[d] = lo;
    let a = w(p).abs();
    p[d] = hi;
    if a <= w(p).abs() {
        lo
    } else {
        hi
    }
}

fn golden_min(w: &StateFn, p: &mut [f64], d: usize, mut lo: f64, mut hi: f64) -> f64 {
    const R: f64 = 0.618_033_988_749_894_9;
    let f = |s: f64, p: &mut [f64]| {
        p[d] = s;
        w(p).abs()
    };
    let mut a = hi - R * (hi - lo);
    let mut b = lo + R * (hi - lo);
    let mut fa = f(a, p);
    let mut fb = f(b, p);
    for _ in 0..200 {
        if hi - lo <= 1e-15 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - R * (hi - lo);
            fa = f(a, p);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + R * (hi - lo);
            fb = f(b, p);
        }
    }
    if fa <= fb {
        a
    } else {
        b
    }
}

/// Root-polishes `seed` along each coordinate line through it, returning
/// the candidate with `|W| ≤ tol` closest to the seed.
fn polish(w: &StateFn, seed: &[f64], radius: f64, tol: f64) -> Option<Vec<f64>> {
    if w(seed).abs() <= tol {
        return Some(seed.to_vec());
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut p = seed.to_vec();
    for d in 0..seed.len() {
        let rest: f64 = seed
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != d)
            .map(|(_, v)| v * v)
            .sum();
        let half = (radius * radius - rest).max(0.0).sqrt();
        if half == 0.0 {
            continue;
        }
        let s: Vec<f64> = (0..SCAN_POINTS)
            .map(|k| -half + 2.0 * half * k as f64 / (SCAN_POINTS - 1) as f64)
            .collect();
        let vals: Vec<f64> = s
            .iter()
            .map(|&si| {
                p[d] = si;
                w(&p)
            })
            .collect();
        let mut candidates = Vec::new();
        for k in 0..SCAN_POINTS {
            if vals[k].abs() <= tol {
                candidates.push(s[k]);
            }
            if k + 1 < SCAN_POINTS && vals[k] * vals[k + 1] < 0.0 {
                candidates.push(bisect(w, &mut p, d, s[k], s[k + 1]));
            }
            if k > 0 && k + 1 < SCAN_POINTS && vals[k].abs() <= vals[k - 1].abs() && vals[k].abs() <= vals[k + 1].abs()
            {
                candidates.push(golden_min(w, &mut p, d, s[k - 1], s[k + 1]));
            }
        }
        for c in candidates {
            p[d] = c;
            if w(&p).abs() <= tol && norm(&p) <= radius {
                let gap = (c - seed[d]).abs();
                if best.as_ref().map_or(true, |(g, _)| gap < *g) {
                    best = Some((gap, p.clone()));
                }
            }
        }
        p[d] = seed[d];
    }
    best.map(|(_, x)| x)
}

/// Samples `E = {|W| ≤ tol}` in the ball: the origin and up to `budget`
/// low-discrepancy seeds, each polished along coordinate lines by bisection
/// on sign changes and golden-section search on local minima of `|W|`.
/// Returns at most `budget` distinct points, possibly none.
pub fn sample_zero_set(
    w: &StateFn,
    dim: usize,
    radius: f64,
    tol: f64,
    budget: usize,
    sampler: &LowDiscrepancy,
) -> SetSample {
    let mut seeds = vec![vec![0.0; dim]];
    seeds.extend(sampler.ball(dim, radius, budget.saturating_sub(1)));
    let polished: Vec<Option<Vec<f64>>> = seeds.par_iter().map(|s| polish(w, s, radius, tol)).collect();
    let mut points: Vec<Vec<f64>> = Vec::new();
    for p in polished.into_iter().flatten() {
        if points.len() >= budget {
            break;
        }
        if !points.iter().any(|q| distance(q, &p) <= 1e-12) {
            points.push(p);
        }
    }
    SetSample::new(points, tol, SetLabel::E)
}

/// Outer approximation of the maximal positive invariant set inside `E`:
/// keeps the starts of `e_sample` whose trajectories over `[0, horizon]`
/// satisfy `|W(x(t))| ≤ tube_tol` at every knot.
///
/// Points of the true invariant set are kept when integration is accurate;
/// spurious points can survive a short horizon.
pub fn approximate_invariant_set(
    field: &TimeVaryingField,
    e_sample: &SetSample,
    w: Arc<StateFn>,
    horizon: f64,
    tube_tol: f64,
) -> Result<SetSample> {
    let cfg = IntegratorConfig::new(horizon);
    cfg.validate()?;
    if e_sample.is_empty() {
        return Ok(SetSample::new(Vec::new(), tube_tol, SetLabel::N));
    }
    let grid: Vec<f64> = (0..10).map(|k| horizon * k as f64 / 9.0).collect();
    let h3 = check_h3_time_invariance(field, e_sample, &grid);
    if h3.failed() {
        warn!("field `{}` is not time-invariant on the zero-set sample", field.name());
    }
    let kept: Vec<Option<Vec<f64>>> = e_sample
        .points()
        .par_iter()
        .map(|x0| match integrate(field, 0.0, x0, &cfg, &[]) {
            Ok(traj) => {
                let inside = traj.terminated() == Termination::HorizonReached
                    && traj.knots().iter().all(|k| w(&k.x).abs() <= tube_tol);
                inside.then(|| x0.clone())
            }
            Err(e) => {
                debug!("dropping {x0:?} from invariant-set filter: {e}");
                None
            }
        })
        .collect();
    Ok(SetSample::new(kept.into_iter().flatten().collect(), tube_tol, SetLabel::N))
}

/// `min_{x ∈ s} ‖p - x‖`.
pub fn set_distance(p: &[f64], s: &SetSample) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::Precondition("distance to an empty set sample".into()));
    }
    Ok(s.points().iter().map(|x| distance(p, x)).fold(f64::INFINITY, f64::min))
}
