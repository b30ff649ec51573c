//! Randomized objective checks and trajectory invariants.

use std::sync::Arc;

use serde::Serialize;

use crate::distribution::{Distribution, PiecewiseConstant1D};
use crate::engine::Trace;
use crate::error::Result;
use crate::geometry::Centers;
use crate::moments::MomentOracle;
use crate::objective::{cost, fd_gradient, gradient, quadratic_bound, surrogate_cost};
use crate::rng::SimRng;

/// One-dimensional exact-oracle instances used when no config is given.
pub fn default_instances() -> Vec<Arc<dyn Distribution>> {
    let mk = |b: Vec<f64>, d: Vec<f64>| -> Arc<dyn Distribution> {
        Arc::new(PiecewiseConstant1D::new(b, d).expect("built-in instance is valid"))
    };
    vec![
        mk(vec![0.0, 1.0], vec![1.0]),
        mk(vec![0.0, 0.25, 0.5, 1.0], vec![0.4, 1.6, 1.0]),
        mk(vec![-1.0, 0.0, 1.0], vec![0.25, 0.75]),
    ]
}

/// `k` draws from `dist`, redrawn until pairwise separation reaches `min_sep`.
pub fn random_centers(dist: &dyn Distribution, k: usize, min_sep: f64, rng: &mut SimRng) -> Result<Centers> {
    loop {
        let mut coords = Vec::with_capacity(k * dist.dimension());
        for _ in 0..k {
            coords.extend(dist.sample(rng)?);
        }
        let w = Centers::from_flat(k, dist.dimension(), coords)?;
        if k < 2 || w.min_separation()?.value >= min_sep {
            return Ok(w);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GradientSuite {
    pub probes: usize,
    pub step: f64,
    pub tolerance: f64,
    pub max_error: f64,
    pub failures: usize,
}

impl GradientSuite {
    pub fn pass(&self) -> bool {
        self.failures == 0
    }
}

/// Analytic gradient against central differences on random tuples, cycling
/// through `k ∈ {1, 2, 3}` and the given instances.
pub fn gradient_suite(
    instances: &[Arc<dyn Distribution>],
    probes: usize,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradientSuite> {
    let mut rng = SimRng::new(seed, 11);
    let oracle = MomentOracle::exact();
    let mut out = GradientSuite { probes, step, tolerance, ..Default::default() };
    for p in 0..probes {
        let dist = instances[p % instances.len()].as_ref();
        let k = 1 + (p / instances.len()) % 3;
        let w = random_centers(dist, k, 0.01, &mut rng)?;
        let analytic = gradient(dist, &w, &oracle)?;
        let fd = fd_gradient(dist, &w, step)?;
        let err = analytic.max_abs_diff(&fd);
        out.max_error = out.max_error.max(err);
        if !(err < tolerance) {
            out.failures += 1;
            log::warn!("gradient mismatch {err:e} at {w}");
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SurrogateSuite {
    pub pairs: usize,
    pub tolerance: f64,
    /// Largest `f(w) - g(w; w')`.
    pub max_surrogate_excess: f64,
    /// Largest `f(w⁺) - q(w⁺; w)` over both quadratic forms.
    pub max_quadratic_excess: f64,
    pub violations: usize,
}

impl SurrogateSuite {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// `f(w) ≤ g(w; w')` and `f(w⁺) ≤ q(w⁺; w)` on random tuples.
pub fn surrogate_suite(instances: &[Arc<dyn Distribution>], pairs: usize, tolerance: f64, seed: u64) -> Result<SurrogateSuite> {
    let mut rng = SimRng::new(seed, 12);
    let oracle = MomentOracle::exact();
    let mut out = SurrogateSuite {
        pairs,
        tolerance,
        max_surrogate_excess: f64::NEG_INFINITY,
        max_quadratic_excess: f64::NEG_INFINITY,
        violations: 0,
    };
    for p in 0..pairs {
        let dist = instances[p % instances.len()].as_ref();
        let k = 1 + (p / instances.len()) % 3;
        let w = random_centers(dist, k, 0.01, &mut rng)?;
        let w_ref = random_centers(dist, k, 0.01, &mut rng)?;
        // w doubles as the displaced point w⁺ for the quadratic bound around w'
        let f = cost(dist, &w, &oracle)?.value;
        let g = surrogate_cost(dist, &w, &w_ref, &oracle)?.value;
        let q = quadratic_bound(dist, &w, &w_ref, &oracle)?;
        let s_excess = f - g;
        let q_excess = (f - q.hessian_weighted).max(f - q.identity);
        out.max_surrogate_excess = out.max_surrogate_excess.max(s_excess);
        out.max_quadratic_excess = out.max_quadratic_excess.max(q_excess);
        if s_excess > tolerance || q_excess > tolerance {
            out.violations += 1;
            log::warn!("surrogate bound violated at w = {w}, w' = {w_ref}");
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvariantReport {
    pub rows: usize,
    pub outside_ball: usize,
    pub degenerate: usize,
    pub bad_rates: usize,
    pub min_separation: Option<f64>,
    pub max_norm: f64,
}

impl InvariantReport {
    pub fn pass(&self) -> bool {
        self.outside_ball == 0 && self.degenerate == 0 && self.bad_rates == 0
    }
}

/// Support containment, non-degeneracy and `H ∈ [0, 1]` on every recorded row.
pub fn trajectory_invariants(trace: &Trace) -> InvariantReport {
    let mut out = InvariantReport {
        rows: trace.rows.len(),
        outside_ball: 0,
        degenerate: 0,
        bad_rates: 0,
        min_separation: None,
        max_norm: 0.0,
    };
    for r in &trace.rows {
        let w = &r.centers;
        if !w.in_support_ball(trace.radius) {
            out.outside_ball += 1;
        }
        out.max_norm = w.points().map(crate::geometry::norm).fold(out.max_norm, f64::max);
        if let Ok(sep) = w.min_separation() {
            if sep.degenerate {
                out.degenerate += 1;
            }
            out.min_separation = Some(out.min_separation.map_or(sep.value, |m: f64| m.min(sep.value)));
        }
        if r.rates.iter().any(|h| !(0.0..=1.0).contains(h)) {
            out.bad_rates += 1;
        }
        if let Some(i) = r.chosen {
            if r.rates.iter().enumerate().any(|(j, &h)| j != i && h != 0.0) {
                out.bad_rates += 1;
            }
        }
    }
    out
}
