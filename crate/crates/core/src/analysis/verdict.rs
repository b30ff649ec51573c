//! Convergence verdict for a finished trace.

use serde::Serialize;

use crate::config::VerdictSpec;
use crate::distribution::Distribution;
use crate::engine::Trace;
use crate::error::Result;
use crate::geometry::Centers;
use crate::moments::MomentOracle;
use crate::objective::GradientValue;

/// Absolute bound on last-decade oscillation of the cost.
pub const COST_OSCILLATION_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub epsilon: f64,
    /// Last recorded iteration with `||∇_{w_i} f|| > ε`, per center.
    pub last_exceedance: Vec<Option<u64>>,
    pub final_grad_norms: Vec<f64>,
    pub final_cost: f64,
    /// Gradient still above `ε` at the final iteration.
    pub persistent_gradient: Vec<bool>,
    /// `max f - min f` over recorded rows with `n ≥ N/10`.
    pub cost_oscillation: f64,
    pub cost_converged: bool,
    /// Fraction of consecutive recorded pairs along which `f` did not increase.
    pub decrease_fraction: f64,
    pub distance_to_stationary: Option<f64>,
    pub final_centers: Vec<Vec<f64>>,
    pub pass: bool,
}

/// Summarize gradient and cost trajectories. The final state is re-audited
/// with `oracle`; earlier rows use whatever the run recorded.
pub fn convergence_verdict(
    trace: &Trace,
    dist: &dyn Distribution,
    oracle: &MomentOracle,
    spec: &VerdictSpec,
) -> Result<Verdict> {
    let last = trace.final_row();
    let m = oracle.moments(dist, &last.centers)?;
    let g = GradientValue::from_moments(&last.centers, &m);
    let final_cost = m.cost();
    let eps = spec.epsilon;

    let mut last_exceedance = vec![None; trace.k];
    let mut history: Vec<(u64, f64)> = Vec::new();
    for r in &trace.rows {
        let (norms, cost) = if r.n == last.n {
            (Some(g.norms.clone()), Some(final_cost))
        } else {
            (r.grad_norms.clone(), r.cost)
        };
        if let Some(norms) = norms {
            for (i, &v) in norms.iter().enumerate() {
                if v > eps {
                    last_exceedance[i] = Some(r.n);
                }
            }
        }
        if let Some(c) = cost {
            history.push((r.n, c));
        }
    }

    let tail: Vec<f64> = history.iter().filter(|(n, _)| *n >= trace.iterations / 10).map(|(_, c)| *c).collect();
    let cost_oscillation = if tail.is_empty() {
        0.0
    } else {
        tail.iter().copied().fold(f64::NEG_INFINITY, f64::max) - tail.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let decrease_fraction = if history.len() < 2 {
        1.0
    } else {
        history.windows(2).filter(|p| p[1].1 <= p[0].1).count() as f64 / (history.len() - 1) as f64
    };
    let distance_to_stationary = spec
        .stationary
        .iter()
        .filter_map(|s| Centers::new(s.clone()).ok())
        .filter(|s| s.k() == last.centers.k() && s.d() == last.centers.d())
        .map(|s| last.centers.distance_up_to_permutation(&s))
        .reduce(f64::min);

    let persistent_gradient: Vec<bool> = g.norms.iter().map(|&v| v > eps).collect();
    let cost_converged = cost_oscillation < COST_OSCILLATION_TOL;
    let pass = !persistent_gradient.iter().any(|&p| p)
        && cost_converged
        && distance_to_stationary.is_none_or(|d| d <= spec.tolerance);
    Ok(Verdict {
        epsilon: eps,
        last_exceedance,
        final_grad_norms: g.norms,
        final_cost,
        persistent_gradient,
        cost_oscillation,
        cost_converged,
        decrease_fraction,
        distance_to_stationary,
        final_centers: last.centers.points().map(<[f64]>::to_vec).collect(),
        pass,
    })
}
