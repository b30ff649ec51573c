//! The k-means cost `f(w) = ½ Σ_i ∫_{V_i(w)} ||w_i - x||² p(x) dx`, its
//! gradient `P_i(w) (w_i - M_i(w))`, and the frozen-cell surrogate
//! `g(w; w')` that majorizes it.

use serde::Serialize;

use crate::distribution::Distribution;
use crate::error::{Error, Result};
use crate::geometry::{Centers, NEAR_DEGENERATE};
use crate::moments::{MomentOracle, OracleMethod, VoronoiMoments};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostValue {
    pub value: f64,
    #[serde(skip)]
    pub method: OracleMethod,
    pub stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientValue {
    /// `∇_{w_i} f`, one vector per center.
    pub per_center: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    pub total_norm: f64,
}

impl GradientValue {
    fn from_rows(per_center: Vec<Vec<f64>>) -> Self {
        let norms: Vec<f64> = per_center.iter().map(|g| crate::geometry::norm(g)).collect();
        let total_norm = norms.iter().map(|n| n * n).sum::<f64>().sqrt();
        Self { per_center, norms, total_norm }
    }

    /// Assemble `P_i (w_i - M_i)` from precomputed moments. Massless cells contribute zero.
    pub fn from_moments(w: &Centers, m: &VoronoiMoments) -> Self {
        let rows = (0..w.k())
            .map(|i| match &m.means[i] {
                Some(mean) if m.masses[i] > 0.0 => {
                    w.point(i).iter().zip(mean).map(|(wi, mi)| m.masses[i] * (wi - mi)).collect()
                }
                _ => vec![0.0; w.d()],
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn max_abs_diff(&self, other: &GradientValue) -> f64 {
        self.per_center
            .iter()
            .flatten()
            .zip(other.per_center.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Both forms of the quadratic upper bound on `f(w_plus)` around `w`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuadraticBound {
    /// Curvature `P_i(w) I` per block (the exact surrogate Hessian).
    pub hessian_weighted: f64,
    /// Curvature `I`.
    pub identity: f64,
    pub cost_at_w: f64,
}

fn check_inputs(dist: &dyn Distribution, w: &Centers) -> Result<()> {
    if w.d() != dist.dimension() {
        return Err(Error::Input(format!("centers have dimension {}, distribution {}", w.d(), dist.dimension())));
    }
    w.ensure_separated(NEAR_DEGENERATE)
}

fn cost_from(m: &VoronoiMoments) -> CostValue {
    CostValue { value: m.cost(), method: m.method, stderr: m.errors.as_ref().map(|e| e.cost) }
}

pub fn cost(dist: &dyn Distribution, w: &Centers, oracle: &MomentOracle) -> Result<CostValue> {
    check_inputs(dist, w)?;
    Ok(cost_from(&oracle.moments(dist, w)?))
}

pub fn gradient(dist: &dyn Distribution, w: &Centers, oracle: &MomentOracle) -> Result<GradientValue> {
    check_inputs(dist, w)?;
    let m = oracle.moments(dist, w)?;
    Ok(GradientValue::from_moments(w, &m))
}

/// Central differences of the exact cost, coordinate by coordinate.
///
/// Needs the exact oracle: Monte Carlo noise swamps the difference quotient.
pub fn fd_gradient(dist: &dyn Distribution, w: &Centers, h: f64) -> Result<GradientValue> {
    check_inputs(dist, w)?;
    if dist.exact().is_none() {
        return Err(Error::Capability("finite differences need an exact cost oracle".into()));
    }
    if !(h > 0.0) {
        return Err(Error::Input(format!("finite-difference step must be positive, got {h}")));
    }
    let oracle = MomentOracle::exact();
    let mut probe = w.clone();
    let mut rows = vec![vec![0.0; w.d()]; w.k()];
    for i in 0..w.k() {
        for j in 0..w.d() {
            let base = w.point(i)[j];
            probe.point_mut(i)[j] = base + h;
            let plus = cost(dist, &probe, &oracle)?.value;
            probe.point_mut(i)[j] = base - h;
            let minus = cost(dist, &probe, &oracle)?.value;
            probe.point_mut(i)[j] = base;
            rows[i][j] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(GradientValue::from_rows(rows))
}

/// `g(w; w_ref)`: cost of `w` with the cells frozen at `w_ref`.
pub fn surrogate_cost(dist: &dyn Distribution, w: &Centers, w_ref: &Centers, oracle: &MomentOracle) -> Result<CostValue> {
    check_inputs(dist, w_ref)?;
    if w.k() != w_ref.k() || w.d() != w_ref.d() {
        return Err(Error::Input("surrogate arguments must have the same shape".into()));
    }
    Ok(cost_from(&oracle.frozen_moments(dist, w_ref, w)?))
}

/// `∇_w g(w; w_ref) = P_i(w_ref) (w_i - M_i(w_ref))`.
pub fn surrogate_gradient(
    dist: &dyn Distribution,
    w: &Centers,
    w_ref: &Centers,
    oracle: &MomentOracle,
) -> Result<GradientValue> {
    check_inputs(dist, w_ref)?;
    let m = oracle.moments(dist, w_ref)?;
    Ok(GradientValue::from_moments(w, &m))
}

/// `f(w) + <∇f(w), Δ> + ½ Δᵀ H Δ` with `Δ = w_plus - w`, for the block
/// Hessian `H = diag(P_i(w) I)` and for `H = I`.
pub fn quadratic_bound(dist: &dyn Distribution, w_plus: &Centers, w: &Centers, oracle: &MomentOracle) -> Result<QuadraticBound> {
    check_inputs(dist, w)?;
    if w_plus.k() != w.k() || w_plus.d() != w.d() {
        return Err(Error::Input("quadratic bound arguments must have the same shape".into()));
    }
    let m = oracle.moments(dist, w)?;
    let grad = GradientValue::from_moments(w, &m);
    let f = m.cost();
    let mut linear = 0.0;
    let mut weighted = 0.0;
    let mut plain = 0.0;
    for i in 0..w.k() {
        let sq: f64 = w_plus.point(i).iter().zip(w.point(i)).map(|(a, b)| (a - b) * (a - b)).sum();
        linear += grad.per_center[i].iter().zip(w_plus.point(i).iter().zip(w.point(i))).map(|(g, (a, b))| g * (a - b)).sum::<f64>();
        weighted += m.masses[i] * sq;
        plain += sq;
    }
    Ok(QuadraticBound { hessian_weighted: f + linear + 0.5 * weighted, identity: f + linear + 0.5 * plain, cost_at_w: f })
}
