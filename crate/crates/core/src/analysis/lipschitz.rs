//! Empirical local Lipschitz constant of the cell masses `P_j`.

use serde::Serialize;

use crate::distribution::Distribution;
use crate::error::{Error, Result};
use crate::geometry::{norm, Centers};
use crate::moments::MomentOracle;
use crate::rng::SimRng;

/// `(2R)^{d-1} (1 + 2R/r)` with `2r` the center separation.
pub fn area_growth_bound(radius: f64, d: usize, separation: f64) -> f64 {
    let r = separation / 2.0;
    (2.0 * radius).powi(d as i32 - 1) * (1.0 + 2.0 * radius / r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LipschitzProbe {
    pub probes: usize,
    pub delta: f64,
    pub separation: f64,
    /// `max_j |P_j(w') - P_j(w)| / ||w' - w||` over the probes.
    pub observed_ratio: f64,
    /// `p_max · 2 · (2R)^{d-1} (1 + 2R/r)`.
    pub bound: f64,
    /// The bound is only proved for two centers.
    pub sharp: bool,
}

impl LipschitzProbe {
    pub fn within_bound(&self) -> bool {
        self.observed_ratio <= self.bound
    }
}

/// Perturb `w` by random vectors of norm `delta` and compare mass changes.
///
/// `delta` may not exceed a quarter of the minimum separation.
pub fn lipschitz_probe(
    dist: &dyn Distribution,
    w: &Centers,
    probes: usize,
    delta: f64,
    oracle: &MomentOracle,
    rng: &mut SimRng,
) -> Result<LipschitzProbe> {
    let sep = w.min_separation()?.value;
    if !(delta >= 0.0) || delta > 0.25 * sep {
        return Err(Error::Input(format!(
            "perturbation {delta} exceeds a quarter of the center separation {sep}; probe rejected"
        )));
    }
    let p_max = dist.density_bound();
    let radius = dist.support_radius();
    let bound = p_max * 2.0 * area_growth_bound(radius, w.d(), sep);
    let base = oracle.moments(dist, w)?.masses;
    let mut ratio: f64 = 0.0;
    if delta > 0.0 {
        let mut dir = vec![0.0; w.k() * w.d()];
        for _ in 0..probes {
            dir.iter_mut().for_each(|v| *v = rng.standard_normal());
            let len = norm(&dir);
            let coords = w.as_flat().iter().zip(&dir).map(|(c, v)| c + v / len * delta).collect();
            let moved = Centers::from_flat(w.k(), w.d(), coords)?;
            let step = moved.distance(w);
            if step == 0.0 {
                continue;
            }
            let masses = oracle.moments(dist, &moved)?.masses;
            for (a, b) in masses.iter().zip(&base) {
                ratio = ratio.max((a - b).abs() / step);
            }
        }
    }
    Ok(LipschitzProbe { probes, delta, separation: sep, observed_ratio: ratio, bound, sharp: w.k() == 2 })
}
