//! Bounded-support densities: sampling, conditional sampling inside a Voronoi
//! cell, and exact cell integrals where they have a closed form.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{norm, Centers};
use crate::rng::SimRng;

/// Retry cap for every rejection sampler in this module.
pub const REJECTION_CAP: u64 = 1_000_000;

/// Sampling view of a density supported in the closed ball `B(0, R)`.
pub trait Distribution: Send + Sync + fmt::Debug {
    fn dimension(&self) -> usize;

    /// Radius `R` of the centered ball containing the support.
    fn support_radius(&self) -> f64;

    /// Write one draw into `out` (length `dimension()`).
    fn sample_into(&self, rng: &mut SimRng, out: &mut [f64]) -> Result<()>;

    fn sample(&self, rng: &mut SimRng) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dimension()];
        self.sample_into(rng, &mut out)?;
        Ok(out)
    }

    /// Closed-form cell integrals, when the instance supports them.
    fn exact(&self) -> Option<&dyn ExactMoments> {
        None
    }

    /// Upper bound on the density, `p_max`.
    fn density_bound(&self) -> f64;

    /// Mean of the whole distribution, when known in closed form.
    fn mean(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Integrals of `p` over the Voronoi cells of one tuple, with second moments
/// taken about the points of a second tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct CellIntegrals {
    /// `P_i = ∫_{V_i} p`.
    pub mass: Vec<f64>,
    /// `∫_{V_i} x p(x) dx`, row-major `k x d`.
    pub first: Vec<f64>,
    /// `½ ∫_{V_i} ||e_i - x||² p(x) dx` where `e_i` is the evaluation point.
    pub half_sq: Vec<f64>,
}

pub trait ExactMoments {
    /// Integrate over the cells induced by `cells`, measuring squared
    /// distance to the corresponding center of `eval`.
    fn cell_integrals(&self, cells: &Centers, eval: &Centers) -> Result<CellIntegrals>;
}

/// Density that is constant on each interval between consecutive breakpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseConstant1D {
    breakpoints: Vec<f64>,
    densities: Vec<f64>,
    cumulative: Vec<f64>,
    radius: f64,
}

impl PiecewiseConstant1D {
    /// Masses within 1e-6 of one are accepted and renormalized so the total
    /// is one to rounding.
    pub fn new(breakpoints: Vec<f64>, densities: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints.len() != densities.len() + 1 {
            return Err(Error::Config(format!(
                "piecewise1d needs n+1 breakpoints for n densities (got {} and {})",
                breakpoints.len(),
                densities.len()
            )));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("piecewise1d breakpoints must be finite and strictly increasing".into()));
        }
        if densities.iter().any(|h| !h.is_finite() || *h < 0.0) {
            return Err(Error::Config("piecewise1d densities must be finite and nonnegative".into()));
        }
        let total: f64 = breakpoints.windows(2).zip(&densities).map(|(b, h)| h * (b[1] - b[0])).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("piecewise1d total mass is {total}, expected 1")));
        }
        if (total - 1.0).abs() > 1e-12 {
            log::warn!("renormalizing piecewise1d density with total mass {total}");
        }
        let densities: Vec<f64> = densities.into_iter().map(|h| h / total).collect();
        let mut cumulative = Vec::with_capacity(breakpoints.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for (b, h) in breakpoints.windows(2).zip(&densities) {
            acc += h * (b[1] - b[0]);
            cumulative.push(acc);
        }
        let radius = breakpoints[0].abs().max(breakpoints[breakpoints.len() - 1].abs());
        Ok(Self { breakpoints, densities, cumulative, radius })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Config(format!("uniform interval [{lo}, {hi}] is empty")));
        }
        Self::new(vec![lo, hi], vec![1.0 / (hi - lo)])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    /// Integrals over `[a, b]` of `p`, `x p` and `½ (x - e)² p`.
    fn interval_integrals(&self, a: f64, b: f64, e: f64) -> (f64, f64, f64) {
        let (mut mass, mut first, mut half_sq) = (0.0, 0.0, 0.0);
        for (seg, &h) in self.breakpoints.windows(2).zip(&self.densities) {
            let lo = a.max(seg[0]);
            let hi = b.min(seg[1]);
            if hi <= lo || h == 0.0 {
                continue;
            }
            mass += h * (hi - lo);
            first += h * (hi - lo) * (hi + lo) / 2.0;
            half_sq += h * ((hi - e).powi(3) - (lo - e).powi(3)) / 6.0;
        }
        (mass, first, half_sq)
    }
}

impl Distribution for PiecewiseConstant1D {
    fn dimension(&self) -> usize {
        1
    }

    fn support_radius(&self) -> f64 {
        self.radius
    }

    fn sample_into(&self, rng: &mut SimRng, out: &mut [f64]) -> Result<()> {
        let u = rng.uniform();
        // first segment whose cumulative upper end exceeds u, skipping empty ones
        let seg = self.cumulative[1..]
            .iter()
            .zip(&self.densities)
            .position(|(&c, &h)| u < c && h > 0.0)
            .unwrap_or_else(|| self.densities.iter().rposition(|&h| h > 0.0).unwrap_or(0));
        let lo = self.breakpoints[seg];
        let hi = self.breakpoints[seg + 1];
        let x = lo + (u - self.cumulative[seg]) / self.densities[seg];
        out[0] = x.clamp(lo, hi);
        Ok(())
    }

    fn exact(&self) -> Option<&dyn ExactMoments> {
        Some(self)
    }

    fn density_bound(&self) -> f64 {
        self.densities.iter().copied().fold(0.0, f64::max)
    }

    fn mean(&self) -> Option<Vec<f64>> {
        let m = self.interval_integrals(f64::NEG_INFINITY, f64::INFINITY, 0.0).1;
        Some(vec![m])
    }
}

impl ExactMoments for PiecewiseConstant1D {
    fn cell_integrals(&self, cells: &Centers, eval: &Centers) -> Result<CellIntegrals> {
        if cells.d() != 1 || eval.d() != 1 || cells.k() != eval.k() {
            return Err(Error::Input("exact 1-D moments need matching one-dimensional tuples".into()));
        }
        let k = cells.k();
        // Cells in 1-D are intervals split at midpoints of the sorted centers.
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| cells.point(a)[0].total_cmp(&cells.point(b)[0]).then(a.cmp(&b)));
        let mut out = CellIntegrals { mass: vec![0.0; k], first: vec![0.0; k], half_sq: vec![0.0; k] };
        for (pos, &i) in order.iter().enumerate() {
            let c = cells.point(i)[0];
            let lo = if pos == 0 { f64::NEG_INFINITY } else { 0.5 * (cells.point(order[pos - 1])[0] + c) };
            let hi = if pos + 1 == k { f64::INFINITY } else { 0.5 * (c + cells.point(order[pos + 1])[0]) };
            let (m, f, s) = self.interval_integrals(lo, hi, eval.point(i)[0]);
            out.mass[i] = m;
            out.first[i] = f;
            out.half_sq[i] = s;
        }
        Ok(out)
    }
}

/// Mixture of isotropic Gaussians conditioned on the ball `B(0, R)`.
#[derive(Clone, Debug)]
pub struct TruncatedGaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    sigmas: Vec<f64>,
    radius: f64,
    acceptance: f64,
}

impl TruncatedGaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, sigmas: Vec<f64>, radius: f64) -> Result<Self> {
        let c = weights.len();
        if c == 0 || means.len() != c || sigmas.len() != c {
            return Err(Error::Config("gauss_mix needs equal, nonzero numbers of weights, means and sigmas".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("gauss_mix weights must be nonnegative and sum to 1".into()));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d || m.iter().any(|v| !v.is_finite())) {
            return Err(Error::Config("gauss_mix means must be finite and share one positive dimension".into()));
        }
        if sigmas.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::Config("gauss_mix sigmas must be positive".into()));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Config("gauss_mix radius must be positive".into()));
        }
        let mut mix = Self { weights, means, sigmas, radius, acceptance: 1.0 };
        mix.acceptance = mix.estimate_acceptance(20_000);
        if mix.acceptance <= 0.5 {
            return Err(Error::Config(format!(
                "truncation radius {radius} accepts only {:.3} of draws; it must accept more than half",
                mix.acceptance
            )));
        }
        Ok(mix)
    }

    /// Fraction of untruncated draws landing in the ball (fixed-seed estimate).
    pub fn acceptance(&self) -> f64 {
        self.acceptance
    }

    fn estimate_acceptance(&self, draws: usize) -> f64 {
        let mut rng = SimRng::new(0x5EED_ACCE, 0);
        let mut x = vec![0.0; self.means[0].len()];
        let hits = (0..draws)
            .filter(|_| {
                self.raw_draw(&mut rng, &mut x);
                norm(&x) <= self.radius
            })
            .count();
        hits as f64 / draws as f64
    }

    fn raw_draw(&self, rng: &mut SimRng, out: &mut [f64]) {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut comp = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = i;
                break;
            }
        }
        for (o, m) in out.iter_mut().zip(&self.means[comp]) {
            *o = m + self.sigmas[comp] * rng.standard_normal();
        }
    }
}

impl Distribution for TruncatedGaussianMixture {
    fn dimension(&self) -> usize {
        self.means[0].len()
    }

    fn support_radius(&self) -> f64 {
        self.radius
    }

    fn sample_into(&self, rng: &mut SimRng, out: &mut [f64]) -> Result<()> {
        for _ in 0..REJECTION_CAP {
            self.raw_draw(rng, out);
            if norm(out) <= self.radius {
                return Ok(());
            }
        }
        Err(Error::Config(format!(
            "truncated mixture rejected {REJECTION_CAP} draws in a row; radius {} is too tight",
            self.radius
        )))
    }

    fn density_bound(&self) -> f64 {
        let d = self.dimension() as f64;
        let peak: f64 = self
            .weights
            .iter()
            .zip(&self.sigmas)
            .map(|(w, s)| w * (2.0 * std::f64::consts::PI * s * s).powf(-d / 2.0))
            .sum();
        peak / self.acceptance
    }
}

/// Draw from `p` restricted to the Voronoi cell of center `i`, by rejection.
///
/// Fails with [`Error::EmptyCell`] when no draw lands in the cell within
/// [`REJECTION_CAP`] attempts; callers treat that cell as massless.
pub fn sample_in_cell(dist: &dyn Distribution, w: &Centers, i: usize, rng: &mut SimRng) -> Result<Vec<f64>> {
    if w.d() != dist.dimension() {
        return Err(Error::Input(format!("centers have dimension {}, distribution {}", w.d(), dist.dimension())));
    }
    if i >= w.k() {
        return Err(Error::Input(format!("cell index {i} out of range for k = {}", w.k())));
    }
    let mut x = vec![0.0; w.d()];
    for _ in 0..REJECTION_CAP {
        dist.sample_into(rng, &mut x)?;
        if w.nearest_with_tie(&x).0 == i {
            return Ok(x);
        }
    }
    Err(Error::EmptyCell { cell: i, attempts: REJECTION_CAP })
}

/// Draw `per_cell` points from every cell at once: plain draws are routed to
/// their cell until each cell is full or `cap` draws have been spent.
///
/// The first `per_cell` hits of an i.i.d. stream inside a cell are i.i.d.
/// draws from the restricted law, so each returned batch has the same law as
/// repeated [`sample_in_cell`] calls. Cells still short at the cap come back
/// as `None`.
pub fn sample_all_cells(
    dist: &dyn Distribution,
    w: &Centers,
    per_cell: usize,
    cap: u64,
    rng: &mut SimRng,
) -> Result<Vec<Option<Vec<Vec<f64>>>>> {
    let k = w.k();
    let mut batches: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(per_cell); k];
    let mut missing = k;
    let mut x = vec![0.0; w.d()];
    let mut draws = 0;
    while missing > 0 && draws < cap {
        dist.sample_into(rng, &mut x)?;
        draws += 1;
        let i = w.nearest_with_tie(&x).0;
        if batches[i].len() < per_cell {
            batches[i].push(x.clone());
            if batches[i].len() == per_cell {
                missing -= 1;
            }
        }
    }
    Ok(batches.into_iter().map(|b| (b.len() == per_cell).then_some(b)).collect())
}

/// Tagged distribution record as it appears in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum DistributionSpec {
    #[serde(rename = "piecewise1d")]
    Piecewise1d { breakpoints: Vec<f64>, densities: Vec<f64> },
    #[serde(rename = "gauss_mix")]
    GaussMix { weights: Vec<f64>, means: Vec<Vec<f64>>, sigmas: Vec<f64>, radius: f64 },
}

impl DistributionSpec {
    pub fn uniform_unit() -> Self {
        DistributionSpec::Piecewise1d { breakpoints: vec![0.0, 1.0], densities: vec![1.0] }
    }

    /// Parse a standalone table such as `type = "piecewise1d"` plus its fields.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn build(&self) -> Result<Arc<dyn Distribution>> {
        Ok(match self {
            DistributionSpec::Piecewise1d { breakpoints, densities } => {
                Arc::new(PiecewiseConstant1D::new(breakpoints.clone(), densities.clone())?)
            }
            DistributionSpec::GaussMix { weights, means, sigmas, radius } => Arc::new(
                TruncatedGaussianMixture::new(weights.clone(), means.clone(), sigmas.clone(), *radius)?,
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> PiecewiseConstant1D {
        PiecewiseConstant1D::uniform(0.0, 1.0).unwrap()
    }

    fn mixture() -> TruncatedGaussianMixture {
        TruncatedGaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![-0.4, 0.0], vec![0.4, 0.1]],
            vec![0.2, 0.15],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn uniform_samples_stay_in_support_and_repeat() {
        let d = unit();
        let mut rng = SimRng::new(11, 0);
        for _ in 0..10_000 {
            let x = d.sample(&mut rng).unwrap()[0];
            assert!((0.0..=1.0).contains(&x));
        }
        let a = d.sample(&mut SimRng::new(5, 0)).unwrap();
        let b = d.sample(&mut SimRng::new(5, 0)).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn truncated_mixture_samples_inside_ball() {
        let m = mixture();
        let mut rng = SimRng::new(3, 0);
        for _ in 0..100_000 {
            assert!(norm(&m.sample(&mut rng).unwrap()) <= 1.0);
        }
        assert!(m.acceptance() > 0.5);
    }

    #[test]
    fn tight_truncation_is_rejected() {
        let err = TruncatedGaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![1.0], 0.3).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn piecewise_validation() {
        assert!(PiecewiseConstant1D::new(vec![0.0, 1.0], vec![0.5]).is_err());
        assert!(PiecewiseConstant1D::new(vec![1.0, 0.0], vec![1.0]).is_err());
        assert!(PiecewiseConstant1D::new(vec![0.0, 0.5, 1.0], vec![-1.0, 3.0]).is_err());
        let p = PiecewiseConstant1D::new(vec![-1.0, 0.0, 0.5], vec![0.5, 1.0]).unwrap();
        assert_eq!(p.support_radius(), 1.0);
    }

    #[test]
    fn piecewise_sampling_matches_segment_masses() {
        // mass 0.2 on [0, 0.5], 0 on [0.5, 0.75], 0.8 on [0.75, 1]
        let p = PiecewiseConstant1D::new(vec![0.0, 0.5, 0.75, 1.0], vec![0.4, 0.0, 3.2]).unwrap();
        let mut rng = SimRng::new(1, 1);
        let n = 100_000;
        let mut low = 0;
        for _ in 0..n {
            let x = p.sample(&mut rng).unwrap()[0];
            assert!(!(0.5 < x && x < 0.75), "sample {x} in a zero-density segment");
            if x <= 0.5 {
                low += 1;
            }
        }
        let freq = low as f64 / n as f64;
        assert!((freq - 0.2).abs() < 3.0 * (0.2f64 * 0.8 / n as f64).sqrt() + 1e-3);
    }

    #[test]
    fn cell_sampling_examples() {
        let d = unit();
        let mut rng = SimRng::new(2, 0);
        let w = Centers::line(&[0.25, 0.75]).unwrap();
        for _ in 0..1000 {
            let x = sample_in_cell(&d, &w, 0, &mut rng).unwrap()[0];
            assert!((0.0..0.5).contains(&x));
        }
        let w = Centers::line(&[0.1, 0.11]).unwrap();
        for _ in 0..1000 {
            let x = sample_in_cell(&d, &w, 0, &mut rng).unwrap()[0];
            assert!((0.0..0.105).contains(&x));
        }
        // k = 1: the single cell is everything, same draws as plain sampling
        let w = Centers::line(&[0.3]).unwrap();
        let a = sample_in_cell(&d, &w, 0, &mut SimRng::new(9, 0)).unwrap();
        let b = d.sample(&mut SimRng::new(9, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_cell_hits_the_cap() {
        let d = unit();
        // center 1 sits far outside: its cell [1.5, inf) has no mass
        let w = Centers::line(&[0.5, 3.0]).unwrap();
        let err = sample_in_cell(&d, &w, 1, &mut SimRng::new(0, 0)).unwrap_err();
        assert!(matches!(err, Error::EmptyCell { cell: 1, .. }));
        let batches = sample_all_cells(&d, &w, 1, 1000, &mut SimRng::new(0, 0)).unwrap();
        assert!(batches[0].is_some());
        assert!(batches[1].is_none());
    }

    #[test]
    fn all_cells_batches_land_in_their_cells() {
        let d = mixture();
        let w = Centers::new(vec![vec![-0.3, 0.0], vec![0.3, 0.0], vec![0.0, 0.5]]).unwrap();
        let batches = sample_all_cells(&d, &w, 3, REJECTION_CAP, &mut SimRng::new(4, 0)).unwrap();
        for (i, b) in batches.iter().enumerate() {
            for x in b.as_ref().unwrap() {
                assert_eq!(w.nearest_center(x).unwrap().index, i);
            }
        }
    }

    #[test]
    fn exact_integrals_examples() {
        let d = unit();
        let w = Centers::line(&[0.2, 0.4]).unwrap();
        let ints = d.cell_integrals(&w, &w).unwrap();
        assert!((ints.mass[0] - 0.3).abs() < 1e-15);
        assert!((ints.mass[1] - 0.7).abs() < 1e-15);
        // unsorted input: cells follow the centers, not their order
        let w = Centers::line(&[0.75, 0.25]).unwrap();
        let ints = d.cell_integrals(&w, &w).unwrap();
        assert!((ints.first[0] / ints.mass[0] - 0.75).abs() < 1e-15);
        assert!((ints.first[1] / ints.mass[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn spec_record_parses() {
        let spec: DistributionSpec =
            toml::from_str("type = \"piecewise1d\"\nbreakpoints = [0.0, 1.0]\ndensities = [1.0]").unwrap();
        assert_eq!(spec, DistributionSpec::uniform_unit());
        let spec: DistributionSpec = toml::from_str(
            "type = \"gauss_mix\"\nweights = [1.0]\nmeans = [[0.0, 0.0]]\nsigmas = [0.2]\nradius = 1.0",
        )
        .unwrap();
        assert_eq!(spec.build().unwrap().dimension(), 2);
        assert!(toml::from_str::<DistributionSpec>("type = \"cauchy\"").is_err());
    }
}
