//! Voronoi cell masses, means and cost contributions.
//!
//! Two methods: `Exact` delegates to the distribution's closed-form
//! integrals; `MonteCarlo` averages over a fixed-seed sample and reports
//! standard errors. The Monte Carlo sample is split into
//! [`MC_CHUNKS`] chunks, each drawn from its own stream `(seed, chunk)` and
//! evaluated in parallel; partial sums are reduced in chunk order, so the
//! result is independent of thread scheduling. A given oracle reuses the
//! same sample on every call (common random numbers), which keeps
//! differences such as `f(w') - f(w)` low-variance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::Distribution;
use crate::error::{Error, Result};
use crate::geometry::{sq_dist, Centers};
use crate::rng::SimRng;

pub const MC_CHUNKS: u64 = 16;
pub const DEFAULT_MC_SAMPLES: u64 = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum OracleMethod {
    Exact,
    MonteCarlo { samples: u64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MomentOracle {
    pub method: OracleMethod,
}

/// Per-cell moments of `p` for one center tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct VoronoiMoments {
    pub method: OracleMethod,
    pub masses: Vec<f64>,
    /// Conditional means; `None` where the cell has zero (observed) mass.
    pub means: Vec<Option<Vec<f64>>>,
    /// `½ ∫_{V_i} ||e_i - x||² p(x) dx` per cell.
    pub half_sq: Vec<f64>,
    pub errors: Option<MonteCarloErrors>,
}

/// Standard errors attached to Monte Carlo moments.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloErrors {
    pub samples: u64,
    pub masses: Vec<f64>,
    /// Norm of the per-coordinate standard errors of each conditional mean.
    pub means: Vec<Option<f64>>,
    /// Standard error of the total cost `Σ half_sq`.
    pub cost: f64,
}

impl VoronoiMoments {
    pub fn k(&self) -> usize {
        self.masses.len()
    }

    pub fn cost(&self) -> f64 {
        self.half_sq.iter().sum()
    }
}

impl MomentOracle {
    pub fn exact() -> Self {
        Self { method: OracleMethod::Exact }
    }

    pub fn monte_carlo(samples: u64, seed: u64) -> Self {
        Self { method: OracleMethod::MonteCarlo { samples, seed } }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.method, OracleMethod::Exact)
    }

    /// Moments of the cells of `w`, costs measured to `w` itself.
    pub fn moments(&self, dist: &dyn Distribution, w: &Centers) -> Result<VoronoiMoments> {
        self.frozen_moments(dist, w, w)
    }

    /// Moments of the cells of `cells`, costs measured to the centers of `eval`.
    pub fn frozen_moments(&self, dist: &dyn Distribution, cells: &Centers, eval: &Centers) -> Result<VoronoiMoments> {
        if cells.d() != dist.dimension() || eval.d() != dist.dimension() || cells.k() != eval.k() {
            return Err(Error::Input(format!(
                "tuples of shape {}x{} and {}x{} do not match a {}-dimensional distribution",
                cells.k(),
                cells.d(),
                eval.k(),
                eval.d(),
                dist.dimension()
            )));
        }
        match self.method {
            OracleMethod::Exact => {
                let exact = dist.exact().ok_or_else(|| {
                    Error::Capability(format!(
                        "exact Voronoi moments are only available for one-dimensional piecewise-constant densities (got {}-d {:?})",
                        dist.dimension(),
                        std::any::type_name_of_val(dist)
                    ))
                })?;
                let ints = exact.cell_integrals(cells, eval)?;
                let d = cells.d();
                let means = ints
                    .mass
                    .iter()
                    .enumerate()
                    .map(|(i, &m)| (m > 0.0).then(|| ints.first[i * d..(i + 1) * d].iter().map(|f| f / m).collect()))
                    .collect();
                Ok(VoronoiMoments { method: self.method, masses: ints.mass, means, half_sq: ints.half_sq, errors: None })
            }
            OracleMethod::MonteCarlo { samples, seed } => monte_carlo(dist, cells, eval, samples, seed, self.method),
        }
    }
}

#[derive(Clone)]
struct Accumulator {
    count: Vec<u64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    half_sq: Vec<f64>,
    cost_sq: f64,
}

impl Accumulator {
    fn new(k: usize, d: usize) -> Self {
        Self { count: vec![0; k], sum: vec![0.0; k * d], sum_sq: vec![0.0; k * d], half_sq: vec![0.0; k], cost_sq: 0.0 }
    }

    fn merge(&mut self, other: &Accumulator) {
        self.count.iter_mut().zip(&other.count).for_each(|(a, b)| *a += b);
        self.sum.iter_mut().zip(&other.sum).for_each(|(a, b)| *a += b);
        self.sum_sq.iter_mut().zip(&other.sum_sq).for_each(|(a, b)| *a += b);
        self.half_sq.iter_mut().zip(&other.half_sq).for_each(|(a, b)| *a += b);
        self.cost_sq += other.cost_sq;
    }
}

fn monte_carlo(
    dist: &dyn Distribution,
    cells: &Centers,
    eval: &Centers,
    samples: u64,
    seed: u64,
    method: OracleMethod,
) -> Result<VoronoiMoments> {
    if samples < MC_CHUNKS {
        return Err(Error::Config(format!("monte carlo oracle needs at least {MC_CHUNKS} samples")));
    }
    let (k, d) = (cells.k(), cells.d());
    let per_chunk = samples / MC_CHUNKS;
    let partials: Vec<Result<Accumulator>> = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|chunk| {
            let n = if chunk + 1 == MC_CHUNKS { samples - per_chunk * (MC_CHUNKS - 1) } else { per_chunk };
            let mut rng = SimRng::new(seed, chunk);
            let mut acc = Accumulator::new(k, d);
            let mut x = vec![0.0; d];
            for _ in 0..n {
                dist.sample_into(&mut rng, &mut x)?;
                let i = cells.nearest_with_tie(&x).0;
                acc.count[i] += 1;
                for (j, v) in x.iter().enumerate() {
                    acc.sum[i * d + j] += v;
                    acc.sum_sq[i * d + j] += v * v;
                }
                let c = 0.5 * sq_dist(eval.point(i), &x);
                acc.half_sq[i] += c;
                acc.cost_sq += c * c;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Accumulator::new(k, d);
    for p in partials {
        total.merge(&p?);
    }
    let n = samples as f64;
    let masses: Vec<f64> = total.count.iter().map(|&c| c as f64 / n).collect();
    let mut means = Vec::with_capacity(k);
    let mut mean_se = Vec::with_capacity(k);
    for i in 0..k {
        let c = total.count[i];
        if c == 0 {
            means.push(None);
            mean_se.push(None);
            continue;
        }
        let cf = c as f64;
        let mean: Vec<f64> = (0..d).map(|j| total.sum[i * d + j] / cf).collect();
        let se = (0..d)
            .map(|j| {
                let var = (total.sum_sq[i * d + j] / cf - mean[j] * mean[j]).max(0.0);
                var / cf
            })
            .sum::<f64>()
            .sqrt();
        means.push(Some(mean));
        mean_se.push(Some(se));
    }
    let half_sq: Vec<f64> = total.half_sq.iter().map(|s| s / n).collect();
    let cost_mean: f64 = half_sq.iter().sum();
    let cost_var = (total.cost_sq / n - cost_mean * cost_mean).max(0.0);
    let errors = MonteCarloErrors {
        samples,
        masses: masses.iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect(),
        means: mean_se,
        cost: (cost_var / n).sqrt(),
    };
    Ok(VoronoiMoments { method, masses, means, half_sq, errors: Some(errors) })
}

/// Cell masses `P(w)`.
pub fn voronoi_masses(dist: &dyn Distribution, w: &Centers, oracle: &MomentOracle) -> Result<Vec<f64>> {
    w.ensure_separated(f64::MIN_POSITIVE)?;
    Ok(oracle.moments(dist, w)?.masses)
}

/// Cell means `M(w)`; `None` marks a cell without mass.
pub fn voronoi_means(dist: &dyn Distribution, w: &Centers, oracle: &MomentOracle) -> Result<Vec<Option<Vec<f64>>>> {
    w.ensure_separated(f64::MIN_POSITIVE)?;
    Ok(oracle.moments(dist, w)?.means)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{PiecewiseConstant1D, TruncatedGaussianMixture};

    fn unit() -> PiecewiseConstant1D {
        PiecewiseConstant1D::uniform(0.0, 1.0).unwrap()
    }

    #[test]
    fn exact_masses_and_means() {
        let d = unit();
        let o = MomentOracle::exact();
        let w = Centers::line(&[0.25, 0.75]).unwrap();
        assert_eq!(voronoi_masses(&d, &w, &o).unwrap(), vec![0.5, 0.5]);
        let means = voronoi_means(&d, &w, &o).unwrap();
        assert!((means[0].as_ref().unwrap()[0] - 0.25).abs() < 1e-15);
        assert!((means[1].as_ref().unwrap()[0] - 0.75).abs() < 1e-15);

        let w = Centers::line(&[0.2, 0.4]).unwrap();
        let p = voronoi_masses(&d, &w, &o).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-15 && (p[1] - 0.7).abs() < 1e-15);
        let m = voronoi_means(&d, &w, &o).unwrap();
        assert!((m[0].as_ref().unwrap()[0] - 0.15).abs() < 1e-15);
        assert!((m[1].as_ref().unwrap()[0] - 0.65).abs() < 1e-15);

        let w = Centers::line(&[0.9]).unwrap();
        assert_eq!(voronoi_masses(&d, &w, &o).unwrap(), vec![1.0]);
        assert!((voronoi_means(&d, &w, &o).unwrap()[0].as_ref().unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_mass_cell_has_no_mean() {
        let d = unit();
        let w = Centers::line(&[0.5, 5.0]).unwrap();
        let m = MomentOracle::exact().moments(&d, &w).unwrap();
        assert_eq!(m.masses[1], 0.0);
        assert!(m.means[1].is_none());
    }

    #[test]
    fn exact_on_mixture_is_a_capability_error() {
        let mix = TruncatedGaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![0.3], 1.0).unwrap();
        let w = Centers::new(vec![vec![0.0, 0.0], vec![0.5, 0.0]]).unwrap();
        assert!(matches!(voronoi_masses(&mix, &w, &MomentOracle::exact()), Err(Error::Capability(_))));
    }

    #[test]
    fn degenerate_tuple_is_refused() {
        let w = Centers::line(&[0.3, 0.3]).unwrap();
        assert!(matches!(voronoi_masses(&unit(), &w, &MomentOracle::exact()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn monte_carlo_matches_exact_within_three_sigma() {
        let d = PiecewiseConstant1D::new(vec![0.0, 0.4, 1.0], vec![1.5, 2.0 / 3.0]).unwrap();
        let w = Centers::line(&[0.1, 0.35, 0.8]).unwrap();
        let exact = MomentOracle::exact().moments(&d, &w).unwrap();
        let mc = MomentOracle::monte_carlo(1_000_000, 17).moments(&d, &w).unwrap();
        let errs = mc.errors.as_ref().unwrap();
        for i in 0..3 {
            assert!((mc.masses[i] - exact.masses[i]).abs() < 5e-3);
            assert!((mc.masses[i] - exact.masses[i]).abs() <= 3.0 * errs.masses[i] + 1e-12);
        }
        assert!((mc.cost() - exact.cost()).abs() <= 4.0 * errs.cost);
    }

    #[test]
    fn monte_carlo_is_reproducible_and_total_expectation_holds() {
        let mix = TruncatedGaussianMixture::new(
            vec![0.3, 0.7],
            vec![vec![-0.3, 0.2], vec![0.4, -0.1]],
            vec![0.2, 0.25],
            1.2,
        )
        .unwrap();
        let w = Centers::new(vec![vec![-0.2, 0.0], vec![0.3, 0.1], vec![0.0, -0.5]]).unwrap();
        let o = MomentOracle::monte_carlo(200_000, 5);
        let a = o.moments(&mix, &w).unwrap();
        let b = o.moments(&mix, &w).unwrap();
        assert_eq!(a, b);
        let total: f64 = a.masses.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Σ P_i M_i equals the mean of a second independent sample within MC error
        let global = MomentOracle::monte_carlo(200_000, 6).moments(&mix, &Centers::new(vec![vec![0.0, 0.0]]).unwrap()).unwrap();
        let gm = global.means[0].as_ref().unwrap();
        for j in 0..2 {
            let mixed: f64 = (0..3).map(|i| a.masses[i] * a.means[i].as_ref().unwrap()[j]).sum();
            assert!((mixed - gm[j]).abs() < 5e-3, "coordinate {j}: {mixed} vs {}", gm[j]);
        }
    }

    #[test]
    fn cell_frequency_matches_masses() {
        use crate::rng::SimRng;
        let d = PiecewiseConstant1D::new(vec![0.0, 0.5, 1.0], vec![0.6, 1.4]).unwrap();
        let w = Centers::line(&[0.2, 0.45, 0.9]).unwrap();
        let p = voronoi_masses(&d, &w, &MomentOracle::exact()).unwrap();
        let mut rng = SimRng::new(21, 0);
        let n = 200_000;
        let mut counts = [0u64; 3];
        for _ in 0..n {
            let x = d.sample(&mut rng).unwrap();
            counts[w.nearest_center(&x).unwrap().index] += 1;
        }
        for i in 0..3 {
            let f = counts[i] as f64 / n as f64;
            let se = (p[i] * (1.0 - p[i]) / n as f64).sqrt();
            assert!((f - p[i]).abs() <= 3.0 * se, "cell {i}: {f} vs {}", p[i]);
        }
    }
}
