//! Learning-rate policies and the windowed Voronoi-mass estimator.
//!
//! Every policy emits a rate vector `H` with `0 <= H_i <= 1`. In
//! single-center mode only the chosen coordinate is nonzero:
//!
//! | policy              | rate for the chosen center `I`        |
//! |---------------------|---------------------------------------|
//! | `naive_lloyd`       | `1 / (N_I + 1)`                       |
//! | `ideal_lloyd`       | `1 / (n P_I)`                         |
//! | `ideal_prime_lloyd` | `1 / max(n P_I, t_n)`                 |
//! | `generalized_lloyd` | `1 / max(n P̂_I, t_n)`                 |
//! | `uniform_decay`     | `c / (n + 1)`                         |
//!
//! where `N_I` counts past updates of `I`, `P_I` is the exact mass of its
//! cell at the current iterate and `P̂_I` is the fraction of the last `s_n`
//! steps that updated `I`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    NaiveLloyd,
    IdealLloyd,
    IdealPrimeLloyd,
    GeneralizedLloyd,
    UniformDecay,
}

impl Policy {
    /// Policies that read exact cell masses from an oracle.
    pub fn needs_exact_masses(self) -> bool {
        matches!(self, Policy::IdealLloyd | Policy::IdealPrimeLloyd)
    }

    /// Policies that use the `t_n` floor (and hence the power-law exponents).
    pub fn uses_power_law(self) -> bool {
        matches!(self, Policy::IdealPrimeLloyd | Policy::GeneralizedLloyd)
    }
}

/// `s_n = max(1, ⌈n^α⌉)` and `t_n = max(1, ⌈n^β⌉)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub alpha: f64,
    pub beta: f64,
}

/// `⌈n^e⌉` floored at one. Powers within 1e-9 (relative) of an integer are
/// snapped to it so exact powers like `1024^0.8 = 256` do not round up.
fn ceil_pow(n: u64, e: f64) -> u64 {
    if n <= 1 {
        return 1;
    }
    let v = (n as f64).powf(e);
    let r = v.round();
    let c = if (v - r).abs() <= 1e-9 * v { r } else { v.ceil() };
    (c as u64).max(1)
}

impl PowerLaw {
    /// Rejects exponents outside `2/3 < α < β < 1`.
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(2.0 / 3.0 < alpha && alpha < beta && beta < 1.0) {
            return Err(Error::Config(format!(
                "window exponents must satisfy 2/3 < alpha < beta < 1 (got alpha = {alpha}, beta = {beta}); \
                 outside this region the convergence guarantee for generalized online Lloyd's does not apply"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn s(&self, n: u64) -> u64 {
        ceil_pow(n, self.alpha)
    }

    pub fn t(&self, n: u64) -> u64 {
        ceil_pow(n, self.beta)
    }

    /// Estimator window actually used at step `n`: `min(n, s_n)`.
    pub fn window(&self, n: u64) -> u64 {
        n.min(self.s(n))
    }
}

/// Ring buffer of recent update indices feeding `P̂`.
///
/// Each step pushes the set of centers it updated (one index in
/// single-center mode). The buffer keeps exactly the last `window` steps.
#[derive(Clone, Debug)]
pub struct UpdateWindow {
    k: usize,
    indices: VecDeque<u32>,
    per_step: VecDeque<u32>,
    counts: Vec<u64>,
}

impl UpdateWindow {
    pub fn new(k: usize, capacity: usize) -> Self {
        Self {
            k,
            indices: VecDeque::with_capacity(capacity),
            per_step: VecDeque::with_capacity(capacity),
            counts: vec![0; k],
        }
    }

    /// Number of steps currently held.
    pub fn len(&self) -> usize {
        self.per_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_step.is_empty()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Record the centers updated by one step.
    pub fn push(&mut self, updated: &[usize]) {
        for &i in updated {
            debug_assert!(i < self.k);
            self.indices.push_back(i as u32);
            self.counts[i] += 1;
        }
        self.per_step.push_back(updated.len() as u32);
    }

    /// Drop the oldest steps until at most `len` remain.
    pub fn truncate_to(&mut self, len: usize) {
        while self.per_step.len() > len {
            let c = self.per_step.pop_front().unwrap_or(0);
            for _ in 0..c {
                if let Some(i) = self.indices.pop_front() {
                    self.counts[i as usize] -= 1;
                }
            }
        }
    }

    /// Chronological update indices (oldest first).
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().map(|&i| i as usize)
    }
}

/// `P̂_j = count_j / len`; all zeros for an empty window.
pub fn estimate_masses(window: &UpdateWindow) -> Vec<f64> {
    let len = window.len();
    if len == 0 {
        return vec![0.0; window.k];
    }
    window.counts.iter().map(|&c| c as f64 / len as f64).collect()
}

/// Inputs to a rate evaluation; everything here is known at iteration `n`.
#[derive(Clone, Copy, Debug)]
pub struct RateContext<'a> {
    pub n: u64,
    /// Estimated update frequencies `P̂^(n)`.
    pub phat: &'a [f64],
    /// Exact cell masses at `W^(n)`, for the idealized policies.
    pub exact_masses: Option<&'a [f64]>,
    /// Past update counts `N_i`.
    pub naive_counts: &'a [u64],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    pub policy: Policy,
    pub power_law: Option<PowerLaw>,
    pub uniform_c: f64,
    /// Rates that had to be clamped into [0, 1].
    #[serde(skip)]
    pub clamp_violations: u64,
}

impl RateSchedule {
    pub fn new(policy: Policy, power_law: Option<PowerLaw>, uniform_c: f64) -> Result<Self> {
        if policy.uses_power_law() && power_law.is_none() {
            return Err(Error::Config(format!("policy {policy:?} needs alpha and beta")));
        }
        if policy == Policy::UniformDecay && !(uniform_c > 0.0 && uniform_c.is_finite()) {
            return Err(Error::Config(format!("uniform_c must be positive, got {uniform_c}")));
        }
        Ok(Self { policy, power_law, uniform_c, clamp_violations: 0 })
    }

    pub fn generalized(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(Policy::GeneralizedLloyd, Some(PowerLaw::new(alpha, beta)?), 1.0)
    }

    pub fn naive() -> Self {
        Self { policy: Policy::NaiveLloyd, power_law: None, uniform_c: 1.0, clamp_violations: 0 }
    }

    /// Window length at step `n`; the naive policy keeps the full history.
    pub fn window(&self, n: u64) -> u64 {
        self.power_law.map_or(n, |p| p.window(n))
    }

    fn t(&self, n: u64) -> f64 {
        self.power_law.map_or(1.0, |p| p.t(n) as f64)
    }

    /// Rate for center `i` assuming it is updated at this step.
    ///
    /// `update_prob` is the probability with which `i` gets updated: the
    /// (estimated or exact) cell mass in single-center mode, 1 when every
    /// cell is updated at once.
    pub fn rate_if_updated(&mut self, ctx: &RateContext<'_>, i: usize, all_cells: bool) -> f64 {
        let n = ctx.n as f64;
        let raw = match self.policy {
            Policy::NaiveLloyd => 1.0 / (ctx.naive_counts[i] as f64 + 1.0),
            Policy::UniformDecay => self.uniform_c / (n + 1.0),
            Policy::GeneralizedLloyd => {
                let p = if all_cells { ctx.phat[i].min(1.0) } else { ctx.phat[i] };
                1.0 / (n * p).max(self.t(ctx.n))
            }
            Policy::IdealLloyd | Policy::IdealPrimeLloyd => {
                let p = if all_cells { 1.0 } else { ctx.exact_masses.map_or(0.0, |m| m[i]) };
                if p <= 0.0 {
                    // massless cell: no update
                    return 0.0;
                }
                if self.policy == Policy::IdealLloyd {
                    1.0 / (n * p)
                } else {
                    1.0 / (n * p).max(self.t(ctx.n))
                }
            }
        };
        if (0.0..=1.0).contains(&raw) {
            raw
        } else {
            self.clamp_violations += 1;
            if raw.is_nan() {
                0.0
            } else {
                raw.clamp(0.0, 1.0)
            }
        }
    }

    /// Single-center rate vector: nonzero only at the chosen index.
    pub fn next_rates(&mut self, ctx: &RateContext<'_>, chosen: usize) -> Result<Vec<f64>> {
        let k = ctx.phat.len();
        if chosen >= k || ctx.naive_counts.len() != k {
            return Err(Error::Input(format!("chosen index {chosen} or counter length invalid for k = {k}")));
        }
        if self.policy.needs_exact_masses() && ctx.exact_masses.is_none() {
            return Err(Error::Capability(format!("policy {:?} needs exact cell masses", self.policy)));
        }
        let mut h = vec![0.0; k];
        h[chosen] = self.rate_if_updated(ctx, chosen, false);
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn power_law_examples() {
        let p = PowerLaw::new(0.7, 0.8).unwrap();
        assert_eq!(p.s(1000), 126);
        assert_eq!(p.t(1000), 252);
        for n in [0, 1] {
            assert_eq!(p.s(n), 1);
            assert_eq!(p.t(n), 1);
        }
        assert_eq!(p.window(0), 0);
        assert_eq!(p.window(1), 1);
        // 1024^0.8 = 256 exactly in real arithmetic
        assert_eq!(PowerLaw::new(0.7, 0.8).unwrap().t(1024), 256);
    }

    #[test]
    fn power_law_rejects_inadmissible_exponents() {
        for (a, b) in [(0.5, 0.8), (0.8, 0.7), (0.7, 1.0), (2.0 / 3.0, 0.8), (0.7, 0.7)] {
            let err = PowerLaw::new(a, b).unwrap_err();
            assert!(err.to_string().contains("2/3 < alpha < beta < 1"));
        }
    }

    #[test]
    fn estimator_examples() {
        let mut w = UpdateWindow::new(2, 4);
        for i in [0, 1, 0, 0] {
            w.push(&[i]);
        }
        assert_eq!(estimate_masses(&w), vec![0.75, 0.25]);

        let mut w = UpdateWindow::new(3, 4);
        for _ in 0..4 {
            w.push(&[0]);
        }
        assert_eq!(estimate_masses(&w), vec![1.0, 0.0, 0.0]);

        let mut w = UpdateWindow::new(3, 4);
        for i in [0, 1, 2] {
            w.push(&[i]);
        }
        w.truncate_to(1);
        assert_eq!(estimate_masses(&w), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn rate_examples() {
        let mut s = RateSchedule::generalized(0.7, 0.8).unwrap();
        // n = 100: t_100 = ⌈100^0.8⌉ = 40
        assert_eq!(s.power_law.unwrap().t(100), 40);
        let phat = [0.25, 0.75];
        let ctx = RateContext { n: 100, phat: &phat, exact_masses: None, naive_counts: &[0, 0] };
        assert_eq!(s.next_rates(&ctx, 0).unwrap(), vec![0.025, 0.0]);

        let phat = [0.0, 1.0];
        let ctx = RateContext { n: 17, phat: &phat, exact_masses: None, naive_counts: &[0, 0] };
        // t_17 = ⌈17^0.8⌉ = 10, so the floor gives 1/10
        assert_eq!(s.power_law.unwrap().t(17), 10);
        assert_eq!(s.next_rates(&ctx, 0).unwrap()[0], 0.1);

        let mut naive = RateSchedule::naive();
        let ctx = RateContext { n: 9, phat: &[0.0, 0.0], exact_masses: None, naive_counts: &[4, 5] };
        assert_eq!(naive.next_rates(&ctx, 0).unwrap(), vec![0.2, 0.0]);
        // first update of a center snaps it to the data point
        let ctx = RateContext { n: 0, phat: &[0.0, 0.0], exact_masses: None, naive_counts: &[0, 0] };
        assert_eq!(naive.next_rates(&ctx, 1).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn ideal_policies() {
        let mut ideal = RateSchedule::new(Policy::IdealLloyd, None, 1.0).unwrap();
        let masses = [0.5, 0.0];
        let ctx = RateContext { n: 10, phat: &[0.0, 0.0], exact_masses: Some(&masses), naive_counts: &[0, 0] };
        assert_eq!(ideal.next_rates(&ctx, 0).unwrap(), vec![0.2, 0.0]);
        // zero-mass guard
        assert_eq!(ideal.next_rates(&ctx, 1).unwrap(), vec![0.0, 0.0]);
        // n P < 1 clamps and is counted
        let ctx = RateContext { n: 1, ..ctx };
        assert_eq!(ideal.next_rates(&ctx, 0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(ideal.clamp_violations, 1);
        let no_masses = RateContext { exact_masses: None, ..ctx };
        assert!(matches!(ideal.next_rates(&no_masses, 0), Err(Error::Capability(_))));

        let mut prime = RateSchedule::new(Policy::IdealPrimeLloyd, Some(PowerLaw::new(0.7, 0.8).unwrap()), 1.0).unwrap();
        let ctx = RateContext { n: 100, phat: &[0.0, 0.0], exact_masses: Some(&[0.3, 0.7]), naive_counts: &[0, 0] };
        assert_eq!(prime.next_rates(&ctx, 0).unwrap()[0], 1.0 / 40.0);
    }

    #[test]
    fn uniform_decay_rate() {
        let mut s = RateSchedule::new(Policy::UniformDecay, None, 1.0).unwrap();
        let ctx = RateContext { n: 3, phat: &[0.0; 3], exact_masses: None, naive_counts: &[0; 3] };
        assert_eq!(s.next_rates(&ctx, 2).unwrap(), vec![0.0, 0.0, 0.25]);
        assert!(RateSchedule::new(Policy::UniformDecay, None, 0.0).is_err());
    }

    /// Partial sums of squared rates over a long horizon flatten out: the
    /// increment over the last decade is under 1% of the total.
    #[test]
    fn squared_rates_are_summable() {
        use crate::rng::SimRng;
        for policy in [Policy::GeneralizedLloyd, Policy::UniformDecay] {
            let mut s = RateSchedule::new(policy, Some(PowerLaw::new(0.7, 0.8).unwrap()), 1.0).unwrap();
            let k = 3;
            let probs = [0.2, 0.3, 0.5];
            let mut window = UpdateWindow::new(k, 20_000);
            let mut counts = vec![0u64; k];
            let mut rng = SimRng::new(99, 0);
            let total_steps = 1_000_000u64;
            let mut sum_sq = 0.0;
            let mut at_decade = 0.0;
            for n in 0..total_steps {
                if n == total_steps / 10 {
                    at_decade = sum_sq;
                }
                let u = rng.uniform();
                let chosen = if u < probs[0] { 0 } else if u < probs[0] + probs[1] { 1 } else { 2 };
                window.truncate_to(s.window(n) as usize);
                let phat = estimate_masses(&window);
                let ctx = RateContext { n, phat: &phat, exact_masses: None, naive_counts: &counts };
                let h = s.next_rates(&ctx, chosen).unwrap();
                sum_sq += h.iter().map(|x| x * x).sum::<f64>();
                window.push(&[chosen]);
                counts[chosen] += 1;
            }
            assert!((sum_sq - at_decade) < 0.01 * sum_sq, "{policy:?}: {at_decade} -> {sum_sq}");
            assert_eq!(s.clamp_violations, 0);
        }
    }

    proptest! {
        #[test]
        fn rates_are_single_coordinate_and_in_unit_interval(
            policy in prop::sample::select(vec![Policy::NaiveLloyd, Policy::IdealLloyd, Policy::IdealPrimeLloyd, Policy::GeneralizedLloyd, Policy::UniformDecay]),
            n in 0u64..100_000,
            raw in prop::collection::vec(0.0..1.0f64, 1..6),
            counts in prop::collection::vec(0u64..1000, 6),
            chosen in 0usize..6,
        ) {
            let k = raw.len();
            let chosen = chosen % k;
            let total: f64 = raw.iter().sum::<f64>().max(1e-9);
            let masses: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let mut s = RateSchedule::new(policy, Some(PowerLaw::new(0.7, 0.8).unwrap()), 1.0).unwrap();
            let ctx = RateContext { n, phat: &masses, exact_masses: Some(&masses), naive_counts: &counts[..k] };
            let h = s.next_rates(&ctx, chosen).unwrap();
            for (i, v) in h.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(v));
                if i != chosen {
                    prop_assert_eq!(*v, 0.0);
                }
            }
            if policy == Policy::GeneralizedLloyd {
                prop_assert_eq!(s.clamp_violations, 0);
            }
        }

        #[test]
        fn window_counts_match_occurrences(seq in prop::collection::vec(0usize..4, 1..300), len in 1usize..50) {
            let mut w = UpdateWindow::new(4, len);
            for &i in &seq {
                w.push(&[i]);
                w.truncate_to(len);
            }
            let tail = &seq[seq.len().saturating_sub(len)..];
            for j in 0..4 {
                prop_assert_eq!(w.counts()[j] as usize, tail.iter().filter(|&&x| x == j).count());
            }
            let est: f64 = estimate_masses(&w).iter().sum();
            prop_assert!((est - 1.0).abs() < 1e-12);
        }
    }
}
