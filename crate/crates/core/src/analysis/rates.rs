//! Displacement and accumulated-rate bounds checked against traces.

use serde::Serialize;

use crate::engine::Trace;
use crate::rng::SimRng;
use crate::schedule::{estimate_masses, PowerLaw, RateContext, RateSchedule, UpdateWindow};

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DisplacementReport {
    pub pairs: usize,
    /// Largest `||W^(m) - W^(n)|| - 2R ΣH` seen (negative when the bound holds).
    pub max_excess: f64,
    pub violations: usize,
}

/// `||W^(m) - W^(n)|| ≤ 2R Σ_i Σ_{m≤n'<n} H_i^(n'+1)` on random pairs of
/// recorded rows.
pub fn displacement_check(trace: &Trace, pairs: usize, tol: f64, rng: &mut SimRng) -> DisplacementReport {
    let rows = &trace.rows;
    let mut out = DisplacementReport { max_excess: f64::NEG_INFINITY, ..Default::default() };
    if rows.len() < 2 {
        return out;
    }
    for _ in 0..pairs {
        let a = (rng.next_u64() % rows.len() as u64) as usize;
        let mut b = (rng.next_u64() % (rows.len() as u64 - 1)) as usize;
        if b >= a {
            b += 1;
        }
        let (m, n) = if a < b { (&rows[a], &rows[b]) } else { (&rows[b], &rows[a]) };
        let moved = m.centers.distance(&n.centers);
        let budget = 2.0 * trace.radius * trace.rate_between(m.n, n.n);
        let excess = moved - budget;
        out.pairs += 1;
        out.max_excess = out.max_excess.max(excess);
        if excess > tol {
            out.violations += 1;
        }
    }
    out
}

/// Quantities of the accumulated-rate bound at one checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateBoundCheck {
    pub n: u64,
    pub s_n: u64,
    pub n_circ: u64,
    pub t_n_circ: u64,
    pub observed: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RateCheckpoint {
    Checked(RateBoundCheck),
    Skipped { n: u64, reason: String },
}

/// `16k/t_{n∘} + 16k s_n log s_n / n`, or why `n` does not qualify.
pub fn rate_bound(power: &PowerLaw, k: usize, n: u64) -> std::result::Result<(u64, u64, f64), String> {
    let s = power.window(n);
    if !((s + 1) as f64 >= std::f64::consts::E && (s + 1) as f64 <= n as f64 / 2.0) {
        return Err(format!("needs e <= s_n + 1 <= n/2, have s_n = {s}, n = {n}"));
    }
    let n_circ = n - s;
    let t = power.t(n_circ);
    let k = k as f64;
    let bound = 16.0 * k / t as f64 + 16.0 * k * s as f64 * (s as f64).ln() / n as f64;
    Ok((s, n_circ, bound))
}

pub fn accumulated_rate_bound_check(trace: &Trace, power: &PowerLaw, n: u64) -> RateCheckpoint {
    if n > trace.iterations {
        return RateCheckpoint::Skipped { n, reason: format!("beyond the trace ({} iterations)", trace.iterations) };
    }
    match rate_bound(power, trace.k, n) {
        Err(reason) => RateCheckpoint::Skipped { n, reason },
        Ok((s_n, n_circ, bound)) => {
            let observed = trace.rate_between(n_circ, n);
            RateCheckpoint::Checked(RateBoundCheck {
                n,
                s_n,
                n_circ,
                t_n_circ: power.t(n_circ),
                observed,
                bound,
                margin: bound - observed,
            })
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RateBoundSweep {
    pub checked: u64,
    pub skipped: u64,
    pub min_margin: f64,
    pub violations: Vec<RateBoundCheck>,
}

/// Check every qualifying iteration of a trace.
pub fn rate_bound_sweep(trace: &Trace, power: &PowerLaw, tol: f64) -> RateBoundSweep {
    let mut out = RateBoundSweep { min_margin: f64::INFINITY, ..Default::default() };
    for n in 1..=trace.iterations {
        match accumulated_rate_bound_check(trace, power, n) {
            RateCheckpoint::Checked(c) => {
                out.checked += 1;
                out.min_margin = out.min_margin.min(c.margin);
                if c.margin < -tol {
                    out.violations.push(c);
                }
            }
            RateCheckpoint::Skipped { .. } => out.skipped += 1,
        }
    }
    out
}

/// The bound's worst case replayed through the real rate rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WorstCase {
    pub n: u64,
    pub s_n: u64,
    /// Accumulated rate of the replayed history.
    pub observed: f64,
    /// `1/t_{n∘} + Σ_{n'=1}^{s_n-1} s_n / ((n - s_n) n')`.
    pub construction: f64,
    pub bound: f64,
}

/// A history in which center 0 has no updates in the window at `n∘` and is
/// then chosen at every step up to `n`.
pub fn worst_case_fixture(power: &PowerLaw, k: usize, n: u64) -> std::result::Result<WorstCase, String> {
    if k < 2 {
        return Err("the worst case needs a second center to fill the early window".into());
    }
    let (s, n_circ, bound) = rate_bound(power, k, n)?;
    let mut schedule = RateSchedule::new(crate::schedule::Policy::GeneralizedLloyd, Some(*power), 1.0)
        .map_err(|e| e.to_string())?;
    let mut window = UpdateWindow::new(k, s as usize + 1);
    let counts = vec![0u64; k];
    let mut observed = 0.0;
    for step in 0..n {
        window.truncate_to(power.window(step) as usize);
        let chosen = if step < n_circ { 1 } else { 0 };
        if step >= n_circ {
            let phat = estimate_masses(&window);
            let ctx = RateContext { n: step, phat: &phat, exact_masses: None, naive_counts: &counts };
            observed += schedule.rate_if_updated(&ctx, 0, false);
        }
        window.push(&[chosen]);
    }
    let construction = 1.0 / power.t(n_circ) as f64
        + (1..s).map(|i| s as f64 / ((n - s) as f64 * i as f64)).sum::<f64>();
    Ok(WorstCase { n, s_n: s, observed, construction, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::engine::run;

    fn power() -> PowerLaw {
        PowerLaw::new(0.7, 0.8).unwrap()
    }

    #[test]
    fn zero_rate_window_has_full_margin() {
        let mut t = run(&RunConfig { iterations: 0, ..RunConfig::uniform_generalized(2, 0, 1) }).unwrap().trace;
        t.iterations = 1000;
        t.cum_rate = vec![0.0; 1001];
        let RateCheckpoint::Checked(c) = accumulated_rate_bound_check(&t, &power(), 1000) else { panic!() };
        assert_eq!(c.observed, 0.0);
        assert_eq!(c.margin, c.bound);
    }

    #[test]
    fn small_n_is_skipped_with_reason() {
        let t = run(&RunConfig::uniform_generalized(2, 10, 1)).unwrap().trace;
        match accumulated_rate_bound_check(&t, &power(), 1) {
            RateCheckpoint::Skipped { reason, .. } => assert!(reason.contains("s_n + 1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn worst_case_sits_below_construction_and_bound() {
        for n in [50, 1000, 20_000] {
            let w = worst_case_fixture(&power(), 2, n).unwrap();
            assert!(w.observed <= w.construction + 1e-12, "{w:?}");
            assert!(w.construction <= w.bound, "{w:?}");
            assert!(w.observed > 0.0);
        }
    }

    #[test]
    fn generalized_run_respects_bounds() {
        let cfg = RunConfig { stride: 50, ..RunConfig::uniform_generalized(3, 20_000, 4) };
        let t = run(&cfg).unwrap().trace;
        let sweep = rate_bound_sweep(&t, &power(), 1e-12);
        assert!(sweep.checked > 19_000);
        assert!(sweep.violations.is_empty(), "{:?}", &sweep.violations[..1]);
        let d = displacement_check(&t, 100, 1e-12, &mut SimRng::new(1, 9));
        assert_eq!(d.pairs, 100);
        assert_eq!(d.violations, 0);
    }
}
