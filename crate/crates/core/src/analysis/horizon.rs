//! Harmonic partial sums and the horizon `T_r(m)`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Compensated (Neumaier) running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `T_r(m)`: the integer with `Σ_{m≤n<T} 1/n ≤ r < Σ_{m≤n≤T} 1/n`.
pub fn horizon(r: f64, m: u64) -> Result<u64> {
    if m < 2 {
        return Err(Error::Input(format!("horizon needs m >= 2, got {m}")));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Input(format!("horizon needs a positive budget r, got {r}")));
    }
    let mut s = KahanSum::default();
    let mut t = m;
    loop {
        s.add(1.0 / t as f64);
        if s.value() > r {
            return Ok(t);
        }
        t += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HarmonicBounds {
    pub lower: f64,
    pub sum: f64,
    pub upper: f64,
}

impl HarmonicBounds {
    pub fn holds(&self) -> bool {
        self.lower <= self.sum && self.sum <= self.upper
    }
}

/// `log(m'/m) ≤ Σ_{m≤n<m'} 1/n ≤ log((m'-1)/(m-1))` for `1 < m < m'`.
pub fn harmonic_bounds(m: u64, m_prime: u64) -> Result<HarmonicBounds> {
    if !(1 < m && m < m_prime) {
        return Err(Error::Input(format!("harmonic bounds need 1 < m < m' (got m = {m}, m' = {m_prime})")));
    }
    let mut s = KahanSum::default();
    for n in m..m_prime {
        s.add(1.0 / n as f64);
    }
    Ok(bounds_from_sum(m, m_prime, s.value()))
}

fn bounds_from_sum(m: u64, m_prime: u64, sum: f64) -> HarmonicBounds {
    HarmonicBounds {
        lower: (m_prime as f64 / m as f64).ln(),
        sum,
        upper: ((m_prime - 1) as f64 / (m - 1) as f64).ln(),
    }
}

/// One `(r, m)` cell of the horizon sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HorizonCase {
    pub r: f64,
    pub m: u64,
    pub t: u64,
    /// `α(m-1) ≤ T - m` with `α = e^r - 1`.
    pub lower_ok: bool,
    /// `T - m ≤ αm`.
    pub upper_ok: bool,
    /// `α(m-1) - 1 < T - m`, the lower bound the harmonic sandwich actually yields.
    pub corrected_lower_ok: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct HorizonSweep {
    pub cases: u64,
    pub lower_violations: Vec<HorizonCase>,
    pub upper_violations: Vec<HorizonCase>,
    pub corrected_lower_violations: Vec<HorizonCase>,
}

pub fn horizon_case(r: f64, m: u64) -> Result<HorizonCase> {
    let t = horizon(r, m)?;
    let alpha = r.exp_m1();
    let gap = (t - m) as f64;
    Ok(HorizonCase {
        r,
        m,
        t,
        lower_ok: alpha * (m - 1) as f64 <= gap,
        upper_ok: gap <= alpha * m as f64,
        corrected_lower_ok: alpha * (m - 1) as f64 - 1.0 < gap,
    })
}

/// Check the horizon bounds for every `m` in `ms` and every budget in `rs`.
pub fn horizon_sweep(rs: &[f64], ms: std::ops::RangeInclusive<u64>) -> Result<HorizonSweep> {
    let mut out = HorizonSweep::default();
    for &r in rs {
        for m in ms.clone() {
            let c = horizon_case(r, m)?;
            out.cases += 1;
            if !c.lower_ok {
                out.lower_violations.push(c);
            }
            if !c.upper_ok {
                out.upper_violations.push(c);
            }
            if !c.corrected_lower_ok {
                out.corrected_lower_violations.push(c);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct HarmonicSweep {
    pub cases: u64,
    pub violations: Vec<(u64, u64, HarmonicBounds)>,
}

/// Sandwich check for `m ∈ ms`, `m' ∈ (m, 2m]`.
pub fn harmonic_sweep(ms: std::ops::RangeInclusive<u64>) -> HarmonicSweep {
    let mut out = HarmonicSweep::default();
    for m in ms {
        if m < 2 {
            continue;
        }
        let mut s = KahanSum::default();
        for m_prime in m + 1..=2 * m {
            s.add(1.0 / (m_prime - 1) as f64);
            let b = bounds_from_sum(m, m_prime, s.value());
            out.cases += 1;
            if !b.holds() {
                out.violations.push((m, m_prime, b));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn horizon_examples() {
        assert_eq!(horizon(std::f64::consts::LN_2, 10).unwrap(), 19);
        // empty left sum: r below 1/m stops at m
        assert_eq!(horizon(0.05, 10).unwrap(), 10);
        assert!(horizon(0.5, 1).is_err());
        assert!(horizon(0.0, 5).is_err());
    }

    #[test]
    fn horizon_partial_sums_bracket_ln2() {
        let left: f64 = (10..19).map(|n| 1.0 / n as f64).sum();
        let right = left + 1.0 / 19.0;
        assert_abs_diff_eq!(left, 0.66614, epsilon = 1e-5);
        assert_abs_diff_eq!(right, 0.71877, epsilon = 1e-5);
    }

    #[test]
    fn harmonic_examples() {
        let b = harmonic_bounds(2, 4).unwrap();
        assert_abs_diff_eq!(b.lower, 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(b.sum, 0.5 + 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.upper, 3f64.ln(), epsilon = 1e-15);
        assert!(b.holds());
        for m in [2, 7, 500] {
            let b = harmonic_bounds(m, m + 1).unwrap();
            assert_eq!(b.sum, 1.0 / m as f64);
            assert!(b.holds());
        }
        assert!(harmonic_bounds(1, 3).is_err());
        assert!(harmonic_bounds(4, 4).is_err());
    }

    #[test]
    fn sweep_agrees_with_direct_evaluation() {
        let sweep = harmonic_sweep(2..=60);
        assert!(sweep.violations.is_empty());
        assert_eq!(sweep.cases, (2..=60u64).sum::<u64>());
    }

    /// At r = 0.1 the lower bound fails already at m = 2: α ≈ 0.105 but T = 2.
    #[test]
    fn small_budget_breaks_the_stated_lower_bound() {
        let c = horizon_case(0.1, 2).unwrap();
        assert_eq!(c.t, 2);
        assert!(!c.lower_ok);
        assert!(c.upper_ok && c.corrected_lower_ok);
    }

    proptest! {
        #[test]
        fn horizon_is_the_sandwich_point(r in 0.01..3.0f64, m in 2u64..5000) {
            let t = horizon(r, m).unwrap();
            let left: f64 = (m..t).map(|n| 1.0 / n as f64).sum();
            prop_assert!(left <= r + 1e-12);
            prop_assert!(left + 1.0 / t as f64 > r - 1e-12);
        }

        #[test]
        fn horizon_upper_and_corrected_lower_bounds(r in 0.01..3.0f64, m in 2u64..5000) {
            let c = horizon_case(r, m).unwrap();
            prop_assert!(c.upper_ok);
            prop_assert!(c.corrected_lower_ok);
        }
    }
}
