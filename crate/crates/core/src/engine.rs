//! The streaming loop: sample, assign, rate, update.
//!
//! Row `n` of a [`Trace`] describes the state `W^(n)` together with the step
//! that leaves it: the chosen index `I^(n+1)`, the rates `H^(n+1)` and the
//! decomposition terms `A_{n+1}, B_{n+1}, C_{n+1}`. Rows are recorded every
//! `stride` iterations and always at the final iteration, which carries no
//! step.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::config::{InitSpec, Mode, RunConfig};
use crate::distribution::{sample_all_cells, Distribution, REJECTION_CAP};
use crate::error::{Error, Result};
use crate::geometry::{norm, sq_dist, Centers};
use crate::moments::{MomentOracle, VoronoiMoments};
use crate::objective::GradientValue;
use crate::rng::SimRng;
use crate::schedule::{estimate_masses, RateContext, RateSchedule, UpdateWindow};

/// Consecutive redraws tolerated before a step gives up.
const MAX_REDRAWS: u64 = 1000;

/// `(A, B, C)` for one step, plus whether a zero-mass center was updated.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Decomposition {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub zero_mass_update: bool,
}

/// Split the cost change of one step into exact descent `A`, zero-mean noise
/// `B` and quadratic noise `C`.
///
/// `xs[i]` is the point center `i` moved towards (`None` if it did not move).
pub fn decompose_step(w: &Centers, moments: &VoronoiMoments, h: &[f64], xs: &[Option<Vec<f64>>]) -> Decomposition {
    let mut out = Decomposition::default();
    for i in 0..w.k() {
        let (hi, Some(x)) = (h[i], &xs[i]) else { continue };
        if hi == 0.0 {
            continue;
        }
        let wi = w.point(i);
        out.c += 0.5 * hi * hi * sq_dist(wi, x);
        let p = moments.masses[i];
        match &moments.means[i] {
            Some(m) if p > 0.0 => {
                // ∇_i f = P_i (w_i - M_i), so H P⁻¹ |∇|² = H P |w_i - M_i|²
                out.a += hi * p * sq_dist(wi, m);
                let dot: f64 = wi.iter().zip(m).zip(x).map(|((wv, mv), xv)| p * (wv - mv) * (mv - xv)).sum();
                out.b += hi * dot;
            }
            _ => out.zero_mass_update = true,
        }
    }
    out
}

/// One recorded row.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub n: u64,
    /// Chosen index `I^(n+1)`; `None` in all-cells mode and on the final row.
    pub chosen: Option<usize>,
    /// `H^(n+1)`; empty on the final row.
    pub rates: Vec<f64>,
    pub phat: Vec<f64>,
    pub cost: Option<f64>,
    pub grad_norms: Option<Vec<f64>>,
    pub decomposition: Option<Decomposition>,
    /// `f(W^(n)) - A + (-B + C) - f(W^(n+1))`; must be nonnegative.
    pub descent_margin: Option<f64>,
    /// Slack allowed on the margin (zero for exact oracles).
    pub descent_tolerance: f64,
    /// `Σ_{n' < n} H^(n'+1)` per center.
    pub sum_h: Vec<f64>,
    pub sum_h2: f64,
    pub centers: Centers,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct EngineCounters {
    /// Draws discarded because the update would have merged two centers.
    pub redraws: u64,
    /// Draws equidistant from two centers (resolved to the lowest index).
    pub boundary_ties: u64,
    /// Updates nudged back into the support ball after rounding.
    pub support_projections: u64,
    /// All-cells steps in which some cell received no conditional draw.
    pub skipped_cells: u64,
    /// Audited steps that updated a zero-mass center.
    pub zero_mass_updates: u64,
    /// Rates clamped into [0, 1].
    pub rate_clamps: u64,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub k: usize,
    pub d: usize,
    pub radius: f64,
    pub iterations: u64,
    pub rows: Vec<TraceRow>,
    /// `cum_rate[n] = Σ_{n' < n} Σ_i H_i^(n'+1)`, at every iteration.
    pub cum_rate: Vec<f64>,
    pub counters: EngineCounters,
}

/// Result of [`run`]: whatever was traced, plus the error that stopped it.
#[derive(Debug)]
pub struct RunOutcome {
    pub trace: Trace,
    pub error: Option<Error>,
}

/// Draw or validate the initial centers.
pub fn init_centers(config: &RunConfig, dist: &dyn Distribution, rng: &mut SimRng) -> Result<Centers> {
    let radius = dist.support_radius();
    match &config.init {
        InitSpec::Explicit { centers } => {
            let w = Centers::new(centers.clone()).map_err(|e| Error::Config(e.to_string()))?;
            if w.d() != dist.dimension() {
                return Err(Error::Config(format!(
                    "initial centers have dimension {}, distribution {}",
                    w.d(),
                    dist.dimension()
                )));
            }
            if w.k() > 1 && w.min_separation()?.degenerate {
                return Err(Error::Config(format!("initial centers are not distinct: {w}")));
            }
            if !w.in_support_ball(radius) {
                return Err(Error::Config(format!("initial centers leave the support ball of radius {radius}: {w}")));
            }
            Ok(w)
        }
        InitSpec::Iid => {
            let d = dist.dimension();
            let mut pts: Vec<Vec<f64>> = Vec::with_capacity(config.k);
            let mut attempts = 0;
            while pts.len() < config.k {
                let x = dist.sample(rng)?;
                if pts.iter().any(|p| p == &x) {
                    attempts += 1;
                    if attempts > MAX_REDRAWS {
                        return Err(Error::Degenerate("could not draw distinct initial centers".into()));
                    }
                    continue;
                }
                pts.push(x);
            }
            Centers::from_flat(config.k, d, pts.concat())
        }
    }
}

/// Stepwise driver; [`run`] wraps it for whole runs.
pub struct Engine {
    dist: Arc<dyn Distribution>,
    schedule: RateSchedule,
    oracle: Option<MomentOracle>,
    exact: Option<MomentOracle>,
    mode: Mode,
    batch_size: usize,
    frozen: Vec<bool>,
    stride: u64,
    iterations: u64,
    rng: SimRng,
    w: Centers,
    n: u64,
    window: UpdateWindow,
    naive_counts: Vec<u64>,
    sum_h: Vec<f64>,
    sum_h2: f64,
    cum_rate: Vec<f64>,
    counters: EngineCounters,
    rows: Vec<TraceRow>,
}

struct StepOutcome {
    chosen: Option<usize>,
    rates: Vec<f64>,
    targets: Vec<Option<Vec<f64>>>,
}

impl Engine {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let dist = config.distribution.build()?;
        Self::with_distribution(config, dist)
    }

    pub fn with_distribution(config: &RunConfig, dist: Arc<dyn Distribution>) -> Result<Self> {
        let schedule = config.schedule.build()?;
        let exact = if schedule.policy.needs_exact_masses() {
            if dist.exact().is_none() {
                return Err(Error::Capability(format!(
                    "policy {:?} needs exact cell masses, which this distribution does not provide",
                    schedule.policy
                )));
            }
            Some(MomentOracle::exact())
        } else {
            None
        };
        let oracle = config.oracle.build(config.seed);
        if oracle.is_some_and(|o| o.is_exact()) && dist.exact().is_none() {
            return Err(Error::Capability("oracle.method = \"exact\" is not available for this distribution".into()));
        }
        let mut rng = SimRng::new(config.seed, 0);
        let w = init_centers(config, dist.as_ref(), &mut rng)?;
        if w.k() != config.k {
            return Err(Error::Config(format!("init gives {} centers but k = {}", w.k(), config.k)));
        }
        let k = config.k;
        let capacity = schedule.window(config.iterations) as usize * if config.mode == Mode::AllCells { k } else { 1 };
        let mut frozen = vec![false; k];
        for &i in &config.fixture.frozen_centers {
            frozen[i] = true;
        }
        let mut cum_rate = Vec::with_capacity(config.iterations as usize + 1);
        cum_rate.push(0.0);
        Ok(Self {
            dist,
            schedule,
            oracle,
            exact,
            mode: config.mode,
            batch_size: config.batch_size,
            frozen,
            stride: config.stride,
            iterations: config.iterations,
            rng,
            w,
            n: 0,
            window: UpdateWindow::new(k, capacity.min(1 << 24)),
            naive_counts: vec![0; k],
            sum_h: vec![0.0; k],
            sum_h2: 0.0,
            cum_rate,
            counters: EngineCounters::default(),
            rows: Vec::new(),
        })
    }

    pub fn iteration(&self) -> u64 {
        self.n
    }

    pub fn centers(&self) -> &Centers {
        &self.w
    }

    pub fn is_done(&self) -> bool {
        self.n >= self.iterations
    }

    pub fn schedule(&self) -> &RateSchedule {
        &self.schedule
    }

    pub fn distribution(&self) -> &Arc<dyn Distribution> {
        &self.dist
    }

    /// `P̂^(n)` for the current iteration.
    pub fn phat(&mut self) -> Vec<f64> {
        self.window.truncate_to(self.schedule.window(self.n) as usize);
        estimate_masses(&self.window)
    }

    pub fn counters(&self) -> EngineCounters {
        EngineCounters { rate_clamps: self.schedule.clamp_violations, ..self.counters }
    }

    fn audit(&self) -> Result<Option<(VoronoiMoments, GradientValue)>> {
        let Some(oracle) = &self.oracle else { return Ok(None) };
        let m = oracle.moments(self.dist.as_ref(), &self.w)?;
        let g = GradientValue::from_moments(&self.w, &m);
        Ok(Some((m, g)))
    }

    fn base_row(&self, phat: Vec<f64>, audit: &Option<(VoronoiMoments, GradientValue)>) -> TraceRow {
        TraceRow {
            n: self.n,
            chosen: None,
            rates: Vec::new(),
            phat,
            cost: audit.as_ref().map(|(m, _)| m.cost()),
            grad_norms: audit.as_ref().map(|(_, g)| g.norms.clone()),
            decomposition: None,
            descent_margin: None,
            descent_tolerance: 0.0,
            sum_h: self.sum_h.clone(),
            sum_h2: self.sum_h2,
            centers: self.w.clone(),
        }
    }

    /// Advance one iteration, recording a row when `n` is on the stride.
    pub fn step(&mut self) -> Result<()> {
        if self.is_done() {
            return Err(Error::Input(format!("run already finished at iteration {}", self.n)));
        }
        let n = self.n;
        self.window.truncate_to(self.schedule.window(n) as usize);
        let phat = estimate_masses(&self.window);
        let record = n.is_multiple_of(self.stride);
        let audit = if record { self.audit()? } else { None };
        let mut row = record.then(|| self.base_row(phat.clone(), &audit));
        let before = self.w.clone();

        let outcome = match self.mode {
            Mode::SingleCenter => self.single_center_update(n, &phat)?,
            Mode::AllCells => self.all_cells_update(n, &phat)?,
        };

        let mut step_sum = 0.0;
        for (i, &h) in outcome.rates.iter().enumerate() {
            self.sum_h[i] += h;
            self.sum_h2 += h * h;
            step_sum += h;
        }
        let last = *self.cum_rate.last().unwrap_or(&0.0);
        self.cum_rate.push(last + step_sum);

        if let Some(row) = row.as_mut() {
            row.chosen = outcome.chosen;
            row.rates = outcome.rates.clone();
            if let (Some((m, _)), Some(oracle)) = (&audit, &self.oracle) {
                let dec = decompose_step(&before, m, &outcome.rates, &outcome.targets);
                if dec.zero_mass_update {
                    self.counters.zero_mass_updates += 1;
                    log::warn!("iteration {n}: updated a center whose cell has zero mass");
                }
                let next = oracle.moments(self.dist.as_ref(), &self.w)?;
                row.descent_margin = Some(m.cost() - dec.a - dec.b + dec.c - next.cost());
                row.descent_tolerance = match (&m.errors, &next.errors) {
                    (Some(e0), Some(e1)) => 3.0 * (e0.cost + e1.cost),
                    _ => 0.0,
                };
                row.decomposition = Some(dec);
            }
        }
        self.rows.extend(row);
        self.window.push(&outcome.updated_indices());
        self.n += 1;
        Ok(())
    }

    fn single_center_update(&mut self, n: u64, phat: &[f64]) -> Result<StepOutcome> {
        let exact_masses = match &self.exact {
            Some(o) => Some(o.moments(self.dist.as_ref(), &self.w)?.masses),
            None => None,
        };
        let d = self.w.d();
        let mut x = vec![0.0; d];
        for _ in 0..MAX_REDRAWS {
            self.dist.sample_into(&mut self.rng, &mut x)?;
            let (i, tied) = self.w.nearest_with_tie(&x);
            if tied {
                self.counters.boundary_ties += 1;
                log::debug!("iteration {n}: draw on a cell boundary, assigned to center {i}");
            }
            let ctx = RateContext { n, phat, exact_masses: exact_masses.as_deref(), naive_counts: &self.naive_counts };
            let mut rates = self.schedule.next_rates(&ctx, i)?;
            if self.frozen[i] {
                rates[i] = 0.0;
            }
            let moved = self.moved_point(i, rates[i], &x);
            if self.collides(i, &moved) {
                self.counters.redraws += 1;
                continue;
            }
            self.w.point_mut(i).copy_from_slice(&moved);
            self.naive_counts[i] += 1;
            let mut targets = vec![None; self.w.k()];
            targets[i] = Some(x);
            return Ok(StepOutcome { chosen: Some(i), rates, targets });
        }
        Err(Error::Degenerate(format!("iteration {n}: every redraw would merge two centers")))
    }

    fn all_cells_update(&mut self, n: u64, phat: &[f64]) -> Result<StepOutcome> {
        let k = self.w.k();
        for _ in 0..MAX_REDRAWS {
            let batches = sample_all_cells(self.dist.as_ref(), &self.w, self.batch_size, REJECTION_CAP, &mut self.rng)?;
            if batches.iter().any(Option::is_none) {
                self.counters.skipped_cells += 1;
            }
            let targets: Vec<Option<Vec<f64>>> = batches.into_iter().map(|b| b.map(|pts| mean_of(&pts))).collect();
            let counts = self.naive_counts.clone();
            let ctx = RateContext { n, phat, exact_masses: None, naive_counts: &counts };
            let mut rates = vec![0.0; k];
            let mut next = self.w.clone();
            for i in 0..k {
                let Some(x) = &targets[i] else { continue };
                if self.frozen[i] {
                    continue;
                }
                rates[i] = self.schedule.rate_if_updated(&ctx, i, true);
                let moved = self.moved_point(i, rates[i], x);
                next.point_mut(i).copy_from_slice(&moved);
            }
            if k > 1 && next.min_separation()?.degenerate {
                self.counters.redraws += 1;
                continue;
            }
            self.w = next;
            for (i, t) in targets.iter().enumerate() {
                if t.is_some() {
                    self.naive_counts[i] += 1;
                }
            }
            return Ok(StepOutcome { chosen: None, rates, targets });
        }
        Err(Error::Degenerate(format!("iteration {n}: every redraw would merge two centers")))
    }

    /// `W_i + H (X - W_i)`, kept inside the segment and the support ball.
    fn moved_point(&mut self, i: usize, h: f64, x: &[f64]) -> Vec<f64> {
        let wi = self.w.point(i);
        if h == 0.0 {
            return wi.to_vec();
        }
        let mut out: Vec<f64> = wi
            .iter()
            .zip(x)
            .map(|(&w, &xv)| if h == 1.0 { xv } else { (w + h * (xv - w)).clamp(w.min(xv), w.max(xv)) })
            .collect();
        let radius = self.dist.support_radius();
        let r = norm(&out);
        if r > radius {
            self.counters.support_projections += 1;
            for v in &mut out {
                *v *= radius / r;
            }
            // scaling can itself round up by an ulp
            while norm(&out) > radius {
                for v in &mut out {
                    *v = next_toward_zero(*v);
                }
            }
        }
        out
    }

    fn collides(&self, i: usize, p: &[f64]) -> bool {
        self.w.points().enumerate().any(|(j, q)| j != i && q == p)
    }

    /// Record the final row and hand over the trace.
    pub fn finish(mut self) -> Trace {
        let final_row = if self.rows.last().map(|r| r.n) != Some(self.n) {
            self.window.truncate_to(self.schedule.window(self.n) as usize);
            let phat = estimate_masses(&self.window);
            let audit = match self.audit() {
                Ok(a) => a,
                Err(e) => {
                    log::warn!("final audit failed: {e}");
                    None
                }
            };
            Some(self.base_row(phat, &audit))
        } else {
            None
        };
        self.rows.extend(final_row);
        Trace {
            k: self.w.k(),
            d: self.w.d(),
            radius: self.dist.support_radius(),
            iterations: self.n,
            counters: self.counters(),
            rows: self.rows,
            cum_rate: self.cum_rate,
        }
    }
}

impl StepOutcome {
    fn updated_indices(&self) -> Vec<usize> {
        match self.chosen {
            Some(i) => vec![i],
            None => self.targets.iter().enumerate().filter(|(_, t)| t.is_some()).map(|(i, _)| i).collect(),
        }
    }
}

fn mean_of(points: &[Vec<f64>]) -> Vec<f64> {
    let mut out = points[0].clone();
    for p in &points[1..] {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    let m = points.len() as f64;
    out.iter_mut().for_each(|o| *o /= m);
    out
}

fn next_toward_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        f64::from_bits(v.to_bits() - 1)
    }
}

/// Execute a whole run. A failing step ends the run early; the rows traced
/// so far are returned alongside the error.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let mut engine = Engine::new(config)?;
    let mut error = None;
    while !engine.is_done() {
        if let Err(e) = engine.step() {
            log::error!("run stopped at iteration {}: {e}", engine.iteration());
            error = Some(e);
            break;
        }
    }
    Ok(RunOutcome { trace: engine.finish(), error })
}

impl Trace {
    /// CSV header: `n,I,H_*,Phat_*,f,gradnorm_*,A,B,C,sumH_*,sumH2,c<i>_<j>`.
    pub fn header(&self) -> Vec<String> {
        let per = |p: &'static str| (0..self.k).map(move |i| format!("{p}_{i}"));
        let mut h = vec!["n".to_string(), "I".to_string()];
        h.extend(per("H"));
        h.extend(per("Phat"));
        h.push("f".into());
        h.extend(per("gradnorm"));
        h.extend(["A", "B", "C"].map(String::from));
        h.extend(per("sumH"));
        h.push("sumH2".into());
        for i in 0..self.k {
            for j in 0..self.d {
                h.push(format!("c{i}_{j}"));
            }
        }
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(self.header())?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.rows {
            let mut rec = vec![r.n.to_string(), r.chosen.map_or_else(String::new, |i| i.to_string())];
            if r.rates.is_empty() {
                rec.extend(std::iter::repeat_n(String::new(), self.k));
            } else {
                rec.extend(r.rates.iter().map(f64::to_string));
            }
            rec.extend(r.phat.iter().map(f64::to_string));
            rec.push(opt(r.cost));
            match &r.grad_norms {
                Some(g) => rec.extend(g.iter().map(f64::to_string)),
                None => rec.extend(std::iter::repeat_n(String::new(), self.k)),
            }
            let dec = r.decomposition;
            rec.push(opt(dec.map(|d| d.a)));
            rec.push(opt(dec.map(|d| d.b)));
            rec.push(opt(dec.map(|d| d.c)));
            rec.extend(r.sum_h.iter().map(f64::to_string));
            rec.push(r.sum_h2.to_string());
            rec.extend(r.centers.as_flat().iter().map(f64::to_string));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn final_row(&self) -> &TraceRow {
        self.rows.last().expect("a trace always holds the initial state")
    }

    /// Accumulated rate `Σ_i Σ_{m ≤ n' < n} H_i^(n'+1)`.
    pub fn rate_between(&self, m: u64, n: u64) -> f64 {
        self.cum_rate[n as usize] - self.cum_rate[m as usize]
    }
}
