//! Periodically refreshed baths over any backend: the refresh recursion,
//! τ-doubling certification, t₁-offset timeline reconstruction and a
//! steady-state detector.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Mutex;

use faer::Mat;
use num_complex::Complex64 as c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chainmap::{mapped_bath, required_bath_size, ChainBath, ChainCache};
use crate::error::{Error, Result};
use crate::freefermion::{assemble_hamiltonian, pattern_block, CorrelationMatrix, Trajectory};
use crate::liouville::{build_many_body_hamiltonian, dense_evolve, partial_trace, pattern_state, product_state, DenseState};
use crate::spectral::{memory_time, SpectralDensity, ThermalParams};
use crate::system::{Observables, Pattern, SystemSpec};
use crate::tebd::{self, attach_baths, build_gates, Truncation, TruncationLog, VectorizedMps};

/// Two sample times closer than this are the same point.
pub const TIME_EPS: f64 = 1e-9;
/// Memory-time threshold on the decay of the bath correlation functions.
pub const MEMORY_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathSpec {
    pub density: SpectralDensity,
    pub thermal: ThermalParams,
}

/// Everything a backend needs apart from its own numerical parameters.
#[derive(Debug)]
pub struct Problem {
    pub system: SystemSpec,
    pub pattern: Pattern,
    pub baths: [BathSpec; 2],
    /// Fixed chain length overriding the light-cone sizing.
    pub bath_sites: Option<usize>,
    pub cache: Option<ChainCache>,
    chains: Mutex<HashMap<(usize, usize), ChainBath>>,
}

impl Clone for Problem {
    fn clone(&self) -> Self {
        Self {
            system: self.system,
            pattern: self.pattern.clone(),
            baths: self.baths.clone(),
            bath_sites: self.bath_sites,
            cache: self.cache.clone(),
            chains: Mutex::new(self.chains.lock().map(|m| m.clone()).unwrap_or_default()),
        }
    }
}

impl Problem {
    pub fn new(system: SystemSpec, pattern: Pattern, baths: [BathSpec; 2]) -> Result<Self> {
        pattern.occupations(system.sites)?;
        for b in &baths {
            b.thermal.check_against(&b.density)?;
        }
        Ok(Self { system, pattern, baths, bath_sites: None, cache: None, chains: Mutex::new(HashMap::new()) })
    }

    pub fn with_bath_sites(mut self, sites: Option<usize>) -> Self {
        self.bath_sites = sites;
        self
    }

    pub fn with_cache(mut self, cache: Option<ChainCache>) -> Self {
        self.cache = cache;
        self
    }

    /// Chain lengths that keep the baths' light cone inside the chain for
    /// `duration`.
    pub fn bath_sites_for(&self, duration: f64) -> [usize; 2] {
        let size = |b: &BathSpec| {
            self.bath_sites.unwrap_or_else(|| required_bath_size(duration, b.density.asymptotic_hopping()))
        };
        [size(&self.baths[0]), size(&self.baths[1])]
    }

    pub fn baths_for(&self, duration: f64) -> Result<(ChainBath, ChainBath)> {
        let sites = self.bath_sites_for(duration);
        Ok((self.chain(0, sites[0])?, self.chain(1, sites[1])?))
    }

    fn chain(&self, which: usize, sites: usize) -> Result<ChainBath> {
        if let Some(c) = self.chains.lock().ok().and_then(|m| m.get(&(which, sites)).cloned()) {
            return Ok(c);
        }
        let spec = &self.baths[which];
        let chain = match &self.cache {
            Some(cache) => cache.load_or_compute(&spec.density, sites, spec.thermal)?,
            None => mapped_bath(&spec.density, sites, spec.thermal)?,
        };
        if let Ok(mut m) = self.chains.lock() {
            m.insert((which, sites), chain.clone());
        }
        Ok(chain)
    }

    /// Largest memory time of the two baths, if both decay within `t_max`.
    pub fn memory_time(&self, t_max: f64) -> Option<f64> {
        let mut worst: f64 = 0.0;
        for b in &self.baths {
            worst = worst.max(memory_time(&b.density, &b.thermal, MEMORY_THRESHOLD, t_max).ok()?);
        }
        Some(worst)
    }
}

/// A solver for one refresh cycle: fresh thermal baths are coupled to the
/// system state, everything evolves for a while, and the baths are traced out.
pub trait Backend: Sync {
    type State: Clone + Send + Sync;

    fn name(&self) -> &'static str;
    fn problem(&self) -> &Problem;
    fn initial(&self) -> Result<Self::State>;
    fn observables(&self, state: &Self::State) -> Result<Observables>;

    /// Evolves `state ⊗ ρ_B` for `duration` and returns the reduced system
    /// state. `record(s, obs)` is called at every positive multiple `s` of
    /// `stride` strictly inside the cycle.
    fn cycle(
        &self,
        state: &Self::State,
        baths: &(ChainBath, ChainBath),
        duration: f64,
        stride: Option<f64>,
        record: &mut dyn FnMut(f64, Observables),
    ) -> Result<Self::State>;

    /// Backend-specific schedule checks.
    fn check_schedule(&self, _schedule: &PrebSchedule) -> Result<()> {
        Ok(())
    }

    fn truncation_log(&self, _state: &Self::State) -> Option<TruncationLog> {
        None
    }
}

/// Strictly interior multiples of `stride` in `(0, duration)`.
fn inner_times(duration: f64, stride: Option<f64>) -> Vec<f64> {
    let Some(s) = stride.filter(|s| *s > 0.0) else {
        return Vec::new();
    };
    let n = ((duration / s) + TIME_EPS).floor() as usize;
    (1..=n).map(|k| k as f64 * s).filter(|&t| t < duration - TIME_EPS).collect()
}

pub struct FreeFermionBackend {
    pub problem: Problem,
}

impl Backend for FreeFermionBackend {
    type State = Mat<c64>;

    fn name(&self) -> &'static str {
        "freefermion"
    }

    fn problem(&self) -> &Problem {
        &self.problem
    }

    fn initial(&self) -> Result<Mat<c64>> {
        if !self.problem.system.is_free() {
            return Err(Error::InteractingSystem(self.problem.system.interaction));
        }
        pattern_block(self.problem.system.sites, &self.problem.pattern)
    }

    fn observables(&self, state: &Mat<c64>) -> Result<Observables> {
        Ok(Observables::from_correlations(state))
    }

    fn cycle(
        &self,
        state: &Mat<c64>,
        baths: &(ChainBath, ChainBath),
        duration: f64,
        stride: Option<f64>,
        record: &mut dyn FnMut(f64, Observables),
    ) -> Result<Mat<c64>> {
        let h = assemble_hamiltonian(&self.problem.system, &baths.0, &baths.1)?;
        let c = CorrelationMatrix::product(state, &baths.0, &baths.1)?;
        let traj = Trajectory::new(&h, &c)?;
        for s in inner_times(duration, stride) {
            record(s, Observables::from_correlations(&traj.system_block_at(s)));
        }
        Ok(traj.system_block_at(duration))
    }
}

/// Exact many-body evolution; system plus both baths at most twelve modes.
pub struct DenseBackend {
    pub problem: Problem,
}

impl Backend for DenseBackend {
    type State = Mat<c64>;

    fn name(&self) -> &'static str {
        "dense"
    }

    fn problem(&self) -> &Problem {
        &self.problem
    }

    fn initial(&self) -> Result<Mat<c64>> {
        pattern_state(&self.problem.system, &self.problem.pattern)
    }

    fn observables(&self, state: &Mat<c64>) -> Result<Observables> {
        let modes = self.problem.system.sites;
        let st = DenseState { rho: state.clone(), modes };
        Ok(Observables::from_correlations(&st.correlation_block(0, modes)))
    }

    fn cycle(
        &self,
        state: &Mat<c64>,
        baths: &(ChainBath, ChainBath),
        duration: f64,
        stride: Option<f64>,
        record: &mut dyn FnMut(f64, Observables),
    ) -> Result<Mat<c64>> {
        let sys = &self.problem.system;
        let h = build_many_body_hamiltonian(sys, &baths.0, &baths.1)?;
        let rho = product_state(state, &baths.0, &baths.1)?;
        let keep: Vec<usize> = (h.layout.system_offset()..h.layout.bath2_offset()).collect();
        for s in inner_times(duration, stride) {
            let st = dense_evolve(&rho, &h, s)?;
            record(s, Observables::from_correlations(&st.correlation_block(h.layout.system_offset(), sys.sites)));
        }
        partial_trace(&dense_evolve(&rho, &h, duration)?, &keep)
    }
}

/// Mixed-basis TEBD on the vectorized density matrix.
pub struct TebdBackend {
    pub problem: Problem,
    pub dt: f64,
    pub truncation: Truncation,
}

/// `x / dt` as an integer, if it is one.
fn steps_of(x: f64, dt: f64) -> Option<usize> {
    let r = x / dt;
    let n = r.round();
    ((r - n).abs() < 1e-6 && n >= 0.0).then_some(n as usize)
}

impl Backend for TebdBackend {
    type State = VectorizedMps;

    fn name(&self) -> &'static str {
        "tebd"
    }

    fn problem(&self) -> &Problem {
        &self.problem
    }

    fn initial(&self) -> Result<VectorizedMps> {
        let p = &self.problem;
        let occ = p.pattern.occupations(p.system.sites)?;
        let tensors = occ
            .iter()
            .map(|&n| tebd::Tensor::product([c64::new(1.0 - n, 0.0), c64::new(0.0, 0.0), c64::new(0.0, 0.0), c64::new(n, 0.0)]))
            .collect();
        let layout = crate::freefermion::Layout { bath1: 0, system: p.system.sites, bath2: 0 };
        Ok(VectorizedMps::from_product(tensors, 0.0, layout, self.truncation))
    }

    fn observables(&self, state: &VectorizedMps) -> Result<Observables> {
        Ok(state.observables())
    }

    fn cycle(
        &self,
        state: &VectorizedMps,
        baths: &(ChainBath, ChainBath),
        duration: f64,
        stride: Option<f64>,
        record: &mut dyn FnMut(f64, Observables),
    ) -> Result<VectorizedMps> {
        let steps = steps_of(duration, self.dt)
            .ok_or_else(|| Error::Schedule(format!("duration {duration} is not a multiple of dt = {}", self.dt)))?;
        if steps == 0 {
            return Ok(state.clone());
        }
        let stride_steps = match stride {
            Some(s) => steps_of(s, self.dt)
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Schedule(format!("record stride {s} is not a multiple of dt = {}", self.dt)))?,
            None => steps,
        };
        let gates = build_gates(&self.problem.system, &baths.0, &baths.1, self.dt)?;
        let mut mps = attach_baths(state, &baths.0, &baths.1)?;
        let dt = self.dt;
        tebd::evolve(&mut mps, &gates, steps, stride_steps, |step, m| {
            if step < steps {
                record(step as f64 * dt, m.observables());
            }
            Ok(())
        })?;
        mps.trace_out_baths()
    }

    fn check_schedule(&self, s: &PrebSchedule) -> Result<()> {
        if steps_of(s.tau, self.dt).is_none() || steps_of(s.t1, self.dt).is_none() {
            return Err(Error::Schedule(format!("τ = {} and t₁ = {} must be multiples of dt = {}", s.tau, s.t1, self.dt)));
        }
        if let Some(st) = s.record_stride {
            if steps_of(st, self.dt).filter(|&n| n > 0).is_none() {
                return Err(Error::Schedule(format!("record stride {st} is not a multiple of dt = {}", self.dt)));
            }
        }
        Ok(())
    }

    fn truncation_log(&self, state: &VectorizedMps) -> Option<TruncationLog> {
        Some(state.log.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrebSchedule {
    pub tau: f64,
    pub n_steps: usize,
    pub t1: f64,
    pub dt: f64,
    /// Inner sampling interval; `None` records cycle boundaries only.
    pub record_stride: Option<f64>,
}

impl PrebSchedule {
    pub fn new(tau: f64, n_steps: usize) -> Self {
        Self { tau, n_steps, t1: 0.0, dt: 0.1, record_stride: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Schedule(format!("τ must be positive, got {}", self.tau)));
        }
        if !(self.t1 >= 0.0 && self.t1 < self.tau) {
            return Err(Error::Schedule(format!("t₁ must lie in [0, τ), got {}", self.t1)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Schedule(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(s) = self.record_stride {
            if !(s > 0.0) {
                return Err(Error::Schedule(format!("record stride must be positive, got {s}")));
            }
        }
        Ok(())
    }

    pub fn end_time(&self) -> f64 {
        self.t1 + self.n_steps as f64 * self.tau
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    /// Offset of the run that produced the sample.
    pub t1: f64,
    /// Directly after a refresh (or the initial state).
    pub boundary: bool,
    pub observables: Observables,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub samples: Vec<Sample>,
}

impl Timeline {
    pub fn boundaries(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.boundary)
    }

    pub fn at(&self, t: f64) -> Option<&Sample> {
        self.samples.iter().find(|s| (s.t - t).abs() < TIME_EPS)
    }

    /// Largest deviation over the sample times both timelines share, with
    /// the number of shared times.
    pub fn max_deviation(&self, other: &Timeline) -> (f64, usize) {
        let mut worst: f64 = 0.0;
        let mut shared = 0;
        for s in &self.samples {
            if let Some(o) = other.at(s.t) {
                worst = worst.max(s.observables.max_deviation(&o.observables));
                shared += 1;
            }
        }
        (worst, shared)
    }

    /// CSV with header `t, n_1 … n_L, I_1 … I_{L−1}`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let sites = self.samples.first().map_or(0, |s| s.observables.occupations.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=sites).map(|l| format!("n_{l}")));
        header.extend((1..sites).map(|l| format!("I_{l}")));
        out.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![format!("{:?}", s.t)];
            row.extend(s.observables.values().map(|v| format!("{v:?}")));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`Timeline::write_csv`]; every row counts as a
    /// boundary sample of offset 0.
    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let sites = header.iter().filter(|h| h.starts_with("n_")).count();
        if header.get(0) != Some("t") || header.len() != 1 + sites + sites.saturating_sub(1) {
            return Err(Error::Dimension(format!("unexpected timeline header {header:?}")));
        }
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|x| x.trim().parse::<f64>().map_err(|e| Error::Dimension(format!("bad number {x:?}: {e}"))))
                .collect::<Result<_>>()?;
            samples.push(Sample {
                t: vals[0],
                t1: 0.0,
                boundary: true,
                observables: Observables { occupations: vals[1..=sites].to_vec(), currents: vals[1 + sites..].to_vec() },
            });
        }
        Ok(Self { samples })
    }

    /// Mean observables over samples with `t ≥ t_end − tail`.
    pub fn tail_average(&self, tail: f64) -> Option<Observables> {
        let end = self.samples.iter().map(|s| s.t).fold(f64::NEG_INFINITY, f64::max);
        let sel: Vec<&Sample> = self.samples.iter().filter(|s| s.t >= end - tail - TIME_EPS).collect();
        let first = sel.first()?;
        let mut acc = Observables {
            occupations: vec![0.0; first.observables.occupations.len()],
            currents: vec![0.0; first.observables.currents.len()],
        };
        for s in &sel {
            for (a, v) in acc.occupations.iter_mut().zip(&s.observables.occupations) {
                *a += v / sel.len() as f64;
            }
            for (a, v) in acc.currents.iter_mut().zip(&s.observables.currents) {
                *a += v / sel.len() as f64;
            }
        }
        Some(acc)
    }
}

/// Result of a PReB or continuous run, with the final system state.
#[derive(Debug, Clone)]
pub struct Run<S> {
    pub timeline: Timeline,
    pub state: S,
}

/// Evolve `t₁` (if positive), refresh, then `n_steps × [evolve τ, refresh]`.
pub fn run_preb<B: Backend>(backend: &B, schedule: &PrebSchedule) -> Result<Run<B::State>> {
    schedule.validate()?;
    backend.check_schedule(schedule)?;
    let baths = backend.problem().baths_for(schedule.tau)?;
    let mut state = backend.initial()?;
    let t1 = schedule.t1;
    let mut samples = vec![Sample { t: 0.0, t1, boundary: true, observables: backend.observables(&state)? }];
    let cycle = |state: &B::State, start: f64, duration: f64, index: usize, samples: &mut Vec<Sample>| {
        let mut inner = Vec::new();
        let next = backend
            .cycle(state, &baths, duration, schedule.record_stride, &mut |s, o| inner.push((s, o)))
            .map_err(|e| Error::Cycle { cycle: index, source: Box::new(e) })?;
        samples.extend(inner.into_iter().map(|(s, o)| Sample { t: start + s, t1, boundary: false, observables: o }));
        let observables = backend.observables(&next).map_err(|e| Error::Cycle { cycle: index, source: Box::new(e) })?;
        samples.push(Sample { t: start + duration, t1, boundary: true, observables });
        Ok::<_, Error>(next)
    };
    let mut start = 0.0;
    if t1 > 0.0 {
        state = cycle(&state, 0.0, t1, 0, &mut samples)?;
        start = t1;
    }
    for n in 0..schedule.n_steps {
        state = cycle(&state, start, schedule.tau, n + 1, &mut samples)?;
        start = t1 + (n + 1) as f64 * schedule.tau;
    }
    Ok(Run { timeline: Timeline { samples }, state })
}

/// Continuous evolution to `t_max` with baths long enough for `t_max`.
pub fn run_continuous<B: Backend>(backend: &B, t_max: f64, stride: f64) -> Result<Run<B::State>> {
    if !(t_max > 0.0 && stride > 0.0) {
        return Err(Error::Schedule(format!("need positive t_max and stride, got {t_max}, {stride}")));
    }
    let baths = backend.problem().baths_for(t_max)?;
    let state0 = backend.initial()?;
    let mut samples = vec![Sample { t: 0.0, t1: 0.0, boundary: true, observables: backend.observables(&state0)? }];
    let state = backend.cycle(&state0, &baths, t_max, Some(stride), &mut |s, o| {
        samples.push(Sample { t: s, t1: 0.0, boundary: true, observables: o })
    })?;
    samples.push(Sample { t: t_max, t1: 0.0, boundary: true, observables: backend.observables(&state)? });
    Ok(Run { timeline: Timeline { samples }, state })
}

/// Worker pool capped by `PREB_SIM_THREADS`.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let threads = std::env::var("PREB_SIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))
}

/// Union of the boundary samples of one run per offset, sorted by time.
/// Samples that coincide in time must agree within `tolerance`.
pub fn reconstruct_timeline<B: Backend>(
    backend: &B,
    tau: f64,
    t1s: &[f64],
    n_steps: usize,
    dt: f64,
    tolerance: f64,
) -> Result<Timeline> {
    let schedules: Vec<PrebSchedule> = t1s
        .iter()
        .map(|&t1| PrebSchedule { tau, n_steps, t1, dt, record_stride: None })
        .collect();
    for s in &schedules {
        s.validate()?;
        backend.check_schedule(s)?;
    }
    let pool = worker_pool()?;
    let runs: Vec<Timeline> = pool.install(|| {
        schedules.par_iter().map(|s| run_preb(backend, s).map(|r| r.timeline)).collect::<Result<Vec<_>>>()
    })?;
    merge_timelines(runs, tolerance)
}

/// Sorted union of the boundary samples of several runs; coincident samples
/// must agree within `tolerance`.
pub fn merge_timelines(runs: Vec<Timeline>, tolerance: f64) -> Result<Timeline> {
    let mut all: Vec<Sample> = runs.into_iter().flat_map(|r| r.samples.into_iter().filter(|s| s.boundary)).collect();
    all.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.t1.total_cmp(&b.t1)));
    let mut merged: Vec<Sample> = Vec::with_capacity(all.len());
    for s in all {
        if let Some(last) = merged.last() {
            if (last.t - s.t).abs() < TIME_EPS {
                let deviation = last.observables.max_deviation(&s.observables);
                if deviation > tolerance {
                    return Err(Error::Inconsistent { t: s.t, t1_a: last.t1, t1_b: s.t1, deviation });
                }
                continue;
            }
        }
        merged.push(s);
    }
    Ok(Timeline { samples: merged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub taus: Vec<f64>,
    pub traces: Vec<Timeline>,
    /// `(τ, 2τ, max deviation at common times)` per doubling.
    pub deviations: Vec<(f64, f64, f64)>,
    pub tolerance: f64,
    pub converged: bool,
    /// The certifying pair `(τ, 2τ)`.
    pub certified_by: Option<(f64, f64)>,
    pub memory_time: Option<f64>,
}

/// Runs `τ₀, 2τ₀, …` to `horizon` until successive traces agree within
/// `tolerance` on every tracked observable, or `max_doublings` is reached.
pub fn certify_convergence<B: Backend>(
    backend: &B,
    tau0: f64,
    tolerance: f64,
    max_doublings: usize,
    horizon: f64,
    dt: f64,
) -> Result<ConvergenceReport> {
    let memory = backend.problem().memory_time(horizon.max(50.0));
    match memory {
        Some(tm) if tau0 <= tm => log::warn!("τ₀ = {tau0} does not exceed the memory time τ_M ≈ {tm:.2}; convergence needs t_ss ≫ τ ≫ τ_M"),
        None => log::warn!("bath memory time could not be determined"),
        _ => {}
    }
    let run = |tau: f64| {
        let n_steps = ((horizon / tau) + TIME_EPS).floor() as usize;
        run_preb(backend, &PrebSchedule { tau, n_steps, t1: 0.0, dt, record_stride: None }).map(|r| r.timeline)
    };
    let mut report = ConvergenceReport {
        taus: vec![tau0],
        traces: vec![run(tau0)?],
        deviations: Vec::new(),
        tolerance,
        converged: false,
        certified_by: None,
        memory_time: memory,
    };
    let mut tau = tau0;
    for _ in 0..max_doublings {
        let next = 2.0 * tau;
        let trace = run(next)?;
        let (dev, _) = trace.max_deviation(report.traces.last().unwrap());
        report.taus.push(next);
        report.traces.push(trace);
        report.deviations.push((tau, next, dev));
        if dev < tolerance {
            report.converged = true;
            report.certified_by = Some((tau, next));
            break;
        }
        tau = next;
    }
    Ok(report)
}

/// Earliest sample time after which, over at least `window`, every sample
/// stays within `eps` of all samples in its trailing window and has bond
/// currents uniform within `eps`.
pub fn ness_detector(samples: &[Sample], window: f64, eps: f64) -> Option<f64> {
    let end = samples.last()?.t;
    let settled = |j: usize, from: usize| {
        let s = &samples[j];
        s.observables.current_spread() < eps
            && samples[from..=j]
                .iter()
                .filter(|o| o.t >= s.t - window - TIME_EPS)
                .all(|o| o.observables.max_deviation(&s.observables) < eps)
    };
    (0..samples.len())
        .filter(|&i| end - samples[i].t >= window - TIME_EPS)
        .find(|&i| (i..samples.len()).all(|j| settled(j, i)))
        .map(|i| samples[i].t)
}
