//! Intensities and Palm expectations estimated from simulated paths.
//!
//! A Palm expectation under `N_j` is the average of a functional over the
//! epochs where clock `j` fires. Under the superposed process `N₀` every
//! epoch has weight one; under `N_all` an epoch is weighted by the number of
//! clocks that fired there.

use serde::Serialize;
use thiserror::Error;

use crate::bar::TestFunction;
use crate::engine::{Clock, EventRecord, Mark, SimulationRun, Sink, SystemState};
use crate::stats::{ratio_estimate, BatchRatio, CompensatedSum, EstimateError, EstimateWithCI};

/// Relative tolerance of the pathwise decomposition identity.
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PalmError {
    #[error(transparent)]
    InsufficientData(#[from] EstimateError),
    #[error("the run did not keep intermediate states (enable the full event log)")]
    MissingIntermediates,
}

/// Which point process the Palm measure is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Which {
    Clock(Clock),
    Superposed,
    All,
}

impl Which {
    /// Weight this process puts on the epoch `record`.
    pub fn weight(self, record: &EventRecord) -> f64 {
        match self {
            Which::Clock(c) => {
                if record.has_fired(c) {
                    1.0
                } else {
                    0.0
                }
            }
            Which::Superposed => 1.0,
            Which::All => record.multiplicity() as f64,
        }
    }
}

/// Points per unit time of `which` over the measured part of `run`.
pub fn intensity(run: &SimulationRun, which: Which) -> Result<EstimateWithCI, PalmError> {
    let c = &run.counter;
    match which {
        Which::Clock(clock) if run.model.is_null(clock) => {
            if c.elapsed() <= 0.0 {
                return Err(EstimateError::InsufficientData("no measured time".into()).into());
            }
            Ok(EstimateWithCI {
                weight: c.elapsed(),
                batches: c.batches(),
                ..EstimateWithCI::exact(0.0)
            })
        }
        Which::Clock(clock) => Ok(c.intensity(clock)?),
        Which::Superposed => Ok(ratio_estimate(&c.superposed, &c.elapsed, c.superposed_count())?),
        Which::All => Ok(ratio_estimate(&c.all, &c.elapsed, c.all_count())?),
    }
}

/// A functional of the event record, averaged under the Palm measure of
/// `which`.
pub struct PalmTarget {
    pub which: Which,
    pub functional: Box<dyn Fn(&EventRecord) -> f64 + Send + Sync>,
}

impl PalmTarget {
    pub fn new(which: Which, functional: impl Fn(&EventRecord) -> f64 + Send + Sync + 'static) -> Self {
        PalmTarget {
            which,
            functional: Box::new(functional),
        }
    }

    /// Indicator that `L_station(0-) = level` at the epoch.
    pub fn pre_level(which: Which, station: usize, level: u64) -> Self {
        PalmTarget::new(which, move |r| f64::from(r.pre.queue[station] == level))
    }
}

impl std::fmt::Debug for PalmTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PalmTarget").field("which", &self.which).finish_non_exhaustive()
    }
}

/// Online estimator of several Palm expectations.
#[derive(Debug)]
pub struct PalmEstimator {
    targets: Vec<PalmTarget>,
    sums: Vec<BatchRatio>,
}

impl PalmEstimator {
    pub fn new(targets: Vec<PalmTarget>) -> Self {
        PalmEstimator {
            sums: Vec::new(),
            targets,
        }
    }

    pub fn estimate(&self, k: usize) -> Result<EstimateWithCI, PalmError> {
        match self.sums.get(k) {
            Some(s) => Ok(s.estimate()?),
            None => Err(EstimateError::InsufficientData("estimator never started".into()).into()),
        }
    }

    pub fn estimates(&self) -> Vec<Result<EstimateWithCI, PalmError>> {
        (0..self.targets.len()).map(|k| self.estimate(k)).collect()
    }

    /// Per-batch numerator and denominator sums of target `k`.
    pub fn batch_sums(&self, k: usize) -> Option<&BatchRatio> {
        self.sums.get(k)
    }
}

impl Sink for PalmEstimator {
    fn on_start(&mut self, _state: &SystemState, _time: f64, batches: usize) {
        self.sums = (0..self.targets.len()).map(|_| BatchRatio::new(batches)).collect();
    }

    fn on_segment(&mut self, _start: &SystemState, _duration: f64, _batch: usize) {}

    fn on_event(&mut self, record: &EventRecord, batch: usize) {
        for (t, s) in self.targets.iter().zip(&mut self.sums) {
            let w = t.which.weight(record);
            if w > 0.0 {
                s.add(batch, w * (t.functional)(record), w);
            }
        }
    }
}

/// Palm expectation of `target` from a run that kept its full event log.
pub fn palm_expectation(run: &SimulationRun, target: &PalmTarget) -> Result<EstimateWithCI, PalmError> {
    let records = run.log.records().ok_or(PalmError::MissingIntermediates)?;
    let batches = run.config.batches.max(1);
    let mut sums = BatchRatio::new(batches);
    let n = records.len();
    for (k, r) in records.iter().enumerate() {
        let w = target.which.weight(r);
        if w > 0.0 {
            sums.add(k * batches / n, w * (target.functional)(r), w);
        }
    }
    Ok(sums.estimate()?)
}

/// Both sides of `α₀ E₀[Δf] = Σ_j α_j E_j[Δ_j f]` as path sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionReport {
    /// `Σ_n f(X(t_n)) − f(X(t_n−))`.
    pub left: f64,
    /// `Σ_n Σ_{j fired} f(Y_{j,n}) − f(Y_{j−1,n})`.
    pub right: f64,
    /// `|left − right|` over the total absolute jump size.
    pub relative_error: f64,
    pub left_per_time: f64,
    pub right_per_time: f64,
    pub events: u64,
    pub pass: bool,
}

/// Accumulates the decomposition identity online.
#[derive(Debug)]
pub struct DecompositionAccumulator<'f> {
    f: &'f dyn TestFunction,
    left: CompensatedSum,
    right: CompensatedSum,
    elapsed: f64,
    events: u64,
}

impl<'f> DecompositionAccumulator<'f> {
    pub fn new(f: &'f dyn TestFunction) -> Self {
        DecompositionAccumulator {
            f,
            left: CompensatedSum::default(),
            right: CompensatedSum::default(),
            elapsed: 0.0,
            events: 0,
        }
    }

    fn add_record(&mut self, record: &EventRecord) {
        self.left.add(self.f.value(record.post()) - self.f.value(&record.pre));
        for k in 0..record.multiplicity() {
            let (before, after) = record.step_states(k);
            self.right.add(self.f.value(after) - self.f.value(before));
        }
        self.events += 1;
    }

    pub fn report(&self) -> DecompositionReport {
        let (left, right) = (self.left.value(), self.right.value());
        let scale = self.left.magnitude().max(self.right.magnitude());
        let relative_error = if scale > 0.0 { (left - right).abs() / scale } else { (left - right).abs() };
        let per = |x: f64| if self.elapsed > 0.0 { x / self.elapsed } else { f64::NAN };
        DecompositionReport {
            left,
            right,
            relative_error,
            left_per_time: per(left),
            right_per_time: per(right),
            events: self.events,
            pass: relative_error <= DECOMPOSITION_TOLERANCE,
        }
    }
}

impl Sink for DecompositionAccumulator<'_> {
    fn on_segment(&mut self, _start: &SystemState, duration: f64, _batch: usize) {
        self.elapsed += duration;
    }

    fn on_event(&mut self, record: &EventRecord, _batch: usize) {
        self.add_record(record);
    }
}

/// Checks the simultaneous-count decomposition on a run with a full log.
pub fn check_palm_decomposition(run: &SimulationRun, f: &dyn TestFunction) -> Result<DecompositionReport, PalmError> {
    let records = run.log.records().ok_or(PalmError::MissingIntermediates)?;
    let mut acc = DecompositionAccumulator::new(f);
    for r in records {
        acc.add_record(r);
    }
    acc.elapsed = run.elapsed();
    Ok(acc.report())
}

/// Law of `L_station(0−)` seen at arrival epochs of `station`.
#[derive(Debug, Clone)]
pub struct PreArrivalLaw {
    station: usize,
    batches: usize,
    /// `[level][batch]` counts.
    counts: Vec<Vec<f64>>,
    arrivals: Vec<f64>,
    total: u64,
}

impl PreArrivalLaw {
    pub fn new(station: usize) -> Self {
        PreArrivalLaw {
            station,
            batches: 0,
            counts: Vec::new(),
            arrivals: Vec::new(),
            total: 0,
        }
    }

    pub fn distribution(&self) -> Vec<f64> {
        let n = self.total as f64;
        self.counts.iter().map(|c| c.iter().sum::<f64>() / n).collect()
    }

    pub fn probability(&self, level: u64) -> Result<EstimateWithCI, PalmError> {
        let zeros;
        let num = match self.counts.get(level as usize) {
            Some(c) => c,
            None => {
                zeros = vec![0.0; self.arrivals.len()];
                &zeros
            }
        };
        Ok(ratio_estimate(num, &self.arrivals, self.total)?)
    }

    /// Per-batch counts at `level` and per-batch arrival counts.
    pub fn batch_counts(&self, level: u64) -> (Vec<f64>, &[f64]) {
        let c = self
            .counts
            .get(level as usize)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.batches]);
        (c, &self.arrivals)
    }

    pub fn arrivals(&self) -> u64 {
        self.total
    }
}

impl Sink for PreArrivalLaw {
    fn on_start(&mut self, _state: &SystemState, _time: f64, batches: usize) {
        self.batches = batches;
        self.counts.clear();
        self.arrivals = vec![0.0; batches];
        self.total = 0;
    }

    fn on_segment(&mut self, _start: &SystemState, _duration: f64, _batch: usize) {}

    fn on_event(&mut self, record: &EventRecord, batch: usize) {
        if record.has_fired(Clock::Arrival(self.station)) {
            let level = record.pre.queue[self.station] as usize;
            if self.counts.len() <= level {
                self.counts.resize(level + 1, vec![0.0; self.batches]);
            }
            self.counts[level][batch] += 1.0;
            self.arrivals[batch] += 1.0;
            self.total += 1;
        }
    }
}

/// Service times loaded at completion epochs of one station.
#[derive(Debug, Clone)]
pub struct ServiceMarks {
    station: usize,
    limit: usize,
    pub samples: Vec<f64>,
}

impl ServiceMarks {
    pub fn new(station: usize, limit: usize) -> Self {
        ServiceMarks {
            station,
            limit,
            samples: Vec::new(),
        }
    }
}

impl Sink for ServiceMarks {
    fn on_segment(&mut self, _start: &SystemState, _duration: f64, _batch: usize) {}

    fn on_event(&mut self, record: &EventRecord, _batch: usize) {
        if self.samples.len() >= self.limit {
            return;
        }
        for (clock, mark) in record.fired().iter().zip(record.marks()) {
            if let (Clock::Service(i), Mark::Service { service_time, .. }) = (clock, mark) {
                if *i == self.station {
                    self.samples.push(*service_time);
                }
            }
        }
    }
}
