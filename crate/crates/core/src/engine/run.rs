use crate::network::Stability;
use crate::stats::{ratio_estimate, EstimateError, EstimateWithCI, DEFAULT_BATCHES};

use super::{Clock, EngineError, EventRecord, Mark, Model, Simulator, SystemState, UpdateOrder};

/// When a run stops. Warmup is a fraction of this horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Events(u64),
    Time(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogLevel {
    #[default]
    None,
    /// `(n, t_n, fired, pre.L, post.L)` per measured event.
    Summary,
    /// Complete records including intermediate states. Memory heavy.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub horizon: Horizon,
    pub warmup: f64,
    pub seed: u64,
    pub replication: u64,
    pub batches: usize,
    pub log: LogLevel,
    pub order: UpdateOrder,
    pub initial_state: Option<SystemState>,
    pub allow_unstable: bool,
}

impl RunConfig {
    pub fn events(n: u64, seed: u64) -> Self {
        RunConfig {
            horizon: Horizon::Events(n),
            warmup: 0.2,
            seed,
            replication: 0,
            batches: DEFAULT_BATCHES,
            log: LogLevel::None,
            order: UpdateOrder::ArrivalsFirst,
            initial_state: None,
            allow_unstable: false,
        }
    }

    pub fn time(t: f64, seed: u64) -> Self {
        RunConfig {
            horizon: Horizon::Time(t),
            ..RunConfig::events(0, seed)
        }
    }

    /// Event budget whose post-warmup part is `measured` events.
    pub fn measured_events(measured: u64, warmup: f64, seed: u64) -> Self {
        let total = (measured as f64 / (1.0 - warmup)).round() as u64;
        RunConfig {
            warmup,
            ..RunConfig::events(total, seed)
        }
    }
}

/// Consumer of the measured part of a path.
///
/// Segments and events arrive in path order: the segment ending at an epoch
/// comes before that epoch's record. Batch indices are nondecreasing.
pub trait Sink {
    /// Called once at the start of measurement.
    fn on_start(&mut self, _state: &SystemState, _time: f64, _batches: usize) {}
    /// Drift segment of length `duration` starting from `start`.
    fn on_segment(&mut self, start: &SystemState, duration: f64, batch: usize);
    fn on_event(&mut self, record: &EventRecord, batch: usize);
    fn on_finish(&mut self, _state: &SystemState, _time: f64) {}
}

/// Per-batch counts of the point processes and elapsed time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventCounter {
    stations: usize,
    /// `[clock position][batch]` firing counts.
    pub clock: Vec<Vec<f64>>,
    pub superposed: Vec<f64>,
    /// Firings weighted by multiplicity.
    pub all: Vec<f64>,
    pub rejected: Vec<f64>,
    pub elapsed: Vec<f64>,
}

impl EventCounter {
    pub fn new(stations: usize) -> Self {
        EventCounter {
            stations,
            ..Default::default()
        }
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn batches(&self) -> usize {
        self.elapsed.len()
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed.iter().sum()
    }

    pub fn count(&self, clock: Clock) -> u64 {
        self.clock[clock.index(self.stations)].iter().sum::<f64>() as u64
    }

    pub fn superposed_count(&self) -> u64 {
        self.superposed.iter().sum::<f64>() as u64
    }

    pub fn all_count(&self) -> u64 {
        self.all.iter().sum::<f64>() as u64
    }

    pub fn arrival_count(&self) -> u64 {
        (0..self.stations).map(|i| self.count(Clock::Arrival(i))).sum()
    }

    pub fn rejected_count(&self) -> u64 {
        self.rejected.iter().sum::<f64>() as u64
    }

    /// Firings of `clock` per unit time.
    pub fn intensity(&self, clock: Clock) -> Result<EstimateWithCI, EstimateError> {
        let per_batch = &self.clock[clock.index(self.stations)];
        ratio_estimate(per_batch, &self.elapsed, self.count(clock))
    }
}

impl Sink for EventCounter {
    fn on_start(&mut self, _state: &SystemState, _time: f64, batches: usize) {
        self.clock = vec![vec![0.0; batches]; 2 * self.stations];
        self.superposed = vec![0.0; batches];
        self.all = vec![0.0; batches];
        self.rejected = vec![0.0; batches];
        self.elapsed = vec![0.0; batches];
    }

    fn on_segment(&mut self, _start: &SystemState, duration: f64, batch: usize) {
        self.elapsed[batch] += duration;
    }

    fn on_event(&mut self, record: &EventRecord, batch: usize) {
        for c in record.fired() {
            self.clock[c.index(self.stations)][batch] += 1.0;
        }
        for m in record.marks() {
            if let Mark::Arrival { accepted: false, .. } = m {
                self.rejected[batch] += 1.0;
            }
        }
        self.superposed[batch] += 1.0;
        self.all[batch] += record.multiplicity() as f64;
    }
}

/// Time spent at each queue level, per station and batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueueLaw {
    batches: usize,
    /// `[station][level][batch]`.
    pub time: Vec<Vec<Vec<f64>>>,
    pub elapsed: Vec<f64>,
    segments: u64,
}

impl QueueLaw {
    pub fn new(stations: usize) -> Self {
        QueueLaw {
            time: vec![Vec::new(); stations],
            ..Default::default()
        }
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed.iter().sum()
    }

    /// Time-average distribution of `L_station` over `0..levels`.
    pub fn distribution(&self, station: usize) -> Vec<f64> {
        let total = self.elapsed();
        self.time[station]
            .iter()
            .map(|per_batch| per_batch.iter().sum::<f64>() / total)
            .collect()
    }

    /// Time-average of `1(L_station = level)` with batch-means error.
    pub fn probability(&self, station: usize, level: u64) -> Result<EstimateWithCI, EstimateError> {
        match self.time[station].get(level as usize) {
            Some(num) => ratio_estimate(num, &self.elapsed, self.segments),
            None => {
                let zeros = vec![0.0; self.batches];
                ratio_estimate(&zeros, &self.elapsed, self.segments)
            }
        }
    }

    /// Per-batch time at `level`, zero beyond the observed range.
    pub fn batch_times(&self, station: usize, level: u64) -> Vec<f64> {
        self.time[station]
            .get(level as usize)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.batches])
    }
}

impl Sink for QueueLaw {
    fn on_start(&mut self, _state: &SystemState, _time: f64, batches: usize) {
        self.batches = batches;
        for st in &mut self.time {
            st.clear();
        }
        self.elapsed = vec![0.0; batches];
        self.segments = 0;
    }

    fn on_segment(&mut self, start: &SystemState, duration: f64, batch: usize) {
        for (levels, &l) in self.time.iter_mut().zip(&start.queue) {
            let l = l as usize;
            if levels.len() <= l {
                levels.resize(l + 1, vec![0.0; self.batches]);
            }
            levels[l][batch] += duration;
        }
        self.elapsed[batch] += duration;
        self.segments += 1;
    }

    fn on_event(&mut self, _record: &EventRecord, _batch: usize) {}
}

/// Compact per-event line of the event log.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSummary {
    pub index: u64,
    pub time: f64,
    pub fired_mask: String,
    pub pre_queue: Vec<u64>,
    pub post_queue: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub enum EventLog {
    #[default]
    None,
    Summary(Vec<EventSummary>),
    Full(Vec<EventRecord>),
}

impl EventLog {
    fn push(&mut self, record: &EventRecord) {
        match self {
            EventLog::None => {}
            EventLog::Summary(v) => v.push(EventSummary {
                index: record.index,
                time: record.time,
                fired_mask: record.fired_mask_hex(),
                pre_queue: record.pre.queue.clone(),
                post_queue: record.post().queue.clone(),
            }),
            EventLog::Full(v) => v.push(record.clone()),
        }
    }

    pub fn records(&self) -> Option<&[EventRecord]> {
        match self {
            EventLog::Full(v) => Some(v),
            _ => None,
        }
    }
}

/// Everything a finished run keeps besides the user sinks.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub model: Model,
    pub config: RunConfig,
    pub counter: EventCounter,
    pub queue_law: QueueLaw,
    pub log: EventLog,
    /// State and time where measurement began.
    pub start_state: SystemState,
    pub start_time: f64,
    pub end_state: SystemState,
    pub end_time: f64,
    pub total_events: u64,
    pub measured_events: u64,
}

impl SimulationRun {
    pub fn elapsed(&self) -> f64 {
        self.end_time - self.start_time
    }
}

struct Fanout<'a, 'b> {
    counter: &'a mut EventCounter,
    law: &'a mut QueueLaw,
    log: &'a mut EventLog,
    sinks: &'a mut [&'b mut dyn Sink],
}

impl Fanout<'_, '_> {
    fn start(&mut self, state: &SystemState, time: f64, batches: usize) {
        self.counter.on_start(state, time, batches);
        self.law.on_start(state, time, batches);
        for s in self.sinks.iter_mut() {
            s.on_start(state, time, batches);
        }
    }

    fn segment(&mut self, start: &SystemState, duration: f64, batch: usize) {
        self.counter.on_segment(start, duration, batch);
        self.law.on_segment(start, duration, batch);
        for s in self.sinks.iter_mut() {
            s.on_segment(start, duration, batch);
        }
    }

    fn event(&mut self, record: &EventRecord, batch: usize) {
        self.counter.on_event(record, batch);
        self.log.push(record);
        for s in self.sinks.iter_mut() {
            s.on_event(record, batch);
        }
    }

    fn finish(&mut self, state: &SystemState, time: f64) {
        for s in self.sinks.iter_mut() {
            s.on_finish(state, time);
        }
    }
}

/// Runs one replication, feeding the measured part of the path to `sinks`.
///
/// For an event horizon of `n` events the first `round(warmup·n)` events are
/// discarded and measurement starts right after the last discarded epoch.
/// For a time horizon the path is cut exactly at `warmup·T` and `T`.
pub fn simulate(model: &Model, config: &RunConfig, sinks: &mut [&mut dyn Sink]) -> Result<SimulationRun, EngineError> {
    if let Model::Network(net) = model {
        if let Stability::Unstable(stations) = net.check_stability()? {
            if !config.allow_unstable {
                return Err(EngineError::UnstableModel(stations));
            }
        }
    }
    if !(0.0..1.0).contains(&config.warmup) {
        return Err(EngineError::BadInitialState(format!(
            "warmup fraction {} outside [0, 1)",
            config.warmup
        )));
    }
    let batches = config.batches.max(1);
    let d = model.stations();
    let mut sim = Simulator::new(model, config.seed, config.replication).with_order(config.order);
    if let Some(state) = &config.initial_state {
        sim = sim.with_state(state.clone())?;
    }

    let mut counter = EventCounter::new(d);
    let mut law = QueueLaw::new(d);
    let mut log = match config.log {
        LogLevel::None => EventLog::None,
        LogLevel::Summary => EventLog::Summary(Vec::new()),
        LogLevel::Full => EventLog::Full(Vec::new()),
    };
    let mut out = Fanout {
        counter: &mut counter,
        law: &mut law,
        log: &mut log,
        sinks,
    };
    let mut segment_start = sim.state().clone();
    let start_state;
    let start_time;

    match config.horizon {
        Horizon::Events(n) => {
            let warm = (config.warmup * n as f64).round() as u64;
            for _ in 0..warm {
                sim.step()?;
            }
            start_state = sim.state().clone();
            start_time = sim.time();
            out.start(&start_state, start_time, batches);
            let measured = n - warm;
            for k in 0..measured {
                let batch = (k as u128 * batches as u128 / measured as u128) as usize;
                segment_start.clone_from(sim.state());
                let record = sim.step()?;
                out.segment(&segment_start, record.since_previous, batch);
                out.event(record, batch);
            }
        }
        Horizon::Time(t_end) => {
            let t_warm = config.warmup * t_end;
            while sim.time() + sim.time_to_next_event()? <= t_warm {
                sim.step()?;
            }
            sim.advance_without_event(t_warm - sim.time());
            start_state = sim.state().clone();
            start_time = sim.time();
            out.start(&start_state, start_time, batches);
            let span = t_end - start_time;
            let batch_of = |t: f64| {
                if span > 0.0 {
                    (((t - start_time) / span * batches as f64) as usize).min(batches - 1)
                } else {
                    0
                }
            };
            loop {
                let dt = sim.time_to_next_event()?;
                if sim.time() + dt > t_end {
                    let rest = t_end - sim.time();
                    if rest > 0.0 {
                        out.segment(sim.state(), rest, batches - 1);
                        sim.advance_without_event(rest);
                    }
                    break;
                }
                segment_start.clone_from(sim.state());
                let record = sim.step()?;
                let batch = batch_of(record.time);
                out.segment(&segment_start, record.since_previous, batch);
                out.event(record, batch);
            }
        }
    }
    out.finish(sim.state(), sim.time());
    let measured_events = counter.superposed_count();
    Ok(SimulationRun {
        model: model.clone(),
        config: config.clone(),
        counter,
        queue_law: law,
        log,
        start_state,
        start_time,
        end_state: sim.state().clone(),
        end_time: sim.time(),
        total_events: sim.events(),
        measured_events,
    })
}

/// Fraction of arrival epochs that found the buffer full.
pub fn blocked_arrival_fraction(run: &SimulationRun) -> Result<EstimateWithCI, EstimateError> {
    let c = &run.counter;
    let arrivals: Vec<f64> = (0..c.batches())
        .map(|b| (0..c.stations()).map(|i| c.clock[Clock::Arrival(i).index(c.stations())][b]).sum())
        .collect();
    ratio_estimate(&c.rejected, &arrivals, c.arrival_count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::FiniteQueueModel;
    use crate::network::NetworkModel;
    use crate::stochastics::DistributionSpec;

    fn exp(rate: f64) -> DistributionSpec {
        DistributionSpec::exponential(rate).unwrap()
    }

    #[test]
    fn zero_length_measurement_is_insufficient() {
        let model: Model = NetworkModel::single_station(exp(0.5), exp(1.0)).into();
        let mut cfg = RunConfig::events(10, 1);
        cfg.warmup = 0.0;
        cfg.horizon = Horizon::Events(0);
        let run = simulate(&model, &cfg, &mut []).unwrap();
        assert!(run.queue_law.probability(0, 0).is_err());
        assert!(run.counter.intensity(Clock::Arrival(0)).is_err());
        assert!(blocked_arrival_fraction(&run).is_err());
    }

    #[test]
    fn refuses_unstable_network() {
        let model: Model = NetworkModel::single_station(exp(1.2), exp(1.0)).into();
        let cfg = RunConfig::events(100, 1);
        assert_eq!(simulate(&model, &cfg, &mut []).unwrap_err(), EngineError::UnstableModel(vec![0]));
        let cfg = RunConfig {
            allow_unstable: true,
            ..cfg
        };
        assert!(simulate(&model, &cfg, &mut []).is_ok());
    }

    #[test]
    fn time_horizon_cuts_exactly() {
        let model: Model = NetworkModel::single_station(exp(0.5), exp(1.0)).into();
        let run = simulate(&model, &RunConfig::time(1000.0, 5), &mut []).unwrap();
        assert!((run.start_time - 200.0).abs() < 1e-9);
        assert!((run.end_time - 1000.0).abs() < 1e-9);
        assert!((run.queue_law.elapsed() - 800.0).abs() < 1e-9);
        assert!((run.counter.elapsed() - 800.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_orbit_never_blocks() {
        let model: Model = FiniteQueueModel::new(
            DistributionSpec::deterministic(2.0).unwrap(),
            DistributionSpec::deterministic(1.0).unwrap(),
            2,
        )
        .unwrap()
        .into();
        let run = simulate(&model, &RunConfig::events(1000, 1), &mut []).unwrap();
        let b = blocked_arrival_fraction(&run).unwrap();
        assert_eq!(b.value, 0.0);
    }

    #[test]
    fn counts_respect_conservation() {
        let model: Model = NetworkModel::new(
            vec![Some(exp(1.0)), None],
            vec![exp(2.0), exp(1.25)],
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        )
        .unwrap()
        .into();
        let mut cfg = RunConfig::events(20_000, 9);
        cfg.log = LogLevel::Summary;
        let run = simulate(&model, &cfg, &mut []).unwrap();
        let c = &run.counter;
        let l0 = &run.start_state.queue;
        let l1 = &run.end_state.queue;
        let a = c.count(Clock::Arrival(0)) as i64;
        let s1 = c.count(Clock::Service(0)) as i64;
        let s2 = c.count(Clock::Service(1)) as i64;
        assert_eq!(l1[0] as i64 - l0[0] as i64, a - s1);
        assert_eq!(l1[1] as i64 - l0[1] as i64, s1 - s2);
        assert_eq!(run.measured_events, 16_000);
        assert!(c.superposed_count() <= c.all_count());
        match &run.log {
            EventLog::Summary(v) => assert_eq!(v.len(), 16_000),
            _ => panic!("summary log expected"),
        }
    }
}
