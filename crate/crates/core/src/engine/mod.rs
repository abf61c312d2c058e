//! Piecewise-deterministic simulation of `X(t) = (L(t), R_e(t), R_s(t))`.
//!
//! Between events every active clock decreases at unit rate: exogenous
//! arrival clocks always, service clocks only while their station is busy.
//! At an event epoch all clocks that reach zero fire together and are
//! applied one at a time, arrivals first (ascending station) then service
//! completions (ascending station). Each partial update is kept as an
//! intermediate state so that jump functionals can be split per clock.
//!
//! A service clock is reloaded with the next customer's service time at the
//! completion epoch, even if the station becomes empty; the loaded value then
//! stays frozen until a customer arrives.

mod run;
pub mod export;

pub use run::{
    blocked_arrival_fraction, simulate, EventCounter, EventLog, EventSummary, Horizon, LogLevel, QueueLaw,
    RunConfig, SimulationRun, Sink,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{NetworkError, NetworkModel};
use crate::stochastics::{DistributionSpec, RngStream, Sampler};

/// Relative band under which two clocks count as expiring together.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("queue length at station {station} would become negative")]
    NegativeQueue { station: usize },
    #[error("no active clock: the state can never change")]
    NoActiveClock,
    #[error("model is unstable at stations {0:?} (set allow_unstable to override)")]
    UnstableModel(Vec<usize>),
    #[error("initial state does not fit the model: {0}")]
    BadInitialState(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// One of the `2d` clocks of the state. Station indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Clock {
    Arrival(usize),
    Service(usize),
}

impl Clock {
    /// Position in `0..2d`: arrivals first, then services.
    pub fn index(self, stations: usize) -> usize {
        match self {
            Clock::Arrival(i) => i,
            Clock::Service(i) => stations + i,
        }
    }

    pub fn from_index(index: usize, stations: usize) -> Clock {
        if index < stations {
            Clock::Arrival(index)
        } else {
            Clock::Service(index - stations)
        }
    }

    pub fn station(self) -> usize {
        match self {
            Clock::Arrival(i) | Clock::Service(i) => i,
        }
    }
}

/// GI/G/1 queue that rejects arrivals finding `ell0` customers present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteQueueModel {
    pub arrival: DistributionSpec,
    pub service: DistributionSpec,
    pub ell0: u64,
}

impl FiniteQueueModel {
    pub fn new(arrival: DistributionSpec, service: DistributionSpec, ell0: u64) -> Result<Self, EngineError> {
        if ell0 == 0 {
            return Err(EngineError::BadInitialState("ell0 must be positive".into()));
        }
        Ok(FiniteQueueModel { arrival, service, ell0 })
    }

    /// `λ / μ`.
    pub fn rho(&self) -> f64 {
        self.arrival.rate() / self.service.rate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Network(NetworkModel),
    FiniteQueue(FiniteQueueModel),
}

impl Model {
    pub fn stations(&self) -> usize {
        match self {
            Model::Network(m) => m.stations(),
            Model::FiniteQueue(_) => 1,
        }
    }

    pub fn capacity(&self) -> Option<u64> {
        match self {
            Model::Network(_) => None,
            Model::FiniteQueue(m) => Some(m.ell0),
        }
    }

    pub fn arrival(&self, station: usize) -> Option<&DistributionSpec> {
        match self {
            Model::Network(m) => m.arrival(station),
            Model::FiniteQueue(m) => Some(&m.arrival),
        }
    }

    pub fn service(&self, station: usize) -> &DistributionSpec {
        match self {
            Model::Network(m) => m.service(station),
            Model::FiniteQueue(m) => &m.service,
        }
    }

    pub fn routing_row(&self, station: usize) -> &[f64] {
        match self {
            Model::Network(m) => &m.routing()[station],
            Model::FiniteQueue(_) => &[0.0],
        }
    }

    /// Null clocks are arrival clocks of stations without exogenous input.
    pub fn is_null(&self, clock: Clock) -> bool {
        matches!(clock, Clock::Arrival(i) if self.arrival(i).is_none())
    }
}

impl From<NetworkModel> for Model {
    fn from(m: NetworkModel) -> Self {
        Model::Network(m)
    }
}

impl From<FiniteQueueModel> for Model {
    fn from(m: FiniteQueueModel) -> Self {
        Model::FiniteQueue(m)
    }
}

/// `X(t)`: queue lengths and residual clocks.
///
/// `arrival_clock[i]` is `None` for stations without exogenous arrivals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub queue: Vec<u64>,
    pub arrival_clock: Vec<Option<f64>>,
    pub service_clock: Vec<f64>,
}

impl SystemState {
    pub fn stations(&self) -> usize {
        self.queue.len()
    }

    pub fn clock(&self, clock: Clock) -> Option<f64> {
        match clock {
            Clock::Arrival(i) => self.arrival_clock[i],
            Clock::Service(i) => Some(self.service_clock[i]),
        }
    }

    pub fn is_busy(&self, station: usize) -> bool {
        self.queue[station] >= 1
    }

    /// The state after `dt` time units of drift with no event.
    pub fn drifted(&self, dt: f64) -> SystemState {
        let mut next = self.clone();
        next.drift_in_place(dt);
        next
    }

    fn drift_in_place(&mut self, dt: f64) {
        for c in self.arrival_clock.iter_mut().flatten() {
            *c -= dt;
        }
        for (c, &l) in self.service_clock.iter_mut().zip(&self.queue) {
            if l >= 1 {
                *c -= dt;
            }
        }
    }

    /// Time until the next clock expires, if any clock is running.
    pub fn time_to_next_event(&self) -> Option<f64> {
        let arrivals = self.arrival_clock.iter().flatten().copied();
        let services = self
            .service_clock
            .iter()
            .zip(&self.queue)
            .filter(|(_, &l)| l >= 1)
            .map(|(c, _)| *c);
        arrivals.chain(services).reduce(f64::min)
    }

    pub fn total_customers(&self) -> u64 {
        self.queue.iter().sum()
    }
}

/// What was drawn when a clock fired.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mark {
    Arrival {
        interarrival: f64,
        /// False when a finite buffer rejected the customer.
        accepted: bool,
    },
    Service {
        /// Routing destination, `None` for leaving the network.
        destination: Option<usize>,
        service_time: f64,
    },
}

/// One epoch of the superposed event process.
///
/// `fired` lists the clocks that expired, in application order; `after[k]`
/// is the state once `fired[k]` has been applied. With the default order
/// these are exactly the non-trivial intermediate states `Y_{j,n}`; every
/// other `Y_{j,n}` equals its predecessor.
#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub index: u64,
    pub time: f64,
    /// Length of the drift segment that ended at this epoch.
    pub since_previous: f64,
    pub pre: SystemState,
    fired: Vec<Clock>,
    after: Vec<SystemState>,
    marks: Vec<Mark>,
}

impl Clone for EventRecord {
    fn clone(&self) -> Self {
        let k = self.fired.len();
        EventRecord {
            index: self.index,
            time: self.time,
            since_previous: self.since_previous,
            pre: self.pre.clone(),
            fired: self.fired.clone(),
            after: self.after[..k].to_vec(),
            marks: self.marks.clone(),
        }
    }
}

impl EventRecord {
    fn empty(stations: usize) -> Self {
        EventRecord {
            index: 0,
            time: 0.0,
            since_previous: 0.0,
            pre: SystemState {
                queue: vec![0; stations],
                arrival_clock: vec![None; stations],
                service_clock: vec![0.0; stations],
            },
            fired: Vec::new(),
            after: Vec::new(),
            marks: Vec::new(),
        }
    }

    pub fn fired(&self) -> &[Clock] {
        &self.fired
    }

    pub fn marks(&self) -> &[Mark] {
        &self.marks
    }

    /// States after each fired clock, aligned with [`EventRecord::fired`].
    pub fn after(&self) -> &[SystemState] {
        &self.after[..self.fired.len()]
    }

    pub fn post(&self) -> &SystemState {
        self.after().last().unwrap_or(&self.pre)
    }

    pub fn multiplicity(&self) -> usize {
        self.fired.len()
    }

    pub fn has_fired(&self, clock: Clock) -> bool {
        self.fired.contains(&clock)
    }

    /// `(Y_{j-1,n}, Y_{j,n})` around the update of `fired[k]`.
    pub fn step_states(&self, k: usize) -> (&SystemState, &SystemState) {
        let before = if k == 0 { &self.pre } else { &self.after[k - 1] };
        (before, &self.after[k])
    }

    /// `Y_{j,n}` for `j` in `0..=2d`, indexed by 0-based
    /// clock positions: `j = 0` is the pre-state, `j = position + 1` is the
    /// state after clock `position`. Assumes the default update order.
    pub fn intermediate(&self, j: usize) -> &SystemState {
        let d = self.pre.stations();
        let mut state = &self.pre;
        for (k, clock) in self.fired.iter().enumerate() {
            if clock.index(d) < j {
                state = &self.after[k];
            }
        }
        state
    }

    /// Fired set as a bitmask over clock positions, hex encoded.
    pub fn fired_mask_hex(&self) -> String {
        let d = self.pre.stations();
        let mut bits = vec![0u8; (2 * d).div_ceil(8)];
        for c in &self.fired {
            let i = c.index(d);
            bits[i / 8] |= 1 << (i % 8);
        }
        let mut s = String::from("0x");
        let mut leading = true;
        for b in bits.iter().rev() {
            if leading && *b == 0 {
                continue;
            }
            if leading {
                s.push_str(&format!("{b:x}"));
                leading = false;
            } else {
                s.push_str(&format!("{b:02x}"));
            }
        }
        if leading {
            s.push('0');
        }
        s
    }
}

/// Order in which simultaneous clocks are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    #[default]
    ArrivalsFirst,
    CompletionsFirst,
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum StreamRole {
    Arrival = 0,
    Service = 1,
    Routing = 2,
}

/// Stream id for one station's role within one replication.
fn stream_id(replication: u64, station: usize, role: StreamRole) -> u64 {
    (replication << 32) | ((station as u64) << 2) | role as u64
}

#[derive(Debug, Clone)]
struct StationRandomness {
    arrival: Option<(Sampler, RngStream)>,
    service: (Sampler, RngStream),
    routing: RngStream,
    /// Cumulative routing probabilities.
    routing_cdf: Vec<f64>,
}

/// Event-by-event simulator owning the current state and random streams.
#[derive(Debug, Clone)]
pub struct Simulator {
    stations: Vec<StationRandomness>,
    capacity: Option<u64>,
    state: SystemState,
    time: f64,
    index: u64,
    order: UpdateOrder,
    record: EventRecord,
    fire_buf: Vec<Clock>,
}

impl Simulator {
    /// Starts from the empty system with fresh arrival and service clocks.
    pub fn new(model: &Model, seed: u64, replication: u64) -> Self {
        let d = model.stations();
        let mut stations = Vec::with_capacity(d);
        for i in 0..d {
            let arrival = model
                .arrival(i)
                .map(|a| (a.sampler(), RngStream::new(seed, stream_id(replication, i, StreamRole::Arrival))));
            let service = (
                model.service(i).sampler(),
                RngStream::new(seed, stream_id(replication, i, StreamRole::Service)),
            );
            let mut acc = 0.0;
            let routing_cdf = model
                .routing_row(i)
                .iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect();
            stations.push(StationRandomness {
                arrival,
                service,
                routing: RngStream::new(seed, stream_id(replication, i, StreamRole::Routing)),
                routing_cdf,
            });
        }
        let mut state = SystemState {
            queue: vec![0; d],
            arrival_clock: vec![None; d],
            service_clock: vec![0.0; d],
        };
        for (i, st) in stations.iter_mut().enumerate() {
            if let Some((sampler, rng)) = &mut st.arrival {
                state.arrival_clock[i] = Some(sampler.sample(rng));
            }
            let (sampler, rng) = &mut st.service;
            state.service_clock[i] = sampler.sample(rng);
        }
        Simulator {
            stations,
            capacity: model.capacity(),
            state,
            time: 0.0,
            index: 0,
            order: UpdateOrder::default(),
            record: EventRecord::empty(d),
            fire_buf: Vec::with_capacity(2 * d),
        }
    }

    /// Replaces the current state. Clocks must be positive and present
    /// exactly at stations with exogenous arrivals.
    pub fn with_state(mut self, state: SystemState) -> Result<Self, EngineError> {
        let d = self.stations.len();
        if state.queue.len() != d || state.arrival_clock.len() != d || state.service_clock.len() != d {
            return Err(EngineError::BadInitialState(format!("expected {d} stations")));
        }
        for (i, st) in self.stations.iter().enumerate() {
            match (st.arrival.is_some(), state.arrival_clock[i]) {
                (true, Some(c)) if c > 0.0 => {}
                (false, None) => {}
                _ => {
                    return Err(EngineError::BadInitialState(format!(
                        "arrival clock at station {i} is missing, spurious or not positive"
                    )))
                }
            }
            if state.service_clock[i].is_nan() || state.service_clock[i] <= 0.0 {
                return Err(EngineError::BadInitialState(format!(
                    "service clock at station {i} must be positive"
                )));
            }
            if let Some(cap) = self.capacity {
                if state.queue[i] > cap {
                    return Err(EngineError::BadInitialState(format!("queue exceeds capacity {cap}")));
                }
            }
        }
        self.state = state;
        Ok(self)
    }

    pub fn with_order(mut self, order: UpdateOrder) -> Self {
        self.order = order;
        self
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.index
    }

    pub fn time_to_next_event(&self) -> Result<f64, EngineError> {
        self.state.time_to_next_event().ok_or(EngineError::NoActiveClock)
    }

    /// Drifts the state by `dt` without any clock reaching zero.
    pub(crate) fn advance_without_event(&mut self, dt: f64) {
        self.state.drift_in_place(dt);
        self.time += dt;
    }

    /// Advances to the next event epoch and applies every expiring clock.
    pub fn step(&mut self) -> Result<&EventRecord, EngineError> {
        let delta = self.time_to_next_event()?;
        self.state.drift_in_place(delta);
        self.time += delta;
        self.index += 1;
        let band = TIE_TOLERANCE * self.time.max(1.0);
        let d = self.stations.len();

        self.fire_buf.clear();
        for i in 0..d {
            if let Some(c) = &mut self.state.arrival_clock[i] {
                if *c <= band {
                    *c = 0.0;
                    self.fire_buf.push(Clock::Arrival(i));
                }
            }
        }
        for i in 0..d {
            if self.state.queue[i] >= 1 && self.state.service_clock[i] <= band {
                self.state.service_clock[i] = 0.0;
                self.fire_buf.push(Clock::Service(i));
            }
        }
        if self.order == UpdateOrder::CompletionsFirst {
            self.fire_buf.sort_by_key(|c| match c {
                Clock::Service(i) => (0, *i),
                Clock::Arrival(i) => (1, *i),
            });
        }
        debug_assert!(!self.fire_buf.is_empty());

        let rec = &mut self.record;
        rec.index = self.index;
        rec.time = self.time;
        rec.since_previous = delta;
        rec.pre.clone_from(&self.state);
        rec.fired.clear();
        rec.marks.clear();

        for k in 0..self.fire_buf.len() {
            let clock = self.fire_buf[k];
            let mark = match clock {
                Clock::Arrival(i) => {
                    let (sampler, rng) = self.stations[i].arrival.as_mut().expect("fired arrival clock exists");
                    let accepted = self.capacity.is_none_or(|cap| self.state.queue[i] < cap);
                    if accepted {
                        self.state.queue[i] += 1;
                    }
                    let interarrival = sampler.sample(rng);
                    self.state.arrival_clock[i] = Some(interarrival);
                    Mark::Arrival { interarrival, accepted }
                }
                Clock::Service(i) => {
                    let st = &mut self.stations[i];
                    let u = st.routing.uniform();
                    let destination = st.routing_cdf.iter().position(|&c| u < c);
                    self.state.queue[i] = self.state.queue[i]
                        .checked_sub(1)
                        .ok_or(EngineError::NegativeQueue { station: i })?;
                    if let Some(dest) = destination {
                        self.state.queue[dest] += 1;
                    }
                    let (sampler, rng) = &mut st.service;
                    let service_time = sampler.sample(rng);
                    self.state.service_clock[i] = service_time;
                    Mark::Service {
                        destination,
                        service_time,
                    }
                }
            };
            rec.fired.push(clock);
            rec.marks.push(mark);
            if rec.after.len() <= k {
                rec.after.push(self.state.clone());
            } else {
                rec.after[k].clone_from(&self.state);
            }
        }
        Ok(&self.record)
    }

    pub fn last_record(&self) -> &EventRecord {
        &self.record
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(rate: f64) -> DistributionSpec {
        DistributionSpec::exponential(rate).unwrap()
    }

    fn det(v: f64) -> DistributionSpec {
        DistributionSpec::deterministic(v).unwrap()
    }

    #[test]
    fn single_clock_minimum() {
        let model: Model = NetworkModel::single_station(exp(1.0), exp(1.0)).into();
        let mut sim = Simulator::new(&model, 1, 0)
            .with_state(SystemState {
                queue: vec![1],
                arrival_clock: vec![Some(0.3)],
                service_clock: vec![0.5],
            })
            .unwrap();
        let rec = sim.step().unwrap();
        assert!((rec.time - 0.3).abs() < 1e-15);
        assert_eq!(rec.fired(), &[Clock::Arrival(0)]);
        assert_eq!(rec.post().queue, vec![2]);
        assert!((rec.post().service_clock[0] - 0.2).abs() < 1e-15);
        assert_eq!(rec.pre.arrival_clock[0], Some(0.0));
    }

    #[test]
    fn in_phase_deterministic_tie() {
        let model: Model = NetworkModel::single_station(det(1.0), det(1.0)).into();
        let start = SystemState {
            queue: vec![1],
            arrival_clock: vec![Some(1.0)],
            service_clock: vec![1.0],
        };
        let mut sim = Simulator::new(&model, 1, 0).with_state(start.clone()).unwrap();
        let rec = sim.step().unwrap();
        assert_eq!(rec.fired(), &[Clock::Arrival(0), Clock::Service(0)]);
        assert_eq!(rec.after()[0].queue, vec![2]);
        assert_eq!(rec.after()[1].queue, vec![1]);
        assert_eq!(rec.post(), &start);
        assert_eq!(rec.intermediate(0), &rec.pre);
        assert_eq!(rec.intermediate(1).queue, vec![2]);
        assert_eq!(rec.intermediate(2), rec.post());
        assert_eq!(rec.fired_mask_hex(), "0x3");

        let mut flipped = Simulator::new(&model, 1, 0)
            .with_state(start.clone())
            .unwrap()
            .with_order(UpdateOrder::CompletionsFirst);
        let rec2 = flipped.step().unwrap();
        assert_eq!(rec2.fired(), &[Clock::Service(0), Clock::Arrival(0)]);
        assert_eq!(rec2.after()[0].queue, vec![0]);
        assert_eq!(rec2.post(), &start);
    }

    #[test]
    fn forced_tandem_routing() {
        let model: Model = NetworkModel::new(
            vec![Some(exp(1.0)), None],
            vec![exp(2.0), exp(1.25)],
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        )
        .unwrap()
        .into();
        let mut sim = Simulator::new(&model, 3, 0)
            .with_state(SystemState {
                queue: vec![1, 0],
                arrival_clock: vec![Some(5.0), None],
                service_clock: vec![0.25, 0.7],
            })
            .unwrap();
        let rec = sim.step().unwrap();
        assert_eq!(rec.fired(), &[Clock::Service(0)]);
        assert_eq!(rec.post().queue, vec![0, 1]);
        match rec.marks()[0] {
            Mark::Service {
                destination,
                service_time,
            } => {
                assert_eq!(destination, Some(1));
                assert_eq!(rec.post().service_clock[0], service_time);
            }
            _ => panic!("expected a service mark"),
        }
        // Station 2 was idle, so its clock did not move.
        assert_eq!(rec.post().service_clock[1], 0.7);
        // The reloaded clock at the now empty station 1 stays frozen.
        let frozen = rec.post().service_clock[0];
        let rec = sim.step().unwrap();
        assert_eq!(rec.fired(), &[Clock::Service(1)]);
        assert_eq!(rec.post().service_clock[0], frozen);
    }

    #[test]
    fn rejects_bad_initial_state() {
        let model: Model = NetworkModel::single_station(exp(1.0), exp(1.0)).into();
        let bad = SystemState {
            queue: vec![0],
            arrival_clock: vec![None],
            service_clock: vec![1.0],
        };
        assert!(Simulator::new(&model, 1, 0).with_state(bad).is_err());
    }

    #[test]
    fn finite_buffer_rejects_at_capacity() {
        let model: Model = FiniteQueueModel::new(exp(1.0), exp(1.0), 2).unwrap().into();
        let mut sim = Simulator::new(&model, 1, 0)
            .with_state(SystemState {
                queue: vec![2],
                arrival_clock: vec![Some(0.1)],
                service_clock: vec![1.0],
            })
            .unwrap();
        let rec = sim.step().unwrap();
        assert_eq!(rec.post().queue, vec![2]);
        assert!(matches!(rec.marks()[0], Mark::Arrival { accepted: false, .. }));
    }

    #[test]
    fn same_seed_same_path() {
        let model: Model = NetworkModel::single_station(exp(0.7), DistributionSpec::erlang(2, 2.0).unwrap()).into();
        let mut a = Simulator::new(&model, 77, 0);
        let mut b = Simulator::new(&model, 77, 0);
        for _ in 0..1000 {
            let ra = a.step().unwrap().clone();
            let rb = b.step().unwrap();
            assert_eq!(&ra, rb);
        }
        let mut c = Simulator::new(&model, 77, 1);
        assert_ne!(c.step().unwrap().time, Simulator::new(&model, 77, 0).step().unwrap().time);
    }
}
