//! Test functions and the empirical adjoint relationship
//! `E[Hf(X)] + Σ_j α_j E_j[Δ_j f] = 0`.
//!
//! Along a path the same quantities telescope:
//! `f(X(T)) − f(X(0)) = ∫ Hf(X(s)) ds + Σ_n Σ_j Δ_j f(t_n)`, so every report
//! carries both the statistical verdict and the deterministic path identity.

pub mod exponents;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{Clock, EventRecord, Model, SimulationRun, Sink, SystemState};
use crate::stats::{ratio_estimate, CompensatedSum, EstimateError, EstimateWithCI};

pub use exponents::{eta_expansion, solve_eta, solve_eta_vector, solve_exponent, solve_zeta, zeta_expansion};

/// Relative budget of the pathwise telescoping identity.
pub const TELESCOPING_TOLERANCE: f64 = 1e-8;

/// Relative floating-point floor under the statistical verdicts. A term that
/// vanishes identically still accumulates rounding of order `ε·sup|f|` per
/// firing, which can exceed its own batch-means error.
pub const ROUNDING_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BarError {
    #[error("no root for scale e^{log_scale} with cutoff {cutoff}")]
    NoRoot { log_scale: f64, cutoff: f64 },
    #[error("expected {expected} coefficients, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("theta must be nonpositive on a network with unbounded queues")]
    PositiveTheta,
    #[error("test function produced a non-finite value")]
    UnboundedTestFunction,
    #[error("{0}")]
    NotApplicable(&'static str),
    #[error(transparent)]
    InsufficientData(#[from] EstimateError),
}

/// A function of the state with its drift `Hf` and exact segment integrals.
pub trait TestFunction: std::fmt::Debug + Send + Sync {
    fn name(&self) -> String;
    fn value(&self, x: &SystemState) -> f64;
    /// `Hf(x)`: derivative of `f` along the drift at `x` (right derivative
    /// where the path has a kink).
    fn drift(&self, x: &SystemState) -> f64;
    /// `∫_0^τ Hf(x(s)) ds` along the drift path from `start`.
    fn segment_integral(&self, start: &SystemState, duration: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl TestFunction for Constant {
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }

    fn value(&self, _x: &SystemState) -> f64 {
        self.0
    }

    fn drift(&self, _x: &SystemState) -> f64 {
        0.0
    }

    fn segment_integral(&self, _start: &SystemState, _duration: f64) -> f64 {
        0.0
    }
}

/// `f(x) = Σ w_i L_i`; constant between events.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueWeights {
    pub weights: Vec<f64>,
}

impl QueueWeights {
    pub fn new(weights: Vec<f64>) -> Self {
        QueueWeights { weights }
    }
}

impl TestFunction for QueueWeights {
    fn name(&self) -> String {
        format!("queue_weights({:?})", self.weights)
    }

    fn value(&self, x: &SystemState) -> f64 {
        self.weights.iter().zip(&x.queue).map(|(w, &l)| w * l as f64).sum()
    }

    fn drift(&self, _x: &SystemState) -> f64 {
        0.0
    }

    fn segment_integral(&self, _start: &SystemState, _duration: f64) -> f64 {
        0.0
    }
}

/// `f(x) = Σ a_i R_{e,i} + Σ b_i R_{s,i}`. Bounded along paths only through
/// the sampled clock values.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearResidual {
    pub arrival: Vec<f64>,
    pub service: Vec<f64>,
}

impl LinearResidual {
    /// `f(x) = R_{s,station}`.
    pub fn service_clock(stations: usize, station: usize) -> Self {
        let mut service = vec![0.0; stations];
        service[station] = 1.0;
        LinearResidual {
            arrival: vec![0.0; stations],
            service,
        }
    }
}

impl TestFunction for LinearResidual {
    fn name(&self) -> String {
        format!("linear_residual({:?}, {:?})", self.arrival, self.service)
    }

    fn value(&self, x: &SystemState) -> f64 {
        let a: f64 = self
            .arrival
            .iter()
            .zip(&x.arrival_clock)
            .filter_map(|(w, c)| c.map(|c| w * c))
            .sum();
        let s: f64 = self.service.iter().zip(&x.service_clock).map(|(w, c)| w * c).sum();
        a + s
    }

    fn drift(&self, x: &SystemState) -> f64 {
        let a: f64 = self
            .arrival
            .iter()
            .zip(&x.arrival_clock)
            .filter(|(_, c)| c.is_some())
            .map(|(w, _)| w)
            .sum();
        let s: f64 = self
            .service
            .iter()
            .zip(&x.queue)
            .filter(|(_, &l)| l >= 1)
            .map(|(w, _)| w)
            .sum();
        -(a + s)
    }

    fn segment_integral(&self, start: &SystemState, duration: f64) -> f64 {
        self.drift(start) * duration
    }
}

/// `f(x) = exp(θ·L − Σ η_i (R_{e,i} ∧ c) − Σ ζ_i (R_{s,i} ∧ c))`.
///
/// With `θ = 0` and `c = ∞` this is the plain clock exponential
/// `exp(−Σ η_i R_{e,i} − Σ ζ_i R_{s,i})`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpTestFunction {
    pub theta: Vec<f64>,
    pub eta: Vec<f64>,
    pub zeta: Vec<f64>,
    pub cutoff: f64,
}

impl ExpTestFunction {
    pub fn raw(theta: Vec<f64>, eta: Vec<f64>, zeta: Vec<f64>, cutoff: f64) -> Result<Self, BarError> {
        let d = theta.len();
        for v in [&eta, &zeta] {
            if v.len() != d {
                return Err(BarError::Shape {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        Ok(ExpTestFunction {
            theta,
            eta,
            zeta,
            cutoff,
        })
    }

    /// Exponents solved so that every jump term vanishes in expectation,
    /// with cutoff `1/r`.
    pub fn solved(model: &Model, theta: &[f64], r: f64) -> Result<Self, BarError> {
        if matches!(model, Model::Network(_)) && theta.iter().any(|&t| t > 0.0) {
            return Err(BarError::PositiveTheta);
        }
        let cutoff = 1.0 / r;
        let eta = solve_eta_vector(model, theta, cutoff)?;
        let zeta = solve_zeta(model, theta, cutoff)?;
        ExpTestFunction::raw(theta.to_vec(), eta, zeta, cutoff)
    }

    fn exponent(&self, x: &SystemState) -> f64 {
        let c = self.cutoff;
        let mut e = 0.0;
        for i in 0..self.theta.len() {
            e += self.theta[i] * x.queue[i] as f64;
            if let Some(y) = x.arrival_clock[i] {
                e -= self.eta[i] * y.min(c);
            }
            e -= self.zeta[i] * x.service_clock[i].min(c);
        }
        e
    }

    /// Clock coefficients and start values of clocks that run from `x`.
    fn running(&self, x: &SystemState) -> impl Iterator<Item = (f64, f64)> + '_ {
        let arrivals = (0..self.theta.len())
            .filter_map(move |i| x.arrival_clock[i].map(|y| (self.eta[i], y)))
            .collect::<Vec<_>>();
        let services = (0..self.theta.len())
            .filter(move |&i| x.queue[i] >= 1)
            .map(move |i| (self.zeta[i], x.service_clock[i]))
            .collect::<Vec<_>>();
        arrivals.into_iter().chain(services)
    }
}

impl TestFunction for ExpTestFunction {
    fn name(&self) -> String {
        format!("exp(theta={:?})", self.theta)
    }

    fn value(&self, x: &SystemState) -> f64 {
        self.exponent(x).exp()
    }

    fn drift(&self, x: &SystemState) -> f64 {
        let rate: f64 = self.running(x).filter(|&(_, y)| y < self.cutoff).map(|(a, _)| a).sum();
        rate * self.value(x)
    }

    fn segment_integral(&self, start: &SystemState, duration: f64) -> f64 {
        // The exponent is piecewise linear: a clock contributes slope `a`
        // once its residual has fallen to the cutoff.
        let c = self.cutoff;
        let mut slope = 0.0;
        let mut kinks: Vec<(f64, f64)> = Vec::new();
        for (a, y) in self.running(start) {
            if y <= c {
                slope += a;
            } else if y - c < duration {
                kinks.push((y - c, a));
            }
        }
        kinks.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut exponent = self.exponent(start);
        let mut t = 0.0;
        let mut total = 0.0;
        for (at, a) in kinks.into_iter().chain(std::iter::once((duration, 0.0))) {
            let len = at - t;
            if slope != 0.0 && len > 0.0 {
                total += exponent.exp() * (slope * len).exp_m1();
                exponent += slope * len;
            }
            t = at;
            slope += a;
        }
        total
    }
}

/// Jump contribution of one clock.
#[derive(Debug, Clone, Serialize)]
pub struct JumpTerm {
    pub clock: Clock,
    /// `Σ Δ_j f / T`, an estimate of `α_j E_j[Δ_j f]`.
    pub term: EstimateWithCI,
    /// `E_j[Δ_j f]`, absent without firings.
    pub palm_mean: Option<EstimateWithCI>,
    pub firings: u64,
    /// Rounding allowance `ROUNDING_FLOOR · sup|f| · firings / T`.
    pub floor: f64,
}

impl JumpTerm {
    /// Term within `k` errors of zero, up to the rounding floor.
    pub fn vanishes(&self, k: f64) -> bool {
        self.term.value.abs() <= k * self.term.stderr + self.floor
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TelescopingCheck {
    pub start_value: f64,
    pub end_value: f64,
    /// `∫ Hf + Σ Δ_j f` over the measured path.
    pub path_sum: f64,
    /// `sup |f|` along the measured path.
    pub sup: f64,
    pub relative_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BarReport {
    pub function: String,
    pub elapsed: f64,
    pub drift_term: EstimateWithCI,
    pub jump_terms: Vec<JumpTerm>,
    /// `drift_term + Σ jump_terms`.
    pub residual: f64,
    /// Batch-means error of the per-batch residual.
    pub stderr: f64,
    /// Term errors combined in quadrature, for reference.
    pub term_stderr: f64,
    /// Rounding allowance of the residual, `ROUNDING_FLOOR · sup|f| · events / T`.
    pub floor: f64,
    pub pass: bool,
    pub telescoping: TelescopingCheck,
}

impl BarReport {
    /// Every jump term and every per-firing mean within `k` errors of zero.
    pub fn jumps_vanish(&self, k: f64) -> bool {
        let sup = self.telescoping.sup;
        self.jump_terms.iter().all(|j| {
            j.vanishes(k)
                && j
                    .palm_mean
                    .is_none_or(|m| m.value.abs() <= k * m.stderr + ROUNDING_FLOOR * sup)
        })
    }
}

/// Online accumulator for [`BarReport`].
#[derive(Debug)]
pub struct BarAccumulator<'f> {
    f: &'f dyn TestFunction,
    clocks: Vec<Clock>,
    stations: usize,
    drift: Vec<f64>,
    /// `[clock position][batch]`.
    jump: Vec<Vec<f64>>,
    firings: Vec<Vec<f64>>,
    elapsed: Vec<f64>,
    drift_sum: CompensatedSum,
    jump_sum: CompensatedSum,
    start_value: f64,
    end_value: f64,
    sup: f64,
    segments: u64,
    finite: bool,
}

impl<'f> BarAccumulator<'f> {
    /// Tracks the jump terms of every non-null clock of `model`.
    pub fn new(f: &'f dyn TestFunction, model: &Model) -> Self {
        let d = model.stations();
        let clocks = (0..d)
            .map(Clock::Arrival)
            .chain((0..d).map(Clock::Service))
            .filter(|&c| !model.is_null(c))
            .collect();
        BarAccumulator {
            f,
            clocks,
            stations: d,
            drift: Vec::new(),
            jump: Vec::new(),
            firings: Vec::new(),
            elapsed: Vec::new(),
            drift_sum: CompensatedSum::default(),
            jump_sum: CompensatedSum::default(),
            start_value: 0.0,
            end_value: 0.0,
            sup: 0.0,
            segments: 0,
            finite: true,
        }
    }

    fn see(&mut self, v: f64) -> f64 {
        if !v.is_finite() {
            self.finite = false;
        }
        self.sup = self.sup.max(v.abs());
        v
    }

    pub fn report(&self) -> Result<BarReport, BarError> {
        if !self.finite {
            return Err(BarError::UnboundedTestFunction);
        }
        let elapsed: f64 = self.elapsed.iter().sum();
        let drift_term = ratio_estimate(&self.drift, &self.elapsed, self.segments)?;
        let mut jump_terms = Vec::new();
        let mut total_num = self.drift.clone();
        for &clock in &self.clocks {
            let k = clock.index(self.stations);
            let count = self.firings[k].iter().sum::<f64>() as u64;
            let term = ratio_estimate(&self.jump[k], &self.elapsed, count)?;
            let palm_mean = ratio_estimate(&self.jump[k], &self.firings[k], count).ok();
            for (t, j) in total_num.iter_mut().zip(&self.jump[k]) {
                *t += j;
            }
            jump_terms.push(JumpTerm {
                clock,
                term,
                palm_mean,
                firings: count,
                floor: ROUNDING_FLOOR * self.sup * count as f64 / elapsed,
            });
        }
        let total = ratio_estimate(&total_num, &self.elapsed, self.segments)?;
        let residual = drift_term.value + jump_terms.iter().map(|j| j.term.value).sum::<f64>();
        let floor = jump_terms.iter().map(|j| j.floor).sum::<f64>();
        let term_stderr =
            (drift_term.stderr.powi(2) + jump_terms.iter().map(|j| j.term.stderr.powi(2)).sum::<f64>()).sqrt();

        let mut path = self.drift_sum;
        path.merge(&self.jump_sum);
        let path_sum = path.value();
        let lhs = self.end_value - self.start_value;
        let scale = self.sup.max(lhs.abs());
        let relative_error = if scale > 0.0 { (lhs - path_sum).abs() / scale } else { 0.0 };
        Ok(BarReport {
            function: self.f.name(),
            elapsed,
            drift_term,
            jump_terms,
            residual,
            stderr: total.stderr,
            term_stderr,
            floor,
            pass: residual.abs() <= 3.0 * total.stderr + floor,
            telescoping: TelescopingCheck {
                start_value: self.start_value,
                end_value: self.end_value,
                path_sum,
                sup: self.sup,
                relative_error,
                pass: relative_error <= TELESCOPING_TOLERANCE,
            },
        })
    }
}

impl Sink for BarAccumulator<'_> {
    fn on_start(&mut self, state: &SystemState, _time: f64, batches: usize) {
        self.drift = vec![0.0; batches];
        self.elapsed = vec![0.0; batches];
        self.jump = vec![vec![0.0; batches]; 2 * self.stations];
        self.firings = vec![vec![0.0; batches]; 2 * self.stations];
        self.drift_sum = CompensatedSum::default();
        self.jump_sum = CompensatedSum::default();
        self.sup = 0.0;
        self.segments = 0;
        self.finite = true;
        self.start_value = self.see(self.f.value(state));
        self.end_value = self.start_value;
    }

    fn on_segment(&mut self, start: &SystemState, duration: f64, batch: usize) {
        let v = self.f.segment_integral(start, duration);
        if !v.is_finite() {
            self.finite = false;
        }
        self.drift[batch] += v;
        self.drift_sum.add(v);
        self.elapsed[batch] += duration;
        self.segments += 1;
    }

    fn on_event(&mut self, record: &EventRecord, batch: usize) {
        let mut before = self.see(self.f.value(&record.pre));
        for (k, clock) in record.fired().iter().enumerate() {
            let after = self.see(self.f.value(&record.after()[k]));
            let delta = after - before;
            let j = clock.index(self.stations);
            self.jump[j][batch] += delta;
            self.firings[j][batch] += 1.0;
            self.jump_sum.add(delta);
            before = after;
        }
    }

    fn on_finish(&mut self, state: &SystemState, _time: f64) {
        self.end_value = self.see(self.f.value(state));
    }
}

/// Both sides of `1 − ρ = P(L = 0) − ρ P₁(L(0−) = ℓ₀)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateConservationReport {
    pub rho: f64,
    pub left: f64,
    pub p_empty: EstimateWithCI,
    pub p_full_at_arrival: EstimateWithCI,
    pub right: f64,
    /// Batch-means error of `P(L=0) − ρ P₁(full)`.
    pub stderr: f64,
    pub pass: bool,
}

/// Rate conservation on a finite-buffer run.
pub fn rate_conservation_check(run: &SimulationRun) -> Result<RateConservationReport, BarError> {
    let Model::FiniteQueue(q) = &run.model else {
        return Err(BarError::NotApplicable("rate conservation needs a finite-buffer queue"));
    };
    let rho = q.rho();
    let law = &run.queue_law;
    let c = &run.counter;
    let arrivals = &c.clock[Clock::Arrival(0).index(1)];
    let p_empty = law.probability(0, 0)?;
    let p_full_at_arrival = ratio_estimate(&c.rejected, arrivals, c.arrival_count())?;
    let empty_time = law.batch_times(0, 0);
    let per_batch: Vec<f64> = (0..law.elapsed.len())
        .filter(|&b| law.elapsed[b] > 0.0 && arrivals[b] > 0.0)
        .map(|b| empty_time[b] / law.elapsed[b] - rho * c.rejected[b] / arrivals[b])
        .collect();
    let k = per_batch.len();
    let stderr = if k >= 2 {
        let mean = per_batch.iter().sum::<f64>() / k as f64;
        (per_batch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ((k - 1) * k) as f64).sqrt()
    } else {
        f64::INFINITY
    };
    let left = 1.0 - rho;
    let right = p_empty.value - rho * p_full_at_arrival.value;
    Ok(RateConservationReport {
        rho,
        left,
        p_empty,
        p_full_at_arrival,
        right,
        stderr,
        pass: (left - right).abs() <= 3.0 * stderr,
    })
}
