//! Experiment orchestration behind the command line.
//!
//! Replications run in parallel and are merged in index order, so the
//! merged numbers do not depend on the thread count.

use std::fs;
use std::io;
use std::path::PathBuf;

use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::bar::{
    rate_conservation_check, BarAccumulator, BarError, BarReport, Constant, ExpTestFunction, LinearResidual,
    RateConservationReport, TestFunction,
};
use crate::config::{Experiment, ExperimentConfig, FunctionConfig};
use crate::engine::{export, simulate, Clock, EngineError, Model, SimulationRun, Sink};
use crate::heavy_traffic::{ht_sweep, HeavyTrafficError, SweepSettings};
use crate::network::{NetworkError, Stability};
use crate::oracles::{jackson_product_form, mm1_finite, OracleError};
use crate::output::{join_floats, write_artifacts, Cell, Provenance, Table};
use crate::palm::{PalmError, PalmEstimator, PalmTarget, Which};
use crate::stats::{total_variation, EstimateError, EstimateWithCI};

/// PASTA diagnostic threshold on the total variation distance.
pub const PASTA_TV_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("simulation failed: {0}")]
    Engine(#[from] EngineError),
    #[error("adjoint check failed: {0}")]
    Bar(#[from] BarError),
    #[error("Palm estimation failed: {0}")]
    Palm(#[from] PalmError),
    #[error("network: {0}")]
    Network(#[from] NetworkError),
    #[error("heavy-traffic sweep failed: {0}")]
    HeavyTraffic(#[from] HeavyTrafficError),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("{0}")]
    NotApplicable(String),
}

/// Tables, summary and verdict of one experiment.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub experiment: &'static str,
    pub tables: Vec<Table>,
    pub summary: Value,
    /// `None` when the experiment makes no claim to check.
    pub verdict: Option<bool>,
    /// Human-readable lines for the terminal.
    pub lines: Vec<String>,
    /// Event log of replication 0 as `(file name, bytes)`.
    pub event_log: Option<(String, Vec<u8>)>,
}

impl Outcome {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

fn model_of(config: &ExperimentConfig) -> Result<&Model, ExperimentError> {
    config
        .model
        .as_ref()
        .ok_or_else(|| ExperimentError::NotApplicable("missing model".into()))
}

fn replicate<T, F>(config: &ExperimentConfig, f: F) -> Result<Vec<T>, ExperimentError>
where
    T: Send,
    F: Fn(u64) -> Result<T, ExperimentError> + Sync + Send,
{
    (0..config.replications).into_par_iter().map(f).collect()
}

fn merge_all(v: impl IntoIterator<Item = EstimateWithCI>) -> EstimateWithCI {
    let mut it = v.into_iter();
    let first = it.next().expect("at least one replication");
    it.fold(first, |acc, e| acc.merge(&e))
}

fn clock_label(c: Clock) -> String {
    match c {
        Clock::Arrival(i) => format!("arrival_{i}"),
        Clock::Service(i) => format!("service_{i}"),
    }
}

fn which_label(w: Which) -> String {
    match w {
        Which::Clock(c) => clock_label(c),
        Which::Superposed => "superposed".into(),
        Which::All => "all".into(),
    }
}

fn live_clocks(model: &Model) -> Vec<Clock> {
    let d = model.stations();
    (0..d)
        .map(Clock::Arrival)
        .chain((0..d).map(Clock::Service))
        .filter(|&c| !model.is_null(c))
        .collect()
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

fn tuple(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| round12(x).to_string()).collect();
    format!("({})", parts.join(", "))
}

/// Time-average laws merged over runs: `[station][level]`.
fn merged_queue_laws(runs: &[SimulationRun]) -> Result<Vec<Vec<EstimateWithCI>>, ExperimentError> {
    let d = runs[0].model.stations();
    let mut out = Vec::with_capacity(d);
    for st in 0..d {
        let levels = runs.iter().map(|r| r.queue_law.time[st].len()).max().unwrap_or(0);
        let mut law = Vec::with_capacity(levels);
        for level in 0..levels as u64 {
            let ests = runs
                .iter()
                .map(|r| r.queue_law.probability(st, level))
                .collect::<Result<Vec<_>, _>>()?;
            law.push(merge_all(ests));
        }
        out.push(law);
    }
    Ok(out)
}

/// Runs the experiment named in `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    match &config.experiment {
        Experiment::Simulate { .. } => run_simulate(config),
        Experiment::Traffic {} => run_traffic(config),
        Experiment::Palm { station, max_level } => run_palm(config, *station, *max_level),
        Experiment::BarCheck { function } => run_bar_check(config, function),
        Experiment::HtSweep { family, tolerances } => {
            let settings = SweepSettings {
                events_per_r: config.horizon.events.unwrap_or(0),
                warmup: config.warmup,
                seed: config.seed(),
                batches: config.batches,
            };
            let report = ht_sweep(family, &settings, *tolerances)?;
            let mut sweep = Table::new(
                "sweep",
                &[
                    "r",
                    "p0_hat",
                    "p0_se",
                    "palm_full_hat",
                    "palm_full_se",
                    "p0_ratio",
                    "full_ratio",
                    "ks",
                    "events",
                ],
            );
            let mut lines = Vec::new();
            for p in &report.points {
                sweep.push(vec![
                    p.r.into(),
                    p.p0.value.into(),
                    p.p0.stderr.into(),
                    p.palm_full.value.into(),
                    p.palm_full.stderr.into(),
                    p.p0_ratio.into(),
                    p.full_ratio.into(),
                    p.ks.into(),
                    p.events.into(),
                ]);
                lines.push(format!(
                    "r={} ell0={} P(L=0)/r ratio={:.4} full/r ratio={:.4} KS={:.4}",
                    p.r, p.ell0, p.p0_ratio, p.full_ratio, p.ks
                ));
            }
            let v = report.verdict;
            let pass = v.p0_ratio && v.full_ratio && v.ks_small && v.ks_nonincreasing;
            Ok(Outcome {
                experiment: "ht-sweep",
                tables: vec![sweep],
                summary: json!({
                    "experiment": "ht-sweep",
                    "limit": report.limit,
                    "tolerances": report.tolerances,
                    "criteria": report.verdict,
                    "ks_sequence": report.ks_sequence(),
                    "pass": pass,
                }),
                verdict: Some(pass),
                lines,
                event_log: None,
            })
        }
        Experiment::OracleCompare { tv_threshold } => run_oracle_compare(config, *tv_threshold),
    }
}

fn run_simulate(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let model = model_of(config)?;
    let runs = replicate(config, |rep| Ok(simulate(model, &config.run_config(rep), &mut [])?))?;
    let laws = merged_queue_laws(&runs)?;

    let mut queue_law = Table::new("queue_law", &["station", "level", "probability", "se"]);
    let mut means = Vec::new();
    for (st, law) in laws.iter().enumerate() {
        for (level, e) in law.iter().enumerate() {
            queue_law.push(vec![st.into(), level.into(), e.value.into(), e.stderr.into()]);
        }
        means.push(law.iter().enumerate().map(|(n, e)| n as f64 * e.value).sum::<f64>());
    }
    let mut intensities = Table::new("intensities", &["clock", "rate", "se", "count"]);
    for c in live_clocks(model) {
        let est = merge_all(runs.iter().map(|r| r.counter.intensity(c)).collect::<Result<Vec<_>, _>>()?);
        intensities.push(vec![clock_label(c).into(), est.value.into(), est.stderr.into(), est.count.into()]);
    }
    let measured: u64 = runs.iter().map(|r| r.measured_events).sum();
    let elapsed: f64 = runs.iter().map(|r| r.elapsed()).sum();

    let event_log = match &runs[0].log {
        crate::engine::EventLog::None => None,
        log @ crate::engine::EventLog::Summary(_) => {
            let mut buf = Vec::new();
            export::write_event_log(&mut buf, log).expect("writing to memory");
            Some(("events.csv".to_string(), buf))
        }
        log @ crate::engine::EventLog::Full(_) => {
            let mut buf = Vec::new();
            export::write_event_log(&mut buf, log).expect("writing to memory");
            Some(("events.jsonl".to_string(), buf))
        }
    };
    Ok(Outcome {
        experiment: "simulate",
        tables: vec![queue_law, intensities],
        summary: json!({
            "experiment": "simulate",
            "replications": config.replications,
            "measured_events": measured,
            "elapsed": elapsed,
            "mean_queue": means,
        }),
        verdict: None,
        lines: vec![
            format!("measured events: {measured}, elapsed time: {elapsed:.6}"),
            format!("mean queue lengths: {}", tuple(&means)),
        ],
        event_log,
    })
}

fn run_traffic(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let Model::Network(net) = model_of(config)? else {
        return Err(ExperimentError::NotApplicable("traffic needs a network model".into()));
    };
    let sol = net.solve_traffic()?;
    let stability = net.check_stability()?;
    let mut table = Table::new("traffic", &["station", "lambda", "alpha", "rho"]);
    for i in 0..net.stations() {
        table.push(vec![i.into(), sol.lambda[i].into(), sol.alpha[i].into(), sol.rho[i].into()]);
    }
    let unstable = match &stability {
        Stability::Stable => Vec::new(),
        Stability::Unstable(s) => s.clone(),
    };
    Ok(Outcome {
        experiment: "traffic",
        tables: vec![table],
        summary: json!({
            "experiment": "traffic",
            "alpha": sol.alpha,
            "rho": sol.rho,
            "stable": unstable.is_empty(),
            "unstable_stations": unstable,
        }),
        verdict: None,
        lines: vec![
            format!("alpha = {}", tuple(&sol.alpha)),
            format!("rho = {}", tuple(&sol.rho)),
            if unstable.is_empty() {
                "stable".to_string()
            } else {
                format!("unstable at stations {unstable:?}")
            },
        ],
        event_log: None,
    })
}

fn run_palm(config: &ExperimentConfig, station: usize, max_level: u64) -> Result<Outcome, ExperimentError> {
    let model = model_of(config)?;
    let processes: Vec<Which> = live_clocks(model)
        .into_iter()
        .map(Which::Clock)
        .chain([Which::Superposed, Which::All])
        .collect();
    let levels = max_level + 1;

    // [rep] -> ([process][level] Palm, [level] time)
    let per_rep = replicate(config, |rep| {
        let targets = processes
            .iter()
            .flat_map(|&w| (0..levels).map(move |l| PalmTarget::pre_level(w, station, l)))
            .collect();
        let mut est = PalmEstimator::new(targets);
        let run = simulate(model, &config.run_config(rep), &mut [&mut est as &mut dyn Sink])?;
        let palm = est.estimates().into_iter().collect::<Result<Vec<_>, _>>()?;
        let time = (0..levels)
            .map(|l| run.queue_law.probability(station, l))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((palm, time))
    })?;
    let width = processes.len() * levels as usize;
    let palm: Vec<EstimateWithCI> = (0..width).map(|k| merge_all(per_rep.iter().map(|r| r.0[k]))).collect();
    let time: Vec<EstimateWithCI> = (0..levels as usize)
        .map(|l| merge_all(per_rep.iter().map(|r| r.1[l])))
        .collect();

    let with_tail = |v: Vec<f64>| {
        let tail = (1.0 - v.iter().sum::<f64>()).max(0.0);
        v.into_iter().chain([tail]).collect::<Vec<_>>()
    };
    let time_law = with_tail(time.iter().map(|e| e.value).collect());

    let mut law = Table::new("palm_law", &["process", "level", "palm", "palm_se", "time", "time_se"]);
    let mut pasta = Table::new("pasta", &["process", "tv", "poisson", "pass"]);
    let mut lines = Vec::new();
    let mut verdict = None;
    for (p, &w) in processes.iter().enumerate() {
        let slice = &palm[p * levels as usize..(p + 1) * levels as usize];
        for (l, e) in slice.iter().enumerate() {
            law.push(vec![
                which_label(w).into(),
                l.into(),
                e.value.into(),
                e.stderr.into(),
                time[l].value.into(),
                time[l].stderr.into(),
            ]);
        }
        let tv = total_variation(&with_tail(slice.iter().map(|e| e.value).collect()), &time_law);
        let poisson = matches!(w, Which::Clock(Clock::Arrival(i)) if model.arrival(i).is_some_and(|a| a.is_exponential()));
        let pass = !poisson || tv <= PASTA_TV_THRESHOLD;
        if poisson {
            verdict = Some(verdict.unwrap_or(true) && pass);
        }
        pasta.push(vec![which_label(w).into(), tv.into(), poisson.into(), pass.into()]);
        lines.push(format!(
            "{}: TV(Palm, time-average) = {tv:.6}{}",
            which_label(w),
            if poisson { " (Poisson)" } else { "" }
        ));
    }
    Ok(Outcome {
        experiment: "palm",
        tables: vec![law, pasta],
        summary: json!({
            "experiment": "palm",
            "station": station,
            "max_level": max_level,
            "pasta_threshold": PASTA_TV_THRESHOLD,
            "pass": verdict,
        }),
        verdict,
        lines,
        event_log: None,
    })
}

/// A BAR report merged over replications.
#[derive(Debug, Clone)]
struct MergedBar {
    drift: EstimateWithCI,
    jumps: Vec<(Clock, EstimateWithCI, f64)>,
    residual: EstimateWithCI,
    floor: f64,
    telescoping: f64,
}

impl MergedBar {
    fn of(reports: &[BarReport]) -> Self {
        let as_est = |r: &BarReport| EstimateWithCI {
            value: r.residual,
            stderr: r.stderr,
            count: r.drift_term.count,
            weight: r.elapsed,
            batches: r.drift_term.batches,
        };
        let clocks: Vec<Clock> = reports[0].jump_terms.iter().map(|j| j.clock).collect();
        MergedBar {
            drift: merge_all(reports.iter().map(|r| r.drift_term)),
            jumps: clocks
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let floor = reports.iter().map(|r| r.jump_terms[k].floor).fold(0.0, f64::max);
                    (c, merge_all(reports.iter().map(|r| r.jump_terms[k].term)), floor)
                })
                .collect(),
            residual: merge_all(reports.iter().map(as_est)),
            floor: reports.iter().map(|r| r.floor).fold(0.0, f64::max),
            telescoping: reports.iter().map(|r| r.telescoping.relative_error).fold(0.0, f64::max),
        }
    }

    fn residual_ok(&self) -> bool {
        self.residual.value.abs() <= 3.0 * self.residual.stderr + self.floor
    }

    fn jumps_ok(&self) -> bool {
        self.jumps.iter().all(|(_, j, floor)| j.value.abs() <= 3.0 * j.stderr + floor)
    }

    fn telescoping_ok(&self) -> bool {
        self.telescoping <= crate::bar::TELESCOPING_TOLERANCE
    }
}

fn build_functions(model: &Model, function: &FunctionConfig) -> Result<Vec<Box<dyn TestFunction>>, ExperimentError> {
    let d = model.stations();
    let check = |v: &[f64]| {
        if v.len() == d {
            Ok(())
        } else {
            Err(BarError::Shape {
                expected: d,
                got: v.len(),
            })
        }
    };
    let fs: Vec<Box<dyn TestFunction>> = match function {
        FunctionConfig::Constant { value } => vec![Box::new(Constant(*value))],
        FunctionConfig::Exponential { theta_grid, r } => theta_grid
            .iter()
            .map(|t| Ok(Box::new(ExpTestFunction::solved(model, t, *r)?) as Box<dyn TestFunction>))
            .collect::<Result<_, BarError>>()?,
        FunctionConfig::ClockExponential { arrival, service } => {
            check(arrival)?;
            check(service)?;
            vec![Box::new(ExpTestFunction::raw(
                vec![0.0; d],
                arrival.clone(),
                service.clone(),
                f64::INFINITY,
            )?)]
        }
        FunctionConfig::LinearResidual { arrival, service } => {
            check(arrival)?;
            check(service)?;
            vec![Box::new(LinearResidual {
                arrival: arrival.clone(),
                service: service.clone(),
            })]
        }
        FunctionConfig::RateConservation => vec![Box::new(LinearResidual::service_clock(d, 0))],
    };
    Ok(fs)
}

fn run_bar_check(config: &ExperimentConfig, function: &FunctionConfig) -> Result<Outcome, ExperimentError> {
    let model = model_of(config)?;
    let functions = build_functions(model, function)?;
    let conservation = matches!(function, FunctionConfig::RateConservation);

    let per_rep: Vec<(Vec<BarReport>, Option<RateConservationReport>)> = replicate(config, |rep| {
        let mut accs: Vec<BarAccumulator> = functions.iter().map(|f| BarAccumulator::new(f.as_ref(), model)).collect();
        let mut sinks: Vec<&mut dyn Sink> = accs.iter_mut().map(|a| a as &mut dyn Sink).collect();
        let run = simulate(model, &config.run_config(rep), &mut sinks)?;
        let reports = accs.iter().map(|a| a.report()).collect::<Result<Vec<_>, _>>()?;
        let rc = if conservation {
            Some(rate_conservation_check(&run)?)
        } else {
            None
        };
        Ok((reports, rc))
    })?;

    let clocks = live_clocks(model);
    let mut columns: Vec<String> = ["function", "theta", "eta", "zeta", "drift"].map(String::from).to_vec();
    columns.extend(clocks.iter().map(|&c| format!("jump_{}", clock_label(c))));
    columns.extend(clocks.iter().map(|&c| format!("jump_se_{}", clock_label(c))));
    columns.extend(["residual", "se", "telescoping_rel_err", "pass"].map(String::from));
    let mut table = Table::with_columns("bar", columns);

    let exponential = matches!(function, FunctionConfig::Exponential { .. });
    let mut all_pass = true;
    let mut lines = Vec::new();
    for (k, f) in functions.iter().enumerate() {
        let reports: Vec<BarReport> = per_rep.iter().map(|r| r.0[k].clone()).collect();
        let m = MergedBar::of(&reports);
        let pass = m.residual_ok() && m.telescoping_ok() && (!exponential || m.jumps_ok());
        all_pass &= pass;
        let (theta, eta, zeta) = match function {
            FunctionConfig::Exponential { theta_grid, r } => {
                let e = ExpTestFunction::solved(model, &theta_grid[k], *r)?;
                (join_floats(&e.theta), join_floats(&e.eta), join_floats(&e.zeta))
            }
            FunctionConfig::ClockExponential { arrival, service } => (
                join_floats(&vec![0.0; model.stations()]),
                join_floats(arrival),
                join_floats(service),
            ),
            _ => (Cell::Text(String::new()), Cell::Text(String::new()), Cell::Text(String::new())),
        };
        let mut row = vec![Cell::Text(f.name()), theta, eta, zeta, m.drift.value.into()];
        row.extend(m.jumps.iter().map(|(_, j, _)| Cell::Float(j.value)));
        row.extend(m.jumps.iter().map(|(_, j, _)| Cell::Float(j.stderr)));
        row.extend([
            m.residual.value.into(),
            m.residual.stderr.into(),
            m.telescoping.into(),
            pass.into(),
        ]);
        table.push(row);
        lines.push(format!(
            "{}: residual {:.3e} (se {:.3e}), telescoping {:.1e} -> {}",
            f.name(),
            m.residual.value,
            m.residual.stderr,
            m.telescoping,
            if pass { "PASS" } else { "FAIL" }
        ));
    }

    let mut tables = vec![table];
    let mut summary = json!({
        "experiment": "bar-check",
        "functions": functions.len(),
        "replications": config.replications,
    });
    if conservation {
        let reports: Vec<RateConservationReport> = per_rep.iter().filter_map(|r| r.1).collect();
        let weight = |r: &RateConservationReport| r.p_empty.weight;
        let right = merge_all(reports.iter().map(|r| EstimateWithCI {
            value: r.right,
            stderr: r.stderr,
            count: r.p_empty.count,
            weight: weight(r),
            batches: r.p_empty.batches,
        }));
        let p_empty = merge_all(reports.iter().map(|r| r.p_empty));
        let p_full = merge_all(reports.iter().map(|r| r.p_full_at_arrival));
        let left = reports[0].left;
        let pass = right.within(left, 3.0);
        all_pass &= pass;
        let mut rc = Table::new(
            "rate_conservation",
            &["rho", "left", "p_empty", "p_empty_se", "p_full_at_arrival", "p_full_se", "right", "se", "pass"],
        );
        rc.push(vec![
            reports[0].rho.into(),
            left.into(),
            p_empty.value.into(),
            p_empty.stderr.into(),
            p_full.value.into(),
            p_full.stderr.into(),
            right.value.into(),
            right.stderr.into(),
            pass.into(),
        ]);
        lines.push(format!(
            "rate conservation: 1-rho = {left:.6}, P(L=0) - rho P(full at arrival) = {:.6} (se {:.2e}) -> {}",
            right.value,
            right.stderr,
            if pass { "PASS" } else { "FAIL" }
        ));
        summary["rate_conservation"] = json!({ "left": left, "right": right.value, "se": right.stderr, "pass": pass });
        tables.push(rc);
    }
    summary["pass"] = json!(all_pass);
    Ok(Outcome {
        experiment: "bar-check",
        tables,
        summary,
        verdict: Some(all_pass),
        lines,
        event_log: None,
    })
}

fn run_oracle_compare(config: &ExperimentConfig, threshold: f64) -> Result<Outcome, ExperimentError> {
    let model = model_of(config)?;
    let oracle: Vec<Vec<f64>> = match model {
        Model::Network(net) => jackson_product_form(net)?.into_iter().map(|l| l.probs).collect(),
        Model::FiniteQueue(q) => {
            if !(q.arrival.is_exponential() && q.service.is_exponential()) {
                return Err(ExperimentError::NotApplicable(
                    "the finite-buffer oracle needs exponential arrivals and services".into(),
                ));
            }
            vec![mm1_finite(q.rho(), q.ell0).probs]
        }
    };
    let runs = replicate(config, |rep| Ok(simulate(model, &config.run_config(rep), &mut [])?))?;
    let laws = merged_queue_laws(&runs)?;

    let mut law_table = Table::new("oracle_law", &["station", "level", "simulated", "se", "oracle"]);
    let mut tv_table = Table::new("tv", &["station", "tv", "threshold", "pass"]);
    let mut lines = Vec::new();
    let mut tvs = Vec::new();
    for (st, (sim, exact)) in laws.iter().zip(&oracle).enumerate() {
        let n = sim.len().max(exact.len());
        for level in 0..n {
            let e = sim.get(level).copied().unwrap_or(EstimateWithCI::exact(0.0));
            law_table.push(vec![
                st.into(),
                level.into(),
                e.value.into(),
                e.stderr.into(),
                exact.get(level).copied().unwrap_or(0.0).into(),
            ]);
        }
        let values: Vec<f64> = sim.iter().map(|e| e.value).collect();
        let tv = total_variation(&values, exact);
        tv_table.push(vec![st.into(), tv.into(), threshold.into(), (tv < threshold).into()]);
        lines.push(format!("TV distance at station {st}: {tv:.6}"));
        tvs.push(tv);
    }
    let pass = tvs.iter().all(|&tv| tv < threshold);
    Ok(Outcome {
        experiment: "oracle-compare",
        tables: vec![law_table, tv_table],
        summary: json!({
            "experiment": "oracle-compare",
            "tv": tvs,
            "threshold": threshold,
            "pass": pass,
        }),
        verdict: Some(pass),
        lines,
        event_log: None,
    })
}

/// Writes tables, `summary.json` and any event log into the configured
/// output directory.
pub fn write_outcome(outcome: &Outcome, config: &ExperimentConfig) -> io::Result<Vec<PathBuf>> {
    let prov = Provenance::of(config);
    let dir = &config.output.dir;
    let mut summary = outcome.summary.clone();
    summary["verdict"] = json!(outcome.verdict);
    let mut written = write_artifacts(dir, config.output.format, &outcome.tables, &summary, &prov)?;
    if let Some((name, bytes)) = &outcome.event_log {
        let mut buf = Vec::new();
        if name.ends_with(".csv") {
            buf.extend(format!("# config_sha256={}\n# seed={}\n", prov.config_sha256, prov.seed).bytes());
        } else {
            serde_json::to_writer(&mut buf, &json!({ "provenance": prov }))?;
            buf.push(b'\n');
        }
        buf.extend_from_slice(bytes);
        let path = dir.join(name);
        fs::write(&path, buf)?;
        written.push(path);
    }
    Ok(written)
}
