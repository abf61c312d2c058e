use palmbar::bar::{BarAccumulator, ExpTestFunction, LinearResidual, TestFunction};
use palmbar::engine::{simulate, Clock, EventRecord, Mark, Model, RunConfig, Sink, SystemState};
use palmbar::network::NetworkModel;
use palmbar::palm::{intensity, Which};
use palmbar::stats::EstimateWithCI;
use palmbar::stochastics::DistributionSpec;
use proptest::prelude::*;

/// Counts exogenous entries and network exits.
#[derive(Default)]
struct Flow {
    start: u64,
    entered: u64,
    left: u64,
    end: u64,
}

impl Sink for Flow {
    fn on_start(&mut self, state: &SystemState, _time: f64, _batches: usize) {
        self.start = state.total_customers();
    }

    fn on_segment(&mut self, _start: &SystemState, _duration: f64, _batch: usize) {}

    fn on_event(&mut self, record: &EventRecord, _batch: usize) {
        for m in record.marks() {
            match m {
                Mark::Arrival { accepted: true, .. } => self.entered += 1,
                Mark::Service { destination: None, .. } => self.left += 1,
                _ => {}
            }
        }
    }

    fn on_finish(&mut self, state: &SystemState, _time: f64) {
        self.end = state.total_customers();
    }
}

fn dist() -> impl Strategy<Value = DistributionSpec> {
    prop_oneof![
        (0.5f64..3.0).prop_map(|r| DistributionSpec::exponential(r).unwrap()),
        (1u32..4, 1.0f64..4.0).prop_map(|(k, r)| DistributionSpec::erlang(k, r).unwrap()),
        (0.2f64..0.8).prop_map(|v| DistributionSpec::deterministic(v).unwrap()),
        (0.05f64..0.5, 0.1f64..0.8).prop_map(|(lo, w)| DistributionSpec::uniform(lo, lo + w).unwrap()),
    ]
}

/// Networks of up to three stations whose routing rows leave at least 30%
/// exit probability.
fn network() -> impl Strategy<Value = Model> {
    (1usize..=3).prop_flat_map(|d| {
        (
            proptest::collection::vec(proptest::option::weighted(0.7, dist()), d),
            proptest::collection::vec(dist(), d),
            proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, d), d),
        )
            .prop_filter_map("needs an arrival stream", move |(mut arrivals, services, raw)| {
                if arrivals.iter().all(Option::is_none) {
                    arrivals[0] = Some(DistributionSpec::exponential(1.0).unwrap());
                }
                let routing = raw
                    .into_iter()
                    .map(|row| {
                        let s: f64 = row.iter().sum();
                        row.into_iter().map(|p| 0.7 * p / s.max(1.0)).collect()
                    })
                    .collect();
                NetworkModel::new(arrivals, services, routing).ok().map(Model::from)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn customers_are_conserved(model in network(), seed in any::<u64>()) {
        let mut cfg = RunConfig::events(3000, seed);
        cfg.allow_unstable = true;
        let mut flow = Flow::default();
        simulate(&model, &cfg, &mut [&mut flow]).unwrap();
        prop_assert_eq!(flow.start + flow.entered, flow.end + flow.left);
    }

    #[test]
    fn paths_telescope(model in network(), seed in any::<u64>(), theta in -1.0f64..0.0, r in 0.05f64..0.5) {
        let d = model.stations();
        let solved = ExpTestFunction::solved(&model, &vec![theta; d], r).unwrap();
        let linear = LinearResidual { arrival: vec![1.0; d], service: vec![2.0; d] };
        let fs: [&dyn TestFunction; 2] = [&solved, &linear];
        let mut accs: Vec<BarAccumulator> = fs.iter().map(|f| BarAccumulator::new(*f, &model)).collect();
        let mut sinks: Vec<&mut dyn Sink> = accs.iter_mut().map(|a| a as &mut dyn Sink).collect();
        let mut cfg = RunConfig::events(3000, seed);
        cfg.allow_unstable = true;
        simulate(&model, &cfg, &mut sinks).unwrap();
        for a in &accs {
            let rep = a.report().unwrap();
            prop_assert!(rep.telescoping.pass, "{:?}", rep.telescoping);
        }
    }

    #[test]
    fn superposed_intensity_bounds_clock_intensities(model in network(), seed in any::<u64>()) {
        let mut cfg = RunConfig::events(3000, seed);
        cfg.allow_unstable = true;
        let run = simulate(&model, &cfg, &mut []).unwrap();
        let sup = intensity(&run, Which::Superposed).unwrap().value;
        let all = intensity(&run, Which::All).unwrap().value;
        let mut total = 0.0;
        for i in 0..model.stations() {
            for c in [Clock::Arrival(i), Clock::Service(i)] {
                let v = intensity(&run, Which::Clock(c)).unwrap().value;
                prop_assert!(v <= sup * (1.0 + 1e-12));
                total += v;
            }
        }
        prop_assert!(sup <= all * (1.0 + 1e-12));
        prop_assert!((total - all).abs() <= 1e-9 * all);
    }

    #[test]
    fn replication_merge_order_is_immaterial(
        parts in proptest::collection::vec((-5.0f64..5.0, 0.0f64..1.0, 0.1f64..100.0), 2..12),
    ) {
        let ests: Vec<EstimateWithCI> = parts
            .iter()
            .map(|&(value, stderr, weight)| EstimateWithCI { value, stderr, count: 10, weight, batches: 64 })
            .collect();
        let forward = ests[1..].iter().fold(ests[0], |acc, e| acc.merge(e));
        let backward = ests[..ests.len() - 1].iter().rev().fold(ests[ests.len() - 1], |acc, e| e.merge(&acc));
        prop_assert!((forward.value - backward.value).abs() <= 1e-12 * (1.0 + forward.value.abs()));
        prop_assert!((forward.stderr - backward.stderr).abs() <= 1e-12 * (1.0 + forward.stderr));
    }
}
