//! Closed-form stationary laws used as ground truth for the simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{NetworkError, NetworkModel, Stability};

/// Tail mass below which geometric laws are cut off.
pub const TAIL_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("product form needs exponential inputs; station {station} has a {role} law that is not")]
    NotApplicable { station: usize, role: &'static str },
    #[error("model is unstable at stations {0:?}")]
    Unstable(Vec<usize>),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Distribution on `0..probs.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLaw {
    pub probs: Vec<f64>,
}

impl DiscreteLaw {
    pub fn support(&self) -> std::ops::Range<u64> {
        0..self.probs.len() as u64
    }

    pub fn prob(&self, n: u64) -> f64 {
        self.probs.get(n as usize).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }
}

/// Stationary law of the M/M/1 queue with capacity `ell0`.
pub fn mm1_finite(rho: f64, ell0: u64) -> DiscreteLaw {
    assert!(rho > 0.0, "rho must be positive");
    let n = ell0 as usize + 1;
    if (rho - 1.0).abs() < 1e-12 {
        return DiscreteLaw {
            probs: vec![1.0 / n as f64; n],
        };
    }
    // (1-ρ)ρ^k / (1-ρ^{ℓ0+1}), written to stay accurate for ρ > 1.
    let norm = (1.0 - rho) / (1.0 - rho.powi(n as i32));
    DiscreteLaw {
        probs: (0..n).map(|k| norm * rho.powi(k as i32)).collect(),
    }
}

/// Geometric law `(1-ρ)ρ^n`, cut where the remaining tail is below
/// [`TAIL_CUTOFF`].
pub fn geometric(rho: f64) -> DiscreteLaw {
    assert!((0.0..1.0).contains(&rho), "rho must lie in [0, 1)");
    let mut probs = vec![1.0 - rho];
    let mut tail = rho;
    while tail >= TAIL_CUTOFF {
        probs.push((1.0 - rho) * tail);
        tail *= rho;
    }
    DiscreteLaw { probs }
}

/// Per-station stationary marginals of a Jackson network.
pub fn jackson_product_form(model: &NetworkModel) -> Result<Vec<DiscreteLaw>, OracleError> {
    for i in 0..model.stations() {
        if let Some(a) = model.arrival(i) {
            if !a.is_exponential() {
                return Err(OracleError::NotApplicable {
                    station: i,
                    role: "arrival",
                });
            }
        }
        if !model.service(i).is_exponential() {
            return Err(OracleError::NotApplicable {
                station: i,
                role: "service",
            });
        }
    }
    if let Stability::Unstable(s) = model.check_stability()? {
        return Err(OracleError::Unstable(s));
    }
    let traffic = model.solve_traffic()?;
    Ok(traffic.rho.iter().map(|&r| geometric(r)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::DistributionSpec;

    fn exp(rate: f64) -> DistributionSpec {
        DistributionSpec::exponential(rate).unwrap()
    }

    #[test]
    fn finite_mm1_by_balance_equations() {
        // Birth-death balance: p1 = ρ p0, p2 = ρ p1, p0 + p1 + p2 = 1.
        let law = mm1_finite(0.8, 2);
        let p0 = 1.0 / (1.0 + 0.8 + 0.64);
        let expected = [p0, 0.8 * p0, 0.64 * p0];
        for (a, b) in law.probs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((law.probs[0] - 0.40984).abs() < 1e-5);
        assert!((law.probs[1] - 0.32787).abs() < 1e-5);
        assert!((law.probs[2] - 0.26230).abs() < 1e-5);
    }

    #[test]
    fn critical_load_is_uniform() {
        let law = mm1_finite(1.0, 4);
        assert_eq!(law.probs, vec![0.2; 5]);
    }

    #[test]
    fn long_buffer_matches_geometric() {
        let finite = mm1_finite(0.5, 60);
        let geo = geometric(0.5);
        for n in 0..=20 {
            assert!((finite.prob(n) - geo.prob(n)).abs() < 1e-15);
        }
    }

    #[test]
    fn geometric_tail_is_cut_at_threshold() {
        let g = geometric(0.8);
        assert!((1.0 - g.total()).abs() < TAIL_CUTOFF);
        assert!(0.8f64.powi(g.probs.len() as i32) < TAIL_CUTOFF);
        assert!(0.8f64.powi(g.probs.len() as i32 - 1) >= TAIL_CUTOFF);
    }

    #[test]
    fn tandem_and_feedback_marginals() {
        let tandem = NetworkModel::new(
            vec![Some(exp(1.0)), None],
            vec![exp(2.0), exp(1.25)],
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let laws = jackson_product_form(&tandem).unwrap();
        assert!((laws[0].prob(3) - 0.5 * 0.125).abs() < 1e-15);
        assert!((laws[1].prob(1) - 0.2 * 0.8).abs() < 1e-12);

        let feedback = NetworkModel::new(vec![Some(exp(1.0))], vec![exp(4.0)], vec![vec![0.5]]).unwrap();
        let laws = jackson_product_form(&feedback).unwrap();
        assert!((laws[0].prob(0) - 0.5).abs() < 1e-12);

        let single = NetworkModel::single_station(exp(0.3), exp(1.0));
        assert!((jackson_product_form(&single).unwrap()[0].prob(2) - 0.7 * 0.09).abs() < 1e-15);
    }

    #[test]
    fn non_exponential_is_rejected() {
        let m = NetworkModel::single_station(exp(0.3), DistributionSpec::deterministic(1.0).unwrap());
        assert!(matches!(
            jackson_product_form(&m),
            Err(OracleError::NotApplicable { role: "service", .. })
        ));
    }
}
