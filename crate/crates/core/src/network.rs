//! Generalized Jackson network description and its traffic equation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stochastics::DistributionSpec;

/// Spectral radius threshold above which routing is treated as singular.
pub const SPECTRAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("network must have at least one station")]
    Empty,
    #[error("expected {expected} entries for {what}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("routing row {row} is not substochastic: {reason}")]
    Routing { row: usize, reason: String },
    #[error("routing is singular: spectral radius bound {bound} >= 1 - {SPECTRAL_TOLERANCE}")]
    SingularRouting { bound: f64 },
    #[error("no station has exogenous arrivals")]
    NoArrivals,
}

/// Wire form of [`NetworkModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Per-station exogenous inter-arrival law, `null` for stations without
    /// exogenous arrivals.
    pub arrivals: Vec<Option<DistributionSpec>>,
    pub services: Vec<DistributionSpec>,
    /// Row-substochastic `d × d` routing matrix; omitted means no routing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing: Option<Vec<Vec<f64>>>,
}

/// A validated generalized Jackson network. Stations are indexed from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkSpec", into = "NetworkSpec")]
pub struct NetworkModel {
    arrivals: Vec<Option<DistributionSpec>>,
    services: Vec<DistributionSpec>,
    routing: Vec<Vec<f64>>,
}

impl From<NetworkModel> for NetworkSpec {
    fn from(m: NetworkModel) -> Self {
        let has_routing = m.routing.iter().flatten().any(|&p| p != 0.0);
        NetworkSpec {
            arrivals: m.arrivals,
            services: m.services,
            routing: has_routing.then_some(m.routing),
        }
    }
}

impl TryFrom<NetworkSpec> for NetworkModel {
    type Error = NetworkError;

    fn try_from(spec: NetworkSpec) -> Result<Self, Self::Error> {
        let d = spec.services.len();
        let routing = spec.routing.unwrap_or_else(|| vec![vec![0.0; d]; d]);
        NetworkModel::new(spec.arrivals, spec.services, routing)
    }
}

/// Solution of the traffic equation `α = λ + Pᵀ α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSolution {
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stability {
    Stable,
    /// Stations with `ρ_i >= 1`.
    Unstable(Vec<usize>),
}

impl NetworkModel {
    pub fn new(
        arrivals: Vec<Option<DistributionSpec>>,
        services: Vec<DistributionSpec>,
        routing: Vec<Vec<f64>>,
    ) -> Result<Self, NetworkError> {
        let d = services.len();
        if d == 0 {
            return Err(NetworkError::Empty);
        }
        if arrivals.len() != d {
            return Err(NetworkError::Shape {
                what: "arrivals",
                expected: d,
                got: arrivals.len(),
            });
        }
        if arrivals.iter().all(Option::is_none) {
            return Err(NetworkError::NoArrivals);
        }
        if routing.len() != d {
            return Err(NetworkError::Shape {
                what: "routing rows",
                expected: d,
                got: routing.len(),
            });
        }
        for (i, row) in routing.iter().enumerate() {
            if row.len() != d {
                return Err(NetworkError::Shape {
                    what: "routing columns",
                    expected: d,
                    got: row.len(),
                });
            }
            if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
                return Err(NetworkError::Routing {
                    row: i,
                    reason: format!("entry {p} is not a probability"),
                });
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + 1e-12 {
                return Err(NetworkError::Routing {
                    row: i,
                    reason: format!("row sum {sum} exceeds 1"),
                });
            }
        }
        let model = NetworkModel {
            arrivals,
            services,
            routing,
        };
        let bound = model.spectral_radius_bound()?;
        if bound >= 1.0 - SPECTRAL_TOLERANCE {
            return Err(NetworkError::SingularRouting { bound });
        }
        Ok(model)
    }

    /// Single station with renewal input and no routing.
    pub fn single_station(arrival: DistributionSpec, service: DistributionSpec) -> Self {
        NetworkModel::new(vec![Some(arrival)], vec![service], vec![vec![0.0]]).expect("valid single station")
    }

    pub fn stations(&self) -> usize {
        self.services.len()
    }

    pub fn arrival(&self, station: usize) -> Option<&DistributionSpec> {
        self.arrivals[station].as_ref()
    }

    pub fn arrivals(&self) -> &[Option<DistributionSpec>] {
        &self.arrivals
    }

    pub fn service(&self, station: usize) -> &DistributionSpec {
        &self.services[station]
    }

    pub fn services(&self) -> &[DistributionSpec] {
        &self.services
    }

    pub fn routing(&self) -> &[Vec<f64>] {
        &self.routing
    }

    /// `p_{i,0} = 1 - Σ_{i'} p_{i,i'}`.
    pub fn exit_probability(&self, station: usize) -> f64 {
        (1.0 - self.routing[station].iter().sum::<f64>()).max(0.0)
    }

    /// Exogenous arrival rates, zero at stations without exogenous input.
    pub fn lambda(&self) -> Vec<f64> {
        self.arrivals
            .iter()
            .map(|a| a.as_ref().map_or(0.0, DistributionSpec::rate))
            .collect()
    }

    /// Upper bound on the spectral radius of `P`.
    ///
    /// For `x = (I − P)⁻¹ 1 >= 1` we have `P x = x − 1`, so the
    /// Collatz–Wielandt bound gives `ρ(P) <= max_i (1 − 1/x_i)`. If `I − P`
    /// is singular or its inverse is not nonnegative, `ρ(P) >= 1`.
    pub fn spectral_radius_bound(&self) -> Result<f64, NetworkError> {
        let d = self.stations();
        let p = DMatrix::from_fn(d, d, |i, j| self.routing[i][j]);
        let a = DMatrix::identity(d, d) - &p;
        let ones = DVector::from_element(d, 1.0);
        let x = match a.lu().solve(&ones) {
            Some(x) => x,
            None => return Err(NetworkError::SingularRouting { bound: 1.0 }),
        };
        if x.iter().any(|v| !v.is_finite() || *v < 1.0 - 1e-9) {
            return Err(NetworkError::SingularRouting { bound: 1.0 });
        }
        let max = x.iter().cloned().fold(1.0, f64::max);
        Ok(1.0 - 1.0 / max)
    }

    /// Solves `α_j = λ_j + Σ_i α_i p_{i,j}` by a direct LU solve with one
    /// step of iterative refinement.
    pub fn solve_traffic(&self) -> Result<TrafficSolution, NetworkError> {
        let bound = self.spectral_radius_bound()?;
        if bound >= 1.0 - SPECTRAL_TOLERANCE {
            return Err(NetworkError::SingularRouting { bound });
        }
        let d = self.stations();
        let lambda = self.lambda();
        let a = DMatrix::from_fn(d, d, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            delta - self.routing[j][i]
        });
        let b = DVector::from_vec(lambda.clone());
        let lu = a.clone().lu();
        let mut alpha = lu
            .solve(&b)
            .ok_or(NetworkError::SingularRouting { bound: 1.0 })?;
        let residual = &b - &a * &alpha;
        if let Some(correction) = lu.solve(&residual) {
            alpha += correction;
        }
        let alpha: Vec<f64> = alpha.iter().copied().collect();
        let rho = alpha
            .iter()
            .zip(&self.services)
            .map(|(a, s)| a * s.mean())
            .collect();
        Ok(TrafficSolution { lambda, alpha, rho })
    }

    /// Stable iff every `ρ_i < 1`.
    pub fn check_stability(&self) -> Result<Stability, NetworkError> {
        let traffic = self.solve_traffic()?;
        let bad: Vec<usize> = traffic
            .rho
            .iter()
            .enumerate()
            .filter(|(_, r)| **r >= 1.0)
            .map(|(i, _)| i)
            .collect();
        Ok(if bad.is_empty() {
            Stability::Stable
        } else {
            Stability::Unstable(bad)
        })
    }
}

impl TrafficSolution {
    /// Max-norm residual of the traffic equation.
    pub fn residual(&self, routing: &[Vec<f64>]) -> f64 {
        let d = self.alpha.len();
        (0..d)
            .map(|j| {
                let inflow: f64 = (0..d).map(|i| self.alpha[i] * routing[i][j]).sum();
                (self.alpha[j] - self.lambda[j] - inflow).abs()
            })
            .fold(0.0, f64::max)
    }
}
