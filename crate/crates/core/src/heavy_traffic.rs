//! Scaled finite-buffer queues near critical load and their limit laws.
//!
//! For `r ↓ 0` the arrival rate is `λ^{(r)} = μ(1 − rb)` and the buffer is
//! `ℓ₀^{(r)} = round(ℓ₀ / r)`. The scaled queue length `rL^{(r)}` converges
//! to a law on `[0, ℓ₀]` with density proportional to `e^{−βx}`, where
//! `β = 2b / (λ²σ_e² + μ²σ_s²)`, and the boundary probabilities are of order
//! `r`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{simulate, EngineError, FiniteQueueModel, Model, RunConfig};
use crate::stats::{EstimateError, EstimateWithCI, DEFAULT_BATCHES};
use crate::stochastics::{DistributionError, DistributionSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeavyTrafficError {
    #[error("both variances vanish, so beta is undefined for b = {b}")]
    ZeroVariance { b: f64 },
    #[error("invalid scaled family: {0}")]
    Family(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
}

/// `β = 2b / (λ²σ_e² + μ²σ_s²)`; standard deviations as inputs.
pub fn beta_of(b: f64, lambda: f64, mu: f64, sigma_e: f64, sigma_s: f64) -> Result<f64, HeavyTrafficError> {
    let denom = (lambda * sigma_e).powi(2) + (mu * sigma_s).powi(2);
    if b == 0.0 {
        return Ok(0.0);
    }
    if denom == 0.0 {
        return Err(HeavyTrafficError::ZeroVariance { b });
    }
    Ok(2.0 * b / denom)
}

/// First-order coefficients `(c_lower, c_upper)` with `P(L = 0) ≈ c_lower·r`
/// and `P₁(L(0−) = ℓ₀) ≈ c_upper·r`.
pub fn boundary_asymptotics(
    b: f64,
    beta: f64,
    ell0: f64,
    lambda: f64,
    mu: f64,
    sigma_e: f64,
    sigma_s: f64,
) -> (f64, f64) {
    if b == 0.0 {
        let c = ((lambda * sigma_e).powi(2) + (mu * sigma_s).powi(2)) / (2.0 * ell0);
        return (c, c);
    }
    let x = beta * ell0;
    // b e^{x}/(e^{x} − 1) and b/(e^{x} − 1).
    (b / -(-x).exp_m1(), b / x.exp_m1())
}

/// Truncated exponential law on `[0, ℓ₀]`; uniform when `β = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitLaw {
    pub beta: f64,
    pub ell0: f64,
}

impl LimitLaw {
    pub fn new(beta: f64, ell0: f64) -> Self {
        assert!(ell0 > 0.0, "ell0 must be positive");
        LimitLaw { beta, ell0 }
    }

    pub fn density(&self, x: f64) -> f64 {
        if !(0.0..=self.ell0).contains(&x) {
            return 0.0;
        }
        if self.beta == 0.0 {
            return 1.0 / self.ell0;
        }
        self.beta * (-self.beta * x).exp() / -(-self.beta * self.ell0).exp_m1()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= self.ell0 {
            return 1.0;
        }
        if self.beta == 0.0 {
            return x / self.ell0;
        }
        (-self.beta * x).exp_m1() / (-self.beta * self.ell0).exp_m1()
    }

    /// `∫_0^{ℓ₀} e^{θx} g(x) dx`.
    pub fn mgf(&self, theta: f64) -> f64 {
        let (b, l) = (self.beta, self.ell0);
        if theta == 0.0 {
            return 1.0;
        }
        if b == 0.0 {
            return (theta * l).exp_m1() / (theta * l);
        }
        let norm = b / -(-b * l).exp_m1();
        let k = theta - b;
        if k == 0.0 {
            norm * l
        } else {
            norm * (k * l).exp_m1() / k
        }
    }

    /// Point where `g(x) = slope`, if `g` is strictly monotone and hits it.
    fn solve_density(&self, slope: f64) -> Option<f64> {
        if self.beta == 0.0 || slope <= 0.0 {
            return None;
        }
        let norm = self.beta / -(-self.beta * self.ell0).exp_m1();
        let x = -(slope / norm).ln() / self.beta;
        x.is_finite().then_some(x)
    }
}

/// Kolmogorov distance between the law of `r(L + U)`, with `U` uniform on
/// `[0, 1)` and `L` distributed as `probs`, and `limit`.
///
/// Spreading each lattice level over a cell of width `r` removes the lattice
/// jumps; the boundary atoms stay inside the empirical CDF.
pub fn ks_continuity_corrected(probs: &[f64], r: f64, limit: &LimitLaw) -> f64 {
    let mut worst: f64 = 0.0;
    let mut below = 0.0;
    let mut check = |x: f64, emp: f64| worst = worst.max((emp - limit.cdf(x)).abs());
    for (n, &p) in probs.iter().enumerate() {
        let a = r * n as f64;
        let b = a + r;
        check(a, below);
        if p > 0.0 {
            let slope = p / r;
            let mut interior: Vec<f64> = limit.solve_density(slope).into_iter().collect();
            interior.push(limit.ell0);
            for x in interior {
                if x > a && x < b {
                    check(x, below + slope * (x - a));
                }
            }
        }
        below += p;
        check(b, below);
    }
    worst
}

/// Scaled family of finite-buffer queues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaledFamily {
    /// Arrival shape; its time unit is rescaled at every `r`.
    pub arrival: DistributionSpec,
    pub service: DistributionSpec,
    pub b: f64,
    pub ell0: f64,
    pub r_grid: Vec<f64>,
}

/// One member of the family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaledPoint {
    pub r: f64,
    pub lambda: f64,
    pub mu: f64,
    pub ell0: u64,
    pub model: FiniteQueueModel,
}

/// Limit quantities of a scaled family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitParams {
    pub lambda: f64,
    pub mu: f64,
    pub sigma_e: f64,
    pub sigma_s: f64,
    pub b: f64,
    pub ell0: f64,
    pub beta: f64,
    pub c_lower: f64,
    pub c_upper: f64,
}

impl ScaledFamily {
    pub fn validate(&self) -> Result<(), HeavyTrafficError> {
        if self.ell0.is_nan() || self.ell0 <= 0.0 {
            return Err(HeavyTrafficError::Family("ell0 must be positive".into()));
        }
        if self.r_grid.is_empty() {
            return Err(HeavyTrafficError::Family("r grid is empty".into()));
        }
        for &r in &self.r_grid {
            if !(r > 0.0 && r <= 1.0) {
                return Err(HeavyTrafficError::Family(format!("r = {r} outside (0, 1]")));
            }
            if (r * self.b).is_nan() || r * self.b >= 1.0 {
                return Err(HeavyTrafficError::Family(format!("r b = {} leaves no arrivals", r * self.b)));
            }
        }
        if self.r_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(HeavyTrafficError::Family("r grid must be strictly decreasing".into()));
        }
        Ok(())
    }

    pub fn at(&self, r: f64) -> Result<ScaledPoint, HeavyTrafficError> {
        let mu = self.service.rate();
        let lambda = mu * (1.0 - r * self.b);
        let ell0 = ((self.ell0 / r).round() as u64).max(1);
        let arrival = self.arrival.with_mean(1.0 / lambda)?;
        let model = FiniteQueueModel::new(arrival, self.service, ell0)?;
        Ok(ScaledPoint {
            r,
            lambda,
            mu,
            ell0,
            model,
        })
    }

    /// `λ = μ`; the arrival law at the limit keeps its shape with mean `1/μ`.
    pub fn limit(&self) -> Result<LimitParams, HeavyTrafficError> {
        let mu = self.service.rate();
        let lambda = mu;
        let sigma_e = self.arrival.with_mean(1.0 / lambda)?.variance().sqrt();
        let sigma_s = self.service.variance().sqrt();
        let beta = beta_of(self.b, lambda, mu, sigma_e, sigma_s)?;
        let (c_lower, c_upper) = boundary_asymptotics(self.b, beta, self.ell0, lambda, mu, sigma_e, sigma_s);
        Ok(LimitParams {
            lambda,
            mu,
            sigma_e,
            sigma_s,
            b: self.b,
            ell0: self.ell0,
            beta,
            c_lower,
            c_upper,
        })
    }
}

/// Simulated boundary and bulk behaviour at one `r`.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub r: f64,
    pub ell0: u64,
    pub lambda: f64,
    pub p0: EstimateWithCI,
    pub palm_full: EstimateWithCI,
    pub p0_ratio: f64,
    pub full_ratio: f64,
    pub ks: f64,
    pub events: u64,
    /// Time-average law of `L`.
    #[serde(skip)]
    pub law: Vec<f64>,
}

/// Acceptance bands of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepTolerances {
    pub p0_ratio: f64,
    pub full_ratio: f64,
    pub ks: f64,
}

impl Default for SweepTolerances {
    fn default() -> Self {
        SweepTolerances {
            p0_ratio: 0.15,
            full_ratio: 0.25,
            ks: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepVerdict {
    pub p0_ratio: bool,
    pub full_ratio: bool,
    pub ks_small: bool,
    pub ks_nonincreasing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub family: ScaledFamily,
    pub limit: LimitParams,
    pub points: Vec<SweepPoint>,
    pub tolerances: SweepTolerances,
    /// Judged at the smallest `r`.
    pub verdict: SweepVerdict,
}

impl SweepReport {
    pub fn ks_sequence(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.ks).collect()
    }

    pub fn finest(&self) -> &SweepPoint {
        self.points.last().expect("validated grid is nonempty")
    }
}

/// Settings of one sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    /// Measured events per `r`, after warmup.
    pub events_per_r: u64,
    pub warmup: f64,
    pub seed: u64,
    pub batches: usize,
}

impl SweepSettings {
    pub fn new(events_per_r: u64, seed: u64) -> Self {
        SweepSettings {
            events_per_r,
            warmup: 0.2,
            seed,
            batches: DEFAULT_BATCHES,
        }
    }
}

fn sweep_point(
    family: &ScaledFamily,
    limit: &LimitParams,
    k: usize,
    settings: &SweepSettings,
) -> Result<SweepPoint, HeavyTrafficError> {
    let r = family.r_grid[k];
    let point = family.at(r)?;
    let model: Model = point.model.clone().into();
    let mut cfg = RunConfig::measured_events(settings.events_per_r, settings.warmup, settings.seed);
    cfg.replication = k as u64;
    cfg.batches = settings.batches;
    let run = simulate(&model, &cfg, &mut [])?;
    let p0 = run.queue_law.probability(0, 0)?;
    let palm_full = crate::engine::blocked_arrival_fraction(&run)?;
    let law = run.queue_law.distribution(0);
    let ks = ks_continuity_corrected(&law, r, &LimitLaw::new(limit.beta, limit.ell0));
    Ok(SweepPoint {
        r,
        ell0: point.ell0,
        lambda: point.lambda,
        p0_ratio: p0.value / (limit.c_lower * r),
        full_ratio: palm_full.value / (limit.c_upper * r),
        p0,
        palm_full,
        ks,
        events: run.measured_events,
        law,
    })
}

/// Simulates every `r` of the grid in parallel and compares with the limit.
pub fn ht_sweep(
    family: &ScaledFamily,
    settings: &SweepSettings,
    tolerances: SweepTolerances,
) -> Result<SweepReport, HeavyTrafficError> {
    family.validate()?;
    let limit = family.limit()?;
    let points = (0..family.r_grid.len())
        .into_par_iter()
        .map(|k| sweep_point(family, &limit, k, settings))
        .collect::<Result<Vec<_>, _>>()?;
    let finest = points.last().expect("validated grid is nonempty");
    let verdict = SweepVerdict {
        p0_ratio: (finest.p0_ratio - 1.0).abs() <= tolerances.p0_ratio,
        full_ratio: (finest.full_ratio - 1.0).abs() <= tolerances.full_ratio,
        ks_small: finest.ks < tolerances.ks,
        ks_nonincreasing: points.windows(2).all(|w| w[1].ks <= w[0].ks),
    };
    Ok(SweepReport {
        family: family.clone(),
        limit,
        points,
        tolerances,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use std::f64::consts::E;

    #[test]
    fn beta_examples() {
        assert_eq!(beta_of(1.0, 1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(beta_of(0.0, 1.0, 1.0, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(beta_of(0.5, 1.0, 1.0, 0.0, 1.0).unwrap(), 1.0);
        assert!(matches!(beta_of(0.5, 1.0, 1.0, 0.0, 0.0), Err(HeavyTrafficError::ZeroVariance { .. })));
    }

    #[test]
    fn density_examples() {
        let g = LimitLaw::new(1.0, 2.0);
        assert!((g.density(0.0) - 1.0 / (1.0 - (-2.0f64).exp())).abs() < 1e-14);
        assert!((g.density(0.0) - 1.15652).abs() < 1e-5);
        let u = LimitLaw::new(0.0, 2.0);
        assert_eq!(u.density(1.3), 0.5);
        for &t in &[-1.0, 0.7, 3.0] {
            assert!((u.mgf(t) - ((2.0 * t).exp() - 1.0) / (2.0 * t)).abs() < 1e-13);
        }
        let near = LimitLaw::new(1e-8, 2.0);
        for &x in &[0.0, 0.5, 1.9] {
            assert!((near.density(x) - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn boundary_examples() {
        let (lo, hi) = boundary_asymptotics(0.0, 0.0, 2.0, 1.0, 1.0, 1.0, 1.0);
        assert_eq!((lo, hi), (0.5, 0.5));
        let (lo, hi) = boundary_asymptotics(1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 1.0);
        assert!((lo - E * E / (E * E - 1.0)).abs() < 1e-14);
        assert!((hi - 1.0 / (E * E - 1.0)).abs() < 1e-14);
        for &(b, beta) in &[(1.0, 1.0), (-0.7, -0.4), (2.5, 3.0)] {
            let (lo, hi) = boundary_asymptotics(b, beta, 1.7, 1.0, 1.0, 1.0, 1.0);
            assert!((lo - hi - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn law_properties_on_grid() {
        for &beta in &[-3.0, -0.5, 0.0, 1e-9, 0.8, 4.0] {
            for &l in &[0.5, 2.0, 5.0] {
                let g = LimitLaw::new(beta, l);
                let total = integrate(|x| g.density(x), 0.0, l, 1e-14);
                assert!((total - 1.0).abs() < 1e-12, "beta={beta} l={l}: {total}");
                assert!((g.cdf(l) - 1.0).abs() < 1e-15);
                for &t in &[-2.0, -1.0, 0.5, 2.0] {
                    if t == beta {
                        continue;
                    }
                    let numeric = integrate(|x| (t * x).exp() * g.density(x), 0.0, l, 1e-14);
                    assert!((g.mgf(t) - numeric).abs() < 1e-9 * numeric.max(1.0));
                    // The closed form in raw exponentials cancels badly for tiny β.
                    if beta.abs() > 1e-6 {
                        let closed = ((beta * l).exp() - (t * l).exp()) * beta
                            / (((beta * l).exp() - 1.0) * (beta - t));
                        assert!((g.mgf(t) - closed).abs() < 1e-9 * closed.abs().max(1.0));
                    }
                }
                let xs: Vec<f64> = (0..=20).map(|k| l * k as f64 / 20.0).collect();
                let ds: Vec<f64> = xs.iter().map(|&x| g.density(x)).collect();
                if beta > 0.0 {
                    assert!(ds.windows(2).all(|w| w[1] < w[0]));
                } else if beta < 0.0 {
                    assert!(ds.windows(2).all(|w| w[1] > w[0]));
                }
            }
        }
    }

    #[test]
    fn ks_of_exact_lattice_law() {
        // Uniform lattice law at ρ = 1 spreads to uniform on [0, r(ℓ+1)].
        let r = 0.05;
        let probs = vec![1.0 / 41.0; 41];
        let ks = ks_continuity_corrected(&probs, r, &LimitLaw::new(0.0, 2.0));
        assert!((ks - 1.0 / 41.0).abs() < 1e-12, "{ks}");
        // A point mass spread over one cell is far from any smooth law.
        let ks = ks_continuity_corrected(&[1.0], 1.0, &LimitLaw::new(0.0, 2.0));
        assert!((ks - 0.5).abs() < 1e-12);
    }

    #[test]
    fn family_realizes_rates_and_buffer() {
        let fam = ScaledFamily {
            arrival: DistributionSpec::exponential(1.0).unwrap(),
            service: DistributionSpec::exponential(1.0).unwrap(),
            b: 1.0,
            ell0: 2.0,
            r_grid: vec![0.2, 0.1, 0.05],
        };
        fam.validate().unwrap();
        let p = fam.at(0.05).unwrap();
        assert_eq!(p.ell0, 40);
        assert!((p.mu - p.lambda - 0.05).abs() < 1e-14);
        assert!((p.model.arrival.rate() - 0.95).abs() < 1e-14);
        let lim = fam.limit().unwrap();
        assert!((lim.beta - 1.0).abs() < 1e-14);
        let bad = ScaledFamily {
            r_grid: vec![0.1, 0.2],
            ..fam
        };
        assert!(bad.validate().is_err());
    }
}
