//! Exponents that make the jump terms of the exponential test function
//! vanish.
//!
//! All equations have the form `a · E[e^{−x (T ∧ c)}] = 1` with `x` unknown.
//! The map `x ↦ ln a + ln E[e^{−x (T ∧ c)}]` is strictly decreasing, so the
//! root is unique; it is bracketed by doubling from `[−1, 1]` and refined by
//! Brent's method.

use crate::engine::Model;
use crate::stochastics::DistributionSpec;

use super::BarError;

/// Bound on `|a·E[e^{−x(T∧c)}] − 1|` accepted at the returned root.
pub const EQUATION_TOLERANCE: f64 = 1e-9;
const BRACKET_LIMIT: f64 = 1e12;

/// `ln a + ln E[e^{−x (T ∧ c)}]`, `+∞` where the transform diverges.
fn log_equation(log_a: f64, x: f64, cutoff: f64, dist: &DistributionSpec) -> f64 {
    match dist.truncated_exp_moment(x, cutoff) {
        Ok(m) if m > 0.0 => log_a + m.ln(),
        Ok(_) => f64::NEG_INFINITY,
        Err(_) => f64::INFINITY,
    }
}

/// Unique root of `e^{log_a} E[e^{−x (T ∧ cutoff)}] = 1`.
pub fn solve_exponent(log_a: f64, cutoff: f64, dist: &DistributionSpec) -> Result<f64, BarError> {
    if log_a == 0.0 {
        return Ok(0.0);
    }
    let g = |x: f64| log_equation(log_a, x, cutoff, dist);
    let no_root = || BarError::NoRoot {
        log_scale: log_a,
        cutoff,
    };
    // g decreases, so the root lies below 0 when g(0) = log_a < 0.
    let (mut lo, mut hi) = (-1.0, 1.0);
    let (mut glo, mut ghi) = (g(lo), g(hi));
    while glo < 0.0 {
        hi = lo;
        ghi = glo;
        lo *= 2.0;
        if lo < -BRACKET_LIMIT {
            return Err(no_root());
        }
        glo = g(lo);
    }
    while ghi > 0.0 {
        lo = hi;
        glo = ghi;
        hi *= 2.0;
        if hi > BRACKET_LIMIT {
            return Err(no_root());
        }
        ghi = g(hi);
    }
    let x = brent(g, lo, hi, glo, ghi);
    let residual = (log_a.exp() * dist.truncated_exp_moment(x, cutoff).map_err(|_| no_root())? - 1.0).abs();
    if residual.is_finite() && residual <= EQUATION_TOLERANCE {
        Ok(x)
    } else {
        Err(no_root())
    }
}

/// Brent's method on a sign-changing bracket. Non-finite values at an end
/// force bisection steps.
fn brent<G: Fn(f64) -> f64>(g: G, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64) -> f64 {
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..300 {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 1e-300;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return b;
        }
        let finite = fa.is_finite() && fb.is_finite() && fc.is_finite();
        if finite && e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = g(b);
        if fb.is_nan() {
            fb = f64::INFINITY;
        }
    }
    b
}

/// `η` with `e^{θ} E[e^{−η (T_e ∧ cutoff)}] = 1`.
pub fn solve_eta(theta: f64, cutoff: f64, arrival: &DistributionSpec) -> Result<f64, BarError> {
    solve_exponent(theta, cutoff, arrival)
}

/// Per-station `η_i(θ_i)`; zero at stations without exogenous arrivals.
pub fn solve_eta_vector(model: &Model, theta: &[f64], cutoff: f64) -> Result<Vec<f64>, BarError> {
    check_len(model, theta)?;
    (0..model.stations())
        .map(|i| match model.arrival(i) {
            Some(a) => solve_eta(theta[i], cutoff, a),
            None => Ok(0.0),
        })
        .collect()
}

/// Per-station `ζ_i(θ)` with
/// `e^{−θ_i} (p_{i,0} + Σ_{i'} p_{i,i'} e^{θ_{i'}}) E[e^{−ζ_i (T_{s,i} ∧ cutoff)}] = 1`.
pub fn solve_zeta(model: &Model, theta: &[f64], cutoff: f64) -> Result<Vec<f64>, BarError> {
    check_len(model, theta)?;
    (0..model.stations())
        .map(|i| {
            let row = model.routing_row(i);
            let exit = (1.0 - row.iter().sum::<f64>()).max(0.0);
            let mix = exit + row.iter().zip(theta).map(|(p, t)| p * t.exp()).sum::<f64>();
            let (a, b) = (-theta[i], mix.ln());
            // Cancellation below rounding means the scale is exactly one.
            let log_a = if (a + b).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()) { 0.0 } else { a + b };
            solve_exponent(log_a, cutoff, model.service(i))
        })
        .collect()
}

fn check_len(model: &Model, theta: &[f64]) -> Result<(), BarError> {
    if theta.len() != model.stations() {
        return Err(BarError::Shape {
            expected: model.stations(),
            got: theta.len(),
        });
    }
    Ok(())
}

/// Coefficients of `η(rθ) ≈ λθ·r + ½λ³σ²θ²·r²`.
pub fn eta_expansion(theta: f64, arrival: &DistributionSpec) -> (f64, f64) {
    let lambda = arrival.rate();
    (lambda * theta, 0.5 * lambda.powi(3) * arrival.variance() * theta * theta)
}

/// Coefficients of `ζ(rθ) ≈ −μθ·r + ½μ³σ²θ²·r²` for a station without
/// feedback.
pub fn zeta_expansion(theta: f64, service: &DistributionSpec) -> (f64, f64) {
    let mu = service.rate();
    (-mu * theta, 0.5 * mu.powi(3) * service.variance() * theta * theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkModel;
    use proptest::prelude::*;

    fn exp(rate: f64) -> DistributionSpec {
        DistributionSpec::exponential(rate).unwrap()
    }

    #[test]
    fn zero_theta_gives_zero() {
        for d in [exp(1.0), DistributionSpec::erlang(3, 2.0).unwrap()] {
            assert_eq!(solve_eta(0.0, 10.0, &d).unwrap(), 0.0);
        }
        let model: Model = NetworkModel::single_station(exp(1.0), exp(2.0)).into();
        assert_eq!(solve_zeta(&model, &[0.0], 5.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn exponential_closed_forms() {
        for &theta in &[-2.0, -0.5, -0.01] {
            let eta = solve_eta(theta, f64::INFINITY, &exp(1.5)).unwrap();
            assert!((eta - 1.5 * theta.exp_m1()).abs() < 1e-12, "{eta}");
        }
        let model: Model = NetworkModel::single_station(exp(1.0), exp(2.0)).into();
        for &theta in &[-1.0, -0.3] {
            let zeta = solve_zeta(&model, &[theta], f64::INFINITY).unwrap()[0];
            assert!((zeta - 2.0 * (-theta).exp_m1()).abs() < 1e-12, "{zeta}");
        }
    }

    #[test]
    fn deterministic_eta_is_linear() {
        let d = DistributionSpec::deterministic(2.0).unwrap();
        for &theta in &[-1.0, 0.3, 2.0] {
            assert!((solve_eta(theta, 5.0, &d).unwrap() - theta / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn divergent_untruncated_transform_has_no_root() {
        let d = DistributionSpec::log_normal(0.0, 0.5).unwrap();
        assert!(matches!(solve_eta(-0.5, f64::INFINITY, &d), Err(BarError::NoRoot { .. })));
        assert!(solve_eta(-0.5, 4.0, &d).is_ok());
    }

    #[test]
    fn expansion_remainder_shrinks() {
        let d = DistributionSpec::erlang(2, 2.0).unwrap();
        let (a, b) = eta_expansion(1.0, &d);
        let ratios: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&r: &f64| (solve_eta(r, 1.0 / r, &d).unwrap() - (a * r + b * r * r)).abs() / (r * r))
            .collect();
        assert!(ratios[0] > 1.5 * ratios[1] && ratios[1] > 1.5 * ratios[2], "{ratios:?}");
        // Erlang(2, 2): η(x) = 2(e^{x/2} − 1) exactly when uncut.
        let exact = 2.0 * (0.05f64).exp_m1();
        assert!((solve_eta(0.1, f64::INFINITY, &d).unwrap() - exact).abs() < 1e-12);
    }

    fn dist() -> impl Strategy<Value = DistributionSpec> {
        prop_oneof![
            (0.2f64..5.0).prop_map(exp),
            (1u32..5, 0.5f64..4.0).prop_map(|(k, r)| DistributionSpec::erlang(k, r).unwrap()),
            (0.1f64..0.9, 0.3f64..3.0, 0.3f64..3.0)
                .prop_map(|(p, a, b)| DistributionSpec::hyperexponential2(p, a, b).unwrap()),
            (0.05f64..1.0, 0.1f64..2.0).prop_map(|(lo, w)| DistributionSpec::uniform(lo, lo + w).unwrap()),
            (-0.5f64..0.5, 0.1f64..1.0).prop_map(|(m, s)| DistributionSpec::log_normal(m, s).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn roots_are_unique_sign_changes(d in dist(), theta in -2.0f64..2.0, r in 0.05f64..1.0) {
            let c = 1.0 / r;
            let x = solve_eta(theta, c, &d).unwrap();
            let res = |y: f64| theta.exp() * d.truncated_exp_moment(y, c).unwrap() - 1.0;
            prop_assert!(res(x).abs() <= EQUATION_TOLERANCE);
            prop_assert!(res(x - 1e-6) > 0.0);
            prop_assert!(res(x + 1e-6) < 0.0);
        }
    }
}
