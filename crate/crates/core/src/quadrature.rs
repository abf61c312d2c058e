//! Small numerical integration helpers.
//!
//! Adaptive Gauss–Kronrod (7/15) for smooth integrands on finite intervals,
//! and fixed 3-point Gauss–Legendre panels for cross-checking closed forms.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        // Gauss nodes are the odd-indexed Kronrod nodes.
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive G7K15 integration of `f` over `[a, b]` to absolute tolerance
/// `tol`. Panels whose error is at rounding level relative to their value
/// are accepted, and the estimate is returned even if the subdivision budget
/// runs out.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    const MAX_PANELS: usize = 20_000;
    let mut stack = vec![(a, b, tol, 0u32)];
    let mut total = 0.0;
    let mut compensation = 0.0;
    let mut panels = 0;
    while let Some((lo, hi, eps, depth)) = stack.pop() {
        let (value, err) = kronrod_panel(&f, lo, hi);
        panels += 1;
        let floor = 1e-15 * value.abs();
        if err <= eps.max(floor)
            || depth >= 40
            || panels + stack.len() >= MAX_PANELS
            || (hi - lo).abs() < 1e-14 * (1.0 + lo.abs())
        {
            // Neumaier summation keeps many small panels from losing digits.
            let t = total + value;
            if total.abs() >= value.abs() {
                compensation += (total - t) + value;
            } else {
                compensation += (value - t) + total;
            }
            total = t;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * eps, depth + 1));
            stack.push((mid, hi, 0.5 * eps, depth + 1));
        }
    }
    total + compensation
}

/// Composite 3-point Gauss–Legendre rule with `panels` equal panels.
pub fn gauss3<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let node = (0.6f64).sqrt();
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for k in 0..panels {
        let c = a + (k as f64 + 0.5) * h;
        let half = 0.5 * h;
        sum += half
            * (5.0 / 9.0 * f(c - node * half) + 8.0 / 9.0 * f(c) + 5.0 / 9.0 * f(c + node * half));
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_exponential() {
        let v = integrate(|x| x * x, 0.0, 3.0, 1e-13);
        assert!((v - 9.0).abs() < 1e-12);
        let v = integrate(f64::exp, -1.0, 2.0, 1e-13);
        assert!((v - (2f64.exp() - (-1f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn sharp_gaussian() {
        let s = 0.01f64;
        let v = integrate(|x| (-(x * x) / (2.0 * s * s)).exp(), -1.0, 1.0, 1e-13);
        let exact = s * (2.0 * std::f64::consts::PI).sqrt();
        assert!((v - exact).abs() < 1e-12, "{v} vs {exact}");
    }

    #[test]
    fn gauss3_is_exact_for_quintics() {
        let v = gauss3(|x| x.powi(5) - 2.0 * x.powi(4) + x, 0.0, 1.0, 1);
        let exact = 1.0 / 6.0 - 2.0 / 5.0 + 0.5;
        assert!((v - exact).abs() < 1e-14);
    }
}
