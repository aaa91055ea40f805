//! Special functions for the mode sums: integer zeta values, a whole family of
//! polylogarithms `Li_1..Li_S` at one argument, and `J0`, `J1` for small complex
//! arguments.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;

/// Highest polylogarithm order the coefficient table supports.
pub const MAX_ORDER: usize = 40;
const SERIES_TERMS: usize = 110;

/// `ζ(n)` for integer `n ≥ 2` (Euler–Maclaurin with four Bernoulli corrections).
pub fn zeta_int(n: usize) -> f64 {
    assert!(n >= 2, "zeta pole at 1");
    const CUT: usize = 64;
    let s = n as f64;
    let mut acc = 0.0;
    for k in (1..CUT).rev() {
        acc += (k as f64).powf(-s);
    }
    let kk = CUT as f64;
    acc += kk.powf(1.0 - s) / (s - 1.0) + 0.5 * kk.powf(-s);
    // B_2j/(2j)! · s(s+1)…(s+2j−2) · K^{-s-2j+1}
    let bernoulli = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0];
    let mut rising = s;
    let mut fact = 2.0;
    for (j, b) in bernoulli.iter().enumerate() {
        let two_j = 2.0 * (j as f64 + 1.0);
        acc += b / fact * rising * kk.powf(-s - two_j + 1.0);
        rising *= (s + two_j - 1.0) * (s + two_j);
        fact *= (two_j + 1.0) * (two_j + 2.0);
    }
    acc
}

/// `ζ(s−k)/k!` for the expansion of `Li_s(e^μ)` around `μ = 0` (entry `k = s−1` unused).
fn expansion_table() -> &'static Vec<Vec<f64>> {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let positive: Vec<f64> = (0..=2 * SERIES_TERMS + 2)
            .map(|n| if n >= 2 { zeta_int(n) } else { f64::NAN })
            .collect();
        let mut table = vec![vec![0.0; SERIES_TERMS]; MAX_ORDER + 1];
        for (s, row) in table.iter_mut().enumerate().skip(1) {
            let mut inv_fact = 1.0;
            for (k, slot) in row.iter_mut().enumerate() {
                if k > 0 {
                    inv_fact /= k as f64;
                }
                let arg = s as i64 - k as i64;
                *slot = if arg >= 2 {
                    positive[arg as usize] * inv_fact
                } else if arg == 1 {
                    0.0
                } else if arg == 0 {
                    -0.5 * inv_fact
                } else if (-arg) % 2 == 0 {
                    0.0
                } else {
                    // ζ(1−2m) = (−1)^m 2 (2m−1)! ζ(2m) / (2π)^{2m}; divide by k! as a product
                    let m = ((1 - arg) / 2) as usize;
                    let mut ratio = 1.0;
                    for f in 2 * m..=k {
                        ratio /= f as f64;
                    }
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    sign * 2.0 * positive[2 * m] * ratio / (2.0 * PI).powi(2 * m as i32)
                };
            }
        }
        table
    })
}

/// Fills `out[s−1] = Li_s(e^μ)` for `s = 1..=out.len()`.
///
/// Requires `Re μ ≤ 0` and `|Im μ| ≤ π`. At `μ = 0`, `Li_1` is returned as `+∞`.
pub fn polylog_family(mu: Complex64, out: &mut [Complex64]) {
    let orders = out.len();
    assert!(orders <= MAX_ORDER, "polylog order {orders} beyond table");
    debug_assert!(mu.re <= 1e-14 && mu.im.abs() <= PI + 1e-12);
    out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));

    if mu.re < -1.0 {
        let w = mu.exp();
        let mut power = w;
        let mut n = 1.0;
        while power.norm() > 1e-18 {
            let inv = 1.0 / n;
            let mut term = power;
            for v in out.iter_mut() {
                term *= inv;
                *v += term;
            }
            power *= w;
            n += 1.0;
        }
        return;
    }

    if mu.norm() == 0.0 {
        out[0] = Complex64::new(f64::INFINITY, 0.0);
        for (s, v) in out.iter_mut().enumerate().skip(1) {
            *v = Complex64::new(zeta_int(s + 1), 0.0);
        }
        return;
    }

    let table = expansion_table();
    // beyond k = s the coefficients decay like (2π)^{−k}
    let ratio = mu.norm() / (2.0 * PI);
    let terms = (orders + 2 + (-41.0 / ratio.ln()).ceil() as usize).min(SERIES_TERMS);
    let mut powers = [Complex64::new(0.0, 0.0); SERIES_TERMS];
    powers[0] = Complex64::new(1.0, 0.0);
    for k in 1..terms {
        powers[k] = powers[k - 1] * mu;
    }
    let log_neg = (-mu).ln();
    let mut harmonic = 0.0;
    let mut inv_fact = 1.0;
    for (idx, v) in out.iter_mut().enumerate() {
        let s = idx + 1;
        if s > 1 {
            harmonic += 1.0 / (s - 1) as f64;
            inv_fact /= (s - 1) as f64;
        }
        let row = &table[s];
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..terms {
            if k + 1 != s {
                acc += powers[k] * row[k];
            }
        }
        acc += powers[s - 1] * inv_fact * (harmonic - log_neg);
        *v = acc;
    }
}

/// `J0(z)` and `J1(z)` by their power series; accurate for `|z| ≲ 8`.
pub fn bessel_j01(z: Complex64) -> (Complex64, Complex64) {
    let q = -0.25 * z * z;
    let mut t0 = Complex64::new(1.0, 0.0);
    let mut t1 = Complex64::new(1.0, 0.0);
    let mut j0 = t0;
    let mut j1 = t1;
    for m in 1..80 {
        let fm = m as f64;
        t0 *= q / (fm * fm);
        t1 *= q / (fm * (fm + 1.0));
        j0 += t0;
        j1 += t1;
        if t0.norm() < 1e-18 * j0.norm().max(1e-300) && t1.norm() < 1e-18 * j1.norm().max(1e-300) {
            break;
        }
    }
    (j0, 0.5 * z * j1)
}

/// Gauss–Legendre nodes and weights on `[a, b]` (Newton iteration on `P_n`).
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "at least one node");
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            // P_n(x) and P_n'(x) by the three-term recurrence
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pm) / (x * x - 1.0);
            let step = pn / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = mid - half * x;
        nodes[n - 1 - i] = mid + half * x;
        weights[i] = half * w;
        weights[n - 1 - i] = half * w;
    }
    (nodes, weights)
}
