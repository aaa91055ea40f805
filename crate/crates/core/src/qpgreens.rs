//! Periodic half-space Green's functions with a sound-soft wall at `x_d = 0`.
//!
//! Points are `[lateral, height]`. The periodic Laplace kernel has the closed form
//! `(1/4π) ln(sinh²(π z_d/L) + sin²(π z_ℓ/L))` up to a constant that cancels against
//! the image term. The Helmholtz kernel is that closed form plus a smooth correction
//! `D = G_#^k − G_#^0` whose mode series is accelerated by expanding every evanescent
//! mode in powers of `k²`. Each power sums in closed form through polylogarithms, so
//! only a handful of raw modes remain and the truncation error has a rigorous bound.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::special::{polylog_family, zeta_int};

const DEFAULT_TOLERANCE: f64 = 1e-12;
/// Radius of the Cauchy circle `|k²| = θ η²` used in the tail bound.
const CAUCHY_FRACTION: f64 = 0.8;
const MAX_EXPANSION_ORDER: usize = 9;
const MAX_RAW_MODES: usize = 256;

/// Lattice period and mode-sum tolerance. Normal incidence only (quasi-momentum zero).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeConfig {
    pub period: f64,
    pub tolerance: f64,
}

impl LatticeConfig {
    pub fn new(period: f64) -> Result<Self> {
        Self::with_tolerance(period, DEFAULT_TOLERANCE)
    }

    pub fn with_tolerance(period: f64, tolerance: f64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidInput(format!("lattice period must be positive, got {period}")));
        }
        if !(tolerance > 0.0) {
            return Err(Error::InvalidInput(format!("mode-sum tolerance must be positive, got {tolerance}")));
        }
        Ok(Self { period, tolerance })
    }

    /// Length of the unit cell.
    pub fn cell_measure(&self) -> f64 {
        self.period
    }

    /// Smallest nonzero reciprocal wavenumber `2π/L`; `Re k` must stay below it.
    pub fn cutoff(&self) -> f64 {
        2.0 * PI / self.period
    }
}

/// `ln(sinh²(π z_d/L) + sin²(π z_ℓ/L))`, stable for large heights.
pub fn log_kernel(z: [f64; 2], period: f64) -> f64 {
    let u = PI * z[1] / period;
    let v = PI * z[0] / period;
    if u.abs() <= 1.0 {
        let (sh, s) = (u.sinh(), v.sin());
        (sh * sh + s * s).ln()
    } else {
        let au = u.abs();
        let e2 = (-2.0 * au).exp();
        2.0 * au - 4f64.ln() + (e2 * e2 - 2.0 * e2 * (2.0 * v).cos()).ln_1p()
    }
}

/// Gradient of [`log_kernel`] with respect to `z`.
pub fn log_kernel_grad(z: [f64; 2], period: f64) -> [f64; 2] {
    let u = PI * z[1] / period;
    let v = PI * z[0] / period;
    let scale = PI / period;
    if u.abs() <= 1.0 {
        let (sh, s) = (u.sinh(), v.sin());
        let f = sh * sh + s * s;
        [scale * (2.0 * v).sin() / f, scale * (2.0 * u).sinh() / f]
    } else {
        let e2 = (-2.0 * u.abs()).exp();
        let q = 1.0 + e2 * e2 - 2.0 * e2 * (2.0 * v).cos();
        [
            scale * 4.0 * e2 * (2.0 * v).sin() / q,
            scale * 2.0 * u.signum() * (1.0 - e2 * e2) / q,
        ]
    }
}

fn reduce_lateral(lateral: f64, period: f64) -> f64 {
    lateral - period * (lateral / period).round()
}

fn image_offsets(x: [f64; 2], y: [f64; 2]) -> ([f64; 2], [f64; 2]) {
    ([x[0] - y[0], x[1] - y[1]], [x[0] - y[0], x[1] + y[1]])
}

fn check_distinct(z: [f64; 2], period: f64) -> Result<()> {
    if z[1] == 0.0 && reduce_lateral(z[0], period) == 0.0 {
        Err(Error::CoincidentPoints)
    } else {
        Ok(())
    }
}

/// Sound-soft periodic Laplace Green's function.
pub fn laplace_gs(x: [f64; 2], y: [f64; 2], cfg: &LatticeConfig) -> Result<f64> {
    let (direct, image) = image_offsets(x, y);
    check_distinct(direct, cfg.period)?;
    Ok((log_kernel(direct, cfg.period) - log_kernel(image, cfg.period)) / (4.0 * PI))
}

/// Gradient in `x` of [`laplace_gs`].
pub fn laplace_gs_grad(x: [f64; 2], y: [f64; 2], cfg: &LatticeConfig) -> Result<[f64; 2]> {
    let (direct, image) = image_offsets(x, y);
    check_distinct(direct, cfg.period)?;
    let a = log_kernel_grad(direct, cfg.period);
    let b = log_kernel_grad(image, cfg.period);
    Ok([(a[0] - b[0]) / (4.0 * PI), (a[1] - b[1]) / (4.0 * PI)])
}

/// Wavenumber with its outgoing propagating branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaveParams {
    pub k: Complex64,
    /// Vertical wavenumber of the zeroth mode: `±k` with `Im ≥ 0`, and `Re > 0` when real.
    pub beta0: Complex64,
}

impl WaveParams {
    pub fn new(k: Complex64, cfg: &LatticeConfig) -> Result<Self> {
        if !(k.re.is_finite() && k.im.is_finite()) || k.norm() == 0.0 {
            return Err(Error::InvalidInput(format!("wavenumber must be finite and nonzero, got {k}")));
        }
        if k.re <= 0.0 {
            return Err(Error::InvalidInput(format!("wavenumber needs Re k > 0, got {k}")));
        }
        if k.re >= cfg.cutoff() {
            return Err(Error::MultiplePropagatingModes { re_k: k.re, cutoff: cfg.cutoff() });
        }
        let beta0 = if k.im < 0.0 || (k.im == 0.0 && k.re < 0.0) { -k } else { k };
        Ok(Self { k, beta0 })
    }

    /// Decaying vertical wavenumber `√(η² − k²)` (principal branch) of mode `η`.
    pub fn decay_rate(&self, eta: f64) -> Complex64 {
        (Complex64::new(eta * eta, 0.0) - self.k * self.k).sqrt()
    }
}

/// Truncation plan of the accelerated mode series: `raw_modes` modes are summed
/// directly and the rest through the first `order` powers of `k²`.
#[derive(Clone, Debug, PartialEq)]
pub struct KummerPlan {
    period: f64,
    order: usize,
    raw_modes: usize,
    kappa_max: f64,
    tail: f64,
    /// `coef[p][j]`: weight of `h^j / η^{2p+1−j}` in the `p`-th `k²`-derivative of `e^{−γh}/γ`.
    coef: Vec<Vec<f64>>,
}

fn expansion_coefficients(order: usize) -> Vec<Vec<f64>> {
    let mut coef = vec![vec![1.0]];
    for p in 0..order {
        let prev = &coef[p];
        let mut next = vec![0.0; p + 2];
        for (j, c) in prev.iter().enumerate() {
            let m = (2 * p + 1 - j) as f64;
            next[j + 1] += 0.5 * c;
            next[j] += 0.5 * m * c;
        }
        coef.push(next);
    }
    coef
}

/// Bound on the neglected part of the mode sums for both value and gradient.
fn tail_bound(period: f64, kappa: f64, raw_modes: usize, order: usize) -> f64 {
    let eta1 = 2.0 * PI / period;
    let root = (1.0 - CAUCHY_FRACTION).sqrt();
    let mut total = 0.0;
    let mut n = raw_modes + 1;
    loop {
        let eta = eta1 * n as f64;
        let q = kappa / (CAUCHY_FRACTION * eta * eta);
        if q >= 1.0 {
            return f64::INFINITY;
        }
        let geometric = q.powi(order as i32 + 1) / (1.0 - q);
        let term = geometric * (1.0 / (eta * root)).max(1.0 / root);
        total += term;
        if term < 1e-3 * total * f64::EPSILON || term == 0.0 {
            break;
        }
        n += 1;
    }
    // image and direct contributions, mode weight 1/L
    2.0 * total / period
}

impl KummerPlan {
    /// Cheapest plan meeting `tolerance` for every `|k| ≤ k_max`.
    pub fn new(period: f64, k_max: f64, tolerance: f64) -> Result<Self> {
        let kappa = k_max * k_max;
        for raw_modes in 0..=MAX_RAW_MODES {
            for order in 1..=MAX_EXPANSION_ORDER {
                let tail = tail_bound(period, kappa, raw_modes, order);
                if tail <= tolerance {
                    return Ok(Self::build(period, kappa, raw_modes, order, tail));
                }
            }
        }
        Err(Error::InvalidInput(format!(
            "mode-sum tolerance {tolerance} unreachable for |k| = {k_max}"
        )))
    }

    /// Plan with a prescribed split, for convergence audits.
    pub fn with_split(period: f64, k_max: f64, raw_modes: usize, order: usize) -> Result<Self> {
        if !(1..=MAX_EXPANSION_ORDER).contains(&order) {
            return Err(Error::InvalidInput(format!("expansion order must lie in 1..={MAX_EXPANSION_ORDER}")));
        }
        let kappa = k_max * k_max;
        let tail = tail_bound(period, kappa, raw_modes, order);
        Ok(Self::build(period, kappa, raw_modes, order, tail))
    }

    fn build(period: f64, kappa_max: f64, raw_modes: usize, order: usize, tail: f64) -> Self {
        Self { period, order, raw_modes, kappa_max, tail, coef: expansion_coefficients(order) }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn raw_modes(&self) -> usize {
        self.raw_modes
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Guaranteed bound on the truncation error of values and gradients.
    pub fn tail(&self) -> f64 {
        self.tail
    }

    /// Writes `Φ_p(z) = Σ_{n≥1} cos(η_n z_ℓ) t_p(η_n, h)` and its partial derivatives in
    /// `z_ℓ` and `h` for `p = 1..=order`, where `t_p` is the `p`-th `k²`-derivative of
    /// `e^{−γh}/γ` at `k = 0`. These depend only on geometry, never on `k`.
    pub fn expansion_terms(&self, lateral: f64, h: f64, val: &mut [f64], d_lat: &mut [f64], d_h: &mut [f64]) {
        let order = self.order;
        let lat = reduce_lateral(lateral, self.period);
        let scale = self.period / (2.0 * PI);
        if h == 0.0 && lat == 0.0 {
            for p in 1..=order {
                val[p - 1] = scale.powi(2 * p as i32 + 1) * zeta_int(2 * p + 1) * self.coef[p][0];
                d_lat[p - 1] = 0.0;
                d_h[p - 1] = 0.0;
            }
            return;
        }
        let mu = Complex64::new(-h, lat) / scale;
        let mut li = [Complex64::new(0.0, 0.0); 2 * MAX_EXPANSION_ORDER + 1];
        polylog_family(mu, &mut li[..2 * order + 1]);
        let mut scale_pow = [1.0; 2 * MAX_EXPANSION_ORDER + 2];
        let mut h_pow = [1.0; MAX_EXPANSION_ORDER + 1];
        for i in 1..scale_pow.len() {
            scale_pow[i] = scale_pow[i - 1] * scale;
        }
        for i in 1..h_pow.len() {
            h_pow[i] = h_pow[i - 1] * h;
        }
        for p in 1..=order {
            let (mut v, mut dl, mut dh) = (0.0, 0.0, 0.0);
            for (j, &c) in self.coef[p].iter().enumerate() {
                let m = 2 * p + 1 - j;
                let hi = c * h_pow[j];
                v += hi * scale_pow[m] * li[m - 1].re;
                dl -= hi * scale_pow[m - 1] * li[m - 2].im;
                dh -= hi * scale_pow[m - 1] * li[m - 2].re;
                if j > 0 {
                    dh += c * j as f64 * h_pow[j - 1] * scale_pow[m] * li[m - 1].re;
                }
            }
            val[p - 1] = v;
            d_lat[p - 1] = dl;
            d_h[p - 1] = dh;
        }
    }
}

/// Wave-dependent part of the correction `D = G_#^k − G_#^0`, reusable across many
/// evaluation points that share one [`KummerPlan`].
#[derive(Clone, Debug)]
pub struct CorrectionSeries {
    wave: WaveParams,
    period: f64,
    /// `k^{2p}/p!` for `p = 1..=order`.
    weights: Vec<Complex64>,
    modes: Vec<RawMode>,
    coef: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
struct RawMode {
    eta: f64,
    gamma: Complex64,
    /// `η^{−m}` for `m = 0..=2·order+1`.
    inv_pow: Vec<f64>,
}

/// Value and partial derivatives `(∂_ℓ, ∂_h)` of the correction at one offset.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CorrectionValue {
    pub value: Complex64,
    pub d_lat: Complex64,
    pub d_h: Complex64,
}

impl std::ops::Sub for CorrectionValue {
    type Output = CorrectionValue;
    fn sub(self, o: Self) -> Self {
        Self { value: self.value - o.value, d_lat: self.d_lat - o.d_lat, d_h: self.d_h - o.d_h }
    }
}

impl CorrectionSeries {
    pub fn new(wave: WaveParams, plan: &KummerPlan) -> Result<Self> {
        let kappa = wave.k * wave.k;
        if kappa.norm() > plan.kappa_max * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "|k| = {} exceeds the wavenumber range of the mode-sum plan ({})",
                wave.k.norm(),
                plan.kappa_max.sqrt()
            )));
        }
        let mut weights = Vec::with_capacity(plan.order);
        let mut w = Complex64::new(1.0, 0.0);
        for p in 1..=plan.order {
            w *= kappa / p as f64;
            weights.push(w);
        }
        let eta1 = 2.0 * PI / plan.period;
        let modes = (1..=plan.raw_modes)
            .map(|n| {
                let eta = eta1 * n as f64;
                let inv_pow = (0..=2 * plan.order + 1).map(|m| eta.powi(-(m as i32))).collect();
                RawMode { eta, gamma: wave.decay_rate(eta), inv_pow }
            })
            .collect();
        Ok(Self { wave, period: plan.period, weights, modes, coef: plan.coef.clone() })
    }

    pub fn wave(&self) -> WaveParams {
        self.wave
    }

    /// `k^{2p}/p!` multiplying the expansion terms.
    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    /// Zeroth mode plus the directly summed modes (minus their expansion), i.e. the
    /// correction without the closed-form expansion terms.
    pub fn direct_part(&self, lateral: f64, h: f64) -> CorrectionValue {
        let l = self.period;
        let beta = self.wave.beta0;
        let i = Complex64::i();
        let prop = (i * beta * h).exp();
        let mut out = CorrectionValue {
            value: prop / (2.0 * i * beta * l) - h / (2.0 * l),
            d_lat: Complex64::new(0.0, 0.0),
            d_h: (prop - 1.0) / (2.0 * l),
        };
        if self.modes.is_empty() {
            return out;
        }
        let mut pows = [1.0; MAX_EXPANSION_ORDER + 2];
        for j in 1..pows.len() {
            pows[j] = pows[j - 1] * h;
        }
        let (mut series, mut series_lat, mut series_h) =
            (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for mode in &self.modes {
            let (eta, gamma) = (mode.eta, mode.gamma);
            let eg = (-gamma * h).exp();
            let ee = (-eta * h).exp();
            let mut rem = eg / gamma - ee / eta;
            let mut rem_h = ee - eg;
            for (p, w) in self.weights.iter().enumerate() {
                let (mut t, mut t_h) = (0.0, 0.0);
                for (j, &c) in self.coef[p + 1].iter().enumerate() {
                    let inv = mode.inv_pow[2 * p + 3 - j];
                    t += c * pows[j] * inv;
                    t_h -= c * eta * pows[j] * inv;
                    if j > 0 {
                        t_h += c * j as f64 * pows[j - 1] * inv;
                    }
                }
                rem -= w * (ee * t);
                rem_h -= w * (ee * t_h);
            }
            let (s, c) = (eta * lateral).sin_cos();
            series += c * rem;
            series_lat -= eta * s * rem;
            series_h += c * rem_h;
        }
        out.value -= series / l;
        out.d_lat -= series_lat / l;
        out.d_h -= series_h / l;
        out
    }

    /// `−(1/L) Σ_p w_p x_p` for any linear combination `x_p` of expansion terms.
    pub fn expansion_part(&self, terms: &[f64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (w, t) in self.weights.iter().zip(terms) {
            acc += w * t;
        }
        -acc / self.period
    }

    /// Correction at lateral offset `lateral` and height difference `h ≥ 0`, given the
    /// expansion terms of the plan at the same offset.
    pub fn evaluate(&self, lateral: f64, h: f64, phi: &[f64], phi_lat: &[f64], phi_h: &[f64]) -> CorrectionValue {
        let mut out = self.direct_part(lateral, h);
        out.value += self.expansion_part(phi);
        out.d_lat += self.expansion_part(phi_lat);
        out.d_h += self.expansion_part(phi_h);
        out
    }
}

/// Sound-soft periodic Helmholtz kernel for one wavenumber, with its truncation plan.
#[derive(Clone, Debug)]
pub struct HelmholtzKernel {
    plan: KummerPlan,
    series: CorrectionSeries,
}

impl HelmholtzKernel {
    pub fn new(k: Complex64, cfg: &LatticeConfig) -> Result<Self> {
        let wave = WaveParams::new(k, cfg)?;
        let plan = KummerPlan::new(cfg.period, k.norm(), cfg.tolerance)?;
        Self::with_plan(wave, plan)
    }

    pub fn with_plan(wave: WaveParams, plan: KummerPlan) -> Result<Self> {
        let series = CorrectionSeries::new(wave, &plan)?;
        Ok(Self { plan, series })
    }

    pub fn plan(&self) -> &KummerPlan {
        &self.plan
    }

    /// Reported truncation tolerance of values and gradients.
    pub fn tolerance(&self) -> f64 {
        self.plan.tail
    }

    fn correction(&self, z: [f64; 2]) -> CorrectionValue {
        let n = self.plan.order;
        let mut buf = [0.0; 3 * MAX_EXPANSION_ORDER];
        let (phi, rest) = buf.split_at_mut(MAX_EXPANSION_ORDER);
        let (phi_lat, phi_h) = rest.split_at_mut(MAX_EXPANSION_ORDER);
        let h = z[1].abs();
        self.plan.expansion_terms(z[0], h, &mut phi[..n], &mut phi_lat[..n], &mut phi_h[..n]);
        self.series.evaluate(z[0], h, &phi[..n], &phi_lat[..n], &phi_h[..n])
    }

    pub fn value(&self, x: [f64; 2], y: [f64; 2]) -> Result<Complex64> {
        let (direct, image) = image_offsets(x, y);
        let period = self.plan.period;
        check_distinct(direct, period)?;
        let laplace = (log_kernel(direct, period) - log_kernel(image, period)) / (4.0 * PI);
        Ok(laplace + self.correction(direct).value - self.correction(image).value)
    }

    pub fn gradient(&self, x: [f64; 2], y: [f64; 2]) -> Result<[Complex64; 2]> {
        let (direct, image) = image_offsets(x, y);
        let period = self.plan.period;
        check_distinct(direct, period)?;
        let a = log_kernel_grad(direct, period);
        let b = log_kernel_grad(image, period);
        let cd = self.correction(direct);
        let ci = self.correction(image);
        Ok([
            (a[0] - b[0]) / (4.0 * PI) + cd.d_lat - ci.d_lat,
            (a[1] - b[1]) / (4.0 * PI) + sign(direct[1]) * cd.d_h - sign(image[1]) * ci.d_h,
        ])
    }
}

/// `signum` with `sign(0) = 0`, matching the even extension of functions of `|z_d|`.
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sound-soft periodic Helmholtz Green's function.
pub fn helmholtz_gs(x: [f64; 2], y: [f64; 2], k: Complex64, cfg: &LatticeConfig) -> Result<Complex64> {
    HelmholtzKernel::new(k, cfg)?.value(x, y)
}

/// Gradient in `x` of [`helmholtz_gs`].
pub fn helmholtz_gs_grad(x: [f64; 2], y: [f64; 2], k: Complex64, cfg: &LatticeConfig) -> Result<[Complex64; 2]> {
    HelmholtzKernel::new(k, cfg)?.gradient(x, y)
}

/// Unaccelerated spectral series of the sound-soft kernel truncated at `modes` modes;
/// `k = None` selects Laplace. Only useful as a convergence reference.
pub fn spectral_series(
    x: [f64; 2],
    y: [f64; 2],
    k: Option<Complex64>,
    cfg: &LatticeConfig,
    modes: usize,
) -> Result<Complex64> {
    let (direct, image) = image_offsets(x, y);
    check_distinct(direct, cfg.period)?;
    let l = cfg.period;
    let wave = k.map(|k| WaveParams::new(k, cfg)).transpose()?;
    let periodic = |z: [f64; 2]| {
        let h = z[1].abs();
        let mut acc = match wave {
            Some(w) => (Complex64::i() * w.beta0 * h).exp() / (2.0 * Complex64::i() * w.beta0 * l),
            None => Complex64::new(h / (2.0 * l), 0.0),
        };
        for n in 1..=modes {
            let eta = 2.0 * PI * n as f64 / l;
            let term = match wave {
                Some(w) => {
                    let g = w.decay_rate(eta);
                    (-g * h).exp() / g
                }
                None => Complex64::new((-eta * h).exp() / eta, 0.0),
            };
            acc -= (eta * z[0]).cos() * term / l;
        }
        acc
    };
    Ok(periodic(direct) - periodic(image))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LatticeConfig {
        LatticeConfig::new(20.0).unwrap()
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    /// Independent reference: plain mode sum of `G_#` without any acceleration.
    fn raw_periodic(z: [f64; 2], k: Option<Complex64>, l: f64, modes: usize) -> Complex64 {
        let h = z[1].abs();
        let i = Complex64::i();
        let mut acc = match k {
            Some(k) => (i * k * h).exp() / (2.0 * i * k * l),
            None => c(h / (2.0 * l)),
        };
        for n in 1..=modes {
            let eta = 2.0 * PI * n as f64 / l;
            let t = match k {
                Some(k) => {
                    let g = (c(eta * eta) - k * k).sqrt();
                    (-g * h).exp() / g
                }
                None => c((-eta * h).exp() / eta),
            };
            acc -= (eta * z[0]).cos() * t / l;
        }
        acc
    }

    #[test]
    fn laplace_dirichlet_trace_and_symmetry() {
        let cfg = cfg();
        assert_eq!(laplace_gs([1.0, 2.0], [4.0, 0.0], &cfg).unwrap(), 0.0);
        let a = laplace_gs([1.0, 2.0], [3.0, 1.0], &cfg).unwrap();
        let b = laplace_gs([3.0, 1.0], [1.0, 2.0], &cfg).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!(matches!(laplace_gs([1.0, 1.0], [21.0, 1.0], &cfg), Err(Error::CoincidentPoints)));
    }

    #[test]
    fn laplace_matches_spectral_sum() {
        let cfg = cfg();
        let (x, y) = ([1.0, 2.0], [3.0, 1.0]);
        let oracle = raw_periodic([-2.0, 1.0], None, 20.0, 10_000) - raw_periodic([-2.0, 3.0], None, 20.0, 10_000);
        let v = laplace_gs(x, y, &cfg).unwrap();
        assert!((v - oracle.re).abs() < 1e-12, "{v} vs {oracle}");
        assert!(oracle.im == 0.0);
    }

    #[test]
    fn log_kernel_branches_agree() {
        let l = 20.0;
        for &v in &[0.0, 0.3, 1.7, 3.0] {
            let zd = l / PI;
            let inside = [v * l / PI, zd * (1.0 - 1e-12)];
            let outside = [v * l / PI, zd * (1.0 + 1e-12)];
            assert!((log_kernel(inside, l) - log_kernel(outside, l)).abs() < 1e-10);
            let (a, b) = (log_kernel_grad(inside, l), log_kernel_grad(outside, l));
            assert!((a[0] - b[0]).abs() < 1e-10 && (a[1] - b[1]).abs() < 1e-10);
        }
        // far above the wall the large-height form keeps full precision
        assert!((log_kernel([0.0, 2000.0], l) - (2.0 * PI * 100.0 - 4f64.ln())).abs() < 1e-10);
    }

    #[test]
    fn laplace_gradient_parity_and_finite_differences() {
        let cfg = cfg();
        let g1 = laplace_gs_grad([1.5, 1.0], [1.0, 1.0], &cfg).unwrap();
        let g2 = laplace_gs_grad([0.5, 1.0], [1.0, 1.0], &cfg).unwrap();
        assert_eq!(g1[0], -g2[0]);
        let (x, y) = ([1.0, 2.0], [3.0, 1.0]);
        let g = laplace_gs_grad(x, y, &cfg).unwrap();
        let h = 1e-6;
        for d in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[d] += h;
            xm[d] -= h;
            let fd = (laplace_gs(xp, y, &cfg).unwrap() - laplace_gs(xm, y, &cfg).unwrap()) / (2.0 * h);
            assert!((fd - g[d]).abs() < 1e-8, "{d}: {fd} vs {}", g[d]);
        }
    }

    #[test]
    fn laplace_wall_flux_is_finite() {
        let cfg = cfg();
        let ratios: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&eps| laplace_gs([1.0, 2.0], [0.5, eps], &cfg).unwrap() / eps)
            .collect();
        assert!((ratios[1] - ratios[2]).abs() < 0.1 * (ratios[0] - ratios[1]).abs() + 1e-9);
        assert!((ratios[0] - ratios[2]).abs() / ratios[2].abs() < 1e-3);
    }

    #[test]
    fn expansion_coefficients_low_orders() {
        let coef = expansion_coefficients(2);
        assert_eq!(coef[1], vec![0.5, 0.5]);
        assert_eq!(coef[2], vec![0.75, 0.75, 0.25]);
    }

    #[test]
    fn expansion_terms_match_mode_sums() {
        let l = 20.0;
        let plan = KummerPlan::with_split(l, 0.1, 0, 5).unwrap();
        let coef = expansion_coefficients(5);
        for &(lat, h) in &[(-2.0, 0.5), (7.0, 0.0), (3.0, 2.5), (0.0, 0.3), (25.0, 8.0)] {
            let mut v = [0.0; 5];
            let mut dl = [0.0; 5];
            let mut dh = [0.0; 5];
            plan.expansion_terms(lat, h, &mut v, &mut dl, &mut dh);
            for p in 1..=5 {
                let (mut rv, mut rl, mut rh) = (0.0, 0.0, 0.0);
                for n in 1..=200_000 {
                    let eta = 2.0 * PI * n as f64 / l;
                    let e = (-eta * h).exp();
                    let (mut t, mut th) = (0.0, 0.0);
                    for (j, cj) in coef[p].iter().enumerate() {
                        let m = (2 * p + 1 - j) as i32;
                        t += cj * h.powi(j as i32) / eta.powi(m);
                        th += cj * (j as f64 * h.powi(j as i32 - 1) - eta * h.powi(j as i32)) / eta.powi(m);
                    }
                    rv += (eta * lat).cos() * e * t;
                    rl -= eta * (eta * lat).sin() * e * t;
                    rh += (eta * lat).cos() * e * th;
                }
                let scale = (l / (2.0 * PI)).powi(2 * p as i32 + 1);
                assert!((v[p - 1] - rv).abs() < 1e-12 * scale, "phi p={p} ({lat},{h}): {} vs {rv}", v[p - 1]);
                if h > 0.0 {
                    assert!((dl[p - 1] - rl).abs() < 1e-11 * scale, "dlat p={p}: {} vs {rl}", dl[p - 1]);
                    assert!((dh[p - 1] - rh).abs() < 1e-11 * scale, "dh p={p}: {} vs {rh}", dh[p - 1]);
                }
            }
        }
    }

    #[test]
    fn plan_for_paper_band_is_small() {
        let plan = KummerPlan::new(20.0, 0.1 / 0.95, 1e-12).unwrap();
        assert!(plan.raw_modes() <= 3 && plan.order() <= 8, "{plan:?}");
        assert!(plan.tail() <= 1e-12);
    }

    #[test]
    fn helmholtz_trace_and_errors() {
        let cfg = cfg();
        let v = helmholtz_gs([1.0, 2.0], [4.0, 0.0], c(0.1), &cfg).unwrap();
        assert!(v.norm() < 1e-13);
        assert!(matches!(
            helmholtz_gs([1.0, 2.0], [3.0, 1.0], c(0.4), &cfg),
            Err(Error::MultiplePropagatingModes { .. })
        ));
        assert!(helmholtz_gs([1.0, 2.0], [1.0, 2.0], c(0.1), &cfg).is_err());
    }

    #[test]
    fn helmholtz_matches_spectral_sum_at_separated_heights() {
        let cfg = cfg();
        for k in [c(0.1), c(0.1) / Complex64::new(1.0, -0.05)] {
            let (x, y) = ([1.0, 5.0], [3.0, 1.0]);
            let oracle = raw_periodic([-2.0, 4.0], Some(k), 20.0, 200) - raw_periodic([-2.0, 6.0], Some(k), 20.0, 200);
            let v = helmholtz_gs(x, y, k, &cfg).unwrap();
            assert!((v - oracle).norm() < 1e-12, "{v} vs {oracle}");
        }
    }

    #[test]
    fn helmholtz_matches_mode_differences_at_equal_heights() {
        // closed-form Laplace part plus a million raw Helmholtz-minus-Laplace mode
        // differences, which decay like n^-3 even at equal heights
        let cfg = cfg();
        let k = Complex64::new(0.09, 0.004);
        let (x, y) = ([1.3, 1.0], [-0.4, 1.0]);
        let modes = 1_000_000;
        let helm = raw_periodic([1.7, 0.0], Some(k), 20.0, modes) - raw_periodic([1.7, 2.0], Some(k), 20.0, modes);
        let lap = raw_periodic([1.7, 0.0], None, 20.0, modes) - raw_periodic([1.7, 2.0], None, 20.0, modes);
        let oracle = laplace_gs(x, y, &cfg).unwrap() + helm - lap;
        let v = helmholtz_gs(x, y, k, &cfg).unwrap();
        assert!((v - oracle).norm() < 1e-12, "{v} vs {oracle}");
    }

    #[test]
    fn helmholtz_low_frequency_limit() {
        let cfg = cfg();
        let k = c(1e-6);
        let (x, y) = ([1.0, 2.0], [3.0, 1.0]);
        let l = 20.0;
        let prop = |h: f64| (Complex64::i() * k * h).exp() / (2.0 * Complex64::i() * k * l) - h / (2.0 * l);
        let expected = laplace_gs(x, y, &cfg).unwrap() + prop(1.0) - prop(3.0);
        let v = helmholtz_gs(x, y, k, &cfg).unwrap();
        assert!((v - expected).norm() < 1e-10);
        let g = helmholtz_gs_grad(x, y, k, &cfg).unwrap();
        let gl = laplace_gs_grad(x, y, &cfg).unwrap();
        // the propagating mode adds (e^{ikh} − 1)/(2L) · ∂h, which is O(k) here
        assert!((g[0] - gl[0]).norm() < 1e-10 && (g[1] - gl[1]).norm() < 1e-6);
    }

    #[test]
    fn helmholtz_symmetry_and_periodicity() {
        let cfg = cfg();
        let k = Complex64::new(0.08, 0.004);
        let kernel = HelmholtzKernel::new(k, &cfg).unwrap();
        let (x, y) = ([1.0, 1.2], [0.2, 0.7]);
        let a = kernel.value(x, y).unwrap();
        let b = kernel.value(y, x).unwrap();
        assert!((a - b).norm() <= 1e-12 * a.norm());
        let shifted = kernel.value([x[0] + 20.0, x[1]], y).unwrap();
        assert!((a - shifted).norm() <= 1e-12 * a.norm());
    }

    #[test]
    fn helmholtz_gradient_matches_finite_differences() {
        let cfg = cfg();
        let k = Complex64::new(0.1, 0.005);
        let kernel = HelmholtzKernel::new(k, &cfg).unwrap();
        let h = 1e-6;
        for (x, y) in [([1.0, 2.0], [3.0, 1.0]), ([0.3, 1.0], [-0.2, 1.0]), ([0.1, 0.9], [0.0, 1.1])] {
            let g = kernel.gradient(x, y).unwrap();
            for d in 0..2 {
                let (mut xp, mut xm) = (x, x);
                xp[d] += h;
                xm[d] -= h;
                let fd = (kernel.value(xp, y).unwrap() - kernel.value(xm, y).unwrap()) / (2.0 * h);
                assert!((fd - g[d]).norm() < 1e-7, "{x:?} {d}: {fd} vs {}", g[d]);
            }
        }
    }

    #[test]
    fn helmholtz_equation_residual() {
        let cfg = cfg();
        let k = Complex64::new(0.1, 0.005);
        let kernel = HelmholtzKernel::new(k, &cfg).unwrap();
        let y = [0.0, 1.0];
        let h = 1e-3;
        for x in [[0.5, 1.0], [1.0, 2.0], [-3.0, 0.4]] {
            let f = |dx: f64, dy: f64| kernel.value([x[0] + dx, x[1] + dy], y).unwrap();
            let lap = (f(h, 0.0) + f(-h, 0.0) + f(0.0, h) + f(0.0, -h) - 4.0 * f(0.0, 0.0)) / (h * h);
            let residual = lap + k * k * f(0.0, 0.0);
            assert!(residual.norm() < 1e-5, "{x:?}: {residual}");
        }
    }

    #[test]
    fn doubling_raw_modes_stays_within_tolerance() {
        let cfg = cfg();
        let k = Complex64::new(0.1, 0.005);
        let wave = WaveParams::new(k, &cfg).unwrap();
        let base = HelmholtzKernel::new(k, &cfg).unwrap();
        let n = base.plan().raw_modes().max(1);
        let doubled =
            HelmholtzKernel::with_plan(wave, KummerPlan::with_split(20.0, k.norm(), 2 * n, base.plan().order()).unwrap())
                .unwrap();
        for (x, y) in [([0.3, 1.0], [-0.2, 1.0]), ([1.0, 2.0], [3.0, 1.0]), ([0.0, 0.5], [9.0, 0.5])] {
            let a = base.value(x, y).unwrap();
            let b = doubled.value(x, y).unwrap();
            assert!((a - b).norm() <= base.tolerance(), "{a} vs {b}");
        }
    }

    #[test]
    fn spectral_series_reference_converges() {
        let cfg = cfg();
        let k = c(0.1);
        let (x, y) = ([1.0, 5.0], [3.0, 1.0]);
        let a = spectral_series(x, y, Some(k), &cfg, 200).unwrap();
        let b = helmholtz_gs(x, y, k, &cfg).unwrap();
        assert!((a - b).norm() < 1e-12);
        let lap = spectral_series(x, y, None, &cfg, 200).unwrap();
        assert!((lap.re - laplace_gs(x, y, &cfg).unwrap()).abs() < 1e-12);
    }
}
