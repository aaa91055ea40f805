//! Reduced-order reflection model built from the capacitance eigenpairs.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::capacitance::CapacitanceData;
use crate::error::{Error, Result};
use crate::special::gauss_legendre;

/// Material constants of the matrix (`m`) and the resonators (`b`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialParams {
    pub v_m: f64,
    /// Complex wave speed inside the resonators; `Im ≤ 0` models loss.
    pub v_b: Complex64,
    /// Density contrast `ρ_b/ρ_m`.
    pub delta: f64,
    /// Vertical component of the incidence direction.
    pub theta_d: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self { v_m: 1.0, v_b: Complex64::new(1.0, -0.05), delta: 1e-3, theta_d: 1.0 }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.v_m > 0.0 && self.v_m.is_finite()) {
            problems.push(format!("v_m must be positive, got {}", self.v_m));
        }
        if !(self.v_b.re > 0.0 && self.v_b.re.is_finite()) {
            problems.push(format!("Re v_b must be positive, got {}", self.v_b.re));
        }
        if !(self.v_b.im <= 0.0) {
            problems.push(format!("Im v_b must be ≤ 0 (loss), got {}", self.v_b.im));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            problems.push(format!("contrast must be in (0,1), got {}", self.delta));
        }
        if !(self.theta_d > 0.0 && self.theta_d <= 1.0) {
            problems.push(format!("incidence component theta_d must be in (0,1], got {}", self.theta_d));
        }
        if problems.is_empty() {
            if self.delta > 0.05 {
                log::warn!("contrast {} is not small; the reduced model assumes δ ≪ 1", self.delta);
            }
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }

    /// `τ_m = θ̂_d / v_m`.
    pub fn tau_m(&self) -> f64 {
        self.theta_d / self.v_m
    }

    pub fn is_lossless(&self) -> bool {
        self.v_b.im == 0.0
    }
}

/// `λ(ω) = ω² / (δ v_b²)`.
pub fn lambda_of_omega(materials: &MaterialParams, omega: f64) -> Result<Complex64> {
    if materials.delta == 0.0 {
        return Err(Error::InvalidInput("contrast δ = 0".into()));
    }
    Ok(omega * omega / (materials.delta * materials.v_b * materials.v_b))
}

/// `λ_{j,1} = τ_m (mᵀu_j)² / |Y|`.
pub fn radiative_widths(cap: &CapacitanceData, materials: &MaterialParams, cell: f64) -> DVector<f64> {
    let coupling = cap.eigenvectors.transpose() * &cap.m;
    coupling.map(|c| materials.tau_m() * c * c / cell)
}

/// Modal data and materials; evaluates the reflection response in `O(N)` per frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct RomModel {
    pub lambda: DVector<f64>,
    pub lambda1: DVector<f64>,
    pub materials: MaterialParams,
    pub cell: f64,
}

impl RomModel {
    pub fn new(cap: &CapacitanceData, materials: MaterialParams, cell: f64) -> Result<Self> {
        materials.validate()?;
        Ok(Self { lambda: cap.eigenvalues.clone(), lambda1: radiative_widths(cap, &materials, cell), materials, cell })
    }

    /// Model with prescribed modal data, for synthetic checks.
    pub fn from_modes(lambda: &[f64], lambda1: &[f64], materials: MaterialParams, cell: f64) -> Result<Self> {
        if lambda.len() != lambda1.len() {
            return Err(Error::InvalidInput("mode lists differ in length".into()));
        }
        Ok(Self {
            lambda: DVector::from_column_slice(lambda),
            lambda1: DVector::from_column_slice(lambda1),
            materials,
            cell,
        })
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// `ω_j = v_b √(δ λ_j) − i τ_m v_b² (mᵀu_j)² δ / (2|Y|)`; the second term equals
    /// `i v_b² δ λ_{j,1} / 2`.
    pub fn resonant_frequencies(&self) -> Vec<Complex64> {
        let mat = &self.materials;
        let vb2 = mat.v_b * mat.v_b;
        self.lambda
            .iter()
            .zip(self.lambda1.iter())
            .map(|(&l, &l1)| mat.v_b * (mat.delta * l).sqrt() - Complex64::i() * vb2 * mat.delta * l1 / 2.0)
            .collect()
    }

    /// Reflection coefficient of the single propagating mode.
    pub fn reflection(&self, omega: f64) -> Result<Complex64> {
        if omega < 0.0 || omega >= 2.0 * std::f64::consts::PI * self.materials.v_m / self.cell {
            log::warn!("ω = {omega} lies outside the single-mode band of the reduced model");
        }
        let lam = lambda_of_omega(&self.materials, omega)?;
        let i = Complex64::i();
        let mut r = Complex64::new(-1.0, 0.0);
        for (&lj, &l1) in self.lambda.iter().zip(self.lambda1.iter()) {
            if l1 == 0.0 {
                // dark mode: no radiative coupling, no contribution
                continue;
            }
            let den = lj - i * omega * l1 - lam;
            if den == Complex64::new(0.0, 0.0) {
                return Err(Error::ResonantSingularity { omega });
            }
            r -= 2.0 * i * omega * l1 / den;
        }
        if !(r.re.is_finite() && r.im.is_finite()) {
            return Err(Error::ResonantSingularity { omega });
        }
        Ok(r)
    }

    /// `1 − |r|²`, unclamped.
    pub fn absorptance(&self, omega: f64) -> Result<f64> {
        Ok(1.0 - self.reflection(omega)?.norm_sqr())
    }

    pub fn impedance(&self, omega: f64) -> Result<Complex64> {
        impedance_from_reflection(self.reflection(omega)?, omega, self.materials.tau_m())
    }

    /// Composite Gauss–Legendre rule on `band` with `n_omega` nodes in total. Panels break at
    /// the real parts of in-band resonances (narrowest first, at most `n_omega / MIN_PANEL_NODES`
    /// panels), so each peak sits where the nodes cluster.
    pub fn band_rule(&self, band: (f64, f64), n_omega: usize) -> Result<BandRule> {
        const MIN_PANEL_NODES: usize = 8;
        let (lo, hi) = band;
        if !(lo < hi) || n_omega == 0 {
            return Err(Error::InvalidInput(format!("bad band [{lo}, {hi}] or node count {n_omega}")));
        }
        let mut poles: Vec<Complex64> = self
            .resonant_frequencies()
            .into_iter()
            .zip(self.lambda1.iter())
            .filter(|(w, &l1)| l1 != 0.0 && w.re > lo && w.re < hi)
            .map(|(w, _)| w)
            .collect();
        poles.sort_by(|a, b| a.im.abs().total_cmp(&b.im.abs()));
        let max_breaks = (n_omega / MIN_PANEL_NODES).saturating_sub(1);
        let mut edges = vec![lo, hi];
        let min_width = 1e-6 * (hi - lo);
        for w in poles {
            if edges.len() - 2 >= max_breaks {
                break;
            }
            if edges.iter().all(|e| (e - w.re).abs() > min_width) {
                edges.push(w.re);
            }
        }
        edges.sort_by(f64::total_cmp);
        let panels = edges.len() - 1;
        let (mut nodes, mut weights) = (Vec::with_capacity(n_omega), Vec::with_capacity(n_omega));
        for p in 0..panels {
            let count = n_omega / panels + usize::from(p < n_omega % panels);
            let (x, w) = gauss_legendre(count, edges[p], edges[p + 1]);
            nodes.extend(x);
            weights.extend(w);
        }
        Ok(BandRule { band, nodes, weights })
    }
}

/// Quadrature nodes and weights on a frequency band.
#[derive(Clone, Debug, PartialEq)]
pub struct BandRule {
    pub band: (f64, f64),
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `γ = (1 + r) / ((1 − r) i ω τ_m)`.
pub fn impedance_from_reflection(r: Complex64, omega: f64, tau_m: f64) -> Result<Complex64> {
    if r == Complex64::new(1.0, 0.0) {
        return Err(Error::SoundHardLimit);
    }
    Ok((1.0 + r) / ((1.0 - r) * Complex64::i() * omega * tau_m))
}
