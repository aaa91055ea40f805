//! Nyström discretizations of the single-layer operator `S` and the adjoint
//! double-layer operator `K*` for the sound-soft periodic kernels.
//!
//! Self-interaction blocks split each kernel as `M1(t,s) ln(4 sin²((t−s)/2)) + M2(t,s)`
//! and integrate the logarithmic part with Kress weights; blocks coupling different
//! resonators are smooth and use the plain trapezoid rule. Everything that does not
//! depend on the wavenumber is tabulated once per grid in [`LayerTables`], so
//! frequency sweeps only pay for the `k`-dependent corrections.

use std::f64::consts::PI;

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::BoundaryGrid;
use crate::qpgreens::{log_kernel, log_kernel_grad, sign, CorrectionSeries, HelmholtzKernel, KummerPlan, LatticeConfig};
use crate::special::bessel_j01;

/// Smallest per-resonator node count accepted by the operators.
pub const MIN_NODES: usize = 16;
const FOUR_PI: f64 = 4.0 * PI;

/// Kress weights `R_d`, `d = 0..n`, for `∫ ln(4 sin²((t−s)/2)) f(s) ds` on `n` equispaced nodes.
pub fn kress_weights(n: usize) -> Vec<f64> {
    let nf = n as f64;
    (0..n)
        .map(|d| {
            let series: f64 = (1..n / 2).map(|m| (2.0 * PI * (m * d) as f64 / nf).cos() / m as f64).sum();
            let alt = if d % 2 == 0 { 1.0 } else { -1.0 };
            -4.0 * PI / nf * series - 4.0 * PI / (nf * nf) * alt
        })
        .collect()
}

fn log_split(n: usize, d: usize) -> f64 {
    let s = (PI * d as f64 / n as f64).sin();
    (4.0 * s * s).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    SingleLayer,
    AdjointDoubleLayer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelKind {
    Laplace,
    Helmholtz(Complex64),
}

/// Assembled operator with the metadata identifying what it discretizes.
#[derive(Clone, Debug)]
pub struct DenseOperator<T: nalgebra::Scalar> {
    pub matrix: DMatrix<T>,
    pub kind: OperatorKind,
    pub kernel: KernelKind,
    pub fingerprint: u64,
}

/// Wavenumber-independent kernel data for every node pair, stored column-major
/// (`index = source * n + target`).
#[derive(Clone, Debug)]
pub struct LayerTables {
    grid: BoundaryGrid,
    kress: Vec<f64>,
    /// Laplace single-layer kernel, with the log part removed in self blocks.
    lap_s: Vec<f64>,
    /// Laplace `K*` kernel, with its diagonal limit on the diagonal.
    lap_k: Vec<f64>,
    plan: Option<KummerPlan>,
    /// Expansion terms of the correction, direct minus image, per order.
    phi_s: Vec<f64>,
    /// Their normal derivatives at the target.
    phi_k: Vec<f64>,
}

struct Column {
    lap_s: Vec<f64>,
    lap_k: Vec<f64>,
    phi_s: Vec<f64>,
    phi_k: Vec<f64>,
}

fn check_grid(grid: &BoundaryGrid) -> Result<()> {
    if grid.n_per < MIN_NODES || grid.n_per % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "the logarithmic quadrature needs an even node count of at least {MIN_NODES} per resonator, got {}",
            grid.n_per
        )));
    }
    Ok(())
}

impl LayerTables {
    /// Tables for the Laplace operators only.
    pub fn laplace(grid: &BoundaryGrid) -> Result<Self> {
        Self::build(grid, None)
    }

    /// Tables for Laplace and for Helmholtz at every wavenumber covered by `plan`.
    pub fn with_helmholtz(grid: &BoundaryGrid, plan: KummerPlan) -> Result<Self> {
        if (plan.period() - grid.period).abs() > 1e-14 * grid.period {
            return Err(Error::InvalidInput("mode-sum plan and grid use different periods".into()));
        }
        Self::build(grid, Some(plan))
    }

    fn build(grid: &BoundaryGrid, plan: Option<KummerPlan>) -> Result<Self> {
        check_grid(grid)?;
        let n = grid.len();
        let order = plan.as_ref().map_or(0, KummerPlan::order);
        let columns: Vec<Column> =
            (0..n).into_par_iter().map(|j| Self::column(grid, plan.as_ref(), order, j)).collect();
        let mut t = Self {
            grid: grid.clone(),
            kress: kress_weights(grid.n_per),
            lap_s: Vec::with_capacity(n * n),
            lap_k: Vec::with_capacity(n * n),
            plan,
            phi_s: Vec::with_capacity(n * n * order),
            phi_k: Vec::with_capacity(n * n * order),
        };
        for c in columns {
            t.lap_s.extend(c.lap_s);
            t.lap_k.extend(c.lap_k);
            t.phi_s.extend(c.phi_s);
            t.phi_k.extend(c.phi_k);
        }
        if t.lap_s.iter().chain(&t.lap_k).chain(&t.phi_s).chain(&t.phi_k).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer-potential kernel tables".into()));
        }
        Ok(t)
    }

    fn column(grid: &BoundaryGrid, plan: Option<&KummerPlan>, order: usize, j: usize) -> Column {
        let n = grid.len();
        let l = grid.period;
        let np = grid.n_per;
        let y = grid.pos[j];
        let mut col = Column {
            lap_s: Vec::with_capacity(n),
            lap_k: Vec::with_capacity(n),
            phi_s: Vec::with_capacity(n * order),
            phi_k: Vec::with_capacity(n * order),
        };
        let mut buf = vec![0.0; 6 * order];
        for i in 0..n {
            let x = grid.pos[i];
            let nu = grid.normal[i];
            let z = [x[0] - y[0], x[1] - y[1]];
            let zs = [x[0] - y[0], x[1] + y[1]];
            let gs = log_kernel_grad(zs, l);
            let same = grid.owner(i) == grid.owner(j);
            if i == j {
                let speed = grid.speed[i];
                col.lap_s.push((((PI / l) * speed).powi(2).ln() - log_kernel(zs, l)) / FOUR_PI);
                col.lap_k.push(grid.curvature[i] / FOUR_PI - (gs[0] * nu[0] + gs[1] * nu[1]) / FOUR_PI);
            } else {
                let mut s = (log_kernel(z, l) - log_kernel(zs, l)) / FOUR_PI;
                if same {
                    s -= log_split(np, (i + np - j) % np) / FOUR_PI;
                }
                col.lap_s.push(s);
                let gd = log_kernel_grad(z, l);
                col.lap_k.push(((gd[0] - gs[0]) * nu[0] + (gd[1] - gs[1]) * nu[1]) / FOUR_PI);
            }
            if let Some(plan) = plan {
                let (dir, img) = buf.split_at_mut(3 * order);
                let (dv, rest) = dir.split_at_mut(order);
                let (dl, dh) = rest.split_at_mut(order);
                plan.expansion_terms(z[0], z[1].abs(), dv, dl, dh);
                let (iv, rest) = img.split_at_mut(order);
                let (il, ih) = rest.split_at_mut(order);
                plan.expansion_terms(zs[0], zs[1], iv, il, ih);
                let sd = sign(z[1]);
                for p in 0..order {
                    col.phi_s.push(dv[p] - iv[p]);
                    col.phi_k.push(nu[0] * (dl[p] - il[p]) + nu[1] * (sd * dh[p] - ih[p]));
                }
            }
        }
        col
    }

    pub fn grid(&self) -> &BoundaryGrid {
        &self.grid
    }

    pub fn plan(&self) -> Option<&KummerPlan> {
        self.plan.as_ref()
    }

    pub fn laplace_single_layer(&self) -> DMatrix<f64> {
        let g = &self.grid;
        let n = g.len();
        let np = g.n_per;
        let h = 2.0 * PI / np as f64;
        DMatrix::from_fn(n, n, |i, j| {
            let v = self.lap_s[j * n + i];
            if g.owner(i) == g.owner(j) {
                (self.kress[(i + np - j) % np] / FOUR_PI + h * v) * g.speed[j]
            } else {
                v * g.weight[j]
            }
        })
    }

    pub fn laplace_adjoint_double_layer(&self) -> DMatrix<f64> {
        let g = &self.grid;
        let n = g.len();
        DMatrix::from_fn(n, n, |i, j| self.lap_k[j * n + i] * g.weight[j])
    }

    fn series_for(&self, k: Complex64) -> Result<CorrectionSeries> {
        let plan = self
            .plan
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("tables were built without Helmholtz data".into()))?;
        let cfg = LatticeConfig::with_tolerance(self.grid.period, plan.tail().max(f64::MIN_POSITIVE))?;
        let wave = crate::qpgreens::WaveParams::new(k, &cfg)?;
        CorrectionSeries::new(wave, plan)
    }

    /// Helmholtz `S` and `K*` entries for target `i`, source `j`, including weights.
    fn helmholtz_entry(&self, series: &CorrectionSeries, i: usize, j: usize) -> (Complex64, Complex64) {
        let g = &self.grid;
        let n = g.len();
        let np = g.n_per;
        let order = self.plan.as_ref().map_or(0, KummerPlan::order);
        let (x, y, nu) = (g.pos[i], g.pos[j], g.normal[i]);
        let z = [x[0] - y[0], x[1] - y[1]];
        let img_h = x[1] + y[1];
        let cd = series.direct_part(z[0], z[1].abs());
        let ci = series.direct_part(z[0], img_h);
        let at = (j * n + i) * order;
        let dval = cd.value - ci.value + series.expansion_part(&self.phi_s[at..at + order]);
        let dk = nu[0] * (cd.d_lat - ci.d_lat)
            + nu[1] * (sign(z[1]) * cd.d_h - ci.d_h)
            + series.expansion_part(&self.phi_k[at..at + order]);
        let ls = self.lap_s[j * n + i];
        let lk = self.lap_k[j * n + i];
        if g.owner(i) != g.owner(j) {
            return ((ls + dval) * g.weight[j], (lk + dk) * g.weight[j]);
        }
        let d = (i + np - j) % np;
        let h = 2.0 * PI / np as f64;
        let weight = self.kress[d];
        if i == j {
            return ((weight / FOUR_PI + h * (ls + dval)) * g.speed[j], h * (lk + dk) * g.speed[j]);
        }
        let k = series.wave().k;
        let r = z[0].hypot(z[1]);
        let (j0, j1) = bessel_j01(k * r);
        let split = log_split(np, d);
        let m1 = j0 / FOUR_PI;
        let m2 = ls + dval - (j0 - 1.0) / FOUR_PI * split;
        let l1 = -k * j1 * ((z[0] * nu[0] + z[1] * nu[1]) / r) / FOUR_PI;
        let l2 = lk + dk - l1 * split;
        ((weight * m1 + h * m2) * g.speed[j], (weight * l1 + h * l2) * g.speed[j])
    }

    /// Full Helmholtz `S` and `K*` at wavenumber `k`.
    pub fn helmholtz_operators(&self, k: Complex64) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
        let series = self.series_for(k)?;
        let n = self.grid.len();
        let columns: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..n)
            .into_par_iter()
            .map(|j| (0..n).map(|i| self.helmholtz_entry(&series, i, j)).unzip())
            .collect();
        let mut s = Vec::with_capacity(n * n);
        let mut kk = Vec::with_capacity(n * n);
        for (a, b) in columns {
            s.extend(a);
            kk.extend(b);
        }
        let s = DMatrix::from_vec(n, n, s);
        let kk = DMatrix::from_vec(n, n, kk);
        if s.iter().chain(kk.iter()).any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite("Helmholtz layer operators".into()));
        }
        Ok((s, kk))
    }

    /// Helmholtz `S` and `K*` restricted to each resonator's own boundary.
    pub fn helmholtz_self_blocks(&self, k: Complex64) -> Result<Vec<(DMatrix<Complex64>, DMatrix<Complex64>)>> {
        let series = self.series_for(k)?;
        let np = self.grid.n_per;
        let blocks: Vec<_> = (0..self.grid.n_res)
            .into_par_iter()
            .map(|b| {
                let off = b * np;
                let mut s = DMatrix::zeros(np, np);
                let mut kk = DMatrix::zeros(np, np);
                for j in 0..np {
                    for i in 0..np {
                        let (a, c) = self.helmholtz_entry(&series, off + i, off + j);
                        s[(i, j)] = a;
                        kk[(i, j)] = c;
                    }
                }
                (s, kk)
            })
            .collect();
        if blocks.iter().any(|(s, k)| s.iter().chain(k.iter()).any(|v| !(v.re.is_finite() && v.im.is_finite()))) {
            return Err(Error::NonFinite("Helmholtz self blocks".into()));
        }
        Ok(blocks)
    }
}

/// Laplace single-layer operator on `grid`.
pub fn assemble_single_layer(grid: &BoundaryGrid) -> Result<DenseOperator<f64>> {
    Ok(DenseOperator {
        matrix: LayerTables::laplace(grid)?.laplace_single_layer(),
        kind: OperatorKind::SingleLayer,
        kernel: KernelKind::Laplace,
        fingerprint: grid.fingerprint(),
    })
}

/// Laplace adjoint double-layer operator on `grid`.
pub fn assemble_adjoint_double_layer(grid: &BoundaryGrid) -> Result<DenseOperator<f64>> {
    Ok(DenseOperator {
        matrix: LayerTables::laplace(grid)?.laplace_adjoint_double_layer(),
        kind: OperatorKind::AdjointDoubleLayer,
        kernel: KernelKind::Laplace,
        fingerprint: grid.fingerprint(),
    })
}

/// Helmholtz `(S, K*)` on `grid` at wavenumber `k`.
pub fn assemble_helmholtz(
    grid: &BoundaryGrid,
    k: Complex64,
    cfg: &LatticeConfig,
) -> Result<(DenseOperator<Complex64>, DenseOperator<Complex64>)> {
    let plan = KummerPlan::new(grid.period, k.norm(), cfg.tolerance)?;
    let (s, kk) = LayerTables::with_helmholtz(grid, plan)?.helmholtz_operators(k)?;
    let meta = |matrix, kind| DenseOperator {
        matrix,
        kind,
        kernel: KernelKind::Helmholtz(k),
        fingerprint: grid.fingerprint(),
    };
    Ok((meta(s, OperatorKind::SingleLayer), meta(kk, OperatorKind::AdjointDoubleLayer)))
}

/// Laplace single-layer potential of nodal `density` at an off-boundary point.
pub fn laplace_potential(grid: &BoundaryGrid, density: &[f64], x: [f64; 2]) -> Result<f64> {
    let cfg = LatticeConfig::new(grid.period)?;
    let mut acc = 0.0;
    for (k, y) in grid.pos.iter().enumerate() {
        acc += crate::qpgreens::laplace_gs(x, *y, &cfg)? * density[k] * grid.weight[k];
    }
    Ok(acc)
}

/// Helmholtz single-layer potential of the density on the nodes `nodes` at an
/// off-boundary point. Plain trapezoid rule, so accuracy drops within a few node
/// spacings of the boundary.
pub fn helmholtz_potential(
    grid: &BoundaryGrid,
    nodes: std::ops::Range<usize>,
    density: &[Complex64],
    kernel: &HelmholtzKernel,
    x: [f64; 2],
) -> Result<Complex64> {
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, d) in nodes.zip(density) {
        acc += kernel.value(x, grid.pos[k])? * d * grid.weight[k];
    }
    Ok(acc)
}

/// Reject factorizations whose 1-norm condition estimate exceeds this.
const MAX_CONDITION: f64 = 1e13;

/// Pivoted LU factorization with a 1-norm condition estimate.
pub struct Factorization<T: ComplexField<RealField = f64>> {
    lu: nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>,
    condition: f64,
}

impl<T: ComplexField<RealField = f64>> Factorization<T> {
    pub fn new(matrix: DMatrix<T>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidInput(format!("operator is {}×{}, not square", matrix.nrows(), matrix.ncols())));
        }
        let norm1 = (0..matrix.ncols())
            .map(|j| matrix.column(j).iter().map(|v| v.clone().modulus()).sum::<f64>())
            .fold(0.0, f64::max);
        let lu = matrix.lu();
        if !lu.is_invertible() {
            return Err(Error::SingularOperator { condition: f64::INFINITY });
        }
        let condition = norm1 * inverse_norm1_estimate(&lu);
        if !(condition < MAX_CONDITION) {
            return Err(Error::SingularOperator { condition });
        }
        Ok(Self { lu, condition })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn solve(&self, rhs: &DMatrix<T>) -> DMatrix<T> {
        self.lu.solve(rhs).expect("factorization checked invertible")
    }

    pub fn solve_vec(&self, rhs: &DVector<T>) -> DVector<T> {
        self.lu.solve(rhs).expect("factorization checked invertible")
    }
}

/// Hager's estimate of `‖A⁻¹‖₁` from the LU factors (`P A = L U`).
fn inverse_norm1_estimate<T: ComplexField<RealField = f64>>(lu: &nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let l = lu.l();
    let u = lu.u();
    let p = lu.p();
    let n = l.nrows();
    let lh = l.adjoint();
    let uh = u.adjoint();
    let solve_adjoint = |b: &DVector<T>| -> DVector<T> {
        let y = uh.solve_lower_triangular(b).expect("nonsingular");
        let mut x = lh.solve_upper_triangular_unchecked(&y);
        p.inv_permute_rows(&mut x);
        x
    };
    let mut x = DVector::from_element(n, T::from_real(1.0 / n as f64));
    let mut estimate = 0.0;
    for _ in 0..5 {
        let y = lu.solve(&x).expect("nonsingular");
        estimate = y.iter().map(|v| v.clone().modulus()).sum::<f64>();
        let xi = y.map(|v| {
            let m = v.clone().modulus();
            if m == 0.0 {
                T::one()
            } else {
                v.unscale(m)
            }
        });
        let z = solve_adjoint(&xi);
        let (jmax, zmax) = z
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v.clone().modulus()))
            .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        let ztx = z.iter().zip(x.iter()).map(|(a, b)| (a.clone().conjugate() * b.clone()).real()).sum::<f64>();
        if zmax <= ztx {
            break;
        }
        x = DVector::from_element(n, T::zero());
        x[jmax] = T::one();
    }
    estimate
}

/// Solution of a dense boundary system with its quality metrics.
#[derive(Clone, Debug)]
pub struct DensitySolution<T: nalgebra::Scalar> {
    pub values: DVector<T>,
    /// `‖A x − b‖∞ / ‖b‖∞`.
    pub residual: f64,
    pub condition: f64,
}

/// Dense direct solve of `op · x = rhs`.
pub fn solve_density<T: ComplexField<RealField = f64>>(op: &DMatrix<T>, rhs: &DVector<T>) -> Result<DensitySolution<T>> {
    if op.nrows() != rhs.len() {
        return Err(Error::InvalidInput(format!("operator has {} rows but rhs has {}", op.nrows(), rhs.len())));
    }
    let fact = Factorization::new(op.clone())?;
    let values = fact.solve_vec(rhs);
    let residual = relative_residual(op, &values, rhs);
    if residual > 1e-10 {
        log::warn!("dense solve residual {residual:.2e} (condition {:.2e})", fact.condition());
    }
    Ok(DensitySolution { values, residual, condition: fact.condition() })
}

pub(crate) fn relative_residual<T: ComplexField<RealField = f64>>(op: &DMatrix<T>, x: &DVector<T>, b: &DVector<T>) -> f64 {
    let r = op * x - b;
    let num = r.iter().map(|v| v.clone().modulus()).fold(0.0, f64::max);
    let den = b.iter().map(|v| v.clone().modulus()).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
