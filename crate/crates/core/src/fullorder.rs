//! Full-order boundary-integral scattering solver for normal incidence.
//!
//! Inside resonator `j` the field is the single layer of `φ_j` over `∂D_j` alone at
//! `k_b`; outside it is `ũ^i + S^{k_m}[φ_ext]`. The transmission conditions give
//!
//! ```text
//! S_b φ − S_m φ_ext = ũ^i
//! (−½ + K*_b) φ − δ (½ + K*_m) φ_ext = δ ∂ũ^i/∂ν
//! ```
//!
//! with `S_b`, `K*_b` block diagonal. Each block is eliminated through the interior
//! Dirichlet-to-Neumann map `Λ_j = (−½ + K*_jj) S_jj⁻¹`, leaving one dense system of
//! size `n` for `φ_ext`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::BoundaryGrid;
use crate::layerpot::{Factorization, LayerTables};
use crate::qpgreens::{HelmholtzKernel, KummerPlan, LatticeConfig, WaveParams};
use crate::rom::MaterialParams;

/// Largest accepted relative residual of the block system.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;

/// Mode-sum tolerance used for the layer operators.
pub const DEFAULT_KERNEL_TOLERANCE: f64 = 1e-12;

type C64 = Complex64;

/// Densities and reflection coefficient at one frequency.
#[derive(Clone, Debug)]
pub struct ScatteringSolution {
    pub omega: f64,
    pub k_m: C64,
    pub k_b: C64,
    /// Interior densities, resonator by resonator.
    pub interior: DVector<C64>,
    pub exterior: DVector<C64>,
    pub reflection: C64,
    /// `‖A x − b‖∞ / ‖b‖∞` of the two-block system.
    pub residual: f64,
}

fn check_incidence(materials: &MaterialParams) -> Result<()> {
    if materials.theta_d != 1.0 {
        return Err(Error::Unsupported(format!(
            "oblique incidence (theta_d = {}); only normal incidence is solved",
            materials.theta_d
        )));
    }
    Ok(())
}

/// Wall-adjusted incident field `ũ^i = −2i sin(k_m x_d)` and its normal derivative.
pub fn incident_trace(grid: &BoundaryGrid, omega: f64, materials: &MaterialParams) -> Result<(Vec<C64>, Vec<C64>)> {
    check_incidence(materials)?;
    let k = omega / materials.v_m;
    let minus_2i = C64::new(0.0, -2.0);
    Ok(grid
        .pos
        .iter()
        .zip(&grid.normal)
        .map(|(p, nu)| (minus_2i * (k * p[1]).sin(), minus_2i * k * (k * p[1]).cos() * nu[1]))
        .unzip())
}

/// `r = −1 − ∫ sin(k_m y_d) / (k_m |Y|) φ_ext dσ`.
pub fn reflection_exact(exterior: &DVector<C64>, grid: &BoundaryGrid, omega: f64, materials: &MaterialParams) -> C64 {
    let k = omega * materials.tau_m();
    let sum: C64 = grid
        .pos
        .iter()
        .zip(&grid.weight)
        .zip(exterior.iter())
        .map(|((p, w), phi)| phi * ((k * p[1]).sin() * w))
        .sum();
    -1.0 - sum / (k * grid.cell())
}

/// Grid and kernel tables shared across a frequency sweep.
pub struct FullOrderSolver {
    tables: LayerTables,
    materials: MaterialParams,
    omega_max: f64,
}

impl FullOrderSolver {
    /// Prepares tables valid for every `ω ≤ omega_max`.
    pub fn new(grid: &BoundaryGrid, materials: MaterialParams, omega_max: f64) -> Result<Self> {
        Self::with_tolerance(grid, materials, omega_max, DEFAULT_KERNEL_TOLERANCE)
    }

    /// Solver whose periodic kernels are accurate to `kernel_tolerance`.
    pub fn with_tolerance(grid: &BoundaryGrid, materials: MaterialParams, omega_max: f64, kernel_tolerance: f64) -> Result<Self> {
        materials.validate()?;
        check_incidence(&materials)?;
        if !(omega_max > 0.0 && omega_max.is_finite()) {
            return Err(Error::InvalidInput(format!("maximum frequency must be positive, got {omega_max}")));
        }
        let k_max = omega_max * (1.0 / materials.v_m).max(1.0 / materials.v_b.norm());
        let cfg = LatticeConfig::new(grid.period)?;
        // rejects multiple propagating modes before the expensive tables
        WaveParams::new(C64::new(omega_max / materials.v_m, 0.0), &cfg)?;
        let plan = KummerPlan::new(grid.period, k_max, kernel_tolerance)?;
        Ok(Self { tables: LayerTables::with_helmholtz(grid, plan)?, materials, omega_max })
    }

    pub fn grid(&self) -> &BoundaryGrid {
        self.tables.grid()
    }

    pub fn materials(&self) -> &MaterialParams {
        &self.materials
    }

    pub fn solve(&self, omega: f64) -> Result<ScatteringSolution> {
        if !(omega > 0.0 && omega <= self.omega_max * (1.0 + 1e-12)) {
            return Err(Error::InvalidInput(format!("frequency {omega} outside (0, {}]", self.omega_max)));
        }
        let grid = self.tables.grid();
        let mat = &self.materials;
        let n = grid.len();
        let np = grid.n_per;
        let k_m = C64::new(omega / mat.v_m, 0.0);
        let k_b = omega / mat.v_b;
        let (inc, inc_dn) = incident_trace(grid, omega, mat)?;
        let inc = DVector::from_vec(inc);
        let inc_dn = DVector::from_vec(inc_dn);

        let interior = self.tables.helmholtz_self_blocks(k_b)?;
        let (s_m, k_star_m) = self.tables.helmholtz_operators(k_m)?;

        // per block: Y_j = S_jj⁻¹ [S_m rows of j | ũ_j], then Λ_j S_m and Λ_j ũ from (−½ + K*_jj) Y_j
        let eliminated: Vec<(DMatrix<C64>, DMatrix<C64>)> = interior
            .par_iter()
            .enumerate()
            .map(|(j, (s_jj, k_jj))| {
                let rows = grid.range(j);
                let mut rhs = DMatrix::zeros(np, n + 1);
                rhs.columns_mut(0, n).copy_from(&s_m.rows(rows.start, np));
                rhs.column_mut(n).copy_from(&inc.rows(rows.start, np));
                let y = Factorization::new(s_jj.clone())?.solve(&rhs);
                let mut interior_neumann = k_jj.clone();
                for d in 0..np {
                    interior_neumann[(d, d)] -= C64::new(0.5, 0.0);
                }
                let dtn = &interior_neumann * &y;
                Ok((y, dtn))
            })
            .collect::<Result<_>>()?;

        let delta = mat.delta;
        let mut system = k_star_m.clone() * C64::new(-delta, 0.0);
        for d in 0..n {
            system[(d, d)] -= C64::new(0.5 * delta, 0.0);
        }
        let mut rhs = inc_dn.clone() * C64::new(delta, 0.0);
        for (j, (_, dtn)) in eliminated.iter().enumerate() {
            let start = grid.range(j).start;
            let mut block = system.rows_mut(start, np);
            block += dtn.columns(0, n);
            let mut part = rhs.rows_mut(start, np);
            part -= dtn.column(n);
        }
        let exterior = Factorization::new(system)?.solve_vec(&rhs);

        let mut lifted = DVector::from_element(n + 1, C64::new(1.0, 0.0));
        lifted.rows_mut(0, n).copy_from(&exterior);
        let mut phi = DVector::zeros(n);
        for (j, (y, _)) in eliminated.iter().enumerate() {
            phi.rows_mut(grid.range(j).start, np).copy_from(&(y * &lifted));
        }

        let residual = block_residual(&interior, &s_m, &k_star_m, &phi, &exterior, &inc, &inc_dn, delta, np);
        if !(residual <= RESIDUAL_TOLERANCE) {
            return Err(Error::InaccurateSolve { residual });
        }
        let reflection = reflection_exact(&exterior, grid, omega, mat);
        if !(reflection.re.is_finite() && reflection.im.is_finite()) {
            return Err(Error::NonFinite("reflection coefficient".into()));
        }
        Ok(ScatteringSolution { omega, k_m, k_b, interior: phi, exterior, reflection, residual })
    }

    /// Solves every frequency independently, in parallel.
    pub fn sweep(&self, omegas: &[f64]) -> Result<Vec<ScatteringSolution>> {
        omegas.par_iter().map(|&w| self.solve(w)).collect()
    }

    /// Field value at an off-boundary point.
    pub fn total_field(&self, sol: &ScatteringSolution, x: [f64; 2]) -> Result<C64> {
        total_field(sol, self.tables.grid(), x)
    }
}

#[allow(clippy::too_many_arguments)]
fn block_residual(
    interior: &[(DMatrix<C64>, DMatrix<C64>)],
    s_m: &DMatrix<C64>,
    k_star_m: &DMatrix<C64>,
    phi: &DVector<C64>,
    exterior: &DVector<C64>,
    inc: &DVector<C64>,
    inc_dn: &DVector<C64>,
    delta: f64,
    np: usize,
) -> f64 {
    let mut dirichlet = -(s_m * exterior) - inc;
    let mut neumann = -(k_star_m * exterior + exterior * C64::new(0.5, 0.0)) * C64::new(delta, 0.0) - inc_dn * C64::new(delta, 0.0);
    for (j, (s_jj, k_jj)) in interior.iter().enumerate() {
        let local = phi.rows(j * np, np);
        let mut d = dirichlet.rows_mut(j * np, np);
        d += s_jj * local;
        let mut nm = neumann.rows_mut(j * np, np);
        nm += k_jj * local - local * C64::new(0.5, 0.0);
    }
    let inf = |v: &DVector<C64>| v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let scale = inf(inc).max(delta * inf(inc_dn));
    let worst = inf(&dirichlet).max(inf(&neumann));
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// Solves one frequency without keeping the tables.
pub fn solve_scattering(grid: &BoundaryGrid, omega: f64, materials: &MaterialParams) -> Result<ScatteringSolution> {
    FullOrderSolver::new(grid, *materials, omega)?.solve(omega)
}

/// Where a point sits relative to the discretized resonators.
fn locate(grid: &BoundaryGrid, x: [f64; 2]) -> Result<Option<usize>> {
    let period = grid.period;
    // fold into the cell of the resonators
    let centre = grid.pos.iter().map(|p| p[0]).sum::<f64>() / grid.len() as f64;
    let shift = ((x[0] - centre) / period).round() * period;
    let p = [x[0] - shift, x[1]];
    let tol = 1e-9 * period;
    for j in 0..grid.n_res {
        let nodes = &grid.pos[grid.range(j)];
        let mut inside = false;
        for (a, b) in nodes.iter().zip(nodes.iter().cycle().skip(1)) {
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let len2 = ex * ex + ey * ey;
            let s = (((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / len2).clamp(0.0, 1.0);
            if (p[0] - a[0] - s * ex).hypot(p[1] - a[1] - s * ey) < tol {
                return Err(Error::InvalidInput(format!("point ({}, {}) lies on a resonator boundary", x[0], x[1])));
            }
            if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < a[0] + (p[1] - a[1]) / ey * ex {
                inside = !inside;
            }
        }
        if inside {
            return Ok(Some(j));
        }
    }
    Ok(None)
}

/// Total field `u(x)`; the trapezoid rule loses accuracy within a few node
/// spacings of a boundary.
pub fn total_field(sol: &ScatteringSolution, grid: &BoundaryGrid, x: [f64; 2]) -> Result<C64> {
    if x[1] < 0.0 {
        return Err(Error::InvalidInput(format!("point below the wall (x_d = {})", x[1])));
    }
    let cfg = LatticeConfig::new(grid.period)?;
    let kernel_at = |k: C64| -> Result<HelmholtzKernel> {
        let wave = WaveParams::new(k, &cfg)?;
        HelmholtzKernel::with_plan(wave, KummerPlan::new(grid.period, k.norm(), cfg.tolerance)?)
    };
    let potential = |kernel: &HelmholtzKernel, nodes: std::ops::Range<usize>, density: &DVector<C64>| -> Result<C64> {
        let mut acc = C64::new(0.0, 0.0);
        for k in nodes {
            acc += kernel.value(x, grid.pos[k])? * density[k] * grid.weight[k];
        }
        Ok(acc)
    };
    match locate(grid, x)? {
        Some(j) => potential(&kernel_at(sol.k_b)?, grid.range(j), &sol.interior),
        None => {
            let scattered = potential(&kernel_at(sol.k_m)?, 0..grid.len(), &sol.exterior)?;
            Ok(scattered + C64::new(0.0, -2.0) * (sol.k_m * x[1]).sin())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{discretize, ShapeParams};

    fn circle_grid(n: usize) -> BoundaryGrid {
        discretize(&[ShapeParams::circle([0.0, 1.0], 0.5)], n, 20.0).unwrap()
    }

    #[test]
    fn incident_trace_examples() {
        let mat = MaterialParams { v_m: 1.0, ..MaterialParams::default() };
        let grid = circle_grid(32);
        let (u, du) = incident_trace(&grid, 0.1, &mat).unwrap();
        for (k, p) in grid.pos.iter().enumerate() {
            let expected = C64::new(0.0, -2.0 * (0.1 * p[1]).sin());
            assert!((u[k] - expected).norm() < 1e-15);
            let expected_dn = C64::new(0.0, -0.2 * (0.1 * p[1]).cos() * grid.normal[k][1]);
            assert!((du[k] - expected_dn).norm() < 1e-15);
        }
        // the top node of this circle sits at x_d = 1 with ν = (0, 1)
        let low = discretize(&[ShapeParams::circle([0.0, 0.75], 0.25)], 32, 20.0).unwrap();
        let top = low.n_per / 4;
        let (_, du) = incident_trace(&low, 0.1, &mat).unwrap();
        assert!((low.pos[top][1] - 1.0).abs() < 1e-15);
        assert!(du[top].re.abs() < 1e-15 && (du[top].im + 0.199_001).abs() < 5e-7);
        // ω → 0: ũ^i/ω → −2i τ_m x_d
        let (small, _) = incident_trace(&grid, 1e-8, &mat).unwrap();
        let top = grid.n_per / 4;
        assert!((small[top] / 1e-8 - C64::new(0.0, -3.0)).norm() < 1e-9);
    }

    #[test]
    fn oblique_incidence_is_rejected() {
        let mat = MaterialParams { theta_d: 0.8, ..MaterialParams::default() };
        let err = incident_trace(&circle_grid(16), 0.05, &mat).unwrap_err();
        assert!(err.to_string().contains("unsupported in full-order solver"));
        assert!(FullOrderSolver::new(&circle_grid(16), mat, 0.1).is_err());
    }

    #[test]
    fn zero_density_reflects_like_the_wall() {
        let grid = circle_grid(16);
        let r = reflection_exact(&DVector::zeros(grid.len()), &grid, 0.05, &MaterialParams::default());
        assert_eq!(r, C64::new(-1.0, 0.0));
    }

    #[test]
    fn multiple_modes_are_rejected() {
        let err = FullOrderSolver::new(&circle_grid(16), MaterialParams::default(), 0.4).err().unwrap();
        assert!(matches!(err, Error::MultiplePropagatingModes { .. }));
    }

    #[test]
    fn lossless_solution_conserves_energy() {
        let mat = MaterialParams { v_b: C64::new(1.0, 0.0), ..MaterialParams::default() };
        let solver = FullOrderSolver::new(&circle_grid(64), mat, 0.1).unwrap();
        for sol in solver.sweep(&[0.02, 0.05, 0.0505, 0.08]).unwrap() {
            assert!(sol.residual <= RESIDUAL_TOLERANCE);
            assert!((sol.reflection.norm() - 1.0).abs() < 1e-8, "{} at {}", sol.reflection.norm(), sol.omega);
        }
    }

    #[test]
    fn vanishing_contrast_tends_to_the_sound_soft_obstacle() {
        // at fixed ω the interior decouples once δ ≪ k_b², leaving φ_ext = −S_m⁻¹ ũ^i
        let grid = circle_grid(64);
        let tables = LayerTables::with_helmholtz(&grid, KummerPlan::new(20.0, 0.05, 1e-12).unwrap()).unwrap();
        let (s_m, _) = tables.helmholtz_operators(C64::new(0.05, 0.0)).unwrap();
        let base = MaterialParams::default();
        let (inc, _) = incident_trace(&grid, 0.05, &base).unwrap();
        let limit = -Factorization::new(s_m).unwrap().solve_vec(&DVector::from_vec(inc));
        let r_limit = reflection_exact(&limit, &grid, 0.05, &base);
        // close to the bare wall, the gap being the obstacle's own scattering
        assert!((r_limit + 1.0).norm() < 0.05);
        let errors: Vec<(f64, f64)> = [1e-6, 1e-7]
            .iter()
            .map(|&delta| {
                let sol = solve_scattering(&grid, 0.05, &MaterialParams { delta, ..base }).unwrap();
                ((&sol.exterior - &limit).norm() / limit.norm(), (sol.reflection - r_limit).norm())
            })
            .collect();
        assert!(errors[0].0 < 5e-3 && errors[1].0 < 5e-4, "{errors:?}");
        // first order in δ
        let ratio = errors[0].1 / errors[1].1;
        assert!((ratio - 10.0).abs() < 0.5, "{errors:?}");
    }

    #[test]
    fn points_are_located() {
        let grid = circle_grid(32);
        assert_eq!(locate(&grid, [0.0, 1.0]).unwrap(), Some(0));
        assert_eq!(locate(&grid, [20.0, 1.0]).unwrap(), Some(0));
        assert_eq!(locate(&grid, [3.0, 1.0]).unwrap(), None);
        assert!(locate(&grid, grid.pos[5]).is_err());
    }
}
