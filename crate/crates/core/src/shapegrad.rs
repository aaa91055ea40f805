//! Shape derivatives in Hadamard form. A functional `J` has density `g` when its
//! derivative along a deformation `θ` is `Σ_k g(x_k) (θ(x_k)·ν(x_k)) w_k`, with the
//! trapezoid weights of the grid. Densities for the capacitance data feed the modal
//! quantities, the reflection coefficient and both objectives; the chain rule through
//! the Fourier velocity fields turns any density into a parametric gradient.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;

use crate::capacitance::{CapacitanceData, DEGENERACY_GAP};
use crate::error::{Error, Result};
use crate::geometry::{velocity_field, BoundaryGrid, ShapeParams};
use crate::rom::{lambda_of_omega, BandRule, MaterialParams, RomModel};

/// Samples of one or more densities at the boundary nodes: one row per node, one
/// column per component.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientDensity<T: nalgebra::Scalar> {
    pub values: DMatrix<T>,
}

impl<T: ComplexField<RealField = f64> + Copy> GradientDensity<T> {
    pub fn components(&self) -> usize {
        self.values.ncols()
    }

    /// Paired derivative of every component along the normal velocity `θ·ν` given per node.
    pub fn pair(&self, grid: &BoundaryGrid, normal_velocity: &[f64]) -> DVector<T> {
        let weighted = DVector::from_iterator(
            grid.len(),
            normal_velocity.iter().zip(&grid.weight).map(|(v, w)| T::from_real(v * w)),
        );
        self.values.tr_mul(&weighted)
    }

    /// Pairing with the rigid lateral translation of every resonator.
    pub fn translation_pairing(&self, grid: &BoundaryGrid) -> DVector<T> {
        let lateral: Vec<f64> = grid.normal.iter().map(|nu| nu[0]).collect();
        self.pair(grid, &lateral)
    }

    fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `C'`: component `i·N + j` is `ψ_i K*[ψ_j] + ψ_j K*[ψ_i]`.
pub fn grad_c(cap: &CapacitanceData, adjoint_double_layer: &DMatrix<f64>) -> GradientDensity<f64> {
    let n_res = cap.psi.ncols();
    let k_psi = adjoint_double_layer * &cap.psi;
    let mut values = DMatrix::zeros(cap.psi.nrows(), n_res * n_res);
    for i in 0..n_res {
        for j in 0..n_res {
            let col = cap.psi.column(i).component_mul(&k_psi.column(j)) + cap.psi.column(j).component_mul(&k_psi.column(i));
            values.set_column(i * n_res + j, &col);
        }
    }
    GradientDensity { values }
}

/// `V'`: component `i·N + i` is the indicator of `∂D_i`, the rest vanish.
pub fn grad_v(grid: &BoundaryGrid) -> GradientDensity<f64> {
    let n_res = grid.n_res;
    let mut values = DMatrix::zeros(grid.len(), n_res * n_res);
    for i in 0..n_res {
        for k in grid.range(i) {
            values[(k, i * n_res + i)] = 1.0;
        }
    }
    GradientDensity { values }
}

/// `m'`: component `j` is `ψ_j K*[ψ̃] + ψ̃ K*[ψ_j] − ν_d ψ_j`.
pub fn grad_m(grid: &BoundaryGrid, cap: &CapacitanceData, adjoint_double_layer: &DMatrix<f64>) -> GradientDensity<f64> {
    let k_psi = adjoint_double_layer * &cap.psi;
    let k_tilde = adjoint_double_layer * &cap.psi_tilde;
    let mut values = DMatrix::zeros(grid.len(), cap.psi.ncols());
    for j in 0..cap.psi.ncols() {
        for k in 0..grid.len() {
            let psi = cap.psi[(k, j)];
            values[(k, j)] = psi * k_tilde[k] + cap.psi_tilde[k] * k_psi[(k, j)] - grid.normal[k][1] * psi;
        }
    }
    GradientDensity { values }
}

/// Densities of the eigenvalues and eigenvectors of `C u = λ V u`.
#[derive(Clone, Debug)]
pub struct EigenDensities {
    /// Component `j` is `g^{λ,0}_j = u_jᵀ (g^C − λ_j g^V) u_j`.
    pub lambda: GradientDensity<f64>,
    /// Entry `j` holds `g^u_j`, one component per entry of `u_j`.
    pub vectors: Vec<GradientDensity<f64>>,
}

/// Contracts `g^C`, `g^V` with the eigenvectors; refuses nearly repeated eigenvalues.
pub fn grad_eigs(cap: &CapacitanceData, g_c: &GradientDensity<f64>, g_v: &GradientDensity<f64>) -> Result<EigenDensities> {
    if cap.min_gap < DEGENERACY_GAP {
        return Err(Error::DegenerateSpectrum { gap: cap.min_gap });
    }
    let n_res = cap.eigenvalues.len();
    let nodes = g_c.values.nrows();
    let u = &cap.eigenvectors;
    let lam = &cap.eigenvalues;
    // pair[(k, i·N + j)] = u_iᵀ g^C(x_k) u_j and likewise for g^V
    let contract = |g: &GradientDensity<f64>| {
        let mut out = DMatrix::zeros(nodes, n_res * n_res);
        for k in 0..nodes {
            let local = DMatrix::from_row_slice(n_res, n_res, g.values.row(k).transpose().as_slice());
            let projected = u.transpose() * local * u;
            for i in 0..n_res {
                for j in 0..n_res {
                    out[(k, i * n_res + j)] = projected[(i, j)];
                }
            }
        }
        out
    };
    let uc = contract(g_c);
    let uv = contract(g_v);
    let lambda = DMatrix::from_fn(nodes, n_res, |k, j| uc[(k, j * n_res + j)] - lam[j] * uv[(k, j * n_res + j)]);
    let vectors = (0..n_res)
        .map(|j| {
            let mut values = DMatrix::zeros(nodes, n_res);
            for k in 0..nodes {
                let mut row = u.column(j) * (-0.5 * uv[(k, j * n_res + j)]);
                for i in (0..n_res).filter(|&i| i != j) {
                    let coef = (uc[(k, i * n_res + j)] - lam[j] * uv[(k, i * n_res + j)]) / (lam[j] - lam[i]);
                    row += u.column(i) * coef;
                }
                values.row_mut(k).copy_from(&row.transpose());
            }
            GradientDensity { values }
        })
        .collect();
    Ok(EigenDensities { lambda: GradientDensity { values: lambda }, vectors })
}

/// `g^{λ,1}_j = (2 τ_m (mᵀu_j) / |Y|) (mᵀ g^u_j + u_jᵀ g^m)`.
pub fn grad_lambda_j1(
    cap: &CapacitanceData,
    eig: &EigenDensities,
    g_m: &GradientDensity<f64>,
    materials: &MaterialParams,
    cell: f64,
) -> GradientDensity<f64> {
    let nodes = g_m.values.nrows();
    let n_res = cap.eigenvalues.len();
    let mut values = DMatrix::zeros(nodes, n_res);
    for j in 0..n_res {
        let u_j = cap.eigenvectors.column(j);
        let coupling = cap.m.dot(&u_j);
        let prefactor = 2.0 * materials.tau_m() * coupling / cell;
        let col = (&eig.vectors[j].values * &cap.m + &g_m.values * u_j) * prefactor;
        values.set_column(j, &col);
    }
    GradientDensity { values }
}

/// Densities of `λ_j` and `λ_{j,1}` for every mode, the inputs of every objective.
#[derive(Clone, Debug)]
pub struct ModalDensities {
    pub lambda: GradientDensity<f64>,
    pub lambda1: GradientDensity<f64>,
}

/// Runs the chain `g^C, g^V, g^m → g^{λ,0}, g^{λ,1}`.
pub fn modal_densities(
    grid: &BoundaryGrid,
    cap: &CapacitanceData,
    adjoint_double_layer: &DMatrix<f64>,
    materials: &MaterialParams,
) -> Result<ModalDensities> {
    let eig = grad_eigs(cap, &grad_c(cap, adjoint_double_layer), &grad_v(grid))?;
    let lambda1 = grad_lambda_j1(cap, &eig, &grad_m(grid, cap, adjoint_double_layer), materials, grid.cell());
    let out = ModalDensities { lambda: eig.lambda, lambda1 };
    if !(out.lambda.is_finite() && out.lambda1.is_finite()) {
        return Err(Error::NonFinite("modal shape densities".into()));
    }
    Ok(out)
}

/// Leading-order density of `r(ω)`.
pub fn grad_reflection(model: &RomModel, modal: &ModalDensities, omega: f64) -> Result<GradientDensity<Complex64>> {
    let nodes = modal.lambda.values.nrows();
    let mut values = DMatrix::zeros(nodes, 1);
    if omega == 0.0 {
        return Ok(GradientDensity { values });
    }
    let lam = lambda_of_omega(&model.materials, omega)?;
    let i = Complex64::i();
    for (j, (&lj, &l1)) in model.lambda.iter().zip(model.lambda1.iter()).enumerate() {
        if l1 == 0.0 {
            continue;
        }
        let den = lj - i * omega * l1 - lam;
        if den == Complex64::new(0.0, 0.0) {
            return Err(Error::ResonantSingularity { omega });
        }
        let scale = -2.0 * i * omega / (den * den);
        for k in 0..nodes {
            values[(k, 0)] += scale * ((lj - lam) * modal.lambda1.values[(k, j)] - l1 * modal.lambda.values[(k, j)]);
        }
    }
    Ok(GradientDensity { values })
}

/// Density of the band-averaged reflectance on the same Gauss–Legendre nodes as its value.
pub fn grad_objective_ref(
    model: &RomModel,
    modal: &ModalDensities,
    band: (f64, f64),
    n_omega: usize,
) -> Result<GradientDensity<f64>> {
    grad_objective_ref_on(model, modal, &model.band_rule(band, n_omega)?)
}

/// [`grad_objective_ref`] on a prescribed rule; the rule itself is held fixed.
pub fn grad_objective_ref_on(model: &RomModel, modal: &ModalDensities, rule: &BandRule) -> Result<GradientDensity<f64>> {
    let (lo, hi) = rule.band;
    let mut acc = DVector::zeros(modal.lambda.values.nrows());
    for (&w, &q) in rule.nodes.iter().zip(&rule.weights) {
        let r = model.reflection(w)?;
        let g_r = grad_reflection(model, modal, w)?;
        acc += g_r.values.column(0).map(|g| (r.conj() * g).re) * q;
    }
    Ok(GradientDensity { values: DMatrix::from_column_slice(acc.len(), 1, (acc * (2.0 / (hi - lo))).as_slice()) })
}

/// Density of the resonance-matching objective for targets paired with the lowest modes.
pub fn grad_objective_res(model: &RomModel, modal: &ModalDensities, targets: &[f64]) -> Result<GradientDensity<f64>> {
    let count = targets.len();
    if count == 0 || count > model.len() {
        return Err(Error::InvalidInput(format!("{count} targets for {} modes", model.len())));
    }
    let mut acc = DVector::zeros(modal.lambda.values.nrows());
    for (j, &target) in targets.iter().enumerate() {
        let lam = lambda_of_omega(&model.materials, target)?;
        if lam.im == 0.0 {
            return Err(Error::LosslessResonanceObjective);
        }
        let real_gap = model.lambda[j] / lam.re - 1.0;
        let width_gap = target * model.lambda1[j] / lam.im - 1.0;
        acc += modal.lambda.values.column(j) * (real_gap / lam.re)
            + modal.lambda1.values.column(j) * (width_gap * target / lam.im);
    }
    acc *= 2.0 / count as f64;
    Ok(GradientDensity { values: DMatrix::from_column_slice(acc.len(), 1, acc.as_slice()) })
}

/// `θ_p·ν` at the nodes for parameter `index` of resonator `resonator`; zero elsewhere.
pub fn normal_velocity(shape: &ShapeParams, grid: &BoundaryGrid, resonator: usize, index: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.len()];
    for k in grid.range(resonator) {
        let theta = velocity_field(shape, index, grid.t[k])?;
        out[k] = theta[0] * grid.normal[k][0] + theta[1] * grid.normal[k][1];
    }
    Ok(out)
}

/// Chain rule: one derivative per design parameter, resonator by resonator, in
/// [`ShapeParams::params`] order, for component `component` of `g`.
pub fn parametric_gradient<T: ComplexField<RealField = f64> + Copy>(
    g: &GradientDensity<T>,
    component: usize,
    shapes: &[ShapeParams],
    grid: &BoundaryGrid,
) -> Result<Vec<T>> {
    if shapes.len() != grid.n_res || component >= g.components() || g.values.nrows() != grid.len() {
        return Err(Error::InvalidInput("density, shapes and grid do not match".into()));
    }
    let mut out = Vec::with_capacity(shapes.iter().map(ShapeParams::n_params).sum());
    for (j, shape) in shapes.iter().enumerate() {
        for index in 0..shape.n_params() {
            let mut acc = T::zero();
            for k in grid.range(j) {
                let theta = velocity_field(shape, index, grid.t[k])?;
                let vn = theta[0] * grid.normal[k][0] + theta[1] * grid.normal[k][1];
                acc += g.values[(k, component)] * T::from_real(vn * grid.weight[k]);
            }
            out.push(acc);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacitance::compute_capacitance_with;
    use crate::geometry::discretize;
    use crate::layerpot::LayerTables;

    fn setup(shapes: &[ShapeParams], n: usize) -> (BoundaryGrid, CapacitanceData, DMatrix<f64>) {
        let grid = discretize(shapes, n, 20.0).unwrap();
        let tables = LayerTables::laplace(&grid).unwrap();
        let cap = compute_capacitance_with(&grid, &tables.laplace_single_layer()).unwrap();
        (grid, cap, tables.laplace_adjoint_double_layer())
    }

    #[test]
    fn capacitance_density_is_symmetric_and_translation_free() {
        let shapes = [
            ShapeParams { center: [-2.0, 1.2], a0: 0.5, cos: vec![0.2, 0.0], sin: vec![0.0, 0.1] },
            ShapeParams::with_order([3.0, 1.0], 0.4, 2),
        ];
        let (grid, cap, kstar) = setup(&shapes, 96);
        let g = grad_c(&cap, &kstar);
        assert_eq!(g.values.column(1), g.values.column(2));
        for t in g.translation_pairing(&grid).iter() {
            assert!(t.abs() <= 1e-8, "{t}");
        }
        for t in grad_m(&grid, &cap, &kstar).translation_pairing(&grid).iter() {
            assert!(t.abs() <= 1e-8, "{t}");
        }
    }

    #[test]
    fn volume_density_examples() {
        let (grid, _, _) = setup(&[ShapeParams::circle([0.0, 1.0], 0.5)], 64);
        let g = grad_v(&grid);
        // θ = ν: |D|' is the perimeter
        let perimeter = g.pair(&grid, &vec![1.0; grid.len()])[0];
        assert!((perimeter - std::f64::consts::PI).abs() < 1e-13);
        assert!(g.translation_pairing(&grid)[0].abs() < 1e-14);
    }

    #[test]
    fn single_mode_eigen_density_is_the_scaled_capacitance_density() {
        let (grid, cap, kstar) = setup(&[ShapeParams::with_order([0.0, 1.0], 0.5, 1)], 64);
        let g_c = grad_c(&cap, &kstar);
        let g_v = grad_v(&grid);
        let eig = grad_eigs(&cap, &g_c, &g_v).unwrap();
        let area = cap.area[0];
        let lam = cap.eigenvalues[0];
        for k in 0..grid.len() {
            let expected = (g_c.values[(k, 0)] - lam * g_v.values[(k, 0)]) / area;
            assert!((eig.lambda.values[(k, 0)] - expected).abs() < 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn normalization_is_preserved() {
        let shapes = [
            ShapeParams { center: [-2.0, 1.2], a0: 0.5, cos: vec![0.2, 0.0], sin: vec![0.0, 0.1] },
            ShapeParams::with_order([3.0, 1.5], 0.4, 2),
        ];
        let (grid, cap, kstar) = setup(&shapes, 64);
        let g_v = grad_v(&grid);
        let eig = grad_eigs(&cap, &grad_c(&cap, &kstar), &g_v).unwrap();
        let velocity = normal_velocity(&shapes[0], &grid, 0, 2).unwrap();
        let dv = g_v.pair(&grid, &velocity);
        let dv = DMatrix::from_row_slice(2, 2, dv.as_slice());
        let area = DMatrix::from_diagonal(&cap.area);
        for j in 0..2 {
            let u = cap.eigenvectors.column(j);
            let du = eig.vectors[j].pair(&grid, &velocity);
            let identity = 2.0 * u.dot(&(&area * &du)) + u.dot(&(&dv * u));
            assert!(identity.abs() <= 1e-8, "{identity}");
        }
    }

    #[test]
    fn degenerate_spectrum_is_refused() {
        let (grid, mut cap, kstar) = setup(&[ShapeParams::circle([-5.0, 1.0], 0.5), ShapeParams::circle([5.0, 1.0], 0.4)], 32);
        assert!(grad_eigs(&cap, &grad_c(&cap, &kstar), &grad_v(&grid)).is_ok());
        cap.min_gap = 0.5 * DEGENERACY_GAP;
        let err = grad_eigs(&cap, &grad_c(&cap, &kstar), &grad_v(&grid)).unwrap_err();
        assert!(err.to_string().contains("degenerate spectrum"));
    }

    #[test]
    fn dark_modes_and_zero_frequency_give_zero_densities() {
        let (grid, cap, kstar) = setup(&[ShapeParams::circle([0.0, 1.0], 0.5)], 32);
        let mat = MaterialParams::default();
        let modal = modal_densities(&grid, &cap, &kstar, &mat).unwrap();
        let model = RomModel::new(&cap, mat, 20.0).unwrap();
        assert!(grad_reflection(&model, &modal, 0.0).unwrap().values.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        let dark = RomModel { lambda1: DVector::zeros(1), ..model };
        assert!(grad_reflection(&dark, &modal, 0.05).unwrap().values.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        // u → −u flips g^u and mᵀu together
        let mut flipped_cap = cap.clone();
        flipped_cap.eigenvectors *= -1.0;
        let flipped = modal_densities(&grid, &flipped_cap, &kstar, &mat).unwrap();
        assert!((&flipped.lambda1.values - &modal.lambda1.values).amax() < 1e-15);
    }

    #[test]
    fn perfect_matching_has_zero_resonance_density() {
        let (grid, cap, kstar) = setup(&[ShapeParams::circle([0.0, 1.0], 0.5)], 32);
        let mat = MaterialParams::default();
        let modal = modal_densities(&grid, &cap, &kstar, &mat).unwrap();
        let target = 0.05;
        let lam = lambda_of_omega(&mat, target).unwrap();
        let matched = RomModel::from_modes(&[lam.re], &[lam.im / target], mat, 20.0).unwrap();
        let g = grad_objective_res(&matched, &modal, &[target]).unwrap();
        assert!(g.values.amax() < 1e-12 * modal.lambda.values.amax());
        let lossless = RomModel { materials: MaterialParams { v_b: Complex64::new(1.0, 0.0), ..mat }, ..matched };
        assert!(matches!(grad_objective_res(&lossless, &modal, &[target]), Err(Error::LosslessResonanceObjective)));
        assert!(grad_objective_res(&lossless, &modal, &[0.03, 0.06]).is_err());
    }

    #[test]
    fn tangential_fields_pair_to_zero() {
        let (grid, _, _) = setup(&[ShapeParams::circle([0.0, 1.0], 0.5)], 32);
        let g = GradientDensity { values: DMatrix::from_fn(grid.len(), 1, |k, _| (k as f64).sin()) };
        let tangential: Vec<f64> = grid
            .tangent
            .iter()
            .zip(&grid.normal)
            .map(|(t, n)| t[0] * n[0] + t[1] * n[1])
            .collect();
        assert_eq!(g.pair(&grid, &tangential)[0], 0.0);
    }
}
