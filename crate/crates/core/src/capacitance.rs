//! Periodic capacitance matrix, resonator areas, moment vectors and the generalized
//! eigenproblem `C u = λ V u` behind the reduced-order model.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::BoundaryGrid;
use crate::layerpot::{laplace_potential, relative_residual, Factorization, LayerTables};

/// Relative eigenvalue gap below which eigenpair derivatives are refused.
pub const DEGENERACY_GAP: f64 = 1e-8;

/// Frequency-independent resonator data.
#[derive(Clone, Debug)]
pub struct CapacitanceData {
    /// Symmetrized capacitance matrix.
    pub c: DMatrix<f64>,
    /// `‖C − Cᵀ‖∞ / ‖C‖∞` before symmetrization.
    pub asymmetry: f64,
    /// Resonator areas (diagonal of `V`).
    pub area: DVector<f64>,
    /// `m_i = −∮ x_d ψ_i`.
    pub m: DVector<f64>,
    /// `C⁻¹ m`.
    pub m_hat: DVector<f64>,
    /// Column `j` holds `ψ_j` with `S[ψ_j] = χ_{∂D_j}`.
    pub psi: DMatrix<f64>,
    /// `S[ψ̃] = x_d`.
    pub psi_tilde: DVector<f64>,
    /// Ascending generalized eigenvalues.
    pub eigenvalues: DVector<f64>,
    /// `V`-orthonormal eigenvectors as columns, largest component positive.
    pub eigenvectors: DMatrix<f64>,
    /// Smallest `|λ_{j+1} − λ_j| / λ_max` (infinite for one resonator).
    pub min_gap: f64,
    /// Condition estimate of the discrete single-layer operator.
    pub condition: f64,
    /// Worst relative residual of the density solves.
    pub residual: f64,
}

/// Signed area of every resonator from the grid, `½ ∮ x × x' dt`.
pub fn areas(grid: &BoundaryGrid) -> DVector<f64> {
    let h = 2.0 * std::f64::consts::PI / grid.n_per as f64;
    DVector::from_iterator(
        grid.n_res,
        (0..grid.n_res).map(|j| {
            0.5 * h * grid.range(j).map(|k| grid.pos[k][0] * grid.tangent[k][1] - grid.pos[k][1] * grid.tangent[k][0]).sum::<f64>()
        }),
    )
}

/// Solves for `ψ_j` and `ψ̃`, then assembles everything in [`CapacitanceData`].
pub fn compute_capacitance(grid: &BoundaryGrid) -> Result<CapacitanceData> {
    let tables = LayerTables::laplace(grid)?;
    compute_capacitance_with(grid, &tables.laplace_single_layer())
}

/// As [`compute_capacitance`] with an already assembled single-layer matrix.
pub fn compute_capacitance_with(grid: &BoundaryGrid, single_layer: &DMatrix<f64>) -> Result<CapacitanceData> {
    let n = grid.len();
    let nr = grid.n_res;
    let fact = Factorization::new(single_layer.clone())?;

    // right-hand sides: indicator of each boundary, then the height x_d
    let mut rhs = DMatrix::zeros(n, nr + 1);
    for j in 0..nr {
        for k in grid.range(j) {
            rhs[(k, j)] = 1.0;
        }
    }
    for k in 0..n {
        rhs[(k, nr)] = grid.pos[k][1];
    }
    let sol = fact.solve(&rhs);
    let residual = (0..=nr)
        .map(|c| relative_residual(single_layer, &sol.column(c).into_owned(), &rhs.column(c).into_owned()))
        .fold(0.0, f64::max);
    if residual > 1e-10 {
        log::warn!("capacitance density residual {residual:.2e}");
    }
    let psi = sol.columns(0, nr).into_owned();
    let psi_tilde = sol.column(nr).into_owned();

    let raw = DMatrix::from_fn(nr, nr, |i, j| -grid.range(i).map(|k| psi[(k, j)] * grid.weight[k]).sum::<f64>());
    let c = (&raw + raw.transpose()) * 0.5;
    let asymmetry = inf_norm(&(&raw - raw.transpose())) / inf_norm(&raw);

    let m = compute_moments(grid, &psi);
    let m_hat = c
        .clone()
        .lu()
        .solve(&m)
        .ok_or(Error::SingularOperator { condition: f64::INFINITY })?;
    let area = areas(grid);
    let eig = eigendecompose(&c, &area)?;
    if eig.min_gap < DEGENERACY_GAP {
        log::warn!("nearly degenerate capacitance spectrum (relative gap {:.2e})", eig.min_gap);
    }
    Ok(CapacitanceData {
        c,
        asymmetry,
        area,
        m,
        m_hat,
        psi,
        psi_tilde,
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        min_gap: eig.min_gap,
        condition: fact.condition(),
        residual,
    })
}

fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `m_i = −∮_{∂D} x_d ψ_i dσ` for every column of `psi`.
pub fn compute_moments(grid: &BoundaryGrid, psi: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        psi.ncols(),
        (0..psi.ncols()).map(|i| -(0..grid.len()).map(|k| grid.pos[k][1] * psi[(k, i)] * grid.weight[k]).sum::<f64>()),
    )
}

/// Sorted generalized eigenpairs.
#[derive(Clone, Debug)]
pub struct Eigenpairs {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
    pub min_gap: f64,
}

/// Solves `C u = λ V u` for symmetric `C` and diagonal `V = diag(area)`, with
/// `uᵀ V u = 1` and the largest-magnitude component of each `u` positive.
pub fn eigendecompose(c: &DMatrix<f64>, area: &DVector<f64>) -> Result<Eigenpairs> {
    let n = area.len();
    if c.nrows() != n || c.ncols() != n {
        return Err(Error::InvalidInput(format!("capacitance is {}×{} but there are {n} areas", c.nrows(), c.ncols())));
    }
    if let Some(a) = area.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::InvalidInput(format!("resonator area must be positive, got {a}")));
    }
    let inv_sqrt = area.map(|a| 1.0 / a.sqrt());
    let w = DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * c[(i, j)] * inv_sqrt[j]);
    let eig = SymmetricEigen::new(w);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * eig.eigenvectors[(i, order[j])]);
    for mut col in vectors.column_iter_mut() {
        let max = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        // near-ties resolve to the lowest index so the gauge is stable under roundoff
        let lead = col.iter().position(|v| v.abs() >= max * (1.0 - 1e-12)).unwrap_or(0);
        if col[lead] < 0.0 {
            col.neg_mut();
        }
    }
    let top = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min_gap = (1..n).map(|j| (values[j] - values[j - 1]) / top).fold(f64::INFINITY, f64::min);
    Ok(Eigenpairs { values, vectors, min_gap })
}

/// `v_i = S[ψ_i]` at a point above the resonators; tends to `m_i/L` far from the wall.
pub fn farfield_constant(grid: &BoundaryGrid, psi_i: &[f64], probe: [f64; 2]) -> Result<f64> {
    laplace_potential(grid, psi_i, probe)
}
