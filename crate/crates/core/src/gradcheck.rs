//! Finite-difference audit of the parametric gradients of every design quantity.

use crate::capacitance::{compute_capacitance_with, CapacitanceData};
use crate::error::Result;
use crate::geometry::{discretize, BoundaryGrid, ShapeParams};
use crate::layerpot::LayerTables;
use crate::optimizer::{objective_ref_on, objective_res, uniform_targets, OptConfig};
use crate::rom::{BandRule, MaterialParams, RomModel};
use crate::shapegrad::{
    grad_c, grad_m, grad_objective_ref, grad_objective_res, grad_reflection, modal_densities, parametric_gradient,
};

/// Central-difference step relative to `max(|p|, 1)`.
pub const FD_RELATIVE_STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Components smaller than this fraction of the largest one in their family are compared absolutely.
pub const ABSOLUTE_FLOOR: f64 = 1e-8;

/// Quantity family sharing one gradient norm: `C_0_1 → C`, `lambda1_2 → lambda1`, `re_r → r`.
pub fn family(quantity: &str) -> &str {
    match quantity {
        "re_r" | "im_r" => "r",
        q => {
            let mut base = q;
            while let Some((head, tail)) = base.rsplit_once('_') {
                if tail.is_empty() || !tail.bytes().all(|b| b.is_ascii_digit()) {
                    break;
                }
                base = head;
            }
            base
        }
    }
}

/// What to differentiate and where.
#[derive(Clone, Debug)]
pub struct ProbeSettings {
    pub cfg: OptConfig,
    pub materials: MaterialParams,
    /// Frequency at which `r` is differentiated.
    pub probe_omega: f64,
}

struct Design {
    grid: BoundaryGrid,
    cap: CapacitanceData,
    model: RomModel,
    adjoint: nalgebra::DMatrix<f64>,
}

fn build(shapes: &[ShapeParams], s: &ProbeSettings) -> Result<Design> {
    let grid = discretize(shapes, s.cfg.n_pts, s.cfg.period)?;
    let tables = LayerTables::laplace(&grid)?;
    let cap = compute_capacitance_with(&grid, &tables.laplace_single_layer())?;
    let model = RomModel::new(&cap, s.materials, grid.cell())?;
    Ok(Design { adjoint: tables.laplace_adjoint_double_layer(), grid, cap, model })
}

fn targets(shapes: &[ShapeParams], s: &ProbeSettings) -> Vec<f64> {
    uniform_targets(s.cfg.band, s.cfg.targets.unwrap_or(shapes.len()))
}

/// Named scalar quantities: `C_i_j` (`i ≤ j`), `m_j`, `lambda_j`, `lambda1_j`, `re_r`,
/// `im_r`, `J_ref` and, for lossy materials, `J_res`.
pub fn design_quantities(shapes: &[ShapeParams], s: &ProbeSettings) -> Result<Vec<(String, f64)>> {
    quantities(shapes, s, None)
}

/// `rule` fixes the frequency quadrature of `J_ref`; by default the design's own rule is used.
fn quantities(shapes: &[ShapeParams], s: &ProbeSettings, rule: Option<&BandRule>) -> Result<Vec<(String, f64)>> {
    let d = build(shapes, s)?;
    let n = shapes.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            out.push((format!("C_{i}_{j}"), d.cap.c[(i, j)]));
        }
    }
    for j in 0..n {
        out.push((format!("m_{j}"), d.cap.m[j]));
    }
    for j in 0..n {
        out.push((format!("lambda_{j}"), d.model.lambda[j]));
    }
    for j in 0..n {
        out.push((format!("lambda1_{j}"), d.model.lambda1[j]));
    }
    let r = d.model.reflection(s.probe_omega)?;
    out.push(("re_r".into(), r.re));
    out.push(("im_r".into(), r.im));
    let own;
    let rule = match rule {
        Some(r) => r,
        None => {
            own = d.model.band_rule(s.cfg.band, s.cfg.n_omega)?;
            &own
        }
    };
    out.push(("J_ref".into(), objective_ref_on(&d.model, rule)?));
    if !s.materials.is_lossless() {
        out.push(("J_res".into(), objective_res(&d.model, &targets(shapes, s))?));
    }
    Ok(out)
}

/// Analytic parametric gradients, in the order of [`design_quantities`].
pub fn design_gradients(shapes: &[ShapeParams], s: &ProbeSettings) -> Result<Vec<(String, Vec<f64>)>> {
    let d = build(shapes, s)?;
    let n = shapes.len();
    let grid = &d.grid;
    let mut out = Vec::new();
    let g_c = grad_c(&d.cap, &d.adjoint);
    for i in 0..n {
        for j in i..n {
            out.push((format!("C_{i}_{j}"), parametric_gradient(&g_c, i * n + j, shapes, grid)?));
        }
    }
    let g_m = grad_m(grid, &d.cap, &d.adjoint);
    for j in 0..n {
        out.push((format!("m_{j}"), parametric_gradient(&g_m, j, shapes, grid)?));
    }
    let modal = modal_densities(grid, &d.cap, &d.adjoint, &s.materials)?;
    for j in 0..n {
        out.push((format!("lambda_{j}"), parametric_gradient(&modal.lambda, j, shapes, grid)?));
    }
    for j in 0..n {
        out.push((format!("lambda1_{j}"), parametric_gradient(&modal.lambda1, j, shapes, grid)?));
    }
    let g_r = parametric_gradient(&grad_reflection(&d.model, &modal, s.probe_omega)?, 0, shapes, grid)?;
    out.push(("re_r".into(), g_r.iter().map(|z| z.re).collect()));
    out.push(("im_r".into(), g_r.iter().map(|z| z.im).collect()));
    let g_ref = grad_objective_ref(&d.model, &modal, s.cfg.band, s.cfg.n_omega)?;
    out.push(("J_ref".into(), parametric_gradient(&g_ref, 0, shapes, grid)?));
    if !s.materials.is_lossless() {
        let g_res = grad_objective_res(&d.model, &modal, &targets(shapes, s))?;
        out.push(("J_res".into(), parametric_gradient(&g_res, 0, shapes, grid)?));
    }
    Ok(out)
}

/// One gradient component compared with its central difference.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckRow {
    pub quantity: String,
    pub resonator: usize,
    pub parameter: String,
    pub analytic: f64,
    pub finite_difference: f64,
    /// `|analytic − fd| / |analytic|`; below the absolute floor `ABSOLUTE_FLOOR · g`, with `g`
    /// the largest analytic component over the quantity's [`family`], the error is measured
    /// in units of the floor scaled by `GRAD_TOLERANCE`. Either way the row passes iff
    /// `rel_err ≤ GRAD_TOLERANCE`.
    pub rel_err: f64,
    pub passed: bool,
}

/// Compares every analytic component with a central difference of step
/// `FD_RELATIVE_STEP · max(|p|, 1)`. The perturbed designs reuse the frequency rule of the
/// base design, so both sides differentiate the same discrete objective.
pub fn check_gradients(shapes: &[ShapeParams], s: &ProbeSettings) -> Result<Vec<GradCheckRow>> {
    let analytic = design_gradients(shapes, s)?;
    let rule = build(shapes, s)?.model.band_rule(s.cfg.band, s.cfg.n_omega)?;
    // (quantity index, flattened parameter index) → fd value
    let mut fd: Vec<Vec<f64>> = vec![Vec::new(); analytic.len()];
    let mut labels = Vec::new();
    for (j, shape) in shapes.iter().enumerate() {
        let base = shape.params();
        for index in 0..shape.n_params() {
            let h = FD_RELATIVE_STEP * base[index].abs().max(1.0);
            let probe = |sign: f64| -> Result<Vec<(String, f64)>> {
                let mut moved = shapes.to_vec();
                let mut p = base.clone();
                p[index] += sign * h;
                moved[j].set_params(&p);
                quantities(&moved, s, Some(&rule))
            };
            let (plus, minus) = (probe(1.0)?, probe(-1.0)?);
            for (q, ((_, a), (_, b))) in plus.iter().zip(&minus).enumerate() {
                fd[q].push((a - b) / (2.0 * h));
            }
            labels.push((j, shape.param_name(index)));
        }
    }
    let mut norms = std::collections::HashMap::new();
    for (name, grad) in &analytic {
        let norm = norms.entry(family(name)).or_insert(0.0f64);
        *norm = grad.iter().fold(*norm, |m, g| m.max(g.abs()));
    }
    let mut rows = Vec::new();
    for ((name, grad), fd) in analytic.iter().zip(&fd) {
        let floor = ABSOLUTE_FLOOR * norms[family(name)];
        for ((a, f), (resonator, parameter)) in grad.iter().zip(fd).zip(&labels) {
            let diff = (a - f).abs();
            let rel_err = if a.abs() >= floor && *a != 0.0 {
                diff / a.abs()
            } else if floor > 0.0 {
                GRAD_TOLERANCE * diff / floor
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            let passed = rel_err <= GRAD_TOLERANCE;
            rows.push(GradCheckRow {
                quantity: name.clone(),
                resonator: *resonator,
                parameter: parameter.clone(),
                analytic: *a,
                finite_difference: *f,
                rel_err,
                passed,
            });
        }
    }
    Ok(rows)
}
