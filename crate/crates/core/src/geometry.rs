//! Star-shaped resonators described by a truncated Fourier radius, their
//! periodic-trapezoid discretization, parametric velocity fields and the
//! validity checks that keep every resonator inside the half-space cell.
//!
//! A resonator boundary is `x(t) = c + r(t) (cos t, sin t)` with
//! `r(t) = a0 (1 + (1/2M) Σ_i (a_i cos it + b_i sin it))`.
//! Its design vector is ordered `[c_x, c_y, a0, a_1..a_M, b_1..b_M]`.

use std::f64::consts::PI;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::ops::Range;

use crate::error::{Error, Result};

/// Fourier description of one resonator.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeParams {
    /// `(x_ℓ, x_d)`: lateral position and height above the wall.
    pub center: [f64; 2],
    pub a0: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl ShapeParams {
    pub fn circle(center: [f64; 2], a0: f64) -> Self {
        Self::with_order(center, a0, 0)
    }

    /// A circle carrying `order` zero Fourier coefficients of each kind.
    pub fn with_order(center: [f64; 2], a0: f64, order: usize) -> Self {
        Self { center, a0, cos: vec![0.0; order], sin: vec![0.0; order] }
    }

    /// Truncation order `M`.
    pub fn order(&self) -> usize {
        self.cos.len()
    }

    pub fn n_params(&self) -> usize {
        3 + 2 * self.order()
    }

    /// `r(t)`, `r'(t)`, `r''(t)`.
    pub fn radius(&self, t: f64) -> [f64; 3] {
        let m = self.order();
        if m == 0 {
            return [self.a0, 0.0, 0.0];
        }
        let (mut s, mut ds, mut dds) = (0.0, 0.0, 0.0);
        for i in 1..=m {
            let fi = i as f64;
            let (si, ci) = (fi * t).sin_cos();
            let (a, b) = (self.cos[i - 1], self.sin[i - 1]);
            s += a * ci + b * si;
            ds += fi * (b * ci - a * si);
            dds -= fi * fi * (a * ci + b * si);
        }
        let scale = self.a0 / (2.0 * m as f64);
        [self.a0 + scale * s, scale * ds, scale * dds]
    }

    /// `r(t)/a0`, evaluated without dividing by `a0`.
    pub fn relative_radius(&self, t: f64) -> f64 {
        let m = self.order();
        if m == 0 {
            return 1.0;
        }
        let s: f64 = (1..=m)
            .map(|i| {
                let (si, ci) = (i as f64 * t).sin_cos();
                self.cos[i - 1] * ci + self.sin[i - 1] * si
            })
            .sum();
        1.0 + s / (2.0 * m as f64)
    }

    pub fn point(&self, t: f64) -> [f64; 2] {
        let r = self.radius(t)[0];
        let (s, c) = t.sin_cos();
        [self.center[0] + r * c, self.center[1] + r * s]
    }

    /// Upper bound on `r(t)` used as a bounding circle.
    pub fn max_radius(&self) -> f64 {
        let m = self.order();
        if m == 0 {
            return self.a0.abs();
        }
        let spread: f64 = self.cos.iter().chain(&self.sin).map(|v| v.abs()).sum();
        self.a0.abs() * (1.0 + spread / (2.0 * m as f64))
    }

    /// Whether `p` lies strictly inside the (star-shaped) boundary.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let rho = dx.hypot(dy);
        rho < self.radius(dy.atan2(dx))[0]
    }

    /// Design vector `[c_x, c_y, a0, a_1..a_M, b_1..b_M]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(&self.center);
        p.push(self.a0);
        p.extend_from_slice(&self.cos);
        p.extend_from_slice(&self.sin);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "design vector length mismatch");
        let m = self.order();
        self.center = [p[0], p[1]];
        self.a0 = p[2];
        self.cos.copy_from_slice(&p[3..3 + m]);
        self.sin.copy_from_slice(&p[3 + m..3 + 2 * m]);
    }

    pub fn param_name(&self, index: usize) -> String {
        let m = self.order();
        match index {
            0 => "center_x".into(),
            1 => "center_y".into(),
            2 => "a0".into(),
            i if i < 3 + m => format!("a_{}", i - 2),
            i if i < 3 + 2 * m => format!("b_{}", i - 2 - m),
            i => format!("invalid_{i}"),
        }
    }

    /// Enclosed area `½∮ x·ν dσ`, trapezoid rule on `n_pts` nodes (exact once `n_pts > 2M`).
    pub fn area(&self, n_pts: usize) -> f64 {
        let h = 2.0 * PI / n_pts as f64;
        let mut acc = 0.0;
        for k in 0..n_pts {
            let t = k as f64 * h;
            let x = self.point(t);
            let d = self.derivative(t);
            acc += x[0] * d[1] - x[1] * d[0];
        }
        0.5 * acc * h
    }

    /// `x'(t)` and `x''(t)`.
    fn derivatives(&self, t: f64) -> ([f64; 2], [f64; 2]) {
        let [r, dr, ddr] = self.radius(t);
        let (s, c) = t.sin_cos();
        let d1 = [dr * c - r * s, dr * s + r * c];
        let d2 = [(ddr - r) * c - 2.0 * dr * s, (ddr - r) * s + 2.0 * dr * c];
        (d1, d2)
    }

    fn derivative(&self, t: f64) -> [f64; 2] {
        self.derivatives(t).0
    }
}

/// `x(t)` for one resonator.
pub fn parametrize(p: &ShapeParams, t: f64) -> [f64; 2] {
    p.point(t)
}

/// `∂x(t)/∂p` for design parameter `index` of `p`.
pub fn velocity_field(p: &ShapeParams, index: usize, t: f64) -> Result<[f64; 2]> {
    let m = p.order();
    let (s, c) = t.sin_cos();
    let radial = |w: f64| [w * c, w * s];
    match index {
        0 => Ok([1.0, 0.0]),
        1 => Ok([0.0, 1.0]),
        2 => Ok(radial(p.relative_radius(t))),
        i if i < 3 + m => {
            let order = (i - 2) as f64;
            Ok(radial(p.a0 * (order * t).cos() / (2.0 * m as f64)))
        }
        i if i < 3 + 2 * m => {
            let order = (i - 2 - m) as f64;
            Ok(radial(p.a0 * (order * t).sin() / (2.0 * m as f64)))
        }
        i => Err(Error::InvalidInput(format!(
            "parameter index {i} out of range for a shape with {} parameters",
            p.n_params()
        ))),
    }
}

/// Ways a resonator configuration can be unusable.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NonPositiveRadius { resonator: usize, min_radius: f64 },
    CrossesWall { resonator: usize, min_height: f64 },
    /// Part of the resonator lies outside `[−L/2, L/2]`, so it meets the copy in the neighbouring cell.
    LeavesCell { resonator: usize, extent: f64, edge: f64 },
    Overlap { first: usize, second: usize, shift: i32, distance: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::NonPositiveRadius { resonator, min_radius } => {
                write!(f, "resonator {resonator} has non-positive radius (min r = {min_radius:.6})")
            }
            Violation::CrossesWall { resonator, min_height } => {
                write!(f, "resonator {resonator} crosses the wall (min x_d = {min_height:.6})")
            }
            Violation::LeavesCell { resonator, extent, edge } => write!(
                f,
                "resonator {resonator} overlaps its periodic image across the cell edge x_l = {edge} (reaches {extent:.6})"
            ),
            Violation::Overlap { first, second, shift, distance } => {
                if shift == 0 {
                    write!(f, "resonators {first} and {second} overlap (gap {distance:.6})")
                } else {
                    write!(
                        f,
                        "resonator {first} overlaps the image of resonator {second} shifted by {shift} period(s) (gap {distance:.6})"
                    )
                }
            }
        }
    }
}

/// Default safety margin: `1e-3 · L`.
pub fn default_margin(period: f64) -> f64 {
    1e-3 * period
}

const CHECK_SAMPLES: usize = 512;

/// Checks wall clearance, cell containment, pairwise separation (including
/// lattice-shifted copies) and radius positivity. Returns every violation found.
pub fn validate_geometry(shapes: &[ShapeParams], period: f64, margin: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let samples: Vec<Vec<[f64; 2]>> = shapes
        .iter()
        .map(|s| {
            (0..CHECK_SAMPLES)
                .map(|k| s.point(2.0 * PI * k as f64 / CHECK_SAMPLES as f64))
                .collect()
        })
        .collect();

    for (i, s) in shapes.iter().enumerate() {
        let min_r = (0..CHECK_SAMPLES)
            .map(|k| s.radius(2.0 * PI * k as f64 / CHECK_SAMPLES as f64)[0])
            .fold(f64::INFINITY, f64::min);
        if !(min_r > 0.0) || !(s.a0 > 0.0) {
            out.push(Violation::NonPositiveRadius { resonator: i, min_radius: min_r.min(s.a0) });
        }
        let min_h = samples[i].iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        if !(min_h > margin) {
            out.push(Violation::CrossesWall { resonator: i, min_height: min_h });
        }
        let half = 0.5 * period;
        let max_x = samples[i].iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_x = samples[i].iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        if !(max_x < half - 0.5 * margin) {
            out.push(Violation::LeavesCell { resonator: i, extent: max_x, edge: half });
        }
        if !(min_x > -half + 0.5 * margin) {
            out.push(Violation::LeavesCell { resonator: i, extent: min_x, edge: -half });
        }
    }

    for i in 0..shapes.len() {
        for j in i..shapes.len() {
            for shift in -1i32..=1 {
                if i == j && shift == 0 {
                    continue;
                }
                let offset = shift as f64 * period;
                let cj = [shapes[j].center[0] + offset, shapes[j].center[1]];
                let dc = (shapes[i].center[0] - cj[0]).hypot(shapes[i].center[1] - cj[1]);
                if dc > shapes[i].max_radius() + shapes[j].max_radius() + margin {
                    continue;
                }
                let mut gap = f64::INFINITY;
                for p in &samples[i] {
                    for q in &samples[j] {
                        gap = gap.min((p[0] - q[0] - offset).hypot(p[1] - q[1]));
                    }
                }
                let mut shifted = shapes[j].clone();
                shifted.center = cj;
                let probe = [samples[j][0][0] + offset, samples[j][0][1]];
                let nested = shapes[i].contains(probe) || shifted.contains(samples[i][0]);
                if nested {
                    gap = 0.0;
                }
                if !(gap > margin) {
                    out.push(Violation::Overlap { first: i, second: j, shift, distance: gap });
                }
            }
        }
    }
    out
}

/// Uniform-grid Nyström discretization of all resonator boundaries.
///
/// Node `k` of resonator `j` sits at global index `j * n_per + k`, parameter `t_k = 2πk/n_per`.
#[derive(Clone, Debug)]
pub struct BoundaryGrid {
    pub period: f64,
    pub n_per: usize,
    pub n_res: usize,
    pub t: Vec<f64>,
    pub pos: Vec<[f64; 2]>,
    /// `x'(t)`.
    pub tangent: Vec<[f64; 2]>,
    /// `|x'(t)|`.
    pub speed: Vec<f64>,
    pub normal: Vec<[f64; 2]>,
    pub curvature: Vec<f64>,
    /// Trapezoid weights `(2π/n_per) |x'(t_k)|`, shared by every boundary integral.
    pub weight: Vec<f64>,
}

impl BoundaryGrid {
    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn owner(&self, k: usize) -> usize {
        k / self.n_per
    }

    pub fn range(&self, j: usize) -> Range<usize> {
        j * self.n_per..(j + 1) * self.n_per
    }

    /// Cell measure `|Y| = L`.
    pub fn cell(&self) -> f64 {
        self.period
    }

    /// Hash of the node data, used to tag operators.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.n_per.hash(&mut h);
        self.period.to_bits().hash(&mut h);
        for p in &self.pos {
            p[0].to_bits().hash(&mut h);
            p[1].to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// Trapezoid integral of nodal values over resonator `j`.
    pub fn integrate_on(&self, j: usize, values: &[f64]) -> f64 {
        self.range(j).map(|k| values[k] * self.weight[k]).sum()
    }
}

/// Builds the grid with analytic tangents, normals and curvatures.
///
/// `n_pts` must be even; the layer-potential quadrature further requires `n_pts ≥ 16`.
pub fn discretize(shapes: &[ShapeParams], n_pts: usize, period: f64) -> Result<BoundaryGrid> {
    if n_pts < 4 || n_pts % 2 != 0 {
        return Err(Error::InvalidInput(format!("N_pts must be even and at least 4, got {n_pts}")));
    }
    if !(period > 0.0) {
        return Err(Error::InvalidInput(format!("period must be positive, got {period}")));
    }
    if shapes.is_empty() {
        return Err(Error::InvalidInput("at least one resonator is required".into()));
    }
    let violations = validate_geometry(shapes, period, 0.0);
    if !violations.is_empty() {
        return Err(Error::InvalidGeometry(violations));
    }

    let total = shapes.len() * n_pts;
    let mut g = BoundaryGrid {
        period,
        n_per: n_pts,
        n_res: shapes.len(),
        t: Vec::with_capacity(total),
        pos: Vec::with_capacity(total),
        tangent: Vec::with_capacity(total),
        speed: Vec::with_capacity(total),
        normal: Vec::with_capacity(total),
        curvature: Vec::with_capacity(total),
        weight: Vec::with_capacity(total),
    };
    let h = 2.0 * PI / n_pts as f64;
    for s in shapes {
        for k in 0..n_pts {
            let t = k as f64 * h;
            let (d1, d2) = s.derivatives(t);
            let speed = d1[0].hypot(d1[1]);
            g.t.push(t);
            g.pos.push(s.point(t));
            g.tangent.push(d1);
            g.speed.push(speed);
            g.normal.push([d1[1] / speed, -d1[0] / speed]);
            g.curvature.push((d1[0] * d2[1] - d1[1] * d2[0]) / speed.powi(3));
            g.weight.push(h * speed);
        }
    }
    Ok(g)
}

/// Circles on a `cols × rows` grid: columns spread symmetrically about `x_ℓ = 0`,
/// the bottom row at `height`, consecutive rows and columns `spacing` apart.
pub fn layout_preset(
    cols: usize,
    rows: usize,
    radius: f64,
    spacing: f64,
    height: f64,
    order: usize,
) -> Vec<ShapeParams> {
    let mut out = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let x = (c as f64 - 0.5 * (cols as f64 - 1.0)) * spacing;
            let y = height + r as f64 * spacing;
            out.push(ShapeParams::with_order([x, y], radius, order));
        }
    }
    out
}
