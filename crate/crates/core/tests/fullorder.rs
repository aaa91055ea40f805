use metascreen::fullorder::{total_field, FullOrderSolver};
use metascreen::geometry::{discretize, BoundaryGrid, ShapeParams};
use metascreen::rom::MaterialParams;
use num_complex::Complex64;

fn circle(n: usize) -> BoundaryGrid {
    discretize(&[ShapeParams::circle([0.0, 1.0], 0.5)], n, 20.0).unwrap()
}

fn bumpy_pair(n: usize) -> BoundaryGrid {
    let a = ShapeParams { center: [-2.0, 1.2], a0: 0.5, cos: vec![0.1, 0.05], sin: vec![0.0, -0.08] };
    let b = ShapeParams { center: [2.5, 1.0], a0: 0.4, cos: vec![-0.05, 0.0], sin: vec![0.1, 0.02] };
    discretize(&[a, b], n, 20.0).unwrap()
}

#[test]
fn field_vanishes_on_the_wall() {
    let grid = circle(64);
    let solver = FullOrderSolver::new(&grid, MaterialParams::default(), 0.1).unwrap();
    let sol = solver.solve(0.06).unwrap();
    for x in [-9.0, -3.0, 0.0, 0.4, 7.5] {
        let u = total_field(&sol, &grid, [x, 0.0]).unwrap();
        assert!(u.norm() <= 1e-8, "{u} at {x}");
    }
    assert!(total_field(&sol, &grid, grid.pos[3]).is_err());
}

#[test]
fn far_field_is_a_single_plane_wave() {
    let grid = bumpy_pair(64);
    let solver = FullOrderSolver::new(&grid, MaterialParams::default(), 0.1).unwrap();
    for omega in [0.03, 0.07] {
        let sol = solver.solve(omega).unwrap();
        let k = sol.k_m;
        let i = Complex64::i();
        let residual_at = |height: f64| {
            let u = total_field(&sol, &grid, [1.3, height]).unwrap();
            let plane = (-i * k * height).exp() + sol.reflection * (i * k * height).exp();
            (u - plane).norm() / sol.reflection.norm()
        };
        assert!(residual_at(60.0) <= 1e-6);
        // once higher modes have died out the remainder decays at the first evanescent rate
        let rate = ((2.0 * std::f64::consts::PI / 20.0f64).powi(2) - omega * omega).sqrt();
        let (near, far) = (residual_at(20.0), residual_at(30.0));
        let observed = (near / far).ln() / 10.0;
        assert!((observed - rate).abs() < 0.02 * rate, "{observed} vs {rate}");
    }
}

#[test]
fn doubling_resolution_leaves_reflection_unchanged() {
    for omega in [0.03, 0.0778, 0.095] {
        let coarse = FullOrderSolver::new(&bumpy_pair(64), MaterialParams::default(), 0.1).unwrap().solve(omega).unwrap();
        let fine = FullOrderSolver::new(&bumpy_pair(128), MaterialParams::default(), 0.1).unwrap().solve(omega).unwrap();
        let change = (coarse.reflection - fine.reflection).norm();
        assert!(change <= 1e-7, "{change} at {omega}");
    }
}

#[test]
fn traces_match_across_the_boundary() {
    let grid = circle(256);
    let solver = FullOrderSolver::new(&grid, MaterialParams::default(), 0.1).unwrap();
    let sol = solver.solve(0.0775).unwrap();
    for node in [0, 37, 80, 151, 203] {
        let (p, nu) = (grid.pos[node], grid.normal[node]);
        // cubic extrapolation from offsets d, 2d, 3d, 4d on either side
        let trace = |side: f64| {
            let at = |s: f64| total_field(&sol, &grid, [p[0] + side * s * nu[0], p[1] + side * s * nu[1]]).unwrap();
            let d = 0.025;
            4.0 * at(d) - 6.0 * at(2.0 * d) + 4.0 * at(3.0 * d) - at(4.0 * d)
        };
        let (outside, inside) = (trace(1.0), trace(-1.0));
        let jump = (outside - inside).norm() / outside.norm();
        assert!(jump <= 1e-4, "node {node}: {jump}");
    }
}

#[test]
fn resonance_amplifies_the_interior_field() {
    // measured against the wall-adjusted incident field at the centre; material loss caps
    // the gain below this threshold, so the smoke test runs lossless
    let lossless = MaterialParams { v_b: Complex64::new(1.0, 0.0), ..MaterialParams::default() };
    let grid = circle(64);
    let solver = FullOrderSolver::new(&grid, lossless, 0.1).unwrap();
    let omegas: Vec<f64> = (0..81).map(|i| 0.076 + 0.00005 * i as f64).collect();
    let sols = solver.sweep(&omegas).unwrap();
    let (peak, gain) = sols
        .iter()
        .map(|s| {
            let local = 2.0 * (s.k_m.re * 1.0).sin();
            (s.omega, total_field(s, &grid, [0.0, 1.0]).unwrap().norm() / local)
        })
        .fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    assert!(gain >= 10.0, "{gain} at {peak}");
    let off = solver.solve(0.02).unwrap();
    let off_gain = total_field(&off, &grid, [0.0, 1.0]).unwrap().norm() / (2.0 * 0.02f64.sin());
    assert!(off_gain < gain / 10.0, "{off_gain}");
}
