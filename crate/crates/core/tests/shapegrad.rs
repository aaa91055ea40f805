use metascreen::capacitance::compute_capacitance_with;
use metascreen::geometry::{discretize, layout_preset, ShapeParams};
use metascreen::gradcheck::{check_gradients, design_gradients, design_quantities, ProbeSettings};
use metascreen::layerpot::LayerTables;
use metascreen::optimizer::{uniform_targets, OptConfig};
use metascreen::rom::{MaterialParams, RomModel};
use metascreen::shapegrad::{
    grad_c, grad_m, grad_objective_ref, grad_objective_res, grad_reflection, modal_densities,
};

fn asymmetric_pair() -> Vec<ShapeParams> {
    vec![
        ShapeParams { center: [-3.0, 1.2], a0: 0.6, cos: vec![0.3, -0.2], sin: vec![0.15, 0.1] },
        ShapeParams { center: [2.5, 1.6], a0: 0.45, cos: vec![-0.1, 0.25], sin: vec![-0.3, 0.05] },
    ]
}

fn settings() -> ProbeSettings {
    ProbeSettings { cfg: OptConfig::default(), materials: MaterialParams::default(), probe_omega: 0.05 }
}

#[test]
fn every_gradient_matches_finite_differences() {
    let rows = check_gradients(&asymmetric_pair(), &settings()).unwrap();
    // 3 C entries, 2 m, 2 λ, 2 λ₁, Re r, Im r, J^ref, J^res, each over 14 parameters
    assert_eq!(rows.len(), 13 * 14);
    let failures: Vec<_> = rows.iter().filter(|r| !r.passed).collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn lattice_translation_pairings_vanish() {
    let shapes = asymmetric_pair();
    let s = settings();
    let grid = discretize(&shapes, s.cfg.n_pts, s.cfg.period).unwrap();
    let tables = LayerTables::laplace(&grid).unwrap();
    let cap = compute_capacitance_with(&grid, &tables.laplace_single_layer()).unwrap();
    let adjoint = tables.laplace_adjoint_double_layer();
    let model = RomModel::new(&cap, s.materials, grid.cell()).unwrap();
    let modal = modal_densities(&grid, &cap, &adjoint, &s.materials).unwrap();

    let mut real = vec![
        ("C", grad_c(&cap, &adjoint).translation_pairing(&grid)),
        ("m", grad_m(&grid, &cap, &adjoint).translation_pairing(&grid)),
        ("lambda", modal.lambda.translation_pairing(&grid)),
        ("lambda1", modal.lambda1.translation_pairing(&grid)),
        ("J_ref", grad_objective_ref(&model, &modal, s.cfg.band, s.cfg.n_omega).unwrap().translation_pairing(&grid)),
    ];
    let targets = uniform_targets(s.cfg.band, 2);
    real.push(("J_res", grad_objective_res(&model, &modal, &targets).unwrap().translation_pairing(&grid)));
    for (name, pairing) in real {
        assert!(pairing.amax() <= 1e-8, "{name}: {pairing}");
    }
    let r = grad_reflection(&model, &modal, s.probe_omega).unwrap().translation_pairing(&grid);
    assert!(r.iter().all(|z| z.norm() <= 1e-8), "{r}");
}

#[test]
fn translating_every_resonator_leaves_quantities_unchanged() {
    let shapes = asymmetric_pair();
    let s = settings();
    let base = design_quantities(&shapes, &s).unwrap();
    let moved: Vec<_> = shapes
        .iter()
        .map(|p| ShapeParams { center: [p.center[0] + 0.7, p.center[1]], ..p.clone() })
        .collect();
    for ((name, a), (_, b)) in base.iter().zip(design_quantities(&moved, &s).unwrap()) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{name}: {a} vs {b}");
    }
}

#[test]
fn band_quadrature_converges() {
    let shapes = layout_preset(1, 1, 0.5, 2.0, 1.0, 2);
    let at = |n_omega| {
        let s = ProbeSettings { cfg: OptConfig { n_omega, ..OptConfig::default() }, ..settings() };
        let value = design_quantities(&shapes, &s).unwrap().into_iter().find(|q| q.0 == "J_ref").unwrap().1;
        let grad = design_gradients(&shapes, &s).unwrap().into_iter().find(|q| q.0 == "J_ref").unwrap().1;
        (value, grad)
    };
    let (v64, g64) = at(64);
    let (v128, g128) = at(128);
    assert!((v64 - v128).abs() <= 1e-8, "{v64} vs {v128}");
    for (a, b) in g64.iter().zip(&g128) {
        assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
    }
}

#[test]
fn lossless_materials_skip_the_resonance_objective() {
    let s = ProbeSettings { materials: MaterialParams { v_b: 1.0.into(), ..MaterialParams::default() }, ..settings() };
    let names: Vec<_> = design_quantities(&asymmetric_pair(), &s).unwrap().into_iter().map(|q| q.0).collect();
    assert!(names.contains(&"J_ref".to_string()));
    assert!(!names.contains(&"J_res".to_string()));
}
