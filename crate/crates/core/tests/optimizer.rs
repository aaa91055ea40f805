use metascreen::geometry::{layout_preset, validate_geometry};
use metascreen::optimizer::{evaluate, run, run_observed, Objective, OptConfig};
use metascreen::rom::MaterialParams;

fn resonance_config() -> OptConfig {
    OptConfig { objective: Objective::Resonance, ..OptConfig::default() }
}

#[test]
fn resonance_objective_baseline_is_frozen() {
    let initial = layout_preset(1, 1, 0.5, 2.0, 1.0, 1);
    let state = run(&resonance_config(), &MaterialParams::default(), &initial).unwrap();
    let first = state.history[0].value;
    // values recorded at the first green build
    assert!((first - 1.660041).abs() < 5e-6, "{first}");
    assert!((state.best_value - 8.842577e-2).abs() < 5e-7, "{}", state.best_value);
    assert!(state.best_value <= 0.5 * first);
}

#[test]
fn best_so_far_is_monotone_and_round_trips() {
    let initial = layout_preset(1, 1, 0.5, 2.0, 1.0, 2);
    let materials = MaterialParams::default();
    for objective in [Objective::Reflectance, Objective::Resonance] {
        let cfg = OptConfig { objective, max_iters: 40, ..OptConfig::default() };
        let mut best = f64::INFINITY;
        let mut trace = Vec::new();
        let state = run_observed(&cfg, &materials, &initial, |row, shapes| {
            assert!(row.value.is_finite() && row.grad_inf_norm.is_finite());
            assert!(validate_geometry(shapes, cfg.period, cfg.margin).is_empty());
            best = best.min(row.value);
            trace.push(best);
        })
        .unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(state.best_value, best);
        assert!(state.history.iter().enumerate().all(|(i, r)| r.iter == i));
        let again = evaluate(&state.best_shapes, &cfg, &materials).unwrap().value;
        assert!((again - state.best_value).abs() <= 1e-12, "{again} vs {}", state.best_value);
    }
}

#[test]
fn runs_are_deterministic() {
    let initial = layout_preset(2, 1, 0.5, 3.0, 1.0, 2);
    let cfg = OptConfig { max_iters: 15, seed: 11, ..resonance_config() };
    let a = run(&cfg, &MaterialParams::default(), &initial).unwrap();
    let b = run(&cfg, &MaterialParams::default(), &initial).unwrap();
    let bits = |s: &metascreen::optimizer::OptState| {
        s.history.iter().map(|r| (r.value.to_bits(), r.grad_inf_norm.to_bits())).collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.best_shapes, b.best_shapes);
}

#[test]
fn plateau_rule_stops_a_stalled_run() {
    let initial = layout_preset(1, 1, 0.5, 2.0, 1.0, 1);
    let cfg = OptConfig { learning_rate: 1e-14, plateau: Some(5), ..resonance_config() };
    let state = run(&cfg, &MaterialParams::default(), &initial).unwrap();
    assert_eq!(state.stop, metascreen::optimizer::StopReason::Plateau);
    assert_eq!(state.history.len(), 6);
}
