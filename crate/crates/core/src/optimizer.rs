//! Design loop over the Fourier shape parameters: rebuild grid and capacitance data,
//! evaluate the objective through the reduced model, pair its shape density with the
//! parametric velocity fields and take a normalized adaptive-moment step inside the
//! parameter box.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::capacitance::compute_capacitance_with;
use crate::error::{Error, Result};
use crate::geometry::{default_margin, discretize, validate_geometry, ShapeParams};
use crate::layerpot::LayerTables;
use crate::rom::{lambda_of_omega, BandRule, MaterialParams, RomModel};
use crate::shapegrad::{grad_objective_ref, grad_objective_res, modal_densities, parametric_gradient};

/// Jitter amplitude applied to Fourier coefficients after a degenerate spectrum.
const JITTER: f64 = 1e-4;
const JITTER_RETRIES: usize = 3;
const MAX_HALVINGS: usize = 10;
/// Smallest best-so-far improvement counted by the plateau rule.
const PLATEAU_IMPROVEMENT: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Band-averaged reflectance.
    Reflectance,
    /// Resonance matching at uniformly spread targets.
    Resonance,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ref" => Ok(Self::Reflectance),
            "res" => Ok(Self::Resonance),
            other => Err(Error::InvalidInput(format!("objective must be \"ref\" or \"res\", got \"{other}\""))),
        }
    }
}

/// Box constraints per parameter class, as `(low, high)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub center_x: (f64, f64),
    pub center_y: (f64, f64),
    pub a0: (f64, f64),
    pub coefficient: (f64, f64),
}

impl Bounds {
    /// Radii in `[0.1, 1]`, coefficients in `[−1, 1]`, centers anywhere in the cell up to height `L`.
    pub fn for_period(period: f64) -> Self {
        Self {
            center_x: (-0.5 * period, 0.5 * period),
            center_y: (0.0, period),
            a0: (0.1, 1.0),
            coefficient: (-1.0, 1.0),
        }
    }

    fn for_index(&self, index: usize) -> (f64, f64) {
        match index {
            0 => self.center_x,
            1 => self.center_y,
            2 => self.a0,
            _ => self.coefficient,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptConfig {
    pub objective: Objective,
    pub band: (f64, f64),
    /// Number of resonance targets; `None` means one per resonator.
    pub targets: Option<usize>,
    /// Gauss–Legendre nodes for the reflectance objective.
    pub n_omega: usize,
    pub max_iters: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bounds: Bounds,
    pub margin: f64,
    pub seed: u64,
    /// Stop after this many iterations without improving the best value; `None` disables.
    pub plateau: Option<usize>,
    pub n_pts: usize,
    pub period: f64,
    /// Record wall-clock times in the history; off keeps histories reproducible bit for bit.
    pub record_timing: bool,
}

impl Default for OptConfig {
    fn default() -> Self {
        let period = 20.0;
        Self {
            objective: Objective::Reflectance,
            band: (0.01, 0.1),
            targets: None,
            n_omega: 64,
            max_iters: 100,
            learning_rate: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            bounds: Bounds::for_period(period),
            margin: default_margin(period),
            seed: 0,
            plateau: Some(25),
            n_pts: 128,
            period,
            record_timing: false,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let (lo, hi) = self.band;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            problems.push(format!("band must satisfy 0 < omega_min < omega_max, got [{lo}, {hi}]"));
        }
        if self.n_omega == 0 {
            problems.push("n_omega must be positive".into());
        }
        if self.targets == Some(0) {
            problems.push("target count must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                problems.push(format!("{name} must be in [0,1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            problems.push(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.margin >= 0.0) {
            problems.push(format!("margin must be non-negative, got {}", self.margin));
        }
        if !(self.period > 0.0) {
            problems.push(format!("period must be positive, got {}", self.period));
        }
        let b = &self.bounds;
        for (name, (l, h)) in [("center_x", b.center_x), ("center_y", b.center_y), ("a0", b.a0), ("coefficient", b.coefficient)] {
            if !(l <= h) {
                problems.push(format!("{name} bounds are empty: [{l}, {h}]"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }
}

/// `ω_j* = ω_min + j (ω_max − ω_min)/(M + 1)`, `j = 1..M`.
pub fn uniform_targets(band: (f64, f64), count: usize) -> Vec<f64> {
    let (lo, hi) = band;
    (1..=count).map(|j| lo + j as f64 * (hi - lo) / (count + 1) as f64).collect()
}

/// `(1/(ω_max − ω_min)) ∫ |r|² dω` by the composite rule of [`RomModel::band_rule`].
pub fn objective_ref(model: &RomModel, band: (f64, f64), n_omega: usize) -> Result<f64> {
    objective_ref_on(model, &model.band_rule(band, n_omega)?)
}

/// Band-averaged reflectance on a prescribed rule.
pub fn objective_ref_on(model: &RomModel, rule: &BandRule) -> Result<f64> {
    let (lo, hi) = rule.band;
    let mut acc = 0.0;
    for (w, q) in rule.nodes.iter().zip(&rule.weights) {
        acc += q * model.reflection(*w)?.norm_sqr();
    }
    Ok(acc / (hi - lo))
}

/// `(1/M) Σ_j [(λ_j/Re λ(ω_j*) − 1)² + (ω_j* λ_{j,1}/Im λ(ω_j*) − 1)²]` over the lowest `M` modes.
pub fn objective_res(model: &RomModel, targets: &[f64]) -> Result<f64> {
    let count = targets.len();
    if count == 0 || count > model.len() {
        return Err(Error::InvalidInput(format!("{count} targets for {} modes", model.len())));
    }
    let mut acc = 0.0;
    for (j, &target) in targets.iter().enumerate() {
        let lam = lambda_of_omega(&model.materials, target)?;
        if lam.im == 0.0 {
            return Err(Error::LosslessResonanceObjective);
        }
        acc += (model.lambda[j] / lam.re - 1.0).powi(2) + (target * model.lambda1[j] / lam.im - 1.0).powi(2);
    }
    Ok(acc / count as f64)
}

/// Objective value and parametric gradient of one design.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub model: RomModel,
}

/// Builds grid, capacitance data and reduced model, then the objective and its gradient.
pub fn evaluate(shapes: &[ShapeParams], cfg: &OptConfig, materials: &MaterialParams) -> Result<Evaluation> {
    let grid = discretize(shapes, cfg.n_pts, cfg.period)?;
    let tables = LayerTables::laplace(&grid)?;
    let cap = compute_capacitance_with(&grid, &tables.laplace_single_layer())?;
    let model = RomModel::new(&cap, *materials, grid.cell())?;
    let modal = modal_densities(&grid, &cap, &tables.laplace_adjoint_double_layer(), materials)?;
    let (value, density) = match cfg.objective {
        Objective::Reflectance => (
            objective_ref(&model, cfg.band, cfg.n_omega)?,
            grad_objective_ref(&model, &modal, cfg.band, cfg.n_omega)?,
        ),
        Objective::Resonance => {
            let targets = uniform_targets(cfg.band, cfg.targets.unwrap_or(shapes.len()));
            (objective_res(&model, &targets)?, grad_objective_res(&model, &modal, &targets)?)
        }
    };
    let gradient = parametric_gradient(&density, 0, shapes, &grid)?;
    if !value.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("objective or gradient".into()));
    }
    Ok(Evaluation { value, gradient, model })
}

/// Adaptive moments for the flattened design vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub steps: i32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { first: vec![0.0; len], second: vec![0.0; len], steps: 0 }
    }
}

/// Adam with each resonator's gradient block scaled to unit max-norm first.
///
/// Returns the raw step `Δp`; the caller subtracts it and enforces constraints.
pub fn uniform_adam_step(state: &mut AdamState, gradient: &[f64], blocks: &[usize], cfg: &OptConfig) -> Result<Vec<f64>> {
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    let mut normalized = gradient.to_vec();
    let mut start = 0;
    for &len in blocks {
        let block = &mut normalized[start..start + len];
        let scale = block.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if scale > 0.0 {
            block.iter_mut().for_each(|g| *g /= scale);
        }
        start += len;
    }
    state.steps += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.steps);
    let c2 = 1.0 - cfg.beta2.powi(state.steps);
    Ok(normalized
        .iter()
        .enumerate()
        .map(|(i, g)| {
            state.first[i] = cfg.beta1 * state.first[i] + (1.0 - cfg.beta1) * g;
            state.second[i] = cfg.beta2 * state.second[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = state.first[i] / c1;
            let v_hat = state.second[i] / c2;
            cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon)
        })
        .collect())
}

/// Clamps every parameter of every resonator into its box.
pub fn project(shapes: &mut [ShapeParams], bounds: &Bounds) {
    for s in shapes.iter_mut() {
        let p: Vec<f64> = s
            .params()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (lo, hi) = bounds.for_index(i);
                v.clamp(lo, hi)
            })
            .collect();
        s.set_params(&p);
    }
}

fn flatten(shapes: &[ShapeParams]) -> Vec<f64> {
    shapes.iter().flat_map(ShapeParams::params).collect()
}

fn apply(shapes: &[ShapeParams], base: &[f64], step: &[f64], scale: f64, bounds: &Bounds) -> Vec<ShapeParams> {
    let mut out = shapes.to_vec();
    let mut start = 0;
    for s in out.iter_mut() {
        let len = s.n_params();
        let p: Vec<f64> = (start..start + len).map(|i| base[i] - scale * step[i]).collect();
        s.set_params(&p);
        start += len;
    }
    project(&mut out, bounds);
    out
}

/// Outcome of one constrained step.
#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    /// Accepted after this many halvings.
    Accepted(usize),
    /// No valid geometry along the step; parameters unchanged.
    Skipped,
}

/// Adam step, projection onto the box, then halving until the geometry validates.
pub fn step_uniform_adam(
    shapes: &mut Vec<ShapeParams>,
    adam: &mut AdamState,
    gradient: &[f64],
    cfg: &OptConfig,
) -> Result<StepOutcome> {
    let blocks: Vec<usize> = shapes.iter().map(ShapeParams::n_params).collect();
    let step = uniform_adam_step(adam, gradient, &blocks, cfg)?;
    let base = flatten(shapes);
    let mut scale = 1.0;
    for halvings in 0..=MAX_HALVINGS {
        let candidate = apply(shapes, &base, &step, scale, &cfg.bounds);
        if validate_geometry(&candidate, cfg.period, cfg.margin).is_empty() {
            *shapes = candidate;
            return Ok(StepOutcome::Accepted(halvings));
        }
        scale *= 0.5;
    }
    log::warn!("no valid geometry along the step after {MAX_HALVINGS} halvings; iteration skipped");
    Ok(StepOutcome::Skipped)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    Plateau,
}

/// Everything the loop produced.
#[derive(Clone, Debug)]
pub struct OptState {
    pub shapes: Vec<ShapeParams>,
    pub adam: AdamState,
    pub history: Vec<HistoryRow>,
    pub best_value: f64,
    pub best_shapes: Vec<ShapeParams>,
    pub initial_shapes: Vec<ShapeParams>,
    pub stop: StopReason,
}

fn jitter(shapes: &mut [ShapeParams], rng: &mut ChaCha8Rng, bounds: &Bounds) {
    for s in shapes.iter_mut() {
        for c in s.cos.iter_mut().chain(s.sin.iter_mut()) {
            *c += JITTER * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    project(shapes, bounds);
}

/// Evaluates, retrying with seeded Fourier jitter when the spectrum is degenerate.
fn evaluate_with_retry(
    shapes: &mut Vec<ShapeParams>,
    cfg: &OptConfig,
    materials: &MaterialParams,
    rng: &mut ChaCha8Rng,
) -> Result<Evaluation> {
    let mut attempt = 0;
    loop {
        match evaluate(shapes, cfg, materials) {
            Err(Error::DegenerateSpectrum { gap }) if attempt < JITTER_RETRIES => {
                attempt += 1;
                log::warn!("degenerate spectrum (gap {gap:.2e}); retry {attempt} with jittered coefficients");
                let mut trial = shapes.clone();
                jitter(&mut trial, rng, &cfg.bounds);
                if validate_geometry(&trial, cfg.period, cfg.margin).is_empty() {
                    *shapes = trial;
                }
            }
            other => return other,
        }
    }
}

/// Runs the design loop from `initial`.
pub fn run(cfg: &OptConfig, materials: &MaterialParams, initial: &[ShapeParams]) -> Result<OptState> {
    run_observed(cfg, materials, initial, |_, _| {})
}

/// [`run`], calling `observe` with every history row and the shapes it belongs to.
pub fn run_observed(
    cfg: &OptConfig,
    materials: &MaterialParams,
    initial: &[ShapeParams],
    mut observe: impl FnMut(&HistoryRow, &[ShapeParams]),
) -> Result<OptState> {
    cfg.validate()?;
    materials.validate()?;
    let violations = validate_geometry(initial, cfg.period, cfg.margin);
    if !violations.is_empty() {
        return Err(Error::InvalidGeometry(violations));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shapes = initial.to_vec();
    let clock = Instant::now();
    let elapsed = |clock: &Instant| if cfg.record_timing { clock.elapsed().as_secs_f64() * 1e3 } else { 0.0 };

    let mut current = evaluate_with_retry(&mut shapes, cfg, materials, &mut rng)?;
    let inf_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut history = vec![HistoryRow { iter: 0, value: current.value, grad_inf_norm: inf_norm(&current.gradient), wall_ms: elapsed(&clock) }];
    observe(&history[0], &shapes);
    let mut best_value = current.value;
    let mut best_shapes = shapes.clone();
    let mut adam = AdamState::new(current.gradient.len());
    let mut since_best = 0;
    let mut stop = StopReason::MaxIterations;

    for iter in 1..=cfg.max_iters {
        let before = shapes.clone();
        step_uniform_adam(&mut shapes, &mut adam, &current.gradient, cfg)?;
        if shapes != before {
            current = evaluate_with_retry(&mut shapes, cfg, materials, &mut rng)?;
        }
        history.push(HistoryRow {
            iter,
            value: current.value,
            grad_inf_norm: inf_norm(&current.gradient),
            wall_ms: elapsed(&clock),
        });
        observe(&history[iter], &shapes);
        if current.value < best_value - PLATEAU_IMPROVEMENT {
            since_best = 0;
        } else {
            since_best += 1;
        }
        if current.value < best_value {
            best_value = current.value;
            best_shapes = shapes.clone();
        }
        if cfg.plateau.is_some_and(|limit| since_best >= limit) {
            log::info!("no improvement for {since_best} iterations; stopping at {iter}");
            stop = StopReason::Plateau;
            break;
        }
    }
    Ok(OptState { shapes, adam, history, best_value, best_shapes, initial_shapes: initial.to_vec(), stop })
}
