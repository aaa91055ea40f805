//! Run configuration: a TOML file with one table per section, every key optional.

use std::path::{Path, PathBuf};

use metascreen::geometry::{default_margin, layout_preset, validate_geometry, ShapeParams};
use metascreen::optimizer::{Bounds, Objective, OptConfig};
use metascreen::rom::MaterialParams;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub materials: MaterialsSection,
    pub lattice: LatticeSection,
    pub band: BandSection,
    pub geometry: GeometrySection,
    pub solver: SolverSection,
    pub optimizer: OptimizerSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialsSection {
    pub v_m: f64,
    /// `[re, im]`.
    pub v_b: [f64; 2],
    pub delta: f64,
    pub theta_d: f64,
}

impl Default for MaterialsSection {
    fn default() -> Self {
        Self { v_m: 1.0, v_b: [1.0, -0.05], delta: 1e-3, theta_d: 1.0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeSection {
    pub period: f64,
}

impl Default for LatticeSection {
    fn default() -> Self {
        Self { period: 20.0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BandSection {
    pub omega_min: f64,
    pub omega_max: f64,
    /// Uniform samples (endpoints included) for spectra.
    pub samples: usize,
}

impl Default for BandSection {
    fn default() -> Self {
        Self { omega_min: 0.01, omega_max: 0.1, samples: 200 }
    }
}

/// Either a layout preset or an explicit shape list; a preset single circle when both are absent.
#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub layout: Option<LayoutSection>,
    pub shapes: Vec<ShapeSection>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutSection {
    pub rows: usize,
    pub cols: usize,
    pub radius: f64,
    pub spacing: f64,
    /// Centre height of the bottom row.
    pub height: f64,
    /// Fourier order of every generated shape.
    pub order: usize,
}

impl Default for LayoutSection {
    fn default() -> Self {
        Self { rows: 1, cols: 1, radius: 0.5, spacing: 2.0, height: 1.0, order: 5 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ShapeSection {
    pub center: [f64; 2],
    pub a0: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Boundary nodes per resonator.
    pub n_pts: usize,
    /// Truncation tolerance of the periodic Helmholtz kernels.
    pub greens_tolerance: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { n_pts: 128, greens_tolerance: 1e-12 }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
pub enum ObjectiveName {
    #[serde(rename = "ref")]
    Reflectance,
    #[serde(rename = "res")]
    Resonance,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub objective: ObjectiveName,
    /// Number of resonance targets; defaults to the number of resonators.
    pub targets: Option<usize>,
    pub n_omega: usize,
    pub max_iters: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bounds: BoundsSection,
    /// Geometry safety margin; defaults to `1e-3 · period`.
    pub margin: Option<f64>,
    pub seed: u64,
    /// Iterations without improvement before stopping; 0 disables the rule.
    pub plateau: usize,
    pub record_timing: bool,
    /// Geometry snapshot interval in iterations; 0 disables snapshots.
    pub snapshot_every: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptConfig::default();
        Self {
            objective: ObjectiveName::Reflectance,
            targets: None,
            n_omega: d.n_omega,
            max_iters: d.max_iters,
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            bounds: BoundsSection::default(),
            margin: None,
            seed: d.seed,
            plateau: d.plateau.unwrap_or(0),
            record_timing: d.record_timing,
            snapshot_every: 0,
        }
    }
}

/// Box bounds; the centre bounds default to the cell `[−L/2, L/2] × [0, L]`.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    pub center_x: Option<[f64; 2]>,
    pub center_y: Option<[f64; 2]>,
    pub a0: [f64; 2],
    pub coefficient: [f64; 2],
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self { center_x: None, center_y: None, a0: [0.1, 1.0], coefficient: [-1.0, 1.0] }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from(".") }
    }
}

/// Unreadable, malformed or out-of-range configuration.
#[derive(Debug)]
pub struct ConfigError(pub Vec<String>);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration:")?;
        for p in &self.0 {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Fully resolved inputs of a command.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub materials: MaterialParams,
    pub shapes: Vec<ShapeParams>,
    pub opt: OptConfig,
}

impl Resolved {
    pub fn band(&self) -> (f64, f64) {
        (self.config.band.omega_min, self.config.band.omega_max)
    }

    /// Uniform samples of the band, endpoints included.
    pub fn band_samples(&self) -> Vec<f64> {
        let (lo, hi) = self.band();
        let n = self.config.band.samples;
        if n == 1 {
            return vec![lo];
        }
        (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                lo * (1.0 - s) + hi * s
            })
            .collect()
    }

    /// SHA-256 of the resolved configuration without the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.config.clone();
        canonical.output.dir = PathBuf::new();
        let text = toml::to_string(&canonical).expect("configuration serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Parses `path`; `None` gives the defaults.
pub fn load(path: Option<&Path>) -> Result<RunConfig, ConfigError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(vec![format!("cannot read {}: {e}", path.display())]))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError(vec![e.to_string().trim_end().to_string()]))
}

/// Checks every range and builds the library inputs, reporting all problems at once.
pub fn resolve(config: RunConfig) -> Result<Resolved, ConfigError> {
    let mut problems = Vec::new();
    let m = &config.materials;
    let materials =
        MaterialParams { v_m: m.v_m, v_b: Complex64::new(m.v_b[0], m.v_b[1]), delta: m.delta, theta_d: m.theta_d };
    if let Err(e) = materials.validate() {
        problems.push(plain(e));
    }
    let period = config.lattice.period;
    if !(period > 0.0 && period.is_finite()) {
        problems.push(format!("lattice.period must be positive, got {period}"));
    }
    let band = &config.band;
    if !(band.omega_min > 0.0 && band.omega_min < band.omega_max && band.omega_max.is_finite()) {
        problems.push(format!("band must satisfy 0 < omega_min < omega_max, got [{}, {}]", band.omega_min, band.omega_max));
    }
    if band.samples == 0 {
        problems.push("band.samples must be at least 1".into());
    }
    let solver = &config.solver;
    if solver.n_pts < 16 || solver.n_pts % 2 != 0 {
        problems.push(format!("solver.n_pts must be even and at least 16, got {}", solver.n_pts));
    }
    if !(solver.greens_tolerance > 0.0 && solver.greens_tolerance < 1.0) {
        problems.push(format!("solver.greens_tolerance must lie in (0, 1), got {}", solver.greens_tolerance));
    }

    let shapes = shapes_of(&config.geometry, &mut problems);
    let o = &config.optimizer;
    let defaults = Bounds::for_period(period);
    let pair = |p: [f64; 2]| (p[0], p[1]);
    let opt = OptConfig {
        objective: match o.objective {
            ObjectiveName::Reflectance => Objective::Reflectance,
            ObjectiveName::Resonance => Objective::Resonance,
        },
        band: (band.omega_min, band.omega_max),
        targets: o.targets,
        n_omega: o.n_omega,
        max_iters: o.max_iters,
        learning_rate: o.learning_rate,
        beta1: o.beta1,
        beta2: o.beta2,
        epsilon: o.epsilon,
        bounds: Bounds {
            center_x: o.bounds.center_x.map(pair).unwrap_or(defaults.center_x),
            center_y: o.bounds.center_y.map(pair).unwrap_or(defaults.center_y),
            a0: pair(o.bounds.a0),
            coefficient: pair(o.bounds.coefficient),
        },
        margin: o.margin.unwrap_or_else(|| default_margin(period)),
        seed: o.seed,
        plateau: (o.plateau > 0).then_some(o.plateau),
        n_pts: solver.n_pts,
        period,
        record_timing: o.record_timing,
    };
    if let Err(e) = opt.validate() {
        // band and period were already checked above
        for p in plain(e).split("; ") {
            if !(p.starts_with("band must") || p.starts_with("period must")) {
                problems.push(format!("optimizer: {p}"));
            }
        }
    }
    if let Some(t) = o.targets {
        if t == 0 || t > shapes.len() {
            problems.push(format!("optimizer.targets must lie in 1..={}, got {t}", shapes.len()));
        }
    }
    if problems.is_empty() {
        for v in validate_geometry(&shapes, period, opt.margin) {
            problems.push(v.to_string());
        }
    }
    if problems.is_empty() {
        Ok(Resolved { config, materials, shapes, opt })
    } else {
        Err(ConfigError(problems))
    }
}

fn plain(e: metascreen::Error) -> String {
    match e {
        metascreen::Error::InvalidInput(msg) => msg,
        other => other.to_string(),
    }
}

fn shapes_of(geometry: &GeometrySection, problems: &mut Vec<String>) -> Vec<ShapeParams> {
    if geometry.layout.is_some() && !geometry.shapes.is_empty() {
        problems.push("geometry.layout and geometry.shapes are mutually exclusive".into());
        return Vec::new();
    }
    if !geometry.shapes.is_empty() {
        let order = geometry.shapes[0].cos.len();
        let mut out = Vec::new();
        for (j, s) in geometry.shapes.iter().enumerate() {
            if s.cos.len() != order || s.sin.len() != order {
                problems.push(format!(
                    "geometry.shapes[{j}]: cos and sin must both have {order} coefficients like the first shape"
                ));
            }
            out.push(ShapeParams { center: s.center, a0: s.a0, cos: s.cos.clone(), sin: s.sin.clone() });
        }
        return out;
    }
    let layout = geometry.layout.clone().unwrap_or_default();
    if layout.rows == 0 || layout.cols == 0 {
        problems.push(format!("geometry.layout needs at least one row and column, got {}×{}", layout.rows, layout.cols));
    }
    if !(layout.radius > 0.0) {
        problems.push(format!("geometry.layout.radius must be positive, got {}", layout.radius));
    }
    layout_preset(layout.cols, layout.rows, layout.radius, layout.spacing, layout.height, layout.order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_the_defaults() {
        let r = resolve(parse("").unwrap()).unwrap();
        assert_eq!(r.config.lattice.period, 20.0);
        assert_eq!(r.materials, MaterialParams::default());
        assert_eq!(r.band(), (0.01, 0.1));
        assert_eq!(r.shapes, vec![ShapeParams::with_order([0.0, 1.0], 0.5, 5)]);
        assert_eq!(r.opt, OptConfig::default());
    }

    #[test]
    fn negative_contrast_is_reported() {
        let err = resolve(parse("[materials]\ndelta = -1\n").unwrap()).unwrap_err();
        assert!(err.to_string().contains("contrast must be in (0,1)"), "{err}");
    }

    #[test]
    fn range_violations_are_listed_together() {
        let text = "[materials]\ndelta = -1\n[band]\nomega_min = 0.2\n[solver]\nn_pts = 15\n";
        let err = resolve(parse(text).unwrap()).unwrap_err();
        assert_eq!(err.0.len(), 3, "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_context() {
        let err = parse("[materials]\nspeed = 2\n").unwrap_err().to_string();
        assert!(err.contains("speed") && err.contains("line 2"), "{err}");
        assert!(parse("colour = 1\n").is_err());
    }

    #[test]
    fn dotted_keys_are_accepted() {
        let c = parse("materials.v_b = [1.0, 0.0]\noptimizer.objective = \"res\"\n").unwrap();
        assert_eq!(c.materials.v_b, [1.0, 0.0]);
        assert_eq!(c.optimizer.objective, ObjectiveName::Resonance);
    }

    #[test]
    fn three_by_three_layout_is_valid() {
        let text = "[geometry.layout]\nrows = 3\ncols = 3\nradius = 0.5\nspacing = 2.0\n";
        let r = resolve(parse(text).unwrap()).unwrap();
        assert_eq!(r.shapes.len(), 9);
        assert!(validate_geometry(&r.shapes, 20.0, r.opt.margin).is_empty());
    }

    #[test]
    fn overlapping_shapes_are_a_config_error() {
        let text = "[[geometry.shapes]]\ncenter = [0.0, 1.0]\na0 = 0.5\n[[geometry.shapes]]\ncenter = [0.5, 1.0]\na0 = 0.5\n";
        let err = resolve(parse(text).unwrap()).unwrap_err();
        assert!(err.to_string().contains("overlap"), "{err}");
    }

    #[test]
    fn hash_ignores_the_output_directory() {
        let a = resolve(RunConfig::default()).unwrap();
        let mut other = RunConfig::default();
        other.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), resolve(other.clone()).unwrap().hash());
        other.optimizer.seed = 7;
        assert_ne!(a.hash(), resolve(other).unwrap().hash());
    }

    #[test]
    fn band_samples_include_the_endpoints() {
        let r = resolve(RunConfig::default()).unwrap();
        let w = r.band_samples();
        assert_eq!(w.len(), 200);
        assert_eq!((w[0], w[199]), (0.01, 0.1));
        assert!(w.windows(2).all(|p| p[1] > p[0]));
    }
}
