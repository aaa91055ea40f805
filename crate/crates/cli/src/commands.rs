//! Subcommand bodies. Each writes its CSV files into the output directory.

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use metascreen::capacitance::compute_capacitance;
use metascreen::fullorder::FullOrderSolver;
use metascreen::geometry::{discretize, ShapeParams};
use metascreen::gradcheck::{check_gradients, ProbeSettings};
use metascreen::optimizer::run_observed;
use metascreen::qpgreens::{laplace_gs, spectral_series, HelmholtzKernel, LatticeConfig};
use metascreen::rom::RomModel;
use metascreen::Error;
use num_complex::Complex64;

use crate::config::{ConfigError, Resolved};
use crate::output::{num, write_geometry, write_parameters, CsvFile, Metadata};

/// Why a command stopped; selects the exit code.
#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Numerical(String),
    Io(io::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "{e}"),
            Failure::Numerical(e) => write!(f, "numerical failure: {e}"),
            Failure::Io(e) => write!(f, "i/o failure: {e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(msg) => Failure::Config(ConfigError(vec![msg])),
            // caused by the requested inputs rather than by the numerics
            Error::InvalidGeometry(_)
            | Error::Unsupported(_)
            | Error::MultiplePropagatingModes { .. }
            | Error::LosslessResonanceObjective => Failure::Config(ConfigError(vec![e.to_string()])),
            Error::Io(io) => Failure::Io(io),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

pub type Outcome = Result<Vec<PathBuf>, Failure>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectrumModel {
    Rom,
    Exact,
    Both,
}

pub struct Context {
    pub run: Resolved,
    pub dir: PathBuf,
    pub command: String,
}

impl Context {
    fn meta(&self) -> Metadata {
        Metadata { command: self.command.clone(), config_hash: self.run.hash() }
    }

    fn rom(&self, shapes: &[ShapeParams]) -> Result<RomModel, Failure> {
        let grid = discretize(shapes, self.run.opt.n_pts, self.run.opt.period)?;
        let cap = compute_capacitance(&grid)?;
        Ok(RomModel::new(&cap, self.run.materials, grid.cell())?)
    }
}

const SPECTRUM_HEADER: [&str; 6] = ["omega", "re_r", "im_r", "abs_r", "absorptance", "model"];

fn spectrum_row(omega: f64, r: Complex64, model: &str) -> [String; 6] {
    let a = r.norm();
    [num(omega), num(r.re), num(r.im), num(a), num(1.0 - a * a), model.to_string()]
}

/// `quantity, i, j, value` for C, V, m, lambda and u.
pub fn capmat(ctx: &Context) -> Outcome {
    let grid = discretize(&ctx.run.shapes, ctx.run.opt.n_pts, ctx.run.opt.period)?;
    let cap = compute_capacitance(&grid)?;
    let n = grid.n_res;
    let mut f = CsvFile::create(&ctx.dir, "capmat.csv", &ctx.meta(), &["quantity", "i", "j", "value"])?;
    for i in 0..n {
        for j in 0..n {
            f.row(["C".into(), i.to_string(), j.to_string(), num(cap.c[(i, j)])])?;
        }
    }
    for i in 0..n {
        f.row(["V".into(), i.to_string(), i.to_string(), num(cap.area[i])])?;
    }
    for i in 0..n {
        f.row(["m".into(), i.to_string(), String::new(), num(cap.m[i])])?;
    }
    for j in 0..n {
        f.row(["lambda".into(), j.to_string(), String::new(), num(cap.eigenvalues[j])])?;
    }
    for j in 0..n {
        for i in 0..n {
            f.row(["u".into(), i.to_string(), j.to_string(), num(cap.eigenvectors[(i, j)])])?;
        }
    }
    Ok(vec![f.finish()?])
}

/// `j, re_omega, im_omega, lambda_j, lambda_j1`.
pub fn resonances(ctx: &Context) -> Outcome {
    let model = ctx.rom(&ctx.run.shapes)?;
    let header = ["j", "re_omega", "im_omega", "lambda_j", "lambda_j1"];
    let mut f = CsvFile::create(&ctx.dir, "resonances.csv", &ctx.meta(), &header)?;
    for (j, w) in model.resonant_frequencies().iter().enumerate() {
        f.row([j.to_string(), num(w.re), num(w.im), num(model.lambda[j]), num(model.lambda1[j])])?;
    }
    Ok(vec![f.finish()?])
}

fn write_rom_spectrum(ctx: &Context, name: &str, model: &RomModel, meta: &Metadata) -> Result<PathBuf, Failure> {
    let mut f = CsvFile::create(&ctx.dir, name, meta, &SPECTRUM_HEADER)?;
    for w in ctx.run.band_samples() {
        f.row(spectrum_row(w, model.reflection(w)?, "rom"))?;
    }
    Ok(f.finish()?)
}

/// Reflection spectra. `Both` interleaves the two models per frequency and appends a
/// `max_abs_diff` row whose `abs_r` field holds `max |r_rom − r_exact|`.
pub fn spectrum(ctx: &Context, which: SpectrumModel) -> Outcome {
    let omegas = ctx.run.band_samples();
    let rom = match which {
        SpectrumModel::Exact => None,
        _ => Some(ctx.rom(&ctx.run.shapes)?),
    };
    let exact = match which {
        SpectrumModel::Rom => None,
        _ => {
            let grid = discretize(&ctx.run.shapes, ctx.run.opt.n_pts, ctx.run.opt.period)?;
            let (_, hi) = ctx.run.band();
            let solver =
                FullOrderSolver::with_tolerance(&grid, ctx.run.materials, hi, ctx.run.config.solver.greens_tolerance)?;
            Some(solver.sweep(&omegas)?.into_iter().map(|s| s.reflection).collect::<Vec<_>>())
        }
    };
    let mut f = CsvFile::create(&ctx.dir, "spectrum.csv", &ctx.meta(), &SPECTRUM_HEADER)?;
    let mut max_diff = 0.0f64;
    for (k, &w) in omegas.iter().enumerate() {
        let r_rom = rom.as_ref().map(|m| m.reflection(w)).transpose()?;
        if let Some(r) = r_rom {
            f.row(spectrum_row(w, r, "rom"))?;
        }
        if let Some(r) = exact.as_ref().map(|e| e[k]) {
            f.row(spectrum_row(w, r, "exact"))?;
            if let Some(q) = r_rom {
                max_diff = max_diff.max((q - r).norm());
            }
        }
    }
    if which == SpectrumModel::Both {
        f.row([String::new(), String::new(), String::new(), num(max_diff), String::new(), "max_abs_diff".into()])?;
        log::info!("max |r_rom − r_exact| = {max_diff:.3e}");
    }
    Ok(vec![f.finish()?])
}

/// History, initial and best geometry with parameter sidecars, ROM spectra, and optional snapshots.
pub fn optimize(ctx: &Context) -> Outcome {
    let run = &ctx.run;
    let meta = ctx.meta();
    let every = run.config.optimizer.snapshot_every;
    let mut snapshots: Vec<(usize, Vec<ShapeParams>)> = Vec::new();
    let state = run_observed(&run.opt, &run.materials, &run.shapes, |row, shapes| {
        if every > 0 && row.iter % every == 0 {
            snapshots.push((row.iter, shapes.to_vec()));
        }
    })?;
    log::info!("stopped after {} iterations ({:?}); best J = {:.6e}", state.history.len() - 1, state.stop, state.best_value);

    let mut written = Vec::new();
    let mut h = CsvFile::create(&ctx.dir, "history.csv", &meta, &["iter", "J", "grad_inf_norm", "wall_ms"])?;
    for row in &state.history {
        h.row([row.iter.to_string(), num(row.value), num(row.grad_inf_norm), num(row.wall_ms)])?;
    }
    written.push(h.finish()?);

    let dump = |name: &str, shapes: &[ShapeParams], out: &mut Vec<PathBuf>| -> Result<(), Failure> {
        let grid = discretize(shapes, run.opt.n_pts, run.opt.period)?;
        out.push(write_geometry(&ctx.dir, &format!("{name}.csv"), &meta, &grid)?);
        out.push(write_parameters(&ctx.dir, &format!("{name}_params.csv"), &meta, shapes)?);
        Ok(())
    };
    dump("geometry_initial", &state.initial_shapes, &mut written)?;
    dump("geometry_best", &state.best_shapes, &mut written)?;
    for (iter, shapes) in &snapshots {
        dump(&format!("geometry_iter_{iter:05}"), shapes, &mut written)?;
    }
    written.push(write_rom_spectrum(ctx, "spectrum_initial.csv", &ctx.rom(&state.initial_shapes)?, &meta)?);
    written.push(write_rom_spectrum(ctx, "spectrum_best.csv", &ctx.rom(&state.best_shapes)?, &meta)?);
    Ok(written)
}

/// `quantity, resonator, parameter, analytic, fd, rel_err, pass`; fails with a numerical
/// error when any component disagrees.
pub fn check_grad(ctx: &Context) -> Outcome {
    let (lo, hi) = ctx.run.band();
    let settings = ProbeSettings { cfg: ctx.run.opt.clone(), materials: ctx.run.materials, probe_omega: 0.5 * (lo + hi) };
    let rows = check_gradients(&ctx.run.shapes, &settings)?;
    let header = ["quantity", "resonator", "parameter", "analytic", "fd", "rel_err", "pass"];
    let mut f = CsvFile::create(&ctx.dir, "check_grad.csv", &ctx.meta(), &header)?;
    for r in &rows {
        f.row([
            r.quantity.clone(),
            r.resonator.to_string(),
            r.parameter.clone(),
            num(r.analytic),
            num(r.finite_difference),
            num(r.rel_err),
            r.passed.to_string(),
        ])?;
    }
    let path = f.finish()?;
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::Numerical(format!(
            "{failed} of {} gradient components disagree with finite differences (see {})",
            rows.len(),
            path.display()
        )));
    }
    Ok(vec![path])
}

/// Convergence of the raw mode series towards the accelerated kernels at two
/// height-separated points: `kernel, modes, re_series, im_series, re_accelerated,
/// im_accelerated, abs_diff, tolerance`. The Laplace kernel is closed-form, so its
/// tolerance column reads 0.
pub fn greens_test(ctx: &Context) -> Outcome {
    let run = &ctx.run;
    let period = run.opt.period;
    let tolerance = run.config.solver.greens_tolerance;
    let lattice = LatticeConfig::with_tolerance(period, tolerance)?;
    let (x, y) = ([0.05 * period, 0.25 * period], [0.15 * period, 0.05 * period]);
    let (_, hi) = run.band();
    let mat = run.materials;
    let kernels: [(&str, Option<Complex64>); 3] = [
        ("laplace", None),
        ("helmholtz_matrix", Some(Complex64::new(hi / mat.v_m, 0.0))),
        ("helmholtz_resonator", Some(hi / mat.v_b)),
    ];
    let header = ["kernel", "modes", "re_series", "im_series", "re_accelerated", "im_accelerated", "abs_diff", "tolerance"];
    let mut f = CsvFile::create(&ctx.dir, "greens_test.csv", &ctx.meta(), &header)?;
    for (name, k) in kernels {
        let (accelerated, reported) = match k {
            None => (Complex64::new(laplace_gs(x, y, &lattice)?, 0.0), 0.0),
            Some(k) => {
                let kernel = HelmholtzKernel::new(k, &lattice)?;
                (kernel.value(x, y)?, kernel.tolerance())
            }
        };
        for modes in (0..=10).map(|p| 1usize << p) {
            let s = spectral_series(x, y, k, &lattice, modes)?;
            f.row([
                name.to_string(),
                modes.to_string(),
                num(s.re),
                num(s.im),
                num(accelerated.re),
                num(accelerated.im),
                num((s - accelerated).norm()),
                num(reported),
            ])?;
        }
    }
    Ok(vec![f.finish()?])
}

pub fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(Failure::Io)
}
