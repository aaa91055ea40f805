//! CSV artifacts: a `#` metadata line, a header row, then data rows.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use metascreen::geometry::{BoundaryGrid, ShapeParams};

/// Identifies the tool and configuration that produced a file.
#[derive(Clone, Debug)]
pub struct Metadata {
    pub command: String,
    pub config_hash: String,
}

impl Metadata {
    fn line(&self) -> String {
        format!(
            "# metascreen {} command={} config_sha256={}",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.config_hash
        )
    }
}

/// Shortest round-trip text of `v`, in exponent form outside `[1e-4, 1e15)`.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub struct CsvFile {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvFile {
    pub fn create(dir: &Path, name: &str, meta: &Metadata, header: &[&str]) -> io::Result<Self> {
        let path = dir.join(name);
        let mut file = BufWriter::new(File::create(&path)?);
        writeln!(file, "{}", meta.line())?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header)?;
        Ok(Self { path, writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> io::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<PathBuf> {
        self.writer.flush()?;
        log::info!("wrote {}", self.path.display());
        Ok(self.path)
    }
}

/// Boundary nodes of `grid`: `resonator_id, t, x, y, nx, ny`.
pub fn write_geometry(dir: &Path, name: &str, meta: &Metadata, grid: &BoundaryGrid) -> io::Result<PathBuf> {
    let mut f = CsvFile::create(dir, name, meta, &["resonator_id", "t", "x", "y", "nx", "ny"])?;
    for k in 0..grid.len() {
        let (p, n) = (grid.pos[k], grid.normal[k]);
        f.row([grid.owner(k).to_string(), num(grid.t[k]), num(p[0]), num(p[1]), num(n[0]), num(n[1])])?;
    }
    f.finish()
}

/// Sidecar of a geometry dump: `resonator_id, parameter, value`.
pub fn write_parameters(dir: &Path, name: &str, meta: &Metadata, shapes: &[ShapeParams]) -> io::Result<PathBuf> {
    let mut f = CsvFile::create(dir, name, meta, &["resonator_id", "parameter", "value"])?;
    for (j, s) in shapes.iter().enumerate() {
        for (i, v) in s.params().iter().enumerate() {
            f.row([j.to_string(), s.param_name(i), num(*v)])?;
        }
    }
    f.finish()
}
