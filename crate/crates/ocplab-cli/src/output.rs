use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;

/// Shortest round-trip representation, switching to exponent form for very
/// large or small magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn provenance(cfg: &ExperimentConfig) -> String {
    format!("# ocplab {} {} config-sha256={}", env!("CARGO_PKG_VERSION"), cfg.command.name(), cfg.hash())
}

/// Writes `name` under the output directory: provenance comment, header,
/// then the rows in the given order.
pub fn write_csv(cfg: &ExperimentConfig, name: &str, header: &[&str], rows: &[Vec<String>]) -> io::Result<PathBuf> {
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(name);
    let mut w = io::BufWriter::new(fs::File::create(&path)?);
    writeln!(w, "{}", provenance(cfg))?;
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        debug_assert_eq!(r.len(), header.len());
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, text)?;
    log::info!("wrote {}", path.display());
    Ok(path)
}
