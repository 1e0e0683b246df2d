use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use ocplab::mesh::RegionPreset;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Flags shared by all commands. Unset flags fall back to the config file,
/// then to the command defaults.
#[derive(Args, Clone, Debug, Default)]
pub struct Flags {
    /// Domain side lengths, comma separated
    #[arg(long = "L", value_delimiter = ',')]
    pub lengths: Option<Vec<f64>>,
    /// Reaction coefficients, comma separated
    #[arg(long = "c", value_delimiter = ',', allow_hyphen_values = true)]
    pub reactions: Option<Vec<f64>>,
    /// Control/observation region presets: full, border-gap, half
    #[arg(long, value_delimiter = ',')]
    pub preset: Option<Vec<RegionPreset>>,
    /// Decay rate for the scaled-identity check
    #[arg(long)]
    pub mu: Option<f64>,
    /// Time horizon
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    /// Number of time steps
    #[arg(long)]
    pub nt: Option<usize>,
    /// Cells per unit length
    #[arg(long)]
    pub n_per_unit: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random probes for the operator-norm estimate
    #[arg(long)]
    pub trials: Option<usize>,
    /// Tolerance for the exactness checks of `verify`
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output directory
    #[arg(long, env = "OCPLAB_OUT")]
    pub out: Option<PathBuf>,
    /// TOML file with any of the above keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the optimality-system matrices in MatrixMarket format
    #[arg(long)]
    pub export_mtx: bool,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    #[serde(rename = "L")]
    lengths: Option<Vec<f64>>,
    c: Option<Vec<f64>>,
    preset: Option<Vec<String>>,
    mu: Option<f64>,
    #[serde(rename = "T")]
    horizon: Option<f64>,
    nt: Option<usize>,
    n_per_unit: Option<usize>,
    seed: Option<u64>,
    trials: Option<usize>,
    tol: Option<f64>,
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Motivate1d,
    Elliptic2d,
    OpnormSweep,
    Parabolic,
    Verify,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Motivate1d => "motivate1d",
            CommandKind::Elliptic2d => "elliptic2d",
            CommandKind::OpnormSweep => "opnorm-sweep",
            CommandKind::Parabolic => "parabolic",
            CommandKind::Verify => "verify",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbationPreset {
    pub amplitude: f64,
    pub half_width: f64,
    pub centered: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    #[serde(rename = "L")]
    pub lengths: Vec<f64>,
    pub n_per_unit: usize,
    pub c: Vec<f64>,
    pub preset: Vec<String>,
    pub perturbation: PerturbationPreset,
    pub mu: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub nt: usize,
    pub seed: u64,
    pub trials: usize,
    pub tol: f64,
    #[serde(skip)]
    pub presets: Vec<RegionPreset>,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub export_mtx: bool,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn read_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}

impl ExperimentConfig {
    pub fn resolve(command: CommandKind, flags: &Flags) -> Result<ExperimentConfig, ConfigError> {
        let file = match &flags.config {
            Some(p) => read_file(p)?,
            None => FileConfig::default(),
        };
        let (lengths, n_per_unit) = match command {
            CommandKind::Motivate1d => (vec![20.0, 40.0, 80.0], 8),
            CommandKind::Parabolic => (vec![20.0], 4),
            CommandKind::Verify => (vec![20.0, 40.0], 2),
            CommandKind::Elliptic2d | CommandKind::OpnormSweep => (vec![10.0, 20.0, 40.0], 2),
        };
        let preset_names = match (&flags.preset, &file.preset) {
            (Some(p), _) => p.iter().map(|p| p.name().to_string()).collect(),
            (None, Some(p)) => p.clone(),
            (None, None) => RegionPreset::ALL.iter().map(|p| p.name().to_string()).collect(),
        };
        let presets = preset_names
            .iter()
            .map(|s| s.parse::<RegionPreset>().map_err(|e| ConfigError(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = ExperimentConfig {
            command,
            lengths: flags.lengths.clone().or(file.lengths).unwrap_or(lengths),
            n_per_unit: flags.n_per_unit.or(file.n_per_unit).unwrap_or(n_per_unit),
            c: flags.reactions.clone().or(file.c).unwrap_or_else(|| vec![-1.0, 0.0, 1.0]),
            preset: preset_names,
            perturbation: PerturbationPreset { amplitude: 10.0, half_width: 2.0, centered: true },
            mu: flags.mu.or(file.mu).unwrap_or(0.25),
            horizon: flags.horizon.or(file.horizon).unwrap_or(10.0),
            nt: flags.nt.or(file.nt).unwrap_or(200),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            trials: flags.trials.or(file.trials).unwrap_or(200),
            tol: flags.tol.or(file.tol).unwrap_or(1e-10),
            presets,
            out: flags.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            export_mtx: flags.export_mtx,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        if self.lengths.is_empty() || self.c.is_empty() || self.presets.is_empty() {
            return err("L, c and preset lists must be nonempty".into());
        }
        if let Some(l) = self.lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return err(format!("domain lengths must be positive, got {l}"));
        }
        if let Some(c) = self.c.iter().find(|c| !c.is_finite()) {
            return err(format!("reaction coefficients must be finite, got {c}"));
        }
        // the perturbation box must be resolved by at least 8 cells
        let cells = 2.0 * self.perturbation.half_width * self.n_per_unit as f64;
        if cells < 8.0 {
            return err(format!(
                "n-per-unit {} resolves the perturbation box with {cells} cells, need at least 8",
                self.n_per_unit
            ));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return err(format!("T must be positive, got {}", self.horizon));
        }
        if self.nt < 2 {
            return err(format!("nt must be at least 2, got {}", self.nt));
        }
        if self.trials == 0 {
            return err("trials must be at least 1".into());
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return err(format!("mu must be nonnegative, got {}", self.mu));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return err(format!("tol must be nonnegative, got {}", self.tol));
        }
        Ok(())
    }

    /// SHA-256 of the serialized configuration, without the output directory.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn tau(&self) -> f64 {
        self.horizon / self.nt as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "L = [5.0]\nseed = 7\npreset = [\"half\"]\nn-per-unit = 3\n").unwrap();
        let flags = Flags { config: Some(path), seed: Some(9), ..Flags::default() };
        let cfg = ExperimentConfig::resolve(CommandKind::Elliptic2d, &flags).unwrap();
        assert_eq!(cfg.lengths, vec![5.0]);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.n_per_unit, 3);
        assert_eq!(cfg.presets, vec![RegionPreset::Half]);
        assert_eq!(cfg.trials, 200);
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = ExperimentConfig::resolve(CommandKind::Verify, &Flags { out: Some("a".into()), ..Flags::default() }).unwrap();
        let b = ExperimentConfig::resolve(CommandKind::Verify, &Flags { out: Some("b".into()), ..Flags::default() }).unwrap();
        let c = ExperimentConfig::resolve(CommandKind::Verify, &Flags { seed: Some(1), ..Flags::default() }).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_values() {
        for flags in [
            Flags { lengths: Some(vec![]), ..Flags::default() },
            Flags { lengths: Some(vec![-1.0]), ..Flags::default() },
            Flags { n_per_unit: Some(1), ..Flags::default() },
            Flags { nt: Some(1), ..Flags::default() },
            Flags { trials: Some(0), ..Flags::default() },
        ] {
            assert!(ExperimentConfig::resolve(CommandKind::Elliptic2d, &flags).is_err());
        }
    }
}
