//! Run configuration: JSON text, every field optional with a default.

use std::fmt;
use std::path::{Path, PathBuf};

use eigenpert::perturbation::DEFAULT_NODES;
use eigenpert::sampling::{BasisSpec, ModelSpec};
use eigenpert::spectral::DEFAULT_CLUSTER_TOL;
use eigenpert::verify::DEFAULT_MAX_NONSEPARATED;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    VerifyNorm,
    VerifyRemainder,
    VerifyClt,
    VerifyBias,
    VerifyRisk,
    Recover,
    Estimate,
    Decompose,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::VerifyNorm => "verify-norm",
            Command::VerifyRemainder => "verify-remainder",
            Command::VerifyClt => "verify-clt",
            Command::VerifyBias => "verify-bias",
            Command::VerifyRisk => "verify-risk",
            Command::Recover => "recover",
            Command::Estimate => "estimate",
            Command::Decompose => "decompose",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A test direction: `"theta"` (the eigenvector of cluster `r`), `"noise"`
/// (the bottom eigenvector), `{"basis": k}` (0-based), `{"file": path}` or
/// `{"coords": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DirectionSpec {
    Named(NamedDirection),
    Basis { basis: usize },
    File { file: PathBuf },
    Coords { coords: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedDirection {
    Theta,
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub u: DirectionSpec,
    pub v: DirectionSpec,
}

/// Defaults: spiked model `s = 2, σ = 1, p = 50`; `r = 1`; `n = 2000`;
/// `ns = [500, 1000, 2000]`; `replicates = 2000`; `oracle_replicates = 5000`;
/// `calibration_replicates = 400`; `seed = 0`; `dims = [10, 20, 50, 100]`;
/// directions `(theta, noise)` and `(theta, theta)`; `j = r`;
/// `cluster_tol = 1e-8`; `nodes = 64`; `c_gamma` calibrated (simulation) or
/// 1 (data); `t = 3`; `max_nonseparated = 0.01`; no data file; no output
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub model: ModelSpec,
    /// Target cluster (1-based, descending order).
    pub r: usize,
    pub n: usize,
    /// Sample-size sweep; half-sample sizes for `verify-bias` and `recover`.
    pub ns: Vec<usize>,
    pub replicates: usize,
    pub oracle_replicates: usize,
    pub calibration_replicates: usize,
    pub seed: u64,
    /// Dimensions swept by `verify-norm`.
    pub dims: Vec<usize>,
    pub directions: Vec<DirectionConfig>,
    /// Eigenvector index for `verify-risk`.
    pub j: Option<usize>,
    pub cluster_tol: f64,
    pub nodes: usize,
    pub c_gamma: Option<f64>,
    pub t: f64,
    pub max_nonseparated: f64,
    /// Header-less CSV: samples (`estimate`) or a symmetric matrix
    /// (`decompose`).
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            model: ModelSpec::Spiked {
                spikes: vec![2.0],
                sigma: 1.0,
                dim: 50,
                basis: BasisSpec::Identity,
            },
            r: 1,
            n: 2000,
            ns: vec![500, 1000, 2000],
            replicates: 2000,
            oracle_replicates: 5000,
            calibration_replicates: 400,
            seed: 0,
            dims: vec![10, 20, 50, 100],
            directions: vec![
                DirectionConfig {
                    label: None,
                    u: DirectionSpec::Named(NamedDirection::Theta),
                    v: DirectionSpec::Named(NamedDirection::Noise),
                },
                DirectionConfig {
                    label: None,
                    u: DirectionSpec::Named(NamedDirection::Theta),
                    v: DirectionSpec::Named(NamedDirection::Theta),
                },
            ],
            j: None,
            cluster_tol: DEFAULT_CLUSTER_TOL,
            nodes: DEFAULT_NODES,
            c_gamma: None,
            t: 3.0,
            max_nonseparated: DEFAULT_MAX_NONSEPARATED,
            data: None,
            out: None,
        }
    }
}

/// Parses JSON config text; serde's message carries the offending field and
/// line.
pub fn parse_config(text: &str) -> Result<RunConfig, String> {
    serde_json::from_str(text).map_err(|e| format!("invalid config: {e}"))
}

pub fn emit_config(cfg: &RunConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes") + "\n"
}

pub fn load_config(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg = parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

impl RunConfig {
    /// Makes relative file paths relative to `base` (the config's directory).
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.data.as_mut() {
            fix(p);
        }
        if let Some(p) = self.out.as_mut() {
            fix(p);
        }
        for d in &mut self.directions {
            for spec in [&mut d.u, &mut d.v] {
                if let DirectionSpec::File { file } = spec {
                    fix(file);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("n", self.n),
            ("r", self.r),
            ("nodes", self.nodes),
            ("replicates", self.replicates),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.ns.contains(&0) {
            return Err("ns entries must be positive".into());
        }
        if self.dims.contains(&0) {
            return Err("dims entries must be positive".into());
        }
        if !(self.t > 0.0) {
            return Err(format!("t must be positive, got {}", self.t));
        }
        if !(self.cluster_tol >= 0.0) {
            return Err(format!("cluster_tol must be nonnegative, got {}", self.cluster_tol));
        }
        if !(0.0..=1.0).contains(&self.max_nonseparated) {
            return Err(format!(
                "max_nonseparated must lie in [0, 1], got {}",
                self.max_nonseparated
            ));
        }
        if let Some(c) = self.c_gamma {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(format!("c_gamma must be a nonnegative number, got {c}"));
            }
        }
        Ok(())
    }
}
