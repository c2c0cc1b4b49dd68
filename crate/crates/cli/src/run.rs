use std::fs;
use std::path::Path;
use std::time::Instant;

use eigenpert::estimation::{
    bias_from_halves, debiased_eigenvector, recover_support, sparse_pca_estimate, threshold_level,
};
use eigenpert::io::{read_matrix_csv, read_vector_csv};
use eigenpert::linalg::effective_rank;
use eigenpert::perturbation::{riesz_projector, ContourSpec};
use eigenpert::rng::derive_seed;
use eigenpert::sampling::{CovarianceModel, ModelSpec, SampleSet};
use eigenpert::spectral::match_clusters;
use eigenpert::verify::*;
use eigenpert::{Error, SpectralDecomposition, SymmetricOperator, VectorH};
use serde::Serialize;

use crate::config::{emit_config, Command, DirectionConfig, DirectionSpec, NamedDirection, RunConfig};

/// Why a run did not succeed; maps onto the exit status.
#[derive(Debug)]
pub enum Failure {
    /// A verdict or data condition failed (exit 1).
    Check(String),
    /// Usage, configuration or I/O problem (exit 2).
    Usage(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Check(m) | Failure::Usage(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotSeparated { .. }
            | Error::TooManyNonSeparated { .. }
            | Error::DebiasFloor { .. }
            | Error::ZeroPredictedVariance(_)
            | Error::Degenerate(_)
            | Error::EigenNoConvergence
            | Error::NearSpectrum { .. }
            | Error::ImaginaryResidual { .. } => Failure::Check(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

pub struct Options {
    pub quiet: bool,
}

impl Options {
    fn progress(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

/// What a command hands back for writing and summarizing.
struct Artifacts {
    json: String,
    cells_csv: String,
    summary: String,
    passed: bool,
    /// Reason printed on stderr when `passed` is false.
    diagnostic: Option<String>,
}

/// Runs `cfg` (whose `command` is already set) and writes artifacts.
pub fn run(cfg: &RunConfig, opts: &Options) -> Result<(), Failure> {
    cfg.validate().map_err(Failure::Usage)?;
    let command = cfg.command.ok_or_else(|| Failure::Usage("no command given".into()))?;
    // the output directory is not part of the experiment
    let echo = RunConfig {
        out: None,
        ..cfg.clone()
    };
    opts.progress(&format!("{command}: seed {}", cfg.seed));
    let start = Instant::now();
    let artifacts = match command {
        Command::Decompose => decompose(cfg, &echo)?,
        Command::Estimate => estimate(cfg, &echo)?,
        _ => {
            let mut report = run_experiment(command, cfg)?;
            report.config = serde_json::to_value(&echo).map_err(|e| Failure::Usage(e.to_string()))?;
            let failed: Vec<String> = report
                .verdicts
                .iter()
                .filter(|v| !v.passed)
                .map(|v| v.name.clone())
                .collect();
            Artifacts {
                json: report.to_json()?,
                cells_csv: report.cells_csv()?,
                summary: report.to_text(),
                passed: report.passed(),
                diagnostic: (!failed.is_empty()).then(|| format!("failed verdicts: {}", failed.join(", "))),
            }
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    opts.progress(&format!("{command}: finished in {elapsed:.1} s"));

    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        let write = |name: &str, body: &str| -> Result<(), Failure> {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| io_failure(&path, e))
        };
        write("report.json", &artifacts.json)?;
        write("cells.csv", &artifacts.cells_csv)?;
        write("config.json", &emit_config(&echo))?;
        let meta = serde_json::json!({
            "command": command.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "wall_clock_seconds": elapsed,
        });
        write(
            "metadata.json",
            &(serde_json::to_string_pretty(&meta).expect("json") + "\n"),
        )?;
    }
    if !opts.quiet {
        print!("{}", artifacts.summary);
    }
    if artifacts.passed {
        Ok(())
    } else {
        Err(Failure::Check(
            artifacts.diagnostic.unwrap_or_else(|| "check failed".into()),
        ))
    }
}

fn build_model(spec: &ModelSpec) -> Result<CovarianceModel, Failure> {
    spec.build().map_err(|e| Failure::Usage(format!("model: {e}")))
}

fn direction(spec: &DirectionSpec, dec: &SpectralDecomposition, r: usize) -> Result<(VectorH, String), Failure> {
    let p = dec.dim();
    let (v, name) = match spec {
        DirectionSpec::Named(NamedDirection::Theta) => (dec.eigenvector(r)?, "theta".to_string()),
        DirectionSpec::Named(NamedDirection::Noise) => (noise_direction(dec), "noise".to_string()),
        DirectionSpec::Basis { basis } => (VectorH::basis(p, *basis)?, format!("e{basis}")),
        DirectionSpec::File { file } => {
            let coords = read_vector_csv(file)?;
            let stem = file
                .file_stem()
                .map_or("file".into(), |s| s.to_string_lossy().into_owned());
            (VectorH::new(coords)?, stem)
        }
        DirectionSpec::Coords { coords } => (VectorH::new(coords.clone())?, "coords".to_string()),
    };
    if v.dim() != p {
        return Err(Failure::Usage(format!(
            "direction {name} has dimension {}, model has {p}",
            v.dim()
        )));
    }
    Ok((v, name))
}

fn directions(cfg: &RunConfig, dec: &SpectralDecomposition) -> Result<Vec<DirectionPair>, Failure> {
    cfg.directions
        .iter()
        .map(|DirectionConfig { label, u, v }| {
            let (u, nu) = direction(u, dec, cfg.r)?;
            let (v, nv) = direction(v, dec, cfg.r)?;
            Ok(DirectionPair::new(label.clone().unwrap_or(format!("{nu},{nv}")), u, v)?)
        })
        .collect()
}

fn run_experiment(command: Command, cfg: &RunConfig) -> Result<ExperimentReport, Failure> {
    let seed = cfg.seed;
    let report = match command {
        Command::VerifyNorm => {
            let models = cfg
                .dims
                .iter()
                .map(|&d| cfg.model.with_dim(d))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::Usage(format!("model: {e}")))?;
            let chi_square_sigma = match &cfg.model {
                ModelSpec::Spiked { spikes, sigma, .. } if spikes.is_empty() => Some(*sigma),
                _ => None,
            };
            run_operator_norm_experiment(
                &OperatorNormConfig {
                    models,
                    n: cfg.n,
                    replicates: cfg.replicates,
                    chi_square_sigma,
                },
                seed,
            )?
        }
        Command::VerifyRemainder => {
            let model = build_model(&cfg.model)?;
            run_remainder_concentration_experiment(
                &RemainderConfig {
                    model: cfg.model.clone(),
                    r: cfg.r,
                    ns: cfg.ns.clone(),
                    replicates: cfg.replicates,
                    directions: directions(cfg, model.truth())?,
                    max_nonseparated: cfg.max_nonseparated,
                },
                seed,
            )?
        }
        Command::VerifyClt => {
            let model = build_model(&cfg.model)?;
            run_clt_experiment(
                &CltConfig {
                    model: cfg.model.clone(),
                    r: cfg.r,
                    n: cfg.n,
                    replicates: cfg.replicates,
                    directions: directions(cfg, model.truth())?,
                    max_nonseparated: cfg.max_nonseparated,
                },
                seed,
            )?
        }
        Command::VerifyBias => {
            let mut report = run_bias_decomposition_experiment(
                &BiasDecompositionConfig {
                    model: cfg.model.clone(),
                    r: cfg.r,
                    n: cfg.n,
                    replicates: cfg.replicates,
                    max_nonseparated: cfg.max_nonseparated,
                },
                seed,
            )?;
            let estimator = run_bias_estimator_experiment(
                &BiasEstimatorConfig {
                    model: cfg.model.clone(),
                    r: cfg.r,
                    ns: cfg.ns.clone(),
                    replicates: cfg.replicates,
                    oracle_replicates: cfg.oracle_replicates,
                },
                derive_seed(seed, 1),
            )?;
            report.absorb(estimator);
            report.experiment = "bias".into();
            report
        }
        Command::VerifyRisk => run_risk_experiment(
            &RiskConfig {
                model: cfg.model.clone(),
                j: cfg.j.unwrap_or(cfg.r),
                ns: cfg.ns.clone(),
                replicates: cfg.replicates,
            },
            seed,
        )?,
        Command::Recover => run_support_recovery_experiment(
            &SupportConfig {
                model: cfg.model.clone(),
                r: cfg.r,
                t: cfg.t,
                ns: cfg.ns.clone(),
                replicates: cfg.replicates,
                calibration_replicates: cfg.calibration_replicates,
                c_gamma: cfg.c_gamma,
            },
            seed,
        )?,
        Command::Estimate | Command::Decompose => unreachable!("handled by the caller"),
    };
    Ok(report)
}

fn data_path(cfg: &RunConfig) -> Result<&Path, Failure> {
    cfg.data
        .as_deref()
        .ok_or_else(|| Failure::Usage("this command needs a data file (positional argument or `data`)".into()))
}

#[derive(Serialize)]
struct ClusterRow {
    r: usize,
    value: f64,
    multiplicity: usize,
    gap: Option<f64>,
    /// Max-entry difference between the contour-integral and spectral
    /// projectors.
    riesz_error: Option<f64>,
}

#[derive(Serialize)]
struct DecomposeReport {
    experiment: &'static str,
    version: &'static str,
    config: RunConfig,
    dim: usize,
    norm: f64,
    trace: f64,
    effective_rank: Option<f64>,
    clusters: Vec<ClusterRow>,
}

/// Cluster table of a symmetric matrix from `data`, or of the model when no
/// file is given.
fn decompose(cfg: &RunConfig, echo: &RunConfig) -> Result<Artifacts, Failure> {
    let sigma = match &cfg.data {
        Some(path) => SymmetricOperator::from_rows(&read_matrix_csv(path)?)?,
        None => build_model(&cfg.model)?.sigma().clone(),
    };
    let dec = SpectralDecomposition::decompose(&sigma, cfg.cluster_tol)?;
    let rows: Vec<ClusterRow> = dec
        .clusters()
        .iter()
        .map(|c| {
            let gap = dec.spectral_gap(c.index).ok();
            let riesz_error = ContourSpec::around_cluster(&dec, c.index, cfg.nodes)
                .and_then(|contour| riesz_projector(&sigma, &contour))
                .map(|integral| (&integral.value - &c.projector).max_abs_entry())
                .ok();
            ClusterRow {
                r: c.index,
                value: c.value,
                multiplicity: c.multiplicity,
                gap,
                riesz_error,
            }
        })
        .collect();
    let report = DecomposeReport {
        experiment: "decompose",
        version: env!("CARGO_PKG_VERSION"),
        config: echo.clone(),
        dim: dec.dim(),
        norm: sigma.operator_norm()?,
        trace: sigma.trace(),
        effective_rank: effective_rank(&sigma).ok(),
        clusters: rows,
    };

    let fmt_opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6e}"));
    let mut summary = format!(
        "dim {}  norm {:.6e}  trace {:.6e}  effective rank {}\n",
        report.dim,
        report.norm,
        report.trace,
        report.effective_rank.map_or("-".into(), |r| format!("{r:.6}"))
    );
    summary += &format!(
        "{:>4}  {:>14}  {:>4}  {:>14}  {:>12}\n",
        "r", "mu_r", "m_r", "gap_r", "riesz_err"
    );
    let mut csv = String::from("r,value,multiplicity,gap,riesz_error\n");
    for c in &report.clusters {
        summary += &format!(
            "{:>4}  {:>14.6e}  {:>4}  {:>14}  {:>12}\n",
            c.r,
            c.value,
            c.multiplicity,
            fmt_opt(c.gap),
            c.riesz_error.map_or("-".into(), |e| format!("{e:.1e}"))
        );
        csv += &format!(
            "{},{:e},{},{},{}\n",
            c.r,
            c.value,
            c.multiplicity,
            c.gap.map_or(String::new(), |g| format!("{g:e}")),
            c.riesz_error.map_or(String::new(), |e| format!("{e:e}"))
        );
    }
    Ok(Artifacts {
        json: serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n",
        cells_csv: csv,
        summary,
        passed: true,
        diagnostic: None,
    })
}

#[derive(Serialize)]
struct EstimateReport {
    experiment: &'static str,
    version: &'static str,
    config: RunConfig,
    rows_used: usize,
    dropped_last_row: bool,
    dim: usize,
    r: usize,
    half_n: usize,
    plug_in_norm: f64,
    plug_in_gap: f64,
    /// `‖Σ̂_half − Σ̂‖∞` for both halves.
    half_deviation: [f64; 2],
    separated: bool,
    b_hat: Option<f64>,
    theta_hat: Option<VectorH>,
    theta_tilde: Option<VectorH>,
    c_gamma: f64,
    beta: Option<f64>,
    /// 0-based coordinates of the recovered support.
    support: Option<Vec<usize>>,
    sparse: Option<VectorH>,
    diagnostic: Option<String>,
}

/// Split-sample pipeline on data rows: `θ̂`, `b̂`, `θ̃`, `β` and the
/// thresholded support, with `‖Σ̂‖∞` and `ḡ_r(Σ̂)` as plug-ins.
fn estimate(cfg: &RunConfig, echo: &RunConfig) -> Result<Artifacts, Failure> {
    let path = data_path(cfg)?;
    let mut rows = read_matrix_csv(path)?;
    if rows.len() < 2 {
        return Err(Failure::Usage(format!(
            "{}: need at least 2 rows, got {}",
            path.display(),
            rows.len()
        )));
    }
    let dropped_last_row = rows.len() % 2 == 1;
    if dropped_last_row {
        eprintln!("warning: odd number of rows ({}), dropping the last one", rows.len());
        rows.pop();
    }
    let samples = SampleSet::from_rows(&rows)?;
    let full = samples.covariance();
    let dec = SpectralDecomposition::decompose(&full, cfg.cluster_tol)?;
    let gap = dec.spectral_gap(cfg.r)?;
    let norm = full.operator_norm()?;
    let (first, second) = samples.half_covariances()?;
    let halves = [first, second];
    let deviation = [
        match_clusters(&dec, &halves[0])?.norm_e,
        match_clusters(&dec, &halves[1])?.norm_e,
    ];
    let half_n = samples.n() / 2;
    let c_gamma = cfg.c_gamma.unwrap_or(1.0);
    let mut report = EstimateReport {
        experiment: "estimate",
        version: env!("CARGO_PKG_VERSION"),
        config: echo.clone(),
        rows_used: samples.n(),
        dropped_last_row,
        dim: samples.dim(),
        r: cfg.r,
        half_n,
        plug_in_norm: norm,
        plug_in_gap: gap,
        half_deviation: deviation,
        separated: false,
        b_hat: None,
        theta_hat: None,
        theta_tilde: None,
        c_gamma,
        beta: None,
        support: None,
        sparse: None,
        diagnostic: None,
    };
    let multiplicity = dec.cluster(cfg.r)?.multiplicity;
    let estimate = if multiplicity == 1 {
        bias_from_halves(&dec, cfg.r, &halves[0], &halves[1])
    } else {
        Err(Error::Multiplicity {
            index: cfg.r,
            multiplicity,
        })
    };
    match estimate {
        Ok(est) => {
            report.separated = true;
            report.b_hat = Some(est.b_hat);
            report.theta_hat = Some(est.theta_hat.clone());
            match debiased_eigenvector(&est.theta_hat, est.b_hat) {
                Ok(tilde) => {
                    let beta = threshold_level(norm, gap, cfg.t, samples.dim() as f64, half_n as f64, c_gamma)?;
                    let support = recover_support(&tilde, beta);
                    report.sparse = Some(sparse_pca_estimate(&tilde, &support)?);
                    report.beta = Some(beta);
                    report.support = Some(support);
                    report.theta_tilde = Some(tilde);
                }
                Err(e @ Error::DebiasFloor { .. }) => report.diagnostic = Some(e.to_string()),
                Err(e) => return Err(e.into()),
            }
        }
        Err(e @ Error::NotSeparated { .. }) => {
            report.diagnostic = Some(format!(
                "{e}; the plug-in gap of cluster {} is too small for this sample",
                cfg.r
            ));
        }
        Err(e @ Error::Multiplicity { .. }) => {
            report.diagnostic = Some(format!("{e}; the sample covariance has no isolated eigenvalue there"));
        }
        Err(e) => return Err(e.into()),
    }

    let mut summary = format!(
        "rows {} (halves of {}), dim {}, cluster {}\nplug-in norm {:.6e}, plug-in gap {:.6e}, half deviations {:.4e} / {:.4e}\nseparated: {}\n",
        report.rows_used, half_n, report.dim, cfg.r, norm, gap, deviation[0], deviation[1], report.separated
    );
    if let Some(b) = report.b_hat {
        summary += &format!("b_hat {b:.6e}\n");
    }
    if let (Some(beta), Some(support)) = (report.beta, &report.support) {
        summary += &format!(
            "C_gamma {c_gamma}, beta {beta:.6e}\nsupport ({}): {:?}\n",
            support.len(),
            support
        );
    }
    if let Some(d) = &report.diagnostic {
        summary += &format!("diagnostic: {d}\n");
    }

    let mut csv = String::from("coordinate,theta_hat,theta_tilde,sparse\n");
    let col = |v: &Option<VectorH>, j: usize| v.as_ref().map_or(String::new(), |v| format!("{:e}", v.as_slice()[j]));
    for j in 0..report.dim {
        csv += &format!(
            "{j},{},{},{}\n",
            col(&report.theta_hat, j),
            col(&report.theta_tilde, j),
            col(&report.sparse, j)
        );
    }
    let passed = report.diagnostic.is_none();
    Ok(Artifacts {
        json: serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n",
        cells_csv: csv,
        summary,
        passed,
        diagnostic: report.diagnostic.clone(),
    })
}
