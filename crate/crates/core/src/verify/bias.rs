//! Monte Carlo oracle for `E P̂_r` and the bias decomposition
//! `E P̂_r = (1 + b_r) P_r + T_r`.

use nalgebra::DMatrix;

use super::replicate_fold;
use crate::error::{Error, Result};
use crate::linalg::SymmetricOperator;
use crate::perturbation::linear_term;
use crate::sampling::{sample_replicate, CovarianceModel};
use crate::spectral::match_clusters;

/// Largest tolerated fraction of replicates with `‖Σ̂ − Σ‖ ≥ ḡ_r / 2`.
pub const DEFAULT_MAX_NONSEPARATED: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct BiasReport {
    pub r: usize,
    pub n: usize,
    pub replicates: usize,
    /// Monte Carlo mean of `P̂_r`.
    pub mean_projector: SymmetricOperator,
    /// Monte Carlo mean of `S_r(Σ̂ − Σ)`.
    pub w_estimate: SymmetricOperator,
    /// `b_r = ⟨(E P̂_r − P_r) θ_r, θ_r⟩`, simple clusters only.
    pub b: Option<f64>,
    pub b_se: Option<f64>,
    /// `‖E P̂_r − P_r − b_r P_r‖∞`.
    pub t_norm: Option<f64>,
    pub nonseparated_fraction: f64,
}

impl BiasReport {
    /// `−1 − ‖T_r‖ ≤ b_r ≤ ‖T_r‖`.
    pub fn bracketed(&self) -> Option<bool> {
        match (self.b, self.t_norm) {
            (Some(b), Some(t)) => Some(-1.0 - t <= b && b <= t),
            _ => None,
        }
    }
}

struct Accum {
    projector: DMatrix<f64>,
    sigma_hat: DMatrix<f64>,
    diag: Vec<f64>,
    nonseparated: usize,
}

/// Averages `P̂_r` over `replicates` samples of size `n`. Fails when more
/// than `max_nonseparated` of the replicates violate separation.
pub fn mc_expected_projector(
    model: &CovarianceModel,
    r: usize,
    n: usize,
    replicates: usize,
    seed: u64,
    max_nonseparated: f64,
) -> Result<BiasReport> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let truth = model.truth();
    let cluster = truth.cluster(r)?;
    let theta = (cluster.multiplicity == 1).then(|| truth.eigenvector(r)).transpose()?;
    let p = model.dim();
    let acc = Accum {
        projector: DMatrix::zeros(p, p),
        sigma_hat: DMatrix::zeros(p, p),
        diag: Vec::with_capacity(replicates),
        nonseparated: 0,
    };
    let acc = replicate_fold(
        replicates,
        |k| {
            let sigma_hat = sample_replicate(model, n, seed, k)?.covariance();
            let matched = match_clusters(truth, &sigma_hat)?;
            let c = matched.cluster(r)?;
            let d = theta.as_ref().map(|t| c.projector.bilinear(t, t)).transpose()?;
            Ok((c.projector.clone(), sigma_hat, d, c.separated))
        },
        acc,
        |acc, (proj, sigma_hat, d, separated)| {
            acc.projector += proj.matrix();
            acc.sigma_hat += sigma_hat.matrix();
            if let Some(d) = d {
                acc.diag.push(d);
            }
            if !separated {
                acc.nonseparated += 1;
            }
        },
    )?;
    let nonseparated_fraction = acc.nonseparated as f64 / replicates as f64;
    if nonseparated_fraction > max_nonseparated {
        return Err(Error::TooManyNonSeparated {
            fraction: nonseparated_fraction,
            limit: max_nonseparated,
        });
    }
    let rf = replicates as f64;
    let mean_projector = SymmetricOperator::symmetrized(acc.projector / rf);
    let mean_e = &SymmetricOperator::symmetrized(acc.sigma_hat / rf) - model.sigma();
    let p_r = &cluster.projector;
    let w_estimate = &(&mean_projector - p_r) - &linear_term(truth, r, &mean_e)?;
    let (b, b_se, t_norm) = if theta.is_some() {
        let b = super::stats::mean(&acc.diag) - 1.0;
        let se = if replicates > 1 {
            super::stats::std_error(&acc.diag)
        } else {
            f64::NAN
        };
        let t = (&(&mean_projector - p_r) - &p_r.scale(b)).operator_norm()?;
        (Some(b), Some(se), Some(t))
    } else {
        (None, None, None)
    };
    Ok(BiasReport {
        r,
        n,
        replicates,
        mean_projector,
        w_estimate,
        b,
        b_se,
        t_norm,
        nonseparated_fraction,
    })
}
