//! Eigenvector estimators: sign alignment, the bilinear-form representation
//! of `θ̂_r − θ_r`, split-sample bias estimation, debiasing and hard
//! thresholding.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{check_dim, SymmetricOperator, VectorH};
use crate::sampling::SampleSet;
use crate::spectral::{matched_eigenvector, ClusterMatch, SpectralDecomposition};

/// `1 + b̂` below this value leaves no usable signal in `θ̂`.
pub const DEBIAS_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct EigenvectorEstimate {
    pub theta: VectorH,
    pub r: usize,
    /// Number of samples behind the empirical operator, when known.
    pub n: Option<usize>,
    pub reference: Option<VectorH>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BiasEstimate {
    /// `b̂ = ⟨θ̂, θ̂′⟩ − 1`.
    pub b_hat: f64,
    pub theta_hat: VectorH,
    pub theta_hat_prime: VectorH,
    pub inner: f64,
}

/// Returns `v` or `−v` so that `⟨result, reference⟩ ≥ 0`. Without a
/// reference, or when the inner product vanishes, the first coordinate of
/// largest absolute value is made positive.
pub fn align_sign(v: &VectorH, reference: Option<&VectorH>) -> Result<VectorH> {
    if v.as_slice().iter().all(|&x| x == 0.0) {
        return Err(Error::Degenerate("cannot align the zero vector".into()));
    }
    if let Some(reference) = reference {
        let ip = v.dot(reference)?;
        if ip < 0.0 {
            return Ok(v.scale(-1.0));
        }
        if ip > 0.0 {
            return Ok(v.clone());
        }
    }
    let mut lead = 0;
    for (j, x) in v.as_slice().iter().enumerate() {
        if x.abs() > v.as_slice()[lead].abs() {
            lead = j;
        }
    }
    Ok(if v.as_slice()[lead] < 0.0 {
        v.scale(-1.0)
    } else {
        v.clone()
    })
}

/// Unit eigenvector of a matched simple cluster, aligned to `reference`.
pub fn extract_eigenvector(
    matched: &ClusterMatch,
    r: usize,
    reference: Option<&VectorH>,
) -> Result<EigenvectorEstimate> {
    let theta = align_sign(&matched.eigenvector(r)?, reference)?;
    Ok(EigenvectorEstimate {
        theta,
        r,
        n: None,
        reference: reference.cloned(),
    })
}

/// `⟨θ̂_r − θ_r, u⟩` computed from bilinear forms of `P̂_r − P_r` only,
/// with `θ̂_r` aligned so that `⟨θ̂_r, θ_r⟩ ≥ 0`.
pub fn linear_form_representation(
    p_hat: &SymmetricOperator,
    p: &SymmetricOperator,
    theta: &VectorH,
    u: &VectorH,
) -> Result<f64> {
    check_dim(p.dim(), p_hat.dim())?;
    let diff = p_hat - p;
    let d = diff.bilinear(theta, theta)?;
    if 1.0 + d <= 0.0 {
        return Err(Error::Degenerate(
            "empirical eigenvector is orthogonal to the population one".into(),
        ));
    }
    let c = (1.0 + d).sqrt();
    Ok((diff.bilinear(theta, u)? - (c - 1.0) * theta.dot(u)?) / c)
}

/// Bias estimate from two already-formed half-sample covariances. `θ̂` is
/// aligned to the population eigenvector of `dec`, `θ̂′` to `θ̂`.
pub fn bias_from_halves(
    dec: &SpectralDecomposition,
    r: usize,
    first: &SymmetricOperator,
    second: &SymmetricOperator,
) -> Result<BiasEstimate> {
    let reference = dec.eigenvector(r)?;
    let half_gap = dec.spectral_gap(r)? / 2.0;
    let mut thetas = Vec::with_capacity(2);
    for half in [first, second] {
        let (theta, norm_e) = matched_eigenvector(dec, half, r)?;
        if !(norm_e < half_gap) {
            return Err(Error::NotSeparated {
                index: r,
                norm_e,
                half_gap,
            });
        }
        thetas.push(theta);
    }
    let theta_hat = align_sign(&thetas[0], Some(&reference))?;
    let theta_hat_prime = align_sign(&thetas[1], Some(&theta_hat))?;
    let inner = theta_hat.dot(&theta_hat_prime)?;
    Ok(BiasEstimate {
        b_hat: inner - 1.0,
        theta_hat,
        theta_hat_prime,
        inner,
    })
}

/// Splits an even sample into halves and estimates `b_r` by `⟨θ̂, θ̂′⟩ − 1`.
pub fn estimate_bias_split(samples: &SampleSet, r: usize, dec: &SpectralDecomposition) -> Result<BiasEstimate> {
    let (first, second) = samples.half_covariances()?;
    bias_from_halves(dec, r, &first, &second)
}

/// `θ̃ = θ̂ / √(1 + b̂)`.
pub fn debiased_eigenvector(theta_hat: &VectorH, b_hat: f64) -> Result<VectorH> {
    let value = 1.0 + b_hat;
    if !(value > DEBIAS_FLOOR) {
        return Err(Error::DebiasFloor {
            value,
            floor: DEBIAS_FLOOR,
        });
    }
    Ok(theta_hat.scale(1.0 / value.sqrt()))
}

/// `β_n = C_γ (‖Σ‖∞/ḡ_r) √((t + log p)/n)`.
pub fn threshold_level(norm_sigma: f64, gap: f64, t: f64, p: f64, n: f64, c_gamma: f64) -> Result<f64> {
    let positive = [norm_sigma, gap, t, p, n].iter().all(|x| *x > 0.0 && x.is_finite());
    if !positive || !(c_gamma >= 0.0) {
        return Err(Error::InvalidArgument(
            "threshold inputs must be positive (C_γ nonnegative)".into(),
        ));
    }
    Ok(c_gamma * norm_sigma / gap * ((t + p.ln()) / n).sqrt())
}

/// `{j : |θ̃_j| > β}` as 0-based coordinate indices.
pub fn recover_support(theta_tilde: &VectorH, beta: f64) -> Vec<usize> {
    theta_tilde
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, x)| x.abs() > beta)
        .map(|(j, _)| j)
        .collect()
}

/// `θ̃` with every coordinate outside `support` set to zero.
pub fn sparse_pca_estimate(theta_tilde: &VectorH, support: &[usize]) -> Result<VectorH> {
    let mut coords = vec![0.0; theta_tilde.dim()];
    for &j in support {
        if j >= coords.len() {
            return Err(Error::InvalidArgument(format!(
                "support index {j} outside 0..{}",
                coords.len()
            )));
        }
        coords[j] = theta_tilde.as_slice()[j];
    }
    Ok(VectorH::new(coords).expect("masked copy of a finite vector"))
}
