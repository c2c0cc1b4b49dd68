//! Clusters of equal eigenvalues, spectral projectors, gaps and resolvents.
//!
//! Cluster indices `r` are 1-based and ordered by decreasing eigenvalue, so
//! `r = 1` is the top of the spectrum. The member positions `Δ_r` index into
//! the with-multiplicity eigenvalue list sorted in descending order.

use std::ops::Range;

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::linalg::{SymEigen, SymmetricOperator, VectorH};

/// Relative merge tolerance for neighbouring eigenvalues.
pub const DEFAULT_CLUSTER_TOL: f64 = 1e-8;
/// Relative tolerance for projector identities and reconstructions.
pub const PROJ_TOL: f64 = 1e-9;
/// Minimum relative distance between a resolvent point and the spectrum.
pub const RESOLVENT_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct EigenCluster {
    /// 1-based cluster index.
    pub index: usize,
    /// Representative eigenvalue (mean of the merged members).
    pub value: f64,
    pub multiplicity: usize,
    /// Positions `Δ_r` in the sorted with-multiplicity eigenvalue list.
    pub members: Range<usize>,
    pub projector: SymmetricOperator,
}

#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    source: SymmetricOperator,
    eigen: SymEigen,
    clusters: Vec<EigenCluster>,
    cluster_tol: f64,
}

impl SpectralDecomposition {
    /// Decomposes `sigma`, merging sorted neighbours whose difference is at
    /// most `cluster_tol * max(1, ‖Σ‖∞)`.
    pub fn decompose(sigma: &SymmetricOperator, cluster_tol: f64) -> Result<Self> {
        let eigen = sigma.eigen()?;
        Self::from_eigen(sigma.clone(), eigen, cluster_tol)
    }

    /// Builds the decomposition from a known eigensystem, e.g. the exact
    /// frame of a covariance model.
    pub fn from_eigen(source: SymmetricOperator, eigen: SymEigen, cluster_tol: f64) -> Result<Self> {
        if !(cluster_tol >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cluster_tol must be nonnegative, got {cluster_tol}"
            )));
        }
        if eigen.dim() != source.dim() {
            return Err(Error::DimensionMismatch {
                expected: source.dim(),
                found: eigen.dim(),
            });
        }
        let values = &eigen.values;
        let norm = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let merge = cluster_tol * norm.max(1.0);

        let mut ranges = Vec::new();
        let mut start = 0;
        for j in 1..=values.len() {
            if j == values.len() || values[j - 1] - values[j] > merge {
                ranges.push(start..j);
                start = j;
            }
        }

        let clusters = ranges
            .into_iter()
            .enumerate()
            .map(|(k, members)| {
                let value = values[members.clone()].iter().sum::<f64>() / members.len() as f64;
                EigenCluster {
                    index: k + 1,
                    value,
                    multiplicity: members.len(),
                    projector: eigen.projector(members.clone()),
                    members,
                }
            })
            .collect();

        Ok(Self {
            source,
            eigen,
            clusters,
            cluster_tol,
        })
    }

    pub fn source(&self) -> &SymmetricOperator {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn eigen(&self) -> &SymEigen {
        &self.eigen
    }

    /// Sorted eigenvalues with multiplicity.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigen.values
    }

    pub fn clusters(&self) -> &[EigenCluster] {
        &self.clusters
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_tol(&self) -> f64 {
        self.cluster_tol
    }

    pub fn cluster(&self, r: usize) -> Result<&EigenCluster> {
        if r == 0 || r > self.clusters.len() {
            return Err(Error::ClusterIndex {
                index: r,
                count: self.clusters.len(),
            });
        }
        Ok(&self.clusters[r - 1])
    }

    /// Unit eigenvector of a simple cluster.
    pub fn eigenvector(&self, r: usize) -> Result<VectorH> {
        let cluster = self.cluster(r)?;
        if cluster.multiplicity != 1 {
            return Err(Error::Multiplicity {
                index: r,
                multiplicity: cluster.multiplicity,
            });
        }
        Ok(self.eigen.vector(cluster.members.start))
    }

    /// `Σ_r μ_r P_r`.
    pub fn reconstruct(&self) -> SymmetricOperator {
        let mut acc = SymmetricOperator::zeros(self.dim());
        for c in &self.clusters {
            acc = &acc + &c.projector.scale(c.value);
        }
        acc
    }

    /// Gap `g_r = μ_r - μ_{r+1}`; the phantom eigenvalue below the last
    /// cluster is 0 when `μ_R > 0`, otherwise the trailing gap is undefined.
    fn forward_gap(&self, r: usize) -> Option<f64> {
        let k = r - 1;
        if k + 1 < self.clusters.len() {
            Some(self.clusters[k].value - self.clusters[k + 1].value)
        } else if self.clusters[k].value > 0.0 {
            Some(self.clusters[k].value)
        } else {
            None
        }
    }

    /// `ḡ_r = min(g_{r-1}, g_r)` with `ḡ_1 = g_1`.
    pub fn spectral_gap(&self, r: usize) -> Result<f64> {
        self.cluster(r)?;
        let below = self.forward_gap(r);
        let above = if r > 1 { self.forward_gap(r - 1) } else { None };
        match (above, below) {
            (Some(a), Some(b)) => Ok(a.min(b)),
            (Some(a), None) => Ok(a),
            (None, Some(b)) => Ok(b),
            (None, None) => Err(Error::UndefinedGap(r)),
        }
    }

    /// Distance from the block of clusters `first..=last` to the rest of the
    /// spectrum (phantom zero included), i.e. the interval gap `ḡ_I`.
    pub fn interval_gap(&self, first: usize, last: usize) -> Result<f64> {
        self.cluster(first)?;
        self.cluster(last)?;
        if first > last {
            return Err(Error::InvalidArgument(format!(
                "empty cluster interval {first}..={last}"
            )));
        }
        let below = self.forward_gap(last);
        let above = if first > 1 { self.forward_gap(first - 1) } else { None };
        match (above, below) {
            (Some(a), Some(b)) => Ok(a.min(b)),
            (Some(a), None) => Ok(a),
            (None, Some(b)) => Ok(b),
            (None, None) => Err(Error::UndefinedGap(first)),
        }
    }

    /// Reduced resolvent `C_r = Σ_{s≠r} (μ_r − μ_s)^{-1} P_s`.
    pub fn reduced_resolvent(&self, r: usize) -> Result<SymmetricOperator> {
        let target = self.cluster(r)?;
        let mut weights = vec![0.0; self.dim()];
        for c in &self.clusters {
            if c.index != r {
                let w = 1.0 / (target.value - c.value);
                for j in c.members.clone() {
                    weights[j] = w;
                }
            }
        }
        Ok(self.eigen.weighted(|j, _| weights[j]))
    }

    /// Smallest distance from `eta` to the spectrum.
    pub fn distance_to_spectrum(&self, eta: Complex<f64>) -> f64 {
        distance_to_values(&self.eigen.values, eta)
    }
}

pub fn decompose(sigma: &SymmetricOperator, cluster_tol: f64) -> Result<SpectralDecomposition> {
    SpectralDecomposition::decompose(sigma, cluster_tol)
}

pub fn spectral_gap(dec: &SpectralDecomposition, r: usize) -> Result<f64> {
    dec.spectral_gap(r)
}

pub fn reduced_resolvent(dec: &SpectralDecomposition, r: usize) -> Result<SymmetricOperator> {
    dec.reduced_resolvent(r)
}

pub(crate) fn distance_to_values(values: &[f64], eta: Complex<f64>) -> f64 {
    values
        .iter()
        .map(|&v| (Complex::new(v, 0.0) - eta).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Resolvent `(Σ − ηI)^{-1}` by complex LU.
pub fn resolvent(sigma: &SymmetricOperator, eta: Complex<f64>) -> Result<DMatrix<Complex<f64>>> {
    let values = sigma.eigenvalues()?;
    resolvent_with_spectrum(sigma, &values, eta)
}

pub(crate) fn resolvent_with_spectrum(
    sigma: &SymmetricOperator,
    values: &[f64],
    eta: Complex<f64>,
) -> Result<DMatrix<Complex<f64>>> {
    let scale = values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let distance = distance_to_values(values, eta);
    if distance <= RESOLVENT_TOL * scale {
        return Err(Error::NearSpectrum {
            point: format!("{eta}"),
            distance,
        });
    }
    let p = sigma.dim();
    let shifted = DMatrix::from_fn(p, p, |i, j| {
        let a = Complex::new(sigma.get(i, j), 0.0);
        if i == j {
            a - eta
        } else {
            a
        }
    });
    shifted.try_inverse().ok_or_else(|| Error::NearSpectrum {
        point: format!("{eta}"),
        distance,
    })
}

/// Empirical projector `P̂_r` matched positionally to a population cluster.
#[derive(Clone, Debug)]
pub struct MatchedCluster {
    pub index: usize,
    pub members: Range<usize>,
    pub projector: SymmetricOperator,
    /// `‖Σ̂ − Σ‖∞ < ḡ_r / 2`; false whenever the population gap is undefined.
    pub separated: bool,
    pub gap: Option<f64>,
}

/// Result of matching every population cluster against an empirical operator.
#[derive(Clone, Debug)]
pub struct ClusterMatch {
    pub clusters: Vec<MatchedCluster>,
    /// `‖Σ̂ − Σ‖∞`.
    pub norm_e: f64,
    /// Eigensystem of the empirical operator.
    pub empirical: SymEigen,
}

impl ClusterMatch {
    pub fn cluster(&self, r: usize) -> Result<&MatchedCluster> {
        if r == 0 || r > self.clusters.len() {
            return Err(Error::ClusterIndex {
                index: r,
                count: self.clusters.len(),
            });
        }
        Ok(&self.clusters[r - 1])
    }

    /// Empirical unit eigenvector for a simple cluster, unaligned.
    pub fn eigenvector(&self, r: usize) -> Result<VectorH> {
        let c = self.cluster(r)?;
        if c.members.len() != 1 {
            return Err(Error::Multiplicity {
                index: r,
                multiplicity: c.members.len(),
            });
        }
        Ok(self.empirical.vector(c.members.start))
    }
}

/// Matches the clusters of `truth` to `sigma_hat` by position: `P̂_r` sums the
/// empirical eigenprojectors at the positions `Δ_r`.
pub fn match_clusters(truth: &SpectralDecomposition, sigma_hat: &SymmetricOperator) -> Result<ClusterMatch> {
    let empirical = sigma_hat.eigen()?;
    match_clusters_with(truth, sigma_hat, empirical)
}

pub(crate) fn match_clusters_with(
    truth: &SpectralDecomposition,
    sigma_hat: &SymmetricOperator,
    empirical: SymEigen,
) -> Result<ClusterMatch> {
    if sigma_hat.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.dim(),
            found: sigma_hat.dim(),
        });
    }
    let norm_e = (sigma_hat - truth.source()).operator_norm()?;
    let clusters = truth
        .clusters()
        .iter()
        .map(|c| {
            let gap = truth.spectral_gap(c.index).ok();
            MatchedCluster {
                index: c.index,
                members: c.members.clone(),
                projector: empirical.projector(c.members.clone()),
                separated: gap.is_some_and(|g| norm_e < g / 2.0),
                gap,
            }
        })
        .collect();
    Ok(ClusterMatch {
        clusters,
        norm_e,
        empirical,
    })
}

/// Eigenvector of `sigma_hat` at the position of the simple population
/// cluster `r`, together with `‖Σ̂ − Σ‖∞`. Uses the eigenvalues of `Σ̂` and
/// inverse iteration started from `θ_r` instead of a full eigensystem.
pub fn matched_eigenvector(
    truth: &SpectralDecomposition,
    sigma_hat: &SymmetricOperator,
    r: usize,
) -> Result<(VectorH, f64)> {
    if sigma_hat.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.dim(),
            found: sigma_hat.dim(),
        });
    }
    let cluster = truth.cluster(r)?;
    if cluster.multiplicity != 1 {
        return Err(Error::Multiplicity {
            index: r,
            multiplicity: cluster.multiplicity,
        });
    }
    let norm_e = (sigma_hat - truth.source()).operator_norm()?;
    let mu = sigma_hat.eigenvalues()?[cluster.members.start];
    let p = truth.dim();
    let scale = sigma_hat.max_abs_entry().max(f64::MIN_POSITIVE);
    let mut x = truth.eigenvector(r)?.coords().clone();
    // an exactly singular shift gets nudged off the eigenvalue
    for nudge in [0.0, 1e-14, 1e-12] {
        let shifted = sigma_hat.matrix() - DMatrix::identity(p, p) * (mu + nudge * scale);
        let lu = shifted.lu();
        let mut ok = true;
        for _ in 0..3 {
            match lu.solve(&x) {
                Some(y) if y.iter().all(|v| v.is_finite()) && y.norm() > 0.0 => x = &y / y.norm(),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok((VectorH::from_dvector(x), norm_e));
        }
    }
    // fall back to the full eigensystem
    let m = match_clusters(truth, sigma_hat)?;
    Ok((m.eigenvector(r)?, norm_e))
}
