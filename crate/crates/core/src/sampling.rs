//! Covariance models with exact ground truth, Gaussian sampling and the
//! (uncentered) sample covariance.

use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_matrix_csv;
use crate::linalg::{SymEigen, SymmetricOperator, VectorH};
use crate::rng::{replicate_rng, standard_normals};
use crate::spectral::{SpectralDecomposition, DEFAULT_CLUSTER_TOL};

/// Orthonormal frame carrying the model's eigenvectors (columns, in the
/// order of the descending spectrum).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisSpec {
    #[default]
    Identity,
    /// Haar-random rotation drawn from `seed`.
    Rotation { seed: u64 },
    /// Leading direction `k^{-1/2}(1, …, 1, 0, …, 0)` with `support` nonzero
    /// entries; the rest of the frame completes it.
    Sparse { support: usize },
    /// Leading orthonormal directions given explicitly.
    Explicit { directions: Vec<Vec<f64>> },
}

impl BasisSpec {
    fn is_identity(&self) -> bool {
        matches!(self, BasisSpec::Identity)
    }

    pub fn frame(&self, dim: usize) -> Result<DMatrix<f64>> {
        match self {
            BasisSpec::Identity => Ok(DMatrix::identity(dim, dim)),
            BasisSpec::Rotation { seed } => Ok(random_orthogonal(dim, *seed)),
            BasisSpec::Sparse { support } => {
                if *support == 0 || *support > dim {
                    return Err(Error::InvalidArgument(format!(
                        "sparse support {support} outside 1..={dim}"
                    )));
                }
                let mut lead = DVector::zeros(dim);
                let amp = 1.0 / (*support as f64).sqrt();
                lead.rows_mut(0, *support).fill(amp);
                complete_frame(&[lead])
            }
            BasisSpec::Explicit { directions } => {
                let vecs = directions
                    .iter()
                    .map(|d| {
                        if d.len() != dim {
                            Err(Error::DimensionMismatch {
                                expected: dim,
                                found: d.len(),
                            })
                        } else {
                            Ok(DVector::from_column_slice(d))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                for (i, a) in vecs.iter().enumerate() {
                    for (j, b) in vecs.iter().enumerate() {
                        let target = if i == j { 1.0 } else { 0.0 };
                        if (a.dot(b) - target).abs() > 1e-10 {
                            return Err(Error::InvalidArgument(
                                "explicit basis directions are not orthonormal".into(),
                            ));
                        }
                    }
                }
                complete_frame(&vecs)
            }
        }
    }
}

/// Extends orthonormal `leading` vectors to a full orthonormal frame by
/// Gram–Schmidt over the standard basis (twice, for stability).
fn complete_frame(leading: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let dim = leading.first().map(|v| v.len()).ok_or(Error::Empty("no directions"))?;
    if leading.len() > dim {
        return Err(Error::InvalidArgument("more directions than dimensions".into()));
    }
    let mut frame: Vec<DVector<f64>> = leading.to_vec();
    for k in 0..dim {
        if frame.len() == dim {
            break;
        }
        let mut v = DVector::zeros(dim);
        v[k] = 1.0;
        for _ in 0..2 {
            for f in &frame {
                let c = f.dot(&v);
                v.axpy(-c, f, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            frame.push(v / norm);
        }
    }
    Ok(DMatrix::from_columns(&frame))
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal moved into `Q`.
pub fn random_orthogonal(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = replicate_rng(seed, u64::MAX);
    let g = DMatrix::from_iterator(dim, dim, standard_normals(&mut rng, dim * dim));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// Serializable description of a covariance model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `Σ = Σ_j (s_j² + σ²) θ_j ⊗ θ_j + σ² (I − Σ_j θ_j ⊗ θ_j)`. `spikes`
    /// holds the amplitudes `s_j` (not their squares).
    Spiked {
        spikes: Vec<f64>,
        sigma: f64,
        dim: usize,
        #[serde(default)]
        basis: BasisSpec,
    },
    /// Distinct eigenvalues (strictly descending) with multiplicities.
    ExplicitSpectrum {
        values: Vec<f64>,
        multiplicities: Vec<usize>,
        #[serde(default)]
        basis: BasisSpec,
    },
    /// `P_L Σ P_L` restricted to the leading `subspace_dim` coordinates.
    Truncated { base: Box<ModelSpec>, subspace_dim: usize },
}

impl ModelSpec {
    pub fn build(&self) -> Result<CovarianceModel> {
        CovarianceModel::from_spec(self.clone())
    }

    /// Ambient dimension of the built model.
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Spiked { dim, .. } => *dim,
            ModelSpec::ExplicitSpectrum { multiplicities, .. } => multiplicities.iter().sum(),
            ModelSpec::Truncated { subspace_dim, .. } => *subspace_dim,
        }
    }

    /// Same model family at another ambient dimension (spiked models only).
    pub fn with_dim(&self, new_dim: usize) -> Result<ModelSpec> {
        match self {
            ModelSpec::Spiked {
                spikes, sigma, basis, ..
            } => Ok(ModelSpec::Spiked {
                spikes: spikes.clone(),
                sigma: *sigma,
                dim: new_dim,
                basis: basis.clone(),
            }),
            _ => Err(Error::InvalidArgument("only spiked models can be resized".into())),
        }
    }

    /// Noise level `σ` when the model is spiked.
    pub fn spiked_sigma(&self) -> Option<f64> {
        match self {
            ModelSpec::Spiked { sigma, .. } => Some(*sigma),
            _ => None,
        }
    }
}

/// Covariance operator together with its exact spectral decomposition.
#[derive(Clone, Debug)]
pub struct CovarianceModel {
    spec: ModelSpec,
    sigma: SymmetricOperator,
    truth: SpectralDecomposition,
    root: SampleRoot,
}

/// Symmetric square root `Σ^{1/2}`; a sample is `Σ^{1/2} z`.
#[derive(Clone, Debug)]
enum SampleRoot {
    Diagonal(Vec<f64>),
    /// `a I + V diag(w) Vᵀ`, used when one cluster fills most of the space.
    LowRank {
        scale: f64,
        vectors: DMatrix<f64>,
        weights: Vec<f64>,
    },
    Dense(DMatrix<f64>),
}

impl SampleRoot {
    fn new(truth: &SpectralDecomposition, diagonal: bool) -> Self {
        let eigen = truth.eigen();
        let roots: Vec<f64> = eigen.values.iter().map(|v| v.max(0.0).sqrt()).collect();
        if diagonal {
            let mut d = vec![0.0; roots.len()];
            for (j, r) in roots.iter().enumerate() {
                let k = eigen.vectors.column(j).iamax();
                d[k] = *r;
            }
            return SampleRoot::Diagonal(d);
        }
        let p = truth.dim();
        let bulk = truth
            .clusters()
            .iter()
            .max_by_key(|c| c.multiplicity)
            .expect("a decomposition has a cluster");
        if 2 * bulk.multiplicity >= p {
            let a = bulk.value.max(0.0).sqrt();
            let others: Vec<usize> = (0..p).filter(|j| !bulk.members.contains(j)).collect();
            let vectors = DMatrix::from_fn(p, others.len(), |i, k| eigen.vectors[(i, others[k])]);
            let weights = others.iter().map(|&j| roots[j] - a).collect();
            return SampleRoot::LowRank {
                scale: a,
                vectors,
                weights,
            };
        }
        SampleRoot::Dense(eigen.weighted(|j, _| roots[j]).into_matrix())
    }

    /// Rows of `z` mapped to rows of `Z Σ^{1/2}`.
    fn apply(&self, mut z: DMatrix<f64>) -> DMatrix<f64> {
        match self {
            SampleRoot::Diagonal(d) => {
                for (j, mut col) in z.column_iter_mut().enumerate() {
                    col *= d[j];
                }
                z
            }
            SampleRoot::LowRank {
                scale,
                vectors,
                weights,
            } => {
                let mut coef = &z * vectors;
                for (k, mut col) in coef.column_iter_mut().enumerate() {
                    col *= weights[k];
                }
                z *= *scale;
                z.gemm(1.0, &coef, &vectors.transpose(), 1.0);
                z
            }
            SampleRoot::Dense(root) => z * root,
        }
    }
}

impl CovarianceModel {
    fn from_spec(spec: ModelSpec) -> Result<Self> {
        match &spec {
            ModelSpec::Spiked {
                spikes,
                sigma,
                dim,
                basis,
            } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
                }
                if spikes.len() >= *dim {
                    return Err(Error::InvalidArgument(format!(
                        "need fewer spikes than dimensions ({} >= {dim})",
                        spikes.len()
                    )));
                }
                if spikes.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(Error::InvalidArgument("spike amplitudes must be positive".into()));
                }
                if spikes.windows(2).any(|w| w[0] <= w[1]) {
                    return Err(Error::InvalidArgument(
                        "spike amplitudes must be strictly decreasing".into(),
                    ));
                }
                let s2 = sigma * sigma;
                let mut values: Vec<f64> = spikes.iter().map(|s| s * s + s2).collect();
                values.resize(*dim, s2);
                Self::assemble(spec.clone(), values, basis.frame(*dim)?, basis.is_identity())
            }
            ModelSpec::ExplicitSpectrum {
                values,
                multiplicities,
                basis,
            } => {
                if values.is_empty() || values.len() != multiplicities.len() {
                    return Err(Error::InvalidArgument(
                        "values and multiplicities must be nonempty and of equal length".into(),
                    ));
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Error::InvalidArgument(
                        "eigenvalues must be finite and nonnegative".into(),
                    ));
                }
                if values.windows(2).any(|w| w[0] <= w[1]) {
                    return Err(Error::InvalidArgument("eigenvalues must be strictly decreasing".into()));
                }
                if multiplicities.contains(&0) {
                    return Err(Error::InvalidArgument("multiplicities must be positive".into()));
                }
                let full: Vec<f64> = values
                    .iter()
                    .zip(multiplicities)
                    .flat_map(|(&v, &m)| std::iter::repeat_n(v, m))
                    .collect();
                let dim = full.len();
                Self::assemble(spec.clone(), full, basis.frame(dim)?, basis.is_identity())
            }
            ModelSpec::Truncated { base, subspace_dim } => {
                let base_model = base.build()?;
                truncate(&base_model, *subspace_dim).map(|mut m| {
                    m.spec = spec.clone();
                    m
                })
            }
        }
    }

    fn assemble(spec: ModelSpec, values: Vec<f64>, frame: DMatrix<f64>, identity_basis: bool) -> Result<Self> {
        let eigen = SymEigen { values, vectors: frame };
        let sigma = eigen.reconstruct();
        let truth = SpectralDecomposition::from_eigen(sigma.clone(), eigen, DEFAULT_CLUSTER_TOL)?;
        let root = SampleRoot::new(&truth, identity_basis);
        Ok(Self {
            spec,
            sigma,
            truth,
            root,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn sigma(&self) -> &SymmetricOperator {
        &self.sigma
    }

    pub fn truth(&self) -> &SpectralDecomposition {
        &self.truth
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    /// Orthonormal eigenvector frame (columns).
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.truth.eigen().vectors
    }

    /// `‖Σ‖∞`, read off the exact spectrum.
    pub fn norm(&self) -> f64 {
        self.truth.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn effective_rank(&self) -> f64 {
        self.sigma.trace() / self.norm()
    }
}

pub fn spiked_model(spikes: &[f64], sigma: f64, dim: usize, basis_seed: Option<u64>) -> Result<CovarianceModel> {
    ModelSpec::Spiked {
        spikes: spikes.to_vec(),
        sigma,
        dim,
        basis: basis_seed.map_or(BasisSpec::Identity, |seed| BasisSpec::Rotation { seed }),
    }
    .build()
}

pub fn explicit_spectrum(values: &[f64], multiplicities: &[usize], basis: BasisSpec) -> Result<CovarianceModel> {
    ModelSpec::ExplicitSpectrum {
        values: values.to_vec(),
        multiplicities: multiplicities.to_vec(),
        basis,
    }
    .build()
}

/// Compresses `base` to its leading `q` coordinates. Every cluster other
/// than the bottom (bulk) one must live inside that subspace.
pub fn truncated_model(base: &CovarianceModel, q: usize) -> Result<CovarianceModel> {
    let mut model = truncate(base, q)?;
    model.spec = ModelSpec::Truncated {
        base: Box::new(base.spec.clone()),
        subspace_dim: q,
    };
    Ok(model)
}

fn truncate(base: &CovarianceModel, q: usize) -> Result<CovarianceModel> {
    let p = base.dim();
    if q == 0 || q > p {
        return Err(Error::InvalidArgument(format!(
            "subspace dimension {q} outside 1..={p}"
        )));
    }
    let truth = base.truth();
    let clusters = truth.clusters();
    for c in &clusters[..clusters.len().saturating_sub(1)] {
        for j in c.members.clone() {
            let tail = truth.eigen().vectors.column(j).rows(q, p - q).norm();
            if tail > 1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "spike direction {j} leaves the leading {q} coordinates"
                )));
            }
        }
    }
    let sigma = base.sigma().leading_block(q)?;
    let truth = SpectralDecomposition::decompose(&sigma, DEFAULT_CLUSTER_TOL)?;
    let root = SampleRoot::new(&truth, false);
    Ok(CovarianceModel {
        spec: base.spec.clone(),
        sigma,
        truth,
        root,
    })
}

/// `n` i.i.d. draws from `N(0, Σ)`, stored one sample per row.
#[derive(Clone, Debug)]
pub struct SampleSet {
    data: DMatrix<f64>,
    pub seed: u64,
    pub stream: u64,
}

impl SampleSet {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map(|r| r.len()).ok_or(Error::Empty("no samples"))?;
        if p == 0 {
            return Err(Error::Empty("samples of dimension 0"));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: bad.len(),
            });
        }
        let data = DMatrix::from_row_iterator(n, p, rows.iter().flatten().copied());
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            data,
            seed: 0,
            stream: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn sample(&self, i: usize) -> VectorH {
        VectorH::from_dvector(self.data.row(i).transpose())
    }

    /// Rows `range` as a new sample set.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<SampleSet> {
        if range.start >= range.end || range.end > self.n() {
            return Err(Error::InvalidArgument(format!(
                "sample range {range:?} outside 0..{}",
                self.n()
            )));
        }
        Ok(SampleSet {
            data: self.data.rows(range.start, range.len()).into_owned(),
            seed: self.seed,
            stream: self.stream,
        })
    }

    /// First and second halves of an even-sized sample.
    pub fn halves(&self) -> Result<(SampleSet, SampleSet)> {
        let n = self.n();
        if !n.is_multiple_of(2) {
            return Err(Error::OddSampleCount(n));
        }
        Ok((self.slice(0..n / 2)?, self.slice(n / 2..n)?))
    }

    pub fn covariance(&self) -> SymmetricOperator {
        sample_covariance(self)
    }

    /// Sample covariances of the two halves, without copying the rows.
    pub fn half_covariances(&self) -> Result<(SymmetricOperator, SymmetricOperator)> {
        let n = self.n();
        if !n.is_multiple_of(2) {
            return Err(Error::OddSampleCount(n));
        }
        let h = n / 2;
        Ok((gram(self.data.rows(0, h)), gram(self.data.rows(h, h))))
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let rows: Vec<Vec<f64>> = self.data.row_iter().map(|r| r.iter().copied().collect()).collect();
        write_matrix_csv(path, rows.iter().map(|r| r.as_slice()))
    }
}

/// `n` samples from stream 0 of `seed`.
pub fn sample_gaussian(model: &CovarianceModel, n: usize, seed: u64) -> Result<SampleSet> {
    sample_replicate(model, n, seed, 0)
}

/// `n` samples for replicate `stream`. Standard normals are consumed sample
/// by sample, so a longer draw extends a shorter one.
pub fn sample_replicate(model: &CovarianceModel, n: usize, seed: u64, stream: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let p = model.dim();
    let mut rng = replicate_rng(seed, stream);
    let z = DMatrix::from_row_iterator(n, p, standard_normals(&mut rng, n * p));
    let data = model.root.apply(z);
    Ok(SampleSet { data, seed, stream })
}

/// Uncentered second-moment operator `n^{-1} Σ X_j ⊗ X_j`.
pub fn sample_covariance(samples: &SampleSet) -> SymmetricOperator {
    gram(samples.data.rows(0, samples.n()))
}

fn gram(x: DMatrixView<f64>) -> SymmetricOperator {
    let g = x.transpose() * x;
    SymmetricOperator::symmetrized(g / x.nrows() as f64)
}
