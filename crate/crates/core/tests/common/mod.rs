#![allow(dead_code)]

use eigenpert::sampling::random_orthogonal;
use eigenpert::spectral::{SpectralDecomposition, DEFAULT_CLUSTER_TOL};
use eigenpert::{SymmetricOperator, VectorH};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Distinct eigenvalues `> 0` with the given gaps, listed from the top.
pub fn values_from_gaps(bottom: f64, gaps: &[f64]) -> Vec<f64> {
    let mut values = vec![bottom];
    for g in gaps.iter().rev() {
        values.push(values.last().unwrap() + g);
    }
    values.reverse();
    values
}

/// `Q diag(values) Q^T` with multiplicities and a Haar rotation `Q`.
pub fn rotated_operator(values: &[f64], multiplicities: &[usize], rng: &mut ChaCha8Rng) -> SymmetricOperator {
    let full: Vec<f64> = values
        .iter()
        .zip(multiplicities)
        .flat_map(|(&v, &m)| std::iter::repeat_n(v, m))
        .collect();
    let q = random_orthogonal(full.len(), rng.random());
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(full));
    SymmetricOperator::new(&q * d * q.transpose()).unwrap()
}

/// Random separated spectrum in dimension at most `max_dim`: gaps in
/// `[0.5, 2]`, occasional double eigenvalues.
pub fn random_instance(max_dim: usize, rng: &mut ChaCha8Rng) -> SpectralDecomposition {
    let p = rng.random_range(2..=max_dim);
    let mut multiplicities = Vec::new();
    let mut used = 0;
    while used < p {
        let m = if p - used >= 2 && rng.random_bool(0.2) { 2 } else { 1 };
        multiplicities.push(m);
        used += m;
    }
    let gaps: Vec<f64> = (1..multiplicities.len()).map(|_| rng.random_range(0.5..2.0)).collect();
    let values = values_from_gaps(rng.random_range(0.2..1.0), &gaps);
    let sigma = rotated_operator(&values, &multiplicities, rng);
    SpectralDecomposition::decompose(&sigma, DEFAULT_CLUSTER_TOL).unwrap()
}

/// Symmetric Gaussian direction scaled to operator norm `norm`.
pub fn random_perturbation(p: usize, norm: f64, rng: &mut ChaCha8Rng) -> SymmetricOperator {
    let a = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let e = SymmetricOperator::new(&a + a.transpose()).unwrap();
    let scale = norm / e.operator_norm().unwrap();
    e.scale(scale)
}

pub fn random_unit(p: usize, rng: &mut ChaCha8Rng) -> VectorH {
    let coords: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
    VectorH::new(coords).unwrap().normalized().unwrap()
}
