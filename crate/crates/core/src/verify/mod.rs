//! Exact covariance formulas, Monte Carlo oracles and seeded experiments.
//!
//! Replicate `k` of an experiment always draws from stream `k` of the
//! experiment seed. Replicates run in parallel but results are gathered and
//! reduced in index order, so reports do not depend on scheduling.

pub mod bias;
pub mod experiments;
pub mod gamma;
pub mod report;
pub mod stats;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::VectorH;

pub use bias::{mc_expected_projector, BiasReport, DEFAULT_MAX_NONSEPARATED};
pub use experiments::*;
pub use gamma::{gamma_covariance, GammaForms};
pub use report::{Cell, ExperimentReport, Verdict};
pub use stats::{fit_line, fit_loglog, ks_statistic, LineFit};

/// Replicates handed to one parallel batch; bounds peak memory when each
/// replicate yields a matrix.
const BATCH: usize = 256;

/// Runs `f` on replicate indices `0..count` in parallel and returns the
/// results in index order. The first error by index wins.
pub(crate) fn replicate_map<T: Send>(count: usize, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = (0..count as u64).into_par_iter().map(&f).collect();
    results.into_iter().collect()
}

/// Folds replicate results in index order, materializing at most one batch
/// at a time.
pub(crate) fn replicate_fold<T: Send, A>(
    count: usize,
    f: impl Fn(u64) -> Result<T> + Sync,
    mut acc: A,
    mut fold: impl FnMut(&mut A, T),
) -> Result<A> {
    let mut start = 0;
    while start < count {
        let end = (start + BATCH).min(count);
        let batch: Vec<Result<T>> = (start as u64..end as u64).into_par_iter().map(&f).collect();
        for item in batch {
            fold(&mut acc, item?);
        }
        start = end;
    }
    Ok(acc)
}

/// Pair of test directions `(u, v)` for bilinear forms `⟨A u, v⟩`.
#[derive(Clone, Debug, Serialize)]
pub struct DirectionPair {
    pub label: String,
    pub u: VectorH,
    pub v: VectorH,
}

impl DirectionPair {
    pub fn new(label: impl Into<String>, u: VectorH, v: VectorH) -> Result<Self> {
        if u.dim() != v.dim() {
            return Err(Error::DimensionMismatch {
                expected: u.dim(),
                found: v.dim(),
            });
        }
        Ok(Self {
            label: label.into(),
            u,
            v,
        })
    }
}
