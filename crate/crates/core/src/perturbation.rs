//! First-order perturbation of spectral projectors and contour-integral
//! evaluation of projectors and their linear terms.
//!
//! For `Σ̂ = Σ + E` the empirical projector splits as
//! `P̂_r − P_r = L_r(E) + S_r(E)` with `L_r(E) = C_r E P_r + P_r E C_r`.
//! The remainder is always the exact difference `(P̂_r − P_r) − L_r(E)`.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, SymmetricOperator};
use crate::spectral::{match_clusters, resolvent_with_spectrum, SpectralDecomposition};

/// Default number of quadrature nodes.
pub const DEFAULT_NODES: usize = 64;
/// Tolerance on the imaginary part left over by contour quadrature,
/// relative to `max(1, ‖result‖)`.
pub const IMAG_TOL: f64 = 1e-8;
const MIN_NODES: usize = 8;

/// Constant of the projector bound `‖P̂_r − P_r‖ ≤ 4‖E‖/ḡ_r`.
const PROJECTOR_BOUND: f64 = 4.0;
/// Constant of the remainder bound `‖S_r(E)‖ ≤ 14(‖E‖/ḡ_r)²`.
const REMAINDER_BOUND: f64 = 14.0;

#[derive(Clone, Debug)]
pub struct PerturbationDecomposition {
    pub e: SymmetricOperator,
    pub r: usize,
    pub projector_hat: SymmetricOperator,
    pub linear: SymmetricOperator,
    pub remainder: SymmetricOperator,
    pub norm_e: f64,
    pub gap: f64,
    pub bound_projector: f64,
    pub bound_remainder: f64,
    pub separated: bool,
}

impl PerturbationDecomposition {
    /// Decomposes the projector perturbation caused by `E` for cluster `r`.
    pub fn compute(dec: &SpectralDecomposition, r: usize, e: &SymmetricOperator) -> Result<Self> {
        check_dim(dec.dim(), e.dim())?;
        let hat = dec.source() + e;
        let matched = match_clusters(dec, &hat)?;
        let projector_hat = matched.cluster(r)?.projector.clone();
        let linear = linear_term(dec, r, e)?;
        let remainder = remainder_term(dec, r, e, &projector_hat)?;
        let bounds = perturbation_bounds(dec, r, e)?;
        Ok(Self {
            e: e.clone(),
            r,
            projector_hat,
            linear,
            remainder: remainder.operator,
            norm_e: bounds.norm_e,
            gap: bounds.gap,
            bound_projector: bounds.projector,
            bound_remainder: bounds.remainder,
            separated: bounds.separated,
        })
    }

    /// `‖P̂_r − P_r‖∞`.
    pub fn projector_error(&self, dec: &SpectralDecomposition) -> Result<f64> {
        let p = &dec.cluster(self.r)?.projector;
        (&self.projector_hat - p).operator_norm()
    }
}

/// `L_r(E) = C_r E P_r + P_r E C_r`.
pub fn linear_term(dec: &SpectralDecomposition, r: usize, e: &SymmetricOperator) -> Result<SymmetricOperator> {
    check_dim(dec.dim(), e.dim())?;
    let c = dec.reduced_resolvent(r)?;
    let p = &dec.cluster(r)?.projector;
    let cep = c.matrix() * e.matrix() * p.matrix();
    Ok(SymmetricOperator::symmetrized(&cep + cep.transpose()))
}

#[derive(Clone, Debug)]
pub struct Remainder {
    pub operator: SymmetricOperator,
    /// Certified bound `14 (‖E‖∞/ḡ_r)²`.
    pub bound: f64,
}

/// `S_r(E) = (P̂_r − P_r) − L_r(E)` with its certified bound attached.
pub fn remainder_term(
    dec: &SpectralDecomposition,
    r: usize,
    e: &SymmetricOperator,
    projector_hat: &SymmetricOperator,
) -> Result<Remainder> {
    check_dim(dec.dim(), projector_hat.dim())?;
    let p = &dec.cluster(r)?.projector;
    let linear = linear_term(dec, r, e)?;
    let operator = &(projector_hat - p) - &linear;
    let bounds = perturbation_bounds(dec, r, e)?;
    Ok(Remainder {
        operator,
        bound: bounds.remainder,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PerturbationBounds {
    pub norm_e: f64,
    pub gap: f64,
    pub projector: f64,
    pub remainder: f64,
    pub separated: bool,
}

impl PerturbationBounds {
    pub fn from_norms(norm_e: f64, gap: f64) -> Self {
        let ratio = norm_e / gap;
        Self {
            norm_e,
            gap,
            projector: PROJECTOR_BOUND * ratio,
            remainder: REMAINDER_BOUND * ratio * ratio,
            separated: norm_e < gap / 2.0,
        }
    }
}

pub fn perturbation_bounds(dec: &SpectralDecomposition, r: usize, e: &SymmetricOperator) -> Result<PerturbationBounds> {
    check_dim(dec.dim(), e.dim())?;
    let gap = dec.spectral_gap(r)?;
    Ok(PerturbationBounds::from_norms(e.operator_norm()?, gap))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContourKind {
    Circle {
        center: f64,
        radius: f64,
    },
    /// Boundary of the set of points within `clearance` of `[lower, upper]`.
    Stadium {
        lower: f64,
        upper: f64,
        clearance: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec {
    pub kind: ContourKind,
    pub nodes: usize,
}

impl ContourSpec {
    pub fn circle(center: f64, radius: f64, nodes: usize) -> Result<Self> {
        let spec = Self {
            kind: ContourKind::Circle { center, radius },
            nodes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn stadium(lower: f64, upper: f64, clearance: f64, nodes: usize) -> Result<Self> {
        let spec = Self {
            kind: ContourKind::Stadium {
                lower,
                upper,
                clearance,
            },
            nodes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Circle of radius `ḡ_r / 2` around `μ_r`.
    pub fn around_cluster(dec: &SpectralDecomposition, r: usize, nodes: usize) -> Result<Self> {
        let mu = dec.cluster(r)?.value;
        Self::circle(mu, dec.spectral_gap(r)? / 2.0, nodes)
    }

    /// Stadium at distance `ḡ_I / 2` from `[μ_last, μ_first]`.
    pub fn around_clusters(dec: &SpectralDecomposition, first: usize, last: usize, nodes: usize) -> Result<Self> {
        let upper = dec.cluster(first)?.value;
        let lower = dec.cluster(last)?.value;
        Self::stadium(lower, upper, dec.interval_gap(first, last)? / 2.0, nodes)
    }

    fn validate(&self) -> Result<()> {
        if self.nodes < MIN_NODES {
            return Err(Error::InvalidArgument(format!(
                "contour needs at least {MIN_NODES} nodes, got {}",
                self.nodes
            )));
        }
        let ok = match self.kind {
            ContourKind::Circle { center, radius } => center.is_finite() && radius > 0.0 && radius.is_finite(),
            ContourKind::Stadium {
                lower,
                upper,
                clearance,
            } => lower.is_finite() && upper.is_finite() && lower <= upper && clearance > 0.0 && clearance.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid contour {:?}", self.kind)))
        }
    }

    /// Nodes `η_k` and weights `w_k` with `∮ f(η) dη ≈ Σ w_k f(η_k)` along the
    /// counter-clockwise contour.
    pub fn quadrature(&self) -> Result<Vec<(Complex<f64>, Complex<f64>)>> {
        self.validate()?;
        let i = Complex::new(0.0, 1.0);
        match self.kind {
            ContourKind::Circle { center, radius } => {
                // periodic trapezoid: spectrally accurate for analytic integrands
                let n = self.nodes;
                let h = 2.0 * PI / n as f64;
                Ok((0..n)
                    .map(|k| {
                        let e = Complex::from_polar(1.0, h * k as f64);
                        (center + e * radius, i * e * radius * h)
                    })
                    .collect())
            }
            ContourKind::Stadium {
                lower,
                upper,
                clearance,
            } => {
                // Each semicircle is split at its apex, where the nearest
                // outside eigenvalue sits; Gauss nodes cluster at piece ends.
                let straight = upper - lower;
                let quarter = PI * clearance / 2.0;
                let perimeter = 2.0 * straight + 4.0 * quarter;
                let share = |len: f64| ((self.nodes as f64 * len / perimeter).round() as usize).max(MIN_NODES / 2);
                let mut out = Vec::with_capacity(self.nodes + 3 * MIN_NODES);
                let d = clearance;
                // bottom segment, left to right
                if straight > 0.0 {
                    push_segment(
                        &mut out,
                        share(straight),
                        Complex::new(lower, -d),
                        Complex::new(upper, -d),
                    );
                }
                push_arc(&mut out, share(quarter), upper, d, -PI / 2.0, 0.0);
                push_arc(&mut out, share(quarter), upper, d, 0.0, PI / 2.0);
                if straight > 0.0 {
                    push_segment(
                        &mut out,
                        share(straight),
                        Complex::new(upper, d),
                        Complex::new(lower, d),
                    );
                }
                push_arc(&mut out, share(quarter), lower, d, PI / 2.0, PI);
                push_arc(&mut out, share(quarter), lower, d, PI, 3.0 * PI / 2.0);
                Ok(out)
            }
        }
    }
}

fn push_segment(out: &mut Vec<(Complex<f64>, Complex<f64>)>, n: usize, a: Complex<f64>, b: Complex<f64>) {
    let half = (b - a) * 0.5;
    let mid = (a + b) * 0.5;
    for (x, w) in gauss_legendre(n) {
        out.push((mid + half * x, half * w));
    }
}

fn push_arc(out: &mut Vec<(Complex<f64>, Complex<f64>)>, n: usize, center: f64, radius: f64, from: f64, to: f64) {
    let i = Complex::new(0.0, 1.0);
    let half = (to - from) * 0.5;
    let mid = (to + from) * 0.5;
    for (x, w) in gauss_legendre(n) {
        let e = Complex::from_polar(1.0, mid + half * x);
        out.push((center + e * radius, i * e * radius * half * w));
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` via Newton iteration on the
/// three-term recurrence.
pub(crate) fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut nodes = vec![(0.0, 0.0); n];
    let m = n.div_ceil(2);
    for k in 0..m {
        let mut x = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // after the recurrence p1 = P_n(x) and p0 = P_{n-1}(x)
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[k] = (-x, w);
        nodes[n - 1 - k] = (x, w);
    }
    nodes
}

/// Real part of a contour integral together with the discarded imaginary
/// residual (max absolute entry).
#[derive(Clone, Debug)]
pub struct ContourIntegral {
    pub value: SymmetricOperator,
    pub imag_residual: f64,
}

fn integrate(
    sigma: &SymmetricOperator,
    contour: &ContourSpec,
    scale: Complex<f64>,
    integrand: impl Fn(&DMatrix<Complex<f64>>) -> DMatrix<Complex<f64>> + Sync,
) -> Result<ContourIntegral> {
    let values = sigma.eigenvalues()?;
    let nodes = contour.quadrature()?;
    let terms: Vec<DMatrix<Complex<f64>>> = nodes
        .par_iter()
        .map(|&(eta, w)| resolvent_with_spectrum(sigma, &values, eta).map(|r| integrand(&r) * w))
        .collect::<Result<_>>()?;
    let p = sigma.dim();
    // fixed node order keeps the sum deterministic
    let mut acc = DMatrix::<Complex<f64>>::zeros(p, p);
    for t in &terms {
        acc += t;
    }
    acc *= scale;
    let re = acc.map(|z| z.re);
    let imag_residual = acc.iter().fold(0.0_f64, |m, z| m.max(z.im.abs()));
    let value = SymmetricOperator::symmetrized(re);
    let tolerance = IMAG_TOL * value.max_abs_entry().max(1.0);
    if imag_residual > tolerance {
        return Err(Error::ImaginaryResidual {
            residual: imag_residual,
            tolerance,
        });
    }
    Ok(ContourIntegral { value, imag_residual })
}

/// `−(1/2πi) ∮ R_Σ(η) dη`: the spectral projector onto the eigenvalues
/// enclosed by the contour.
pub fn riesz_projector(sigma: &SymmetricOperator, contour: &ContourSpec) -> Result<ContourIntegral> {
    let scale = -1.0 / Complex::new(0.0, 2.0 * PI);
    integrate(sigma, contour, scale, |r| r.clone())
}

/// `(1/2πi) ∮ R_Σ(η) E R_Σ(η) dη`: the linear term of the enclosed projector.
pub fn contour_linear_term(
    sigma: &SymmetricOperator,
    e: &SymmetricOperator,
    contour: &ContourSpec,
) -> Result<ContourIntegral> {
    check_dim(sigma.dim(), e.dim())?;
    let ec = e.matrix().map(|x| Complex::new(x, 0.0));
    let scale = 1.0 / Complex::new(0.0, 2.0 * PI);
    integrate(sigma, contour, scale, |r| r * &ec * r)
}
