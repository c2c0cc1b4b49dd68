//! Exact covariance of the bilinear forms of the linear term.
//!
//! For a single Gaussian draw `X`, set `ξ(u, v) = ⟨X, P_r v⟩⟨X, C_r u⟩`.
//! Then `√n ⟨L_r(Σ̂ − Σ) u, v⟩` is the normalized sum of `n` i.i.d. copies
//! of `ξ(u, v) + ξ(v, u)`, whose covariance is `Γ̃`.

use crate::error::Result;
use crate::linalg::{check_dim, SymmetricOperator, VectorH};
use crate::spectral::SpectralDecomposition;

/// `Γ₁(a, b) = ⟨P_r Σ P_r a, b⟩` and `Γ₂(a, b) = ⟨C_r Σ C_r a, b⟩`.
#[derive(Clone, Debug)]
pub struct GammaForms {
    pub gamma1: SymmetricOperator,
    pub gamma2: SymmetricOperator,
    projector: SymmetricOperator,
    reduced_resolvent: SymmetricOperator,
}

impl GammaForms {
    pub fn new(dec: &SpectralDecomposition, r: usize) -> Result<Self> {
        let p = dec.cluster(r)?.projector.clone();
        let c = dec.reduced_resolvent(r)?;
        Ok(Self {
            gamma1: p.sandwich(dec.source())?,
            gamma2: c.sandwich(dec.source())?,
            projector: p,
            reduced_resolvent: c,
        })
    }

    /// `Γ̃(u, v; u′, v′)`.
    pub fn covariance(&self, u: &VectorH, v: &VectorH, u2: &VectorH, v2: &VectorH) -> Result<f64> {
        let g1 = |a: &VectorH, b: &VectorH| self.gamma1.bilinear(a, b);
        let g2 = |a: &VectorH, b: &VectorH| self.gamma2.bilinear(a, b);
        Ok(g1(v, v2)? * g2(u, u2)? + g1(v, u2)? * g2(u, v2)? + g1(u, u2)? * g2(v, v2)? + g1(u, v2)? * g2(v, u2)?)
    }

    /// `ξ(u, v) + ξ(v, u)` for one draw `x`.
    pub fn field(&self, x: &VectorH, u: &VectorH, v: &VectorH) -> Result<f64> {
        check_dim(self.projector.dim(), x.dim())?;
        let px = self.projector.apply(x)?;
        let cx = self.reduced_resolvent.apply(x)?;
        Ok(px.dot(v)? * cx.dot(u)? + px.dot(u)? * cx.dot(v)?)
    }
}

pub fn gamma_covariance(
    dec: &SpectralDecomposition,
    r: usize,
    u: &VectorH,
    v: &VectorH,
    u2: &VectorH,
    v2: &VectorH,
) -> Result<f64> {
    GammaForms::new(dec, r)?.covariance(u, v, u2, v2)
}
