//! Backward linear recursion for the affine costate `η` driven by the
//! inhomogeneous data `b, σ, q, q̄, ρ, ρ̄, g, ḡ`.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::matnum;
use crate::problem::ProblemData;
use crate::riccati::RiccatiSolution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AffineError {
    #[error("non-finite value in the affine recursion at k={k}")]
    NonFinite { k: usize },
}

/// `η` is indexed by `k - l` for `k = l..=N`; `ζ`, `v` and the range
/// records by `k - l` for `k = l..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSolution {
    pub l: usize,
    pub eta: Vec<DVector<f64>>,
    pub zeta: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    /// `ζ_k ∈ R(Ῡ_k)`.
    pub range_ok: Vec<bool>,
    pub range_residual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeFailure {
    pub k: usize,
    pub residual: f64,
}

impl AffineSolution {
    pub fn is_certifying(&self) -> bool {
        self.range_ok.iter().all(|&ok| ok)
    }

    pub fn range_failures(&self) -> Vec<RangeFailure> {
        self.range_ok
            .iter()
            .zip(&self.range_residual)
            .enumerate()
            .filter(|(_, (ok, _))| !**ok)
            .map(|(i, (_, &residual))| RangeFailure {
                k: self.l + i,
                residual,
            })
            .collect()
    }
}

pub fn solve_lre(p: &ProblemData, sol: &RiccatiSolution) -> Result<AffineSolution, AffineError> {
    let steps = p.steps();
    let l = p.dims.l;
    let mut eta = vec![DVector::zeros(p.dims.n); steps + 1];
    let mut zeta = vec![DVector::zeros(p.dims.m); steps];
    let mut v = vec![DVector::zeros(p.dims.m); steps];
    let mut range_ok = vec![true; steps];
    let mut range_residual = vec![0.0; steps];
    eta[steps] = &p.terminal.g_lin + &p.terminal.g_bar_lin;

    for i in (0..steps).rev() {
        let d = &p.dynamics[i];
        let c = &p.cost[i];
        let p_next = &sol.p[i + 1];
        let pi_next = &sol.pi[i + 1];
        let carried = pi_next * &d.drift + &eta[i + 1];
        let p_sigma = p_next * &d.diffusion;

        let z =
            (&d.d + &d.d_bar).transpose() * &p_sigma + (&d.b + &d.b_bar).transpose() * &carried + &c.rho + &c.rho_bar;
        let ups_bar_pinv = matnum::pinv(&sol.upsilon_bar[i]);
        let v_k = -(&ups_bar_pinv * &z);
        let e = (&d.c + &d.c_bar).transpose() * &p_sigma
            + (&d.a + &d.a_bar).transpose() * &carried
            + sol.h_bar[i].transpose() * &v_k
            + &c.q_lin
            + &c.q_bar_lin;
        if !(e.iter().chain(z.iter()).chain(v_k.iter()).all(|x| x.is_finite())) {
            return Err(AffineError::NonFinite { k: l + i });
        }
        let range = matnum::vector_in_range(&z, &sol.upsilon_bar[i]);
        range_ok[i] = range.included;
        range_residual[i] = range.residual;
        eta[i] = e;
        zeta[i] = z;
        v[i] = v_k;
    }
    Ok(AffineSolution {
        l,
        eta,
        zeta,
        v,
        range_ok,
        range_residual,
    })
}
