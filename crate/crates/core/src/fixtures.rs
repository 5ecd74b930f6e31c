//! Worked instances shipped with the crate.

use nalgebra::{DMatrix, DVector};

use crate::problem::{InfoPattern, InitialDistribution, ProblemData};

pub const NOISE_FEEDBACK_JSON: &str = include_str!("../../../fixtures/ex51.json");
pub const INDEFINITE_SCALAR_JSON: &str = include_str!("../../../fixtures/ex71.json");
pub const TWO_CONTROL_JSON: &str = include_str!("../../../fixtures/ex72.json");
pub const ZERO_JSON: &str = include_str!("../../../fixtures/zero.json");
pub const DIVERGENT_JSON: &str = include_str!("../../../fixtures/divergent.json");
pub const IRREGULAR_JSON: &str = include_str!("../../../fixtures/irregular.json");

fn s(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

fn row(xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, xs.len(), xs)
}

fn scalar_state(x: f64) -> InitialDistribution {
    InitialDistribution::deterministic(DVector::from_element(1, x))
}

/// `x' = √2 u + (x + u + Eu) ω` with `R = R̄ = -1`, `G = 4`, `Ḡ = -3`, `N = 2`.
///
/// Violates the standard definiteness condition yet is uniformly convex.
pub fn indefinite_scalar() -> ProblemData {
    let mut p = ProblemData::zeros(1, 1, 0, 2);
    for d in &mut p.dynamics {
        d.b = s(2f64.sqrt());
        d.c = s(1.0);
        d.d = s(1.0);
        d.d_bar = s(1.0);
    }
    for c in &mut p.cost {
        c.r = s(-1.0);
        c.r_bar = s(-1.0);
    }
    p.terminal.g = s(4.0);
    p.terminal.g_bar = s(-3.0);
    p.initial = scalar_state(1.0);
    p
}

/// Two-input instance over `N = 5` whose GRE solution is `(P, Π) = (1, 3)`
/// with a singular mean-part weight `Ῡ = diag(12, 0)`.
pub fn two_control() -> ProblemData {
    let mut p = ProblemData::zeros(1, 2, 0, 5);
    for d in &mut p.dynamics {
        d.a = s(1.0);
        d.a_bar = s(1.0);
        d.b = row(&[1.0, -1.0]);
        d.b_bar = row(&[1.0, 1.0]);
        d.d = row(&[1.0, 1.0]);
        d.d_bar = row(&[-1.0, -1.0]);
    }
    for c in &mut p.cost {
        c.q = s(1.0);
        c.q_bar = s(2.0);
    }
    p.terminal.g = s(1.0);
    p.terminal.g_bar = s(2.0);
    p.initial = scalar_state(1.0);
    p
}

/// `x' = u + x ω` over `k ∈ {l, ..., 2}` with cost `-E x_3² + E Σ u²`.
///
/// Convex but, with adapted controls, not finite for `ξ ≠ 0`.
pub fn noise_feedback(l: usize) -> ProblemData {
    let mut p = ProblemData::zeros(1, 1, l, 3);
    for d in &mut p.dynamics {
        d.b = s(1.0);
        d.c = s(1.0);
    }
    for c in &mut p.cost {
        c.r = s(1.0);
    }
    p.terminal.g = s(-1.0);
    p.initial = scalar_state(1.0);
    p.info = InfoPattern::Adapted;
    p
}

/// `x' = x + u`, `G = -1`, no running cost: the infimum is `-∞`.
pub fn divergent() -> ProblemData {
    let mut p = ProblemData::zeros(1, 1, 0, 2);
    for d in &mut p.dynamics {
        d.a = s(1.0);
        d.b = s(1.0);
    }
    p.terminal.g = s(-1.0);
    p.initial = scalar_state(1.0);
    p
}

/// `R = 0`, `B = D = 0`, `S = 1`: the gain weight `Υ` vanishes while the
/// cross term does not.
pub fn irregular() -> ProblemData {
    let mut p = ProblemData::zeros(1, 1, 0, 2);
    for c in &mut p.cost {
        c.s = s(1.0);
    }
    p.initial = scalar_state(1.0);
    p
}
