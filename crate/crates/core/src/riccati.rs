//! Coupled generalized Riccati equations for the deviation weight `P` and
//! the mean weight `Π`, their regularity classification, the ε-shifted
//! family, and the closed-loop Lyapunov recursion with its policy
//! iteration.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::matnum::{self, PSD_TOL};
use crate::problem::{ProblemData, StepCost, StepDynamics};

pub const KLEINMAN_TOL: f64 = 1e-12;
pub const KLEINMAN_MAX_ITERS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiccatiError {
    #[error("non-finite value in the backward recursion at k={k}")]
    NonFinite { k: usize },
    #[error("gain shape mismatch at k={k}")]
    GainShape { k: usize },
}

/// Which of the two coupled equations a quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    /// `P`, `Υ`, `H`, `Θ`: acts on `x - Ex`.
    Deviation,
    /// `Π`, `Ῡ`, `H̄`, `Θ̄`: acts on `Ex`.
    Mean,
}

/// Backward solution with every derived sequence.
///
/// `p`, `pi` are indexed by `k - l` for `k = l..=N`; all other sequences by
/// `k - l` for `k = l..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub l: usize,
    /// Control penalty shift; zero for the unshifted equation.
    pub eps: f64,
    pub p: Vec<DMatrix<f64>>,
    pub pi: Vec<DMatrix<f64>>,
    /// `R + εI + B'P B + D'P D`.
    pub upsilon: Vec<DMatrix<f64>>,
    /// `R + R̄ + εI + (B+B̄)'Π(B+B̄) + (D+D̄)'P(D+D̄)`.
    pub upsilon_bar: Vec<DMatrix<f64>>,
    /// `B'P A + D'P C + S`.
    pub h: Vec<DMatrix<f64>>,
    /// `(B+B̄)'Π(A+Ā) + (D+D̄)'P(C+C̄) + S + S̄`.
    pub h_bar: Vec<DMatrix<f64>>,
    pub theta: Vec<DMatrix<f64>>,
    pub theta_bar: Vec<DMatrix<f64>>,
    /// Epochs where a shifted solve expected an inverse and found a
    /// singular matrix; the pseudo-inverse was used instead.
    pub singular_steps: Vec<(usize, Part)>,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.l + self.p.len() - 1
    }

    pub fn p_at(&self, k: usize) -> &DMatrix<f64> {
        &self.p[k - self.l]
    }

    pub fn pi_at(&self, k: usize) -> &DMatrix<f64> {
        &self.pi[k - self.l]
    }
}

struct StepTerms {
    upsilon: DMatrix<f64>,
    upsilon_bar: DMatrix<f64>,
    h: DMatrix<f64>,
    h_bar: DMatrix<f64>,
    p_base: DMatrix<f64>,
    pi_base: DMatrix<f64>,
}

fn step_terms(d: &StepDynamics, c: &StepCost, p_next: &DMatrix<f64>, pi_next: &DMatrix<f64>, eps: f64) -> StepTerms {
    let m = d.b.ncols();
    let shift = DMatrix::<f64>::identity(m, m) * eps;
    let a_sum = &d.a + &d.a_bar;
    let b_sum = &d.b + &d.b_bar;
    let c_sum = &d.c + &d.c_bar;
    let d_sum = &d.d + &d.d_bar;

    let upsilon = &c.r + &shift + d.b.transpose() * p_next * &d.b + d.d.transpose() * p_next * &d.d;
    let upsilon_bar =
        &c.r + &c.r_bar + &shift + b_sum.transpose() * pi_next * &b_sum + d_sum.transpose() * p_next * &d_sum;
    let h = d.b.transpose() * p_next * &d.a + d.d.transpose() * p_next * &d.c + &c.s;
    let h_bar = b_sum.transpose() * pi_next * &a_sum + d_sum.transpose() * p_next * &c_sum + &c.s + &c.s_bar;
    let p_base = &c.q + d.a.transpose() * p_next * &d.a + d.c.transpose() * p_next * &d.c;
    let pi_base = &c.q + &c.q_bar + a_sum.transpose() * pi_next * &a_sum + c_sum.transpose() * p_next * &c_sum;
    StepTerms {
        upsilon: matnum::symmetrize(&upsilon),
        upsilon_bar: matnum::symmetrize(&upsilon_bar),
        h,
        h_bar,
        p_base,
        pi_base,
    }
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

fn empty_solution(p: &ProblemData, eps: f64) -> RiccatiSolution {
    let steps = p.steps();
    RiccatiSolution {
        l: p.dims.l,
        eps,
        p: vec![DMatrix::zeros(0, 0); steps + 1],
        pi: vec![DMatrix::zeros(0, 0); steps + 1],
        upsilon: Vec::with_capacity(steps),
        upsilon_bar: Vec::with_capacity(steps),
        h: Vec::with_capacity(steps),
        h_bar: Vec::with_capacity(steps),
        theta: Vec::with_capacity(steps),
        theta_bar: Vec::with_capacity(steps),
        singular_steps: Vec::new(),
    }
}

fn backward(p: &ProblemData, eps: f64, expect_inverse: bool) -> Result<RiccatiSolution, RiccatiError> {
    let steps = p.steps();
    let l = p.dims.l;
    let mut sol = empty_solution(p, eps);
    sol.p[steps] = p.terminal.g.clone();
    sol.pi[steps] = &p.terminal.g + &p.terminal.g_bar;

    let mut rev = Vec::with_capacity(steps);
    for i in (0..steps).rev() {
        let k = l + i;
        let t = step_terms(&p.dynamics[i], &p.cost[i], &sol.p[i + 1], &sol.pi[i + 1], eps);
        let mut invert = |m: &DMatrix<f64>, part: Part| {
            if expect_inverse {
                // every eigenvalue is at least ε when the cost is convex, so
                // anything below ε/2 counts as singular
                let eig = matnum::sym_eigen(m);
                let cutoff = 0.5 * eps;
                if eig.values.iter().any(|l| l.abs() <= cutoff) {
                    sol.singular_steps.push((k, part));
                }
                eig.map(|l| if l.abs() > cutoff { 1.0 / l } else { 0.0 })
            } else {
                matnum::pinv(m)
            }
        };
        let ups_inv = invert(&t.upsilon, Part::Deviation);
        let ups_bar_inv = invert(&t.upsilon_bar, Part::Mean);
        let theta = -(&ups_inv * &t.h);
        let theta_bar = -(&ups_bar_inv * &t.h_bar);
        let p_k = matnum::symmetrize(&(&t.p_base + t.h.transpose() * &theta));
        let pi_k = matnum::symmetrize(&(&t.pi_base + t.h_bar.transpose() * &theta_bar));
        if !(all_finite(&p_k) && all_finite(&pi_k) && all_finite(&theta) && all_finite(&theta_bar)) {
            return Err(RiccatiError::NonFinite { k });
        }
        sol.p[i] = p_k;
        sol.pi[i] = pi_k;
        rev.push((t, theta, theta_bar));
    }
    for (t, theta, theta_bar) in rev.into_iter().rev() {
        sol.upsilon.push(t.upsilon);
        sol.upsilon_bar.push(t.upsilon_bar);
        sol.h.push(t.h);
        sol.h_bar.push(t.h_bar);
        sol.theta.push(theta);
        sol.theta_bar.push(theta_bar);
    }
    sol.singular_steps.reverse();
    Ok(sol)
}

/// Backward GRE recursion with Moore–Penrose pseudo-inverses.
///
/// Always produces a sequence; whether it is regular is decided by
/// [`classify`].
pub fn solve_gre(p: &ProblemData) -> Result<RiccatiSolution, RiccatiError> {
    backward(p, 0.0, false)
}

/// GRE with `R → R + εI` and `R + R̄ → R + R̄ + εI`, solved with true
/// inverses. Weights with an eigenvalue of modulus at most `ε/2` are
/// listed in `singular_steps` and pseudo-inverted at that cutoff.
pub fn solve_gre_eps(p: &ProblemData, eps: f64) -> Result<RiccatiSolution, RiccatiError> {
    assert!(eps > 0.0, "ε must be positive");
    backward(p, eps, true)
}

/// Rebuilds the derived sequences from given `P`, `Π` without recursing.
pub fn assemble(p: &ProblemData, p_seq: Vec<DMatrix<f64>>, pi_seq: Vec<DMatrix<f64>>, eps: f64) -> RiccatiSolution {
    let steps = p.steps();
    let mut sol = empty_solution(p, eps);
    for i in 0..steps {
        let t = step_terms(&p.dynamics[i], &p.cost[i], &p_seq[i + 1], &pi_seq[i + 1], eps);
        sol.theta.push(-(matnum::pinv(&t.upsilon) * &t.h));
        sol.theta_bar.push(-(matnum::pinv(&t.upsilon_bar) * &t.h_bar));
        sol.upsilon.push(t.upsilon);
        sol.upsilon_bar.push(t.upsilon_bar);
        sol.h.push(t.h);
        sol.h_bar.push(t.h_bar);
    }
    sol.p = p_seq;
    sol.pi = pi_seq;
    sol
}

/// Largest entrywise defect of `(P, Π)` in the (ε-shifted) GRE.
pub fn gre_residual(p: &ProblemData, sol: &RiccatiSolution) -> f64 {
    let steps = p.steps();
    let mut worst: f64 = 0.0;
    worst = worst.max(matnum::max_abs(&(&sol.p[steps] - &p.terminal.g)));
    worst = worst.max(matnum::max_abs(&(&sol.pi[steps] - &p.terminal.g - &p.terminal.g_bar)));
    for i in 0..steps {
        let t = step_terms(&p.dynamics[i], &p.cost[i], &sol.p[i + 1], &sol.pi[i + 1], sol.eps);
        let p_rhs = &t.p_base - t.h.transpose() * matnum::pinv(&t.upsilon) * &t.h;
        let pi_rhs = &t.pi_base - t.h_bar.transpose() * matnum::pinv(&t.upsilon_bar) * &t.h_bar;
        worst = worst.max(matnum::max_abs(&(&sol.p[i] - p_rhs)));
        worst = worst.max(matnum::max_abs(&(&sol.pi[i] - pi_rhs)));
    }
    worst
}

// --- regularity -------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularity {
    StronglyRegular { alpha: f64 },
    Regular,
    Irregular,
}

impl Regularity {
    pub fn is_regular(&self) -> bool {
        !matches!(self, Regularity::Irregular)
    }

    pub fn is_strongly_regular(&self) -> bool {
        matches!(self, Regularity::StronglyRegular { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// `Υ ≥ 0`, `Ῡ ≥ 0`.
    Definiteness,
    /// `R(H) ⊆ R(Υ)`, `R(H̄) ⊆ R(Ῡ)`.
    RangeInclusion,
    /// Gains `Υ†H`, `Ῡ†H̄` finite.
    FiniteGain,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFailure {
    pub k: usize,
    pub condition: Condition,
    pub part: Part,
    pub residual: f64,
}

/// Per-epoch numbers behind a verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub k: usize,
    pub min_eig_upsilon: f64,
    pub min_eig_upsilon_bar: f64,
    pub range_residual: f64,
    pub range_residual_bar: f64,
    pub gain_norm: f64,
    pub gain_norm_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityVerdict {
    pub kind: Regularity,
    /// Smallest eigenvalue over all `Υ_k`, `Ῡ_k`.
    pub alpha: f64,
    pub failures: Vec<StepFailure>,
    pub steps: Vec<StepRecord>,
}

/// Checks definiteness, range inclusion and finite gains at every epoch.
pub fn classify(sol: &RiccatiSolution) -> RegularityVerdict {
    let mut failures = Vec::new();
    let mut steps = Vec::new();
    let mut alpha = f64::INFINITY;
    for i in 0..sol.upsilon.len() {
        let k = sol.l + i;
        let dev = matnum::psd_check(&sol.upsilon[i], 0.0);
        let mean = matnum::psd_check(&sol.upsilon_bar[i], 0.0);
        let range = matnum::range_included(&sol.h[i], &sol.upsilon[i]);
        let range_bar = matnum::range_included(&sol.h_bar[i], &sol.upsilon_bar[i]);
        let gain = sol.theta[i].norm();
        let gain_bar = sol.theta_bar[i].norm();
        alpha = alpha.min(dev.min_eig).min(mean.min_eig);

        for (ok, condition, part, residual) in [
            (dev.is_psd, Condition::Definiteness, Part::Deviation, dev.min_eig),
            (mean.is_psd, Condition::Definiteness, Part::Mean, mean.min_eig),
            (
                range.included,
                Condition::RangeInclusion,
                Part::Deviation,
                range.residual,
            ),
            (
                range_bar.included,
                Condition::RangeInclusion,
                Part::Mean,
                range_bar.residual,
            ),
            (gain.is_finite(), Condition::FiniteGain, Part::Deviation, gain),
            (gain_bar.is_finite(), Condition::FiniteGain, Part::Mean, gain_bar),
        ] {
            if !ok {
                failures.push(StepFailure {
                    k,
                    condition,
                    part,
                    residual,
                });
            }
        }
        steps.push(StepRecord {
            k,
            min_eig_upsilon: dev.min_eig,
            min_eig_upsilon_bar: mean.min_eig,
            range_residual: range.residual,
            range_residual_bar: range_bar.residual,
            gain_norm: gain,
            gain_norm_bar: gain_bar,
        });
    }
    let kind = if !failures.is_empty() {
        Regularity::Irregular
    } else if alpha > PSD_TOL {
        Regularity::StronglyRegular { alpha }
    } else {
        Regularity::Regular
    };
    RegularityVerdict {
        kind,
        alpha,
        failures,
        steps,
    }
}

/// `ε_j = ε₀ 2^{-j}` for `j = 0..=steps`.
pub fn geometric_schedule(eps0: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|j| eps0 * 0.5f64.powi(j as i32)).collect()
}

// --- Lyapunov recursion and policy iteration --------------------------------

/// Value weights `(P, Π)` of a fixed feedback `u = Θ(x - Ex) + Θ̄ Ex`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSolution {
    pub p: Vec<DMatrix<f64>>,
    pub pi: Vec<DMatrix<f64>>,
}

/// Backward closed-loop recursion for the gains `Θ` (on `x - Ex`) and `Θ̄`
/// (on `Ex`), from `P_N = G`, `Π_N = G + Ḡ`.
pub fn solve_lyapunov(
    p: &ProblemData,
    theta: &[DMatrix<f64>],
    theta_bar: &[DMatrix<f64>],
) -> Result<LyapunovSolution, RiccatiError> {
    let steps = p.steps();
    let (n, m) = (p.dims.n, p.dims.m);
    let l = p.dims.l;
    for i in 0..steps {
        let ok = |g: Option<&DMatrix<f64>>| g.is_some_and(|g| g.shape() == (m, n));
        if !ok(theta.get(i)) || !ok(theta_bar.get(i)) {
            return Err(RiccatiError::GainShape { k: l + i });
        }
    }
    let mut ps = vec![DMatrix::zeros(n, n); steps + 1];
    let mut pis = vec![DMatrix::zeros(n, n); steps + 1];
    ps[steps] = p.terminal.g.clone();
    pis[steps] = &p.terminal.g + &p.terminal.g_bar;
    for i in (0..steps).rev() {
        let d = &p.dynamics[i];
        let c = &p.cost[i];
        let (th, thb) = (&theta[i], &theta_bar[i]);
        let p_next = &ps[i + 1];
        let pi_next = &pis[i + 1];

        let a_cl = &d.a + &d.b * th;
        let c_cl = &d.c + &d.d * th;
        let p_k = a_cl.transpose() * p_next * &a_cl
            + c_cl.transpose() * p_next * &c_cl
            + th.transpose() * &c.r * th
            + c.s.transpose() * th
            + th.transpose() * &c.s
            + &c.q;

        let r_sum = &c.r + &c.r_bar;
        let s_sum = &c.s + &c.s_bar;
        let a_mean = &d.a + &d.a_bar + (&d.b + &d.b_bar) * thb;
        let c_mean = &d.c + &d.c_bar + (&d.d + &d.d_bar) * thb;
        let pi_k = &c.q
            + &c.q_bar
            + thb.transpose() * &r_sum * thb
            + s_sum.transpose() * thb
            + thb.transpose() * &s_sum
            + a_mean.transpose() * pi_next * &a_mean
            + c_mean.transpose() * p_next * &c_mean;

        if !(all_finite(&p_k) && all_finite(&pi_k)) {
            return Err(RiccatiError::NonFinite { k: l + i });
        }
        ps[i] = matnum::symmetrize(&p_k);
        pis[i] = matnum::symmetrize(&pi_k);
    }
    Ok(LyapunovSolution { p: ps, pi: pis })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KleinmanStep {
    pub iteration: usize,
    /// `max_k (‖P⁽ⁱ⁺¹⁾_k - P⁽ⁱ⁾_k‖ + ‖Π⁽ⁱ⁺¹⁾_k - Π⁽ⁱ⁾_k‖)`, Frobenius norms.
    pub delta: f64,
    /// `min_k min_eig(P⁽ⁱ⁾_k - P⁽ⁱ⁺¹⁾_k)`.
    pub min_eig_decrease_p: f64,
    pub min_eig_decrease_pi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KleinmanOutcome {
    pub solution: RiccatiSolution,
    pub trace: Vec<KleinmanStep>,
    pub gre_residual: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KleinmanError {
    #[error("singular {part:?} weight at k={k} in iteration {iteration}")]
    Singular { iteration: usize, k: usize, part: Part },
    #[error("no convergence after {iterations} iterations (last change {last_delta:e})")]
    NotConverged { iterations: usize, last_delta: f64 },
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
}

/// Policy iteration: seed with the gain-free Lyapunov solution, then
/// alternate exact-inverse gain updates and Lyapunov solves.
pub fn kleinman_iterate(p: &ProblemData, max_iters: usize, tol: f64) -> Result<KleinmanOutcome, KleinmanError> {
    let steps = p.steps();
    let (n, m) = (p.dims.n, p.dims.m);
    let zeros = vec![DMatrix::zeros(m, n); steps];
    let mut current = solve_lyapunov(p, &zeros, &zeros)?;
    let mut trace = Vec::new();
    let mut last_delta = f64::INFINITY;

    for iteration in 0..max_iters {
        let mut theta = Vec::with_capacity(steps);
        let mut theta_bar = Vec::with_capacity(steps);
        for i in 0..steps {
            let k = p.dims.l + i;
            let t = step_terms(&p.dynamics[i], &p.cost[i], &current.p[i + 1], &current.pi[i + 1], 0.0);
            let ups_inv = matnum::inverse_checked(&t.upsilon).ok_or(KleinmanError::Singular {
                iteration,
                k,
                part: Part::Deviation,
            })?;
            let ups_bar_inv = matnum::inverse_checked(&t.upsilon_bar).ok_or(KleinmanError::Singular {
                iteration,
                k,
                part: Part::Mean,
            })?;
            theta.push(-(ups_inv * &t.h));
            theta_bar.push(-(ups_bar_inv * &t.h_bar));
        }
        let next = solve_lyapunov(p, &theta, &theta_bar)?;

        let mut delta: f64 = 0.0;
        let mut dec_p = f64::INFINITY;
        let mut dec_pi = f64::INFINITY;
        for k in 0..=steps {
            let dp = &current.p[k] - &next.p[k];
            let dpi = &current.pi[k] - &next.pi[k];
            delta = delta.max(dp.norm() + dpi.norm());
            dec_p = dec_p.min(matnum::psd_check(&dp, 0.0).min_eig);
            dec_pi = dec_pi.min(matnum::psd_check(&dpi, 0.0).min_eig);
        }
        trace.push(KleinmanStep {
            iteration,
            delta,
            min_eig_decrease_p: dec_p,
            min_eig_decrease_pi: dec_pi,
        });
        current = next;
        last_delta = delta;
        if delta <= tol {
            let solution = assemble(p, current.p, current.pi, 0.0);
            let gre_residual = gre_residual(p, &solution);
            return Ok(KleinmanOutcome {
                solution,
                trace,
                gre_residual,
            });
        }
    }
    Err(KleinmanError::NotConverged {
        iterations: max_iters,
        last_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::problem::ProblemData;
    use approx::assert_abs_diff_eq;

    fn scalar(m: &DMatrix<f64>) -> f64 {
        assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    /// Independent scalar evaluation of the two recursions displayed for the
    /// √2 fixture: `P ← P - P²/(3P-1)`, `Π ← P - 2P²/(Π+2P-1)`.
    fn indefinite_scalar_scalar_oracle() -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; 3];
        let mut pi = vec![0.0; 3];
        p[2] = 4.0;
        pi[2] = 1.0;
        for k in (0..2).rev() {
            let pn = p[k + 1];
            let pin = pi[k + 1];
            p[k] = pn - pn * pn / (3.0 * pn - 1.0);
            pi[k] = pn - 2.0 * pn * pn / (pin + 2.0 * pn - 1.0);
        }
        (p, pi)
    }

    #[test]
    fn indefinite_scalar_values() {
        let sol = solve_gre(&fixtures::indefinite_scalar()).unwrap();
        assert_abs_diff_eq!(scalar(&sol.p[2]), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(scalar(&sol.p[1]), 28.0 / 11.0, epsilon = 1e-12);
        assert_abs_diff_eq!(scalar(&sol.p[0]), 1260.0 / 803.0, epsilon = 1e-12);
        assert_abs_diff_eq!(scalar(&sol.pi[2]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(scalar(&sol.pi[1]), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(scalar(&sol.pi[0]), -308.0 / 495.0, epsilon = 1e-12);

        let (p, pi) = indefinite_scalar_scalar_oracle();
        for k in 0..3 {
            assert_abs_diff_eq!(scalar(&sol.p[k]), p[k], epsilon = 1e-12);
            assert_abs_diff_eq!(scalar(&sol.pi[k]), pi[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn indefinite_scalar_is_strongly_regular() {
        let v = classify(&solve_gre(&fixtures::indefinite_scalar()).unwrap());
        match v.kind {
            Regularity::StronglyRegular { alpha } => assert!(alpha >= 1.0 - 1e-10),
            other => panic!("expected strongly regular, got {other:?}"),
        }
        // Υ_0 = 3 P_1 - 1 = 73/11 is the binding margin
        assert_abs_diff_eq!(v.alpha, 73.0 / 11.0, epsilon = 1e-12);
    }

    #[test]
    fn two_control_values() {
        let sol = solve_gre(&fixtures::two_control()).unwrap();
        for k in 0..=5 {
            assert_abs_diff_eq!(scalar(&sol.p[k]), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(scalar(&sol.pi[k]), 3.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(
            sol.upsilon_bar[0],
            DMatrix::from_row_slice(2, 2, &[12.0, 0.0, 0.0, 0.0]),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            sol.h_bar[0],
            DMatrix::from_column_slice(2, 1, &[12.0, 0.0]),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            sol.h[0],
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn two_control_is_regular_not_strongly() {
        let v = classify(&solve_gre(&fixtures::two_control()).unwrap());
        assert_eq!(v.kind, Regularity::Regular);
        assert!(v.failures.is_empty());
        assert!(v
            .steps
            .iter()
            .all(|s| s.range_residual == 0.0 && s.range_residual_bar == 0.0));
    }

    #[test]
    fn zero_problem_has_zero_solution() {
        let sol = solve_gre(&ProblemData::zeros(2, 1, 0, 3)).unwrap();
        assert!(sol.p.iter().chain(&sol.pi).all(|m| m.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn scalar_irregular_fails_range_everywhere() {
        let v = classify(&solve_gre(&fixtures::irregular()).unwrap());
        assert_eq!(v.kind, Regularity::Irregular);
        for k in 0..2 {
            assert!(v
                .failures
                .iter()
                .any(|f| f.k == k && f.condition == Condition::RangeInclusion && f.part == Part::Deviation));
        }
    }

    #[test]
    fn eps_two_control_matches_scalar_recursion() {
        let eps = 1.0;
        let sol = solve_gre_eps(&fixtures::two_control(), eps).unwrap();
        // P ← 1 + P - 2P²/(2P+ε); Π ← 3 + 4Π - 16Π²/(4Π+ε)
        let mut p = 1.0;
        let mut pi = 3.0;
        for k in (0..5).rev() {
            p = 1.0 + p - 2.0 * p * p / (2.0 * p + eps);
            pi = 3.0 + 4.0 * pi - 16.0 * pi * pi / (4.0 * pi + eps);
            assert_abs_diff_eq!(scalar(&sol.p[k]), p, epsilon = 1e-12);
            assert_abs_diff_eq!(scalar(&sol.pi[k]), pi, epsilon = 1e-12);
        }
        assert!(sol.singular_steps.is_empty());
        let v = classify(&sol);
        assert!(v.kind.is_strongly_regular());
        assert!(v.alpha >= eps - 1e-10);
    }

    #[test]
    fn eps_limit_two_control() {
        let p = fixtures::two_control();
        let mut last = (0.0, 0.0);
        for eps in geometric_schedule(1.0, 40) {
            let sol = solve_gre_eps(&p, eps).unwrap();
            last = (scalar(&sol.p[0]), scalar(&sol.pi[0]));
        }
        assert_abs_diff_eq!(last.0, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(last.1, 3.0, epsilon = 1e-6);
    }

    #[test]
    fn eps_on_zero_problem() {
        let sol = solve_gre_eps(&ProblemData::zeros(1, 1, 0, 3), 1.0).unwrap();
        assert!(sol.p.iter().chain(&sol.pi).all(|m| m[(0, 0)] == 0.0));
    }

    #[test]
    fn eps_flags_singularity() {
        // divergent fixture: Υ^ε_1 = ε + P_2 = 0 at ε = 1
        let sol = solve_gre_eps(&fixtures::divergent(), 1.0).unwrap();
        assert!(sol.singular_steps.contains(&(1, Part::Deviation)));
    }

    #[test]
    fn lyapunov_zero_gains_on_noise_feedback() {
        let p = fixtures::noise_feedback(0);
        let z = vec![DMatrix::zeros(1, 1); 3];
        let lyap = solve_lyapunov(&p, &z, &z).unwrap();
        for k in 0..=3 {
            assert_eq!(scalar(&lyap.p[k]), -1.0);
            assert_eq!(scalar(&lyap.pi[k]), -1.0);
        }
    }

    #[test]
    fn lyapunov_rejects_bad_gain_shape() {
        let p = fixtures::two_control();
        let bad = vec![DMatrix::zeros(1, 1); 5];
        assert_eq!(solve_lyapunov(&p, &bad, &bad), Err(RiccatiError::GainShape { k: 0 }));
    }

    #[test]
    fn lyapunov_with_optimal_gains_reproduces_gre() {
        for p in [fixtures::indefinite_scalar(), fixtures::two_control()] {
            let sol = solve_gre(&p).unwrap();
            let lyap = solve_lyapunov(&p, &sol.theta, &sol.theta_bar).unwrap();
            for k in 0..sol.p.len() {
                assert_abs_diff_eq!(lyap.p[k], sol.p[k], epsilon = 1e-10);
                assert_abs_diff_eq!(lyap.pi[k], sol.pi[k], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn kleinman_on_indefinite_scalar() {
        let p = fixtures::indefinite_scalar();
        let out = kleinman_iterate(&p, KLEINMAN_MAX_ITERS, KLEINMAN_TOL).unwrap();
        let direct = solve_gre(&p).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(out.solution.p[k], direct.p[k], epsilon = 1e-10);
            assert_abs_diff_eq!(out.solution.pi[k], direct.pi[k], epsilon = 1e-10);
        }
        assert!(out.gre_residual <= 10.0 * KLEINMAN_TOL);
    }

    #[test]
    fn kleinman_reports_singular_on_noise_feedback() {
        let err = kleinman_iterate(&fixtures::noise_feedback(0), 10, 1e-12).unwrap_err();
        assert!(matches!(
            err,
            KleinmanError::Singular {
                iteration: 0,
                part: Part::Deviation,
                ..
            }
        ));
    }

    #[test]
    fn schedule_is_geometric() {
        let s = geometric_schedule(1.0, 40);
        assert_eq!(s.len(), 41);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[40], 2f64.powi(-40));
    }
}
