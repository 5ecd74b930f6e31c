//! Closed-loop synthesis, the value formula, and the ε-regularized
//! minimizing sequence used to decide finiteness and open-loop
//! solvability.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::affine::{solve_lre, AffineError, AffineSolution, RangeFailure};
use crate::matnum;
use crate::oracle::{self, OracleError, TreeProcess};
use crate::par;
use crate::problem::ProblemData;
use crate::riccati::{self, classify, Part, Regularity, RiccatiError, RiccatiSolution, StepFailure};

pub const DIVERGENCE_CAP: f64 = 1e8;
pub const NORM_CAP: f64 = 1e8;
pub const CAUCHY_TOL: f64 = 1e-7;
/// Spread allowed over the last [`WINDOW`] scan values to call them stable.
pub const DIVERGENCE_TOL: f64 = 1e-6;
pub const WINDOW: usize = 5;
pub const DEFAULT_EPS0: f64 = 1.0;
pub const DEFAULT_STEPS: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error(transparent)]
    Affine(#[from] AffineError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// `u_k = Θ_k (x_k - Ex_k) + Θ̄_k Ex_k + v_k` for `k = l..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopStrategy {
    pub l: usize,
    pub theta: Vec<DMatrix<f64>>,
    pub theta_bar: Vec<DMatrix<f64>>,
    pub v: Vec<DVector<f64>>,
}

impl ClosedLoopStrategy {
    pub fn zeros(p: &ProblemData) -> Self {
        let (n, m) = (p.dims.n, p.dims.m);
        Self {
            l: p.dims.l,
            theta: vec![DMatrix::zeros(m, n); p.steps()],
            theta_bar: vec![DMatrix::zeros(m, n); p.steps()],
            v: vec![DVector::zeros(m); p.steps()],
        }
    }

    pub fn from_solution(sol: &RiccatiSolution, aff: &AffineSolution) -> Self {
        Self {
            l: sol.l,
            theta: sol.theta.clone(),
            theta_bar: sol.theta_bar.clone(),
            v: aff.v.clone(),
        }
    }

    /// `Σ_k ‖Θ_k‖² + ‖Θ̄_k‖²` (Frobenius).
    pub fn gain_energy(&self) -> f64 {
        self.theta.iter().chain(&self.theta_bar).map(|g| g.norm_squared()).sum()
    }
}

/// Value split into its quadratic, linear and constant contributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueReport {
    pub value: f64,
    /// `E⟨P_l(ξ - Eξ), ξ - Eξ⟩`.
    pub deviation_part: f64,
    /// `⟨Π_l Eξ, Eξ⟩`.
    pub mean_part: f64,
    /// `2 η_l' Eξ`.
    pub linear_part: f64,
    /// `Σ_k 2η_{k+1}'b_k + b_k'Π_{k+1}b_k + σ_k'P_{k+1}σ_k - ζ_k'Ῡ_k†ζ_k`.
    pub constant_part: f64,
}

pub fn value_at(p: &ProblemData, sol: &RiccatiSolution, aff: &AffineSolution) -> ValueReport {
    let mean = p.initial.mean();
    let cov = p.initial.covariance();
    let deviation_part = (&sol.p[0] * &cov).trace();
    let mean_part = mean.dot(&(&sol.pi[0] * &mean));
    let linear_part = 2.0 * aff.eta[0].dot(&mean);
    let mut constant_part = 0.0;
    for i in 0..p.steps() {
        let d = &p.dynamics[i];
        let (b, sigma) = (&d.drift, &d.diffusion);
        let zeta = &aff.zeta[i];
        constant_part +=
            2.0 * aff.eta[i + 1].dot(b) + b.dot(&(&sol.pi[i + 1] * b)) + sigma.dot(&(&sol.p[i + 1] * sigma))
                - zeta.dot(&(matnum::pinv(&sol.upsilon_bar[i]) * zeta));
    }
    ValueReport {
        value: deviation_part + mean_part + linear_part + constant_part,
        deviation_part,
        mean_part,
        linear_part,
        constant_part,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnsolvableReason {
    /// The GRE solution is not regular.
    Irregular { failures: Vec<StepFailure> },
    /// Regular, but `ζ_k ∉ R(Ῡ_k)` somewhere.
    AffineRange { failures: Vec<RangeFailure> },
}

impl fmt::Display for UnsolvableReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnsolvableReason::Irregular { failures } => {
                let first = &failures[0];
                write!(
                    f,
                    "GRE solution not regular: {:?} fails for the {} part at k={} (residual {:e})",
                    first.condition,
                    match first.part {
                        Part::Deviation => "deviation",
                        Part::Mean => "mean",
                    },
                    first.k,
                    first.residual
                )?;
                if failures.len() > 1 {
                    write!(f, " and {} more", failures.len() - 1)?;
                }
                Ok(())
            }
            UnsolvableReason::AffineRange { failures } => write!(
                f,
                "affine term outside the range of the mean weight at k={} (residual {:e})",
                failures[0].k, failures[0].residual
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSolution {
    pub strategy: ClosedLoopStrategy,
    pub value: ValueReport,
    pub regularity: Regularity,
    pub riccati: RiccatiSolution,
    pub affine: AffineSolution,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClosedLoopVerdict {
    Solvable(Box<ClosedLoopSolution>),
    Unsolvable(UnsolvableReason),
}

impl ClosedLoopVerdict {
    pub fn is_solvable(&self) -> bool {
        matches!(self, ClosedLoopVerdict::Solvable(_))
    }
}

/// GRE, classification, LRE; a strategy is returned only when the
/// solution is regular and the affine range conditions hold.
pub fn synthesize_closed_loop(p: &ProblemData) -> Result<ClosedLoopVerdict, SolveError> {
    let sol = riccati::solve_gre(p)?;
    let verdict = classify(&sol);
    if !verdict.kind.is_regular() {
        return Ok(ClosedLoopVerdict::Unsolvable(UnsolvableReason::Irregular {
            failures: verdict.failures,
        }));
    }
    let aff = solve_lre(p, &sol)?;
    if !aff.is_certifying() {
        return Ok(ClosedLoopVerdict::Unsolvable(UnsolvableReason::AffineRange {
            failures: aff.range_failures(),
        }));
    }
    let strategy = ClosedLoopStrategy::from_solution(&sol, &aff);
    let value = value_at(p, &sol, &aff);
    Ok(ClosedLoopVerdict::Solvable(Box::new(ClosedLoopSolution {
        strategy,
        value,
        regularity: verdict.kind,
        riccati: sol,
        affine: aff,
    })))
}

// --- ε-regularization -------------------------------------------------------

/// Whether the shifted weights keep the margin `Υ^ε, Ῡ^ε ⪰ εI` that holds
/// whenever the cost is convex. With a deterministic initial state the
/// deviation weight at `k = l` acts on nothing and is not checked.
fn margin_holds(p: &ProblemData, sol: &RiccatiSolution) -> (bool, f64) {
    let skip_first_dev = p.initial.atoms.len() < 2;
    let mut worst = f64::INFINITY;
    for i in 0..sol.upsilon.len() {
        if !(i == 0 && skip_first_dev) {
            worst = worst.min(matnum::psd_check(&sol.upsilon[i], 0.0).min_eig);
        }
        worst = worst.min(matnum::psd_check(&sol.upsilon_bar[i], 0.0).min_eig);
    }
    let singular = sol
        .singular_steps
        .iter()
        .any(|&(k, part)| !(skip_first_dev && k == p.dims.l && part == Part::Deviation));
    (!singular && worst >= sol.eps - matnum::PSD_TOL, worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizingStep {
    pub eps: f64,
    pub strategy: ClosedLoopStrategy,
    /// `u^ε` on the noise tree.
    pub control: TreeProcess,
    /// `J(l, ξ; u^ε)` for the unshifted cost.
    pub cost: f64,
    /// `V^ε(l, ξ)` of the shifted problem.
    pub shifted_value: f64,
    pub l2_norm: f64,
    pub gain_energy: f64,
    pub margin_ok: bool,
}

/// Closed-loop law of the ε-shifted problem rolled out on the tree.
pub fn minimizing_sequence(p: &ProblemData, eps: f64) -> Result<MinimizingStep, SolveError> {
    let sol = riccati::solve_gre_eps(p, eps)?;
    let (margin_ok, _) = margin_holds(p, &sol);
    let shifted = p.with_control_penalty(eps);
    let aff = solve_lre(&shifted, &sol)?;
    let strategy = ClosedLoopStrategy::from_solution(&sol, &aff);
    let (x, u) = oracle::rollout_closed_loop(p, &strategy)?;
    let cost = oracle::cost_of(p, &x, &u);
    Ok(MinimizingStep {
        eps,
        shifted_value: value_at(&shifted, &sol, &aff).value,
        l2_norm: u.l2_norm(),
        gain_energy: strategy.gain_energy(),
        strategy,
        control: u,
        cost,
        margin_ok,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Finiteness {
    Finite,
    Infinite,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPoint {
    pub eps: f64,
    pub min_eig_p: f64,
    pub min_eig_pi: f64,
    /// Smallest eigenvalue of the shifted gain weights.
    pub margin: f64,
    pub margin_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinitenessReport {
    pub verdict: Finiteness,
    pub trace: Vec<ScanPoint>,
    /// `P^ε_l`, `Π^ε_l` at the smallest ε.
    #[serde(skip)]
    pub limit: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

fn stable_tail(xs: &[f64]) -> bool {
    if xs.len() < WINDOW {
        return false;
    }
    let tail = &xs[xs.len() - WINDOW..];
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo <= DIVERGENCE_TOL * hi.abs().max(lo.abs()).max(1.0)
}

fn check_schedule(schedule: &[f64]) {
    assert!(
        schedule.iter().all(|e| *e > 0.0) && schedule.windows(2).all(|w| w[1] < w[0]),
        "ε schedule must be positive and strictly decreasing"
    );
}

pub fn finiteness_scan(p: &ProblemData, schedule: &[f64]) -> FinitenessReport {
    check_schedule(schedule);
    let sols = par::map_range(schedule.len(), |j| riccati::solve_gre_eps(p, schedule[j]).ok());
    let mut trace = Vec::with_capacity(schedule.len());
    let mut limit = None;
    let mut blown = false;
    for (eps, sol) in schedule.iter().zip(sols) {
        let Some(sol) = sol else {
            blown = true;
            break;
        };
        let (margin_ok, margin) = margin_holds(p, &sol);
        trace.push(ScanPoint {
            eps: *eps,
            min_eig_p: matnum::psd_check(&sol.p[0], 0.0).min_eig,
            min_eig_pi: matnum::psd_check(&sol.pi[0], 0.0).min_eig,
            margin,
            margin_ok,
        });
        limit = Some((sol.p[0].clone(), sol.pi[0].clone()));
    }
    let mins_p: Vec<f64> = trace.iter().map(|s| s.min_eig_p).collect();
    let mins_pi: Vec<f64> = trace.iter().map(|s| s.min_eig_pi).collect();
    let verdict =
        if blown || trace.iter().any(|s| !s.margin_ok) || mins_p.iter().chain(&mins_pi).any(|v| *v < -DIVERGENCE_CAP) {
            Finiteness::Infinite
        } else if stable_tail(&mins_p) && stable_tail(&mins_pi) {
            Finiteness::Finite
        } else {
            Finiteness::Undetermined
        };
    FinitenessReport { verdict, trace, limit }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpenLoopPoint {
    pub eps: f64,
    pub cost: f64,
    pub l2_norm: f64,
    /// `‖u^{ε_j} - u^{ε_{j-1}}‖_{L²}`; absent for the first point.
    pub step: Option<f64>,
    pub gain_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpenLoop {
    /// The limit control with its stationarity residual.
    Solvable {
        control: TreeProcess,
        residual: f64,
    },
    Unsolvable,
    Undetermined,
}

impl OpenLoop {
    pub fn label(&self) -> &'static str {
        match self {
            OpenLoop::Solvable { .. } => "solvable",
            OpenLoop::Unsolvable => "unsolvable",
            OpenLoop::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopReport {
    pub verdict: OpenLoop,
    /// False when the finiteness gate stopped the scan.
    pub attempted: bool,
    pub trace: Vec<OpenLoopPoint>,
}

/// Rolls `u^ε` out along the schedule and looks for a bounded Cauchy tail.
pub fn detect_open_loop(
    p: &ProblemData,
    schedule: &[f64],
    finiteness: Finiteness,
) -> Result<OpenLoopReport, SolveError> {
    check_schedule(schedule);
    if finiteness == Finiteness::Infinite {
        return Ok(OpenLoopReport {
            verdict: OpenLoop::Unsolvable,
            attempted: false,
            trace: Vec::new(),
        });
    }
    let steps = par::map_range(schedule.len(), |j| minimizing_sequence(p, schedule[j]));
    let mut trace = Vec::with_capacity(schedule.len());
    let mut prev: Option<TreeProcess> = None;
    let mut last = None;
    for step in steps {
        let step = step?;
        let diff = prev.as_ref().map(|u| step.control.axpy(-1.0, u).l2_norm());
        trace.push(OpenLoopPoint {
            eps: step.eps,
            cost: step.cost,
            l2_norm: step.l2_norm,
            step: diff,
            gain_energy: step.gain_energy,
        });
        prev = Some(step.control.clone());
        last = Some(step.control);
    }
    let norms: Vec<f64> = trace.iter().map(|t| t.l2_norm).collect();
    let verdict = if norms.iter().any(|n| !n.is_finite() || *n > NORM_CAP) {
        OpenLoop::Unsolvable
    } else {
        let diffs: Vec<f64> = trace.iter().filter_map(|t| t.step).collect();
        let cauchy = diffs.len() >= WINDOW && diffs[diffs.len() - WINDOW..].iter().all(|d| *d <= CAUCHY_TOL);
        match last {
            Some(control) if cauchy => {
                let residual = oracle::stationarity_residual(p, &control)?;
                if residual <= oracle::RESIDUAL_TOL.max(CAUCHY_TOL) {
                    OpenLoop::Solvable { control, residual }
                } else {
                    OpenLoop::Undetermined
                }
            }
            _ => OpenLoop::Undetermined,
        }
    };
    Ok(OpenLoopReport {
        verdict,
        attempted: true,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolvabilityReport {
    pub finiteness: FinitenessReport,
    pub open_loop: OpenLoopReport,
    pub closed_loop: ClosedLoopVerdict,
}

pub fn analyze(p: &ProblemData, schedule: &[f64]) -> Result<SolvabilityReport, SolveError> {
    let finiteness = finiteness_scan(p, schedule);
    let open_loop = detect_open_loop(p, schedule, finiteness.verdict)?;
    let closed_loop = synthesize_closed_loop(p)?;
    Ok(SolvabilityReport {
        finiteness,
        open_loop,
        closed_loop,
    })
}
