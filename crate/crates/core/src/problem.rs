//! Problem instances: coefficients, initial law, noise and information
//! pattern, plus the on-disk JSON format.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matnum;

/// State/control dimensions and the horizon `{l, ..., N}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimensions {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    /// Terminal time `N`.
    pub horizon: usize,
}

impl Dimensions {
    /// Number of decision epochs `N - l`.
    pub fn steps(&self) -> usize {
        self.horizon.saturating_sub(self.l)
    }
}

/// Coefficients of one transition `k -> k+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDynamics {
    pub a: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub d_bar: DMatrix<f64>,
    /// Deterministic drift offset `b_k`.
    pub drift: DVector<f64>,
    /// Deterministic noise offset `σ_k`.
    pub diffusion: DVector<f64>,
}

impl StepDynamics {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            a: DMatrix::zeros(n, n),
            a_bar: DMatrix::zeros(n, n),
            b: DMatrix::zeros(n, m),
            b_bar: DMatrix::zeros(n, m),
            c: DMatrix::zeros(n, n),
            c_bar: DMatrix::zeros(n, n),
            d: DMatrix::zeros(n, m),
            d_bar: DMatrix::zeros(n, m),
            drift: DVector::zeros(n),
            diffusion: DVector::zeros(n),
        }
    }
}

/// Running cost weights of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCost {
    pub q: DMatrix<f64>,
    pub q_bar: DMatrix<f64>,
    /// Cross weight, `m x n`; the cost carries `2 <S x, u>`.
    pub s: DMatrix<f64>,
    pub s_bar: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub r_bar: DMatrix<f64>,
    pub q_lin: DVector<f64>,
    pub q_bar_lin: DVector<f64>,
    pub rho: DVector<f64>,
    pub rho_bar: DVector<f64>,
}

impl StepCost {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            q: DMatrix::zeros(n, n),
            q_bar: DMatrix::zeros(n, n),
            s: DMatrix::zeros(m, n),
            s_bar: DMatrix::zeros(m, n),
            r: DMatrix::zeros(m, m),
            r_bar: DMatrix::zeros(m, m),
            q_lin: DVector::zeros(n),
            q_bar_lin: DVector::zeros(n),
            rho: DVector::zeros(m),
            rho_bar: DVector::zeros(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCost {
    pub g: DMatrix<f64>,
    pub g_bar: DMatrix<f64>,
    pub g_lin: DVector<f64>,
    pub g_bar_lin: DVector<f64>,
}

impl TerminalCost {
    pub fn zeros(n: usize) -> Self {
        Self {
            g: DMatrix::zeros(n, n),
            g_bar: DMatrix::zeros(n, n),
            g_lin: DVector::zeros(n),
            g_bar_lin: DVector::zeros(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub value: DVector<f64>,
    pub prob: f64,
}

/// Finite-atom law of the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDistribution {
    pub atoms: Vec<Atom>,
}

impl InitialDistribution {
    pub fn deterministic(value: DVector<f64>) -> Self {
        Self {
            atoms: vec![Atom { value, prob: 1.0 }],
        }
    }

    /// Equal-weight atoms `{+v, -v}`; mean zero, covariance `v v'`.
    pub fn symmetric_pair(value: DVector<f64>) -> Self {
        Self {
            atoms: vec![
                Atom {
                    value: value.clone(),
                    prob: 0.5,
                },
                Atom {
                    value: -value,
                    prob: 0.5,
                },
            ],
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        let n = self.atoms.first().map_or(0, |a| a.value.len());
        self.atoms
            .iter()
            .fold(DVector::zeros(n), |acc, a| acc + &a.value * a.prob)
    }

    /// `E(ξ - Eξ)(ξ - Eξ)'`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let n = mean.len();
        self.atoms.iter().fold(DMatrix::zeros(n, n), |acc, a| {
            let dev = &a.value - &mean;
            acc + &dev * dev.transpose() * a.prob
        })
    }

    /// `E ξ ξ'`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let n = self.atoms.first().map_or(0, |a| a.value.len());
        self.atoms.iter().fold(DMatrix::zeros(n, n), |acc, a| {
            acc + &a.value * a.value.transpose() * a.prob
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    Rademacher,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub seed: u64,
}

/// Which noise a control at time `k` may depend on.
///
/// `Predictable` controls see `ξ, ω_l, ..., ω_{k-1}`; `Adapted` controls
/// additionally see `ω_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InfoPattern {
    #[default]
    Predictable,
    Adapted,
}

impl fmt::Display for InfoPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InfoPattern::Predictable => f.write_str("predictable"),
            InfoPattern::Adapted => f.write_str("adapted"),
        }
    }
}

impl std::str::FromStr for InfoPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "predictable" => Ok(InfoPattern::Predictable),
            "adapted" => Ok(InfoPattern::Adapted),
            other => Err(format!("unknown info pattern {other:?}")),
        }
    }
}

/// A complete mean-field LQ instance.
///
/// `dynamics[i]` and `cost[i]` describe epoch `k = l + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    pub dims: Dimensions,
    pub dynamics: Vec<StepDynamics>,
    pub cost: Vec<StepCost>,
    pub terminal: TerminalCost,
    pub initial: InitialDistribution,
    pub noise: NoiseModel,
    pub info: InfoPattern,
}

impl ProblemData {
    /// All-zero instance with a deterministic zero initial state.
    pub fn zeros(n: usize, m: usize, l: usize, horizon: usize) -> Self {
        let steps = horizon.saturating_sub(l);
        Self {
            dims: Dimensions { n, m, l, horizon },
            dynamics: (0..steps).map(|_| StepDynamics::zeros(n, m)).collect(),
            cost: (0..steps).map(|_| StepCost::zeros(n, m)).collect(),
            terminal: TerminalCost::zeros(n),
            initial: InitialDistribution::deterministic(DVector::zeros(n)),
            noise: NoiseModel::default(),
            info: InfoPattern::default(),
        }
    }

    pub fn steps(&self) -> usize {
        self.dims.steps()
    }

    /// Dynamics of epoch `k` (absolute time).
    pub fn dyn_at(&self, k: usize) -> &StepDynamics {
        &self.dynamics[k - self.dims.l]
    }

    pub fn cost_at(&self, k: usize) -> &StepCost {
        &self.cost[k - self.dims.l]
    }

    /// True when every inhomogeneous term vanishes.
    pub fn is_homogeneous(&self) -> bool {
        let zero = |v: &DVector<f64>| v.iter().all(|x| *x == 0.0);
        self.dynamics.iter().all(|d| zero(&d.drift) && zero(&d.diffusion))
            && self
                .cost
                .iter()
                .all(|c| zero(&c.q_lin) && zero(&c.q_bar_lin) && zero(&c.rho) && zero(&c.rho_bar))
            && zero(&self.terminal.g_lin)
            && zero(&self.terminal.g_bar_lin)
    }

    /// Copy with every inhomogeneous term set to zero.
    pub fn homogeneous_part(&self) -> Self {
        let mut p = self.clone();
        for d in &mut p.dynamics {
            d.drift.fill(0.0);
            d.diffusion.fill(0.0);
        }
        for c in &mut p.cost {
            c.q_lin.fill(0.0);
            c.q_bar_lin.fill(0.0);
            c.rho.fill(0.0);
            c.rho_bar.fill(0.0);
        }
        p.terminal.g_lin.fill(0.0);
        p.terminal.g_bar_lin.fill(0.0);
        p
    }

    /// Copy with the inhomogeneous terms multiplied by `factor`.
    pub fn scale_inhomogeneous(&self, factor: f64) -> Self {
        let mut p = self.clone();
        for d in &mut p.dynamics {
            d.drift *= factor;
            d.diffusion *= factor;
        }
        for c in &mut p.cost {
            c.q_lin *= factor;
            c.q_bar_lin *= factor;
            c.rho *= factor;
            c.rho_bar *= factor;
        }
        p.terminal.g_lin *= factor;
        p.terminal.g_bar_lin *= factor;
        p
    }

    /// Copy with `R_k + εI` in place of `R_k`.
    pub fn with_control_penalty(&self, eps: f64) -> Self {
        let mut p = self.clone();
        let m = p.dims.m;
        for c in &mut p.cost {
            c.r += DMatrix::<f64>::identity(m, m) * eps;
        }
        p
    }

    /// Copy with a replaced initial law.
    pub fn with_initial(&self, initial: InitialDistribution) -> Self {
        let mut p = self.clone();
        p.initial = initial;
        p
    }

    pub fn with_info(&self, info: InfoPattern) -> Self {
        let mut p = self.clone();
        p.info = info;
        p
    }

    /// Symmetrizes every weight that must be symmetric.
    pub fn symmetrize(&mut self) {
        for c in &mut self.cost {
            c.q = matnum::symmetrize(&c.q);
            c.q_bar = matnum::symmetrize(&c.q_bar);
            c.r = matnum::symmetrize(&c.r);
            c.r_bar = matnum::symmetrize(&c.r_bar);
        }
        self.terminal.g = matnum::symmetrize(&self.terminal.g);
        self.terminal.g_bar = matnum::symmetrize(&self.terminal.g_bar);
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    /// Absolute time index, when the field is time-indexed.
    pub k: Option<usize>,
    pub rule: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.k {
            Some(k) => write!(f, "{} at k={}: {}", self.field, k, self.rule),
            None => write!(f, "{}: {}", self.field, self.rule),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("shape error in {field}{}: expected {expected}, got {got}", at(.k))]
    Shape {
        field: String,
        k: Option<usize>,
        expected: String,
        got: String,
    },
    #[error("symmetry violation in {field}{}: max asymmetry {asymmetry:e}", at(.k))]
    Symmetry {
        field: String,
        k: Option<usize>,
        asymmetry: f64,
    },
    #[error("invalid problem: {}", join(.0))]
    Invalid(Vec<Diagnostic>),
}

fn at(k: &Option<usize>) -> String {
    k.map(|k| format!(" at k={k}")).unwrap_or_default()
}

fn join(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

fn diag(field: &str, k: Option<usize>, rule: impl Into<String>) -> Diagnostic {
    Diagnostic {
        field: field.to_string(),
        k,
        rule: rule.into(),
    }
}

/// Checks every invariant; an empty list means the instance is valid.
pub fn validate(p: &ProblemData) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let Dimensions { n, m, l, horizon } = p.dims;
    if n == 0 {
        out.push(diag("dims.n", None, "state dimension must be positive"));
    }
    if m == 0 {
        out.push(diag("dims.m", None, "control dimension must be positive"));
    }
    if horizon <= l {
        out.push(diag("dims", None, "empty horizon"));
    }
    let steps = p.steps();
    if p.dynamics.len() != steps {
        out.push(diag(
            "dynamics",
            None,
            format!("expected {steps} entries, got {}", p.dynamics.len()),
        ));
    }
    if p.cost.len() != steps {
        out.push(diag(
            "cost",
            None,
            format!("expected {steps} entries, got {}", p.cost.len()),
        ));
    }

    let mut shape = |field: &str, k: Option<usize>, got: (usize, usize), want: (usize, usize)| {
        if got != want {
            out.push(diag(
                field,
                k,
                format!("shape {}x{} expected {}x{}", got.0, got.1, want.0, want.1),
            ));
        }
    };
    for (i, d) in p.dynamics.iter().enumerate() {
        let k = Some(l + i);
        for (name, mat, want) in [
            ("A", &d.a, (n, n)),
            ("Abar", &d.a_bar, (n, n)),
            ("B", &d.b, (n, m)),
            ("Bbar", &d.b_bar, (n, m)),
            ("C", &d.c, (n, n)),
            ("Cbar", &d.c_bar, (n, n)),
            ("D", &d.d, (n, m)),
            ("Dbar", &d.d_bar, (n, m)),
        ] {
            shape(name, k, mat.shape(), want);
        }
        shape("b", k, (d.drift.len(), 1), (n, 1));
        shape("sigma", k, (d.diffusion.len(), 1), (n, 1));
    }
    for (i, c) in p.cost.iter().enumerate() {
        let k = Some(l + i);
        for (name, mat, want) in [
            ("Q", &c.q, (n, n)),
            ("Qbar", &c.q_bar, (n, n)),
            ("S", &c.s, (m, n)),
            ("Sbar", &c.s_bar, (m, n)),
            ("R", &c.r, (m, m)),
            ("Rbar", &c.r_bar, (m, m)),
        ] {
            shape(name, k, mat.shape(), want);
        }
        shape("q", k, (c.q_lin.len(), 1), (n, 1));
        shape("qbar", k, (c.q_bar_lin.len(), 1), (n, 1));
        shape("rho", k, (c.rho.len(), 1), (m, 1));
        shape("rhobar", k, (c.rho_bar.len(), 1), (m, 1));
    }
    let t = &p.terminal;
    shape("G", None, t.g.shape(), (n, n));
    shape("Gbar", None, t.g_bar.shape(), (n, n));
    shape("g", None, (t.g_lin.len(), 1), (n, 1));
    shape("gbar", None, (t.g_bar_lin.len(), 1), (n, 1));

    for (i, c) in p.cost.iter().enumerate() {
        let k = Some(l + i);
        for (name, mat) in [("Q", &c.q), ("Qbar", &c.q_bar), ("R", &c.r), ("Rbar", &c.r_bar)] {
            if mat.is_square() && !matnum::is_symmetric(mat) {
                out.push(diag(
                    name,
                    k,
                    format!("not symmetric (max asymmetry {:e})", matnum::asymmetry(mat)),
                ));
            }
        }
    }
    for (name, mat) in [("G", &t.g), ("Gbar", &t.g_bar)] {
        if mat.is_square() && !matnum::is_symmetric(mat) {
            out.push(diag(
                name,
                None,
                format!("not symmetric (max asymmetry {:e})", matnum::asymmetry(mat)),
            ));
        }
    }

    if p.initial.atoms.is_empty() {
        out.push(diag("initial.atoms", None, "at least one atom required"));
    }
    let mut total = 0.0;
    for (i, a) in p.initial.atoms.iter().enumerate() {
        if !(a.prob > 0.0 && a.prob <= 1.0) {
            out.push(diag(
                "initial.atoms",
                None,
                format!("atom {i} probability {} outside (0,1]", a.prob),
            ));
        }
        if a.value.len() != n {
            out.push(diag(
                "initial.atoms",
                None,
                format!("atom {i} has length {} expected {n}", a.value.len()),
            ));
        }
        total += a.prob;
    }
    if !p.initial.atoms.is_empty() && (total - 1.0).abs() > 1e-12 {
        out.push(diag(
            "initial.atoms",
            None,
            format!("atom probabilities sum {}", round_display(total)),
        ));
    }

    let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
    let finite_v = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
    let any_nonfinite = p.dynamics.iter().any(|d| {
        ![&d.a, &d.a_bar, &d.b, &d.b_bar, &d.c, &d.c_bar, &d.d, &d.d_bar]
            .iter()
            .all(|m| finite(m))
            || !finite_v(&d.drift)
            || !finite_v(&d.diffusion)
    }) || p.cost.iter().any(|c| {
        ![&c.q, &c.q_bar, &c.s, &c.s_bar, &c.r, &c.r_bar]
            .iter()
            .all(|m| finite(m))
    });
    if any_nonfinite {
        out.push(diag("coefficients", None, "non-finite entry"));
    }
    out
}

/// Prints sums like `0.9000000000000001` as `0.9`.
fn round_display(x: f64) -> String {
    let s = format!("{:.12}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

// --- file format ------------------------------------------------------------

/// A matrix as row-major nested arrays; a bare number is accepted for `1x1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixRepr {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

/// A vector as an array; a bare number is accepted for length one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum VectorRepr {
    Scalar(f64),
    Items(Vec<f64>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimsFile {
    n: usize,
    m: usize,
    l: usize,
    #[serde(rename = "N")]
    horizon: usize,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DynamicsFile {
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<MatrixRepr>,
    #[serde(rename = "Abar", default, skip_serializing_if = "Option::is_none")]
    a_bar: Option<MatrixRepr>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    b: Option<MatrixRepr>,
    #[serde(rename = "Bbar", default, skip_serializing_if = "Option::is_none")]
    b_bar: Option<MatrixRepr>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    c: Option<MatrixRepr>,
    #[serde(rename = "Cbar", default, skip_serializing_if = "Option::is_none")]
    c_bar: Option<MatrixRepr>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    d: Option<MatrixRepr>,
    #[serde(rename = "Dbar", default, skip_serializing_if = "Option::is_none")]
    d_bar: Option<MatrixRepr>,
    #[serde(rename = "b", default, skip_serializing_if = "Option::is_none")]
    drift: Option<VectorRepr>,
    #[serde(rename = "sigma", default, skip_serializing_if = "Option::is_none")]
    diffusion: Option<VectorRepr>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostFile {
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    q: Option<MatrixRepr>,
    #[serde(rename = "Qbar", default, skip_serializing_if = "Option::is_none")]
    q_bar: Option<MatrixRepr>,
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    s: Option<MatrixRepr>,
    #[serde(rename = "Sbar", default, skip_serializing_if = "Option::is_none")]
    s_bar: Option<MatrixRepr>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    r: Option<MatrixRepr>,
    #[serde(rename = "Rbar", default, skip_serializing_if = "Option::is_none")]
    r_bar: Option<MatrixRepr>,
    #[serde(rename = "q", default, skip_serializing_if = "Option::is_none")]
    q_lin: Option<VectorRepr>,
    #[serde(rename = "qbar", default, skip_serializing_if = "Option::is_none")]
    q_bar_lin: Option<VectorRepr>,
    #[serde(rename = "rho", default, skip_serializing_if = "Option::is_none")]
    rho: Option<VectorRepr>,
    #[serde(rename = "rhobar", default, skip_serializing_if = "Option::is_none")]
    rho_bar: Option<VectorRepr>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TerminalFile {
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    g: Option<MatrixRepr>,
    #[serde(rename = "Gbar", default, skip_serializing_if = "Option::is_none")]
    g_bar: Option<MatrixRepr>,
    #[serde(rename = "g", default, skip_serializing_if = "Option::is_none")]
    g_lin: Option<VectorRepr>,
    #[serde(rename = "gbar", default, skip_serializing_if = "Option::is_none")]
    g_bar_lin: Option<VectorRepr>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomFile {
    value: VectorRepr,
    prob: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialFile {
    atoms: Vec<AtomFile>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseFile {
    #[serde(default)]
    kind: NoiseKind,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InfoFile {
    #[serde(default)]
    kind: InfoPattern,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemFile {
    dims: DimsFile,
    #[serde(default)]
    dynamics: Vec<DynamicsFile>,
    #[serde(default)]
    cost: Vec<CostFile>,
    #[serde(default)]
    terminal: TerminalFile,
    #[serde(default)]
    initial: Option<InitialFile>,
    #[serde(default)]
    noise: NoiseFile,
    #[serde(default)]
    info: InfoFile,
}

fn to_matrix(
    repr: &Option<MatrixRepr>,
    field: &str,
    k: Option<usize>,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>, ProblemError> {
    let shape_err = |got: String| ProblemError::Shape {
        field: field.to_string(),
        k,
        expected: format!("{rows}x{cols}"),
        got,
    };
    match repr {
        None => Ok(DMatrix::zeros(rows, cols)),
        Some(MatrixRepr::Scalar(x)) => {
            if rows == 1 && cols == 1 {
                Ok(DMatrix::from_element(1, 1, *x))
            } else {
                Err(shape_err("scalar".into()))
            }
        }
        Some(MatrixRepr::Rows(data)) => {
            let r = data.len();
            let c = data.first().map_or(0, |row| row.len());
            if r != rows || data.iter().any(|row| row.len() != cols) {
                return Err(shape_err(format!("{r}x{c}")));
            }
            Ok(DMatrix::from_fn(rows, cols, |i, j| data[i][j]))
        }
    }
}

fn to_vector(
    repr: &Option<VectorRepr>,
    field: &str,
    k: Option<usize>,
    len: usize,
) -> Result<DVector<f64>, ProblemError> {
    let shape_err = |got: String| ProblemError::Shape {
        field: field.to_string(),
        k,
        expected: format!("length {len}"),
        got,
    };
    match repr {
        None => Ok(DVector::zeros(len)),
        Some(VectorRepr::Scalar(x)) => {
            if len == 1 {
                Ok(DVector::from_element(1, *x))
            } else {
                Err(shape_err("scalar".into()))
            }
        }
        Some(VectorRepr::Items(v)) => {
            if v.len() != len {
                return Err(shape_err(format!("length {}", v.len())));
            }
            Ok(DVector::from_column_slice(v))
        }
    }
}

fn from_matrix(m: &DMatrix<f64>) -> Option<MatrixRepr> {
    Some(MatrixRepr::Rows(
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect(),
    ))
}

fn from_vector(v: &DVector<f64>) -> Option<VectorRepr> {
    Some(VectorRepr::Items(v.iter().copied().collect()))
}

fn check_symmetric(m: &DMatrix<f64>, field: &str, k: Option<usize>) -> Result<(), ProblemError> {
    if matnum::is_symmetric(m) {
        Ok(())
    } else {
        Err(ProblemError::Symmetry {
            field: field.to_string(),
            k,
            asymmetry: matnum::asymmetry(m),
        })
    }
}

/// Parses the JSON problem format.
pub fn parse_problem(text: &str) -> Result<ProblemData, ProblemError> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| ProblemError::Parse(e.to_string()))?;
    let DimsFile { n, m, l, horizon } = file.dims;
    let steps = horizon.saturating_sub(l);
    let dims = Dimensions { n, m, l, horizon };

    if file.dynamics.len() != steps {
        return Err(ProblemError::Shape {
            field: "dynamics".into(),
            k: None,
            expected: format!("{steps} entries"),
            got: format!("{} entries", file.dynamics.len()),
        });
    }
    // cost may be omitted entirely (all zero)
    if !file.cost.is_empty() && file.cost.len() != steps {
        return Err(ProblemError::Shape {
            field: "cost".into(),
            k: None,
            expected: format!("{steps} entries"),
            got: format!("{} entries", file.cost.len()),
        });
    }

    let mut dynamics = Vec::with_capacity(steps);
    for (i, d) in file.dynamics.iter().enumerate() {
        let k = Some(l + i);
        dynamics.push(StepDynamics {
            a: to_matrix(&d.a, "A", k, n, n)?,
            a_bar: to_matrix(&d.a_bar, "Abar", k, n, n)?,
            b: to_matrix(&d.b, "B", k, n, m)?,
            b_bar: to_matrix(&d.b_bar, "Bbar", k, n, m)?,
            c: to_matrix(&d.c, "C", k, n, n)?,
            c_bar: to_matrix(&d.c_bar, "Cbar", k, n, n)?,
            d: to_matrix(&d.d, "D", k, n, m)?,
            d_bar: to_matrix(&d.d_bar, "Dbar", k, n, m)?,
            drift: to_vector(&d.drift, "b", k, n)?,
            diffusion: to_vector(&d.diffusion, "sigma", k, n)?,
        });
    }
    let mut cost = Vec::with_capacity(steps);
    for i in 0..steps {
        let k = Some(l + i);
        let empty = CostFile::default();
        let c = file.cost.get(i).unwrap_or(&empty);
        let step = StepCost {
            q: to_matrix(&c.q, "Q", k, n, n)?,
            q_bar: to_matrix(&c.q_bar, "Qbar", k, n, n)?,
            s: to_matrix(&c.s, "S", k, m, n)?,
            s_bar: to_matrix(&c.s_bar, "Sbar", k, m, n)?,
            r: to_matrix(&c.r, "R", k, m, m)?,
            r_bar: to_matrix(&c.r_bar, "Rbar", k, m, m)?,
            q_lin: to_vector(&c.q_lin, "q", k, n)?,
            q_bar_lin: to_vector(&c.q_bar_lin, "qbar", k, n)?,
            rho: to_vector(&c.rho, "rho", k, m)?,
            rho_bar: to_vector(&c.rho_bar, "rhobar", k, m)?,
        };
        check_symmetric(&step.q, "Q", k)?;
        check_symmetric(&step.q_bar, "Qbar", k)?;
        check_symmetric(&step.r, "R", k)?;
        check_symmetric(&step.r_bar, "Rbar", k)?;
        cost.push(step);
    }
    let t = &file.terminal;
    let terminal = TerminalCost {
        g: to_matrix(&t.g, "G", None, n, n)?,
        g_bar: to_matrix(&t.g_bar, "Gbar", None, n, n)?,
        g_lin: to_vector(&t.g_lin, "g", None, n)?,
        g_bar_lin: to_vector(&t.g_bar_lin, "gbar", None, n)?,
    };
    check_symmetric(&terminal.g, "G", None)?;
    check_symmetric(&terminal.g_bar, "Gbar", None)?;

    let initial = match &file.initial {
        None => InitialDistribution::deterministic(DVector::zeros(n)),
        Some(init) => {
            let mut atoms = Vec::with_capacity(init.atoms.len());
            for a in &init.atoms {
                atoms.push(Atom {
                    value: to_vector(&Some(a.value.clone()), "initial.atoms.value", None, n)?,
                    prob: a.prob,
                });
            }
            InitialDistribution { atoms }
        }
    };

    let mut problem = ProblemData {
        dims,
        dynamics,
        cost,
        terminal,
        initial,
        noise: NoiseModel {
            kind: file.noise.kind,
            seed: file.noise.seed,
        },
        info: file.info.kind,
    };
    problem.symmetrize();
    let diagnostics = validate(&problem);
    if !diagnostics.is_empty() {
        return Err(ProblemError::Invalid(diagnostics));
    }
    Ok(problem)
}

/// Reads and validates a problem file.
pub fn load_problem(path: impl AsRef<Path>) -> Result<ProblemData, ProblemError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ProblemError::NotFound(path.display().to_string()),
        _ => ProblemError::Io(e),
    })?;
    parse_problem(&text)
}

/// Serializes a problem to the JSON format. Every field is written
/// explicitly; numbers use shortest round-trip formatting.
pub fn problem_to_json(p: &ProblemData) -> String {
    let file = ProblemFile {
        dims: DimsFile {
            n: p.dims.n,
            m: p.dims.m,
            l: p.dims.l,
            horizon: p.dims.horizon,
        },
        dynamics: p
            .dynamics
            .iter()
            .map(|d| DynamicsFile {
                a: from_matrix(&d.a),
                a_bar: from_matrix(&d.a_bar),
                b: from_matrix(&d.b),
                b_bar: from_matrix(&d.b_bar),
                c: from_matrix(&d.c),
                c_bar: from_matrix(&d.c_bar),
                d: from_matrix(&d.d),
                d_bar: from_matrix(&d.d_bar),
                drift: from_vector(&d.drift),
                diffusion: from_vector(&d.diffusion),
            })
            .collect(),
        cost: p
            .cost
            .iter()
            .map(|c| CostFile {
                q: from_matrix(&c.q),
                q_bar: from_matrix(&c.q_bar),
                s: from_matrix(&c.s),
                s_bar: from_matrix(&c.s_bar),
                r: from_matrix(&c.r),
                r_bar: from_matrix(&c.r_bar),
                q_lin: from_vector(&c.q_lin),
                q_bar_lin: from_vector(&c.q_bar_lin),
                rho: from_vector(&c.rho),
                rho_bar: from_vector(&c.rho_bar),
            })
            .collect(),
        terminal: TerminalFile {
            g: from_matrix(&p.terminal.g),
            g_bar: from_matrix(&p.terminal.g_bar),
            g_lin: from_vector(&p.terminal.g_lin),
            g_bar_lin: from_vector(&p.terminal.g_bar_lin),
        },
        initial: Some(InitialFile {
            atoms: p
                .initial
                .atoms
                .iter()
                .map(|a| AtomFile {
                    value: VectorRepr::Items(a.value.iter().copied().collect()),
                    prob: a.prob,
                })
                .collect(),
        }),
        noise: NoiseFile {
            kind: p.noise.kind,
            seed: p.noise.seed,
        },
        info: InfoFile { kind: p.info },
    };
    serde_json::to_string_pretty(&file).expect("problem serialization cannot fail")
}

pub fn save_problem(p: &ProblemData, path: impl AsRef<Path>) -> Result<(), ProblemError> {
    std::fs::write(path, problem_to_json(p))?;
    Ok(())
}
