//! Exact evaluation on the finite noise tree.
//!
//! Every `ξ`-atom is a root and each transition branches on `ω = ±1` with
//! probability ½. A node at depth `d` is indexed by
//! `atom · 2^d + bits`, its children are `2i` (`ω = +1`) and `2i + 1`
//! (`ω = -1`). States `x_k` live at depth `k - l`; controls at depth
//! `k - l` (predictable) or `k - l + 1` (adapted).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::par;
use crate::problem::{Atom, InfoPattern, InitialDistribution, ProblemData};
use crate::strategy::ClosedLoopStrategy;

/// Largest stacked control dimension accepted by [`assemble_quadratic`].
pub const MAX_STACKED_DIM: usize = 20_000;
/// Largest number of nodes at the deepest level of a tree.
pub const MAX_TREE_NODES: usize = 1 << 22;
/// Relative eigenvalue threshold for the quadratic model.
pub const EIG_TOL: f64 = 1e-9;
/// Absolute tolerance on stationarity and range residuals.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("stacked control dimension {dim} exceeds the limit {limit}")]
    TooLarge { dim: usize, limit: usize },
    #[error("noise tree with {nodes} nodes exceeds the limit {limit}")]
    TreeTooLarge { nodes: usize, limit: usize },
    #[error("control process shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTree {
    /// Root probabilities, one per `ξ`-atom.
    pub probs: Vec<f64>,
}

impl NoiseTree {
    pub fn new(initial: &InitialDistribution) -> Self {
        Self {
            probs: initial.atoms.iter().map(|a| a.prob).collect(),
        }
    }

    pub fn atoms(&self) -> usize {
        self.probs.len()
    }

    pub fn count(&self, depth: usize) -> usize {
        self.atoms() << depth
    }

    pub fn prob(&self, depth: usize, idx: usize) -> f64 {
        self.probs[idx >> depth] * 0.5f64.powi(depth as i32)
    }

    pub fn weights(&self, depth: usize) -> Vec<f64> {
        (0..self.count(depth)).map(|i| self.prob(depth, i)).collect()
    }

    /// Sign of the transition that led into node `idx` (depth ≥ 1).
    pub fn omega(idx: usize) -> f64 {
        if idx & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Sign of the `j`-th transition on the path to a depth-`depth` node.
    pub fn omega_at(depth: usize, idx: usize, j: usize) -> f64 {
        debug_assert!(j < depth);
        Self::omega(idx >> (depth - 1 - j))
    }

    fn check_size(&self, depth: usize) -> Result<(), OracleError> {
        let nodes = self
            .atoms()
            .checked_shl(depth as u32)
            .filter(|n| n >> depth == self.atoms())
            .unwrap_or(usize::MAX);
        if nodes > MAX_TREE_NODES {
            return Err(OracleError::TreeTooLarge {
                nodes,
                limit: MAX_TREE_NODES,
            });
        }
        Ok(())
    }
}

/// A vector-valued process on the tree; entry `t` is time `start + t` and
/// lives at depth `t + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeProcess {
    pub tree: NoiseTree,
    pub start: usize,
    pub offset: usize,
    pub values: Vec<Vec<DVector<f64>>>,
}

impl TreeProcess {
    pub fn zeros(tree: &NoiseTree, start: usize, offset: usize, len: usize, dim: usize) -> Self {
        Self::from_fn(tree, start, offset, len, |_, _| DVector::zeros(dim))
    }

    pub fn from_fn(
        tree: &NoiseTree,
        start: usize,
        offset: usize,
        len: usize,
        mut f: impl FnMut(usize, usize) -> DVector<f64>,
    ) -> Self {
        let values = (0..len)
            .map(|t| (0..tree.count(t + offset)).map(|i| f(t, i)).collect())
            .collect();
        Self {
            tree: tree.clone(),
            start,
            offset,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn depth(&self, t: usize) -> usize {
        t + self.offset
    }

    /// Values at absolute time `k`.
    pub fn at(&self, k: usize) -> &[DVector<f64>] {
        &self.values[k - self.start]
    }

    pub fn mean(&self, t: usize) -> DVector<f64> {
        let depth = self.depth(t);
        let mut acc = DVector::zeros(self.values[t][0].len());
        for (i, v) in self.values[t].iter().enumerate() {
            acc.axpy(self.tree.prob(depth, i), v, 1.0);
        }
        acc
    }

    /// `E Σ_t ⟨self_t, other_t⟩`.
    pub fn inner(&self, other: &TreeProcess) -> f64 {
        let mut acc = 0.0;
        for t in 0..self.len() {
            let depth = self.depth(t);
            for (i, (a, b)) in self.values[t].iter().zip(&other.values[t]).enumerate() {
                acc += self.tree.prob(depth, i) * a.dot(b);
            }
        }
        acc
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// `self + λ other`.
    pub fn axpy(&self, lambda: f64, other: &TreeProcess) -> TreeProcess {
        let mut out = self.clone();
        for (row, orow) in out.values.iter_mut().zip(&other.values) {
            for (a, b) in row.iter_mut().zip(orow) {
                a.axpy(lambda, b, 1.0);
            }
        }
        out
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().flatten().map(|v| v.amax()).fold(0.0, f64::max)
    }

    /// Predictable values copied onto both children.
    pub fn lift(&self) -> TreeProcess {
        let mut out = self.clone();
        out.offset += 1;
        for row in &mut out.values {
            *row = row.iter().flat_map(|v| [v.clone(), v.clone()]).collect();
        }
        out
    }
}

fn control_offset(p: &ProblemData) -> usize {
    match p.info {
        InfoPattern::Predictable => 0,
        InfoPattern::Adapted => 1,
    }
}

/// Zero control in the problem's information pattern.
pub fn zero_control(p: &ProblemData) -> TreeProcess {
    let tree = NoiseTree::new(&p.initial);
    TreeProcess::zeros(&tree, p.dims.l, control_offset(p), p.steps(), p.dims.m)
}

/// Builds a control from `f(k, depth, node)` in the problem's pattern.
pub fn control_from_fn(p: &ProblemData, mut f: impl FnMut(usize, usize, usize) -> DVector<f64>) -> TreeProcess {
    let tree = NoiseTree::new(&p.initial);
    let offset = control_offset(p);
    let l = p.dims.l;
    TreeProcess::from_fn(&tree, l, offset, p.steps(), |t, i| f(l + t, t + offset, i))
}

fn check_control(p: &ProblemData, u: &TreeProcess) -> Result<(), OracleError> {
    let expected_offset = control_offset(p);
    if u.offset != expected_offset || u.start != p.dims.l || u.len() != p.steps() {
        return Err(OracleError::Shape(format!(
            "expected {} entries from k={} at depth offset {}, got {} from k={} at offset {}",
            p.steps(),
            p.dims.l,
            expected_offset,
            u.len(),
            u.start,
            u.offset
        )));
    }
    if u.tree.probs != NoiseTree::new(&p.initial).probs {
        return Err(OracleError::Shape("control built on a different tree".into()));
    }
    for (t, row) in u.values.iter().enumerate() {
        if row.len() != u.tree.count(u.depth(t)) || row.iter().any(|v| v.len() != p.dims.m) {
            return Err(OracleError::Shape(format!("bad entry at k={}", p.dims.l + t)));
        }
    }
    Ok(())
}

/// Forward pass driven by a control rule that sees the current states and
/// their mean and returns the controls at the appropriate depth.
fn forward(
    p: &ProblemData,
    tree: &NoiseTree,
    mut control: impl FnMut(usize, &[DVector<f64>], &DVector<f64>) -> Vec<DVector<f64>>,
) -> (TreeProcess, TreeProcess) {
    let steps = p.steps();
    let off = control_offset(p);
    let adapted = p.info == InfoPattern::Adapted;
    let weighted_mean = |depth: usize, vs: &[DVector<f64>], dim: usize| {
        let mut acc = DVector::zeros(dim);
        for (i, v) in vs.iter().enumerate() {
            acc.axpy(tree.prob(depth, i), v, 1.0);
        }
        acc
    };
    let mut x: Vec<Vec<DVector<f64>>> = Vec::with_capacity(steps + 1);
    let mut u: Vec<Vec<DVector<f64>>> = Vec::with_capacity(steps);
    x.push(p.initial.atoms.iter().map(|a| a.value.clone()).collect());
    for t in 0..steps {
        let d = &p.dynamics[t];
        let xt = &x[t];
        let ex = weighted_mean(t, xt, p.dims.n);
        let ut = control(t, xt, &ex);
        let eu = weighted_mean(t + off, &ut, p.dims.m);
        let drift_mf = &d.a_bar * &ex + &d.b_bar * &eu + &d.drift;
        let noise_mf = &d.c_bar * &ex + &d.d_bar * &eu + &d.diffusion;
        let mut next = Vec::with_capacity(2 * xt.len());
        for (h, xv) in xt.iter().enumerate() {
            let ax = &d.a * xv + &drift_mf;
            let cx = &d.c * xv + &noise_mf;
            for s in 0..2 {
                let child = 2 * h + s;
                let uv = if adapted { &ut[child] } else { &ut[h] };
                let w = NoiseTree::omega(child);
                next.push(&ax + &d.b * uv + (&cx + &d.d * uv) * w);
            }
        }
        u.push(ut);
        x.push(next);
    }
    let process = |offset, values| TreeProcess {
        tree: tree.clone(),
        start: p.dims.l,
        offset,
        values,
    };
    (process(0, x), process(off, u))
}

/// Exact state process under the open-loop control `u`.
pub fn rollout(p: &ProblemData, u: &TreeProcess) -> Result<TreeProcess, OracleError> {
    check_control(p, u)?;
    let tree = NoiseTree::new(&p.initial);
    tree.check_size(p.steps() + control_offset(p))?;
    Ok(forward(p, &tree, |t, _, _| u.values[t].clone()).0)
}

/// States and controls under `u_k = Θ_k(x_k - Ex_k) + Θ̄_k Ex_k + v_k`.
/// Under the adapted pattern each control is copied to both children.
pub fn rollout_closed_loop(p: &ProblemData, s: &ClosedLoopStrategy) -> Result<(TreeProcess, TreeProcess), OracleError> {
    let tree = NoiseTree::new(&p.initial);
    tree.check_size(p.steps() + control_offset(p))?;
    let adapted = p.info == InfoPattern::Adapted;
    Ok(forward(p, &tree, |t, xs, ex| {
        let mean_part = &s.theta_bar[t] * ex + &s.v[t];
        let vals = xs.iter().map(|x| &s.theta[t] * (x - ex) + &mean_part);
        if adapted {
            vals.flat_map(|v| [v.clone(), v]).collect()
        } else {
            vals.collect()
        }
    }))
}

fn quad(m: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    x.dot(&(m * y))
}

/// Cost of a state/control pair produced by a rollout.
pub fn cost_of(p: &ProblemData, x: &TreeProcess, u: &TreeProcess) -> f64 {
    let steps = p.steps();
    let adapted = p.info == InfoPattern::Adapted;
    let mut total = 0.0;
    for t in 0..steps {
        let c = &p.cost[t];
        let ex = x.mean(t);
        let eu = u.mean(t);
        let depth = u.depth(t);
        let mut terms = Vec::with_capacity(u.values[t].len());
        for (j, uv) in u.values[t].iter().enumerate() {
            let xv = &x.values[t][if adapted { j >> 1 } else { j }];
            let val = quad(&c.q, xv, xv)
                + 2.0 * quad(&c.s, uv, xv)
                + quad(&c.r, uv, uv)
                + 2.0 * c.q_lin.dot(xv)
                + 2.0 * c.rho.dot(uv);
            terms.push(u.tree.prob(depth, j) * val);
        }
        total += par::pairwise_sum(&terms)
            + quad(&c.q_bar, &ex, &ex)
            + 2.0 * quad(&c.s_bar, &eu, &ex)
            + quad(&c.r_bar, &eu, &eu)
            + 2.0 * c.q_bar_lin.dot(&ex)
            + 2.0 * c.rho_bar.dot(&eu);
    }
    let term = &p.terminal;
    let ex = x.mean(steps);
    let terms: Vec<f64> = x.values[steps]
        .iter()
        .enumerate()
        .map(|(i, xv)| x.tree.prob(steps, i) * quad(&term.g, xv, xv))
        .collect();
    total + par::pairwise_sum(&terms) + quad(&term.g_bar, &ex, &ex) + 2.0 * (&term.g_lin + &term.g_bar_lin).dot(&ex)
}

/// `J(l, ξ; u)` evaluated exactly.
pub fn exact_cost(p: &ProblemData, u: &TreeProcess) -> Result<f64, OracleError> {
    let x = rollout(p, u)?;
    Ok(cost_of(p, &x, u))
}

/// Adjoint process `y_k`, `k = l..=N`, at state depth.
pub fn fbsde_backward(p: &ProblemData, u: &TreeProcess, x: &TreeProcess) -> TreeProcess {
    let steps = p.steps();
    let adapted = p.info == InfoPattern::Adapted;
    let tree = &x.tree;
    let mut y: Vec<Vec<DVector<f64>>> = vec![Vec::new(); steps + 1];
    let term = &p.terminal;
    let ex = x.mean(steps);
    let mf = &term.g_bar * &ex + &term.g_lin + &term.g_bar_lin;
    y[steps] = x.values[steps].iter().map(|xv| &term.g * xv + &mf).collect();

    for t in (0..steps).rev() {
        let d = &p.dynamics[t];
        let c = &p.cost[t];
        let (ey, eyw) = next_means(tree, t + 1, &y[t + 1]);
        let ex = x.mean(t);
        let eu = u.mean(t);
        let mf =
            d.a_bar.tr_mul(&ey) + d.c_bar.tr_mul(&eyw) + &c.q_bar * &ex + c.s_bar.tr_mul(&eu) + &c.q_lin + &c.q_bar_lin;
        y[t] = x.values[t]
            .iter()
            .enumerate()
            .map(|(h, xv)| {
                let (cy, cyw) = cond(&y[t + 1], h);
                let cu = if adapted {
                    (&u.values[t][2 * h] + &u.values[t][2 * h + 1]) * 0.5
                } else {
                    u.values[t][h].clone()
                };
                d.a.tr_mul(&cy) + d.c.tr_mul(&cyw) + &c.q * xv + c.s.tr_mul(&cu) + &mf
            })
            .collect();
    }
    TreeProcess {
        tree: tree.clone(),
        start: p.dims.l,
        offset: 0,
        values: y,
    }
}

/// `E y` and `E(y ω)` over a level whose last transition is `ω`.
fn next_means(tree: &NoiseTree, depth: usize, ys: &[DVector<f64>]) -> (DVector<f64>, DVector<f64>) {
    let mut ey = DVector::zeros(ys[0].len());
    let mut eyw = DVector::zeros(ys[0].len());
    for (i, y) in ys.iter().enumerate() {
        let w = tree.prob(depth, i);
        ey.axpy(w, y, 1.0);
        eyw.axpy(w * NoiseTree::omega(i), y, 1.0);
    }
    (ey, eyw)
}

/// `E(y | h)` and `E(y ω | h)` over the two children of `h`.
fn cond(ys: &[DVector<f64>], h: usize) -> (DVector<f64>, DVector<f64>) {
    let (a, b) = (&ys[2 * h], &ys[2 * h + 1]);
    ((a + b) * 0.5, (a - b) * 0.5)
}

/// Nodewise gradient of `u ↦ J(l, ξ; u)` in the probability-weighted
/// inner product, halved: `⟨dJ(u), v⟩ = 2 E Σ ⟨g, v⟩`.
pub fn half_gradient(p: &ProblemData, u: &TreeProcess, x: &TreeProcess, y: &TreeProcess) -> TreeProcess {
    let steps = p.steps();
    let adapted = p.info == InfoPattern::Adapted;
    let tree = &x.tree;
    let mut g = Vec::with_capacity(steps);
    for t in 0..steps {
        let d = &p.dynamics[t];
        let c = &p.cost[t];
        let (ey, eyw) = next_means(tree, t + 1, &y.values[t + 1]);
        let ex = x.mean(t);
        let eu = u.mean(t);
        let mf = d.b_bar.tr_mul(&ey) + d.d_bar.tr_mul(&eyw) + &c.s_bar * &ex + &c.r_bar * &eu + &c.rho + &c.rho_bar;
        let row: Vec<DVector<f64>> = u.values[t]
            .iter()
            .enumerate()
            .map(|(j, uv)| {
                let (xv, by) = if adapted {
                    let yv = &y.values[t + 1][j];
                    let w = NoiseTree::omega(j);
                    (&x.values[t][j >> 1], d.b.tr_mul(yv) + d.d.tr_mul(yv) * w)
                } else {
                    let (cy, cyw) = cond(&y.values[t + 1], j);
                    (&x.values[t][j], d.b.tr_mul(&cy) + d.d.tr_mul(&cyw))
                };
                by + &c.s * xv + &c.r * uv + &mf
            })
            .collect();
        g.push(row);
    }
    TreeProcess {
        tree: tree.clone(),
        start: p.dims.l,
        offset: u.offset,
        values: g,
    }
}

/// Rollout, adjoint and half-gradient in one pass.
pub fn gradient(p: &ProblemData, u: &TreeProcess) -> Result<TreeProcess, OracleError> {
    let x = rollout(p, u)?;
    let y = fbsde_backward(p, u, &x);
    Ok(half_gradient(p, u, &x, &y))
}

/// Largest nodewise violation of the first-order optimality condition.
pub fn stationarity_residual(p: &ProblemData, u: &TreeProcess) -> Result<f64, OracleError> {
    Ok(gradient(p, u)?.max_norm())
}

/// `E⟨y_l, ξ⟩`.
pub fn costate_pairing(p: &ProblemData, y: &TreeProcess) -> f64 {
    p.initial
        .atoms
        .iter()
        .zip(&y.values[0])
        .map(|(a, yv)| a.prob * a.value.dot(yv))
        .sum()
}

// --- quadratic model --------------------------------------------------------

/// `J(l, ξ; u) = z'Mz + d'z + c0` in scaled coordinates `z_i = √w_i u_i`,
/// where `w_i` is the probability of the node carrying coordinate `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub m: DMatrix<f64>,
    pub d: DVector<f64>,
    pub c0: f64,
    /// `√w_i` per stacked coordinate.
    pub sqrt_weights: DVector<f64>,
    template: TreeProcess,
}

impl QuadraticModel {
    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn eval(&self, z: &DVector<f64>) -> f64 {
        z.dot(&(&self.m * z)) + self.d.dot(z) + self.c0
    }

    pub fn stack(&self, u: &TreeProcess) -> DVector<f64> {
        let flat: Vec<f64> = u.values.iter().flatten().flat_map(|v| v.iter().copied()).collect();
        DVector::from_vec(flat).component_mul(&self.sqrt_weights)
    }

    pub fn unstack(&self, z: &DVector<f64>) -> TreeProcess {
        let raw = z.component_div(&self.sqrt_weights);
        let mut out = self.template.clone();
        let mut pos = 0;
        for v in out.values.iter_mut().flatten() {
            let len = v.len();
            v.copy_from_slice(&raw.as_slice()[pos..pos + len]);
            pos += len;
        }
        out
    }

    pub fn min_eig(&self) -> f64 {
        if self.dim() == 0 {
            return f64::INFINITY;
        }
        SymmetricEigen::new(self.m.clone()).eigenvalues.min()
    }
}

pub fn stacked_dim(p: &ProblemData) -> usize {
    let tree = NoiseTree::new(&p.initial);
    let off = control_offset(p);
    (0..p.steps()).map(|t| tree.count(t + off)).sum::<usize>() * p.dims.m
}

fn unit_control(template: &TreeProcess, m: usize, j: usize, scale: f64) -> TreeProcess {
    let mut u = template.clone();
    let (mut node, r) = (j / m, j % m);
    for row in &mut u.values {
        if node < row.len() {
            row[node][r] = scale;
            break;
        }
        node -= row.len();
    }
    u
}

/// Column-by-column assembly from unit-control rollouts of the homogeneous
/// problem started at zero.
pub fn assemble_quadratic(p: &ProblemData) -> Result<QuadraticModel, OracleError> {
    let dim = stacked_dim(p);
    if dim > MAX_STACKED_DIM {
        return Err(OracleError::TooLarge {
            dim,
            limit: MAX_STACKED_DIM,
        });
    }
    let template = zero_control(p);
    template.tree.check_size(p.steps() + control_offset(p))?;
    let m = p.dims.m;
    let sqrt_weights = DVector::from_iterator(
        dim,
        template.values.iter().enumerate().flat_map(|(t, row)| {
            let depth = template.depth(t);
            let tree = &template.tree;
            (0..row.len()).flat_map(move |i| std::iter::repeat_n(tree.prob(depth, i).sqrt(), m))
        }),
    );

    let zero_start = InitialDistribution {
        atoms: p
            .initial
            .atoms
            .iter()
            .map(|a| Atom {
                value: DVector::zeros(p.dims.n),
                prob: a.prob,
            })
            .collect(),
    };
    let hom = p.homogeneous_part().with_initial(zero_start);
    let flatten = |g: &TreeProcess| -> DVector<f64> {
        let flat: Vec<f64> = g.values.iter().flatten().flat_map(|v| v.iter().copied()).collect();
        DVector::from_vec(flat).component_mul(&sqrt_weights)
    };

    let columns = par::map_range(dim, |j| {
        let u = unit_control(&template, m, j, 1.0 / sqrt_weights[j]);
        let g = gradient(&hom, &u).expect("shapes fixed by the template");
        flatten(&g)
    });
    let mut mat = DMatrix::zeros(dim, dim);
    for (j, col) in columns.iter().enumerate() {
        mat.set_column(j, col);
    }
    let mat = (&mat + mat.transpose()) * 0.5;

    let g0 = gradient(p, &template)?;
    let d = flatten(&g0) * 2.0;
    let c0 = exact_cost(p, &template)?;
    Ok(QuadraticModel {
        m: mat,
        d,
        c0,
        sqrt_weights,
        template,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnboundedReason {
    /// `M` has a negative eigenvalue.
    NonConvex,
    /// `M ⪰ 0` but the linear term has a component in `ker M`.
    LinearTermOutsideRange,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExactOutcome {
    /// `M ≻ 0`.
    Unique {
        control: TreeProcess,
        value: f64,
        min_eig: f64,
    },
    /// `M ⪰ 0` singular, minimum attained; `control` has minimal norm.
    Attained {
        control: TreeProcess,
        value: f64,
        min_eig: f64,
    },
    Unbounded {
        reason: UnboundedReason,
        min_eig: f64,
        residual: f64,
    },
}

impl ExactOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            ExactOutcome::Unique { value, .. } | ExactOutcome::Attained { value, .. } => Some(*value),
            ExactOutcome::Unbounded { .. } => None,
        }
    }

    pub fn control(&self) -> Option<&TreeProcess> {
        match self {
            ExactOutcome::Unique { control, .. } | ExactOutcome::Attained { control, .. } => Some(control),
            ExactOutcome::Unbounded { .. } => None,
        }
    }

    pub fn min_eig(&self) -> f64 {
        match self {
            ExactOutcome::Unique { min_eig, .. }
            | ExactOutcome::Attained { min_eig, .. }
            | ExactOutcome::Unbounded { min_eig, .. } => *min_eig,
        }
    }
}

/// Minimizes the model: `z* = -½ M† d`, `value = c0 - ¼ d'M†d`.
pub fn solve_model(model: &QuadraticModel) -> ExactOutcome {
    if model.dim() == 0 {
        return ExactOutcome::Unique {
            control: model.template.clone(),
            value: model.c0,
            min_eig: f64::INFINITY,
        };
    }
    let eig = SymmetricEigen::new(model.m.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    let thr = EIG_TOL * scale;
    let min_eig = eig.eigenvalues.min();
    if min_eig < -thr {
        return ExactOutcome::Unbounded {
            reason: UnboundedReason::NonConvex,
            min_eig,
            residual: 0.0,
        };
    }
    let coords = eig.eigenvectors.tr_mul(&model.d);
    let mut null_sq = 0.0;
    let mut sol = DVector::zeros(model.dim());
    let mut quad_term = 0.0;
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= thr {
            null_sq += coords[i] * coords[i];
        } else {
            sol.axpy(-0.5 * coords[i] / lam, &eig.eigenvectors.column(i), 1.0);
            quad_term += coords[i] * coords[i] / lam;
        }
    }
    let residual = null_sq.sqrt();
    if residual > RESIDUAL_TOL * model.d.norm().max(1.0) {
        return ExactOutcome::Unbounded {
            reason: UnboundedReason::LinearTermOutsideRange,
            min_eig,
            residual,
        };
    }
    let control = model.unstack(&sol);
    let value = model.c0 - 0.25 * quad_term;
    if min_eig > thr {
        ExactOutcome::Unique {
            control,
            value,
            min_eig,
        }
    } else {
        ExactOutcome::Attained {
            control,
            value,
            min_eig,
        }
    }
}

pub fn solve_exact(p: &ProblemData) -> Result<ExactOutcome, OracleError> {
    Ok(solve_model(&assemble_quadratic(p)?))
}
