//! First and second moments under affine feedback, the exact closed-loop
//! cost, and a seeded Monte Carlo estimator.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::par;
use crate::problem::{NoiseKind, ProblemData};
use crate::strategy::ClosedLoopStrategy;

/// Moment sequences indexed by `k - l` for `k = l..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    /// `m_k = E x_k`.
    pub mean: Vec<DVector<f64>>,
    /// `X_k = E x_k x_k'`.
    pub second: Vec<DMatrix<f64>>,
    /// `Y_k = m_k m_k'`.
    pub outer: Vec<DMatrix<f64>>,
    /// `E u_k` for `k = l..N`.
    pub control_mean: Vec<DVector<f64>>,
}

impl MomentState {
    pub fn covariance(&self, t: usize) -> DMatrix<f64> {
        &self.second[t] - &self.outer[t]
    }
}

/// Per-step affine pieces of the closed loop `x' = F x + f + (G x + g) ω`
/// and `u = Θ x + c`.
struct Affine {
    f_mat: DMatrix<f64>,
    f_vec: DVector<f64>,
    g_mat: DMatrix<f64>,
    g_vec: DVector<f64>,
    c: DVector<f64>,
    eu: DVector<f64>,
}

fn affine_step(p: &ProblemData, s: &ClosedLoopStrategy, t: usize, m: &DVector<f64>) -> Affine {
    let d = &p.dynamics[t];
    let (th, thb) = (&s.theta[t], &s.theta_bar[t]);
    let c = (thb - th) * m + &s.v[t];
    let eu = thb * m + &s.v[t];
    Affine {
        f_mat: &d.a + &d.b * th,
        f_vec: &d.a_bar * m + &d.b * &c + &d.b_bar * &eu + &d.drift,
        g_mat: &d.c + &d.d * th,
        g_vec: &d.c_bar * m + &d.d * &c + &d.d_bar * &eu + &d.diffusion,
        c,
        eu,
    }
}

/// Exact moments; only `E ω = 0` and `E ω² = 1` enter, so the result is the
/// same for every noise law.
pub fn propagate(p: &ProblemData, s: &ClosedLoopStrategy) -> MomentState {
    let steps = p.steps();
    let mut mean = vec![p.initial.mean()];
    let mut second = vec![p.initial.second_moment()];
    let mut control_mean = Vec::with_capacity(steps);
    for t in 0..steps {
        let (m, x) = (&mean[t], &second[t]);
        let a = affine_step(p, s, t, m);
        let fm = &a.f_mat * m;
        let gm = &a.g_mat * m;
        let next_x = &a.f_mat * x * a.f_mat.transpose()
            + &fm * a.f_vec.transpose()
            + &a.f_vec * fm.transpose()
            + &a.f_vec * a.f_vec.transpose()
            + &a.g_mat * x * a.g_mat.transpose()
            + &gm * a.g_vec.transpose()
            + &a.g_vec * gm.transpose()
            + &a.g_vec * a.g_vec.transpose();
        let next_m = fm + &a.f_vec;
        control_mean.push(a.eu);
        mean.push(next_m);
        second.push((&next_x + next_x.transpose()) * 0.5);
    }
    let outer = mean.iter().map(|m| m * m.transpose()).collect();
    MomentState {
        mean,
        second,
        outer,
        control_mean,
    }
}

/// Exact cost of the affine closed-loop law.
pub fn closed_loop_cost(p: &ProblemData, s: &ClosedLoopStrategy) -> f64 {
    let ms = propagate(p, s);
    let mut total = 0.0;
    for t in 0..p.steps() {
        let c = &p.cost[t];
        let (m, x) = (&ms.mean[t], &ms.second[t]);
        let th = &s.theta[t];
        let a = affine_step(p, s, t, m);
        let eu = &a.eu;
        // E x u' and E u u'
        let xu = x * th.transpose() + m * a.c.transpose();
        let uu =
            th * x * th.transpose() + th * m * a.c.transpose() + &a.c * (th * m).transpose() + &a.c * a.c.transpose();
        total += (&c.q * x).trace()
            + 2.0 * (&c.s * &xu).trace()
            + (&c.r * &uu).trace()
            + 2.0 * c.q_lin.dot(m)
            + 2.0 * c.rho.dot(eu)
            + m.dot(&(&c.q_bar * m))
            + 2.0 * eu.dot(&(&c.s_bar * m))
            + eu.dot(&(&c.r_bar * eu))
            + 2.0 * c.q_bar_lin.dot(m)
            + 2.0 * c.rho_bar.dot(eu);
    }
    let steps = p.steps();
    let term = &p.terminal;
    let (m, x) = (&ms.mean[steps], &ms.second[steps]);
    total + (&term.g * x).trace() + m.dot(&(&term.g_bar * m)) + 2.0 * (&term.g_lin + &term.g_bar_lin).dot(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationReport {
    pub paths: usize,
    pub seed: u64,
    pub estimate: f64,
    pub std_error: f64,
}

fn path_cost(p: &ProblemData, s: &ClosedLoopStrategy, ms: &MomentState, seed: u64, path: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    let u01: f64 = rng.random();
    let mut acc = 0.0;
    let mut x = p.initial.atoms.last().map(|a| a.value.clone()).unwrap_or_default();
    for a in &p.initial.atoms {
        acc += a.prob;
        if u01 < acc {
            x = a.value.clone();
            break;
        }
    }
    let mut total = 0.0;
    for t in 0..p.steps() {
        let d = &p.dynamics[t];
        let c = &p.cost[t];
        let m = &ms.mean[t];
        let eu = &ms.control_mean[t];
        let u = &s.theta[t] * (&x - m) + &s.theta_bar[t] * m + &s.v[t];
        total += x.dot(&(&c.q * &x))
            + 2.0 * u.dot(&(&c.s * &x))
            + u.dot(&(&c.r * &u))
            + 2.0 * c.q_lin.dot(&x)
            + 2.0 * c.rho.dot(&u)
            + m.dot(&(&c.q_bar * m))
            + 2.0 * eu.dot(&(&c.s_bar * m))
            + eu.dot(&(&c.r_bar * eu))
            + 2.0 * c.q_bar_lin.dot(m)
            + 2.0 * c.rho_bar.dot(eu);
        let w: f64 = match p.noise.kind {
            NoiseKind::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            NoiseKind::Gaussian => rng.sample(StandardNormal),
        };
        let drift = &d.a * &x + &d.a_bar * m + &d.b * &u + &d.b_bar * eu + &d.drift;
        let noise = &d.c * &x + &d.c_bar * m + &d.d * &u + &d.d_bar * eu + &d.diffusion;
        x = drift + noise * w;
    }
    let steps = p.steps();
    let term = &p.terminal;
    let m = &ms.mean[steps];
    total + x.dot(&(&term.g * &x)) + m.dot(&(&term.g_bar * m)) + 2.0 * (&term.g_lin + &term.g_bar_lin).dot(m)
}

/// Sample-mean cost over `paths` independent paths. Path `i` draws from
/// stream `i` of a ChaCha8 generator seeded with `seed`, so the estimate
/// does not depend on scheduling. `Ex_k`, `Eu_k` come from [`propagate`].
pub fn simulate(p: &ProblemData, s: &ClosedLoopStrategy, paths: usize, seed: u64) -> SimulationReport {
    assert!(paths >= 1, "at least one path is required");
    let ms = propagate(p, s);
    let costs = par::map_range(paths, |i| path_cost(p, s, &ms, seed, i));
    let n = paths as f64;
    let estimate = par::pairwise_sum(&costs) / n;
    let sq: Vec<f64> = costs.iter().map(|c| (c - estimate).powi(2)).collect();
    let var = if paths > 1 {
        par::pairwise_sum(&sq) / (n - 1.0)
    } else {
        0.0
    };
    SimulationReport {
        paths,
        seed,
        estimate,
        std_error: (var / n).sqrt(),
    }
}
