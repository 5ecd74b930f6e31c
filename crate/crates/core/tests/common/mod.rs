#![allow(dead_code)]

use mflq::problem::{InitialDistribution, ProblemData};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

pub fn psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let l = mat(rng, n, n, scale);
    &l * l.transpose()
}

pub fn sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = mat(rng, n, n, scale);
    (&a + a.transpose()) * 0.5
}

/// Two-atom initial law so deviation controls exist at time `l`.
pub fn two_atoms(rng: &mut ChaCha8Rng, n: usize) -> InitialDistribution {
    let mut init = InitialDistribution::symmetric_pair(vec(rng, n, 1.0));
    let shift = vec(rng, n, 0.5);
    for a in &mut init.atoms {
        a.value += &shift;
    }
    init.atoms[0].prob = rng.random_range(0.3..0.7);
    init.atoms[1].prob = 1.0 - init.atoms[0].prob;
    init
}

pub fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    let n = rng.random_range(1..=2);
    let m = rng.random_range(1..=2);
    let l = rng.random_range(0..=1);
    let steps = rng.random_range(1..=4);
    (n, m, l, l + steps)
}

fn random_dynamics(rng: &mut ChaCha8Rng, p: &mut ProblemData) {
    let (n, m) = (p.dims.n, p.dims.m);
    for d in &mut p.dynamics {
        d.a = mat(rng, n, n, 1.0);
        d.a_bar = mat(rng, n, n, 0.5);
        d.b = mat(rng, n, m, 1.0);
        d.b_bar = mat(rng, n, m, 0.5);
        d.c = mat(rng, n, n, 0.7);
        d.c_bar = mat(rng, n, n, 0.3);
        d.d = mat(rng, n, m, 0.7);
        d.d_bar = mat(rng, n, m, 0.3);
    }
}

/// Homogeneous instance satisfying the standard definiteness condition:
/// `R ≻ 0`, `Q - S'R⁻¹S ⪰ 0`, `G ⪰ 0`, and the same for the barred sums.
pub fn standard(rng: &mut ChaCha8Rng) -> ProblemData {
    let (n, m, l, horizon) = dims(rng);
    let mut p = ProblemData::zeros(n, m, l, horizon);
    random_dynamics(rng, &mut p);
    for c in &mut p.cost {
        let r = psd(rng, m, 1.0) + DMatrix::identity(m, m) * 0.2;
        let s = mat(rng, m, n, 0.5);
        let q = s.transpose() * r.clone().try_inverse().unwrap() * &s + psd(rng, n, 0.5);
        let r_sum = psd(rng, m, 1.0) + DMatrix::identity(m, m) * 0.2;
        let s_sum = mat(rng, m, n, 0.5);
        let q_sum = s_sum.transpose() * r_sum.clone().try_inverse().unwrap() * &s_sum + psd(rng, n, 0.5);
        c.r_bar = &r_sum - &r;
        c.s_bar = &s_sum - &s;
        c.q_bar = &q_sum - &q;
        c.r = r;
        c.s = s;
        c.q = q;
    }
    p.terminal.g = psd(rng, n, 1.0);
    p.terminal.g_bar = psd(rng, n, 1.0) - &p.terminal.g;
    p.initial = two_atoms(rng, n);
    p
}

/// Homogeneous instance whose control weights are indefinite.
pub fn indefinite(rng: &mut ChaCha8Rng) -> ProblemData {
    let (n, m, l, horizon) = dims(rng);
    let mut p = ProblemData::zeros(n, m, l, horizon);
    random_dynamics(rng, &mut p);
    for d in &mut p.dynamics {
        d.d += mat(rng, n, m, 1.0);
    }
    for c in &mut p.cost {
        c.r = sym(rng, m, 1.0) - DMatrix::identity(m, m) * 0.3;
        c.r_bar = sym(rng, m, 0.5);
        c.q = sym(rng, n, 1.0);
        c.q_bar = sym(rng, n, 0.5);
        c.s = mat(rng, m, n, 0.5);
        c.s_bar = mat(rng, m, n, 0.3);
    }
    p.terminal.g = psd(rng, n, 1.5) + DMatrix::identity(n, n) * 0.5;
    p.terminal.g_bar = sym(rng, n, 1.0);
    p.initial = two_atoms(rng, n);
    p
}

/// Adds random inhomogeneous data.
pub fn with_affine(rng: &mut ChaCha8Rng, p: &ProblemData) -> ProblemData {
    let mut p = p.clone();
    let (n, m) = (p.dims.n, p.dims.m);
    for d in &mut p.dynamics {
        d.drift = vec(rng, n, 0.5);
        d.diffusion = vec(rng, n, 0.5);
    }
    for c in &mut p.cost {
        c.q_lin = vec(rng, n, 0.5);
        c.q_bar_lin = vec(rng, n, 0.5);
        c.rho = vec(rng, m, 0.5);
        c.rho_bar = vec(rng, m, 0.5);
    }
    p.terminal.g_lin = vec(rng, n, 0.5);
    p.terminal.g_bar_lin = vec(rng, n, 0.5);
    p
}
