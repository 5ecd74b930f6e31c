use crate::report::{matrices, matrix, num, object, tree_table, vectors};
use anyhow::Result;
use mflq::matnum;
use mflq::moments::{closed_loop_cost, propagate, simulate};
use mflq::oracle::{self, ExactOutcome, UnboundedReason};
use mflq::problem::{InfoPattern, ProblemData};
use mflq::riccati::{classify, geometric_schedule, gre_residual, solve_gre, RiccatiSolution};
use mflq::strategy::{
    detect_open_loop, finiteness_scan, synthesize_closed_loop, ClosedLoopSolution, ClosedLoopStrategy,
    ClosedLoopVerdict, Finiteness, FinitenessReport, OpenLoop,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const EXIT_OK: u8 = 0;
pub const EXIT_NEGATIVE: u8 = 2;
pub const EXIT_UNDETERMINED: u8 = 3;

/// Tolerance for oracle comparisons, relative to `max(1, |reference|)`.
const COMPARE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Check {
    Value,
    Stationarity,
    Convexity,
    Identity,
}

#[derive(Debug, Clone, Copy)]
pub struct Settings {
    pub eps0: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
}

impl Settings {
    fn schedule(&self) -> Vec<f64> {
        geometric_schedule(self.eps0, self.steps)
    }
}

pub struct Outcome {
    pub results: Value,
    pub summary: String,
    pub code: u8,
}

fn riccati_table(sol: &RiccatiSolution) -> Value {
    json!({
        "eps": num(sol.eps),
        "P": matrices(&sol.p),
        "Pi": matrices(&sol.pi),
        "Upsilon": matrices(&sol.upsilon),
        "Upsilon_bar": matrices(&sol.upsilon_bar),
        "H": matrices(&sol.h),
        "H_bar": matrices(&sol.h_bar),
        "Theta": matrices(&sol.theta),
        "Theta_bar": matrices(&sol.theta_bar),
    })
}

fn strategy_json(s: &ClosedLoopStrategy) -> Value {
    json!({
        "Theta": matrices(&s.theta),
        "Theta_bar": matrices(&s.theta_bar),
        "v": vectors(&s.v),
    })
}

fn regularity_label(sol: &ClosedLoopSolution) -> &'static str {
    if sol.regularity.is_strongly_regular() {
        "strongly regular"
    } else {
        "regular"
    }
}

fn monte_carlo(p: &ProblemData, s: &ClosedLoopStrategy, settings: &Settings) -> Option<Value> {
    (settings.paths > 0).then(|| {
        let exact = closed_loop_cost(p, s);
        let sim = simulate(p, s, settings.paths, settings.seed);
        json!({
            "paths": sim.paths,
            "seed": sim.seed,
            "estimate": num(sim.estimate),
            "std_error": num(sim.std_error),
            "exact": num(exact),
            "z_score": num(if sim.std_error > 0.0 { (sim.estimate - exact).abs() / sim.std_error } else { 0.0 }),
        })
    })
}

pub fn solve(p: &ProblemData, settings: &Settings) -> Result<Outcome> {
    let sol = solve_gre(p)?;
    let verdict = classify(&sol);
    let mut pairs = vec![
        ("riccati", riccati_table(&sol)),
        ("gre_residual", num(gre_residual(p, &sol))),
        ("regularity", serde_json::to_value(&verdict)?),
    ];
    if let Some(note) = adapted_note(p) {
        pairs.push(("note", note));
    }
    let outcome = match synthesize_closed_loop(p)? {
        ClosedLoopVerdict::Solvable(cl) => {
            pairs.push(("verdict", json!("solvable")));
            pairs.push((
                "affine",
                json!({
                    "eta": vectors(&cl.affine.eta),
                    "zeta": vectors(&cl.affine.zeta),
                    "v": vectors(&cl.affine.v),
                }),
            ));
            pairs.push(("strategy", strategy_json(&cl.strategy)));
            pairs.push(("value", serde_json::to_value(cl.value)?));
            if let Some(mc) = monte_carlo(p, &cl.strategy, settings) {
                pairs.push(("monte_carlo", mc));
            }
            Outcome {
                results: Value::Null,
                summary: format!(
                    "closed-loop solvable ({}), value {:.12}",
                    regularity_label(&cl),
                    cl.value.value
                ),
                code: EXIT_OK,
            }
        }
        ClosedLoopVerdict::Unsolvable(reason) => {
            pairs.push(("verdict", json!("unsolvable")));
            pairs.push(("reason", serde_json::to_value(&reason)?));
            Outcome {
                results: Value::Null,
                summary: format!("closed-loop unsolvable: {reason}"),
                code: EXIT_NEGATIVE,
            }
        }
    };
    Ok(Outcome {
        results: object(pairs),
        ..outcome
    })
}

pub fn classify_cmd(p: &ProblemData) -> Result<Outcome> {
    let sol = solve_gre(p)?;
    let verdict = classify(&sol);
    let label = match verdict.kind {
        k if k.is_strongly_regular() => "strongly regular",
        k if k.is_regular() => "regular",
        _ => "irregular",
    };
    let summary = format!(
        "{label}, alpha {:.6e}, {} failure(s)",
        verdict.alpha,
        verdict.failures.len()
    );
    let mut results = json!({
        "P": matrices(&sol.p),
        "Pi": matrices(&sol.pi),
        "regularity": serde_json::to_value(&verdict)?,
    });
    if let Some(note) = adapted_note(p) {
        results["note"] = note;
    }
    Ok(Outcome {
        results,
        summary,
        code: if verdict.kind.is_regular() {
            EXIT_OK
        } else {
            EXIT_NEGATIVE
        },
    })
}

fn finiteness_json(report: &FinitenessReport) -> Result<Value> {
    let mut v = serde_json::to_value(report)?;
    if let (Some((p, pi)), Value::Object(map)) = (&report.limit, &mut v) {
        map.insert("limit".into(), json!({ "P": matrix(p), "Pi": matrix(pi) }));
    }
    Ok(v)
}

fn finiteness_code(f: Finiteness) -> u8 {
    match f {
        Finiteness::Finite => EXIT_OK,
        Finiteness::Infinite => EXIT_NEGATIVE,
        Finiteness::Undetermined => EXIT_UNDETERMINED,
    }
}

/// The ε-scan speaks about predictable controls. Under the adapted pattern
/// the exact oracle decides boundedness when the tree is small enough.
fn scan_for_pattern(p: &ProblemData, schedule: &[f64]) -> Result<(FinitenessReport, Option<Value>)> {
    let mut report = finiteness_scan(p, schedule);
    if p.info != InfoPattern::Adapted {
        return Ok((report, None));
    }
    let note = match oracle::solve_exact(p) {
        Ok(exact) => {
            if exact.value().is_none() {
                report.verdict = Finiteness::Infinite;
            } else if report.verdict == Finiteness::Infinite {
                report.verdict = Finiteness::Finite;
            }
            json!({ "riccati_pattern": "predictable", "oracle": outcome_json(&exact) })
        }
        Err(e) => json!({ "riccati_pattern": "predictable", "oracle": e.to_string() }),
    };
    Ok((report, Some(note)))
}

fn adapted_note(p: &ProblemData) -> Option<Value> {
    (p.info == InfoPattern::Adapted).then(|| json!("Riccati quantities assume predictable controls"))
}

pub fn finiteness(p: &ProblemData, settings: &Settings) -> Result<Outcome> {
    let (report, note) = scan_for_pattern(p, &settings.schedule())?;
    let mut summary = format!("{:?}", report.verdict).to_lowercase();
    if let Some((lp, lpi)) = &report.limit {
        summary.push_str(&format!(
            "; at eps={:.3e} min eig P {:.9} Pi {:.9}",
            report.trace.last().map_or(f64::NAN, |s| s.eps),
            matnum::psd_check(lp, 0.0).min_eig,
            matnum::psd_check(lpi, 0.0).min_eig
        ));
    }
    let mut results = finiteness_json(&report)?;
    if let Some(note) = note {
        summary.push_str(" (adapted pattern: decided by the exact oracle)");
        results["adapted"] = note;
    }
    Ok(Outcome {
        results,
        summary,
        code: finiteness_code(report.verdict),
    })
}

pub fn open_loop(p: &ProblemData, settings: &Settings) -> Result<Outcome> {
    let schedule = settings.schedule();
    let (fin, note) = scan_for_pattern(p, &schedule)?;
    let report = detect_open_loop(p, &schedule, fin.verdict)?;
    let mut pairs = vec![
        ("finiteness", json!(format!("{:?}", fin.verdict).to_lowercase())),
        ("attempted", json!(report.attempted)),
        ("verdict", json!(report.verdict.label())),
        ("trace", serde_json::to_value(&report.trace)?),
    ];
    if let Some(note) = note {
        pairs.push(("adapted", note));
    }
    let (summary, code) = match &report.verdict {
        OpenLoop::Solvable { control, residual } => {
            pairs.push(("stationarity_residual", num(*residual)));
            pairs.push(("l2_norm", num(control.l2_norm())));
            pairs.push(("control", tree_table(control)));
            (
                format!(
                    "open-loop solvable; limit control L2 norm {:.9}, residual {residual:.2e}",
                    control.l2_norm()
                ),
                EXIT_OK,
            )
        }
        OpenLoop::Unsolvable => (
            if report.attempted {
                "open-loop unsolvable: minimizing sequence unbounded".to_string()
            } else {
                "open-loop unsolvable: value is not finite".to_string()
            },
            EXIT_NEGATIVE,
        ),
        OpenLoop::Undetermined => ("open-loop solvability undetermined".to_string(), EXIT_UNDETERMINED),
    };
    Ok(Outcome {
        results: object(pairs),
        summary,
        code,
    })
}

fn outcome_json(out: &ExactOutcome) -> Value {
    match out {
        ExactOutcome::Unique { value, min_eig, .. } => {
            json!({ "kind": "unique", "value": num(*value), "min_eig": num(*min_eig) })
        }
        ExactOutcome::Attained { value, min_eig, .. } => {
            json!({ "kind": "attained", "value": num(*value), "min_eig": num(*min_eig) })
        }
        ExactOutcome::Unbounded {
            reason,
            min_eig,
            residual,
        } => json!({
            "kind": "unbounded",
            "reason": match reason {
                UnboundedReason::NonConvex => "non_convex",
                UnboundedReason::LinearTermOutsideRange => "linear_term_outside_range",
            },
            "min_eig": num(*min_eig),
            "residual": num(*residual),
        }),
    }
}

struct Comparison {
    name: &'static str,
    lhs: f64,
    rhs: f64,
    tol: f64,
    ok: bool,
}

impl Comparison {
    fn close(name: &'static str, lhs: f64, rhs: f64) -> Self {
        let tol = COMPARE_TOL * rhs.abs().max(1.0);
        Self {
            name,
            lhs,
            rhs,
            tol,
            ok: (lhs - rhs).abs() <= tol,
        }
    }

    fn at_most(name: &'static str, lhs: f64, bound: f64) -> Self {
        Self {
            name,
            lhs,
            rhs: bound,
            tol: 0.0,
            ok: lhs <= bound,
        }
    }

    fn flag(name: &'static str, ok: bool) -> Self {
        Self {
            name,
            lhs: f64::from(u8::from(ok)),
            rhs: 1.0,
            tol: 0.0,
            ok,
        }
    }

    fn json(&self) -> Value {
        json!({
            "name": self.name,
            "lhs": num(self.lhs),
            "rhs": num(self.rhs),
            "tol": num(self.tol),
            "ok": self.ok,
        })
    }
}

pub fn oracle_cmd(p: &ProblemData, check: Check, settings: &Settings) -> Result<Outcome> {
    let mut comparisons = Vec::new();
    let mut extra = Vec::new();
    match check {
        Check::Value => {
            let exact = oracle::solve_exact(p)?;
            extra.push(("oracle", outcome_json(&exact)));
            match synthesize_closed_loop(p)? {
                ClosedLoopVerdict::Solvable(cl) => {
                    extra.push(("riccati_value", num(cl.value.value)));
                    match exact.value() {
                        Some(v) => comparisons.push(Comparison::close("riccati_vs_oracle_value", cl.value.value, v)),
                        None => comparisons.push(Comparison::flag("oracle_bounded", false)),
                    }
                }
                ClosedLoopVerdict::Unsolvable(reason) => {
                    extra.push(("closed_loop", json!(reason.to_string())));
                    let fin = finiteness_scan(p, &settings.schedule());
                    extra.push(("finiteness", json!(format!("{:?}", fin.verdict).to_lowercase())));
                    let bounded = exact.value().is_some();
                    let agrees = match fin.verdict {
                        Finiteness::Finite => bounded,
                        Finiteness::Infinite => !bounded,
                        Finiteness::Undetermined => false,
                    };
                    comparisons.push(Comparison::flag("finiteness_vs_oracle_boundedness", agrees));
                }
            }
        }
        Check::Stationarity => {
            let exact = oracle::solve_exact(p)?;
            extra.push(("oracle", outcome_json(&exact)));
            if let Some(u) = exact.control() {
                let r = oracle::stationarity_residual(p, u)?;
                comparisons.push(Comparison::at_most(
                    "oracle_minimizer_residual",
                    r,
                    oracle::RESIDUAL_TOL,
                ));
            }
            if let ClosedLoopVerdict::Solvable(cl) = synthesize_closed_loop(p)? {
                let (_, u) = oracle::rollout_closed_loop(p, &cl.strategy)?;
                let r = oracle::stationarity_residual(p, &u)?;
                comparisons.push(Comparison::at_most("closed_loop_residual", r, oracle::RESIDUAL_TOL));
            }
            if comparisons.is_empty() {
                comparisons.push(Comparison::flag("candidate_available", false));
            }
        }
        Check::Convexity => {
            let model = oracle::assemble_quadratic(p)?;
            let min_eig = model.min_eig();
            let convex = min_eig > oracle::EIG_TOL * model.m.amax().max(1.0);
            let verdict = classify(&solve_gre(p)?);
            extra.push(("stacked_dim", json!(model.dim())));
            extra.push(("min_eig", num(min_eig)));
            extra.push(("uniformly_convex", json!(convex)));
            extra.push(("alpha", num(verdict.alpha)));
            extra.push(("strongly_regular", json!(verdict.kind.is_strongly_regular())));
            comparisons.push(Comparison::flag(
                "convexity_matches_strong_regularity",
                convex == verdict.kind.is_strongly_regular(),
            ));
        }
        Check::Identity => {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            let mut zero_start = p.initial.clone();
            for a in &mut zero_start.atoms {
                a.value.fill(0.0);
            }
            let hom = p.homogeneous_part().with_initial(zero_start);
            let draw = |rng: &mut ChaCha8Rng| {
                oracle::control_from_fn(p, |_, _, _| {
                    nalgebra::DVector::from_fn(p.dims.m, |_, _| rng.random_range(-1.0..1.0))
                })
            };
            let mut worst: f64 = 0.0;
            for _ in 0..3 {
                let u = draw(&mut rng);
                let v = draw(&mut rng);
                let lambda = rng.random_range(-2.0..2.0);
                let ju = oracle::exact_cost(p, &u)?;
                let slope = 2.0 * oracle::gradient(p, &u)?.inner(&v);
                let lhs = oracle::exact_cost(p, &u.axpy(lambda, &v))?;
                let rhs = ju + lambda * lambda * oracle::exact_cost(&hom, &v)? + lambda * slope;
                worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
            }
            comparisons.push(Comparison::at_most("quadratic_expansion_rel_err", worst, 1e-10));
            let u = oracle::zero_control(p);
            let x = oracle::rollout(p, &u)?;
            let y = oracle::fbsde_backward(p, &u, &x);
            let slope = 2.0 * oracle::half_gradient(p, &u, &x, &y).inner(&u);
            comparisons.push(Comparison::close("zero_direction_slope", slope, 0.0));
        }
    }
    let ok = comparisons.iter().all(|c| c.ok);
    let failed: Vec<&str> = comparisons.iter().filter(|c| !c.ok).map(|c| c.name).collect();
    let mut pairs = vec![
        ("check", json!(format!("{check:?}").to_lowercase())),
        (
            "comparisons",
            Value::Array(comparisons.iter().map(Comparison::json).collect()),
        ),
        ("passed", json!(ok)),
    ];
    pairs.extend(extra);
    Ok(Outcome {
        results: object(pairs),
        summary: if ok {
            format!(
                "oracle {check:?} check: all {} comparison(s) within tolerance",
                comparisons.len()
            )
            .to_lowercase()
        } else {
            format!("oracle {check:?} check failed: {}", failed.join(", ")).to_lowercase()
        },
        code: if ok { EXIT_OK } else { EXIT_NEGATIVE },
    })
}

pub fn simulate_cmd(p: &ProblemData, settings: &Settings) -> Result<Outcome> {
    let cl = match synthesize_closed_loop(p)? {
        ClosedLoopVerdict::Solvable(cl) => cl,
        ClosedLoopVerdict::Unsolvable(reason) => {
            return Ok(Outcome {
                results: json!({ "verdict": "unsolvable", "reason": serde_json::to_value(&reason)? }),
                summary: format!("no optimal closed-loop strategy to simulate: {reason}"),
                code: EXIT_NEGATIVE,
            })
        }
    };
    let ms = propagate(p, &cl.strategy);
    let cost = closed_loop_cost(p, &cl.strategy);
    let covariances: Vec<_> = (0..ms.mean.len()).map(|t| ms.covariance(t)).collect();
    let mut pairs = vec![
        ("strategy", strategy_json(&cl.strategy)),
        ("mean", vectors(&ms.mean)),
        ("covariance", matrices(&covariances)),
        ("control_mean", vectors(&ms.control_mean)),
        ("cost", num(cost)),
        ("value", num(cl.value.value)),
    ];
    let mut summary = format!("closed-loop cost {cost:.12}");
    if let Some(mc) = monte_carlo(p, &cl.strategy, settings) {
        summary.push_str(&format!(
            "; Monte Carlo {:.9} +/- {:.2e} over {} paths",
            mc["estimate"].as_f64().unwrap_or(f64::NAN),
            mc["std_error"].as_f64().unwrap_or(f64::NAN),
            settings.paths
        ));
        pairs.push(("monte_carlo", mc));
    }
    Ok(Outcome {
        results: object(pairs),
        summary,
        code: EXIT_OK,
    })
}
