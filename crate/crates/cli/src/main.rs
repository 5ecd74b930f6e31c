mod commands;
mod report;

use clap::{Args, Parser, Subcommand};
use commands::{Check, Settings};
use mflq::problem::{load_problem, InfoPattern};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

const EXIT_ERROR: u8 = 1;

/// Mean-field stochastic LQ solver.
#[derive(Debug, Parser)]
#[command(name = "mflq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Problem file (JSON).
    problem: PathBuf,
    /// Largest control penalty in the ε-scan.
    #[arg(long, default_value_t = 1.0)]
    eps0: f64,
    /// Number of halvings of ε after `eps0`.
    #[arg(long, default_value_t = 40)]
    steps: usize,
    /// Monte Carlo paths; 0 disables simulation.
    #[arg(long, default_value_t = 0)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the information pattern in the file.
    #[arg(long)]
    info: Option<InfoPattern>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Riccati solve, classification, affine terms, strategy and value.
    Solve(Common),
    /// Regularity verdict for the Riccati solution.
    Classify(Common),
    /// ε-scan finiteness verdict.
    Finiteness(Common),
    /// Minimizing sequence and open-loop solvability verdict.
    OpenLoop(Common),
    /// Exact tree-oracle cross-checks.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        check: Check,
    },
    /// Moments of the optimal closed-loop system and optional Monte Carlo.
    Simulate(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Classify(_) => "classify",
            Command::Finiteness(_) => "finiteness",
            Command::OpenLoop(_) => "open-loop",
            Command::Oracle { .. } => "oracle",
            Command::Simulate(_) => "simulate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Solve(c)
            | Command::Classify(c)
            | Command::Finiteness(c)
            | Command::OpenLoop(c)
            | Command::Simulate(c)
            | Command::Oracle { common: c, .. } => c,
        }
    }
}

fn configure_threads() {
    let Some(n) = std::env::var("MFLQ_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) else {
        return;
    };
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    let start = Instant::now();
    let common = cli.command.common();
    if !(common.eps0 > 0.0 && common.eps0.is_finite()) {
        anyhow::bail!("--eps0 must be positive and finite");
    }
    let mut p = load_problem(&common.problem)?;
    if let Some(info) = common.info {
        p.info = info;
    }
    let settings = Settings {
        eps0: common.eps0,
        steps: common.steps,
        paths: common.paths,
        seed: common.seed,
    };
    let outcome = match &cli.command {
        Command::Solve(_) => commands::solve(&p, &settings)?,
        Command::Classify(_) => commands::classify_cmd(&p)?,
        Command::Finiteness(_) => commands::finiteness(&p, &settings)?,
        Command::OpenLoop(_) => commands::open_loop(&p, &settings)?,
        Command::Oracle { check, .. } => commands::oracle_cmd(&p, *check, &settings)?,
        Command::Simulate(_) => commands::simulate_cmd(&p, &settings)?,
    };
    let mut command = json!({
        "verb": cli.command.name(),
        "problem": common.problem.display().to_string(),
        "eps0": report::num(settings.eps0),
        "steps": settings.steps,
        "paths": settings.paths,
        "seed": settings.seed,
        "info": common.info.map(|i| i.to_string()),
    });
    if let Command::Oracle { check, .. } = &cli.command {
        command["check"] = json!(format!("{check:?}").to_lowercase());
    }
    let run_report = report::object(vec![
        ("tool", json!({ "name": "mflq", "version": env!("CARGO_PKG_VERSION") })),
        ("command", command),
        ("problem", report::digest(&p)),
        ("results", outcome.results),
        ("exit_code", json!(outcome.code)),
    ]);
    print!("{}", report::render(&run_report));
    eprintln!("{}: {}", cli.command.name(), outcome.summary);
    if p.info == InfoPattern::Adapted
        && matches!(
            cli.command,
            Command::Solve(_) | Command::Classify(_) | Command::Simulate(_)
        )
    {
        eprintln!("note: the Riccati analysis assumes predictable controls");
    }
    eprintln!("elapsed: {:.3} s", start.elapsed().as_secs_f64());
    Ok(outcome.code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
