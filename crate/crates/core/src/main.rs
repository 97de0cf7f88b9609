use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sizepop::adjoint::solve_adjoint;
use sizepop::forward::solve_state;
use sizepop::io::{load_scenario, read_control, time_series, RunOutput};
use sizepop::optimizer::{contraction_diagnostics, optimize, sample_controls, Status};
use sizepop::oracles::{run_gradcheck, run_oracles, OracleOptions};
use sizepop::{Error, Scenario};

#[derive(Parser)]
#[command(name = "sizepop", version, about = "Size-structured population simulation and optimal birth control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario JSON file, or `preset:<name>` (smooth, transport, tiny).
    #[arg(long)]
    scenario: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "sizepop-out")]
    out: PathBuf,
    /// Seed for randomized diagnostics (overrides the scenario's).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the state equation for a control.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Constant control value or control CSV file.
        #[arg(long, default_value = "0")]
        beta: String,
    },
    /// Solve the state and adjoint equations for a control.
    Adjoint {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "0")]
        beta: String,
    },
    /// Run the projected fixed-point iteration for the optimal control.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        relax: Option<f64>,
    },
    /// Compare adjoint gradients with central differences of the cost.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of random directions.
        #[arg(long, default_value_t = 10)]
        directions: usize,
    },
    /// Run the built-in verification oracles.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of oracles to run.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        /// Corrupt the transposed step (checks that the oracle notices).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

enum Failure {
    Error(Error),
    Oracle,
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn load(common: &Common, required: bool) -> Result<Option<(Scenario, String)>, Failure> {
    let Some(arg) = common.scenario.as_deref() else {
        if required {
            return Err(Error::Config("--scenario required".into()).into());
        }
        return Ok(None);
    };
    let mut sc = load_scenario(arg)?;
    if let Some(seed) = common.seed {
        sc.tolerances.seed = seed;
    }
    Ok(Some((sc, arg.to_string())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { common, beta } => {
            let (sc, name) = load(&common, true)?.expect("required");
            let sc = sc.validate()?;
            let control = read_control(&beta, &sc)?;
            let st = solve_state(&sc, &control)?;
            let mut out = RunOutput::create("simulate", &name, &common.out, sc.tolerances.seed)?;
            out.option("beta", beta);
            out.write_field("p.csv", &st.p)?;
            out.write_field("newborns.csv", &st.newborn_density)?;
            out.write_field("population.csv", &time_series(sc.grid, &st.total_population)?)?;
            out.finish()?;
            println!("P(T) = {:.10e}", st.total_population.last().copied().unwrap_or(0.0));
        }
        Command::Adjoint { common, beta } => {
            let (sc, name) = load(&common, true)?.expect("required");
            let sc = sc.validate()?;
            let control = read_control(&beta, &sc)?;
            let st = solve_state(&sc, &control)?;
            let adj = solve_adjoint(&sc, &control, &st)?;
            let mut out = RunOutput::create("adjoint", &name, &common.out, sc.tolerances.seed)?;
            out.option("beta", beta);
            out.write_field("phi.csv", &adj.phi)?;
            out.write_field("phi0.csv", &adj.phi_at_zero)?;
            out.finish()?;
            println!("sup|phi| = {:.6e}", adj.phi.sup_norm());
        }
        Command::Optimize { common, max_iters, tol, relax } => {
            let (mut sc, name) = load(&common, true)?.expect("required");
            if let Some(n) = max_iters {
                sc.tolerances.max_iters = n;
            }
            if let Some(t) = tol {
                sc.tolerances.tol = t;
            }
            if let Some(w) = relax {
                sc.tolerances.relax = w;
            }
            let sc = sc.validate()?;
            let mut report = optimize(&sc)?;
            let samples = sample_controls(&sc, sc.tolerances.samples.max(2), sc.tolerances.seed);
            report.contraction = contraction_diagnostics(&sc, &samples).ok();
            let mut out = RunOutput::create("optimize", &name, &common.out, sc.tolerances.seed)?;
            out.option("max_iters", sc.tolerances.max_iters);
            out.option("tol", sc.tolerances.tol);
            out.option("relax", sc.tolerances.relax);
            out.write_field("beta_opt.csv", &report.beta_opt)?;
            out.write_json("report.json", &report.to_json())?;
            out.finish()?;
            println!(
                "status {:?} after {} iterations, J = {:.10e}",
                report.status,
                report.iterations(),
                report.j_history.last().copied().unwrap_or(f64::NAN)
            );
            if report.status == Status::Diverged {
                return Err(Failure::Numerical("fixed-point iteration diverged".into()));
            }
        }
        Command::Gradcheck { common, directions } => {
            let (mut sc, name) = match load(&common, false)? {
                Some(x) => x,
                None => (sizepop::presets::smooth(sizepop::Grid3::unit(20, 20, 10)), "preset:smooth".into()),
            };
            if let Some(seed) = common.seed {
                sc.tolerances.seed = seed;
            }
            let sc = sc.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(sc.tolerances.seed);
            let rows = run_gradcheck(&sc, directions, &mut rng)?;
            println!("{:>4}  {:>22}  {:>22}  {:>10}  result", "dir", "adjoint", "finite difference", "rel error");
            let mut ok = true;
            for (n, r) in rows.iter().enumerate() {
                let pass = r.rel_error < 1e-6;
                ok &= pass;
                println!(
                    "{n:>4}  {:>22.15e}  {:>22.15e}  {:>10.2e}  {}",
                    r.adjoint,
                    r.finite_difference,
                    r.rel_error,
                    if pass { "pass" } else { "FAIL" }
                );
            }
            let mut out = RunOutput::create("gradcheck", &name, &common.out, sc.tolerances.seed)?;
            out.option("directions", directions);
            out.write_json("gradcheck.json", &serde_json::to_value(&rows).expect("serializable"))?;
            out.finish()?;
            if !ok {
                return Err(Failure::Oracle);
            }
        }
        Command::Oracle { common, only, inject_fault } => {
            let loaded = load(&common, false)?;
            let seed = common.seed.or(loaded.as_ref().map(|(s, _)| s.tolerances.seed)).unwrap_or(42);
            let name = loaded.as_ref().map_or("built-in".to_string(), |(_, n)| n.clone());
            let scenario = loaded.map(|(s, _)| s.validate()).transpose()?;
            let opts = OracleOptions {
                scenario,
                only: only.clone(),
                seed,
                fault_adjoint: inject_fault,
            };
            let report = run_oracles(&opts)?;
            for r in &report.results {
                println!(
                    "{:<18} {}  measured {:.3e}  tolerance {:.1e}  {}",
                    r.name,
                    if r.passed { "pass" } else { "FAIL" },
                    r.measured,
                    r.tolerance,
                    r.detail
                );
            }
            let mut out = RunOutput::create("oracle", &name, &common.out, seed)?;
            out.option("only", only);
            out.option("inject_fault", inject_fault);
            out.write_json("oracle_report.json", &serde_json::to_value(&report).expect("serializable"))?;
            out.finish()?;
            if !report.all_passed() {
                return Err(Failure::Oracle);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Oracle) => {
            eprintln!("verification failed");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
