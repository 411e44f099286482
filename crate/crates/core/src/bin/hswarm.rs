use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use harmonic_swarm::cli::{preset, run_scenario, Mode, Scenario, EXIT_PARTIAL};
use harmonic_swarm::Error;

/// Harmonic attractor swarms: spectra, exact dynamics, particle swarms and
/// shape reconstruction on line and grid environments.
///
/// Grid renders (*.txt) use '#' > 0.5, '+' > 0.1, '.' |x| <= 0.1,
/// '-' >= -0.5 and '=' < -0.5 of the largest magnitude; '%' is an obstacle.
///
/// Exit codes: 0 success, 2 usage or input error, 3 numerical failure,
/// 4 a run hit its step limit (unless --allow-partial).
#[derive(Debug, Parser)]
#[command(name = "hswarm", version)]
struct Args {
    /// Scenario file (key = value lines under [section] headers).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in scenario: fig1, fig2, fig3, fig4, fig5 or fig7.
    #[arg(long)]
    preset: Option<String>,

    /// Override the scenario mode.
    #[arg(long, value_parser = ["eigen", "dynamics", "swarm-unweighted", "swarm-weighted", "reconstruct"])]
    mode: Option<String>,

    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads for robot-level parallelism; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,

    /// Exit 0 even when an iteration stops at its step limit.
    #[arg(long)]
    allow_partial: bool,

    /// Replace particle swarms by their infinite-swarm limit.
    #[arg(long)]
    exact_dynamics: bool,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn load(args: &Args) -> Result<Scenario, Error> {
    let mut s = match (&args.config, &args.preset) {
        (Some(path), _) => Scenario::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(Error::Config("give --config or --preset".into())),
    };
    if let Some(m) = &args.mode {
        s.mode = m.parse::<Mode>()?;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if args.exact_dynamics {
        s.exact = true;
    }
    s.validate()?;
    Ok(s)
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(t) = args.threads {
        #[cfg(feature = "parallel")]
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("hswarm: cannot set up {t} threads: {e}");
            return ExitCode::from(2);
        }
        #[cfg(not(feature = "parallel"))]
        eprintln!("hswarm: built without the parallel feature; ignoring --threads {t}");
    }
    let scenario = match load(&args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("hswarm: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let meta = vec![(
        "threads",
        args.threads.map_or("default".to_owned(), |t| t.to_string()),
    )];
    match run_scenario(&scenario, &args.out, &meta) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("hswarm: warning: {w}");
            }
            println!(
                "wrote {} files to {}",
                outcome.files.len(),
                args.out.display()
            );
            if outcome.partial && !args.allow_partial {
                eprintln!(
                    "hswarm: stopped at the step limit; rerun with --allow-partial to accept"
                );
                return ExitCode::from(EXIT_PARTIAL as u8);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hswarm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
