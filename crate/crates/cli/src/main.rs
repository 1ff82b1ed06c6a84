use std::path::PathBuf;
use std::process::ExitCode;

use aoii_cli::config::Format;
use aoii_cli::{run, Command, Overrides};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aoii", version, about = "Threshold transmission policies for age of incorrect information")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate an explicit policy analytically.
    Analyze(Common),
    /// Find the best policy of a family under a rate budget.
    Optimize(Common),
    /// Monte Carlo estimate for an explicit policy.
    Simulate(Common),
    /// Evaluate or optimize over a grid of thresholds, budgets or state counts.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Simulation seed (overrides simulation.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps; 0 uses all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write a gnuplot script next to sweep results.
    #[arg(long)]
    emit_plot_script: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (cmd, args) = match cli.cmd {
        Cmd::Analyze(a) => (Command::Analyze, a),
        Cmd::Optimize(a) => (Command::Optimize, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
    };
    let o = Overrides { format: args.format, seed: args.seed, jobs: args.jobs, plot_script: args.emit_plot_script };
    match run(cmd, &args.config, args.out.as_deref(), &o) {
        Ok((report, written)) => {
            println!("{}", report.summary);
            for p in written {
                log::info!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
