use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Parser, Subcommand};
use mesch::sim::{self, Ablation};
use mesch::Result;

#[derive(Parser)]
#[command(name = "mesch", version, about = "Recharge scheduling with a mobile charging station")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one scenario and write its logs.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Zero the charger's process noise.
        #[arg(long)]
        deterministic_charger: bool,
        /// Disable one scheduling check (implies --allow-violations).
        #[arg(long)]
        ablate: Option<Ablation>,
        /// Override the simulated duration, s.
        #[arg(long)]
        duration: Option<f64>,
        /// Record monitor violations instead of aborting.
        #[arg(long)]
        allow_violations: bool,
    },
    /// Recompute metrics from a log directory.
    Metrics { log_dir: PathBuf },
    /// Run seeds 0..n and summarize.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Write plot.gp into a log directory and render it if gnuplot is installed.
    Plot { log_dir: PathBuf },
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn plot(dir: &Path) -> Result<()> {
    let log = sim::read_log(dir)?;
    sim::write_plot_script(dir, log.scenario.robots.len())?;
    match Command::new("gnuplot").arg("plot.gp").current_dir(dir).status() {
        Ok(s) if s.success() => println!("wrote {}", dir.join("plot.png").display()),
        _ => println!("wrote {}; run `gnuplot plot.gp` there to render", dir.join("plot.gp").display()),
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            out,
            deterministic_charger,
            ablate,
            duration,
            allow_violations,
        } => {
            let mut s = sim::load_scenario(&scenario)?;
            s.seed = seed;
            s.deterministic_charger |= deterministic_charger;
            s.allow_violations |= allow_violations;
            if ablate.is_some() {
                s.ablate = ablate;
            }
            if let Some(d) = duration {
                s.duration = d;
            }
            let log = sim::run(&s)?;
            let m = sim::export(&log, &out)?;
            print_json(&m);
        }
        Cmd::Metrics { log_dir } => print_json(&sim::metrics(&sim::read_log(&log_dir)?)),
        Cmd::Sweep {
            scenario,
            seeds,
            duration,
        } => {
            let mut s = sim::load_scenario(&scenario)?;
            if let Some(d) = duration {
                s.duration = d;
            }
            print_json(&sim::sweep(&s, seeds));
        }
        Cmd::Plot { log_dir } => plot(&log_dir)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
