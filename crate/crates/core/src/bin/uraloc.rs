use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uraloc::report::median;
use uraloc::scenario::{self, LocateRun, Scenario};
use uraloc::Error;

#[derive(Parser)]
#[command(name = "uraloc", version, about = "Switched-array CSI simulation, calibration, AoA and localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate captures and write them with a ground-truth sidecar.
    Simulate(Common),
    /// Calibrate a simulated capture and write the profile.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Intra-group profile to use instead of the broadside capture.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Estimate angles of arrival with every configured method.
    Aoa {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Geometric and direct-position fixes, or paired trials.
    Locate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Localize along a trajectory and smooth it.
    Track(Common),
    /// Time every stage over repeated runs.
    Bench {
        /// One or more scenario files.
        #[arg(long = "scenario", required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, Error> {
    let s = Scenario::load(path)?;
    Ok(match seed {
        Some(seed) => s.with_seed(seed),
        None => s,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(c) => {
            let files = scenario::run_simulate(&load(&c.scenario, c.seed)?, &c.out)?;
            println!("wrote {} files to {}", files.len(), c.out.display());
        }
        Command::Calibrate { common: c, profile } => {
            let cal = scenario::run_calibrate(&load(&c.scenario, c.seed)?, &c.out, profile.as_deref())?;
            for w in &cal.warnings {
                eprintln!("warning: {w}");
            }
            println!("calibrated {} arrays into {}", cal.captures.len(), c.out.display());
        }
        Command::Aoa { common: c, profile } => {
            for r in scenario::run_aoa(&load(&c.scenario, c.seed)?, &c.out, profile.as_deref())? {
                for e in &r.result.estimates {
                    let (t, p) = e.direction.to_degrees();
                    println!("array {} {}: theta {t:.2} deg, phi {p:.2} deg", r.array_id, r.method.name());
                }
                if r.result.shortfall {
                    eprintln!("warning: array {} {}: fewer peaks than sources", r.array_id, r.method.name());
                }
            }
        }
        Command::Locate { common: c, profile } => match scenario::run_locate(&load(&c.scenario, c.seed)?, &c.out, profile.as_deref())? {
            LocateRun::Single(o) => {
                let (g, d) = (o.gp.position, o.dpd.position);
                println!("gp  ({:.4}, {:.4}, {:.4}) m", g.x, g.y, g.z);
                println!("dpd ({:.4}, {:.4}, {:.4}) m after {} iterations", d.x, d.y, d.z, o.dpd.iterations);
            }
            LocateRun::Trials(rows) => {
                let gp: Vec<f64> = rows.iter().map(|r| r.gp_error()).collect();
                let dpd: Vec<f64> = rows.iter().map(|r| r.dpd_error()).collect();
                println!(
                    "{} trials: median error gp {:.4} m, dpd {:.4} m",
                    rows.len(),
                    median(&gp).unwrap_or(f64::NAN),
                    median(&dpd).unwrap_or(f64::NAN)
                );
            }
        },
        Command::Track(c) => {
            let t = scenario::run_track(&load(&c.scenario, c.seed)?, &c.out)?;
            println!(
                "{} positions: median error raw {:.4} m, smoothed {:.4} m",
                t.truth.len(),
                median(&t.raw_errors()).unwrap_or(f64::NAN),
                median(&t.smoothed_errors()).unwrap_or(f64::NAN)
            );
        }
        Command::Bench { scenarios, seed, out } => {
            let list = scenarios.iter().map(|p| load(p, seed)).collect::<Result<Vec<_>, _>>()?;
            for s in scenario::run_bench(&list, &out)?.summary() {
                println!("{:<32} {:>4} runs  median {:.6} s", s.stage, s.runs, s.median_s);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
