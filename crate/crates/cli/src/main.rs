use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use sgm_core::commands::{self, CmdError};
use sgm_core::io::{self, IcSpec, RunConfig};
use sgm_core::singular::Criterion;

#[derive(Parser)]
#[command(name = "sgm", version, about = "Surface growth model solver and regularity diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Y,
    E,
    A,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Y => Criterion::Y,
            CriterionArg::E => Criterion::E,
            CriterionArg::A => Criterion::A,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a run and write trajectory.sgt1, run.json and config.json.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// mode:k,amp | random:seed,n_modes,amp | file:path
        #[arg(long)]
        ic: Option<IcSpec>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        n_grid: Option<usize>,
        /// Drop the nonlinear term.
        #[arg(long)]
        linear: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scan a trajectory and write report.json and cylinder_stats.csv.
    Analyze {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "e")]
        criterion: CriterionArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Treat the trajectory as a run without the nonlinear term.
        #[arg(long)]
        linear: bool,
    },
    /// Check energy, mean and (for linear runs) exact decay of a trajectory.
    Verify {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        linear: bool,
    },
    /// Campanato seminorm and Hölder fit of an SGT1 file or x,t,value CSV.
    Campanato {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        p: f64,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
    },
    /// Box-counting dimension of an x,t point CSV.
    Dim {
        #[arg(long)]
        points: PathBuf,
        #[arg(long, value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p).map_err(CmdError::from)?),
        None => Ok(RunConfig::default()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value).context("serializing report")?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, ic, tau, t_end, n_grid, linear, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(ic) = ic {
                cfg.ic = ic;
            }
            if let Some(tau) = tau {
                cfg.solver.tau = tau;
            }
            if let Some(t) = t_end {
                cfg.solver.t_end = t;
            }
            if let Some(n) = n_grid {
                cfg.n_grid = n;
            }
            if linear {
                cfg.solver.nonlinear = false;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let res = commands::cmd_simulate(&cfg)?;
            let steps = res.trajectory.steps();
            println!(
                "wrote {} ({} frames, max Picard iterations {})",
                res.traj_path.display(),
                res.trajectory.frames().len(),
                steps.iter().map(|s| s.picard_iters).max().unwrap_or(0)
            );
        }
        Command::Analyze { traj, config, criterion, out, linear } => {
            let cfg = load_config(config.as_deref())?;
            let trajectory = commands::load_trajectory(&traj, linear.then_some(true))?;
            let out_dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let res = commands::cmd_analyze(&trajectory, &cfg, criterion.into(), &out_dir)?;
            let reg = &res.report.regularity;
            println!(
                "{} suspect, {} regular, {} unclassifiable; dimension estimate {:.3}",
                reg.suspect_points.len(),
                reg.regular,
                reg.unclassifiable,
                reg.dimension_estimate
            );
            if let Some(p1) = reg.p1_upper {
                println!("P1 upper estimate {p1:.4e}");
            }
            for w in reg.warnings.iter().chain(&res.report.warnings) {
                eprintln!("warning: {w}");
            }
            println!("wrote {} and {}", res.report_path.display(), res.stats_path.display());
        }
        Command::Verify { traj, linear } => {
            let trajectory = commands::load_trajectory(&traj, linear.then_some(true))?;
            let rep = commands::cmd_verify(&trajectory)?;
            println!("{}", rep.summary());
            if !rep.passed {
                let failed: Vec<&str> =
                    rep.checks.iter().filter(|c| !c.passed && !c.informational).map(|c| c.detail.as_str()).collect();
                return Err(CmdError::VerifyFailed(failed.join("; ")).into());
            }
            println!("PASS");
        }
        Command::Campanato { input, p, beta } => {
            let field = commands::load_sampled_field(&input)?;
            print_json(&commands::cmd_campanato(&field, p, beta)?)?;
        }
        Command::Dim { points, deltas } => {
            let pts = io::read_points_csv(&points).map_err(CmdError::from)?;
            print_json(&commands::cmd_dim(&pts, deltas.as_deref())?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CmdError>().map_or(4, CmdError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
