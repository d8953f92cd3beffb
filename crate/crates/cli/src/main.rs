use std::fs;
use std::panic;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use dreamsched::cost_model::{format_cost_report, period_objective};
use dreamsched::profile::{load_profile, save_profile, synth_profile, ModelProfile, Regime};
use dreamsched::schedule::{format_schedule, load_schedule, save_schedule};
use dreamsched::scheduler::{
    brute_force_candidates, bubble_fill, format_scaling_csv, relative_gap, scaling_table, schedule_brute_force,
    schedule_dfs,
};
use dreamsched::simulator::{compare_modes, export_trace, format_comparison, simulate_run, Mode};
use dreamsched::trainer::{format_summary, load_experiment, run_training, write_trace_csv};
use dreamsched::{Error, Exec, Result};

/// Layer-wise partial synchronization scheduling for local SGD.
#[derive(Parser)]
#[command(name = "dreamsched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize or inspect layer profiles.
    #[command(subcommand)]
    Profile(ProfileCmd),
    /// Search a sync schedule and add bubble filling.
    Schedule(ScheduleArgs),
    /// Compare the search against brute force.
    Oracle(OracleArgs),
    /// Replay a run and optionally write a trace.
    Simulate(SimulateArgs),
    /// Run a convergence experiment from a config file.
    Train(TrainArgs),
    /// Four-mode makespan report.
    Compare(CompareArgs),
    /// Scaling benchmarks.
    #[command(subcommand)]
    Bench(BenchCmd),
}

#[derive(Subcommand)]
enum ProfileCmd {
    /// Write a synthetic profile.
    Gen {
        #[arg(long)]
        layers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "balanced")]
        regime: Regime,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a profile and print its totals.
    Check {
        #[arg(long)]
        profile: PathBuf,
    },
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long = "H")]
    period: usize,
    /// Schedule file to write; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_fill: bool,
    /// Print per-iteration terms and the search decisions.
    #[arg(long)]
    explain: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long = "H")]
    period: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    mode: Mode,
    /// Schedule for plsgd; searched with `--H` when omitted.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long = "H")]
    period: Option<usize>,
    #[arg(long)]
    iters: u64,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long = "H")]
    period: usize,
    #[arg(long)]
    iters: u64,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Search against brute force for L = H..=max-layers, as CSV.
    Sched {
        #[arg(long)]
        max_layers: usize,
        #[arg(long = "H", default_value_t = 5)]
        period: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "comm-heavy")]
        regime: Regime,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn profile_summary(p: &ModelProfile) -> String {
    format!(
        "label={}\nlayers={}\ntotal_fp={:?}\ntotal_bp={:?}\ntotal_comm={:?}\n",
        p.label(),
        p.num_layers(),
        p.total_fp(),
        p.total_bp(),
        p.total_comm()
    )
}

fn run(cli: Cli) -> Result<String> {
    let mut out = String::new();
    match cli.command {
        Command::Profile(ProfileCmd::Gen {
            layers,
            seed,
            regime,
            out: path,
        }) => {
            let p = synth_profile(layers, seed, regime)?;
            save_profile(&p, &path)?;
            out.push_str(&profile_summary(&p));
        }
        Command::Profile(ProfileCmd::Check { profile }) => {
            out.push_str(&profile_summary(&load_profile(&profile)?));
        }
        Command::Schedule(a) => {
            let p = load_profile(&a.profile)?;
            let report = schedule_dfs(&p, a.period)?;
            let schedule = if a.no_fill {
                report.best.clone()
            } else {
                bubble_fill(&report.best, &p)?
            };
            if a.explain {
                out.push_str(&format!("schedule={schedule}\n"));
                for d in &report.classification_log {
                    out.push_str(&format!(
                        "rule {} on layer {} at iteration {}\n",
                        d.rule, d.layer, d.iteration
                    ));
                }
                out.push_str(&format!("solutions_explored={}\n", report.solutions_explored));
                out.push_str(&format_cost_report(&period_objective(&schedule, &p)?));
            }
            match &a.out {
                Some(path) => save_schedule(&schedule, path)?,
                None if !a.explain => out.push_str(&format_schedule(&schedule)),
                None => {}
            }
        }
        Command::Oracle(a) => {
            let p = load_profile(&a.profile)?;
            let dfs = schedule_dfs(&p, a.period)?;
            let brute = schedule_brute_force(&p, a.period, None)?;
            out.push_str(&format!(
                "dfs_schedule={}\ndfs_cost={:?}\ndfs_solutions={}\nbrute_schedule={}\nbrute_cost={:?}\nbrute_candidates={}\ngap={:?}%\n",
                dfs.best,
                dfs.best_cost,
                dfs.solutions_explored,
                brute.best,
                brute.best_cost,
                brute_force_candidates(p.num_layers(), a.period),
                relative_gap(dfs.best_cost, brute.best_cost) * 100.0
            ));
        }
        Command::Simulate(a) => {
            let p = load_profile(&a.profile)?;
            let schedule = match (&a.schedule, a.mode) {
                (Some(path), _) => Some(load_schedule(path)?),
                (None, Mode::Plsgd) => {
                    let h = a
                        .period
                        .ok_or_else(|| Error::Argument("plsgd needs --schedule or --H".into()))?;
                    Some(bubble_fill(&schedule_dfs(&p, h)?.best, &p)?)
                }
                (None, _) => None,
            };
            let t = simulate_run(&p, a.mode, schedule.as_ref(), a.period, a.iters)?;
            if let Some(path) = &a.trace {
                export_trace(&t, path)?;
            }
            out.push_str(&format!(
                "mode={}\nperiod={}\niterations={}\nevents={}\nmakespan={:?}\n",
                t.mode,
                t.period,
                a.iters,
                t.events.len(),
                t.makespan
            ));
        }
        Command::Train(a) => {
            let e = load_experiment(&a.config)?;
            let problem = e.problem.build()?;
            let trace = run_training(&e.config, &problem)?;
            write_trace_csv(&trace, &a.out)?;
            out.push_str(&format_summary(&e.config, &trace));
        }
        Command::Compare(a) => {
            let p = load_profile(&a.profile)?;
            let c = compare_modes(&p, a.period, a.iters)?;
            out.push_str(&format!("schedule={}\n", c.schedule));
            out.push_str(&format_comparison(&c));
        }
        Command::Bench(BenchCmd::Sched {
            max_layers,
            period,
            seed,
            regime,
            out: path,
            sequential,
        }) => {
            let exec = if sequential { Exec::Sequential } else { Exec::default() };
            let csv = format_scaling_csv(&scaling_table(max_layers, period, seed, regime, exec)?);
            match path {
                Some(path) => write_text(&path, &csv)?,
                None => out.push_str(&csv),
            }
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match panic::catch_unwind(|| run(cli)) {
        Ok(Ok(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(_) => ExitCode::from(2),
    }
}
