use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use qpwave::pipeline::{report, run_pipeline_with, sweep_tau, RunConfig, RunControl, RunStatus, RunSummary, TauSweep};

#[derive(Parser)]
#[command(name = "qpwave", version, about = "KAM reducibility runs for quasi-periodic wave operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and print it with every default filled in.
    Validate(Common),
    /// Run the full pipeline for one τ.
    Run(Common),
    /// Independent runs over a τ grid.
    Sweep(Common),
    /// Continue a run from its last checkpoint.
    Resume(Common),
    /// Re-render step files from a checkpoint without recomputation.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, conflicts_with = "tau_sweep")]
    tau: Option<f64>,
    /// `LO:HI:COUNT`.
    #[arg(long)]
    tau_sweep: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; affects wall clock only.
    #[arg(long)]
    threads: Option<usize>,
    /// Stop after this many KAM steps, leaving a checkpoint.
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

const CONFIG_ERROR: u8 = 4;

fn load_config(c: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = c.tau {
        cfg.tau = t;
        cfg.tau_sweep = None;
    }
    if let Some(s) = &c.tau_sweep {
        cfg.tau_sweep = Some(TauSweep::parse(s)?);
    }
    if let Some(m) = c.steps {
        cfg.steps = m;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    Ok(cfg)
}

fn set_threads(t: Option<usize>) -> anyhow::Result<()> {
    if let Some(t) = t {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring the thread pool")?;
    }
    Ok(())
}

fn print_summary(s: &RunSummary) {
    println!("status: {:?}", s.status);
    if let Some(e) = &s.error {
        println!("error [{}{}]: {}", e.module, e.step.map_or(String::new(), |m| format!(", step {m}")), e.message);
    }
    for r in &s.steps {
        println!(
            "step {}: ‖R‖ {:.3e} -> {:.3e}, ‖P‖ {:.3e} (bound {:.3e}), residual {:.1e}",
            r.m, r.active_norm, r.next_active_norm, r.map.p_norm, r.map.p_bound, r.homological_residual
        );
    }
    if let Some(f) = s.final_remainder_norm {
        println!("final remainder norm: {f:.3e}");
    }
    if let Some(v) = &s.verification {
        println!("oracle deviation: {:.3e} ({:.2} × remainder)", v.max_rel_deviation, v.deviation_over_remainder);
        for l in &v.lyapunov {
            println!("lyapunov estimate at T = {}: {:.3e}", l.horizon, l.top_exponent);
        }
    }
}

fn config_path(out: &Path) -> PathBuf {
    out.join("config.json")
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Validate(c) => {
            let cfg = load_config(&c)?;
            match cfg.check() {
                Ok(()) => {
                    println!("{}", serde_json::to_string_pretty(&cfg)?);
                    Ok(0)
                }
                Err(e) => {
                    eprintln!("{e}");
                    Ok(CONFIG_ERROR)
                }
            }
        }
        Command::Run(c) => {
            set_threads(c.threads)?;
            let cfg = load_config(&c)?;
            let control = RunControl { stop_after: c.stop_after, resume: false };
            let s = run_pipeline_with(&cfg, &control);
            print_summary(&s);
            Ok(s.status.exit_code() as u8)
        }
        Command::Sweep(c) => {
            set_threads(c.threads)?;
            let cfg = load_config(&c)?;
            match sweep_tau(&cfg) {
                Ok((sweep, _)) => {
                    for e in &sweep.entries {
                        println!("tau {:.6}: {:?}", e.tau, e.status);
                    }
                    println!(
                        "converged fraction {:.3} (excluded at step 0: {:.4})",
                        sweep.converged_fraction, sweep.resonance.excluded_fraction
                    );
                    Ok(0)
                }
                Err(e) => {
                    eprintln!("{e}");
                    Ok(RunStatus::of_error(&e).exit_code() as u8)
                }
            }
        }
        Command::Resume(c) => {
            set_threads(c.threads)?;
            let out = c.out.clone().context("resume needs --out")?;
            let mut cfg = match &c.config {
                Some(_) => load_config(&c)?,
                None => RunConfig::from_file(&config_path(&out))?,
            };
            cfg.out = Some(out);
            let s = run_pipeline_with(&cfg, &RunControl { stop_after: c.stop_after, resume: true });
            print_summary(&s);
            Ok(s.status.exit_code() as u8)
        }
        Command::Report { out } => {
            let steps = report(&out)?;
            println!("re-rendered {} step files under {}", steps.len(), out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // usage errors are config errors; clap's own code 2 would read as resonant-τ
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { CONFIG_ERROR } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(CONFIG_ERROR)
        }
    }
}
