use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hjb_portfolio::config::RunConfig;
use hjb_portfolio::pipeline::{self, Pipeline, StageLog};
use hjb_portfolio::risk::{fmt_opt, RiskReport};

#[derive(Parser)]
#[command(name = "hjbp", version, about = "Optimal regular-saving portfolios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Recompute the alpha table and PDE solutions even if cached.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the QP value function and optimal weights.
    Alpha(Common),
    /// Solve for the risk-aversion field and the value function.
    Solve(Common),
    /// Simulate terminal log-wealth under the optimal policy.
    Simulate(Common),
    /// Risk measures of a terminal-wealth file.
    Report {
        input: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        r: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Solve, simulate and report in one go.
    Pipeline(Common),
    /// CARA and DARA risk-aversion sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn pipeline_for(c: &Common) -> hjb_portfolio::Result<Pipeline> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &c.out {
        cfg.output.dir = o.clone();
    }
    if let Some(s) = c.seed {
        cfg.simulation.seed = s;
    }
    if let Some(b) = c.beta {
        cfg.report.beta = b;
    }
    if c.no_cache {
        cfg.output.cache = false;
    }
    Pipeline::new(cfg)
}

fn print_log(log: &StageLog) {
    if log.alpha_cache_hit {
        eprintln!("alpha table loaded from cache");
    }
    if log.phi_cache_hits > 0 {
        eprintln!("{} PDE solution(s) loaded from cache", log.phi_cache_hits);
    }
    for n in &log.notes {
        eprintln!("{n}");
    }
    for f in &log.files {
        println!("wrote {}", f.display());
    }
}

fn print_report(r: &RiskReport) {
    println!(
        "n={} mean={:.6} std={:.6} VaR={:.6} CVaR={:.6} CVaRD={:.6} SR={} SR_CVaR={} SR_CVaRD={}",
        r.n,
        r.mean,
        r.std,
        r.var_beta,
        r.cvar_beta,
        r.cvard_beta,
        fmt_opt(r.sr),
        fmt_opt(r.sr_cvar),
        fmt_opt(r.sr_cvard)
    );
}

fn run(cli: Cli) -> hjb_portfolio::Result<()> {
    match cli.command {
        Command::Alpha(c) => print_log(&pipeline_for(&c)?.cmd_alpha()?),
        Command::Solve(c) => print_log(&pipeline_for(&c)?.cmd_solve()?.0),
        Command::Simulate(c) => {
            let (log, batch) = pipeline_for(&c)?.cmd_simulate()?;
            print_log(&log);
            println!("mean terminal log-wealth {:.6}", batch.mean());
        }
        Command::Pipeline(c) => {
            let (log, rep) = pipeline_for(&c)?.cmd_pipeline()?;
            print_log(&log);
            print_report(&rep);
        }
        Command::Report { input, beta, r, out } => {
            let (rep, path) = pipeline::cmd_report(&input, beta, r, &out)?;
            print_report(&rep);
            println!("wrote {}", path.display());
        }
        Command::Sweep { common, jobs } => {
            let p = pipeline_for(&common)?;
            let (log, _) = p.cmd_sweep(jobs)?;
            print_log(&log);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}
