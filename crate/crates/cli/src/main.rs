//! Command-line front end for the data-free domain generalization pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dfdg::evaluation::Method;
use dfdg::orchestrator::{evaluate, rerender_report, run_all, ExperimentConfig, Pipeline};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "dfdg",
    version,
    about = "Data-free domain generalization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the multi-domain benchmark and write it to <out>/bench.
    BuildBench(Common),
    /// Train one teacher per domain and seed.
    TrainTeachers(Common),
    /// Stage 1: invert every teacher into a synthetic dataset.
    Invert(Common),
    /// Stage 2: synthesize cross-domain data for every ordered domain pair.
    Fuse(Common),
    /// Stage 3: distill a student per held-out target domain.
    Distill(Common),
    /// Run the leave-one-domain-out protocol and write the report bundle.
    Evaluate(Common),
    /// Every stage from benchmark to report.
    RunAll(Common),
    /// Re-render the result table from an existing report bundle.
    Report(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run with this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config and DFDG_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated method names, e.g. dekan,multi_di,erm.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Reuse artifacts whose recorded stage digest matches (run-all only;
    /// the single-stage commands always reuse upstream artifacts).
    #[arg(long)]
    resume: bool,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => {
                let mut cfg = ExperimentConfig::default();
                if let Some(dir) = std::env::var_os(dfdg::orchestrator::OUT_DIR_ENV) {
                    cfg.out_dir = dir.into();
                }
                cfg
            }
        };
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(names) = &self.methods {
            cfg.methods = names
                .iter()
                .map(|n| n.trim().parse::<Method>())
                .collect::<Result<_, _>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn pipeline(&self) -> Result<Pipeline> {
        Ok(Pipeline::new(self.config()?, true)?)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildBench(c) => {
            let mut p = c.pipeline()?;
            let bench = p.benchmark()?;
            println!(
                "benchmark: {} domains, {} classes, written to {}",
                bench.domains.len(),
                bench.num_classes,
                p.out_dir().join("bench").display()
            );
        }
        Command::TrainTeachers(c) => {
            let mut p = c.pipeline()?;
            p.train_all_teachers()?;
            print_log(&p);
        }
        Command::Invert(c) => {
            let mut p = c.pipeline()?;
            p.invert_all()?;
            print_log(&p);
        }
        Command::Fuse(c) => {
            let mut p = c.pipeline()?;
            p.fuse_all()?;
            print_log(&p);
        }
        Command::Distill(c) => {
            let mut p = c.pipeline()?;
            p.distill_all()?;
            print_log(&p);
        }
        Command::Evaluate(c) => {
            let mut p = c.pipeline()?;
            let bundle = evaluate(&mut p)?;
            print!("{}", bundle.table.render());
            println!("report written to {}", bundle.dir.display());
        }
        Command::RunAll(c) => {
            let bundle = run_all(c.config()?, c.resume)?;
            print!("{}", bundle.table.render());
            println!("report written to {}", bundle.dir.display());
        }
        Command::Report(c) => {
            let cfg = c.config()?;
            let table = rerender_report(&cfg.out_dir)
                .with_context(|| format!("reading report under {}", cfg.out_dir.display()))?;
            print!("{}", table.render());
        }
    }
    Ok(())
}

fn print_log(p: &Pipeline) {
    for e in p.stage_log() {
        let metric = e
            .metric
            .as_ref()
            .map(|(k, v)| format!(" {k}={v:.4}"))
            .unwrap_or_default();
        println!("{:<15} {:<28} {:?}{metric}", e.stage, e.key, e.action);
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
