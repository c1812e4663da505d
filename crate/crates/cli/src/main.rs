//! Command-line interface: single runs and batchsize x flow sweeps.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use v2i_sim_core::config::{self, ScenarioConfig};
use v2i_sim_core::engine::{run_to_dir, RunOptions};
use v2i_sim_core::metrics::summarize;
use v2i_sim_core::sweep::{emit_plot_data, sweep, SweepSpec};

#[derive(Parser)]
#[command(
    name = "v2i-sim",
    about = "Discrete-event simulator of a C-V2X roadside transaction service with batched acknowledgements",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Scenario file (flat `key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual overrides applied after the file, e.g. `--set batchsize=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = config::default_scenario();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            config::apply_document(&mut cfg, &text)
                .with_context(|| format!("parsing config {}", path.display()))?;
        }
        for (i, entry) in self.set.iter().enumerate() {
            let Some((key, value)) = entry.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{entry}`");
            };
            config::apply_entry(&mut cfg, key.trim(), value.trim(), i + 1)
                .with_context(|| format!("applying --set {entry}"))?;
        }
        let cfg = config::validate(cfg)?;
        for warning in warnings_for(&cfg) {
            eprintln!("warning: {warning}");
        }
        Ok(cfg)
    }
}

fn warnings_for(cfg: &ScenarioConfig) -> Vec<String> {
    // Re-parse through the canonical path to surface the same warnings.
    match config::parse_scenario(&config::serialize(cfg)) {
        Ok(parsed) => parsed.warnings,
        Err(_) => Vec::new(),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute one scenario and write its output tree.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Master RNG seed (overrides `rng_seed` from the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Record the full reception trace and per-node CBR series (large).
        #[arg(long)]
        trace: bool,
    },
    /// Execute a flow x batchsize x seed sweep and emit plot-ready CSVs.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated flow rates in vehicles/second.
        #[arg(long, default_value = "1,5,15", value_parser = parse_f64_list)]
        flows: std::vec::Vec<f64>,
        /// Comma-separated ACK batch sizes.
        #[arg(long, default_value = "1,2", value_parser = parse_u32_list)]
        batchsizes: std::vec::Vec<u32>,
        /// Seeds as a comma list (`1,2,3`) or inclusive range (`1..3`).
        #[arg(long, default_value = "1..3", value_parser = parse_seed_list)]
        seeds: std::vec::Vec<u64>,
        /// Output directory; one subdirectory per combination.
        #[arg(long)]
        out: PathBuf,
        /// Maximum concurrent runs.
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_u32_list(s: &str) -> Result<Vec<u32>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_seed_list(s: &str) -> Result<Vec<u64>, String> {
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
        let hi: u64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
        if lo > hi {
            return Err(format!("empty seed range {s}"));
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|e| e.to_string()))
        .collect()
}

fn main() {
    if let Err(err) = real_main() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out,
            trace,
        } => {
            let mut cfg = config.load()?;
            if let Some(seed) = seed {
                cfg.rng_seed = seed;
            }
            let options = RunOptions {
                record_trace: trace,
            };
            let bundle = run_to_dir(cfg, &out, options).context("executing run")?;
            let summary = summarize(&bundle);
            println!(
                "run complete: {} crossed, {} completed, {} censored, {} ineligible",
                summary.crossed, summary.completed, summary.censored, summary.ineligible
            );
            if let Some(sct) = &summary.sct {
                println!(
                    "sct ms: p50 {} p90 {} p99 {} (n={})",
                    sct.p50, sct.p90, sct.p99, sct.n
                );
            }
            println!("outputs in {}", out.display());
            Ok(())
        }
        Command::Sweep {
            config,
            flows,
            batchsizes,
            seeds,
            out,
            jobs,
        } => {
            let base = config.load()?;
            let spec = SweepSpec {
                flows,
                batchsizes,
                seeds,
                base,
            };
            let runs = sweep(&spec, &out, RunOptions::default(), jobs)
                .context("executing sweep")?;
            let mut failed = 0usize;
            for run in &runs {
                match &run.outcome {
                    Ok(bundle) => {
                        let s = summarize(bundle);
                        println!(
                            "f{} b{} s{}: completed {} censored {} per {:.2}%",
                            run.flow,
                            run.batchsize,
                            run.seed,
                            s.completed,
                            s.censored,
                            s.per_percent
                        );
                    }
                    Err(msg) => {
                        failed += 1;
                        eprintln!(
                            "f{} b{} s{}: FAILED: {msg}",
                            run.flow, run.batchsize, run.seed
                        );
                    }
                }
            }
            emit_plot_data(&runs, &out).context("writing plot data")?;
            println!(
                "sweep complete: {}/{} runs ok, plots in {}",
                runs.len() - failed,
                runs.len(),
                out.join("plots").display()
            );
            if failed > 0 {
                bail!("{failed} runs failed");
            }
            Ok(())
        }
    }
}
