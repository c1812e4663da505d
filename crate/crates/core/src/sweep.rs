//! Batchsize x flow-rate sweep harness: runs every (flow, batchsize, seed)
//! combination into its own output directory and emits pooled plot-ready
//! CSVs. Independent runs execute concurrently; a failed run is recorded and
//! the sweep carries on.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::ScenarioConfig;
use crate::engine::{run_to_dir, RunOptions};
use crate::metrics::{attempt_histogram, Accumulator, MetricsBundle};

/// The cartesian product to execute, in deterministic order.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub flows: Vec<f64>,
    pub batchsizes: Vec<u32>,
    pub seeds: Vec<u64>,
    pub base: ScenarioConfig,
}

impl SweepSpec {
    pub fn combinations(&self) -> Vec<(f64, u32, u64)> {
        let mut combos = Vec::new();
        for &flow in &self.flows {
            for &b in &self.batchsizes {
                for &seed in &self.seeds {
                    combos.push((flow, b, seed));
                }
            }
        }
        combos
    }
}

/// Outcome of one sweep cell.
pub struct SweepRun {
    pub flow: f64,
    pub batchsize: u32,
    pub seed: u64,
    pub dir: PathBuf,
    pub outcome: Result<MetricsBundle, String>,
}

pub fn run_dir_name(flow: f64, batchsize: u32, seed: u64) -> String {
    format!("f{flow}_b{batchsize}_s{seed}")
}

/// Executes the sweep under `out_dir`, with up to `jobs` runs in parallel.
/// Returns per-combination results in spec order.
pub fn sweep(
    spec: &SweepSpec,
    out_dir: &Path,
    options: RunOptions,
    jobs: usize,
) -> std::io::Result<Vec<SweepRun>> {
    std::fs::create_dir_all(out_dir)?;
    let combos = spec.combinations();
    if combos.is_empty() {
        return Ok(Vec::new());
    }
    let jobs = jobs.max(1).min(combos.len());
    let results: Mutex<Vec<Option<SweepRun>>> =
        Mutex::new((0..combos.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= combos.len() {
                    break;
                }
                let (flow, b, seed) = combos[idx];
                let dir = out_dir.join(run_dir_name(flow, b, seed));
                let mut config = spec.base.clone();
                config.flow_rate_vps = flow;
                config.batchsize = b;
                config.rng_seed = seed;
                let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                    run_to_dir(config, &dir, options)
                }));
                let outcome = match outcome {
                    Ok(Ok(bundle)) => Ok(bundle),
                    Ok(Err(e)) => Err(e.to_string()),
                    Err(panic) => Err(panic_message(panic)),
                };
                if let Err(msg) = &outcome {
                    let _ = std::fs::create_dir_all(&dir);
                    let _ = std::fs::write(dir.join("error.txt"), format!("{msg}\n"));
                }
                results.lock().unwrap()[idx] = Some(SweepRun {
                    flow,
                    batchsize: b,
                    seed,
                    dir,
                    outcome,
                });
            });
        }
    });

    Ok(results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every combination executed"))
        .collect())
}

fn panic_message(panic: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        format!("run panicked: {s}")
    } else if let Some(s) = panic.downcast_ref::<String>() {
        format!("run panicked: {s}")
    } else {
        "run panicked".to_string()
    }
}

/// Writes the five figure-feeding CSVs under `<out>/plots/`, pooling seeds
/// within each (flow, batchsize) cell:
/// `sct_cdf.csv`, `cbr.csv`, `itt.csv`, `attempts.csv`, `per.csv`.
pub fn emit_plot_data(runs: &[SweepRun], out_dir: &Path) -> std::io::Result<()> {
    let plots = out_dir.join("plots");
    std::fs::create_dir_all(&plots)?;

    // Group successful runs by (flow, batchsize), keeping spec order.
    let mut cells: Vec<((f64, u32), Vec<&MetricsBundle>)> = Vec::new();
    for run in runs {
        let Ok(bundle) = &run.outcome else { continue };
        let key = (run.flow, run.batchsize);
        match cells.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(bundle),
            None => cells.push((key, vec![bundle])),
        }
    }

    let mut sct_cdf = String::from("flow,batchsize,sct_ms,cum_percent\n");
    let mut cbr = String::from("flow,batchsize,mean_percent,var_percent,samples\n");
    let mut itt = String::from("flow,batchsize,mean_itt_ms,samples\n");
    let mut attempts = String::from("flow,batchsize,attempt_no,percent\n");
    let mut per = String::from("flow,batchsize,per_percent,expected,decoded\n");

    for ((flow, b), bundles) in &cells {
        let mut pooled_sct: Vec<u64> = bundles.iter().flat_map(|m| m.sct_values()).collect();
        pooled_sct.sort_unstable();
        let n = pooled_sct.len();
        for (i, v) in pooled_sct.iter().enumerate() {
            let cum = 100.0 * (i + 1) as f64 / n as f64;
            sct_cdf.push_str(&format!("{flow},{b},{v},{cum:.6}\n"));
        }

        let mut cbr_acc = Accumulator::default();
        for m in bundles {
            cbr_acc.merge(&m.cbr);
        }
        cbr.push_str(&format!(
            "{flow},{b},{:.6},{:.6},{}\n",
            cbr_acc.mean(),
            cbr_acc.variance(),
            cbr_acc.n
        ));

        let mut itt_acc = Accumulator::default();
        for m in bundles {
            itt_acc.merge(&m.itt);
        }
        itt.push_str(&format!("{flow},{b},{:.6},{}\n", itt_acc.mean(), itt_acc.n));

        let pooled_service: Vec<_> = bundles
            .iter()
            .flat_map(|m| m.service.iter().cloned())
            .collect();
        for (attempt_no, pct) in attempt_histogram(&pooled_service) {
            attempts.push_str(&format!("{flow},{b},{attempt_no},{pct:.6}\n"));
        }

        let expected: u64 = bundles.iter().map(|m| m.per.expected).sum();
        let decoded: u64 = bundles.iter().map(|m| m.per.decoded).sum();
        let per_pct = if expected == 0 {
            0.0
        } else {
            100.0 * (1.0 - decoded as f64 / expected as f64)
        };
        per.push_str(&format!("{flow},{b},{per_pct:.6},{expected},{decoded}\n"));
    }

    std::fs::write(plots.join("sct_cdf.csv"), sct_cdf)?;
    std::fs::write(plots.join("cbr.csv"), cbr)?;
    std::fs::write(plots.join("itt.csv"), itt)?;
    std::fs::write(plots.join("attempts.csv"), attempts)?;
    std::fs::write(plots.join("per.csv"), per)?;
    Ok(())
}
