//! Run metrics: per-vehicle service records, service-completion-time
//! distributions, attempt-count histograms, BSM packet error rate, CBR and
//! ITT statistics, summary percentiles, and the CSV/JSON exporters.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::mobility::CrossingEvent;
use crate::phy::FailureCause;
use crate::protocol::PacketKind;
use crate::types::{NodeId, PacketId, TimeMs};

/// Final standing of one vehicle that crossed the trigger line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceStatus {
    Complete,
    Censored,
    /// Crossed without ever having decoded a SAM; no SUM was sent.
    Ineligible,
}

impl ServiceStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ServiceStatus::Complete => "complete",
            ServiceStatus::Censored => "censored",
            ServiceStatus::Ineligible => "ineligible",
        }
    }
}

/// One row of the per-vehicle service log.
#[derive(Debug, Clone, Serialize)]
pub struct ServiceRecord {
    pub vehicle: NodeId,
    pub cross_ms: TimeMs,
    /// Generation subframe of the first SUM (the trigger crossing); the
    /// service clock starts here.
    pub first_sum_ms: Option<TimeMs>,
    /// Subframe the first SUM went over the air.
    pub first_sum_tx_ms: Option<TimeMs>,
    pub attempts: u32,
    pub complete_ms: Option<TimeMs>,
    pub status: ServiceStatus,
    /// (packet id, decode subframe) of the completing ACK reception.
    pub completing_ack: Option<(PacketId, TimeMs)>,
}

impl ServiceRecord {
    pub fn sct_ms(&self) -> Option<u64> {
        match (self.complete_ms, self.first_sum_ms) {
            (Some(done), Some(start)) => Some(done - start),
            _ => None,
        }
    }
}

/// Aggregated (time, mean, variance, n) point of a sampled series.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeriesPoint {
    pub time_ms: TimeMs,
    pub mean: f64,
    pub var: f64,
    pub n: u64,
}

/// Streaming mean/variance/extrema accumulator.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Accumulator {
    pub n: u64,
    sum: f64,
    sumsq: f64,
    min: f64,
    max: f64,
}

impl Default for Accumulator {
    fn default() -> Self {
        Accumulator {
            n: 0,
            sum: 0.0,
            sumsq: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl Accumulator {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sumsq += v * v;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.n += other.n;
        self.sum += other.sum;
        self.sumsq += other.sumsq;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    /// Smallest observed value; 0 for an empty series.
    pub fn min(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.min
        }
    }

    /// Largest observed value; 0 for an empty series.
    pub fn max(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.max
        }
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    pub fn variance(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let m = self.mean();
        (self.sumsq / self.n as f64 - m * m).max(0.0)
    }
}

/// BSM delivery counters over in-vicinity (tx, rx) pairs. A packet counts
/// delivered to a receiver if any HARQ copy decodes there.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PerCounters {
    pub expected: u64,
    pub decoded: u64,
}

impl PerCounters {
    pub fn per_percent(&self) -> f64 {
        if self.expected == 0 {
            0.0
        } else {
            100.0 * (1.0 - self.decoded as f64 / self.expected as f64)
        }
    }
}

/// One recorded transmission (trace mode).
#[derive(Debug, Clone, Serialize)]
pub struct TxRecord {
    pub subframe: TimeMs,
    pub node: NodeId,
    pub kind: PacketKind,
    pub packet: PacketId,
    pub is_harq_copy: bool,
    pub subchannel_start: u32,
    pub subchannel_count: u32,
}

/// One evaluated reception (trace mode).
#[derive(Debug, Clone, Serialize)]
pub struct RxRecord {
    pub subframe: TimeMs,
    pub tx: NodeId,
    pub rx: NodeId,
    pub kind: PacketKind,
    pub packet: PacketId,
    pub success: bool,
    pub cause: Option<FailureCause>,
    pub rx_dbm: f64,
}

/// Full event trace, kept only when requested.
#[derive(Debug, Default)]
pub struct TraceLog {
    pub transmissions: Vec<TxRecord>,
    pub receptions: Vec<RxRecord>,
    /// Per-node CBR samples (node, subframe, percent).
    pub cbr_by_node: Vec<(NodeId, TimeMs, f64)>,
}

/// Per-kind transmission counters (originals and HARQ copies separately).
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct TxCounts {
    pub bsm: u64,
    pub sam: u64,
    pub sum: u64,
    pub ack: u64,
    pub harq_copies: u64,
}

impl TxCounts {
    pub fn bump(&mut self, kind: PacketKind, is_copy: bool) {
        if is_copy {
            self.harq_copies += 1;
            return;
        }
        match kind {
            PacketKind::Bsm => self.bsm += 1,
            PacketKind::Sam => self.sam += 1,
            PacketKind::Sum => self.sum += 1,
            PacketKind::Ack => self.ack += 1,
        }
    }
}

/// Everything a finished run reports.
pub struct MetricsBundle {
    pub config_digest: String,
    pub seed: u64,
    pub flow_rate_vps: f64,
    pub batchsize: u32,
    pub sim_duration_ms: u64,
    pub service: Vec<ServiceRecord>,
    pub crossings: Vec<CrossingEvent>,
    pub per: PerCounters,
    pub cbr: Accumulator,
    pub cbr_series: Vec<SeriesPoint>,
    pub itt: Accumulator,
    pub itt_series: Vec<SeriesPoint>,
    pub tx_counts: TxCounts,
    /// Receptions lost because the receiver was transmitting.
    pub half_duplex_losses: u64,
    pub trace: Option<TraceLog>,
}

impl MetricsBundle {
    /// Sorted service completion times of completed vehicles, in ms.
    pub fn sct_values(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.service.iter().filter_map(|r| r.sct_ms()).collect();
        v.sort_unstable();
        v
    }

    pub fn censored_count(&self) -> usize {
        self.service
            .iter()
            .filter(|r| r.status == ServiceStatus::Censored)
            .count()
    }

    pub fn ineligible_count(&self) -> usize {
        self.service
            .iter()
            .filter(|r| r.status == ServiceStatus::Ineligible)
            .count()
    }

    pub fn completed_count(&self) -> usize {
        self.service
            .iter()
            .filter(|r| r.status == ServiceStatus::Complete)
            .count()
    }
}

/// SCT distribution with the censored tally alongside.
#[derive(Debug, Clone, Serialize)]
pub struct SctDistribution {
    pub values_ms: Vec<u64>,
    pub censored: usize,
}

/// Completion times of completed vehicles; censored vehicles are excluded
/// from the distribution but counted.
pub fn compute_sct(service: &[ServiceRecord]) -> SctDistribution {
    let mut values_ms: Vec<u64> = service.iter().filter_map(|r| r.sct_ms()).collect();
    values_ms.sort_unstable();
    let censored = service
        .iter()
        .filter(|r| r.status == ServiceStatus::Censored)
        .count();
    SctDistribution {
        values_ms,
        censored,
    }
}

/// Percentage of completed vehicles finishing at each attempt count. Sums to
/// 100 when any vehicle completed; empty (flagged by `is_empty`) otherwise.
pub fn attempt_histogram(service: &[ServiceRecord]) -> Vec<(u32, f64)> {
    let completed: Vec<u32> = service
        .iter()
        .filter(|r| r.status == ServiceStatus::Complete)
        .map(|r| r.attempts)
        .collect();
    if completed.is_empty() {
        return Vec::new();
    }
    let mut counts = std::collections::BTreeMap::new();
    for a in &completed {
        *counts.entry(*a).or_insert(0u64) += 1;
    }
    let total = completed.len() as f64;
    counts
        .into_iter()
        .map(|(attempt, count)| (attempt, 100.0 * count as f64 / total))
        .collect()
}

/// Packet error rate from delivery counters, in percent.
pub fn compute_per(per: &PerCounters) -> f64 {
    per.per_percent()
}

/// Nearest-rank percentile of a sorted slice.
pub fn percentile(sorted: &[u64], q: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, Serialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub mean: f64,
    pub min: u64,
    pub p50: u64,
    pub p80: u64,
    pub p90: u64,
    pub p95: u64,
    pub p99: u64,
    pub max: u64,
}

impl DistributionSummary {
    pub fn of(sorted: &[u64]) -> Option<Self> {
        if sorted.is_empty() {
            return None;
        }
        let mean = sorted.iter().sum::<u64>() as f64 / sorted.len() as f64;
        Some(DistributionSummary {
            n: sorted.len(),
            mean,
            min: sorted[0],
            p50: percentile(sorted, 50.0)?,
            p80: percentile(sorted, 80.0)?,
            p90: percentile(sorted, 90.0)?,
            p95: percentile(sorted, 95.0)?,
            p99: percentile(sorted, 99.0)?,
            max: *sorted.last()?,
        })
    }
}

/// The `summary.json` payload.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub schema: u32,
    pub config_digest: String,
    pub seed: u64,
    pub flow_rate_vps: f64,
    pub batchsize: u32,
    pub sim_duration_ms: u64,
    pub crossed: usize,
    pub completed: usize,
    pub censored: usize,
    pub ineligible: usize,
    pub sct: Option<DistributionSummary>,
    pub attempts_percent: Vec<(u32, f64)>,
    pub mean_attempts: Option<f64>,
    pub per_expected: u64,
    pub per_decoded: u64,
    pub per_percent: f64,
    pub cbr_mean: f64,
    pub cbr_var: f64,
    pub cbr_samples: u64,
    pub itt_mean: f64,
    pub itt_var: f64,
    pub itt_samples: u64,
    pub tx_counts: TxCounts,
    pub half_duplex_losses: u64,
}

/// Deterministic roll-up of a bundle.
pub fn summarize(bundle: &MetricsBundle) -> Summary {
    let sct_sorted = bundle.sct_values();
    let completed: Vec<&ServiceRecord> = bundle
        .service
        .iter()
        .filter(|r| r.status == ServiceStatus::Complete)
        .collect();
    let mean_attempts = if completed.is_empty() {
        None
    } else {
        Some(completed.iter().map(|r| r.attempts as f64).sum::<f64>() / completed.len() as f64)
    };
    Summary {
        schema: 1,
        config_digest: bundle.config_digest.clone(),
        seed: bundle.seed,
        flow_rate_vps: bundle.flow_rate_vps,
        batchsize: bundle.batchsize,
        sim_duration_ms: bundle.sim_duration_ms,
        crossed: bundle.service.len(),
        completed: completed.len(),
        censored: bundle.censored_count(),
        ineligible: bundle.ineligible_count(),
        sct: DistributionSummary::of(&sct_sorted),
        attempts_percent: attempt_histogram(&bundle.service),
        mean_attempts,
        per_expected: bundle.per.expected,
        per_decoded: bundle.per.decoded,
        per_percent: bundle.per.per_percent(),
        cbr_mean: bundle.cbr.mean(),
        cbr_var: bundle.cbr.variance(),
        cbr_samples: bundle.cbr.n,
        itt_mean: bundle.itt.mean(),
        itt_var: bundle.itt.variance(),
        itt_samples: bundle.itt.n,
        tx_counts: bundle.tx_counts,
        half_duplex_losses: bundle.half_duplex_losses,
    }
}

fn opt_str<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the full per-run output set into `dir`:
/// `sct.csv`, `attempts.csv`, `per.csv`, `cbr.csv`, `itt.csv`,
/// `crossings.csv`, `summary.json`, plus `trace.csv` / `cbr_trace.csv` when a
/// trace was recorded.
pub fn write_outputs(bundle: &MetricsBundle, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut sct = String::new();
    sct.push_str("vehicle_id,cross_ms,first_sum_ms,attempts,complete_ms,sct_ms,status\n");
    for r in &bundle.service {
        sct.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.vehicle,
            r.cross_ms,
            opt_str(r.first_sum_ms),
            r.attempts,
            opt_str(r.complete_ms),
            opt_str(r.sct_ms()),
            r.status.as_str()
        ));
    }
    std::fs::write(dir.join("sct.csv"), sct)?;

    let mut attempts = String::new();
    attempts.push_str("attempt_no,percent\n");
    for (n, pct) in attempt_histogram(&bundle.service) {
        attempts.push_str(&format!("{n},{pct:.6}\n"));
    }
    std::fs::write(dir.join("attempts.csv"), attempts)?;

    let mut per = String::new();
    per.push_str("expected,decoded,per_percent\n");
    per.push_str(&format!(
        "{},{},{:.6}\n",
        bundle.per.expected,
        bundle.per.decoded,
        bundle.per.per_percent()
    ));
    std::fs::write(dir.join("per.csv"), per)?;

    let mut cbr = String::new();
    cbr.push_str("time_ms,mean_percent,var_percent,n\n");
    for p in &bundle.cbr_series {
        cbr.push_str(&format!(
            "{},{:.6},{:.6},{}\n",
            p.time_ms, p.mean, p.var, p.n
        ));
    }
    std::fs::write(dir.join("cbr.csv"), cbr)?;

    let mut itt = String::new();
    itt.push_str("time_ms,mean_itt_ms,var_itt_ms,n\n");
    for p in &bundle.itt_series {
        itt.push_str(&format!(
            "{},{:.6},{:.6},{}\n",
            p.time_ms, p.mean, p.var, p.n
        ));
    }
    std::fs::write(dir.join("itt.csv"), itt)?;

    let mut crossings = String::new();
    crossings.push_str("vehicle_id,cross_time_ms,lane,direction\n");
    for c in &bundle.crossings {
        crossings.push_str(&format!(
            "{},{},{},{}\n",
            c.vehicle, c.time_ms, c.lane, c.direction
        ));
    }
    std::fs::write(dir.join("crossings.csv"), crossings)?;

    let summary = summarize(bundle);
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    std::fs::write(dir.join("summary.json"), json)?;

    if let Some(trace) = &bundle.trace {
        let file = std::fs::File::create(dir.join("trace.csv"))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "subframe,tx,rx,packet_kind,packet_id,success,cause,rx_dbm")?;
        for r in &trace.receptions {
            let cause = match r.cause {
                None => "",
                Some(FailureCause::HalfDuplex) => "half_duplex",
                Some(FailureCause::Sinr) => "sinr",
                Some(FailureCause::CollisionTie) => "collision_tie",
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{:.3}",
                r.subframe,
                r.tx,
                r.rx,
                r.kind.as_str(),
                r.packet,
                r.success as u8,
                cause,
                r.rx_dbm
            )?;
        }
        w.flush()?;

        let file = std::fs::File::create(dir.join("cbr_trace.csv"))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "node,subframe,cbr_percent")?;
        for (node, t, pct) in &trace.cbr_by_node {
            writeln!(w, "{node},{t},{pct:.6}")?;
        }
        w.flush()?;
    }
    Ok(())
}
