//! MAC layer: resource grid, rolling sensing history, channel-busy-ratio
//! computation, sensing-based one-shot/semi-persistent resource selection,
//! and the priority transmit queue.

use std::collections::BTreeMap;

use rand::Rng;

use crate::config::ScenarioConfig;
use crate::phy::dbm_to_mw;
use crate::protocol::{Packet, PacketKind};
use crate::types::TimeMs;

/// Sensing window length in subframes.
pub const SENSING_WINDOW: usize = 100;

/// Selection window bounds relative to the selection subframe, in ms.
pub const SELECTION_MIN_AHEAD: u64 = 4;
pub const SELECTION_MAX_AHEAD: u64 = 100;

/// Static description of the per-subframe resource grid.
#[derive(Debug, Clone, Copy)]
pub struct ResourceGrid {
    pub subchannels: u32,
}

impl ResourceGrid {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        ResourceGrid {
            subchannels: config.subchannels_per_subframe,
        }
    }

    /// Number of contiguous start positions for a footprint.
    pub fn starts_for(&self, footprint: u32) -> u32 {
        self.subchannels.saturating_sub(footprint) + 1
    }
}

/// A future resource decoded from somebody else's scheduling information,
/// used for exclusion during selection.
#[derive(Debug, Clone, Copy)]
pub struct DecodedReservation {
    pub subframe: TimeMs,
    pub subchannel_start: u32,
    pub subchannel_count: u32,
    pub rsrp_dbm: f64,
}

/// Rolling 100-subframe × subchannel measurement window for one node. Cells
/// hold accumulated interference power in mW; the noise floor is added at
/// read time, so untouched cells read as an idle channel.
#[derive(Debug, Clone)]
pub struct SensingHistory {
    subchannels: usize,
    /// Ring of SENSING_WINDOW slots × subchannels, indexed slot*subchannels+c.
    cells_mw: Vec<f64>,
    /// Subframe currently stored in each slot, or None before first write.
    slot_subframe: Vec<Option<TimeMs>>,
    /// Count of subframes ever written (saturates at SENSING_WINDOW).
    filled: usize,
    /// Future reservations decoded from scheduling metadata.
    reservations: Vec<DecodedReservation>,
}

impl SensingHistory {
    pub fn new(subchannels: u32) -> Self {
        let subchannels = subchannels as usize;
        SensingHistory {
            subchannels,
            cells_mw: vec![0.0; SENSING_WINDOW * subchannels],
            slot_subframe: vec![None; SENSING_WINDOW],
            filled: 0,
            reservations: Vec::new(),
        }
    }

    fn slot_of(subframe: TimeMs) -> usize {
        (subframe % SENSING_WINDOW as u64) as usize
    }

    /// Clears the ring slot for `subframe` ahead of this subframe's
    /// measurements. Must be called once per subframe before `accumulate`.
    pub fn begin_subframe(&mut self, subframe: TimeMs) {
        let slot = Self::slot_of(subframe);
        if self.slot_subframe[slot] != Some(subframe) {
            if self.filled < SENSING_WINDOW {
                self.filled += 1;
            }
            self.slot_subframe[slot] = Some(subframe);
            let base = slot * self.subchannels;
            for c in 0..self.subchannels {
                self.cells_mw[base + c] = 0.0;
            }
        }
    }

    /// Adds received power across a footprint in the current subframe.
    pub fn accumulate(&mut self, subframe: TimeMs, start: u32, count: u32, power_mw: f64) {
        let slot = Self::slot_of(subframe);
        debug_assert_eq!(self.slot_subframe[slot], Some(subframe));
        let base = slot * self.subchannels;
        let end = ((start + count) as usize).min(self.subchannels);
        for c in start as usize..end {
            self.cells_mw[base + c] += power_mw;
        }
    }

    /// Direct mutable view of the current subframe's cells, for the
    /// engine's accumulation hot path. `begin_subframe` must have run.
    pub fn slot_cells_mut(&mut self, subframe: TimeMs) -> &mut [f64] {
        let slot = Self::slot_of(subframe);
        debug_assert_eq!(self.slot_subframe[slot], Some(subframe));
        let base = slot * self.subchannels;
        &mut self.cells_mw[base..base + self.subchannels]
    }

    /// Read-only view of one past subframe's cells; `None` if that subframe
    /// is not in the window.
    pub fn slot_cells(&self, subframe: TimeMs) -> Option<&[f64]> {
        let slot = Self::slot_of(subframe);
        if self.slot_subframe[slot] != Some(subframe) {
            return None;
        }
        let base = slot * self.subchannels;
        Some(&self.cells_mw[base..base + self.subchannels])
    }

    /// Measured RSSI of one past cell in mW, noise included; `None` if that
    /// subframe is no longer (or not yet) in the window.
    pub fn cell_rssi_mw(&self, subframe: TimeMs, subchannel: u32, noise_mw: f64) -> Option<f64> {
        let slot = Self::slot_of(subframe);
        if self.slot_subframe[slot] != Some(subframe) {
            return None;
        }
        Some(self.cells_mw[slot * self.subchannels + subchannel as usize] + noise_mw)
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn note_reservation(&mut self, r: DecodedReservation) {
        self.reservations.push(r);
    }

    pub fn prune_reservations(&mut self, now: TimeMs) {
        self.reservations.retain(|r| r.subframe >= now);
    }

    pub fn reservations(&self) -> &[DecodedReservation] {
        &self.reservations
    }
}

/// Channel busy ratio over the sensing window: the percentage of cells whose
/// RSSI exceeds the threshold. With less than a full window of history the
/// ratio is computed over the available prefix and flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbrSample {
    pub percent: f64,
    pub full_window: bool,
}

pub fn compute_cbr(history: &SensingHistory, threshold_dbm: f64, noise_dbm: f64) -> CbrSample {
    let threshold_mw = dbm_to_mw(threshold_dbm);
    let noise_mw = dbm_to_mw(noise_dbm);
    let mut busy = 0usize;
    let mut total = 0usize;
    for slot in 0..SENSING_WINDOW {
        if history.slot_subframe[slot].is_none() {
            continue;
        }
        let base = slot * history.subchannels;
        for c in 0..history.subchannels {
            total += 1;
            if history.cells_mw[base + c] + noise_mw > threshold_mw {
                busy += 1;
            }
        }
    }
    if total == 0 {
        return CbrSample {
            percent: 0.0,
            full_window: false,
        };
    }
    CbrSample {
        percent: 100.0 * busy as f64 / total as f64,
        full_window: history.filled == SENSING_WINDOW,
    }
}

/// A granted transmission resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectedResource {
    pub subframe: TimeMs,
    pub subchannel_start: u32,
}

/// Sensing-based selection over `[now+4, now+100]`, or an explicit window:
/// candidates whose decoded-reservation RSRP exceeds the exclusion threshold
/// are dropped (the threshold escalates by `step` dB until at least the
/// shortlist fraction survives), survivors are ranked by measured RSSI one
/// window-length back, the best fraction is kept, and one is drawn uniformly.
#[allow(clippy::too_many_arguments)]
pub fn select_resource<R: Rng>(
    history: &SensingHistory,
    window: std::ops::RangeInclusive<TimeMs>,
    footprint: u32,
    grid: ResourceGrid,
    config: &ScenarioConfig,
    claimed: &dyn Fn(TimeMs) -> bool,
    rng: &mut R,
) -> Option<SelectedResource> {
    debug_assert!(footprint <= grid.subchannels);
    let noise_mw = dbm_to_mw(config.noise_floor_dbm);
    let starts = grid.starts_for(footprint);

    // Fixed-grant test mode: first unclaimed subframe in the window at
    // subchannel 0.
    if config.fixed_grant_delay_ms > 0 {
        return window
            .clone()
            .find(|&t| !claimed(t))
            .map(|subframe| SelectedResource {
                subframe,
                subchannel_start: 0,
            });
    }

    let mut candidates: Vec<SelectedResource> = Vec::new();
    for t in window.clone() {
        if claimed(t) {
            continue;
        }
        for s in 0..starts {
            candidates.push(SelectedResource {
                subframe: t,
                subchannel_start: s,
            });
        }
    }
    if candidates.is_empty() {
        return None;
    }

    // Reservation-based exclusion with threshold escalation. The common
    // path has nothing decoded and keeps every candidate.
    let keep_target = ((candidates.len() as f64) * config.sps_shortlist_fraction).ceil() as usize;
    let surviving = if history.reservations().is_empty() {
        candidates
    } else {
        let mut exclusion_dbm = config.sps_exclusion_dbm;
        loop {
            let surviving: Vec<SelectedResource> = candidates
                .iter()
                .copied()
                .filter(|cand| {
                    !history.reservations().iter().any(|r| {
                        r.subframe == cand.subframe
                            && r.rsrp_dbm > exclusion_dbm
                            && ranges_overlap(
                                cand.subchannel_start,
                                footprint,
                                r.subchannel_start,
                                r.subchannel_count,
                            )
                    })
                })
                .collect();
            if surviving.len() >= keep_target {
                break surviving;
            }
            exclusion_dbm += config.sps_exclusion_step_db;
        }
    };

    // Rank by mean measured RSSI of the same subchannels one window back;
    // keep the quietest fraction. One slot lookup per subframe covers all
    // start positions of that subframe.
    let f = footprint as usize;
    let mut rssi: Vec<f64> = Vec::with_capacity(surviving.len());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut slot_at: Option<TimeMs> = None;
    let mut cells: Option<&[f64]> = None;
    for cand in &surviving {
        if slot_at != Some(cand.subframe) {
            slot_at = Some(cand.subframe);
            cells = cand
                .subframe
                .checked_sub(SENSING_WINDOW as u64)
                .and_then(|p| history.slot_cells(p));
        }
        let s = cand.subchannel_start as usize;
        let mean = match cells {
            Some(c) => c[s..s + f].iter().sum::<f64>() / f as f64 + noise_mw,
            None => noise_mw,
        };
        lo = lo.min(mean);
        hi = hi.max(mean);
        rssi.push(mean);
    }

    // A uniformly quiet (or uniformly loud) window keeps every candidate in
    // the draw, so selection is uniform over the whole window.
    if lo == hi {
        return Some(surviving[rng.gen_range(0..surviving.len())]);
    }

    let shortlist_len =
        (((surviving.len() as f64) * config.sps_shortlist_fraction).ceil() as usize)
            .clamp(1, surviving.len());
    let mut order: Vec<f64> = rssi.clone();
    let (_, cutoff, _) =
        order.select_nth_unstable_by(shortlist_len - 1, |a, b| a.partial_cmp(b).unwrap());
    let cutoff = *cutoff;
    // Candidates tying with the cut-off RSSI stay in the draw.
    let shortlist: Vec<usize> = (0..surviving.len())
        .filter(|&i| rssi[i] <= cutoff)
        .collect();
    let pick = shortlist[rng.gen_range(0..shortlist.len())];
    Some(surviving[pick])
}

fn ranges_overlap(a_start: u32, a_len: u32, b_start: u32, b_len: u32) -> bool {
    a_start < b_start + b_len && b_start < a_start + a_len
}

/// Semi-persistent reservation state for periodic traffic.
#[derive(Debug, Clone)]
pub struct SpsProcess {
    pub reservation: Option<SpsReservation>,
    pub reselection_counter: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct SpsReservation {
    pub next_subframe: TimeMs,
    pub subchannel_start: u32,
    pub period_ms: u64,
}

impl SpsProcess {
    pub fn new() -> Self {
        SpsProcess {
            reservation: None,
            reselection_counter: 0,
        }
    }

    pub fn draw_counter<R: Rng>(config: &ScenarioConfig, rng: &mut R) -> u32 {
        rng.gen_range(config.sps_counter_min..=config.sps_counter_max)
    }

    /// Consumes one reserved transmission: the counter drops by one and, at
    /// zero, the reservation is kept (counter redrawn) with the configured
    /// probability or cleared so the next packet reselects.
    pub fn consume_transmission<R: Rng>(&mut self, config: &ScenarioConfig, rng: &mut R) {
        self.reselection_counter = self.reselection_counter.saturating_sub(1);
        if self.reselection_counter == 0 {
            self.reselection_tick(config, rng);
        }
    }

    /// Counter-exhausted reselection decision.
    pub fn reselection_tick<R: Rng>(&mut self, config: &ScenarioConfig, rng: &mut R) {
        debug_assert_eq!(self.reselection_counter, 0);
        if rng.gen_bool(config.sps_keep_probability) {
            self.reselection_counter = Self::draw_counter(config, rng);
        } else {
            self.reservation = None;
        }
    }
}

impl Default for SpsProcess {
    fn default() -> Self {
        Self::new()
    }
}

/// Packets awaiting a resource grant, ordered by (priority, enqueue order):
/// lower priority number first, FIFO within a priority.
#[derive(Debug, Clone, Default)]
pub struct TxQueue {
    entries: Vec<QueuedPacket>,
    next_seq: u64,
}

#[derive(Debug, Clone)]
pub struct QueuedPacket {
    pub packet: Packet,
    pub enqueued_ms: TimeMs,
    seq: u64,
}

impl TxQueue {
    pub fn new() -> Self {
        TxQueue::default()
    }

    /// Inserts in (priority, arrival) order.
    pub fn enqueue(&mut self, packet: Packet, now: TimeMs) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let entry = QueuedPacket {
            packet,
            enqueued_ms: now,
            seq,
        };
        let pos = self
            .entries
            .partition_point(|e| (e.packet.priority, e.seq) <= (entry.packet.priority, entry.seq));
        self.entries.insert(pos, entry);
    }

    pub fn pop(&mut self) -> Option<QueuedPacket> {
        if self.entries.is_empty() {
            None
        } else {
            Some(self.entries.remove(0))
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Drops queued packets matching a predicate (e.g. cancelling SUM retries
    /// after completion).
    pub fn retain(&mut self, keep: impl Fn(&Packet) -> bool) {
        self.entries.retain(|e| keep(&e.packet));
    }
}

/// A committed future transmission of one node.
#[derive(Debug, Clone)]
pub struct ClaimedTx {
    pub packet: Packet,
    pub subchannel_start: u32,
    pub is_harq_copy: bool,
    pub from_reservation: bool,
}

/// Per-node MAC state: grant queue, claimed future subframes, sensing, SPS.
#[derive(Debug, Clone)]
pub struct NodeMac {
    pub queue: TxQueue,
    pub claims: BTreeMap<TimeMs, ClaimedTx>,
    pub sensing: SensingHistory,
    pub sps: SpsProcess,
}

impl NodeMac {
    pub fn new(subchannels: u32) -> Self {
        NodeMac {
            queue: TxQueue::new(),
            claims: BTreeMap::new(),
            sensing: SensingHistory::new(subchannels),
            sps: SpsProcess::new(),
        }
    }

    pub fn has_claim_at(&self, subframe: TimeMs) -> bool {
        self.claims.contains_key(&subframe)
    }

    /// Removes and returns the transmission due this subframe, if any.
    pub fn take_due(&mut self, now: TimeMs) -> Option<ClaimedTx> {
        self.claims.remove(&now)
    }

    /// Drops queued packets and future claims of a kind (service cancel).
    pub fn cancel_kind(&mut self, kind: PacketKind, now: TimeMs) {
        self.queue.retain(|p| p.kind != kind);
        self.claims.retain(|&t, c| t < now || c.packet.kind != kind);
    }
}
