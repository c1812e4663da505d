//! Transaction-service state machines: the RSU side (periodic SAM, SUM intake
//! with dedupe, FIFO pending queue, batched ACK dispatch) and the vehicle side
//! (eligibility on SAM, SUM at trigger, periodic retries, completion on ACK).

use crate::config::{AckPolicy, ScenarioConfig};
use crate::types::{NodeId, PacketId, TimeMs};

/// Message kinds exchanged on the sidelink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum PacketKind {
    Bsm,
    Sam,
    Sum,
    Ack,
}

impl PacketKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Bsm => "bsm",
            PacketKind::Sam => "sam",
            PacketKind::Sum => "sum",
            PacketKind::Ack => "ack",
        }
    }
}

/// A generated message awaiting or undergoing transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: PacketId,
    pub kind: PacketKind,
    pub source: NodeId,
    pub payload_b: u32,
    pub mcs: u32,
    pub priority: u8,
    pub created_ms: TimeMs,
    /// Vehicles addressed by this ACK; empty for other kinds.
    pub ack_members: Vec<NodeId>,
    /// 1-based SUM attempt number; 0 for other kinds.
    pub sum_attempt_no: u32,
}

impl Packet {
    pub fn new(
        id: PacketId,
        kind: PacketKind,
        source: NodeId,
        created_ms: TimeMs,
        config: &ScenarioConfig,
    ) -> Self {
        Packet {
            id,
            kind,
            source,
            payload_b: config.payload_of(kind),
            mcs: config.mcs_of(kind),
            priority: config.priority_of(kind),
            created_ms,
            ack_members: Vec::new(),
            sum_attempt_no: 0,
        }
    }
}

/// Progress of one vehicle through the transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VuePhase {
    /// Has not decoded a SAM yet; a trigger crossing produces nothing.
    Ineligible,
    /// Heard a SAM; will request on crossing.
    Eligible,
    /// Transmitted at least one SUM, awaiting ACK.
    Requesting,
    /// ACK decoded; transaction done.
    Complete,
    /// Still requesting at run end or road exit.
    Censored,
}

/// Per-vehicle service state.
#[derive(Debug, Clone)]
pub struct VueServiceState {
    pub phase: VuePhase,
    pub sam_heard: bool,
    /// Subframe of the trigger crossing that generated the first SUM.
    pub first_sum_gen_ms: Option<TimeMs>,
    /// Subframe the first SUM actually went over the air.
    pub first_sum_tx_ms: Option<TimeMs>,
    pub attempts: u32,
    pub next_retry_ms: Option<TimeMs>,
    pub complete_ms: Option<TimeMs>,
    /// Identity of the ACK transmission that completed the service, as
    /// (packet id, decode subframe).
    pub completing_ack: Option<(PacketId, TimeMs)>,
}

impl Default for VueServiceState {
    fn default() -> Self {
        VueServiceState {
            phase: VuePhase::Ineligible,
            sam_heard: false,
            first_sum_gen_ms: None,
            first_sum_tx_ms: None,
            attempts: 0,
            next_retry_ms: None,
            complete_ms: None,
            completing_ack: None,
        }
    }
}

impl VueServiceState {
    /// A decoded SAM makes an ineligible vehicle eligible; all other phases
    /// are unaffected.
    pub fn on_sam(&mut self) {
        self.sam_heard = true;
        if self.phase == VuePhase::Ineligible {
            self.phase = VuePhase::Eligible;
        }
    }

    /// Trigger-line crossing. Returns true when a first SUM should be
    /// generated now; an ineligible vehicle stays ineligible and never
    /// requests.
    pub fn on_trigger(&mut self, now: TimeMs) -> bool {
        if self.phase != VuePhase::Eligible {
            return false;
        }
        self.phase = VuePhase::Requesting;
        self.first_sum_gen_ms = Some(now);
        self.attempts = 1;
        true
    }

    /// Records the first SUM leaving the radio and arms the retry timer
    /// `sum_repeat_ms` after the transmission subframe.
    pub fn on_first_sum_tx(&mut self, tx_ms: TimeMs, sum_repeat_ms: u64) {
        if self.first_sum_tx_ms.is_none() {
            self.first_sum_tx_ms = Some(tx_ms);
            self.next_retry_ms = Some(tx_ms + sum_repeat_ms);
        }
    }

    /// Returns true when a retry SUM must be generated this subframe.
    pub fn retry_due(&self, now: TimeMs) -> bool {
        self.phase == VuePhase::Requesting && self.next_retry_ms.is_some_and(|t| now >= t)
    }

    /// Generates the next attempt and re-arms the retry timer.
    pub fn on_retry(&mut self, now: TimeMs, sum_repeat_ms: u64) -> u32 {
        debug_assert!(self.retry_due(now));
        self.attempts += 1;
        self.next_retry_ms = Some(now + sum_repeat_ms);
        self.attempts
    }

    /// Decoded ACK addressed to this vehicle. Completion is recorded once;
    /// duplicates and ACKs received after completion change nothing. Returns
    /// true if this call completed the service.
    pub fn on_ack(&mut self, ack_id: PacketId, now: TimeMs) -> bool {
        if self.phase != VuePhase::Requesting {
            return false;
        }
        self.phase = VuePhase::Complete;
        self.complete_ms = Some(now);
        self.completing_ack = Some((ack_id, now));
        self.next_retry_ms = None;
        true
    }

    /// Marks an unfinished request censored (run end or road exit).
    pub fn censor(&mut self) {
        if self.phase == VuePhase::Requesting {
            self.phase = VuePhase::Censored;
            self.next_retry_ms = None;
        }
    }
}

/// RSU-side request queue and dispatch clocks.
#[derive(Debug, Clone)]
pub struct RsuServiceState {
    /// FIFO of requesters awaiting an ACK: (vehicle, first seen subframe).
    pub pending: Vec<(NodeId, TimeMs)>,
    /// Vehicles already covered by a dispatched ACK.
    pub served: std::collections::BTreeSet<NodeId>,
    pub next_sam_ms: TimeMs,
    pub next_ack_eval_ms: TimeMs,
}

impl RsuServiceState {
    pub fn new() -> Self {
        RsuServiceState {
            pending: Vec::new(),
            served: std::collections::BTreeSet::new(),
            next_sam_ms: 0,
            next_ack_eval_ms: 0,
        }
    }

    /// Decoded SUM intake. Duplicate SUMs from a vehicle already pending are
    /// dropped; a vehicle whose ACK was evidently lost (already served) is
    /// re-queued at the tail.
    pub fn on_sum(&mut self, vehicle: NodeId, now: TimeMs) {
        if self.pending.iter().any(|&(v, _)| v == vehicle) {
            return;
        }
        if self.served.contains(&vehicle) {
            self.served.remove(&vehicle);
        }
        self.pending.push((vehicle, now));
    }

    /// Forms ACK member lists according to the batching policy. Full batches
    /// pop the oldest `b` requesters each; a partial batch always stays
    /// pending, waiting for fill-up.
    pub fn form_batches(&mut self, batchsize: u32, policy: AckPolicy) -> Vec<Vec<NodeId>> {
        let b = batchsize as usize;
        let mut batches = Vec::new();
        while self.pending.len() >= b {
            let members: Vec<NodeId> = self.pending.drain(..b).map(|(v, _)| v).collect();
            for &v in &members {
                self.served.insert(v);
            }
            batches.push(members);
            if policy == AckPolicy::IntervalSingle {
                break;
            }
        }
        batches
    }

    pub fn sam_due(&self, now: TimeMs) -> bool {
        now >= self.next_sam_ms
    }

    pub fn on_sam_generated(&mut self, now: TimeMs, sam_period_ms: u64) {
        debug_assert!(self.sam_due(now));
        self.next_sam_ms = now + sam_period_ms;
    }

    pub fn ack_eval_due(&self, now: TimeMs) -> bool {
        now >= self.next_ack_eval_ms
    }

    pub fn on_ack_evaluated(&mut self, now: TimeMs, ack_interval_ms: u64) {
        self.next_ack_eval_ms = now + ack_interval_ms;
    }
}

impl Default for RsuServiceState {
    fn default() -> Self {
        Self::new()
    }
}
