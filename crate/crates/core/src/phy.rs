//! Radio abstraction: log-distance path loss with frozen per-link shadowing,
//! per-subframe SINR resolution with capture and half-duplex, and blind HARQ
//! retransmission scheduling.

use rand::Rng;

use crate::config::ScenarioConfig;
use crate::protocol::Packet;
use crate::rng::pair_normal;
use crate::types::{NodeId, TimeMs};

/// Log-distance channel parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathlossParams {
    /// Loss at 1 m, in dB.
    pub reference_loss_db: f64,
    pub exponent: f64,
    /// Log-normal shadowing standard deviation, per link, frozen per run.
    pub shadowing_sigma_db: f64,
    pub tx_power_dbm: f64,
    /// Thermal noise per subchannel.
    pub noise_floor_dbm: f64,
}

impl PathlossParams {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        PathlossParams {
            reference_loss_db: config.pathloss_ref_db,
            exponent: config.pathloss_exponent,
            shadowing_sigma_db: config.shadowing_sigma_db,
            tx_power_dbm: config.tx_power_dbm,
            noise_floor_dbm: config.noise_floor_dbm,
        }
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Received power over the log-distance model:
/// `tx - (ref_loss + 10·n·log10(d)) + shadowing`. Distances below 1 m clamp
/// to the 1 m reference point.
pub fn received_power(params: &PathlossParams, distance_m: f64, link_shadowing_db: f64) -> f64 {
    let d = distance_m.max(1.0);
    params.tx_power_dbm - (params.reference_loss_db + 10.0 * params.exponent * d.log10())
        + link_shadowing_db
}

/// Deterministic shadowing term in dB for a node pair.
pub fn link_shadowing_db(shadowing_seed: u64, sigma_db: f64, a: NodeId, b: NodeId) -> f64 {
    if sigma_db == 0.0 {
        return 0.0;
    }
    sigma_db * pair_normal(shadowing_seed, a.0, b.0)
}

/// Precomputed `d^(-n)` lookup over squared distance, used in the per-pair
/// hot path. Geometric binning at 64 steps per octave keeps the error under
/// 0.1 dB across the whole road span.
pub struct DistancePowerTable {
    half_exponent: f64,
    /// Indexed by [(exponent<<6) | mantissa-top-6-bits] of the f64 bit
    /// pattern of d², offset so d² = 1.0 maps to entry 0.
    table: Vec<f64>,
    max_index: usize,
}

const TABLE_MANTISSA_BITS: u32 = 6;

impl DistancePowerTable {
    /// Covers d² in [1, 2^max_octaves]; larger inputs fall back to `powf`.
    pub fn new(exponent: f64, max_octaves: u32) -> Self {
        let steps = 1usize << TABLE_MANTISSA_BITS;
        let n = max_octaves as usize * steps;
        let half_exponent = exponent / 2.0;
        let mut table = Vec::with_capacity(n);
        for i in 0..n {
            let octave = (i / steps) as f64;
            let mantissa = (i % steps) as f64 / steps as f64;
            let bin_centre = 2f64.powf(octave) * (1.0 + mantissa + 0.5 / steps as f64);
            table.push(bin_centre.powf(-half_exponent));
        }
        DistancePowerTable {
            half_exponent,
            table,
            max_index: n - 1,
        }
    }

    /// Returns `(d²)^(-n/2) = d^(-n)` for d² >= 1.
    #[inline]
    pub fn pow_from_d2(&self, d2: f64) -> f64 {
        debug_assert!(d2 >= 1.0);
        let bits = d2.to_bits();
        let idx = ((bits >> (52 - TABLE_MANTISSA_BITS)) as i64
            - ((1023i64) << TABLE_MANTISSA_BITS)) as isize;
        if idx < 0 {
            return 1.0;
        }
        let idx = idx as usize;
        if idx > self.max_index {
            return d2.powf(-self.half_exponent);
        }
        self.table[idx]
    }
}

/// One over-the-air transmission in one subframe.
#[derive(Debug, Clone)]
pub struct TransmissionAttempt {
    pub packet: Packet,
    pub tx_node: NodeId,
    pub subframe: TimeMs,
    /// First subchannel of the contiguous footprint.
    pub subchannel_start: u32,
    pub subchannel_count: u32,
    pub is_harq_copy: bool,
}

impl TransmissionAttempt {
    pub fn overlaps(&self, other: &TransmissionAttempt) -> bool {
        let a0 = self.subchannel_start;
        let a1 = a0 + self.subchannel_count;
        let b0 = other.subchannel_start;
        let b1 = b0 + other.subchannel_count;
        a0 < b1 && b0 < a1
    }
}

/// Why a reception failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum FailureCause {
    /// Receiver was transmitting this subframe.
    HalfDuplex,
    /// Signal below threshold even without interference.
    Sinr,
    /// Interference from overlapping attempts pushed SINR below threshold.
    CollisionTie,
}

/// Outcome of one (attempt, receiver) evaluation.
#[derive(Debug, Clone)]
pub struct ReceptionOutcome {
    pub rx_node: NodeId,
    pub packet: Packet,
    pub is_harq_copy: bool,
    pub success: bool,
    pub failure_cause: Option<FailureCause>,
    pub rx_power_dbm: f64,
}

/// SINR decode threshold for an MCS index, in dB.
pub fn sinr_threshold(config: &ScenarioConfig, mcs: u32) -> Option<f64> {
    config.sinr_threshold_db(mcs)
}

/// Resolves all receptions of one subframe from first principles: for every
/// (attempt, receiver) pair, SINR = signal / (noise·footprint + sum of other
/// attempts overlapping >= 1 subchannel of the signal). A receiver that
/// transmits this subframe hears nothing (half-duplex). Capture falls out of
/// the arithmetic: among co-channel attempts only those above their threshold
/// decode, so the stronger packet wins.
///
/// This standalone form evaluates every pair; the engine inlines the same
/// arithmetic with its sensing bookkeeping for speed. Tests use this one.
pub fn resolve_subframe(
    attempts: &[TransmissionAttempt],
    positions: &dyn Fn(NodeId) -> f64,
    receivers: &[NodeId],
    params: &PathlossParams,
    shadowing_seed: u64,
    config: &ScenarioConfig,
) -> Vec<ReceptionOutcome> {
    if attempts.is_empty() {
        return Vec::new();
    }
    debug_assert!(attempts.windows(2).all(|w| w[0].subframe == w[1].subframe));
    let noise_mw = dbm_to_mw(params.noise_floor_dbm);
    let tx_nodes: Vec<NodeId> = attempts.iter().map(|a| a.tx_node).collect();
    let mut outcomes = Vec::new();
    for &rx in receivers {
        let rx_pos = positions(rx);
        let rx_is_tx = tx_nodes.contains(&rx);
        // Received power of each attempt at this node.
        let powers: Vec<f64> = attempts
            .iter()
            .map(|a| {
                let d = (positions(a.tx_node) - rx_pos).abs();
                let s = link_shadowing_db(shadowing_seed, params.shadowing_sigma_db, a.tx_node, rx);
                dbm_to_mw(received_power(params, d, s))
            })
            .collect();
        for (i, attempt) in attempts.iter().enumerate() {
            if attempt.tx_node == rx {
                continue;
            }
            let rx_power_dbm = mw_to_dbm(powers[i]);
            if rx_is_tx {
                outcomes.push(ReceptionOutcome {
                    rx_node: rx,
                    packet: attempt.packet.clone(),
                    is_harq_copy: attempt.is_harq_copy,
                    success: false,
                    failure_cause: Some(FailureCause::HalfDuplex),
                    rx_power_dbm,
                });
                continue;
            }
            let mut interference_mw = 0.0;
            for (j, other) in attempts.iter().enumerate() {
                if j != i && other.tx_node != rx && attempt.overlaps(other) {
                    interference_mw += powers[j];
                }
            }
            let noise = noise_mw * attempt.subchannel_count as f64;
            let sinr_db = mw_to_dbm(powers[i] / (noise + interference_mw));
            let threshold = sinr_threshold(config, attempt.packet.mcs)
                .expect("attempt carries an MCS missing from the configured table");
            let success = sinr_db >= threshold;
            let failure_cause = if success {
                None
            } else if mw_to_dbm(powers[i] / noise) >= threshold {
                Some(FailureCause::CollisionTie)
            } else {
                Some(FailureCause::Sinr)
            };
            outcomes.push(ReceptionOutcome {
                rx_node: rx,
                packet: attempt.packet.clone(),
                is_harq_copy: attempt.is_harq_copy,
                success,
                failure_cause,
                rx_power_dbm,
            });
        }
    }
    outcomes
}

/// HARQ retransmission window half-width in subframes.
pub const HARQ_WINDOW: u64 = 15;

/// Draws the blind-retransmission subframe for a packet granted at
/// `initial_subframe`: uniform over [t-15, t+15] excluding t itself, clipped
/// to causality (`min_subframe`, normally creation+1) and to subframes the
/// node has not already claimed. When the original grant is the first
/// possible opportunity after creation the window collapses to [t+1, t+15].
/// Returns `None` when no slot is free.
pub fn harq_schedule<R: Rng>(
    initial_subframe: TimeMs,
    min_subframe: TimeMs,
    claimed: &dyn Fn(TimeMs) -> bool,
    rng: &mut R,
) -> Option<TimeMs> {
    let lo = initial_subframe.saturating_sub(HARQ_WINDOW).max(min_subframe);
    let hi = initial_subframe + HARQ_WINDOW;
    let candidates: Vec<TimeMs> = (lo..=hi)
        .filter(|&t| t != initial_subframe && !claimed(t))
        .collect();
    if candidates.is_empty() {
        None
    } else {
        Some(candidates[rng.gen_range(0..candidates.len())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_scenario;
    use crate::protocol::PacketKind;
    use crate::types::PacketId;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> PathlossParams {
        PathlossParams {
            reference_loss_db: 47.0,
            exponent: 2.75,
            shadowing_sigma_db: 0.0,
            tx_power_dbm: 23.0,
            noise_floor_dbm: -104.0,
        }
    }

    #[test]
    fn received_power_at_reference_distance() {
        let p = received_power(&params(), 1.0, 0.0);
        assert!((p - -24.0).abs() < 1e-12, "{p}");
    }

    #[test]
    fn received_power_one_decade() {
        let p = received_power(&params(), 10.0, 0.0);
        assert!((p - -51.5).abs() < 1e-12, "{p}");
    }

    #[test]
    fn decade_step_is_exact() {
        let p10 = received_power(&params(), 10.0, 0.0);
        let p100 = received_power(&params(), 100.0, 0.0);
        assert!((p10 - p100 - 27.5).abs() < 1e-9);
    }

    #[test]
    fn received_power_strictly_decreasing() {
        let p = params();
        let mut last = f64::INFINITY;
        for d in [1.0, 2.0, 5.0, 17.0, 100.0, 512.0, 2999.0] {
            let v = received_power(&p, d, 0.0);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn distance_power_table_tracks_powf() {
        let table = DistancePowerTable::new(2.75, 24);
        for d in [1.0f64, 1.4, 3.0, 9.9, 55.0, 300.0, 1234.5, 2999.0] {
            let d2 = d * d;
            let exact = d2.powf(-2.75 / 2.0);
            let approx = table.pow_from_d2(d2);
            let err_db = 10.0 * (approx / exact).log10().abs();
            assert!(err_db < 0.1, "d={d} err={err_db} dB");
        }
    }

    fn mk_attempt(
        config: &ScenarioConfig,
        kind: PacketKind,
        tx: NodeId,
        id: u64,
        start: u32,
    ) -> TransmissionAttempt {
        TransmissionAttempt {
            packet: Packet::new(PacketId(id), kind, tx, 0, config),
            tx_node: tx,
            subframe: 100,
            subchannel_start: start,
            subchannel_count: config.footprints.of(kind),
            is_harq_copy: false,
        }
    }

    #[test]
    fn single_attempt_above_threshold_succeeds() {
        let config = default_scenario();
        // 100 m: rx = -24 - 27.5*2 = -79 dBm, SNR vs -104+? well above 8 dB.
        let attempts = vec![mk_attempt(&config, PacketKind::Sum, NodeId(1), 1, 0)];
        let pos = |n: NodeId| if n == NodeId(1) { 0.0 } else { 100.0 };
        let outcomes = resolve_subframe(&attempts, &pos, &[NodeId(2)], &params(), 0, &config);
        assert_eq!(outcomes.len(), 1);
        assert!(outcomes[0].success);
        assert_eq!(outcomes[0].failure_cause, None);
    }

    #[test]
    fn transmitting_receiver_fails_half_duplex() {
        let config = default_scenario();
        let attempts = vec![
            mk_attempt(&config, PacketKind::Sum, NodeId(1), 1, 0),
            mk_attempt(&config, PacketKind::Ack, NodeId(2), 2, 3),
        ];
        let pos = |n: NodeId| match n {
            NodeId(1) => 0.0,
            _ => 50.0,
        };
        let outcomes =
            resolve_subframe(&attempts, &pos, &[NodeId(1), NodeId(2)], &params(), 0, &config);
        // Node 2 transmits, so the SUM it would otherwise hear is lost.
        let at_2: Vec<_> = outcomes.iter().filter(|o| o.rx_node == NodeId(2)).collect();
        assert_eq!(at_2.len(), 1);
        assert!(!at_2[0].success);
        assert_eq!(at_2[0].failure_cause, Some(FailureCause::HalfDuplex));
        // And symmetrically node 1 misses the ACK.
        let at_1: Vec<_> = outcomes.iter().filter(|o| o.rx_node == NodeId(1)).collect();
        assert_eq!(at_1[0].failure_cause, Some(FailureCause::HalfDuplex));
    }

    #[test]
    fn equal_power_overlap_fails_both() {
        let config = default_scenario();
        let attempts = vec![
            mk_attempt(&config, PacketKind::Sum, NodeId(1), 1, 0),
            mk_attempt(&config, PacketKind::Sum, NodeId(2), 2, 0),
        ];
        // Both transmitters 100 m from the receiver at 0: equal power, so
        // SINR ≈ 0 dB < 8 dB threshold for both.
        let pos = |n: NodeId| match n {
            NodeId(1) => -100.0,
            NodeId(2) => 100.0,
            _ => 0.0,
        };
        let outcomes = resolve_subframe(&attempts, &pos, &[NodeId(3)], &params(), 0, &config);
        assert_eq!(outcomes.len(), 2);
        for o in &outcomes {
            assert!(!o.success);
            assert_eq!(o.failure_cause, Some(FailureCause::CollisionTie));
        }
        // Hand oracle: SINR = p/(p + noise) < 1, i.e. < 0 dB.
        let p = dbm_to_mw(received_power(&params(), 100.0, 0.0));
        let noise = dbm_to_mw(-104.0) * 2.0;
        let sinr_db = mw_to_dbm(p / (p + noise));
        assert!(sinr_db < 0.0);
    }

    #[test]
    fn nearer_packet_captures() {
        let config = default_scenario();
        let attempts = vec![
            mk_attempt(&config, PacketKind::Sum, NodeId(1), 1, 0),
            mk_attempt(&config, PacketKind::Sum, NodeId(2), 2, 0),
        ];
        // Node 1 at 20 m, node 2 at 300 m: alone, both would decode; with
        // the overlap only the near packet clears its threshold.
        let pos = |n: NodeId| match n {
            NodeId(1) => 20.0,
            NodeId(2) => 300.0,
            _ => 0.0,
        };
        let outcomes = resolve_subframe(&attempts, &pos, &[NodeId(3)], &params(), 0, &config);
        let near = outcomes.iter().find(|o| o.packet.source == NodeId(1)).unwrap();
        let far = outcomes.iter().find(|o| o.packet.source == NodeId(2)).unwrap();
        assert!(near.success);
        assert!(!far.success);
        assert_eq!(far.failure_cause, Some(FailureCause::CollisionTie));
    }

    #[test]
    fn disjoint_subchannels_do_not_interfere() {
        let config = default_scenario();
        let attempts = vec![
            mk_attempt(&config, PacketKind::Sum, NodeId(1), 1, 0),
            mk_attempt(&config, PacketKind::Sum, NodeId(2), 2, 2),
        ];
        let pos = |n: NodeId| match n {
            NodeId(1) => -150.0,
            NodeId(2) => 150.0,
            _ => 0.0,
        };
        let outcomes = resolve_subframe(&attempts, &pos, &[NodeId(3)], &params(), 0, &config);
        assert!(outcomes.iter().all(|o| o.success));
    }

    #[test]
    fn capture_is_monotone_in_rx_power() {
        // For a fixed interferer, moving the wanted transmitter closer can
        // only flip failure into success, never the reverse.
        let config = default_scenario();
        let pos_interferer = 500.0;
        let mut last_success = false;
        for d in (1..=50).map(|k| 500.0 - (k as f64) * 9.5) {
            let attempts = vec![
                mk_attempt(&config, PacketKind::Sum, NodeId(1), 1, 0),
                mk_attempt(&config, PacketKind::Sum, NodeId(2), 2, 0),
            ];
            let pos = move |n: NodeId| match n {
                NodeId(1) => d,
                NodeId(2) => pos_interferer,
                _ => 0.0,
            };
            let outcomes = resolve_subframe(&attempts, &pos, &[NodeId(3)], &params(), 0, &config);
            let wanted = outcomes.iter().find(|o| o.packet.source == NodeId(1)).unwrap();
            assert!(wanted.success || !last_success || d > 400.0);
            last_success = wanted.success;
        }
        assert!(last_success, "closest position should decode");
    }

    #[test]
    fn sinr_threshold_defaults_and_monotonicity() {
        let config = default_scenario();
        assert_eq!(sinr_threshold(&config, 6), Some(3.0));
        assert_eq!(sinr_threshold(&config, 7), Some(4.0));
        assert_eq!(sinr_threshold(&config, 11), Some(8.0));
        assert_eq!(sinr_threshold(&config, 5), None);
        assert!(sinr_threshold(&config, 6) < sinr_threshold(&config, 11));
    }

    #[test]
    fn harq_draw_stays_in_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen_min = u64::MAX;
        let mut seen_max = 0;
        for _ in 0..10_000 {
            let t = harq_schedule(1000, 0, &|_| false, &mut rng).unwrap();
            assert_ne!(t, 1000);
            seen_min = seen_min.min(t);
            seen_max = seen_max.max(t);
        }
        assert_eq!(seen_min, 985);
        assert_eq!(seen_max, 1015);
    }

    #[test]
    fn harq_first_opportunity_clamps_forward() {
        // Packet created at 996, granted at 1000 (the earliest slot): the
        // whole leading half of the window precedes the first opportunity,
        // so draws collapse to [t+1, t+15].
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen_min = u64::MAX;
        for _ in 0..2_000 {
            let t = harq_schedule(1000, 1000, &|_| false, &mut rng).unwrap();
            assert!((1001..=1015).contains(&t));
            seen_min = seen_min.min(t);
        }
        assert_eq!(seen_min, 1001);
    }

    #[test]
    fn harq_respects_claims() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Claim everything except 1001.
        let t = harq_schedule(1000, 0, &|t| t != 1001, &mut rng);
        assert_eq!(t, Some(1001));
        let none = harq_schedule(1000, 0, &|_| true, &mut rng);
        assert_eq!(none, None);
    }
}
