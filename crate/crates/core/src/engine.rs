//! The subframe loop: mobility, application timers, MAC grants, PHY
//! resolution, state-machine delivery and metric collection, wired together
//! in a fixed deterministic order at 1 ms granularity.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::{self, AckPolicy, ScenarioConfig};
use crate::mac::{
    compute_cbr, select_resource, ClaimedTx, DecodedReservation, NodeMac, ResourceGrid,
    SelectedResource, SpsProcess, SpsReservation, SELECTION_MAX_AHEAD, SELECTION_MIN_AHEAD,
};
use crate::metrics::{
    Accumulator, MetricsBundle, PerCounters, RxRecord, SeriesPoint, ServiceRecord, ServiceStatus,
    TraceLog, TxCounts, TxRecord,
};
use crate::mobility::{ManualVehicle, TrafficState};
use crate::phy::{dbm_to_mw, harq_schedule, DistancePowerTable, FailureCause};
use crate::protocol::{Packet, PacketKind, RsuServiceState, VuePhase, VueServiceState};
use crate::rate_control::RateControlState;
use crate::rng::{pair_table_index, standard_normal_quantile, RngStreams, PAIR_TABLE_LEN};
use crate::types::{NodeId, PacketId, TimeMs};

/// Cadence of CBR sampling and rate-control updates, in ms.
const CBR_SAMPLE_PERIOD: u64 = 100;
/// Bucket width of the exported CBR/ITT time series, in ms.
const SERIES_BUCKET_MS: u64 = 1000;

/// Run-level switches that do not belong in the scenario itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record the full transmission/reception trace and per-node CBR series.
    pub record_trace: bool,
}

/// One configured simulation run. `(config, seed)` fully determines every
/// output byte.
pub struct Runner {
    config: ScenarioConfig,
    options: RunOptions,
    manual_vehicles: Option<Vec<ManualVehicle>>,
}

impl Runner {
    pub fn new(config: ScenarioConfig) -> Self {
        Runner {
            config,
            options: RunOptions::default(),
            manual_vehicles: None,
        }
    }

    pub fn with_options(mut self, options: RunOptions) -> Self {
        self.options = options;
        self
    }

    /// Replaces the random initial population and arrivals with an explicit
    /// vehicle list (scripted scenarios).
    pub fn with_manual_vehicles(mut self, vehicles: Vec<ManualVehicle>) -> Self {
        self.manual_vehicles = Some(vehicles);
        self
    }

    pub fn run(self) -> MetricsBundle {
        Engine::new(self.config, self.options, self.manual_vehicles).run()
    }
}

/// Runs a scenario and writes the full output tree (effective config echo,
/// metric CSVs, summary.json, optional trace) into `dir`.
pub fn run_to_dir(
    config: ScenarioConfig,
    dir: &Path,
    options: RunOptions,
) -> std::io::Result<MetricsBundle> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("effective_config.txt"), config::serialize(&config))?;
    let bundle = Runner::new(config).with_options(options).run();
    crate::metrics::write_outputs(&bundle, dir)?;
    Ok(bundle)
}

struct VehicleNode {
    mac: NodeMac,
    service: VueServiceState,
    rc: RateControlState,
    next_bsm_ms: Option<TimeMs>,
    last_bsm_gen_ms: Option<TimeMs>,
}

/// In-flight BSM delivery bookkeeping for PER: the in-vicinity audience is
/// frozen at the first over-the-air instance; a receiver counts as served if
/// any instance decodes there.
struct BsmDelivery {
    expected: Vec<NodeId>,
    decoded: Vec<bool>,
    remaining_instances: u8,
}

enum DeliveryEvent {
    SamHeard { vehicle: NodeId },
    SumAtRsu { vehicle: NodeId, attempt_no: u32 },
    AckAtVehicle { vehicle: NodeId, packet: PacketId },
}

struct AttemptInFlight {
    packet: Packet,
    tx: NodeId,
    subchannel_start: u32,
    subchannel_count: u32,
    /// Next reserved occurrence advertised in scheduling metadata, if any.
    advertised_reservation: Option<(TimeMs, u32, u32)>,
}

/// Per-attempt data for the pairwise hot loop, packed to 16 bytes so the
/// inner loop walks one dense lane. `meta` holds start (bits 0..4),
/// count (4..8), combo (8..14) and the gate code (14..17).
#[derive(Clone, Copy, Default)]
struct PackedAttempt {
    pos: f64,
    tx: u32,
    meta: u32,
}

const GATE_ALL_VEHICLES: u32 = 0;
const GATE_RSU_ONLY: u32 = 1;
const GATE_MEMBERS: u32 = 2;
const GATE_VICINITY: u32 = 3;
const GATE_EVERYONE: u32 = 4;

/// Slow-lane per-attempt data, read only for shortlisted pairs.
#[derive(Default)]
struct AttemptLanes {
    packed: Vec<PackedAttempt>,
    combo: Vec<u8>,
    threshold_lin: Vec<f64>,
    /// threshold_lin * noise over the footprint, precomputed.
    thr_noise_lin: Vec<f64>,
}

impl AttemptLanes {
    fn clear(&mut self) {
        self.packed.clear();
        self.combo.clear();
        self.threshold_lin.clear();
        self.thr_noise_lin.clear();
    }

    fn len(&self) -> usize {
        self.packed.len()
    }
}

/// Local per-receiver cell accumulator; the grid is validated to at most 16
/// subchannels so masked indexing needs no bounds checks.
const LOCAL_CELLS: usize = 16;

const COMBO_SLOTS: usize = 64;

#[inline(always)]
fn combo_of(start: usize, count: usize) -> u8 {
    ((start << 3) | count) as u8
}

#[inline(always)]
fn combos_overlap(a: u8, b: u8) -> bool {
    let (sa, ca) = ((a >> 3) as usize, (a & 7) as usize);
    let (sb, cb) = ((b >> 3) as usize, (b & 7) as usize);
    sa < sb + cb && sb < sa + ca
}

struct Engine {
    config: ScenarioConfig,
    options: RunOptions,
    grid: ResourceGrid,
    streams: RngStreams,
    traffic: TrafficState,
    rsu_mac: NodeMac,
    rsu: RsuServiceState,
    /// Highest SUM attempt number already delivered to the RSU per vehicle.
    rsu_seen_attempt: BTreeMap<NodeId, u32>,
    vehicles: Vec<VehicleNode>,
    next_packet_id: u64,

    // Precomputed channel constants.
    dpow: DistancePowerTable,
    /// Per-link gain (tx power, reference loss and shadowing combined) as a
    /// linear factor, indexed by the pair hash.
    shadow_gain: Vec<f64>,
    noise_mw: f64,
    thr_lin_by_mcs: BTreeMap<u32, f64>,

    // Per-subframe caches.
    positions: Vec<f64>,
    active_ids: Vec<u32>,
    tx_stamp: Vec<TimeMs>,
    powers_scratch: Vec<f64>,
    cand_scratch: Vec<usize>,
    lanes_scratch: AttemptLanes,

    // Metrics.
    per: PerCounters,
    bsm_deliveries: BTreeMap<PacketId, BsmDelivery>,
    planned_instances: BTreeMap<PacketId, u8>,
    cbr_acc: Accumulator,
    cbr_series: Vec<SeriesPoint>,
    itt_acc: Accumulator,
    itt_series: Vec<SeriesPoint>,
    itt_bucket: Accumulator,
    itt_bucket_start: TimeMs,
    tx_counts: TxCounts,
    half_duplex_losses: u64,
    trace: Option<TraceLog>,
}

impl Engine {
    fn new(
        config: ScenarioConfig,
        options: RunOptions,
        manual_vehicles: Option<Vec<ManualVehicle>>,
    ) -> Self {
        let mut streams = RngStreams::new(config.rng_seed);
        let traffic = match &manual_vehicles {
            Some(specs) => TrafficState::with_vehicles(&config, specs),
            None => TrafficState::init(&config, &mut streams.mobility),
        };
        let grid = ResourceGrid::from_config(&config);
        let dpow = DistancePowerTable::new(config.pathloss_exponent, 26);
        let lin_const = dbm_to_mw(config.tx_power_dbm - config.pathloss_ref_db);
        let shadow_gain = (0..PAIR_TABLE_LEN)
            .map(|i| {
                lin_const * dbm_to_mw(config.shadowing_sigma_db * standard_normal_quantile(i))
            })
            .collect();
        let noise_mw = dbm_to_mw(config.noise_floor_dbm);
        let thr_lin_by_mcs = config
            .mcs_thresholds_db
            .iter()
            .map(|(&mcs, &db)| (mcs, dbm_to_mw(db)))
            .collect();
        let trace = options.record_trace.then(TraceLog::default);

        let mut engine = Engine {
            grid,
            streams,
            traffic,
            rsu_mac: NodeMac::new(config.subchannels_per_subframe),
            rsu: RsuServiceState::new(),
            rsu_seen_attempt: BTreeMap::new(),
            vehicles: Vec::new(),
            next_packet_id: 1,
            dpow,
            shadow_gain,
            noise_mw,
            thr_lin_by_mcs,
            positions: Vec::new(),
            active_ids: Vec::new(),
            tx_stamp: Vec::new(),
            powers_scratch: Vec::new(),
            cand_scratch: Vec::new(),
            lanes_scratch: AttemptLanes::default(),
            per: PerCounters::default(),
            bsm_deliveries: BTreeMap::new(),
            planned_instances: BTreeMap::new(),
            cbr_acc: Accumulator::default(),
            cbr_series: Vec::new(),
            itt_acc: Accumulator::default(),
            itt_series: Vec::new(),
            itt_bucket: Accumulator::default(),
            itt_bucket_start: 0,
            tx_counts: TxCounts::default(),
            half_duplex_losses: 0,
            trace,
            options,
            config,
        };
        let initial = engine.traffic.vehicles.len();
        for _ in 0..initial {
            engine.alloc_vehicle_state(0);
        }
        engine
    }

    fn alloc_vehicle_state(&mut self, now: TimeMs) {
        let base_itt = self.config.bsm_itt_bounds_ms.0;
        let next_bsm_ms = if self.config.bsm_enabled {
            use rand::Rng;
            Some(now + self.streams.app.gen_range(0..base_itt))
        } else {
            None
        };
        self.vehicles.push(VehicleNode {
            mac: NodeMac::new(self.config.subchannels_per_subframe),
            service: VueServiceState::default(),
            rc: RateControlState::new(&self.config),
            next_bsm_ms,
            last_bsm_gen_ms: None,
        });
    }

    fn fresh_packet_id(&mut self) -> PacketId {
        let id = PacketId(self.next_packet_id);
        self.next_packet_id += 1;
        id
    }

    /// Refreshes the flat position/active caches after mobility moved.
    fn refresh_node_caches(&mut self) {
        let node_count = self.vehicles.len() + 1;
        self.positions.resize(node_count, 0.0);
        self.positions[0] = self.config.rsu_position_m;
        self.active_ids.clear();
        self.active_ids.push(0);
        for (i, v) in self.traffic.vehicles.iter().enumerate() {
            self.positions[i + 1] = v.position_m;
            if v.active {
                self.active_ids.push(i as u32 + 1);
            }
        }
        if self.tx_stamp.len() < node_count {
            self.tx_stamp.resize(node_count, u64::MAX);
        }
    }

    fn run(mut self) -> MetricsBundle {
        let duration = self.config.sim_duration_ms;
        for now in 0..duration {
            self.step(now);
        }
        self.finish(duration)
    }

    fn step(&mut self, now: TimeMs) {
        // 1. Mobility: move, spawn, cross, depart.
        let events = self.traffic.advance(now, &mut self.streams.mobility);
        for _ in &events.spawned {
            self.alloc_vehicle_state(now);
        }
        for &dep in &events.departures {
            let node = &mut self.vehicles[dep.index() - 1];
            node.service.censor();
            node.mac.queue.retain(|_| false);
            node.mac.claims.clear();
            node.next_bsm_ms = None;
        }
        self.refresh_node_caches();

        // 2. Roll the sensing window of every active radio.
        self.rsu_mac.sensing.begin_subframe(now);
        for k in 1..self.active_ids.len() {
            let idx = self.active_ids[k] as usize - 1;
            self.vehicles[idx].mac.sensing.begin_subframe(now);
        }

        // 3. Application timers.
        if self.rsu.sam_due(now) {
            self.rsu.on_sam_generated(now, self.config.sam_period_ms);
            let id = self.fresh_packet_id();
            let sam = Packet::new(id, PacketKind::Sam, NodeId::RSU, now, &self.config);
            self.rsu_mac.queue.enqueue(sam, now);
        }
        if self.config.ack_policy != AckPolicy::OnFill && self.rsu.ack_eval_due(now) {
            self.rsu.on_ack_evaluated(now, self.config.ack_interval_ms);
            self.dispatch_acks(now);
        }
        for crossing in &events.crossings {
            let vehicle = crossing.vehicle;
            let idx = vehicle.index() - 1;
            if self.vehicles[idx].service.on_trigger(now) {
                let id = self.fresh_packet_id();
                let mut sum = Packet::new(id, PacketKind::Sum, vehicle, now, &self.config);
                sum.sum_attempt_no = 1;
                self.vehicles[idx].mac.queue.enqueue(sum, now);
            }
        }
        for k in 1..self.active_ids.len() {
            let i = self.active_ids[k] as usize - 1;
            let vehicle = NodeId(i as u32 + 1);
            if self.vehicles[i].service.retry_due(now) {
                let attempt = self.vehicles[i]
                    .service
                    .on_retry(now, self.config.sum_repeat_ms);
                let id = self.fresh_packet_id();
                let mut sum = Packet::new(id, PacketKind::Sum, vehicle, now, &self.config);
                sum.sum_attempt_no = attempt;
                self.vehicles[i].mac.queue.enqueue(sum, now);
            }
            if self.vehicles[i].next_bsm_ms.is_some_and(|due| now >= due) {
                let id = self.fresh_packet_id();
                let bsm = Packet::new(id, PacketKind::Bsm, vehicle, now, &self.config);
                let node = &mut self.vehicles[i];
                node.mac.queue.enqueue(bsm, now);
                if node.last_bsm_gen_ms.is_some() {
                    // The gap between consecutive generations is the ITT in
                    // effect when this BSM was scheduled.
                    let itt = node.rc.current_itt_ms as f64;
                    self.itt_acc.push(itt);
                    self.itt_bucket.push(itt);
                }
                node.last_bsm_gen_ms = Some(now);
                node.next_bsm_ms = Some(node.rc.next_bsm_time(now));
            }
        }

        // 4. MAC emission: claims due this subframe go on the air.
        let attempts = self.collect_attempts(now);

        // 5. PHY: sensing accumulation and SINR resolution.
        let deliveries = self.resolve_attempts(now, &attempts);

        // 6. Deliver decoded packets to the state machines.
        for event in deliveries {
            match event {
                DeliveryEvent::SamHeard { vehicle } => {
                    self.vehicles[vehicle.index() - 1].service.on_sam();
                }
                DeliveryEvent::SumAtRsu {
                    vehicle,
                    attempt_no,
                } => {
                    // Both HARQ copies of an attempt often decode; the
                    // request layer sees each attempt once.
                    let seen = self.rsu_seen_attempt.entry(vehicle).or_insert(0);
                    if attempt_no <= *seen {
                        continue;
                    }
                    *seen = attempt_no;
                    self.rsu.on_sum(vehicle, now);
                    if self.config.ack_policy == AckPolicy::OnFill {
                        self.dispatch_acks(now);
                    }
                }
                DeliveryEvent::AckAtVehicle { vehicle, packet } => {
                    let node = &mut self.vehicles[vehicle.index() - 1];
                    if node.service.on_ack(packet, now) {
                        node.mac.cancel_kind(PacketKind::Sum, now + 1);
                    }
                }
            }
        }

        // 7. Grant assignment for everything generated up to this subframe.
        self.assign_grants(now);

        // 8. Rate control and CBR sampling on the 100 ms grid.
        if now % CBR_SAMPLE_PERIOD == 0 && now > 0 {
            self.sample_cbr(now);
        }
        if now >= self.itt_bucket_start + SERIES_BUCKET_MS {
            self.flush_itt_bucket(now);
        }
    }

    fn dispatch_acks(&mut self, now: TimeMs) {
        let batches = self
            .rsu
            .form_batches(self.config.batchsize, self.config.ack_policy);
        for members in batches {
            let id = self.fresh_packet_id();
            let mut ack = Packet::new(id, PacketKind::Ack, NodeId::RSU, now, &self.config);
            ack.ack_members = members;
            self.rsu_mac.queue.enqueue(ack, now);
        }
    }

    fn collect_attempts(&mut self, now: TimeMs) -> Vec<AttemptInFlight> {
        let mut attempts = Vec::new();
        for k in 0..self.active_ids.len() {
            let node_idx = self.active_ids[k] as usize;
            let node_id = NodeId(node_idx as u32);
            let claim = {
                let (mac, sps_rng) = if node_id.is_rsu() {
                    (&mut self.rsu_mac, &mut self.streams.sps)
                } else {
                    (&mut self.vehicles[node_idx - 1].mac, &mut self.streams.sps)
                };
                let Some(claim) = mac.take_due(now) else {
                    continue;
                };
                if claim.from_reservation && !claim.is_harq_copy {
                    mac.sps.consume_transmission(&self.config, sps_rng);
                }
                claim
            };
            let kind = claim.packet.kind;
            let count = self.config.footprints.of(kind);
            let advertised_reservation = if claim.from_reservation {
                self.mac_of(node_id)
                    .sps
                    .reservation
                    .map(|r| (r.next_subframe, r.subchannel_start, count))
            } else {
                None
            };
            self.tx_stamp[node_idx] = now;
            self.tx_counts.bump(kind, claim.is_harq_copy);
            if kind == PacketKind::Sum {
                // Any SUM instance over the air anchors the retry clock.
                self.vehicles[node_idx - 1]
                    .service
                    .on_first_sum_tx(now, self.config.sum_repeat_ms);
            }
            if let Some(trace) = &mut self.trace {
                trace.transmissions.push(TxRecord {
                    subframe: now,
                    node: node_id,
                    kind,
                    packet: claim.packet.id,
                    is_harq_copy: claim.is_harq_copy,
                    subchannel_start: claim.subchannel_start,
                    subchannel_count: count,
                });
            }
            attempts.push(AttemptInFlight {
                packet: claim.packet,
                tx: node_id,
                subchannel_start: claim.subchannel_start,
                subchannel_count: count,
                advertised_reservation,
            });
        }
        attempts
    }

    /// Who evaluates a decode of this attempt: 0 every vehicle (SAM), 1 the
    /// RSU only (SUM), 2 listed ACK members, 3 vehicles inside the PER
    /// vicinity (one-shot BSM), 4 everyone (reservation-carrying BSM).
    #[inline(always)]
    fn gate_admits(gate: u32, attempt: &AttemptInFlight, rx: u32, d2: f64, vic2: f64) -> bool {
        match gate {
            GATE_ALL_VEHICLES => rx != 0,
            GATE_RSU_ONLY => rx == 0,
            GATE_VICINITY => rx != 0 && d2 <= vic2,
            GATE_EVERYONE => true,
            _ => rx != 0 && attempt.packet.ack_members.contains(&NodeId(rx)),
        }
    }

    fn resolve_attempts(
        &mut self,
        now: TimeMs,
        attempts: &[AttemptInFlight],
    ) -> Vec<DeliveryEvent> {
        let mut deliveries = Vec::new();
        if attempts.is_empty() {
            return deliveries;
        }

        // Freeze the in-vicinity audience of each new BSM instance.
        for attempt in attempts {
            if attempt.packet.kind != PacketKind::Bsm
                || self.bsm_deliveries.contains_key(&attempt.packet.id)
            {
                continue;
            }
            let vic2 = self.config.per_vicinity_m * self.config.per_vicinity_m;
            let tx_pos = self.positions[attempt.tx.index()];
            let mut expected = Vec::new();
            for k in 1..self.active_ids.len() {
                let rx = self.active_ids[k];
                if rx == attempt.tx.0 {
                    continue;
                }
                let dx = self.positions[rx as usize] - tx_pos;
                if dx * dx <= vic2 {
                    expected.push(NodeId(rx));
                }
            }
            let remaining = self
                .planned_instances
                .remove(&attempt.packet.id)
                .unwrap_or(1);
            let decoded = vec![false; expected.len()];
            self.bsm_deliveries.insert(
                attempt.packet.id,
                BsmDelivery {
                    expected,
                    decoded,
                    remaining_instances: remaining,
                },
            );
        }

        let mut lanes = std::mem::take(&mut self.lanes_scratch);
        lanes.clear();
        for a in attempts {
            let threshold_lin = self.thr_lin_by_mcs[&a.packet.mcs];
            let combo = combo_of(a.subchannel_start as usize, a.subchannel_count as usize);
            let gate_code = match a.packet.kind {
                PacketKind::Sam => GATE_ALL_VEHICLES,
                PacketKind::Sum => GATE_RSU_ONLY,
                PacketKind::Ack => GATE_MEMBERS,
                PacketKind::Bsm => {
                    if self.config.one_shot_bsm {
                        GATE_VICINITY
                    } else {
                        GATE_EVERYONE
                    }
                }
            };
            lanes.packed.push(PackedAttempt {
                pos: self.positions[a.tx.index()],
                tx: a.tx.0,
                meta: a.subchannel_start
                    | (a.subchannel_count << 4)
                    | ((combo as u32) << 8)
                    | (gate_code << 14),
            });
            lanes.combo.push(combo);
            lanes.threshold_lin.push(threshold_lin);
            lanes
                .thr_noise_lin
                .push(threshold_lin * self.noise_mw * a.subchannel_count as f64);
        }
        let mut present_combos: Vec<u8> = lanes.combo.clone();
        present_combos.sort_unstable();
        present_combos.dedup();

        let shadow_seed = self.streams.shadowing_seed;
        let n_attempts = lanes.len();
        let mut powers = std::mem::take(&mut self.powers_scratch);
        let mut cands = std::mem::take(&mut self.cand_scratch);
        powers.resize(n_attempts, 0.0);
        let mut combo_power = [0.0f64; COMBO_SLOTS];
        let mut local_cells = [0.0f64; LOCAL_CELLS];
        let subchannels = self.config.subchannels_per_subframe as usize;
        let vic2 = self.config.per_vicinity_m * self.config.per_vicinity_m;

        for k in 0..self.active_ids.len() {
            let rx = self.active_ids[k];
            let rx_idx = rx as usize;
            let rx_pos = self.positions[rx_idx];

            if self.tx_stamp[rx_idx] == now {
                // Half-duplex: a transmitting radio hears nothing, losing
                // anything it would otherwise have decoded.
                for (i, pk) in lanes.packed.iter().enumerate() {
                    if pk.tx == rx {
                        continue;
                    }
                    let dx = pk.pos - rx_pos;
                    let d2 = (dx * dx).max(1.0);
                    if Self::gate_admits(pk.meta >> 14, &attempts[i], rx, d2, vic2) {
                        self.half_duplex_losses += 1;
                        if let Some(trace) = &mut self.trace {
                            let gain =
                                self.shadow_gain[pair_table_index(shadow_seed, pk.tx, rx)];
                            let p = gain * self.dpow.pow_from_d2(d2);
                            trace.receptions.push(RxRecord {
                                subframe: now,
                                tx: NodeId(pk.tx),
                                rx: NodeId(rx),
                                kind: attempts[i].packet.kind,
                                packet: attempts[i].packet.id,
                                success: false,
                                cause: Some(FailureCause::HalfDuplex),
                                rx_dbm: 10.0 * p.log10(),
                            });
                        }
                    }
                }
                continue;
            }

            cands.clear();
            for &k in &present_combos {
                combo_power[k as usize] = 0.0;
            }
            {
                // A non-transmitting receiver owns none of the attempts, so
                // no tx == rx test is needed here. The power computation is
                // chain-free across attempts; shared-slot accumulation runs
                // as a second short pass.
                for (pk, power) in lanes.packed.iter().zip(powers.iter_mut()) {
                    let dx = pk.pos - rx_pos;
                    let d2 = (dx * dx).max(1.0);
                    let gain = self.shadow_gain[pair_table_index(shadow_seed, pk.tx, rx)];
                    *power = gain * self.dpow.pow_from_d2(d2);
                }
                for (i, (pk, &p)) in lanes.packed.iter().zip(powers.iter()).enumerate() {
                    let meta = pk.meta;
                    combo_power[((meta >> 8) & 63) as usize] += p;
                    let start = (meta & 15) as usize;
                    let count = ((meta >> 4) & 15) as usize;
                    local_cells[start & (LOCAL_CELLS - 1)] += p;
                    for c in 1..count {
                        local_cells[(start + c) & (LOCAL_CELLS - 1)] += p;
                    }
                    let admit = match meta >> 14 {
                        GATE_ALL_VEHICLES => rx != 0,
                        GATE_RSU_ONLY => rx == 0,
                        GATE_VICINITY => {
                            let dx = pk.pos - rx_pos;
                            rx != 0 && dx * dx <= vic2
                        }
                        GATE_EVERYONE => true,
                        _ => rx != 0 && attempts[i].packet.ack_members.contains(&NodeId(rx)),
                    };
                    if admit {
                        cands.push(i);
                    }
                }
                let sensing = if rx == 0 {
                    &mut self.rsu_mac.sensing
                } else {
                    &mut self.vehicles[rx_idx - 1].mac.sensing
                };
                let cells = sensing.slot_cells_mut(now);
                for (cell, local) in cells.iter_mut().zip(local_cells[..subchannels].iter_mut())
                {
                    *cell += *local;
                    *local = 0.0;
                }
            }

            for &i in &cands {
                // Sum of all attempts overlapping this footprint (self
                // included), taken per combo rather than per attempt.
                let mut overlap_total = 0.0;
                for &k in &present_combos {
                    if combos_overlap(lanes.combo[i], k) {
                        overlap_total += combo_power[k as usize];
                    }
                }
                let interference = overlap_total - powers[i];
                let success =
                    powers[i] >= lanes.thr_noise_lin[i] + lanes.threshold_lin[i] * interference;
                if success {
                    self.on_decode(&attempts[i], NodeId(rx), powers[i], &mut deliveries);
                }
                if let Some(trace) = &mut self.trace {
                    let cause = if success {
                        None
                    } else if powers[i] >= lanes.thr_noise_lin[i] {
                        Some(FailureCause::CollisionTie)
                    } else {
                        Some(FailureCause::Sinr)
                    };
                    trace.receptions.push(RxRecord {
                        subframe: now,
                        tx: NodeId(lanes.packed[i].tx),
                        rx: NodeId(rx),
                        kind: attempts[i].packet.kind,
                        packet: attempts[i].packet.id,
                        success,
                        cause,
                        rx_dbm: 10.0 * powers[i].log10(),
                    });
                }
            }
        }
        self.powers_scratch = powers;
        self.cand_scratch = cands;
        self.lanes_scratch = lanes;

        // Retire BSM instances; fold finished packets into the PER counters.
        for attempt in attempts {
            if attempt.packet.kind != PacketKind::Bsm {
                continue;
            }
            let done = {
                let delivery = self
                    .bsm_deliveries
                    .get_mut(&attempt.packet.id)
                    .expect("delivery state created at first instance");
                delivery.remaining_instances = delivery.remaining_instances.saturating_sub(1);
                delivery.remaining_instances == 0
            };
            if done {
                let delivery = self.bsm_deliveries.remove(&attempt.packet.id).unwrap();
                self.per.expected += delivery.expected.len() as u64;
                self.per.decoded += delivery.decoded.iter().filter(|&&d| d).count() as u64;
            }
        }
        deliveries
    }

    fn on_decode(
        &mut self,
        attempt: &AttemptInFlight,
        rx: NodeId,
        rx_power_mw: f64,
        deliveries: &mut Vec<DeliveryEvent>,
    ) {
        match attempt.packet.kind {
            PacketKind::Sam => deliveries.push(DeliveryEvent::SamHeard { vehicle: rx }),
            PacketKind::Sum => deliveries.push(DeliveryEvent::SumAtRsu {
                vehicle: attempt.packet.source,
                attempt_no: attempt.packet.sum_attempt_no,
            }),
            PacketKind::Ack => deliveries.push(DeliveryEvent::AckAtVehicle {
                vehicle: rx,
                packet: attempt.packet.id,
            }),
            PacketKind::Bsm => {
                if let Some(delivery) = self.bsm_deliveries.get_mut(&attempt.packet.id) {
                    if let Ok(pos) = delivery.expected.binary_search(&rx) {
                        delivery.decoded[pos] = true;
                    }
                }
            }
        }
        // Decoded scheduling metadata feeds selection-time exclusion; its
        // RSRP is the measured power of the decoded attempt.
        if let Some((subframe, start, count)) = attempt.advertised_reservation {
            let reservation = DecodedReservation {
                subframe,
                subchannel_start: start,
                subchannel_count: count,
                rsrp_dbm: 10.0 * rx_power_mw.log10(),
            };
            let sensing = if rx.is_rsu() {
                &mut self.rsu_mac.sensing
            } else {
                &mut self.vehicles[rx.index() - 1].mac.sensing
            };
            sensing.note_reservation(reservation);
        }
    }

    fn assign_grants(&mut self, now: TimeMs) {
        for k in 0..self.active_ids.len() {
            let node_id = NodeId(self.active_ids[k]);
            loop {
                let Some(entry) = self.mac_of_mut(node_id).queue.pop() else {
                    break;
                };
                let packet = entry.packet;
                let kind = packet.kind;
                let footprint = self.config.footprints.of(kind);
                let use_reservation = kind == PacketKind::Bsm && !self.config.one_shot_bsm;
                let selected = if use_reservation {
                    self.reserved_grant(node_id, footprint, now)
                } else {
                    self.one_shot_grant(node_id, footprint, packet.created_ms, now)
                };
                let Some(grant) = selected else {
                    continue;
                };
                // A retransmission is still a granted resource: it obeys the
                // same minimum processing delay after packet creation. When
                // the original grant sits at that first opportunity the copy
                // window collapses to the trailing side.
                let min_copy = packet.created_ms + SELECTION_MIN_AHEAD;
                self.mac_of_mut(node_id).claims.insert(
                    grant.subframe,
                    ClaimedTx {
                        packet: packet.clone(),
                        subchannel_start: grant.subchannel_start,
                        is_harq_copy: false,
                        from_reservation: use_reservation,
                    },
                );
                let mut instances = 1u8;
                if self.config.harq_enabled {
                    let copy = {
                        let (claims, harq_rng) = if node_id.is_rsu() {
                            (&self.rsu_mac.claims, &mut self.streams.harq)
                        } else {
                            (
                                &self.vehicles[node_id.index() - 1].mac.claims,
                                &mut self.streams.harq,
                            )
                        };
                        harq_schedule(
                            grant.subframe,
                            min_copy,
                            &|t| claims.contains_key(&t),
                            harq_rng,
                        )
                    };
                    if let Some(copy_subframe) = copy {
                        self.mac_of_mut(node_id).claims.insert(
                            copy_subframe,
                            ClaimedTx {
                                packet: packet.clone(),
                                subchannel_start: grant.subchannel_start,
                                is_harq_copy: true,
                                from_reservation: use_reservation,
                            },
                        );
                        instances = 2;
                    }
                }
                if kind == PacketKind::Bsm {
                    self.planned_instances.insert(packet.id, instances);
                }
            }
        }
    }

    fn mac_of(&self, node: NodeId) -> &NodeMac {
        if node.is_rsu() {
            &self.rsu_mac
        } else {
            &self.vehicles[node.index() - 1].mac
        }
    }

    fn mac_of_mut(&mut self, node: NodeId) -> &mut NodeMac {
        if node.is_rsu() {
            &mut self.rsu_mac
        } else {
            &mut self.vehicles[node.index() - 1].mac
        }
    }

    /// One-shot selection window anchored at the packet's generation time so
    /// the scheduling delay stays within [4, 100] ms of the request.
    fn one_shot_grant(
        &mut self,
        node: NodeId,
        footprint: u32,
        created_ms: TimeMs,
        now: TimeMs,
    ) -> Option<SelectedResource> {
        let lo = (created_ms + SELECTION_MIN_AHEAD).max(now + 1);
        let hi = created_ms + SELECTION_MAX_AHEAD;
        let window = if lo <= hi {
            lo..=hi
        } else {
            // Queued past its whole window; fall back to a fresh one.
            now + 1..=now + SELECTION_MAX_AHEAD
        };
        let (mac, sps_rng) = if node.is_rsu() {
            (&self.rsu_mac, &mut self.streams.sps)
        } else {
            (&self.vehicles[node.index() - 1].mac, &mut self.streams.sps)
        };
        let claims = &mac.claims;
        select_resource(
            &mac.sensing,
            window,
            footprint,
            self.grid,
            &self.config,
            &|t| claims.contains_key(&t),
            sps_rng,
        )
    }

    /// Semi-persistent grant: reuse the standing reservation, establishing
    /// one first if needed. The reservation period follows the current ITT.
    fn reserved_grant(
        &mut self,
        node: NodeId,
        footprint: u32,
        now: TimeMs,
    ) -> Option<SelectedResource> {
        let period = if node.is_rsu() {
            self.config.bsm_itt_bounds_ms.0
        } else {
            self.vehicles[node.index() - 1].rc.current_itt_ms
        };
        if self.mac_of(node).sps.reservation.is_none() {
            let window = now + SELECTION_MIN_AHEAD..=now + SELECTION_MAX_AHEAD;
            let selected = {
                let (mac, sps_rng) = if node.is_rsu() {
                    (&self.rsu_mac, &mut self.streams.sps)
                } else {
                    (&self.vehicles[node.index() - 1].mac, &mut self.streams.sps)
                };
                let claims = &mac.claims;
                select_resource(
                    &mac.sensing,
                    window,
                    footprint,
                    self.grid,
                    &self.config,
                    &|t| claims.contains_key(&t),
                    sps_rng,
                )?
            };
            let counter = SpsProcess::draw_counter(&self.config, &mut self.streams.sps);
            let mac = self.mac_of_mut(node);
            mac.sps.reservation = Some(SpsReservation {
                next_subframe: selected.subframe,
                subchannel_start: selected.subchannel_start,
                period_ms: period.max(1),
            });
            mac.sps.reselection_counter = counter;
        }
        let mac = self.mac_of_mut(node);
        let claims_snapshot: Vec<TimeMs> = mac.claims.keys().copied().collect();
        let res = mac.sps.reservation.as_mut().expect("established above");
        while res.next_subframe <= now || claims_snapshot.binary_search(&res.next_subframe).is_ok()
        {
            res.next_subframe += res.period_ms;
        }
        let grant = SelectedResource {
            subframe: res.next_subframe,
            subchannel_start: res.subchannel_start,
        };
        res.next_subframe += res.period_ms;
        Some(grant)
    }

    fn sample_cbr(&mut self, now: TimeMs) {
        let mut instant = Accumulator::default();
        for k in 1..self.active_ids.len() {
            let i = self.active_ids[k] as usize - 1;
            let sample = {
                let node = &mut self.vehicles[i];
                node.mac.sensing.prune_reservations(now);
                let sample = compute_cbr(
                    &node.mac.sensing,
                    self.config.cbr_threshold_dbm,
                    self.config.noise_floor_dbm,
                );
                let _ = node.rc.smooth_cbr(sample.percent);
                sample
            };
            self.cbr_acc.push(sample.percent);
            instant.push(sample.percent);
            if let Some(trace) = &mut self.trace {
                trace
                    .cbr_by_node
                    .push((NodeId(i as u32 + 1), now, sample.percent));
            }
        }
        self.rsu_mac.sensing.prune_reservations(now);
        if instant.n > 0 {
            self.cbr_series.push(SeriesPoint {
                time_ms: now,
                mean: instant.mean(),
                var: instant.variance(),
                n: instant.n,
            });
        }
    }

    fn flush_itt_bucket(&mut self, now: TimeMs) {
        if self.itt_bucket.n > 0 {
            self.itt_series.push(SeriesPoint {
                time_ms: self.itt_bucket_start,
                mean: self.itt_bucket.mean(),
                var: self.itt_bucket.variance(),
                n: self.itt_bucket.n,
            });
        }
        self.itt_bucket = Accumulator::default();
        self.itt_bucket_start = now - now % SERIES_BUCKET_MS;
    }

    fn finish(mut self, duration: TimeMs) -> MetricsBundle {
        self.flush_itt_bucket(duration);
        // Outstanding requesters at run end are censored.
        for node in &mut self.vehicles {
            node.service.censor();
        }
        // Fold in BSM packets whose remaining copies never flew.
        for (_, delivery) in std::mem::take(&mut self.bsm_deliveries) {
            self.per.expected += delivery.expected.len() as u64;
            self.per.decoded += delivery.decoded.iter().filter(|&&d| d).count() as u64;
        }

        let mut service: Vec<ServiceRecord> = Vec::new();
        for crossing in self.traffic.crossing_log() {
            let s = &self.vehicles[crossing.vehicle.index() - 1].service;
            let status = match s.phase {
                VuePhase::Complete => ServiceStatus::Complete,
                VuePhase::Requesting | VuePhase::Censored => ServiceStatus::Censored,
                VuePhase::Ineligible | VuePhase::Eligible => ServiceStatus::Ineligible,
            };
            service.push(ServiceRecord {
                vehicle: crossing.vehicle,
                cross_ms: crossing.time_ms,
                first_sum_ms: s.first_sum_gen_ms,
                first_sum_tx_ms: s.first_sum_tx_ms,
                attempts: s.attempts,
                complete_ms: s.complete_ms,
                status,
                completing_ack: s.completing_ack,
            });
        }
        service.sort_by_key(|r| r.vehicle);

        let _ = self.options;
        MetricsBundle {
            config_digest: self.config.digest(),
            seed: self.config.rng_seed,
            flow_rate_vps: self.config.flow_rate_vps,
            batchsize: self.config.batchsize,
            sim_duration_ms: duration,
            service,
            crossings: self.traffic.crossing_log().to_vec(),
            per: self.per,
            cbr: self.cbr_acc,
            cbr_series: self.cbr_series,
            itt: self.itt_acc,
            itt_series: self.itt_series,
            tx_counts: self.tx_counts,
            half_duplex_losses: self.half_duplex_losses,
            trace: self.trace,
        }
    }
}
