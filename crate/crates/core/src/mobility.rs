//! Vehicle mobility on a bidirectional multi-lane freeway: an initial uniform
//! population sized to the target trigger-line crossing rate, per-direction
//! Poisson arrivals at the road ends, constant per-vehicle speeds, and
//! trigger-crossing / departure event emission.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::ScenarioConfig;
use crate::types::{NodeId, TimeMs};

/// Kinematic state of one vehicle. Speed is constant for its whole life.
#[derive(Debug, Clone)]
pub struct VehicleState {
    pub id: NodeId,
    pub lane: u32,
    /// +1 travels toward increasing position, -1 the opposite way.
    pub direction: i8,
    pub position_m: f64,
    pub speed_mps: f64,
    pub active: bool,
    pub has_crossed: bool,
    pub spawned_ms: TimeMs,
}

/// A trigger-line crossing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingEvent {
    pub vehicle: NodeId,
    pub time_ms: TimeMs,
    pub lane: u32,
    pub direction: i8,
}

/// Events produced by one subframe of mobility.
#[derive(Debug, Default)]
pub struct StepEvents {
    pub crossings: Vec<CrossingEvent>,
    pub departures: Vec<NodeId>,
    pub spawned: Vec<NodeId>,
}

/// All vehicles plus the arrival processes and the crossing log.
pub struct TrafficState {
    pub vehicles: Vec<VehicleState>,
    crossing_log: Vec<CrossingEvent>,
    /// Next arrival time per direction (+1 spawns at 0, -1 at road end).
    next_arrival_ms: [f64; 2],
    arrival_rate_per_ms: f64,
    road_length_m: f64,
    rsu_position_m: f64,
    trigger_distance_m: f64,
    lane_count: u32,
    speed_bounds: (f64, f64),
    /// Vehicle ids start at 1; node 0 is the RSU.
    next_id: u32,
}

impl TrafficState {
    /// Builds the initial population: `flow_rate * road_length / mean_speed`
    /// vehicles placed uniformly along the road so the trigger line sees the
    /// target crossing rate from t = 0, plus per-end Poisson arrivals at
    /// `flow_rate / 2` each to sustain it.
    pub fn init(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Self {
        let mean_speed = 0.5 * (config.speed_min_mps + config.speed_max_mps);
        let initial_count =
            (config.flow_rate_vps * config.road_length_m / mean_speed).round() as usize;
        let mut state = TrafficState {
            vehicles: Vec::with_capacity(initial_count),
            crossing_log: Vec::new(),
            next_arrival_ms: [f64::INFINITY; 2],
            arrival_rate_per_ms: config.flow_rate_vps / 2.0 / 1000.0,
            road_length_m: config.road_length_m,
            rsu_position_m: config.rsu_position_m,
            trigger_distance_m: config.trigger_distance_m,
            lane_count: config.lane_count,
            speed_bounds: (config.speed_min_mps, config.speed_max_mps),
            next_id: 1,
        };
        for _ in 0..initial_count {
            let position = rng.gen_range(0.0..config.road_length_m);
            let direction = if rng.gen_bool(0.5) { 1i8 } else { -1i8 };
            state.spawn(position, direction, 0, rng);
        }
        if state.arrival_rate_per_ms > 0.0 {
            state.next_arrival_ms[0] = state.exp_interval(rng);
            state.next_arrival_ms[1] = state.exp_interval(rng);
        }
        state
    }

    /// Explicit initial vehicles for scripted scenarios; no spawning.
    pub fn with_vehicles(config: &ScenarioConfig, specs: &[ManualVehicle]) -> Self {
        let mut state = TrafficState {
            vehicles: Vec::new(),
            crossing_log: Vec::new(),
            next_arrival_ms: [f64::INFINITY; 2],
            arrival_rate_per_ms: 0.0,
            road_length_m: config.road_length_m,
            rsu_position_m: config.rsu_position_m,
            trigger_distance_m: config.trigger_distance_m,
            lane_count: config.lane_count,
            speed_bounds: (config.speed_min_mps, config.speed_max_mps),
            next_id: 1,
        };
        for spec in specs {
            let id = NodeId(state.next_id);
            state.next_id += 1;
            state.vehicles.push(VehicleState {
                id,
                lane: spec.lane,
                direction: spec.direction,
                position_m: spec.position_m,
                speed_mps: spec.speed_mps,
                active: true,
                has_crossed: false,
                spawned_ms: 0,
            });
        }
        state
    }

    fn exp_interval(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        -u.ln() / self.arrival_rate_per_ms
    }

    fn spawn(&mut self, position: f64, direction: i8, now: TimeMs, rng: &mut ChaCha8Rng) -> NodeId {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        let lanes_per_dir = (self.lane_count / 2).max(1);
        let lane_in_dir = rng.gen_range(0..lanes_per_dir);
        let lane = if direction > 0 {
            lane_in_dir
        } else {
            (lanes_per_dir + lane_in_dir).min(self.lane_count - 1)
        };
        let speed = rng.gen_range(self.speed_bounds.0..=self.speed_bounds.1);
        // Vehicles placed past the trigger line never cross it.
        let line = self.trigger_line(direction);
        let has_crossed = (position - line) * direction as f64 >= 0.0;
        self.vehicles.push(VehicleState {
            id,
            lane,
            direction,
            position_m: position,
            speed_mps: speed,
            active: true,
            has_crossed,
            spawned_ms: now,
        });
        id
    }

    /// Trigger line position for a travel direction: `trigger_distance_m`
    /// metres before the RSU on the approach side.
    fn trigger_line(&self, direction: i8) -> f64 {
        self.rsu_position_m - direction as f64 * self.trigger_distance_m
    }

    /// Advances all vehicles by one subframe (1 ms), emitting crossings,
    /// departures and spawns.
    pub fn advance(&mut self, now: TimeMs, rng: &mut ChaCha8Rng) -> StepEvents {
        let mut events = StepEvents::default();
        let dt_s = 1e-3;
        for v in &mut self.vehicles {
            if !v.active {
                continue;
            }
            let line = self.rsu_position_m - v.direction as f64 * self.trigger_distance_m;
            let before = v.position_m;
            v.position_m += v.speed_mps * v.direction as f64 * dt_s;
            if !v.has_crossed {
                let was_before = (before - line) * v.direction as f64;
                let is_after = (v.position_m - line) * v.direction as f64;
                if was_before < 0.0 && is_after >= 0.0 {
                    v.has_crossed = true;
                    let crossing = CrossingEvent {
                        vehicle: v.id,
                        time_ms: now,
                        lane: v.lane,
                        direction: v.direction,
                    };
                    events.crossings.push(crossing);
                    self.crossing_log.push(crossing);
                }
            }
            if v.position_m < 0.0 || v.position_m > self.road_length_m {
                v.active = false;
                v.position_m = v.position_m.clamp(0.0, self.road_length_m);
                events.departures.push(v.id);
            }
        }
        // Poisson arrivals at the road ends.
        if self.arrival_rate_per_ms > 0.0 {
            for dir_idx in 0..2 {
                while self.next_arrival_ms[dir_idx] <= now as f64 {
                    let direction = if dir_idx == 0 { 1i8 } else { -1i8 };
                    let position = if direction > 0 { 0.0 } else { self.road_length_m };
                    let id = self.spawn(position, direction, now, rng);
                    events.spawned.push(id);
                    let next = self.exp_interval(rng);
                    self.next_arrival_ms[dir_idx] += next;
                }
            }
        }
        events
    }

    /// Crossings per second over the trailing window.
    pub fn measured_crossing_rate(&self, now: TimeMs, window_ms: u64) -> f64 {
        if window_ms == 0 {
            return 0.0;
        }
        let from = now.saturating_sub(window_ms);
        let count = self
            .crossing_log
            .iter()
            .filter(|c| c.time_ms > from && c.time_ms <= now)
            .count();
        count as f64 / (window_ms as f64 / 1000.0)
    }

    pub fn crossing_log(&self) -> &[CrossingEvent] {
        &self.crossing_log
    }

    /// Number of node slots used so far (RSU + all vehicles ever spawned).
    pub fn node_count(&self) -> usize {
        self.next_id as usize
    }
}

/// Scripted vehicle description for oracle scenarios.
#[derive(Debug, Clone, Copy)]
pub struct ManualVehicle {
    pub lane: u32,
    pub direction: i8,
    pub position_m: f64,
    pub speed_mps: f64,
}
