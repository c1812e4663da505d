//! Scenario configuration: defaults, flat key-value parsing, validation and
//! round-trip serialization.
//!
//! The on-disk format is one `key = value` per line with `#` comments. Every
//! run echoes its effective configuration back out in this format so results
//! stay diffable and reproducible.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::protocol::PacketKind;

/// Traffic flow rates the scenario sweep tables are calibrated for, in
/// vehicles per second across the trigger line. Other positive values are
/// accepted with a warning.
pub const FLOW_RATE_CATEGORIES: [f64; 6] = [1.0, 5.0, 10.0, 15.0, 20.0, 30.0];

/// How the RSU turns its pending-request queue into ACK packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckPolicy {
    /// Dispatch a full batch the moment `pending >= batchsize`.
    OnFill,
    /// Evaluate every `ack_interval_ms`; dispatch every full batch available.
    IntervalMulti,
    /// Evaluate every `ack_interval_ms`; dispatch at most one batch.
    IntervalSingle,
}

impl AckPolicy {
    fn as_str(self) -> &'static str {
        match self {
            AckPolicy::OnFill => "on_fill",
            AckPolicy::IntervalMulti => "interval_multi",
            AckPolicy::IntervalSingle => "interval_single",
        }
    }
}

/// Subchannel footprint per packet kind, in contiguous subchannels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprints {
    pub bsm: u32,
    pub sam: u32,
    pub sum: u32,
    pub ack: u32,
}

impl Footprints {
    pub fn of(&self, kind: PacketKind) -> u32 {
        match kind {
            PacketKind::Bsm => self.bsm,
            PacketKind::Sam => self.sam,
            PacketKind::Sum => self.sum,
            PacketKind::Ack => self.ack,
        }
    }
}

/// Full parameterization of one simulation run.
///
/// Immutable after [`validate`]; safe to share read-only across concurrently
/// executing runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    // Road and traffic.
    pub road_length_m: f64,
    pub lane_count: u32,
    pub rsu_position_m: f64,
    pub flow_rate_vps: f64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub sim_duration_ms: u64,

    // Radio and resource grid.
    pub carrier_freq_ghz: f64,
    pub bandwidth_mhz: f64,
    pub subchannels_per_subframe: u32,
    pub tx_power_dbm: f64,
    pub noise_floor_dbm: f64,
    pub pathloss_ref_db: f64,
    pub pathloss_exponent: f64,
    pub shadowing_sigma_db: f64,

    // Packet formats.
    pub sam_payload_b: u32,
    pub sam_mcs: u32,
    pub sum_payload_b: u32,
    pub sum_mcs: u32,
    pub ack_payload_b: u32,
    pub ack_mcs: u32,
    pub bsm_payload_b: u32,
    pub bsm_mcs: u32,
    pub footprints: Footprints,
    pub mcs_thresholds_db: BTreeMap<u32, f64>,

    // Service protocol timers.
    pub sam_period_ms: u64,
    pub trigger_distance_m: f64,
    pub sum_repeat_ms: u64,
    pub ack_interval_ms: u64,
    pub batchsize: u32,
    pub ack_policy: AckPolicy,
    pub bsm_priority: u8,
    pub service_priority: u8,

    // BSM traffic and congestion control.
    pub bsm_enabled: bool,
    pub bsm_itt_bounds_ms: (u64, u64),
    pub cbr_threshold_dbm: f64,
    pub cbr_smoothing_weight: f64,
    pub itt_map_anchors: Vec<(f64, f64)>,
    pub rate_control_enabled: bool,

    // MAC / sensing-based selection.
    pub one_shot_bsm: bool,
    pub sps_exclusion_dbm: f64,
    pub sps_exclusion_step_db: f64,
    pub sps_shortlist_fraction: f64,
    pub sps_counter_min: u32,
    pub sps_counter_max: u32,
    pub sps_keep_probability: f64,
    pub harq_enabled: bool,
    /// When non-zero, resource selection degenerates to the first free
    /// subframe exactly this many ms ahead, at subchannel 0. Test rigs use
    /// this to pin scheduling delays; 0 disables it.
    pub fixed_grant_delay_ms: u64,

    // Metrics.
    pub per_vicinity_m: f64,
    pub rng_seed: u64,
}

/// Error raised while parsing or validating a scenario document.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: malformed entry (expected `key = value`): {text}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

/// Returns the reference scenario: 3 km bidirectional 16-lane freeway, RSU at
/// mid-road, 20 MHz / 5 subchannels, 700 B SAM @ MCS 7, 450 B SUM @ MCS 11,
/// 300 B ACK @ MCS 6, 1 s SAM period, 600 ms SUM repeat, 400 ms ACK interval,
/// flow rate and batchsize 1.
pub fn default_scenario() -> ScenarioConfig {
    ScenarioConfig {
        road_length_m: 3000.0,
        lane_count: 16,
        rsu_position_m: 1500.0,
        flow_rate_vps: 1.0,
        speed_min_mps: 25.0,
        speed_max_mps: 35.0,
        sim_duration_ms: 50_000,

        carrier_freq_ghz: 5.905,
        bandwidth_mhz: 20.0,
        subchannels_per_subframe: 5,
        tx_power_dbm: 23.0,
        noise_floor_dbm: -104.0,
        pathloss_ref_db: 47.0,
        pathloss_exponent: 2.3,
        shadowing_sigma_db: 3.0,

        sam_payload_b: 700,
        sam_mcs: 7,
        sum_payload_b: 450,
        sum_mcs: 11,
        ack_payload_b: 300,
        ack_mcs: 6,
        bsm_payload_b: 300,
        bsm_mcs: 7,
        footprints: Footprints {
            bsm: 2,
            sam: 3,
            sum: 2,
            ack: 1,
        },
        mcs_thresholds_db: BTreeMap::from([(6, 3.0), (7, 4.0), (11, 8.0)]),

        sam_period_ms: 1000,
        trigger_distance_m: 0.0,
        sum_repeat_ms: 600,
        ack_interval_ms: 400,
        batchsize: 1,
        ack_policy: AckPolicy::OnFill,
        bsm_priority: 2,
        service_priority: 6,

        bsm_enabled: true,
        bsm_itt_bounds_ms: (100, 600),
        cbr_threshold_dbm: -92.0,
        cbr_smoothing_weight: 0.5,
        itt_map_anchors: vec![(0.0, 100.0), (35.0, 100.0), (90.0, 110.0), (100.0, 600.0)],
        rate_control_enabled: true,

        one_shot_bsm: true,
        sps_exclusion_dbm: -110.0,
        sps_exclusion_step_db: 3.0,
        sps_shortlist_fraction: 0.2,
        sps_counter_min: 5,
        sps_counter_max: 15,
        sps_keep_probability: 0.0,
        harq_enabled: true,
        fixed_grant_delay_ms: 0,

        per_vicinity_m: 300.0,
        rng_seed: 1,
    }
}

/// Result of parsing a scenario document: the effective config plus any
/// non-fatal warnings (e.g. an uncalibrated flow rate).
#[derive(Debug, Clone)]
pub struct ParsedScenario {
    pub config: ScenarioConfig,
    pub warnings: Vec<String>,
}

/// Parses a flat `key = value` document on top of the defaults. Unknown keys
/// and malformed values are rejected with their line number. The returned
/// config has already passed [`validate`].
pub fn parse_scenario(document: &str) -> Result<ParsedScenario, ConfigError> {
    let mut config = default_scenario();
    apply_document(&mut config, document)?;
    let config = validate(config)?;
    let warnings = flow_rate_warnings(&config);
    Ok(ParsedScenario { config, warnings })
}

/// Applies `key = value` override lines onto an existing config without
/// validating. `line_offset` shifts reported line numbers (used for CLI
/// `--set` entries, which are numbered 1..n themselves).
pub fn apply_document(config: &mut ScenarioConfig, document: &str) -> Result<(), ConfigError> {
    for (idx, raw) in document.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
            line: line_no,
            text: raw.trim().to_string(),
        })?;
        apply_entry(config, key.trim(), value.trim(), line_no)?;
    }
    Ok(())
}

/// Applies one `key=value` override.
pub fn apply_entry(
    config: &mut ScenarioConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), ConfigError> {
    macro_rules! bad {
        ($reason:expr) => {
            ConfigError::BadValue {
                line,
                key: key.to_string(),
                reason: $reason.to_string(),
            }
        };
    }
    macro_rules! num {
        ($ty:ty) => {
            value.parse::<$ty>().map_err(|e| bad!(e))?
        };
    }
    match key {
        "road_length_m" => config.road_length_m = num!(f64),
        "lane_count" => config.lane_count = num!(u32),
        "rsu_position_m" => config.rsu_position_m = num!(f64),
        "flow_rate_vps" => config.flow_rate_vps = num!(f64),
        "speed_min_mps" => config.speed_min_mps = num!(f64),
        "speed_max_mps" => config.speed_max_mps = num!(f64),
        "sim_duration_ms" => config.sim_duration_ms = num!(u64),
        "carrier_freq_ghz" => config.carrier_freq_ghz = num!(f64),
        "bandwidth_mhz" => config.bandwidth_mhz = num!(f64),
        "subchannels_per_subframe" => config.subchannels_per_subframe = num!(u32),
        "tx_power_dbm" => config.tx_power_dbm = num!(f64),
        "noise_floor_dbm" => config.noise_floor_dbm = num!(f64),
        "pathloss_ref_db" => config.pathloss_ref_db = num!(f64),
        "pathloss_exponent" => config.pathloss_exponent = num!(f64),
        "shadowing_sigma_db" => config.shadowing_sigma_db = num!(f64),
        "sam_payload_b" => config.sam_payload_b = num!(u32),
        "sam_mcs" => config.sam_mcs = num!(u32),
        "sum_payload_b" => config.sum_payload_b = num!(u32),
        "sum_mcs" => config.sum_mcs = num!(u32),
        "ack_payload_b" => config.ack_payload_b = num!(u32),
        "ack_mcs" => config.ack_mcs = num!(u32),
        "bsm_payload_b" => config.bsm_payload_b = num!(u32),
        "bsm_mcs" => config.bsm_mcs = num!(u32),
        "footprints" => config.footprints = parse_footprints(value).map_err(|e| bad!(e))?,
        "mcs_thresholds_db" => {
            config.mcs_thresholds_db = parse_mcs_table(value).map_err(|e| bad!(e))?
        }
        "sam_period_ms" => config.sam_period_ms = num!(u64),
        "trigger_distance_m" => config.trigger_distance_m = num!(f64),
        "sum_repeat_ms" => config.sum_repeat_ms = num!(u64),
        "ack_interval_ms" => config.ack_interval_ms = num!(u64),
        "batchsize" => config.batchsize = num!(u32),
        "ack_policy" => {
            config.ack_policy = match value {
                "on_fill" => AckPolicy::OnFill,
                "interval_multi" => AckPolicy::IntervalMulti,
                "interval_single" => AckPolicy::IntervalSingle,
                other => {
                    return Err(bad!(format!(
                        "`{other}` is not one of on_fill|interval_multi|interval_single"
                    )))
                }
            }
        }
        "bsm_priority" => config.bsm_priority = num!(u8),
        "service_priority" => config.service_priority = num!(u8),
        "bsm_enabled" => config.bsm_enabled = num!(bool),
        "bsm_itt_bounds_ms" => {
            config.bsm_itt_bounds_ms = parse_pair_u64(value).map_err(|e| bad!(e))?
        }
        "cbr_threshold_dbm" => config.cbr_threshold_dbm = num!(f64),
        "cbr_smoothing_weight" => config.cbr_smoothing_weight = num!(f64),
        "itt_map_anchors" => config.itt_map_anchors = parse_anchors(value).map_err(|e| bad!(e))?,
        "rate_control_enabled" => config.rate_control_enabled = num!(bool),
        "one_shot_bsm" => config.one_shot_bsm = num!(bool),
        "sps_exclusion_dbm" => config.sps_exclusion_dbm = num!(f64),
        "sps_exclusion_step_db" => config.sps_exclusion_step_db = num!(f64),
        "sps_shortlist_fraction" => config.sps_shortlist_fraction = num!(f64),
        "sps_counter_min" => config.sps_counter_min = num!(u32),
        "sps_counter_max" => config.sps_counter_max = num!(u32),
        "sps_keep_probability" => config.sps_keep_probability = num!(f64),
        "harq_enabled" => config.harq_enabled = num!(bool),
        "fixed_grant_delay_ms" => config.fixed_grant_delay_ms = num!(u64),
        "per_vicinity_m" => config.per_vicinity_m = num!(f64),
        "rng_seed" => config.rng_seed = num!(u64),
        _ => {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            })
        }
    }
    Ok(())
}

fn parse_footprints(value: &str) -> Result<Footprints, String> {
    let mut fp = Footprints {
        bsm: 0,
        sam: 0,
        sum: 0,
        ack: 0,
    };
    for part in value.split(',') {
        let (kind, count) = part
            .split_once(':')
            .ok_or_else(|| format!("expected kind:count, got `{part}`"))?;
        let count: u32 = count.trim().parse().map_err(|e| format!("{e}"))?;
        match kind.trim() {
            "bsm" => fp.bsm = count,
            "sam" => fp.sam = count,
            "sum" => fp.sum = count,
            "ack" => fp.ack = count,
            other => return Err(format!("unknown packet kind `{other}`")),
        }
    }
    if fp.bsm == 0 || fp.sam == 0 || fp.sum == 0 || fp.ack == 0 {
        return Err("footprints must cover bsm, sam, sum and ack".to_string());
    }
    Ok(fp)
}

fn parse_mcs_table(value: &str) -> Result<BTreeMap<u32, f64>, String> {
    let mut table = BTreeMap::new();
    for part in value.split(',') {
        let (mcs, db) = part
            .split_once(':')
            .ok_or_else(|| format!("expected mcs:threshold_db, got `{part}`"))?;
        let mcs: u32 = mcs.trim().parse().map_err(|e| format!("{e}"))?;
        let db: f64 = db.trim().parse().map_err(|e| format!("{e}"))?;
        table.insert(mcs, db);
    }
    if table.is_empty() {
        return Err("empty MCS table".to_string());
    }
    Ok(table)
}

fn parse_anchors(value: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut anchors = Vec::new();
    for part in value.split(',') {
        let (cbr, itt) = part
            .split_once(':')
            .ok_or_else(|| format!("expected cbr:itt_ms, got `{part}`"))?;
        let cbr: f64 = cbr.trim().parse().map_err(|e| format!("{e}"))?;
        let itt: f64 = itt.trim().parse().map_err(|e| format!("{e}"))?;
        anchors.push((cbr, itt));
    }
    if anchors.is_empty() {
        return Err("empty anchor list".to_string());
    }
    Ok(anchors)
}

fn parse_pair_u64(value: &str) -> Result<(u64, u64), String> {
    let mut it = value.split(',');
    let lo = it
        .next()
        .ok_or("expected two comma-separated values")?
        .trim()
        .parse::<u64>()
        .map_err(|e| format!("{e}"))?;
    let hi = it
        .next()
        .ok_or("expected two comma-separated values")?
        .trim()
        .parse::<u64>()
        .map_err(|e| format!("{e}"))?;
    if it.next().is_some() {
        return Err("expected exactly two values".to_string());
    }
    Ok((lo, hi))
}

/// Checks every invariant and returns the config unchanged if all hold;
/// otherwise the full list of violations (never fail-fast on the first).
pub fn validate(config: ScenarioConfig) -> Result<ScenarioConfig, ConfigError> {
    let mut errors = Vec::new();
    macro_rules! require {
        ($ok:expr, $msg:expr $(,)?) => {
            if !$ok {
                errors.push($msg.to_string());
            }
        };
    }

    require!(config.road_length_m > 0.0, "road_length_m must be > 0");
    require!(config.lane_count > 0, "lane_count must be >= 1");
    require!(
        config.rsu_position_m >= 0.0 && config.rsu_position_m <= config.road_length_m,
        "rsu_position_m must lie within [0, road_length_m]",
    );
    require!(config.flow_rate_vps >= 0.0, "flow_rate_vps must be >= 0");
    require!(
        config.speed_min_mps > 0.0 && config.speed_max_mps >= config.speed_min_mps,
        "vehicle speed bounds must satisfy 0 < min <= max",
    );
    require!(config.sim_duration_ms > 0, "sim_duration_ms must be > 0");
    require!(config.carrier_freq_ghz > 0.0, "carrier_freq_ghz must be > 0");
    require!(config.bandwidth_mhz > 0.0, "bandwidth_mhz must be > 0");
    require!(
        config.subchannels_per_subframe > 0 && config.subchannels_per_subframe <= 16,
        "subchannels_per_subframe must lie in [1, 16]",
    );
    require!(
        config.pathloss_exponent >= 1.5 && config.pathloss_exponent <= 4.5,
        "pathloss_exponent must lie within [1.5, 4.5]",
    );
    require!(
        config.shadowing_sigma_db >= 0.0,
        "shadowing_sigma_db must be >= 0",
    );
    require!(
        config.sam_payload_b > 0 && config.sum_payload_b > 0 && config.ack_payload_b > 0,
        "payload sizes must be > 0",
    );
    require!(config.bsm_payload_b > 0, "bsm_payload_b must be > 0");
    for (kind, fp) in [
        ("bsm", config.footprints.bsm),
        ("sam", config.footprints.sam),
        ("sum", config.footprints.sum),
        ("ack", config.footprints.ack),
    ] {
        if fp == 0 || fp > config.subchannels_per_subframe {
            errors.push(format!(
                "footprint for {kind} must lie in [1, subchannels_per_subframe]"
            ));
        }
    }
    for (label, mcs) in [
        ("sam_mcs", config.sam_mcs),
        ("sum_mcs", config.sum_mcs),
        ("ack_mcs", config.ack_mcs),
        ("bsm_mcs", config.bsm_mcs),
    ] {
        if !config.mcs_thresholds_db.contains_key(&mcs) {
            errors.push(format!("{label} = {mcs} missing from mcs_thresholds_db"));
        }
    }
    // SINR thresholds must be monotone non-decreasing in MCS index.
    let thresholds: Vec<f64> = config.mcs_thresholds_db.values().copied().collect();
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        errors.push("mcs_thresholds_db must be non-decreasing in MCS index".to_string());
    }
    require!(config.sam_period_ms > 0, "sam_period_ms must be > 0");
    require!(
        config.trigger_distance_m >= 0.0,
        "trigger_distance_m must be >= 0",
    );
    require!(config.sum_repeat_ms > 0, "sum_repeat_ms must be > 0");
    require!(config.ack_interval_ms > 0, "ack_interval_ms must be > 0");
    require!(config.batchsize >= 1, "batchsize must be >= 1");
    let (itt_lo, itt_hi) = config.bsm_itt_bounds_ms;
    require!(
        itt_lo > 0 && itt_lo <= itt_hi,
        "bsm_itt_bounds_ms must satisfy 0 < lower <= upper",
    );
    require!(
        config.cbr_smoothing_weight > 0.0 && config.cbr_smoothing_weight <= 1.0,
        "cbr_smoothing_weight must lie in (0, 1]",
    );
    if config
        .itt_map_anchors
        .windows(2)
        .any(|w| w[1].0 <= w[0].0 || w[1].1 < w[0].1)
    {
        errors.push(
            "itt_map_anchors must have strictly increasing CBR and non-decreasing ITT".to_string(),
        );
    }
    if let (Some(first), Some(last)) = (
        config.itt_map_anchors.first(),
        config.itt_map_anchors.last(),
    ) {
        if first.0 < 0.0 || last.0 > 100.0 {
            errors.push("itt_map_anchors CBR values must lie within [0, 100]".to_string());
        }
        let lo = itt_lo as f64;
        let hi = itt_hi as f64;
        if config
            .itt_map_anchors
            .iter()
            .any(|&(_, itt)| itt < lo || itt > hi)
        {
            errors.push("itt_map_anchors ITT values must lie within bsm_itt_bounds_ms".to_string());
        }
    }
    require!(
        config.sps_shortlist_fraction > 0.0 && config.sps_shortlist_fraction <= 1.0,
        "sps_shortlist_fraction must lie in (0, 1]",
    );
    require!(
        config.sps_counter_min >= 1 && config.sps_counter_min <= config.sps_counter_max,
        "sps counter bounds must satisfy 1 <= min <= max",
    );
    require!(
        (0.0..=1.0).contains(&config.sps_keep_probability),
        "sps_keep_probability must lie in [0, 1]",
    );
    require!(config.sps_exclusion_step_db > 0.0, "sps_exclusion_step_db must be > 0");
    require!(config.per_vicinity_m > 0.0, "per_vicinity_m must be > 0");

    if errors.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError::Invalid(errors))
    }
}

fn flow_rate_warnings(config: &ScenarioConfig) -> Vec<String> {
    let mut warnings = Vec::new();
    let known = FLOW_RATE_CATEGORIES
        .iter()
        .any(|&f| (f - config.flow_rate_vps).abs() < 1e-9);
    if !known && config.flow_rate_vps > 0.0 {
        warnings.push(format!(
            "flow_rate_vps = {} is outside the calibrated category table {:?}",
            config.flow_rate_vps, FLOW_RATE_CATEGORIES
        ));
    }
    if config.flow_rate_vps == 0.0 {
        warnings.push("flow_rate_vps = 0: degenerate empty-traffic scenario".to_string());
    }
    warnings
}

/// Serializes a config in the flat document format. `parse_scenario` of the
/// output reproduces the config exactly.
pub fn serialize(config: &ScenarioConfig) -> String {
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "# road and traffic");
    let _ = writeln!(w, "road_length_m = {}", config.road_length_m);
    let _ = writeln!(w, "lane_count = {}", config.lane_count);
    let _ = writeln!(w, "rsu_position_m = {}", config.rsu_position_m);
    let _ = writeln!(w, "flow_rate_vps = {}", config.flow_rate_vps);
    let _ = writeln!(w, "speed_min_mps = {}", config.speed_min_mps);
    let _ = writeln!(w, "speed_max_mps = {}", config.speed_max_mps);
    let _ = writeln!(w, "sim_duration_ms = {}", config.sim_duration_ms);
    let _ = writeln!(w, "# radio and resource grid");
    let _ = writeln!(w, "carrier_freq_ghz = {}", config.carrier_freq_ghz);
    let _ = writeln!(w, "bandwidth_mhz = {}", config.bandwidth_mhz);
    let _ = writeln!(
        w,
        "subchannels_per_subframe = {}",
        config.subchannels_per_subframe
    );
    let _ = writeln!(w, "tx_power_dbm = {}", config.tx_power_dbm);
    let _ = writeln!(w, "noise_floor_dbm = {}", config.noise_floor_dbm);
    let _ = writeln!(w, "pathloss_ref_db = {}", config.pathloss_ref_db);
    let _ = writeln!(w, "pathloss_exponent = {}", config.pathloss_exponent);
    let _ = writeln!(w, "shadowing_sigma_db = {}", config.shadowing_sigma_db);
    let _ = writeln!(w, "# packet formats");
    let _ = writeln!(w, "sam_payload_b = {}", config.sam_payload_b);
    let _ = writeln!(w, "sam_mcs = {}", config.sam_mcs);
    let _ = writeln!(w, "sum_payload_b = {}", config.sum_payload_b);
    let _ = writeln!(w, "sum_mcs = {}", config.sum_mcs);
    let _ = writeln!(w, "ack_payload_b = {}", config.ack_payload_b);
    let _ = writeln!(w, "ack_mcs = {}", config.ack_mcs);
    let _ = writeln!(w, "bsm_payload_b = {}", config.bsm_payload_b);
    let _ = writeln!(w, "bsm_mcs = {}", config.bsm_mcs);
    let _ = writeln!(
        w,
        "footprints = bsm:{},sam:{},sum:{},ack:{}",
        config.footprints.bsm, config.footprints.sam, config.footprints.sum, config.footprints.ack
    );
    let mcs = config
        .mcs_thresholds_db
        .iter()
        .map(|(k, v)| format!("{k}:{v}"))
        .collect::<Vec<_>>()
        .join(",");
    let _ = writeln!(w, "mcs_thresholds_db = {mcs}");
    let _ = writeln!(w, "# service protocol");
    let _ = writeln!(w, "sam_period_ms = {}", config.sam_period_ms);
    let _ = writeln!(w, "trigger_distance_m = {}", config.trigger_distance_m);
    let _ = writeln!(w, "sum_repeat_ms = {}", config.sum_repeat_ms);
    let _ = writeln!(w, "ack_interval_ms = {}", config.ack_interval_ms);
    let _ = writeln!(w, "batchsize = {}", config.batchsize);
    let _ = writeln!(w, "ack_policy = {}", config.ack_policy.as_str());
    let _ = writeln!(w, "bsm_priority = {}", config.bsm_priority);
    let _ = writeln!(w, "service_priority = {}", config.service_priority);
    let _ = writeln!(w, "# BSM traffic and congestion control");
    let _ = writeln!(w, "bsm_enabled = {}", config.bsm_enabled);
    let _ = writeln!(
        w,
        "bsm_itt_bounds_ms = {},{}",
        config.bsm_itt_bounds_ms.0, config.bsm_itt_bounds_ms.1
    );
    let _ = writeln!(w, "cbr_threshold_dbm = {}", config.cbr_threshold_dbm);
    let _ = writeln!(w, "cbr_smoothing_weight = {}", config.cbr_smoothing_weight);
    let anchors = config
        .itt_map_anchors
        .iter()
        .map(|(c, i)| format!("{c}:{i}"))
        .collect::<Vec<_>>()
        .join(",");
    let _ = writeln!(w, "itt_map_anchors = {anchors}");
    let _ = writeln!(w, "rate_control_enabled = {}", config.rate_control_enabled);
    let _ = writeln!(w, "# MAC");
    let _ = writeln!(w, "one_shot_bsm = {}", config.one_shot_bsm);
    let _ = writeln!(w, "sps_exclusion_dbm = {}", config.sps_exclusion_dbm);
    let _ = writeln!(w, "sps_exclusion_step_db = {}", config.sps_exclusion_step_db);
    let _ = writeln!(
        w,
        "sps_shortlist_fraction = {}",
        config.sps_shortlist_fraction
    );
    let _ = writeln!(w, "sps_counter_min = {}", config.sps_counter_min);
    let _ = writeln!(w, "sps_counter_max = {}", config.sps_counter_max);
    let _ = writeln!(w, "sps_keep_probability = {}", config.sps_keep_probability);
    let _ = writeln!(w, "harq_enabled = {}", config.harq_enabled);
    let _ = writeln!(w, "fixed_grant_delay_ms = {}", config.fixed_grant_delay_ms);
    let _ = writeln!(w, "# metrics");
    let _ = writeln!(w, "per_vicinity_m = {}", config.per_vicinity_m);
    let _ = writeln!(w, "rng_seed = {}", config.rng_seed);
    out
}

impl ScenarioConfig {
    /// SHA-256 of the serialized effective configuration, hex-encoded.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(serialize(self).as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// SINR decode threshold for an MCS index, in dB.
    pub fn sinr_threshold_db(&self, mcs: u32) -> Option<f64> {
        self.mcs_thresholds_db.get(&mcs).copied()
    }

    pub fn mcs_of(&self, kind: PacketKind) -> u32 {
        match kind {
            PacketKind::Bsm => self.bsm_mcs,
            PacketKind::Sam => self.sam_mcs,
            PacketKind::Sum => self.sum_mcs,
            PacketKind::Ack => self.ack_mcs,
        }
    }

    pub fn payload_of(&self, kind: PacketKind) -> u32 {
        match kind {
            PacketKind::Bsm => self.bsm_payload_b,
            PacketKind::Sam => self.sam_payload_b,
            PacketKind::Sum => self.sum_payload_b,
            PacketKind::Ack => self.ack_payload_b,
        }
    }

    pub fn priority_of(&self, kind: PacketKind) -> u8 {
        match kind {
            PacketKind::Bsm => self.bsm_priority,
            _ => self.service_priority,
        }
    }
}
