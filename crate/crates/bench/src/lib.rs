//! Shared fixtures for the benchmark targets.

use v2i_sim_core::config::{default_scenario, ScenarioConfig};
use v2i_sim_core::mac::{SensingHistory, SENSING_WINDOW};
use v2i_sim_core::phy::dbm_to_mw;

/// A short mid-load scenario used by the end-to-end benchmark.
pub fn short_scenario(flow: f64, duration_ms: u64) -> ScenarioConfig {
    let mut config = default_scenario();
    config.flow_rate_vps = flow;
    config.sim_duration_ms = duration_ms;
    config.rng_seed = 42;
    config
}

/// A sensing window populated with a mixed load, `upto` being the newest
/// subframe.
pub fn loaded_history(subchannels: u32, upto: u64) -> SensingHistory {
    let mut h = SensingHistory::new(subchannels);
    let from = upto.saturating_sub(SENSING_WINDOW as u64 - 1);
    for t in from..=upto {
        h.begin_subframe(t);
        if t % 3 == 0 {
            h.accumulate(t, (t % subchannels as u64) as u32, 2, dbm_to_mw(-75.0));
        }
        if t % 7 == 0 {
            h.accumulate(t, 0, 1, dbm_to_mw(-88.0));
        }
    }
    h
}
