//! CBR-driven BSM rate control: an exponentially smoothed channel-busy-ratio
//! estimate drives the inter-transmit time through an anchored
//! piecewise-linear map, clamped to the configured ITT bounds.

use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::types::TimeMs;

#[derive(Debug, Error, PartialEq)]
pub enum RateControlError {
    #[error("CBR sample {0} outside [0, 100]")]
    SampleOutOfRange(f64),
}

/// Per-vehicle rate-control state.
#[derive(Debug, Clone)]
pub struct RateControlState {
    pub smoothed_cbr: f64,
    smoothing_weight: f64,
    anchors: Vec<(f64, f64)>,
    itt_bounds_ms: (u64, u64),
    pub current_itt_ms: u64,
    enabled: bool,
}

impl RateControlState {
    pub fn new(config: &ScenarioConfig) -> Self {
        let mut state = RateControlState {
            smoothed_cbr: 0.0,
            smoothing_weight: config.cbr_smoothing_weight,
            anchors: config.itt_map_anchors.clone(),
            itt_bounds_ms: config.bsm_itt_bounds_ms,
            current_itt_ms: config.bsm_itt_bounds_ms.0,
            enabled: config.rate_control_enabled,
        };
        state.current_itt_ms = state.target_itt_ms();
        state
    }

    /// Folds a CBR sample into the smoothed estimate:
    /// `smoothed <- w*sample + (1-w)*smoothed`, then refreshes the ITT.
    pub fn smooth_cbr(&mut self, sample: f64) -> Result<(), RateControlError> {
        if !(0.0..=100.0).contains(&sample) {
            return Err(RateControlError::SampleOutOfRange(sample));
        }
        self.smoothed_cbr =
            self.smoothing_weight * sample + (1.0 - self.smoothing_weight) * self.smoothed_cbr;
        self.current_itt_ms = self.target_itt_ms();
        Ok(())
    }

    /// Piecewise-linear interpolation of the smoothed CBR over the anchors,
    /// clamped into the configured bounds.
    pub fn target_itt_ms(&self) -> u64 {
        let (lo, hi) = self.itt_bounds_ms;
        if !self.enabled {
            return lo;
        }
        let cbr = self.smoothed_cbr;
        let itt = match self.anchors.iter().position(|&(c, _)| c >= cbr) {
            Some(0) => self.anchors[0].1,
            Some(i) => {
                let (c0, i0) = self.anchors[i - 1];
                let (c1, i1) = self.anchors[i];
                i0 + (i1 - i0) * (cbr - c0) / (c1 - c0)
            }
            None => self.anchors.last().map(|&(_, i)| i).unwrap_or(lo as f64),
        };
        (itt.round() as u64).clamp(lo, hi)
    }

    /// Subframe of the next BSM generation.
    pub fn next_bsm_time(&self, last_tx_ms: TimeMs) -> TimeMs {
        if self.enabled {
            last_tx_ms + self.current_itt_ms
        } else {
            last_tx_ms + self.itt_bounds_ms.0
        }
    }
}
