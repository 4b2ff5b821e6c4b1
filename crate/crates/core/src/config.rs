//! Run configuration shared by the engine and the command line.

use thiserror::Error;

use crate::topology::SpeedThresholds;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigInvalid(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Slot length in seconds.
    pub slot_len: u64,
    /// Upper bound of the slow band, km/h.
    pub walk_max: f64,
    /// Upper bound of the medium band, km/h.
    pub medium_max: f64,
    /// Minimum line coverage for a candidate transit group.
    pub theta: f64,
    /// Minimum transit group size.
    pub group_min: usize,
    /// Levels compared when forming co-travel groups.
    pub shared_levels: usize,
    /// Backward enrichment depth in levels.
    pub depth: u64,
    /// Silent slots that close a trip.
    pub gap_slots: u64,
    /// Only affects the order coordination tasks are executed in.
    pub seed: u64,
    /// Run coordination tasks of one epoch on a thread pool.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            slot_len: 30,
            walk_max: 7.0,
            medium_max: 45.0,
            theta: 0.8,
            group_min: 3,
            shared_levels: 3,
            depth: 8,
            gap_slots: 3,
            seed: 0,
            parallel: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        let fail = |m: &str| Err(ConfigInvalid(m.to_owned()));
        if self.slot_len == 0 {
            return fail("slot_len must be positive");
        }
        if !(self.walk_max > 0.0 && self.walk_max < self.medium_max && self.medium_max.is_finite()) {
            return fail("need 0 < walk_max < medium_max");
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return fail("theta must lie in (0, 1]");
        }
        if self.group_min == 0 {
            return fail("group_min must be positive");
        }
        if self.shared_levels < 2 {
            return fail("shared_levels must be at least 2");
        }
        if self.depth == 0 {
            return fail("depth must be positive");
        }
        if self.gap_slots == 0 {
            return fail("gap_slots must be positive");
        }
        Ok(())
    }

    pub fn thresholds(&self) -> SpeedThresholds {
        SpeedThresholds {
            walk_max: self.walk_max,
            medium_max: self.medium_max,
        }
    }
}
