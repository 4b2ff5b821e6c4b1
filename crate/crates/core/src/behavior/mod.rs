//! Final mode decisions, the historical store, and mining over it.

mod history;
mod mining;

use std::fmt;
use std::str::FromStr;

pub use history::{HistoryError, HistoryStore, Prior, TripEvidence, TripRecord};
pub use mining::{
    detect_home_work, mine_companions, mine_periodic_routes, weekday_of, Companions, HomeWork,
    HomeWorkConfig, PeriodicRoute,
};

use crate::topology::SpeedClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModeLabel {
    Static,
    Walking,
    PublicTransport,
    PrivateCar,
    Unresolved,
}

impl ModeLabel {
    pub const ALL: [ModeLabel; 5] = [
        ModeLabel::Static,
        ModeLabel::Walking,
        ModeLabel::PublicTransport,
        ModeLabel::PrivateCar,
        ModeLabel::Unresolved,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModeLabel::Static => "static",
            ModeLabel::Walking => "walking",
            ModeLabel::PublicTransport => "public_transport",
            ModeLabel::PrivateCar => "private_car",
            ModeLabel::Unresolved => "unresolved",
        }
    }

    pub fn is_resolved(self) -> bool {
        self != ModeLabel::Unresolved
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModeLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModeLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown mode label {s:?}"))
    }
}

/// Transit manager's answer about a group's route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LineVerdict {
    PublicConfirmed,
    StillCandidate,
    NotPublic,
}

impl fmt::Display for LineVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LineVerdict::PublicConfirmed => "public_confirmed",
            LineVerdict::StillCandidate => "still_candidate",
            LineVerdict::NotPublic => "not_public",
        })
    }
}

/// Minimum trip count before a prior may decide a medium-speed case.
pub const PRIOR_MIN_SUPPORT: u32 = 3;

/// The decision table. Live transit evidence is consulted first; the
/// historical prior only breaks the remaining medium-speed ambiguity.
pub fn decide_mode(speed: SpeedClass, line: Option<LineVerdict>, prior: Prior) -> ModeLabel {
    match (speed, line) {
        (SpeedClass::Unknown, _) => ModeLabel::Unresolved,
        (SpeedClass::Slow, _) => ModeLabel::Walking,
        (SpeedClass::Fast, _) => ModeLabel::PrivateCar,
        (SpeedClass::Medium, Some(LineVerdict::PublicConfirmed)) => ModeLabel::PublicTransport,
        (SpeedClass::Medium, Some(LineVerdict::NotPublic)) => ModeLabel::PrivateCar,
        (SpeedClass::Medium, Some(LineVerdict::StillCandidate) | None) => {
            if prior.support < PRIOR_MIN_SUPPORT {
                ModeLabel::Unresolved
            } else if prior.p_public > 0.5 {
                ModeLabel::PublicTransport
            } else if prior.p_public < 0.5 {
                ModeLabel::PrivateCar
            } else {
                ModeLabel::Unresolved
            }
        }
    }
}
