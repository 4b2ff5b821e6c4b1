//! Historical data kept per entity: finished trips, mode counters, and hourly
//! cell occupancy used for home/work detection.
//!
//! Persistence is a line-oriented, tab-separated append log:
//!
//! ```text
//! @slot_len   30
//! @occ        <entity> <cell> <day> <hour> <count>
//! <entity>    <label> <slot_start> <cell>... [end=<slot>] [group=<id>] [speed=<kmh>] [coverage=<frac>]
//! ```
//!
//! Replaying a log reconstructs every counter exactly; repeated `@occ` lines
//! for the same key add up.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::ModeLabel;
use crate::ids::{is_valid_token, AgentId, CellId, Slot, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("trip label {0} does not move the public-transport prior")]
    LabelNotApplicable(ModeLabel),
    #[error("unresolved trips are not stored")]
    UnresolvedTrip,
    #[error("trip path is empty")]
    EmptyTrip,
    #[error("history line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Laplace-smoothed probability that the entity travels by public transport
/// when its speed alone is ambiguous.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    pub p_public: f64,
    pub support: u32,
}

impl Prior {
    pub fn from_counts(public: u32, car: u32) -> Self {
        Self {
            p_public: (f64::from(public) + 1.0) / (f64::from(public) + f64::from(car) + 2.0),
            support: public + car,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripEvidence {
    pub mean_speed_kmh: Option<f64>,
    pub coverage: Option<f64>,
    /// Confirmed co-travel group the entity rode with, if any.
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub entity: AgentId,
    pub slot_start: Slot,
    pub slot_end: Slot,
    /// Cells visited, consecutive duplicates removed.
    pub path: Vec<CellId>,
    pub label: ModeLabel,
    pub evidence: TripEvidence,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct EntityHistory {
    trips: Vec<TripRecord>,
    modes: BTreeMap<ModeLabel, u32>,
    /// (cell, day, hour) -> observation count.
    occupancy: BTreeMap<(CellId, u64, u8), u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryStore {
    slot_len: u64,
    entities: BTreeMap<AgentId, EntityHistory>,
}

impl HistoryStore {
    pub fn new(slot_len: u64) -> Self {
        Self {
            slot_len: slot_len.max(1),
            entities: BTreeMap::new(),
        }
    }

    pub fn slot_len(&self) -> u64 {
        self.slot_len
    }

    pub fn entities(&self) -> impl Iterator<Item = &AgentId> {
        self.entities.keys()
    }

    pub fn trips(&self, entity: &AgentId) -> &[TripRecord] {
        self.entities.get(entity).map(|h| h.trips.as_slice()).unwrap_or(&[])
    }

    pub fn all_trips(&self) -> impl Iterator<Item = &TripRecord> {
        self.entities.values().flat_map(|h| h.trips.iter())
    }

    pub fn mode_count(&self, entity: &AgentId, label: ModeLabel) -> u32 {
        self.entities
            .get(entity)
            .and_then(|h| h.modes.get(&label).copied())
            .unwrap_or(0)
    }

    /// Hourly occupancy counters of one entity: ((cell, day, hour), count).
    pub fn occupancy(&self, entity: &AgentId) -> impl Iterator<Item = (&(CellId, u64, u8), &u32)> {
        self.entities.get(entity).into_iter().flat_map(|h| h.occupancy.iter())
    }

    /// Counts one location registration.
    pub fn record_observation(&mut self, entity: &AgentId, cell: &CellId, timestamp: Timestamp) {
        let day = timestamp / 86_400;
        let hour = ((timestamp % 86_400) / 3600) as u8;
        self.add_occupancy(entity, cell.clone(), day, hour, 1);
    }

    fn add_occupancy(&mut self, entity: &AgentId, cell: CellId, day: u64, hour: u8, n: u32) {
        *self
            .entities
            .entry(entity.clone())
            .or_default()
            .occupancy
            .entry((cell, day, hour))
            .or_default() += n;
    }

    pub fn record_trip(&mut self, trip: TripRecord) -> Result<(), HistoryError> {
        if trip.label == ModeLabel::Unresolved {
            return Err(HistoryError::UnresolvedTrip);
        }
        if trip.path.is_empty() {
            return Err(HistoryError::EmptyTrip);
        }
        let h = self.entities.entry(trip.entity.clone()).or_default();
        *h.modes.entry(trip.label).or_default() += 1;
        h.trips.push(trip);
        Ok(())
    }

    pub fn prior(&self, entity: &AgentId) -> Prior {
        Prior::from_counts(
            self.mode_count(entity, ModeLabel::PublicTransport),
            self.mode_count(entity, ModeLabel::PrivateCar),
        )
    }

    /// Stores a public-transport or private-car trip and returns the updated prior.
    pub fn update_prior(&mut self, trip: TripRecord) -> Result<Prior, HistoryError> {
        if !matches!(trip.label, ModeLabel::PublicTransport | ModeLabel::PrivateCar) {
            return Err(HistoryError::LabelNotApplicable(trip.label));
        }
        let entity = trip.entity.clone();
        self.record_trip(trip)?;
        Ok(self.prior(&entity))
    }

    pub fn write_log(&self) -> String {
        let mut out = format!("@slot_len\t{}\n", self.slot_len);
        for (entity, h) in &self.entities {
            for ((cell, day, hour), n) in &h.occupancy {
                let _ = writeln!(out, "@occ\t{entity}\t{cell}\t{day}\t{hour}\t{n}");
            }
        }
        for (entity, h) in &self.entities {
            for t in &h.trips {
                let _ = write!(out, "{entity}\t{}\t{}", t.label, t.slot_start);
                for c in &t.path {
                    let _ = write!(out, "\t{c}");
                }
                let _ = write!(out, "\tend={}", t.slot_end);
                if let Some(g) = &t.evidence.group {
                    let _ = write!(out, "\tgroup={g}");
                }
                if let Some(v) = t.evidence.mean_speed_kmh {
                    let _ = write!(out, "\tspeed={v:.3}");
                }
                if let Some(v) = t.evidence.coverage {
                    let _ = write!(out, "\tcoverage={v:.3}");
                }
                out.push('\n');
            }
        }
        out
    }

    /// Replays a history log. `default_slot_len` applies when the log has no
    /// `@slot_len` line.
    pub fn load_log(text: &str, default_slot_len: u64) -> Result<Self, HistoryError> {
        let mut store = HistoryStore::new(default_slot_len);
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| HistoryError::Malformed {
                line: line_no,
                reason: reason.to_owned(),
            };
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.iter().any(|p| !is_valid_token(p)) {
                return Err(bad("empty or blank-containing field"));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|_| bad("bad number"));
            match parts[0] {
                "@slot_len" if parts.len() == 2 => {
                    let v = num(parts[1])?;
                    if v == 0 {
                        return Err(bad("slot_len must be positive"));
                    }
                    store.slot_len = v;
                }
                "@occ" if parts.len() == 6 => {
                    let hour = num(parts[4])?;
                    if hour > 23 {
                        return Err(bad("hour out of range"));
                    }
                    let n = u32::try_from(num(parts[5])?).map_err(|_| bad("count too large"))?;
                    store.add_occupancy(&AgentId::new(parts[1]), CellId::new(parts[2]), num(parts[3])?, hour as u8, n);
                }
                d if d.starts_with('@') => return Err(bad("unknown directive")),
                _ => {
                    if parts.len() < 4 {
                        return Err(bad("trip needs entity, label, slot_start and cells"));
                    }
                    let label: ModeLabel = parts[1].parse().map_err(|e: String| bad(&e))?;
                    let slot_start = num(parts[2])?;
                    let mut trip = TripRecord {
                        entity: AgentId::new(parts[0]),
                        slot_start,
                        slot_end: slot_start,
                        path: Vec::new(),
                        label,
                        evidence: TripEvidence::default(),
                    };
                    for p in &parts[3..] {
                        match p.split_once('=') {
                            None => trip.path.push(CellId::new(*p)),
                            Some(("end", v)) => trip.slot_end = num(v)?,
                            Some(("group", v)) => trip.evidence.group = Some(v.to_owned()),
                            Some(("speed", v)) => {
                                trip.evidence.mean_speed_kmh = Some(v.parse().map_err(|_| bad("bad speed"))?)
                            }
                            Some(("coverage", v)) => {
                                trip.evidence.coverage = Some(v.parse().map_err(|_| bad("bad coverage"))?)
                            }
                            Some(_) => return Err(bad("unknown trip attribute")),
                        }
                    }
                    store.record_trip(trip).map_err(|e| bad(&e.to_string()))?;
                }
            }
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trip(entity: &str, label: ModeLabel) -> TripRecord {
        TripRecord {
            entity: entity.into(),
            slot_start: 10,
            slot_end: 20,
            path: vec!["a".into(), "b".into()],
            label,
            evidence: TripEvidence::default(),
        }
    }

    #[test]
    fn empty_prior_is_half() {
        let s = HistoryStore::new(30);
        assert_eq!(s.prior(&"x".into()), Prior { p_public: 0.5, support: 0 });
    }

    #[test]
    fn prior_after_three_public_one_car() {
        let mut s = HistoryStore::new(30);
        for _ in 0..3 {
            s.update_prior(trip("x", ModeLabel::PublicTransport)).unwrap();
        }
        let p = s.update_prior(trip("x", ModeLabel::PrivateCar)).unwrap();
        assert!((p.p_public - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(p.support, 4);
    }

    #[test]
    fn walking_does_not_move_prior() {
        let mut s = HistoryStore::new(30);
        assert_eq!(
            s.update_prior(trip("x", ModeLabel::Walking)),
            Err(HistoryError::LabelNotApplicable(ModeLabel::Walking))
        );
        assert_eq!(s.record_trip(trip("x", ModeLabel::Unresolved)), Err(HistoryError::UnresolvedTrip));
        s.record_trip(trip("x", ModeLabel::Walking)).unwrap();
        assert_eq!(s.prior(&"x".into()).support, 0);
    }

    #[test]
    fn log_replay_reconstructs_counters() {
        let mut s = HistoryStore::new(60);
        let mut t = trip("e1", ModeLabel::PublicTransport);
        t.evidence.group = Some("g4".into());
        t.evidence.mean_speed_kmh = Some(20.0);
        t.evidence.coverage = Some(1.0);
        s.record_trip(t).unwrap();
        s.record_trip(trip("e2", ModeLabel::Static)).unwrap();
        s.record_observation(&"e1".into(), &"home".into(), 23 * 3600);
        s.record_observation(&"e1".into(), &"home".into(), 23 * 3600 + 5);
        let text = s.write_log();
        let back = HistoryStore::load_log(&text, 30).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.slot_len(), 60);
        // appending the same log doubles every counter
        let doubled = HistoryStore::load_log(&format!("{text}{text}"), 30).unwrap();
        assert_eq!(doubled.mode_count(&"e1".into(), ModeLabel::PublicTransport), 2);
        let occ: Vec<u32> = doubled.occupancy(&"e1".into()).map(|(_, n)| *n).collect();
        assert_eq!(occ, [4]);
    }

    #[test]
    fn malformed_lines() {
        assert!(HistoryStore::load_log("e1\tflying\t3\ta\n", 30).is_err());
        assert!(HistoryStore::load_log("@occ\te\tc\t1\t25\t1\n", 30).is_err());
        assert!(HistoryStore::load_log("e1\tunresolved\t3\ta\n", 30).is_err());
        assert!(HistoryStore::load_log("@bogus\t1\n", 30).is_err());
    }
}
