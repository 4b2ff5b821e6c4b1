//! Location observations (login/logout) and the BTS-to-BTS transitions
//! derived from them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use thiserror::Error;

use super::record::{CdrHeader, CdrRecord, COL_CALL_DATE, COL_CALL_TIME, COL_CUSTOMER};
use crate::ids::{is_valid_token, AgentId, CellId, Slot, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("field mapping names unknown column {0:?}")]
    UnknownColumn(String),
    #[error("field mapping has no cell column; CDR records cannot yield observations")]
    NoCellColumn,
    #[error("observations are not sorted by timestamp (index {index})")]
    UnsortedInput { index: usize },
    #[error("slot length must be positive")]
    ZeroSlotLen,
    #[error("observation log line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },
}

/// Recoverable problems while converting records; every skipped record is
/// reported here.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestWarning {
    #[error("record line {line}: empty cell, skipped")]
    EmptyCell { line: usize },
    #[error("record line {line}: empty entity, skipped")]
    EmptyEntity { line: usize },
    #[error("record line {line}: no call start, skipped")]
    MissingTimestamp { line: usize },
    #[error("record line {line}: call starts before the epoch, skipped")]
    BeforeEpoch { line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObservationKind {
    // Logout sorts first so a simultaneous handover reads "leave A, enter B".
    Logout,
    Login,
}

impl fmt::Display for ObservationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObservationKind::Login => "login",
            ObservationKind::Logout => "logout",
        })
    }
}

impl FromStr for ObservationKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "login" => Ok(ObservationKind::Login),
            "logout" => Ok(ObservationKind::Logout),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LocationObservation {
    pub entity: AgentId,
    pub bts: CellId,
    pub kind: ObservationKind,
    pub timestamp: Timestamp,
}

impl LocationObservation {
    pub fn new(
        entity: impl Into<AgentId>,
        bts: impl Into<CellId>,
        kind: ObservationKind,
        timestamp: Timestamp,
    ) -> Self {
        Self {
            entity: entity.into(),
            bts: bts.into(),
            kind,
            timestamp,
        }
    }

    pub fn login(entity: impl Into<AgentId>, bts: impl Into<CellId>, timestamp: Timestamp) -> Self {
        Self::new(entity, bts, ObservationKind::Login, timestamp)
    }

    pub fn logout(entity: impl Into<AgentId>, bts: impl Into<CellId>, timestamp: Timestamp) -> Self {
        Self::new(entity, bts, ObservationKind::Logout, timestamp)
    }

    /// Total order used everywhere observations are sorted.
    pub fn sort_key(&self) -> (Timestamp, &AgentId, ObservationKind, &CellId) {
        (self.timestamp, &self.entity, self.kind, &self.bts)
    }
}

pub fn sort_observations(obs: &mut [LocationObservation]) {
    obs.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// Errors with the index of the first observation whose timestamp regresses.
pub fn check_sorted(obs: &[LocationObservation]) -> Result<(), IngestError> {
    match obs.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        Some(i) => Err(IngestError::UnsortedInput { index: i + 1 }),
        None => Ok(()),
    }
}

/// A jump of one entity between two distinct cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Transition {
    pub entity: AgentId,
    pub from_bts: CellId,
    pub to_bts: CellId,
    pub slot: Slot,
    /// Seconds between the last observation at `from_bts` and the login at `to_bts`.
    pub elapsed: u64,
    /// Seconds between entering `from_bts` and the login at `to_bts`.
    pub dwell: u64,
    /// Timestamp of the login at `to_bts`.
    pub arrived_at: Timestamp,
}

/// Which CDR columns carry entity, cell and call start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMapping {
    pub entity_column: String,
    pub cell_column: Option<String>,
    pub date_column: String,
    pub time_column: String,
    /// Wall-clock origin of observation timestamps.
    pub epoch: NaiveDate,
}

impl Default for FieldMapping {
    fn default() -> Self {
        Self {
            entity_column: COL_CUSTOMER.to_owned(),
            cell_column: None,
            date_column: COL_CALL_DATE.to_owned(),
            time_column: COL_CALL_TIME.to_owned(),
            epoch: NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date"),
        }
    }
}

impl FieldMapping {
    pub fn with_cell_column(mut self, column: impl Into<String>) -> Self {
        self.cell_column = Some(column.into());
        self
    }

    fn check(&self, header: &CdrHeader) -> Result<(), IngestError> {
        let mut cols = vec![&self.entity_column, &self.date_column, &self.time_column];
        cols.extend(self.cell_column.as_ref());
        for c in cols {
            if header.position(c).is_none() {
                return Err(IngestError::UnknownColumn(c.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObservationBatch {
    pub observations: Vec<LocationObservation>,
    pub warnings: Vec<IngestWarning>,
}

/// Turns each record into a login at call start and a logout at call end,
/// in the cell named by the mapping.
pub fn records_to_observations(
    records: &[CdrRecord],
    mapping: &FieldMapping,
) -> Result<ObservationBatch, IngestError> {
    let cell_column = mapping.cell_column.as_deref().ok_or(IngestError::NoCellColumn)?;
    let mut batch = ObservationBatch::default();
    let Some(first) = records.first() else {
        return Ok(batch);
    };
    mapping.check(first.header())?;
    let epoch = mapping.epoch.and_hms_opt(0, 0, 0).expect("midnight");

    for r in records {
        let cell = r.get(cell_column).unwrap_or("").trim();
        if cell.is_empty() {
            batch.warnings.push(IngestWarning::EmptyCell { line: r.line });
            continue;
        }
        let entity = r.get(&mapping.entity_column).unwrap_or("").trim();
        if entity.is_empty() {
            batch.warnings.push(IngestWarning::EmptyEntity { line: r.line });
            continue;
        }
        let start = match call_start(r, mapping) {
            Some(dt) => dt,
            None => {
                batch.warnings.push(IngestWarning::MissingTimestamp { line: r.line });
                continue;
            }
        };
        let secs = (start - epoch).num_seconds();
        if secs < 0 {
            batch.warnings.push(IngestWarning::BeforeEpoch { line: r.line });
            continue;
        }
        let login = secs as Timestamp;
        let logout = login + u64::from(r.duration.unwrap_or(0));
        batch.observations.push(LocationObservation::login(entity, cell, login));
        batch.observations.push(LocationObservation::logout(entity, cell, logout));
    }
    sort_observations(&mut batch.observations);
    Ok(batch)
}

fn call_start(r: &CdrRecord, mapping: &FieldMapping) -> Option<NaiveDateTime> {
    if mapping.date_column == COL_CALL_DATE && mapping.time_column == COL_CALL_TIME {
        return Some(r.call_date?.and_time(r.call_time?));
    }
    let date = NaiveDate::parse_from_str(r.get(&mapping.date_column)?.trim(), super::record::DATE_FORMAT).ok()?;
    let time = chrono::NaiveTime::parse_from_str(r.get(&mapping.time_column)?.trim(), super::record::TIME_FORMAT).ok()?;
    Some(date.and_time(time))
}

/// Per-entity state while scanning observations.
struct Presence {
    cell: CellId,
    entered: Timestamp,
    last_seen: Timestamp,
}

/// Derives transitions from a timestamp-sorted observation sequence.
///
/// The current cell of an entity only changes on a login. A login at a cell
/// different from the current one yields a transition; repeated logins in the
/// same cell (periodic mid-call updates) yield nothing.
pub fn observations_to_transitions(
    obs: &[LocationObservation],
    slot_len: u64,
) -> Result<Vec<Transition>, IngestError> {
    if slot_len == 0 {
        return Err(IngestError::ZeroSlotLen);
    }
    check_sorted(obs)?;
    let mut ordered: Vec<&LocationObservation> = obs.iter().collect();
    ordered.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    let mut state: BTreeMap<&AgentId, Presence> = BTreeMap::new();
    let mut out = Vec::new();
    for o in ordered {
        match state.get_mut(&o.entity) {
            None => {
                state.insert(
                    &o.entity,
                    Presence {
                        cell: o.bts.clone(),
                        entered: o.timestamp,
                        last_seen: o.timestamp,
                    },
                );
            }
            Some(p) if p.cell == o.bts => p.last_seen = o.timestamp,
            Some(p) => {
                if o.kind == ObservationKind::Logout {
                    // Stale logout from a cell the entity is no longer in.
                    continue;
                }
                out.push(Transition {
                    entity: o.entity.clone(),
                    from_bts: p.cell.clone(),
                    to_bts: o.bts.clone(),
                    slot: o.timestamp / slot_len,
                    elapsed: o.timestamp - p.last_seen,
                    dwell: o.timestamp - p.entered,
                    arrived_at: o.timestamp,
                });
                *p = Presence {
                    cell: o.bts.clone(),
                    entered: o.timestamp,
                    last_seen: o.timestamp,
                };
            }
        }
    }
    Ok(out)
}

/// Parses the tab-separated observation log
/// (`entity  bts  login|logout  timestamp`, `#` comments).
pub fn parse_observation_log(text: &str) -> Result<Vec<LocationObservation>, IngestError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: &str| IngestError::MalformedLog {
            line: line_no,
            reason: reason.to_owned(),
        };
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(malformed("expected 4 tab-separated fields"));
        }
        if !is_valid_token(parts[0]) || !is_valid_token(parts[1]) {
            return Err(malformed("empty or blank-containing id"));
        }
        let kind = parts[2]
            .parse::<ObservationKind>()
            .map_err(|_| malformed("kind must be login or logout"))?;
        let ts = parts[3]
            .trim()
            .parse::<Timestamp>()
            .map_err(|_| malformed("timestamp must be a non-negative integer"))?;
        out.push(LocationObservation::new(parts[0], parts[1], kind, ts));
    }
    Ok(out)
}

pub fn write_observation_log(obs: &[LocationObservation]) -> String {
    let mut out = String::new();
    for o in obs {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", o.entity, o.bts, o.kind, o.timestamp));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdr::record::parse_cdr;

    fn header_with_cell() -> String {
        let mut names: Vec<String> = [
            "Call Type", "Call Cause", "Customer Identifier", "Telephone Number Dialled",
            "Call Date", "Call Time", "Duration",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        names.push("Cell".into());
        for i in names.len()..30 {
            names.push(format!("Extra {i}"));
        }
        names.iter().map(|n| format!("\"{n}\"")).collect::<Vec<_>>().join(",")
    }

    fn row(entity: &str, date: &str, time: &str, dur: &str, cell: &str) -> String {
        let mut f = vec!["V", "0", entity, "+4400", date, time, dur, cell];
        f.resize(30, "");
        f.iter().map(|v| format!("\"{v}\"")).collect::<Vec<_>>().join(",")
    }

    #[test]
    fn record_yields_login_and_logout() {
        let text = format!("{}\n{}\n", header_with_cell(), row("e1", "01/01/1970", "10:37:23", "233", "c7"));
        let file = parse_cdr(&text).unwrap();
        let batch = records_to_observations(&file.records, &FieldMapping::default().with_cell_column("Cell")).unwrap();
        let login = 10 * 3600 + 37 * 60 + 23;
        assert_eq!(
            batch.observations,
            vec![
                LocationObservation::login("e1", "c7", login),
                LocationObservation::logout("e1", "c7", 10 * 3600 + 41 * 60 + 16),
            ]
        );
        assert_eq!(login + 233, 10 * 3600 + 41 * 60 + 16);
        assert!(batch.warnings.is_empty());
    }

    #[test]
    fn no_cell_column() {
        assert_eq!(
            records_to_observations(&[], &FieldMapping::default()),
            Err(IngestError::NoCellColumn)
        );
    }

    #[test]
    fn empty_records_give_empty_batch() {
        let batch = records_to_observations(&[], &FieldMapping::default().with_cell_column("Cell")).unwrap();
        assert!(batch.observations.is_empty());
    }

    #[test]
    fn unknown_column_rejected() {
        let text = format!("{}\n{}\n", header_with_cell(), row("e1", "01/01/1970", "00:00:01", "1", "c"));
        let file = parse_cdr(&text).unwrap();
        let err = records_to_observations(&file.records, &FieldMapping::default().with_cell_column("Nope"));
        assert_eq!(err, Err(IngestError::UnknownColumn("Nope".into())));
    }

    #[test]
    fn empty_cell_is_counted() {
        let text = format!(
            "{}\n{}\n{}\n",
            header_with_cell(),
            row("e1", "01/01/1970", "00:00:01", "1", ""),
            row("e2", "01/01/1970", "00:00:01", "1", "c2"),
        );
        let file = parse_cdr(&text).unwrap();
        let batch = records_to_observations(&file.records, &FieldMapping::default().with_cell_column("Cell")).unwrap();
        assert_eq!(batch.warnings, vec![IngestWarning::EmptyCell { line: 2 }]);
        assert_eq!(batch.observations.len(), 2);
    }

    #[test]
    fn simultaneous_records_ordered_by_entity() {
        let text = format!(
            "{}\n{}\n{}\n",
            header_with_cell(),
            row("e9", "01/01/1970", "00:01:00", "0", "a"),
            row("e2", "01/01/1970", "00:01:00", "0", "z"),
        );
        let file = parse_cdr(&text).unwrap();
        let batch = records_to_observations(&file.records, &FieldMapping::default().with_cell_column("Cell")).unwrap();
        let ents: Vec<&str> = batch.observations.iter().map(|o| o.entity.as_str()).collect();
        assert_eq!(ents, ["e2", "e2", "e9", "e9"]);
    }

    #[test]
    fn transition_slot_and_elapsed() {
        let obs = vec![
            LocationObservation::login("e1", "A", 0),
            LocationObservation::logout("e1", "A", 50),
            LocationObservation::login("e1", "B", 90),
        ];
        let t = observations_to_transitions(&obs, 60).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].from_bts.as_str(), t[0].to_bts.as_str()), ("A", "B"));
        assert_eq!(t[0].slot, 1);
        assert_eq!(t[0].elapsed, 40);
        assert_eq!(t[0].dwell, 90);
    }

    #[test]
    fn same_cell_logins_make_no_transition() {
        let obs = vec![
            LocationObservation::login("e1", "A", 0),
            LocationObservation::login("e1", "A", 30),
        ];
        assert!(observations_to_transitions(&obs, 60).unwrap().is_empty());
        assert!(observations_to_transitions(&[], 60).unwrap().is_empty());
    }

    #[test]
    fn unsorted_and_zero_slot() {
        let obs = vec![
            LocationObservation::login("e1", "A", 10),
            LocationObservation::login("e1", "B", 5),
        ];
        assert_eq!(observations_to_transitions(&obs, 60), Err(IngestError::UnsortedInput { index: 1 }));
        assert_eq!(observations_to_transitions(&[], 0), Err(IngestError::ZeroSlotLen));
    }

    #[test]
    fn simultaneous_handover_in_any_input_order() {
        // B sorts before A, but the logout still precedes the login.
        let obs = vec![
            LocationObservation::login("e1", "Z", 0),
            LocationObservation::login("e1", "B", 100),
            LocationObservation::logout("e1", "Z", 100),
        ];
        let t = observations_to_transitions(&obs, 60).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].elapsed, 0);
        assert_eq!(t[0].dwell, 100);
    }

    #[test]
    fn log_round_trip_and_errors() {
        let obs = vec![
            LocationObservation::login("e1", "A", 0),
            LocationObservation::logout("e1", "A", 7),
        ];
        let text = format!("# header\n{}", write_observation_log(&obs));
        assert_eq!(parse_observation_log(&text).unwrap(), obs);
        assert!(matches!(
            parse_observation_log("e1\tA\tenter\t0\n"),
            Err(IngestError::MalformedLog { line: 1, .. })
        ));
        assert!(matches!(
            parse_observation_log("e1\tA\tlogin\t-4\n"),
            Err(IngestError::MalformedLog { line: 1, .. })
        ));
    }
}
