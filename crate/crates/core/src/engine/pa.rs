//! Personal agent: one per phone, holding the trace of the current trip.

use crate::behavior::{ModeLabel, TripEvidence, TripRecord};
use crate::cdr::{LocationObservation, ObservationKind, Transition};
use crate::ids::{AgentId, CellId, Slot, Timestamp};

use super::messages::{TraceReply, TraceRequest};

#[derive(Debug, Clone, PartialEq)]
struct Trip {
    start_slot: Slot,
    last_slot: Slot,
    /// Run-length trace: the cell held from each slot on.
    segments: Vec<(Slot, CellId)>,
    transitions: Vec<Transition>,
    jumps: usize,
    /// Last resolved label and its evidence.
    outcome: Option<(ModeLabel, TripEvidence)>,
}

/// Result of closing a trip.
#[derive(Debug, Clone, PartialEq)]
pub enum TripEnd {
    /// No jump during the trip.
    Static { cell: CellId, first_slot: Slot, last_slot: Slot },
    /// Moved, but every move fell inside one slot, so no jump was seen.
    Collapsed { last_slot: Slot },
    /// Moved; `record` is absent when no label was ever resolved.
    Moved { record: Option<TripRecord> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonalAgent {
    entity: AgentId,
    cell: Option<CellId>,
    entered: Timestamp,
    logged_out_since: Option<Slot>,
    slot_start_cell: Option<CellId>,
    raw_this_slot: usize,
    trip: Option<Trip>,
}

impl PersonalAgent {
    pub fn new(entity: AgentId) -> Self {
        Self {
            entity,
            cell: None,
            entered: 0,
            logged_out_since: None,
            slot_start_cell: None,
            raw_this_slot: 0,
            trip: None,
        }
    }

    pub fn entity(&self) -> &AgentId {
        &self.entity
    }

    pub fn has_open_trip(&self) -> bool {
        self.trip.is_some()
    }

    /// True when the entity has been logged out for at least `gap_slots`.
    pub fn trip_due(&self, slot: Slot, gap_slots: u64) -> bool {
        self.trip.is_some() && self.logged_out_since.is_some_and(|s| slot >= s + gap_slots)
    }

    pub fn begin_slot(&mut self) {
        self.slot_start_cell = self.trip.as_ref().and(self.cell.clone());
        self.raw_this_slot = 0;
    }

    /// Applies one observation; returns the raw transition it caused, if any.
    pub fn observe(&mut self, o: &LocationObservation, slot: Slot) -> Option<Transition> {
        let same_cell = self.cell.as_ref() == Some(&o.bts);
        match o.kind {
            ObservationKind::Logout => {
                if same_cell {
                    self.logged_out_since = Some(slot);
                    if let Some(t) = &mut self.trip {
                        t.last_slot = slot;
                    }
                }
                None
            }
            ObservationKind::Login => {
                self.logged_out_since = None;
                let trip = self.trip.get_or_insert_with(|| Trip {
                    start_slot: slot,
                    last_slot: slot,
                    segments: vec![(slot, o.bts.clone())],
                    transitions: Vec::new(),
                    jumps: 0,
                    outcome: None,
                });
                trip.last_slot = slot;
                let prev = match &self.cell {
                    Some(c) if !same_cell => c.clone(),
                    _ => {
                        if self.cell.is_none() {
                            self.cell = Some(o.bts.clone());
                            self.entered = o.timestamp;
                        }
                        return None;
                    }
                };
                let t = Transition {
                    entity: self.entity.clone(),
                    from_bts: prev,
                    to_bts: o.bts.clone(),
                    slot,
                    elapsed: 0,
                    dwell: o.timestamp.saturating_sub(self.entered),
                    arrived_at: o.timestamp,
                };
                trip.transitions.push(t.clone());
                self.cell = Some(o.bts.clone());
                self.entered = o.timestamp;
                self.raw_this_slot += 1;
                Some(t)
            }
        }
    }

    /// Closes the slot: records the held cell and returns the effective jump
    /// plus the number of raw transitions collapsed into it.
    pub fn end_slot(&mut self, slot: Slot) -> (Option<Transition>, usize) {
        let Some(trip) = &mut self.trip else {
            return (None, 0);
        };
        let Some(cell) = self.cell.clone() else {
            return (None, 0);
        };
        if trip.segments.last().map(|(_, c)| c) != Some(&cell) {
            trip.segments.push((slot, cell.clone()));
        }
        let jump = match &self.slot_start_cell {
            Some(from) if *from != cell => {
                trip.jumps += 1;
                let last = trip.transitions.last().expect("a cell change implies a transition");
                Some(Transition {
                    from_bts: from.clone(),
                    ..last.clone()
                })
            }
            _ => None,
        };
        let collapsed = self.raw_this_slot - usize::from(jump.is_some());
        (jump, collapsed)
    }

    /// Cell held at `level` within the current trip.
    pub fn cell_at(&self, level: Slot) -> Option<&CellId> {
        let trip = self.trip.as_ref()?;
        if level < trip.start_slot {
            return None;
        }
        trip.segments.iter().take_while(|(s, _)| *s <= level).last().map(|(_, c)| c)
    }

    pub fn trip_path(&self) -> Vec<CellId> {
        self.trip
            .as_ref()
            .map(|t| t.segments.iter().map(|(_, c)| c.clone()).collect())
            .unwrap_or_default()
    }

    pub fn answer(&self, req: &TraceRequest) -> TraceReply {
        TraceReply {
            agent: self.entity.clone(),
            positions: (req.lowest..=req.highest)
                .filter_map(|l| self.cell_at(l).map(|c| (l, c.clone())))
                .collect(),
            transitions: self.trip.as_ref().map(|t| t.transitions.clone()).unwrap_or_default(),
            trip_path: self.trip_path(),
        }
    }

    /// Keeps the latest resolved label for the trip record.
    pub fn record_outcome(&mut self, label: ModeLabel, evidence: TripEvidence) {
        if let (Some(t), true) = (&mut self.trip, label.is_resolved()) {
            t.outcome = Some((label, evidence));
        }
    }

    pub fn close_trip(&mut self) -> Option<TripEnd> {
        let trip = self.trip.take()?;
        let cell = self.cell.take();
        self.logged_out_since = None;
        if trip.jumps == 0 && trip.transitions.is_empty() {
            return Some(TripEnd::Static {
                cell: cell.unwrap_or_else(|| trip.segments[0].1.clone()),
                first_slot: trip.start_slot,
                last_slot: trip.last_slot,
            });
        }
        if trip.jumps == 0 {
            return Some(TripEnd::Collapsed {
                last_slot: trip.last_slot,
            });
        }
        let record = trip.outcome.map(|(label, evidence)| TripRecord {
            entity: self.entity.clone(),
            slot_start: trip.start_slot,
            slot_end: trip.last_slot,
            path: trip.segments.iter().map(|(_, c)| c.clone()).collect(),
            label,
            evidence,
        });
        Some(TripEnd::Moved { record })
    }
}
