//! Mining over the history store: home/work cells, periodic routes and
//! habitual companions.

use std::collections::{BTreeMap, BTreeSet};

use chrono::Weekday;

use super::{HistoryStore, ModeLabel};
use crate::ids::{AgentId, CellId};

const DAY: u64 = 86_400;

#[derive(Debug, Clone, PartialEq)]
pub struct HomeWorkConfig {
    /// Night window `[night_start, night_end)` in hours, wrapping midnight.
    pub night_start: u8,
    pub night_end: u8,
    /// Work window `[work_start, work_end)` in hours, weekdays only.
    pub work_start: u8,
    pub work_end: u8,
    /// Share of window observations the modal cell must hold.
    pub dominance: f64,
    /// Distinct days the modal cell must be seen on.
    pub min_days: usize,
    /// Weekday of day index 0.
    pub epoch_weekday: Weekday,
}

impl Default for HomeWorkConfig {
    fn default() -> Self {
        Self {
            night_start: 22,
            night_end: 6,
            work_start: 9,
            work_end: 17,
            dominance: 0.6,
            min_days: 5,
            epoch_weekday: Weekday::Mon,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HomeWork {
    pub home: Option<CellId>,
    pub work: Option<CellId>,
}

pub fn weekday_of(day: u64, epoch_weekday: Weekday) -> Weekday {
    let offset = u64::from(epoch_weekday.num_days_from_monday());
    match (day + offset) % 7 {
        0 => Weekday::Mon,
        1 => Weekday::Tue,
        2 => Weekday::Wed,
        3 => Weekday::Thu,
        4 => Weekday::Fri,
        5 => Weekday::Sat,
        _ => Weekday::Sun,
    }
}

fn in_window(hour: u8, start: u8, end: u8) -> bool {
    if start <= end {
        (start..end).contains(&hour)
    } else {
        hour >= start || hour < end
    }
}

/// Modal cell of `(cell, day, count)` samples under the dominance and
/// distinct-day rules; ties yield `None`.
fn dominant_cell(samples: &[(CellId, u64, u32)], cfg: &HomeWorkConfig) -> Option<CellId> {
    let mut totals: BTreeMap<&CellId, (u64, BTreeSet<u64>)> = BTreeMap::new();
    let mut all = 0u64;
    for (cell, day, n) in samples {
        let e = totals.entry(cell).or_default();
        e.0 += u64::from(*n);
        e.1.insert(*day);
        all += u64::from(*n);
    }
    let max = totals.values().map(|(n, _)| *n).max()?;
    let mut modal = totals.iter().filter(|(_, (n, _))| *n == max);
    let (cell, (count, days)) = modal.next()?;
    if modal.next().is_some() {
        return None;
    }
    let share = *count as f64 / all as f64;
    (share >= cfg.dominance && days.len() >= cfg.min_days).then(|| (*cell).clone())
}

pub fn detect_home_work(store: &HistoryStore, entity: &AgentId, cfg: &HomeWorkConfig) -> HomeWork {
    let mut night = Vec::new();
    let mut work = Vec::new();
    for ((cell, day, hour), n) in store.occupancy(entity) {
        if in_window(*hour, cfg.night_start, cfg.night_end) {
            // Late evening hours belong to the following night.
            let night_of = if cfg.night_start > cfg.night_end && *hour >= cfg.night_start {
                day + 1
            } else {
                *day
            };
            night.push((cell.clone(), night_of, *n));
        }
        let weekday = weekday_of(*day, cfg.epoch_weekday);
        if in_window(*hour, cfg.work_start, cfg.work_end) && !matches!(weekday, Weekday::Sat | Weekday::Sun) {
            work.push((cell.clone(), *day, *n));
        }
    }
    HomeWork {
        home: dominant_cell(&night, cfg),
        work: dominant_cell(&work, cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PeriodicRoute {
    pub path: Vec<CellId>,
    /// Earliest and latest start time, seconds since midnight.
    pub window: (u64, u64),
    /// Weekdays the route ran on, Monday first.
    pub weekdays: Vec<u8>,
    pub days: usize,
}

impl PeriodicRoute {
    pub fn weekday_set(&self) -> Vec<Weekday> {
        self.weekdays.iter().map(|d| weekday_of(u64::from(*d), Weekday::Mon)).collect()
    }
}

pub const PERIODIC_MIN_DAYS: usize = 3;
pub const PERIODIC_BAND_SECONDS: u64 = 1800;

/// Identical multi-cell paths repeated on at least three distinct days with
/// start times inside one 30-minute band. Bands are formed greedily over
/// start times sorted by time of day.
pub fn mine_periodic_routes(store: &HistoryStore, entity: &AgentId, epoch_weekday: Weekday) -> Vec<PeriodicRoute> {
    let slot_len = store.slot_len();
    let mut by_path: BTreeMap<&[CellId], Vec<(u64, u64)>> = BTreeMap::new();
    for t in store.trips(entity) {
        if t.path.len() < 2 || t.label == ModeLabel::Static {
            continue;
        }
        let ts = t.slot_start * slot_len;
        by_path.entry(&t.path).or_default().push((ts % DAY, ts / DAY));
    }
    let mut out = Vec::new();
    for (path, mut starts) in by_path {
        starts.sort_unstable();
        let mut i = 0;
        while i < starts.len() {
            let band_start = starts[i].0;
            let mut j = i;
            while j < starts.len() && starts[j].0 - band_start <= PERIODIC_BAND_SECONDS {
                j += 1;
            }
            let band = &starts[i..j];
            let days: BTreeSet<u64> = band.iter().map(|(_, d)| *d).collect();
            if days.len() >= PERIODIC_MIN_DAYS {
                let weekdays: BTreeSet<u8> = days
                    .iter()
                    .map(|d| weekday_of(*d, epoch_weekday).num_days_from_monday() as u8)
                    .collect();
                out.push(PeriodicRoute {
                    path: path.to_vec(),
                    window: (band_start, band[band.len() - 1].0),
                    weekdays: weekdays.into_iter().collect(),
                    days: days.len(),
                });
            }
            i = j;
        }
    }
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Companions {
    pub first: AgentId,
    pub second: AgentId,
    pub shared_trips: u32,
}

pub const COMPANION_MIN_TRIPS: u32 = 3;

/// Entity pairs that rode in the same confirmed group on at least three trips.
pub fn mine_companions(store: &HistoryStore) -> Vec<Companions> {
    let mut members: BTreeMap<&str, BTreeSet<&AgentId>> = BTreeMap::new();
    for t in store.all_trips() {
        if let Some(g) = &t.evidence.group {
            members.entry(g).or_default().insert(&t.entity);
        }
    }
    let mut pairs: BTreeMap<(&AgentId, &AgentId), u32> = BTreeMap::new();
    for set in members.values() {
        let v: Vec<&AgentId> = set.iter().copied().collect();
        for (i, a) in v.iter().enumerate() {
            for b in &v[i + 1..] {
                *pairs.entry((a, b)).or_default() += 1;
            }
        }
    }
    pairs
        .into_iter()
        .filter(|(_, n)| *n >= COMPANION_MIN_TRIPS)
        .map(|((a, b), n)| Companions {
            first: a.clone(),
            second: b.clone(),
            shared_trips: n,
        })
        .collect()
}
