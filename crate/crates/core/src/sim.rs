//! Seeded synthetic city: entities walk, ride implicit buses, drive or stay
//! put, producing an observation log plus the ground truth behind it.
//!
//! Scenario files are line oriented:
//!
//! ```text
//! seed 7
//! jitter 0.1
//! entity <id> walker|bus|car|stationary [speed=<kmh>] [start=<s>] [offset=<n>] [line=<id>] [route=<c1,c2,...>] [cell=<id>]
//! figure4
//! ```
//!
//! `figure4` expands to the bus-and-car scenario built by [`figure4_scenario`].
//! Ground truth files hold `entity  label  cell@ts,cell@ts,...` lines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::behavior::ModeLabel;
use crate::cdr::{sort_observations, LocationObservation};
use crate::ids::{is_valid_token, AgentId, CellId, LineId, Timestamp};
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("scenario line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("topology has no transit line with an overlapping, diverging car route")]
    UnsuitableTopology,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Walker { route: Vec<CellId> },
    BusPassenger { line: LineId },
    Car { route: Vec<CellId> },
    Stationary { cell: CellId },
}

impl Mode {
    pub fn truth_label(&self) -> ModeLabel {
        match self {
            Mode::Walker { .. } => ModeLabel::Walking,
            Mode::BusPassenger { .. } => ModeLabel::PublicTransport,
            Mode::Car { .. } => ModeLabel::PrivateCar,
            Mode::Stationary { .. } => ModeLabel::Static,
        }
    }

    fn keyword(&self) -> &'static str {
        match self {
            Mode::Walker { .. } => "walker",
            Mode::BusPassenger { .. } => "bus",
            Mode::Car { .. } => "car",
            Mode::Stationary { .. } => "stationary",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntitySpec {
    pub id: AgentId,
    pub mode: Mode,
    /// km/h; ignored for stationary entities.
    pub speed_kmh: f64,
    /// Seconds.
    pub start_time: Timestamp,
    /// Route cells skipped before departure.
    pub start_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioSpec {
    pub entities: Vec<EntitySpec>,
    /// Dwell times are scaled by `1 + u`, `u` uniform in `[-jitter, jitter]`.
    pub jitter: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthEntry {
    pub label: ModeLabel,
    /// Cells entered, with entry time.
    pub path: Vec<(CellId, Timestamp)>,
}

pub type GroundTruth = BTreeMap<AgentId, TruthEntry>;

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub observations: Vec<LocationObservation>,
    pub truth: GroundTruth,
}

fn full_route<'a>(topo: &'a Topology, mode: &'a Mode) -> Result<&'a [CellId], SimError> {
    Ok(match mode {
        Mode::Walker { route } | Mode::Car { route } => route,
        Mode::BusPassenger { line } => &topo
            .line(line)
            .ok_or_else(|| SimError::InvalidSpec(format!("unknown line {line}")))?
            .cells,
        Mode::Stationary { cell } => std::slice::from_ref(cell),
    })
}

/// The cells an entity actually traverses.
pub fn entity_route(topo: &Topology, e: &EntitySpec) -> Result<Vec<CellId>, SimError> {
    let route = full_route(topo, &e.mode)?;
    if e.start_offset >= route.len() {
        return Err(SimError::InvalidSpec(format!("{}: start offset beyond route end", e.id)));
    }
    Ok(route[e.start_offset..].to_vec())
}

impl ScenarioSpec {
    pub fn validate(&self, topo: &Topology) -> Result<(), SimError> {
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(SimError::InvalidSpec("jitter must lie in [0, 1)".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entities {
            if !is_valid_token(e.id.as_str()) {
                return Err(SimError::InvalidSpec(format!("bad entity id {:?}", e.id.as_str())));
            }
            if !seen.insert(&e.id) {
                return Err(SimError::InvalidSpec(format!("duplicate entity {}", e.id)));
            }
            let moving = !matches!(e.mode, Mode::Stationary { .. });
            if moving && !(e.speed_kmh > 0.0 && e.speed_kmh.is_finite()) {
                return Err(SimError::InvalidSpec(format!("{}: speed must be positive", e.id)));
            }
            let route = entity_route(topo, e)?;
            for c in &route {
                if !topo.contains(c) {
                    return Err(SimError::InvalidSpec(format!("{}: unknown cell {c}", e.id)));
                }
            }
            for w in route.windows(2) {
                if !topo.are_adjacent(&w[0], &w[1]) {
                    return Err(SimError::InvalidSpec(format!(
                        "{}: {} and {} are not adjacent",
                        e.id, w[0], w[1]
                    )));
                }
            }
            if moving && route.len() < 2 {
                return Err(SimError::InvalidSpec(format!("{}: route needs two cells", e.id)));
            }
        }
        Ok(())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn jitter_factor(seed: u64, key: &str, step: usize, jitter: f64) -> f64 {
    if jitter == 0.0 {
        return 1.0;
    }
    let s = splitmix(seed ^ splitmix(fnv1a(key.as_bytes()) ^ splitmix(step as u64)));
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    1.0 + rng.random_range(-jitter..=jitter)
}

/// Jitter stream key. Passengers boarding the same line at the same stop and
/// time share one vehicle and therefore one stream.
fn jitter_key(e: &EntitySpec) -> String {
    match &e.mode {
        Mode::BusPassenger { line } => format!("bus:{line}@{}+{}", e.start_time, e.start_offset),
        _ => format!("entity:{}", e.id),
    }
}

pub fn simulate(topo: &Topology, spec: &ScenarioSpec) -> Result<SimOutput, SimError> {
    spec.validate(topo)?;
    let mut observations = Vec::new();
    let mut truth = GroundTruth::new();
    for e in &spec.entities {
        let route = entity_route(topo, e)?;
        let mut path = vec![(route[0].clone(), e.start_time)];
        observations.push(LocationObservation::login(e.id.clone(), route[0].clone(), e.start_time));
        if !matches!(e.mode, Mode::Stationary { .. }) {
            let key = jitter_key(e);
            let mps = e.speed_kmh / 3.6;
            let mut t = e.start_time as f64;
            for (step, w) in route.windows(2).enumerate() {
                let meters = topo.distance(&w[0], &w[1]).map_err(|err| SimError::InvalidSpec(err.to_string()))?;
                t += meters / mps * jitter_factor(spec.seed, &key, step, spec.jitter);
                let ts = t.round() as Timestamp;
                observations.push(LocationObservation::logout(e.id.clone(), w[0].clone(), ts));
                observations.push(LocationObservation::login(e.id.clone(), w[1].clone(), ts));
                path.push((w[1].clone(), ts));
            }
        }
        truth.insert(
            e.id.clone(),
            TruthEntry {
                label: e.mode.truth_label(),
                path,
            },
        );
    }
    sort_observations(&mut observations);
    Ok(SimOutput { observations, truth })
}

pub const FIGURE4_BUS_SPEED: f64 = 20.0;
pub const FIGURE4_CAR_SPEED: f64 = 60.0;
pub const FIGURE4_CAR_ID: &str = "14";
pub const FIGURE4_PASSENGERS: std::ops::RangeInclusive<u32> = 51..=71;

/// Car route for the bus-and-car scenario: the first line (by id) with a cell
/// at index >= 2 that has neighbors off the line and is not the last stop.
/// The route follows the line up to that cell, then leaves it through up to
/// three off-line cells.
fn figure4_car_route(topo: &Topology) -> Option<(LineId, usize, Vec<CellId>)> {
    let line = topo.lines().next()?;
    let on_line: BTreeSet<&CellId> = line.cells.iter().collect();
    for i in 2..line.cells.len().saturating_sub(1) {
        let mut route: Vec<CellId> = line.cells[..=i].to_vec();
        let mut visited: BTreeSet<CellId> = route.iter().cloned().collect();
        while route.len() < i + 4 {
            let last = route.last()?;
            let next = topo
                .neighbors(last)
                .ok()?
                .iter()
                .find(|n| !on_line.contains(n) && !visited.contains(*n))
                .cloned();
            match next {
                Some(n) => {
                    visited.insert(n.clone());
                    route.push(n);
                }
                None => break,
            }
        }
        if route.len() > i + 1 {
            return Some((line.id.clone(), i, route));
        }
    }
    None
}

/// Twenty-one passengers `51..=71` riding the first line at 20 km/h and car
/// `14` at 60 km/h that shares the line's first cells, reaches the
/// divergence cell together with the bus, then turns off.
pub fn figure4_scenario(topo: &Topology) -> Result<ScenarioSpec, SimError> {
    let (line, diverge_at, route) = figure4_car_route(topo).ok_or(SimError::UnsuitableTopology)?;
    let overlap_m: f64 = route[..=diverge_at]
        .windows(2)
        .map(|w| topo.distance(&w[0], &w[1]).unwrap_or(0.0))
        .sum();
    let bus_arrival = overlap_m / (FIGURE4_BUS_SPEED / 3.6);
    let car_travel = overlap_m / (FIGURE4_CAR_SPEED / 3.6);
    let mut entities: Vec<EntitySpec> = FIGURE4_PASSENGERS
        .map(|n| EntitySpec {
            id: AgentId::new(n.to_string()),
            mode: Mode::BusPassenger { line: line.clone() },
            speed_kmh: FIGURE4_BUS_SPEED,
            start_time: 0,
            start_offset: 0,
        })
        .collect();
    entities.push(EntitySpec {
        id: AgentId::new(FIGURE4_CAR_ID),
        mode: Mode::Car { route },
        speed_kmh: FIGURE4_CAR_SPEED,
        start_time: (bus_arrival - car_travel).round() as Timestamp,
        start_offset: 0,
    });
    Ok(ScenarioSpec {
        entities,
        jitter: 0.0,
        seed: 0,
    })
}

fn join_cells(cells: &[CellId]) -> String {
    cells.iter().map(CellId::as_str).collect::<Vec<_>>().join(",")
}

pub fn write_scenario(spec: &ScenarioSpec) -> String {
    let mut out = format!("seed {}\njitter {}\n", spec.seed, spec.jitter);
    for e in &spec.entities {
        let _ = write!(out, "entity {} {}", e.id, e.mode.keyword());
        if !matches!(e.mode, Mode::Stationary { .. }) {
            let _ = write!(out, " speed={}", e.speed_kmh);
        }
        let _ = write!(out, " start={} offset={}", e.start_time, e.start_offset);
        let _ = match &e.mode {
            Mode::Walker { route } | Mode::Car { route } => write!(out, " route={}", join_cells(route)),
            Mode::BusPassenger { line } => write!(out, " line={line}"),
            Mode::Stationary { cell } => write!(out, " cell={cell}"),
        };
        out.push('\n');
    }
    out
}

/// Parses a scenario file; `figure4` directives need `topo`.
pub fn parse_scenario(text: &str, topo: &Topology) -> Result<ScenarioSpec, SimError> {
    let mut spec = ScenarioSpec::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| SimError::Malformed {
            line: line_no,
            reason: reason.to_owned(),
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["seed", v] => spec.seed = v.parse().map_err(|_| bad("bad seed"))?,
            ["jitter", v] => spec.jitter = v.parse().map_err(|_| bad("bad jitter"))?,
            ["figure4"] => spec.entities.extend(figure4_scenario(topo)?.entities),
            ["entity", id, kind, attrs @ ..] => {
                let mut kv = BTreeMap::new();
                for a in attrs {
                    let (k, v) = a.split_once('=').ok_or_else(|| bad("attributes are key=value"))?;
                    if kv.insert(k, v).is_some() {
                        return Err(bad("repeated attribute"));
                    }
                }
                let take = |k: &str| kv.get(k).copied();
                let route = || -> Result<Vec<CellId>, SimError> {
                    let r = take("route").ok_or_else(|| bad("route= required"))?;
                    Ok(r.split(',').map(CellId::new).collect())
                };
                let mode = match *kind {
                    "walker" => Mode::Walker { route: route()? },
                    "car" => Mode::Car { route: route()? },
                    "bus" => Mode::BusPassenger {
                        line: LineId::new(take("line").ok_or_else(|| bad("line= required"))?),
                    },
                    "stationary" => Mode::Stationary {
                        cell: CellId::new(take("cell").ok_or_else(|| bad("cell= required"))?),
                    },
                    _ => return Err(bad("mode must be walker, bus, car or stationary")),
                };
                let speed_kmh = match take("speed") {
                    Some(v) => v.parse().map_err(|_| bad("bad speed"))?,
                    None if matches!(mode, Mode::Stationary { .. }) => 0.0,
                    None => return Err(bad("speed= required")),
                };
                let num = |k: &str| -> Result<u64, SimError> {
                    take(k).map_or(Ok(0), |v| v.parse().map_err(|_| bad(&format!("bad {k}"))))
                };
                let allowed = ["speed", "start", "offset", "line", "route", "cell"];
                if let Some(k) = kv.keys().find(|k| !allowed.contains(k)) {
                    return Err(bad(&format!("unknown attribute {k}")));
                }
                spec.entities.push(EntitySpec {
                    id: AgentId::new(*id),
                    mode,
                    speed_kmh,
                    start_time: num("start")?,
                    start_offset: num("offset")? as usize,
                });
            }
            _ => return Err(bad("unrecognized directive")),
        }
    }
    spec.validate(topo)?;
    Ok(spec)
}

pub fn write_truth(truth: &GroundTruth) -> String {
    let mut out = String::new();
    for (id, t) in truth {
        let path: Vec<String> = t.path.iter().map(|(c, ts)| format!("{c}@{ts}")).collect();
        let _ = writeln!(out, "{id}\t{}\t{}", t.label, path.join(","));
    }
    out
}

pub fn parse_truth(text: &str) -> Result<GroundTruth, SimError> {
    let mut truth = GroundTruth::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| SimError::Malformed {
            line: idx + 1,
            reason: reason.to_owned(),
        };
        let parts: Vec<&str> = line.split('\t').collect();
        let [id, label, path] = parts.as_slice() else {
            return Err(bad("expected entity, label and path"));
        };
        let label: ModeLabel = label.parse().map_err(|e: String| bad(&e))?;
        let mut cells = Vec::new();
        for step in path.split(',') {
            let (c, ts) = step.split_once('@').ok_or_else(|| bad("path steps are cell@ts"))?;
            cells.push((CellId::new(c), ts.parse().map_err(|_| bad("bad timestamp"))?));
        }
        if truth
            .insert(AgentId::new(*id), TruthEntry { label, path: cells })
            .is_some()
        {
            return Err(bad("duplicate entity"));
        }
    }
    Ok(truth)
}
