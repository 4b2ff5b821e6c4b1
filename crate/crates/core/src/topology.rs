//! The city model: BTS cells, their adjacency, transit lines and the speed
//! bands used to classify jumps.
//!
//! Topology files are line oriented:
//!
//! ```text
//! # comment
//! cell <id> <x_m> <y_m> <radius_m>
//! adj <id> <id>
//! line <id> <cell> <cell> ...
//! ```
//!
//! All `cell` lines come first, then `adj`, then `line`.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::cdr::Transition;
use crate::ids::{is_valid_token, CellId, LineId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate cell id {0}")]
    DuplicateCellId(CellId),
    #[error("adjacency references unknown cell {0}")]
    DanglingAdjacency(CellId),
    #[error("cell {0} cannot be adjacent to itself")]
    SelfAdjacency(CellId),
    #[error("duplicate line id {0}")]
    DuplicateLineId(LineId),
    #[error("line {0} references unknown cell {1}")]
    UnknownLineCell(LineId, CellId),
    #[error("line {0}: step {1} joins non-adjacent cells")]
    NonAdjacentLineStep(LineId, usize),
    #[error("line {0} needs at least two cells and no immediate repetition")]
    DegenerateLine(LineId),
    #[error("unknown cell {0}")]
    UnknownCell(CellId),
    #[error("path is empty")]
    EmptyPath,
    #[error("speed window covers fewer than three regions")]
    WindowTooShort,
    #[error("speed window has zero elapsed time")]
    ZeroElapsed,
    #[error("invalid speed thresholds: need 0 < walk_max < medium_max")]
    InvalidThresholds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BtsCell {
    pub id: CellId,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitLine {
    pub id: LineId,
    pub cells: Vec<CellId>,
}

impl TransitLine {
    /// True when `from -> to` is a step of this line in either direction.
    pub fn has_step(&self, from: &CellId, to: &CellId) -> bool {
        self.cells
            .windows(2)
            .any(|w| (&w[0] == from && &w[1] == to) || (&w[0] == to && &w[1] == from))
    }
}

/// Speed band boundaries in km/h.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedThresholds {
    pub walk_max: f64,
    pub medium_max: f64,
}

impl Default for SpeedThresholds {
    fn default() -> Self {
        Self {
            walk_max: 7.0,
            medium_max: 45.0,
        }
    }
}

impl SpeedThresholds {
    pub fn new(walk_max: f64, medium_max: f64) -> Result<Self, TopologyError> {
        if walk_max > 0.0 && walk_max < medium_max && medium_max.is_finite() {
            Ok(Self { walk_max, medium_max })
        } else {
            Err(TopologyError::InvalidThresholds)
        }
    }

    pub fn classify(&self, kmh: f64) -> SpeedClass {
        if kmh < self.walk_max {
            SpeedClass::Slow
        } else if kmh < self.medium_max {
            SpeedClass::Medium
        } else {
            SpeedClass::Fast
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpeedClass {
    Slow,
    Medium,
    Fast,
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    cells: BTreeMap<CellId, BtsCell>,
    adjacency: BTreeMap<CellId, BTreeSet<CellId>>,
    lines: BTreeMap<LineId, TransitLine>,
    pub speed_thresholds: SpeedThresholds,
}

impl Topology {
    /// Validates and assembles a topology from its parts.
    pub fn new(
        cells: Vec<BtsCell>,
        adjacency: Vec<(CellId, CellId)>,
        lines: Vec<TransitLine>,
    ) -> Result<Self, TopologyError> {
        let mut topo = Topology {
            cells: BTreeMap::new(),
            adjacency: BTreeMap::new(),
            lines: BTreeMap::new(),
            speed_thresholds: SpeedThresholds::default(),
        };
        for c in cells {
            if !c.radius.is_finite() || c.radius <= 0.0 || !c.x.is_finite() || !c.y.is_finite() {
                return Err(TopologyError::Malformed {
                    line: 0,
                    reason: format!("cell {} needs finite coordinates and radius > 0", c.id),
                });
            }
            if topo.cells.contains_key(&c.id) {
                return Err(TopologyError::DuplicateCellId(c.id));
            }
            topo.adjacency.insert(c.id.clone(), BTreeSet::new());
            topo.cells.insert(c.id.clone(), c);
        }
        for (a, b) in adjacency {
            topo.add_adjacency(a, b)?;
        }
        for l in lines {
            topo.add_line(l)?;
        }
        Ok(topo)
    }

    fn add_adjacency(&mut self, a: CellId, b: CellId) -> Result<(), TopologyError> {
        for c in [&a, &b] {
            if !self.cells.contains_key(c) {
                return Err(TopologyError::DanglingAdjacency(c.clone()));
            }
        }
        if a == b {
            return Err(TopologyError::SelfAdjacency(a));
        }
        self.adjacency.get_mut(&a).expect("checked").insert(b.clone());
        self.adjacency.get_mut(&b).expect("checked").insert(a);
        Ok(())
    }

    fn add_line(&mut self, line: TransitLine) -> Result<(), TopologyError> {
        if self.lines.contains_key(&line.id) {
            return Err(TopologyError::DuplicateLineId(line.id));
        }
        if line.cells.len() < 2 || line.cells.windows(2).any(|w| w[0] == w[1]) {
            return Err(TopologyError::DegenerateLine(line.id));
        }
        for c in &line.cells {
            if !self.cells.contains_key(c) {
                return Err(TopologyError::UnknownLineCell(line.id.clone(), c.clone()));
            }
        }
        for (i, w) in line.cells.windows(2).enumerate() {
            if !self.adjacency[&w[0]].contains(&w[1]) {
                return Err(TopologyError::NonAdjacentLineStep(line.id.clone(), i));
            }
        }
        self.lines.insert(line.id.clone(), line);
        Ok(())
    }

    pub fn with_thresholds(mut self, thresholds: SpeedThresholds) -> Self {
        self.speed_thresholds = thresholds;
        self
    }

    pub fn cells(&self) -> impl Iterator<Item = &BtsCell> {
        self.cells.values()
    }

    pub fn cell(&self, id: &CellId) -> Option<&BtsCell> {
        self.cells.get(id)
    }

    pub fn contains(&self, id: &CellId) -> bool {
        self.cells.contains_key(id)
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Number of unordered adjacent pairs.
    pub fn adjacency_pair_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn lines(&self) -> impl Iterator<Item = &TransitLine> {
        self.lines.values()
    }

    pub fn line(&self, id: &LineId) -> Option<&TransitLine> {
        self.lines.get(id)
    }

    pub fn neighbors(&self, cell: &CellId) -> Result<&BTreeSet<CellId>, TopologyError> {
        self.adjacency
            .get(cell)
            .ok_or_else(|| TopologyError::UnknownCell(cell.clone()))
    }

    pub fn are_adjacent(&self, a: &CellId, b: &CellId) -> bool {
        self.adjacency.get(a).is_some_and(|n| n.contains(b))
    }

    /// Centroid distance in meters.
    pub fn distance(&self, a: &CellId, b: &CellId) -> Result<f64, TopologyError> {
        let ca = self.cell(a).ok_or_else(|| TopologyError::UnknownCell(a.clone()))?;
        let cb = self.cell(b).ok_or_else(|| TopologyError::UnknownCell(b.clone()))?;
        Ok((ca.x - cb.x).hypot(ca.y - cb.y))
    }

    /// Best fraction of the path's steps covered by one contiguous stretch
    /// of a transit line, matched in either direction.
    pub fn line_coverage(&self, path: &[CellId]) -> Result<LineCoverage, TopologyError> {
        if path.is_empty() {
            return Err(TopologyError::EmptyPath);
        }
        if path.len() == 1 {
            return Ok(LineCoverage::NONE);
        }
        let steps = path.len() - 1;
        let mut best: Option<(&LineId, usize)> = None;
        // BTreeMap order makes the first maximum the smallest line id.
        for line in self.lines.values() {
            let forward = longest_common_run(path, &line.cells);
            let reversed: Vec<CellId> = line.cells.iter().rev().cloned().collect();
            let backward = longest_common_run(path, &reversed);
            let run = forward.max(backward);
            if run > 0 && best.is_none_or(|(_, b)| run > b) {
                best = Some((&line.id, run));
            }
        }
        Ok(match best {
            Some((id, run)) => LineCoverage {
                line: Some(id.clone()),
                fraction: run as f64 / steps as f64,
            },
            None => LineCoverage::NONE,
        })
    }

    /// Average speed in km/h over a window of one entity's transitions:
    /// centroid distance along the window over the summed time since entering
    /// each source cell.
    pub fn travel_speed(&self, window: &[Transition]) -> Result<f64, TopologyError> {
        let Some(first) = window.first() else {
            return Err(TopologyError::WindowTooShort);
        };
        let regions: BTreeSet<&CellId> = std::iter::once(&first.from_bts)
            .chain(window.iter().map(|t| &t.to_bts))
            .collect();
        if regions.len() < 3 {
            return Err(TopologyError::WindowTooShort);
        }
        let mut meters = 0.0;
        for t in window {
            meters += self.distance(&t.from_bts, &t.to_bts)?;
        }
        let seconds: u64 = window.iter().map(|t| t.dwell).sum();
        if seconds == 0 {
            return Err(TopologyError::ZeroElapsed);
        }
        Ok(meters / seconds as f64 * 3.6)
    }
}

/// Length of the longest run of consecutive path steps that are also
/// consecutive steps of `line` (same direction).
fn longest_common_run(path: &[CellId], line: &[CellId]) -> usize {
    let ps = path.len().saturating_sub(1);
    let ls = line.len().saturating_sub(1);
    let step_eq = |i: usize, j: usize| path[i] == line[j] && path[i + 1] == line[j + 1];
    let mut prev = vec![0usize; ls + 1];
    let mut best = 0;
    for i in 0..ps {
        let mut cur = vec![0usize; ls + 1];
        for j in 0..ls {
            if step_eq(i, j) {
                cur[j + 1] = prev[j] + 1;
                best = best.max(cur[j + 1]);
            }
        }
        prev = cur;
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineCoverage {
    pub line: Option<LineId>,
    pub fraction: f64,
}

impl LineCoverage {
    pub const NONE: LineCoverage = LineCoverage {
        line: None,
        fraction: 0.0,
    };
}

pub fn load_topology(text: &str) -> Result<Topology, TopologyError> {
    #[derive(PartialEq, PartialOrd)]
    enum Section {
        Cells,
        Adjacency,
        Lines,
    }
    let mut section = Section::Cells;
    let mut cells = Vec::new();
    let mut adjacency = Vec::new();
    let mut lines = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: String| TopologyError::Malformed { line: line_no, reason };
        let parts: Vec<&str> = line.split_whitespace().collect();
        let next = match parts[0] {
            "cell" => Section::Cells,
            "adj" => Section::Adjacency,
            "line" => Section::Lines,
            other => return Err(malformed(format!("unknown directive {other:?}"))),
        };
        if next < section {
            return Err(malformed("sections must be ordered cell, adj, line".into()));
        }
        section = next;
        match section {
            Section::Cells => {
                if parts.len() != 5 {
                    return Err(malformed("expected: cell <id> <x> <y> <radius>".into()));
                }
                let num = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| malformed(format!("bad number {s:?}")))
                };
                let cell = BtsCell {
                    id: CellId::new(parts[1]),
                    x: num(parts[2])?,
                    y: num(parts[3])?,
                    radius: num(parts[4])?,
                };
                if !cell.radius.is_finite() || cell.radius <= 0.0 {
                    return Err(malformed(format!("radius of {} must be positive", cell.id)));
                }
                cells.push(cell);
            }
            Section::Adjacency => {
                if parts.len() != 3 {
                    return Err(malformed("expected: adj <id> <id>".into()));
                }
                adjacency.push((CellId::new(parts[1]), CellId::new(parts[2])));
            }
            Section::Lines => {
                if parts.len() < 2 || !is_valid_token(parts[1]) {
                    return Err(malformed("expected: line <id> <cell> ...".into()));
                }
                lines.push(TransitLine {
                    id: LineId::new(parts[1]),
                    cells: parts[2..].iter().map(|c| CellId::new(*c)).collect(),
                });
            }
        }
    }
    Topology::new(cells, adjacency, lines)
}

/// Outcome of threshold calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub thresholds: SpeedThresholds,
    pub outcome: CalibrationOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationOutcome {
    Calibrated,
    /// Fewer samples than the minimum; defaults used.
    TooFewSamples,
    /// The percentiles coincide or are non-positive; defaults used.
    DegeneratePercentiles,
}

pub const MIN_CALIBRATION_SAMPLES: usize = 30;

/// Nearest-rank percentile of an ascending slice, `pct` in 1..=100.
fn nearest_rank(sorted: &[f64], pct: usize) -> f64 {
    let rank = (pct * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

/// Derives slow/medium/fast boundaries from speeds observed in the area:
/// the 33rd and 67th nearest-rank percentiles.
pub fn calibrate_thresholds(observed_kmh: &[f64]) -> Calibration {
    let mut samples: Vec<f64> = observed_kmh.iter().copied().filter(|v| v.is_finite()).collect();
    if samples.len() < MIN_CALIBRATION_SAMPLES {
        return Calibration {
            thresholds: SpeedThresholds::default(),
            outcome: CalibrationOutcome::TooFewSamples,
        };
    }
    samples.sort_by(f64::total_cmp);
    let lo = nearest_rank(&samples, 33);
    let hi = nearest_rank(&samples, 67);
    match SpeedThresholds::new(lo, hi) {
        Ok(thresholds) => Calibration {
            thresholds,
            outcome: CalibrationOutcome::Calibrated,
        },
        Err(_) => Calibration {
            thresholds: SpeedThresholds::default(),
            outcome: CalibrationOutcome::DegeneratePercentiles,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: &str = "\
# 2x2 grid, 1 km spacing
cell a 0 0 600
cell b 1000 0 600
cell c 0 1000 600
cell d 1000 1000 600
adj a b
adj a c
adj b d
adj c d
line L1 c a b
";

    fn ids(v: &[&str]) -> Vec<CellId> {
        v.iter().map(|s| CellId::new(*s)).collect()
    }

    fn tr(from: &str, to: &str, dwell: u64) -> Transition {
        Transition {
            entity: "e".into(),
            from_bts: from.into(),
            to_bts: to.into(),
            slot: 0,
            elapsed: 0,
            dwell,
            arrived_at: 0,
        }
    }

    #[test]
    fn load_square() {
        let t = load_topology(SQUARE).unwrap();
        assert_eq!(t.cell_count(), 4);
        assert_eq!(t.adjacency_pair_count(), 4);
        assert_eq!(t.lines().count(), 1);
    }

    #[test]
    fn load_errors() {
        let bad_line = format!("{SQUARE}line L2 a X\n");
        assert_eq!(
            load_topology(&bad_line),
            Err(TopologyError::UnknownLineCell("L2".into(), "X".into()))
        );
        let diag = format!("{SQUARE}line L3 a d\n");
        assert_eq!(load_topology(&diag), Err(TopologyError::NonAdjacentLineStep("L3".into(), 0)));
        assert_eq!(
            load_topology("cell a 0 0 1\ncell a 1 1 1\n"),
            Err(TopologyError::DuplicateCellId("a".into()))
        );
        assert_eq!(
            load_topology("cell a 0 0 1\nadj a q\n"),
            Err(TopologyError::DanglingAdjacency("q".into()))
        );
        assert!(matches!(
            load_topology("adj a b\ncell a 0 0 1\n"),
            Err(TopologyError::Malformed { line: 2, .. })
        ));
        assert!(matches!(
            load_topology("cell a 0 0 1\nadj a a\n"),
            Err(TopologyError::SelfAdjacency(_))
        ));
        assert!(matches!(
            load_topology("cell a 0 0 1\ncell b 1 0 1\nadj a b\ncell c 2 0 1\n"),
            Err(TopologyError::Malformed { line: 4, .. })
        ));
        assert!(matches!(load_topology("cell a 0 0 0\n"), Err(TopologyError::Malformed { .. })));
    }

    #[test]
    fn empty_topology() {
        let t = load_topology("# nothing\n").unwrap();
        assert_eq!(t.cell_count(), 0);
        assert_eq!(t.lines().count(), 0);
    }

    #[test]
    fn neighbors_of_corner() {
        let t = load_topology(SQUARE).unwrap();
        let n: Vec<&str> = t.neighbors(&"a".into()).unwrap().iter().map(CellId::as_str).collect();
        assert_eq!(n, ["b", "c"]);
        assert_eq!(t.neighbors(&"zz".into()), Err(TopologyError::UnknownCell("zz".into())));
        let iso = load_topology("cell q 0 0 1\n").unwrap();
        assert!(iso.neighbors(&"q".into()).unwrap().is_empty());
    }

    #[test]
    fn coverage_cases() {
        let t = load_topology(SQUARE).unwrap();
        let full = t.line_coverage(&ids(&["c", "a", "b"])).unwrap();
        assert_eq!(full, LineCoverage { line: Some("L1".into()), fraction: 1.0 });
        let none = t.line_coverage(&ids(&["c", "d"])).unwrap();
        assert_eq!(none, LineCoverage::NONE);
        assert_eq!(t.line_coverage(&ids(&["a"])).unwrap(), LineCoverage::NONE);
        assert_eq!(t.line_coverage(&[]), Err(TopologyError::EmptyPath));
        // reversed direction
        let rev = t.line_coverage(&ids(&["b", "a", "c", "d"])).unwrap();
        assert_eq!(rev.line, Some("L1".into()));
        assert!((rev.fraction - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn coverage_tie_prefers_smallest_line_id() {
        let t = load_topology("cell c 0 0 1\ncell d 1 0 1\nadj c d\nline L1 c d\nline L0 d c\n").unwrap();
        let cov = t.line_coverage(&ids(&["c", "d"])).unwrap();
        assert_eq!(cov.line, Some("L0".into()));
    }

    #[test]
    fn speed_over_two_jumps() {
        let t = load_topology("cell a 0 0 1\ncell b 1000 0 1\ncell c 2000 0 1\nadj a b\nadj b c\n").unwrap();
        let v = t.travel_speed(&[tr("a", "b", 360), tr("b", "c", 360)]).unwrap();
        assert!((v - 10.0).abs() < 1e-12);
        assert_eq!(t.travel_speed(&[tr("a", "b", 360)]), Err(TopologyError::WindowTooShort));
        assert_eq!(
            t.travel_speed(&[tr("a", "b", 0), tr("b", "c", 0)]),
            Err(TopologyError::ZeroElapsed)
        );
        // back and forth covers two regions only
        assert_eq!(
            t.travel_speed(&[tr("a", "b", 10), tr("b", "a", 10)]),
            Err(TopologyError::WindowTooShort)
        );
    }

    #[test]
    fn calibration() {
        let empty = calibrate_thresholds(&[]);
        assert_eq!(empty.thresholds, SpeedThresholds::new(7.0, 45.0).unwrap());
        assert_eq!(empty.outcome, CalibrationOutcome::TooFewSamples);

        let ramp: Vec<f64> = (1..=99).map(f64::from).collect();
        let c = calibrate_thresholds(&ramp);
        assert_eq!(c.thresholds, SpeedThresholds::new(33.0, 67.0).unwrap());
        assert_eq!(c.outcome, CalibrationOutcome::Calibrated);

        let flat = calibrate_thresholds(&[20.0; 40]);
        assert_eq!(flat.outcome, CalibrationOutcome::DegeneratePercentiles);
        assert_eq!(flat.thresholds, SpeedThresholds::default());
    }

    #[test]
    fn classify_bands() {
        let th = SpeedThresholds::default();
        assert_eq!(th.classify(5.0), SpeedClass::Slow);
        assert_eq!(th.classify(7.0), SpeedClass::Medium);
        assert_eq!(th.classify(20.0), SpeedClass::Medium);
        assert_eq!(th.classify(45.0), SpeedClass::Fast);
        assert!(SpeedThresholds::new(10.0, 10.0).is_err());
    }
}
