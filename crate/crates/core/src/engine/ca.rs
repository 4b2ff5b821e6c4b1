//! BTS agents and the coordination tasks they spawn.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::behavior::{decide_mode, LineVerdict, Prior};
use crate::cdr::Transition;
use crate::ids::{AgentId, CellId, Slot};
use crate::topology::{SpeedClass, Topology};
use crate::travel_graph::{TraceSource, TravelGraph};

use super::messages::{ClassificationReport, LineMatchReply, LineMatchRequest, TraceReply, TraceRequest};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EpochError {
    #[error("transition of {entity} targets {target}, not {bts}")]
    ForeignTransition { entity: AgentId, target: CellId, bts: CellId },
    #[error("transitions of one epoch must share a slot")]
    MixedSlots,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Lifecycle {
    Created,
    Enriching,
    Classifying,
    Reported,
    Dead,
}

/// Trace replies received by one coordination task.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceCache {
    replies: BTreeMap<AgentId, TraceReply>,
}

impl TraceCache {
    pub fn insert(&mut self, reply: TraceReply) {
        self.replies.insert(reply.agent.clone(), reply);
    }

    pub fn get(&self, agent: &AgentId) -> Option<&TraceReply> {
        self.replies.get(agent)
    }

    pub fn contains(&self, agent: &AgentId) -> bool {
        self.replies.contains_key(agent)
    }
}

impl TraceSource for TraceCache {
    fn cell_at(&self, agent: &AgentId, level: Slot) -> Option<CellId> {
        let reply = self.replies.get(agent)?;
        reply
            .positions
            .binary_search_by_key(&level, |(l, _)| *l)
            .ok()
            .map(|i| reply.positions[i].1.clone())
    }
}

/// Last two transitions, extended backwards until they span three regions.
pub fn speed_window(transitions: &[Transition]) -> Option<&[Transition]> {
    let n = transitions.len();
    let mut start = n.checked_sub(2)?;
    loop {
        let w = &transitions[start..];
        let regions: BTreeSet<&CellId> =
            std::iter::once(&w[0].from_bts).chain(w.iter().map(|t| &t.to_bts)).collect();
        if regions.len() >= 3 {
            return Some(w);
        }
        start = start.checked_sub(1)?;
    }
}

#[derive(Debug, Clone)]
pub struct CoordinationTask {
    pub id: u64,
    pub anchor: CellId,
    pub from: CellId,
    pub slot: Slot,
    pub jumpers: Vec<AgentId>,
    lifecycle: Lifecycle,
    graph: Option<TravelGraph>,
    cache: TraceCache,
    requested: BTreeSet<AgentId>,
    next_request: u64,
    speeds: BTreeMap<AgentId, Option<f64>>,
    pending: Vec<LineMatchRequest>,
    /// Request index per jumper.
    asked: BTreeMap<AgentId, usize>,
    pub violations: usize,
}

/// Groups one BTS's arrivals of a slot by source cell and spawns one task per
/// (source, destination) pair, numbered from `next_id` in source order.
pub fn bts_epoch(
    bts: &CellId,
    arrivals: &[Transition],
    next_id: &mut u64,
) -> Result<Vec<CoordinationTask>, EpochError> {
    let mut by_source: BTreeMap<&CellId, Vec<AgentId>> = BTreeMap::new();
    let slot = arrivals.first().map(|t| t.slot);
    for t in arrivals {
        if &t.to_bts != bts {
            return Err(EpochError::ForeignTransition {
                entity: t.entity.clone(),
                target: t.to_bts.clone(),
                bts: bts.clone(),
            });
        }
        if Some(t.slot) != slot {
            return Err(EpochError::MixedSlots);
        }
        by_source.entry(&t.from_bts).or_default().push(t.entity.clone());
    }
    Ok(by_source
        .into_iter()
        .map(|(from, mut jumpers)| {
            jumpers.sort();
            let id = *next_id;
            *next_id += 1;
            CoordinationTask::new(id, bts.clone(), from.clone(), slot.unwrap_or(0), jumpers)
        })
        .collect())
}

impl CoordinationTask {
    pub fn new(id: u64, anchor: CellId, from: CellId, slot: Slot, jumpers: Vec<AgentId>) -> Self {
        Self {
            id,
            anchor,
            from,
            slot,
            jumpers,
            lifecycle: Lifecycle::Created,
            graph: None,
            cache: TraceCache::default(),
            requested: BTreeSet::new(),
            next_request: 0,
            speeds: BTreeMap::new(),
            pending: Vec::new(),
            asked: BTreeMap::new(),
            violations: 0,
        }
    }

    pub fn lifecycle(&self) -> Lifecycle {
        self.lifecycle
    }

    pub fn graph(&self) -> Option<&TravelGraph> {
        self.graph.as_ref()
    }

    pub fn traces(&self) -> &TraceCache {
        &self.cache
    }

    fn advance(&mut self, to: Lifecycle) {
        assert!(to >= self.lifecycle, "lifecycle only moves forward");
        self.lifecycle = to;
    }

    /// Builds the initial graph. Returns false when the jumper list is unusable.
    pub fn start(&mut self) -> bool {
        let jumpers: Vec<(AgentId, CellId)> = self.jumpers.iter().map(|j| (j.clone(), self.from.clone())).collect();
        self.advance(Lifecycle::Enriching);
        match TravelGraph::build_initial(&self.anchor, self.slot, &jumpers) {
            Ok(g) => {
                self.graph = Some(g);
                true
            }
            Err(_) => false,
        }
    }

    /// Trace requests for graph agents not asked yet, as (request id, request).
    pub fn trace_requests(&mut self, depth: u64) -> Vec<(u64, TraceRequest)> {
        let Some(g) = &self.graph else {
            return Vec::new();
        };
        let wanted: Vec<AgentId> = g
            .labels()
            .into_iter()
            .filter(|a| !self.requested.contains(*a))
            .cloned()
            .collect();
        let lowest = self.slot.saturating_sub(depth);
        wanted
            .into_iter()
            .map(|agent| {
                self.requested.insert(agent.clone());
                let id = self.next_request;
                self.next_request += 1;
                (
                    id,
                    TraceRequest {
                        agent,
                        lowest,
                        highest: self.slot,
                    },
                )
            })
            .collect()
    }

    pub fn deliver_trace(&mut self, reply: TraceReply) {
        self.cache.insert(reply);
    }

    pub fn enrich(&mut self, depth: u64) {
        if let Some(g) = &mut self.graph {
            g.enrich_backward(&self.cache, depth);
        }
    }

    pub fn validate_graph(&mut self) -> usize {
        self.violations = self
            .graph
            .as_ref()
            .map_or(0, |g| crate::travel_graph::validate_against(g, &self.cache).len());
        self.violations
    }

    /// Computes speeds and co-travel groups; returns the line-match requests
    /// for medium-speed members.
    pub fn classify(&mut self, topo: &Topology, shared_levels: usize) -> Vec<LineMatchRequest> {
        self.advance(Lifecycle::Classifying);
        for j in &self.jumpers {
            let speed = self
                .cache
                .get(j)
                .and_then(|r| speed_window(&r.transitions))
                .and_then(|w| topo.travel_speed(w).ok());
            self.speeds.insert(j.clone(), speed);
        }
        let groups = match &self.graph {
            Some(g) => g.co_travel_groups(shared_levels).unwrap_or_default(),
            None => self.jumpers.iter().map(|j| vec![j.clone()]).collect(),
        };
        let thresholds = topo.speed_thresholds;
        for group in groups {
            let medium: Vec<AgentId> = group
                .into_iter()
                .filter(|a| {
                    self.speeds
                        .get(a)
                        .copied()
                        .flatten()
                        .is_some_and(|v| thresholds.classify(v) == SpeedClass::Medium)
                })
                .collect();
            if medium.is_empty() {
                continue;
            }
            let paths: Vec<&[CellId]> = medium
                .iter()
                .map(|a| self.cache.get(a).map_or(&[][..], |r| r.trip_path.as_slice()))
                .collect();
            let mut path = common_suffix(&paths);
            if path.is_empty() {
                path.push(self.anchor.clone());
            }
            for m in &medium {
                self.asked.insert(m.clone(), self.pending.len());
            }
            self.pending.push(LineMatchRequest {
                slot: self.slot,
                anchor: self.anchor.clone(),
                members: medium,
                path,
            });
        }
        self.pending.clone()
    }

    /// Applies the line-match replies and the history priors; emits one
    /// report per jumper and releases the graph.
    pub fn finish(
        &mut self,
        topo: &Topology,
        replies: &[LineMatchReply],
        prior: impl Fn(&AgentId) -> Prior,
    ) -> Vec<ClassificationReport> {
        let thresholds = topo.speed_thresholds;
        let mut out = Vec::with_capacity(self.jumpers.len());
        for j in &self.jumpers {
            let speed = self.speeds.get(j).copied().flatten();
            let class = speed.map_or(SpeedClass::Unknown, |v| thresholds.classify(v));
            let reply = self.asked.get(j).and_then(|&i| replies.get(i));
            let p = prior(j);
            let verdict: Option<LineVerdict> = reply.map(|r| r.verdict);
            let mut report = ClassificationReport::bare(self.slot, j.clone(), decide_mode(class, verdict, p));
            report.speed_kmh = speed;
            if let Some(r) = reply {
                report.coverage = Some(r.coverage);
                report.line = r.line.clone();
                report.group = r.group.clone();
            }
            if class == SpeedClass::Medium {
                report.prior = Some(p.p_public);
            }
            out.push(report);
        }
        self.advance(Lifecycle::Reported);
        out
    }

    /// Ends the task; returns the graph it held.
    pub fn kill(&mut self) -> Option<TravelGraph> {
        self.advance(Lifecycle::Dead);
        self.cache = TraceCache::default();
        self.graph.take()
    }
}

fn common_suffix(paths: &[&[CellId]]) -> Vec<CellId> {
    let Some(first) = paths.first() else {
        return Vec::new();
    };
    let mut n = 0;
    while n < first.len() {
        let c = &first[first.len() - 1 - n];
        if paths.iter().all(|p| p.len() > n && &p[p.len() - 1 - n] == c) {
            n += 1;
        } else {
            break;
        }
    }
    first[first.len() - n..].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::load_topology;

    fn arrival(e: &str, from: &str, to: &str, slot: Slot) -> Transition {
        Transition {
            entity: e.into(),
            from_bts: from.into(),
            to_bts: to.into(),
            slot,
            elapsed: 0,
            dwell: 60,
            arrived_at: slot * 30,
        }
    }

    #[test]
    fn one_task_per_source() {
        let arrivals = [
            arrival("1", "A", "B", 7),
            arrival("2", "A", "B", 7),
            arrival("3", "C", "B", 7),
            arrival("4", "A", "B", 7),
            arrival("5", "C", "B", 7),
        ];
        let mut next = 0;
        let tasks = bts_epoch(&"B".into(), &arrivals, &mut next).unwrap();
        let sizes: Vec<(&str, usize)> = tasks.iter().map(|t| (t.from.as_str(), t.jumpers.len())).collect();
        assert_eq!(sizes, [("A", 3), ("C", 2)]);
        assert_eq!(next, 2);
        assert!(tasks.iter().all(|t| t.lifecycle() == Lifecycle::Created && t.slot == 7));
    }

    #[test]
    fn no_arrivals_no_tasks() {
        let mut next = 0;
        assert!(bts_epoch(&"B".into(), &[], &mut next).unwrap().is_empty());
    }

    #[test]
    fn foreign_transition_rejected() {
        let mut next = 0;
        let err = bts_epoch(&"B".into(), &[arrival("1", "A", "C", 7)], &mut next).unwrap_err();
        assert!(matches!(err, EpochError::ForeignTransition { .. }));
    }

    #[test]
    fn window_needs_three_regions() {
        let t = |f: &str, to: &str| arrival("x", f, to, 1);
        assert!(speed_window(&[t("a", "b")]).is_none());
        assert!(speed_window(&[t("a", "b"), t("b", "a")]).is_none());
        assert_eq!(speed_window(&[t("a", "b"), t("b", "c")]).unwrap().len(), 2);
        assert_eq!(speed_window(&[t("c", "a"), t("a", "b"), t("b", "a")]).unwrap().len(), 3);
        assert_eq!(speed_window(&[t("z", "c"), t("c", "d"), t("d", "e")]).unwrap().len(), 2);
    }

    #[test]
    fn suffix() {
        let a: Vec<CellId> = ["p", "q", "r", "s"].map(CellId::new).to_vec();
        let b: Vec<CellId> = ["x", "r", "s"].map(CellId::new).to_vec();
        assert_eq!(common_suffix(&[&a, &b]), ["r", "s"].map(CellId::new));
        assert_eq!(common_suffix(&[&a]), a);
    }

    fn reply(agent: &str, slots: std::ops::RangeInclusive<Slot>, cells: &[&str], transitions: Vec<Transition>) -> TraceReply {
        let path: Vec<CellId> = cells.iter().map(|c| CellId::new(*c)).collect();
        TraceReply {
            agent: agent.into(),
            positions: slots
                .map(|s| (s, CellId::new(cells[(s as usize).min(cells.len() - 1)])))
                .collect(),
            transitions,
            trip_path: path,
        }
    }

    fn run_task(speed_dwell: u64, transitions: usize) -> ClassificationReport {
        let topo = load_topology(
            "cell a 0 0 1\ncell b 1000 0 1\ncell c 2000 0 1\nadj a b\nadj b c\n",
        )
        .unwrap();
        let mut trs = vec![Transition { dwell: speed_dwell, ..arrival("w", "a", "b", 1) }];
        if transitions > 1 {
            trs.push(Transition { dwell: speed_dwell, ..arrival("w", "b", "c", 2) });
        }
        let to = if transitions > 1 { "c" } else { "b" };
        let from = if transitions > 1 { "b" } else { "a" };
        let slot = transitions as Slot;
        let mut task = CoordinationTask::new(0, to.into(), from.into(), slot, vec!["w".into()]);
        assert!(task.start());
        for (_, req) in task.trace_requests(8) {
            task.deliver_trace(reply(req.agent.as_str(), 0..=slot, &["a", "b", "c"], trs.clone()));
        }
        task.enrich(8);
        assert_eq!(task.validate_graph(), 0);
        let reqs = task.classify(&topo, 2);
        assert!(reqs.is_empty());
        let reports = task.finish(&topo, &[], |_| Prior::from_counts(0, 0));
        assert!(task.kill().is_some());
        assert_eq!(task.lifecycle(), Lifecycle::Dead);
        reports.into_iter().next().unwrap()
    }

    #[test]
    fn speed_rules() {
        use crate::behavior::ModeLabel;
        // 1000 m per 720 s = 5 km/h
        assert_eq!(run_task(720, 2).label, ModeLabel::Walking);
        // 1000 m per 60 s = 60 km/h
        assert_eq!(run_task(60, 2).label, ModeLabel::PrivateCar);
        assert_eq!(run_task(60, 1).label, ModeLabel::Unresolved);
    }
}
