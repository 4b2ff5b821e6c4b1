//! The agent pipeline, run as slot-synchronous epochs.
//!
//! Per slot: due trips close, observations update the personal agents, each
//! BTS agent turns its arrivals into coordination tasks, the tasks fetch
//! traces and enrich their graphs, medium-speed groups are put to the
//! transit manager, and every jumper gets one classification report.
//! Messages of a phase are delivered in (recipient, sender, request id) order.

mod ca;
mod messages;
mod pa;
mod ptm;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use ca::{bts_epoch, speed_window, CoordinationTask, EpochError, Lifecycle, TraceCache};
pub use messages::{
    ActorId, ClassificationReport, EngineMessage, Envelope, LineMatchReply, LineMatchRequest, Mailbox,
    MatchBasis, MessageKind, RequestId, TraceReply, TraceRequest,
};
pub use pa::{PersonalAgent, TripEnd};
pub use ptm::{ptm_resolve, GroupStatus, PtmState, TrackedGroup, CONFIRM_STREAK};

use crate::behavior::{HistoryStore, ModeLabel, TripEvidence, TripRecord};
use crate::cdr::{check_sorted, IngestError, LocationObservation, ObservationKind, Transition};
use crate::config::{ConfigInvalid, RunConfig};
use crate::ids::{AgentId, CellId, Slot};
use crate::topology::{Topology, TopologyError};
use crate::travel_graph::TravelGraph;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigInvalid),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Epoch(#[from] EpochError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub epochs: u64,
    pub tasks_spawned: u64,
    pub max_live_tasks: u64,
    /// Live tasks left at the end of any epoch; always zero.
    pub leaked_tasks: u64,
    pub jumpers: u64,
    pub reports: u64,
    /// Raw transitions folded into another jump of the same slot.
    pub collapsed_transitions: u64,
    pub trips_closed: u64,
    pub trace_requests: u64,
    pub line_requests: u64,
    pub graph_violations: u64,
    /// Epochs after which transit groups shared a member; always zero.
    pub ptm_overlaps: u64,
}

/// A coordination task's graph, kept when graph capture is on.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedGraph {
    pub task_id: u64,
    pub from: CellId,
    pub anchor: CellId,
    pub slot: Slot,
    pub graph: TravelGraph,
    /// Trace replies the task enriched from.
    pub traces: TraceCache,
}

impl CapturedGraph {
    /// File-system safe name.
    pub fn file_stem(&self) -> String {
        let clean = |s: &str| -> String {
            s.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
                .collect()
        };
        format!(
            "ca{:06}_{}_{}_{}",
            self.task_id,
            self.slot,
            clean(self.from.as_str()),
            clean(self.anchor.as_str())
        )
    }
}

#[derive(Debug, Clone)]
pub struct EngineOutput {
    pub reports: Vec<ClassificationReport>,
    pub history: HistoryStore,
    pub stats: EngineStats,
    pub graphs: Vec<CapturedGraph>,
}

impl EngineOutput {
    pub fn report_text(&self) -> String {
        write_reports(&self.reports)
    }

    pub fn final_labels(&self) -> BTreeMap<AgentId, ModeLabel> {
        final_labels(&self.reports)
    }
}

pub fn write_reports(reports: &[ClassificationReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_reports(text: &str) -> Result<Vec<ClassificationReport>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| l.parse().map_err(|e| format!("report line {}: {e}", i + 1)))
        .collect()
}

/// Last resolved label per entity; entities never resolved are unresolved.
pub fn final_labels(reports: &[ClassificationReport]) -> BTreeMap<AgentId, ModeLabel> {
    let mut out = BTreeMap::new();
    for r in reports {
        let e = out.entry(r.entity.clone()).or_insert(ModeLabel::Unresolved);
        if r.label.is_resolved() {
            *e = r.label;
        }
    }
    out
}

pub struct Engine<'a> {
    topo: Topology,
    cfg: &'a RunConfig,
    pas: BTreeMap<AgentId, PersonalAgent>,
    ptm: PtmState,
    hdm: HistoryStore,
    stats: EngineStats,
    next_task: u64,
    capture: bool,
    graphs: Vec<CapturedGraph>,
    reports: Vec<ClassificationReport>,
}

impl<'a> Engine<'a> {
    pub fn new(topo: &Topology, cfg: &'a RunConfig, history: HistoryStore) -> Result<Self, EngineError> {
        cfg.validate()?;
        Ok(Self {
            topo: topo.clone().with_thresholds(cfg.thresholds()),
            cfg,
            pas: BTreeMap::new(),
            ptm: PtmState::new(cfg.theta, cfg.group_min),
            hdm: history,
            stats: EngineStats::default(),
            next_task: 0,
            capture: false,
            graphs: Vec::new(),
            reports: Vec::new(),
        })
    }

    /// Keep every task's graph instead of discarding it.
    pub fn capture_graphs(mut self, on: bool) -> Self {
        self.capture = on;
        self
    }

    pub fn run(mut self, observations: &[LocationObservation]) -> Result<EngineOutput, EngineError> {
        check_sorted(observations)?;
        let slot_len = self.cfg.slot_len;
        let mut i = 0;
        while i < observations.len() {
            let slot = observations[i].timestamp / slot_len;
            let mut j = i;
            while j < observations.len() && observations[j].timestamp / slot_len == slot {
                j += 1;
            }
            self.epoch(slot, &observations[i..j])?;
            i = j;
        }
        self.flush();
        Ok(EngineOutput {
            reports: self.reports,
            history: self.hdm,
            stats: self.stats,
            graphs: self.graphs,
        })
    }

    fn close_trip(&mut self, entity: &AgentId) {
        let Some(end) = self.pas.get_mut(entity).and_then(PersonalAgent::close_trip) else {
            return;
        };
        self.stats.trips_closed += 1;
        self.ptm.forget(entity);
        let mut mailbox = Mailbox::new();
        let record = match end {
            TripEnd::Static { cell, first_slot, last_slot } => {
                let report = ClassificationReport::bare(last_slot, entity.clone(), ModeLabel::Static);
                self.stats.reports += 1;
                self.reports.push(report);
                Some(TripRecord {
                    entity: entity.clone(),
                    slot_start: first_slot,
                    slot_end: last_slot,
                    path: vec![cell],
                    label: ModeLabel::Static,
                    evidence: TripEvidence::default(),
                })
            }
            TripEnd::Collapsed { last_slot } => {
                self.stats.reports += 1;
                self.reports
                    .push(ClassificationReport::bare(last_slot, entity.clone(), ModeLabel::Unresolved));
                None
            }
            TripEnd::Moved { record } => record,
        };
        mailbox.post(
            ActorId::Pa(entity.clone()),
            ActorId::Hdm,
            0,
            EngineMessage::TripClosed {
                entity: entity.clone(),
                record,
            },
        );
        for env in mailbox.drain_ordered() {
            if let EngineMessage::TripClosed { record: Some(r), .. } = env.message {
                // Only unresolved or empty trips are refused; neither reaches here.
                let _ = self.hdm.record_trip(r);
            }
        }
    }

    fn flush(&mut self) {
        let open: Vec<AgentId> = self
            .pas
            .iter()
            .filter(|(_, p)| p.has_open_trip())
            .map(|(a, _)| a.clone())
            .collect();
        for a in open {
            self.close_trip(&a);
        }
    }

    fn epoch(&mut self, slot: Slot, obs: &[LocationObservation]) -> Result<(), EngineError> {
        self.stats.epochs += 1;
        let gap = self.cfg.gap_slots;
        let due: Vec<AgentId> = self
            .pas
            .iter()
            .filter(|(_, p)| p.trip_due(slot, gap))
            .map(|(a, _)| a.clone())
            .collect();
        for a in due {
            self.close_trip(&a);
        }

        // Personal agents.
        let mut touched: BTreeMap<AgentId, ()> = BTreeMap::new();
        for o in obs {
            let pa = self
                .pas
                .entry(o.entity.clone())
                .or_insert_with(|| PersonalAgent::new(o.entity.clone()));
            if !touched.contains_key(&o.entity) {
                pa.begin_slot();
                touched.insert(o.entity.clone(), ());
            }
            pa.observe(o, slot);
            if o.kind == ObservationKind::Login {
                self.hdm.record_observation(&o.entity, &o.bts, o.timestamp);
            }
        }
        let mut arrivals: BTreeMap<CellId, Vec<Transition>> = BTreeMap::new();
        for a in touched.keys() {
            let (jump, collapsed) = self.pas.get_mut(a).expect("touched agent exists").end_slot(slot);
            self.stats.collapsed_transitions += collapsed as u64;
            if let Some(t) = jump {
                arrivals.entry(t.to_bts.clone()).or_default().push(t);
            }
        }

        // BTS agents spawn coordination tasks.
        let mut tasks = Vec::new();
        for (bts, list) in &arrivals {
            tasks.extend(bts_epoch(bts, list, &mut self.next_task)?);
        }
        if tasks.is_empty() {
            return Ok(());
        }
        self.stats.tasks_spawned += tasks.len() as u64;
        self.stats.max_live_tasks = self.stats.max_live_tasks.max(tasks.len() as u64);
        self.stats.jumpers += tasks.iter().map(|t| t.jumpers.len() as u64).sum::<u64>();

        // Execution order only; outputs are gathered by task id.
        let mut order: Vec<usize> = (0..tasks.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.cfg.seed ^ slot.rotate_left(17)));

        let depth = self.cfg.depth;
        let parallel = self.cfg.parallel;
        let for_each = |tasks: &mut Vec<CoordinationTask>, f: &(dyn Fn(&mut CoordinationTask) + Sync)| {
            if parallel {
                tasks.par_iter_mut().for_each(f);
            } else {
                for &i in &order {
                    f(&mut tasks[i]);
                }
            }
        };

        for t in tasks.iter_mut() {
            t.start();
        }
        // Trace rounds until no task has an unfetched agent.
        loop {
            let mut mailbox = Mailbox::new();
            for t in &mut tasks {
                for (rid, req) in t.trace_requests(depth) {
                    mailbox.post(
                        ActorId::Ca(t.id),
                        ActorId::Pa(req.agent.clone()),
                        rid,
                        EngineMessage::TraceRequest(req),
                    );
                }
            }
            if mailbox.is_empty() {
                break;
            }
            self.stats.trace_requests += mailbox.posted();
            let mut replies = Mailbox::new();
            for env in mailbox.drain_ordered() {
                let EngineMessage::TraceRequest(req) = env.message else {
                    continue;
                };
                let reply = match self.pas.get(&req.agent) {
                    Some(pa) => pa.answer(&req),
                    None => TraceReply {
                        agent: req.agent.clone(),
                        positions: Vec::new(),
                        transitions: Vec::new(),
                        trip_path: Vec::new(),
                    },
                };
                replies.post(env.recipient, env.sender, env.request, EngineMessage::TraceReply(reply));
            }
            let index: BTreeMap<u64, usize> = tasks.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
            for env in replies.drain_ordered() {
                if let (ActorId::Ca(id), EngineMessage::TraceReply(r)) = (env.recipient, env.message) {
                    tasks[index[&id]].deliver_trace(r);
                }
            }
            for_each(&mut tasks, &|t| t.enrich(depth));
        }
        for_each(&mut tasks, &|t| {
            t.validate_graph();
        });
        self.stats.graph_violations += tasks.iter().map(|t| t.violations as u64).sum::<u64>();

        // Classification and transit-manager round.
        let topo = &self.topo;
        let shared = self.cfg.shared_levels;
        let requests: Vec<Vec<LineMatchRequest>> = if parallel {
            tasks.par_iter_mut().map(|t| t.classify(topo, shared)).collect()
        } else {
            let mut out = vec![Vec::new(); tasks.len()];
            for &i in &order {
                out[i] = tasks[i].classify(topo, shared);
            }
            out
        };
        let mut mailbox = Mailbox::new();
        for (t, reqs) in tasks.iter().zip(&requests) {
            for (rid, r) in reqs.iter().enumerate() {
                mailbox.post(
                    ActorId::Ca(t.id),
                    ActorId::Ptm,
                    rid as u64,
                    EngineMessage::LineMatchRequest(r.clone()),
                );
            }
        }
        self.stats.line_requests += mailbox.posted();
        let batch: Vec<Envelope> = mailbox.drain_ordered();
        let reqs: Vec<LineMatchRequest> = batch
            .iter()
            .filter_map(|e| match &e.message {
                EngineMessage::LineMatchRequest(r) => Some(r.clone()),
                _ => None,
            })
            .collect();
        let answers = self.ptm.resolve(&reqs, &self.topo)?;
        if !self.ptm.is_disjoint() {
            self.stats.ptm_overlaps += 1;
        }
        let mut per_task: BTreeMap<u64, BTreeMap<RequestId, LineMatchReply>> = BTreeMap::new();
        for (env, ans) in batch.into_iter().zip(answers) {
            if let ActorId::Ca(id) = env.sender {
                per_task.entry(id).or_default().insert(env.request, ans);
            }
        }

        let hdm = &self.hdm;
        let mut epoch_reports = Vec::new();
        for t in &mut tasks {
            let replies: Vec<LineMatchReply> = per_task.remove(&t.id).unwrap_or_default().into_values().collect();
            let reports = t.finish(topo, &replies, |a| hdm.prior(a));
            let traces = if self.capture { t.traces().clone() } else { TraceCache::default() };
            if let Some(graph) = t.kill() {
                if self.capture {
                    self.graphs.push(CapturedGraph {
                        task_id: t.id,
                        from: t.from.clone(),
                        anchor: t.anchor.clone(),
                        slot: t.slot,
                        graph,
                        traces,
                    });
                }
            }
            epoch_reports.extend(reports);
        }
        let live = tasks.iter().filter(|t| t.lifecycle() != Lifecycle::Dead).count();
        self.stats.leaked_tasks += live as u64;

        epoch_reports.sort_by(|a, b| a.entity.cmp(&b.entity));
        for r in epoch_reports {
            if let Some(pa) = self.pas.get_mut(&r.entity) {
                let group = match (&r.group, r.label) {
                    (Some(g), ModeLabel::PublicTransport) => {
                        let confirmed = self
                            .ptm
                            .groups()
                            .get(g)
                            .is_some_and(|grp| grp.status == GroupStatus::ConfirmedPublic);
                        confirmed.then(|| g.clone())
                    }
                    _ => None,
                };
                pa.record_outcome(
                    r.label,
                    TripEvidence {
                        mean_speed_kmh: r.speed_kmh,
                        coverage: r.coverage,
                        group,
                    },
                );
            }
            self.stats.reports += 1;
            self.reports.push(r);
        }
        Ok(())
    }
}

/// Runs the whole pipeline over a sorted observation log.
pub fn run_engine(
    observations: &[LocationObservation],
    topo: &Topology,
    cfg: &RunConfig,
    history: HistoryStore,
) -> Result<EngineOutput, EngineError> {
    Engine::new(topo, cfg, history)?.run(observations)
}
