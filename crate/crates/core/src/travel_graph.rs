//! Leveled multi-edge travel graph.
//!
//! Nodes are `(bts, slot)` pairs; a node at slot `t` is "at level `t`". An
//! edge always points forward in time, from level `t - 1` to level `t`, and is
//! labeled with the agent that moved. Several agents moving between the same
//! two nodes produce parallel edges that differ only by label.
//!
//! A graph starts from one anchor node (the cell and slot a coordination task
//! was created for) and the agents that jumped into it, and is then enriched
//! backward, one level at a time, from the agents' own traces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::ids::{is_valid_token, AgentId, CellId, Slot};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("jumper list is empty")]
    EmptyJumperList,
    #[error("agent {0} jumps from the anchor cell into itself")]
    SelfJump(AgentId),
    #[error("agent {0} appears twice in one jumper list")]
    DuplicateJumper(AgentId),
    #[error("anchor slot 0 has no previous level")]
    AnchorAtLevelZero,
    #[error("co-travel grouping needs k >= 2, got {0}")]
    KTooSmall(usize),
    #[error("dump line {line}: {reason}")]
    MalformedDump { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TravelNode {
    pub slot: Slot,
    pub bts: CellId,
}

impl TravelNode {
    pub fn new(bts: impl Into<CellId>, slot: Slot) -> Self {
        Self { slot, bts: bts.into() }
    }

    fn dot_name(&self) -> String {
        format!("{}_{}", self.bts, self.slot)
    }
}

/// Ordered by (source level, source cell, target cell, label).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TravelEdge {
    pub from: TravelNode,
    pub to: TravelNode,
    pub label: AgentId,
}

/// Answers "where was this agent at that level" for enrichment.
pub trait TraceSource {
    fn cell_at(&self, agent: &AgentId, level: Slot) -> Option<CellId>;

    /// Agents known to share `cell` at `level`.
    fn co_located(&self, _cell: &CellId, _level: Slot) -> Vec<AgentId> {
        Vec::new()
    }
}

/// A plain in-memory trace table.
#[derive(Debug, Clone, Default)]
pub struct TraceTable {
    cells: BTreeMap<(AgentId, Slot), CellId>,
    by_cell: BTreeMap<(CellId, Slot), BTreeSet<AgentId>>,
}

impl TraceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, agent: impl Into<AgentId>, level: Slot, cell: impl Into<CellId>) {
        let (agent, cell) = (agent.into(), cell.into());
        if let Some(old) = self.cells.insert((agent.clone(), level), cell.clone()) {
            if let Some(set) = self.by_cell.get_mut(&(old, level)) {
                set.remove(&agent);
            }
        }
        self.by_cell.entry((cell, level)).or_default().insert(agent);
    }

    /// Records a contiguous path starting at `first_level`.
    pub fn insert_path(&mut self, agent: &AgentId, first_level: Slot, cells: &[CellId]) {
        for (i, c) in cells.iter().enumerate() {
            self.insert(agent.clone(), first_level + i as Slot, c.clone());
        }
    }
}

impl TraceSource for TraceTable {
    fn cell_at(&self, agent: &AgentId, level: Slot) -> Option<CellId> {
        self.cells.get(&(agent.clone(), level)).cloned()
    }

    fn co_located(&self, cell: &CellId, level: Slot) -> Vec<AgentId> {
        self.by_cell
            .get(&(cell.clone(), level))
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }
}

/// Trace source that knows nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoTraces;

impl TraceSource for NoTraces {
    fn cell_at(&self, _agent: &AgentId, _level: Slot) -> Option<CellId> {
        None
    }
}

/// Completeness of one enrichment pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnrichmentReport {
    pub queried: usize,
    pub unknown: usize,
    pub nodes_added: usize,
    pub edges_added: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TravelGraph {
    anchor: TravelNode,
    nodes: BTreeSet<TravelNode>,
    edges: BTreeSet<TravelEdge>,
    /// Agents associated with a node through co-location rather than an
    /// outgoing edge.
    co_located: BTreeMap<TravelNode, BTreeSet<AgentId>>,
}

impl TravelGraph {
    /// Graph holding only the anchor node.
    pub fn with_anchor(anchor: TravelNode) -> Self {
        let mut nodes = BTreeSet::new();
        nodes.insert(anchor.clone());
        Self {
            anchor,
            nodes,
            edges: BTreeSet::new(),
            co_located: BTreeMap::new(),
        }
    }

    /// The anchor node plus one labeled edge per jumper from its source cell
    /// at the previous level.
    pub fn build_initial(
        anchor_bts: &CellId,
        slot: Slot,
        jumpers: &[(AgentId, CellId)],
    ) -> Result<Self, GraphError> {
        if jumpers.is_empty() {
            return Err(GraphError::EmptyJumperList);
        }
        if slot == 0 {
            return Err(GraphError::AnchorAtLevelZero);
        }
        let anchor = TravelNode::new(anchor_bts.clone(), slot);
        let mut g = Self::with_anchor(anchor.clone());
        let mut seen = BTreeSet::new();
        for (agent, from) in jumpers {
            if from == anchor_bts {
                return Err(GraphError::SelfJump(agent.clone()));
            }
            if !seen.insert(agent) {
                return Err(GraphError::DuplicateJumper(agent.clone()));
            }
            g.insert_edge(TravelEdge {
                from: TravelNode::new(from.clone(), slot - 1),
                to: anchor.clone(),
                label: agent.clone(),
            });
        }
        Ok(g)
    }

    pub fn anchor(&self) -> &TravelNode {
        &self.anchor
    }

    pub fn max_level(&self) -> Slot {
        self.anchor.slot
    }

    pub fn nodes(&self) -> &BTreeSet<TravelNode> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<TravelEdge> {
        &self.edges
    }

    pub fn insert_node(&mut self, node: TravelNode) -> bool {
        self.nodes.insert(node)
    }

    /// Inserts an edge and its endpoints without checking graph rules;
    /// [`validate`] reports any violations.
    pub fn insert_edge(&mut self, edge: TravelEdge) -> bool {
        self.nodes.insert(edge.from.clone());
        self.nodes.insert(edge.to.clone());
        self.edges.insert(edge)
    }

    /// Every agent label in the graph.
    pub fn labels(&self) -> BTreeSet<&AgentId> {
        self.edges.iter().map(|e| &e.label).collect()
    }

    pub fn nodes_at(&self, level: Slot) -> impl Iterator<Item = &TravelNode> {
        self.nodes
            .range(TravelNode::new("", level)..)
            .take_while(move |n| n.slot == level)
    }

    /// Agents associated with `node`: those leaving it on an edge plus those
    /// reported co-located there.
    pub fn associated(&self, node: &TravelNode) -> BTreeSet<AgentId> {
        let mut out: BTreeSet<AgentId> = self
            .edges
            .iter()
            .filter(|e| &e.from == node)
            .map(|e| e.label.clone())
            .collect();
        if let Some(extra) = self.co_located.get(node) {
            out.extend(extra.iter().cloned());
        }
        out
    }

    fn has_edge_into(&self, label: &AgentId, level: Slot) -> bool {
        self.edges.iter().any(|e| e.to.slot == level && &e.label == label)
    }

    /// Backward enrichment from the anchor down to `max(0, anchor - depth)`.
    ///
    /// For each node at level `l` (starting at `anchor - 1`), every associated
    /// agent is asked where it was at `l - 1` and a labeled edge is added from
    /// there. Agents reported co-located at a node become associated with it.
    /// Only ever adds; a second identical call is a no-op.
    pub fn enrich_backward<S: TraceSource + ?Sized>(&mut self, source: &S, depth: Slot) -> EnrichmentReport {
        let mut report = EnrichmentReport::default();
        let top = self.anchor.slot;
        let lowest = top.saturating_sub(depth);
        let mut level = top;
        while level > lowest + 1 {
            level -= 1;
            let nodes: Vec<TravelNode> = self.nodes_at(level).cloned().collect();
            for node in nodes {
                let leaving = self.associated(&node);
                for agent in source.co_located(&node.bts, level) {
                    // Skip agents already here, and agents that leave this
                    // level from another node (conflicting report).
                    if leaving.contains(&agent) || self.has_edge_into(&agent, level + 1) {
                        continue;
                    }
                    self.co_located.entry(node.clone()).or_default().insert(agent);
                }
                for agent in self.associated(&node) {
                    if self.has_edge_into(&agent, level) {
                        continue;
                    }
                    report.queried += 1;
                    match source.cell_at(&agent, level - 1) {
                        Some(cell) => {
                            let from = TravelNode::new(cell, level - 1);
                            if self.nodes.insert(from.clone()) {
                                report.nodes_added += 1;
                            }
                            if self.edges.insert(TravelEdge {
                                from,
                                to: node.clone(),
                                label: agent,
                            }) {
                                report.edges_added += 1;
                            }
                        }
                        None => report.unknown += 1,
                    }
                }
            }
        }
        report
    }

    /// Per-agent level -> cell positions implied by the edges.
    pub fn agent_positions(&self) -> BTreeMap<&AgentId, BTreeMap<Slot, &CellId>> {
        let mut pos: BTreeMap<&AgentId, BTreeMap<Slot, &CellId>> = BTreeMap::new();
        for e in &self.edges {
            let p = pos.entry(&e.label).or_default();
            p.insert(e.to.slot, &e.to.bts);
            p.entry(e.from.slot).or_insert(&e.from.bts);
        }
        pos
    }

    /// Partition of the graph's agents: agents share a group iff their cells
    /// over the top `k` levels are all known and identical.
    pub fn co_travel_groups(&self, k: usize) -> Result<Vec<Vec<AgentId>>, GraphError> {
        if k < 2 {
            return Err(GraphError::KTooSmall(k));
        }
        let top = self.max_level();
        let levels: Option<Vec<Slot>> = (0..k as Slot).map(|i| top.checked_sub(i)).collect();
        let mut groups: BTreeMap<Vec<&CellId>, Vec<AgentId>> = BTreeMap::new();
        let mut singles: Vec<Vec<AgentId>> = Vec::new();
        for (agent, pos) in self.agent_positions() {
            let path: Option<Vec<&CellId>> = levels
                .as_ref()
                .and_then(|lv| lv.iter().map(|l| pos.get(l).copied()).collect());
            match path {
                Some(p) => groups.entry(p).or_default().push(agent.clone()),
                None => singles.push(vec![agent.clone()]),
            }
        }
        let mut out: Vec<Vec<AgentId>> = groups.into_values().chain(singles).collect();
        for g in &mut out {
            g.sort();
        }
        out.sort();
        Ok(out)
    }

    /// Graphviz rendering, deterministic by (level, cell, label).
    pub fn export_dot(&self) -> String {
        let q = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"");
        let mut out = String::from("digraph travel {\n");
        for n in &self.nodes {
            if n == &self.anchor {
                let _ = writeln!(out, "    \"{}\" [shape=doublecircle];", q(&n.dot_name()));
            } else {
                let _ = writeln!(out, "    \"{}\";", q(&n.dot_name()));
            }
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "    \"{}\" -> \"{}\" [label=\"{}\"];",
                q(&e.from.dot_name()),
                q(&e.to.dot_name()),
                q(e.label.as_str())
            );
        }
        out.push_str("}\n");
        out
    }

    /// `anchor <bts> <slot>` then one `edge <from_bts> <from_slot> <to_bts> <to_slot> <label>` per edge.
    pub fn dump(&self) -> String {
        let mut out = format!("anchor {} {}\n", self.anchor.bts, self.anchor.slot);
        for e in &self.edges {
            let _ = writeln!(
                out,
                "edge {} {} {} {} {}",
                e.from.bts, e.from.slot, e.to.bts, e.to.slot, e.label
            );
        }
        out
    }

    pub fn parse_dump(text: &str) -> Result<Self, GraphError> {
        let mut graph: Option<TravelGraph> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| GraphError::MalformedDump {
                line: idx + 1,
                reason: reason.to_owned(),
            };
            let parts: Vec<&str> = line.split_whitespace().collect();
            let slot = |s: &str| s.parse::<Slot>().map_err(|_| bad("bad slot"));
            match (parts[0], parts.len()) {
                ("anchor", 3) if graph.is_none() => {
                    graph = Some(TravelGraph::with_anchor(TravelNode::new(parts[1], slot(parts[2])?)));
                }
                ("edge", 6) => {
                    let g = graph.as_mut().ok_or_else(|| bad("edge before anchor"))?;
                    if !parts.iter().all(|p| is_valid_token(p)) {
                        return Err(bad("invalid token"));
                    }
                    g.insert_edge(TravelEdge {
                        from: TravelNode::new(parts[1], slot(parts[2])?),
                        to: TravelNode::new(parts[3], slot(parts[4])?),
                        label: AgentId::new(parts[5]),
                    });
                }
                _ => return Err(bad("expected `anchor <bts> <slot>` or `edge ...`")),
            }
        }
        graph.ok_or(GraphError::MalformedDump {
            line: 0,
            reason: "missing anchor".into(),
        })
    }
}

/// A broken graph rule.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    /// Edge does not go from level t-1 to level t.
    LevelRule { edge: TravelEdge },
    /// An edge endpoint is missing from the node set.
    DanglingEndpoint { edge: TravelEdge },
    /// One agent has more than one edge into the same level.
    LabelUniqueness { label: AgentId, level: Slot },
    /// The agent arrives at one cell but leaves the next level from another.
    /// This is the reading taken of the arrive/depart consistency rule.
    InterpretedCellConsistency {
        label: AgentId,
        level: Slot,
        arrived: CellId,
        departed: CellId,
    },
    /// An edge puts the agent somewhere its trace disagrees with.
    InterpretedTraceConsistency {
        label: AgentId,
        level: Slot,
        edge_cell: CellId,
        trace_cell: CellId,
    },
}

/// Checks the structural rules of a travel graph.
pub fn validate(g: &TravelGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut into: BTreeMap<(&AgentId, Slot), Vec<&TravelEdge>> = BTreeMap::new();
    let mut out_of: BTreeMap<(&AgentId, Slot), Vec<&TravelEdge>> = BTreeMap::new();
    for e in g.edges() {
        if e.to.slot != e.from.slot + 1 {
            out.push(Violation::LevelRule { edge: e.clone() });
        }
        if !g.nodes().contains(&e.from) || !g.nodes().contains(&e.to) {
            out.push(Violation::DanglingEndpoint { edge: e.clone() });
        }
        into.entry((&e.label, e.to.slot)).or_default().push(e);
        out_of.entry((&e.label, e.from.slot)).or_default().push(e);
    }
    for ((label, level), edges) in &into {
        if edges.len() > 1 {
            out.push(Violation::LabelUniqueness {
                label: (*label).clone(),
                level: *level,
            });
        }
    }
    for ((label, level), arriving) in &into {
        if let Some(leaving) = out_of.get(&(*label, *level)) {
            for a in arriving {
                for l in leaving {
                    if a.to.bts != l.from.bts {
                        out.push(Violation::InterpretedCellConsistency {
                            label: (*label).clone(),
                            level: *level,
                            arrived: a.to.bts.clone(),
                            departed: l.from.bts.clone(),
                        });
                    }
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// [`validate`] plus a check of every edge's destination against the trace.
pub fn validate_against<S: TraceSource + ?Sized>(g: &TravelGraph, source: &S) -> Vec<Violation> {
    let mut out = validate(g);
    for e in g.edges() {
        if let Some(trace_cell) = source.cell_at(&e.label, e.to.slot) {
            if trace_cell != e.to.bts {
                out.push(Violation::InterpretedTraceConsistency {
                    label: e.label.clone(),
                    level: e.to.slot,
                    edge_cell: e.to.bts.clone(),
                    trace_cell,
                });
            }
        }
    }
    out.sort();
    out.dedup();
    out
}
