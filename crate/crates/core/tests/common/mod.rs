#![allow(dead_code)]

use std::collections::BTreeMap;

use bts_mobility::config::RunConfig;
use bts_mobility::ids::{AgentId, CellId, LineId, Slot};
use bts_mobility::sim::{EntitySpec, Mode, ScenarioSpec};
use bts_mobility::topology::{load_topology, BtsCell, Topology, TransitLine};
use bts_mobility::travel_graph::TraceSource;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FIGURE4_TOPO: &str = include_str!("../../fixtures/figure4.topo");
pub const FIGURE4_SCENARIO: &str = include_str!("../../fixtures/figure4.scenario");
pub const COLUMN_TOPO: &str = include_str!("../../fixtures/column.topo");
pub const COLUMN_SCENARIO: &str = include_str!("../../fixtures/column.scenario");
pub const CDR_SAMPLE: &str = include_str!("../../fixtures/cdr_sample.txt");

pub fn figure4_topology() -> Topology {
    load_topology(FIGURE4_TOPO).expect("figure4 fixture")
}

pub fn column_topology() -> Topology {
    load_topology(COLUMN_TOPO).expect("column fixture")
}

/// `n` x `n` grid, `spacing` metres apart; line R along row 1, line C down
/// column 2.
pub fn grid_topology(n: usize, spacing: f64) -> Topology {
    let id = |r: usize, c: usize| CellId::new(format!("r{r}c{c}"));
    let mut cells = Vec::new();
    let mut adj = Vec::new();
    for r in 0..n {
        for c in 0..n {
            cells.push(BtsCell {
                id: id(r, c),
                x: c as f64 * spacing,
                y: r as f64 * spacing,
                radius: spacing * 0.6,
            });
            if c + 1 < n {
                adj.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < n {
                adj.push((id(r, c), id(r + 1, c)));
            }
        }
    }
    let lines = vec![
        TransitLine {
            id: LineId::new("R"),
            cells: (0..n).map(|c| id(1, c)).collect(),
        },
        TransitLine {
            id: LineId::new("C"),
            cells: (0..n).map(|r| id(r, 2)).collect(),
        },
    ];
    Topology::new(cells, adj, lines).expect("grid topology")
}

/// Random walk without immediate backtracking, `len` cells long.
pub fn random_route(topo: &Topology, rng: &mut ChaCha8Rng, len: usize) -> Vec<CellId> {
    let cells: Vec<CellId> = topo.cells().map(|c| c.id.clone()).collect();
    let mut route = vec![cells.choose(rng).expect("cells").clone()];
    while route.len() < len {
        let last = route.last().expect("non-empty");
        let prev = route.len().checked_sub(2).map(|i| route[i].clone());
        let next: Vec<&CellId> = topo
            .neighbors(last)
            .expect("known cell")
            .iter()
            .filter(|c| Some(*c) != prev.as_ref())
            .collect();
        let Some(n) = next.choose(rng) else { break };
        route.push((*n).clone());
    }
    route
}

/// Up to `max_entities` entities of every mode on `topo`.
pub fn random_scenario(topo: &Topology, seed: u64, max_entities: usize) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lines: Vec<LineId> = topo.lines().map(|l| l.id.clone()).collect();
    let n = rng.random_range(1..=max_entities);
    let mut entities = Vec::with_capacity(n);
    for i in 0..n {
        let kind = rng.random_range(0..4);
        let start_time = rng.random_range(0..4u64) * 20;
        let len = rng.random_range(2..=6);
        let (mode, speed_kmh, start_offset) = match kind {
            0 => (
                Mode::Walker {
                    route: random_route(topo, &mut rng, len.min(3)),
                },
                5.0,
                0,
            ),
            1 => {
                let line = lines.choose(&mut rng).expect("lines").clone();
                (Mode::BusPassenger { line }, 20.0, rng.random_range(0..2))
            }
            2 => (
                Mode::Car {
                    route: random_route(topo, &mut rng, len),
                },
                60.0,
                0,
            ),
            _ => {
                let cells: Vec<CellId> = topo.cells().map(|c| c.id.clone()).collect();
                (
                    Mode::Stationary {
                        cell: cells.choose(&mut rng).expect("cells").clone(),
                    },
                    0.0,
                    0,
                )
            }
        };
        entities.push(EntitySpec {
            id: AgentId::new(format!("e{i}")),
            mode,
            speed_kmh,
            start_time,
            start_offset,
        });
    }
    ScenarioSpec {
        entities,
        jitter: rng.random_range(0.0..0.3),
        seed,
    }
}

/// Config whose slot length keeps every timestamp up to `last` within
/// `max_slots` slots.
pub fn config_spanning(last: u64, max_slots: u64) -> RunConfig {
    RunConfig {
        slot_len: (last / (max_slots - 1) + 1).max(1),
        ..RunConfig::default()
    }
}

/// Plain per-agent trace map, without co-location.
#[derive(Debug, Default, Clone)]
pub struct Traces(pub BTreeMap<(AgentId, Slot), CellId>);

impl TraceSource for Traces {
    fn cell_at(&self, agent: &AgentId, level: Slot) -> Option<CellId> {
        self.0.get(&(agent.clone(), level)).cloned()
    }
}
