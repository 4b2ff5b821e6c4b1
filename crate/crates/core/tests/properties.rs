mod common;

use std::collections::BTreeMap;

use bts_mobility::behavior::{detect_home_work, HistoryStore, HomeWorkConfig};
use bts_mobility::cdr::{
    parse_cdr, parse_observation_log, sort_observations, write_cdr, write_observation_log, LocationObservation,
    Transition,
};
use bts_mobility::config::RunConfig;
use bts_mobility::engine::{parse_reports, run_engine, write_reports};
use bts_mobility::ids::{AgentId, CellId, Slot};
use bts_mobility::sim::simulate;
use bts_mobility::travel_graph::{validate, validate_against, TravelGraph};
use common::*;
use proptest::prelude::*;

fn line_cells() -> Vec<CellId> {
    (0..9).map(|i| CellId::new(format!("c{i}"))).collect()
}

/// Walk over the column topology's cells, steps between adjacent cells.
fn column_walk() -> impl Strategy<Value = Vec<CellId>> {
    (0usize..15, prop::collection::vec(any::<prop::sample::Index>(), 1..10)).prop_map(|(start, picks)| {
        let topo = column_topology();
        let cells: Vec<CellId> = topo.cells().map(|c| c.id.clone()).collect();
        let mut path = vec![cells[start].clone()];
        for pick in picks {
            let next: Vec<&CellId> = topo.neighbors(path.last().unwrap()).unwrap().iter().collect();
            path.push(pick.get(&next).to_owned().clone());
        }
        path
    })
}

/// Random traces for `n` agents over levels `0..=top`, each ending at the
/// anchor `X` and running back contiguously from `top`.
fn trace_instance() -> impl Strategy<Value = (Slot, Traces, Vec<(AgentId, CellId)>)> {
    (1u64..=6, 1usize..=10).prop_flat_map(|(top, n)| {
        let agent = (prop::collection::vec(0usize..3, top as usize), 0..top);
        prop::collection::vec(agent, n).prop_map(move |agents| {
            let cells = ["A", "B", "C"];
            let mut traces = Traces::default();
            let mut jumpers = Vec::new();
            for (i, (path, cut)) in agents.into_iter().enumerate() {
                let id = AgentId::new(format!("a{i}"));
                traces.0.insert((id.clone(), top), CellId::new("X"));
                for l in cut..top {
                    traces.0.insert((id.clone(), l), CellId::new(cells[path[l as usize]]));
                }
                jumpers.push((id.clone(), CellId::new(cells[path[top as usize - 1]])));
            }
            (top, traces, jumpers)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cdr_text_round_trips(
        fields in prop::collection::vec("[ -~]{0,12}", 30),
        duration in 0u32..100_000,
        (h, m, s) in (0u32..24, 0u32..60, 0u32..60),
    ) {
        let header = parse_cdr(CDR_SAMPLE).unwrap().header;
        let mut fields = fields;
        fields[4] = "28/01/2012".into();
        fields[5] = format!("{h:02}:{m:02}:{s:02}");
        fields[6] = duration.to_string();
        let mut text = String::new();
        text.push_str(&write_cdr(&header, &[]));
        let quoted: Vec<String> = fields.iter().map(|f| format!("\"{}\"", f.replace('"', "\"\""))).collect();
        text.push_str(&quoted.join(","));
        text.push('\n');
        let file = parse_cdr(&text).unwrap();
        prop_assert_eq!(file.records[0].fields(), fields.as_slice());
        prop_assert_eq!(file.records[0].duration, Some(duration));
        let again = write_cdr(&file.header, &file.records);
        prop_assert_eq!(&again, &text);
    }

    #[test]
    fn observation_log_round_trips(raw in prop::collection::vec((0u8..5, 0u8..4, any::<bool>(), 0u64..10_000), 0..40)) {
        let mut obs: Vec<LocationObservation> = raw
            .into_iter()
            .map(|(e, c, login, t)| {
                let (e, c) = (format!("e{e}"), format!("c{c}"));
                if login { LocationObservation::login(e, c, t) } else { LocationObservation::logout(e, c, t) }
            })
            .collect();
        sort_observations(&mut obs);
        let text = write_observation_log(&obs);
        prop_assert_eq!(parse_observation_log(&text).unwrap(), obs);
    }

    #[test]
    fn coverage_ignores_direction(path in column_walk()) {
        let topo = column_topology();
        let fwd = topo.line_coverage(&path).unwrap();
        let rev: Vec<CellId> = path.iter().rev().cloned().collect();
        let back = topo.line_coverage(&rev).unwrap();
        prop_assert!((fwd.fraction - back.fraction).abs() < 1e-12);
        prop_assert_eq!(fwd.line, back.line);
        prop_assert!((0.0..=1.0).contains(&fwd.fraction));
    }

    #[test]
    fn coverage_is_full_on_line_stretches(a in 0usize..9, b in 0usize..9) {
        prop_assume!(a != b);
        let cells = line_cells();
        let path: Vec<CellId> = if a < b { cells[a..=b].to_vec() } else { cells[b..=a].iter().rev().cloned().collect() };
        let cov = column_topology().line_coverage(&path).unwrap();
        prop_assert_eq!(cov.fraction, 1.0);
    }

    #[test]
    fn speed_scales_inversely_with_dwell(dwells in prop::collection::vec(1u64..600, 2..6), factor in 2u64..5) {
        let topo = column_topology();
        let cells = line_cells();
        let window = |scale: u64| -> Vec<Transition> {
            dwells
                .iter()
                .enumerate()
                .map(|(i, d)| Transition {
                    entity: AgentId::new("x"),
                    from_bts: cells[i].clone(),
                    to_bts: cells[i + 1].clone(),
                    slot: i as Slot,
                    elapsed: 0,
                    dwell: d * scale,
                    arrived_at: 0,
                })
                .collect()
        };
        let base = topo.travel_speed(&window(1)).unwrap();
        let slow = topo.travel_speed(&window(factor)).unwrap();
        prop_assert!((base / factor as f64 - slow).abs() < 1e-9 * base.max(1.0));
    }

    #[test]
    fn enriched_graphs_are_valid((top, traces, jumpers) in trace_instance()) {
        let mut g = TravelGraph::build_initial(&CellId::new("X"), top, &jumpers).unwrap();
        prop_assert!(validate(&g).is_empty());
        g.enrich_backward(&traces, top);
        prop_assert!(validate_against(&g, &traces).is_empty());
        let mut again = g.clone();
        let report = again.enrich_backward(&traces, top);
        prop_assert_eq!(&again, &g);
        prop_assert_eq!((report.nodes_added, report.edges_added), (0, 0));
        prop_assert!(g.edges().iter().all(|e| e.to.slot == e.from.slot + 1));
    }

    #[test]
    fn co_travel_groups_follow_relabeling((top, traces, jumpers) in trace_instance(), k in 2usize..=6) {
        let rename = |a: &AgentId| AgentId::new(format!("z{}", 99 - a.as_str()[1..].parse::<u32>().unwrap()));
        let mut g = TravelGraph::build_initial(&CellId::new("X"), top, &jumpers).unwrap();
        g.enrich_backward(&traces, top);
        let renamed_jumpers: Vec<(AgentId, CellId)> = jumpers.iter().map(|(a, c)| (rename(a), c.clone())).collect();
        let renamed_traces = Traces(traces.0.iter().map(|((a, l), c)| ((rename(a), *l), c.clone())).collect());
        let mut h = TravelGraph::build_initial(&CellId::new("X"), top, &renamed_jumpers).unwrap();
        h.enrich_backward(&renamed_traces, top);
        let mut mapped: Vec<Vec<AgentId>> = g
            .co_travel_groups(k)
            .unwrap()
            .into_iter()
            .map(|grp| {
                let mut v: Vec<AgentId> = grp.iter().map(&rename).collect();
                v.sort();
                v
            })
            .collect();
        mapped.sort();
        prop_assert_eq!(h.co_travel_groups(k).unwrap(), mapped);
        let total: usize = g.co_travel_groups(k).unwrap().iter().map(Vec::len).sum();
        prop_assert_eq!(total, jumpers.len());
    }

    #[test]
    fn home_work_ignores_order(
        obs in prop::collection::vec((0u8..4, 0u64..14 * 86_400), 1..200),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let entity = AgentId::new("x");
        let detect = |obs: &[(u8, u64)]| {
            let mut store = HistoryStore::new(30);
            for (c, t) in obs {
                store.record_observation(&entity, &CellId::new(format!("c{c}")), *t);
            }
            detect_home_work(&store, &entity, &HomeWorkConfig::default())
        };
        let base = detect(&obs);
        let mut shuffled = obs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(detect(&shuffled), base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn engine_runs_are_reproducible(seed in any::<u64>(), parallel in any::<bool>()) {
        let topo = grid_topology(4, 300.0);
        let spec = random_scenario(&topo, seed, 12);
        let sim = simulate(&topo, &spec).unwrap();
        let last = sim.observations.last().map_or(0, |o| o.timestamp);
        let cfg = RunConfig { parallel, ..config_spanning(last, 12) };
        let serial = RunConfig { parallel: false, ..cfg.clone() };
        let a = run_engine(&sim.observations, &topo, &cfg, HistoryStore::new(cfg.slot_len)).unwrap();
        let b = run_engine(&sim.observations, &topo, &serial, HistoryStore::new(cfg.slot_len)).unwrap();
        prop_assert_eq!(a.report_text(), b.report_text());
        prop_assert_eq!(a.stats.ptm_overlaps, 0);
        prop_assert_eq!(a.stats.leaked_tasks, 0);
        let parsed = parse_reports(&a.report_text()).unwrap();
        prop_assert_eq!(write_reports(&parsed), a.report_text());
        // every entity seen gets a final label
        let seen: std::collections::BTreeSet<&AgentId> = sim.observations.iter().map(|o| &o.entity).collect();
        let labels = a.final_labels();
        prop_assert!(seen.iter().all(|e| labels.contains_key(*e)));
    }

    #[test]
    fn history_log_replays(seed in any::<u64>()) {
        let topo = grid_topology(4, 300.0);
        let spec = random_scenario(&topo, seed, 12);
        let sim = simulate(&topo, &spec).unwrap();
        let cfg = RunConfig::default();
        let out = run_engine(&sim.observations, &topo, &cfg, HistoryStore::new(cfg.slot_len)).unwrap();
        let text = out.history.write_log();
        let loaded = HistoryStore::load_log(&text, 1).unwrap();
        prop_assert_eq!(loaded.write_log(), text.clone());
        prop_assert_eq!(loaded.slot_len(), cfg.slot_len);
        let priors: BTreeMap<&AgentId, _> = out.history.entities().map(|e| (e, out.history.prior(e))).collect();
        for (e, p) in priors {
            prop_assert_eq!(loaded.prior(e), p);
        }
        // a second run seeded with the history keeps it as a prefix
        let second = run_engine(&sim.observations, &topo, &cfg, loaded).unwrap();
        prop_assert!(second.history.all_trips().count() >= 2 * out.history.all_trips().count());
    }
}
