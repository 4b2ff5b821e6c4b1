//! Command-line front end: `simulate`, `classify`, `score` and `mine`.
//!
//! Results go to standard output, diagnostics to standard error. Exit codes:
//! 0 success, 1 any error, 2 an unsorted observation log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::Weekday;
use clap::{Args, Parser, Subcommand};

use crate::behavior::{detect_home_work, mine_companions, mine_periodic_routes, HistoryStore, HomeWorkConfig, ModeLabel};
use crate::cdr::{parse_cdr, parse_observation_log, records_to_observations, FieldMapping, IngestError};
use crate::config::RunConfig;
use crate::engine::{final_labels, parse_reports, Engine, EngineError};
use crate::ids::AgentId;
use crate::sim::{parse_scenario, parse_truth, simulate, write_truth, GroundTruth};
use crate::topology::load_topology;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNSORTED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "btsmob", version, about = "Transport-mode classification from BTS location events")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an observation log and ground truth from a scenario.
    Simulate(SimulateArgs),
    /// Run the agent pipeline over an observation log and print reports.
    Classify(ClassifyArgs),
    /// Compare a report stream with ground truth.
    Score(ScoreArgs),
    /// Mine home/work cells, periodic routes and companions from a history file.
    Mine(MineArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub topology: PathBuf,
    /// Observation log output.
    #[arg(long)]
    pub log: PathBuf,
    /// Ground truth output.
    #[arg(long)]
    pub truth: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the scenario's jitter fraction.
    #[arg(long)]
    pub jitter: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long, default_value_t = RunConfig::default().slot_len)]
    pub slot_len: u64,
    #[arg(long, default_value_t = RunConfig::default().walk_max)]
    pub walk_max: f64,
    #[arg(long, default_value_t = RunConfig::default().medium_max)]
    pub medium_max: f64,
    #[arg(long, default_value_t = RunConfig::default().theta)]
    pub theta: f64,
    #[arg(long, default_value_t = RunConfig::default().group_min)]
    pub group_min: usize,
    #[arg(long, default_value_t = RunConfig::default().shared_levels)]
    pub shared_levels: usize,
    #[arg(long, default_value_t = RunConfig::default().depth)]
    pub depth: u64,
    #[arg(long, default_value_t = RunConfig::default().gap_slots)]
    pub gap_slots: u64,
    #[arg(long, default_value_t = RunConfig::default().seed)]
    pub seed: u64,
    /// Run coordination tasks of an epoch on a thread pool.
    #[arg(long)]
    pub parallel: bool,
}

impl ConfigArgs {
    pub fn to_config(&self) -> RunConfig {
        RunConfig {
            slot_len: self.slot_len,
            walk_max: self.walk_max,
            medium_max: self.medium_max,
            theta: self.theta,
            group_min: self.group_min,
            shared_levels: self.shared_levels,
            depth: self.depth,
            gap_slots: self.gap_slots,
            seed: self.seed,
            parallel: self.parallel,
        }
    }
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Observation log, or a CDR file with `--cdr`.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub topology: PathBuf,
    /// Read `--log` as a CDR file.
    #[arg(long, requires = "cell_column")]
    pub cdr: bool,
    /// CDR column naming the serving cell.
    #[arg(long)]
    pub cell_column: Option<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// History file, loaded before the run and rewritten after it.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Directory receiving one DOT file per coordination task.
    #[arg(long)]
    pub dump_graphs: Option<PathBuf>,
    /// Print one final label per entity instead of the report stream.
    #[arg(long)]
    pub final_labels: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub reports: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long)]
    pub history: PathBuf,
    /// Restrict per-entity output to one entity.
    #[arg(long)]
    pub entity: Option<String>,
    /// Weekday of day 0 of the timestamp epoch.
    #[arg(long, default_value = "Mon")]
    pub epoch_weekday: Weekday,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let topo = load_topology(&read(&args.topology)?).context("loading topology")?;
    let mut spec = parse_scenario(&read(&args.scenario)?, &topo).context("loading scenario")?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(j) = args.jitter {
        spec.jitter = j;
    }
    let out = simulate(&topo, &spec)?;
    write(&args.log, &crate::cdr::write_observation_log(&out.observations))?;
    write(&args.truth, &write_truth(&out.truth))?;
    Ok(format!(
        "simulated {} entities, {} observations\n",
        out.truth.len(),
        out.observations.len()
    ))
}

pub fn cmd_classify(args: &ClassifyArgs) -> Result<String> {
    let cfg = args.config.to_config();
    cfg.validate()?;
    let topo = load_topology(&read(&args.topology)?).context("loading topology")?;
    let text = read(&args.log)?;
    let observations = if args.cdr {
        let file = parse_cdr(&text).context("parsing CDR file")?;
        let mapping = FieldMapping::default().with_cell_column(args.cell_column.clone().unwrap_or_default());
        let batch = records_to_observations(&file.records, &mapping)?;
        for w in &batch.warnings {
            eprintln!("warning: {w}");
        }
        batch.observations
    } else {
        parse_observation_log(&text)?
    };
    let history = match &args.history {
        Some(p) if p.exists() => HistoryStore::load_log(&read(p)?, cfg.slot_len).context("loading history")?,
        _ => HistoryStore::new(cfg.slot_len),
    };
    let out = Engine::new(&topo, &cfg, history)?
        .capture_graphs(args.dump_graphs.is_some())
        .run(&observations)?;
    if let Some(dir) = &args.dump_graphs {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for g in &out.graphs {
            write(&dir.join(format!("{}.dot", g.file_stem())), &g.graph.export_dot())?;
        }
    }
    if let Some(p) = &args.history {
        write(p, &out.history.write_log())?;
    }
    if args.final_labels {
        let mut s = String::new();
        for (e, l) in out.final_labels() {
            let _ = writeln!(s, "{e}\t{l}");
        }
        Ok(s)
    } else {
        Ok(out.report_text())
    }
}

/// Accuracy summary of final labels against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub entities: usize,
    pub correct: usize,
    pub unresolved: usize,
    /// Per label: (true positives, predicted, actual).
    pub per_label: BTreeMap<ModeLabel, (usize, usize, usize)>,
}

impl Score {
    pub fn accuracy(&self) -> f64 {
        if self.entities == 0 {
            0.0
        } else {
            self.correct as f64 / self.entities as f64
        }
    }

    pub fn unresolved_rate(&self) -> f64 {
        if self.entities == 0 {
            0.0
        } else {
            self.unresolved as f64 / self.entities as f64
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let ratio = |a: usize, b: usize| if b == 0 { "-".to_owned() } else { format!("{:.4}", a as f64 / b as f64) };
        let _ = writeln!(s, "label\tprecision\trecall\tsupport");
        for (l, (tp, pred, actual)) in &self.per_label {
            let _ = writeln!(s, "{l}\t{}\t{}\t{actual}", ratio(*tp, *pred), ratio(*tp, *actual));
        }
        let _ = writeln!(s, "accuracy\t{:.4}\t{}/{}", self.accuracy(), self.correct, self.entities);
        let _ = writeln!(s, "unresolved_rate\t{:.4}\t{}/{}", self.unresolved_rate(), self.unresolved, self.entities);
        s
    }
}

/// Scores final labels; the entity sets must match exactly.
pub fn score(predicted: &BTreeMap<AgentId, ModeLabel>, truth: &GroundTruth) -> Result<Score> {
    let p: BTreeSet<&AgentId> = predicted.keys().collect();
    let t: BTreeSet<&AgentId> = truth.keys().collect();
    if p != t {
        let missing: Vec<String> = t.difference(&p).map(ToString::to_string).collect();
        let extra: Vec<String> = p.difference(&t).map(ToString::to_string).collect();
        bail!(
            "entity mismatch: missing from reports [{}], absent from truth [{}]",
            missing.join(","),
            extra.join(",")
        );
    }
    let mut s = Score {
        entities: truth.len(),
        correct: 0,
        unresolved: 0,
        per_label: BTreeMap::new(),
    };
    for (id, entry) in truth {
        let got = predicted[id];
        s.per_label.entry(entry.label).or_default().2 += 1;
        if got == ModeLabel::Unresolved {
            s.unresolved += 1;
            continue;
        }
        s.per_label.entry(got).or_default().1 += 1;
        if got == entry.label {
            s.correct += 1;
            s.per_label.entry(got).or_default().0 += 1;
        }
    }
    Ok(s)
}

pub fn cmd_score(args: &ScoreArgs) -> Result<String> {
    let reports = parse_reports(&read(&args.reports)?).map_err(anyhow::Error::msg)?;
    let truth = parse_truth(&read(&args.truth)?)?;
    Ok(score(&final_labels(&reports), &truth)?.render())
}

pub fn cmd_mine(args: &MineArgs) -> Result<String> {
    let store = HistoryStore::load_log(&read(&args.history)?, RunConfig::default().slot_len)?;
    let cfg = HomeWorkConfig {
        epoch_weekday: args.epoch_weekday,
        ..HomeWorkConfig::default()
    };
    let entities: Vec<AgentId> = match &args.entity {
        Some(e) => vec![AgentId::new(e.as_str())],
        None => store.entities().cloned().collect(),
    };
    let mut s = String::new();
    let dash = |c: Option<&crate::ids::CellId>| c.map_or_else(|| "-".to_owned(), ToString::to_string);
    for e in &entities {
        let hw = detect_home_work(&store, e, &cfg);
        let _ = writeln!(s, "home_work\t{e}\t{}\t{}", dash(hw.home.as_ref()), dash(hw.work.as_ref()));
        for r in mine_periodic_routes(&store, e, args.epoch_weekday) {
            let path: Vec<&str> = r.path.iter().map(|c| c.as_str()).collect();
            let days: Vec<String> = r.weekday_set().iter().map(ToString::to_string).collect();
            let _ = writeln!(
                s,
                "periodic\t{e}\t{}\t{}-{}\t{}\t{}",
                path.join(","),
                r.window.0,
                r.window.1,
                days.join(","),
                r.days
            );
        }
    }
    for c in mine_companions(&store) {
        if args.entity.as_deref().is_none_or(|e| e == c.first.as_str() || e == c.second.as_str()) {
            let _ = writeln!(s, "companions\t{}\t{}\t{}", c.first, c.second, c.shared_trips);
        }
    }
    Ok(s)
}

/// Maps an error to its exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let unsorted = err.chain().any(|e| {
        matches!(e.downcast_ref::<IngestError>(), Some(IngestError::UnsortedInput { .. }))
            || matches!(
                e.downcast_ref::<EngineError>(),
                Some(EngineError::Ingest(IngestError::UnsortedInput { .. }))
            )
    });
    if unsorted {
        EXIT_UNSORTED
    } else {
        EXIT_ERROR
    }
}

/// Runs one command, writing results to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = if code == EXIT_OK { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a).map(|msg| {
            let _ = err.write_all(msg.as_bytes());
            String::new()
        }),
        Command::Classify(a) => cmd_classify(a),
        Command::Score(a) => cmd_score(a),
        Command::Mine(a) => cmd_mine(a),
    };
    match result {
        Ok(text) => match out.write_all(text.as_bytes()) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                EXIT_ERROR
            }
        },
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            exit_code(&e)
        }
    }
}
