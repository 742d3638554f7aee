//! `varsim run`: execute one experiment and write its metrics.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use varsim_core::metrics::{plateau_delay, reach_90, AccuracyRow, MetricsLog, Reach90};
use varsim_core::simulator::{Mode, Simulation};

use crate::config::{data_root, load_data, ExperimentConfig, LoadError};
use crate::CliError;

pub const ACCURACY_CSV: &str = "accuracy.csv";
pub const VARIANCE_CSV: &str = "variance.csv";
pub const WEIGHT_DIFF_CSV: &str = "weight_diff.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// Headline numbers of a run, as written to `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub seed: u64,
    pub config_digest: String,
    pub nodes: usize,
    pub max_ticks: u64,
    pub eval_interval: u64,
    pub t_first_average: Option<u64>,
    /// Tick of the steepest rise in mean accuracy after the first average.
    pub plateau_delay: Option<u64>,
    /// Set when every candidate derivative was equal (a flat curve).
    pub plateau_degenerate: bool,
    pub first_90: Option<u64>,
    pub most_90: Option<u64>,
    pub averaging_events: u64,
}

impl Summary {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(SUMMARY_JSON);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("malformed {}: {e}", path.display())))
    }
}

/// Accuracy rows for the CSV. In federated runs the server appears as node 0.
pub fn accuracy_rows(log: &MetricsLog) -> Vec<AccuracyRow> {
    let mut rows = log.accuracy.clone();
    rows.extend(log.server_accuracy.iter().map(|&(tick, accuracy)| AccuracyRow {
        tick,
        node: 0,
        accuracy,
    }));
    rows.sort_by_key(|r| (r.tick, r.node));
    rows
}

/// Derives the summary. Federated runs are judged by the server's accuracy;
/// gossip runs by the mean over all nodes.
pub fn summarize(cfg: &ExperimentConfig, log: &MetricsLog, nodes: usize) -> Summary {
    let window = cfg.sim.smoothing_window;
    let (series, reach): (Vec<(u64, f64)>, Reach90) = match cfg.mode {
        Mode::Gossip => (log.mean_accuracy(), log.reach_90()),
        Mode::Federated => {
            let records: Vec<(u64, [f64; 1])> =
                log.server_accuracy.iter().map(|&(t, a)| (t, [a])).collect();
            (log.server_accuracy.clone(), reach_90(&records))
        }
    };
    let plateau = log
        .t_first_average
        .and_then(|anchor| plateau_delay(&series, anchor, window).ok());
    Summary {
        mode: cfg.mode,
        seed: cfg.sim.seed,
        config_digest: digest(cfg, log),
        nodes,
        max_ticks: cfg.sim.max_ticks,
        eval_interval: cfg.sim.eval_interval,
        t_first_average: log.t_first_average,
        plateau_delay: plateau.as_ref().map(|p| p.t_plateau_delay),
        plateau_degenerate: plateau.as_ref().is_some_and(|p| p.degenerate),
        first_90: reach.first,
        most_90: reach.most,
        averaging_events: log.averaging_events,
    }
}

/// Hash of everything that determines the results: the experiment file
/// minus thread count and output location, plus the simulator's own digest
/// (which covers the generated graph).
fn digest(cfg: &ExperimentConfig, log: &MetricsLog) -> String {
    let mut canonical = cfg.clone();
    canonical.sim.threads = None;
    canonical.output = Default::default();
    let mut h = Sha256::new();
    h.update(canonical.to_toml().as_bytes());
    h.update(log.config_digest.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), CliError> {
    let runtime = |e: csv::Error| CliError::Runtime(format!("writing {}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(runtime)?;
    w.write_record(header).map_err(runtime)?;
    for row in rows {
        w.serialize(row).map_err(runtime)?;
    }
    w.flush()
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

pub fn write_outputs(dir: &Path, log: &MetricsLog, summary: &Summary) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))?;
    write_csv(&dir.join(ACCURACY_CSV), &["tick", "node", "accuracy"], &accuracy_rows(log))?;
    write_csv(
        &dir.join(VARIANCE_CSV),
        &["tick", "node", "layer", "variance"],
        &log.variance,
    )?;
    write_csv(&dir.join(WEIGHT_DIFF_CSV), &["tick", "layer", "diff"], &log.weight_diff)?;
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(dir.join(SUMMARY_JSON), json + "\n")
        .map_err(|e| CliError::Runtime(format!("writing summary: {e}")))
}

/// Runs the experiment in `config_path`; returns the output directory.
/// `out_override` replaces `output.directory`.
pub fn run(config_path: &Path, out_override: Option<&Path>) -> Result<PathBuf, CliError> {
    let cfg = ExperimentConfig::load(config_path).map_err(|e| CliError::Invalid(e.to_string()))?;
    let data = load_data(&cfg.data, &data_root(config_path)).map_err(|e| match e {
        LoadError::Config(e) => CliError::Invalid(e.to_string()),
        LoadError::Data(e) => CliError::Invalid(e.to_string()),
    })?;
    let sim_cfg = cfg.sim_config().map_err(|e| CliError::Invalid(e.to_string()))?;
    let graph = cfg.graph().map_err(|e| CliError::Invalid(e.to_string()))?;
    let nodes = graph.len();
    log::info!(
        "running {} nodes for {} ticks ({} training samples)",
        nodes,
        cfg.sim.max_ticks,
        data.train.len()
    );
    let sim = Simulation::new(sim_cfg, graph, &data.train, &data.test)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let log = sim.run().map_err(|e| CliError::Runtime(e.to_string()))?;

    let dir = out_override.map_or_else(|| cfg.output.directory.clone(), Path::to_path_buf);
    let summary = summarize(&cfg, &log, nodes);
    write_outputs(&dir, &log, &summary)?;
    log::info!("wrote {}", dir.display());
    Ok(dir)
}
