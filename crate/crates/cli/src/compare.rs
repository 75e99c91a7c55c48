//! Aggregation of finished run directories into per-method summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use icopro::trainer::{read_records, MetricStats, RunConfig, RunRecord, CONFIG_FILE, RECORDS_FILE};
use serde::Serialize;

use crate::config::parse_config;
use crate::{CliError, CliResult};

/// Metric columns of the summary table, in display order.
pub const METRICS: [&str; 6] = ["crash_rate", "distance_avg", "speed_avg", "lane_change_ratio", "lane_pos_avg", "steps_avg"];

/// Budget accounting of one run against its own config.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Budget {
    pub env_steps: usize,
    pub expected_env_steps: usize,
    pub labels_total: usize,
    pub label_cap: usize,
}

impl Budget {
    pub fn ok(&self) -> bool {
        self.env_steps == self.expected_env_steps && self.labels_total <= self.label_cap
    }
}

/// Final state of one run directory.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub method: String,
    pub seed: u64,
    pub last: RunRecord,
    pub budget: Budget,
}

impl RunSummary {
    pub fn metric(&self, name: &str) -> f64 {
        let e = &self.last.eval;
        match name {
            "crash_rate" => e.crash_rate.mean,
            "distance_avg" => e.distance.mean,
            "speed_avg" => e.speed.mean,
            "lane_change_ratio" => e.lane_change_ratio.mean,
            "lane_pos_avg" => e.lane_position.mean,
            "steps_avg" => e.steps.mean,
            other => panic!("unknown metric {other}"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    /// Mean and population std across runs of each final metric.
    pub metrics: BTreeMap<String, MetricStats>,
    pub labels_total: MetricStats,
    pub budget_ok: bool,
}

pub fn summarize_run(dir: &Path) -> CliResult<RunSummary> {
    let cfg: RunConfig = parse_config(&std::fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let records = read_records(&dir.join(RECORDS_FILE))?;
    let Some(last) = records.last().cloned() else {
        return Err(CliError::Run(icopro::Error::Format(format!("{} has no records", dir.display()))));
    };
    let t = &cfg.trainer;
    let budget = Budget {
        env_steps: last.env_steps,
        expected_env_steps: t.env_steps(),
        labels_total: last.labels_total,
        label_cap: t.total_iters * t.queries_per_iter * cfg.labeler.n_cf(),
    };
    Ok(RunSummary { dir: dir.to_path_buf(), method: last.method.clone(), seed: last.seed, last, budget })
}

/// Groups runs by method (sorted by name).
pub fn summarize(runs: &[RunSummary]) -> Vec<MethodSummary> {
    let mut groups: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        groups.entry(&r.method).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(method, rs)| MethodSummary {
            method: method.to_string(),
            runs: rs.len(),
            metrics: METRICS
                .iter()
                .map(|m| (m.to_string(), MetricStats::of(&rs.iter().map(|r| r.metric(m)).collect::<Vec<_>>())))
                .collect(),
            labels_total: MetricStats::of(&rs.iter().map(|r| r.last.labels_total as f64).collect::<Vec<_>>()),
            budget_ok: rs.iter().all(|r| r.budget.ok()),
        })
        .collect()
}

pub fn render_table(summaries: &[MethodSummary]) -> String {
    let mut out = format!("{:<14} {:>4}", "method", "runs");
    for m in METRICS.iter().chain(["labels_total"].iter()) {
        let _ = write!(out, " {m:>20}");
    }
    let _ = writeln!(out, " {:>7}", "budget");
    for s in summaries {
        let _ = write!(out, "{:<14} {:>4}", s.method, s.runs);
        for stats in METRICS.iter().map(|m| &s.metrics[*m]).chain([&s.labels_total]) {
            let _ = write!(out, " {:>20}", format!("{:.3} ± {:.3}", stats.mean, stats.std));
        }
        let _ = writeln!(out, " {:>7}", if s.budget_ok { "ok" } else { "VIOLATED" });
    }
    out
}
