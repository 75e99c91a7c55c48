use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::EvalSummary;
use super::RunConfig;
use crate::buffers::{CorrectiveLabel, FeedbackBuffer};
use crate::error::Result;
use crate::losses::LossComponents;

/// How an Align phase ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignExit {
    /// Label accuracy exceeded the target.
    Accuracy,
    /// The epoch cap was hit first.
    Guard,
    /// The label buffer was empty.
    NoLabels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignReport {
    pub accuracy: f64,
    pub steps: usize,
    pub epochs: usize,
    pub exit: AlignExit,
}

/// Everything recorded about one finished iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iter: usize,
    pub method: String,
    pub seed: u64,
    pub env_steps: usize,
    pub labels_total: usize,
    pub align: Option<AlignReport>,
    /// Means of the Prop (or TD update) loss components over the iteration.
    pub losses: Option<LossComponents>,
    pub eval: EvalSummary,
    pub wall_s: f64,
}

/// One `metrics.csv` row. Columns are fixed in this order; wall-clock time is
/// kept out so identical runs produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub env_steps: usize,
    pub labels_total: usize,
    pub align_acc: Option<f64>,
    pub align_steps: Option<usize>,
    pub loss_td1: Option<f64>,
    pub loss_tdn: Option<f64>,
    pub loss_mg_label: Option<f64>,
    pub loss_mg_tgt: Option<f64>,
    pub crash_rate: f64,
    pub distance_avg: f64,
    pub speed_avg: f64,
    pub lane_change_ratio: f64,
    pub lane_pos_avg: f64,
    pub steps_avg: f64,
}

impl From<&RunRecord> for MetricsRow {
    fn from(r: &RunRecord) -> Self {
        Self {
            iter: r.iter,
            env_steps: r.env_steps,
            labels_total: r.labels_total,
            align_acc: r.align.map(|a| a.accuracy),
            align_steps: r.align.map(|a| a.steps),
            loss_td1: r.losses.map(|l| l.td1),
            loss_tdn: r.losses.map(|l| l.tdn),
            loss_mg_label: r.losses.map(|l| l.mg_label),
            loss_mg_tgt: r.losses.map(|l| l.mg_tgt),
            crash_rate: r.eval.crash_rate.mean,
            distance_avg: r.eval.distance.mean,
            speed_avg: r.eval.speed.mean,
            lane_change_ratio: r.eval.lane_change_ratio.mean,
            lane_pos_avg: r.eval.lane_position.mean,
            steps_avg: r.eval.steps.mean,
        }
    }
}

/// Receives the outputs of a run as they are produced.
pub trait RunSink {
    fn record(&mut self, record: &RunRecord) -> Result<()>;
    fn label(&mut self, label: &CorrectiveLabel) -> Result<()>;
}

/// Keeps everything in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<RunRecord>,
    pub labels: Vec<CorrectiveLabel>,
}

impl RunSink for MemorySink {
    fn record(&mut self, record: &RunRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }

    fn label(&mut self, label: &CorrectiveLabel) -> Result<()> {
        self.labels.push(label.clone());
        Ok(())
    }
}

/// Run directory layout.
pub struct RunDir {
    root: PathBuf,
    metrics: csv::Writer<File>,
    records: BufWriter<File>,
    labels: BufWriter<File>,
}

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "checkpoints/final.ckpt";

impl RunDir {
    /// Creates (or truncates) the run files and writes the config snapshot.
    pub fn create(root: &Path, config: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(root.join(CHECKPOINT_DIR))?;
        std::fs::write(root.join(CONFIG_FILE), serde_json::to_string_pretty(config)?)?;
        Ok(Self {
            root: root.to_path_buf(),
            metrics: csv::Writer::from_path(root.join(METRICS_FILE))?,
            records: BufWriter::new(File::create(root.join(RECORDS_FILE))?),
            labels: BufWriter::new(File::create(root.join(LABELS_FILE))?),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.root.join(FINAL_CHECKPOINT)
    }
}

impl RunSink for RunDir {
    fn record(&mut self, record: &RunRecord) -> Result<()> {
        self.metrics.serialize(MetricsRow::from(record))?;
        self.metrics.flush()?;
        serde_json::to_writer(&mut self.records, record)?;
        self.records.write_all(b"\n")?;
        self.records.flush()?;
        Ok(())
    }

    fn label(&mut self, label: &CorrectiveLabel) -> Result<()> {
        FeedbackBuffer::write_jsonl_line(label, &mut self.labels)?;
        self.labels.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
