//! Cross-run comparison tables and reward curves.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::runner::{Manifest, RoundRecord, TaskSummary, ROUND_COLUMNS, TASK_COLUMNS};
use crate::error::{Error, Result};

pub const MOVING_AVERAGE_WINDOW: usize = 100;

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "defense",
    "policy",
    "vulnerable_count",
    "runs",
    "tasks",
    "mean_final_accuracy",
    "mean_utility",
    "last_quartile_final_accuracy",
    "last_quartile_mean_utility",
];

pub const REWARD_MA_COLUMNS: [&str; 5] = ["defense", "policy", "vulnerable_count", "index", "moving_average"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub defense: String,
    pub policy: String,
    pub vulnerable_count: usize,
}

/// One row of the comparison table. "Last quartile" means the final
/// `ceil(task_count / 4)` tasks of each run.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub key: GroupKey,
    pub runs: usize,
    pub tasks: usize,
    pub mean_final_accuracy: f64,
    pub mean_utility: f64,
    pub last_quartile_final_accuracy: f64,
    pub last_quartile_mean_utility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardSeries {
    pub key: GroupKey,
    /// Trailing moving average of the per-round reward, averaged over the
    /// group's runs; entry `i` covers rounds `i ..= i + window - 1`.
    pub moving_average: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub series: Vec<RewardSeries>,
}

/// Means over full trailing windows; empty when `values` is shorter than `window`.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(values.len() - window + 1);
    let mut sum: f64 = values[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..values.len() {
        sum += values[i] - values[i - window];
        out.push(sum / window as f64);
    }
    out
}

fn check_header(path: &Path, expected: &[&str]) -> Result<csv::Reader<fs::File>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    })?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(Error::Schema(format!(
            "{} has columns [{}], expected [{}]",
            path.display(),
            header.join(","),
            expected.join(",")
        )));
    }
    Ok(reader)
}

struct RunData {
    key: GroupKey,
    tasks: Vec<TaskSummary>,
    rewards: Vec<f64>,
}

fn read_run(dir: &Path) -> Result<RunData> {
    let manifest_path = dir.join("manifest.toml");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Schema(format!(
        "{} is not a run manifest: {}",
        manifest_path.display(),
        e.message()
    )))?;
    let config = &manifest.config;
    let key = GroupKey {
        defense: config.defense.strategy.name().to_string(),
        policy: config.selection.policy.name().to_string(),
        vulnerable_count: config.topology.vulnerable_count,
    };
    let mut tasks_reader = check_header(&dir.join("tasks.csv"), &TASK_COLUMNS)?;
    let tasks = tasks_reader.deserialize().collect::<Result<Vec<TaskSummary>, _>>()?;
    let mut rounds_reader = check_header(&dir.join("rounds.csv"), &ROUND_COLUMNS)?;
    let rewards = rounds_reader
        .deserialize()
        .map(|r| r.map(|rec: RoundRecord| rec.utility))
        .collect::<Result<Vec<f64>, _>>()?;
    if tasks.is_empty() {
        return Err(Error::Consistency(format!("{} has no completed tasks", dir.display())));
    }
    Ok(RunData { key, tasks, rewards })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Groups the runs by (defense, policy, vulnerable_count).
pub fn summarize<P: AsRef<Path>>(dirs: &[P]) -> Result<Summary> {
    if dirs.is_empty() {
        return Err(Error::Config("summarize needs at least one run directory".into()));
    }
    let mut groups: BTreeMap<GroupKey, Vec<RunData>> = BTreeMap::new();
    for dir in dirs {
        let run = read_run(dir.as_ref())?;
        groups.entry(run.key.clone()).or_default().push(run);
    }
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (key, runs) in groups {
        let all: Vec<&TaskSummary> = runs.iter().flat_map(|r| &r.tasks).collect();
        let tail: Vec<&TaskSummary> = runs
            .iter()
            .flat_map(|r| {
                let q = r.tasks.len().div_ceil(4);
                &r.tasks[r.tasks.len() - q..]
            })
            .collect();
        rows.push(SummaryRow {
            key: key.clone(),
            runs: runs.len(),
            tasks: all.len(),
            mean_final_accuracy: mean(all.iter().map(|t| t.final_accuracy)),
            mean_utility: mean(all.iter().map(|t| t.mean_utility)),
            last_quartile_final_accuracy: mean(tail.iter().map(|t| t.final_accuracy)),
            last_quartile_mean_utility: mean(tail.iter().map(|t| t.mean_utility)),
        });
        let len = runs.iter().map(|r| r.rewards.len()).min().unwrap_or(0);
        let averaged: Vec<f64> = (0..len).map(|i| mean(runs.iter().map(|r| r.rewards[i]))).collect();
        series.push(RewardSeries {
            key,
            moving_average: moving_average(&averaged, MOVING_AVERAGE_WINDOW),
        });
    }
    Ok(Summary { rows, series })
}

impl Summary {
    /// The comparison table as CSV text, header first.
    pub fn table_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SUMMARY_COLUMNS)?;
        for row in &self.rows {
            w.write_record([
                row.key.defense.clone(),
                row.key.policy.clone(),
                row.key.vulnerable_count.to_string(),
                row.runs.to_string(),
                row.tasks.to_string(),
                row.mean_final_accuracy.to_string(),
                row.mean_utility.to_string(),
                row.last_quartile_final_accuracy.to_string(),
                row.last_quartile_mean_utility.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `summary.csv` and `reward_ma.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let table = dir.join("summary.csv");
        fs::write(&table, self.table_csv()?).map_err(|e| Error::io(&table, e))?;

        let path = dir.join("reward_ma.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(REWARD_MA_COLUMNS)?;
        for s in &self.series {
            for (index, v) in s.moving_average.iter().enumerate() {
                w.write_record([
                    s.key.defense.clone(),
                    s.key.policy.clone(),
                    s.key.vulnerable_count.to_string(),
                    index.to_string(),
                    v.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}
