use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Column order of every per-episode CSV.
pub const COLUMNS: [&str; 11] = [
    "episode",
    "rho",
    "epsilon",
    "mean_reward",
    "running_mean_reward",
    "running_sum_reward",
    "served",
    "discarded",
    "rejected",
    "training_jobs",
    "mean_abs_td",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub rho: f64,
    pub epsilon: f64,
    /// Mean per-slot reward.
    pub mean_reward: f64,
    /// Mean of `mean_reward` over this and all earlier episodes of the phase.
    pub running_mean_reward: f64,
    /// Sum of `mean_reward` over this and all earlier episodes of the phase.
    pub running_sum_reward: f64,
    pub served: u64,
    pub discarded: u64,
    pub rejected: u64,
    pub training_jobs: u64,
    /// Mean |TD error| over the episode's transitions; NaN without an agent.
    pub mean_abs_td: f64,

    // Not written to CSV.
    pub generated: u64,
    pub left_in_buffer: u64,
    pub train_steps: u64,
    pub slots: u64,
    pub param_checksum: Option<u64>,
}

impl EpisodeMetrics {
    /// Every generated job is served, dropped at its deadline, rejected by a
    /// full buffer, or still waiting.
    pub fn conserves_jobs(&self) -> bool {
        self.generated == self.served + self.discarded + self.rejected + self.left_in_buffer
    }

    fn record(&self) -> [String; 11] {
        [
            self.episode.to_string(),
            self.rho.to_string(),
            self.epsilon.to_string(),
            self.mean_reward.to_string(),
            self.running_mean_reward.to_string(),
            self.running_sum_reward.to_string(),
            self.served.to_string(),
            self.discarded.to_string(),
            self.rejected.to_string(),
            self.training_jobs.to_string(),
            self.mean_abs_td.to_string(),
        ]
    }
}

/// Fills the running columns of a phase in place.
pub fn fill_running(rows: &mut [EpisodeMetrics]) {
    let mut sum = 0.0;
    for (i, row) in rows.iter_mut().enumerate() {
        sum += row.mean_reward;
        row.running_sum_reward = sum;
        row.running_mean_reward = sum / (i + 1) as f64;
    }
}

/// Appends one row per episode and flushes after each.
pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
    running_sum: f64,
    rows: usize,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut sink = CsvSink {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(BufWriter::new(file)),
            running_sum: 0.0,
            rows: 0,
        };
        sink.write(COLUMNS)?;
        sink.flush()?;
        Ok(sink)
    }

    fn write<I, T>(&mut self, record: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        let path = self.path.clone();
        self.writer
            .write_record(record)
            .map_err(|source| Error::Csv { path, source })
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }

    /// Completes the running columns of `row`, writes it and flushes.
    pub fn push(&mut self, row: &mut EpisodeMetrics) -> Result<()> {
        self.running_sum += row.mean_reward;
        self.rows += 1;
        row.running_sum_reward = self.running_sum;
        row.running_mean_reward = self.running_sum / self.rows as f64;
        self.write(row.record())?;
        self.flush()
    }
}

pub fn write_csv(rows: &[EpisodeMetrics], path: &Path) -> Result<()> {
    let mut sink = CsvSink::create(path)?;
    for row in rows {
        sink.write(row.record())?;
    }
    sink.flush()
}

pub fn read_csv(path: &Path) -> Result<Vec<EpisodeMetrics>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(COLUMNS.iter().copied()) {
        return Err(Error::config(format!(
            "{}: unexpected header {:?}",
            path.display(),
            headers
        )));
    }
    let bad = |col: &str, v: &str| Error::config(format!("{}: bad {col} value `{v}`", path.display()));
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record.map_err(csv_err)?;
        let f = |i: usize| r[i].parse::<f64>().map_err(|_| bad(COLUMNS[i], &r[i]));
        let u = |i: usize| r[i].parse::<u64>().map_err(|_| bad(COLUMNS[i], &r[i]));
        rows.push(EpisodeMetrics {
            episode: u(0)? as usize,
            rho: f(1)?,
            epsilon: f(2)?,
            mean_reward: f(3)?,
            running_mean_reward: f(4)?,
            running_sum_reward: f(5)?,
            served: u(6)?,
            discarded: u(7)?,
            rejected: u(8)?,
            training_jobs: u(9)?,
            mean_abs_td: f(10)?,
            ..Default::default()
        });
    }
    Ok(rows)
}

/// Mean and standard error (sample standard deviation over `√n`).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Writes the per-episode mean across seeds of every column, followed by a
/// `<column>_stderr` column for each. Seeds must share the episode index.
pub fn write_summary(per_seed: &[Vec<EpisodeMetrics>], path: &Path) -> Result<()> {
    let Some(first) = per_seed.first() else {
        return Err(Error::config("summary over zero seeds"));
    };
    if per_seed.iter().any(|s| s.len() != first.len()) {
        return Err(Error::config("seeds have different episode counts"));
    }
    let mut header: Vec<String> = COLUMNS.iter().map(|c| c.to_string()).collect();
    header.extend(COLUMNS[1..].iter().map(|c| format!("{c}_stderr")));
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..first.len() {
        let columns: Vec<[f64; 10]> = per_seed
            .iter()
            .map(|rows| {
                let r = &rows[i];
                [
                    r.rho,
                    r.epsilon,
                    r.mean_reward,
                    r.running_mean_reward,
                    r.running_sum_reward,
                    r.served as f64,
                    r.discarded as f64,
                    r.rejected as f64,
                    r.training_jobs as f64,
                    r.mean_abs_td,
                ]
            })
            .collect();
        let stats: Vec<(f64, f64)> = (0..10)
            .map(|c| mean_stderr(&columns.iter().map(|v| v[c]).collect::<Vec<_>>()))
            .collect();
        let mut record = vec![first[i].episode.to_string()];
        record.extend(stats.iter().map(|s| s.0.to_string()));
        record.extend(stats.iter().map(|s| s.1.to_string()));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean of a phase's per-episode `mean_reward` and its standard error over
/// episodes.
pub fn phase_reward(rows: &[EpisodeMetrics]) -> (f64, f64) {
    mean_stderr(&rows.iter().map(|r| r.mean_reward).collect::<Vec<_>>())
}
