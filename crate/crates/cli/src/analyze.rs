//! Metrics over CSV traces. The input needs a header row and a uniformly sampled `t`
//! column in seconds; the sample rate is taken from it.

use std::io::Write;
use std::path::Path;

use clap::ValueEnum;

use rcm_core::metrics::{self, FeatureSeries, SampledSignal};
use rcm_core::spatial::Vec3;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    /// RMS of the acceleration norm over the whole trace.
    RmsAccel,
    WindowRms,
    WindowMdf,
}

/// Relative deviation of any step from the mean step tolerated in the `t` column.
const STEP_TOLERANCE: f64 = 0.01;

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, Failure> {
        let bad = |msg: String| Failure::Input(format!("{}: {msg}", path.display()));
        let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| bad(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| bad(e.to_string()))?;
            let row = record
                .iter()
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("row {}: {e}", i + 2)))?;
            rows.push(row);
        }
        Ok(Self { headers, rows })
    }

    fn column(&self, name: &str) -> Result<Vec<f64>, Failure> {
        let idx = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::Config(format!("no column named {name:?}")))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    fn rate(&self) -> Result<f64, Failure> {
        let t = self
            .column("t")
            .map_err(|_| Failure::Input("missing t column".into()))?;
        if t.len() < 2 {
            return Err(Failure::Input(format!("need at least 2 samples, got {}", t.len())));
        }
        let step = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        let uniform = step > 0.0
            && t.windows(2)
                .all(|w| ((w[1] - w[0]) - step).abs() <= STEP_TOLERANCE * step);
        if !uniform {
            return Err(Failure::Input("t column is not uniformly increasing".into()));
        }
        Ok(1.0 / step)
    }
}

pub fn run(
    csv: &Path,
    metric: Metric,
    column: Option<&str>,
    window: f64,
    hop: f64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let table = Table::read(csv)?;
    let rate = table.rate()?;
    let metric_error = |e: metrics::MetricsError| Failure::Config(e.to_string());
    let rows: Vec<(f64, f64)> = match metric {
        Metric::RmsAccel => {
            let prefix = column.unwrap_or("tip");
            let axes = ["x", "y", "z"]
                .map(|a| table.column(&format!("{prefix}_{a}")))
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?;
            let positions = (0..table.rows.len())
                .map(|i| Vec3::new(axes[0][i], axes[1][i], axes[2][i]))
                .collect();
            let sig = SampledSignal::new(rate, positions).map_err(metric_error)?;
            vec![(0.0, metrics::rms_accel_norm(&sig).map_err(metric_error)?)]
        }
        Metric::WindowRms | Metric::WindowMdf => {
            let name = match column {
                Some(c) => c,
                None => table
                    .headers
                    .iter()
                    .find(|h| *h != "t")
                    .ok_or_else(|| Failure::Input("no signal column".into()))?,
            };
            let sig = SampledSignal::new(rate, table.column(name)?).map_err(metric_error)?;
            let series: FeatureSeries = if metric == Metric::WindowRms {
                metrics::window_rms(&sig, window, hop)
            } else {
                metrics::window_mdf(&sig, window, hop)
            }
            .map_err(metric_error)?;
            series.window_starts().zip(series.values.iter().copied()).collect()
        }
    };
    let mut text = String::from("window_start_s,value\n");
    for (start, value) in rows {
        text.push_str(&format!("{start},{value}\n"));
    }
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Runtime(e.to_string())),
    }
}
