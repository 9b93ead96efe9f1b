use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;

use super::curve::{Experiment, MetricsRecord};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Column order of the metrics CSV.
pub const METRICS_HEADER: [&str; 7] = [
    "method",
    "gamma",
    "tasks_seen",
    "seed",
    "repetitions",
    "mean_test_error",
    "std_test_error",
];

pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(METRICS_HEADER)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for r in rdr.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

/// Writes `metrics.csv` and `manifest.json` into `dir`.
pub fn write_experiment(exp: &Experiment, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let metrics = dir.join(METRICS_FILE);
    write_metrics_csv(&exp.records(), std::fs::File::create(&metrics)?)?;
    let manifest = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest, serde_json::to_string_pretty(exp)?)?;
    Ok((metrics, manifest))
}
