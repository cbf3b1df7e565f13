//! Run directory layout: resolved config, one JSON document and plot-ready
//! CSV files. Everything except the timestamp is a pure function of the
//! results, so reruns produce identical files.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::accounting::{OverheadRow, Setup};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::checkpoint;
use crate::partition::CloudletPartition;
use crate::protocols::RunResult;

pub const CONFIG_FILE: &str = "config.toml";
pub const RESULT_FILE: &str = "result.json";
pub const VAL_LOSS_FILE: &str = "val_loss.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const PARTITION_FILE: &str = "partition.csv";
pub const PLAN_FILE: &str = "plan.csv";

#[derive(Serialize)]
struct ResultDoc<'a> {
    created_unix: u64,
    config: &'a ExperimentConfig,
    duplication_factor: f64,
    runs: &'a [RunResult],
    overhead: Vec<OverheadRow>,
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub setup: Setup,
    pub horizon: usize,
    pub scope: String,
    #[serde(rename = "MAE")]
    pub mae: f64,
    #[serde(rename = "RMSE")]
    pub rmse: f64,
    #[serde(rename = "WMAPE")]
    pub wmape: f64,
}

/// One row of `ledger.csv`; transfers leave `flops` at 0 and computations
/// leave `dst` empty and `bytes` at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub horizon: usize,
    pub epoch: usize,
    pub src: String,
    pub dst: String,
    pub category: String,
    pub bytes: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LossRow {
    horizon: usize,
    epoch: usize,
    holder: String,
    loss: f64,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes every artifact of a multi-horizon run into `dir`.
pub fn write_run_dir(
    dir: &Path,
    config: &ExperimentConfig,
    partition: &CloudletPartition,
    sensor_ids: &[String],
    runs: &[RunResult],
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, config.resolved_toml()).map_err(|e| Error::io(&path, e))?;
    partition.write_owner_csv(&dir.join(PARTITION_FILE), sensor_ids)?;
    partition.write_plan_csv(&dir.join(PLAN_FILE), sensor_ids)?;

    let path = dir.join(VAL_LOSS_FILE);
    let mut w = csv_writer(&path)?;
    for r in runs {
        for e in &r.val_losses {
            w.serialize(LossRow {
                horizon: r.horizon,
                epoch: e.epoch,
                holder: e.holder.clone(),
                loss: e.loss,
            })?;
        }
    }
    finish(w, &path)?;

    let path = dir.join(METRICS_FILE);
    let mut w = csv_writer(&path)?;
    for r in runs {
        for m in &r.metrics {
            w.serialize(MetricRow {
                setup: r.setup,
                horizon: r.horizon,
                scope: m.scope.to_string(),
                mae: m.mae,
                rmse: m.rmse,
                wmape: m.wmape,
            })?;
        }
    }
    finish(w, &path)?;

    let path = dir.join(LEDGER_FILE);
    let mut w = csv_writer(&path)?;
    for r in runs {
        for e in &r.ledger.comm {
            w.serialize(LedgerRow {
                horizon: r.horizon,
                epoch: e.epoch,
                src: e.src.to_string(),
                dst: e.dst.to_string(),
                category: e.category.name().to_string(),
                bytes: e.bytes,
                flops: 0,
            })?;
        }
        for e in &r.ledger.flops {
            w.serialize(LedgerRow {
                horizon: r.horizon,
                epoch: e.epoch,
                src: e.holder.to_string(),
                dst: String::new(),
                category: e.category.name().to_string(),
                bytes: 0,
                flops: e.flops,
            })?;
        }
    }
    finish(w, &path)?;

    let ckpt = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    for r in runs {
        for m in &r.models {
            checkpoint::save(
                &ckpt.join(format!("h{}-{}.bin", r.horizon, m.holder)),
                &m.values,
            )?;
        }
    }

    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let doc = ResultDoc {
        created_unix,
        config,
        duplication_factor: partition.duplication_factor(),
        runs,
        overhead: runs
            .iter()
            .map(|r| OverheadRow::from_ledger(r.setup, &r.ledger, r.epochs))
            .collect(),
    };
    let path = dir.join(RESULT_FILE);
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &doc)?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize()
        .enumerate()
        .map(|(row, rec)| {
            rec.map_err(|e| Error::Parse {
                path: path.display().to_string(),
                row: row + 2,
                column: 0,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_metrics(dir: &Path) -> Result<Vec<MetricRow>> {
    read_rows(&dir.join(METRICS_FILE))
}

pub fn read_ledger(dir: &Path) -> Result<Vec<LedgerRow>> {
    read_rows(&dir.join(LEDGER_FILE))
}

pub fn read_config(dir: &Path) -> Result<ExperimentConfig> {
    let path: PathBuf = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    ExperimentConfig::from_toml_str(&text)
}

/// Per-epoch overhead of one run directory, averaged over epochs of its
/// first horizon.
pub fn overhead_from_ledger(setup: Setup, rows: &[LedgerRow]) -> OverheadRow {
    let Some(h) = rows.iter().map(|r| r.horizon).min() else {
        return OverheadRow::from_ledger(setup, &Default::default(), 1);
    };
    let rows: Vec<&LedgerRow> = rows.iter().filter(|r| r.horizon == h).collect();
    let epochs = rows.iter().map(|r| r.epoch + 1).max().unwrap_or(1) as f64;
    let bytes = |cat: &str| {
        rows.iter()
            .filter(|r| r.category == cat)
            .map(|r| r.bytes)
            .sum::<u64>() as f64
    };
    let flops = |cat: &str| {
        rows.iter()
            .filter(|r| r.category == cat)
            .map(|r| r.flops)
            .sum::<u64>() as f64
    };
    use crate::accounting::BYTES_PER_MB;
    OverheadRow {
        setup,
        model_mb_per_epoch: bytes("model_up") / BYTES_PER_MB / epochs,
        training_flops_per_epoch: flops("training") / epochs,
        aggregation_flops_per_epoch: flops("aggregation") / epochs,
        feature_mb_per_epoch: bytes("node_feature") / BYTES_PER_MB / epochs,
    }
}
