//! Experiment configuration file (TOML). Unknown keys are rejected and every
//! error names the offending key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accounting::Setup;
use crate::dataset::{load_series, SpeedSeries};
use crate::error::{Error, Result};
use crate::graph::{read_edges, read_sensors, Coord, SensorGraph};
use crate::metrics::WmapeDenominator;
use crate::model::optim::OptimizerConfig;
use crate::model::ModelConfig;
use crate::partition::{hex_layout, receptive_hops, CloudletPartition};
use crate::protocols::{RunConfig, Seeds};
use crate::synth::{synth_generate, SynthParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    pub partition: PartitionConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub training: TrainingConfig,
    /// Forecast horizons in 5-minute steps.
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
}

fn default_horizons() -> Vec<usize> {
    vec![3, 6, 12]
}

/// Either CSV inputs or synthetic generation parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// `T × n` speeds with a header row of sensor ids.
    pub series_csv: Option<PathBuf>,
    /// `sensor_id,lat,lon`, in the series column order.
    pub sensors_csv: Option<PathBuf>,
    /// Optional `from_id,to_id,dist_km` road distances.
    pub edges_csv: Option<PathBuf>,
    pub synth: Option<SynthParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Kernel width; the distance variance when absent.
    pub sigma2: Option<f64>,
    pub epsilon: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            sigma2: None,
            epsilon: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HexLayout {
    pub center: Coord,
    pub radius_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    /// Explicit cloudlet positions.
    pub cloudlets: Option<Vec<Coord>>,
    /// Alternative to `cloudlets`: a center plus six on a ring.
    pub hex_layout: Option<HexLayout>,
    #[serde(default = "default_range")]
    pub comm_range_km: f64,
    pub hops_override: Option<usize>,
}

fn default_range() -> f64 {
    8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub setup: Setup,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub seeds: Seeds,
    #[serde(default = "one")]
    pub local_epochs: usize,
    #[serde(default)]
    pub mask_zeros: bool,
    #[serde(default)]
    pub wmape_denominator: WmapeDenominator,
    #[serde(default = "one")]
    pub threads: usize,
}

fn default_epochs() -> usize {
    40
}

fn default_batch() -> usize {
    32
}

fn one() -> usize {
    1
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses and validates; relative dataset paths stay relative.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(&path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file and resolves relative dataset paths against its folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.dataset.series_csv,
            &mut cfg.dataset.sensors_csv,
            &mut cfg.dataset.edges_csv,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match (&d.synth, &d.series_csv, &d.sensors_csv) {
            (Some(s), None, None) => {
                if d.edges_csv.is_some() {
                    return Err(config_error(
                        "dataset.edges_csv",
                        "not used with synthetic data",
                    ));
                }
                if s.sensors < 2 {
                    return Err(config_error(
                        "dataset.synth.sensors",
                        "need at least 2 sensors",
                    ));
                }
            }
            (None, Some(_), Some(_)) => {}
            (None, _, _) => {
                return Err(config_error(
                    "dataset",
                    "set either `synth` or both `series_csv` and `sensors_csv`",
                ))
            }
            (Some(_), _, _) => return Err(config_error("dataset", "`synth` excludes CSV inputs")),
        }
        if let Some(s2) = self.graph.sigma2 {
            if !(s2 > 0.0) {
                return Err(config_error("graph.sigma2", "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.graph.epsilon) {
            return Err(config_error("graph.epsilon", "must be in [0, 1)"));
        }
        let p = &self.partition;
        match (&p.cloudlets, &p.hex_layout) {
            (Some(c), None) if !c.is_empty() => {}
            (None, Some(h)) if h.radius_km > 0.0 => {}
            (None, Some(_)) => {
                return Err(config_error(
                    "partition.hex_layout.radius_km",
                    "must be positive",
                ))
            }
            _ => {
                return Err(config_error(
                    "partition",
                    "set exactly one of a non-empty `cloudlets` list or `hex_layout`",
                ))
            }
        }
        if !(p.comm_range_km > 0.0) {
            return Err(config_error("partition.comm_range_km", "must be positive"));
        }
        self.model
            .validate()
            .map_err(|e| config_error("model", e.to_string()))?;
        let t = &self.training;
        for (key, v) in [
            ("training.epochs", t.epochs),
            ("training.batch_size", t.batch_size),
            ("training.local_epochs", t.local_epochs),
            ("training.threads", t.threads),
        ] {
            if v == 0 {
                return Err(config_error(key, "must be at least 1"));
            }
        }
        if !(t.optimizer.lr > 0.0) {
            return Err(config_error("training.optimizer.lr", "must be positive"));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(config_error(
                "horizons",
                "need at least one positive horizon",
            ));
        }
        Ok(())
    }

    /// Canonical TOML of the resolved configuration, defaults expanded.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short stable digest of the resolved configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.resolved_toml().as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Run directory name: setup plus config digest.
    pub fn run_dir_name(&self) -> String {
        format!("{}-{}", self.training.setup, self.hash())
    }

    pub fn cloudlet_positions(&self) -> Vec<Coord> {
        match (&self.partition.cloudlets, &self.partition.hex_layout) {
            (Some(c), _) => c.clone(),
            (None, Some(h)) => hex_layout(h.center, h.radius_km),
            (None, None) => Vec::new(),
        }
    }

    pub fn hops(&self) -> usize {
        receptive_hops(&self.model, self.partition.hops_override)
    }

    /// Builds the sensor graph and speed series.
    pub fn load_inputs(&self) -> Result<(SensorGraph, SpeedSeries)> {
        let d = &self.dataset;
        if let Some(s) = &d.synth {
            return synth_generate(s, self.graph.sigma2, self.graph.epsilon);
        }
        let (series_path, sensors_path) = match (&d.series_csv, &d.sensors_csv) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(config_error("dataset", "missing CSV inputs")),
        };
        let series = load_series(series_path)?;
        let (ids, coords) = read_sensors(sensors_path)?;
        if ids != series.sensor_ids {
            return Err(Error::input(format!(
                "sensor ids in {} do not match the series header of {}",
                sensors_path.display(),
                series_path.display()
            )));
        }
        let edges = d.edges_csv.as_deref().map(read_edges).transpose()?;
        let graph = SensorGraph::build(
            ids,
            coords,
            edges.as_deref(),
            self.graph.sigma2,
            self.graph.epsilon,
        )?;
        Ok((graph, series))
    }

    pub fn build_partition(&self, graph: &SensorGraph) -> Result<CloudletPartition> {
        CloudletPartition::build(
            graph,
            self.cloudlet_positions(),
            self.partition.comm_range_km,
            self.hops(),
        )
    }

    pub fn run_config(&self) -> RunConfig {
        let t = &self.training;
        RunConfig {
            setup: t.setup,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seeds: t.seeds.clone(),
            local_epochs: t.local_epochs,
            mask_zeros: t.mask_zeros,
            wmape_denominator: t.wmape_denominator,
            threads: t.threads,
            model: self.model.clone(),
            optimizer: t.optimizer.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
horizons = [3]
[dataset.synth]
sensors = 10
timesteps = 400
[partition]
hex_layout = { center = { lat = 34.1, lon = -118.2 }, radius_km = 7.5 }
[training]
setup = "gossip"
seeds = { init = 1, shuffle = 2, gossip = 3, dropout = 4 }
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.training.epochs, 40);
        assert_eq!(c.training.batch_size, 32);
        assert_eq!(c.graph.epsilon, 0.1);
        assert_eq!(c.partition.comm_range_km, 8.0);
        assert_eq!(c.cloudlet_positions().len(), 7);
        assert_eq!(c.hops(), 4);
        let again = ExperimentConfig::from_toml_str(&c.resolved_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn unknown_key_reports_its_path() {
        let bad = MINIMAL
            .replace("batch", "x")
            .replace("setup = \"gossip\"", "setup = \"gossip\"\nbatchsize = 3");
        match ExperimentConfig::from_toml_str(&bad).unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "training.batchsize"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn seeds_are_mandatory() {
        let bad = MINIMAL.replace(
            "seeds = { init = 1, shuffle = 2, gossip = 3, dropout = 4 }",
            "seeds = { init = 1 }",
        );
        let err = ExperimentConfig::from_toml_str(&bad)
            .unwrap_err()
            .to_string();
        assert!(err.contains("training.seeds"), "{err}");
    }

    #[test]
    fn semantic_errors_name_keys() {
        let bad = MINIMAL.replace("horizons = [3]", "horizons = []");
        assert!(ExperimentConfig::from_toml_str(&bad)
            .unwrap_err()
            .to_string()
            .contains("horizons"));
        let bad = MINIMAL.replace("setup = \"gossip\"", "setup = \"gossip\"\nepochs = 0");
        assert!(ExperimentConfig::from_toml_str(&bad)
            .unwrap_err()
            .to_string()
            .contains("training.epochs"));
    }
}
