//! Communication and compute bookkeeping: ledgers filled by the simulated
//! protocols and the closed forms they must agree with.

use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::model::network::forward_macs;
use crate::model::{ModelConfig, BYTES_PER_VALUE};
use crate::partition::CloudletPartition;

/// The four training regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    Centralized,
    TraditionalFl,
    ServerfreeFl,
    Gossip,
}

impl Setup {
    pub const ALL: [Setup; 4] = [
        Setup::Centralized,
        Setup::TraditionalFl,
        Setup::ServerfreeFl,
        Setup::Gossip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setup::Centralized => "centralized",
            Setup::TraditionalFl => "traditional_fl",
            Setup::ServerfreeFl => "serverfree_fl",
            Setup::Gossip => "gossip",
        }
    }

    pub fn is_distributed(self) -> bool {
        self != Setup::Centralized
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Setup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Setup::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown setup `{s}`"))
    }
}

/// Endpoint of a transfer or owner of a computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Server,
    Cloudlet(usize),
    Sensor(usize),
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Server => write!(f, "server"),
            Party::Cloudlet(c) => write!(f, "cloudlet-{c}"),
            Party::Sensor(s) => write!(f, "sensor-{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommCategory {
    /// Uploads and peer sends; the per-epoch model figure.
    ModelUp,
    /// Aggregator broadcasts, kept apart from the send figure.
    ModelDown,
    NodeFeature,
}

impl CommCategory {
    pub fn name(self) -> &'static str {
        match self {
            CommCategory::ModelUp => "model_up",
            CommCategory::ModelDown => "model_down",
            CommCategory::NodeFeature => "node_feature",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopCategory {
    Training,
    Aggregation,
}

impl FlopCategory {
    pub fn name(self) -> &'static str {
        match self {
            FlopCategory::Training => "training",
            FlopCategory::Aggregation => "aggregation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommEntry {
    pub epoch: usize,
    pub src: Party,
    pub dst: Party,
    pub category: CommCategory,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopEntry {
    pub epoch: usize,
    pub holder: Party,
    pub category: FlopCategory,
    pub flops: u64,
}

/// Immutable view of everything recorded during a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub comm: Vec<CommEntry>,
    pub flops: Vec<FlopEntry>,
}

impl LedgerSnapshot {
    pub fn bytes(&self, category: CommCategory) -> u64 {
        self.comm
            .iter()
            .filter(|e| e.category == category)
            .map(|e| e.bytes)
            .sum()
    }

    pub fn bytes_in_epoch(&self, category: CommCategory, epoch: usize) -> u64 {
        self.comm
            .iter()
            .filter(|e| e.category == category && e.epoch == epoch)
            .map(|e| e.bytes)
            .sum()
    }

    pub fn flops(&self, category: FlopCategory) -> u64 {
        self.flops
            .iter()
            .filter(|e| e.category == category)
            .map(|e| e.flops)
            .sum()
    }

    pub fn flops_in_epoch(&self, category: FlopCategory, epoch: usize) -> u64 {
        self.flops
            .iter()
            .filter(|e| e.category == category && e.epoch == epoch)
            .map(|e| e.flops)
            .sum()
    }

    pub fn epochs(&self) -> usize {
        let c = self.comm.iter().map(|e| e.epoch + 1).max().unwrap_or(0);
        let f = self.flops.iter().map(|e| e.epoch + 1).max().unwrap_or(0);
        c.max(f)
    }
}

/// Thread-safe append-only recorder. Zero-sized entries are dropped.
#[derive(Debug, Default)]
pub struct Ledger {
    inner: Mutex<LedgerSnapshot>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&self, epoch: usize, src: Party, dst: Party, category: CommCategory, bytes: u64) {
        if bytes == 0 {
            return;
        }
        self.lock().comm.push(CommEntry {
            epoch,
            src,
            dst,
            category,
            bytes,
        });
    }

    pub fn compute(&self, epoch: usize, holder: Party, category: FlopCategory, flops: u64) {
        if flops == 0 {
            return;
        }
        self.lock().flops.push(FlopEntry {
            epoch,
            holder,
            category,
            flops,
        });
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        self.lock().clone()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, LedgerSnapshot> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Node-feature bytes of one training epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureBytes {
    /// Bytes sent by each cloudlet (empty for centralized).
    pub per_cloudlet: Vec<u64>,
    pub total: u64,
}

/// Centralized: every sensor streams its training series to the server
/// once. Distributed: every exchange-plan node stream is forwarded once per
/// (owner, needer) pair.
pub fn feature_bytes_per_epoch(
    setup: Setup,
    partition: &CloudletPartition,
    train_timesteps: usize,
) -> FeatureBytes {
    let per_node = train_timesteps as u64 * BYTES_PER_VALUE;
    if setup == Setup::Centralized {
        return FeatureBytes {
            per_cloudlet: Vec::new(),
            total: partition.n_sensors() as u64 * per_node,
        };
    }
    let mut per_cloudlet = vec![0; partition.n_cloudlets()];
    for e in &partition.plan.entries {
        per_cloudlet[e.src] += e.nodes.len() as u64 * per_node;
    }
    let total = per_cloudlet.iter().sum();
    FeatureBytes {
        per_cloudlet,
        total,
    }
}

/// Model bytes sent per epoch (uploads and peer sends; broadcasts excluded).
pub fn model_bytes_per_epoch(
    setup: Setup,
    n_cloudlets: usize,
    degree_sum: usize,
    param_bytes: u64,
) -> u64 {
    match setup {
        Setup::Centralized => 0,
        Setup::TraditionalFl | Setup::Gossip => n_cloudlets as u64 * param_bytes,
        Setup::ServerfreeFl => degree_sum as u64 * param_bytes,
    }
}

/// Aggregator broadcast bytes per epoch.
pub fn model_down_bytes_per_epoch(setup: Setup, n_cloudlets: usize, param_bytes: u64) -> u64 {
    match setup {
        Setup::TraditionalFl => n_cloudlets as u64 * param_bytes,
        _ => 0,
    }
}

/// Worst case for server-free exchange: every cloudlet reaches every other.
pub fn serverfree_upper_bound(n_cloudlets: usize, param_bytes: u64) -> u64 {
    (n_cloudlets * n_cloudlets.saturating_sub(1)) as u64 * param_bytes
}

/// Forward plus backward (twice the forward) flops of one sample.
pub fn training_flops_per_sample(config: &ModelConfig, nodes: usize) -> u64 {
    3 * 2 * forward_macs(config, nodes)
}

/// Training flops of one epoch over `samples` training windows, one term per
/// holder graph size (all sensors for centralized, owned plus halo per
/// cloudlet otherwise).
pub fn training_flops_per_epoch(
    config: &ModelConfig,
    samples: usize,
    holder_nodes: &[usize],
) -> u64 {
    holder_nodes
        .iter()
        .map(|&n| training_flops_per_sample(config, n) * samples as u64)
        .sum()
}

/// Graph sizes the holders of `setup` train on.
pub fn holder_sizes(setup: Setup, partition: &CloudletPartition) -> Vec<usize> {
    if setup == Setup::Centralized {
        vec![partition.n_sensors()]
    } else {
        (0..partition.n_cloudlets())
            .map(|c| partition.owned[c].len() + partition.halo[c].len())
            .collect()
    }
}

/// One weighted average of `m` vectors of length `param_count`.
pub fn aggregation_event_flops(m: usize, param_count: usize) -> u64 {
    if m == 0 {
        0
    } else {
        2 * (m * param_count) as u64
    }
}

/// Aggregation flops of one epoch. Gossip depends on buffer occupancy, so
/// its per-cloudlet buffer sizes must be supplied.
pub fn aggregation_flops_per_epoch(
    setup: Setup,
    partition: &CloudletPartition,
    param_count: usize,
    gossip_buffer_sizes: &[usize],
) -> u64 {
    match setup {
        Setup::Centralized => 0,
        Setup::TraditionalFl => aggregation_event_flops(partition.n_cloudlets(), param_count),
        Setup::ServerfreeFl => (0..partition.n_cloudlets())
            .map(|c| aggregation_event_flops(partition.degree(c) + 1, param_count))
            .sum(),
        Setup::Gossip => gossip_buffer_sizes
            .iter()
            .map(|&m| aggregation_event_flops(m, param_count))
            .sum(),
    }
}

/// One row of the per-setup overhead table; per-epoch means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub setup: Setup,
    pub model_mb_per_epoch: f64,
    pub training_flops_per_epoch: f64,
    pub aggregation_flops_per_epoch: f64,
    pub feature_mb_per_epoch: f64,
}

pub const BYTES_PER_MB: f64 = 1e6;

impl OverheadRow {
    pub fn from_ledger(setup: Setup, ledger: &LedgerSnapshot, epochs: usize) -> Self {
        let e = epochs.max(1) as f64;
        Self {
            setup,
            model_mb_per_epoch: ledger.bytes(CommCategory::ModelUp) as f64 / BYTES_PER_MB / e,
            training_flops_per_epoch: ledger.flops(FlopCategory::Training) as f64 / e,
            aggregation_flops_per_epoch: ledger.flops(FlopCategory::Aggregation) as f64 / e,
            feature_mb_per_epoch: ledger.bytes(CommCategory::NodeFeature) as f64 / BYTES_PER_MB / e,
        }
    }
}
