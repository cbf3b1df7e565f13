//! The four training regimes as synchronous, epoch-driven simulations.
//! Cloudlet-local training may run on worker threads; deliveries,
//! aggregation and ledger writes happen at the epoch barrier in cloudlet
//! order, so results do not depend on the thread count.

mod holder;

use std::collections::VecDeque;

use log::{debug, info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{
    aggregation_event_flops, training_flops_per_sample, CommCategory, FlopCategory, Ledger,
    LedgerSnapshot, Party, Setup,
};
use crate::dataset::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::graph::SensorGraph;
use crate::metrics::{aggregate_weighted, MetricReport, Scope, WmapeDenominator};
use crate::model::optim::OptimizerConfig;
use crate::model::{average_params, ModelConfig, ModelParams};
use crate::partition::CloudletPartition;
use crate::rng;

pub use holder::Holder;

/// Gossip receive buffer capacity.
pub const GOSSIP_BUFFER: usize = 2;

/// Every random stream of a run is derived from one of these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    pub shuffle: u64,
    pub gossip: u64,
    pub dropout: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub setup: Setup,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Seeds,
    /// Local passes per traditional-FL round.
    pub local_epochs: usize,
    /// Exclude zero (missing) readings from loss and metrics.
    pub mask_zeros: bool,
    pub wmape_denominator: WmapeDenominator,
    pub threads: usize,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
}

impl RunConfig {
    pub fn new(setup: Setup, epochs: usize, seeds: Seeds) -> Self {
        Self {
            setup,
            epochs,
            batch_size: 32,
            seeds,
            local_epochs: 1,
            mask_zeros: false,
            wmape_denominator: WmapeDenominator::Predicted,
            threads: 1,
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::input("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::input("batch_size must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::input("local_epochs must be at least 1"));
        }
        if self.threads == 0 {
            return Err(Error::input("threads must be at least 1"));
        }
        Ok(())
    }
}

/// One per-epoch loss value of one model holder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub epoch: usize,
    /// `global` or `cloudlet-<id>`.
    pub holder: String,
    pub loss: f64,
}

/// Final parameters of one holder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderModel {
    pub holder: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub setup: Setup,
    pub horizon: usize,
    pub epochs: usize,
    pub param_count: usize,
    pub param_bytes: u64,
    /// Normalized-scale validation MAE. The `global` holder is the single
    /// model for centralized and FL, and the pooled owned-node loss over all
    /// cloudlet models otherwise.
    pub val_losses: Vec<LossEntry>,
    pub train_losses: Vec<LossEntry>,
    /// Test metrics after the final epoch: global first, then per cloudlet.
    pub metrics: Vec<MetricReport>,
    pub ledger: LedgerSnapshot,
    /// Gossip buffer occupancy at each aggregation, per epoch and cloudlet.
    pub gossip_buffer_sizes: Vec<Vec<usize>>,
    /// Receiving cloudlet of each gossip send, per epoch and sender.
    pub gossip_peers: Vec<Vec<usize>>,
    #[serde(skip)]
    pub models: Vec<HolderModel>,
}

impl RunResult {
    /// Per-epoch losses of one holder.
    pub fn val_curve(&self, holder: &str) -> Vec<f64> {
        self.val_losses
            .iter()
            .filter(|e| e.holder == holder)
            .map(|e| e.loss)
            .collect()
    }
}

pub const GLOBAL: &str = "global";

fn cloudlet_name(c: usize) -> String {
    Party::Cloudlet(c).to_string()
}

/// Runs `cfg.setup`. Centralized ignores the partition except for the
/// per-cloudlet breakdown of the test metrics.
pub fn run(
    data: &WindowedDataset,
    graph: &SensorGraph,
    partition: &CloudletPartition,
    cfg: &RunConfig,
) -> Result<RunResult> {
    cfg.validate()?;
    if graph.n() != data.sensors() {
        return Err(Error::shape("graph sensors", data.sensors(), graph.n()));
    }
    if partition.n_sensors() != graph.n() {
        return Err(Error::shape(
            "partition sensors",
            graph.n(),
            partition.n_sensors(),
        ));
    }
    if data.range(Split::Train).is_empty() || data.range(Split::Val).is_empty() {
        return Err(Error::input(
            "training and validation splits must be non-empty",
        ));
    }
    if data.range(Split::Test).is_empty() {
        return Err(Error::input("test split is empty"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::input(format!("thread pool: {e}")))?;
    pool.install(|| Simulation::new(data, graph, partition, cfg)?.run())
}

pub fn run_centralized(
    data: &WindowedDataset,
    graph: &SensorGraph,
    partition: &CloudletPartition,
    cfg: &RunConfig,
) -> Result<RunResult> {
    run(data, graph, partition, &with_setup(cfg, Setup::Centralized))
}

pub fn run_traditional_fl(
    data: &WindowedDataset,
    graph: &SensorGraph,
    partition: &CloudletPartition,
    cfg: &RunConfig,
) -> Result<RunResult> {
    run(
        data,
        graph,
        partition,
        &with_setup(cfg, Setup::TraditionalFl),
    )
}

pub fn run_serverfree_fl(
    data: &WindowedDataset,
    graph: &SensorGraph,
    partition: &CloudletPartition,
    cfg: &RunConfig,
) -> Result<RunResult> {
    run(
        data,
        graph,
        partition,
        &with_setup(cfg, Setup::ServerfreeFl),
    )
}

pub fn run_gossip(
    data: &WindowedDataset,
    graph: &SensorGraph,
    partition: &CloudletPartition,
    cfg: &RunConfig,
) -> Result<RunResult> {
    run(data, graph, partition, &with_setup(cfg, Setup::Gossip))
}

fn with_setup(cfg: &RunConfig, setup: Setup) -> RunConfig {
    RunConfig {
        setup,
        ..cfg.clone()
    }
}

struct Simulation<'a> {
    data: &'a WindowedDataset,
    partition: &'a CloudletPartition,
    cfg: &'a RunConfig,
    holders: Vec<Holder>,
    /// Full-graph holder used to evaluate a single global model.
    global: Option<Holder>,
    ledger: Ledger,
    param_count: usize,
    param_bytes: u64,
    train_samples: usize,
    train_timesteps: usize,
    val_losses: Vec<LossEntry>,
    train_losses: Vec<LossEntry>,
    gossip_buffers: Vec<VecDeque<Vec<f64>>>,
    gossip_buffer_sizes: Vec<Vec<usize>>,
    gossip_peers: Vec<Vec<usize>>,
}

impl<'a> Simulation<'a> {
    fn new(
        data: &'a WindowedDataset,
        graph: &'a SensorGraph,
        partition: &'a CloudletPartition,
        cfg: &'a RunConfig,
    ) -> Result<Self> {
        let init = ModelParams::init(&cfg.model, cfg.seeds.init)?;
        let full = graph.scaled_laplacian()?;
        let all: Vec<usize> = (0..graph.n()).collect();
        let setup = cfg.setup;
        let holders = if setup == Setup::Centralized {
            vec![Holder::new(0, all.clone(), &all, &full, init.clone(), cfg)?]
        } else {
            if setup == Setup::Gossip && partition.n_cloudlets() < 2 {
                return Err(Error::input("gossip needs at least 2 cloudlets"));
            }
            if setup == Setup::ServerfreeFl && partition.cloudlet_adjacency.is_empty() {
                warn!("server-free run without cloudlet links: every cloudlet trains in isolation");
            }
            (0..partition.n_cloudlets())
                .map(|c| {
                    Holder::new(
                        c,
                        partition.local_nodes(c),
                        &partition.owned[c],
                        &full,
                        init.clone(),
                        cfg,
                    )
                })
                .collect::<Result<Vec<_>>>()?
        };
        for h in holders.iter().filter(|h| h.is_empty()) {
            warn!("cloudlet {} owns no sensors and will not train", h.id);
        }
        let global = if setup == Setup::TraditionalFl {
            Some(Holder::new(0, all.clone(), &all, &full, init.clone(), cfg)?)
        } else {
            None
        };
        Ok(Self {
            data,
            partition,
            cfg,
            holders,
            global,
            ledger: Ledger::new(),
            param_count: init.param_count(),
            param_bytes: init.param_bytes(),
            train_samples: data.range(Split::Train).len(),
            train_timesteps: data.train_timesteps(),
            val_losses: Vec::new(),
            train_losses: Vec::new(),
            gossip_buffers: vec![VecDeque::new(); partition.n_cloudlets()],
            gossip_buffer_sizes: Vec::new(),
            gossip_peers: Vec::new(),
        })
    }

    fn run(mut self) -> Result<RunResult> {
        let setup = self.cfg.setup;
        info!(
            "{setup}: {} holder(s), {} params, horizon {}",
            self.holders.len(),
            self.param_count,
            self.data.horizon_steps
        );
        for epoch in 0..self.cfg.epochs {
            if setup == Setup::Gossip {
                self.gossip_aggregate(epoch)?;
            }
            self.train_all(epoch)?;
            self.record_features(epoch);
            match setup {
                Setup::Centralized => {}
                Setup::TraditionalFl => self.fl_round(epoch)?,
                Setup::ServerfreeFl => self.serverfree_exchange(epoch)?,
                Setup::Gossip => self.gossip_send(epoch),
            }
            self.validate(epoch)?;
            debug!(
                "{setup} epoch {epoch}: val {:.5}",
                self.val_losses.last().map(|e| e.loss).unwrap_or(f64::NAN)
            );
        }
        let metrics = self.evaluate()?;
        let models = self.final_models();
        Ok(RunResult {
            setup,
            horizon: self.data.horizon_steps,
            epochs: self.cfg.epochs,
            param_count: self.param_count,
            param_bytes: self.param_bytes,
            val_losses: self.val_losses,
            train_losses: self.train_losses,
            metrics,
            ledger: self.ledger.snapshot(),
            gossip_buffer_sizes: self.gossip_buffer_sizes,
            gossip_peers: self.gossip_peers,
            models,
        })
    }

    fn holder_name(&self, h: &Holder) -> String {
        if self.cfg.setup == Setup::Centralized {
            GLOBAL.to_string()
        } else {
            cloudlet_name(h.id)
        }
    }

    fn train_all(&mut self, epoch: usize) -> Result<()> {
        let (data, cfg) = (self.data, self.cfg);
        let losses: Vec<f64> = self
            .holders
            .par_iter_mut()
            .map(|h| h.train_round(data, cfg, epoch))
            .collect::<Result<_>>()?;
        for (h, loss) in self.holders.iter().zip(losses) {
            let party = if cfg.setup == Setup::Centralized {
                Party::Server
            } else {
                Party::Cloudlet(h.id)
            };
            let flops = training_flops_per_sample(&cfg.model, h.nodes.len())
                * (self.train_samples * cfg.local_epochs) as u64;
            if !h.is_empty() {
                self.ledger
                    .compute(epoch, party, FlopCategory::Training, flops);
                self.train_losses.push(LossEntry {
                    epoch,
                    holder: self.holder_name(h),
                    loss,
                });
            }
        }
        Ok(())
    }

    fn record_features(&self, epoch: usize) {
        let per_node = self.train_timesteps as u64 * crate::model::BYTES_PER_VALUE;
        if self.cfg.setup == Setup::Centralized {
            for v in 0..self.partition.n_sensors() {
                self.ledger.send(
                    epoch,
                    Party::Sensor(v),
                    Party::Server,
                    CommCategory::NodeFeature,
                    per_node,
                );
            }
        } else {
            for e in &self.partition.plan.entries {
                self.ledger.send(
                    epoch,
                    Party::Cloudlet(e.src),
                    Party::Cloudlet(e.dst),
                    CommCategory::NodeFeature,
                    e.nodes.len() as u64 * per_node,
                );
            }
        }
    }

    /// Upload, weighted average by owned training entries, broadcast.
    fn fl_round(&mut self, epoch: usize) -> Result<()> {
        let pb = self.param_bytes;
        for h in &self.holders {
            self.ledger.send(
                epoch,
                Party::Cloudlet(h.id),
                Party::Server,
                CommCategory::ModelUp,
                pb,
            );
        }
        let weights: Vec<f64> = self
            .holders
            .iter()
            .map(|h| (h.owned_count() * self.train_samples) as f64)
            .collect();
        let models: Vec<&[f64]> = self.holders.iter().map(|h| h.params.as_slice()).collect();
        let avg = average_params(&models, &weights)?;
        self.ledger.compute(
            epoch,
            Party::Server,
            FlopCategory::Aggregation,
            aggregation_event_flops(self.holders.len(), self.param_count),
        );
        for h in &mut self.holders {
            self.ledger.send(
                epoch,
                Party::Server,
                Party::Cloudlet(h.id),
                CommCategory::ModelDown,
                pb,
            );
            h.params.as_mut_slice().copy_from_slice(&avg);
        }
        if let Some(g) = &mut self.global {
            g.params.as_mut_slice().copy_from_slice(&avg);
        }
        Ok(())
    }

    /// Send to every in-range neighbour, then average own and received.
    fn serverfree_exchange(&mut self, epoch: usize) -> Result<()> {
        let pb = self.param_bytes;
        let snapshot: Vec<Vec<f64>> = self.holders.iter().map(|h| h.params.flatten()).collect();
        for c in 0..self.holders.len() {
            for nb in self.partition.neighbours_of(c) {
                self.ledger.send(
                    epoch,
                    Party::Cloudlet(c),
                    Party::Cloudlet(nb),
                    CommCategory::ModelUp,
                    pb,
                );
            }
        }
        for c in 0..self.holders.len() {
            let mut group: Vec<&[f64]> = vec![&snapshot[c]];
            group.extend(
                self.partition
                    .neighbours_of(c)
                    .into_iter()
                    .map(|nb| snapshot[nb].as_slice()),
            );
            let avg = average_params(&group, &vec![1.0; group.len()])?;
            self.ledger.compute(
                epoch,
                Party::Cloudlet(c),
                FlopCategory::Aggregation,
                aggregation_event_flops(group.len(), self.param_count),
            );
            self.holders[c].params.as_mut_slice().copy_from_slice(&avg);
        }
        Ok(())
    }

    /// Start-of-epoch step: two buffered models are averaged, a single one
    /// is adopted, an empty buffer keeps the own model.
    fn gossip_aggregate(&mut self, epoch: usize) -> Result<()> {
        let mut sizes = Vec::with_capacity(self.holders.len());
        for (c, h) in self.holders.iter_mut().enumerate() {
            let buf = std::mem::take(&mut self.gossip_buffers[c]);
            sizes.push(buf.len());
            if buf.is_empty() {
                continue;
            }
            let group: Vec<&[f64]> = buf.iter().map(Vec::as_slice).collect();
            let avg = average_params(&group, &vec![1.0; group.len()])?;
            h.params.as_mut_slice().copy_from_slice(&avg);
            self.ledger.compute(
                epoch,
                Party::Cloudlet(c),
                FlopCategory::Aggregation,
                aggregation_event_flops(group.len(), self.param_count),
            );
        }
        self.gossip_buffer_sizes.push(sizes);
        Ok(())
    }

    /// Each cloudlet pushes its model into a uniformly drawn other
    /// cloudlet's FIFO buffer; delivery in sender order.
    fn gossip_send(&mut self, epoch: usize) {
        let k = self.holders.len();
        let mut peers = Vec::with_capacity(k);
        for c in 0..k {
            let mut r = rng::stream(self.cfg.seeds.gossip, &[epoch as u64, c as u64]);
            let draw = r.gen_range(0..k - 1);
            let peer = if draw >= c { draw + 1 } else { draw };
            self.ledger.send(
                epoch,
                Party::Cloudlet(c),
                Party::Cloudlet(peer),
                CommCategory::ModelUp,
                self.param_bytes,
            );
            let model = self.holders[c].params.flatten();
            let buf = &mut self.gossip_buffers[peer];
            if buf.len() == GOSSIP_BUFFER {
                buf.pop_front();
            }
            buf.push_back(model);
            peers.push(peer);
        }
        self.gossip_peers.push(peers);
    }

    fn validate(&mut self, epoch: usize) -> Result<()> {
        let (data, mask_zeros) = (self.data, self.cfg.mask_zeros);
        if let Some(g) = &self.global {
            let (sum, count) = g.loss_sums(data, Split::Val, mask_zeros)?;
            self.push_val(epoch, GLOBAL.to_string(), sum, count);
            return Ok(());
        }
        let sums: Vec<(f64, usize)> = self
            .holders
            .par_iter()
            .map(|h| h.loss_sums(data, Split::Val, mask_zeros))
            .collect::<Result<_>>()?;
        if self.cfg.setup.is_distributed() {
            for (h, &(sum, count)) in self.holders.iter().zip(&sums) {
                if count > 0 {
                    self.val_losses.push(LossEntry {
                        epoch,
                        holder: cloudlet_name(h.id),
                        loss: sum / count as f64,
                    });
                }
            }
        }
        let sum = sums.iter().map(|s| s.0).sum();
        let count = sums.iter().map(|s| s.1).sum();
        self.push_val(epoch, GLOBAL.to_string(), sum, count);
        Ok(())
    }

    fn push_val(&mut self, epoch: usize, holder: String, sum: f64, count: usize) {
        let loss = if count == 0 {
            f64::NAN
        } else {
            sum / count as f64
        };
        self.val_losses.push(LossEntry {
            epoch,
            holder,
            loss,
        });
    }

    /// Test metrics in miles/h. Single-model setups report pooled global
    /// metrics; per-cloudlet models are combined by node-count weighting.
    fn evaluate(&self) -> Result<Vec<MetricReport>> {
        let single = match self.cfg.setup {
            Setup::Centralized => Some(&self.holders[0]),
            Setup::TraditionalFl => self.global.as_ref(),
            _ => None,
        };
        let k = self.partition.n_cloudlets();
        let mut per: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); k];
        let mut pooled = (Vec::new(), Vec::new());
        let norm = self.data.normalizer;
        let data = self.data;
        let mask_zeros = self.cfg.mask_zeros;
        let holders: Vec<&Holder> = match single {
            Some(h) => vec![h],
            None => self.holders.iter().collect(),
        };
        for h in holders {
            h.predict(
                data,
                Split::Test,
                |samples, pred, mask| {
                    for (bi, &s) in samples.iter().enumerate() {
                        let raw = data.raw_target(s);
                        for (j, &v) in h.nodes.iter().enumerate() {
                            if !mask[[bi, j]] {
                                continue;
                            }
                            let (t, p) = (raw[v], norm.invert(pred[[bi, j]]));
                            let c = self.partition.owner[v];
                            per[c].0.push(t);
                            per[c].1.push(p);
                            pooled.0.push(t);
                            pooled.1.push(p);
                        }
                    }
                },
                mask_zeros,
            )?;
        }
        let horizon = data.horizon_steps;
        let samples = data.range(Split::Test).len();
        let denom = self.cfg.wmape_denominator;
        let mut reports = Vec::with_capacity(k);
        let mut counts = Vec::with_capacity(k);
        for (c, (t, p)) in per.iter().enumerate() {
            if t.is_empty() {
                continue;
            }
            let nodes = self.partition.owned[c].len();
            reports.push(MetricReport::compute(
                Scope::Cloudlet(c),
                horizon,
                t,
                p,
                samples,
                nodes,
                denom,
            )?);
            counts.push(nodes);
        }
        let global = if single.is_some() {
            let n = self.partition.n_sensors();
            MetricReport::compute(
                Scope::Global,
                horizon,
                &pooled.0,
                &pooled.1,
                samples,
                n,
                denom,
            )?
        } else {
            aggregate_weighted(&reports, &counts)?
        };
        let mut out = vec![global];
        out.extend(reports);
        Ok(out)
    }

    fn final_models(&self) -> Vec<HolderModel> {
        match (&self.global, self.cfg.setup) {
            (Some(g), _) => vec![HolderModel {
                holder: GLOBAL.into(),
                values: g.params.flatten(),
            }],
            (None, Setup::Centralized) => vec![HolderModel {
                holder: GLOBAL.into(),
                values: self.holders[0].params.flatten(),
            }],
            _ => self
                .holders
                .iter()
                .map(|h| HolderModel {
                    holder: cloudlet_name(h.id),
                    values: h.params.flatten(),
                })
                .collect(),
        }
    }
}
