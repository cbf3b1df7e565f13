#![allow(dead_code)]

use cloudlet_stgcn::graph::{cheb_basis, Coord, SensorGraph};
use cloudlet_stgcn::model::layers::Act;
use cloudlet_stgcn::model::{self, Mode, ModelConfig, ModelParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        channels: [4, 3, 4],
        head_channels: 3,
        ..Default::default()
    }
}

/// Random planar graph of `n` sensors in a `box_km` square.
pub fn random_graph(n: usize, box_km: f64, epsilon: f64, seed: u64) -> SensorGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = Coord::new(34.0, -118.0);
    let coords: Vec<Coord> = (0..n)
        .map(|_| origin.offset_km(rng.gen::<f64>() * box_km, rng.gen::<f64>() * box_km))
        .collect();
    let ids = (0..n).map(|i| format!("n{i}")).collect();
    SensorGraph::build(ids, coords, None, None, epsilon).unwrap()
}

pub fn random_input(nodes: usize, batch: usize, seed: u64) -> Act {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array2::from_shape_fn((nodes * batch * 12, 1), |_| rng.gen_range(-1.5..1.5));
    Act::new(data, nodes, batch, 12).unwrap()
}

pub fn basis_for(graph: &SensorGraph, k: usize) -> Vec<Array2<f64>> {
    let lt = graph.scaled_laplacian().unwrap();
    cheb_basis(&lt.matrix, k).unwrap()
}

/// MAE of the model on a fixed batch, for finite differences.
pub fn loss_at(
    params: &ModelParams,
    input: &Act,
    basis: &[Array2<f64>],
    mode: Mode,
    target: &Array2<f64>,
) -> f64 {
    let pred = model::forward(params, input, basis, mode).unwrap();
    model::mae_loss(&pred, target, None).unwrap().0
}

/// Largest per-scalar relative error between the analytic gradient and
/// central differences, with the scalar's name.
pub fn max_gradient_error(
    params: &ModelParams,
    input: &Act,
    basis: &[Array2<f64>],
    mode: Mode,
    target: &Array2<f64>,
    delta: f64,
) -> (f64, String) {
    let mask = Array2::from_elem(target.dim(), true);
    let (_, grads) = model::forward_backward(params, input, basis, mode, target, &mask).unwrap();
    let mut worst = (0.0, String::new());
    for spec in params.layout().tensors.clone() {
        for i in 0..spec.len() {
            let idx = spec.offset + i;
            let mut plus = params.clone();
            plus.as_mut_slice()[idx] += delta;
            let mut minus = params.clone();
            minus.as_mut_slice()[idx] -= delta;
            let numeric = (loss_at(&plus, input, basis, mode, target)
                - loss_at(&minus, input, basis, mode, target))
                / (2.0 * delta);
            let analytic = grads[idx];
            let denom = analytic.abs().max(numeric.abs()).max(1e-7);
            let rel = (analytic - numeric).abs() / denom;
            if rel > worst.0 {
                worst = (
                    rel,
                    format!("{}[{i}] analytic {analytic} numeric {numeric}", spec.name),
                );
            }
        }
    }
    worst
}

use cloudlet_stgcn::dataset::{make_windows, SpeedSeries, WindowedDataset};
use cloudlet_stgcn::partition::{hex_layout, CloudletPartition};
use cloudlet_stgcn::protocols::Seeds;
use cloudlet_stgcn::synth::{synth_generate, SynthParams};

pub fn seeds(base: u64) -> Seeds {
    Seeds {
        init: base,
        shuffle: base + 1,
        gossip: base + 2,
        dropout: base + 3,
    }
}

/// Sensors in a `box_km` square covered by a 7-cloudlet hex layout.
pub struct Scenario {
    pub params: SynthParams,
    pub graph: SensorGraph,
    pub series: SpeedSeries,
    pub positions: Vec<Coord>,
}

impl Scenario {
    pub fn new(
        sensors: usize,
        timesteps: usize,
        box_km: f64,
        sigma2: Option<f64>,
        epsilon: f64,
        seed: u64,
    ) -> Self {
        let params = SynthParams {
            sensors,
            timesteps,
            box_km,
            seed,
            ..Default::default()
        };
        let (graph, series) = synth_generate(&params, sigma2, epsilon).unwrap();
        let center = params.origin.offset_km(box_km / 2.0, box_km / 2.0);
        let positions = hex_layout(center, 0.375 * box_km);
        Self {
            params,
            graph,
            series,
            positions,
        }
    }

    pub fn partition(&self, hops: usize) -> CloudletPartition {
        CloudletPartition::build(&self.graph, self.positions.clone(), 8.0, hops).unwrap()
    }

    pub fn windows(&self, horizon: usize) -> WindowedDataset {
        make_windows(&self.series, horizon).unwrap()
    }
}
