//! Desk-scale synthetic traffic: sensors scattered in a square box and speeds
//! made of a daily cycle, a spatially diffused AR(1) component and white
//! noise.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::SpeedSeries;
use crate::error::{Error, Result};
use crate::graph::{Coord, SensorGraph};
use crate::rng;

/// Steps per day at a 5-minute interval.
pub const DAY_STEPS: usize = 288;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub sensors: usize,
    pub timesteps: usize,
    pub seed: u64,
    pub box_km: f64,
    pub origin: Coord,
    pub base_mph: f64,
    pub daily_amplitude_mph: f64,
    /// Scales both stochastic components; 0 gives an exactly periodic series.
    pub noise: f64,
    pub correlated_std_mph: f64,
    pub white_std_mph: f64,
    pub ar_coefficient: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            sensors: 40,
            timesteps: 6000,
            seed: 0,
            box_km: 30.0,
            origin: Coord::new(34.05, -118.25),
            base_mph: 60.0,
            daily_amplitude_mph: 15.0,
            noise: 1.0,
            correlated_std_mph: 1.5,
            white_std_mph: 1.0,
            ar_coefficient: 0.95,
        }
    }
}

/// Sensor positions only; shares the seed stream with [`synth_generate`].
pub fn synth_coords(p: &SynthParams) -> Vec<Coord> {
    let mut rng = rng::stream(p.seed, &[0]);
    (0..p.sensors)
        .map(|_| {
            let x = rng.gen::<f64>() * p.box_km;
            let y = rng.gen::<f64>() * p.box_km;
            p.origin.offset_km(x, y)
        })
        .collect()
}

/// Generates sensors and speeds. The graph is built with `sigma2`/`epsilon`
/// and its weights diffuse the correlated component.
pub fn synth_generate(
    p: &SynthParams,
    sigma2: Option<f64>,
    epsilon: f64,
) -> Result<(SensorGraph, SpeedSeries)> {
    if p.sensors < 2 {
        return Err(Error::input("synthetic data needs at least 2 sensors"));
    }
    if p.timesteps < 300 {
        return Err(Error::input("synthetic data needs at least 300 timesteps"));
    }
    let n = p.sensors;
    let ids: Vec<String> = (0..n).map(|i| format!("s{i:03}")).collect();
    let coords = synth_coords(p);
    let graph = SensorGraph::build(ids.clone(), coords, None, sigma2, epsilon)?;

    let mut rng = rng::stream(p.seed, &[1]);
    let offset: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() - 0.5) * 10.0).collect();
    let amp: Vec<f64> = (0..n)
        .map(|_| p.daily_amplitude_mph * (0.7 + 0.6 * rng.gen::<f64>()))
        .collect();
    let phase: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() - 0.5) * 0.6).collect();

    // Row-normalized (I + W) smoothing operator.
    let mut diffuse = graph.weights.clone();
    for i in 0..n {
        diffuse[[i, i]] += 1.0;
        let row_sum: f64 = diffuse.row(i).sum();
        diffuse.row_mut(i).mapv_inplace(|v| v / row_sum);
    }

    let mut noise_rng = rng::stream(p.seed, &[2]);
    let innovation = p.correlated_std_mph * (1.0 - p.ar_coefficient.powi(2)).max(0.0).sqrt();
    let mut state = vec![0.0; n];
    let mut values = Array2::zeros((p.timesteps, n));
    for t in 0..p.timesteps {
        let angle = 2.0 * std::f64::consts::PI * (t % DAY_STEPS) as f64 / DAY_STEPS as f64;
        for s in state.iter_mut() {
            let xi: f64 = noise_rng.sample(StandardNormal);
            *s = p.ar_coefficient * *s + innovation * xi;
        }
        let smoothed = diffuse.dot(&ndarray::ArrayView1::from(&state));
        for i in 0..n {
            let white: f64 = noise_rng.sample(StandardNormal);
            let v = p.base_mph
                + offset[i]
                + amp[i] * (angle + phase[i]).sin()
                + p.noise * (smoothed[i] + p.white_std_mph * white);
            values[[t, i]] = v.max(0.0);
        }
    }
    let series = SpeedSeries::new(values, ids)?;
    Ok((graph, series))
}
