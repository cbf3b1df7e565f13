//! ST-GCN: stacked spatio-temporal blocks (gated temporal conv, Chebyshev
//! graph conv, gated temporal conv) followed by a temporal collapse and a
//! per-node linear read-out. Parameters live in one flat vector so models
//! can be averaged and byte-counted directly.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;

use std::sync::Arc;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use loss::mae_loss;
pub use network::{forward, forward_backward, Mode, Prediction};
pub use optim::{adam_step, OptimizerState};

/// Bytes per transferred parameter (single-precision payload).
pub const BYTES_PER_VALUE: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub st_blocks: usize,
    pub cheb_k: usize,
    pub temporal_kernel: usize,
    /// Per-block widths: first temporal conv, graph conv, second temporal conv.
    pub channels: [usize; 3],
    /// Width of the collapsing temporal conv in the output head.
    pub head_channels: usize,
    pub input_window: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            st_blocks: 2,
            cheb_k: 3,
            temporal_kernel: 3,
            channels: [64, 16, 64],
            head_channels: 16,
            input_window: 12,
            dropout: 0.5,
        }
    }
}

impl ModelConfig {
    /// Time steps left after all ST-blocks; the head kernel size.
    pub fn remaining_time(&self) -> Option<usize> {
        let shrink = self.st_blocks * 2 * self.temporal_kernel.checked_sub(1)?;
        self.input_window.checked_sub(shrink).filter(|&t| t >= 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.st_blocks == 0 || self.cheb_k == 0 || self.temporal_kernel == 0 {
            return Err(Error::input(
                "st_blocks, cheb_k and temporal_kernel must be positive",
            ));
        }
        if self.channels.iter().any(|&c| c == 0) || self.head_channels == 0 {
            return Err(Error::input("channel widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::input(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.remaining_time().is_none() {
            return Err(Error::input(format!(
                "input window {} too short for {} blocks with temporal kernel {}",
                self.input_window, self.st_blocks, self.temporal_kernel
            )));
        }
        Ok(())
    }

    fn block_in(&self, block: usize) -> usize {
        if block == 0 {
            1
        } else {
            self.channels[2]
        }
    }
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub is_bias: bool,
    /// Glorot fan-in / fan-out.
    fans: (usize, usize),
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Canonical tensor order. Per block: temporal conv 1 weight/bias, graph
/// conv weight/bias, temporal conv 2 weight/bias; then the head's temporal
/// conv weight/bias and linear weight/bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

pub(crate) const PER_BLOCK: usize = 6;

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize, fans: (usize, usize), is_bias| {
            tensors.push(TensorSpec {
                name,
                rows,
                cols,
                offset,
                is_bias,
                fans,
            });
            offset += rows * cols;
        };
        let kt = cfg.temporal_kernel;
        let [c1, c2, c3] = cfg.channels;
        for b in 0..cfg.st_blocks {
            let cin = cfg.block_in(b);
            push(
                format!("block{b}.tconv1.weight"),
                kt * cin,
                2 * c1,
                (kt * cin, kt * 2 * c1),
                false,
            );
            push(format!("block{b}.tconv1.bias"), 1, 2 * c1, (0, 0), true);
            push(
                format!("block{b}.cheb.weight"),
                cfg.cheb_k * c1,
                c2,
                (c1, c2),
                false,
            );
            push(format!("block{b}.cheb.bias"), 1, c2, (0, 0), true);
            push(
                format!("block{b}.tconv2.weight"),
                kt * c2,
                2 * c3,
                (kt * c2, kt * 2 * c3),
                false,
            );
            push(format!("block{b}.tconv2.bias"), 1, 2 * c3, (0, 0), true);
        }
        let ko = cfg.remaining_time().unwrap_or(1);
        let hc = cfg.head_channels;
        push(
            "head.tconv.weight".into(),
            ko * c3,
            2 * hc,
            (ko * c3, ko * 2 * hc),
            false,
        );
        push("head.tconv.bias".into(), 1, 2 * hc, (0, 0), true);
        push("head.linear.weight".into(), hc, 1, (hc, 1), false);
        push("head.linear.bias".into(), 1, 1, (0, 0), true);
        Layout {
            tensors,
            total: offset,
        }
    }
}

/// All model weights as one flat vector with a shared layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let layout = Arc::new(Layout::new(config));
        let values = vec![0.0; layout.total];
        Self {
            config: config.clone(),
            layout,
            values,
        }
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let mut rng = rng::stream(seed, &[0x1417]);
        let layout = p.layout.clone();
        for spec in &layout.tensors {
            if spec.is_bias {
                continue;
            }
            let (fan_in, fan_out) = spec.fans;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut p.values[spec.offset..spec.offset + spec.len()] {
                *v = rng.gen_range(-limit..=limit);
            }
        }
        Ok(p)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn param_bytes(&self) -> u64 {
        param_bytes(self.param_count())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn unflatten(config: &ModelConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config);
        if values.len() != p.values.len() {
            return Err(Error::shape(
                "flat parameter vector",
                p.values.len(),
                values.len(),
            ));
        }
        p.values = values;
        Ok(p)
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::shape(
                "flat parameter vector",
                self.values.len(),
                values.len(),
            ));
        }
        Ok(Self {
            config: self.config.clone(),
            layout: self.layout.clone(),
            values,
        })
    }

    pub fn tensor(&self, index: usize) -> &[f64] {
        let s = &self.layout.tensors[index];
        &self.values[s.offset..s.offset + s.len()]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut [f64] {
        let s = self.layout.tensors[index].clone();
        &mut self.values[s.offset..s.offset + s.len()]
    }

    pub fn matrix(&self, index: usize) -> ArrayView2<'_, f64> {
        let s = &self.layout.tensors[index];
        ArrayView2::from_shape((s.rows, s.cols), self.tensor(index)).expect("layout shape")
    }

    pub fn named(&self, name: &str) -> Option<&[f64]> {
        let i = self.layout.tensors.iter().position(|t| t.name == name)?;
        Some(self.tensor(i))
    }
}

pub fn param_bytes(param_count: usize) -> u64 {
    BYTES_PER_VALUE * param_count as u64
}

/// Convex combination of flat models; weights are normalized internally.
pub fn average_params(models: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    let first = models
        .first()
        .ok_or_else(|| Error::input("cannot average zero models"))?;
    if weights.len() != models.len() {
        return Err(Error::shape(
            "averaging weights",
            models.len(),
            weights.len(),
        ));
    }
    for m in models {
        if m.len() != first.len() {
            return Err(Error::shape("averaged model length", first.len(), m.len()));
        }
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::input("averaging weights must be non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::input("averaging weights sum to zero"));
    }
    if models.len() == 1 {
        return Ok(first.to_vec());
    }
    let mut out = vec![0.0; first.len()];
    for (m, w) in models.iter().zip(weights) {
        let w = w / total;
        for (o, v) in out.iter_mut().zip(m.iter()) {
            *o += w * v;
        }
    }
    // Coordinates on which every model agrees are returned untouched.
    for (i, o) in out.iter_mut().enumerate() {
        let v = first[i];
        if models.iter().all(|m| m[i] == v) {
            *o = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_remaining_time_is_four() {
        assert_eq!(ModelConfig::default().remaining_time(), Some(4));
        let bad = ModelConfig {
            input_window: 8,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = ModelConfig::default();
        let a = ModelParams::init(&cfg, 3).unwrap();
        let b = ModelParams::init(&cfg, 3).unwrap();
        let c = ModelParams::init(&cfg, 4).unwrap();
        assert_eq!(a, b);
        let diff = a
            .as_slice()
            .iter()
            .zip(c.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff > 0.0);
        for (i, spec) in a.layout().tensors.iter().enumerate() {
            if spec.is_bias {
                assert!(a.tensor(i).iter().all(|&v| v == 0.0), "{}", spec.name);
            }
        }
    }

    #[test]
    fn param_bytes_convention() {
        assert_eq!(param_bytes(10), 40);
        let p = ModelParams::init(&ModelConfig::default(), 0).unwrap();
        let summed: usize = p.layout().tensors.iter().map(TensorSpec::len).sum();
        assert_eq!(p.param_bytes(), 4 * summed as u64);
        assert_eq!(p.flatten().len(), summed);
    }

    #[test]
    fn averaging_examples() {
        let v = vec![1.5, -2.0, 3.25];
        assert_eq!(average_params(&[&v, &v], &[0.3, 0.7]).unwrap(), v);
        let a = vec![2.0; 4];
        let b = vec![4.0; 4];
        assert_eq!(
            average_params(&[&a, &b], &[0.5, 0.5]).unwrap(),
            vec![3.0; 4]
        );
        assert!(average_params(&[&a, &v], &[0.5, 0.5]).is_err());
        assert!(average_params(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn flatten_roundtrip(seed in 0u64..1000) {
            let cfg = ModelConfig { channels: [4, 3, 4], head_channels: 2, ..Default::default() };
            let p = ModelParams::init(&cfg, seed).unwrap();
            let q = ModelParams::unflatten(&cfg, p.flatten()).unwrap();
            prop_assert_eq!(&p, &q);
        }

        #[test]
        fn average_matches_direct_sum(
            models in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 16), 1..6),
            raw_w in prop::collection::vec(0.01f64..5.0, 6),
        ) {
            let w = &raw_w[..models.len()];
            let refs: Vec<&[f64]> = models.iter().map(|m| m.as_slice()).collect();
            let got = average_params(&refs, w).unwrap();
            let total: f64 = w.iter().sum();
            for i in 0..16 {
                let direct: f64 = models.iter().zip(w).map(|(m, wi)| wi / total * m[i]).sum();
                prop_assert!((got[i] - direct).abs() < 1e-12);
            }
        }
    }
}
