use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::layers::{Act, ChebConv, Dropout, Glu, TemporalConv};
use super::loss::mae_loss;
use super::{ModelParams, PER_BLOCK};
use crate::error::{Error, Result};
use crate::rng;

/// Dropout is only active in training mode, drawn from the given seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

/// `batch × nodes` predictions on the normalized scale.
pub type Prediction = Array2<f64>;

struct BlockTape {
    tconv1: TemporalConv,
    glu1: Glu,
    cheb: ChebConv,
    tconv2: TemporalConv,
    glu2: Glu,
    dropout: Dropout,
}

/// Everything the backward pass needs from one forward pass.
pub struct Tape {
    blocks: Vec<BlockTape>,
    head_conv: TemporalConv,
    head_glu: Glu,
    head_input: Array2<f64>,
    nodes: usize,
    batch: usize,
}

fn check_inputs(params: &ModelParams, input: &Act, basis: &[Array2<f64>]) -> Result<()> {
    let cfg = &params.config;
    if input.channels() != 1 {
        return Err(Error::shape("input channels", 1, input.channels()));
    }
    if input.time != cfg.input_window {
        return Err(Error::shape("input window", cfg.input_window, input.time));
    }
    if basis.len() != cfg.cheb_k {
        return Err(Error::shape(
            "Chebyshev basis order count",
            cfg.cheb_k,
            basis.len(),
        ));
    }
    if let Some(t) = basis
        .iter()
        .find(|t| t.nrows() != input.nodes || t.ncols() != input.nodes)
    {
        return Err(Error::shape("basis nodes", input.nodes, t.nrows()));
    }
    Ok(())
}

/// Forward pass keeping the intermediate state for [`backward`].
pub fn forward_with_tape(
    params: &ModelParams,
    input: &Act,
    basis: &[Array2<f64>],
    mode: Mode,
) -> Result<(Prediction, Tape)> {
    check_inputs(params, input, basis)?;
    let cfg = &params.config;
    let kt = cfg.temporal_kernel;
    let mut x = input.clone();
    let mut blocks = Vec::with_capacity(cfg.st_blocks);
    for b in 0..cfg.st_blocks {
        let base = b * PER_BLOCK;
        let (y, tconv1) =
            TemporalConv::forward(&x, params.matrix(base), params.tensor(base + 1), kt)?;
        let (y, glu1) = Glu::forward(y)?;
        let (y, cheb) =
            ChebConv::forward(&y, basis, params.matrix(base + 2), params.tensor(base + 3))?;
        let (y, tconv2) =
            TemporalConv::forward(&y, params.matrix(base + 4), params.tensor(base + 5), kt)?;
        let (y, glu2) = Glu::forward(y)?;
        let (y, dropout) = match mode {
            Mode::Train { seed } => {
                let mut r: ChaCha8Rng = rng::stream(seed, &[b as u64]);
                Dropout::forward(y, cfg.dropout, Some(&mut r))
            }
            Mode::Eval => Dropout::forward::<ChaCha8Rng>(y, cfg.dropout, None),
        };
        blocks.push(BlockTape {
            tconv1,
            glu1,
            cheb,
            tconv2,
            glu2,
            dropout,
        });
        x = y;
    }
    let head = cfg.st_blocks * PER_BLOCK;
    let (y, head_conv) =
        TemporalConv::forward(&x, params.matrix(head), params.tensor(head + 1), x.time)?;
    let (y, head_glu) = Glu::forward(y)?;
    let lin = params.tensor(head + 2);
    let lin_bias = params.tensor(head + 3)[0];
    let (nodes, batch) = (input.nodes, input.batch);
    let mut pred = Array2::zeros((batch, nodes));
    for node in 0..nodes {
        for b in 0..batch {
            let row = y.data.row(node * batch + b);
            pred[[b, node]] = row.iter().zip(lin).map(|(a, w)| a * w).sum::<f64>() + lin_bias;
        }
    }
    Ok((
        pred,
        Tape {
            blocks,
            head_conv,
            head_glu,
            head_input: y.data,
            nodes,
            batch,
        },
    ))
}

pub fn forward(
    params: &ModelParams,
    input: &Act,
    basis: &[Array2<f64>],
    mode: Mode,
) -> Result<Prediction> {
    forward_with_tape(params, input, basis, mode).map(|(p, _)| p)
}

/// Gradient of a scalar loss with respect to every parameter, given the
/// loss gradient `d_pred` on the predictions. Returned in the flat layout.
pub fn backward(
    params: &ModelParams,
    tape: &Tape,
    basis: &[Array2<f64>],
    d_pred: &Prediction,
) -> Vec<f64> {
    let cfg = &params.config;
    let mut grads = ModelParams::zeros(cfg);
    let head = cfg.st_blocks * PER_BLOCK;
    let hc = cfg.head_channels;
    let lin = params.tensor(head + 2);

    let rows = tape.nodes * tape.batch;
    let mut d_head = Array2::zeros((rows, hc));
    let mut d_lin = vec![0.0; hc];
    let mut d_lin_bias = 0.0;
    for node in 0..tape.nodes {
        for b in 0..tape.batch {
            let g = d_pred[[b, node]];
            let r = node * tape.batch + b;
            d_lin_bias += g;
            for c in 0..hc {
                d_lin[c] += g * tape.head_input[[r, c]];
                d_head[[r, c]] = g * lin[c];
            }
        }
    }
    grads.tensor_mut(head + 2).copy_from_slice(&d_lin);
    grads.tensor_mut(head + 3)[0] = d_lin_bias;

    let d = tape.head_glu.backward(&d_head);
    let (mut d_x, d_w, d_b) = tape.head_conv.backward(&d, params.matrix(head));
    write(&mut grads, head, &d_w, &d_b);

    for b in (0..cfg.st_blocks).rev() {
        let base = b * PER_BLOCK;
        let t = &tape.blocks[b];
        let d = t.dropout.backward(d_x);
        let d = t.glu2.backward(&d);
        let (d, d_w, d_b) = t.tconv2.backward(&d, params.matrix(base + 4));
        write(&mut grads, base + 4, &d_w, &d_b);
        let (d, d_w, d_b) = t.cheb.backward(&d, basis, params.matrix(base + 2));
        write(&mut grads, base + 2, &d_w, &d_b);
        let d = t.glu1.backward(&d);
        let (d, d_w, d_b) = t.tconv1.backward(&d, params.matrix(base));
        write(&mut grads, base, &d_w, &d_b);
        d_x = d;
    }
    grads.flatten()
}

fn write(grads: &mut ModelParams, index: usize, d_w: &Array2<f64>, d_b: &[f64]) {
    grads
        .tensor_mut(index)
        .iter_mut()
        .zip(d_w.iter())
        .for_each(|(g, v)| *g = *v);
    grads.tensor_mut(index + 1).copy_from_slice(d_b);
}

/// MAE loss and its parameter gradient for one batch. `mask` selects the
/// `(sample, node)` entries that count (owned nodes, optionally non-zero
/// targets).
pub fn forward_backward(
    params: &ModelParams,
    input: &Act,
    basis: &[Array2<f64>],
    mode: Mode,
    target: &Array2<f64>,
    mask: &Array2<bool>,
) -> Result<(f64, Vec<f64>)> {
    let (pred, tape) = forward_with_tape(params, input, basis, mode)?;
    let (loss, d_pred) = mae_loss(&pred, target, Some(mask))?;
    Ok((loss, backward(params, &tape, basis, &d_pred)))
}

/// Multiply-accumulate count of one forward pass for one sample on a graph
/// of `nodes` nodes, following the dense kernels used above.
pub fn forward_macs(cfg: &super::ModelConfig, nodes: usize) -> u64 {
    let n = nodes as u64;
    let kt = cfg.temporal_kernel as u64;
    let k = cfg.cheb_k as u64;
    let [c1, c2, c3] = cfg.channels.map(|c| c as u64);
    let mut t = cfg.input_window as u64;
    let mut macs = 0;
    for b in 0..cfg.st_blocks {
        let cin = if b == 0 { 1 } else { c3 };
        t -= kt - 1;
        macs += n * t * kt * cin * 2 * c1;
        macs += n * t * k * c1 * c2;
        macs += (k - 1) * n * n * t * c2;
        t -= kt - 1;
        macs += n * t * kt * c2 * 2 * c3;
    }
    let hc = cfg.head_channels as u64;
    macs += n * t * c3 * 2 * hc;
    macs += n * hc;
    macs
}
