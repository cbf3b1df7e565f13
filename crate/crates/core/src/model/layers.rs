//! Differentiable building blocks. Activations are stored node-major as a
//! matrix whose rows enumerate `(node, batch, time)` and whose columns are
//! channels, so temporal windows are contiguous and graph propagation is a
//! single `n × n` product over a `(n, batch·time·channels)` view.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Activation tensor of shape `(nodes, batch, time, channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub data: Array2<f64>,
    pub nodes: usize,
    pub batch: usize,
    pub time: usize,
}

impl Act {
    pub fn new(data: Array2<f64>, nodes: usize, batch: usize, time: usize) -> Result<Self> {
        let rows = nodes * batch * time;
        if data.nrows() != rows {
            return Err(Error::shape("activation rows", rows, data.nrows()));
        }
        Ok(Self {
            data,
            nodes,
            batch,
            time,
        })
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    fn rows(&self) -> usize {
        self.nodes * self.batch * self.time
    }
}

fn add_bias(out: &mut Array2<f64>, bias: &[f64]) {
    for mut row in out.rows_mut() {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn bias_grad(d: &Array2<f64>) -> Vec<f64> {
    d.sum_axis(Axis(0)).to_vec()
}

/// 1-D convolution along time with `kernel` taps and no padding.
/// `weight` is `(kernel·c_in, c_out)` with tap-major rows.
pub struct TemporalConv {
    pub kernel: usize,
    cols: Array2<f64>,
    in_time: usize,
    in_channels: usize,
}

impl TemporalConv {
    pub fn forward(
        x: &Act,
        weight: ArrayView2<'_, f64>,
        bias: &[f64],
        kernel: usize,
    ) -> Result<(Act, TemporalConv)> {
        let c_in = x.channels();
        if weight.nrows() != kernel * c_in {
            return Err(Error::shape(
                "temporal conv weight rows",
                kernel * c_in,
                weight.nrows(),
            ));
        }
        if x.time < kernel {
            return Err(Error::shape("temporal length", kernel, x.time));
        }
        let t_out = x.time - kernel + 1;
        let series = x.nodes * x.batch;
        let width = kernel * c_in;
        let src = x.data.as_slice().expect("standard layout");
        let mut cols = Array2::zeros((series * t_out, width));
        {
            let dst = cols.as_slice_mut().expect("standard layout");
            for s in 0..series {
                for t in 0..t_out {
                    let from = (s * x.time + t) * c_in;
                    let to = (s * t_out + t) * width;
                    dst[to..to + width].copy_from_slice(&src[from..from + width]);
                }
            }
        }
        let mut out = cols.dot(&weight);
        add_bias(&mut out, bias);
        let act = Act::new(out, x.nodes, x.batch, t_out)?;
        Ok((
            act,
            TemporalConv {
                kernel,
                cols,
                in_time: x.time,
                in_channels: c_in,
            },
        ))
    }

    /// Returns `(d_input, d_weight, d_bias)`.
    pub fn backward(
        &self,
        d_out: &Array2<f64>,
        weight: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
        let d_w = self.cols.t().dot(d_out);
        let d_b = bias_grad(d_out);
        let d_cols = d_out.dot(&weight.t());
        let width = self.kernel * self.in_channels;
        let t_out = self.in_time - self.kernel + 1;
        let series = self.cols.nrows() / t_out;
        let mut d_x = Array2::zeros((series * self.in_time, self.in_channels));
        {
            let dst = d_x.as_slice_mut().expect("standard layout");
            let src = d_cols.as_slice().expect("standard layout");
            for s in 0..series {
                for t in 0..t_out {
                    let from = (s * t_out + t) * width;
                    let to = (s * self.in_time + t) * self.in_channels;
                    for (d, v) in dst[to..to + width].iter_mut().zip(&src[from..from + width]) {
                        *d += v;
                    }
                }
            }
        }
        (d_x, d_w, d_b)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gated linear unit over the channel axis: the first half is the value, the
/// second half the sigmoid gate.
pub struct Glu {
    value: Array2<f64>,
    gate: Array2<f64>,
}

impl Glu {
    pub fn forward(x: Act) -> Result<(Act, Glu)> {
        let c2 = x.channels();
        if c2 % 2 != 0 {
            return Err(Error::shape("GLU channels (even)", c2 + 1, c2));
        }
        let c = c2 / 2;
        let rows = x.data.nrows();
        let src = x.data.as_slice().expect("standard layout");
        let mut value = Vec::with_capacity(rows * c);
        let mut gate = Vec::with_capacity(rows * c);
        let mut out = Vec::with_capacity(rows * c);
        for row in src.chunks_exact(c2) {
            let (v, g) = row.split_at(c);
            for (&v, &g) in v.iter().zip(g) {
                let s = sigmoid(g);
                value.push(v);
                gate.push(s);
                out.push(v * s);
            }
        }
        let shape = (rows, c);
        let out = Array2::from_shape_vec(shape, out).expect("GLU shape");
        Ok((
            Act::new(out, x.nodes, x.batch, x.time)?,
            Glu {
                value: Array2::from_shape_vec(shape, value).expect("GLU shape"),
                gate: Array2::from_shape_vec(shape, gate).expect("GLU shape"),
            },
        ))
    }

    pub fn backward(&self, d_out: &Array2<f64>) -> Array2<f64> {
        let (rows, c) = self.value.dim();
        let mut d = Vec::with_capacity(rows * 2 * c);
        let value = self.value.as_slice().expect("standard layout");
        let gate = self.gate.as_slice().expect("standard layout");
        let d_out = d_out.as_standard_layout();
        let d_out = d_out.as_slice().expect("standard layout");
        for r in 0..rows {
            let span = r * c..(r + 1) * c;
            let (g_out, v, s) = (&d_out[span.clone()], &value[span.clone()], &gate[span]);
            d.extend(g_out.iter().zip(s).map(|(g, s)| g * s));
            d.extend(
                g_out
                    .iter()
                    .zip(v)
                    .zip(s)
                    .map(|((g, v), s)| g * v * s * (1.0 - s)),
            );
        }
        Array2::from_shape_vec((rows, 2 * c), d).expect("GLU shape")
    }
}

/// Chebyshev graph convolution `Σ_k T_k · X · Θ_k + b`.
/// `weight` stacks the `K` matrices `Θ_k` (each `c_in × c_out`) vertically.
pub struct ChebConv {
    input: Array2<f64>,
}

impl ChebConv {
    pub fn forward(
        x: &Act,
        basis: &[Array2<f64>],
        weight: ArrayView2<'_, f64>,
        bias: &[f64],
    ) -> Result<(Act, ChebConv)> {
        let k = basis.len();
        let c_in = x.channels();
        if weight.nrows() != k * c_in {
            return Err(Error::shape(
                "Chebyshev weight rows",
                k * c_in,
                weight.nrows(),
            ));
        }
        for t in basis {
            if t.nrows() != x.nodes || t.ncols() != x.nodes {
                return Err(Error::shape("Chebyshev basis size", x.nodes, t.nrows()));
            }
        }
        let c_out = weight.ncols();
        let n = x.nodes;
        let width = x.rows() / n * c_out;
        let mut out = Array2::<f64>::zeros((n, width));
        for (order, t_k) in basis.iter().enumerate() {
            let theta = weight.slice(ndarray::s![order * c_in..(order + 1) * c_in, ..]);
            let z = x.data.dot(&theta);
            let z = z
                .into_shape_with_order((n, width))
                .expect("node-major rows");
            if order == 0 && is_identity(t_k) {
                out += &z;
            } else {
                ndarray::linalg::general_mat_mul(1.0, t_k, &z, 1.0, &mut out);
            }
        }
        let mut out = out
            .into_shape_with_order((x.rows(), c_out))
            .expect("node-major rows");
        add_bias(&mut out, bias);
        Ok((
            Act::new(out, x.nodes, x.batch, x.time)?,
            ChebConv {
                input: x.data.clone(),
            },
        ))
    }

    pub fn backward(
        &self,
        d_out: &Array2<f64>,
        basis: &[Array2<f64>],
        weight: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
        let c_in = self.input.ncols();
        let (rows, c_out) = d_out.dim();
        let n = basis[0].nrows();
        let width = rows / n * c_out;
        let d_view = d_out
            .view()
            .into_shape_with_order((n, width))
            .expect("node-major rows");
        let mut d_x = Array2::zeros((rows, c_in));
        let mut d_w = Array2::zeros((basis.len() * c_in, c_out));
        for (order, t_k) in basis.iter().enumerate() {
            let d_z = if order == 0 && is_identity(t_k) {
                d_view.to_owned()
            } else {
                t_k.t().dot(&d_view)
            };
            let d_z = d_z
                .into_shape_with_order((rows, c_out))
                .expect("node-major rows");
            let theta = weight.slice(ndarray::s![order * c_in..(order + 1) * c_in, ..]);
            d_w.slice_mut(ndarray::s![order * c_in..(order + 1) * c_in, ..])
                .assign(&self.input.t().dot(&d_z));
            ndarray::linalg::general_mat_mul(1.0, &d_z, &theta.t(), 1.0, &mut d_x);
        }
        (d_x, d_w, bias_grad(d_out))
    }
}

fn is_identity(m: &Array2<f64>) -> bool {
    m.indexed_iter()
        .all(|((i, j), &v)| if i == j { v == 1.0 } else { v == 0.0 })
}

/// Inverted dropout; the mask already carries the `1 / (1 - rate)` scale.
pub struct Dropout {
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn forward<R: Rng>(mut x: Act, rate: f64, rng: Option<&mut R>) -> (Act, Dropout) {
        let rng = match rng {
            Some(r) if rate > 0.0 => r,
            _ => return (x, Dropout { mask: None }),
        };
        let keep = 1.0 - rate;
        let scale = if keep > 0.0 { 1.0 / keep } else { 0.0 };
        let mask: Vec<f64> = (0..x.data.len())
            .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
            .collect();
        for (v, m) in x.data.iter_mut().zip(&mask) {
            *v *= m;
        }
        (x, Dropout { mask: Some(mask) })
    }

    pub fn backward(&self, mut d_out: Array2<f64>) -> Array2<f64> {
        if let Some(mask) = &self.mask {
            for (d, m) in d_out.iter_mut().zip(mask) {
                *d *= m;
            }
        }
        d_out
    }
}
