use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_BN_MOMENTUM: f64 = 0.99;
pub const DEFAULT_BN_EPS: f64 = 1e-5;

/// Declarative layer description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { width: usize },
    BatchNorm,
    Relu,
    Dropout { rate: f64 },
}

/// dense -> batch norm -> relu -> dropout, the standard hidden block.
pub fn hidden_block(width: usize, dropout: f64) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense { width },
        LayerSpec::BatchNorm,
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: dropout },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    Dense {
        /// in x out
        w: Matrix,
        b: Vec<f64>,
    },
    BatchNorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    Relu,
    Dropout {
        rate: f64,
    },
}

pub(crate) enum LayerCache {
    Dense {
        input: Matrix,
    },
    BatchNorm {
        x_hat: Matrix,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
    },
    Relu {
        input: Matrix,
    },
    Dropout {
        mask: Option<Matrix>,
    },
}

pub struct Cache {
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) mode: Mode,
}

/// Fully connected feed-forward network. The softmax lives in the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_width: usize,
    pub(crate) layers: Vec<Layer>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Network {
    /// He-uniform fan-in initialization, deterministic per seed.
    pub fn new(input_width: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if input_width == 0 {
            return Err(Error::Config("input width must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        let mut width = input_width;
        for spec in specs {
            match *spec {
                LayerSpec::Dense { width: out } => {
                    if out == 0 {
                        return Err(Error::Config("dense width must be >= 1".into()));
                    }
                    let limit = (6.0 / width as f64).sqrt();
                    let mut w = Matrix::zeros(width, out);
                    for i in 0..width {
                        for j in 0..out {
                            w.set(i, j, rng.gen_range(-limit..limit));
                        }
                    }
                    layers.push(Layer::Dense {
                        w,
                        b: vec![0.0; out],
                    });
                    width = out;
                }
                LayerSpec::BatchNorm => layers.push(Layer::BatchNorm {
                    gamma: vec![1.0; width],
                    beta: vec![0.0; width],
                    running_mean: vec![0.0; width],
                    running_var: vec![1.0; width],
                }),
                LayerSpec::Relu => layers.push(Layer::Relu),
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::Config(format!(
                            "dropout rate {} outside [0, 1)",
                            rate
                        )));
                    }
                    layers.push(Layer::Dropout { rate });
                }
            }
        }
        Ok(Network {
            input_width,
            layers,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            bn_eps: DEFAULT_BN_EPS,
        })
    }

    pub(crate) fn from_parts(
        input_width: usize,
        layers: Vec<Layer>,
        bn_momentum: f64,
        bn_eps: f64,
    ) -> Result<Self> {
        let mut width = input_width;
        for layer in &layers {
            match layer {
                Layer::Dense { w, b } => {
                    if w.rows() != width || b.len() != w.cols() {
                        return Err(Error::Shape("dense layer width mismatch".into()));
                    }
                    width = w.cols();
                }
                Layer::BatchNorm { gamma, .. } => {
                    if gamma.len() != width {
                        return Err(Error::Shape("batch norm width mismatch".into()));
                    }
                }
                _ => {}
            }
        }
        Ok(Network {
            input_width,
            layers,
            bn_momentum,
            bn_eps,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        let mut width = self.input_width;
        for layer in &self.layers {
            if let Layer::Dense { w, .. } = layer {
                width = w.cols();
            }
        }
        width
    }

    /// Forward pass. Train mode uses batch statistics and inverted dropout
    /// (requires an rng); eval mode uses running statistics and no dropout.
    /// Running statistics are NOT mutated here; see `update_running_stats`.
    pub fn forward(
        &self,
        x: &Matrix,
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Matrix, Cache)> {
        if x.cols() != self.input_width {
            return Err(Error::Shape(format!(
                "batch width {} does not match input width {}",
                x.cols(),
                self.input_width
            )));
        }

        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                Layer::Dense { w, b } => {
                    caches.push(LayerCache::Dense { input: h.clone() });
                    let mut out = h.matmul(w);
                    for i in 0..out.rows() {
                        for (v, bias) in out.row_mut(i).iter_mut().zip(b.iter()) {
                            *v += bias;
                        }
                    }
                    h = out;
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let d = h.cols();
                    let b_rows = h.rows() as f64;
                    match mode {
                        Mode::Train => {
                            let mut mean = vec![0.0; d];
                            for i in 0..h.rows() {
                                for (m, v) in mean.iter_mut().zip(h.row(i)) {
                                    *m += v;
                                }
                            }
                            for m in mean.iter_mut() {
                                *m /= b_rows;
                            }
                            let mut var = vec![0.0; d];
                            for i in 0..h.rows() {
                                for j in 0..d {
                                    let c = h.get(i, j) - mean[j];
                                    var[j] += c * c;
                                }
                            }
                            for v in var.iter_mut() {
                                *v /= b_rows;
                            }
                            let inv_std: Vec<f64> =
                                var.iter().map(|v| 1.0 / (v + self.bn_eps).sqrt()).collect();
                            let mut x_hat = Matrix::zeros(h.rows(), d);
                            let mut out = Matrix::zeros(h.rows(), d);
                            for i in 0..h.rows() {
                                for j in 0..d {
                                    let xh = (h.get(i, j) - mean[j]) * inv_std[j];
                                    x_hat.set(i, j, xh);
                                    out.set(i, j, gamma[j] * xh + beta[j]);
                                }
                            }
                            caches.push(LayerCache::BatchNorm {
                                x_hat,
                                inv_std,
                                batch_mean: mean,
                                batch_var: var,
                            });
                            h = out;
                        }
                        Mode::Eval => {
                            let mut out = Matrix::zeros(h.rows(), d);
                            for i in 0..h.rows() {
                                for j in 0..d {
                                    let xh = (h.get(i, j) - running_mean[j])
                                        / (running_var[j] + self.bn_eps).sqrt();
                                    out.set(i, j, gamma[j] * xh + beta[j]);
                                }
                            }
                            caches.push(LayerCache::BatchNorm {
                                x_hat: Matrix::zeros(0, 0),
                                inv_std: Vec::new(),
                                batch_mean: Vec::new(),
                                batch_var: Vec::new(),
                            });
                            h = out;
                        }
                    }
                }
                Layer::Relu => {
                    caches.push(LayerCache::Relu { input: h.clone() });
                    for v in h.data_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                Layer::Dropout { rate } => {
                    if mode == Mode::Train && *rate > 0.0 {
                        let rng = rng.as_deref_mut().ok_or_else(|| {
                            Error::Input("train-mode dropout needs an rng".into())
                        })?;
                        let keep = 1.0 - rate;
                        let scale = 1.0 / keep;
                        let mut mask = Matrix::zeros(h.rows(), h.cols());
                        for i in 0..h.rows() {
                            for j in 0..h.cols() {
                                if rng.gen::<f64>() < keep {
                                    mask.set(i, j, scale);
                                }
                            }
                        }
                        for (v, m) in h.data_mut().iter_mut().zip(mask.data()) {
                            *v *= m;
                        }
                        caches.push(LayerCache::Dropout { mask: Some(mask) });
                    } else {
                        caches.push(LayerCache::Dropout { mask: None });
                    }
                }
            }
        }
        Ok((
            h,
            Cache {
                layers: caches,
                mode,

            },
        ))
    }

    /// Folds the batch statistics captured in a train-mode cache into the
    /// running statistics.
    pub fn update_running_stats(&mut self, cache: &Cache) {
        debug_assert_eq!(cache.mode, Mode::Train);
        let momentum = self.bn_momentum;
        for (layer, lc) in self.layers.iter_mut().zip(cache.layers.iter()) {
            if let (
                Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                },
                LayerCache::BatchNorm {
                    batch_mean,
                    batch_var,
                    ..
                },
            ) = (layer, lc)
            {
                for (r, b) in running_mean.iter_mut().zip(batch_mean.iter()) {
                    *r = momentum * *r + (1.0 - momentum) * b;
                }
                for (r, b) in running_var.iter_mut().zip(batch_var.iter()) {
                    *r = momentum * *r + (1.0 - momentum) * b;
                }
            }
        }
    }

    /// Backpropagation through a cached forward pass. Returns the flat
    /// parameter gradient (same layout as `params_flat`) and the gradient
    /// with respect to the input batch.
    pub fn backward(&self, cache: &Cache, upstream: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Input("stale forward cache".into()));
        }
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut delta = upstream.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            match (layer, &cache.layers[idx]) {
                (Layer::Dense { w, .. }, LayerCache::Dense { input }) => {
                    // dW = inputᵀ · delta, db = column sums of delta.
                    let dw = input.transposed_matmul(&delta);
                    let mut db = vec![0.0; w.cols()];
                    for i in 0..delta.rows() {
                        for (acc, v) in db.iter_mut().zip(delta.row(i)) {
                            *acc += v;
                        }
                    }
                    let mut flat = Vec::with_capacity(dw.data().len() + db.len());
                    flat.extend_from_slice(dw.data());
                    flat.extend_from_slice(&db);
                    grads[idx] = flat;
                    delta = delta.matmul_transposed(w);
                }
                (
                    Layer::BatchNorm { gamma, .. },
                    LayerCache::BatchNorm {
                        x_hat, inv_std, ..
                    },
                ) => {
                    if cache.mode != Mode::Train {
                        return Err(Error::Input(
                            "backward requires a train-mode cache".into(),
                        ));
                    }
                    let d = x_hat.cols();
                    let b_rows = cache_rows(&delta);
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    for i in 0..delta.rows() {
                        for j in 0..d {
                            dgamma[j] += delta.get(i, j) * x_hat.get(i, j);
                            dbeta[j] += delta.get(i, j);
                        }
                    }
                    let mut dx = Matrix::zeros(delta.rows(), d);
                    for j in 0..d {
                        let scale = gamma[j] * inv_std[j] / b_rows;
                        for i in 0..delta.rows() {
                            let v = scale
                                * (b_rows * delta.get(i, j)
                                    - dbeta[j]
                                    - x_hat.get(i, j) * dgamma[j]);
                            dx.set(i, j, v);
                        }
                    }
                    let mut flat = Vec::with_capacity(2 * d);
                    flat.extend_from_slice(&dgamma);
                    flat.extend_from_slice(&dbeta);
                    grads[idx] = flat;
                    delta = dx;
                }
                (Layer::Relu, LayerCache::Relu { input }) => {
                    for (v, x) in delta.data_mut().iter_mut().zip(input.data()) {
                        if *x <= 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                (Layer::Dropout { .. }, LayerCache::Dropout { mask }) => {
                    if let Some(mask) = mask {
                        for (v, m) in delta.data_mut().iter_mut().zip(mask.data()) {
                            *v *= m;
                        }
                    }
                }
                _ => return Err(Error::Input("cache does not match network layers".into())),
            }
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for g in grads {
            flat.extend_from_slice(&g);
        }
        Ok((flat, delta))
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense { w, b } => w.data().len() + b.len(),
                Layer::BatchNorm { gamma, beta, .. } => gamma.len() + beta.len(),
                _ => 0,
            })
            .sum()
    }

    /// Trainable parameters, layer order: dense (w then b), batch norm
    /// (gamma then beta). Running statistics are not trainable.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            match layer {
                Layer::Dense { w, b } => {
                    out.extend_from_slice(w.data());
                    out.extend_from_slice(b);
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.extend_from_slice(gamma);
                    out.extend_from_slice(beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut offset = 0usize;
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { w, b } => {
                    let wl = w.data().len();
                    w.data_mut().copy_from_slice(&params[offset..offset + wl]);
                    offset += wl;
                    let bl = b.len();
                    b.copy_from_slice(&params[offset..offset + bl]);
                    offset += bl;
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    let gl = gamma.len();
                    gamma.copy_from_slice(&params[offset..offset + gl]);
                    offset += gl;
                    let bl = beta.len();
                    beta.copy_from_slice(&params[offset..offset + bl]);
                    offset += bl;
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn all_params_finite(&self) -> bool {
        self.params_flat().iter().all(|v| v.is_finite())
    }
}

fn cache_rows(delta: &Matrix) -> f64 {
    delta.rows() as f64
}
