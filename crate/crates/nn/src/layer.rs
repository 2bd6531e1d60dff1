//! Layer vocabulary and the per-layer forward/backward kernels.
//!
//! Convolutions pad by edge replication, so a constant image stays constant
//! through every layer. Per-sample work is spread with [`Exec`]; per-sample
//! parameter gradients are reduced in sample order so both execution
//! policies give identical results.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rhomap_core::Exec;
use serde::{Deserialize, Serialize};

use crate::gemm::{gemm, gemm_new};
use crate::{NnError, Result, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn default_eps() -> f64 {
    BN_EPS
}

fn default_momentum() -> f64 {
    BN_MOMENTUM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Stride 1, `kernel / 2` replicate padding; `kernel` is 1 or 3.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    MaxPool2,
    /// Nearest-neighbour x2.
    Upsample2,
    /// Appends the channels of activation `from` to the current activation.
    ConcatSkip { from: usize },
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
    BatchNorm {
        channels: usize,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Relu,
    /// Adds activation `from` to the current activation.
    AddSkip { from: usize },
    /// `min(relu(x) + y_min, y_max)`.
    Limiter { y_min: f64, y_max: f64 },
    /// Fixed affine map `scale * x + offset`; not trained.
    Rescale { scale: f64, offset: f64 },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2 => "max_pool",
            LayerSpec::Upsample2 => "upsample",
            LayerSpec::ConcatSkip { .. } => "concat_skip",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Relu => "relu",
            LayerSpec::AddSkip { .. } => "add_skip",
            LayerSpec::Limiter { .. } => "limiter",
            LayerSpec::Rescale { .. } => "rescale",
        }
    }
}

/// A trainable array and its most recent gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    fn new(value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Param>,
    /// Batch-norm running mean and variance.
    pub running: Option<(Vec<f64>, Vec<f64>)>,
}

fn he_uniform(fan_in: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

impl Layer {
    pub fn init(spec: LayerSpec, rng: &mut ChaCha8Rng) -> Self {
        let (params, running) = match spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                let fan_in = in_channels * kernel * kernel;
                (
                    vec![
                        Param::new(he_uniform(fan_in, out_channels * fan_in, rng)),
                        Param::new(vec![0.0; out_channels]),
                    ],
                    None,
                )
            }
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => (
                vec![
                    Param::new(he_uniform(in_features, out_features * in_features, rng)),
                    Param::new(vec![0.0; out_features]),
                ],
                None,
            ),
            LayerSpec::BatchNorm { channels, .. } => (
                vec![Param::new(vec![1.0; channels]), Param::new(vec![0.0; channels])],
                Some((vec![0.0; channels], vec![1.0; channels])),
            ),
            _ => (Vec::new(), None),
        };
        Self { spec, params, running }
    }
}

/// Per-layer values kept from a train-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum Aux {
    None,
    Pool(Vec<usize>),
    Norm { xhat: Vec<f64>, inv_std: Vec<f64> },
}

/// Batch statistics for the running-average update.
pub(crate) struct BatchStats {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

pub(crate) struct Backward {
    pub gx: Vec<f64>,
    pub skip: Option<(usize, Vec<f64>)>,
    pub param_grads: Vec<Vec<f64>>,
}

fn clampi(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Shifts `src` by `d` along the row with edge replication: `dst[i] = src[clamp(i + d)]`.
fn shift_row(dst: &mut [f64], src: &[f64], d: isize) {
    let w = src.len();
    let lo = (-d).clamp(0, w as isize) as usize;
    let hi = (w as isize - d).clamp(lo as isize, w as isize) as usize;
    dst[..lo].fill(src[0]);
    dst[lo..hi].copy_from_slice(&src[(lo as isize + d) as usize..(hi as isize + d) as usize]);
    dst[hi..].fill(src[w - 1]);
}

/// Adjoint of [`shift_row`]: accumulates `src[i]` into `dst[clamp(i + d)]`.
fn unshift_row(dst: &mut [f64], src: &[f64], d: isize) {
    let w = src.len();
    let lo = (-d).clamp(0, w as isize) as usize;
    let hi = (w as isize - d).clamp(lo as isize, w as isize) as usize;
    dst[0] += src[..lo].iter().sum::<f64>();
    let shifted = &mut dst[(lo as isize + d) as usize..(hi as isize + d) as usize];
    shifted.iter_mut().zip(&src[lo..hi]).for_each(|(a, b)| *a += b);
    dst[w - 1] += src[hi..].iter().sum::<f64>();
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let p = (k / 2) as isize;
    let hw = h * w;
    let mut col = Vec::with_capacity(c * k * k * hw);
    let mut row = vec![0.0; w];
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                for y in 0..h {
                    let sy = clampi(y as isize + ky as isize - p, h);
                    let src = &plane[sy * w..(sy + 1) * w];
                    if kx as isize == p {
                        col.extend_from_slice(src);
                    } else {
                        shift_row(&mut row, src, kx as isize - p);
                        col.extend_from_slice(&row);
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let p = (k / 2) as isize;
    let hw = h * w;
    let mut x = vec![0.0; c * hw];
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = clampi(y as isize + ky as isize - p, h);
                    unshift_row(&mut plane[sy * w..(sy + 1) * w], &row[y * w..(y + 1) * w], kx as isize - p);
                }
            }
        }
    }
    x
}

fn conv_forward(x: &Tensor, w: &[f64], b: &[f64], cout: usize, k: usize, exec: Exec) -> Result<Tensor> {
    let [n, cin, h, wd] = x.shape();
    let hw = h * wd;
    let outs = exec.map(n, |s| {
        let xs = x.sample(s);
        let mut out = vec![0.0; cout * hw];
        for (co, chunk) in out.chunks_mut(hw).enumerate() {
            chunk.fill(b[co]);
        }
        if k == 1 {
            gemm(cout, cin, hw, w, false, xs, false, 1.0, &mut out);
        } else {
            let col = im2col(xs, cin, h, wd, k);
            gemm(cout, cin * k * k, hw, w, false, &col, false, 1.0, &mut out);
        }
        out
    });
    Tensor::from_vec([n, cout, h, wd], outs.concat())
}

fn conv_backward(x: &Tensor, w: &[f64], gy: &[f64], cout: usize, k: usize, exec: Exec) -> Backward {
    let [n, cin, h, wd] = x.shape();
    let hw = h * wd;
    let ckk = cin * k * k;
    let per_sample = exec.map(n, |s| {
        let xs = x.sample(s);
        let gys = &gy[s * cout * hw..(s + 1) * cout * hw];
        let db: Vec<f64> = gys.chunks(hw).map(|c| c.iter().sum()).collect();
        let col_owned;
        let col: &[f64] = if k == 1 {
            xs
        } else {
            col_owned = im2col(xs, cin, h, wd, k);
            &col_owned
        };
        let dw = gemm_new(cout, hw, ckk, gys, false, col, true);
        let dcol = gemm_new(ckk, cout, hw, w, true, gys, false);
        let dx = if k == 1 { dcol } else { col2im(&dcol, cin, h, wd, k) };
        (dx, dw, db)
    });
    let mut gx = Vec::with_capacity(n * cin * hw);
    let mut dw = vec![0.0; cout * ckk];
    let mut db = vec![0.0; cout];
    for (dxs, dws, dbs) in per_sample {
        gx.extend_from_slice(&dxs);
        dw.iter_mut().zip(&dws).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&dbs).for_each(|(a, b)| *a += b);
    }
    Backward {
        gx,
        skip: None,
        param_grads: vec![dw, db],
    }
}

impl Layer {
    pub(crate) fn forward(
        &self,
        idx: usize,
        x: &Tensor,
        acts: &[Tensor],
        train: bool,
        exec: Exec,
    ) -> Result<(Tensor, Aux, Option<BatchStats>)> {
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let err = |msg: String| NnError::shape(idx, msg);
        match self.spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                if c != in_channels {
                    return Err(err(format!("conv2d expects {in_channels} channels, got {c}")));
                }
                let y = conv_forward(x, &self.params[0].value, &self.params[1].value, out_channels, kernel, exec)?;
                Ok((y, Aux::None, None))
            }
            LayerSpec::MaxPool2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(err(format!("max_pool needs even spatial size, got {h}x{w}")));
                }
                let (ho, wo) = (h / 2, w / 2);
                let mut out = Vec::with_capacity(n * c * ho * wo);
                let mut arg = Vec::with_capacity(out.capacity());
                for plane in 0..n * c {
                    let base = plane * hw;
                    for yo in 0..ho {
                        for xo in 0..wo {
                            let mut best = base + 2 * yo * w + 2 * xo;
                            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                let i = base + (2 * yo + dy) * w + 2 * xo + dx;
                                if x.data()[i] > x.data()[best] {
                                    best = i;
                                }
                            }
                            out.push(x.data()[best]);
                            arg.push(best);
                        }
                    }
                }
                Ok((Tensor::from_vec([n, c, ho, wo], out)?, Aux::Pool(arg), None))
            }
            LayerSpec::Upsample2 => {
                let (ho, wo) = (2 * h, 2 * w);
                let mut out = vec![0.0; n * c * ho * wo];
                for plane in 0..n * c {
                    for yo in 0..ho {
                        for xo in 0..wo {
                            out[plane * ho * wo + yo * wo + xo] = x.data()[plane * hw + (yo / 2) * w + xo / 2];
                        }
                    }
                }
                Ok((Tensor::from_vec([n, c, ho, wo], out)?, Aux::None, None))
            }
            LayerSpec::ConcatSkip { from } => {
                let s = skip_source(idx, from, acts)?;
                if s.n() != n || s.h() != h || s.w() != w {
                    return Err(err(format!("concat_skip: {:?} vs skip {:?}", x.shape(), s.shape())));
                }
                let cs = s.c();
                let mut out = Vec::with_capacity(n * (c + cs) * hw);
                for i in 0..n {
                    out.extend_from_slice(x.sample(i));
                    out.extend_from_slice(s.sample(i));
                }
                Ok((Tensor::from_vec([n, c + cs, h, w], out)?, Aux::None, None))
            }
            LayerSpec::AddSkip { from } => {
                let s = skip_source(idx, from, acts)?;
                if s.shape() != x.shape() {
                    return Err(err(format!("add_skip: {:?} vs skip {:?}", x.shape(), s.shape())));
                }
                let out = x.data().iter().zip(s.data()).map(|(a, b)| a + b).collect();
                Ok((Tensor::from_vec(x.shape(), out)?, Aux::None, None))
            }
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => {
                if h != 1 || w != 1 || c != in_features {
                    return Err(err(format!(
                        "fully_connected expects [n, {in_features}, 1, 1], got {:?}",
                        x.shape()
                    )));
                }
                let mut out = vec![0.0; n * out_features];
                for row in out.chunks_mut(out_features) {
                    row.copy_from_slice(&self.params[1].value);
                }
                gemm(n, in_features, out_features, x.data(), false, &self.params[0].value, true, 1.0, &mut out);
                Ok((Tensor::from_vec([n, out_features, 1, 1], out)?, Aux::None, None))
            }
            LayerSpec::BatchNorm { channels, eps, .. } => {
                if c != channels {
                    return Err(err(format!("batch_norm expects {channels} channels, got {c}")));
                }
                let gamma = &self.params[0].value;
                let beta = &self.params[1].value;
                let mut out = vec![0.0; x.len()];
                if train {
                    let m = (n * hw) as f64;
                    let mut xhat = vec![0.0; x.len()];
                    let mut inv_std = vec![0.0; c];
                    let mut mean = vec![0.0; c];
                    let mut var_unbiased = vec![0.0; c];
                    for ch in 0..c {
                        let plane = |s: usize| &x.data()[(s * c + ch) * hw..][..hw];
                        let mu = (0..n).map(|s| plane(s).iter().sum::<f64>()).sum::<f64>() / m;
                        let var = (0..n)
                            .map(|s| plane(s).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>())
                            .sum::<f64>()
                            / m;
                        let is = 1.0 / (var + eps).sqrt();
                        let (g, bt) = (gamma[ch], beta[ch]);
                        for s in 0..n {
                            let off = (s * c + ch) * hw;
                            let xh = &mut xhat[off..off + hw];
                            for ((xv, o), &v) in xh.iter_mut().zip(&mut out[off..off + hw]).zip(plane(s)) {
                                *xv = (v - mu) * is;
                                *o = g * *xv + bt;
                            }
                        }
                        inv_std[ch] = is;
                        mean[ch] = mu;
                        var_unbiased[ch] = if m > 1.0 { var * m / (m - 1.0) } else { var };
                    }
                    Ok((
                        Tensor::from_vec(x.shape(), out)?,
                        Aux::Norm { xhat, inv_std },
                        Some(BatchStats { mean, var_unbiased }),
                    ))
                } else {
                    let (rm, rv) = self.running.as_ref().expect("batch norm without running statistics");
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * hw;
                            let is = 1.0 / (rv[ch] + eps).sqrt();
                            for j in off..off + hw {
                                out[j] = gamma[ch] * (x.data()[j] - rm[ch]) * is + beta[ch];
                            }
                        }
                    }
                    Ok((Tensor::from_vec(x.shape(), out)?, Aux::None, None))
                }
            }
            LayerSpec::Relu => {
                let out = x.data().iter().map(|&v| v.max(0.0)).collect();
                Ok((Tensor::from_vec(x.shape(), out)?, Aux::None, None))
            }
            LayerSpec::Limiter { y_min, y_max } => {
                let out = x.data().iter().map(|&v| limiter(v, y_min, y_max)).collect();
                Ok((Tensor::from_vec(x.shape(), out)?, Aux::None, None))
            }
            LayerSpec::Rescale { scale, offset } => {
                let out = x.data().iter().map(|&v| scale * v + offset).collect();
                Ok((Tensor::from_vec(x.shape(), out)?, Aux::None, None))
            }
        }
    }

    pub(crate) fn backward(&self, x: &Tensor, aux: &Aux, gy: &[f64], exec: Exec) -> Backward {
        let plain = |gx: Vec<f64>| Backward {
            gx,
            skip: None,
            param_grads: Vec::new(),
        };
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        match (&self.spec, aux) {
            (
                LayerSpec::Conv2d {
                    out_channels, kernel, ..
                },
                _,
            ) => conv_backward(x, &self.params[0].value, gy, *out_channels, *kernel, exec),
            (LayerSpec::MaxPool2, Aux::Pool(arg)) => {
                let mut gx = vec![0.0; x.len()];
                for (&i, &g) in arg.iter().zip(gy) {
                    gx[i] += g;
                }
                plain(gx)
            }
            (LayerSpec::Upsample2, _) => {
                let (ho, wo) = (2 * h, 2 * w);
                let mut gx = vec![0.0; x.len()];
                for plane in 0..n * c {
                    for yo in 0..ho {
                        for xo in 0..wo {
                            gx[plane * hw + (yo / 2) * w + xo / 2] += gy[plane * ho * wo + yo * wo + xo];
                        }
                    }
                }
                plain(gx)
            }
            (LayerSpec::ConcatSkip { from }, _) => {
                let total = gy.len() / n;
                let own = c * hw;
                let mut gx = Vec::with_capacity(n * own);
                let mut gs = Vec::with_capacity(n * (total - own));
                for chunk in gy.chunks(total) {
                    gx.extend_from_slice(&chunk[..own]);
                    gs.extend_from_slice(&chunk[own..]);
                }
                Backward {
                    gx,
                    skip: Some((*from, gs)),
                    param_grads: Vec::new(),
                }
            }
            (LayerSpec::AddSkip { from }, _) => Backward {
                gx: gy.to_vec(),
                skip: Some((*from, gy.to_vec())),
                param_grads: Vec::new(),
            },
            (
                LayerSpec::FullyConnected {
                    in_features,
                    out_features,
                },
                _,
            ) => {
                let (fi, fo) = (*in_features, *out_features);
                let dw = gemm_new(fo, n, fi, gy, true, x.data(), false);
                let mut db = vec![0.0; fo];
                for row in gy.chunks(fo) {
                    db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                let gx = gemm_new(n, fo, fi, gy, false, &self.params[0].value, false);
                Backward {
                    gx,
                    skip: None,
                    param_grads: vec![dw, db],
                }
            }
            (LayerSpec::BatchNorm { .. }, Aux::Norm { xhat, inv_std }) => {
                let gamma = &self.params[0].value;
                let m = (n * hw) as f64;
                let mut gx = vec![0.0; x.len()];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ch in 0..c {
                    let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                    for s in 0..n {
                        let off = (s * c + ch) * hw;
                        for (g, xh) in gy[off..off + hw].iter().zip(&xhat[off..off + hw]) {
                            sum_g += g;
                            sum_gx += g * xh;
                        }
                    }
                    dgamma[ch] = sum_gx;
                    dbeta[ch] = sum_g;
                    let k = gamma[ch] * inv_std[ch] / m;
                    for s in 0..n {
                        let off = (s * c + ch) * hw;
                        let it = gx[off..off + hw].iter_mut().zip(&gy[off..off + hw]).zip(&xhat[off..off + hw]);
                        for ((o, g), xh) in it {
                            *o = k * (m * g - sum_g - xh * sum_gx);
                        }
                    }
                }
                Backward {
                    gx,
                    skip: None,
                    param_grads: vec![dgamma, dbeta],
                }
            }
            (LayerSpec::Relu, _) => plain(
                x.data()
                    .iter()
                    .zip(gy)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect(),
            ),
            (LayerSpec::Limiter { y_min, y_max }, _) => plain(
                x.data()
                    .iter()
                    .zip(gy)
                    .map(|(&v, &g)| g * limiter_grad(v, *y_min, *y_max))
                    .collect(),
            ),
            (LayerSpec::Rescale { scale, .. }, _) => plain(gy.iter().map(|g| g * scale).collect()),
            (spec, _) => unreachable!("missing forward cache for {}", spec.name()),
        }
    }

    pub(crate) fn update_running(&mut self, stats: BatchStats) {
        let momentum = match self.spec {
            LayerSpec::BatchNorm { momentum, .. } => momentum,
            _ => return,
        };
        if let Some((rm, rv)) = self.running.as_mut() {
            for (r, b) in rm.iter_mut().zip(&stats.mean) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
            for (r, b) in rv.iter_mut().zip(&stats.var_unbiased) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
        }
    }
}

fn skip_source(idx: usize, from: usize, acts: &[Tensor]) -> Result<&Tensor> {
    // acts holds the input plus the outputs of layers 0..idx
    if from >= acts.len() {
        return Err(NnError::shape(idx, format!("skip source {from} is not an earlier activation")));
    }
    Ok(&acts[from])
}

/// Output limiter: `min(relu(x) + y_min, y_max)`.
#[inline]
pub fn limiter(x: f64, y_min: f64, y_max: f64) -> f64 {
    (x.max(0.0) + y_min).min(y_max)
}

/// 1 on the open interval `0 < x < y_max - y_min`, 0 where either side saturates.
#[inline]
pub fn limiter_grad(x: f64, y_min: f64, y_max: f64) -> f64 {
    if x > 0.0 && x < y_max - y_min {
        1.0
    } else {
        0.0
    }
}
