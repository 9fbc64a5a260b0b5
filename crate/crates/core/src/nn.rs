//! Minimal layer kit with explicit backward passes: dense, layer norm,
//! 3×3 stride-2 convolution and ReLU, plus SGD with momentum.
//!
//! Activations are flat slices; convolution tensors are channel-major
//! `[C, H, W]`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::scalar::Real;

/// Named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(name: &str, shape: &[usize], v: T) -> Self {
        Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    /// He-normal initialization with the given fan-in.
    pub fn he_normal(name: &str, shape: &[usize], fan_in: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: (0..shape.iter().product::<usize>())
                .map(|_| T::lit(normal.sample(rng)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Param {
            name: self.name.clone(),
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `dst += src` elementwise over matching parameter lists.
pub fn accumulate<T: Real>(dst: &mut [Param<T>], src: &[Param<T>]) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (a, b) in d.data.iter_mut().zip(&s.data) {
            *a += *b;
        }
    }
}

pub fn scale_grads<T: Real>(grads: &mut [Param<T>], k: T) {
    for g in grads.iter_mut() {
        for v in g.data.iter_mut() {
            *v *= k;
        }
    }
}

pub fn grad_norm<T: Real>(grads: &[Param<T>]) -> T {
    grads
        .iter()
        .flat_map(|g| g.data.iter())
        .map(|v| *v * *v)
        .sum::<T>()
        .sqrt()
}

/// `y = W x + b` with `W` stored `[out, in]`.
pub fn dense_forward<T: Real>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let n_in = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(x) {
            acc += *wi * *xi;
        }
        *y = acc;
    }
}

/// Backward of [`dense_forward`]: accumulates into `dw`, `db` and, when
/// given, writes `dx`.
pub fn dense_backward<T: Real>(w: &[T], x: &[T], dy: &[T], dw: &mut [T], db: &mut [T], dx: Option<&mut [T]>) {
    let n_in = x.len();
    for (o, g) in dy.iter().enumerate() {
        db[o] += *g;
        if *g == T::zero() {
            continue;
        }
        let row = &mut dw[o * n_in..(o + 1) * n_in];
        for (dwi, xi) in row.iter_mut().zip(x) {
            *dwi += *g * *xi;
        }
    }
    if let Some(dx) = dx {
        dx.iter_mut().for_each(|v| *v = T::zero());
        for (o, g) in dy.iter().enumerate() {
            if *g == T::zero() {
                continue;
            }
            let row = &w[o * n_in..(o + 1) * n_in];
            for (dxi, wi) in dx.iter_mut().zip(row) {
                *dxi += *g * *wi;
            }
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Saved statistics of a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: T,
}

/// `y = γ ⊙ (x − μ)/√(σ² + ε) + β`.
pub fn layer_norm_forward<T: Real>(x: &[T], gamma: &[T], beta: &[T], out: &mut [T]) -> LnCache<T> {
    let n = T::from_usize_lossy(x.len());
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
    let inv_std = T::one() / (var + T::lit(LN_EPS)).sqrt();
    let xhat: Vec<T> = x.iter().map(|v| (*v - mean) * inv_std).collect();
    for i in 0..x.len() {
        out[i] = gamma[i] * xhat[i] + beta[i];
    }
    LnCache { xhat, inv_std }
}

pub fn layer_norm_backward<T: Real>(
    cache: &LnCache<T>,
    gamma: &[T],
    dy: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    dx: &mut [T],
) {
    let n = T::from_usize_lossy(dy.len());
    let mut sum_g = T::zero();
    let mut sum_gx = T::zero();
    for i in 0..dy.len() {
        dgamma[i] += dy[i] * cache.xhat[i];
        dbeta[i] += dy[i];
        let g = dy[i] * gamma[i];
        sum_g += g;
        sum_gx += g * cache.xhat[i];
    }
    for i in 0..dy.len() {
        let g = dy[i] * gamma[i];
        dx[i] = cache.inv_std * (g - sum_g / n - cache.xhat[i] * sum_gx / n);
    }
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero `dy` where the ReLU output was not positive.
pub fn relu_backward_inplace<T: Real>(out: &[T], dy: &mut [T]) {
    for (g, o) in dy.iter_mut().zip(out) {
        if *o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Output side length of a 3×3, stride-2, pad-1 convolution.
pub fn conv_out_len(n: usize) -> usize {
    n.div_ceil(2)
}

/// 3×3 stride-2 pad-1 convolution. `w` is `[out_c, in_c, 3, 3]`.
pub fn conv3x3s2_forward<T: Real>(
    x: &[T],
    in_c: usize,
    h: usize,
    w_: usize,
    w: &[T],
    b: &[T],
    out_c: usize,
) -> Vec<T> {
    let (oh, ow) = (conv_out_len(h), conv_out_len(w_));
    let mut out = vec![T::zero(); out_c * oh * ow];
    for o in 0..out_c {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..in_c {
            let xin = &x[c * h * w_..(c + 1) * h * w_];
            let k = &w[(o * in_c + c) * 9..(o * in_c + c + 1) * 9];
            for oy in 0..oh {
                for ky in 0..3 {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = &xin[iy as usize * w_..(iy as usize + 1) * w_];
                    for ox in 0..ow {
                        let mut acc = T::zero();
                        for kx in 0..3 {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix >= 0 && ix < w_ as isize {
                                acc += k[ky * 3 + kx] * row[ix as usize];
                            }
                        }
                        plane[oy * ow + ox] += acc;
                    }
                }
            }
        }
    }
    out
}

/// Backward of [`conv3x3s2_forward`]; accumulates `dw`, `db` and returns `dx`
/// when `need_dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3s2_backward<T: Real>(
    x: &[T],
    in_c: usize,
    h: usize,
    w_: usize,
    w: &[T],
    out_c: usize,
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let (oh, ow) = (conv_out_len(h), conv_out_len(w_));
    let mut dx = if need_dx { Some(vec![T::zero(); in_c * h * w_]) } else { None };
    for o in 0..out_c {
        let g = &dy[o * oh * ow..(o + 1) * oh * ow];
        db[o] += g.iter().copied().sum::<T>();
        for c in 0..in_c {
            let xin = &x[c * h * w_..(c + 1) * h * w_];
            let kidx = (o * in_c + c) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let mut acc = T::zero();
                    for oy in 0..oh {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix >= 0 && ix < w_ as isize {
                                acc += g[oy * ow + ox] * xin[iy as usize * w_ + ix as usize];
                            }
                        }
                    }
                    dw[kidx + ky * 3 + kx] += acc;
                }
            }
            if let Some(dx) = dx.as_mut() {
                let dxc = &mut dx[c * h * w_..(c + 1) * h * w_];
                let k = &w[kidx..kidx + 9];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let go = g[oy * ow + ox];
                        if go == T::zero() {
                            continue;
                        }
                        for ky in 0..3 {
                            let iy = (2 * oy + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (2 * ox + kx) as isize - 1;
                                if ix >= 0 && ix < w_ as isize {
                                    dxc[iy as usize * w_ + ix as usize] += go * k[ky * 3 + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Optimizer settings: plain SGD, optional heavy-ball momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
}

/// SGD with momentum: `v ← μ v + g`, `θ ← θ − η v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    cfg: SgdConfig,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(cfg: SgdConfig, params: &[Param<T>]) -> Self {
        Sgd {
            cfg,
            velocity: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Param<T>], grads: &[Param<T>]) {
        let lr = T::lit(self.cfg.learning_rate);
        let mu = T::lit(self.cfg.momentum);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            for i in 0..p.data.len() {
                v[i] = mu * v[i] + g.data[i];
                p.data[i] -= lr * v[i];
            }
        }
    }
}
