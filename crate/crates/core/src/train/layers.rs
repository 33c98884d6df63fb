//! Parameterised layers of the seed topology and their forward/backward
//! passes.

use rand::Rng;

use super::ops::{self, Fmap};
use crate::tensor::{Scalar, Tensor};

fn kaiming_uniform<T: Scalar, R: Rng>(shape: [usize; 4], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::c(rng.gen_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data).expect("shape")
}

fn bias_uniform<T: Scalar, R: Rng>(n: usize, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..n).map(|_| T::c(rng.gen_range(-bound..bound))).collect();
    Tensor::from_vec([n, 1, 1, 1], data).expect("shape")
}

/// Square-kernel, stride-1 convolution. Weight layout `(out, in, k, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub pad: usize,
}

pub struct ConvCache<T: Scalar> {
    pub cols: Vec<T>,
    pub in_shape: (usize, usize, usize, usize),
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, k: usize, pad: usize, rng: &mut R) -> Self {
        let fan_in = in_ch * k * k;
        Self {
            weight: kaiming_uniform([out_ch, in_ch, k, k], fan_in, rng),
            bias: bias_uniform(out_ch, fan_in, rng),
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Forward with explicit weights/bias (plain, masked or fake-quantized).
    pub fn forward_with(
        &self,
        x: &Fmap<T>,
        w: &[T],
        b: &[T],
        rows: Option<&[bool]>,
        skip_in: Option<&[bool]>,
    ) -> (Fmap<T>, ConvCache<T>) {
        let k = self.kernel();
        let (cols, oh, ow) = ops::im2col(x, k, self.pad, skip_in);
        let skip_k: Option<Vec<bool>> =
            skip_in.map(|s| (0..x.c * k * k).map(|r| s[r / (k * k)]).collect());
        let m = self.out_channels();
        let p = x.n * oh * ow;
        let data = ops::matmul_bias(w, b, &cols, m, x.c * k * k, p, rows, skip_k.as_deref());
        let out = Fmap { c: m, n: x.n, h: oh, w: ow, data };
        (out, ConvCache { cols, in_shape: (x.c, x.n, x.h, x.w) })
    }

    /// Returns `(dw, db, dx)`; `dx` rows are only filled for input channels
    /// with `need_in[c]`.
    pub fn backward_with(
        &self,
        cache: &ConvCache<T>,
        w: &[T],
        dout: &Fmap<T>,
        need_in: Option<&[bool]>,
    ) -> (Vec<T>, Vec<T>, Fmap<T>) {
        let k = self.kernel();
        let (c, n, h, wd) = cache.in_shape;
        let need_k: Option<Vec<bool>> =
            need_in.map(|s| (0..c * k * k).map(|r| s[r / (k * k)]).collect());
        let (dw, db, dcols) = ops::matmul_bias_backward(
            w,
            &cache.cols,
            &dout.data,
            self.out_channels(),
            c * k * k,
            dout.plane(),
            need_k.as_deref(),
        );
        let dx = ops::col2im(&dcols, c, n, h, wd, k, self.pad);
        (dw, db, dx)
    }
}

/// Fully connected layer. Weight layout `(out, in, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng>(in_f: usize, out_f: usize, rng: &mut R) -> Self {
        Self {
            weight: kaiming_uniform([out_f, in_f, 1, 1], in_f, rng),
            bias: bias_uniform(out_f, in_f, rng),
        }
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    /// `x` is `(in, N, 1, 1)`.
    pub fn forward_with(&self, x: &Fmap<T>, w: &[T], b: &[T], rows: Option<&[bool]>, skip_in: Option<&[bool]>) -> Fmap<T> {
        let m = self.out_features();
        let data = ops::matmul_bias(w, b, &x.data, m, x.c, x.n, rows, skip_in);
        Fmap { c: m, n: x.n, h: 1, w: 1, data }
    }

    pub fn backward_with(&self, x: &Fmap<T>, w: &[T], dout: &Fmap<T>, need_in: Option<&[bool]>) -> (Vec<T>, Vec<T>, Fmap<T>) {
        let (dw, db, dx) =
            ops::matmul_bias_backward(w, &x.data, &dout.data, self.out_features(), x.c, x.n, need_in);
        (dw, db, Fmap { c: x.c, n: x.n, h: 1, w: 1, data: dx })
    }
}

/// Per-channel batch normalisation with running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

pub struct BnCache<T: Scalar> {
    pub xhat: Vec<T>,
    pub invstd: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Tensor::full([c, 1, 1, 1], T::one()),
            beta: Tensor::zeros([c, 1, 1, 1]),
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
            eps: T::c(1e-5),
            momentum: T::c(0.1),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Batch statistics; updates running stats of the computed rows.
    pub fn forward_train(&mut self, x: &Fmap<T>, rows: Option<&[bool]>) -> (Fmap<T>, BnCache<T>) {
        let p = x.plane();
        let pt = T::c(p as f64);
        let mut y = Fmap::zeros(x.c, x.n, x.h, x.w);
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut invstd = vec![T::zero(); x.c];
        for c in 0..x.c {
            if rows.is_some_and(|r| !r[c]) {
                continue;
            }
            let row = x.row(c);
            let mean = row.iter().copied().sum::<T>() / pt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / pt;
            let is = T::one() / (var + self.eps).sqrt();
            invstd[c] = is;
            let (g, b) = (self.gamma.data()[c], self.beta.data()[c]);
            let xh = &mut xhat[c * p..(c + 1) * p];
            for ((o, h), &v) in y.row_mut(c).iter_mut().zip(xh.iter_mut()).zip(row) {
                *h = (v - mean) * is;
                *o = g * *h + b;
            }
            let unbiased = if p > 1 { var * pt / T::c((p - 1) as f64) } else { var };
            let mo = self.momentum;
            self.running_mean[c] = (T::one() - mo) * self.running_mean[c] + mo * mean;
            self.running_var[c] = (T::one() - mo) * self.running_var[c] + mo * unbiased;
        }
        (y, BnCache { xhat, invstd })
    }

    pub fn forward_eval(&self, x: &Fmap<T>) -> Fmap<T> {
        let mut y = Fmap::zeros(x.c, x.n, x.h, x.w);
        for c in 0..x.c {
            let is = T::one() / (self.running_var[c] + self.eps).sqrt();
            let (g, b, m) = (self.gamma.data()[c], self.beta.data()[c], self.running_mean[c]);
            for (o, &v) in y.row_mut(c).iter_mut().zip(x.row(c)) {
                *o = g * ((v - m) * is) + b;
            }
        }
        y
    }

    /// Returns `(dx, dgamma, dbeta)` for training-mode statistics.
    pub fn backward_train(&self, cache: &BnCache<T>, dy: &Fmap<T>) -> (Fmap<T>, Vec<T>, Vec<T>) {
        let p = dy.plane();
        let pt = T::c(p as f64);
        let mut dx = Fmap::zeros(dy.c, dy.n, dy.h, dy.w);
        let mut dg = vec![T::zero(); dy.c];
        let mut db = vec![T::zero(); dy.c];
        for c in 0..dy.c {
            let d = dy.row(c);
            let xh = &cache.xhat[c * p..(c + 1) * p];
            let sum_d: T = d.iter().copied().sum();
            let sum_dx: T = d.iter().zip(xh).map(|(&a, &b)| a * b).sum();
            db[c] = sum_d;
            dg[c] = sum_dx;
            let g = self.gamma.data()[c];
            let k = g * cache.invstd[c] / pt;
            for ((o, &dv), &h) in dx.row_mut(c).iter_mut().zip(d).zip(xh) {
                *o = k * (pt * dv - sum_d - h * sum_dx);
            }
        }
        (dx, dg, db)
    }
}
