//! Slice-level kernels shared by the layers.
//!
//! Activations are kept channel-major (`C x N x H x W`), so a convolution is
//! one matrix product between the weight matrix and an im2col buffer, and a
//! linear layer is the same product with `H = W = 1`.
//!
//! Forward products accumulate every output in increasing reduction index,
//! one term at a time. Removing a reduction row whose inputs are all zero
//! therefore leaves every output bit-identical, which is what makes channel
//! extraction exact.

use crate::tensor::Scalar;

/// Channel-major feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct Fmap<T: Scalar> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Fmap<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            n,
            h,
            w,
            data: vec![T::zero(); c * n * h * w],
        }
    }

    /// Elements per channel row.
    pub fn plane(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn row(&self, c: usize) -> &[T] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [T] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    /// From an `N x C x H x W` buffer.
    pub fn from_nchw(n: usize, c: usize, h: usize, w: usize, src: &[T]) -> Self {
        let mut out = Self::zeros(c, n, h, w);
        let hw = h * w;
        for ni in 0..n {
            for ci in 0..c {
                let s = &src[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                out.data[(ci * n + ni) * hw..(ci * n + ni + 1) * hw].copy_from_slice(s);
            }
        }
        out
    }

    pub fn to_nchw(&self) -> Vec<T> {
        let hw = self.h * self.w;
        let mut out = vec![T::zero(); self.data.len()];
        for ni in 0..self.n {
            for ci in 0..self.c {
                out[(ni * self.c + ci) * hw..(ni * self.c + ci + 1) * hw]
                    .copy_from_slice(&self.data[(ci * self.n + ni) * hw..(ci * self.n + ni + 1) * hw]);
            }
        }
        out
    }

    /// `(C, N, H, W)` to `(C*H*W, N, 1, 1)` with feature index `c*H*W + y*W + x`.
    pub fn flatten(&self) -> Fmap<T> {
        let hw = self.h * self.w;
        let mut out = Fmap::zeros(self.c * hw, self.n, 1, 1);
        for ci in 0..self.c {
            for ni in 0..self.n {
                for s in 0..hw {
                    out.data[(ci * hw + s) * self.n + ni] = self.data[(ci * self.n + ni) * hw + s];
                }
            }
        }
        out
    }

    pub fn unflatten(&self, c: usize, h: usize, w: usize) -> Fmap<T> {
        let hw = h * w;
        debug_assert_eq!(self.c, c * hw);
        let mut out = Fmap::zeros(c, self.n, h, w);
        for ci in 0..c {
            for ni in 0..self.n {
                for s in 0..hw {
                    out.data[(ci * self.n + ni) * hw + s] = self.data[(ci * hw + s) * self.n + ni];
                }
            }
        }
        out
    }
}

/// im2col for a stride-1 square kernel. Rows are `c*k*k + ky*k + kx`,
/// columns `n*OH*OW + oy*OW + ox`. Rows of channels with `skip[c]` are left
/// zero.
pub fn im2col<T: Scalar>(x: &Fmap<T>, k: usize, pad: usize, skip: Option<&[bool]>) -> (Vec<T>, usize, usize) {
    let oh = x.h + 2 * pad + 1 - k;
    let ow = x.w + 2 * pad + 1 - k;
    let p = x.n * oh * ow;
    let mut cols = vec![T::zero(); x.c * k * k * p];
    for c in 0..x.c {
        if skip.is_some_and(|s| s[c]) {
            continue;
        }
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                for n in 0..x.n {
                    let src = &x.data[(c * x.n + n) * x.h * x.w..][..x.h * x.w];
                    for oy in 0..oh {
                        let iy = oy as isize + ky as isize - pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..ow {
                            let ix = ox as isize + kx as isize - pad as isize;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            row[(n * oh + oy) * ow + ox] = src[iy * x.w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    (cols, oh, ow)
}

/// Scatter-add of im2col gradients back to the input map.
pub fn col2im<T: Scalar>(
    dcols: &[T],
    c: usize,
    n: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
) -> Fmap<T> {
    let oh = h + 2 * pad + 1 - k;
    let ow = w + 2 * pad + 1 - k;
    let p = n * oh * ow;
    let mut dx = Fmap::zeros(c, n, h, w);
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &dcols[((ci * k + ky) * k + kx) * p..][..p];
                for ni in 0..n {
                    let dst = &mut dx.data[(ci * n + ni) * h * w..][..h * w];
                    for oy in 0..oh {
                        let iy = oy as isize + ky as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..ow {
                            let ix = ox as isize + kx as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            dst[iy * w + ix as usize] += row[(ni * oh + oy) * ow + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `out[m][p] = bias[m] + sum_k w[m][k] * x[k][p]`, reduction in order of `k`.
///
/// `rows` selects which outputs are computed (others are zero); `skip_k`
/// marks reduction rows known to be all-zero.
pub fn matmul_bias<T: Scalar>(
    w: &[T],
    bias: &[T],
    x: &[T],
    m: usize,
    k: usize,
    p: usize,
    rows: Option<&[bool]>,
    skip_k: Option<&[bool]>,
) -> Vec<T> {
    debug_assert_eq!(w.len(), m * k);
    debug_assert_eq!(x.len(), k * p);
    let mut out = vec![T::zero(); m * p];
    for mi in 0..m {
        if rows.is_some_and(|r| !r[mi]) {
            continue;
        }
        let orow = &mut out[mi * p..(mi + 1) * p];
        orow.iter_mut().for_each(|o| *o = bias[mi]);
        let wrow = &w[mi * k..(mi + 1) * k];
        for (ki, &wv) in wrow.iter().enumerate() {
            if skip_k.is_some_and(|s| s[ki]) {
                continue;
            }
            let xrow = &x[ki * p..(ki + 1) * p];
            for (o, &xv) in orow.iter_mut().zip(xrow) {
                *o += wv * xv;
            }
        }
    }
    out
}

/// Dot product with eight independent partial sums.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Gradients of [`matmul_bias`]: returns `(dw, dbias, dx)`. `dx` is only
/// computed for reduction rows with `need_k[k]` (all when `None`).
pub fn matmul_bias_backward<T: Scalar>(
    w: &[T],
    x: &[T],
    dout: &[T],
    m: usize,
    k: usize,
    p: usize,
    need_k: Option<&[bool]>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); m * k];
    let mut db = vec![T::zero(); m];
    let mut dx = vec![T::zero(); k * p];
    for mi in 0..m {
        let drow = &dout[mi * p..(mi + 1) * p];
        db[mi] = drow.iter().copied().sum();
        if drow.iter().all(|v| *v == T::zero()) {
            continue;
        }
        for ki in 0..k {
            dw[mi * k + ki] = dot(drow, &x[ki * p..(ki + 1) * p]);
        }
    }
    for ki in 0..k {
        if need_k.is_some_and(|s| !s[ki]) {
            continue;
        }
        let dxrow = &mut dx[ki * p..(ki + 1) * p];
        for mi in 0..m {
            let wv = w[mi * k + ki];
            if wv == T::zero() {
                continue;
            }
            for (d, &g) in dxrow.iter_mut().zip(&dout[mi * p..(mi + 1) * p]) {
                *d += wv * g;
            }
        }
    }
    (dw, db, dx)
}

#[inline]
pub fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// 2x2 stride-2 max-pool (floor semantics). Returns output and, per output
/// element, the flat input index that won. Ties go to the lowest index.
pub fn maxpool2<T: Scalar>(x: &Fmap<T>) -> (Fmap<T>, Vec<usize>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Fmap::zeros(x.c, x.n, oh, ow);
    let mut arg = vec![0usize; out.data.len()];
    for cn in 0..x.c * x.n {
        let base = cn * x.h * x.w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * x.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * x.w + 2 * ox + dx;
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                let o = (cn * oh + oy) * ow + ox;
                out.data[o] = x.data[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<T: Scalar>(dout: &Fmap<T>, arg: &[usize], c: usize, n: usize, h: usize, w: usize) -> Fmap<T> {
    let mut dx = Fmap::zeros(c, n, h, w);
    for (g, &i) in dout.data.iter().zip(arg) {
        dx.data[i] += *g;
    }
    dx
}

/// Mean softmax cross-entropy over a `(classes x N)` logits buffer; returns
/// the loss and `dloss/dlogits` in the same layout.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], classes: usize, labels: &[usize]) -> (T, Vec<T>) {
    let n = labels.len();
    let mut grad = vec![T::zero(); logits.len()];
    let mut loss = 0.0f64;
    let inv_n = T::c(1.0 / n as f64);
    for (j, &y) in labels.iter().enumerate() {
        let mut mx = T::neg_infinity();
        for c in 0..classes {
            mx = mx.max(logits[c * n + j]);
        }
        let mut z = T::zero();
        for c in 0..classes {
            z += (logits[c * n + j] - mx).exp();
        }
        let logz = z.ln() + mx;
        loss += (logz - logits[y * n + j]).f64();
        for c in 0..classes {
            let p = (logits[c * n + j] - logz).exp();
            let t = if c == y { T::one() } else { T::zero() };
            grad[c * n + j] = (p - t) * inv_n;
        }
    }
    (T::c(loss / n as f64), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_roundtrip() {
        let mut x = Fmap::<f64>::zeros(3, 2, 2, 2);
        for (i, v) in x.data.iter_mut().enumerate() {
            *v = i as f64;
        }
        let f = x.flatten();
        assert_eq!(f.c, 12);
        // feature c*4+s of sample n
        assert_eq!(f.data[(1 * 4 + 3) * 2 + 1], x.data[(1 * 2 + 1) * 4 + 3]);
        assert_eq!(f.unflatten(3, 2, 2), x);
    }

    #[test]
    fn nchw_roundtrip() {
        let src: Vec<f32> = (0..2 * 3 * 4).map(|v| v as f32).collect();
        let f = Fmap::from_nchw(2, 3, 2, 2, &src);
        assert_eq!(f.to_nchw(), src);
    }

    #[test]
    fn maxpool_ties_pick_first_and_route_all_gradient() {
        let mut x = Fmap::<f64>::zeros(1, 1, 2, 4);
        x.data.copy_from_slice(&[1.0, 1.0, 5.0, 2.0, 1.0, 0.0, 5.0, 5.0]);
        let (y, arg) = maxpool2(&x);
        assert_eq!(y.data, vec![1.0, 5.0]);
        assert_eq!(arg, vec![0, 2]);
        let mut dy = Fmap::zeros(1, 1, 1, 2);
        dy.data.copy_from_slice(&[0.5, -2.0]);
        let dx = maxpool2_backward(&dy, &arg, 1, 1, 2, 4);
        assert_eq!(dx.data.iter().sum::<f64>(), -1.5);
        assert_eq!(dx.data[0], 0.5);
        assert_eq!(dx.data[2], -2.0);
    }

    #[test]
    fn uniform_logits_give_ln4() {
        let (loss, _) = softmax_cross_entropy(&[0.3f64; 4], 4, &[2]);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }
}
