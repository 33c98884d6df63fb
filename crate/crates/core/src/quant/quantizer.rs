//! Affine quantizers: `code = round((x - alpha) / (beta - alpha) * (2^N - 1))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Round half up (toward +inf).
#[inline]
pub fn round_half_up<T: Scalar>(v: T) -> T {
    (v + T::c(0.5)).floor()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AffineQuantizer<T: Scalar = f64> {
    pub alpha: T,
    pub beta: T,
    pub bits: u32,
}

impl<T: Scalar> AffineQuantizer<T> {
    pub fn new(alpha: T, beta: T, bits: u32) -> Result<Self> {
        if !(beta > alpha) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::DegenerateRange {
                alpha: alpha.f64(),
                beta: beta.f64(),
            });
        }
        if !(2..=16).contains(&bits) {
            return Err(Error::InvalidArgument(format!("{bits}-bit quantizer")));
        }
        Ok(Self { alpha, beta, bits })
    }

    /// Range `[0, beta]` for post-ReLU activations; signed zero-point `-2^(N-1)`.
    pub fn unsigned(beta: T, bits: u32) -> Result<Self> {
        Self::new(T::zero(), beta, bits)
    }

    /// Range `[-2^(N-1) * step, (2^(N-1) - 1) * step]`: real zero sits on
    /// signed code 0.
    pub fn symmetric(step: T, bits: u32) -> Result<Self> {
        let half = T::c((1u64 << (bits - 1)) as f64);
        Self::new(-half * step, (half - T::one()) * step, bits)
    }

    /// Symmetric quantizer whose range covers `[min, max]` (weights).
    pub fn covering(min: T, max: T, bits: u32) -> Result<Self> {
        let half = (1u64 << (bits - 1)) as f64;
        let lo = (-min.f64()).max(0.0) / half;
        let hi = max.f64().max(0.0) / (half - 1.0);
        let step = lo.max(hi).max(1e-12);
        Self::symmetric(T::c(step), bits)
    }

    /// Range containing `[min(lo, 0), max(hi, 0)]` with `alpha` moved onto the
    /// code grid, so the zero-point is an integer.
    pub fn with_integer_zero(lo: T, hi: T, bits: u32) -> Result<Self> {
        let lo = lo.min(T::zero());
        let hi = hi.max(T::zero());
        if !(hi > lo) {
            return Err(Error::DegenerateRange {
                alpha: lo.f64(),
                beta: hi.f64(),
            });
        }
        let levels = ((1u64 << bits) - 1) as f64;
        let step = (hi.f64() - lo.f64()) / levels;
        let zu = round_half_up(-lo.f64() / step).clamp(0.0, levels);
        let alpha = -zu * step;
        Self::new(T::c(alpha), T::c(alpha + levels * step), bits)
    }

    pub fn levels(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn step(&self) -> T {
        (self.beta - self.alpha) / T::c(self.levels() as f64)
    }

    /// Unsigned code in `[0, 2^N - 1]`.
    pub fn code(&self, x: T) -> u32 {
        let l = T::c(self.levels() as f64);
        let t = x.max(self.alpha).min(self.beta);
        let c = round_half_up((t - self.alpha) / (self.beta - self.alpha) * l);
        c.to_u32().unwrap_or(0).min(self.levels())
    }

    /// Code re-centred to the signed lane range `[-2^(N-1), 2^(N-1) - 1]`.
    pub fn signed_code(&self, x: T) -> i32 {
        self.code(x) as i32 - (1i32 << (self.bits - 1))
    }

    pub fn dequantize(&self, code: u32) -> T {
        let f = T::c(code as f64) / T::c(self.levels() as f64);
        self.alpha * (T::one() - f) + self.beta * f
    }

    pub fn fake(&self, x: T) -> T {
        self.dequantize(self.code(x))
    }

    /// Signed-domain zero-point `Z` with `x = step * (q - Z)`, rounded to the
    /// nearest integer.
    pub fn zero_point(&self) -> i32 {
        let z = -self.alpha.f64() / self.step().f64() - (1u64 << (self.bits - 1)) as f64;
        z.round() as i32
    }

    /// Same step, with `alpha` moved onto the integer zero-point lattice so
    /// that code `z` dequantizes to exactly zero. Integer kernels assume
    /// this form.
    pub fn on_lattice(&self) -> Self {
        let step = self.step();
        let offset = T::c((self.zero_point() as i64 + (1i64 << (self.bits - 1))) as f64);
        let alpha = -offset * step;
        Self {
            alpha,
            beta: alpha + T::c(self.levels() as f64) * step,
            bits: self.bits,
        }
    }

    pub fn cast<U: Scalar>(&self) -> AffineQuantizer<U> {
        AffineQuantizer {
            alpha: U::c(self.alpha.f64()),
            beta: U::c(self.beta.f64()),
            bits: self.bits,
        }
    }
}

/// Dequantized image of `t` under `q`.
pub fn fake_quant<T: Scalar>(t: &Tensor<T>, q: &AffineQuantizer<T>) -> Result<Tensor<T>> {
    let _ = AffineQuantizer::new(q.alpha, q.beta, q.bits)?;
    Tensor::from_vec(t.shape(), t.data().iter().map(|&v| q.fake(v)).collect())
}

/// Straight-through gradient of [`fake_quant`]: pass-through inside
/// `[alpha, beta]`, zero outside.
pub fn fake_quant_backward<T: Scalar>(x: &[T], dy: &[T], q: &AffineQuantizer<T>) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| if v >= q.alpha && v <= q.beta { g } else { T::zero() })
        .collect()
}

/// How a learnable activation range is parameterised by its upper end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RangeKind {
    /// `[0, beta]`, used after ReLU.
    Unsigned,
    /// Symmetric around signed code 0, used for the logits.
    Symmetric,
}

/// Activation quantizer with a trainable upper bound.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedRange<T: Scalar> {
    pub beta: Tensor<T>,
    pub bits: u32,
    pub kind: RangeKind,
}

impl<T: Scalar> LearnedRange<T> {
    pub fn new(beta: T, bits: u32, kind: RangeKind) -> Self {
        Self {
            beta: Tensor::full([1, 1, 1, 1], beta),
            bits,
            kind,
        }
    }

    pub fn beta_value(&self) -> T {
        self.beta.data()[0]
    }

    pub fn quantizer(&self) -> Result<AffineQuantizer<T>> {
        let b = self.beta_value();
        match self.kind {
            RangeKind::Unsigned => AffineQuantizer::unsigned(b, self.bits),
            RangeKind::Symmetric => {
                let half = T::c((1u64 << (self.bits - 1)) as f64);
                AffineQuantizer::symmetric(b / (half - T::one()), self.bits)
            }
        }
    }

    /// `d out / d beta` of the clipped value at `x` (zero inside the range).
    pub fn dclip_dbeta(&self, q: &AffineQuantizer<T>, x: T) -> T {
        if x > q.beta {
            T::one()
        } else if x < q.alpha {
            match self.kind {
                RangeKind::Unsigned => T::zero(),
                RangeKind::Symmetric => q.alpha / q.beta,
            }
        } else {
            T::zero()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_maps_to_128() {
        let q = AffineQuantizer::new(0.0f64, 1.0, 8).unwrap();
        assert_eq!(q.code(0.5), 128);
        assert_eq!(q.fake(0.5), 128.0 / 255.0);
    }

    #[test]
    fn endpoints_are_fixed_points() {
        for bits in [4, 8] {
            let q = AffineQuantizer::new(-0.7f64, 2.3, bits).unwrap();
            assert_eq!(q.code(-0.7), 0);
            assert_eq!(q.fake(-0.7), -0.7);
            assert_eq!(q.code(2.3), (1 << bits) - 1);
            assert_eq!(q.fake(2.3), 2.3);
        }
    }

    #[test]
    fn degenerate_range_is_rejected() {
        assert!(AffineQuantizer::new(1.0f64, 1.0, 8).is_err());
        assert!(AffineQuantizer::new(1.0f64, 0.5, 4).is_err());
        let t = Tensor::<f64>::zeros([1, 1, 1, 1]);
        let bad = AffineQuantizer { alpha: 0.0, beta: 0.0, bits: 8 };
        assert!(fake_quant(&t, &bad).is_err());
    }

    #[test]
    fn lattice_snap_keeps_step_and_zero() {
        let q = AffineQuantizer::<f32>::covering(-1.3409424, 1.3304663, 8).unwrap().cast::<f64>();
        let l = q.on_lattice();
        assert!((l.step() - q.step()).abs() < 1e-15);
        assert_eq!(l.zero_point(), q.zero_point());
        assert_eq!(l.dequantize((l.zero_point() + 128) as u32), 0.0);
    }

    #[test]
    fn zero_points() {
        assert_eq!(AffineQuantizer::unsigned(3.0f64, 8).unwrap().zero_point(), -128);
        assert_eq!(AffineQuantizer::symmetric(0.1f64, 4).unwrap().zero_point(), 0);
        let q = AffineQuantizer::with_integer_zero(-1.3f64, 2.9, 4).unwrap();
        let z = -q.alpha / q.step() - 8.0;
        assert!((z - z.round()).abs() < 1e-9);
        assert!(q.alpha <= 0.0 && q.beta >= 0.0);
    }

    #[test]
    fn covering_contains_range() {
        let q = AffineQuantizer::covering(-0.3f64, 0.9, 4).unwrap();
        assert!(q.alpha <= -0.3 && q.beta >= 0.9 - 1e-12);
        assert_eq!(q.zero_point(), 0);
    }
}
