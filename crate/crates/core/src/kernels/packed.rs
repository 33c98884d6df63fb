//! Channel-innermost packed tensors.
//!
//! A pixel occupies `ceil(C / L)` consecutive 32-bit words, `L = 32 / bits`
//! lanes each; channel `c` sits in word `c / L`, lane `c % L`. Unused lanes
//! and the optional spatial border hold the zero-point code.

use crate::error::{Error, Result};
use crate::isa::lanes::{lanes, sext};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedTensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub bits: u32,
    pub zero_point: i32,
    /// Spatial border width stored around the logical extent.
    pub pad: usize,
    pub words: Vec<u32>,
}

fn check_bits(bits: u32) -> Result<()> {
    if bits == 4 || bits == 8 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lane width must be 4 or 8, got {bits}")))
    }
}

fn check_code(v: i32, bits: u32) -> Result<()> {
    let h = 1i32 << (bits - 1);
    if v < -h || v >= h {
        return Err(Error::LaneRange { value: v, bits });
    }
    Ok(())
}

/// Words per pixel.
pub fn words_per_pixel(c: usize, bits: u32) -> usize {
    c.div_ceil(lanes(bits))
}

/// Sets lane `lane` of `word` to the low `bits` of `v`.
#[inline]
pub fn set_lane(word: u32, lane: usize, bits: u32, v: i32) -> u32 {
    let shift = lane as u32 * bits;
    let mask = ((1u32 << bits) - 1) << shift;
    (word & !mask) | (((v as u32) << shift) & mask)
}

#[inline]
pub fn get_lane(word: u32, lane: usize, bits: u32) -> i32 {
    sext(word >> (lane as u32 * bits), bits)
}

/// Word with every lane set to `v`.
pub fn splat(v: i32, bits: u32) -> u32 {
    (0..lanes(bits)).fold(0, |w, l| set_lane(w, l, bits, v))
}

impl PackedTensor {
    /// All lanes (border included) set to the zero-point.
    pub fn filled(c: usize, h: usize, w: usize, bits: u32, zero_point: i32, pad: usize) -> Result<Self> {
        check_bits(bits)?;
        check_code(zero_point, bits)?;
        let n = (h + 2 * pad) * (w + 2 * pad) * words_per_pixel(c, bits);
        Ok(Self {
            c,
            h,
            w,
            bits,
            zero_point,
            pad,
            words: vec![splat(zero_point, bits); n],
        })
    }

    /// Packs CHW codes.
    pub fn pack(codes: &[i32], c: usize, h: usize, w: usize, bits: u32, zero_point: i32, pad: usize) -> Result<Self> {
        if codes.len() != c * h * w {
            return Err(Error::Shape(format!("{} codes for {c}x{h}x{w}", codes.len())));
        }
        let mut t = Self::filled(c, h, w, bits, zero_point, pad)?;
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = codes[(ci * h + y) * w + x];
                    check_code(v, bits)?;
                    t.set(ci, y, x, v);
                }
            }
        }
        Ok(t)
    }

    pub fn lanes(&self) -> usize {
        lanes(self.bits)
    }

    pub fn wpp(&self) -> usize {
        words_per_pixel(self.c, self.bits)
    }

    pub fn padded_w(&self) -> usize {
        self.w + 2 * self.pad
    }

    pub fn padded_h(&self) -> usize {
        self.h + 2 * self.pad
    }

    /// Index of the first word of padded-coordinate pixel `(py, px)`.
    pub fn pixel_word(&self, py: usize, px: usize) -> usize {
        (py * self.padded_w() + px) * self.wpp()
    }

    fn locate(&self, c: usize, y: usize, x: usize) -> (usize, usize) {
        let l = self.lanes();
        (self.pixel_word(y + self.pad, x + self.pad) + c / l, c % l)
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> i32 {
        let (wi, lane) = self.locate(c, y, x);
        get_lane(self.words[wi], lane, self.bits)
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: i32) {
        let (wi, lane) = self.locate(c, y, x);
        self.words[wi] = set_lane(self.words[wi], lane, self.bits, v);
    }

    /// Logical codes in CHW order.
    pub fn unpack(&self) -> Vec<i32> {
        let mut out = Vec::with_capacity(self.c * self.h * self.w);
        for ci in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    out.push(self.get(ci, y, x));
                }
            }
        }
        out
    }

    /// Same codes with a different stored border.
    pub fn with_pad(&self, pad: usize) -> PackedTensor {
        PackedTensor::pack(&self.unpack(), self.c, self.h, self.w, self.bits, self.zero_point, pad).expect("valid codes")
    }

    /// Codes in HWC order as a `(H*W*C, 1, 1)` tensor.
    pub fn flatten_hwc(&self) -> PackedTensor {
        let mut codes = Vec::with_capacity(self.c * self.h * self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                for ci in 0..self.c {
                    codes.push(self.get(ci, y, x));
                }
            }
        }
        PackedTensor::pack(&codes, codes.len(), 1, 1, self.bits, self.zero_point, 0).expect("valid codes")
    }
}

/// Convolution weights in OHWI order: per output channel and tap,
/// `ceil(C_in / L)` words with unused lanes zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedWeights {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub bits: u32,
    pub words: Vec<u32>,
}

impl PackedWeights {
    /// Packs `(out, in, k, k)` signed codes.
    pub fn pack(codes: &[i32], out_ch: usize, in_ch: usize, kernel: usize, bits: u32) -> Result<Self> {
        check_bits(bits)?;
        let kk = kernel * kernel;
        if codes.len() != out_ch * in_ch * kk {
            return Err(Error::Shape(format!("{} weight codes for {out_ch}x{in_ch}x{kernel}x{kernel}", codes.len())));
        }
        let wpp = words_per_pixel(in_ch, bits);
        let l = lanes(bits);
        let mut words = vec![0u32; out_ch * kk * wpp];
        for o in 0..out_ch {
            for c in 0..in_ch {
                for t in 0..kk {
                    let v = codes[(o * in_ch + c) * kk + t];
                    check_code(v, bits)?;
                    let wi = (o * kk + t) * wpp + c / l;
                    words[wi] = set_lane(words[wi], c % l, bits, v);
                }
            }
        }
        Ok(Self { out_ch, in_ch, kernel, bits, words })
    }

    pub fn wpp(&self) -> usize {
        words_per_pixel(self.in_ch, self.bits)
    }

    /// Words per output channel.
    pub fn words_per_output(&self) -> usize {
        self.kernel * self.kernel * self.wpp()
    }

    /// Signed codes in `(out, in, k, k)` order.
    pub fn unpack(&self) -> Vec<i32> {
        let kk = self.kernel * self.kernel;
        let (wpp, l) = (self.wpp(), lanes(self.bits));
        let mut out = Vec::with_capacity(self.out_ch * self.in_ch * kk);
        for o in 0..self.out_ch {
            for c in 0..self.in_ch {
                for t in 0..kk {
                    out.push(get_lane(self.words[(o * kk + t) * wpp + c / l], c % l, self.bits));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_unpack_identity_with_padding_lanes() {
        let codes: Vec<i32> = (0..5 * 3 * 2).map(|i| (i % 15) - 8).collect();
        let t = PackedTensor::pack(&codes, 5, 3, 2, 4, -8, 1).unwrap();
        assert_eq!(t.unpack(), codes);
        assert_eq!(t.wpp(), 1);
        // lanes 5..8 of every pixel and the whole border hold the zero-point
        assert_eq!(get_lane(t.words[t.pixel_word(1, 1)], 6, 4), -8);
        assert_eq!(t.words[0], splat(-8, 4));
    }

    #[test]
    fn out_of_range_codes_are_rejected() {
        assert!(PackedTensor::pack(&[8], 1, 1, 1, 4, 0, 0).is_err());
        assert!(PackedTensor::pack(&[-129], 1, 1, 1, 8, 0, 0).is_err());
        assert!(PackedWeights::pack(&[200], 1, 1, 1, 8).is_err());
    }

    #[test]
    fn weights_are_ohwi() {
        // 1 output, 2 inputs, 1x1: both channels share one word
        let w = PackedWeights::pack(&[3, -2], 1, 2, 1, 8).unwrap();
        assert_eq!(w.words, vec![0x0000_FE03]);
    }
}
