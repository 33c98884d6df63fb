//! Packed signed lanes and the two sum-of-dot-product primitives.
//! Lane 0 is the least significant.

use crate::error::{Error, Result};

/// Lanes per 32-bit word at `bits` width.
pub fn lanes(bits: u32) -> usize {
    (32 / bits) as usize
}

fn check_width(bits: u32) -> Result<()> {
    if bits == 4 || bits == 8 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lane width must be 4 or 8, got {bits}")))
    }
}

/// Sign-extends the low `bits` of `v`.
#[inline]
pub fn sext(v: u32, bits: u32) -> i32 {
    ((v << (32 - bits)) as i32) >> (32 - bits)
}

pub fn pack_lanes(values: &[i32], bits: u32) -> Result<u32> {
    check_width(bits)?;
    if values.len() != lanes(bits) {
        return Err(Error::InvalidArgument(format!(
            "{} values for {} {bits}-bit lanes",
            values.len(),
            lanes(bits)
        )));
    }
    let (lo, hi) = (-(1i32 << (bits - 1)), (1i32 << (bits - 1)) - 1);
    let mask = (1u32 << bits) - 1;
    let mut word = 0u32;
    for (i, &v) in values.iter().enumerate() {
        if v < lo || v > hi {
            return Err(Error::LaneRange { value: v, bits });
        }
        word |= (v as u32 & mask) << (i as u32 * bits);
    }
    Ok(word)
}

pub fn unpack_lanes(word: u32, bits: u32) -> Result<Vec<i32>> {
    check_width(bits)?;
    Ok((0..lanes(bits) as u32).map(|i| sext(word >> (i * bits), bits)).collect())
}

/// `rd + sum(sext8(rs1[i]) * sext8(rs2[i]))`, wrapping.
#[inline]
pub fn sdotp8(rs1: u32, rs2: u32, rd: u32) -> u32 {
    let mut acc = rd;
    for i in 0..4 {
        let a = (rs1 >> (8 * i)) as u8 as i8 as i32;
        let b = (rs2 >> (8 * i)) as u8 as i8 as i32;
        acc = acc.wrapping_add((a * b) as u32);
    }
    acc
}

/// `rd + sum(sext4(rs1[i]) * sext4(rs2[i]))` over eight nibbles, wrapping.
#[inline]
pub fn sdotp4(rs1: u32, rs2: u32, rd: u32) -> u32 {
    let mut acc = rd;
    for i in 0..8 {
        let a = sext(rs1 >> (4 * i), 4);
        let b = sext(rs2 >> (4 * i), 4);
        acc = acc.wrapping_add((a * b) as u32);
    }
    acc
}
