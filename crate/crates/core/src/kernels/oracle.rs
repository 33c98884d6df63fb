//! Scalar integer reference: raw bias, zero-point subtracted from every
//! input code, 64-bit accumulation checked against the 32-bit range.

use crate::error::{Error, Result};
use crate::quant::lower::{maxpool_codes, QuantLayer, QuantizedNetwork};

/// Convolution (or linear layer, `k = 1`) over CHW codes.
pub fn conv2d(layer: &QuantLayer, input: &[i32]) -> Result<Vec<i32>> {
    let (c, ih, iw, k, pad) = (layer.in_ch, layer.in_h, layer.in_w, layer.kernel, layer.pad);
    if input.len() != c * ih * iw {
        return Err(Error::Shape(format!("{} input codes for {c}x{ih}x{iw}", input.len())));
    }
    let (oh, ow) = (layer.out_h(), layer.out_w());
    let mut out = vec![0; layer.out_ch * oh * ow];
    for o in 0..layer.out_ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = layer.bias_int[o] as i64;
                for ci in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy as isize + ky as isize - pad as isize;
                            let ix = ox as isize + kx as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= ih as isize || ix >= iw as isize {
                                continue;
                            }
                            let x = input[(ci * ih + iy as usize) * iw + ix as usize] as i64;
                            let w = layer.weights[((o * c + ci) * k + ky) * k + kx] as i64;
                            acc += w * (x - layer.z_in as i64);
                        }
                    }
                }
                let acc = i32::try_from(acc).map_err(|_| Error::AccumulatorOverflow {
                    layer: layer.name.clone(),
                    bound: acc as i128,
                })?;
                out[(o * oh + oy) * ow + ox] = layer.requantize(acc);
            }
        }
    }
    Ok(out)
}

pub fn maxpool(input: &[i32], c: usize, h: usize, w: usize) -> Vec<i32> {
    maxpool_codes(input, c, h, w)
}

/// All layers on CHW input codes; returns the logit codes.
pub fn network(qnet: &QuantizedNetwork, input: &[i32]) -> Result<Vec<i32>> {
    let mut x = input.to_vec();
    for l in &qnet.layers {
        x = conv2d(l, &x)?;
        if l.pool_after {
            x = maxpool(&x, l.out_ch, l.out_h(), l.out_w());
        }
    }
    Ok(x)
}
