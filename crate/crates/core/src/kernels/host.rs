//! Host fast path on packed words, with the same reduction order as the
//! generated programs: full words through `sdotp`, leftover lanes one
//! multiply-accumulate at a time.

use crate::error::{Error, Result};
use crate::isa::lanes::{sdotp4, sdotp8};
use crate::quant::lower::QuantLayer;

use super::packed::{get_lane, PackedTensor, PackedWeights};

fn check_input(input: &PackedTensor, layer: &QuantLayer) -> Result<()> {
    if input.bits != layer.bits {
        return Err(Error::WidthMismatch { expected: layer.bits, got: input.bits });
    }
    if (input.c, input.h, input.w) != (layer.in_ch, layer.in_h, layer.in_w) {
        return Err(Error::Shape(format!(
            "layer {} expects {}x{}x{}, got {}x{}x{}",
            layer.name, layer.in_ch, layer.in_h, layer.in_w, input.c, input.h, input.w
        )));
    }
    if input.zero_point != layer.z_in {
        return Err(Error::InvalidArgument(format!(
            "input zero-point {} does not match layer {} ({})",
            input.zero_point, layer.name, layer.z_in
        )));
    }
    Ok(())
}

pub fn pack_weights(layer: &QuantLayer) -> Result<PackedWeights> {
    PackedWeights::pack(&layer.weights, layer.out_ch, layer.in_ch, layer.kernel, layer.bits)
}

/// Convolution with requantized output (no stored border).
pub fn conv2d_int(input: &PackedTensor, layer: &QuantLayer) -> Result<PackedTensor> {
    conv2d_int_with(input, layer, &pack_weights(layer)?)
}

/// As [`conv2d_int`] with pre-packed weights.
pub fn conv2d_int_with(input: &PackedTensor, layer: &QuantLayer, weights: &PackedWeights) -> Result<PackedTensor> {
    check_input(input, layer)?;
    layer.check_overflow()?;
    let padded;
    let x = if input.pad == layer.pad {
        input
    } else {
        padded = input.with_pad(layer.pad);
        &padded
    };
    let bits = layer.bits;
    let l = x.lanes();
    let wpp = x.wpp();
    let full = layer.in_ch / l;
    let rem = layer.in_ch % l;
    let k = layer.kernel;
    let dot = if bits == 8 { sdotp8 } else { sdotp4 };
    let (oh, ow) = (layer.out_h(), layer.out_w());
    let mut out = PackedTensor::filled(layer.out_ch, oh, ow, layer.out_bits, layer.z_out, 0)?;
    let wpo = weights.words_per_output();
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..layer.out_ch {
                let mut acc = layer.bias[o] as u32;
                let wbase = o * wpo;
                for ky in 0..k {
                    for kx in 0..k {
                        let a = &x.words[x.pixel_word(oy + ky, ox + kx)..][..wpp];
                        let w = &weights.words[wbase + (ky * k + kx) * wpp..][..wpp];
                        for j in 0..full {
                            acc = dot(a[j], w[j], acc);
                        }
                        for i in 0..rem {
                            let p = get_lane(a[full], i, bits).wrapping_mul(get_lane(w[full], i, bits));
                            acc = acc.wrapping_add(p as u32);
                        }
                    }
                }
                out.set(o, oy, ox, layer.requantize(acc as i32));
            }
        }
    }
    Ok(out)
}

/// Linear layer: a 1x1 convolution over a `(C, 1, 1)` input.
pub fn linear_int(input: &PackedTensor, layer: &QuantLayer) -> Result<PackedTensor> {
    if input.h != 1 || input.w != 1 || layer.kernel != 1 {
        return Err(Error::Shape("linear layers take (C, 1, 1) inputs and 1x1 weights".into()));
    }
    conv2d_int(input, layer)
}

/// 2x2, stride-2 max-pool over codes (odd trailing rows/columns dropped).
pub fn maxpool_int(input: &PackedTensor) -> Result<PackedTensor> {
    let (oh, ow) = (input.h / 2, input.w / 2);
    let mut out = PackedTensor::filled(input.c, oh, ow, input.bits, input.zero_point, 0)?;
    for c in 0..input.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let m = input
                    .get(c, 2 * oy, 2 * ox)
                    .max(input.get(c, 2 * oy, 2 * ox + 1))
                    .max(input.get(c, 2 * oy + 1, 2 * ox))
                    .max(input.get(c, 2 * oy + 1, 2 * ox + 1));
                out.set(c, oy, ox, m);
            }
        }
    }
    Ok(out)
}
