//! Compiles one INT4 convolution, prints its assembly and compares the
//! opcode mix with the INT8 version of the same layer.

use ircount::kernels::runner::{compile_conv, isa_conv2d};
use ircount::kernels::PackedTensor;
use ircount::quant::lower::{requant_params, LayerKind, QuantLayer};
use ircount::quant::AffineQuantizer;

fn layer(bits: u32) -> QuantLayer {
    let (in_ch, out_ch) = (8, 2);
    let weights: Vec<i32> = (0..out_ch * in_ch * 9).map(|i| (i as i32 % 7) - 3).collect();
    let (multiplier, shift) = requant_params(0.01).unwrap();
    let q = AffineQuantizer::<f64>::unsigned(1.0, bits).unwrap();
    QuantLayer {
        name: "conv".into(),
        kind: LayerKind::Conv,
        in_ch,
        out_ch,
        kernel: 3,
        pad: 1,
        in_h: 4,
        in_w: 4,
        bits,
        out_bits: bits,
        weights,
        bias_int: vec![10; out_ch],
        bias: vec![10; out_ch],
        multiplier,
        shift,
        z_in: 0,
        z_out: 0,
        in_q: q,
        w_q: q,
        out_q: q,
        pool_after: false,
    }
}

fn main() -> ircount::Result<()> {
    for bits in [4, 8] {
        let l = layer(bits);
        let codes: Vec<i32> = (0..8 * 16).map(|i| (i % 5) - 2).collect();
        let x = PackedTensor::pack(&codes, 8, 4, 4, bits, 0, 0)?;
        if bits == 4 {
            let (prog, _) = compile_conv(&l, &x)?;
            print!("{}", prog.listing());
        }
        let (_, run) = isa_conv2d(&l, &x)?;
        println!("; INT{bits}: {} cycles, {} SDOTP, opcode counts {:?}", run.cycles, run.sdotp(), run.counts);
    }
    Ok(())
}
