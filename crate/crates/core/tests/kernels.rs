mod common;

use common::{random_codes, random_layer, rng, LayerShape};
use ircount::kernels::runner::{isa_conv2d, isa_maxpool};
use ircount::kernels::{conv2d_int, linear_int, maxpool_int, PackedTensor};
use ircount::quant::lower::LayerKind;

#[test]
fn oracle_host_and_isa_agree() {
    common::criteria::kernel_triangle();
}

#[test]
fn conv2_sdotp_counts_and_int4_speedup() {
    common::criteria::throughput();
}

#[test]
fn linear_delegates_to_conv() {
    let mut r = rng(12);
    for bits in [4, 8] {
        for in_ch in [1, 3, 9, 64] {
            let shape = LayerShape { kind: LayerKind::Linear, in_ch, out_ch: 4, side: 1, bits, out_bits: 8 };
            let layer = random_layer(&shape, &mut r);
            let codes = random_codes(in_ch, bits, &mut r);
            let x = PackedTensor::pack(&codes, in_ch, 1, 1, bits, layer.z_in, 0).unwrap();
            assert_eq!(conv2d_int(&x, &layer).unwrap().unpack(), linear_int(&x, &layer).unwrap().unpack());
        }
    }
}

#[test]
fn pool_of_negative_int4_codes_keeps_least_negative() {
    let codes = vec![-8, -3, -5, -7];
    let x = PackedTensor::pack(&codes, 1, 2, 2, 4, -8, 0).unwrap();
    assert_eq!(maxpool_int(&x).unwrap().unpack(), vec![-3]);
    assert_eq!(isa_maxpool(&x).unwrap().0.unpack(), vec![-3]);
}

#[test]
fn width_mismatch_is_rejected() {
    let mut r = rng(14);
    let shape = LayerShape { kind: LayerKind::Conv, in_ch: 2, out_ch: 2, side: 4, bits: 8, out_bits: 8 };
    let layer = random_layer(&shape, &mut r);
    let x = PackedTensor::filled(2, 4, 4, 4, layer.z_in.clamp(-8, 7), 0).unwrap();
    assert!(conv2d_int(&x, &layer).is_err());
    assert!(isa_conv2d(&layer, &x).is_err());
}
