mod common;

use common::criteria::lowered;
use common::rng;
use ircount::kernels::oracle;
use ircount::quant::enumerate_specs;
use ircount::quant::lower::{lane_range, reference_network};
use ircount::quant::AffineQuantizer;
use ircount::train::network::{Widths, FRAME_PIXELS};
use rand::Rng;

#[test]
fn fake_quant_error_is_at_most_half_a_step() {
    common::criteria::fake_quant_bound();
    let q32 = AffineQuantizer::<f32>::new(-0.4, 1.7, 4).unwrap();
    let half = q32.step() / 2.0;
    for i in 0..=10_000 {
        let x = -0.4 + 2.1 * i as f32 / 10_000.0;
        assert!((q32.fake(x) - x).abs() <= half * (1.0 + 1e-4), "f32 at {x}");
    }
}

#[test]
fn lowering_is_code_exact_on_exhaustive_single_layers() {
    common::criteria::lowering_exact();
}

#[test]
fn lowered_networks_match_reference_on_random_codes() {
    let mut r = rng(5);
    for (i, spec) in enumerate_specs(false).into_iter().enumerate() {
        let q = lowered(Widths { conv1: 3, conv2: 5, fc1: 4 }, 300 + i as u64, spec);
        for _ in 0..4 {
            let (lo, hi) = lane_range(q.layers[0].bits);
            let codes: Vec<i32> = (0..FRAME_PIXELS).map(|_| r.gen_range(lo..=hi)).collect();
            assert_eq!(
                oracle::network(&q, &codes).unwrap(),
                reference_network(&q, &codes),
                "{spec}"
            );
        }
    }
}
