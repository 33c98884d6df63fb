mod common;

use common::rng;
use ircount::isa::EnergyModel;
use ircount::kernels::{oracle, Backend, NetworkProgram};
use ircount::quant::{lower_to_integer, prepare, QuantSpec, QuantizedNetwork};
use ircount::train::network::{argmax, Network, Widths, FRAME_PIXELS};
use rand::Rng;

fn frames(n: usize, seed: u64) -> Vec<[f32; FRAME_PIXELS]> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let mut f = [0f32; FRAME_PIXELS];
            for v in f.iter_mut() {
                *v = 22.0 + r.gen_range(-1.0..6.0);
            }
            f
        })
        .collect()
}

fn quantized(widths: Widths, bits: [u32; 4], seed: u64) -> (Network<f32>, QuantizedNetwork) {
    let mut r = rng(seed);
    let mut net = Network::<f32>::new(widths, &mut r);
    let calib = frames(64, seed + 1);
    net.norm = ircount::train::Normalizer::fit(&calib);
    let net = prepare(&net, QuantSpec::new(bits).unwrap(), &calib).unwrap();
    let q = lower_to_integer(&net).unwrap();
    (net, q)
}

#[test]
fn isa_host_and_oracle_agree_on_random_networks() {
    let widths = Widths { conv1: 5, conv2: 9, fc1: 6 };
    for (i, bits) in [[8, 8, 8, 8], [8, 4, 4, 8], [4, 4, 4, 4], [8, 8, 4, 4]].into_iter().enumerate() {
        let (_, q) = quantized(widths, bits, 40 + i as u64);
        let prog = NetworkProgram::compile(&q).unwrap();
        let mut m = prog.machine();
        for f in frames(6, 90 + i as u64) {
            let codes = q.quantize_frame(&f);
            let expect = oracle::network(&q, &codes).unwrap();
            let host = prog.run_host(&codes, &EnergyModel::default()).unwrap();
            let isa = prog.run_isa(&codes, &mut m).unwrap();
            assert_eq!(host.logits, expect, "{bits:?}");
            assert_eq!(isa.logits, expect, "{bits:?}");
            assert_eq!(isa.prediction, host.prediction);
            assert_eq!(isa.cycles, host.cycles);
            assert_eq!(isa.sdotp, host.sdotp);
            assert!((isa.energy - host.energy).abs() < 1e-9);
        }
    }
}

#[test]
fn integer_prediction_matches_fake_quant_graph_with_margin() {
    let widths = Widths { conv1: 4, conv2: 6, fc1: 5 };
    let (mut net, q) = quantized(widths, [8, 8, 8, 8], 7);
    let fs = frames(40, 8);
    let logits = net.logits(&fs).unwrap();
    let step = q.layers[3].out_q.step();
    let mut checked = 0;
    for (f, l) in fs.iter().zip(logits.iter()) {
        let mut sorted: Vec<f64> = l.iter().map(|&v| v as f64).collect();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sorted[0] - sorted[1] <= step {
            continue;
        }
        checked += 1;
        let out = ircount::kernels::run_network_int(&q, &q.quantize_frame(f), Backend::IsaSim).unwrap();
        assert_eq!(out.prediction, argmax(&l[..]));
    }
    assert!(checked > 0);
}

#[test]
fn int4_network_uses_fewer_sdotps_and_cycles() {
    let widths = Widths { conv1: 8, conv2: 16, fc1: 8 };
    let (_, q8) = quantized(widths, [8, 8, 8, 8], 3);
    let (_, q4) = quantized(widths, [8, 4, 4, 4], 3);
    let p8 = NetworkProgram::compile(&q8).unwrap();
    let p4 = NetworkProgram::compile(&q4).unwrap();
    let codes = q8.quantize_frame(&frames(1, 5)[0]);
    let r8 = p8.run(&codes, Backend::IsaSim, &EnergyModel::default()).unwrap();
    let codes = q4.quantize_frame(&frames(1, 5)[0]);
    let r4 = p4.run(&codes, Backend::IsaSim, &EnergyModel::default()).unwrap();
    assert!(r4.sdotp < r8.sdotp);
    assert!(r4.cycles < r8.cycles, "{} vs {}", r4.cycles, r8.cycles);
}
