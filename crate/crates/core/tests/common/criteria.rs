//! One check per acceptance criterion. Each panics on failure and returns a
//! one-line summary on success; the topical test files and the acceptance
//! run share them.

use std::time::Instant;

use super::*;
use ircount::dnas::{exact_cost, extract, mask_cost, zeroed_equivalent, ChannelMask, CostMetric, MaskSet};
use ircount::isa::{DotWidth, Instr, Machine, Opcode, Reg};
use ircount::kernels::runner::{isa_conv2d, isa_linear, isa_maxpool};
use ircount::kernels::{conv2d_int, linear_int, maxpool_int, oracle, Backend, NetworkProgram, PackedTensor};
use ircount::isa::{sdotp4, sdotp8, EnergyModel};
use ircount::pipeline::metrics::{bas, inject_errors};
use ircount::pipeline::synth::{synth_generate, SynthConfig};
use ircount::postproc::apply_to_stream;
use ircount::quant::lower::{lane_range, reference_layer, LayerKind};
use ircount::quant::{enumerate_specs, lower_to_integer, prepare, AffineQuantizer, QuantSpec, QuantizedNetwork};
use ircount::train::network::{Mode, Network, Normalizer, ParamKind, Widths, FRAME_PIXELS};
use rand::Rng;

pub const GRADIENT_INSTANCES: u64 = 24;
pub const GRADIENT_TIME_LIMIT_S: f64 = 60.0;
pub const MASK_PATTERNS: u64 = 100;
pub const COST_PATTERNS: u64 = 50;
pub const SDOTP4_CONTEXTS: usize = 10_000;
pub const SDOTP8_TRIPLES: usize = 1_000_000;
pub const HALF_STEP_SLACK: f64 = 1e-9;
pub const GRID_POINTS: usize = 100_000;
pub const INJECTED_ERROR_RATE: f64 = 0.10;
pub const VOTE_WINDOW: usize = 5;
pub const MIN_VOTE_GAIN: f64 = 0.03;
pub const MAX_STEP_DELAY: usize = 3;

// ---- 1: gradients ------------------------------------------------------

/// Every weight, bias and batch-norm parameter against central differences.
/// Mask and range parameters carry straight-through estimates, not true
/// derivatives, so they are left out.
pub fn gradients() -> String {
    let start = Instant::now();
    let (mut total, mut kinks) = (0, 0);
    for seed in 0..GRADIENT_INSTANCES {
        let mut r = rng(seed + 100);
        let widths = Widths {
            conv1: r.gen_range(1..=4),
            conv2: r.gen_range(1..=4),
            fc1: r.gen_range(1..=5),
        };
        let mode = if r.gen_bool(0.5) { Mode::Train } else { Mode::Eval };
        let mut net = small_net(seed, widths);
        if seed % 3 == 2 {
            // fixed masks with at least one channel on per layer
            net.masks = Some(MaskSet {
                layers: widths.as_array().map(|n| {
                    ChannelMask::from_theta((0..n).map(|c| if c == 0 { 0.5 } else { r.gen_range(-1.5..1.5) }).collect())
                }),
            });
        }
        let batch = r.gen_range(1..=3);
        let x = random_frames(batch, &mut r);
        let labels: Vec<usize> = (0..batch).map(|_| r.gen_range(0..4)).collect();
        net.forward(&x, mode).unwrap();
        net.backward(&labels).unwrap();
        let grads: Vec<(usize, Vec<f64>)> = net
            .params_mut()
            .into_iter()
            .enumerate()
            .filter(|(_, (k, _))| *k == ParamKind::Weight)
            .map(|(i, (_, p))| (i, p.grad().unwrap().to_vec()))
            .collect();
        let mut bad = Vec::new();
        for (pi, g) in grads {
            for j in 0..g.len() {
                let v0 = net.params_mut()[pi].1.data()[j];
                let f = |v: f64| {
                    let mut n = net.clone();
                    n.params_mut()[pi].1.data_mut()[j] = v;
                    loss_of(&n, &x, &labels, mode)
                };
                let mut num = (f(v0 + FD_STEP) - f(v0 - FD_STEP)) / (2.0 * FD_STEP);
                if !close(g[j], num) {
                    // a ReLU or max-pool switch inside the stencil shows up as
                    // disagreeing one-sided slopes; shrink the step past it
                    let f0 = f(v0);
                    let (up, down) = ((f(v0 + FD_STEP) - f0) / FD_STEP, (f0 - f(v0 - FD_STEP)) / FD_STEP);
                    if !close(up, down) {
                        num = (f(v0 + FD_KINK_STEP) - f(v0 - FD_KINK_STEP)) / (2.0 * FD_KINK_STEP);
                        kinks += 1;
                    }
                }
                if !close(g[j], num) {
                    bad.push((pi, j, g[j], num));
                }
                total += 1;
            }
        }
        assert!(bad.is_empty(), "instance {seed} {widths:?} {mode:?}: {:?}", &bad[..bad.len().min(10)]);
    }
    assert!(kinks * 100 < total, "{kinks} kinks in {total} checks");
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < GRADIENT_TIME_LIMIT_S, "took {secs:.1} s");
    format!("{GRADIENT_INSTANCES} instances, {total} parameters, {kinks} kink retries, {secs:.1} s")
}

// ---- 2, 3: masks -------------------------------------------------------

fn random_widths(r: &mut ChaCha8Rng) -> Widths {
    Widths {
        conv1: r.gen_range(1..=8),
        conv2: r.gen_range(1..=6),
        fc1: r.gen_range(1..=8),
    }
}

/// Random thetas with at least one active channel per layer; some
/// channels sit below the straight-through window.
fn random_masks(w: Widths, r: &mut ChaCha8Rng) -> MaskSet<f64> {
    let layers = w.as_array().map(|n| {
        let mut theta: Vec<f64> = (0..n).map(|_| r.gen_range(-2.5..2.0)).collect();
        if theta.iter().all(|&t| t < 0.0) {
            let i = r.gen_range(0..n);
            theta[i] = r.gen_range(0.0..2.0);
        }
        ChannelMask::from_theta(theta)
    });
    MaskSet { layers }
}

fn logits(net: &Network<f64>, x: &ircount::tensor::Tensor<f64>, mode: Mode) -> Vec<f64> {
    net.clone().forward(x, mode).unwrap().data().to_vec()
}

pub fn mask_equivalence() -> String {
    let mut r = rng(2);
    for i in 0..MASK_PATTERNS {
        let w = random_widths(&mut r);
        let mut net = small_net(1000 + i, w);
        net.masks = Some(random_masks(w, &mut r));
        let x = random_frames(3, &mut r);
        let zeroed = zeroed_equivalent(&net);
        let sub = extract(&net).unwrap();
        assert_eq!(sub.widths, net.masks.as_ref().unwrap().extracted_widths());
        for mode in [Mode::Eval, Mode::Train] {
            let m = logits(&net, &x, mode);
            assert_eq!(m, logits(&zeroed, &x, mode), "pattern {i} {mode:?}: masked vs zeroed");
            assert_eq!(m, logits(&sub, &x, mode), "pattern {i} {mode:?}: masked vs extracted");
        }
    }
    format!("{MASK_PATTERNS} patterns, train and eval mode, bitwise equal")
}

pub fn cost_exactness() -> String {
    let mut r = rng(3);
    for i in 0..COST_PATTERNS {
        let w = random_widths(&mut r);
        let masks = random_masks(w, &mut r);
        let mut net = small_net(2000 + i, w);
        net.masks = Some(masks.clone());
        let sub = extract(&net).unwrap();
        assert_eq!(mask_cost(&masks, CostMetric::Params).0, sub.param_count() as f64, "pattern {i}");
        assert_eq!(mask_cost(&masks, CostMetric::Macs).0, sub.mac_count() as f64, "pattern {i}");
        for metric in [CostMetric::Params, CostMetric::Macs] {
            assert_eq!(mask_cost(&masks, metric).0, exact_cost(sub.widths, metric) as f64, "pattern {i} {metric}");
        }
    }
    format!("{COST_PATTERNS} extractions, params and MACs exact")
}

// ---- 5: SDOTP ----------------------------------------------------------

fn oracle_dot(a: u32, b: u32, acc: u32, bits: u32) -> u32 {
    let mut s = acc as i32 as i64;
    for i in 0..32 / bits {
        let sx = |w: u32| {
            let v = ((w >> (i * bits)) & ((1 << bits) - 1)) as i64;
            if v >= 1 << (bits - 1) {
                v - (1 << bits)
            } else {
                v
            }
        };
        s += sx(a) * sx(b);
    }
    s as u32
}

/// sdotp4: every lane position takes every 4-bit value (other lanes
/// random) against many random rs2/rd, plus every lane-value pair
/// broadcast to all lanes. sdotp8: random triples. A sample of each also
/// runs through the simulator instruction.
pub fn sdotp() -> String {
    let mut r = rng(5);
    let mut checked = 0u64;
    for lane in 0..8 {
        for v in 0..16u32 {
            let rs1 = (r.gen::<u32>() & !(0xF << (4 * lane))) | (v << (4 * lane));
            for _ in 0..SDOTP4_CONTEXTS {
                let (rs2, rd) = (r.gen(), r.gen());
                assert_eq!(sdotp4(rs1, rs2, rd), oracle_dot(rs1, rs2, rd, 4), "{rs1:#x} {rs2:#x} {rd:#x}");
                checked += 1;
            }
        }
    }
    for a in 0..16u32 {
        for b in 0..16u32 {
            let (wa, wb) = (a * 0x1111_1111, b * 0x1111_1111);
            for rd in [0u32, 1, u32::MAX, 0x8000_0000, 0x7FFF_FFFF] {
                assert_eq!(sdotp4(wa, wb, rd), oracle_dot(wa, wb, rd, 4));
                checked += 1;
            }
        }
    }
    for _ in 0..SDOTP8_TRIPLES {
        let (a, b, c) = (r.gen(), r.gen(), r.gen());
        assert_eq!(sdotp8(a, b, c), oracle_dot(a, b, c, 8), "{a:#x} {b:#x} {c:#x}");
        checked += 1;
    }
    let mut m = Machine::new(64);
    let prog = [
        Instr::Sdotp { width: DotWidth::W4, rd: Reg(10), rs1: Reg(5), rs2: Reg(6) },
        Instr::Sdotp { width: DotWidth::W8, rd: Reg(11), rs1: Reg(5), rs2: Reg(6) },
        Instr::Halt,
    ];
    for _ in 0..1000 {
        let (a, b, c, d) = (r.gen(), r.gen(), r.gen(), r.gen());
        m.set_reg(5, a);
        m.set_reg(6, b);
        m.set_reg(10, c);
        m.set_reg(11, d);
        m.pc = 0;
        m.run(&prog).unwrap();
        assert_eq!(m.reg(10), oracle_dot(a, b, c, 4));
        assert_eq!(m.reg(11), oracle_dot(a, b, d, 8));
    }
    assert_eq!(m.count(Opcode::Sdotp4), 1000);
    format!("{checked} dot products, 0 mismatches")
}

// ---- 6: kernel triangle ------------------------------------------------

pub fn kernel_triangle() -> String {
    let mut r = rng(11);
    let mut cases = 0;
    for bits in [4, 8] {
        let lanes = 32 / bits as usize;
        for in_ch in 1..=16 {
            let out_bits = if in_ch % 2 == 0 { bits } else { 12 - bits };
            let out_ch = (in_ch * 5) % 17 + 1;
            let shape = LayerShape { kind: LayerKind::Conv, in_ch, out_ch, side: 4, bits, out_bits };
            let layer = random_layer(&shape, &mut r);
            let codes = random_codes(in_ch * 16, bits, &mut r);
            let expect = oracle::conv2d(&layer, &codes).unwrap();
            let x = PackedTensor::pack(&codes, in_ch, 4, 4, bits, layer.z_in, 0).unwrap();
            let host = conv2d_int(&x, &layer).unwrap();
            let (isa, run) = isa_conv2d(&layer, &x).unwrap();
            assert_eq!(host.unpack(), expect, "conv host bits={bits} c={in_ch}");
            assert_eq!(isa.unpack(), expect, "conv isa bits={bits} c={in_ch}");
            // padding lanes included
            assert_eq!(isa.words, host.words);
            assert_eq!(run.cycles, run.expected_cycles);
            // whole words go through SDOTP, the leftover lanes through MUL
            assert_eq!(run.sdotp(), (out_ch * 16 * 9 * (in_ch / lanes)) as u64);

            let shape = LayerShape { kind: LayerKind::Linear, in_ch: in_ch * 4, out_ch: 4, side: 1, bits, out_bits: 8 };
            let layer = random_layer(&shape, &mut r);
            let codes = random_codes(in_ch * 4, bits, &mut r);
            let expect = oracle::conv2d(&layer, &codes).unwrap();
            let x = PackedTensor::pack(&codes, in_ch * 4, 1, 1, bits, layer.z_in, 0).unwrap();
            assert_eq!(linear_int(&x, &layer).unwrap().unpack(), expect, "linear host bits={bits} c={}", in_ch * 4);
            assert_eq!(isa_linear(&layer, &x).unwrap().0.unpack(), expect, "linear isa bits={bits}");

            let codes = random_codes(in_ch * 36, bits, &mut r);
            let x = PackedTensor::pack(&codes, in_ch, 6, 6, bits, -(1 << (bits - 1)), 0).unwrap();
            let expect = oracle::maxpool(&codes, in_ch, 6, 6);
            let host = maxpool_int(&x).unwrap();
            let (isa, run) = isa_maxpool(&x).unwrap();
            assert_eq!(host.unpack(), expect, "pool host bits={bits} c={in_ch}");
            assert_eq!(isa.unpack(), expect, "pool isa bits={bits} c={in_ch}");
            assert_eq!(isa.words, host.words);
            assert_eq!(run.cycles, run.expected_cycles);
            cases += 3;
        }
    }
    format!("{cases} conv/linear/pool layers, channels 1-16, INT4 and INT8")
}

// ---- 7: quantization ---------------------------------------------------

fn quantizers(bits: u32) -> Vec<AffineQuantizer<f64>> {
    let mut r = rng(bits as u64);
    let mut qs = vec![
        AffineQuantizer::unsigned(1.0, bits).unwrap(),
        AffineQuantizer::symmetric(0.013, bits).unwrap(),
        AffineQuantizer::covering(-0.7, 0.2, bits).unwrap(),
        AffineQuantizer::with_integer_zero(-1.3, 2.9, bits).unwrap(),
    ];
    for _ in 0..8 {
        let a: f64 = r.gen_range(-5.0..1.0);
        qs.push(AffineQuantizer::new(a, a + r.gen_range(0.01..10.0), bits).unwrap());
    }
    qs
}

/// Fake-quant error on dense grids, relative slack only for the f64
/// rounding of `alpha + code * step`.
pub fn fake_quant_bound() -> String {
    let mut n = 0;
    for bits in [4, 8] {
        for q in quantizers(bits) {
            let half = q.step() / 2.0;
            let mut worst = 0.0f64;
            for i in 0..=GRID_POINTS {
                let x = q.alpha + (q.beta - q.alpha) * i as f64 / GRID_POINTS as f64;
                worst = worst.max((q.fake(x) - x).abs());
            }
            assert!(worst <= half * (1.0 + HALF_STEP_SLACK), "{q:?}: {worst} > {half}");
            // outside the range the value clips to the nearest end
            assert_eq!(q.fake(q.beta + 3.0), q.dequantize(q.levels()));
            assert_eq!(q.fake(q.alpha - 3.0), q.dequantize(0));
            n += 1;
        }
    }
    format!("{n} quantizers x {} grid points", GRID_POINTS + 1)
}

pub fn calibration_frames(n: usize, r: &mut ChaCha8Rng) -> Vec<[f32; FRAME_PIXELS]> {
    (0..n)
        .map(|_| {
            let mut f = [0f32; FRAME_PIXELS];
            f.iter_mut().for_each(|v| *v = r.gen_range(18.0..26.0));
            f
        })
        .collect()
}

pub fn lowered(widths: Widths, seed: u64, spec: QuantSpec) -> QuantizedNetwork {
    let mut r = rng(seed);
    let mut net = Network::<f32>::new(widths, &mut r);
    let calib = calibration_frames(32, &mut r);
    net.norm = Normalizer::fit(&calib);
    lower_to_integer(&prepare(&net, spec, &calib).unwrap()).unwrap()
}

/// Every input code tuple of a layer.
fn all_inputs(bits: u32, in_ch: usize) -> impl Iterator<Item = Vec<i32>> {
    let (lo, hi) = lane_range(bits);
    let n = (hi - lo + 1) as u64;
    (0..n.pow(in_ch as u32)).map(move |mut idx| {
        (0..in_ch)
            .map(|_| {
                let c = lo + (idx % n) as i32;
                idx /= n;
                c
            })
            .collect()
    })
}

/// The last layer of lowered one- and two-input networks for every spec,
/// over every input code tuple, against the f64 fake-quant reference.
pub fn lowering_exact() -> String {
    let mut cases = 0u64;
    for (i, spec) in enumerate_specs(false).into_iter().enumerate() {
        for fc1 in [1, 2] {
            let q = lowered(Widths { conv1: 2, conv2: 1, fc1 }, 100 + i as u64 * 3 + fc1 as u64, spec);
            let layer = &q.layers[3];
            assert_eq!(layer.in_ch, fc1);
            for input in all_inputs(layer.bits, layer.in_ch) {
                let int = oracle::conv2d(layer, &input).unwrap();
                let float = reference_layer(layer, &input);
                assert_eq!(int, float, "{spec} input {input:?}");
                cases += 1;
            }
        }
    }
    assert!(cases > 16 * 16 * 16);
    format!("{cases} exhaustive single-layer cases over 16 specs")
}

// ---- 9: post-processing ------------------------------------------------

/// Vote filter on the label streams of synthetic sessions with injected
/// errors, and the settling delay after a clean step change.
pub fn vote_filter() -> String {
    let data = synth_generate(&SynthConfig { sessions: 3, ..SynthConfig::default() }).unwrap();
    let (mut raw, mut voted, mut truth) = (Vec::new(), Vec::new(), Vec::new());
    for s in data.sessions() {
        let labels = data.select(&[s]).labels();
        let noisy = inject_errors(&labels, INJECTED_ERROR_RATE, 77 + s as u64);
        voted.extend(apply_to_stream(VOTE_WINDOW, &noisy).unwrap());
        raw.extend(noisy);
        truth.extend(labels);
    }
    let (b_raw, b_vote) = (bas(&raw, &truth).unwrap(), bas(&voted, &truth).unwrap());
    assert!(b_vote - b_raw >= MIN_VOTE_GAIN, "BAS {b_raw:.4} -> {b_vote:.4}");

    let mut worst = 0;
    for a in 0..4 {
        for b in (0..4).filter(|&b| b != a) {
            let mut stream = vec![a; 30];
            stream.extend(vec![b; 30]);
            let out = apply_to_stream(VOTE_WINDOW, &stream).unwrap();
            let first = out.iter().position(|&p| p == b).unwrap();
            assert!(out[first..].iter().all(|&p| p == b));
            worst = worst.max(first - 30);
        }
    }
    assert!(worst <= MAX_STEP_DELAY, "delay {worst}");
    format!("BAS {b_raw:.4} -> {b_vote:.4} (+{:.1} points), step delay {worst} frames", 100.0 * (b_vote - b_raw))
}

// ---- 10: throughput ----------------------------------------------------

pub fn throughput() -> String {
    let mut r = rng(21);
    for in_ch in [8, 16] {
        for bits in [4, 8] {
            let shape = LayerShape { kind: LayerKind::Conv, in_ch, out_ch: 6, side: 4, bits, out_bits: 8 };
            let layer = random_layer(&shape, &mut r);
            let x = PackedTensor::pack(&random_codes(in_ch * 16, bits, &mut r), in_ch, 4, 4, bits, layer.z_in, 0).unwrap();
            let (_, run) = isa_conv2d(&layer, &x).unwrap();
            let per_output_tap = in_ch.div_ceil(32 / bits as usize) as u64;
            assert_eq!(run.sdotp(), 6 * 16 * 9 * per_output_tap, "C_in {in_ch} INT{bits}");
        }
    }
    let widths = Widths { conv1: 8, conv2: 16, fc1: 8 };
    let frame = calibration_frames(1, &mut r).remove(0);
    let run = |bits: [u32; 4]| {
        let q = lowered(widths, 31, QuantSpec::new(bits).unwrap());
        let prog = NetworkProgram::compile(&q).unwrap();
        prog.run(&q.quantize_frame(&frame), Backend::IsaSim, &EnergyModel::default()).unwrap()
    };
    let (r8, r4) = (run([8, 8, 8, 8]), run([4, 4, 4, 4]));
    assert!(r4.cycles < r8.cycles, "INT4 {} vs INT8 {} cycles", r4.cycles, r8.cycles);
    format!(
        "conv2 SDOTPs per output and tap = ceil(C_in/L); network cycles INT4 {} < INT8 {}",
        r4.cycles, r8.cycles
    )
}
