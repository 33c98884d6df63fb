use ircount::pipeline::metrics::{bas, inject_errors};
use ircount::pipeline::{synth_generate, SynthConfig};
use ircount::postproc::{apply_to_stream, ModeWindow};
use proptest::prelude::*;

/// Mode of `xs` by counting, ties to the latest occurrence.
fn brute_mode(xs: &[usize]) -> usize {
    let mut best = xs[0];
    let mut best_key = (0, 0);
    for &c in xs {
        let count = xs.iter().filter(|&&x| x == c).count();
        let last = xs.iter().rposition(|&x| x == c).unwrap();
        if (count, last) > best_key {
            best_key = (count, last);
            best = c;
        }
    }
    best
}

fn check(stream: &[usize], cap: usize) {
    let out = apply_to_stream(cap, stream).unwrap();
    assert_eq!(out.len(), stream.len());
    for t in 0..stream.len() {
        let from = (t + 1).saturating_sub(cap);
        let win = &stream[from..=t];
        assert_eq!(out[t], brute_mode(win), "{stream:?} cap {cap} t {t}");
        assert!(win.contains(&out[t]));
    }
}

#[test]
fn exhaustive_short_streams_match_brute_force() {
    for len in 1..=8u32 {
        for code in 0..4usize.pow(len) {
            let stream: Vec<usize> = (0..len).map(|i| code / 4usize.pow(i) % 4).collect();
            for cap in 1..=5 {
                check(&stream, cap);
            }
        }
    }
}

#[test]
fn step_change_settles_within_half_window() {
    for cap in 1..=9 {
        let mut stream = vec![0; 20];
        stream.extend(vec![3; 20]);
        let out = apply_to_stream(cap, &stream).unwrap();
        let first = out.iter().position(|&p| p == 3).unwrap();
        assert!(first - 20 < cap.div_ceil(2), "cap {cap}: delay {}", first - 20);
        assert!(out[first..].iter().all(|&p| p == 3));
    }
}

#[test]
fn voting_never_lowers_stream_bas_for_sporadic_errors() {
    let data = synth_generate(&SynthConfig { sessions: 4, ..SynthConfig::default() }).unwrap();
    for rate in [0.05, 0.10, 0.15, 0.20] {
        for seed in 0..5u64 {
            let (mut raw, mut voted, mut truth) = (Vec::new(), Vec::new(), Vec::new());
            for s in data.sessions() {
                let labels = data.select(&[s]).labels();
                let noisy = inject_errors(&labels, rate, seed * 31 + s as u64);
                voted.extend(apply_to_stream(5, &noisy).unwrap());
                raw.extend(noisy);
                truth.extend(labels);
            }
            let (b_raw, b_vote) = (bas(&raw, &truth).unwrap(), bas(&voted, &truth).unwrap());
            assert!(b_vote >= b_raw, "rate {rate} seed {seed}: {b_raw:.4} -> {b_vote:.4}");
        }
    }
}

proptest! {
    #[test]
    fn buffer_never_exceeds_capacity(cap in 1usize..8, xs in prop::collection::vec(0usize..4, 0..40)) {
        let mut w = ModeWindow::new(cap).unwrap();
        for x in xs {
            let y = w.push_and_predict(x);
            prop_assert!(w.buffer().len() <= cap);
            prop_assert!(w.buffer().contains(&y));
        }
    }

    #[test]
    fn constant_streams_are_fixed_points(cap in 1usize..8, c in 0usize..4, n in 1usize..30) {
        prop_assert_eq!(apply_to_stream(cap, &vec![c; n]).unwrap(), vec![c; n]);
    }
}
