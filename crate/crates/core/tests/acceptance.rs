//! Acceptance run: one line per criterion, then a single verdict. The
//! pipeline-scale checks (4, 8 and 11) live here; the others are shared
//! with the topical test files.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::criteria;
use ircount::pipeline::flow::{lambda_summary, SearchOutcome};
use ircount::pipeline::report::frontiers;
use ircount::pipeline::{cross_validate, explore_on, run_search, synth_generate, write_reports, Axis, Dataset, FlowConfig, SpecSelection, SynthConfig};

const SEARCH_SEEDS: [u64; 3] = [0, 1, 2];
const SEARCH_EPOCHS: usize = 10;
const MIN_PARAM_SPAN: f64 = 10.0;
const SEARCH_TIME_LIMIT_S: f64 = 2.0 * 3600.0;
const FINETUNE_EPOCHS: usize = 10;
const QAT_EPOCHS: usize = 5;
const MIN_MEMORY_GAIN: u64 = 2;

fn synthetic() -> Dataset {
    synth_generate(&SynthConfig { sessions: 3, ..SynthConfig::default() }).unwrap()
}

fn search_config() -> FlowConfig {
    let mut cfg = FlowConfig::default();
    cfg.seeds = SEARCH_SEEDS.to_vec();
    cfg.search.train.epochs = SEARCH_EPOCHS;
    cfg
}

/// Median extracted size per lambda is non-increasing and spans an order
/// of magnitude.
fn lambda_monotonicity(data: &Dataset, search: &mut Vec<SearchOutcome>) -> String {
    let cfg = search_config();
    let start = Instant::now();
    *search = run_search(data, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let summary = lambda_summary(search);
    assert_eq!(summary.len(), cfg.search.lambdas.len());
    let medians: Vec<f64> = summary.iter().map(|s| s.median_params).collect();
    for w in medians.windows(2) {
        assert!(w[1] <= w[0], "median params not monotone: {medians:?}");
    }
    let span = medians[0] / medians[medians.len() - 1];
    assert!(span >= MIN_PARAM_SPAN, "span {span:.1}x: {medians:?}");
    assert!(secs <= SEARCH_TIME_LIMIT_S);
    let list: Vec<String> = medians.iter().map(|m| format!("{m:.0}")).collect();
    format!("median params [{}], span {span:.0}x, {secs:.0} s", list.join(", "))
}

/// The cheapest float frontier point is matched or beaten in BAS by a
/// quantized model at no more than half its memory.
fn mixed_precision(data: &Dataset, search: &[SearchOutcome]) -> String {
    assert!(!search.is_empty(), "needs the search of criterion 4");
    let mut cfg = search_config();
    cfg.finetune.train.epochs = FINETUNE_EPOCHS;
    cfg.quant.qat.epochs = QAT_EPOCHS;
    cfg.quant.specs = SpecSelection::First8;
    cfg.eval.max_folds = Some(1);
    let seed0: Vec<SearchOutcome> = search.iter().filter(|o| o.seed == SEARCH_SEEDS[0]).cloned().collect();
    let ex = cross_validate(data, &cfg, seed0).unwrap();
    let (float, quant) = frontiers(&ex.points, Axis::Memory);
    let f = float.first().expect("float frontier");
    let q = quant
        .iter()
        .filter(|q| q.bas_mean >= f.bas_mean && q.memory * MIN_MEMORY_GAIN <= f.memory)
        .min_by_key(|q| q.memory)
        .unwrap_or_else(|| panic!("no quantized model within half of {} B at BAS >= {:.3}", f.memory, f.bas_mean));
    format!(
        "float {} {} B BAS {:.3}; quantized {} {} B BAS {:.3} ({:.1}x smaller)",
        f.model_id,
        f.memory,
        f.bas_mean,
        q.model_id,
        q.memory,
        q.bas_mean,
        f.memory as f64 / q.memory as f64
    )
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Two full runs of a small configuration write identical trees.
fn determinism() -> String {
    let mut cfg = FlowConfig::default();
    cfg.data.synth = SynthConfig { sessions: 3, per_session: 120, ..SynthConfig::default() };
    cfg.seeds = vec![0, 1];
    cfg.search.lambdas = vec![1e-6, 1e-4];
    cfg.search.train.epochs = 2;
    cfg.finetune.train.epochs = 2;
    cfg.quant.qat.epochs = 1;
    cfg.quant.specs = "8-8-8-8,8-4-4-8,4-4-4-4".parse().unwrap();
    cfg.workers = 2;
    let data = synth_generate(&cfg.data.synth).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let ex = explore_on(&data, &cfg).unwrap();
        write_reports(d.path(), &ex, &cfg).unwrap();
    }
    let (a, b) = (tree(dirs[0].path()), tree(dirs[1].path()));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert!(bytes == &b[name], "{name} differs");
    }
    let models = a.keys().filter(|k| k.ends_with(".ircm")).count();
    format!("{} files ({models} models) byte-identical", a.len())
}

fn panic_text(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

#[test]
fn acceptance() {
    let data = synthetic();
    let mut search = Vec::new();
    let mut checks: Vec<(u32, &str, Box<dyn FnOnce() -> String + '_>)> = vec![
        (1, "gradient suite", Box::new(criteria::gradients)),
        (2, "mask/extraction equivalence", Box::new(criteria::mask_equivalence)),
        (3, "cost exactness", Box::new(criteria::cost_exactness)),
        (5, "SDOTP bit-exactness", Box::new(criteria::sdotp)),
        (6, "kernel triangle", Box::new(criteria::kernel_triangle)),
        (7, "quantization bound", Box::new(|| format!("{}; {}", criteria::fake_quant_bound(), criteria::lowering_exact()))),
        (9, "post-processing", Box::new(criteria::vote_filter)),
        (10, "throughput accounting", Box::new(criteria::throughput)),
        (11, "determinism", Box::new(determinism)),
    ];
    let mut results: Vec<(u32, &str, Result<String, String>)> = Vec::new();
    for (n, name, f) in checks.drain(..) {
        results.push((n, name, catch_unwind(AssertUnwindSafe(f)).map_err(panic_text)));
    }
    let r4 = catch_unwind(AssertUnwindSafe(|| lambda_monotonicity(&data, &mut search))).map_err(panic_text);
    results.push((4, "lambda monotonicity", r4));
    let r8 = catch_unwind(AssertUnwindSafe(|| mixed_precision(&data, &search))).map_err(panic_text);
    results.push((8, "mixed-precision sweep", r8));
    results.sort_by_key(|r| r.0);

    println!();
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(why) => println!("criterion {n:>2} FAIL  {name}: {why}"),
        }
    }
    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("{} of {} criteria pass", results.len() - failed.len(), results.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
