//! A miniature end-to-end exploration: search, cross-validated
//! fine-tuning, mixed-precision quantization and frontier reports.
//!
//! `cargo run --release --example explore_pareto [out_dir]`

use ircount::pipeline::report::frontiers;
use ircount::pipeline::{explore, write_reports, Axis, FlowConfig, SynthConfig};

fn main() -> ircount::Result<()> {
    let mut cfg = FlowConfig::default();
    cfg.data.synth = SynthConfig { sessions: 3, ..SynthConfig::default() };
    cfg.seeds = vec![0];
    cfg.search.lambdas = vec![2e-5, 5e-5, 1e-4];
    cfg.search.train.epochs = 10;
    cfg.finetune.train.epochs = 4;
    cfg.quant.qat.epochs = 2;
    cfg.quant.specs = "8-8-8-8,8-4-4-8,8-4-4-4".parse()?;
    cfg.eval.max_folds = Some(1);
    cfg.out_dir = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("ircount-explore"), Into::into);

    let ex = explore(&cfg)?;
    let written = write_reports(&cfg.out_dir, &ex, &cfg)?;
    println!("{} files under {}", written.len(), cfg.out_dir.display());
    let (float, quant) = frontiers(&ex.points, Axis::Memory);
    for (name, front) in [("float32", float), ("quantized", quant)] {
        println!("{name} memory frontier:");
        for p in front {
            println!("  {:<18} {:>7} B  BAS {:.3}", p.model_id, p.memory, p.bas_mean);
        }
    }
    Ok(())
}
