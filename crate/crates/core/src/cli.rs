//! Command-line front end. Every flag has a counterpart in the TOML flow
//! configuration given with `--config`; flags win.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dnas::CostMetric;
use crate::error::{Error, Result};
use crate::kernels::{Backend, NetworkProgram};
use crate::pipeline::config::{FlowConfig, SpecSelection};
use crate::pipeline::flow::{self, evaluate_float, evaluate_int, model_id, Evaluation};
use crate::pipeline::model_file::{load_model, save_model, Artifact, Model, Provenance};
use crate::pipeline::pareto::{pareto_extract, Axis};
use crate::pipeline::report::{read_points, write_csv, write_frontier, write_reports, write_search};
use crate::pipeline::{synth_generate, Dataset};
use crate::postproc::apply_to_stream;
use crate::train::{fit, Network, Normalizer};

#[derive(Debug, Parser)]
#[command(name = "ircount", version, about = "People counting on 8x8 infrared frames with tiny quantized CNNs")]
pub struct Cli {
    /// TOML flow configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as CSV.
    Synth(SynthArgs),
    /// Train the seed network in floating point.
    Train(TrainArgs),
    /// Channel-mask search over a lambda grid on session 1.
    Search(SearchArgs),
    /// Quantization-aware training and integer lowering of a float model.
    Quantize(QuantizeArgs),
    /// Evaluate a model per session, or run the cross-validated exploration.
    Eval(EvalArgs),
    /// Run a model frame by frame with majority-vote smoothing.
    Run(RunArgs),
    /// Extract accuracy-versus-cost frontiers from a points table.
    Pareto(ParetoArgs),
    /// Print the generated program of an integer model.
    Listing(ListingArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV; the synthetic generator is used when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub sessions: Option<u32>,
    #[arg(long)]
    pub per_session: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Sessions to train on (default: all).
    #[arg(long, value_delimiter = ',')]
    pub sessions: Option<Vec<u32>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated strengths of the cost term.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub metric: Option<CostMetric>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// `all`, `first8`, or a comma-separated list such as `8-8-8-8,8-4-4-8`.
    #[arg(long)]
    pub specs: Option<SpecSelection>,
    /// Training sessions (default: those recorded in the model file, else all).
    #[arg(long, value_delimiter = ',')]
    pub sessions: Option<Vec<u32>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run search, leave-one-session-out fine-tuning, quantization and
    /// reports instead of evaluating a single model.
    #[arg(long)]
    pub cv: bool,
    #[arg(long, required_unless_present = "cv")]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    pub sessions: Option<Vec<u32>>,
    #[arg(long)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub vote_window: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub specs: Option<SpecSelection>,
    #[arg(long)]
    pub max_folds: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    pub sessions: Option<Vec<u32>>,
    #[arg(long)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub vote_window: Option<usize>,
    /// Per-frame predictions as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParetoArgs {
    /// Points table written by `eval --cv`.
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub axis: Option<Vec<Axis>>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ListingArgs {
    #[arg(long)]
    pub model: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => FlowConfig::load(p)?,
        None => FlowConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(&mut cfg, a),
        Command::Train(a) => train(&mut cfg, a),
        Command::Search(a) => search(&mut cfg, a),
        Command::Quantize(a) => quantize(&mut cfg, a),
        Command::Eval(a) => eval(&mut cfg, a),
        Command::Run(a) => run_model(&mut cfg, a),
        Command::Pareto(a) => pareto(&mut cfg, a),
        Command::Listing(a) => listing(a),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn load(cfg: &mut FlowConfig, a: DataArgs) -> Result<Dataset> {
    if a.data.is_some() {
        cfg.data.path = a.data;
    }
    let d = flow::load_data(&cfg.data)?;
    let counts: Vec<String> = d.session_counts().iter().map(|(s, n)| format!("{s}:{n}")).collect();
    eprintln!("dataset: {} samples, sessions {}", d.len(), counts.join(" "));
    Ok(d)
}

fn selected(d: &Dataset, sessions: &Option<Vec<u32>>) -> Result<Dataset> {
    match sessions {
        None => Ok(d.clone()),
        Some(s) => {
            let present = d.sessions();
            if let Some(m) = s.iter().find(|x| !present.contains(x)) {
                return Err(Error::Dataset(format!("session {m} missing")));
            }
            Ok(d.select(s))
        }
    }
}

fn synth(cfg: &mut FlowConfig, a: SynthArgs) -> Result<()> {
    let s = &mut cfg.data.synth;
    set(&mut s.sessions, a.sessions);
    set(&mut s.per_session, a.per_session);
    set(&mut s.seed, a.seed);
    let d = synth_generate(s)?;
    d.save(&a.out)?;
    println!("wrote {} frames to {}", d.len(), a.out.display());
    Ok(())
}

fn train(cfg: &mut FlowConfig, a: TrainArgs) -> Result<()> {
    let d = selected(&load(cfg, a.data)?, &a.sessions)?;
    set(&mut cfg.train.epochs, a.epochs);
    set(&mut cfg.train.seed, a.seed);
    let frames = d.frames();
    let mut net = Network::<f32>::seed(&mut ChaCha8Rng::seed_from_u64(cfg.train.seed));
    net.norm = Normalizer::fit(&frames);
    let report = fit(&mut net, &frames, &d.labels(), &cfg.train)?;
    let e = evaluate_float(&mut net, &d, 1)?;
    println!(
        "trained {} params, final loss {:.4}, training BAS {:.4}",
        net.param_count(),
        report.epoch_loss.last().copied().unwrap_or(f32::NAN),
        e.bas
    );
    let art = Artifact {
        model: Model::Float(net),
        provenance: Provenance {
            lambda: None,
            seed: Some(cfg.train.seed),
            sessions: d.sessions(),
        },
    };
    save_model(&a.out, &art)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn search(cfg: &mut FlowConfig, a: SearchArgs) -> Result<()> {
    let d = load(cfg, a.data)?;
    set(&mut cfg.search.lambdas, a.lambda_grid);
    set(&mut cfg.seeds, a.seeds);
    set(&mut cfg.search.metric, a.metric);
    set(&mut cfg.search.train.epochs, a.epochs);
    set(&mut cfg.workers, a.workers);
    set(&mut cfg.out_dir, a.out_dir);
    cfg.validate()?;
    let outcomes = flow::run_search(&d, cfg)?;
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(dir.join("models"))?;
    for o in &outcomes {
        println!(
            "lambda {:e} seed {}: widths {}-{}-{}, {} params, {} MACs",
            o.lambda, o.seed, o.widths.conv1, o.widths.conv2, o.widths.fc1, o.params(), o.macs()
        );
        let art = Artifact {
            model: Model::Float(o.net.clone()),
            provenance: Provenance {
                lambda: Some(o.lambda),
                seed: Some(o.seed),
                sessions: vec![crate::pipeline::cv::SEARCH_SESSION],
            },
        };
        save_model(&dir.join("models").join(format!("{}.ircm", model_id(o.lambda_index, o.seed, "nas"))), &art)?;
    }
    write_search(&dir, &outcomes)?;
    println!("wrote {}", dir.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct QuantRow {
    spec: String,
    params: u64,
    macs: u64,
    memory: u64,
    cycles: u64,
    train_bas: f64,
}

fn quantize(cfg: &mut FlowConfig, a: QuantizeArgs) -> Result<()> {
    let art = load_model(&a.model)?;
    let Model::Float(float) = &art.model else {
        return Err(Error::InvalidArgument("quantize needs a floating-point model".into()));
    };
    if float.quant.is_some() {
        return Err(Error::InvalidArgument("model is already quantized".into()));
    }
    let full = load(cfg, a.data)?;
    let sessions = a.sessions.or_else(|| Some(art.provenance.sessions.clone()).filter(|s| !s.is_empty()));
    let d = selected(&full, &sessions)?;
    set(&mut cfg.quant.specs, a.specs);
    set(&mut cfg.quant.qat.epochs, a.epochs);
    set(&mut cfg.out_dir, a.out_dir);
    std::fs::create_dir_all(&cfg.out_dir)?;
    let stem = a.model.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
    let mut rows = Vec::new();
    for spec in cfg.quant.specs.specs() {
        let (_, q) = flow::quantize(float, spec, &d, &cfg.quant.qat)?;
        let program = NetworkProgram::compile(&q)?;
        let mut preds = Vec::with_capacity(d.len());
        for s in &d.samples {
            preds.push(program.run_host(&q.quantize_frame(&s.pixels), &Default::default())?.prediction);
        }
        let train_bas = crate::pipeline::bas(&preds, &d.labels())?;
        let path = cfg.out_dir.join(format!("{stem}-{spec}.ircm"));
        println!(
            "{spec}: {} bytes, {} cycles/frame, training BAS {train_bas:.4} -> {}",
            q.memory_bytes(),
            program.kernel.expected_cycles,
            path.display()
        );
        rows.push(QuantRow {
            spec: spec.to_string(),
            params: q.param_count(),
            macs: q.mac_count(),
            memory: q.memory_bytes(),
            cycles: program.kernel.expected_cycles,
            train_bas,
        });
        let provenance = Provenance {
            sessions: d.sessions(),
            ..art.provenance.clone()
        };
        save_model(&path, &Artifact { model: Model::Int(q), provenance })?;
    }
    write_csv(&cfg.out_dir.join("quantize.csv"), rows)?;
    Ok(())
}

/// Per-session evaluation of a saved model; each session is one stream.
pub fn evaluate_model(model: &mut Model, d: &Dataset, backend: Backend, window: usize) -> Result<Vec<(u32, Evaluation)>> {
    let mut out = Vec::new();
    for s in d.sessions() {
        let part = d.select(&[s]);
        let e = match model {
            Model::Float(n) => evaluate_float(n, &part, window)?,
            Model::Int(q) => evaluate_int(q, &part, backend, window)?,
        };
        out.push((s, e));
    }
    Ok(out)
}

fn eval(cfg: &mut FlowConfig, a: EvalArgs) -> Result<()> {
    set(&mut cfg.eval.backend, a.backend);
    set(&mut cfg.eval.vote_window, a.vote_window);
    if !a.cv {
        let path = a.model.expect("clap requires --model without --cv");
        let mut art = load_model(&path)?;
        let d = selected(&load(cfg, a.data)?, &a.sessions)?;
        cfg.validate()?;
        for (s, e) in evaluate_model(&mut art.model, &d, cfg.eval.backend, cfg.eval.vote_window)? {
            println!("session {s}: BAS {:.4}, vote BAS {:.4}", e.bas, e.vote_bas);
        }
        return Ok(());
    }
    let d = load(cfg, a.data)?;
    set(&mut cfg.seeds, a.seeds);
    set(&mut cfg.search.lambdas, a.lambda_grid);
    set(&mut cfg.quant.specs, a.specs);
    if a.max_folds.is_some() {
        cfg.eval.max_folds = a.max_folds;
    }
    set(&mut cfg.workers, a.workers);
    set(&mut cfg.out_dir, a.out_dir);
    let ex = flow::explore_on(&d, cfg)?;
    write_reports(&cfg.out_dir, &ex, cfg)?;
    for axis in &cfg.pareto.axes {
        let front = pareto_extract(&ex.points, *axis);
        println!("{axis} frontier: {} points", front.len());
    }
    if !ex.skipped.is_empty() {
        println!("{} quantizations skipped, see skipped.csv", ex.skipped.len());
    }
    println!("wrote {}", cfg.out_dir.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct PredRow {
    session: u32,
    frame: u64,
    label: usize,
    pred: usize,
    voted: usize,
}

fn run_model(cfg: &mut FlowConfig, a: RunArgs) -> Result<()> {
    set(&mut cfg.eval.backend, a.backend);
    set(&mut cfg.eval.vote_window, a.vote_window);
    cfg.validate()?;
    let mut art = load_model(&a.model)?;
    let d = selected(&load(cfg, a.data)?, &a.sessions)?;
    let mut rows = Vec::new();
    for s in d.sessions() {
        let part = d.select(&[s]);
        let (preds, cost) = match &mut art.model {
            Model::Float(n) => (n.predict(&part.frames())?, None),
            Model::Int(q) => {
                let program = NetworkProgram::compile(q)?;
                let mut m = program.machine();
                let energy = Default::default();
                let mut preds = Vec::with_capacity(part.len());
                let mut cost = None;
                for smp in &part.samples {
                    let codes = q.quantize_frame(&smp.pixels);
                    let o = match cfg.eval.backend {
                        Backend::Host => program.run_host(&codes, &energy)?,
                        Backend::IsaSim => program.run_isa(&codes, &mut m)?,
                    };
                    cost.get_or_insert((o.cycles, o.energy));
                    preds.push(o.prediction);
                }
                (preds, cost)
            }
        };
        let voted = apply_to_stream(cfg.eval.vote_window, &preds)?;
        let labels = part.labels();
        let raw = crate::pipeline::bas(&preds, &labels)?;
        let smooth = crate::pipeline::bas(&voted, &labels)?;
        match cost {
            Some((c, e)) => println!(
                "session {s}: {} frames, BAS {raw:.4}, vote BAS {smooth:.4}, {c} cycles/frame, energy {e:.1}/frame",
                part.len()
            ),
            None => println!("session {s}: {} frames, BAS {raw:.4}, vote BAS {smooth:.4}", part.len()),
        }
        for (i, smp) in part.samples.iter().enumerate() {
            rows.push(PredRow {
                session: s,
                frame: smp.frame,
                label: smp.label,
                pred: preds[i],
                voted: voted[i],
            });
        }
    }
    if let Some(out) = &a.out {
        write_csv(out, rows)?;
    }
    Ok(())
}

fn pareto(cfg: &mut FlowConfig, a: ParetoArgs) -> Result<()> {
    let points = read_points(&a.points)?;
    set(&mut cfg.pareto.axes, a.axis);
    let dir: PathBuf = a
        .out_dir
        .or_else(|| a.points.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    for &axis in &cfg.pareto.axes {
        let [csv, svg] = write_frontier(&dir, &points, axis)?;
        println!("{axis}:");
        for p in pareto_extract(&points, axis) {
            println!(
                "  {:<24} {:>10} BAS {:.4} +- {:.4}",
                p.model_id,
                p.cost(axis).expect("frontier point has a cost"),
                p.bas_mean,
                p.bas_std
            );
        }
        println!("  -> {} {}", csv.display(), svg.display());
    }
    Ok(())
}

fn listing(a: ListingArgs) -> Result<()> {
    let art = load_model(&a.model)?;
    let Model::Int(q) = &art.model else {
        return Err(Error::InvalidArgument("listing needs an integer model".into()));
    };
    let p = NetworkProgram::compile(q)?;
    print!("{}", p.kernel.listing());
    println!(
        "; {} instructions, {} cycles/frame, {} SDOTP/frame",
        p.kernel.program.len(),
        p.kernel.expected_cycles,
        p.kernel.expected_sdotp()
    );
    Ok(())
}
