//! The exploration flow: architecture search on the search session, then
//! for every fold a float fine-tune, quantization-aware training per
//! bit-width assignment, and evaluation on the held-out session.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DataConfig, FlowConfig};
use super::cv::{folds, Fold, SEARCH_SESSION};
use super::dataset::Dataset;
use super::metrics::{bas, mean_std, median};
use super::model_file::{Artifact, Model, Provenance};
use super::pareto::ParetoPoint;
use super::pool::par_map;
use super::synth::synth_generate;
use crate::dnas::{self, SearchConfig};
use crate::error::{Error, Result};
use crate::isa::EnergyModel;
use crate::kernels::{Backend, NetworkProgram};
use crate::postproc::apply_to_stream;
use crate::quant::{lower_to_integer, prepare, qat, QuantSpec, QuantizedNetwork};
use crate::train::{fit, Network, Normalizer, TrainConfig, Widths};

pub const FLOAT_SPEC: &str = "float32";

/// The configured CSV file, or the synthetic generator when none is given.
pub fn load_data(cfg: &DataConfig) -> Result<Dataset> {
    match &cfg.path {
        Some(p) => Dataset::load(p),
        None => synth_generate(&cfg.synth),
    }
}

/// Independent stream seed for stage `tag` of the job seeded with `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tag.wrapping_mul(0xbf58_476d_1ce4_e5b9).rotate_left(31)
}

fn stage_train(base: &TrainConfig, seed: u64, tag: u64) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(seed ^ base.seed, tag),
        ..base.clone()
    }
}

pub fn model_id(lambda_index: usize, seed: u64, spec: &str) -> String {
    format!("l{lambda_index:02}-s{seed}-{spec}")
}

/// One searched architecture.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub lambda_index: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Widths after extraction.
    pub widths: Widths,
    pub final_loss: f32,
    /// The masked network as it left the search.
    pub net: Network<f32>,
}

impl SearchOutcome {
    pub fn params(&self) -> u64 {
        self.widths.param_count()
    }

    pub fn macs(&self) -> u64 {
        self.widths.mac_count()
    }
}

/// Searches one architecture per (lambda, seed) on the search session.
pub fn run_search(data: &Dataset, cfg: &FlowConfig) -> Result<Vec<SearchOutcome>> {
    let s1 = data.select(&[SEARCH_SESSION]);
    if s1.is_empty() {
        return Err(Error::Dataset(format!("session {SEARCH_SESSION} missing")));
    }
    let frames = s1.frames();
    let labels = s1.labels();
    let norm = Normalizer::fit(&frames);
    let jobs: Vec<(usize, f64, u64)> = cfg
        .search
        .lambdas
        .iter()
        .enumerate()
        .flat_map(|(i, &l)| cfg.seeds.iter().map(move |&s| (i, l, s)))
        .collect();
    par_map(&jobs, cfg.worker_count(), |&(lambda_index, lambda, seed)| {
        let mut net = Network::<f32>::seed(&mut ChaCha8Rng::seed_from_u64(seed));
        net.norm = norm;
        let scfg = SearchConfig {
            metric: cfg.search.metric,
            train: stage_train(&cfg.search.train, seed, 1),
        };
        let report = dnas::search(&mut net, &frames, &labels, lambda, &scfg)?;
        let widths = net.masks.as_ref().expect("search attaches masks").extracted_widths();
        Ok(SearchOutcome {
            lambda_index,
            lambda,
            seed,
            widths,
            final_loss: report.epoch_loss.last().copied().unwrap_or(f32::NAN),
            net,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub lambda_index: usize,
    pub lambda: f64,
    pub median_params: f64,
    pub min_params: u64,
    pub max_params: u64,
    pub median_macs: f64,
}

/// Median extracted size per lambda, in grid order.
pub fn lambda_summary(outcomes: &[SearchOutcome]) -> Vec<LambdaSummary> {
    let mut by: BTreeMap<usize, Vec<&SearchOutcome>> = BTreeMap::new();
    for o in outcomes {
        by.entry(o.lambda_index).or_default().push(o);
    }
    by.into_iter()
        .map(|(lambda_index, v)| {
            let params: Vec<f64> = v.iter().map(|o| o.params() as f64).collect();
            let macs: Vec<f64> = v.iter().map(|o| o.macs() as f64).collect();
            LambdaSummary {
                lambda_index,
                lambda: v[0].lambda,
                median_params: median(&params),
                min_params: v.iter().map(|o| o.params()).min().unwrap_or(0),
                max_params: v.iter().map(|o| o.params()).max().unwrap_or(0),
                median_macs: median(&macs),
            }
        })
        .collect()
}

/// Fine-tunes the searched network on `train` and returns the extracted
/// float model.
pub fn finetune(outcome: &SearchOutcome, train: &Dataset, cfg: &FlowConfig, tag: u64) -> Result<Network<f32>> {
    let frames = train.frames();
    let labels = train.labels();
    let tcfg = stage_train(&cfg.finetune.train, outcome.seed, tag);
    if cfg.finetune.freeze_masks {
        let mut net = dnas::extract(&outcome.net)?;
        fit(&mut net, &frames, &labels, &tcfg)?;
        Ok(net)
    } else {
        let mut net = outcome.net.clone();
        fit(&mut net, &frames, &labels, &TrainConfig { freeze_masks: false, ..tcfg })?;
        if let Some(m) = net.masks.as_mut() {
            m.keep_alive();
        }
        dnas::extract(&net)
    }
}

/// Calibrates, trains and lowers a float model for one bit-width assignment.
pub fn quantize(
    float: &Network<f32>,
    spec: QuantSpec,
    train: &Dataset,
    qat_cfg: &TrainConfig,
) -> Result<(Network<f32>, QuantizedNetwork)> {
    let frames = train.frames();
    let mut net = prepare(float, spec, &frames)?;
    qat(&mut net, &frames, &train.labels(), qat_cfg)?;
    let q = lower_to_integer(&net)?;
    Ok((net, q))
}

/// Per-frame and vote-smoothed accuracy of one model on one session stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub bas: f64,
    pub vote_bas: f64,
    /// Cycles per frame on the simulated core (integer models only).
    pub cycles: Option<u64>,
    pub energy: Option<f64>,
}

fn score(preds: &[usize], labels: &[usize], window: usize) -> Result<(f64, f64)> {
    let voted = apply_to_stream(window, preds)?;
    Ok((bas(preds, labels)?, bas(&voted, labels)?))
}

/// `test` must hold a single session so the frames form one stream.
pub fn evaluate_float(net: &mut Network<f32>, test: &Dataset, window: usize) -> Result<Evaluation> {
    let preds = net.predict(&test.frames())?;
    let (bas, vote_bas) = score(&preds, &test.labels(), window)?;
    Ok(Evaluation {
        bas,
        vote_bas,
        cycles: None,
        energy: None,
    })
}

pub fn evaluate_int(qnet: &QuantizedNetwork, test: &Dataset, backend: Backend, window: usize) -> Result<Evaluation> {
    let program = NetworkProgram::compile(qnet)?;
    let energy = EnergyModel::default();
    let mut machine = program.machine();
    let mut preds = Vec::with_capacity(test.len());
    let (mut cycles, mut energy_units) = (None, None);
    for s in &test.samples {
        let codes = qnet.quantize_frame(&s.pixels);
        let out = match backend {
            Backend::Host => program.run_host(&codes, &energy)?,
            Backend::IsaSim => program.run_isa(&codes, &mut machine)?,
        };
        cycles.get_or_insert(out.cycles);
        energy_units.get_or_insert(out.energy);
        preds.push(out.prediction);
    }
    let (bas, vote_bas) = score(&preds, &test.labels(), window)?;
    Ok(Evaluation {
        bas,
        vote_bas,
        cycles,
        energy: energy_units,
    })
}

/// One (model, held-out session) result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub model_id: String,
    pub lambda: f64,
    pub seed: u64,
    pub spec: String,
    pub test_session: u32,
    pub bas: f64,
    pub vote_bas: f64,
    pub params: u64,
    pub macs: u64,
    pub cycles: Option<u64>,
    pub memory: u64,
}

/// A quantization that could not be completed (for example an accumulator
/// bound above 32 bits); the model is left out of the frontier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub model_id: String,
    pub test_session: u32,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct FoldOutput {
    pub rows: Vec<CvRow>,
    pub skipped: Vec<Skipped>,
    pub models: Vec<(String, Artifact)>,
}

/// Fine-tunes, quantizes and evaluates one searched architecture on one
/// fold. Models are returned only when `keep_models` is set.
pub fn evaluate_fold(
    outcome: &SearchOutcome,
    data: &Dataset,
    fold: &Fold,
    cfg: &FlowConfig,
    keep_models: bool,
) -> Result<FoldOutput> {
    let train = data.select(&fold.train);
    let test = data.select(&[fold.test]);
    let window = cfg.eval.vote_window;
    let provenance = Provenance {
        lambda: Some(outcome.lambda),
        seed: Some(outcome.seed),
        sessions: fold.train.clone(),
    };
    let mut out = FoldOutput::default();
    let tag = 16 + fold.test as u64;

    let mut float = finetune(outcome, &train, cfg, tag)?;
    let e = evaluate_float(&mut float, &test, window)?;
    let id = model_id(outcome.lambda_index, outcome.seed, FLOAT_SPEC);
    out.rows.push(CvRow {
        model_id: id.clone(),
        lambda: outcome.lambda,
        seed: outcome.seed,
        spec: FLOAT_SPEC.into(),
        test_session: fold.test,
        bas: e.bas,
        vote_bas: e.vote_bas,
        params: float.param_count(),
        macs: float.mac_count(),
        cycles: None,
        memory: 4 * float.param_count(),
    });

    for spec in cfg.quant.specs.specs() {
        let id = model_id(outcome.lambda_index, outcome.seed, &spec.to_string());
        let qcfg = stage_train(&cfg.quant.qat, outcome.seed, tag << 8);
        let result = quantize(&float, spec, &train, &qcfg)
            .and_then(|(_, q)| evaluate_int(&q, &test, cfg.eval.backend, window).map(|e| (q, e)));
        match result {
            Ok((q, e)) => {
                out.rows.push(CvRow {
                    model_id: id.clone(),
                    lambda: outcome.lambda,
                    seed: outcome.seed,
                    spec: spec.to_string(),
                    test_session: fold.test,
                    bas: e.bas,
                    vote_bas: e.vote_bas,
                    params: q.param_count(),
                    macs: q.mac_count(),
                    cycles: e.cycles,
                    memory: q.memory_bytes(),
                });
                if keep_models {
                    out.models.push((
                        id,
                        Artifact {
                            model: Model::Int(q),
                            provenance: provenance.clone(),
                        },
                    ));
                }
            }
            Err(err) => out.skipped.push(Skipped {
                model_id: id,
                test_session: fold.test,
                reason: err.to_string(),
            }),
        }
    }
    if keep_models {
        out.models.insert(
            0,
            (
                model_id(outcome.lambda_index, outcome.seed, FLOAT_SPEC),
                Artifact {
                    model: Model::Float(float),
                    provenance,
                },
            ),
        );
    }
    Ok(out)
}

/// Everything one exploration run produces.
#[derive(Debug)]
pub struct Exploration {
    pub search: Vec<SearchOutcome>,
    pub folds: Vec<Fold>,
    pub cv: Vec<CvRow>,
    pub skipped: Vec<Skipped>,
    pub points: Vec<ParetoPoint>,
    /// Artifacts keyed by model id: searched (masked) networks, plus the
    /// float and integer models trained on the first fold.
    pub models: Vec<(String, Artifact)>,
}

/// Mean and spread over folds of every evaluated model.
pub fn aggregate(rows: &[CvRow]) -> Vec<ParetoPoint> {
    let mut by: BTreeMap<&str, Vec<&CvRow>> = BTreeMap::new();
    for r in rows {
        by.entry(&r.model_id).or_default().push(r);
    }
    by.into_iter()
        .map(|(id, v)| {
            let (bas_mean, bas_std) = mean_std(&v.iter().map(|r| r.bas).collect::<Vec<_>>());
            ParetoPoint {
                model_id: id.into(),
                spec: v[0].spec.clone(),
                lambda: v[0].lambda,
                bas_mean,
                bas_std,
                params: v[0].params,
                macs: v[0].macs,
                cycles: v[0].cycles,
                memory: v[0].memory,
            }
        })
        .collect()
}

/// Search plus cross-validation of every (lambda, seed) architecture.
pub fn explore_on(data: &Dataset, cfg: &FlowConfig) -> Result<Exploration> {
    cfg.validate()?;
    folds(&data.sessions())?;
    let search = run_search(data, cfg)?;
    cross_validate(data, cfg, search)
}

/// Leave-one-session-out evaluation of already searched architectures:
/// fine-tune on each training fold, quantize, test on the held-out session.
pub fn cross_validate(data: &Dataset, cfg: &FlowConfig, search: Vec<SearchOutcome>) -> Result<Exploration> {
    let mut fold_list = folds(&data.sessions())?;
    if let Some(n) = cfg.eval.max_folds {
        fold_list.truncate(n);
    }
    let jobs: Vec<(usize, usize)> = (0..search.len())
        .flat_map(|s| (0..fold_list.len()).map(move |f| (s, f)))
        .collect();
    let outputs = par_map(&jobs, cfg.worker_count(), |&(s, f)| {
        evaluate_fold(&search[s], data, &fold_list[f], cfg, f == 0)
    });
    let mut cv = Vec::new();
    let mut skipped = Vec::new();
    let mut models: Vec<(String, Artifact)> = search
        .iter()
        .map(|o| {
            (
                model_id(o.lambda_index, o.seed, "nas"),
                Artifact {
                    model: Model::Float(o.net.clone()),
                    provenance: Provenance {
                        lambda: Some(o.lambda),
                        seed: Some(o.seed),
                        sessions: vec![SEARCH_SESSION],
                    },
                },
            )
        })
        .collect();
    for out in outputs {
        let out = out?;
        cv.extend(out.rows);
        skipped.extend(out.skipped);
        models.extend(out.models);
    }
    cv.sort_by(|a, b| a.model_id.cmp(&b.model_id).then(a.test_session.cmp(&b.test_session)));
    skipped.sort_by(|a, b| a.model_id.cmp(&b.model_id).then(a.test_session.cmp(&b.test_session)));
    models.sort_by(|a, b| a.0.cmp(&b.0));
    let points = aggregate(&cv);
    Ok(Exploration {
        search,
        folds: fold_list,
        cv,
        skipped,
        points,
        models,
    })
}

pub fn explore(cfg: &FlowConfig) -> Result<Exploration> {
    explore_on(&load_data(&cfg.data)?, cfg)
}
