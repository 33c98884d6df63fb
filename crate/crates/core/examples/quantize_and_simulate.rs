//! Quantization-aware training to a mixed 8/4-bit assignment, lowering to
//! integers, a save/load round trip, and inference on the instruction-set
//! simulator next to the host kernels.

use ircount::isa::EnergyModel;
use ircount::kernels::{Backend, NetworkProgram};
use ircount::pipeline::model_file::{load_model, save_model, Artifact, Model, Provenance};
use ircount::pipeline::{bas, synth_generate, SynthConfig};
use ircount::quant::{lower_to_integer, prepare, qat, QuantSpec};
use ircount::train::{fit, Network, Normalizer, TrainConfig, Widths};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ircount::Result<()> {
    let data = synth_generate(&SynthConfig { sessions: 3, ..SynthConfig::default() })?;
    let (train, test) = (data.select(&[1, 2]), data.select(&[3]));
    let (frames, labels) = (train.frames(), train.labels());

    let mut net = Network::<f32>::new(Widths { conv1: 8, conv2: 16, fc1: 16 }, &mut ChaCha8Rng::seed_from_u64(1));
    net.norm = Normalizer::fit(&frames);
    fit(&mut net, &frames, &labels, &TrainConfig { epochs: 6, ..TrainConfig::default() })?;

    let spec: QuantSpec = "8-4-4-8".parse()?;
    let mut fq = prepare(&net, spec, &frames)?;
    qat(&mut fq, &frames, &labels, &TrainConfig { epochs: 3, lr: 5e-4, ..TrainConfig::default() })?;
    let q = lower_to_integer(&fq)?;
    println!("{spec}: {} bytes of parameters (float: {})", q.memory_bytes(), 4 * net.param_count());

    let path = std::env::temp_dir().join("ircount-example.ircm");
    save_model(&path, &Artifact { model: Model::Int(q), provenance: Provenance::default() })?;
    let Model::Int(q) = load_model(&path)?.model else { unreachable!() };

    let prog = NetworkProgram::compile(&q)?;
    let mut m = prog.machine();
    let (mut preds, mut cycles, mut energy) = (Vec::new(), 0, 0.0);
    for f in test.frames() {
        let codes = q.quantize_frame(&f);
        let isa = prog.run_isa(&codes, &mut m)?;
        let host = prog.run(&codes, Backend::Host, &EnergyModel::default())?;
        assert_eq!(isa.logits, host.logits);
        preds.push(isa.prediction);
        cycles = isa.cycles;
        energy = isa.energy;
    }
    println!("BAS {:.3}, {cycles} cycles and {energy:.0} energy units per frame", bas(&preds, &test.labels())?);
    Ok(())
}
