//! Generates a small synthetic dataset, trains a narrow network on three
//! sessions and reports balanced accuracy on the fourth.

use ircount::pipeline::{bas, synth_generate, SynthConfig};
use ircount::train::{fit, Network, Normalizer, TrainConfig, Widths};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ircount::Result<()> {
    let data = synth_generate(&SynthConfig { sessions: 4, ..SynthConfig::default() })?;
    let (train, test) = (data.select(&[1, 2, 3]), data.select(&[4]));
    println!("{} training frames, {} test frames", train.len(), test.len());

    let mut net = Network::<f32>::new(Widths { conv1: 8, conv2: 8, fc1: 16 }, &mut ChaCha8Rng::seed_from_u64(0));
    net.norm = Normalizer::fit(&train.frames());
    let cfg = TrainConfig { epochs: 8, ..TrainConfig::default() };
    let report = fit(&mut net, &train.frames(), &train.labels(), &cfg)?;
    for (e, loss) in report.epoch_loss.iter().enumerate() {
        println!("epoch {e:>2}  loss {loss:.4}");
    }
    let preds = net.predict(&test.frames())?;
    println!("held-out BAS {:.3} with {} parameters", bas(&preds, &test.labels())?, net.param_count());
    Ok(())
}
