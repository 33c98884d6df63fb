//! Channel-mask search at a few regularization strengths. Larger lambda
//! trades accuracy for a smaller extracted network.

use ircount::dnas::{self, default_lambda_grid, CostMetric, SearchConfig};
use ircount::pipeline::{synth_generate, SynthConfig};
use ircount::train::{Network, Normalizer, TrainConfig, Widths};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ircount::Result<()> {
    let s1 = synth_generate(&SynthConfig { sessions: 1, ..SynthConfig::default() })?;
    let (frames, labels) = (s1.frames(), s1.labels());
    println!("seed network: {} params, {} MACs", Widths::SEED.param_count(), Widths::SEED.mac_count());
    for lambda in default_lambda_grid().into_iter().skip(3).step_by(2) {
        let mut net = Network::<f32>::seed(&mut ChaCha8Rng::seed_from_u64(0));
        net.norm = Normalizer::fit(&frames);
        let cfg = SearchConfig {
            metric: CostMetric::Params,
            train: TrainConfig { epochs: 10, ..TrainConfig::default() },
        };
        dnas::search(&mut net, &frames, &labels, lambda, &cfg)?;
        let sub = dnas::extract(&net)?;
        let w = sub.widths;
        println!(
            "lambda {lambda:.0e}: conv1 {:>2} conv2 {:>2} fc1 {:>2} -> {:>6} params",
            w.conv1,
            w.conv2,
            w.fc1,
            sub.param_count()
        );
    }
    Ok(())
}
