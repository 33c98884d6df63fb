//! Sliding-window vote over a noisy prediction stream.

use ircount::pipeline::metrics::inject_errors;
use ircount::pipeline::{bas, synth_generate, SynthConfig};
use ircount::postproc::apply_to_stream;

fn main() -> ircount::Result<()> {
    let labels = synth_generate(&SynthConfig { sessions: 1, ..SynthConfig::default() })?.labels();
    for rate in [0.05, 0.1, 0.2] {
        let noisy = inject_errors(&labels, rate, 7);
        for window in [1, 3, 5, 9] {
            let voted = apply_to_stream(window, &noisy)?;
            println!("error rate {rate:.2}  window {window}  BAS {:.3}", bas(&voted, &labels)?);
        }
    }
    let mut step = vec![0; 10];
    step.extend([2; 10]);
    println!("step 0 -> 2 through a 5-frame vote: {:?}", apply_to_stream(5, &step)?);
    Ok(())
}
