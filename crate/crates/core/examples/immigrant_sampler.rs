//! Run the birth/death sampler at fixed parameters and report how often each
//! of the first events is labelled an immigrant.
//!
//! ```text
//! cargo run --release --example immigrant_sampler
//! ```

use armapp::mcmc::{run_chain, ChainConfig, ImmigrantConfiguration};
use armapp::model::ModelSpec;
use armapp::simulate::simulate_until_count;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> armapp::Result<()> {
    let spec = ModelSpec::unmarked(0.1, 5.0, 2.0, 0.5, 0.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (events, _) = simulate_until_count(&spec, 500, None, &mut rng)?;
    let truth = events.is_immigrant.clone().expect("simulated events carry labels");
    let events = events.unlabeled();

    let config = ChainConfig { n_iter: 200_000, burn_in: 20_000, samples: 200, band_cutoff: None };
    let init = ImmigrantConfiguration::initial(&events, &spec);
    let (states, diag) = run_chain(&events, &spec, &config, &init, &mut rng)?;

    println!(
        "acceptance birth {:.3} death {:.3}; immigrants mean {:.1} (range {}..{}), true {}",
        diag.accept_birth,
        diag.accept_death,
        diag.n_c_mean,
        diag.n_c_min,
        diag.n_c_max,
        truth.iter().filter(|&&b| b).count()
    );
    let mut freq = vec![0.0; events.len()];
    for s in &states {
        for i in s.flagged_events() {
            freq[i] += 1.0 / states.len() as f64;
        }
    }
    println!("event   time      P(immigrant)  true label");
    for i in 0..15 {
        println!("{i:>5}  {:>8.3}  {:>12.3}  {}", events.times[i], freq[i], truth[i]);
    }
    Ok(())
}
