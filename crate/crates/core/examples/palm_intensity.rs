//! Tabulate the closed-form palm intensity next to the kernel-free estimate
//! from one long simulation.
//!
//! ```text
//! cargo run --release --example palm_intensity -- [events]
//! ```

use armapp::model::ModelSpec;
use armapp::moments::{empirical_palm, palm_constants_for, palm_intensity};
use armapp::simulate::simulate_until_count;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> armapp::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(50_000, |s| s.parse().expect("event count"));
    let spec = ModelSpec::unmarked(0.5, 1.5, 0.5, 0.4, 1.0)?;
    let pc = palm_constants_for(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (events, _) = simulate_until_count(&spec, n, None, &mut rng)?;

    let bandwidth = 0.1;
    let grid: Vec<f64> = (1..=20).map(|k| 0.25 * k as f64).collect();
    println!("   lag   closed   bin-avg  empirical  ±3se");
    for e in empirical_palm(&events, &grid, bandwidth)? {
        println!(
            "{:>6.2}  {:>7.4}  {:>7.4}  {:>9.4}  {:.4}",
            e.lag,
            palm_intensity(&pc, e.lag)?,
            pc.palm_bin_average(e.lag - 0.5 * bandwidth, e.lag + 0.5 * bandwidth),
            e.h,
            3.0 * e.std_error
        );
    }
    println!("h(0) = {}, h(inf) = {} = expected intensity", palm_intensity(&pc, 0.0)?, pc.lambda_bar);
    Ok(())
}
