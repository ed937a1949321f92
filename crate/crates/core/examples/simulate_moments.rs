//! Simulate an unmarked ARMA process and compare its empirical rate and
//! count variance with the closed-form first and second moments.
//!
//! ```text
//! cargo run --release --example simulate_moments -- [seed]
//! ```

use armapp::model::ModelSpec;
use armapp::moments::{covariance_density, expected_intensity, palm_constants_for};
use armapp::simulate::simulate_arma;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> armapp::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(11, |s| s.parse().expect("seed"));
    // θ-scale 0.5 would make θ₁ = φ₁ − φ₀, where the closed form degenerates.
    let spec = ModelSpec::unmarked(0.1, 5.0, 0.4, 0.5, 0.25)?;
    let lambda = expected_intensity(&spec)?;
    let pc = palm_constants_for(&spec)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = 20_000.0;
    let (events, immigrants) = simulate_arma(&spec, horizon, spec.default_burn_in(), &mut rng)?;
    println!(
        "{} events, {} immigrants on (0, {horizon}]; rate {:.4} vs expected {lambda:.4}",
        events.len(),
        immigrants.len(),
        events.len() as f64 / horizon
    );

    // Var N(0, w] = λ̄w + 2∫₀ʷ (w − u) c(u) du, integrated with the midpoint rule.
    for w in [1.0, 5.0, 25.0] {
        let steps = 4000;
        let du = w / steps as f64;
        let mut var = lambda * w;
        for k in 0..steps {
            let u = (k as f64 + 0.5) * du;
            var += 2.0 * (w - u) * covariance_density(&pc, u)?.continuous * du;
        }
        let bins = (horizon / w) as usize;
        let mut counts = vec![0.0; bins];
        for &t in &events.times {
            let b = ((t / w).ceil() as usize).saturating_sub(1);
            if b < bins {
                counts[b] += 1.0;
            }
        }
        let m = counts.iter().sum::<f64>() / bins as f64;
        let v = counts.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / (bins - 1) as f64;
        println!("window {w:>4}: count variance {v:>8.3} empirical, {var:>8.3} closed form");
    }
    Ok(())
}
