//! EM fit when the immigrant labels are known, which makes the likelihood
//! tractable and the E-step exact.
//!
//! ```text
//! cargo run --release --example observed_em -- [seed]
//! ```

use armapp::em::{default_init, em_fit_observed, EmConfig, FitModel};
use armapp::model::ModelSpec;
use armapp::simulate::simulate_until_count;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> armapp::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(3, |s| s.parse().expect("seed"));
    let truth = ModelSpec::marked(0.1, 4.0, 0.1, 0.5, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // No burn-in, so every event's ancestry lies inside the window.
    let (events, _) = simulate_until_count(&truth, 2000, Some(0.0), &mut rng)?;
    let immigrants = events.labeled_immigrants().expect("simulated events carry labels");

    let init = default_init(&events, true, true, 1, FitModel::Arma)?;
    let (fit, trace) = em_fit_observed(&events, &immigrants, &init, &EmConfig::default())?;

    let ll = trace.objectives();
    println!("log-likelihood {:.3} -> {:.3} over {} iterations", ll[0], ll[ll.len() - 1], trace.iterations);
    println!("            truth   estimate");
    println!("mu          {:.4}  {:.4}", 0.1, fit.mu.first_level());
    println!("mark mean   {:.4}  {:.4}", 4.0, fit.marks.mean());
    println!("theta rate  {:.4}  {:.4}", truth.theta.rate, fit.theta.rate);
    println!("eta         {:.4}  {:.4}", 0.5, fit.eta());
    println!("phi rate    {:.4}  {:.4}", truth.phi.rate, fit.phi.rate);
    Ok(())
}
