//! Integer-valued ARMA counts and their link to the continuous-time process.
//!
//! `X_l = ε_l + Σ_k θ̃_k ∘ ε_{l−k} + Σ_j φ̃_j ∘ X_{l−j}` with Poisson
//! innovations `ε_l ~ Poisson(μ̃)` and Poisson thinning `α ∘ z`, a sum of `z`
//! independent Poisson(α) draws.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::events::EventSequence;
use crate::model::ModelSpec;
use crate::simulate::{poisson_count, simulate_arma};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct INARMASpec {
    pub mu_tilde: f64,
    /// `θ̃_1..θ̃_q`
    pub theta_tilde: Vec<f64>,
    /// `φ̃_1..φ̃_p`
    pub phi_tilde: Vec<f64>,
}

impl INARMASpec {
    pub fn new(mu_tilde: f64, theta_tilde: Vec<f64>, phi_tilde: Vec<f64>) -> Result<Self> {
        let s = INARMASpec { mu_tilde, theta_tilde, phi_tilde };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: &f64| x.is_finite() && *x >= 0.0;
        if !ok(&self.mu_tilde) || !self.theta_tilde.iter().all(ok) || !self.phi_tilde.iter().all(ok) {
            return Err(Error::InvalidParameters("INARMA coefficients must be finite and non-negative".into()));
        }
        let s = self.phi_sum();
        if s >= 1.0 {
            return Err(Error::Supercritical(s));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.phi_tilde.len()
    }

    pub fn q(&self) -> usize {
        self.theta_tilde.len()
    }

    pub fn theta_sum(&self) -> f64 {
        self.theta_tilde.iter().sum()
    }

    pub fn phi_sum(&self) -> f64 {
        self.phi_tilde.iter().sum()
    }

    /// `μ̃(1 + Σθ̃)/(1 − Σφ̃)`
    pub fn stationary_mean(&self) -> f64 {
        self.mu_tilde * (1.0 + self.theta_sum()) / (1.0 - self.phi_sum())
    }

    pub fn default_burn_in(&self) -> usize {
        10 * (self.p() + self.q())
    }
}

/// `α ∘ z`: the sum of `z` independent Poisson(α) draws, drawn as one
/// Poisson(αz) variate.
pub fn poisson_thin<R: Rng + ?Sized>(alpha: f64, z: u64, rng: &mut R) -> u64 {
    poisson_count(rng, alpha * z as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountSeries {
    /// `X_l`
    pub counts: Vec<u64>,
    /// `ε_l`
    pub innovations: Vec<u64>,
}

impl CountSeries {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `bin,N,eps`
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin", "N", "eps"])?;
        for (l, (n, e)) in self.counts.iter().zip(&self.innovations).enumerate() {
            w.write_record([l.to_string(), n.to_string(), e.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulates `length` steps after discarding `burn_in` steps that start from
/// an all-zero history.
pub fn simulate_inarma<R: Rng + ?Sized>(
    spec: &INARMASpec,
    length: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<CountSeries> {
    spec.validate()?;
    let total = burn_in + length;
    let mut x: Vec<u64> = Vec::with_capacity(total);
    let mut eps: Vec<u64> = Vec::with_capacity(total);
    for l in 0..total {
        let e = poisson_count(rng, spec.mu_tilde);
        let mut n = e;
        for (k, &th) in spec.theta_tilde.iter().enumerate() {
            if let Some(&z) = l.checked_sub(k + 1).map(|i| &eps[i]) {
                if z > 0 && th > 0.0 {
                    n += poisson_thin(th, z, rng);
                }
            }
        }
        for (j, &ph) in spec.phi_tilde.iter().enumerate() {
            if let Some(&z) = l.checked_sub(j + 1).map(|i| &x[i]) {
                if z > 0 && ph > 0.0 {
                    n += poisson_thin(ph, z, rng);
                }
            }
        }
        eps.push(e);
        x.push(n);
    }
    Ok(CountSeries {
        counts: x.split_off(burn_in),
        innovations: eps.split_off(burn_in),
    })
}

/// Event and immigrant counts on bins `(Δl, Δ(l+1)]` covering `(0, T]`.
pub fn bin_events(events: &EventSequence, immigrants: &EventSequence, delta: f64) -> Result<CountSeries> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameters(format!("bin width must be positive, got {delta}")));
    }
    let bins = ((events.window_end / delta).ceil() as usize).max(1);
    let count = |times: &[f64]| {
        let mut c = vec![0u64; bins];
        for &t in times {
            let l = ((t / delta).ceil() as usize).clamp(1, bins) - 1;
            c[l] += 1;
        }
        c
    };
    Ok(CountSeries {
        counts: count(&events.times),
        innovations: count(&immigrants.times),
    })
}

/// Matched INARMA(p, q) coefficients by the right-endpoint rule:
/// `μ̃ = μΔ`, `θ̃_k = Δθ(kΔ)`, `φ̃_j = Δφ(jΔ)`.
pub fn inarma_from_arma(spec: &ModelSpec, delta: f64, p: usize, q: usize) -> Result<INARMASpec> {
    spec.validate()?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameters(format!("bin width must be positive, got {delta}")));
    }
    if spec.mu.num_pieces() != 1 {
        return Err(Error::InvalidParameters("INARMA matching needs a constant immigration rate".into()));
    }
    if !spec.immigrants_included {
        return Err(Error::InvalidParameters("INARMA matching needs immigrants counted as events".into()));
    }
    let mark_mean = spec.marks.mean();
    let theta_tilde = (1..=q).map(|k| delta * mark_mean * spec.theta.value(k as f64 * delta)).collect();
    let phi_tilde: Vec<f64> = (1..=p).map(|j| delta * spec.phi.value(j as f64 * delta)).collect();
    let s: f64 = phi_tilde.iter().sum();
    if s >= 1.0 {
        return Err(Error::InvalidParameters(format!(
            "Σφ̃ = {s} ≥ 1 at Δ = {delta}; use a smaller bin width"
        )));
    }
    INARMASpec::new(spec.mu.first_level() * delta, theta_tilde, phi_tilde)
}

/// Sample mean and autocovariances at lags `1..=max_lag`.
pub fn mean_and_autocovariance(counts: &[u64], max_lag: usize) -> (f64, Vec<f64>) {
    let n = counts.len();
    if n == 0 {
        return (f64::NAN, vec![f64::NAN; max_lag]);
    }
    let mean = counts.iter().sum::<u64>() as f64 / n as f64;
    let c: Vec<f64> = counts.iter().map(|&x| x as f64 - mean).collect();
    let acov = (1..=max_lag)
        .map(|h| {
            if h >= n {
                return f64::NAN;
            }
            c[..n - h].iter().zip(&c[h..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
        })
        .collect();
    (mean, acov)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub delta: f64,
    pub p: usize,
    pub q: usize,
    pub arma_mean: f64,
    pub inarma_mean: f64,
    /// `|m_A − m_I| / m_A`
    pub mean_discrepancy: f64,
    /// `Σ_h |c_A(h) − c_I(h)| / Σ_h |c_A(h)|` over lags `1..=max_lag`.
    pub acov_discrepancy: f64,
    pub discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceConfig {
    pub deltas: Vec<f64>,
    /// Simulated time per bin width.
    pub horizon: f64,
    /// Memory length in time units; `p = q = ⌈memory/Δ⌉`.
    pub memory: f64,
    pub max_lag: usize,
}

impl ConvergenceConfig {
    pub fn new(spec: &ModelSpec) -> Self {
        ConvergenceConfig {
            deltas: vec![0.5, 0.25, 0.1],
            horizon: 200_000.0,
            memory: 10.0 / spec.theta.rate.min(spec.phi.rate),
            max_lag: 10,
        }
    }
}

/// Compares binned ARMA simulations with matched INARMA simulations at each
/// bin width.
pub fn convergence_experiment<R: Rng + ?Sized>(
    spec: &ModelSpec,
    config: &ConvergenceConfig,
    rng: &mut R,
) -> Result<Vec<ConvergenceRow>> {
    let burn = spec.default_burn_in();
    let (events, immigrants) = simulate_arma(spec, config.horizon, burn, rng)?;
    let mut rows = Vec::with_capacity(config.deltas.len());
    for &delta in &config.deltas {
        let lags = (config.memory / delta).ceil() as usize;
        let ispec = inarma_from_arma(spec, delta, lags, lags)?;
        let binned = bin_events(&events, &immigrants, delta)?;
        let series = simulate_inarma(&ispec, binned.len(), ispec.default_burn_in(), rng)?;
        let (ma, ca) = mean_and_autocovariance(&binned.counts, config.max_lag);
        let (mi, ci) = mean_and_autocovariance(&series.counts, config.max_lag);
        let mean_discrepancy = (ma - mi).abs() / ma;
        let acov_discrepancy = ca.iter().zip(&ci).map(|(a, b)| (a - b).abs()).sum::<f64>()
            / ca.iter().map(|a| a.abs()).sum::<f64>();
        rows.push(ConvergenceRow {
            delta,
            p: lags,
            q: lags,
            arma_mean: ma,
            inarma_mean: mi,
            mean_discrepancy,
            acov_discrepancy,
            discrepancy: mean_discrepancy + acov_discrepancy,
        });
    }
    Ok(rows)
}

/// `delta,p,q,arma_mean,inarma_mean,mean_discrepancy,acov_discrepancy,discrepancy`
pub fn write_convergence_csv<W: std::io::Write>(rows: &[ConvergenceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

    #[test]
    fn thinning_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(poisson_thin(0.7, 0, &mut rng), 0);
        assert_eq!(poisson_thin(0.0, 10, &mut rng), 0);
    }

    #[test]
    fn trivial_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let zero = INARMASpec::new(0.0, vec![0.3], vec![0.5]).unwrap();
        assert!(simulate_inarma(&zero, 1000, 10, &mut rng).unwrap().counts.iter().all(|&x| x == 0));
        let iid = INARMASpec::new(2.0, vec![], vec![]).unwrap();
        let s = simulate_inarma(&iid, 200_000, 0, &mut rng).unwrap();
        assert_eq!(s.counts, s.innovations);
        let (m, c) = mean_and_autocovariance(&s.counts, 3);
        assert!((m - 2.0).abs() < 3.0 * (2.0f64 / 2e5).sqrt() * 1.5);
        assert!(c.iter().all(|x| x.abs() < 0.03));
        assert!(matches!(INARMASpec::new(1.0, vec![], vec![0.6, 0.4]), Err(Error::Supercritical(_))));
    }

    #[test]
    fn binning_conventions() {
        let ev = EventSequence::new(vec![0.5, 1.0, 1.0001, 3.0], 3.0).unwrap();
        let b = bin_events(&ev, &EventSequence::empty(3.0), 1.0).unwrap();
        assert_eq!(b.counts, vec![2, 1, 1]);
        assert_eq!(b.innovations, vec![0, 0, 0]);
        let empty = bin_events(&EventSequence::empty(5.0), &EventSequence::empty(5.0), 1.0).unwrap();
        assert_eq!(empty.counts, vec![0; 5]);
        assert!(bin_events(&ev, &ev, 0.0).is_err());
    }

    #[test]
    fn matched_coefficients() {
        let hp = ModelSpec::unmarked(0.3, 0.0, 1.0, 0.0, 1.0).unwrap();
        let s = inarma_from_arma(&hp, 0.1, 5, 5).unwrap();
        assert!((s.mu_tilde - 0.03).abs() < 1e-15);
        assert!(s.theta_tilde.iter().chain(&s.phi_tilde).all(|&c| c == 0.0));

        // φ with mass 0.5 and rate 4, Δ = 0.05: right Riemann sum of a geometric series.
        let spec = ModelSpec::unmarked(0.1, 1.0, 1.0, 0.5, 0.25).unwrap();
        let s = inarma_from_arma(&spec, 0.05, 200, 0).unwrap();
        let r: f64 = (-4.0f64 * 0.05).exp();
        let want = 0.05 * 0.5 * 4.0 * r * (1.0 - r.powi(200)) / (1.0 - r);
        assert!((s.phi_sum() - want).abs() < 1e-12 && s.phi_sum() < 1.0);

        for (delta, tol) in [(0.01, 0.02), (0.001, 0.002)] {
            let q = (20.0 / delta) as usize;
            let s = inarma_from_arma(&spec, delta, 0, q).unwrap();
            assert!((s.theta_sum() - 1.0).abs() < tol, "{delta}: {}", s.theta_sum());
        }
        let hidden = spec.clone().with_immigrants_included(false);
        assert!(inarma_from_arma(&hidden, 0.1, 10, 10).is_err());
    }

    #[test]
    fn conditional_poisson_given_previous_count() {
        // With q = 0 and p = 1, X_l | X_{l−1} = x is Poisson(μ̃ + φ̃x).
        let spec = INARMASpec::new(0.8, vec![], vec![0.4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = simulate_inarma(&spec, 300_000, 100, &mut rng).unwrap();
        for x in 0..3u64 {
            let next: Vec<u64> = s.counts.windows(2).filter(|w| w[0] == x).map(|w| w[1]).collect();
            let pois = Poisson::new(0.8 + 0.4 * x as f64).unwrap();
            let cells = 6u64;
            let mut obs = vec![0.0; cells as usize + 1];
            for &y in &next {
                obs[y.min(cells) as usize] += 1.0;
            }
            let n = next.len() as f64;
            let mut chi2 = 0.0;
            for k in 0..=cells {
                let p = if k < cells { pois.pmf(k) } else { 1.0 - (0..cells).map(|j| pois.pmf(j)).sum::<f64>() };
                let e = n * p;
                chi2 += (obs[k as usize] - e).powi(2) / e;
            }
            let pval = 1.0 - ChiSquared::new(cells as f64).unwrap().cdf(chi2);
            assert!(pval > 1e-3, "x={x}: chi2={chi2}, p={pval}");
        }
    }
}
