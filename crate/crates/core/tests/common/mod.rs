//! Property checks shared by the proptest suite and the acceptance run.

#![allow(dead_code)]

use armapp::em::{em_fit_observed, loglik_given_immigrants, relative_change, responsibilities, EmConfig, FitModel};
use armapp::events::{EventSequence, Immigrant};
use armapp::mcmc::{birth_ratio, death_ratio, run_chain, Candidate, ChainConfig, ImmigrantConfiguration};
use armapp::model::ModelSpec;
use armapp::simulate::simulate_until_count;
use armapp::study::{run_study, write_raw, StudyConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Parameters drawn from a box of well-behaved values.
#[derive(Debug, Clone, Copy)]
pub struct Draw {
    pub mu: f64,
    pub gamma: f64,
    pub theta_scale: f64,
    pub eta: f64,
    pub phi_scale: f64,
    pub marked: bool,
    pub included: bool,
    pub seed: u64,
}

impl Draw {
    pub fn spec(&self) -> ModelSpec {
        let s = if self.marked {
            ModelSpec::marked(self.mu, self.gamma, self.theta_scale, self.eta, self.phi_scale)
        } else {
            ModelSpec::unmarked(self.mu, self.gamma, self.theta_scale, self.eta, self.phi_scale)
        };
        s.unwrap().with_immigrants_included(self.included)
    }
}

pub fn draws() -> impl Strategy<Value = Draw> {
    (
        0.05f64..0.5,
        0.2f64..4.0,
        0.1f64..2.0,
        0.05f64..0.8,
        0.1f64..2.0,
        any::<bool>(),
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(mu, gamma, theta_scale, eta, phi_scale, marked, included, seed)| Draw {
            mu,
            gamma,
            theta_scale,
            eta,
            phi_scale,
            marked,
            included,
            seed,
        })
}

pub fn row_normalization(d: Draw, n: usize) -> Result<(), String> {
    let spec = d.spec().with_immigrants_included(true);
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
    let (ev, _) = simulate_until_count(&spec, n, Some(0.0), &mut rng).map_err(|e| e.to_string())?;
    let ims = ev.labeled_immigrants().unwrap();
    let resp = responsibilities(&ev, &ims, &spec, spec.default_band_cutoff()).map_err(|e| e.to_string())?;
    for i in 0..ev.len() {
        let s = resp.row_sum(i);
        let want = if resp.offspring[i] { 1.0 } else { 0.0 };
        if (s - want).abs() > 1e-12 {
            return Err(format!("row {i} sums to {s}, expected {want}"));
        }
    }
    Ok(())
}

fn random_state(ev: &EventSequence, spec: &ModelSpec, rng: &mut ChaCha8Rng) -> ImmigrantConfiguration {
    let mark = |rng: &mut ChaCha8Rng| spec.marks.sample(rng);
    if spec.immigrants_included {
        let mut v = vec![Immigrant { time: ev.times[0], mark: mark(rng), event: Some(0) }];
        for i in 1..ev.len() {
            if rng.random::<f64>() < 0.3 {
                v.push(Immigrant { time: ev.times[i], mark: mark(rng), event: Some(i) });
            }
        }
        // Flag events that would otherwise have no possible parent.
        loop {
            match responsibilities(ev, &v, spec, spec.default_band_cutoff()) {
                Err(armapp::Error::ZeroIntensity { index, .. }) => {
                    v.push(Immigrant { time: ev.times[index], mark: mark(rng), event: Some(index) })
                }
                _ => return ImmigrantConfiguration::new(v),
            }
        }
    } else {
        let mut v = ImmigrantConfiguration::initial(ev, spec).immigrants().to_vec();
        for _ in 0..rng.random_range(0..5) {
            v.push(Immigrant { time: rng.random::<f64>() * ev.window_end, mark: mark(rng), event: None });
        }
        ImmigrantConfiguration::new(v)
    }
}

/// `r_d(c ∪ {c*}, c*) · r_b(c, c*) = 1` at random states and candidates.
pub fn reversibility(d: Draw, n: usize) -> Result<(), String> {
    let spec = d.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
    let (ev, _) = simulate_until_count(&spec, n, None, &mut rng).map_err(|e| e.to_string())?;
    let ev = ev.unlabeled();
    let state = random_state(&ev, &spec, &mut rng);
    for _ in 0..5 {
        let y = spec.marks.sample(&mut rng);
        let (cand, new) = if spec.immigrants_included {
            let free: Vec<usize> = (1..ev.len()).filter(|i| !state.flagged_events().contains(i)).collect();
            if free.is_empty() {
                return Ok(());
            }
            let c = free[rng.random_range(0..free.len())];
            (Candidate::Event { index: c, mark: y }, Immigrant { time: ev.times[c], mark: y, event: Some(c) })
        } else {
            let s = (1.0 - rng.random::<f64>()) * ev.window_end;
            (Candidate::Hidden { time: s, mark: y }, Immigrant { time: s, mark: y, event: None })
        };
        let rb = birth_ratio(&state, cand, &ev, &spec, None).map_err(|e| e.to_string())?;
        let mut v = state.immigrants().to_vec();
        v.push(new);
        let bigger = ImmigrantConfiguration::new(v);
        let which = bigger.immigrants().iter().position(|im| *im == new).unwrap();
        let rd = death_ratio(&bigger, which, &ev, &spec, None).map_err(|e| e.to_string())?;
        if rb.is_infinite() {
            if rd != 0.0 {
                return Err(format!("r_b = inf but r_d = {rd}"));
            }
            continue;
        }
        let prod = rb * rd;
        if prod.is_nan() || (prod - 1.0).abs() >= 1e-9 {
            return Err(format!("r_b·r_d = {prod} (r_b = {rb}, r_d = {rd})"));
        }
    }
    Ok(())
}

/// Doubling the band cutoff used at convergence moves the log-likelihood
/// and the EM estimates by less than `1e-4` relative.
pub fn cutoff_insensitivity(d: Draw, n: usize) -> Result<(), String> {
    let spec = d.spec().with_immigrants_included(true);
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
    let (ev, _) = simulate_until_count(&spec, n, Some(0.0), &mut rng).map_err(|e| e.to_string())?;
    let ims = ev.labeled_immigrants().unwrap();
    let fit = |cut: Option<f64>| {
        let cfg = EmConfig { band_cutoff: cut, max_iter: 2000, tol: 1e-10, fit_model: FitModel::Arma };
        em_fit_observed(&ev, &ims, &spec, &cfg).map_err(|e| e.to_string())
    };
    let (a, trace) = fit(None)?;
    let c = trace.rows.last().unwrap().band_cutoff;
    let l1 = loglik_given_immigrants(&ev, &ims, &a, Some(c)).map_err(|e| e.to_string())?;
    let l2 = loglik_given_immigrants(&ev, &ims, &a, Some(2.0 * c)).map_err(|e| e.to_string())?;
    if (l1 - l2).abs() > 1e-4 * l2.abs() {
        return Err(format!("log-likelihood {l1} vs {l2}"));
    }
    let (b, _) = fit(Some(2.0 * c))?;
    let change = relative_change(&b, &a);
    if change > 1e-4 {
        return Err(format!("estimates moved by {change} (cutoff {c})"));
    }
    Ok(())
}

/// Same seed gives the same chain, and a study gives byte-identical raw
/// output for every thread count.
pub fn determinism(seed: u64) -> Result<(), String> {
    let spec = ModelSpec::unmarked(0.2, 2.0, 0.5, 0.4, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ev, _) = simulate_until_count(&spec, 150, None, &mut rng).map_err(|e| e.to_string())?;
    let ev = ev.unlabeled();
    let cfg = ChainConfig { n_iter: 3000, burn_in: 500, samples: 5, band_cutoff: None };
    let init = ImmigrantConfiguration::initial(&ev, &spec);
    let a = run_chain(&ev, &spec, &cfg, &init, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    let b = run_chain(&ev, &spec, &cfg, &init, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    if a != b {
        return Err("chain differs between identical seeds".into());
    }
    let text = format!(
        "variant = unmarked-included\nmu = 0.2\ngamma = 2\ntheta_scale = 0.5\neta = 0.4\nphi_scale = 1\n\
         replications = 3\nn = 80\nseed = {seed}\nchain_iter = 2000\nchain_burn_in = 500\nsamples = 5\nem_iters = 3\n"
    );
    let base = StudyConfig::parse(&text).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for threads in ["threads=1", "threads=2", "threads=3"] {
        let cfg = base.with_overrides([threads]).map_err(|e| e.to_string())?;
        let outcome = run_study(&cfg).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_raw(&base, &outcome.rows, &mut buf).map_err(|e| e.to_string())?;
        outputs.push(buf);
    }
    if outputs.windows(2).any(|w| w[0] != w[1]) {
        return Err("raw study output depends on the thread count".into());
    }
    Ok(())
}
