//! Monte-Carlo EM with latent immigrants.
//!
//! Each iteration runs the birth/death chain at the current parameters,
//! computes per-sample responsibilities on `K` states, averages the
//! sufficient statistics, and maximises the averaged objective.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::em::{
    check_interior, constrain, next_cutoff, objective_value, relative_change, responsibilities, sample_stats,
    EMTrace, FitModel, ObjectiveStats, SampleStats, TraceRow,
};
use crate::error::{Error, Result};
use crate::events::{EventSequence, Immigrant};
use crate::kernels::ImmigrationIntensity;
use crate::mcmc::{BirthDeathSampler, ChainConfig, ChainDiagnostics, ImmigrantConfiguration};
use crate::model::ModelSpec;

/// Whether immigrants are among the events and whether they carry marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Included,
    Excluded,
    UnmarkedIncluded,
    UnmarkedExcluded,
}

impl Variant {
    pub fn immigrants_included(self) -> bool {
        matches!(self, Variant::Included | Variant::UnmarkedIncluded)
    }

    pub fn marked(self) -> bool {
        matches!(self, Variant::Included | Variant::Excluded)
    }

    pub fn of(spec: &ModelSpec) -> Self {
        match (spec.marks.is_constant(), spec.immigrants_included) {
            (false, true) => Variant::Included,
            (false, false) => Variant::Excluded,
            (true, true) => Variant::UnmarkedIncluded,
            (true, false) => Variant::UnmarkedExcluded,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Included => "included",
            Variant::Excluded => "excluded",
            Variant::UnmarkedIncluded => "unmarked-included",
            Variant::UnmarkedExcluded => "unmarked-excluded",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "included" => Ok(Variant::Included),
            "excluded" => Ok(Variant::Excluded),
            "unmarked-included" => Ok(Variant::UnmarkedIncluded),
            "unmarked-excluded" => Ok(Variant::UnmarkedExcluded),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McemConfig {
    pub em_iters: usize,
    /// Chain settings per EM iteration. A `band_cutoff` here is held fixed;
    /// otherwise the cutoff follows the current parameters and never shrinks.
    pub chain: ChainConfig,
    /// Relative parameter change regarded as converged.
    pub tol: f64,
    /// Consecutive iterations below `tol` required to stop.
    pub patience: usize,
    pub variant: Variant,
    pub fit_model: FitModel,
    /// Start each chain from the previous iteration's final state.
    pub warm_start: bool,
}

impl McemConfig {
    pub fn new(variant: Variant) -> Self {
        McemConfig {
            em_iters: 100,
            chain: ChainConfig {
                n_iter: 60_000,
                burn_in: 10_000,
                samples: 50,
                band_cutoff: None,
            },
            tol: 1e-3,
            patience: 3,
            variant,
            fit_model: FitModel::Arma,
            warm_start: true,
        }
    }

    /// Long chain: 300000 iterations with 50000 burn-in.
    pub fn full_scale(mut self) -> Self {
        self.chain.n_iter = 300_000;
        self.chain.burn_in = 50_000;
        self
    }
}

/// Averaged objective over per-sample statistics.
pub fn q_objective(params: &ModelSpec, events: &EventSequence, samples: &[SampleStats]) -> Result<f64> {
    let stats = ObjectiveStats::from_samples(samples, events.window_end)?;
    Ok(objective_value(&stats, params))
}

/// Histogram immigration intensity with `pieces` equal pieces on `(0, T]`;
/// each level is the sample-averaged immigrant count in the piece divided by
/// its length.
pub fn estimate_immigration_profile(
    samples: &[ImmigrantConfiguration],
    pieces: usize,
    window_end: f64,
) -> Result<ImmigrationIntensity> {
    if pieces == 0 {
        return Err(Error::InvalidParameters("at least one piece is required".into()));
    }
    if samples.is_empty() {
        return Err(Error::InvalidParameters("at least one sample is required".into()));
    }
    let width = window_end / pieces as f64;
    let mut counts = vec![0.0; pieces];
    for s in samples {
        for im in s.immigrants() {
            // Half-open on the left, matching the piece convention.
            let k = ((im.time / width).ceil() as usize).clamp(1, pieces) - 1;
            counts[k] += 1.0;
        }
    }
    let k = samples.len() as f64;
    ImmigrationIntensity::equal_pieces(counts.iter().map(|c| c / k / width).collect(), window_end)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub final_objective: f64,
    pub objective_name: String,
    pub accept_birth: Option<f64>,
    pub accept_death: Option<f64>,
    pub mean_immigrants: Option<f64>,
    pub seconds: f64,
}

/// Serialisable fit outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub params: ModelSpec,
    pub variant: String,
    pub fit_model: FitModel,
    pub config: serde_json::Value,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    pub fn new(params: &ModelSpec, variant: &str, fit_model: FitModel, config: serde_json::Value, trace: &EMTrace, seconds: f64) -> Self {
        let last = trace.rows.last();
        FitResult {
            params: params.clone(),
            variant: variant.to_string(),
            fit_model,
            config,
            diagnostics: FitDiagnostics {
                converged: trace.converged,
                iterations: trace.iterations,
                final_objective: last.map_or(f64::NAN, |r| r.objective),
                objective_name: trace.objective_name.clone(),
                accept_birth: last.and_then(|r| r.accept_birth),
                accept_death: last.and_then(|r| r.accept_death),
                mean_immigrants: last.and_then(|r| r.mean_immigrants),
                seconds,
            },
        }
    }
}

/// One E-step: statistics per sample plus chain diagnostics, if a chain ran.
type EStep<'a> = dyn FnMut(&ModelSpec, f64) -> Result<(Vec<SampleStats>, Option<ChainDiagnostics>)> + 'a;

fn mcem_loop(
    events: &EventSequence,
    init: &ModelSpec,
    config: &McemConfig,
    e_step: &mut EStep<'_>,
) -> Result<(ModelSpec, EMTrace)> {
    check_interior(init, config.fit_model)?;
    let mut params = constrain(init.clone(), config.fit_model);
    let big_t = events.window_end;
    let mut cutoff = 0.0;
    let mut trace = EMTrace {
        objective_name: "q_objective".into(),
        rows: Vec::new(),
        converged: false,
        iterations: 0,
    };
    let mut streak = 0;
    for iter in 0..config.em_iters {
        let start = Instant::now();
        cutoff = next_cutoff(cutoff, config.chain.band_cutoff, &params, big_t);
        let (samples, diag) = e_step(&params, cutoff)?;
        let stats = ObjectiveStats::from_samples(&samples, big_t)?;
        let q_old = objective_value(&stats, &params);
        let (next, report) = crate::em::m_step_from_stats(&stats, &params, config.fit_model)?;
        let q_new = objective_value(&stats, &next);
        if q_new < q_old - 1e-8 * q_old.abs().max(1.0) {
            return Err(Error::Numerical(format!(
                "M-step decreased the objective at iteration {iter}: {q_old} -> {q_new}"
            )));
        }
        let change = relative_change(&params, &next);
        trace.rows.push(TraceRow {
            iter,
            params: next.clone(),
            objective: q_new,
            band_cutoff: cutoff,
            accept_birth: diag.as_ref().map(|d| d.accept_birth),
            accept_death: diag.as_ref().map(|d| d.accept_death),
            mean_immigrants: Some(stats.immigrant_count),
            seconds: start.elapsed().as_secs_f64(),
            notes: report.notes(),
        });
        params = next;
        trace.iterations = iter + 1;
        streak = if change < config.tol { streak + 1 } else { 0 };
        if streak >= config.patience.max(1) {
            trace.converged = true;
            break;
        }
    }
    Ok((params, trace))
}

fn check_variant(events: &EventSequence, init: &ModelSpec, variant: Variant) -> Result<()> {
    events.validate()?;
    if init.immigrants_included != variant.immigrants_included() || init.marks.is_constant() == variant.marked() {
        return Err(Error::Config(format!(
            "initial parameters are the {} variant but {} was requested",
            Variant::of(init),
            variant
        )));
    }
    Ok(())
}

/// Monte-Carlo EM fit with latent immigrants.
pub fn mcem_fit<R: Rng + ?Sized>(
    events: &EventSequence,
    init: &ModelSpec,
    config: &McemConfig,
    rng: &mut R,
) -> Result<(ModelSpec, EMTrace)> {
    check_variant(events, init, config.variant)?;
    config.chain.validate()?;
    let initial = |p: &ModelSpec| ImmigrantConfiguration::initial(events, p);
    let mut state = initial(init);
    let mut e_step = |params: &ModelSpec, cutoff: f64| -> Result<(Vec<SampleStats>, Option<ChainDiagnostics>)> {
        if !config.warm_start {
            state = initial(params);
        }
        let mut sampler = BirthDeathSampler::new(events, params, cutoff, &state)?;
        let mut samples = Vec::with_capacity(config.chain.samples);
        let diag = sampler.run(&config.chain, rng, |s| samples.push(s.sample_stats()))?;
        if diag.total_accepted() == 0 {
            return Err(Error::DegenerateChain(format!(
                "no move accepted in {} iterations (birth {}/{}, death {}/{})",
                diag.iterations, diag.births_accepted, diag.births_proposed, diag.deaths_accepted, diag.deaths_proposed
            )));
        }
        state = sampler.configuration();
        Ok((samples, Some(diag)))
    };
    mcem_loop(events, init, config, &mut e_step)
}

/// The same loop with immigrants revealed: one sample, no chain.
pub fn mcem_fit_revealed(
    events: &EventSequence,
    immigrants: &[Immigrant],
    init: &ModelSpec,
    config: &McemConfig,
) -> Result<(ModelSpec, EMTrace)> {
    check_variant(events, init, config.variant)?;
    let mut e_step = |params: &ModelSpec, cutoff: f64| -> Result<(Vec<SampleStats>, Option<ChainDiagnostics>)> {
        let resp = responsibilities(events, immigrants, params, cutoff)?;
        Ok((vec![sample_stats(events, immigrants, &resp, params)], None))
    };
    mcem_loop(events, init, config, &mut e_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{default_init, em_fit_observed, EmConfig};
    use crate::simulate::simulate_until_count;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn q_objective_is_an_average() {
        let spec = ModelSpec::unmarked(0.2, 2.0, 0.5, 0.4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (ev, imm) = simulate_until_count(&spec, 200, Some(0.0), &mut rng).unwrap();
        let ims = ev.labeled_immigrants().unwrap();
        let _ = imm;
        let resp = responsibilities(&ev, &ims, &spec, 1e9).unwrap();
        let st = sample_stats(&ev, &ims, &resp, &spec);
        let one = q_objective(&spec, &ev, std::slice::from_ref(&st)).unwrap();
        let ll = crate::em::loglik_given_immigrants(&ev, &ims, &spec, None).unwrap();
        // At the current parameters the objective is the log-likelihood minus
        // the entropy of the branching responsibilities.
        let neg_entropy: f64 = (0..ev.len())
            .flat_map(|i| resp.pi_theta[i].iter().chain(&resp.pi_phi[i]).chain(&resp.pi_phi_immigrant[i]))
            .map(|a| if a.prob > 0.0 { a.prob * a.prob.ln() } else { 0.0 })
            .sum();
        assert!((one - (ll + neg_entropy)).abs() < 1e-8 * ll.abs(), "{one} vs {ll} + {neg_entropy}");
        let two = q_objective(&spec, &ev, &[st.clone(), st]).unwrap();
        assert!((one - two).abs() < 1e-9 * one.abs());
        assert!(q_objective(&spec, &ev, &[]).is_err());
    }

    #[test]
    fn revealed_path_reproduces_observed_em() {
        let spec = ModelSpec::marked(0.1, 4.0, 0.1, 0.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (ev, _) = simulate_until_count(&spec, 500, Some(0.0), &mut rng).unwrap();
        let ims = ev.labeled_immigrants().unwrap();
        let init = default_init(&ev, true, true, 1, FitModel::Arma).unwrap();
        let (a, ta) = em_fit_observed(&ev, &ims, &init, &EmConfig::default()).unwrap();
        let mut cfg = McemConfig::new(Variant::Included);
        cfg.em_iters = EmConfig::default().max_iter;
        cfg.tol = EmConfig::default().tol;
        cfg.patience = 1;
        let (b, tb) = mcem_fit_revealed(&ev, &ims, &init, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.iterations, tb.iterations);
    }

    #[test]
    fn profile_levels() {
        let imm = |t: f64| Immigrant { time: t, mark: 1.0, event: None };
        let s1 = ImmigrantConfiguration::new(vec![imm(1.0), imm(2.0), imm(9.0)]);
        let s2 = ImmigrantConfiguration::new(vec![imm(5.0)]);
        let p = estimate_immigration_profile(&[s1.clone(), s2.clone()], 1, 10.0).unwrap();
        assert!((p.levels()[0] - 0.2).abs() < 1e-15);
        let p = estimate_immigration_profile(&[s1, s2], 2, 10.0).unwrap();
        assert_eq!(p.levels(), &[0.3, 0.1]);
        let p = estimate_immigration_profile(&[ImmigrantConfiguration::new(vec![imm(1.0)])], 4, 8.0).unwrap();
        assert_eq!(p.levels(), &[0.5, 0.0, 0.0, 0.0]);
        assert!(estimate_immigration_profile(&[], 1, 1.0).is_err());
    }

    #[test]
    fn short_mcem_run_is_monotone_and_deterministic() {
        let spec = ModelSpec::unmarked(0.2, 2.0, 0.5, 0.4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (ev, _) = simulate_until_count(&spec, 300, None, &mut rng).unwrap();
        let ev = ev.unlabeled();
        let init = default_init(&ev, false, true, 1, FitModel::Arma).unwrap();
        let mut cfg = McemConfig::new(Variant::UnmarkedIncluded);
        cfg.em_iters = 5;
        cfg.chain = ChainConfig { n_iter: 6000, burn_in: 1000, samples: 10, band_cutoff: None };
        let (a, ta) = mcem_fit(&ev, &init, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (b, _) = mcem_fit(&ev, &init, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.rows.len(), 5);
        assert!(a.eta() < 1.0);
        assert!(ta.rows.iter().all(|r| r.accept_birth.is_some()));
        let wrong = McemConfig::new(Variant::Excluded);
        assert!(mcem_fit(&ev, &init, &wrong, &mut rng).is_err());
    }

    #[test]
    fn excluded_marked_run() {
        let spec = ModelSpec::marked(0.2, 2.0, 0.5, 0.4, 1.0).unwrap().with_immigrants_included(false);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let (ev, _) = simulate_until_count(&spec, 200, None, &mut rng).unwrap();
        let init = default_init(&ev, true, false, 2, FitModel::Arma).unwrap();
        let mut cfg = McemConfig::new(Variant::Excluded);
        cfg.em_iters = 3;
        cfg.chain = ChainConfig { n_iter: 4000, burn_in: 1000, samples: 5, band_cutoff: None };
        let (fit, trace) = mcem_fit(&ev, &init, &cfg, &mut rng).unwrap();
        assert_eq!(fit.mu.num_pieces(), 2);
        assert!(!fit.immigrants_included && !fit.marks.is_constant());
        assert_eq!(trace.iterations, 3);
    }
}
