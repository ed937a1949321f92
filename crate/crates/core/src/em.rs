//! EM estimation when the immigrants (and their marks) are observed.
//!
//! Given an immigrant labelling, every offspring event `i` is attached either
//! to an immigrant `j` through the moving-average kernel or to an earlier
//! event `k` through the autoregressive kernel, with probabilities
//! proportional to `y_j θ(t_i − s_j)` and `φ(t_i − t_k)`. Pairs further apart
//! than the band cutoff are ignored. The M-step maximises the expected
//! complete-data log-likelihood component by component.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventSequence, Immigrant};
use crate::kernels::{ImmigrationIntensity, Kernel, MarkDistribution};
use crate::model::ModelSpec;
use crate::optim::{component_objective, maximize_component, MassMode, TriggerSet};

/// Which kernel masses are estimated; the others are held at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FitModel {
    #[default]
    Arma,
    MovingAverage,
    Autoregressive,
}

impl FitModel {
    pub fn fits_ma(self) -> bool {
        self != FitModel::Autoregressive
    }

    pub fn fits_ar(self) -> bool {
        self != FitModel::MovingAverage
    }
}

impl std::str::FromStr for FitModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arma" => Ok(FitModel::Arma),
            "ma" | "moving_average" => Ok(FitModel::MovingAverage),
            "ar" | "autoregressive" => Ok(FitModel::Autoregressive),
            _ => Err(Error::Config(format!("unknown model {s:?} (expected arma, ma or ar)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Fixed band cutoff. When `None` the cutoff starts at the default for
    /// the initial parameters and only ever grows, which keeps the banded
    /// likelihood monotone across iterations.
    pub band_cutoff: Option<f64>,
    pub fit_model: FitModel,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 500,
            tol: 1e-4,
            band_cutoff: None,
            fit_model: FitModel::Arma,
        }
    }
}

/// One attachment of an offspring row to a possible trigger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attachment {
    /// Immigrant index (θ and immigrant-φ rows) or event index (φ rows).
    pub source: usize,
    pub prob: f64,
    pub lag: f64,
}

/// Banded attachment probabilities for one immigrant labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub band_cutoff: f64,
    pub offspring: Vec<bool>,
    pub pi_theta: Vec<Vec<Attachment>>,
    pub pi_phi: Vec<Vec<Attachment>>,
    /// Immigrant-triggered autoregressive attachments (immigrants kept out of the events).
    pub pi_phi_immigrant: Vec<Vec<Attachment>>,
    /// Banded triggering intensity `D_i` for offspring rows, zero otherwise.
    pub intensity: Vec<f64>,
}

impl Responsibilities {
    pub fn row_sum(&self, i: usize) -> f64 {
        self.pi_theta[i].iter().map(|a| a.prob).sum::<f64>()
            + self.pi_phi[i].iter().map(|a| a.prob).sum::<f64>()
            + self.pi_phi_immigrant[i].iter().map(|a| a.prob).sum::<f64>()
    }
}

/// Checks the labelling against the variant and returns the offspring mask.
pub(crate) fn offspring_mask(events: &EventSequence, immigrants: &[Immigrant], included: bool) -> Result<Vec<bool>> {
    let mut offspring = vec![true; events.len()];
    for (j, im) in immigrants.iter().enumerate() {
        if !(im.mark > 0.0 && im.mark.is_finite()) {
            return Err(Error::InvalidParameters(format!("immigrant {j} has non-positive mark {}", im.mark)));
        }
        if !(im.time >= 0.0 && im.time <= events.window_end) {
            return Err(Error::InvalidParameters(format!("immigrant {j} at {} lies outside the window", im.time)));
        }
        match (included, im.event) {
            (true, Some(i)) if i < events.len() && events.times[i] == im.time => {
                if !offspring[i] {
                    return Err(Error::InvalidParameters(format!("event {i} labelled immigrant twice")));
                }
                offspring[i] = false;
            }
            (true, _) => {
                return Err(Error::InvalidParameters(format!(
                    "immigrant {j} does not match an event; immigrants must be events in this variant"
                )))
            }
            (false, Some(_)) => {
                return Err(Error::InvalidParameters(format!(
                    "immigrants are not events in this variant but immigrant {j} names one"
                )))
            }
            (false, None) => {}
        }
    }
    Ok(offspring)
}

/// Immigrant indices sorted by time.
fn time_order(immigrants: &[Immigrant]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..immigrants.len()).collect();
    idx.sort_by(|&a, &b| immigrants[a].time.total_cmp(&immigrants[b].time));
    idx
}

/// Attachment probabilities `π^θ_{ij} = y_jθ(t_i − s_j)/D_i` and
/// `π^φ_{ik} = φ(t_i − t_k)/D_i` over the band `t_i − s ≤ band_cutoff`.
pub fn responsibilities(
    events: &EventSequence,
    immigrants: &[Immigrant],
    params: &ModelSpec,
    band_cutoff: f64,
) -> Result<Responsibilities> {
    let included = params.immigrants_included;
    let offspring = offspring_mask(events, immigrants, included)?;
    let order = time_order(immigrants);
    let imm_times: Vec<f64> = order.iter().map(|&j| immigrants[j].time).collect();
    let t = &events.times;
    let n = t.len();

    let mut res = Responsibilities {
        band_cutoff,
        offspring: offspring.clone(),
        pi_theta: vec![Vec::new(); n],
        pi_phi: vec![Vec::new(); n],
        pi_phi_immigrant: vec![Vec::new(); n],
        intensity: vec![0.0; n],
    };
    for i in 0..n {
        if !offspring[i] {
            continue;
        }
        let ti = t[i];
        let mut total = 0.0;
        let lo = imm_times.partition_point(|&s| ti - s > band_cutoff);
        let hi = imm_times.partition_point(|&s| s < ti);
        for (&s, &j) in imm_times[lo..hi].iter().zip(&order[lo..hi]) {
            let lag = ti - s;
            let v = immigrants[j].mark * params.theta.value(lag);
            total += v;
            res.pi_theta[i].push(Attachment { source: j, prob: v, lag });
            if !included {
                let v = params.phi.value(lag);
                total += v;
                res.pi_phi_immigrant[i].push(Attachment { source: j, prob: v, lag });
            }
        }
        let lo = t.partition_point(|&s| ti - s > band_cutoff);
        for (k, &s) in t.iter().enumerate().take(i).skip(lo) {
            if s >= ti {
                break;
            }
            let lag = ti - s;
            let v = params.phi.value(lag);
            total += v;
            res.pi_phi[i].push(Attachment { source: k, prob: v, lag });
        }
        if total.is_nan() {
            return Err(Error::Numerical(format!("triggering intensity of event {i} is NaN")));
        }
        if total <= 0.0 {
            return Err(Error::ZeroIntensity { index: i, time: ti });
        }
        for row in [&mut res.pi_theta[i], &mut res.pi_phi[i], &mut res.pi_phi_immigrant[i]] {
            for a in row.iter_mut() {
                a.prob /= total;
            }
        }
        res.intensity[i] = total;
    }
    Ok(res)
}

/// Sufficient statistics of the expected complete-data log-likelihood for a
/// single immigrant labelling.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleStats {
    pub theta_weight: f64,
    pub theta_lag: f64,
    pub theta_log_mark: f64,
    pub phi_weight: f64,
    pub phi_lag: f64,
    /// Immigrants per piece of the immigration intensity.
    pub piece_counts: Vec<f64>,
    pub log_mu_sum: f64,
    pub mark_sum: f64,
    pub immigrant_count: f64,
    /// `(y_j, T − s_j)` for every immigrant.
    pub theta_triggers: Vec<(f64, f64)>,
    /// `(1, T − t)` for every autoregressive trigger.
    pub phi_triggers: Vec<(f64, f64)>,
}

impl SampleStats {
    /// Labelling-only parts: immigrant counts, marks and trigger lists.
    pub(crate) fn from_labels(events: &EventSequence, immigrants: &[Immigrant], params: &ModelSpec) -> Self {
        let big_t = events.window_end;
        let mut st = SampleStats {
            piece_counts: vec![0.0; params.mu.num_pieces()],
            ..Default::default()
        };
        for im in immigrants {
            st.piece_counts[params.mu.piece_index(im.time)] += 1.0;
            st.mark_sum += im.mark;
            st.immigrant_count += 1.0;
            st.theta_triggers.push((im.mark, big_t - im.time));
            if !params.immigrants_included {
                st.phi_triggers.push((1.0, big_t - im.time));
            }
        }
        st.phi_triggers.extend(events.times.iter().map(|&t| (1.0, big_t - t)));
        st
    }
}

/// Statistics for an observed labelling and its responsibilities.
pub fn sample_stats(
    events: &EventSequence,
    immigrants: &[Immigrant],
    resp: &Responsibilities,
    params: &ModelSpec,
) -> SampleStats {
    let mut st = SampleStats::from_labels(events, immigrants, params);
    for i in 0..events.len() {
        for a in &resp.pi_theta[i] {
            st.theta_weight += a.prob;
            st.theta_lag += a.prob * a.lag;
            st.theta_log_mark += a.prob * immigrants[a.source].mark.ln();
        }
        for a in resp.pi_phi[i].iter().chain(&resp.pi_phi_immigrant[i]) {
            st.phi_weight += a.prob;
            st.phi_lag += a.prob * a.lag;
        }
    }
    st
}

/// Monte-Carlo average of [`SampleStats`] over immigrant samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveStats {
    pub window_end: f64,
    pub samples: usize,
    pub theta_weight: f64,
    pub theta_lag: f64,
    pub theta_log_mark: f64,
    pub phi_weight: f64,
    pub phi_lag: f64,
    pub piece_counts: Vec<f64>,
    pub mark_sum: f64,
    pub immigrant_count: f64,
    pub theta_triggers: TriggerSet,
    pub phi_triggers: TriggerSet,
}

impl ObjectiveStats {
    pub fn from_samples(samples: &[SampleStats], window_end: f64) -> Result<Self> {
        let k = samples.len();
        if k == 0 {
            return Err(Error::InvalidParameters("at least one sample is required".into()));
        }
        let w = 1.0 / k as f64;
        let avg = |f: &dyn Fn(&SampleStats) -> f64| samples.iter().map(f).sum::<f64>() * w;
        let pieces = samples[0].piece_counts.len();
        let piece_counts = (0..pieces)
            .map(|p| samples.iter().map(|s| s.piece_counts[p]).sum::<f64>() * w)
            .collect();
        let pool = |f: &dyn Fn(&SampleStats) -> &Vec<(f64, f64)>| {
            TriggerSet::from_pairs(
                samples
                    .iter()
                    .flat_map(|s| f(s).iter().map(|&(a, r)| (a * w, r)))
                    .collect(),
            )
        };
        Ok(ObjectiveStats {
            window_end,
            samples: k,
            theta_weight: avg(&|s| s.theta_weight),
            theta_lag: avg(&|s| s.theta_lag),
            theta_log_mark: avg(&|s| s.theta_log_mark),
            phi_weight: avg(&|s| s.phi_weight),
            phi_lag: avg(&|s| s.phi_lag),
            piece_counts,
            mark_sum: avg(&|s| s.mark_sum),
            immigrant_count: avg(&|s| s.immigrant_count),
            theta_triggers: pool(&|s| &s.theta_triggers),
            phi_triggers: pool(&|s| &s.phi_triggers),
        })
    }
}

/// Expected complete-data log-likelihood under `params` for the averaged statistics.
pub fn objective_value(stats: &ObjectiveStats, params: &ModelSpec) -> f64 {
    let bounds = params.mu.piece_bounds(stats.window_end);
    let mut q = 0.0;
    for ((lo, hi), (&level, &count)) in bounds.iter().zip(params.mu.levels().iter().zip(&stats.piece_counts)) {
        if count > 0.0 {
            q += count * level.ln();
        }
        q -= level * (hi - lo);
    }
    if let MarkDistribution::Exponential { mean } = params.marks {
        q += -stats.immigrant_count * mean.ln() - stats.mark_sum / mean;
    }
    q += component_objective(
        stats.theta_weight,
        stats.theta_lag,
        &stats.theta_triggers,
        params.theta.mass,
        params.theta.rate,
    ) + stats.theta_log_mark;
    q += component_objective(
        stats.phi_weight,
        stats.phi_lag,
        &stats.phi_triggers,
        params.phi.mass,
        params.phi.rate,
    );
    q
}

/// Conditions met while maximising.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MStepReport {
    pub theta_empty: bool,
    pub phi_empty: bool,
    pub eta_clamped: bool,
}

impl MStepReport {
    pub fn notes(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.theta_empty {
            v.push("theta component received no weight; rate held".to_string());
        }
        if self.phi_empty {
            v.push("phi component received no weight; rate held".to_string());
        }
        if self.eta_clamped {
            v.push(format!("eta clamped at {ETA_CAP}"));
        }
        v
    }
}

pub const ETA_CAP: f64 = 0.999;

/// Maximises the averaged objective over all parameters.
pub fn m_step_from_stats(stats: &ObjectiveStats, prev: &ModelSpec, fit_model: FitModel) -> Result<(ModelSpec, MStepReport)> {
    let bounds = prev.mu.piece_bounds(stats.window_end);
    let levels: Vec<f64> = bounds
        .iter()
        .zip(&stats.piece_counts)
        .zip(prev.mu.levels())
        .map(|(((lo, hi), &count), &old)| if hi > lo { count / (hi - lo) } else { old })
        .collect();
    let mu = prev.mu.with_levels(levels)?;

    let marks = match prev.marks {
        MarkDistribution::Exponential { .. } if stats.immigrant_count > 0.0 && stats.mark_sum > 0.0 => {
            MarkDistribution::exponential(stats.mark_sum / stats.immigrant_count)?
        }
        other => other,
    };

    let theta_mode = if !fit_model.fits_ma() {
        MassMode::Zero
    } else if !prev.marks.is_constant() {
        MassMode::Fixed(1.0)
    } else {
        MassMode::Free { cap: None }
    };
    let phi_mode = if fit_model.fits_ar() {
        MassMode::Free { cap: Some(ETA_CAP) }
    } else {
        MassMode::Zero
    };
    let th = maximize_component(
        stats.theta_weight,
        stats.theta_lag,
        &stats.theta_triggers,
        theta_mode,
        (prev.theta.mass, prev.theta.rate),
    );
    let ph = maximize_component(
        stats.phi_weight,
        stats.phi_lag,
        &stats.phi_triggers,
        phi_mode,
        (prev.phi.mass, prev.phi.rate),
    );
    let spec = ModelSpec::new(
        mu,
        Kernel::exponential(th.mass, th.rate)?,
        Kernel::exponential(ph.mass, ph.rate)?,
        marks,
        prev.immigrants_included,
    )?;
    let report = MStepReport {
        theta_empty: th.empty && fit_model.fits_ma(),
        phi_empty: ph.empty && fit_model.fits_ar(),
        eta_clamped: ph.capped,
    };
    Ok((spec, report))
}

/// M-step for one observed labelling and its responsibilities.
pub fn m_step(
    events: &EventSequence,
    immigrants: &[Immigrant],
    resp: &Responsibilities,
    prev: &ModelSpec,
    fit_model: FitModel,
) -> Result<(ModelSpec, MStepReport)> {
    let st = sample_stats(events, immigrants, resp, prev);
    let stats = ObjectiveStats::from_samples(std::slice::from_ref(&st), events.window_end)?;
    m_step_from_stats(&stats, prev, fit_model)
}

fn loglik_from_intensity(
    events: &EventSequence,
    immigrants: &[Immigrant],
    params: &ModelSpec,
    intensity: &[f64],
    offspring: &[bool],
) -> f64 {
    let big_t = events.window_end;
    let mut ll = -params.mu.mass(big_t);
    for im in immigrants {
        ll += params.mu.level_at(im.time).ln() + params.marks.ln_density(im.mark);
        ll -= im.mark * params.theta.mass_upto(big_t - im.time).unwrap_or(0.0);
        if !params.immigrants_included {
            ll -= params.phi.mass * params.phi.cdf(big_t - im.time);
        }
    }
    for (i, &t) in events.times.iter().enumerate() {
        ll -= params.phi.mass * params.phi.cdf(big_t - t);
        if offspring[i] {
            ll += intensity[i].ln();
        }
    }
    ll
}

/// Complete-data log-likelihood of events and immigrant labels.
///
/// Offspring intensities use the band cutoff when one is given; compensators
/// are exact. A zero intensity at any event yields `-∞`.
pub fn loglik_given_immigrants(
    events: &EventSequence,
    immigrants: &[Immigrant],
    params: &ModelSpec,
    band_cutoff: Option<f64>,
) -> Result<f64> {
    let cutoff = band_cutoff.unwrap_or(f64::INFINITY);
    match responsibilities(events, immigrants, params, cutoff) {
        Ok(resp) => Ok(loglik_from_intensity(events, immigrants, params, &resp.intensity, &resp.offspring)),
        Err(Error::ZeroIntensity { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Parameters compared by the stopping rule, in trace order.
pub fn parameter_vector(spec: &ModelSpec) -> Vec<f64> {
    let mut v: Vec<f64> = spec.mu.levels().to_vec();
    v.push(if spec.marks.is_constant() { spec.theta.mass } else { spec.marks.mean() });
    v.extend([spec.theta.rate, spec.phi.mass, spec.phi.rate]);
    v
}

/// `max_k |a_k − b_k| / (|b_k| + 1e-8)`
pub fn relative_change(old: &ModelSpec, new: &ModelSpec) -> f64 {
    parameter_vector(old)
        .iter()
        .zip(parameter_vector(new))
        .map(|(a, b)| (a - b).abs() / (b.abs() + 1e-8))
        .fold(0.0, f64::max)
}

/// Default starting point: `μ = 0.5n/T`, `η = 0.3`, `γ = 1`, kernel scales
/// equal to the mean interevent time and mark mean 1.
pub fn default_init(
    events: &EventSequence,
    marked: bool,
    immigrants_included: bool,
    pieces: usize,
    fit_model: FitModel,
) -> Result<ModelSpec> {
    let n = events.len();
    if n < 2 {
        return Err(Error::InvalidParameters("need at least two events to initialise".into()));
    }
    let big_t = events.window_end;
    let scale = (events.times[n - 1] - events.times[0]) / (n - 1) as f64;
    let scale = if scale > 0.0 { scale } else { big_t / n as f64 };
    let mu0 = 0.5 * n as f64 / big_t;
    let mu = ImmigrationIntensity::equal_pieces(vec![mu0; pieces.max(1)], big_t)?;
    let gamma = if fit_model.fits_ma() { 1.0 } else { 0.0 };
    let eta = if fit_model.fits_ar() { 0.3 } else { 0.0 };
    let marks = if marked {
        MarkDistribution::exponential(1.0)?
    } else {
        MarkDistribution::Constant
    };
    ModelSpec::new(
        mu,
        Kernel::with_scale(gamma, scale)?,
        Kernel::with_scale(eta, scale)?,
        marks,
        immigrants_included,
    )
}

/// Rejects starting values on the boundary, where EM cannot move away from zero.
pub fn check_interior(init: &ModelSpec, fit_model: FitModel) -> Result<()> {
    if init.mu.levels().iter().any(|&l| l <= 0.0) {
        return Err(Error::BoundaryInit("immigration level is zero".into()));
    }
    if fit_model.fits_ma() && init.marks.is_constant() && init.theta.mass <= 0.0 {
        return Err(Error::BoundaryInit("gamma is zero".into()));
    }
    if fit_model.fits_ar() && init.phi.mass <= 0.0 {
        return Err(Error::BoundaryInit("eta is zero".into()));
    }
    Ok(())
}

/// Applies the structural constraints of the fitted model to a starting point.
pub(crate) fn constrain(mut spec: ModelSpec, fit_model: FitModel) -> ModelSpec {
    if !spec.marks.is_constant() {
        spec.theta.mass = 1.0;
    }
    if !fit_model.fits_ma() {
        spec.theta.mass = 0.0;
    }
    if !fit_model.fits_ar() {
        spec.phi.mass = 0.0;
    }
    spec
}

/// Band cutoff for the next iteration under the growing rule.
pub(crate) fn next_cutoff(current: f64, fixed: Option<f64>, params: &ModelSpec, window_end: f64) -> f64 {
    match fixed {
        Some(c) => c,
        None => current.max(params.default_band_cutoff().min(window_end)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub params: ModelSpec,
    pub objective: f64,
    pub band_cutoff: f64,
    pub accept_birth: Option<f64>,
    pub accept_death: Option<f64>,
    pub mean_immigrants: Option<f64>,
    pub seconds: f64,
    pub notes: Vec<String>,
}

/// Per-iteration record of an EM or MCEM fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EMTrace {
    /// `loglik` for exact EM, `q_objective` for Monte-Carlo EM.
    pub objective_name: String,
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    pub iterations: usize,
}

impl EMTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    /// `iter,mu,gamma_or_markmean,theta_rate,eta,phi_rate,<objective>`; `mu`
    /// is the window-averaged immigration rate.
    pub fn write_csv<W: Write>(&self, out: W, window_end: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "mu", "gamma_or_markmean", "theta_rate", "eta", "phi_rate", &self.objective_name])?;
        for r in &self.rows {
            let p = &r.params;
            let g = if p.marks.is_constant() { p.theta.mass } else { p.marks.mean() };
            w.write_record([
                r.iter.to_string(),
                p.mu.average_level(window_end).to_string(),
                g.to_string(),
                p.theta.rate.to_string(),
                p.phi.mass.to_string(),
                p.phi.rate.to_string(),
                r.objective.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Exact EM with observed immigrants.
///
/// Iterates responsibilities and M-steps until the largest relative parameter
/// change drops below `config.tol` or `config.max_iter` is reached. The trace
/// holds the banded complete-data log-likelihood before each update plus a
/// final row for the returned parameters.
pub fn em_fit_observed(
    events: &EventSequence,
    immigrants: &[Immigrant],
    init: &ModelSpec,
    config: &EmConfig,
) -> Result<(ModelSpec, EMTrace)> {
    check_interior(init, config.fit_model)?;
    let mut params = constrain(init.clone(), config.fit_model);
    let big_t = events.window_end;
    let mut cutoff = 0.0;
    let mut trace = EMTrace {
        objective_name: "loglik".into(),
        rows: Vec::new(),
        converged: false,
        iterations: 0,
    };
    for iter in 0..config.max_iter {
        cutoff = next_cutoff(cutoff, config.band_cutoff, &params, big_t);
        let resp = responsibilities(events, immigrants, &params, cutoff)?;
        let ll = loglik_from_intensity(events, immigrants, &params, &resp.intensity, &resp.offspring);
        let (next, report) = m_step(events, immigrants, &resp, &params, config.fit_model)?;
        let change = relative_change(&params, &next);
        trace.rows.push(TraceRow {
            iter,
            params: params.clone(),
            objective: ll,
            band_cutoff: cutoff,
            accept_birth: None,
            accept_death: None,
            mean_immigrants: Some(immigrants.len() as f64),
            seconds: 0.0,
            notes: report.notes(),
        });
        params = next;
        trace.iterations = iter + 1;
        if change < config.tol {
            trace.converged = true;
            break;
        }
    }
    cutoff = next_cutoff(cutoff, config.band_cutoff, &params, big_t);
    let ll = loglik_given_immigrants(events, immigrants, &params, Some(cutoff))?;
    trace.rows.push(TraceRow {
        iter: trace.iterations,
        params: params.clone(),
        objective: ll,
        band_cutoff: cutoff,
        accept_birth: None,
        accept_death: None,
        mean_immigrants: Some(immigrants.len() as f64),
        seconds: 0.0,
        notes: Vec::new(),
    });
    Ok((params, trace))
}
