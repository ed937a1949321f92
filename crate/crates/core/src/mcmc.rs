//! Metropolis-Hastings birth/death sampling of latent immigrant configurations.
//!
//! The target is the posterior of the immigrant labelling given the event
//! times, `p(c | t) ∝ p(t | c) Π_j μ(s_j)`. When immigrants are events a birth
//! flags a uniformly chosen offspring event as immigrant and a death unflags a
//! uniformly chosen immigrant. When immigrants are hidden, births place a new
//! immigrant uniformly on `(0, T]`.
//!
//! Marked models add a third move that redraws the mark of a uniformly chosen
//! immigrant from the current mark law, so marks of long-lived immigrants
//! keep mixing.
//!
//! The sampler keeps, for every event, the banded immigrant-triggered
//! intensity and its lag moments up to date, so a move costs time
//! proportional to the number of events inside the band.

use rand::Rng;
use serde::Serialize;

use crate::em::SampleStats;
use crate::error::{Error, Result};
use crate::events::{EventSequence, Immigrant};
use crate::model::ModelSpec;

/// A chain state: immigrant times and marks, sorted by time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImmigrantConfiguration {
    immigrants: Vec<Immigrant>,
}

impl ImmigrantConfiguration {
    pub fn new(mut immigrants: Vec<Immigrant>) -> Self {
        immigrants.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.event.cmp(&b.event)));
        ImmigrantConfiguration { immigrants }
    }

    pub fn immigrants(&self) -> &[Immigrant] {
        &self.immigrants
    }

    pub fn len(&self) -> usize {
        self.immigrants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.immigrants.is_empty()
    }

    /// Every event flagged immigrant with the given mark.
    pub fn all_events(events: &EventSequence, mark: f64) -> Self {
        Self::new(
            (0..events.len())
                .map(|i| Immigrant { time: events.times[i], mark, event: Some(i) })
                .collect(),
        )
    }

    /// One hidden immigrant at the midpoint of the gap before each event.
    pub fn gap_midpoints(events: &EventSequence, mark: f64) -> Self {
        let mut prev = 0.0;
        let mut out = Vec::new();
        for &t in &events.times {
            if t > prev {
                out.push(Immigrant { time: 0.5 * (prev + t), mark, event: None });
            }
            prev = t;
        }
        Self::new(out)
    }

    /// Default starting state for the variant of `params`.
    ///
    /// Hidden immigrants sit in the gap before each event, at most one
    /// kernel time scale before it so that every event stays inside the band.
    pub fn initial(events: &EventSequence, params: &ModelSpec) -> Self {
        let mark = params.marks.mean();
        if params.immigrants_included {
            return Self::all_events(events, mark);
        }
        let reach = 1.0 / params.theta.rate.max(params.phi.rate);
        let mut prev = 0.0;
        let mut out = Vec::new();
        for &t in &events.times {
            if t > prev {
                let lag = (0.5 * (t - prev)).min(reach);
                out.push(Immigrant { time: t - lag, mark, event: None });
            }
            prev = t;
        }
        Self::new(out)
    }

    /// Event indices flagged immigrant.
    pub fn flagged_events(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.immigrants.iter().filter_map(|im| im.event).collect();
        v.sort_unstable();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    /// Number of states returned, taken at equal strides after burn-in.
    pub samples: usize,
    /// `None` selects the model's default band cutoff.
    pub band_cutoff: Option<f64>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_iter: 300_000,
            burn_in: 50_000,
            samples: 50,
            band_cutoff: None,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("at least one sample is required".into()));
        }
        if self.n_iter <= self.burn_in || self.n_iter - self.burn_in < self.samples {
            return Err(Error::Config(format!(
                "need n_iter - burn_in >= samples (n_iter={}, burn_in={}, samples={})",
                self.n_iter, self.burn_in, self.samples
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        (self.n_iter - self.burn_in) / self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockDiagnostics {
    pub iter_block: usize,
    pub accept_birth: f64,
    pub accept_death: f64,
    pub n_c_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ChainDiagnostics {
    pub iterations: usize,
    pub stride: usize,
    pub births_proposed: u64,
    pub births_accepted: u64,
    pub deaths_proposed: u64,
    pub deaths_accepted: u64,
    pub refresh_proposed: u64,
    pub refresh_accepted: u64,
    pub accept_birth: f64,
    pub accept_death: f64,
    pub accept_refresh: f64,
    /// Immigrant count averaged over post-burn-in iterations.
    pub n_c_mean: f64,
    pub n_c_min: usize,
    pub n_c_max: usize,
    pub blocks: Vec<BlockDiagnostics>,
}

impl ChainDiagnostics {
    pub fn total_accepted(&self) -> u64 {
        self.births_accepted + self.deaths_accepted + self.refresh_accepted
    }

    /// `iter_block,accept_birth,accept_death,n_c_mean`
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter_block", "accept_birth", "accept_death", "n_c_mean"])?;
        for b in &self.blocks {
            w.write_record([
                b.iter_block.to_string(),
                b.accept_birth.to_string(),
                b.accept_death.to_string(),
                b.n_c_mean.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

const BLOCK: usize = 1000;
const REFRESH_PROB: f64 = 1.0 / 3.0;
const FLUSH_HIGH: f64 = 1e100;
const FLUSH_LOW: f64 = 1e-100;
/// Full recomputation of the incremental sums after this many accepted moves.
const RESYNC_EVERY: usize = 2000;

#[derive(Debug, Clone, Copy)]
struct Successor {
    k: u32,
    theta: f64,
    lag: f64,
}

/// Product of positive factors accumulated without overflow.
struct LogProduct {
    log: f64,
    prod: f64,
}

impl LogProduct {
    fn new() -> Self {
        LogProduct { log: 0.0, prod: 1.0 }
    }

    #[inline]
    fn mul(&mut self, f: f64) {
        self.prod *= f;
        if !(FLUSH_LOW..=FLUSH_HIGH).contains(&self.prod) {
            self.log += self.prod.ln();
            self.prod = 1.0;
        }
    }

    fn ln(&self) -> f64 {
        self.log + self.prod.ln()
    }
}

/// Outcome of a single move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Birth(bool),
    Death(bool),
    Refresh(bool),
    /// Nothing to propose (no offspring left, or no immigrant to remove).
    Impossible,
}

/// Incremental birth/death sampler for one parameter value.
pub struct BirthDeathSampler<'a> {
    events: &'a EventSequence,
    params: ModelSpec,
    cutoff: f64,
    included: bool,
    phi_part: Vec<f64>,
    phi_lag: Vec<f64>,
    succ_start: Vec<usize>,
    succ: Vec<Successor>,
    // included-variant state, indexed by event
    flagged: Vec<bool>,
    mark: Vec<f64>,
    imm_list: Vec<usize>,
    imm_pos: Vec<usize>,
    off_list: Vec<usize>,
    off_pos: Vec<usize>,
    // excluded-variant state
    hidden: Vec<(f64, f64)>,
    // immigrant-triggered sums per event
    theta_part: Vec<f64>,
    theta_lag: Vec<f64>,
    theta_logy: Vec<f64>,
    imm_phi: Vec<f64>,
    imm_phi_lag: Vec<f64>,
    contrib: Vec<u32>,
    accepted_since_sync: usize,
    refresh_prob: f64,
}

impl<'a> BirthDeathSampler<'a> {
    pub fn new(
        events: &'a EventSequence,
        params: &ModelSpec,
        band_cutoff: f64,
        state: &ImmigrantConfiguration,
    ) -> Result<Self> {
        params.validate()?;
        let n = events.len();
        let t = &events.times;
        let included = params.immigrants_included;
        let mut phi_part = vec![0.0; n];
        let mut phi_lag = vec![0.0; n];
        let mut succ_start = vec![0; n + 1];
        let mut succ = Vec::new();
        for i in 0..n {
            let lo = t.partition_point(|&s| t[i] - s > band_cutoff);
            for &s in &t[lo..i] {
                if s < t[i] {
                    let lag = t[i] - s;
                    let v = params.phi.value(lag);
                    phi_part[i] += v;
                    phi_lag[i] += v * lag;
                }
            }
            if included {
                let mut k = i + 1;
                while k < n && t[k] - t[i] <= band_cutoff {
                    if t[k] > t[i] {
                        let lag = t[k] - t[i];
                        succ.push(Successor { k: k as u32, theta: params.theta.value(lag), lag });
                    }
                    k += 1;
                }
                succ_start[i + 1] = succ.len();
            }
        }
        let mut s = BirthDeathSampler {
            events,
            params: params.clone(),
            cutoff: band_cutoff,
            included,
            phi_part,
            phi_lag,
            succ_start,
            succ,
            flagged: vec![false; if included { n } else { 0 }],
            mark: vec![1.0; if included { n } else { 0 }],
            imm_list: Vec::new(),
            imm_pos: vec![usize::MAX; if included { n } else { 0 }],
            off_list: Vec::new(),
            off_pos: vec![usize::MAX; if included { n } else { 0 }],
            hidden: Vec::new(),
            theta_part: vec![0.0; n],
            theta_lag: vec![0.0; n],
            theta_logy: vec![0.0; n],
            imm_phi: vec![0.0; n],
            imm_phi_lag: vec![0.0; n],
            contrib: vec![0; n],
            accepted_since_sync: 0,
            refresh_prob: if params.marks.is_constant() { 0.0 } else { REFRESH_PROB },
        };
        s.load(state)?;
        Ok(s)
    }

    fn load(&mut self, state: &ImmigrantConfiguration) -> Result<()> {
        crate::em::offspring_mask(self.events, state.immigrants(), self.included)?;
        if self.included {
            for im in state.immigrants() {
                let i = im.event.expect("checked by offspring_mask");
                self.flagged[i] = true;
                self.mark[i] = im.mark;
            }
            for i in 0..self.events.len() {
                if self.flagged[i] {
                    self.imm_pos[i] = self.imm_list.len();
                    self.imm_list.push(i);
                } else {
                    self.off_pos[i] = self.off_list.len();
                    self.off_list.push(i);
                }
            }
        } else {
            self.hidden = state.immigrants().iter().map(|im| (im.time, im.mark)).collect();
        }
        self.resync();
        for i in 0..self.events.len() {
            if self.is_offspring(i) && self.intensity(i) <= 0.0 {
                return Err(Error::ZeroIntensity { index: i, time: self.events.times[i] });
            }
        }
        Ok(())
    }

    /// Recomputes all immigrant-triggered sums from the current state.
    fn resync(&mut self) {
        for v in [
            &mut self.theta_part,
            &mut self.theta_lag,
            &mut self.theta_logy,
            &mut self.imm_phi,
            &mut self.imm_phi_lag,
        ] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        self.contrib.iter_mut().for_each(|x| *x = 0);
        if self.included {
            for idx in 0..self.imm_list.len() {
                let c = self.imm_list[idx];
                self.add_included(c, self.mark[c], 1.0);
            }
        } else {
            for idx in 0..self.hidden.len() {
                let (s, y) = self.hidden[idx];
                self.add_hidden(s, y, 1.0);
            }
        }
        self.accepted_since_sync = 0;
    }

    fn add_included(&mut self, c: usize, y: f64, sign: f64) {
        let ly = y.ln();
        for idx in self.succ_start[c]..self.succ_start[c + 1] {
            let Successor { k, theta, lag } = self.succ[idx];
            let k = k as usize;
            let v = y * theta;
            self.theta_part[k] += sign * v;
            self.theta_lag[k] += sign * v * lag;
            self.theta_logy[k] += sign * v * ly;
            if sign > 0.0 {
                self.contrib[k] += 1;
            } else {
                self.contrib[k] -= 1;
                if self.contrib[k] == 0 {
                    self.theta_part[k] = 0.0;
                    self.theta_lag[k] = 0.0;
                    self.theta_logy[k] = 0.0;
                }
            }
        }
    }

    fn hidden_successors(&self, s: f64) -> std::ops::Range<usize> {
        let t = &self.events.times;
        let lo = t.partition_point(|&x| x <= s);
        let hi = lo + t[lo..].partition_point(|&x| x - s <= self.cutoff);
        lo..hi
    }

    fn add_hidden(&mut self, s: f64, y: f64, sign: f64) {
        let ly = y.ln();
        for k in self.hidden_successors(s) {
            let lag = self.events.times[k] - s;
            let th = y * self.params.theta.value(lag);
            let ph = self.params.phi.value(lag);
            self.theta_part[k] += sign * th;
            self.theta_lag[k] += sign * th * lag;
            self.theta_logy[k] += sign * th * ly;
            self.imm_phi[k] += sign * ph;
            self.imm_phi_lag[k] += sign * ph * lag;
            if sign > 0.0 {
                self.contrib[k] += 1;
            } else {
                self.contrib[k] -= 1;
                if self.contrib[k] == 0 {
                    self.theta_part[k] = 0.0;
                    self.theta_lag[k] = 0.0;
                    self.theta_logy[k] = 0.0;
                    self.imm_phi[k] = 0.0;
                    self.imm_phi_lag[k] = 0.0;
                }
            }
        }
    }

    #[inline]
    fn is_offspring(&self, i: usize) -> bool {
        !self.included || !self.flagged[i]
    }

    /// Banded triggering intensity `D_i` under the current state.
    #[inline]
    pub fn intensity(&self, i: usize) -> f64 {
        self.theta_part[i] + self.imm_phi[i] + self.phi_part[i]
    }

    /// `D_k` with one immigrant's contribution `v` removed.
    #[inline]
    fn intensity_without(&self, k: usize, v: f64) -> f64 {
        if self.contrib[k] == 1 {
            return self.phi_part[k];
        }
        let d = self.intensity(k);
        let rest = d - v;
        if rest < 1e-9 * d {
            self.fresh_intensity_without(k, v)
        } else {
            rest
        }
    }

    /// Direct recomputation used when the incremental difference is ill-conditioned.
    fn fresh_intensity_without(&self, k: usize, removed: f64) -> f64 {
        let tk = self.events.times[k];
        let mut total = self.phi_part[k];
        let mut skipped = false;
        let mut add = |v: f64| {
            if !skipped && v == removed {
                skipped = true;
            } else {
                total += v;
            }
        };
        if self.included {
            let t = &self.events.times;
            let lo = t.partition_point(|&s| tk - s > self.cutoff);
            for j in lo..k {
                if self.flagged[j] && t[j] < tk {
                    let lag = tk - t[j];
                    add(self.mark[j] * self.params.theta.value(lag));
                }
            }
        } else {
            for &(s, y) in &self.hidden {
                if s < tk && tk - s <= self.cutoff {
                    let lag = tk - s;
                    add(y * self.params.theta.value(lag) + self.params.phi.value(lag));
                }
            }
        }
        total.max(0.0)
    }

    pub fn immigrant_count(&self) -> usize {
        if self.included {
            self.imm_list.len()
        } else {
            self.hidden.len()
        }
    }

    pub fn configuration(&self) -> ImmigrantConfiguration {
        if self.included {
            ImmigrantConfiguration::new(
                self.imm_list
                    .iter()
                    .map(|&i| Immigrant { time: self.events.times[i], mark: self.mark[i], event: Some(i) })
                    .collect(),
            )
        } else {
            ImmigrantConfiguration::new(
                self.hidden
                    .iter()
                    .map(|&(time, mark)| Immigrant { time, mark, event: None })
                    .collect(),
            )
        }
    }

    fn ma_compensator(&self, s: f64, y: f64) -> f64 {
        y * self.params.theta.mass * self.params.theta.cdf(self.events.window_end - s)
    }

    fn log_prior(&self, s: f64) -> f64 {
        self.params.mu.level_at(s).ln()
    }

    /// Log birth ratio for flagging offspring event `c` with mark `y`.
    pub fn log_birth_included(&self, c: usize, y: f64) -> f64 {
        let n = self.events.len() as f64;
        let nc = self.imm_list.len() as f64;
        let d_c = self.intensity(c);
        if d_c <= 0.0 {
            return f64::INFINITY;
        }
        let mut prod = LogProduct::new();
        for sc in &self.succ[self.succ_start[c]..self.succ_start[c + 1]] {
            let k = sc.k as usize;
            if !self.flagged[k] {
                prod.mul(1.0 + y * sc.theta / self.intensity(k));
            }
        }
        ((n - nc) / (nc + 1.0)).ln() + self.log_prior(self.events.times[c]) - self.ma_compensator(self.events.times[c], y)
            + prod.ln()
            - d_c.ln()
    }

    /// Log death ratio for unflagging immigrant event `c`.
    pub fn log_death_included(&self, c: usize) -> f64 {
        let n = self.events.len() as f64;
        let nc = self.imm_list.len() as f64;
        let y = self.mark[c];
        let d_c = self.intensity(c);
        if d_c <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut prod = LogProduct::new();
        for sc in &self.succ[self.succ_start[c]..self.succ_start[c + 1]] {
            let k = sc.k as usize;
            if !self.flagged[k] {
                let v = y * sc.theta;
                let rest = self.intensity_without(k, v);
                if rest <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                prod.mul(self.intensity(k) / rest);
            }
        }
        let log_birth = ((n - nc + 1.0) / nc).ln() + self.log_prior(self.events.times[c])
            - self.ma_compensator(self.events.times[c], y)
            + prod.ln()
            - d_c.ln();
        -log_birth
    }

    /// Log birth ratio for a hidden immigrant at `s` with mark `y`.
    pub fn log_birth_hidden(&self, s: f64, y: f64) -> f64 {
        let big_t = self.events.window_end;
        let nc = self.hidden.len() as f64;
        let mut prod = LogProduct::new();
        for k in self.hidden_successors(s) {
            let lag = self.events.times[k] - s;
            let v = y * self.params.theta.value(lag) + self.params.phi.value(lag);
            prod.mul(1.0 + v / self.intensity(k));
        }
        (big_t / (nc + 1.0)).ln() + self.log_prior(s)
            - self.ma_compensator(s, y)
            - self.params.phi.mass * self.params.phi.cdf(big_t - s)
            + prod.ln()
    }

    /// Log death ratio for hidden immigrant number `j`.
    pub fn log_death_hidden(&self, j: usize) -> f64 {
        let big_t = self.events.window_end;
        let nc = self.hidden.len() as f64;
        let (s, y) = self.hidden[j];
        let mut prod = LogProduct::new();
        for k in self.hidden_successors(s) {
            let lag = self.events.times[k] - s;
            let v = y * self.params.theta.value(lag) + self.params.phi.value(lag);
            let rest = self.intensity_without(k, v);
            if rest <= 0.0 {
                return f64::NEG_INFINITY;
            }
            prod.mul(self.intensity(k) / rest);
        }
        let log_birth = (big_t / nc).ln() + self.log_prior(s)
            - self.ma_compensator(s, y)
            - self.params.phi.mass * self.params.phi.cdf(big_t - s)
            + prod.ln();
        -log_birth
    }

    /// Log acceptance ratio for replacing the mark of an immigrant at `s`.
    fn log_refresh(&self, s: f64, y: f64, y_new: f64, event: Option<usize>) -> f64 {
        let dy = y_new - y;
        let mut prod = LogProduct::new();
        match event {
            Some(c) => {
                for sc in &self.succ[self.succ_start[c]..self.succ_start[c + 1]] {
                    let k = sc.k as usize;
                    if !self.flagged[k] {
                        let d = self.intensity(k);
                        prod.mul((d + dy * sc.theta) / d);
                    }
                }
            }
            None => {
                for k in self.hidden_successors(s) {
                    let d = self.intensity(k);
                    let lag = self.events.times[k] - s;
                    prod.mul((d + dy * self.params.theta.value(lag)) / d);
                }
            }
        }
        -dy * self.params.theta.mass * self.params.theta.cdf(self.events.window_end - s) + prod.ln()
    }

    fn accept<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> Result<bool> {
        if log_ratio.is_nan() {
            return Err(Error::Numerical("acceptance ratio is NaN".into()));
        }
        if log_ratio >= 0.0 {
            return Ok(true);
        }
        let u: f64 = rng.random();
        Ok(u.ln() < log_ratio)
    }

    fn after_accept(&mut self) {
        self.accepted_since_sync += 1;
        if self.accepted_since_sync >= RESYNC_EVERY {
            self.resync();
        }
    }

    fn flag(&mut self, c: usize, y: f64) {
        self.flagged[c] = true;
        self.mark[c] = y;
        let pos = self.off_pos[c];
        self.off_list.swap_remove(pos);
        if pos < self.off_list.len() {
            self.off_pos[self.off_list[pos]] = pos;
        }
        self.off_pos[c] = usize::MAX;
        self.imm_pos[c] = self.imm_list.len();
        self.imm_list.push(c);
        self.add_included(c, y, 1.0);
    }

    fn unflag(&mut self, c: usize) {
        self.add_included(c, self.mark[c], -1.0);
        self.flagged[c] = false;
        let pos = self.imm_pos[c];
        self.imm_list.swap_remove(pos);
        if pos < self.imm_list.len() {
            self.imm_pos[self.imm_list[pos]] = pos;
        }
        self.imm_pos[c] = usize::MAX;
        self.off_pos[c] = self.off_list.len();
        self.off_list.push(c);
    }

    /// One Metropolis-Hastings move.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Move> {
        let nc = self.immigrant_count();
        if self.refresh_prob > 0.0 && rng.random::<f64>() < self.refresh_prob {
            if nc == 0 {
                return Ok(Move::Impossible);
            }
            let j = rng.random_range(0..nc);
            let y_new = self.params.marks.sample(rng);
            let (s, y, event) = if self.included {
                let c = self.imm_list[j];
                (self.events.times[c], self.mark[c], Some(c))
            } else {
                (self.hidden[j].0, self.hidden[j].1, None)
            };
            let ok = Self::accept(rng, self.log_refresh(s, y, y_new, event))?;
            if ok {
                match event {
                    Some(c) => {
                        self.add_included(c, y, -1.0);
                        self.mark[c] = y_new;
                        self.add_included(c, y_new, 1.0);
                    }
                    None => {
                        self.add_hidden(s, y, -1.0);
                        self.hidden[j].1 = y_new;
                        self.add_hidden(s, y_new, 1.0);
                    }
                }
                self.after_accept();
            }
            return Ok(Move::Refresh(ok));
        }

        let birth = rng.random::<f64>() < 0.5;
        if self.included {
            if birth {
                if self.off_list.is_empty() {
                    return Ok(Move::Impossible);
                }
                let c = self.off_list[rng.random_range(0..self.off_list.len())];
                let y = self.params.marks.sample(rng);
                let ok = Self::accept(rng, self.log_birth_included(c, y))?;
                if ok {
                    self.flag(c, y);
                    self.after_accept();
                }
                Ok(Move::Birth(ok))
            } else {
                if nc == 0 {
                    return Ok(Move::Impossible);
                }
                let c = self.imm_list[rng.random_range(0..nc)];
                let ok = Self::accept(rng, self.log_death_included(c))?;
                if ok {
                    self.unflag(c);
                    self.after_accept();
                }
                Ok(Move::Death(ok))
            }
        } else if birth {
            let u: f64 = rng.random();
            let s = (1.0 - u) * self.events.window_end;
            let y = self.params.marks.sample(rng);
            let ok = Self::accept(rng, self.log_birth_hidden(s, y))?;
            if ok {
                self.hidden.push((s, y));
                self.add_hidden(s, y, 1.0);
                self.after_accept();
            }
            Ok(Move::Birth(ok))
        } else {
            if nc == 0 {
                return Ok(Move::Impossible);
            }
            let j = rng.random_range(0..nc);
            let ok = Self::accept(rng, self.log_death_hidden(j))?;
            if ok {
                let (s, y) = self.hidden.swap_remove(j);
                self.add_hidden(s, y, -1.0);
                self.after_accept();
            }
            Ok(Move::Death(ok))
        }
    }

    /// E-step statistics of the current state.
    pub fn sample_stats(&self) -> SampleStats {
        let conf = self.configuration();
        let mut st = SampleStats::from_labels(self.events, conf.immigrants(), &self.params);
        for i in 0..self.events.len() {
            if !self.is_offspring(i) {
                continue;
            }
            let d = self.intensity(i);
            st.theta_weight += self.theta_part[i] / d;
            st.theta_lag += self.theta_lag[i] / d;
            st.theta_log_mark += self.theta_logy[i] / d;
            st.phi_weight += (self.phi_part[i] + self.imm_phi[i]) / d;
            st.phi_lag += (self.phi_lag[i] + self.imm_phi_lag[i]) / d;
        }
        st
    }

    /// Runs `n_iter` moves, calling `visit` on the `samples` states taken at
    /// equal strides after `burn_in`.
    pub fn run<R: Rng + ?Sized>(
        &mut self,
        config: &ChainConfig,
        rng: &mut R,
        mut visit: impl FnMut(&Self),
    ) -> Result<ChainDiagnostics> {
        config.validate()?;
        let stride = config.stride();
        let mut d = ChainDiagnostics {
            iterations: config.n_iter,
            stride,
            n_c_min: usize::MAX,
            ..Default::default()
        };
        let (mut blk_b, mut blk_bp, mut blk_d, mut blk_dp, mut blk_nc, mut blk_len) = (0u64, 0u64, 0u64, 0u64, 0f64, 0usize);
        let mut nc_sum = 0.0;
        let mut taken = 0;
        for it in 1..=config.n_iter {
            match self.step(rng)? {
                Move::Birth(ok) => {
                    d.births_proposed += 1;
                    blk_bp += 1;
                    if ok {
                        d.births_accepted += 1;
                        blk_b += 1;
                    }
                }
                Move::Death(ok) => {
                    d.deaths_proposed += 1;
                    blk_dp += 1;
                    if ok {
                        d.deaths_accepted += 1;
                        blk_d += 1;
                    }
                }
                Move::Refresh(ok) => {
                    d.refresh_proposed += 1;
                    d.refresh_accepted += ok as u64;
                }
                Move::Impossible => {}
            }
            let nc = self.immigrant_count();
            blk_nc += nc as f64;
            blk_len += 1;
            if it > config.burn_in {
                nc_sum += nc as f64;
                d.n_c_min = d.n_c_min.min(nc);
                d.n_c_max = d.n_c_max.max(nc);
                if taken < config.samples && (it - config.burn_in).is_multiple_of(stride) {
                    visit(self);
                    taken += 1;
                }
            }
            if blk_len == BLOCK || it == config.n_iter {
                let rate = |a: u64, p: u64| if p == 0 { 0.0 } else { a as f64 / p as f64 };
                d.blocks.push(BlockDiagnostics {
                    iter_block: d.blocks.len(),
                    accept_birth: rate(blk_b, blk_bp),
                    accept_death: rate(blk_d, blk_dp),
                    n_c_mean: blk_nc / blk_len as f64,
                });
                (blk_b, blk_bp, blk_d, blk_dp, blk_nc, blk_len) = (0, 0, 0, 0, 0.0, 0);
            }
        }
        let rate = |a: u64, p: u64| if p == 0 { 0.0 } else { a as f64 / p as f64 };
        d.accept_birth = rate(d.births_accepted, d.births_proposed);
        d.accept_death = rate(d.deaths_accepted, d.deaths_proposed);
        d.accept_refresh = rate(d.refresh_accepted, d.refresh_proposed);
        d.n_c_mean = nc_sum / (config.n_iter - config.burn_in) as f64;
        Ok(d)
    }
}

/// Candidate immigrant for [`birth_ratio`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Candidate {
    /// Offspring event index to flag (immigrants are events).
    Event { index: usize, mark: f64 },
    /// Hidden immigrant position (immigrants are not events).
    Hidden { time: f64, mark: f64 },
}

fn cutoff_or_default(band_cutoff: Option<f64>, params: &ModelSpec) -> f64 {
    band_cutoff.unwrap_or_else(|| params.default_band_cutoff())
}

/// Metropolis-Hastings birth ratio for adding `candidate` to `state`.
///
/// Returns `+∞` when the candidate's own triggering intensity vanishes.
pub fn birth_ratio(
    state: &ImmigrantConfiguration,
    candidate: Candidate,
    events: &EventSequence,
    params: &ModelSpec,
    band_cutoff: Option<f64>,
) -> Result<f64> {
    let sampler = BirthDeathSampler::new(events, params, cutoff_or_default(band_cutoff, params), state)?;
    let lr = match candidate {
        Candidate::Event { index, mark } => {
            if !params.immigrants_included || index >= events.len() || sampler.flagged[index] {
                return Err(Error::InvalidParameters(format!("event {index} is not a current offspring")));
            }
            sampler.log_birth_included(index, mark)
        }
        Candidate::Hidden { time, mark } => {
            if params.immigrants_included || !(time > 0.0 && time <= events.window_end) {
                return Err(Error::InvalidParameters(format!("hidden immigrant at {time} is not admissible")));
            }
            sampler.log_birth_hidden(time, mark)
        }
    };
    if lr.is_nan() {
        return Err(Error::Numerical("birth ratio is NaN".into()));
    }
    Ok(lr.exp())
}

/// Metropolis-Hastings death ratio for removing immigrant `which` (index into
/// `state.immigrants()`).
pub fn death_ratio(
    state: &ImmigrantConfiguration,
    which: usize,
    events: &EventSequence,
    params: &ModelSpec,
    band_cutoff: Option<f64>,
) -> Result<f64> {
    let sampler = BirthDeathSampler::new(events, params, cutoff_or_default(band_cutoff, params), state)?;
    let im = state
        .immigrants()
        .get(which)
        .ok_or_else(|| Error::InvalidParameters(format!("no immigrant {which}")))?;
    let lr = match im.event {
        Some(c) => sampler.log_death_included(c),
        None => {
            let j = sampler
                .hidden
                .iter()
                .position(|&(s, y)| s == im.time && y == im.mark)
                .expect("state loaded into sampler");
            sampler.log_death_hidden(j)
        }
    };
    if lr.is_nan() {
        return Err(Error::Numerical("death ratio is NaN".into()));
    }
    Ok(lr.exp())
}

/// A single move from `state`. Rebuilds the sampler, so prefer
/// [`run_chain`] or [`BirthDeathSampler`] for long runs.
pub fn mh_step<R: Rng + ?Sized>(
    state: &ImmigrantConfiguration,
    events: &EventSequence,
    params: &ModelSpec,
    band_cutoff: Option<f64>,
    rng: &mut R,
) -> Result<ImmigrantConfiguration> {
    let mut sampler = BirthDeathSampler::new(events, params, cutoff_or_default(band_cutoff, params), state)?;
    sampler.step(rng)?;
    Ok(sampler.configuration())
}

/// Runs the chain and returns `config.samples` states at equal strides after burn-in.
pub fn run_chain<R: Rng + ?Sized>(
    events: &EventSequence,
    params: &ModelSpec,
    config: &ChainConfig,
    init: &ImmigrantConfiguration,
    rng: &mut R,
) -> Result<(Vec<ImmigrantConfiguration>, ChainDiagnostics)> {
    config.validate()?;
    let mut sampler = BirthDeathSampler::new(events, params, cutoff_or_default(config.band_cutoff, params), init)?;
    let mut out = Vec::with_capacity(config.samples);
    let diag = sampler.run(config, rng, |s| out.push(s.configuration()))?;
    Ok((out, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{loglik_given_immigrants, responsibilities, sample_stats};
    use crate::kernels::{ImmigrationIntensity, Kernel, MarkDistribution};
    use crate::simulate::simulate_until_count;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_spec() -> ModelSpec {
        ModelSpec::new(
            ImmigrationIntensity::constant(0.5).unwrap(),
            Kernel::exponential(1.0, 1.0).unwrap(),
            Kernel::exponential(0.5, 1.0).unwrap(),
            MarkDistribution::Constant,
            true,
        )
        .unwrap()
    }

    #[test]
    fn two_event_birth_ratio() {
        // Events at 0 and 1 on (0, 1], first one flagged. The ratio reduces to
        // (1/2)·μ / (θ(1) + φ(1)) = e/6.
        let ev = EventSequence::new(vec![0.0, 1.0], 1.0).unwrap();
        let state = ImmigrantConfiguration::new(vec![Immigrant { time: 0.0, mark: 1.0, event: Some(0) }]);
        let r = birth_ratio(&state, Candidate::Event { index: 1, mark: 1.0 }, &ev, &toy_spec(), Some(10.0)).unwrap();
        assert!((r - 0.45304697140984087).abs() < 1e-15, "{r}");
    }

    #[test]
    fn birth_ratio_matches_likelihood_ratio() {
        let spec = ModelSpec::unmarked(0.3, 2.0, 0.5, 0.4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (ev, _) = simulate_until_count(&spec, 40, None, &mut rng).unwrap();
        let mut flags: Vec<usize> = vec![0];
        flags.extend((1..ev.len()).filter(|i| i % 3 == 0));
        let mk = |f: &[usize]| {
            ImmigrantConfiguration::new(f.iter().map(|&i| Immigrant { time: ev.times[i], mark: 1.0, event: Some(i) }).collect())
        };
        let state = mk(&flags);
        let n = ev.len() as f64;
        for c in [1usize, 2, 5, 10, 20] {
            let r = birth_ratio(&state, Candidate::Event { index: c, mark: 1.0 }, &ev, &spec, Some(1e9)).unwrap();
            let mut more = flags.clone();
            more.push(c);
            let new = mk(&more);
            let l0 = loglik_given_immigrants(&ev, state.immigrants(), &spec, None).unwrap();
            let l1 = loglik_given_immigrants(&ev, new.immigrants(), &spec, None).unwrap();
            let nc = flags.len() as f64;
            let want = ((n - nc) / (nc + 1.0)).ln() + l1 - l0;
            assert!((r.ln() - want).abs() < 1e-9, "{c}: {} vs {want}", r.ln());
        }
    }

    #[test]
    fn hidden_birth_ratio_matches_likelihood_ratio() {
        let spec = ModelSpec::marked(0.3, 2.0, 0.5, 0.4, 1.0).unwrap().with_immigrants_included(false);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let (ev, imm) = simulate_until_count(&spec, 30, None, &mut rng).unwrap();
        let state = ImmigrantConfiguration::initial(&ev, &spec);
        let _ = imm;
        for (s, y) in [(0.3, 1.0), (ev.times[3], 2.5), (0.5 * ev.window_end, 0.1)] {
            let r = birth_ratio(&state, Candidate::Hidden { time: s, mark: y }, &ev, &spec, Some(1e9)).unwrap();
            let mut v = state.immigrants().to_vec();
            v.push(Immigrant { time: s, mark: y, event: None });
            let l0 = loglik_given_immigrants(&ev, state.immigrants(), &spec, None).unwrap();
            let l1 = loglik_given_immigrants(&ev, &v, &spec, None).unwrap();
            // The mark density is cancelled by the proposal.
            let want = (ev.window_end / (state.len() as f64 + 1.0)).ln() + l1 - l0 - spec.marks.ln_density(y);
            assert!((r.ln() - want).abs() < 1e-9, "{} vs {want}", r.ln());
        }
    }

    #[test]
    fn duplicate_hidden_time_is_allowed() {
        let spec = toy_spec().with_immigrants_included(false);
        let ev = EventSequence::new(vec![1.0, 2.0], 3.0).unwrap();
        let state = ImmigrantConfiguration::gap_midpoints(&ev, 1.0);
        let s = state.immigrants()[1].time;
        let r = birth_ratio(&state, Candidate::Hidden { time: s, mark: 1.0 }, &ev, &spec, None).unwrap();
        assert!(r.is_finite() && r > 0.0);
    }

    #[test]
    fn first_event_never_dies() {
        let ev = EventSequence::new(vec![0.5, 1.0, 1.7], 2.0).unwrap();
        let state = ImmigrantConfiguration::all_events(&ev, 1.0);
        assert_eq!(death_ratio(&state, 0, &ev, &toy_spec(), None).unwrap(), 0.0);
    }

    #[test]
    fn impossible_moves_leave_state() {
        let ev = EventSequence::new(vec![0.5, 1.0], 2.0).unwrap();
        let full = ImmigrantConfiguration::all_events(&ev, 1.0);
        let spec = toy_spec();
        let mut s = BirthDeathSampler::new(&ev, &spec, 10.0, &full).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let before = s.configuration();
            if s.step(&mut rng).unwrap() == Move::Impossible {
                assert_eq!(before, s.configuration());
            }
        }
        let hidden = toy_spec().with_immigrants_included(false);
        let empty_ev = EventSequence::empty(2.0);
        let mut s = BirthDeathSampler::new(&empty_ev, &hidden, 10.0, &ImmigrantConfiguration::new(vec![])).unwrap();
        let mut saw_impossible = false;
        for _ in 0..20 {
            if s.immigrant_count() == 0 {
                let before = s.configuration();
                if let Move::Impossible = s.step(&mut rng).unwrap() {
                    saw_impossible = true;
                    assert_eq!(before, s.configuration());
                }
            } else {
                s.step(&mut rng).unwrap();
            }
        }
        assert!(saw_impossible);
    }

    #[test]
    fn incremental_stats_match_direct_responsibilities() {
        for included in [true, false] {
            let spec = ModelSpec::marked(0.2, 3.0, 0.3, 0.5, 1.0).unwrap().with_immigrants_included(included);
            let mut rng = ChaCha8Rng::seed_from_u64(33);
            let (ev, _) = simulate_until_count(&spec, 300, None, &mut rng).unwrap();
            let cutoff = spec.default_band_cutoff();
            let init = ImmigrantConfiguration::initial(&ev, &spec);
            let mut s = BirthDeathSampler::new(&ev, &spec, cutoff, &init).unwrap();
            for _ in 0..5000 {
                s.step(&mut rng).unwrap();
            }
            let conf = s.configuration();
            let fast = s.sample_stats();
            let resp = responsibilities(&ev, conf.immigrants(), &spec, cutoff).unwrap();
            let slow = sample_stats(&ev, conf.immigrants(), &resp, &spec);
            for (a, b) in [
                (fast.theta_weight, slow.theta_weight),
                (fast.theta_lag, slow.theta_lag),
                (fast.theta_log_mark, slow.theta_log_mark),
                (fast.phi_weight, slow.phi_weight),
                (fast.phi_lag, slow.phi_lag),
            ] {
                assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "{included}: {a} vs {b}");
            }
            assert_eq!(fast.immigrant_count, slow.immigrant_count);
        }
    }

    #[test]
    fn run_chain_sampling_and_determinism() {
        let spec = ModelSpec::unmarked(0.2, 2.0, 0.5, 0.4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let (ev, _) = simulate_until_count(&spec, 100, None, &mut rng).unwrap();
        let init = ImmigrantConfiguration::initial(&ev, &spec);
        let cfg = ChainConfig { n_iter: 101, burn_in: 100, samples: 1, band_cutoff: None };
        let (states, diag) = run_chain(&ev, &spec, &cfg, &init, &mut rng).unwrap();
        assert_eq!(states.len(), 1);
        assert_eq!(diag.stride, 1);
        let cfg = ChainConfig { n_iter: 5000, burn_in: 1000, samples: 10, band_cutoff: None };
        let a = run_chain(&ev, &spec, &cfg, &init, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = run_chain(&ev, &spec, &cfg, &init, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 10);
        for st in &a.0 {
            assert_eq!(st.flagged_events()[0], 0);
            assert!(st.len() <= ev.len());
        }
        assert!((0.0..=1.0).contains(&a.1.accept_birth) && (0.0..=1.0).contains(&a.1.accept_death));
        assert!(run_chain(&ev, &spec, &ChainConfig { n_iter: 10, burn_in: 10, samples: 1, band_cutoff: None }, &init, &mut rng).is_err());
        let d = ChainConfig::default();
        assert_eq!((d.n_iter, d.samples), (300_000, 50));
    }
}
