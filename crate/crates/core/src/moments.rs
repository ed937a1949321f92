//! Closed-form first- and second-order statistics for exponential kernels and
//! an empirical palm-intensity estimator.
//!
//! With `θ(t) = θ₀e^{−θ₁t}` and `φ(t) = φ₀e^{−φ₁t}` the second-order product
//! density is `ρ(u) = λ̄² + K₁e^{−(φ₁−φ₀)u} + K₂e^{−θ₁u}` for `u > 0`, and the
//! palm intensity is `h(u) = ρ(u)/λ̄` with `h(0) = 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::events::EventSequence;
use crate::kernels::{ImmigrationIntensity, Kernel};
use crate::model::ModelSpec;

/// Expected intensity `μ(1 + γE[Y])/(1 − η)` for constant immigration.
pub fn expected_intensity(spec: &ModelSpec) -> Result<f64> {
    match spec.mu {
        ImmigrationIntensity::Constant { .. } => spec.expected_intensity_on(1.0),
        _ => Err(Error::Domain(
            "expected intensity of inhomogeneous immigration depends on the window; use ModelSpec::expected_intensity_on".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PalmConstants {
    pub mu: f64,
    pub lambda_bar: f64,
    /// Coefficients of the immigrant/event cross density
    /// `τ(u) = λ̄μ + L₁e^{−(φ₁−φ₀)u} + L₂e^{−θ₁u}` for `u > 0`.
    pub l1: f64,
    pub l2: f64,
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    /// `φ₁ − φ₀`
    pub decay_ar: f64,
    /// `θ₁`
    pub decay_ma: f64,
}

/// Palm constants for an unmarked model with immigrants counted as events.
pub fn palm_constants(mu: f64, theta: &Kernel, phi: &Kernel) -> Result<PalmConstants> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::InvalidParameters(format!("immigration rate must be non-negative, got {mu}")));
    }
    if phi.mass >= 1.0 {
        return Err(Error::Supercritical(phi.mass));
    }
    let (t0, t1) = (theta.peak(), theta.rate);
    let (p0, p1) = (phi.peak(), phi.rate);
    let lambda_bar = mu * (1.0 + theta.mass) / (1.0 - phi.mass);

    let (l1, l2, k0, k1, k2);
    if t0 == 0.0 {
        l1 = mu * p0;
        l2 = 0.0;
        k0 = 0.0;
        k1 = mu * p0 * p1 * (2.0 * p1 - p0) / (2.0 * (p1 - p0).powi(2));
        k2 = 0.0;
    } else if p0 == 0.0 {
        l1 = 0.0;
        l2 = mu * t0;
        k0 = mu * t0 * (t0 + 2.0 * t1) / (2.0 * t1);
        k1 = 0.0;
        k2 = k0;
    } else {
        let gap = t1 - (p1 - p0);
        if gap.abs() <= 1e-12 * t1.max(p1) {
            return Err(Error::DegenerateRates(format!(
                "θ₁ = {t1} coincides with φ₁ − φ₀ = {}",
                p1 - p0
            )));
        }
        l1 = mu * p0 * (t1 + t0 - p1 + p0) / gap;
        l2 = mu * t0 * (t1 - p1) / gap;
        k0 = -mu * t0 * (p1 + t1) * (t0 + 2.0 * t1) / (2.0 * t1 * (p0 - p1 - t1));
        k2 = k0 * (p1 - t1) / (p1 - p0 - t1);
        let poly = p0 * p0 * p1 * t0 + p0 * p0 * p1 * t1
            - 2.0 * p0 * p1 * p1 * t0
            - 2.0 * p0 * p1 * p1 * t1
            + p0 * t0 * t0 * t1
            + 2.0 * p0 * t0 * t1 * t1
            + p1.powi(3) * t0
            + p1.powi(3) * t1
            - p1 * t0 * t0 * t1
            - 3.0 * p1 * t0 * t1 * t1
            - p1 * t1.powi(3);
        k1 = -mu * p0 * (p0 - 2.0 * p1) * poly
            / (2.0 * t1 * (p0 - p1).powi(2) * (p0 - p1 - t1) * (p0 - p1 + t1));
    }
    Ok(PalmConstants {
        mu,
        lambda_bar,
        l1,
        l2,
        k0,
        k1,
        k2,
        decay_ar: p1 - p0,
        decay_ma: t1,
    })
}

/// Palm constants of an unmarked, constant-immigration spec.
pub fn palm_constants_for(spec: &ModelSpec) -> Result<PalmConstants> {
    let mu = match spec.mu {
        ImmigrationIntensity::Constant { level } => level,
        _ => return Err(Error::Domain("palm intensity needs constant immigration".into())),
    };
    if !spec.marks.is_constant() || !spec.immigrants_included {
        return Err(Error::Domain(
            "closed-form palm intensity covers unmarked models with immigrants counted as events".into(),
        ));
    }
    palm_constants(mu, &spec.theta, &spec.phi)
}

impl PalmConstants {
    /// Continuous part of the product density at lag `u > 0`.
    pub fn product_density(&self, u: f64) -> f64 {
        self.lambda_bar * self.lambda_bar
            + self.k1 * (-self.decay_ar * u).exp()
            + self.k2 * (-self.decay_ma * u).exp()
    }

    /// Immigrant-at-zero / event-at-`u` cross density.
    pub fn cross_density(&self, u: f64) -> f64 {
        let base = self.lambda_bar * self.mu;
        if u < 0.0 {
            base
        } else {
            base + self.l1 * (-self.decay_ar * u).exp() + self.l2 * (-self.decay_ma * u).exp()
        }
    }

    /// `∫_a^b h(u) du` for `0 ≤ a ≤ b`.
    pub fn palm_integral(&self, a: f64, b: f64) -> f64 {
        let seg = |rate: f64| ((-rate * a).exp() - (-rate * b).exp()) / rate;
        self.lambda_bar * (b - a)
            + (self.k1 * seg(self.decay_ar) + self.k2 * seg(self.decay_ma)) / self.lambda_bar
    }

    /// Average of `h` over the lag bin `(lo, hi]`; lags below zero contribute nothing.
    pub fn palm_bin_average(&self, lo: f64, hi: f64) -> f64 {
        self.palm_integral(lo.max(0.0), hi) / (hi - lo)
    }
}

/// Palm intensity `h(t)`; zero at the origin.
pub fn palm_intensity(pc: &PalmConstants, t: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::Domain(format!("lag must be non-negative, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    if t.is_infinite() {
        return Ok(pc.lambda_bar);
    }
    Ok(pc.product_density(t) / pc.lambda_bar)
}

/// Covariance density split into its continuous part at `u` and the atom at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceDensity {
    pub continuous: f64,
    pub atom: f64,
}

/// `c(u) = λ̄h(u) − λ̄²` for `u > 0` plus the atom `λ̄δ(u)`. At `u = 0` the
/// continuous part is its right limit.
pub fn covariance_density(pc: &PalmConstants, u: f64) -> Result<CovarianceDensity> {
    if u.is_nan() || u < 0.0 {
        return Err(Error::Domain(format!("lag must be non-negative, got {u}")));
    }
    let continuous = if u.is_infinite() {
        0.0
    } else {
        pc.k1 * (-pc.decay_ar * u).exp() + pc.k2 * (-pc.decay_ma * u).exp()
    };
    Ok(CovarianceDensity {
        continuous,
        atom: pc.lambda_bar,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PalmEstimate {
    pub lag: f64,
    pub h: f64,
    /// Batch-means standard error.
    pub std_error: f64,
    pub pairs: u64,
    pub base_points: usize,
}

const PALM_BATCHES: usize = 20;

/// Kernel-free palm intensity estimate on a lag grid.
///
/// For lag `u` and bandwidth `b`, only base points with `t_i + u + b/2 ≤ T`
/// are used; the count of later events with lag in `(u − b/2, u + b/2]` is
/// divided by the number of such base points times `b`. The standard error
/// comes from batch means over contiguous blocks of base points.
pub fn empirical_palm(events: &EventSequence, lag_grid: &[f64], bandwidth: f64) -> Result<Vec<PalmEstimate>> {
    if lag_grid.is_empty() {
        return Err(Error::InvalidParameters("empty lag grid".into()));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidParameters(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if events.len() < 2 {
        return Err(Error::InvalidParameters("need at least two events".into()));
    }
    let t = &events.times;
    let half = 0.5 * bandwidth;
    let mut out = Vec::with_capacity(lag_grid.len());
    for &u in lag_grid {
        let (lo, hi) = (u - half, u + half);
        let eligible = t.partition_point(|&x| x + hi <= events.window_end);
        let counts: Vec<u64> = (0..eligible)
            .map(|i| {
                let rest = &t[i + 1..];
                let a = rest.partition_point(|&x| x - t[i] <= lo);
                let b = rest.partition_point(|&x| x - t[i] <= hi);
                (b - a) as u64
            })
            .collect();
        let pairs: u64 = counts.iter().sum();
        let h = if eligible == 0 {
            0.0
        } else {
            pairs as f64 / (eligible as f64 * bandwidth)
        };
        let batches = PALM_BATCHES.min(eligible);
        let std_error = if batches >= 2 {
            let est: Vec<f64> = (0..batches)
                .map(|k| {
                    let (s, e) = (k * eligible / batches, (k + 1) * eligible / batches);
                    counts[s..e].iter().sum::<u64>() as f64 / ((e - s) as f64 * bandwidth)
                })
                .collect();
            let m = est.iter().sum::<f64>() / batches as f64;
            let var = est.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
            (var / batches as f64).sqrt()
        } else {
            f64::NAN
        };
        out.push(PalmEstimate {
            lag: u,
            h,
            std_error,
            pairs,
            base_points: eligible,
        });
    }
    Ok(out)
}
