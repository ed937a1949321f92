//! Parametric triggering kernels, immigrant mark laws and immigration intensities.
//!
//! A kernel is stored as `mass × density`, where the mass is the branching
//! ratio (γ for the moving-average kernel θ, η for the autoregressive kernel φ)
//! and the density integrates to one on `[0, ∞)`. Only the exponential family
//! is implemented; the family tag leaves room for others.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    Exponential,
}

/// Triggering kernel `mass · rate · exp(-rate · t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub mass: f64,
    pub rate: f64,
}

impl Kernel {
    pub fn exponential(mass: f64, rate: f64) -> Result<Self> {
        if !(mass.is_finite() && mass >= 0.0) {
            return Err(Error::InvalidParameters(format!(
                "kernel mass must be finite and non-negative, got {mass}"
            )));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidParameters(format!(
                "kernel rate must be finite and positive, got {rate}"
            )));
        }
        Ok(Kernel {
            family: KernelFamily::Exponential,
            mass,
            rate,
        })
    }

    /// Exponential kernel given by its mean interevent time (`1/rate`).
    pub fn with_scale(mass: f64, scale: f64) -> Result<Self> {
        Self::exponential(mass, 1.0 / scale)
    }

    pub fn scale(&self) -> f64 {
        1.0 / self.rate
    }

    /// Kernel value `mass · density(t)`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        check_lag(t)?;
        Ok(self.value(t))
    }

    /// Accumulated kernel mass on `[0, t]`.
    pub fn mass_upto(&self, t: f64) -> Result<f64> {
        check_lag(t)?;
        Ok(self.mass * self.cdf(t))
    }

    /// Unchecked kernel value; callers guarantee `t >= 0`.
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match self.family {
            KernelFamily::Exponential => self.mass * self.rate * (-self.rate * t).exp(),
        }
    }

    /// Value at lag zero, `mass · density(0)`.
    #[inline]
    pub fn peak(&self) -> f64 {
        self.mass * self.rate
    }

    #[inline]
    pub fn density(&self, t: f64) -> f64 {
        match self.family {
            KernelFamily::Exponential => self.rate * (-self.rate * t).exp(),
        }
    }

    /// Distribution function of the normalised density.
    #[inline]
    pub fn cdf(&self, t: f64) -> f64 {
        match self.family {
            KernelFamily::Exponential => -(-self.rate * t).exp_m1(),
        }
    }

    pub fn sample_interval<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            KernelFamily::Exponential => Exp::new(self.rate)
                .expect("rate validated at construction")
                .sample(rng),
        }
    }

    /// `n` i.i.d. draws from the normalised density.
    pub fn sample_density<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample_interval(rng)).collect()
    }
}

fn check_lag(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::Domain(format!("kernel lag must be non-negative, got {t}")));
    }
    Ok(())
}

/// Law of the immigrant marks `Y_j` scaling the moving-average kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MarkDistribution {
    /// Every mark equals one (unmarked model).
    Constant,
    Exponential { mean: f64 },
}

impl MarkDistribution {
    pub fn exponential(mean: f64) -> Result<Self> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::InvalidParameters(format!(
                "mark mean must be finite and positive, got {mean}"
            )));
        }
        Ok(MarkDistribution::Exponential { mean })
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, MarkDistribution::Constant)
    }

    pub fn mean(&self) -> f64 {
        match *self {
            MarkDistribution::Constant => 1.0,
            MarkDistribution::Exponential { mean } => mean,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            MarkDistribution::Constant => 1.0,
            MarkDistribution::Exponential { mean } => loop {
                // Exp can return exactly 0 with vanishing probability; marks stay positive.
                let y: f64 = Exp::new(1.0 / mean).expect("validated mean").sample(rng);
                if y > 0.0 {
                    break y;
                }
            },
        }
    }

    /// Log density of a mark; zero for the degenerate constant law.
    pub fn ln_density(&self, y: f64) -> f64 {
        match *self {
            MarkDistribution::Constant => 0.0,
            MarkDistribution::Exponential { mean } => -mean.ln() - y / mean,
        }
    }
}

/// Immigration rate μ(·) on the observation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ImmigrationIntensity {
    Constant {
        level: f64,
    },
    /// `levels[k]` applies on `(breakpoints[k-1], breakpoints[k]]`, the first
    /// level extends to the left and the last to the right.
    PiecewiseConstant {
        levels: Vec<f64>,
        breakpoints: Vec<f64>,
    },
}

impl ImmigrationIntensity {
    pub fn constant(level: f64) -> Result<Self> {
        check_level(level)?;
        Ok(ImmigrationIntensity::Constant { level })
    }

    pub fn piecewise(levels: Vec<f64>, breakpoints: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || breakpoints.len() + 1 != levels.len() {
            return Err(Error::InvalidParameters(format!(
                "piecewise immigration needs one more level than breakpoints (got {} levels, {} breakpoints)",
                levels.len(),
                breakpoints.len()
            )));
        }
        for &l in &levels {
            check_level(l)?;
        }
        if breakpoints.iter().any(|b| !(b.is_finite() && *b > 0.0))
            || breakpoints.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidParameters(
                "breakpoints must be positive and strictly ascending".into(),
            ));
        }
        Ok(ImmigrationIntensity::PiecewiseConstant {
            levels,
            breakpoints,
        })
    }

    /// Histogram intensity with `levels.len()` equal pieces on `(0, window_end]`.
    pub fn equal_pieces(levels: Vec<f64>, window_end: f64) -> Result<Self> {
        let p = levels.len();
        if p == 0 {
            return Err(Error::InvalidParameters("need at least one piece".into()));
        }
        if p == 1 {
            return Self::constant(levels[0]);
        }
        let width = window_end / p as f64;
        let breakpoints = (1..p).map(|k| k as f64 * width).collect();
        Self::piecewise(levels, breakpoints)
    }

    pub fn levels(&self) -> &[f64] {
        match self {
            ImmigrationIntensity::Constant { level } => std::slice::from_ref(level),
            ImmigrationIntensity::PiecewiseConstant { levels, .. } => levels,
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        match self {
            ImmigrationIntensity::Constant { .. } => &[],
            ImmigrationIntensity::PiecewiseConstant { breakpoints, .. } => breakpoints,
        }
    }

    pub fn num_pieces(&self) -> usize {
        self.levels().len()
    }

    /// Level used before time zero (burn-in region).
    pub fn first_level(&self) -> f64 {
        self.levels()[0]
    }

    /// Index of the piece containing `t` (half-open on the left).
    pub fn piece_index(&self, t: f64) -> usize {
        self.breakpoints().partition_point(|&b| b < t)
    }

    #[inline]
    pub fn level_at(&self, t: f64) -> f64 {
        match self {
            ImmigrationIntensity::Constant { level } => *level,
            ImmigrationIntensity::PiecewiseConstant { levels, .. } => levels[self.piece_index(t)],
        }
    }

    /// Bounds of every piece clipped to `(0, window_end]`; empty pieces have zero length.
    pub fn piece_bounds(&self, window_end: f64) -> Vec<(f64, f64)> {
        let bps = self.breakpoints();
        (0..self.num_pieces())
            .map(|k| {
                let lo = if k == 0 { 0.0 } else { bps[k - 1].min(window_end) };
                let hi = if k == bps.len() { window_end } else { bps[k].min(window_end) };
                (lo, hi.max(lo))
            })
            .collect()
    }

    /// Total immigration mass `∫₀ᵀ μ(s) ds`.
    pub fn mass(&self, window_end: f64) -> f64 {
        self.piece_bounds(window_end)
            .iter()
            .zip(self.levels())
            .map(|((lo, hi), l)| l * (hi - lo))
            .sum()
    }

    /// Window-averaged rate `∫₀ᵀ μ / T`.
    pub fn average_level(&self, window_end: f64) -> f64 {
        self.mass(window_end) / window_end
    }

    /// Same breakpoints with new levels.
    pub fn with_levels(&self, levels: Vec<f64>) -> Result<Self> {
        match self {
            ImmigrationIntensity::Constant { .. } => Self::constant(levels[0]),
            ImmigrationIntensity::PiecewiseConstant { breakpoints, .. } => {
                Self::piecewise(levels, breakpoints.clone())
            }
        }
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level.is_finite() && level >= 0.0) {
        return Err(Error::InvalidParameters(format!(
            "immigration level must be finite and non-negative, got {level}"
        )));
    }
    Ok(())
}

/// `∫₀ᵀ μ(s) ds` for the given window.
pub fn immigration_mass(mu: &ImmigrationIntensity, window_end: f64) -> Result<f64> {
    if !(window_end.is_finite() && window_end > 0.0) {
        return Err(Error::Domain(format!("window end must be positive, got {window_end}")));
    }
    Ok(mu.mass(window_end))
}
