//! The generative model specification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{ImmigrationIntensity, Kernel, MarkDistribution};

/// Full specification of an ARMA point process.
///
/// Immigrants arrive with intensity `mu`, each carries a mark `Y` drawn from
/// `marks` and triggers a moving-average burst with intensity `Y·θ`, and every
/// point (immigrants included when `immigrants_included`) triggers
/// autoregressive offspring with intensity `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub mu: ImmigrationIntensity,
    pub theta: Kernel,
    pub phi: Kernel,
    pub marks: MarkDistribution,
    pub immigrants_included: bool,
}

impl ModelSpec {
    pub fn new(
        mu: ImmigrationIntensity,
        theta: Kernel,
        phi: Kernel,
        marks: MarkDistribution,
        immigrants_included: bool,
    ) -> Result<Self> {
        let spec = ModelSpec {
            mu,
            theta,
            phi,
            marks,
            immigrants_included,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Unmarked model with constant immigration, kernels given by mass and scale.
    pub fn unmarked(mu: f64, gamma: f64, theta_scale: f64, eta: f64, phi_scale: f64) -> Result<Self> {
        Self::new(
            ImmigrationIntensity::constant(mu)?,
            Kernel::with_scale(gamma, theta_scale)?,
            Kernel::with_scale(eta, phi_scale)?,
            MarkDistribution::Constant,
            true,
        )
    }

    /// Marked model (`γ ≡ 1`) with exponential marks of the given mean.
    pub fn marked(mu: f64, mark_mean: f64, theta_scale: f64, eta: f64, phi_scale: f64) -> Result<Self> {
        Self::new(
            ImmigrationIntensity::constant(mu)?,
            Kernel::with_scale(1.0, theta_scale)?,
            Kernel::with_scale(eta, phi_scale)?,
            MarkDistribution::exponential(mark_mean)?,
            true,
        )
    }

    pub fn with_immigrants_included(mut self, included: bool) -> Self {
        self.immigrants_included = included;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi.mass >= 1.0 {
            return Err(Error::Supercritical(self.phi.mass));
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        self.theta.mass
    }

    pub fn eta(&self) -> f64 {
        self.phi.mass
    }

    /// Expected number of moving-average offspring per immigrant, `γ·E[Y]`.
    pub fn cluster_gain(&self) -> f64 {
        self.theta.mass * self.marks.mean()
    }

    /// Stationary expected intensity `μ̄(1 + γE[Y]) / (1 − η)`, with `μ̄` the
    /// immigration rate averaged over `(0, window_end]`.
    pub fn expected_intensity_on(&self, window_end: f64) -> Result<f64> {
        self.validate()?;
        let mu = match &self.mu {
            ImmigrationIntensity::Constant { level } => *level,
            other => other.average_level(window_end),
        };
        let own = if self.immigrants_included { 1.0 } else { 0.0 };
        // Without immigrants in the output, immigrant-triggered AR offspring still count.
        let direct = own + self.cluster_gain();
        let through_ar = if self.immigrants_included {
            direct
        } else {
            direct + self.eta()
        };
        Ok(mu * through_ar / (1.0 - self.eta()))
    }

    /// Default burn-in `20 · max(1/((1−η)φ₁), 1/θ₁)`.
    pub fn default_burn_in(&self) -> f64 {
        let ar = 1.0 / ((1.0 - self.eta()) * self.phi.rate);
        let ma = 1.0 / self.theta.rate;
        20.0 * ar.max(ma)
    }

    /// Default band cutoff `20 / min(θ₁, φ₁(1−η))`.
    pub fn default_band_cutoff(&self) -> f64 {
        20.0 / self.theta.rate.min(self.phi.rate * (1.0 - self.eta()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_supercritical() {
        let err = ModelSpec::unmarked(0.1, 1.0, 1.0, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Supercritical(_)));
    }

    #[test]
    fn expected_intensity_examples() {
        let s = ModelSpec::marked(0.1, 4.0, 0.1, 0.5, 1.0).unwrap();
        assert!((s.expected_intensity_on(1.0).unwrap() - 1.0).abs() < 1e-12);
        let s = ModelSpec::unmarked(0.1, 5.0, 0.5, 0.5, 0.25).unwrap();
        assert!((s.expected_intensity_on(1.0).unwrap() - 1.2).abs() < 1e-12);
        let s = ModelSpec::unmarked(0.3, 0.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(s.expected_intensity_on(1.0).unwrap(), 0.3);
    }

    #[test]
    fn burn_in_default() {
        let s = ModelSpec::unmarked(0.1, 5.0, 0.5, 0.5, 0.25).unwrap();
        assert!((s.default_burn_in() - 20.0 * 0.5).abs() < 1e-12);
    }
}
