//! Sampler configuration and prior settings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MCMC_SCHEMA: &str = "stickydiff.mcmc/1";

/// Model for the probe effects `chi_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiModel {
    /// `chi_j = 0`.
    None,
    /// `chi_j ~ N(0, tau_chi2)` with an inverse-gamma prior on `tau_chi2`.
    IidNormal,
    /// Three-component normal mixture (methylated, transit, demethylated).
    FiniteMixture3,
}

/// Model for the subject effects `xi_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiModel {
    /// `xi_i ~ N(0, tau_eps2)`.
    IidNormal,
    /// `xi_i` from a Dirichlet process with base `N(0, tau_eps2)`.
    DpNormal,
}

/// Gamma prior, shape/rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

/// Inverse-gamma prior, shape/rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl InvGammaPrior {
    pub fn mean(&self) -> f64 {
        if self.shape > 1.0 {
            self.rate / (self.shape - 1.0)
        } else {
            self.rate / self.shape
        }
    }
}

/// Normal-inverse-gamma prior: `mu | tau2 ~ N(mean, tau2 / kappa)`,
/// `tau2 ~ IG(shape, rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NigPrior {
    pub mean: f64,
    pub kappa: f64,
    pub shape: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    pub sigma2: InvGammaPrior,
    pub tau_eps2: InvGammaPrior,
    pub tau_chi2: InvGammaPrior,
    pub alpha1: GammaPrior,
    pub alpha2: GammaPrior,
    pub beta: GammaPrior,
    pub g0: NigPrior,
}

impl Default for Priors {
    fn default() -> Self {
        let mass = GammaPrior { shape: 2.0, rate: 0.1 };
        let var = InvGammaPrior { shape: 2.0, rate: 1.0 };
        Priors {
            sigma2: var,
            tau_eps2: var,
            tau_chi2: var,
            alpha1: mass,
            alpha2: mass,
            beta: mass,
            g0: NigPrior {
                mean: 0.0,
                kappa: 0.01,
                shape: 2.0,
                rate: 1.0,
            },
        }
    }
}

/// Random-walk step sizes on the transformed scales (logit for
/// probabilities and slab positions, log for masses).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Proposals {
    pub rho1: f64,
    pub gamma: f64,
    pub eta: f64,
    pub d2: f64,
    pub alpha: f64,
}

impl Default for Proposals {
    fn default() -> Self {
        Proposals {
            rho1: 0.5,
            gamma: 0.5,
            eta: 0.7,
            d2: 0.7,
            alpha: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub schema: String,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    /// Atoms in the truncated realization of `G`.
    pub truncation_l: usize,
    pub seed: Option<u64>,
    /// Nominal FDR for calling.
    pub q0: f64,
    pub clamp_eps: f64,
    pub chi_model: ChiModel,
    pub xi_model: XiModel,
    /// Mass of the Dirichlet process on subject effects.
    pub xi_dp_mass: f64,
    pub priors: Priors,
    pub proposals: Proposals,
    /// Quadrature nodes for the eta log-odds.
    pub evidence_grid: usize,
    /// Keep every stored draw in memory (otherwise only running sums).
    pub keep_samples: bool,
    /// Multiplies the sigma2 full-conditional rate. Only the sampler
    /// self-test sets this, to build a deliberately wrong chain.
    #[serde(skip)]
    #[doc(hidden)]
    pub sigma2_rate_fault: Option<f64>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            schema: MCMC_SCHEMA.to_string(),
            burn_in: 10_000,
            samples: 50_000,
            thin: 1,
            truncation_l: 50,
            seed: None,
            q0: 0.05,
            clamp_eps: crate::data::DEFAULT_CLAMP_EPS,
            chi_model: ChiModel::FiniteMixture3,
            xi_model: XiModel::IidNormal,
            xi_dp_mass: 1.0,
            priors: Priors::default(),
            proposals: Proposals::default(),
            evidence_grid: crate::evidence::SLAB_GRID,
            keep_samples: false,
            sigma2_rate_fault: None,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(m.to_string()));
        if self.schema != MCMC_SCHEMA {
            return Err(Error::Validation(format!(
                "schema must be {MCMC_SCHEMA:?}, got {:?}",
                self.schema
            )));
        }
        if self.burn_in == 0 || self.samples == 0 {
            return fail("burn_in and samples must be positive");
        }
        if self.thin == 0 {
            return fail("thin must be at least 1");
        }
        if self.truncation_l < 2 {
            return fail("truncation_l must be at least 2");
        }
        if !(self.q0 > 0.0 && self.q0 < 1.0) {
            return fail("q0 must lie in (0, 1)");
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps <= 0.01) {
            return fail("clamp_eps must lie in (0, 0.01]");
        }
        if !(self.xi_dp_mass > 0.0) || self.evidence_grid == 0 {
            return fail("xi_dp_mass and evidence_grid must be positive");
        }
        let p = &self.priors;
        for (name, a, b) in [
            ("sigma2", p.sigma2.shape, p.sigma2.rate),
            ("tau_eps2", p.tau_eps2.shape, p.tau_eps2.rate),
            ("tau_chi2", p.tau_chi2.shape, p.tau_chi2.rate),
            ("alpha1", p.alpha1.shape, p.alpha1.rate),
            ("alpha2", p.alpha2.shape, p.alpha2.rate),
            ("beta", p.beta.shape, p.beta.rate),
            ("g0", p.g0.shape, p.g0.rate),
        ] {
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::Validation(format!("prior for {name} needs positive shape and rate")));
            }
        }
        if !(p.g0.kappa > 0.0) {
            return fail("g0 kappa must be positive");
        }
        let q = &self.proposals;
        if [q.rho1, q.gamma, q.eta, q.d2, q.alpha].iter().any(|s| !(*s > 0.0)) {
            return fail("proposal steps must be positive");
        }
        Ok(())
    }

    /// Number of stored draws.
    pub fn n_stored(&self) -> usize {
        self.samples / self.thin
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = McmcConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: McmcConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.q0, 0.05);
        assert_eq!((cfg.burn_in, cfg.samples, cfg.truncation_l), (10_000, 50_000, 50));
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let cfg: McmcConfig =
            serde_json::from_str(r#"{"schema": "stickydiff.mcmc/1", "burn_in": 5, "samples": 7, "chi_model": "none"}"#).unwrap();
        assert_eq!((cfg.burn_in, cfg.samples, cfg.chi_model), (5, 7, ChiModel::None));
        assert_eq!(cfg.priors, Priors::default());
        assert!(serde_json::from_str::<McmcConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = McmcConfig::default();
        cfg.thin = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = McmcConfig::default();
        cfg.truncation_l = 1;
        assert!(cfg.validate().is_err());
        let cfg = McmcConfig {
            schema: String::new(),
            ..McmcConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
