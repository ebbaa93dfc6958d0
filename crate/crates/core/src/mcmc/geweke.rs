//! Joint-distribution test of the sampler.
//!
//! Draws of `(parameters, data)` from the prior and data model are compared
//! with a successive-conditional chain that alternates one sampler sweep with
//! a fresh data draw given the current parameters. A correct sampler leaves
//! the joint distribution invariant, so every monitored function has the same
//! mean under both schemes.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LogitData;
use crate::error::{Error, Result};
use crate::franchise::{eta_upper_bound, simulate_franchise, BaseMeasureG, HyperParams};
use crate::math::{batch_means_se, mean, sample_gamma, sample_inv_gamma, sample_variance};

use super::chain::sweep;
use super::config::{ChiModel, InvGammaPrior, McmcConfig, NigPrior, XiModel};
use super::state::{min_gap, ChainState};

pub const MONITOR_NAMES: [&str; 6] = [
    "fraction_differential",
    "occupied_tables",
    "sigma2",
    "mean_theta",
    "rho1",
    "eta_is_zero",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeConfig {
    pub p: usize,
    pub n_treatments: usize,
    pub n_per_treatment: usize,
    pub mcmc: McmcConfig,
}

impl Default for GewekeConfig {
    /// Ten equally spaced probes, three treatments, tighter variance priors
    /// than the analysis defaults so the test chain mixes quickly.
    fn default() -> Self {
        let mut mcmc = McmcConfig {
            truncation_l: 10,
            chi_model: ChiModel::None,
            xi_model: XiModel::IidNormal,
            evidence_grid: 8,
            ..McmcConfig::default()
        };
        mcmc.priors.sigma2 = InvGammaPrior { shape: 5.0, rate: 4.0 };
        mcmc.priors.tau_eps2 = InvGammaPrior { shape: 5.0, rate: 4.0 };
        mcmc.priors.g0 = NigPrior {
            mean: 0.0,
            kappa: 1.0,
            shape: 5.0,
            rate: 4.0,
        };
        GewekeConfig {
            p: 10,
            n_treatments: 3,
            n_per_treatment: 2,
            mcmc,
        }
    }
}

impl GewekeConfig {
    /// The same harness with a deliberately wrong `sigma2` update.
    pub fn corrupted() -> Self {
        let mut cfg = GewekeConfig::default();
        cfg.mcmc.sigma2_rate_fault = Some(0.5);
        cfg
    }

    fn validate(&self) -> Result<()> {
        if self.p < 2 || self.n_treatments < 2 || self.n_per_treatment < 1 {
            return Err(Error::Argument("harness needs p >= 2, T >= 2 and samples in every treatment".into()));
        }
        if self.mcmc.chi_model != ChiModel::None || self.mcmc.xi_model != XiModel::IidNormal {
            return Err(Error::Argument("harness supports chi_model none with iid subject effects".into()));
        }
        self.mcmc.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorResult {
    pub name: String,
    pub forward_mean: f64,
    pub forward_se: f64,
    pub chain_mean: f64,
    pub chain_se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeReport {
    pub iterations: usize,
    pub monitors: Vec<MonitorResult>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.monitors.iter().map(|m| m.z.abs()).fold(0.0, f64::max)
    }
}

fn equal_distances(p: usize) -> Vec<f64> {
    vec![1.0 / (p - 1) as f64; p - 1]
}

/// A draw of every parameter from its prior.
fn prior_state<R: Rng + ?Sized>(cfg: &GewekeConfig, distances: &[f64], rng: &mut R) -> Result<ChainState> {
    let pr = &cfg.mcmc.priors;
    let gamma: f64 = rng.random::<f64>().max(1e-12);
    let eta_in_slab = rng.random_bool(0.5);
    let eta_u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let d2_in_slab = rng.random_bool(0.5);
    let tau_g2 = sample_inv_gamma(pr.g0.shape, pr.g0.rate, rng);
    let z: f64 = StandardNormal.sample(rng);
    let mu_g = pr.g0.mean + z * (tau_g2 / pr.g0.kappa).sqrt();
    let beta = sample_gamma(pr.beta.shape, pr.beta.rate, rng);
    let hp = HyperParams {
        rho1: 0.5 + 0.5 * rng.random::<f64>().max(1e-12),
        gamma,
        eta: if eta_in_slab {
            eta_u * eta_upper_bound(gamma, min_gap(distances))
        } else {
            0.0
        },
        alpha1: sample_gamma(pr.alpha1.shape, pr.alpha1.rate, rng),
        alpha2: sample_gamma(pr.alpha2.shape, pr.alpha2.rate, rng),
        d1: 0.0,
        d2: if d2_in_slab {
            rng.random::<f64>().max(f64::MIN_POSITIVE)
        } else {
            0.0
        },
        beta,
        mu_g,
        tau_g2,
        sigma2: sample_inv_gamma(pr.sigma2.shape, pr.sigma2.rate, rng),
        tau_eps2: sample_inv_gamma(pr.tau_eps2.shape, pr.tau_eps2.rate, rng),
    };
    let (g, sticks) = BaseMeasureG::stick_breaking(beta, mu_g, tau_g2, cfg.mcmc.truncation_l, rng)?;
    let franchise = simulate_franchise(cfg.p, distances, &hp, &g, cfg.n_treatments, rng)?;
    let n = cfg.n_treatments * cfg.n_per_treatment;
    let xi_dist = Normal::new(0.0, hp.tau_eps2.sqrt()).map_err(|e| Error::Argument(e.to_string()))?;
    let xi = (0..n).map(|_| xi_dist.sample(rng)).collect();
    Ok(ChainState {
        franchise,
        g,
        sticks,
        xi,
        chi: vec![0.0; cfg.p],
        tau_chi2: pr.tau_chi2.mean(),
        chi_mixture: None,
        xi_clusters: None,
        hp,
        eta_u,
        eta_in_slab,
        d2_in_slab,
        iteration: 0,
    })
}

/// Data drawn from the likelihood given `state`.
fn draw_data<R: Rng + ?Sized>(cfg: &GewekeConfig, state: &ChainState, distances: &[f64], rng: &mut R) -> Result<LogitData> {
    let (p, t) = (cfg.p, cfg.n_treatments);
    let n = t * cfg.n_per_treatment;
    let treatment: Vec<usize> = (0..n).map(|i| i / cfg.n_per_treatment).collect();
    let theta = state.theta_matrix();
    let sd = state.hp.sigma2.sqrt();
    let mut z = Vec::with_capacity(n * p);
    for i in 0..n {
        for j in 0..p {
            let e: f64 = StandardNormal.sample(rng);
            z.push(state.xi[i] + state.chi[j] + theta[j * t + treatment[i]] + sd * e);
        }
    }
    LogitData::new(z, n, p, treatment, distances.to_vec())
}

fn monitors(state: &ChainState) -> [f64; 6] {
    let f = &state.franchise;
    [
        f.n_differential() as f64 / f.n_probes() as f64,
        f.total_tables() as f64,
        state.hp.sigma2,
        mean(&state.theta_matrix()),
        state.hp.rho1,
        (state.hp.eta == 0.0) as u8 as f64,
    ]
}

/// Runs `iterations` forward draws and `iterations` successive-conditional
/// sweeps and reports a z-score per monitored function. Zero iterations give
/// an empty report.
pub fn joint_distribution_test<R: Rng + ?Sized>(cfg: &GewekeConfig, iterations: usize, rng: &mut R) -> Result<GewekeReport> {
    if iterations == 0 {
        return Ok(GewekeReport {
            iterations: 0,
            monitors: Vec::new(),
        });
    }
    cfg.validate()?;
    let distances = equal_distances(cfg.p);
    let mut forward: Vec<Vec<f64>> = vec![Vec::with_capacity(iterations); 6];
    for _ in 0..iterations {
        let st = prior_state(cfg, &distances, rng)?;
        for (k, v) in monitors(&st).into_iter().enumerate() {
            forward[k].push(v);
        }
    }
    let mut chain: Vec<Vec<f64>> = vec![Vec::with_capacity(iterations); 6];
    let mut state = prior_state(cfg, &distances, rng)?;
    let mut data = draw_data(cfg, &state, &distances, rng)?;
    for _ in 0..iterations {
        sweep(&mut state, &data, &cfg.mcmc, rng)?;
        data = draw_data(cfg, &state, &distances, rng)?;
        for (k, v) in monitors(&state).into_iter().enumerate() {
            chain[k].push(v);
        }
    }
    let monitors = MONITOR_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let (fm, cm) = (mean(&forward[k]), mean(&chain[k]));
            let fse = (sample_variance(&forward[k]) / iterations as f64).sqrt();
            let cse = batch_means_se(&chain[k]);
            let denom = (fse * fse + cse * cse).sqrt();
            let z = if denom > 0.0 {
                (fm - cm) / denom
            } else if fm == cm {
                0.0
            } else {
                f64::INFINITY
            };
            MonitorResult {
                name: name.to_string(),
                forward_mean: fm,
                forward_se: fse,
                chain_mean: cm,
                chain_se: cse,
                z,
            }
        })
        .collect();
    Ok(GewekeReport { iterations, monitors })
}
