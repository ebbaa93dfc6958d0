//! Synthetic methylation datasets with known differential states.
//!
//! Generation follows a four-step recipe: a distance-based four-state
//! methylation chain sets probe baselines, probe effects scatter around the
//! baseline logits, treatment effects come from the franchise process, and
//! observed proportions are binomial read counts over Poisson depths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{normalize_distances, Dataset};
use crate::error::{Error, Result};
use crate::franchise::{simulate_franchise, BaseMeasureG, Cuisine, HyperParams};
use crate::math::{inv_logit, logit};

pub const SIM_SCHEMA: &str = "stickydiff.sim/1";

/// Number of states of the methylation chain: methylated, first transit,
/// demethylated, second transit.
pub const N_METHYLATION_STATES: usize = 4;

/// Generating parameters of the franchise, named as in the simulation table
/// (the differential proportion is given as `rho2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub d2: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rho2: f64,
    pub mu_g: f64,
    pub tau_g2: f64,
}

impl Default for TrueParams {
    fn default() -> Self {
        TrueParams {
            alpha1: 20.0,
            alpha2: 20.0,
            d2: 0.33,
            beta: 20.0,
            gamma: 0.9,
            rho2: 0.1,
            mu_g: 0.0,
            tau_g2: 1.0,
        }
    }
}

/// How inter-probe gaps are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistanceSpec {
    /// Integer base-pair gaps `round(100 * exp(U(ln min_gap, ln max_gap)))`.
    LogUniform { min_gap: f64, max_gap: f64 },
    /// Equally spaced probes.
    Uniform,
    /// Explicit probe coordinates (length `p`).
    Positions { positions: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub schema: String,
    pub p: usize,
    pub n_treatments: usize,
    pub n_per_treatment: usize,
    pub sigma2_0: f64,
    pub eta_0: f64,
    pub true_params: TrueParams,
    pub tau_chi2: f64,
    pub read_depth_mean: f64,
    /// Proportions of the methylated, transit and demethylated states.
    pub baseline_levels: [f64; 3],
    /// Distance scale of the methylation chain.
    pub hmm_kappa: f64,
    /// Atoms in the truncated realization of `G`.
    pub truncation_l: usize,
    pub distances: DistanceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SimConfig {
    /// The low-noise, high-correlation scenario at full size.
    fn default() -> Self {
        SimConfig {
            schema: SIM_SCHEMA.to_string(),
            p: 500,
            n_treatments: 5,
            n_per_treatment: 4,
            sigma2_0: 0.36,
            eta_0: 0.004,
            true_params: TrueParams::default(),
            tau_chi2: 0.1225,
            read_depth_mean: 50.0,
            baseline_levels: [0.8, 0.5, 0.2],
            hmm_kappa: 0.004,
            truncation_l: 200,
            distances: DistanceSpec::LogUniform {
                min_gap: 1.0,
                max_gap: 10.0,
            },
            seed: None,
        }
    }
}

impl SimConfig {
    /// Franchise parameters used for generation.
    pub fn hyper_params(&self) -> HyperParams {
        let t = &self.true_params;
        HyperParams {
            rho1: 1.0 - t.rho2,
            gamma: t.gamma,
            eta: self.eta_0,
            alpha1: t.alpha1,
            alpha2: t.alpha2,
            d1: 0.0,
            d2: t.d2,
            beta: t.beta,
            mu_g: t.mu_g,
            tau_g2: t.tau_g2,
            sigma2: self.sigma2_0,
            tau_eps2: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.schema != SIM_SCHEMA {
            return fail(format!("unsupported schema {:?}, expected {SIM_SCHEMA:?}", self.schema));
        }
        if self.p == 0 {
            return fail("p must be at least 1".into());
        }
        if self.n_treatments < 2 {
            return fail("at least two treatments are required".into());
        }
        if self.n_per_treatment < 1 {
            return fail("n_per_treatment must be at least 1".into());
        }
        if !(self.sigma2_0 > 0.0) {
            return fail("sigma2_0 must be positive".into());
        }
        if !(self.eta_0 >= 0.0) {
            return fail("eta_0 must be non-negative".into());
        }
        if !(self.tau_chi2 > 0.0) || !(self.read_depth_mean > 0.0) || !(self.hmm_kappa > 0.0) {
            return fail("tau_chi2, read_depth_mean and hmm_kappa must be positive".into());
        }
        let [m, t, d] = self.baseline_levels;
        if !(0.0 < d && d < t && t < m && m < 1.0) {
            return fail("baseline levels must satisfy 0 < demethylated < transit < methylated < 1".into());
        }
        if self.truncation_l < 2 {
            return fail("truncation_l must be at least 2".into());
        }
        match &self.distances {
            DistanceSpec::LogUniform { min_gap, max_gap } => {
                if !(*min_gap > 0.0 && max_gap >= min_gap) {
                    return fail("log-uniform gaps need 0 < min_gap <= max_gap".into());
                }
            }
            DistanceSpec::Uniform => {}
            DistanceSpec::Positions { positions } => {
                if positions.len() != self.p {
                    return fail(format!("{} positions given for p = {}", positions.len(), self.p));
                }
                if positions.windows(2).any(|w| w[1] <= w[0]) {
                    return fail("positions must be strictly increasing".into());
                }
            }
        }
        let mut hp = self.hyper_params();
        // eta_0 is checked against the realized gaps during generation
        hp.eta = 0.0;
        hp.validate()
    }
}

/// Ground truth attached to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub s_true: Vec<Cuisine>,
    /// `p` vectors of `T` treatment effects.
    pub theta_true: Vec<Vec<f64>>,
    pub chi_true: Vec<f64>,
    /// Methylation state of each probe, in `1..=4`.
    pub h_true: Vec<u8>,
    pub hp_true: HyperParams,
}

impl SimTruth {
    pub fn differential(&self) -> Vec<bool> {
        self.s_true.iter().map(|s| s.is_differential()).collect()
    }
}

/// Transition matrix of the methylation chain for a gap `e`:
/// `exp(-e/kappa) I + (1 - exp(-e/kappa)) Q` with `Q` the cyclic shift.
pub fn hmm_transition(e: f64, kappa: f64) -> [[f64; N_METHYLATION_STATES]; N_METHYLATION_STATES] {
    let stay = (-e / kappa).exp();
    let mut m = [[0.0; N_METHYLATION_STATES]; N_METHYLATION_STATES];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] += stay;
        row[(i + 1) % N_METHYLATION_STATES] += 1.0 - stay;
    }
    m
}

/// Draws methylation states (labels `1..=4`) along the probes. The first
/// state comes from the uniform stationary distribution of the chain.
pub fn generate_methylation_states<R: Rng + ?Sized>(p: usize, distances: &[f64], kappa: f64, rng: &mut R) -> Vec<u8> {
    let mut states = Vec::with_capacity(p);
    if p == 0 {
        return states;
    }
    let mut h = rng.random_range(0..N_METHYLATION_STATES);
    states.push(h as u8 + 1);
    for &e in distances.iter().take(p - 1) {
        let stay = (-e / kappa).exp();
        if rng.random::<f64>() >= stay {
            h = (h + 1) % N_METHYLATION_STATES;
        }
        states.push(h as u8 + 1);
    }
    states
}

fn baseline_logit(h: u8, levels: &[f64; 3]) -> f64 {
    match h {
        1 => logit(levels[0]),
        3 => logit(levels[2]),
        _ => logit(levels[1]),
    }
}

/// Probe coordinates described by the distance specification.
pub fn generate_positions<R: Rng + ?Sized>(spec: &DistanceSpec, p: usize, rng: &mut R) -> Vec<u64> {
    match spec {
        DistanceSpec::Positions { positions } => positions.clone(),
        DistanceSpec::Uniform => (0..p as u64).map(|j| 1000 + 100 * j).collect(),
        DistanceSpec::LogUniform { min_gap, max_gap } => {
            let (lo, hi) = (min_gap.ln(), max_gap.ln());
            let mut pos = Vec::with_capacity(p);
            let mut x = 1000u64;
            pos.push(x);
            for _ in 1..p {
                let u = if hi > lo { rng.random_range(lo..hi) } else { lo };
                x += ((100.0 * u.exp()).round() as u64).max(1);
                pos.push(x);
            }
            pos
        }
    }
}

/// Generates a dataset and its ground truth from `cfg` using `rng`.
pub fn generate_dataset<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<(Dataset, SimTruth)> {
    cfg.validate()?;
    let p = cfg.p;
    let t = cfg.n_treatments;
    let n = t * cfg.n_per_treatment;
    let positions = generate_positions(&cfg.distances, p, rng);
    let distances = if p >= 2 { normalize_distances(&positions)? } else { Vec::new() };

    let h_true = generate_methylation_states(p, &distances, cfg.hmm_kappa, rng);
    let chi_sd = cfg.tau_chi2.sqrt();
    let chi_true: Vec<f64> = h_true
        .iter()
        .map(|&h| baseline_logit(h, &cfg.baseline_levels) + chi_sd * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();

    let hp = cfg.hyper_params();
    let (g, _) = BaseMeasureG::stick_breaking(hp.beta, hp.mu_g, hp.tau_g2, cfg.truncation_l, rng)?;
    let franchise = simulate_franchise(p, &distances, &hp, &g, t, rng)?;
    let theta_true = franchise.theta(&g);

    let depth = Poisson::new(cfg.read_depth_mean).map_err(|e| Error::Argument(e.to_string()))?;
    let depths: Vec<u64> = (0..p)
        .map(|_| loop {
            let d = depth.sample(rng) as u64;
            if d >= 1 {
                break d;
            }
        })
        .collect();

    let noise = Normal::new(0.0, cfg.sigma2_0.sqrt()).expect("positive variance");
    let treatments: Vec<usize> = (0..n).map(|i| i / cfg.n_per_treatment + 1).collect();
    let mut values = Vec::with_capacity(n * p);
    for &ti in &treatments {
        for j in 0..p {
            let z = chi_true[j] + theta_true[j][ti - 1] + noise.sample(rng);
            let reads = Binomial::new(depths[j], inv_logit(z))
                .map_err(|e| Error::Argument(e.to_string()))?
                .sample(rng);
            values.push(reads as f64 / depths[j] as f64);
        }
    }
    let dataset = Dataset::new(values, n, p, treatments, positions)?;
    let truth = SimTruth {
        s_true: franchise.cuisine.clone(),
        theta_true,
        chi_true,
        h_true,
        hp_true: hp,
    };
    Ok((dataset, truth))
}

/// Convenience wrapper seeding a ChaCha generator.
pub fn generate_dataset_seeded(cfg: &SimConfig, seed: u64) -> Result<(Dataset, SimTruth)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    generate_dataset(cfg, &mut rng)
}

/// Share of latent logit variance explained by treatment effects:
/// `var(theta) / (var(theta) + sigma2_0)` over all probe-treatment cells.
pub fn signal_to_noise(truth: &SimTruth) -> f64 {
    let all: Vec<f64> = truth.theta_true.iter().flatten().copied().collect();
    let v = crate::math::sample_variance(&all);
    v / (v + truth.hp_true.sigma2)
}

/// Lag-1 autocorrelation of the binary differential indicators.
pub fn lag1_autocorrelation(states: &[Cuisine]) -> f64 {
    let x: Vec<f64> = states.iter().map(|s| s.index() as f64).collect();
    if x.len() < 2 {
        return 0.0;
    }
    let m = crate::math::mean(&x);
    let denom: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    if denom == 0.0 {
        return 0.0;
    }
    x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / denom
}
