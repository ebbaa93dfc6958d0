//! Block 3: weights of `G`, global hyperparameters, noise and nuisance
//! effects.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LogitData;
use crate::error::{Error, Result};
use crate::franchise::{BaseMeasureG, Cuisine};
use crate::math::{inv_logit, log_sum_exp, logit, normal_ln_pdf, sample_dirichlet, sample_gamma, sample_inv_gamma};

use super::config::{ChiModel, McmcConfig, XiModel};
use super::state::{cuisine_seating_log_lik, sequence_log_lik, transition_log_lik, ChainState, CHI_MIXTURE_CENTRES};

/// Accepted / attempted counts of one Metropolis-Hastings move.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveCount {
    pub accepted: usize,
    pub attempted: usize,
}

impl MoveCount {
    fn record(&mut self, accepted: bool) {
        self.attempted += 1;
        self.accepted += accepted as usize;
    }

    pub fn rate(&self) -> f64 {
        if self.attempted == 0 {
            return f64::NAN;
        }
        self.accepted as f64 / self.attempted as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Block3Stats {
    pub sticks: MoveCount,
    pub rho1: MoveCount,
    pub gamma: MoveCount,
    pub eta_jump: MoveCount,
    pub eta_walk: MoveCount,
    pub d2_jump: MoveCount,
    pub d2_walk: MoveCount,
    pub alpha1: MoveCount,
    pub alpha2: MoveCount,
}

impl Block3Stats {
    pub fn merge(&mut self, o: &Block3Stats) {
        for (a, b) in self.fields_mut().into_iter().zip(o.fields()) {
            a.accepted += b.accepted;
            a.attempted += b.attempted;
        }
    }

    fn fields(&self) -> [MoveCount; 9] {
        [
            self.sticks,
            self.rho1,
            self.gamma,
            self.eta_jump,
            self.eta_walk,
            self.d2_jump,
            self.d2_walk,
            self.alpha1,
            self.alpha2,
        ]
    }

    fn fields_mut(&mut self) -> [&mut MoveCount; 9] {
        [
            &mut self.sticks,
            &mut self.rho1,
            &mut self.gamma,
            &mut self.eta_jump,
            &mut self.eta_walk,
            &mut self.d2_jump,
            &mut self.d2_walk,
            &mut self.alpha1,
            &mut self.alpha2,
        ]
    }
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Residuals `z_ij - xi_i - chi_j - theta_{j, t_i}`, row-major `n x p`.
pub fn residuals(data: &LogitData, state: &ChainState) -> Vec<f64> {
    let theta = state.theta_matrix();
    let t = data.n_treatments;
    let mut out = Vec::with_capacity(data.n * data.p);
    for i in 0..data.n {
        let ti = data.treatment[i];
        for j in 0..data.p {
            out.push(data.z(i, j) - state.xi[i] - state.chi[j] - theta[j * t + ti]);
        }
    }
    out
}

/// Independence MH on the sticks from their conjugate posterior ignoring the
/// differential-menu normalizer, which enters the acceptance ratio.
pub fn update_sticks<R: Rng + ?Sized>(state: &mut ChainState, rng: &mut R) -> Result<bool> {
    let l = state.g.len();
    let t = state.n_treatments();
    let mut counts = vec![0.0; l];
    let mut k2 = 0usize;
    for sec in &state.franchise.sections {
        for table in sec {
            match table.dish.cuisine() {
                Cuisine::NonDifferential => counts[table.dish.0[0] as usize] += 1.0,
                Cuisine::Differential => {
                    k2 += 1;
                    for &a in &table.dish.0 {
                        counts[a as usize] += 1.0;
                    }
                }
            }
        }
    }
    let mut tail: f64 = counts.iter().sum();
    let mut sticks = Vec::with_capacity(l);
    for &c in &counts[..l - 1] {
        tail -= c;
        let b = Beta::new(1.0 + c, state.hp.beta + tail).map_err(|e| Error::Sampler {
            iteration: state.iteration,
            message: format!("stick posterior: {e}"),
        })?;
        sticks.push(b.sample(rng).clamp(1e-300, 1.0 - 1e-16));
    }
    sticks.push(1.0);
    let mut proposal = BaseMeasureG {
        atoms: state.g.atoms.clone(),
        weights: BaseMeasureG::weights_from_sticks(&sticks),
    };
    proposal.repair_weights();
    let log_ratio = if k2 == 0 {
        0.0
    } else {
        k2 as f64 * ((-state.g.all_equal_mass(t)).ln_1p() - (-proposal.all_equal_mass(t)).ln_1p())
    };
    let ok = log_ratio.is_finite() && accept(log_ratio, rng);
    if ok {
        state.g = proposal;
        state.sticks = sticks;
    }
    Ok(ok)
}

/// Gibbs update of the stick concentration given the sticks.
pub fn update_beta<R: Rng + ?Sized>(state: &mut ChainState, cfg: &McmcConfig, rng: &mut R) {
    let l = state.sticks.len();
    let log_tail: f64 = state.sticks[..l - 1].iter().map(|v| (-v).ln_1p()).sum();
    let prior = cfg.priors.beta;
    state.hp.beta = sample_gamma(prior.shape + (l - 1) as f64, prior.rate - log_tail, rng);
}

/// Normal-inverse-gamma update of the base distribution from the atoms.
pub fn update_base<R: Rng + ?Sized>(state: &mut ChainState, cfg: &McmcConfig, rng: &mut R) {
    let prior = cfg.priors.g0;
    let atoms = &state.g.atoms;
    let l = atoms.len() as f64;
    let mean = crate::math::mean(atoms);
    let ss: f64 = atoms.iter().map(|a| (a - mean) * (a - mean)).sum();
    let kappa = prior.kappa + l;
    let mu_n = (prior.kappa * prior.mean + l * mean) / kappa;
    let shape = prior.shape + l / 2.0;
    let rate = prior.rate + 0.5 * ss + prior.kappa * l * (mean - prior.mean).powi(2) / (2.0 * kappa);
    let tau2 = sample_inv_gamma(shape, rate, rng);
    state.hp.tau_g2 = tau2;
    state.hp.mu_g = mu_n + normal(rng) * (tau2 / kappa).sqrt();
}

pub fn update_sigma2<R: Rng + ?Sized>(state: &mut ChainState, data: &LogitData, cfg: &McmcConfig, rng: &mut R) {
    let ss: f64 = residuals(data, state).iter().map(|r| r * r).sum();
    let prior = cfg.priors.sigma2;
    let mut rate = prior.rate + 0.5 * ss;
    if let Some(f) = cfg.sigma2_rate_fault {
        rate *= f;
    }
    state.hp.sigma2 = sample_inv_gamma(prior.shape + (data.n * data.p) as f64 / 2.0, rate, rng);
}

/// Per-subject sums over probes of `z_ij - chi_j - theta_{j, t_i}`.
fn subject_sums(data: &LogitData, state: &ChainState) -> Vec<f64> {
    let r = residuals(data, state);
    (0..data.n)
        .map(|i| r[i * data.p..(i + 1) * data.p].iter().sum::<f64>() + data.p as f64 * state.xi[i])
        .collect()
}

pub fn update_xi<R: Rng + ?Sized>(state: &mut ChainState, data: &LogitData, cfg: &McmcConfig, rng: &mut R) {
    let sums = subject_sums(data, state);
    let s2 = state.hp.sigma2;
    let tau2 = state.hp.tau_eps2;
    let p = data.p as f64;
    let prior = cfg.priors.tau_eps2;
    match cfg.xi_model {
        XiModel::IidNormal => {
            let prec = 1.0 / tau2 + p / s2;
            for (x, s) in state.xi.iter_mut().zip(&sums) {
                *x = s / s2 / prec + normal(rng) / prec.sqrt();
            }
            let ss: f64 = state.xi.iter().map(|x| x * x).sum();
            state.hp.tau_eps2 = sample_inv_gamma(prior.shape + data.n as f64 / 2.0, prior.rate + 0.5 * ss, rng);
        }
        XiModel::DpNormal => {
            let clusters = state.xi_clusters.get_or_insert_with(|| crate::mcmc::state::XiClusters {
                labels: vec![0; data.n],
                values: vec![0.0],
            });
            let mut sizes = vec![0usize; clusters.values.len()];
            for &c in &clusters.labels {
                sizes[c] += 1;
            }
            let prec_new = 1.0 / tau2 + p / s2;
            for i in 0..data.n {
                let old = clusters.labels[i];
                sizes[old] -= 1;
                let b = sums[i] / s2;
                let mut w: Vec<f64> = clusters
                    .values
                    .iter()
                    .zip(&sizes)
                    .map(|(&v, &n)| {
                        if n == 0 {
                            f64::NEG_INFINITY
                        } else {
                            (n as f64).ln() + v * b - p * v * v / (2.0 * s2)
                        }
                    })
                    .collect();
                w.push(cfg.xi_dp_mass.ln() - 0.5 * (tau2 * prec_new).ln() + b * b / (2.0 * prec_new));
                let pick = crate::math::sample_log_categorical(&w, rng).unwrap_or(old);
                let label = if pick == clusters.values.len() {
                    let v = b / prec_new + normal(rng) / prec_new.sqrt();
                    match sizes.iter().position(|&n| n == 0) {
                        Some(free) => {
                            clusters.values[free] = v;
                            free
                        }
                        None => {
                            clusters.values.push(v);
                            sizes.push(0);
                            clusters.values.len() - 1
                        }
                    }
                } else {
                    pick
                };
                sizes[label] += 1;
                clusters.labels[i] = label;
            }
            // drop empty clusters, then refresh the cluster values
            let mut remap = vec![usize::MAX; sizes.len()];
            let mut values = Vec::new();
            let mut counts = Vec::new();
            for (c, &n) in sizes.iter().enumerate() {
                if n > 0 {
                    remap[c] = values.len();
                    values.push(clusters.values[c]);
                    counts.push(n);
                }
            }
            let mut totals = vec![0.0; values.len()];
            for (i, l) in clusters.labels.iter_mut().enumerate() {
                *l = remap[*l];
                totals[*l] += sums[i];
            }
            for (c, v) in values.iter_mut().enumerate() {
                let prec = 1.0 / tau2 + counts[c] as f64 * p / s2;
                *v = totals[c] / s2 / prec + normal(rng) / prec.sqrt();
            }
            for (x, &l) in state.xi.iter_mut().zip(&clusters.labels) {
                *x = values[l];
            }
            let ss: f64 = values.iter().map(|v| v * v).sum();
            state.hp.tau_eps2 =
                sample_inv_gamma(prior.shape + values.len() as f64 / 2.0, prior.rate + 0.5 * ss, rng);
            clusters.values = values;
        }
    }
}

/// Per-probe sums over subjects of `z_ij - xi_i - theta_{j, t_i}`.
fn probe_sums(data: &LogitData, state: &ChainState) -> Vec<f64> {
    let r = residuals(data, state);
    let mut out: Vec<f64> = state.chi.iter().map(|c| c * data.n as f64).collect();
    for i in 0..data.n {
        for (o, v) in out.iter_mut().zip(&r[i * data.p..(i + 1) * data.p]) {
            *o += v;
        }
    }
    out
}

pub fn update_chi<R: Rng + ?Sized>(state: &mut ChainState, data: &LogitData, cfg: &McmcConfig, rng: &mut R) {
    let s2 = state.hp.sigma2;
    let n = data.n as f64;
    match cfg.chi_model {
        ChiModel::None => {}
        ChiModel::IidNormal => {
            let sums = probe_sums(data, state);
            let prec = 1.0 / state.tau_chi2 + n / s2;
            for (c, s) in state.chi.iter_mut().zip(&sums) {
                *c = s / s2 / prec + normal(rng) / prec.sqrt();
            }
            let ss: f64 = state.chi.iter().map(|c| c * c).sum();
            let prior = cfg.priors.tau_chi2;
            state.tau_chi2 = sample_inv_gamma(prior.shape + data.p as f64 / 2.0, prior.rate + 0.5 * ss, rng);
        }
        ChiModel::FiniteMixture3 => {
            let sums = probe_sums(data, state);
            let p = data.p;
            let mix = state.chi_mixture.get_or_insert_with(|| crate::mcmc::state::ChiMixture {
                weights: [1.0 / 3.0; 3],
                means: CHI_MIXTURE_CENTRES,
                vars: [0.25; 3],
                labels: vec![1; p],
            });
            for j in 0..p {
                // label from the marginal over chi_j
                let b = sums[j] / s2;
                let w: Vec<f64> = (0..3)
                    .map(|k| {
                        let prec = 1.0 / mix.vars[k] + n / s2;
                        let m = (mix.means[k] / mix.vars[k] + b) / prec;
                        mix.weights[k].ln() - 0.5 * (mix.vars[k] * prec).ln() + 0.5 * m * m * prec
                            - mix.means[k] * mix.means[k] / (2.0 * mix.vars[k])
                    })
                    .collect();
                let k = crate::math::sample_log_categorical(&w, rng).unwrap_or(mix.labels[j] as usize);
                mix.labels[j] = k as u8;
                let prec = 1.0 / mix.vars[k] + n / s2;
                let m = (mix.means[k] / mix.vars[k] + b) / prec;
                state.chi[j] = m + normal(rng) / prec.sqrt();
            }
            let mut counts = [0.0; 3];
            let mut totals = [0.0; 3];
            for (c, &k) in state.chi.iter().zip(&mix.labels) {
                counts[k as usize] += 1.0;
                totals[k as usize] += c;
            }
            for k in 0..3 {
                let prec = 1.0 + counts[k] / mix.vars[k];
                let m = (CHI_MIXTURE_CENTRES[k] + totals[k] / mix.vars[k]) / prec;
                mix.means[k] = m + normal(rng) / prec.sqrt();
            }
            let mut ss = [0.0; 3];
            for (c, &k) in state.chi.iter().zip(&mix.labels) {
                ss[k as usize] += (c - mix.means[k as usize]).powi(2);
            }
            for k in 0..3 {
                mix.vars[k] = sample_inv_gamma(3.0 + counts[k] / 2.0, 0.5 + 0.5 * ss[k], rng);
            }
            let w = sample_dirichlet(&[1.0 + counts[0], 1.0 + counts[1], 1.0 + counts[2]], rng);
            mix.weights = [w[0], w[1], w[2]];
        }
    }
}

/// Log prior of `chi` under the current nuisance model, used by tests.
pub fn chi_log_prior(state: &ChainState, model: ChiModel) -> f64 {
    match model {
        ChiModel::None => 0.0,
        ChiModel::IidNormal => state.chi.iter().map(|&c| normal_ln_pdf(c, 0.0, state.tau_chi2)).sum(),
        ChiModel::FiniteMixture3 => {
            let Some(mix) = &state.chi_mixture else { return f64::NAN };
            state
                .chi
                .iter()
                .map(|&c| {
                    let w: Vec<f64> = (0..3)
                        .map(|k| mix.weights[k].ln() + normal_ln_pdf(c, mix.means[k], mix.vars[k]))
                        .collect();
                    log_sum_exp(&w)
                })
                .sum()
        }
    }
}

/// Random walk on `logit(2 rho1 - 1)` under a uniform prior on `(0.5, 1)`.
pub fn update_rho1<R: Rng + ?Sized>(state: &mut ChainState, data: &LogitData, cfg: &McmcConfig, rng: &mut R) -> bool {
    let hp = &state.hp;
    let f = &state.franchise;
    let d = &data.distances;
    let x = 2.0 * hp.rho1 - 1.0;
    let x_new = inv_logit(logit(x) + cfg.proposals.rho1 * normal(rng));
    let rho_new = (1.0 + x_new) / 2.0;
    if !(rho_new > 0.5 && rho_new < 1.0) {
        return false;
    }
    let log_ratio = sequence_log_lik(f, d, rho_new, hp.gamma, hp.eta) - sequence_log_lik(f, d, hp.rho1, hp.gamma, hp.eta)
        + (x_new * (1.0 - x_new)).ln()
        - (x * (1.0 - x)).ln();
    let ok = log_ratio.is_finite() && accept(log_ratio, rng);
    if ok {
        state.hp.rho1 = rho_new;
    }
    ok
}

/// Random walk on `logit(gamma)`; `eta` keeps its relative slab position.
pub fn update_gamma<R: Rng + ?Sized>(state: &mut ChainState, data: &LogitData, cfg: &McmcConfig, rng: &mut R) -> bool {
    let d = &data.distances;
    let g = state.hp.gamma;
    let g_new = inv_logit(logit(g) + cfg.proposals.gamma * normal(rng));
    if !(g_new > 0.0 && g_new < 1.0) {
        return false;
    }
    let eta_new = if state.eta_in_slab {
        state.eta_u * crate::franchise::eta_upper_bound(g_new, super::state::min_gap(d))
    } else {
        0.0
    };
    let (f, hp) = (&state.franchise, &state.hp);
    let log_ratio = sequence_log_lik(f, d, hp.rho1, g_new, eta_new) - sequence_log_lik(f, d, hp.rho1, hp.gamma, hp.eta)
        + (g_new * (1.0 - g_new)).ln()
        - (g * (1.0 - g)).ln();
    let ok = log_ratio.is_finite() && accept(log_ratio, rng);
    if ok {
        state.hp.gamma = g_new;
        state.sync_eta(d);
    }
    ok
}

/// Spike/slab jump for `eta` followed by a random walk on its slab position.
pub fn update_eta<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &LogitData,
    cfg: &McmcConfig,
    rng: &mut R,
) -> (bool, Option<bool>) {
    let d = &data.distances;
    let eta_max = state.eta_max(d);
    let ell = |state: &ChainState, eta: f64| {
        transition_log_lik(&state.franchise, d, state.hp.rho1, state.hp.gamma, eta)
    };
    let jumped = if state.eta_in_slab {
        let log_ratio = ell(state, 0.0) - ell(state, state.hp.eta);
        let ok = accept(log_ratio, rng);
        if ok {
            state.eta_in_slab = false;
        }
        ok
    } else {
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let log_ratio = ell(state, u * eta_max) - ell(state, 0.0);
        let ok = log_ratio.is_finite() && accept(log_ratio, rng);
        if ok {
            state.eta_in_slab = true;
            state.eta_u = u;
        }
        ok
    };
    state.sync_eta(d);
    if !state.eta_in_slab {
        return (jumped, None);
    }
    let u = state.eta_u;
    let u_new = inv_logit(logit(u) + cfg.proposals.eta * normal(rng));
    if !(u_new > 0.0 && u_new < 1.0) {
        return (jumped, Some(false));
    }
    let log_ratio = ell(state, u_new * eta_max) - ell(state, state.hp.eta) + (u_new * (1.0 - u_new)).ln()
        - (u * (1.0 - u)).ln();
    let ok = log_ratio.is_finite() && accept(log_ratio, rng);
    if ok {
        state.eta_u = u_new;
        state.sync_eta(d);
    }
    (jumped, Some(ok))
}

/// Spike/slab jump for the differential discount and a random walk inside
/// the slab.
pub fn update_d2<R: Rng + ?Sized>(state: &mut ChainState, cfg: &McmcConfig, rng: &mut R) -> (bool, Option<bool>) {
    let a2 = state.hp.alpha2;
    let ell = |state: &ChainState, d2: f64| cuisine_seating_log_lik(&state.franchise, Cuisine::Differential, a2, d2);
    let jumped = if state.d2_in_slab {
        let ok = accept(ell(state, 0.0) - ell(state, state.hp.d2), rng);
        if ok {
            state.d2_in_slab = false;
            state.hp.d2 = 0.0;
        }
        ok
    } else {
        let v: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let log_ratio = ell(state, v) - ell(state, 0.0);
        let ok = log_ratio.is_finite() && accept(log_ratio, rng);
        if ok {
            state.d2_in_slab = true;
            state.hp.d2 = v;
        }
        ok
    };
    if !state.d2_in_slab {
        return (jumped, None);
    }
    let d = state.hp.d2;
    let d_new = inv_logit(logit(d) + cfg.proposals.d2 * normal(rng));
    if !(d_new > 0.0 && d_new < 1.0) {
        return (jumped, Some(false));
    }
    let log_ratio = ell(state, d_new) - ell(state, d) + (d_new * (1.0 - d_new)).ln() - (d * (1.0 - d)).ln();
    let ok = log_ratio.is_finite() && accept(log_ratio, rng);
    if ok {
        state.hp.d2 = d_new;
    }
    (jumped, Some(ok))
}

/// Log random walk on the mass of cuisine `s`.
pub fn update_alpha<R: Rng + ?Sized>(state: &mut ChainState, s: Cuisine, cfg: &McmcConfig, rng: &mut R) -> bool {
    let prior = match s {
        Cuisine::NonDifferential => cfg.priors.alpha1,
        Cuisine::Differential => cfg.priors.alpha2,
    };
    let d = state.hp.discount(s);
    let target = |a: f64| {
        prior.shape * a.ln() - prior.rate * a + cuisine_seating_log_lik(&state.franchise, s, a, d)
    };
    let a = state.hp.alpha(s);
    let a_new = a * (cfg.proposals.alpha * normal(rng)).exp();
    let log_ratio = target(a_new) - target(a);
    let ok = a_new > 0.0 && log_ratio.is_finite() && accept(log_ratio, rng);
    if ok {
        match s {
            Cuisine::NonDifferential => state.hp.alpha1 = a_new,
            Cuisine::Differential => state.hp.alpha2 = a_new,
        }
    }
    ok
}

/// Runs every block-3 update once in a fixed order.
pub fn block3_update<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &LogitData,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<Block3Stats> {
    let mut st = Block3Stats::default();
    let ok = update_sticks(state, rng)?;
    st.sticks.record(ok);
    update_beta(state, cfg, rng);
    update_base(state, cfg, rng);
    update_sigma2(state, data, cfg, rng);
    update_xi(state, data, cfg, rng);
    update_chi(state, data, cfg, rng);
    st.rho1.record(update_rho1(state, data, cfg, rng));
    st.gamma.record(update_gamma(state, data, cfg, rng));
    let (jump, walk) = update_eta(state, data, cfg, rng);
    st.eta_jump.record(jump);
    if let Some(w) = walk {
        st.eta_walk.record(w);
    }
    let (jump, walk) = update_d2(state, cfg, rng);
    st.d2_jump.record(jump);
    if let Some(w) = walk {
        st.d2_walk.record(w);
    }
    st.alpha1.record(update_alpha(state, Cuisine::NonDifferential, cfg, rng));
    st.alpha2.record(update_alpha(state, Cuisine::Differential, cfg, rng));

    let hp = &state.hp;
    let finite = [hp.sigma2, hp.beta, hp.mu_g, hp.tau_g2, hp.tau_eps2, hp.rho1, hp.gamma, hp.alpha1, hp.alpha2]
        .iter()
        .all(|v| v.is_finite())
        && state.xi.iter().chain(&state.chi).all(|v| v.is_finite());
    if !finite {
        return Err(Error::Sampler {
            iteration: state.iteration,
            message: format!("non-finite parameter after block 3: {hp:?}"),
        });
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::franchise::{Dish, FranchiseState, HyperParams, Restaurant, Seat};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn one_probe_state(n: usize) -> (ChainState, LogitData) {
        let t = 2;
        let treatment: Vec<usize> = (0..n).map(|i| i % t).collect();
        let z: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.6).collect();
        let data = LogitData::new(z, n, 1, treatment, vec![]).unwrap();
        let mut f = FranchiseState::empty(1, t);
        f.seat(0, Restaurant::One, Cuisine::NonDifferential, Seat::New(Dish(vec![1, 1])));
        let g = BaseMeasureG::new(vec![-0.5, 0.1, 0.7], vec![0.3, 0.4, 0.3]).unwrap();
        let st = ChainState {
            franchise: f,
            g,
            sticks: vec![0.3, 4.0 / 7.0, 1.0],
            xi: vec![0.0; n],
            chi: vec![0.0],
            tau_chi2: 1.0,
            chi_mixture: None,
            xi_clusters: None,
            hp: HyperParams::default(),
            eta_u: 0.5,
            eta_in_slab: false,
            d2_in_slab: true,
            iteration: 0,
        };
        (st, data)
    }

    #[test]
    fn sigma2_draws_match_inverse_gamma_quantiles() {
        let (mut st, data) = one_probe_state(40);
        let cfg = McmcConfig::default();
        let ss: f64 = residuals(&data, &st).iter().map(|r| r * r).sum();
        let shape = cfg.priors.sigma2.shape + 20.0;
        let rate = cfg.priors.sigma2.rate + 0.5 * ss;
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let mut draws: Vec<f64> = (0..20_000)
            .map(|_| {
                update_sigma2(&mut st, &data, &cfg, &mut rng);
                st.hp.sigma2
            })
            .collect();
        draws.sort_by(f64::total_cmp);
        use statrs::distribution::{ContinuousCDF, InverseGamma};
        let ig = InverseGamma::new(shape, rate).unwrap();
        for q in [0.05, 0.25, 0.5, 0.75, 0.95] {
            let emp = draws[(q * draws.len() as f64) as usize];
            let cdf = ig.cdf(emp);
            assert!((cdf - q).abs() < 0.015, "q {q}: cdf {cdf}");
        }
    }

    #[test]
    fn eta_spike_probability_is_half_without_transitions() {
        let (mut st, data) = one_probe_state(4);
        let cfg = McmcConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut zero = 0;
        let mut slab_positions = Vec::new();
        for _ in 0..20_000 {
            update_eta(&mut st, &data, &cfg, &mut rng);
            if st.hp.eta == 0.0 {
                zero += 1;
            } else {
                slab_positions.push(st.eta_u);
            }
        }
        let frac = zero as f64 / 20_000.0;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
        let m = crate::math::mean(&slab_positions);
        assert!((m - 0.5).abs() < 0.03, "{m}");
    }

    #[test]
    fn gamma_move_keeps_eta_valid() {
        let cfg_sim = crate::simgen::SimConfig {
            p: 40,
            n_treatments: 2,
            n_per_treatment: 2,
            ..crate::simgen::SimConfig::default()
        };
        let (ds, _) = crate::simgen::generate_dataset_seeded(&cfg_sim, 5).unwrap();
        let data = crate::data::logit_transform(&ds, 0.01).unwrap();
        let cfg = McmcConfig {
            truncation_l: 8,
            ..McmcConfig::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut st = crate::mcmc::init::initialize(&data, &cfg, &mut rng).unwrap();
        st.eta_in_slab = true;
        st.eta_u = 0.99;
        st.sync_eta(&data.distances);
        for _ in 0..500 {
            update_gamma(&mut st, &data, &cfg, &mut rng);
            update_eta(&mut st, &data, &cfg, &mut rng);
            assert!(st.hp.eta < st.eta_max(&data.distances) || st.hp.eta == 0.0);
            assert!(transition_log_lik(&st.franchise, &data.distances, st.hp.rho1, st.hp.gamma, st.hp.eta).is_finite());
        }
        st.check(&data).unwrap();
    }

    #[test]
    fn rho1_stays_in_support_and_beta_is_positive() {
        let (mut st, data) = one_probe_state(6);
        let cfg = McmcConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let _ = block3_update(&mut st, &data, &cfg, &mut rng).unwrap();
            assert!(st.hp.rho1 > 0.5 && st.hp.rho1 < 1.0);
            assert!(st.hp.beta > 0.0);
            st.g.validate().unwrap();
        }
    }

    #[test]
    fn rho1_prior_is_recovered_for_an_uninformative_sequence() {
        // one probe in restaurant 1 with a non-differential dish: the
        // target is rho1 * q1(rho1) on (0.5, 1); check its mean by quadrature
        let (mut st, data) = one_probe_state(2);
        let cfg = McmcConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let draws: Vec<f64> = (0..40_000)
            .map(|_| {
                update_rho1(&mut st, &data, &cfg, &mut rng);
                st.hp.rho1
            })
            .collect();
        let gamma = st.hp.gamma;
        let dens = |r: f64| r * crate::franchise::cuisine_one_prob(Restaurant::One, r, gamma);
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..10_000 {
            let r = 0.5 + 0.5 * (k as f64 + 0.5) / 10_000.0;
            num += r * dens(r);
            den += dens(r);
        }
        let m = crate::math::mean(&draws);
        assert!((m - num / den).abs() < 0.01, "{m} vs {}", num / den);
    }
}
