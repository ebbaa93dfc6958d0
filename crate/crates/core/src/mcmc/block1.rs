//! Block 1: joint Metropolis-Hastings update of `(g_j, s_j, v_j, theta_j)`
//! for each probe in genomic order.
//!
//! The proposal is the exact full conditional of probe `j` given every other
//! customer, except that it leaves out the factor `F_{j+1}(g_{j+1})` by which
//! probe `j`'s cuisine influences its right neighbour. The acceptance ratio
//! therefore only involves that factor, and the last probe always accepts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LogitData;
use crate::error::{Error, Result};
use crate::franchise::{
    sample_not_all_equal, section_index, BaseMeasureG, Cuisine, Dish, FranchiseState, Restaurant, Seat,
};
use crate::math::{log_diff_exp, log_sum_exp, sample_log_categorical};

use super::state::{affinity_ratios, ln_cuisine, ln_restaurant, residual_sums, ChainState};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Block1Stats {
    /// Moves that went through an accept/reject step (all but the last probe).
    pub tested: usize,
    pub accepted_tested: usize,
    /// Total moves including the always-accepted last probe.
    pub moves: usize,
    pub accepted: usize,
}

impl Block1Stats {
    pub fn merge(&mut self, other: Block1Stats) {
        self.tested += other.tested;
        self.accepted_tested += other.accepted_tested;
        self.moves += other.moves;
        self.accepted += other.accepted;
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.moves == 0 {
            return 1.0;
        }
        self.accepted as f64 / self.moves as f64
    }
}

/// One candidate seating of the current probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalOption {
    pub g: Restaurant,
    pub s: Cuisine,
    /// Existing table index, or `None` for a new table.
    pub table: Option<usize>,
    pub log_weight: f64,
}

/// Frozen quantities for one probe's proposal.
pub(crate) struct ProbeLikelihood {
    /// `ell[t * L + l]`: log-likelihood of treatment `t` effects at atom `l`
    /// (up to terms common to all atoms).
    pub ell: Vec<f64>,
    pub n_treatments: usize,
    pub n_atoms: usize,
}

impl ProbeLikelihood {
    pub fn new(resid: &[f64], sizes: &[usize], g: &BaseMeasureG, sigma2: f64) -> Self {
        let t = resid.len();
        let l = g.len();
        let mut ell = vec![0.0; t * l];
        let inv = 1.0 / (2.0 * sigma2);
        for k in 0..t {
            let nk = sizes[k] as f64;
            for (a, &zeta) in g.atoms.iter().enumerate() {
                ell[k * l + a] = (2.0 * zeta * resid[k] - nk * zeta * zeta) * inv;
            }
        }
        ProbeLikelihood {
            ell,
            n_treatments: t,
            n_atoms: l,
        }
    }

    pub fn dish(&self, dish: &Dish) -> f64 {
        dish.0
            .iter()
            .enumerate()
            .map(|(k, &a)| self.ell[k * self.n_atoms + a as usize])
            .sum()
    }

    /// Log weights `ln w_l + sum_t ell_t(l)` of a constant dish at atom `l`.
    pub fn constant_weights(&self, ln_w: &[f64]) -> Vec<f64> {
        (0..self.n_atoms)
            .map(|a| ln_w[a] + (0..self.n_treatments).map(|k| self.ell[k * self.n_atoms + a]).sum::<f64>())
            .collect()
    }

    /// Log weights `ln w_l + ell_t(l)` for every treatment, row-major.
    pub fn element_weights(&self, ln_w: &[f64]) -> Vec<f64> {
        let mut out = self.ell.clone();
        for k in 0..self.n_treatments {
            for a in 0..self.n_atoms {
                out[k * self.n_atoms + a] += ln_w[a];
            }
        }
        out
    }

    /// Log marginal likelihood of a fresh dish from each menu.
    pub fn new_dish_marginals(&self, ln_w: &[f64], ln_norm2: f64) -> [f64; 2] {
        let constant = self.constant_weights(ln_w);
        let m1 = log_sum_exp(&constant);
        let elem = self.element_weights(ln_w);
        let product: f64 = (0..self.n_treatments)
            .map(|k| log_sum_exp(&elem[k * self.n_atoms..(k + 1) * self.n_atoms]))
            .sum();
        // all-equal part: sum_l w_l^T exp(sum_t ell_t(l))
        let t_minus_1 = (self.n_treatments - 1) as f64;
        let equal: Vec<f64> = constant.iter().zip(ln_w).map(|(c, w)| c + t_minus_1 * w).collect();
        let eq = log_sum_exp(&equal);
        let m2 = if eq >= product || !ln_norm2.is_finite() {
            f64::NEG_INFINITY
        } else {
            log_diff_exp(product, eq) - ln_norm2
        };
        [m1, m2]
    }
}

/// Log weights of every seating of customer `j`, who must be unseated.
/// `ln_f[g]` is `ln F_j(g)` (or the first-customer probabilities).
pub(crate) fn proposal_options(
    f: &FranchiseState,
    lik: &ProbeLikelihood,
    ln_f: [f64; 2],
    new_marginals: [f64; 2],
    hp: &crate::franchise::HyperParams,
) -> Vec<ProposalOption> {
    let mut out = Vec::new();
    for g in Restaurant::ALL {
        for s in Cuisine::ALL {
            let base = ln_f[g.index()] + ln_cuisine(s, g, hp.rho1, hp.gamma);
            let tables = &f.sections[section_index(g, s)];
            let (alpha, d) = (hp.alpha(s), hp.discount(s));
            let total: usize = tables.iter().map(|t| t.count).sum();
            let ln_norm = (total as f64 + alpha).ln();
            for (k, table) in tables.iter().enumerate() {
                out.push(ProposalOption {
                    g,
                    s,
                    table: Some(k),
                    log_weight: base + (table.count as f64 - d).ln() - ln_norm + lik.dish(&table.dish),
                });
            }
            out.push(ProposalOption {
                g,
                s,
                table: None,
                log_weight: base + (alpha + tables.len() as f64 * d).ln() - ln_norm + new_marginals[s.index()],
            });
        }
    }
    out
}

/// Draws a fresh dish for menu `s` from its posterior given the probe's data.
pub(crate) fn sample_new_dish<R: Rng + ?Sized>(
    s: Cuisine,
    lik: &ProbeLikelihood,
    ln_w: &[f64],
    rng: &mut R,
) -> Option<Dish> {
    match s {
        Cuisine::NonDifferential => {
            let a = sample_log_categorical(&lik.constant_weights(ln_w), rng)?;
            Some(Dish::constant(a as u32, lik.n_treatments))
        }
        Cuisine::Differential => {
            sample_not_all_equal(&lik.element_weights(ln_w), lik.n_treatments, lik.n_atoms, rng).map(Dish)
        }
    }
}

/// Runs one left-to-right sweep over all probes.
pub fn block1_update<R: Rng + ?Sized>(state: &mut ChainState, data: &LogitData, rng: &mut R) -> Result<Block1Stats> {
    let p = data.p;
    let t = data.n_treatments;
    let sizes = data.treatment_sizes();
    let resid = residual_sums(data, &state.xi, &state.chi);
    let ln_w = state.g.ln_weights();
    let ln_norm2 = (-state.g.all_equal_mass(t)).ln_1p();
    let hp = state.hp.clone();
    let ratios = affinity_ratios(&data.distances, hp.eta, hp.gamma);
    let mut stats = Block1Stats::default();

    for j in 0..p {
        let lik = ProbeLikelihood::new(&resid[j * t..(j + 1) * t], &sizes, &state.g, hp.sigma2);
        let f = &mut state.franchise;
        let (old_g, old_s, old_k) = (f.restaurant[j], f.cuisine[j], f.table[j]);
        let emptied = f.unseat(j);

        let ln_f = if j == 0 {
            [hp.rho1.ln(), (1.0 - hp.rho1).ln()]
        } else {
            let s_prev = f.cuisine[j - 1];
            [
                ln_restaurant(Restaurant::One, s_prev, ratios[j - 1], hp.rho1),
                ln_restaurant(Restaurant::Two, s_prev, ratios[j - 1], hp.rho1),
            ]
        };
        let marginals = lik.new_dish_marginals(&ln_w, ln_norm2);
        let options = proposal_options(f, &lik, ln_f, marginals, &hp);
        let weights: Vec<f64> = options.iter().map(|o| o.log_weight).collect();
        let pick = sample_log_categorical(&weights, rng).ok_or_else(|| Error::Sampler {
            iteration: state.iteration,
            message: format!("probe {j}: proposal weights are not finite"),
        })?;
        let choice = options[pick];

        let log_accept = if j + 1 < p {
            let g_next = f.restaurant[j + 1];
            ln_restaurant(g_next, choice.s, ratios[j], hp.rho1) - ln_restaurant(g_next, old_s, ratios[j], hp.rho1)
        } else {
            0.0
        };
        let accept = log_accept >= 0.0 || rng.random::<f64>().ln() < log_accept;
        if j + 1 < p {
            stats.tested += 1;
            stats.accepted_tested += accept as usize;
        }
        stats.moves += 1;
        stats.accepted += accept as usize;

        if accept {
            let seat = match choice.table {
                Some(k) => Seat::Existing(k),
                None => {
                    let dish = sample_new_dish(choice.s, &lik, &ln_w, rng).ok_or_else(|| Error::Sampler {
                        iteration: state.iteration,
                        message: format!("probe {j}: no dish with positive posterior mass"),
                    })?;
                    Seat::New(dish)
                }
            };
            f.seat(j, choice.g, choice.s, seat);
        } else {
            let seat = match emptied {
                Some(dish) => Seat::New(dish),
                None => Seat::Existing(old_k),
            };
            f.seat(j, old_g, old_s, seat);
        }
    }
    state.franchise.canonicalize();
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::config::{ChiModel, McmcConfig};
    use crate::mcmc::init::initialize;
    use crate::simgen::{generate_dataset_seeded, SimConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn small_state() -> (ChainState, LogitData) {
        let cfg = SimConfig {
            p: 30,
            n_treatments: 3,
            n_per_treatment: 3,
            ..SimConfig::default()
        };
        let (ds, _) = generate_dataset_seeded(&cfg, 3).unwrap();
        let data = crate::data::logit_transform(&ds, 0.01).unwrap();
        let mcfg = McmcConfig {
            chi_model: ChiModel::IidNormal,
            truncation_l: 12,
            ..McmcConfig::default()
        };
        let st = initialize(&data, &mcfg, &mut ChaCha12Rng::seed_from_u64(1)).unwrap();
        (st, data)
    }

    #[test]
    fn proposal_masses_are_normalized() {
        let (mut st, data) = small_state();
        let t = data.n_treatments;
        let resid = residual_sums(&data, &st.xi, &st.chi);
        let ln_w = st.g.ln_weights();
        let ln_norm2 = (-st.g.all_equal_mass(t)).ln_1p();
        for j in [0, 7, 29] {
            let lik = ProbeLikelihood::new(&resid[j * t..(j + 1) * t], &data.treatment_sizes(), &st.g, st.hp.sigma2);
            let mut f = st.franchise.clone();
            f.unseat(j);
            let m = lik.new_dish_marginals(&ln_w, ln_norm2);
            let opts = proposal_options(&f, &lik, [0.8_f64.ln(), 0.2_f64.ln()], m, &st.hp);
            let w: Vec<f64> = opts.iter().map(|o| o.log_weight).collect();
            let norm = log_sum_exp(&w);
            let total: f64 = w.iter().map(|x| (x - norm).exp()).sum();
            assert!((total.ln()).abs() < 1e-8);
            assert_eq!(opts.iter().filter(|o| o.table.is_none()).count(), 4);
        }
        let stats = block1_update(&mut st, &data, &mut ChaCha12Rng::seed_from_u64(2)).unwrap();
        assert_eq!(stats.moves, 30);
        assert_eq!(stats.tested, 29);
        st.check(&data).unwrap();
    }

    #[test]
    fn differential_marginal_matches_enumeration() {
        // G with 3 atoms, T = 2: sum over all unequal pairs of w_a w_b exp(ell)
        let g = BaseMeasureG::new(vec![-1.0, 0.5, 2.0], vec![0.2, 0.5, 0.3]).unwrap();
        let lik = ProbeLikelihood::new(&[0.7, -1.2], &[2, 3], &g, 0.8);
        let ln_w = g.ln_weights();
        let norm2 = (1.0 - g.all_equal_mass(2)).ln();
        let m = lik.new_dish_marginals(&ln_w, norm2);
        let mut direct = 0.0;
        let mut constant = 0.0;
        for a in 0..3 {
            constant += g.weights[a] * (lik.ell[a] + lik.ell[3 + a]).exp();
            for b in 0..3 {
                if a != b {
                    direct += g.weights[a] * g.weights[b] * (lik.ell[a] + lik.ell[3 + b]).exp();
                }
            }
        }
        assert!((m[1] - (direct.ln() - norm2)).abs() < 1e-12);
        assert!((m[0] - constant.ln()).abs() < 1e-12);
    }

    #[test]
    fn last_probe_always_accepts() {
        let (mut st, data) = small_state();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..20 {
            let stats = block1_update(&mut st, &data, &mut rng).unwrap();
            assert_eq!(stats.accepted - stats.accepted_tested, 1);
        }
        st.check(&data).unwrap();
    }
}
