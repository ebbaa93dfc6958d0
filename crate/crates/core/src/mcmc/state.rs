//! Complete sampler state and likelihood pieces shared by the update blocks.

use serde::{Deserialize, Serialize};

use crate::data::LogitData;
use crate::error::{Error, Result};
use crate::franchise::{
    cuisine_one_prob, eta_upper_bound, log_eppf, restaurant_one_prob, section_index, BaseMeasureG, Cuisine,
    FranchiseState, HyperParams, Restaurant,
};
use crate::math::LN_2PI;

/// Prior centres of the three probe-effect components.
pub const CHI_MIXTURE_CENTRES: [f64; 3] = [-1.5, 0.0, 1.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiMixture {
    pub weights: [f64; 3],
    pub means: [f64; 3],
    pub vars: [f64; 3],
    /// Component of each probe.
    pub labels: Vec<u8>,
}

/// Dirichlet-process clustering of subject effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiClusters {
    pub labels: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub franchise: FranchiseState,
    pub g: BaseMeasureG,
    /// Stick proportions of `g` (the last one is 1).
    pub sticks: Vec<f64>,
    pub xi: Vec<f64>,
    pub chi: Vec<f64>,
    pub tau_chi2: f64,
    pub chi_mixture: Option<ChiMixture>,
    pub xi_clusters: Option<XiClusters>,
    pub hp: HyperParams,
    /// Position of `eta` inside its slab, `eta = eta_u * eta_max(gamma)`.
    pub eta_u: f64,
    pub eta_in_slab: bool,
    pub d2_in_slab: bool,
    pub iteration: usize,
}

/// Smallest gap used to bound the eta slab.
pub fn min_gap(distances: &[f64]) -> f64 {
    distances.iter().copied().fold(1.0, f64::min)
}

impl ChainState {
    pub fn n_treatments(&self) -> usize {
        self.franchise.n_treatments
    }

    /// Upper end of the eta slab for the current `gamma`.
    pub fn eta_max(&self, distances: &[f64]) -> f64 {
        eta_upper_bound(self.hp.gamma, min_gap(distances))
    }

    /// Recomputes `hp.eta` from the slab indicator and position.
    pub fn sync_eta(&mut self, distances: &[f64]) {
        self.hp.eta = if self.eta_in_slab {
            self.eta_u * self.eta_max(distances)
        } else {
            0.0
        };
    }

    /// Row-major `p x T` treatment effects.
    pub fn theta_matrix(&self) -> Vec<f64> {
        let t = self.n_treatments();
        let mut out = Vec::with_capacity(self.franchise.n_probes() * t);
        for j in 0..self.franchise.n_probes() {
            out.extend(self.franchise.dish(j).0.iter().map(|&a| self.g.atoms[a as usize]));
        }
        out
    }

    /// Checks franchise bookkeeping and parameter supports.
    pub fn check(&self, data: &LogitData) -> Result<()> {
        self.franchise.check_invariants()?;
        let hp = &self.hp;
        let ok = hp.rho1 > 0.5
            && hp.rho1 < 1.0
            && hp.gamma > 0.0
            && hp.gamma < 1.0
            && hp.sigma2 > 0.0
            && hp.tau_eps2 > 0.0
            && hp.tau_g2 > 0.0
            && (hp.d2 == 0.0) != self.d2_in_slab
            && hp.d2 < 1.0
            && (hp.eta == 0.0) != self.eta_in_slab
            && hp.eta < self.eta_max(&data.distances).max(f64::MIN_POSITIVE);
        if !ok {
            return Err(Error::Constraint(format!("parameter outside its support: {hp:?}")));
        }
        let l = self.g.len() as u32;
        for sec in &self.franchise.sections {
            if sec.iter().any(|t| t.dish.0.iter().any(|&a| a >= l)) {
                return Err(Error::Constraint("dish refers to a missing atom".into()));
            }
        }
        Ok(())
    }
}

/// `sum_{i in t} (z_ij - xi_i)` for every probe and treatment (row-major
/// `p x T`), the part of the residual sufficient statistics that does not
/// involve `chi`.
pub fn centred_sums(data: &LogitData, xi: &[f64]) -> Vec<f64> {
    let t = data.n_treatments;
    let mut sums = vec![0.0; data.p * t];
    for i in 0..data.n {
        let ti = data.treatment[i];
        let row = &data.z[i * data.p..(i + 1) * data.p];
        for (j, z) in row.iter().enumerate() {
            sums[j * t + ti] += z - xi[i];
        }
    }
    sums
}

/// Residual sums `R_jt = sum_{i in t} (z_ij - xi_i - chi_j)`, row-major.
pub fn residual_sums(data: &LogitData, xi: &[f64], chi: &[f64]) -> Vec<f64> {
    let t = data.n_treatments;
    let sizes = data.treatment_sizes();
    let mut sums = centred_sums(data, xi);
    for j in 0..data.p {
        for k in 0..t {
            sums[j * t + k] -= sizes[k] as f64 * chi[j];
        }
    }
    sums
}

/// Gaussian log-likelihood of the whole logit matrix.
pub fn data_log_likelihood(data: &LogitData, state: &ChainState) -> f64 {
    let theta = state.theta_matrix();
    let t = data.n_treatments;
    let s2 = state.hp.sigma2;
    let mut ss = 0.0;
    for i in 0..data.n {
        let ti = data.treatment[i];
        for j in 0..data.p {
            let r = data.z(i, j) - state.xi[i] - state.chi[j] - theta[j * t + ti];
            ss += r * r;
        }
    }
    -0.5 * ((data.n * data.p) as f64 * (LN_2PI + s2.ln()) + ss / s2)
}

/// `ln F_j(g)`: log probability of restaurant `g` after a customer of cuisine
/// `s_prev`, with `ratio = r_j / gamma`.
#[inline]
pub fn ln_restaurant(g: Restaurant, s_prev: Cuisine, ratio: f64, rho1: f64) -> f64 {
    let p1 = restaurant_one_prob(s_prev, ratio, rho1);
    match g {
        Restaurant::One => p1.ln(),
        Restaurant::Two => (1.0 - p1).ln(),
    }
}

#[inline]
pub fn ln_cuisine(s: Cuisine, g: Restaurant, rho1: f64, gamma: f64) -> f64 {
    let q1 = cuisine_one_prob(g, rho1, gamma);
    match s {
        Cuisine::NonDifferential => q1.ln(),
        Cuisine::Differential => (1.0 - q1).ln(),
    }
}

/// `r_j / gamma` for every gap.
pub fn affinity_ratios(distances: &[f64], eta: f64, gamma: f64) -> Vec<f64> {
    distances
        .iter()
        .map(|&e| if eta > 0.0 { (-e / eta).exp() / gamma } else { 0.0 })
        .collect()
}

/// Log probability of the restaurant transitions `sum_{j >= 2} ln F_j(g_j)`,
/// the only part of the prior that depends on `eta`.
pub fn transition_log_lik(f: &FranchiseState, distances: &[f64], rho1: f64, gamma: f64, eta: f64) -> f64 {
    let mut total = 0.0;
    for (k, &e) in distances.iter().enumerate() {
        let ratio = if eta > 0.0 { (-e / eta).exp() / gamma } else { 0.0 };
        if ratio >= 1.0 {
            return f64::NEG_INFINITY;
        }
        total += ln_restaurant(f.restaurant[k + 1], f.cuisine[k], ratio, rho1);
    }
    total
}

/// Log probability of the whole restaurant and cuisine sequence.
pub fn sequence_log_lik(f: &FranchiseState, distances: &[f64], rho1: f64, gamma: f64, eta: f64) -> f64 {
    let first = match f.restaurant[0] {
        Restaurant::One => rho1.ln(),
        Restaurant::Two => (1.0 - rho1).ln(),
    };
    let cuisines: f64 = f
        .restaurant
        .iter()
        .zip(&f.cuisine)
        .map(|(&g, &s)| ln_cuisine(s, g, rho1, gamma))
        .sum();
    first + cuisines + transition_log_lik(f, distances, rho1, gamma, eta)
}

/// Log EPPF of both sections serving cuisine `s`.
pub fn cuisine_seating_log_lik(f: &FranchiseState, s: Cuisine, alpha: f64, d: f64) -> f64 {
    [Restaurant::One, Restaurant::Two]
        .iter()
        .map(|&g| {
            let counts: Vec<usize> = f.sections[section_index(g, s)].iter().map(|t| t.count).collect();
            log_eppf(&counts, alpha, d)
        })
        .sum()
}

/// Log prior mass of all table dishes under the menus `W1`/`W2` given `G`.
pub fn dish_log_prior(f: &FranchiseState, g: &BaseMeasureG) -> f64 {
    let t = f.n_treatments;
    let lw = g.ln_weights();
    let ln_norm2 = (-g.all_equal_mass(t)).ln_1p();
    let mut total = 0.0;
    for sec in &f.sections {
        for table in sec {
            match table.dish.cuisine() {
                Cuisine::NonDifferential => total += lw[table.dish.0[0] as usize],
                Cuisine::Differential => {
                    total += table.dish.0.iter().map(|&a| lw[a as usize]).sum::<f64>() - ln_norm2;
                }
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::franchise::{Dish, Seat};

    #[test]
    fn transition_terms_vanish_for_one_probe() {
        let mut f = FranchiseState::empty(1, 2);
        f.seat(0, Restaurant::Two, Cuisine::Differential, Seat::New(Dish(vec![0, 1])));
        assert_eq!(transition_log_lik(&f, &[], 0.8, 0.5, 0.3), 0.0);
        let expected = 0.2_f64.ln() + (1.0 - (0.8 - 0.8 * 0.5_f64)).ln();
        assert!((sequence_log_lik(&f, &[], 0.8, 0.5, 0.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn residual_sums_by_hand() {
        let data = LogitData::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, 2, vec![0, 0, 1], vec![1.0]).unwrap();
        let r = residual_sums(&data, &[0.5, 0.0, 1.0], &[1.0, 0.0]);
        // probe 0, t0: (1 - 0.5 - 1) + (3 - 0 - 1) = 1.5 ; t1: 5 - 1 - 1 = 3
        assert_eq!(r, vec![1.5, 3.0, 5.5, 5.0]);
    }
}
