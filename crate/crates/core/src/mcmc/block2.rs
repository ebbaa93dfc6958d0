//! Block 2: table dishes given the seating, then atom locations of `G`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::LogitData;
use crate::error::{Error, Result};
use crate::franchise::{Cuisine, Dish};
use crate::math::sample_log_categorical;

use super::state::{residual_sums, ChainState};

/// Per-table sufficient statistics: residual sums `S_t` over the table's
/// customers and the matching observation counts `N_t`.
fn table_stats(state: &ChainState, resid: &[f64], sizes: &[usize]) -> [Vec<(Vec<f64>, Vec<f64>)>; 4] {
    let t = sizes.len();
    let f = &state.franchise;
    let mut out: [Vec<(Vec<f64>, Vec<f64>)>; 4] = Default::default();
    for sec in 0..4 {
        out[sec] = f.sections[sec].iter().map(|_| (vec![0.0; t], vec![0.0; t])).collect();
    }
    for j in 0..f.n_probes() {
        let (sums, counts) = &mut out[f.section_of(j)][f.table[j]];
        for k in 0..t {
            sums[k] += resid[j * t + k];
            counts[k] += sizes[k] as f64;
        }
    }
    out
}

/// Gibbs update of every table's atom indices.
pub fn update_dishes<R: Rng + ?Sized>(state: &mut ChainState, data: &LogitData, rng: &mut R) -> Result<()> {
    let sizes = data.treatment_sizes();
    let t = sizes.len();
    let resid = residual_sums(data, &state.xi, &state.chi);
    let stats = table_stats(state, &resid, &sizes);
    let ln_w = state.g.ln_weights();
    let atoms = state.g.atoms.clone();
    let l = atoms.len();
    let inv = 1.0 / (2.0 * state.hp.sigma2);
    let ell = |s: f64, n: f64, a: usize| (2.0 * atoms[a] * s - n * atoms[a] * atoms[a]) * inv;
    let iteration = state.iteration;
    let fail = |m: &str| Error::Sampler {
        iteration,
        message: m.to_string(),
    };

    for sec in 0..4 {
        for (k, (sums, counts)) in stats[sec].iter().enumerate() {
            let table = &mut state.franchise.sections[sec][k];
            match table.dish.cuisine() {
                Cuisine::NonDifferential => {
                    let w: Vec<f64> = (0..l)
                        .map(|a| ln_w[a] + (0..t).map(|q| ell(sums[q], counts[q], a)).sum::<f64>())
                        .collect();
                    let a = sample_log_categorical(&w, rng).ok_or_else(|| fail("dish weights are not finite"))?;
                    table.dish = Dish::constant(a as u32, t);
                }
                Cuisine::Differential => {
                    for q in 0..t {
                        // value shared by every other element, if any
                        let others = table.dish.0.iter().enumerate().filter(|&(i, _)| i != q).map(|(_, &a)| a);
                        let mut shared = None;
                        for (n, a) in others.enumerate() {
                            shared = match (n, shared) {
                                (0, _) => Some(a),
                                (_, Some(b)) if b == a => Some(a),
                                _ => None,
                            };
                            if n > 0 && shared.is_none() {
                                break;
                            }
                        }
                        let w: Vec<f64> = (0..l)
                            .map(|a| {
                                if shared == Some(a as u32) {
                                    f64::NEG_INFINITY
                                } else {
                                    ln_w[a] + ell(sums[q], counts[q], a)
                                }
                            })
                            .collect();
                        let a = sample_log_categorical(&w, rng).ok_or_else(|| fail("dish weights are not finite"))?;
                        table.dish.0[q] = a as u32;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Conjugate normal update of every atom given the dishes. Atoms that no
/// table uses are drawn from the base distribution.
pub fn update_atoms<R: Rng + ?Sized>(state: &mut ChainState, data: &LogitData, rng: &mut R) -> Result<()> {
    let sizes = data.treatment_sizes();
    let t = sizes.len();
    let resid = residual_sums(data, &state.xi, &state.chi);
    let l = state.g.len();
    let mut s_l = vec![0.0; l];
    let mut n_l = vec![0.0; l];
    let f = &state.franchise;
    for j in 0..f.n_probes() {
        for (k, &a) in f.dish(j).0.iter().enumerate() {
            s_l[a as usize] += resid[j * t + k];
            n_l[a as usize] += sizes[k] as f64;
        }
    }
    let (mu, tau2, s2) = (state.hp.mu_g, state.hp.tau_g2, state.hp.sigma2);
    for a in 0..l {
        let prec = 1.0 / tau2 + n_l[a] / s2;
        let mean = (mu / tau2 + s_l[a] / s2) / prec;
        let z: f64 = StandardNormal.sample(rng);
        state.g.atoms[a] = mean + z / prec.sqrt();
    }
    if state.g.atoms.iter().any(|a| !a.is_finite()) {
        return Err(Error::Sampler {
            iteration: state.iteration,
            message: "atom update produced a non-finite value".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::franchise::{BaseMeasureG, FranchiseState, HyperParams, Restaurant, Seat};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn toy(dish: Dish, z: Vec<f64>, treatment: Vec<usize>) -> (ChainState, LogitData) {
        let n = treatment.len();
        let t = dish.0.len();
        let data = LogitData::new(z, n, 1, treatment, vec![]).unwrap();
        let mut f = FranchiseState::empty(1, t);
        let s = dish.cuisine();
        f.seat(0, Restaurant::Two, s, Seat::New(dish));
        let g = BaseMeasureG::new(vec![-1.0, 0.0, 1.0], vec![0.3, 0.4, 0.3]).unwrap();
        let st = ChainState {
            franchise: f,
            g,
            sticks: vec![0.3, 4.0 / 7.0, 1.0],
            xi: vec![0.0; n],
            chi: vec![0.0],
            tau_chi2: 1.0,
            chi_mixture: None,
            xi_clusters: None,
            hp: HyperParams {
                sigma2: 1.0,
                ..HyperParams::default()
            },
            eta_u: 0.5,
            eta_in_slab: false,
            d2_in_slab: true,
            iteration: 0,
        };
        (st, data)
    }

    #[test]
    fn two_treatment_dishes_never_become_constant() {
        let (mut st, data) = toy(Dish(vec![0, 2]), vec![0.0, 0.1], vec![0, 1]);
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..20_000 {
            update_dishes(&mut st, &data, &mut rng).unwrap();
            let d = st.franchise.sections[3][0].dish.clone();
            assert!(!d.is_constant());
            *counts.entry(d).or_insert(0usize) += 1;
        }
        // the chain visits all six ordered pairs of distinct atoms
        assert_eq!(counts.len(), 6);
        // exact target: w_a w_b exp(ell_0(a) + ell_1(b)) over a != b
        let ell = |zeta: f64, r: f64| zeta * r - zeta * zeta / 2.0;
        let w = [0.3, 0.4, 0.3];
        let atoms = [-1.0, 0.0, 1.0];
        let mut target = std::collections::HashMap::new();
        let mut total = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    let v = w[a] * w[b] * (ell(atoms[a], 0.0) + ell(atoms[b], 0.1)).exp();
                    target.insert(Dish(vec![a as u32, b as u32]), v);
                    total += v;
                }
            }
        }
        for (d, v) in target {
            let freq = counts[&d] as f64 / 20_000.0;
            assert!((freq - v / total).abs() < 0.02, "{d:?}: {freq} vs {}", v / total);
        }
    }

    #[test]
    fn atom_update_is_conjugate() {
        // one probe, constant dish at atom 1, four observations of 2.0
        let (mut st, data) = toy(Dish(vec![1, 1]), vec![2.0; 4], vec![0, 0, 1, 1]);
        st.hp.mu_g = 0.0;
        st.hp.tau_g2 = 1.0;
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| {
                update_atoms(&mut st, &data, &mut rng).unwrap();
                st.g.atoms[1]
            })
            .collect();
        // posterior precision 1 + 4 = 5, mean 8 / 5
        let m = crate::math::mean(&draws);
        let v = crate::math::sample_variance(&draws);
        assert!((m - 1.6).abs() < 0.01, "{m}");
        assert!((v - 0.2).abs() < 0.01, "{v}");
    }
}
