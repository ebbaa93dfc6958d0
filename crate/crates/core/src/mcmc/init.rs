//! Starting values from simple per-probe summaries.
//!
//! Probes with an ANOVA p-value below 0.05 on the logit scale start as
//! differential with their treatment means as effects; the rest start with
//! a common effect. All effect values are grouped by single linkage at half
//! their standard deviation and each group becomes an atom of `G`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::baselines::anova;
use crate::data::LogitData;
use crate::error::{Error, Result};
use crate::franchise::{BaseMeasureG, Cuisine, Dish, FranchiseState, HyperParams, Restaurant, Seat};
use crate::math::sample_variance;

use super::config::{ChiModel, McmcConfig, XiModel};
use super::state::{ChainState, ChiMixture, XiClusters, CHI_MIXTURE_CENTRES};

/// Significance level separating differential from non-differential starts.
const INIT_ALPHA: f64 = 0.05;

/// Groups sorted values into runs whose consecutive gaps are at most `tol`,
/// then merges the closest neighbouring groups until at most `max_groups`
/// remain. Returns group means and the group of every input value.
pub(crate) fn single_linkage(values: &[f64], tol: f64, max_groups: usize) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    // groups as (sum, count, member list) in sorted order
    let mut groups: Vec<(f64, usize, Vec<usize>)> = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for &i in &order {
        let v = values[i];
        match groups.last_mut() {
            Some(g) if v - prev <= tol => {
                g.0 += v;
                g.1 += 1;
                g.2.push(i);
            }
            _ => groups.push((v, 1, vec![i])),
        }
        prev = v;
    }
    while groups.len() > max_groups.max(1) {
        let (k, _) = groups
            .windows(2)
            .map(|w| w[1].0 / w[1].1 as f64 - w[0].0 / w[0].1 as f64)
            .enumerate()
            .fold((0, f64::INFINITY), |best, (k, gap)| if gap < best.1 { (k, gap) } else { best });
        let right = groups.remove(k + 1);
        let left = &mut groups[k];
        left.0 += right.0;
        left.1 += right.1;
        left.2.extend(right.2);
    }
    let mut assign = vec![0; values.len()];
    let means = groups
        .iter()
        .enumerate()
        .map(|(k, g)| {
            for &i in &g.2 {
                assign[i] = k;
            }
            g.0 / g.1 as f64
        })
        .collect();
    (means, assign)
}

/// Stick proportions reproducing `weights` (the last one is 1).
pub(crate) fn sticks_from_weights(weights: &[f64]) -> Vec<f64> {
    let mut remaining = 1.0;
    let n = weights.len();
    weights
        .iter()
        .enumerate()
        .map(|(l, &w)| {
            if l + 1 == n {
                return 1.0;
            }
            let v = (w / remaining).clamp(1e-12, 1.0 - 1e-12);
            remaining *= 1.0 - v;
            v
        })
        .collect()
}

/// Builds a starting state for `data`.
pub fn initialize<R: Rng + ?Sized>(data: &LogitData, cfg: &McmcConfig, rng: &mut R) -> Result<ChainState> {
    cfg.validate()?;
    data.validate()?;
    let (n, p, t) = (data.n, data.p, data.n_treatments);
    if t < 2 {
        return Err(Error::Validation("at least two treatments are required".into()));
    }
    let sizes = data.treatment_sizes();

    let mut s = vec![Cuisine::NonDifferential; p];
    let mut chi = vec![0.0; p];
    // effect values: one per non-differential probe, T per differential probe
    let mut effects: Vec<Vec<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = (0..n).map(|i| data.z(i, j)).collect();
        let mut means = vec![0.0; t];
        for (i, z) in col.iter().enumerate() {
            means[data.treatment[i]] += z;
        }
        for (m, &c) in means.iter_mut().zip(&sizes) {
            *m /= c as f64;
        }
        let grand = crate::math::mean(&col);
        let differential = anova(&col, &data.treatment, t)
            .map(|r| r.p_value < INIT_ALPHA)
            .unwrap_or(false);
        let centre = if cfg.chi_model == ChiModel::None { 0.0 } else { grand };
        chi[j] = centre;
        if differential {
            s[j] = Cuisine::Differential;
            effects.push(means.iter().map(|m| m - centre).collect());
        } else {
            effects.push(vec![grand - centre]);
        }
    }

    let flat: Vec<f64> = effects.iter().flatten().copied().collect();
    let sd = sample_variance(&flat).sqrt();
    let tol = if sd > 0.0 { 0.5 * sd } else { 1e-12 };
    let (mut atoms, assign) = single_linkage(&flat, tol, cfg.truncation_l);
    let used = atoms.len();

    let mut franchise = FranchiseState::empty(p, t);
    let mut cursor = 0;
    for j in 0..p {
        let k = effects[j].len();
        let idx: Vec<u32> = assign[cursor..cursor + k].iter().map(|&a| a as u32).collect();
        cursor += k;
        let dish = if k == 1 { Dish::constant(idx[0], t) } else { Dish(idx) };
        // differential starts whose effects collapse onto one atom become non-differential
        s[j] = dish.cuisine();
        let g = if s[j].is_differential() { Restaurant::Two } else { Restaurant::One };
        let sec = crate::franchise::section_index(g, s[j]);
        let seat = match franchise.sections[sec].iter().position(|tb| tb.dish == dish) {
            Some(existing) => Seat::Existing(existing),
            None => Seat::New(dish),
        };
        franchise.seat(j, g, s[j], seat);
    }

    let priors = &cfg.priors;
    let beta = priors.beta.shape / priors.beta.rate;
    let tau_g2 = priors.g0.rate / (priors.g0.shape - 1.0).max(1.0);
    let base = Normal::new(priors.g0.mean, tau_g2.sqrt()).map_err(|e| Error::Argument(e.to_string()))?;
    let l = cfg.truncation_l;
    while atoms.len() < l {
        let a = base.sample(rng);
        if !atoms.contains(&a) {
            atoms.push(a);
        }
    }
    let mut usage = vec![0.0; l];
    for sec in &franchise.sections {
        for table in sec {
            for &a in &table.dish.0 {
                usage[a as usize] += 1.0;
            }
        }
    }
    debug_assert!(usage[used..].iter().all(|u| *u == 0.0));
    let total: f64 = usage.iter().sum::<f64>() + beta;
    let weights: Vec<f64> = usage.iter().map(|u| (u + beta / l as f64) / total).collect();
    let sticks = sticks_from_weights(&weights);
    let mut g = BaseMeasureG {
        atoms,
        weights: BaseMeasureG::weights_from_sticks(&sticks),
    };
    g.repair_weights();

    let hp = HyperParams {
        rho1: 0.75,
        gamma: 0.5,
        eta: 0.0,
        alpha1: priors.alpha1.shape / priors.alpha1.rate,
        alpha2: priors.alpha2.shape / priors.alpha2.rate,
        d1: 0.0,
        d2: 0.25,
        beta,
        mu_g: priors.g0.mean,
        tau_g2,
        sigma2: priors.sigma2.mean(),
        tau_eps2: priors.tau_eps2.mean(),
    };
    let chi_mixture = (cfg.chi_model == ChiModel::FiniteMixture3).then(|| ChiMixture {
        weights: [1.0 / 3.0; 3],
        means: CHI_MIXTURE_CENTRES,
        vars: [0.25; 3],
        labels: chi
            .iter()
            .map(|c| {
                (0..3)
                    .min_by(|&a, &b| (c - CHI_MIXTURE_CENTRES[a]).abs().total_cmp(&(c - CHI_MIXTURE_CENTRES[b]).abs()))
                    .unwrap() as u8
            })
            .collect(),
    });
    let xi_clusters = (cfg.xi_model == XiModel::DpNormal).then(|| XiClusters {
        labels: vec![0; n],
        values: vec![0.0],
    });
    let mut state = ChainState {
        franchise,
        g,
        sticks,
        xi: vec![0.0; n],
        chi,
        tau_chi2: priors.tau_chi2.mean(),
        chi_mixture,
        xi_clusters,
        hp,
        eta_u: 0.5,
        eta_in_slab: p >= 2,
        d2_in_slab: true,
        iteration: 0,
    };
    state.sync_eta(&data.distances);
    state.check(data)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn data_from(cols: &[Vec<f64>], treatment: Vec<usize>) -> LogitData {
        let p = cols.len();
        let n = treatment.len();
        let mut z = vec![0.0; n * p];
        for (j, col) in cols.iter().enumerate() {
            for i in 0..n {
                z[i * p + j] = col[i];
            }
        }
        let d = if p > 1 { vec![1.0 / (p - 1) as f64; p - 1] } else { vec![] };
        LogitData::new(z, n, p, treatment, d).unwrap()
    }

    #[test]
    fn single_linkage_groups_and_merges() {
        let (means, assign) = single_linkage(&[0.0, 0.1, 5.0, 5.2, 10.0], 0.5, 10);
        assert_eq!(assign, vec![0, 0, 1, 1, 2]);
        assert!((means[1] - 5.1).abs() < 1e-12);
        let (means, _) = single_linkage(&[0.0, 0.1, 5.0, 5.2, 10.0], 0.5, 2);
        assert_eq!(means.len(), 2);
    }

    #[test]
    fn sticks_reproduce_weights() {
        let w = [0.5, 0.25, 0.125, 0.125];
        let back = BaseMeasureG::weights_from_sticks(&sticks_from_weights(&w));
        for (a, b) in w.iter().zip(back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_columns_start_non_differential() {
        let col = vec![0.3, -0.2, 0.3, -0.2, 0.3, -0.2];
        let data = data_from(&vec![col; 4], vec![0, 0, 1, 1, 2, 2]);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let st = initialize(&data, &McmcConfig::default(), &mut rng).unwrap();
        assert!(st.franchise.cuisine.iter().all(|s| *s == Cuisine::NonDifferential));
        assert_eq!(st.g.len(), 50);
    }

    #[test]
    fn clear_differences_start_differential_and_init_is_deterministic() {
        let diff = vec![-3.0, -3.1, 0.0, 0.1, 3.0, 3.1];
        let flat = vec![0.5, 0.4, 0.5, 0.4, 0.5, 0.4];
        let data = data_from(&[diff, flat], vec![0, 0, 1, 1, 2, 2]);
        let cfg = McmcConfig {
            chi_model: ChiModel::None,
            ..McmcConfig::default()
        };
        let a = initialize(&data, &cfg, &mut ChaCha12Rng::seed_from_u64(4)).unwrap();
        let b = initialize(&data, &cfg, &mut ChaCha12Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.franchise.cuisine, vec![Cuisine::Differential, Cuisine::NonDifferential]);
    }

    #[test]
    fn single_probe_is_valid() {
        let data = data_from(&[vec![0.1, 0.2, 0.3, 0.4]], vec![0, 0, 1, 1]);
        let st = initialize(&data, &McmcConfig::default(), &mut ChaCha12Rng::seed_from_u64(2)).unwrap();
        assert_eq!(st.franchise.total_tables(), 1);
        assert!(!st.eta_in_slab);
        st.check(&data).unwrap();
    }
}
