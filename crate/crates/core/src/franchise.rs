//! The two-restaurant two-cuisine franchise: the generative machinery of the
//! sticky Pitman-Yor process.
//!
//! Customers are probes in genomic order. Each customer picks a restaurant
//! (influenced by the previous customer's cuisine and the gap between them),
//! a cuisine section inside that restaurant, and a table inside the section.
//! Cuisine 1 is the non-differential state and serves dishes with all `T`
//! treatment effects equal; cuisine 2 is the differential state and serves
//! dishes with at least two distinct effects. Dish elements are atoms of a
//! discrete random measure `G`, realized here by truncated stick-breaking.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::math::{log1m_exp, sample_log_categorical};

/// Maximum rejection attempts when drawing a differential dish before the
/// exact sequential sampler takes over.
pub const DISH_REJECTION_CAP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Restaurant {
    One,
    Two,
}

impl Restaurant {
    pub const ALL: [Restaurant; 2] = [Restaurant::One, Restaurant::Two];

    pub fn index(self) -> usize {
        match self {
            Restaurant::One => 0,
            Restaurant::Two => 1,
        }
    }

    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_label(label: u8) -> Result<Self> {
        match label {
            1 => Ok(Restaurant::One),
            2 => Ok(Restaurant::Two),
            _ => Err(Error::Argument(format!("restaurant label must be 1 or 2, got {label}"))),
        }
    }
}

/// Cuisine section, equivalently the differential state of a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cuisine {
    /// State 1: all treatment effects equal.
    NonDifferential,
    /// State 2: at least two treatment effects differ.
    Differential,
}

impl Cuisine {
    pub const ALL: [Cuisine; 2] = [Cuisine::NonDifferential, Cuisine::Differential];

    pub fn index(self) -> usize {
        match self {
            Cuisine::NonDifferential => 0,
            Cuisine::Differential => 1,
        }
    }

    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_label(label: u8) -> Result<Self> {
        match label {
            1 => Ok(Cuisine::NonDifferential),
            2 => Ok(Cuisine::Differential),
            _ => Err(Error::Argument(format!("cuisine label must be 1 or 2, got {label}"))),
        }
    }

    pub fn is_differential(self) -> bool {
        self == Cuisine::Differential
    }
}

/// Index of the `(restaurant, cuisine)` section in `0..4`.
pub fn section_index(g: Restaurant, s: Cuisine) -> usize {
    g.index() * 2 + s.index()
}

pub fn section_parts(section: usize) -> (Restaurant, Cuisine) {
    let g = if section < 2 { Restaurant::One } else { Restaurant::Two };
    let s = if section % 2 == 0 {
        Cuisine::NonDifferential
    } else {
        Cuisine::Differential
    };
    (g, s)
}

/// Full parameter vector of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    /// Baseline non-differential proportion, in (0.5, 1).
    pub rho1: f64,
    /// Speciality cuisine popularity, in (0, 1).
    pub gamma: f64,
    /// Dependence parameter; 0 gives the zero-order process.
    pub eta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Discount of the non-differential sections; always 0.
    pub d1: f64,
    pub d2: f64,
    /// Mass of the Dirichlet process prior on `G`.
    pub beta: f64,
    pub mu_g: f64,
    pub tau_g2: f64,
    pub sigma2: f64,
    pub tau_eps2: f64,
}

impl HyperParams {
    pub fn rho2(&self) -> f64 {
        1.0 - self.rho1
    }

    pub fn alpha(&self, s: Cuisine) -> f64 {
        match s {
            Cuisine::NonDifferential => self.alpha1,
            Cuisine::Differential => self.alpha2,
        }
    }

    pub fn discount(&self, s: Cuisine) -> f64 {
        match s {
            Cuisine::NonDifferential => self.d1,
            Cuisine::Differential => self.d2,
        }
    }

    /// `-1 / ln(gamma)`: the largest `eta` for which a unit gap keeps the
    /// restaurant probabilities valid.
    pub fn eta_bound_unit_gap(&self) -> f64 {
        -1.0 / self.gamma.ln()
    }

    /// Largest `eta` keeping every restaurant probability valid when the
    /// smallest normalized gap is `min_gap`.
    pub fn eta_bound(&self, min_gap: f64) -> f64 {
        eta_upper_bound(self.gamma, min_gap)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Validation(msg.to_string())) };
        check(self.rho1 > 0.5 && self.rho1 < 1.0, "rho1 must lie in (0.5, 1)")?;
        check(self.gamma > 0.0 && self.gamma < 1.0, "gamma must lie in (0, 1)")?;
        check(self.d1 == 0.0, "d1 is fixed at 0")?;
        check(self.d2 >= 0.0 && self.d2 < 1.0, "d2 must lie in [0, 1)")?;
        check(self.eta >= 0.0 && self.eta.is_finite(), "eta must be non-negative")?;
        check(
            self.eta == 0.0 || self.eta < self.eta_bound_unit_gap(),
            "eta must be 0 or below -1/ln(gamma)",
        )?;
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta", self.beta),
            ("tau_g2", self.tau_g2),
            ("sigma2", self.sigma2),
            ("tau_eps2", self.tau_eps2),
        ] {
            check(v > 0.0 && v.is_finite(), &format!("{name} must be positive"))?;
        }
        check(self.mu_g.is_finite(), "mu_g must be finite")?;
        Ok(())
    }
}

impl Default for HyperParams {
    /// Generating values used by the simulation study (`rho2 = 0.1`,
    /// `gamma = 0.9`, `alpha1 = alpha2 = 20`, `d2 = 0.33`, `beta = 20`,
    /// `G0 = N(0, 1)`), zero-order, low noise.
    fn default() -> Self {
        HyperParams {
            rho1: 0.9,
            gamma: 0.9,
            eta: 0.0,
            alpha1: 20.0,
            alpha2: 20.0,
            d1: 0.0,
            d2: 0.33,
            beta: 20.0,
            mu_g: 0.0,
            tau_g2: 1.0,
            sigma2: 0.36,
            tau_eps2: 1.0,
        }
    }
}

pub fn eta_upper_bound(gamma: f64, min_gap: f64) -> f64 {
    min_gap / -gamma.ln()
}

/// Distance-decayed affinity between consecutive customers: `exp(-e/eta)`,
/// and 0 for the zero-order process (`eta == 0`).
pub fn affinity(e: f64, eta: f64) -> Result<f64> {
    if !(e >= 0.0) || !(eta >= 0.0) {
        return Err(Error::Argument(format!("affinity needs e >= 0 and eta >= 0, got e={e}, eta={eta}")));
    }
    if eta == 0.0 {
        return Ok(0.0);
    }
    Ok((-e / eta).exp())
}

/// Probability that a customer picks restaurant 1 given the previous
/// customer's cuisine and the affinity `r`.
pub fn restaurant_prob(s_prev: Cuisine, r: f64, hp: &HyperParams) -> Result<f64> {
    let ratio = r / hp.gamma;
    if !(r >= 0.0) || !(ratio < 1.0) {
        return Err(Error::Constraint(format!(
            "restaurant probability needs r/gamma < 1, got r={r}, gamma={}",
            hp.gamma
        )));
    }
    Ok(restaurant_one_prob(s_prev, ratio, hp.rho1))
}

#[inline]
pub(crate) fn restaurant_one_prob(s_prev: Cuisine, ratio: f64, rho1: f64) -> f64 {
    match s_prev {
        Cuisine::NonDifferential => rho1 + (1.0 - rho1) * ratio,
        Cuisine::Differential => rho1 - rho1 * ratio,
    }
}

/// Probability that a customer of restaurant `g` picks cuisine 1.
pub fn cuisine_prob(g: Restaurant, hp: &HyperParams) -> f64 {
    cuisine_one_prob(g, hp.rho1, hp.gamma)
}

#[inline]
pub(crate) fn cuisine_one_prob(g: Restaurant, rho1: f64, gamma: f64) -> f64 {
    match g {
        Restaurant::One => rho1 + (1.0 - rho1) * gamma,
        Restaurant::Two => rho1 - rho1 * gamma,
    }
}

/// Pitman-Yor seating probabilities: one entry per occupied table followed by
/// the new-table probability.
pub fn table_predictive(occupancies: &[usize], alpha: f64, d: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&d) {
        return Err(Error::Argument(format!("discount must lie in [0, 1), got {d}")));
    }
    if occupancies.is_empty() {
        if alpha <= 0.0 {
            return Err(Error::Argument("no occupied tables and zero mass".into()));
        }
        return Ok(vec![1.0]);
    }
    if alpha <= -d {
        return Err(Error::Argument(format!("mass {alpha} must exceed -discount")));
    }
    if occupancies.contains(&0) {
        return Err(Error::Argument("occupied tables must have at least one customer".into()));
    }
    let total: usize = occupancies.iter().sum();
    let norm = total as f64 + alpha;
    let mut probs: Vec<f64> = occupancies.iter().map(|&c| (c as f64 - d) / norm).collect();
    probs.push((alpha + occupancies.len() as f64 * d) / norm);
    Ok(probs)
}

/// Log exchangeable partition probability of a Pitman-Yor seating with the
/// given table sizes.
pub fn log_eppf(counts: &[usize], alpha: f64, d: f64) -> f64 {
    let k = counts.len();
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let mut lp = 0.0;
    for i in 1..k {
        lp += (alpha + i as f64 * d).ln();
    }
    lp -= ln_gamma(alpha + n as f64) - ln_gamma(alpha + 1.0);
    if d == 0.0 {
        lp += counts.iter().map(|&c| ln_gamma(c as f64)).sum::<f64>();
    } else {
        let base = ln_gamma(1.0 - d);
        lp += counts.iter().map(|&c| ln_gamma(c as f64 - d) - base).sum::<f64>();
    }
    lp
}

/// A discrete realization of `G`: atoms with positive weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMeasureG {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
}

impl BaseMeasureG {
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let g = BaseMeasureG { atoms, weights };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() || self.atoms.len() != self.weights.len() {
            return Err(Error::Argument("G needs matching, non-empty atoms and weights".into()));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Argument("G weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Argument(format!("G weights sum to {total}")));
        }
        let mut sorted = self.atoms.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("G atoms must be distinct".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Weights from stick proportions `v` (the last stick must be 1).
    pub fn weights_from_sticks(sticks: &[f64]) -> Vec<f64> {
        let mut remaining = 1.0;
        sticks
            .iter()
            .map(|&v| {
                let w = v * remaining;
                remaining *= 1.0 - v;
                w
            })
            .collect()
    }

    /// Draws a truncated stick-breaking realization of `DP(beta, N(mean, var))`
    /// with `len` atoms. Returns the measure and its stick proportions.
    pub fn stick_breaking<R: Rng + ?Sized>(
        beta: f64,
        mean: f64,
        var: f64,
        len: usize,
        rng: &mut R,
    ) -> Result<(Self, Vec<f64>)> {
        if len < 1 || !(beta > 0.0) || !(var > 0.0) {
            return Err(Error::Argument("stick-breaking needs len >= 1, beta > 0, var > 0".into()));
        }
        let stick = Beta::new(1.0, beta).map_err(|e| Error::Argument(e.to_string()))?;
        let normal = Normal::new(mean, var.sqrt()).map_err(|e| Error::Argument(e.to_string()))?;
        let mut sticks: Vec<f64> = (0..len - 1).map(|_| stick.sample(rng).clamp(1e-300, 1.0 - 1e-16)).collect();
        sticks.push(1.0);
        let weights = Self::weights_from_sticks(&sticks);
        let atoms = (0..len).map(|_| normal.sample(rng)).collect();
        let mut g = BaseMeasureG { atoms, weights };
        g.repair_weights();
        Ok((g, sticks))
    }

    /// Replaces weights that underflowed to zero by the smallest positive
    /// double and renormalizes.
    pub(crate) fn repair_weights(&mut self) {
        for w in &mut self.weights {
            if !(*w > 0.0) {
                *w = f64::MIN_POSITIVE;
            }
        }
        let total: f64 = self.weights.iter().sum();
        self.weights.iter_mut().for_each(|w| *w /= total);
    }

    pub fn ln_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.ln()).collect()
    }

    /// `sum_v w_v^T`: probability that `T` i.i.d. draws from `G` coincide.
    pub fn all_equal_mass(&self, t: usize) -> f64 {
        self.weights.iter().map(|w| w.powi(t as i32)).sum()
    }
}

/// A dish: one atom index of `G` per treatment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dish(pub Vec<u32>);

impl Dish {
    pub fn constant(atom: u32, t: usize) -> Self {
        Dish(vec![atom; t])
    }

    pub fn is_constant(&self) -> bool {
        self.0.windows(2).all(|w| w[0] == w[1])
    }

    pub fn values(&self, g: &BaseMeasureG) -> Vec<f64> {
        self.0.iter().map(|&a| g.atoms[a as usize]).collect()
    }

    pub fn cuisine(&self) -> Cuisine {
        if self.is_constant() {
            Cuisine::NonDifferential
        } else {
            Cuisine::Differential
        }
    }
}

/// Draws a tuple of atom indices, element `t` from the distribution with
/// log-weights `log_w[t * n_atoms..(t + 1) * n_atoms]`, conditioned on not
/// all elements being equal.
///
/// Tries plain rejection first and falls back to an exact sequential sampler.
/// Returns `None` when the conditioning event has probability zero.
pub fn sample_not_all_equal<R: Rng + ?Sized>(
    log_w: &[f64],
    n_treatments: usize,
    n_atoms: usize,
    rng: &mut R,
) -> Option<Vec<u32>> {
    debug_assert_eq!(log_w.len(), n_treatments * n_atoms);
    if n_treatments < 2 {
        return None;
    }
    // normalized log probabilities per treatment
    let mut lp = log_w.to_vec();
    for t in 0..n_treatments {
        let row = &mut lp[t * n_atoms..(t + 1) * n_atoms];
        let norm = crate::math::log_sum_exp(row);
        if !norm.is_finite() {
            return None;
        }
        row.iter_mut().for_each(|x| *x -= norm);
    }
    let mut out = vec![0u32; n_treatments];
    for _ in 0..DISH_REJECTION_CAP {
        for t in 0..n_treatments {
            out[t] = sample_log_categorical(&lp[t * n_atoms..(t + 1) * n_atoms], rng)? as u32;
        }
        if out.windows(2).any(|w| w[0] != w[1]) {
            return Some(out);
        }
    }
    sequential_not_all_equal(&lp, n_treatments, n_atoms, rng)
}

fn sequential_not_all_equal<R: Rng + ?Sized>(
    lp: &[f64],
    n_treatments: usize,
    n_atoms: usize,
    rng: &mut R,
) -> Option<Vec<u32>> {
    // suffix[t * n_atoms + a] = sum_{t' >= t} lp[t'][a]
    let mut suffix = vec![0.0; (n_treatments + 1) * n_atoms];
    for t in (0..n_treatments).rev() {
        for a in 0..n_atoms {
            suffix[t * n_atoms + a] = suffix[(t + 1) * n_atoms + a] + lp[t * n_atoms + a];
        }
    }
    let mut weights = vec![0.0; n_atoms];
    for a in 0..n_atoms {
        weights[a] = lp[a] + log1m_exp(suffix[n_atoms + a].min(0.0));
    }
    let first = sample_log_categorical(&weights, rng)?;
    let mut out = vec![first as u32];
    let mut diverged = false;
    for t in 1..n_treatments {
        let row = &lp[t * n_atoms..(t + 1) * n_atoms];
        let pick = if diverged {
            sample_log_categorical(row, rng)?
        } else {
            weights.copy_from_slice(row);
            let rest = suffix[(t + 1) * n_atoms + first];
            weights[first] = if t + 1 == n_treatments {
                f64::NEG_INFINITY
            } else {
                row[first] + log1m_exp(rest.min(0.0))
            };
            sample_log_categorical(&weights, rng)?
        };
        diverged |= pick != first;
        out.push(pick as u32);
    }
    Some(out)
}

/// Draws a dish from the cuisine menu: `W1` (one atom repeated) or `W2`
/// (i.i.d. atoms conditioned on not all equal).
pub fn sample_dish<R: Rng + ?Sized>(s: Cuisine, g: &BaseMeasureG, n_treatments: usize, rng: &mut R) -> Result<Dish> {
    if n_treatments < 2 {
        return Err(Error::Argument("dishes need at least two treatments".into()));
    }
    let lw = g.ln_weights();
    match s {
        Cuisine::NonDifferential => {
            let a = sample_log_categorical(&lw, rng).ok_or_else(|| Error::Unsatisfiable("G has no mass".into()))?;
            Ok(Dish::constant(a as u32, n_treatments))
        }
        Cuisine::Differential => {
            if g.len() < 2 {
                return Err(Error::Unsatisfiable(
                    "a differential dish needs at least two atoms in G".into(),
                ));
            }
            let log_w: Vec<f64> = (0..n_treatments).flat_map(|_| lw.iter().copied()).collect();
            sample_not_all_equal(&log_w, n_treatments, g.len(), rng)
                .map(Dish)
                .ok_or_else(|| Error::Unsatisfiable("no differential dish has positive mass".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub dish: Dish,
    pub count: usize,
}

/// Seating of all customers: restaurant, cuisine and table of each probe plus
/// the occupied tables of the four sections with their dishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FranchiseState {
    pub restaurant: Vec<Restaurant>,
    pub cuisine: Vec<Cuisine>,
    /// Table index within the probe's section.
    pub table: Vec<usize>,
    /// Occupied tables of each section, indexed by [`section_index`].
    pub sections: [Vec<Table>; 4],
    pub n_treatments: usize,
}

/// Where a customer sits.
#[derive(Debug, Clone, PartialEq)]
pub enum Seat {
    Existing(usize),
    New(Dish),
}

pub(crate) const UNSEATED: usize = usize::MAX;

impl FranchiseState {
    pub fn empty(p: usize, n_treatments: usize) -> Self {
        FranchiseState {
            restaurant: vec![Restaurant::One; p],
            cuisine: vec![Cuisine::NonDifferential; p],
            table: vec![UNSEATED; p],
            sections: Default::default(),
            n_treatments,
        }
    }

    pub fn n_probes(&self) -> usize {
        self.table.len()
    }

    pub fn section_of(&self, j: usize) -> usize {
        section_index(self.restaurant[j], self.cuisine[j])
    }

    pub fn dish(&self, j: usize) -> &Dish {
        &self.sections[self.section_of(j)][self.table[j]].dish
    }

    /// Table occupancy counts of section `(g, s)`.
    pub fn occupancies(&self, g: Restaurant, s: Cuisine) -> Vec<usize> {
        self.sections[section_index(g, s)].iter().map(|t| t.count).collect()
    }

    pub fn total_tables(&self) -> usize {
        self.sections.iter().map(Vec::len).sum()
    }

    pub fn n_differential(&self) -> usize {
        self.cuisine.iter().filter(|s| s.is_differential()).count()
    }

    /// Treatment effects of every probe, `p` vectors of length `T`.
    pub fn theta(&self, g: &BaseMeasureG) -> Vec<Vec<f64>> {
        (0..self.n_probes()).map(|j| self.dish(j).values(g)).collect()
    }

    /// Seats customer `j`, which must currently be unseated.
    pub fn seat(&mut self, j: usize, g: Restaurant, s: Cuisine, seat: Seat) {
        debug_assert_eq!(self.table[j], UNSEATED);
        let sec = section_index(g, s);
        self.restaurant[j] = g;
        self.cuisine[j] = s;
        self.table[j] = match seat {
            Seat::Existing(k) => {
                self.sections[sec][k].count += 1;
                k
            }
            Seat::New(dish) => {
                self.sections[sec].push(Table { dish, count: 1 });
                self.sections[sec].len() - 1
            }
        };
    }

    /// Removes customer `j` from its table. When the table empties it is
    /// deleted (later tables shift down) and its dish is returned.
    pub fn unseat(&mut self, j: usize) -> Option<Dish> {
        let sec = self.section_of(j);
        let k = self.table[j];
        self.table[j] = UNSEATED;
        let table = &mut self.sections[sec][k];
        table.count -= 1;
        if table.count > 0 {
            return None;
        }
        let removed = self.sections[sec].remove(k);
        for l in 0..self.n_probes() {
            if self.table[l] != UNSEATED && self.table[l] > k && self.section_of(l) == sec {
                self.table[l] -= 1;
            }
        }
        Some(removed.dish)
    }

    /// Relabels tables within each section by order of first occupancy.
    pub fn canonicalize(&mut self) {
        for sec in 0..4 {
            let mut order: Vec<usize> = Vec::with_capacity(self.sections[sec].len());
            let mut relabel = vec![UNSEATED; self.sections[sec].len()];
            for j in 0..self.n_probes() {
                if self.table[j] != UNSEATED && self.section_of(j) == sec {
                    let k = self.table[j];
                    if relabel[k] == UNSEATED {
                        relabel[k] = order.len();
                        order.push(k);
                    }
                }
            }
            if order.iter().enumerate().all(|(i, &k)| i == k) && order.len() == self.sections[sec].len() {
                continue;
            }
            let old = std::mem::take(&mut self.sections[sec]);
            self.sections[sec] = order.iter().map(|&k| old[k].clone()).collect();
            for j in 0..self.n_probes() {
                if self.table[j] != UNSEATED && self.section_of(j) == sec {
                    self.table[j] = relabel[self.table[j]];
                }
            }
        }
    }

    /// Cluster allocation by dish equality: returns `c_j` (labels by first
    /// appearance) and the number of clusters `q`.
    pub fn clusters(&self) -> (Vec<usize>, usize) {
        let mut seen: std::collections::HashMap<&Dish, usize> = std::collections::HashMap::new();
        let alloc = (0..self.n_probes())
            .map(|j| {
                let next = seen.len();
                *seen.entry(self.dish(j)).or_insert(next)
            })
            .collect();
        (alloc, seen.len())
    }

    /// Checks occupancy bookkeeping and dish/cuisine consistency.
    pub fn check_invariants(&self) -> Result<()> {
        let mut counts: [Vec<usize>; 4] = Default::default();
        for sec in 0..4 {
            counts[sec] = vec![0; self.sections[sec].len()];
        }
        for j in 0..self.n_probes() {
            let sec = self.section_of(j);
            let k = self.table[j];
            if k >= self.sections[sec].len() {
                return Err(Error::Constraint(format!("probe {j} sits at a missing table")));
            }
            counts[sec][k] += 1;
        }
        for sec in 0..4 {
            let (_, s) = section_parts(sec);
            for (k, table) in self.sections[sec].iter().enumerate() {
                if table.count != counts[sec][k] || table.count == 0 {
                    return Err(Error::Constraint(format!(
                        "section {sec} table {k}: stored count {} but {} customers",
                        table.count, counts[sec][k]
                    )));
                }
                if table.dish.0.len() != self.n_treatments {
                    return Err(Error::Constraint("dish length differs from T".into()));
                }
                if table.dish.cuisine() != s {
                    return Err(Error::Constraint(format!(
                        "section {sec} table {k} serves a dish of the wrong cuisine"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Forward simulation of the franchise for `p` customers.
///
/// `distances` are the `p - 1` normalized gaps. Fails when a restaurant
/// probability is invalid for the given `eta`, `gamma` and gaps.
pub fn simulate_franchise<R: Rng + ?Sized>(
    p: usize,
    distances: &[f64],
    hp: &HyperParams,
    g: &BaseMeasureG,
    n_treatments: usize,
    rng: &mut R,
) -> Result<FranchiseState> {
    hp.validate()?;
    if p == 0 || distances.len() + 1 != p {
        return Err(Error::Argument(format!("{p} customers need {} distances", p.saturating_sub(1))));
    }
    let mut state = FranchiseState::empty(p, n_treatments);
    for j in 0..p {
        let p_one = if j == 0 {
            hp.rho1
        } else {
            let r = affinity(distances[j - 1], hp.eta)?;
            restaurant_prob(state.cuisine[j - 1], r, hp)?
        };
        let gj = if rng.random::<f64>() < p_one {
            Restaurant::One
        } else {
            Restaurant::Two
        };
        let sj = if rng.random::<f64>() < cuisine_prob(gj, hp) {
            Cuisine::NonDifferential
        } else {
            Cuisine::Differential
        };
        let occ = state.occupancies(gj, sj);
        let probs = table_predictive(&occ, hp.alpha(sj), hp.discount(sj))?;
        let logp: Vec<f64> = probs.iter().map(|x| x.ln()).collect();
        let k = sample_log_categorical(&logp, rng).expect("predictive has mass");
        let seat = if k < occ.len() {
            Seat::Existing(k)
        } else {
            Seat::New(sample_dish(sj, g, n_treatments, rng)?)
        };
        state.seat(j, gj, sj, seat);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn hp(rho1: f64, gamma: f64) -> HyperParams {
        HyperParams {
            rho1,
            gamma,
            ..HyperParams::default()
        }
    }

    #[test]
    fn affinity_examples() {
        let r = affinity(1.0 / 499.0, 0.004).unwrap();
        assert!((r - 0.606).abs() < 1e-3, "r = {r}");
        assert_eq!(affinity(0.3, 0.0).unwrap(), 0.0);
        assert!((affinity(1e-12, 0.01).unwrap() - 1.0).abs() < 1e-9);
        assert!(affinity(-1.0, 0.1).is_err());
        assert!(affinity(1.0, -0.1).is_err());
    }

    #[test]
    fn restaurant_prob_examples() {
        let h = hp(0.9, 0.9);
        for s in Cuisine::ALL {
            assert!((restaurant_prob(s, 0.0, &h).unwrap() - 0.9).abs() < 1e-15);
        }
        assert!((restaurant_prob(Cuisine::NonDifferential, 0.45, &h).unwrap() - 0.95).abs() < 1e-12);
        assert!((restaurant_prob(Cuisine::Differential, 0.45, &h).unwrap() - 0.45).abs() < 1e-12);
        assert!(matches!(
            restaurant_prob(Cuisine::Differential, 0.9, &h),
            Err(Error::Constraint(_))
        ));
    }

    #[test]
    fn cuisine_prob_examples() {
        let h = hp(0.9, 0.9);
        assert!((cuisine_prob(Restaurant::One, &h) - 0.99).abs() < 1e-12);
        assert!((cuisine_prob(Restaurant::Two, &h) - 0.09).abs() < 1e-12);
        let h = hp(0.8, 1e-12);
        for g in Restaurant::ALL {
            assert!((cuisine_prob(g, &h) - 0.8).abs() < 1e-9);
        }
    }

    #[test]
    fn table_predictive_examples() {
        assert_eq!(table_predictive(&[], 1.0, 0.5).unwrap(), vec![1.0]);
        let p = table_predictive(&[3, 1], 1.0, 0.5).unwrap();
        for (a, b) in p.iter().zip([0.5, 0.1, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
        let p = table_predictive(&[3, 1], 1.0, 0.0).unwrap();
        for (a, b) in p.iter().zip([0.6, 0.2, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(table_predictive(&[], 0.0, 0.0).is_err());
    }

    #[test]
    fn eppf_matches_sequential_seating() {
        // seat 1,1,2,1,3 (table ids) one by one and multiply predictives
        let seq = [0usize, 0, 1, 0, 2, 1, 1];
        let (alpha, d) = (1.7, 0.3);
        let mut occ: Vec<usize> = Vec::new();
        let mut lp = 0.0;
        for &k in &seq {
            let probs = table_predictive(&occ, alpha, d).unwrap();
            lp += probs[k].ln();
            if k == occ.len() {
                occ.push(1);
            } else {
                occ[k] += 1;
            }
        }
        assert!((log_eppf(&occ, alpha, d) - lp).abs() < 1e-12);
        assert!((log_eppf(&[3, 1], 2.0, 0.0) - (1.0 * 2.0 * 2.0 * 2.0 / (2.0 * 3.0 * 4.0 * 5.0_f64)).ln()).abs() < 1e-12);
    }

    #[test]
    fn differential_dish_pair_probability() {
        // G = {0.3 @ a, 0.7 @ b}, T = 2: P((a, b)) = 0.21 / 0.42
        let g = BaseMeasureG::new(vec![-1.0, 1.0], vec![0.3, 0.7]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 200_000;
        let mut ab = 0usize;
        for _ in 0..n {
            let d = sample_dish(Cuisine::Differential, &g, 2, &mut rng).unwrap();
            assert!(!d.is_constant());
            if d.0 == vec![0, 1] {
                ab += 1;
            }
        }
        let freq = ab as f64 / n as f64;
        assert!((freq - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "freq = {freq}");
    }

    #[test]
    fn sequential_fallback_matches_enumeration() {
        // heavily concentrated rows make rejection fail, forcing the fallback
        let t = 3;
        let l = 3;
        let row = [0.0, -30.0, -2.0];
        let log_w: Vec<f64> = (0..t).flat_map(|_| row).collect();
        let mut lp = log_w.clone();
        for r in 0..t {
            let norm = crate::math::log_sum_exp(&lp[r * l..(r + 1) * l]);
            lp[r * l..(r + 1) * l].iter_mut().for_each(|x| *x -= norm);
        }
        // enumerate target
        let mut target = std::collections::HashMap::new();
        let mut total = 0.0;
        for a in 0..l {
            for b in 0..l {
                for c in 0..l {
                    if a == b && b == c {
                        continue;
                    }
                    let w = (lp[a] + lp[l + b] + lp[2 * l + c]).exp();
                    total += w;
                    target.insert(vec![a as u32, b as u32, c as u32], w);
                }
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 100_000;
        let mut hist = std::collections::HashMap::new();
        for _ in 0..n {
            let s = sequential_not_all_equal(&lp, t, l, &mut rng).unwrap();
            *hist.entry(s).or_insert(0usize) += 1;
        }
        let tv: f64 = target
            .iter()
            .map(|(k, w)| (w / total - *hist.get(k).unwrap_or(&0) as f64 / n as f64).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "tv = {tv}");
    }

    #[test]
    fn single_atom_g_cannot_serve_differential_dishes() {
        let g = BaseMeasureG::new(vec![0.0], vec![1.0]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(matches!(
            sample_dish(Cuisine::Differential, &g, 3, &mut rng),
            Err(Error::Unsatisfiable(_))
        ));
        let d = sample_dish(Cuisine::NonDifferential, &g, 3, &mut rng).unwrap();
        assert!(d.is_constant());
    }

    #[test]
    fn zero_order_restaurant_frequency() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let p = 10_000;
        let dist = vec![1.0 / (p - 1) as f64; p - 1];
        let h = HyperParams { eta: 0.0, ..HyperParams::default() };
        let (g, _) = BaseMeasureG::stick_breaking(h.beta, 0.0, 1.0, 50, &mut rng).unwrap();
        let st = simulate_franchise(p, &dist, &h, &g, 3, &mut rng).unwrap();
        st.check_invariants().unwrap();
        let ones = st.restaurant.iter().filter(|&&r| r == Restaurant::One).count() as f64 / p as f64;
        let se = (h.rho1 * (1.0 - h.rho1) / p as f64).sqrt();
        assert!((ones - h.rho1).abs() < 3.0 * se, "freq {ones}");
    }

    #[test]
    fn single_customer_uses_first_customer_rule() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let h = HyperParams::default();
        let (g, _) = BaseMeasureG::stick_breaking(h.beta, 0.0, 1.0, 20, &mut rng).unwrap();
        let n = 20_000;
        let mut ones = 0;
        for _ in 0..n {
            let st = simulate_franchise(1, &[], &h, &g, 2, &mut rng).unwrap();
            if st.restaurant[0] == Restaurant::One {
                ones += 1;
            }
        }
        let f = ones as f64 / n as f64;
        assert!((f - 0.9).abs() < 4.0 * (0.09 / n as f64).sqrt());
    }

    #[test]
    fn invalid_affinity_propagates_from_simulation() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let h = HyperParams { eta: 0.5, ..HyperParams::default() };
        let (g, _) = BaseMeasureG::stick_breaking(h.beta, 0.0, 1.0, 20, &mut rng).unwrap();
        // a tiny gap makes exp(-e/eta) exceed gamma
        let dist = vec![0.001, 0.999];
        assert!(matches!(
            simulate_franchise(3, &dist, &h, &g, 2, &mut rng),
            Err(Error::Constraint(_))
        ));
    }

    #[test]
    fn stickiness_decreases_with_distance_scale() {
        fn lag1(s: &[Cuisine]) -> f64 {
            let x: Vec<f64> = s.iter().map(|c| c.index() as f64).collect();
            let m = crate::math::mean(&x);
            let var: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
            if var == 0.0 {
                return 0.0;
            }
            x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / var
        }
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let h = HyperParams { eta: 0.004, ..HyperParams::default() };
        let p = 200;
        let base = 1.0 / (p - 1) as f64;
        let mut acs = Vec::new();
        // gaps are not renormalized here: scaling all of them probes the decay
        for scale in [1.0, 2.0, 4.0] {
            let dist = vec![base * scale; p - 1];
            let mut total = 0.0;
            let reps = 200;
            for _ in 0..reps {
                let (g, _) = BaseMeasureG::stick_breaking(h.beta, 0.0, 1.0, 30, &mut rng).unwrap();
                let st = simulate_franchise(p, &dist, &h, &g, 3, &mut rng).unwrap();
                total += lag1(&st.cuisine);
            }
            acs.push(total / reps as f64);
        }
        assert!(acs[0] > 0.0);
        assert!(acs[0] > acs[1] && acs[1] > acs[2], "{acs:?}");
    }

    #[test]
    fn clusters_merge_tables_with_equal_dishes() {
        let mut st = FranchiseState::empty(4, 2);
        st.seat(0, Restaurant::One, Cuisine::NonDifferential, Seat::New(Dish::constant(3, 2)));
        st.seat(1, Restaurant::Two, Cuisine::NonDifferential, Seat::New(Dish::constant(3, 2)));
        st.seat(2, Restaurant::Two, Cuisine::Differential, Seat::New(Dish(vec![0, 1])));
        st.seat(3, Restaurant::Two, Cuisine::Differential, Seat::Existing(0));
        st.check_invariants().unwrap();
        let (c, q) = st.clusters();
        assert_eq!(c, vec![0, 0, 1, 1]);
        assert_eq!(q, 2);
        assert!(q <= st.total_tables() && st.total_tables() <= 4);
    }

    #[test]
    fn unseat_compacts_and_canonicalize_orders_by_first_customer() {
        let mut st = FranchiseState::empty(3, 2);
        st.seat(0, Restaurant::One, Cuisine::NonDifferential, Seat::New(Dish::constant(0, 2)));
        st.seat(1, Restaurant::One, Cuisine::NonDifferential, Seat::New(Dish::constant(1, 2)));
        st.seat(2, Restaurant::One, Cuisine::NonDifferential, Seat::New(Dish::constant(2, 2)));
        assert_eq!(st.unseat(0), Some(Dish::constant(0, 2)));
        assert_eq!(st.table[1..], [0, 1]);
        st.seat(0, Restaurant::One, Cuisine::NonDifferential, Seat::New(Dish::constant(0, 2)));
        st.canonicalize();
        assert_eq!(st.table, vec![0, 1, 2]);
        assert_eq!(st.sections[0][0].dish, Dish::constant(0, 2));
        st.check_invariants().unwrap();
    }

    proptest! {
        #[test]
        fn table_predictive_is_normalized(occ in prop::collection::vec(1usize..50, 0..12),
                                          alpha in 0.01f64..50.0, d in 0.0f64..0.99) {
            let probs = table_predictive(&occ, alpha, d).unwrap();
            prop_assert_eq!(probs.len(), occ.len() + 1);
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(probs.iter().all(|p| *p > 0.0));
            // unnormalized masses add up to the stated normalizer
            let total: usize = occ.iter().sum();
            let raw: f64 = occ.iter().map(|&c| c as f64 - d).sum::<f64>() + alpha + occ.len() as f64 * d;
            prop_assert!((raw - (total as f64 + alpha)).abs() < 1e-9);
        }

        #[test]
        fn probabilities_stay_in_open_unit_interval(rho1 in 0.5001f64..0.9999, gamma in 0.001f64..0.999,
                                                     frac in 0.0f64..0.999) {
            let h = hp(rho1, gamma);
            let r = frac * gamma;
            for s in Cuisine::ALL {
                let p = restaurant_prob(s, r, &h).unwrap();
                prop_assert!(p > 0.0 && p < 1.0);
            }
            for g in Restaurant::ALL {
                let q = cuisine_prob(g, &h);
                prop_assert!(q > 0.0 && q < 1.0);
            }
        }

        #[test]
        fn simulated_dishes_match_cuisines(seed in 0u64..500, eta in 0.0f64..0.004) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let h = HyperParams { eta, d2: 0.5, ..HyperParams::default() };
            let p = 40;
            let dist = vec![1.0 / (p - 1) as f64; p - 1];
            let (g, _) = BaseMeasureG::stick_breaking(2.0, 0.0, 1.0, 10, &mut rng).unwrap();
            let st = simulate_franchise(p, &dist, &h, &g, 3, &mut rng).unwrap();
            prop_assert!(st.check_invariants().is_ok());
            for (j, theta) in st.theta(&g).iter().enumerate() {
                let equal = theta.iter().all(|v| *v == theta[0]);
                prop_assert_eq!(equal, st.cuisine[j] == Cuisine::NonDifferential);
            }
            let (_, q) = st.clusters();
            prop_assert!(q <= st.total_tables() && st.total_tables() <= p);
        }
    }
}
