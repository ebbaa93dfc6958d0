//! Posterior differential probabilities, Bayesian FDR calling and pairwise
//! treatment contrasts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::franchise::Cuisine;

/// Running posterior sums over stored MCMC draws: the differential-state
/// indicator and the treatment effects of every probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorAccumulator {
    pub p: usize,
    pub n_treatments: usize,
    pub n_samples: u64,
    pub diff_counts: Vec<u64>,
    /// Row-major `p x T` sums of `theta`.
    pub theta_sums: Vec<f64>,
}

impl PosteriorAccumulator {
    pub fn new(p: usize, n_treatments: usize) -> Self {
        PosteriorAccumulator {
            p,
            n_treatments,
            n_samples: 0,
            diff_counts: vec![0; p],
            theta_sums: vec![0.0; p * n_treatments],
        }
    }

    /// Adds one draw: states `s` and row-major `p x T` effects `theta`.
    pub fn add(&mut self, s: &[Cuisine], theta: &[f64]) {
        debug_assert_eq!(s.len(), self.p);
        debug_assert_eq!(theta.len(), self.p * self.n_treatments);
        self.n_samples += 1;
        for (c, st) in self.diff_counts.iter_mut().zip(s) {
            *c += st.is_differential() as u64;
        }
        for (acc, v) in self.theta_sums.iter_mut().zip(theta) {
            *acc += v;
        }
    }

    /// `omega_hat_j`: fraction of draws in which probe `j` is differential.
    pub fn omega_hat(&self) -> Result<Vec<f64>> {
        if self.n_samples == 0 {
            return Err(Error::Argument("no posterior draws stored".into()));
        }
        let n = self.n_samples as f64;
        Ok(self.diff_counts.iter().map(|&c| c as f64 / n).collect())
    }

    /// Posterior means of `theta`, one vector of length `T` per probe.
    pub fn theta_means(&self) -> Result<Vec<Vec<f64>>> {
        if self.n_samples == 0 {
            return Err(Error::Argument("no posterior draws stored".into()));
        }
        let n = self.n_samples as f64;
        Ok(self
            .theta_sums
            .chunks(self.n_treatments)
            .map(|row| row.iter().map(|v| v / n).collect())
            .collect())
    }
}

/// Differential probabilities from a list of state vectors.
pub fn estimate_diff_prob<S: AsRef<[Cuisine]>>(samples: &[S]) -> Result<Vec<f64>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Argument("empty posterior trace".into()))?;
    let p = first.as_ref().len();
    let mut counts = vec![0usize; p];
    for s in samples {
        let s = s.as_ref();
        if s.len() != p {
            return Err(Error::Argument("posterior draws have different lengths".into()));
        }
        for (c, st) in counts.iter_mut().zip(s) {
            *c += st.is_differential() as usize;
        }
    }
    let n = samples.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrCall {
    pub called: Vec<bool>,
    pub b_star: usize,
    /// Probe indices by decreasing `omega_hat`, ties by increasing index.
    pub order: Vec<usize>,
    /// `fdr_path[b - 1]`: expected FDR when calling the top `b` probes.
    pub fdr_path: Vec<f64>,
}

/// Calls the largest prefix of probes, ranked by `omega_hat`, whose posterior
/// expected FDR is strictly below `q0`.
pub fn fdr_call(omega_hat: &[f64], q0: f64) -> Result<FdrCall> {
    if !(q0 > 0.0 && q0 < 1.0) {
        return Err(Error::Argument(format!("q0 must lie in (0, 1), got {q0}")));
    }
    if omega_hat.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::Argument("omega_hat values must lie in [0, 1]".into()));
    }
    let mut order: Vec<usize> = (0..omega_hat.len()).collect();
    order.sort_by(|&a, &b| omega_hat[b].total_cmp(&omega_hat[a]).then(a.cmp(&b)));
    let mut fdr_path = Vec::with_capacity(order.len());
    let mut sum = 0.0;
    let mut b_star = 0;
    for (b, &j) in order.iter().enumerate() {
        sum += 1.0 - omega_hat[j];
        let fdr = sum / (b + 1) as f64;
        fdr_path.push(fdr);
        if fdr < q0 {
            b_star = b + 1;
        }
    }
    let mut called = vec![false; omega_hat.len()];
    for &j in &order[..b_star] {
        called[j] = true;
    }
    Ok(FdrCall {
        called,
        b_star,
        order,
        fdr_path,
    })
}

/// Largest posterior-mean contrast of a probe. Treatments are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRecord {
    pub probe: usize,
    /// Treatment with the larger mean.
    pub up: usize,
    /// Treatment with the smaller mean.
    pub down: usize,
    pub difference: f64,
}

fn max_pair(means: &[f64]) -> (usize, usize, f64) {
    let mut best = (0, 1, f64::NEG_INFINITY);
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            let d = (means[a] - means[b]).abs();
            if d > best.2 {
                best = (a, b, d);
            }
        }
    }
    let (a, b, d) = best;
    if means[b] > means[a] {
        (b + 1, a + 1, d)
    } else {
        (a + 1, b + 1, d)
    }
}

/// Maximal treatment contrast for every called probe.
pub fn pairwise_differences(theta_means: &[Vec<f64>], called: &[bool]) -> Result<Vec<PairwiseRecord>> {
    if theta_means.len() != called.len() {
        return Err(Error::Argument("theta means and calls differ in length".into()));
    }
    theta_means
        .iter()
        .zip(called)
        .enumerate()
        .filter(|(_, (_, &c))| c)
        .map(|(j, (means, _))| {
            if means.len() < 2 {
                return Err(Error::Argument("contrasts need at least two treatments".into()));
            }
            let (up, down, difference) = max_pair(means);
            Ok(PairwiseRecord {
                probe: j,
                up,
                down,
                difference,
            })
        })
        .collect()
}

/// Per-probe detection results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub omega_hat: Vec<f64>,
    pub called: Vec<bool>,
    pub b_star: usize,
    pub q0: f64,
    /// Contrast of every probe (reported for called and uncalled probes alike).
    pub contrasts: Vec<PairwiseRecord>,
}

impl PosteriorSummary {
    pub fn from_accumulator(acc: &PosteriorAccumulator, q0: f64) -> Result<Self> {
        let omega_hat = acc.omega_hat()?;
        let call = fdr_call(&omega_hat, q0)?;
        let means = acc.theta_means()?;
        let contrasts = pairwise_differences(&means, &vec![true; means.len()])?;
        Ok(PosteriorSummary {
            omega_hat,
            called: call.called,
            b_star: call.b_star,
            q0,
            contrasts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Cuisine::{Differential as D, NonDifferential as N};

    #[test]
    fn omega_hat_examples() {
        assert_eq!(estimate_diff_prob(&[vec![D, N], vec![D, N]]).unwrap(), vec![1.0, 0.0]);
        let samples: Vec<Vec<Cuisine>> = (0..100).map(|i| vec![if i < 30 { D } else { N }]).collect();
        assert!((estimate_diff_prob(&samples).unwrap()[0] - 0.3).abs() < 1e-15);
        let one = estimate_diff_prob(&[vec![D, N, D]]).unwrap();
        assert!(one.iter().all(|w| *w == 0.0 || *w == 1.0));
        assert!(estimate_diff_prob::<Vec<Cuisine>>(&[]).is_err());
    }

    #[test]
    fn accumulator_matches_direct_estimate() {
        let draws = [vec![D, N], vec![N, N], vec![D, D]];
        let mut acc = PosteriorAccumulator::new(2, 2);
        for (k, s) in draws.iter().enumerate() {
            acc.add(s, &[k as f64, 0.0, 1.0, 2.0]);
        }
        assert_eq!(acc.omega_hat().unwrap(), estimate_diff_prob(&draws).unwrap());
        assert_eq!(acc.theta_means().unwrap(), vec![vec![1.0, 0.0], vec![1.0, 2.0]]);
    }

    #[test]
    fn fdr_worked_example() {
        let c = fdr_call(&[0.9, 0.8, 0.4], 0.2).unwrap();
        let expected = [0.1, 0.15, 0.3];
        for (a, b) in c.fdr_path.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(c.b_star, 2);
        assert_eq!(c.called, vec![true, true, false]);
    }

    #[test]
    fn fdr_edge_cases() {
        let c = fdr_call(&[1.0; 4], 0.05).unwrap();
        assert_eq!(c.b_star, 4);
        assert!(c.fdr_path.iter().all(|f| *f == 0.0));
        let c = fdr_call(&[0.5], 0.05).unwrap();
        assert_eq!(c.b_star, 0);
        assert_eq!(c.called, vec![false]);
        assert!(fdr_call(&[1.2], 0.05).is_err());
    }

    #[test]
    fn fdr_takes_largest_qualifying_prefix() {
        // sorted omega 1, 1, 0.4: path 0, 0, 0.2
        let c = fdr_call(&[1.0, 0.4, 1.0], 0.25).unwrap();
        assert_eq!(c.order, vec![0, 2, 1]);
        assert!((c.fdr_path[2] - 0.2).abs() < 1e-12);
        assert_eq!(c.b_star, 3);
        let c = fdr_call(&[1.0, 0.0, 0.4, 1.0, 1.0, 1.0], 0.2).unwrap();
        // sorted: 1,1,1,1,0.4,0.0 -> path 0,0,0,0,0.12,0.2666
        assert_eq!(c.b_star, 5);
    }

    #[test]
    fn ties_break_by_index() {
        let c = fdr_call(&[0.7, 0.9, 0.7, 0.9], 0.5).unwrap();
        assert_eq!(c.order, vec![1, 3, 0, 2]);
    }

    #[test]
    fn pairwise_examples() {
        let r = pairwise_differences(&[vec![1.0, -1.0]], &[true]).unwrap();
        assert_eq!((r[0].up, r[0].down, r[0].difference), (1, 2, 2.0));
        let r = pairwise_differences(&[vec![0.5; 3]], &[true]).unwrap();
        assert_eq!((r[0].up, r[0].down, r[0].difference), (1, 2, 0.0));
        let r = pairwise_differences(&[vec![0.0, 0.2, 0.9, 0.1]], &[true]).unwrap();
        assert_eq!((r[0].up, r[0].down), (3, 1));
        assert!((r[0].difference - 0.9).abs() < 1e-15);
        let r = pairwise_differences(&[vec![0.0, 1.0], vec![2.0, 0.0]], &[false, true]).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].probe, 1);
    }

    proptest! {
        #[test]
        fn calls_are_a_top_prefix(omega in prop::collection::vec(0.0f64..=1.0, 1..60), q0 in 0.01f64..0.99) {
            let c = fdr_call(&omega, q0).unwrap();
            prop_assert_eq!(c.called.iter().filter(|&&x| x).count(), c.b_star);
            let min_called = omega.iter().zip(&c.called).filter(|(_, &k)| k).map(|(w, _)| *w).fold(f64::INFINITY, f64::min);
            let max_uncalled = omega.iter().zip(&c.called).filter(|(_, &k)| !k).map(|(w, _)| *w).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(c.b_star == 0 || c.b_star == omega.len() || min_called >= max_uncalled);
        }

        #[test]
        fn b_star_is_monotone_in_q0(omega in prop::collection::vec(0.0f64..=1.0, 1..60), q_a in 0.01f64..0.99, q_b in 0.01f64..0.99) {
            let (lo, hi) = if q_a < q_b { (q_a, q_b) } else { (q_b, q_a) };
            prop_assert!(fdr_call(&omega, lo).unwrap().b_star <= fdr_call(&omega, hi).unwrap().b_star);
        }

        #[test]
        fn relabeling_probes_permutes_calls(omega in prop::collection::vec(0.0f64..=1.0, 2..30), q0 in 0.01f64..0.99) {
            // reversing identifiers changes only the tie-break order
            let base = fdr_call(&omega, q0).unwrap();
            let rev: Vec<f64> = omega.iter().rev().copied().collect();
            let other = fdr_call(&rev, q0).unwrap();
            prop_assert_eq!(base.b_star, other.b_star);
            for (a, b) in base.fdr_path.iter().zip(&other.fdr_path) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
