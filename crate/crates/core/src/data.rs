//! Observed-data types: methylation proportions, their logit transform and
//! normalized inter-probe distances.

use crate::error::{Error, Result};
use crate::math::logit;

pub const DEFAULT_CLAMP_EPS: f64 = 1e-6;

/// An `n x p` matrix of methylation proportions (samples in rows, probes in
/// columns) together with treatment labels and probe coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major `n x p` proportions in `[0, 1]`.
    pub values: Vec<f64>,
    pub n: usize,
    pub p: usize,
    /// Treatment label of each sample, in `1..=T`.
    pub treatments: Vec<usize>,
    /// Genomic coordinate of each probe, strictly increasing.
    pub positions: Vec<u64>,
    pub probe_ids: Vec<String>,
    pub sample_ids: Vec<String>,
    /// Free-form tag such as a gene name.
    pub meta: String,
}

impl Dataset {
    pub fn new(
        values: Vec<f64>,
        n: usize,
        p: usize,
        treatments: Vec<usize>,
        positions: Vec<u64>,
    ) -> Result<Self> {
        let probe_ids = (0..p).map(|j| format!("cg{:06}", j + 1)).collect();
        let sample_ids = (0..n).map(|i| format!("s{:04}", i + 1)).collect();
        let ds = Dataset {
            values,
            n,
            p,
            treatments,
            positions,
            probe_ids,
            sample_ids,
            meta: String::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_ids(mut self, probe_ids: Vec<String>, sample_ids: Vec<String>) -> Result<Self> {
        self.probe_ids = probe_ids;
        self.sample_ids = sample_ids;
        self.validate()?;
        Ok(self)
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p + j]
    }

    /// Number of treatment groups `T` (the largest label).
    pub fn n_treatments(&self) -> usize {
        self.treatments.iter().copied().max().unwrap_or(0)
    }

    /// Proportions of probe `j`, one per sample.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.value(i, j)).collect()
    }

    /// Checks shapes, value ranges, treatment coverage and position ordering.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::Structure("dataset must have at least one sample and one probe".into()));
        }
        if self.values.len() != self.n * self.p {
            return Err(Error::Structure(format!(
                "value matrix has {} entries, expected {} x {}",
                self.values.len(),
                self.n,
                self.p
            )));
        }
        if self.treatments.len() != self.n {
            return Err(Error::Structure(format!(
                "{} treatment labels for {} samples",
                self.treatments.len(),
                self.n
            )));
        }
        if self.positions.len() != self.p || self.probe_ids.len() != self.p {
            return Err(Error::Structure("positions and probe ids must have one entry per probe".into()));
        }
        if self.sample_ids.len() != self.n {
            return Err(Error::Structure("sample ids must have one entry per sample".into()));
        }
        if let Some((k, w)) = self
            .positions
            .windows(2)
            .enumerate()
            .find(|(_, w)| w[1] <= w[0])
        {
            return Err(Error::Structure(format!(
                "positions must be strictly increasing: probe {} at {} follows {}",
                self.probe_ids[k + 1],
                w[1],
                w[0]
            )));
        }
        let t = self.n_treatments();
        if self.treatments.contains(&0) {
            return Err(Error::Structure("treatment labels start at 1".into()));
        }
        let mut seen = vec![false; t];
        for &label in &self.treatments {
            seen[label - 1] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Structure(format!("treatment {} has no samples", missing + 1)));
        }
        if let Some(bad) = self.values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Structure(format!(
                "value {} at sample {}, probe {} is not a proportion",
                self.values[bad],
                bad / self.p + 1,
                bad % self.p + 1
            )));
        }
        Ok(())
    }
}

/// Logit-scale observations and normalized distances consumed by the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitData {
    /// Row-major `n x p` logits.
    pub z: Vec<f64>,
    pub n: usize,
    pub p: usize,
    /// Zero-based treatment index of each sample.
    pub treatment: Vec<usize>,
    pub n_treatments: usize,
    /// `p - 1` positive gaps summing to one (empty when `p == 1`).
    pub distances: Vec<f64>,
}

impl LogitData {
    /// Builds logit data directly, checking the same invariants as
    /// [`logit_transform`]. `treatment` is zero-based.
    pub fn new(z: Vec<f64>, n: usize, p: usize, treatment: Vec<usize>, distances: Vec<f64>) -> Result<Self> {
        let n_treatments = treatment.iter().copied().max().map_or(0, |m| m + 1);
        let data = LogitData {
            z,
            n,
            p,
            treatment,
            n_treatments,
            distances,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn z(&self, i: usize, j: usize) -> f64 {
        self.z[i * self.p + j]
    }

    /// Number of samples in each treatment.
    pub fn treatment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_treatments];
        for &t in &self.treatment {
            sizes[t] += 1;
        }
        sizes
    }

    /// Smallest normalized gap, or `1.0` for a single probe.
    pub fn min_distance(&self) -> f64 {
        self.distances.iter().copied().fold(1.0, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        if self.z.len() != self.n * self.p || self.treatment.len() != self.n {
            return Err(Error::Structure("logit matrix shape mismatch".into()));
        }
        if self.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Structure("logit values must be finite".into()));
        }
        if self.p >= 1 && self.distances.len() != self.p - 1 {
            return Err(Error::Structure(format!(
                "expected {} distances, got {}",
                self.p - 1,
                self.distances.len()
            )));
        }
        if self.distances.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Structure("distances must be positive".into()));
        }
        if !self.distances.is_empty() {
            let total: f64 = self.distances.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Structure(format!("distances sum to {total}, expected 1")));
            }
        }
        let sizes = self.treatment_sizes();
        if let Some(t) = sizes.iter().position(|&c| c == 0) {
            return Err(Error::Structure(format!("treatment {} has no samples", t + 1)));
        }
        Ok(())
    }
}

/// Gaps between consecutive positions divided by the total span.
pub fn normalize_distances(positions: &[u64]) -> Result<Vec<f64>> {
    if positions.len() < 2 {
        return Err(Error::Argument("at least two positions are needed".into()));
    }
    if let Some(w) = positions.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Structure(format!(
            "positions must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    let span = (positions[positions.len() - 1] - positions[0]) as f64;
    Ok(positions
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 / span)
        .collect())
}

/// Clamps proportions into `[eps, 1 - eps]`, applies the logit and normalizes
/// the inter-probe distances.
pub fn logit_transform(data: &Dataset, clamp_eps: f64) -> Result<LogitData> {
    if !(clamp_eps > 0.0 && clamp_eps <= 0.01) {
        return Err(Error::Argument(format!("clamp_eps must lie in (0, 0.01], got {clamp_eps}")));
    }
    data.validate()?;
    let z = data
        .values
        .iter()
        .map(|&x| logit(x.clamp(clamp_eps, 1.0 - clamp_eps)))
        .collect();
    let distances = if data.p >= 2 {
        normalize_distances(&data.positions)?
    } else {
        Vec::new()
    };
    LogitData::new(
        z,
        data.n,
        data.p,
        data.treatments.iter().map(|t| t - 1).collect(),
        distances,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::inv_logit;
    use proptest::prelude::*;

    fn tiny(values: Vec<f64>, positions: Vec<u64>) -> Dataset {
        let p = positions.len();
        let n = values.len() / p;
        let treatments = (0..n).map(|i| i % 2 + 1).collect();
        Dataset::new(values, n, p, treatments, positions).unwrap()
    }

    #[test]
    fn logit_of_known_points() {
        let ds = tiny(vec![0.5, 0.8, 0.0, 0.5, 0.8, 0.0], vec![0, 1, 2]);
        let lg = logit_transform(&ds, 1e-6).unwrap();
        assert_eq!(lg.z(0, 0), 0.0);
        assert!((lg.z(0, 1) - 4.0_f64.ln()).abs() < 1e-12);
        let expected = (1e-6_f64 / (1.0 - 1e-6)).ln();
        assert!((lg.z(0, 2) - expected).abs() < 1e-12);
        assert!((lg.z(0, 2) + 13.8155).abs() < 1e-4);
    }

    #[test]
    fn distance_examples() {
        let d = normalize_distances(&[0, 1, 2, 3]).unwrap();
        for x in d {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(normalize_distances(&[0, 10]).unwrap(), vec![1.0]);
        let d = normalize_distances(&[0, 2, 10]).unwrap();
        assert!((d[0] - 0.2).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn duplicate_positions_are_structural_errors() {
        assert!(matches!(normalize_distances(&[0, 5, 5]), Err(Error::Structure(_))));
        let res = Dataset::new(vec![0.5; 4], 2, 2, vec![1, 2], vec![3, 3]);
        assert!(matches!(res, Err(Error::Structure(_))));
    }

    #[test]
    fn empty_treatment_group_is_rejected() {
        let res = Dataset::new(vec![0.5; 4], 2, 2, vec![1, 3], vec![1, 2]);
        assert!(matches!(res, Err(Error::Structure(_))));
    }

    #[test]
    fn clamp_eps_domain() {
        let ds = tiny(vec![0.5; 4], vec![1, 2]);
        assert!(logit_transform(&ds, 0.0).is_err());
        assert!(logit_transform(&ds, 0.02).is_err());
        assert!(logit_transform(&ds, 0.01).is_ok());
    }

    proptest! {
        #[test]
        fn logit_roundtrip_recovers_clamped_values(xs in prop::collection::vec(0.0f64..=1.0, 4..40)) {
            let p = 2;
            let n = xs.len() / p;
            let values = xs[..n * p].to_vec();
            let treatments = (0..n).map(|i| i % 2 + 1).collect();
            let ds = Dataset::new(values.clone(), n, p, treatments, vec![10, 20]).unwrap();
            let eps = 1e-6;
            let lg = logit_transform(&ds, eps).unwrap();
            for (x, z) in values.iter().zip(&lg.z) {
                prop_assert!((inv_logit(*z) - x.clamp(eps, 1.0 - eps)).abs() < 1e-12);
            }
        }

        #[test]
        fn distances_are_scale_invariant(gaps in prop::collection::vec(1u64..1000, 1..30), c in 1u64..50) {
            let mut pos = vec![100u64];
            for g in &gaps {
                pos.push(pos.last().unwrap() + g);
            }
            let scaled: Vec<u64> = pos.iter().map(|x| x * c).collect();
            let a = normalize_distances(&pos).unwrap();
            let b = normalize_distances(&scaled).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
