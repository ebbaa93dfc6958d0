//! Per-probe one-way ANOVA and Kruskal-Wallis tests with Benjamini-Hochberg
//! adjustment.

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Result of a single test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn group_sizes(labels: &[usize], n_groups: usize) -> Vec<usize> {
    let mut sizes = vec![0usize; n_groups];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

/// One-way ANOVA of `values` grouped by zero-based `labels`.
///
/// A probe without any variation gets `F = 0, p = 1`; a probe with
/// between-group but no within-group variation gets `F = inf, p = 0`.
pub fn anova(values: &[f64], labels: &[usize], n_groups: usize) -> Result<TestResult> {
    let n = values.len();
    if labels.len() != n || n_groups < 2 {
        return Err(Error::Argument("ANOVA needs one label per value and at least two groups".into()));
    }
    if n <= n_groups {
        return Err(Error::Argument("ANOVA needs more samples than groups".into()));
    }
    let sizes = group_sizes(labels, n_groups);
    if sizes.contains(&0) {
        return Err(Error::Argument("every group needs at least one sample".into()));
    }
    let mut sums = vec![0.0; n_groups];
    for (&v, &l) in values.iter().zip(labels) {
        sums[l] += v;
    }
    let grand = sums.iter().sum::<f64>() / n as f64;
    let means: Vec<f64> = sums.iter().zip(&sizes).map(|(s, &c)| s / c as f64).collect();
    let ssb: f64 = means.iter().zip(&sizes).map(|(m, &c)| c as f64 * (m - grand).powi(2)).sum();
    let ssw: f64 = values.iter().zip(labels).map(|(v, &l)| (v - means[l]).powi(2)).sum();
    // relative tolerance against rounding of identical values
    let scale = values.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let tiny = 1e-24 * scale;
    let df1 = (n_groups - 1) as f64;
    let df2 = (n - n_groups) as f64;
    if ssw <= tiny {
        return Ok(if ssb <= tiny {
            TestResult { statistic: 0.0, p_value: 1.0 }
        } else {
            TestResult { statistic: f64::INFINITY, p_value: 0.0 }
        });
    }
    let f = (ssb / df1) / (ssw / df2);
    let dist = FisherSnedecor::new(df1, df2).map_err(|e| Error::Argument(e.to_string()))?;
    Ok(TestResult {
        statistic: f,
        p_value: dist.sf(f).clamp(0.0, 1.0),
    })
}

/// Mid-ranks (1-based) of `values`.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut k = i;
        while k + 1 < order.len() && values[order[k + 1]] == values[order[i]] {
            k += 1;
        }
        let r = (i + k) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=k] {
            ranks[idx] = r;
        }
        i = k + 1;
    }
    ranks
}

/// Kruskal-Wallis H test with tie correction. All-tied input gives `p = 1`.
pub fn kruskal_wallis(values: &[f64], labels: &[usize], n_groups: usize) -> Result<TestResult> {
    let n = values.len();
    if labels.len() != n || n_groups < 2 || n < 2 {
        return Err(Error::Argument("Kruskal-Wallis needs labelled values and at least two groups".into()));
    }
    let sizes = group_sizes(labels, n_groups);
    if sizes.contains(&0) {
        return Err(Error::Argument("every group needs at least one sample".into()));
    }
    let ranks = mid_ranks(values);
    let mut rank_sums = vec![0.0; n_groups];
    for (r, &l) in ranks.iter().zip(labels) {
        rank_sums[l] += r;
    }
    let nf = n as f64;
    let h_raw = 12.0 / (nf * (nf + 1.0))
        * rank_sums.iter().zip(&sizes).map(|(s, &c)| s * s / c as f64).sum::<f64>()
        - 3.0 * (nf + 1.0);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut k = i;
        while k + 1 < n && sorted[k + 1] == sorted[i] {
            k += 1;
        }
        let t = (k - i + 1) as f64;
        ties += t * t * t - t;
        i = k + 1;
    }
    let correction = 1.0 - ties / (nf * nf * nf - nf);
    if correction <= 0.0 {
        return Ok(TestResult { statistic: 0.0, p_value: 1.0 });
    }
    let h = (h_raw / correction).max(0.0);
    let dist = ChiSquared::new((n_groups - 1) as f64).map_err(|e| Error::Argument(e.to_string()))?;
    Ok(TestResult {
        statistic: h,
        p_value: dist.sf(h).clamp(0.0, 1.0),
    })
}

fn per_probe<F>(data: &Dataset, test: F) -> Result<Vec<TestResult>>
where
    F: Fn(&[f64], &[usize], usize) -> Result<TestResult> + Sync,
{
    let t = data.n_treatments();
    if t < 2 {
        return Err(Error::Argument("at least two treatments are required".into()));
    }
    let labels: Vec<usize> = data.treatments.iter().map(|l| l - 1).collect();
    if group_sizes(&labels, t).iter().any(|&c| c < 2) {
        return Err(Error::Argument("every treatment needs at least two samples".into()));
    }
    (0..data.p)
        .into_par_iter()
        .map(|j| test(&data.column(j), &labels, t))
        .collect()
}

/// ANOVA p-values of every probe on the proportion scale.
pub fn anova_pvalues(data: &Dataset) -> Result<Vec<f64>> {
    Ok(per_probe(data, anova)?.into_iter().map(|r| r.p_value).collect())
}

pub fn kruskal_wallis_pvalues(data: &Dataset) -> Result<Vec<f64>> {
    Ok(per_probe(data, kruskal_wallis)?.into_iter().map(|r| r.p_value).collect())
}

/// Full per-probe statistics for both tests.
pub fn probe_tests(data: &Dataset) -> Result<(Vec<TestResult>, Vec<TestResult>)> {
    Ok((per_probe(data, anova)?, per_probe(data, kruskal_wallis)?))
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn bh_adjust(pvalues: &[f64]) -> Vec<f64> {
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0_f64;
    for rank in (0..m).rev() {
        let idx = order[rank];
        running = running.min(pvalues[idx] * m as f64 / (rank + 1) as f64);
        adjusted[idx] = running.min(1.0);
    }
    adjusted
}
