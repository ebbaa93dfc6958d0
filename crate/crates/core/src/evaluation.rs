//! ROC curves, (partial) areas under them and achieved false discovery rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point `(false positive rate, true positive rate)`.
pub type RocPoint = (f64, f64);

/// ROC curve from a threshold sweep over the distinct scores (higher means
/// more likely positive). Tied scores enter at one threshold. The curve
/// starts at `(0, 0)` and ends at `(1, 1)`.
pub fn roc_points(scores: &[f64], truth: &[bool]) -> Result<Vec<RocPoint>> {
    if scores.len() != truth.len() {
        return Err(Error::Argument("scores and truth differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("scores contain NaN".into()));
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument("ROC needs at least one positive and one negative".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under the whole curve.
pub fn auc(points: &[RocPoint]) -> f64 {
    auc_partial(points, 1.0)
}

/// Area over `FPR in [0, cap]`, interpolating linearly at the cap and scaled
/// by `1 / cap` so that a perfect classifier scores 1.
pub fn auc_partial(points: &[RocPoint], cap: f64) -> f64 {
    let mut area = 0.0;
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= cap {
            break;
        }
        if x1 <= cap {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_cap = y0 + (y1 - y0) * (cap - x0) / (x1 - x0);
            area += (cap - x0) * (y0 + y_cap) / 2.0;
            break;
        }
    }
    area / cap
}

/// Fraction of called probes that are not truly differential; 0 when nothing
/// is called.
pub fn achieved_fdr(called: &[bool], truth: &[bool]) -> f64 {
    let n_called = called.iter().filter(|&&c| c).count();
    if n_called == 0 {
        return 0.0;
    }
    let false_calls = called.iter().zip(truth).filter(|(&c, &t)| c && !t).count();
    false_calls as f64 / n_called as f64
}

/// Full, 20% and 10% areas for one score vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub auc: f64,
    pub auc20: f64,
    pub auc10: f64,
}

pub fn auc_summary(scores: &[f64], truth: &[bool]) -> Result<AucSummary> {
    let pts = roc_points(scores, truth)?;
    Ok(AucSummary {
        auc: auc(&pts),
        auc20: auc_partial(&pts, 0.2),
        auc10: auc_partial(&pts, 0.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn perfect_constant_and_reversed() {
        let truth = [true, true, false, false];
        let pts = roc_points(&[0.9, 0.8, 0.2, 0.1], &truth).unwrap();
        assert!(pts.contains(&(0.0, 1.0)));
        assert_eq!(auc(&pts), 1.0);
        assert_eq!(auc_partial(&pts, 0.2), 1.0);
        assert_eq!(auc_partial(&pts, 0.1), 1.0);
        let pts = roc_points(&[0.5; 4], &truth).unwrap();
        assert_eq!(pts, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auc(&pts), 0.5);
        let pts = roc_points(&[0.1, 0.2, 0.8, 0.9], &truth).unwrap();
        assert_eq!(auc(&pts), 0.0);
        assert!(roc_points(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn partial_area_interpolates_at_the_cap() {
        // diagonal: area under y = x on [0, 0.2] is 0.02, scaled by 5
        let pts = vec![(0.0, 0.0), (1.0, 1.0)];
        assert!((auc_partial(&pts, 0.2) - 0.1).abs() < 1e-15);
        assert!((auc_partial(&pts, 0.1) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn random_scores_give_half() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let truth: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.3)).collect();
        let a = auc(&roc_points(&scores, &truth).unwrap());
        assert!((a - 0.5).abs() < 0.02, "auc {a}");
    }

    #[test]
    fn achieved_fdr_examples() {
        assert_eq!(achieved_fdr(&[true, false, true], &[true, true, true]), 0.0);
        let mut called = vec![true; 10];
        called.push(false);
        let mut truth = vec![true; 9];
        truth.extend([false, false]);
        assert!((achieved_fdr(&called, &truth) - 0.1).abs() < 1e-15);
        assert_eq!(achieved_fdr(&[false, false], &[false, true]), 0.0);
    }

    proptest! {
        #[test]
        fn auc_is_invariant_to_increasing_transforms(
            data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..80)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let truth: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(truth.iter().any(|&t| t) && truth.iter().any(|&t| !t));
            let pts = roc_points(&scores, &truth).unwrap();
            let moved: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + s).collect();
            let pts2 = roc_points(&moved, &truth).unwrap();
            prop_assert!((auc(&pts) - auc(&pts2)).abs() < 1e-12);
            prop_assert_eq!(auc_partial(&pts, 1.0), auc(&pts));
            let a = auc(&pts);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn achieved_fdr_is_a_rate(calls in prop::collection::vec(any::<(bool, bool)>(), 0..50)) {
            let called: Vec<bool> = calls.iter().map(|c| c.0).collect();
            let truth: Vec<bool> = calls.iter().map(|c| c.1).collect();
            let f = achieved_fdr(&called, &truth);
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
