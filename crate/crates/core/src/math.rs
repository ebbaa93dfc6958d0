//! Small numeric helpers shared by the sampler and the statistics modules.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn logit(x: f64) -> f64 {
    (x / (1.0 - x)).ln()
}

pub fn inv_logit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `log(1 - exp(x))` for `x <= 0`, accurate near both ends.
pub fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `log(exp(a) - exp(b))` for `a >= b`.
pub fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + log1m_exp(b - a)
}

pub fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Draws an index with probability proportional to `exp(log_weights[i])`.
///
/// Entries equal to `-inf` are never selected. Returns `None` when every
/// weight is `-inf` or a weight is NaN.
pub fn sample_log_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Option<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || log_weights.iter().any(|w| w.is_nan()) {
        return None;
    }
    let total: f64 = log_weights.iter().map(|w| (w - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, w) in log_weights.iter().enumerate() {
        if *w == f64::NEG_INFINITY {
            continue;
        }
        let p = (w - max).exp();
        if u < p {
            return Some(i);
        }
        u -= p;
        last = Some(i);
    }
    last
}

/// Inverse-gamma draw with the shape/rate parametrization.
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("inverse-gamma parameters must be positive");
    1.0 / g.sample(rng)
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters must be positive")
        .sample(rng)
}

pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = alpha.iter().map(|&a| sample_gamma(a, 1.0, rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|d| *d /= total);
    draws
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Monte-Carlo standard error of the mean of an autocorrelated series using
/// non-overlapping batch means with `floor(sqrt(n))` batches.
pub fn batch_means_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let batches = (n as f64).sqrt().floor() as usize;
    let size = n / batches;
    if batches < 2 || size < 1 {
        return (sample_variance(xs) / n as f64).sqrt();
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| mean(&xs[b * size..(b + 1) * size]))
        .collect();
    (sample_variance(&means) / batches as f64).sqrt()
}

/// SplitMix64 step, used to derive independent child seeds from a base seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
