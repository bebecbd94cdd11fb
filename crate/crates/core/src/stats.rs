//! Small statistics toolkit: moments, correlation, the Kolmogorov-Smirnov
//! distance to the standard normal, and replica-level bootstrap.

use rand::Rng;

/// `Phi(x) = erfc(-x / sqrt 2) / 2`; `libm::erfc` is accurate to about one
/// ulp.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Pearson correlation; `None` when either sample is constant.
pub fn correlation(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `sup_x |F_n(x) - Phi(x)|` for the empirical distribution of `xs`.
pub fn ks_normal(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Standard errors of the statistics `stat` by resampling replicas with
/// replacement `resamples` times.
pub fn bootstrap_se<R: Rng + ?Sized>(
    n: usize,
    resamples: usize,
    rng: &mut R,
    mut stat: impl FnMut(&[usize]) -> Vec<f64>,
) -> Vec<f64> {
    let mut idx = vec![0usize; n];
    let mut sum: Vec<f64> = Vec::new();
    let mut sumsq: Vec<f64> = Vec::new();
    for _ in 0..resamples {
        for i in idx.iter_mut() {
            *i = rng.gen_range(0..n);
        }
        let s = stat(&idx);
        if sum.is_empty() {
            sum = vec![0.0; s.len()];
            sumsq = vec![0.0; s.len()];
        }
        for (j, x) in s.iter().enumerate() {
            sum[j] += x;
            sumsq[j] += x * x;
        }
    }
    let b = resamples as f64;
    sum.iter()
        .zip(&sumsq)
        .map(|(s, q)| ((q - s * s / b) / (b - 1.0)).max(0.0).sqrt())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((normal_cdf(-1.959_963_984_540_054) - 0.025).abs() < 1e-15);
        assert!((normal_cdf(-8.0) - 6.220_960_574_271_785e-16).abs() < 1e-25);
    }

    #[test]
    fn basic_moments() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&x), 2.5);
        assert!((variance(&x) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(median(&x), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert!((correlation(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(correlation(&x, &[1.0; 4]), None);
    }

    #[test]
    fn ks_on_normal_sample() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(ks_normal(&xs) < 0.015);
        let shifted: Vec<f64> = xs.iter().map(|x| x + 0.5).collect();
        assert!(ks_normal(&shifted) > 0.15);
        assert!((ks_normal(&[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_mean_se() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let se = bootstrap_se(xs.len(), 400, &mut rng, |idx| {
            vec![idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64]
        });
        let expected = 1.0 / 2000f64.sqrt();
        assert!((se[0] / expected - 1.0).abs() < 0.15, "{}", se[0]);
    }
}
