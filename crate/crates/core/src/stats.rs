//! Small numerical helpers shared by the models: normal log densities, a
//! tail-safe log normal CDF, lower-truncated normal draws, quantiles and
//! angle wrapping.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use std::f64::consts::{PI, SQRT_2};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Wrap an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a % two_pi;
    if r <= -PI {
        r += two_pi;
    } else if r > PI {
        r -= two_pi;
    }
    r
}

/// log N(x; mean, sd²).
#[inline]
pub fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// log Φ(x), accurate far into the lower tail.
pub fn ln_normal_cdf(x: f64) -> f64 {
    if x > -36.0 {
        let p = 0.5 * libm::erfc(-x / SQRT_2);
        if x > 5.0 {
            // Φ close to 1: log1p of the upper tail mass
            return (-0.5 * libm::erfc(x / SQRT_2)).ln_1p();
        }
        p.ln()
    } else {
        // Asymptotic Mills-ratio expansion.
        let z2 = x * x;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - LN_SQRT_2PI - (-x).ln() + series.ln()
    }
}

/// Φ(x).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Log density of N(mean, sd²) truncated to [lower, ∞), evaluated at x.
pub fn truncnorm_lower_ln_pdf(x: f64, mean: f64, sd: f64, lower: f64) -> f64 {
    if x < lower {
        return f64::NEG_INFINITY;
    }
    normal_ln_pdf(x, mean, sd) - ln_normal_cdf((mean - lower) / sd)
}

/// Draw from N(mean, sd²) truncated to [lower, ∞).
///
/// Plain rejection when the bound is below the mean region, exponential
/// proposal rejection in the far tail.
pub fn sample_truncnorm_lower<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, lower: f64) -> f64 {
    if sd <= 0.0 {
        return mean.max(lower);
    }
    let a = (lower - mean) / sd;
    let z = if a < 0.45 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z >= a {
                break z;
            }
        }
    } else {
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let e: f64 = Exp1.sample(rng);
            let z = a + e / lambda;
            let u: f64 = rng.random();
            if u <= (-0.5 * (z - lambda) * (z - lambda)).exp() {
                break z;
            }
        }
    };
    mean + sd * z
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (divisor n).
pub fn variance_pop(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (divisor n − 1).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Nearest-rank quantile: the ⌈q·n⌉-th smallest value (q = 0 gives the minimum).
pub fn quantile_nearest_rank(xs: &[f64], q: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = (q * v.len() as f64).ceil() as usize;
    Some(v[rank.clamp(1, v.len()) - 1])
}

/// Linearly interpolated quantile (type 7) of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, q)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Circular mean of angles (radians); 0 for an empty slice.
pub fn circular_mean(angles: &[f64]) -> f64 {
    if angles.is_empty() {
        return 0.0;
    }
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    s.atan2(c)
}

/// Median of a half-normal with the given scale.
pub fn half_normal_median(scale: f64) -> f64 {
    0.674_489_750_196_081_7 * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.3 + 4.0 * PI) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn ln_cdf_matches_reference_values() {
        // Φ(0) = 1/2, Φ(−1.96) ≈ 0.0249979, log Φ(−10) ≈ −53.231285
        assert!((ln_normal_cdf(0.0) - 0.5f64.ln()).abs() < 1e-14);
        assert!((ln_normal_cdf(-1.96) - 0.024_997_895_148_220_4f64.ln()).abs() < 1e-10);
        assert!((ln_normal_cdf(-10.0) + 53.231_285_150_512_3).abs() < 1e-8);
        // continuity across the asymptotic switch
        let a = ln_normal_cdf(-35.999_999);
        let b = ln_normal_cdf(-36.000_001);
        assert!((a - b).abs() < 1e-3, "{a} {b}");
        assert!(ln_normal_cdf(10.0) < 0.0 && ln_normal_cdf(10.0) > -1e-20);
    }

    #[test]
    fn truncnorm_density_at_mean() {
        // mean 10, sd 1, bound 0: φ(0)/(1 − Φ(−10))
        let d = truncnorm_lower_ln_pdf(10.0, 10.0, 1.0, 0.0).exp();
        assert!((d - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert_eq!(truncnorm_lower_ln_pdf(-0.1, 10.0, 1.0, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn truncnorm_samples_respect_bound_and_mean() {
        let mut rng = substream(3, &["tn"]);
        // far tail: bound 2 sd above mean; E[z | z > 2] = φ(2)/(1−Φ(2)) ≈ 2.373215
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample_truncnorm_lower(&mut rng, 0.0, 1.0, 2.0);
            assert!(x >= 2.0);
            sum += x;
        }
        assert!((sum / n as f64 - 2.373_215).abs() < 0.01);
    }

    #[test]
    fn nearest_rank_quantile() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile_nearest_rank(&xs, 0.8), Some(80.0));
        assert_eq!(quantile_nearest_rank(&xs, 0.0), Some(1.0));
        assert_eq!(quantile_nearest_rank(&xs, 1.0), Some(100.0));
        assert_eq!(quantile_nearest_rank(&[], 0.5), None);
    }
}
