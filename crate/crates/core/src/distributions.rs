//! Seedable sampling primitives and log-densities used by the Gibbs kernels.
//!
//! Gamma is parameterized by (shape, rate) everywhere; the inverse gamma by
//! (shape, scale). Every density is evaluated in log space.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("parameter `{name}` out of domain: {value}")]
    ParameterDomain { name: &'static str, value: f64 },
    #[error("weight vector has no strictly positive entry")]
    DegenerateWeights,
}

fn require_positive(name: &'static str, value: f64) -> Result<(), DistributionError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DistributionError::ParameterDomain { name, value })
    }
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id mapped onto the cipher's stream
/// counter, so distinct ids give non-overlapping keystreams for one seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Draw from Gamma(shape, rate); the mean is `shape / rate`.
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut RngStream) -> Result<f64, DistributionError> {
    require_positive("shape", shape)?;
    require_positive("rate", rate)?;
    let gamma =
        Gamma::new(shape, 1.0 / rate).map_err(|_| DistributionError::ParameterDomain { name: "rate", value: rate })?;
    // Small shapes can underflow to exactly zero; keep the support open.
    Ok(gamma.sample(rng).max(f64::MIN_POSITIVE))
}

/// Draw from Beta(a, b), clamped into the open unit interval.
pub fn sample_beta(a: f64, b: f64, rng: &mut RngStream) -> Result<f64, DistributionError> {
    require_positive("a", a)?;
    require_positive("b", b)?;
    // Ratio of gammas keeps full precision near both ends of (0, 1).
    let x = sample_gamma(a, 1.0, rng)?;
    let y = sample_gamma(b, 1.0, rng)?;
    let draw = x / (x + y);
    Ok(draw.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

/// Draw from Inv-Gamma(shape, scale): the reciprocal of Gamma(shape, rate = scale).
pub fn sample_inverse_gamma(shape: f64, scale: f64, rng: &mut RngStream) -> Result<f64, DistributionError> {
    require_positive("shape", shape)?;
    require_positive("scale", scale)?;
    let g = sample_gamma(shape, scale, rng)?;
    Ok(1.0 / g)
}

pub fn sample_standard_normal(rng: &mut RngStream) -> f64 {
    rng.sample(StandardNormal)
}

pub fn sample_bernoulli(p_one: f64, rng: &mut RngStream) -> bool {
    rng.random::<f64>() < p_one
}

/// Multinomial draw written into `out`; weights are normalized internally.
pub fn sample_multinomial_into(
    total: u32,
    weights: &[f64],
    out: &mut [u32],
    rng: &mut RngStream,
) -> Result<(), DistributionError> {
    debug_assert_eq!(weights.len(), out.len());
    let mut remaining_weight: f64 = weights.iter().sum();
    if !(remaining_weight > 0.0) || !weights.iter().all(|w| *w >= 0.0) {
        return Err(DistributionError::DegenerateWeights);
    }
    out.fill(0);
    let mut remaining = total;
    let last_positive = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
    for (k, &w) in weights.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k == last_positive {
            out[k] = remaining;
            break;
        }
        if w > 0.0 {
            let p = (w / remaining_weight).min(1.0);
            let draw = if remaining == 1 {
                u32::from(rng.random::<f64>() < p)
            } else {
                Binomial::new(u64::from(remaining), p)
                    .map_err(|_| DistributionError::ParameterDomain { name: "p", value: p })?
                    .sample(rng) as u32
            };
            out[k] = draw;
            remaining -= draw;
        }
        remaining_weight -= w;
        if remaining_weight <= 0.0 {
            // Rounding left no mass for the tail; give what is left to the last positive cell.
            out[last_positive] += remaining;
            break;
        }
    }
    Ok(())
}

pub fn sample_multinomial(total: u32, weights: &[f64], rng: &mut RngStream) -> Result<Vec<u32>, DistributionError> {
    let mut out = vec![0; weights.len()];
    sample_multinomial_into(total, weights, &mut out, rng)?;
    Ok(out)
}

/// Side of zero a truncated normal draw is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationSide {
    Positive,
    Negative,
}

/// Draw from N(mean, 1) restricted to one side of zero.
///
/// Uses plain rejection while the acceptance rate is at least one half and
/// Robert's translated-exponential proposal in the tail, so the expected
/// number of proposals stays bounded for every mean.
pub fn sample_truncated_normal(mean: f64, side: TruncationSide, rng: &mut RngStream) -> f64 {
    match side {
        TruncationSide::Positive => mean + standard_normal_above(-mean, rng),
        TruncationSide::Negative => -(-mean + standard_normal_above(mean, rng)),
    }
}

/// Standard normal conditioned on exceeding `lower`.
fn standard_normal_above(lower: f64, rng: &mut RngStream) -> f64 {
    if lower <= 0.0 {
        loop {
            let x = sample_standard_normal(rng);
            if x > lower {
                return x;
            }
        }
    }
    let lambda = 0.5 * (lower + (lower * lower + 4.0).sqrt());
    loop {
        let u: f64 = rng.random();
        let x = lower - (1.0 - u).ln() / lambda;
        let accept = (-0.5 * (x - lambda) * (x - lambda)).exp();
        if rng.random::<f64>() <= accept && x > lower {
            return x;
        }
    }
}

/// Draw an index from unnormalized log-weights.
pub fn sample_categorical_log(log_weights: &[f64], rng: &mut RngStream) -> usize {
    let probs = normalize_log_weights(log_weights);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (l, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return l;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Exponentiate and normalize log-weights with the log-sum-exp shift.
pub fn normalize_log_weights(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `m ln(lambda) - lambda - ln(m!)`.
pub fn log_poisson_pmf(m: u32, lambda: f64) -> Result<f64, DistributionError> {
    require_positive("lambda", lambda)?;
    if m == 0 {
        return Ok(-lambda);
    }
    Ok(f64::from(m) * lambda.ln() - lambda - ln_factorial(u64::from(m)))
}

/// Gamma(shape, rate) log-density.
pub fn log_gamma_pdf(x: f64, shape: f64, rate: f64) -> Result<f64, DistributionError> {
    require_positive("x", x)?;
    require_positive("shape", shape)?;
    require_positive("rate", rate)?;
    Ok(shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x)
}

/// Inv-Gamma(shape, scale) log-density.
pub fn log_inverse_gamma_pdf(x: f64, shape: f64, scale: f64) -> Result<f64, DistributionError> {
    require_positive("x", x)?;
    require_positive("shape", shape)?;
    require_positive("scale", scale)?;
    Ok(shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x)
}

pub fn log_beta_pdf(x: f64, a: f64, b: f64) -> Result<f64, DistributionError> {
    require_positive("a", a)?;
    require_positive("b", b)?;
    if !(x > 0.0 && x < 1.0) {
        return Err(DistributionError::ParameterDomain { name: "x", value: x });
    }
    let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    Ok((a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta)
}

/// Log-density of N(mean, variance).
pub fn log_normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / variance - 0.5 * variance.ln() - LN_SQRT_2PI
}

/// Standard normal CDF via the complementary error function.
///
/// Stays strictly positive down to roughly -37.5 before underflowing.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `ln Phi(x)`, finite for every finite `x`.
pub fn log_standard_normal_cdf(x: f64) -> f64 {
    if x > 0.0 {
        return (-standard_normal_cdf(-x)).ln_1p();
    }
    if x > -30.0 {
        return standard_normal_cdf(x).ln();
    }
    // Asymptotic Mills-ratio expansion; relative error below 1e-12 for x <= -30.
    let x2 = x * x;
    let inv = 1.0 / x2;
    let series = 1.0 - inv + 3.0 * inv * inv - 15.0 * inv * inv * inv + 105.0 * inv.powi(4);
    -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn moments(draws: &[f64]) -> (f64, f64) {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn same_stream_reproduces() {
        let mut a = RngStream::new(11, 3);
        let mut b = RngStream::new(11, 3);
        let xa: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xa, xb);
        let mut c = RngStream::new(11, 4);
        assert_ne!(xa[0], c.next_u64());
    }

    #[test]
    fn domain_errors() {
        let mut rng = RngStream::new(1, 0);
        assert!(sample_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_gamma(1.0, -1.0, &mut rng).is_err());
        assert!(sample_beta(1.0, 0.0, &mut rng).is_err());
        assert!(sample_inverse_gamma(-2.0, 1.0, &mut rng).is_err());
        assert!(log_poisson_pmf(1, 0.0).is_err());
        assert!(log_gamma_pdf(0.0, 1.0, 1.0).is_err());
        assert_eq!(sample_multinomial(3, &[0.0, 0.0], &mut rng), Err(DistributionError::DegenerateWeights));
    }

    #[test]
    fn multinomial_edge_cases() {
        let mut rng = RngStream::new(5, 0);
        assert_eq!(sample_multinomial(7, &[0.3], &mut rng).unwrap(), vec![7]);
        assert_eq!(sample_multinomial(0, &[1.0, 2.0, 3.0], &mut rng).unwrap(), vec![0, 0, 0]);
        for _ in 0..200 {
            let draw = sample_multinomial(13, &[0.0, 2.0, 0.0, 1.0, 0.0], &mut rng).unwrap();
            assert_eq!(draw.iter().sum::<u32>(), 13);
            assert_eq!(draw[0] + draw[2] + draw[4], 0);
        }
    }

    #[test]
    fn multinomial_proportion() {
        let mut rng = RngStream::new(6, 0);
        let draw = sample_multinomial(100_000, &[1.0, 3.0], &mut rng).unwrap();
        let frac = f64::from(draw[0]) / 1e5;
        assert!((frac - 0.25).abs() < 0.005, "{frac}");
    }

    #[test]
    fn poisson_pmf_values() {
        assert_abs_diff_eq!(log_poisson_pmf(0, 2.5).unwrap(), -2.5, epsilon = 1e-15);
        let expected = 3.0 * 2f64.ln() - 2.0 - 6f64.ln();
        assert_abs_diff_eq!(log_poisson_pmf(3, 2.0).unwrap(), expected, epsilon = 1e-12);
        // Stirling: ln(500^500 e^-500 / 500!) ~ -ln sqrt(2 pi 500)
        let stirling = -(2.0 * PI * 500.0).sqrt().ln();
        assert_abs_diff_eq!(log_poisson_pmf(500, 500.0).unwrap(), stirling, epsilon = 1e-3);
    }

    #[test]
    fn poisson_pmf_normalizes() {
        for lambda in [0.1, 1.0, 4.5, 10.0, 20.0] {
            let upper = (lambda + 20.0 * f64::sqrt(lambda)).ceil() as u32;
            let total: f64 = (0..=upper).map(|m| log_poisson_pmf(m, lambda).unwrap().exp()).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn gamma_pdf_values() {
        assert_abs_diff_eq!(log_gamma_pdf(1.0, 1.0, 1.0).unwrap(), -1.0, epsilon = 1e-15);
        // Trapezoid quadrature over a fine grid.
        let (shape, rate) = (10.0, 20.0);
        let n = 200_000;
        let upper = 5.0;
        let step = upper / n as f64;
        let mut total = 0.0;
        for j in 1..n {
            total += log_gamma_pdf(j as f64 * step, shape, rate).unwrap().exp();
        }
        total *= step;
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
        // Mode of Gamma(c, c/theta) sits at theta (c-1)/c.
        let (c, theta) = (10.0, 2.0);
        let mode = theta * (c - 1.0) / c;
        let at = |x: f64| log_gamma_pdf(x, c, c / theta).unwrap();
        assert!(at(mode) > at(mode * 0.99) && at(mode) > at(mode * 1.01));
    }

    #[test]
    fn normal_cdf_reference_values() {
        // References from a 40-digit evaluation.
        let cases = [
            (0.0, 0.5),
            (1.96, 0.975_002_104_851_779_563_8),
            (-1.96, 0.024_997_895_148_220_436_21),
            (0.5, 0.691_462_461_274_013_103_6),
            (-3.0, 0.001_349_898_031_630_094_527),
            (5.0, 0.999_999_713_348_428_120_8),
            (8.0, 0.999_999_999_999_999_377_9),
        ];
        for (x, reference) in cases {
            assert_abs_diff_eq!(standard_normal_cdf(x), reference, epsilon = 1e-12);
        }
        let tail = standard_normal_cdf(-37.0);
        assert!(tail > 0.0);
        assert!((tail / 5.725_571_222_524_576_8e-300 - 1.0).abs() < 1e-9);
        for x in [-6.0, -1.3, 0.2, 2.7, 9.0] {
            let sum = standard_normal_cdf(x) + standard_normal_cdf(-x);
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn log_normal_cdf_tail() {
        assert_abs_diff_eq!(log_standard_normal_cdf(-30.0), -454.321_243_956_343_2, epsilon = 1e-9);
        assert_abs_diff_eq!(log_standard_normal_cdf(-40.0), -804.608_442_013_753_8, epsilon = 1e-9);
        assert_abs_diff_eq!(log_standard_normal_cdf(-100.0), -5005.524_208_694_205, epsilon = 1e-9);
        assert_abs_diff_eq!(log_standard_normal_cdf(-29.999), standard_normal_cdf(-29.999).ln(), epsilon = 1e-9);
    }

    #[test]
    fn truncated_normal_far_tail() {
        let mut rng = RngStream::new(9, 0);
        let draws: Vec<f64> =
            (0..20_000).map(|_| sample_truncated_normal(-30.0, TruncationSide::Positive, &mut rng)).collect();
        assert!(draws.iter().all(|x| *x > 0.0 && x.is_finite()));
        let draws: Vec<f64> =
            (0..20_000).map(|_| sample_truncated_normal(30.0, TruncationSide::Negative, &mut rng)).collect();
        assert!(draws.iter().all(|x| *x < 0.0 && x.is_finite()));
    }

    #[test]
    fn categorical_from_log_weights() {
        let mut rng = RngStream::new(2, 0);
        let lw = [0.0, f64::NEG_INFINITY, -1000.0];
        for _ in 0..100 {
            assert_eq!(sample_categorical_log(&lw, &mut rng), 0);
        }
        let probs = normalize_log_weights(&[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(log_sum_exp(&[0.0, 0.0]), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn exponential_mean() {
        let mut rng = RngStream::new(3, 1);
        let draws: Vec<f64> = (0..1_000_000).map(|_| sample_gamma(1.0, 1.0, &mut rng).unwrap()).collect();
        let (mean, _) = moments(&draws);
        assert!((mean - 1.0).abs() < 0.01);
    }
}
