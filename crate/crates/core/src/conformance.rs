//! Statistical checks of the sampling primitives: moments within Monte Carlo
//! error and Kolmogorov-Smirnov tests against reference CDFs.

use crate::distributions::{
    sample_beta, sample_gamma, sample_inverse_gamma, sample_multinomial, sample_truncated_normal, standard_normal_cdf,
    DistributionError, RngStream, TruncationSide,
};
use statrs::distribution::{ContinuousCDF, Gamma};
use std::f64::consts::PI;

/// Asymptotic Kolmogorov critical value at level 0.01.
pub const KS_CRITICAL_001: f64 = 1.627_6;
/// Moment tolerance in Monte Carlo standard errors.
pub const MOMENT_SE: f64 = 4.0;
pub const DRAWS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

struct Sample {
    mean: f64,
    var: f64,
    mean_se: f64,
    var_se: f64,
}

fn summarize(draws: &[f64]) -> Sample {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = draws.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    Sample { mean, var, mean_se: (var / n).sqrt(), var_se: ((m4 - var * var).max(0.0) / n).sqrt() }
}

fn within(name: String, value: f64, target: f64, tolerance: f64) -> Check {
    let passed = (value - target).abs() <= tolerance;
    Check { name, passed, detail: format!("{value:.6} vs {target:.6} (tol {tolerance:.3e})") }
}

fn moment_checks(label: &str, draws: &[f64], mean: f64, var: Option<f64>, se: f64) -> Vec<Check> {
    let s = summarize(draws);
    let mut out = vec![within(format!("{label} mean"), s.mean, mean, se * s.mean_se)];
    if let Some(var) = var {
        out.push(within(format!("{label} variance"), s.var, var, se * s.var_se));
    }
    out
}

/// One-sample KS statistic scaled by `sqrt(n)`.
fn ks_one_sample(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    let d = draws
        .iter()
        .enumerate()
        .map(|(j, x)| {
            let f = cdf(*x);
            (f - j as f64 / n).max((j + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    d * n.sqrt()
}

/// Two-sample KS statistic scaled by `sqrt(n m / (n + m))`.
fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d * (n * m / (n + m)).sqrt()
}

fn ks(name: String, statistic: f64) -> Check {
    Check {
        name,
        passed: statistic <= KS_CRITICAL_001,
        detail: format!("sqrt(n) D = {statistic:.4} (crit {KS_CRITICAL_001})"),
    }
}

fn draws(n: usize, mut f: impl FnMut() -> Result<f64, DistributionError>) -> Result<Vec<f64>, DistributionError> {
    (0..n).map(|_| f()).collect()
}

/// Runs every check; each family uses its own stream of `seed`.
pub fn distribution_checks(seed: u64) -> Result<Vec<Check>, DistributionError> {
    let mut out = Vec::new();

    let mut rng = RngStream::new(seed, 0);
    let x = draws(1_000_000, || sample_gamma(1.0, 1.0, &mut rng))?;
    out.push(within("gamma(1,1) mean, 1e6 draws".into(), summarize(&x).mean, 1.0, 0.01));
    let x = draws(DRAWS, || sample_gamma(10.0, 0.2, &mut rng))?;
    let s = summarize(&x);
    out.push(within("gamma(10,0.2) mean".into(), s.mean, 50.0, 0.5));
    out.push(within("gamma(10,0.2) variance".into(), s.var, 250.0, 10.0));
    let x = draws(DRAWS, || sample_gamma(2.0, 4.0, &mut rng))?;
    out.extend(moment_checks("gamma(2,4)", &x, 0.5, Some(0.125), 3.0));
    for (shape, rate) in [(0.5, 0.01), (1.0, 1.0), (10.0, 0.2), (100.0, 100.0), (2.5, 25.0)] {
        let x = draws(DRAWS, || sample_gamma(shape, rate, &mut rng))?;
        out.extend(moment_checks(
            &format!("gamma({shape},{rate})"),
            &x,
            shape / rate,
            Some(shape / (rate * rate)),
            MOMENT_SE,
        ));
    }

    let mut rng = RngStream::new(seed, 1);
    let x = draws(DRAWS, || sample_beta(1.0, 1.0, &mut rng))?;
    out.push(ks("beta(1,1) vs uniform".into(), ks_one_sample(x, |u| u.clamp(0.0, 1.0))));
    let x = draws(DRAWS, || sample_beta(5.0, 2.0, &mut rng))?;
    out.extend(moment_checks("beta(5,2)", &x, 5.0 / 7.0, None, 3.0));
    for (a, b) in [(0.5, 0.5), (1.0, 1.0), (5.0, 2.0), (2.0, 50.0), (100.0, 30.0)] {
        let x = draws(DRAWS, || sample_beta(a, b, &mut rng))?;
        let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
        out.extend(moment_checks(&format!("beta({a},{b})"), &x, a / (a + b), Some(var), MOMENT_SE));
    }

    let mut rng = RngStream::new(seed, 2);
    let x = draws(DRAWS, || sample_inverse_gamma(3.0, 4.0, &mut rng))?;
    out.extend(moment_checks("inverse-gamma(3,4)", &x, 2.0, None, 3.0));
    let x = draws(DRAWS, || sample_inverse_gamma(1.5, 20.0, &mut rng))?;
    out.extend(moment_checks("inverse-gamma(1.5,20)", &x, 40.0, None, 3.0));
    let x = draws(DRAWS, || sample_inverse_gamma(2.5, 3.0, &mut rng))?;
    let reference = Gamma::new(2.5, 3.0).expect("valid parameters");
    out.push(ks(
        "1/inverse-gamma(2.5,3) vs gamma".into(),
        ks_one_sample(x.iter().map(|v| 1.0 / v).collect(), |g| reference.cdf(g)),
    ));
    for (shape, scale) in [(4.5, 0.5), (5.0, 1.0), (10.0, 20.0), (20.0, 300.0), (100.0, 50.0)] {
        let x = draws(DRAWS, || sample_inverse_gamma(shape, scale, &mut rng))?;
        let mean = scale / (shape - 1.0);
        let var = mean * mean / (shape - 2.0);
        out.extend(moment_checks(&format!("inverse-gamma({shape},{scale})"), &x, mean, Some(var), MOMENT_SE));
    }

    let mut rng = RngStream::new(seed, 3);
    let counts = sample_multinomial(100_000, &[1.0, 3.0], &mut rng)?;
    out.push(within("multinomial(1e5; 1,3) cell-1 share".into(), f64::from(counts[0]) / 1e5, 0.25, 0.005));
    out.push(Check {
        name: "multinomial sums to total".into(),
        passed: counts.iter().sum::<u32>() == 100_000,
        detail: format!("{counts:?}"),
    });

    let mut rng = RngStream::new(seed, 4);
    let x: Vec<f64> = (0..DRAWS).map(|_| sample_truncated_normal(0.0, TruncationSide::Positive, &mut rng)).collect();
    out.push(within("truncated normal mean 0, positive".into(), summarize(&x).mean, (2.0 / PI).sqrt(), 0.01));
    let x: Vec<f64> = (0..DRAWS).map(|_| sample_truncated_normal(-8.0, TruncationSide::Positive, &mut rng)).collect();
    let exact = -8.0 + (-32.0f64).exp() / (2.0 * PI).sqrt() / standard_normal_cdf(-8.0);
    out.push(within("truncated normal mean -8, positive".into(), summarize(&x).mean, exact, 0.01));
    out.push(Check {
        name: "truncated normal mean -8 draws positive and finite".into(),
        passed: x.iter().all(|v| *v > 0.0 && v.is_finite()),
        detail: String::new(),
    });
    for mean in [-8.0, -30.0] {
        let x: Vec<f64> =
            (0..DRAWS).map(|_| sample_truncated_normal(mean, TruncationSide::Positive, &mut rng)).collect();
        // Exponential-tail shape: conditional on X > 0, the excess is approximately Exp(-mean).
        let tail = TailCdf { mean };
        out.push(ks(format!("truncated normal mean {mean}, positive vs exact cdf"), ks_one_sample(x, |v| tail.cdf(v))));
    }
    for m in [1.3, -0.7, -4.0] {
        let pos: Vec<f64> =
            (0..DRAWS).map(|_| sample_truncated_normal(m, TruncationSide::Positive, &mut rng)).collect();
        let neg: Vec<f64> =
            (0..DRAWS).map(|_| -sample_truncated_normal(-m, TruncationSide::Negative, &mut rng)).collect();
        out.push(ks(format!("truncated normal reflection at mean {m}"), ks_two_sample(pos, neg)));
    }
    Ok(out)
}

/// CDF of N(mean, 1) truncated to (0, inf), evaluated through log survival
/// functions so that far-tail means stay accurate.
struct TailCdf {
    mean: f64,
}

impl TailCdf {
    fn cdf(&self, x: f64) -> f64 {
        use crate::distributions::log_standard_normal_cdf;
        if x <= 0.0 {
            return 0.0;
        }
        // P(X > x | X > 0) = Phi(mean - x) / Phi(mean).
        let log_survival = log_standard_normal_cdf(self.mean - x) - log_standard_normal_cdf(self.mean);
        -log_survival.exp_m1()
    }
}
