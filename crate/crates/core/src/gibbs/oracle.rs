//! Self-checks of the sampler against the joint density.
//!
//! [`check_kernel`] compares, for two values of one unit, the log-ratio of the
//! kernel's conditional with the log-ratio of the full joint. [`getting_it_right`]
//! compares prior-forward moments with those of the successive-conditional
//! simulator (a sweep followed by regenerating the counts).

use super::{
    gibbs_sweep, Block, ClusterIndicators, ClusterMeans, CovariateEffects, Kernel, LatentCounts, PatternMatrix,
    ProbitAugmentation, SamplerError, Scores, SweepPlan, ZeroIndicators, ZeroProbabilities,
};
use crate::distributions::{
    sample_bernoulli, sample_beta, sample_gamma, sample_inverse_gamma, sample_standard_normal, RngStream,
};
use crate::gibbs::linear_predictor;
use crate::model::{log_joint, CountDataset, HyperParameters, LatentState, StudyData};
use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Poisson};

/// Relative tolerance of the conditional/joint comparison.
pub const ORACLE_TOLERANCE: f64 = 1e-8;

/// Moderate hyperparameters for the tiny instance: every checked moment has
/// finite variance.
pub fn tiny_hyperparameters() -> HyperParameters {
    HyperParameters {
        alpha_m: 2.0,
        beta_m: 3.0,
        alpha_w: 2.0,
        beta_w: 2.0,
        c: 2.0,
        epsilon: 0.3,
        gamma1_theta: 6.0,
        gamma2_theta: 5.0,
        beta0: vec![0.5],
        tau0: 1.0,
        truncation: 2,
        num_patterns: 2,
    }
}

/// One study, P=2, N=3, covariates `[1, x]`; counts are placeholders.
pub fn tiny_design() -> CountDataset {
    let x = [-0.8, 0.1, 1.2];
    CountDataset {
        studies: vec![StudyData {
            counts: Array2::zeros((2, 3)),
            covariates: Array2::from_shape_fn((3, 2), |(i, q)| if q == 0 { 1.0 } else { x[i] }),
            variable_names: vec!["v1".into(), "v2".into()],
            subject_ids: (1..=3).map(|i| format!("i{i}")).collect(),
        }],
    }
}

fn poisson(lambda: f64, rng: &mut RngStream) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map_or(0, |d| d.sample(rng) as u32)
}

/// Redraws `z` and the counts given `a`, `w`, `h`.
pub fn regenerate_counts(data: &mut CountDataset, state: &mut LatentState, rng: &mut RngStream) {
    for (s, study) in data.studies.iter_mut().enumerate() {
        for p in 0..study.num_variables() {
            for i in 0..study.num_subjects() {
                let mut total = 0;
                for k in 0..state.num_patterns() {
                    let z = if state.a[s][[p, i]] { 0 } else { poisson(state.w[[p, k]] * state.h[s][[k, i]], rng) };
                    state.z[s][[p, k, i]] = z;
                    total += z;
                }
                study.counts[[p, i]] = total;
            }
        }
    }
}

/// Draws the whole latent state from the prior and the counts given it.
///
/// Labels follow the sequential probit construction: level `l` draws
/// `y ~ N(x'beta_l, 1)` and stops at the first positive value.
pub fn forward_sample(
    design: &CountDataset,
    hp: &HyperParameters,
    rng: &mut RngStream,
) -> Result<(CountDataset, LatentState), SamplerError> {
    let p_dim = design.num_variables();
    let k_dim = hp.num_patterns;
    let levels = hp.truncation;
    let mut w = Array2::zeros((p_dim, k_dim));
    for v in w.iter_mut() {
        *v = sample_gamma(hp.alpha_w, hp.beta_w, rng)?;
    }
    let mut theta = Array2::zeros((k_dim, levels));
    for k in 0..k_dim {
        theta[[k, 0]] = hp.epsilon;
        for l in 1..levels {
            theta[[k, l]] = sample_inverse_gamma(hp.gamma1_theta, hp.gamma2_theta, rng)?;
        }
    }
    let mut state = LatentState {
        w,
        h: Vec::new(),
        a: Vec::new(),
        z: Vec::new(),
        pi: Vec::new(),
        d: Vec::new(),
        theta,
        beta: Vec::new(),
        y: Vec::new(),
    };
    let sd = hp.tau0.recip().sqrt();
    for study in &design.studies {
        let n = study.num_subjects();
        let q = study.num_covariates();
        let mut beta = Array3::zeros((k_dim, levels - 1, q));
        for k in 0..k_dim {
            for l in 0..levels - 1 {
                let mean = hp.beta_prior_mean(l, q);
                for j in 0..q {
                    beta[[k, l, j]] = mean[j] + sd * sample_standard_normal(rng);
                }
            }
        }
        let mut y = Array3::from_elem((k_dim, levels - 1, n), f64::NAN);
        let mut d = Array2::zeros((k_dim, n));
        let mut h = Array2::zeros((k_dim, n));
        for k in 0..k_dim {
            for i in 0..n {
                let mut label = levels - 1;
                for l in 0..levels - 1 {
                    let eta = linear_predictor(beta.slice(s![k, l, ..]), study.covariate_row(i));
                    let draw = eta + sample_standard_normal(rng);
                    y[[k, l, i]] = draw;
                    if draw > 0.0 {
                        label = l;
                        break;
                    }
                }
                d[[k, i]] = label;
                let c = hp.cluster_shape(label);
                h[[k, i]] = sample_gamma(c, c / state.theta[[k, label]], rng)?;
            }
        }
        let mut pi = Array1::zeros(p_dim);
        for v in pi.iter_mut() {
            *v = sample_beta(hp.alpha_m, hp.beta_m, rng)?;
        }
        let mut a = Array2::from_elem((p_dim, n), false);
        for ((p, _), cell) in a.indexed_iter_mut() {
            *cell = sample_bernoulli(pi[p], rng);
        }
        state.beta.push(beta);
        state.y.push(y);
        state.d.push(d);
        state.h.push(h);
        state.pi.push(pi);
        state.a.push(a);
        state.z.push(Array3::zeros((p_dim, k_dim, n)));
    }
    let mut data = design.clone();
    regenerate_counts(&mut data, &mut state, rng);
    Ok((data, state))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub block: Block,
    pub pairs: usize,
    /// Largest `|dc - dj| / max(1, |dj|)` seen.
    pub max_error: f64,
    pub passed: bool,
}

/// Compares conditional and joint log-ratios on `pairs` random state pairs.
///
/// Each pair draws a fresh forward sample, a unit, and two candidate values
/// from the kernel's own conditional.
pub fn check_kernel(
    kernel: &dyn Kernel,
    design: &CountDataset,
    hp: &HyperParameters,
    pairs: usize,
    rng: &mut RngStream,
) -> Result<OracleReport, SamplerError> {
    let mut max_error: f64 = 0.0;
    for _ in 0..pairs {
        let (data, mut state) = forward_sample(design, hp, rng)?;
        let units = kernel.units(&data, &state);
        let mut chosen = None;
        for _ in 0..50 {
            let unit = units[rng.random_range(0..units.len())];
            let conditional = kernel.conditional(&data, hp, &state, unit)?;
            let first = conditional.sample(rng)?;
            let second = conditional.sample(rng)?;
            let differs = first != second
                && !matches!((&first, &second), (super::Value::Real(a), super::Value::Real(b)) if a.is_nan() && b.is_nan());
            chosen = Some((unit, conditional, first, second));
            if differs {
                break;
            }
        }
        let (unit, conditional, first, second) = chosen.expect("at least one unit");
        let delta_conditional = conditional.log_density(&first)? - conditional.log_density(&second)?;
        kernel.set(&mut state, unit, first);
        let joint_first = log_joint(&data, hp, &state, kernel.probit_terms())?;
        kernel.set(&mut state, unit, second);
        let joint_second = log_joint(&data, hp, &state, kernel.probit_terms())?;
        let delta_joint = joint_first - joint_second;
        let error = (delta_conditional - delta_joint).abs() / delta_joint.abs().max(1.0);
        max_error = max_error.max(if error.is_nan() { f64::INFINITY } else { error });
    }
    Ok(OracleReport { block: kernel.block(), pairs, max_error, passed: max_error <= ORACLE_TOLERANCE })
}

pub fn all_kernels() -> Vec<Box<dyn Kernel>> {
    vec![
        Box::new(LatentCounts),
        Box::new(ZeroIndicators),
        Box::new(ZeroProbabilities),
        Box::new(PatternMatrix),
        Box::new(ClusterIndicators::default()),
        Box::new(ProbitAugmentation),
        Box::new(CovariateEffects),
        Box::new(ClusterMeans),
        Box::new(Scores),
    ]
}

/// Runs [`check_kernel`] on every block of the tiny instance.
pub fn check_all_kernels(pairs: usize, seed: u64) -> Result<Vec<OracleReport>, SamplerError> {
    let design = tiny_design();
    let hp = tiny_hyperparameters();
    all_kernels()
        .iter()
        .enumerate()
        .map(|(j, kernel)| {
            let mut rng = RngStream::new(seed, j as u64);
            check_kernel(kernel.as_ref(), &design, &hp, pairs, &mut rng)
        })
        .collect()
}

/// Parameters whose first and second moments are compared.
fn tracked_statistics(state: &LatentState) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend(state.pi.iter().flat_map(|p| p.iter().copied()));
    out.extend(state.w.iter().copied());
    out.extend(state.h.iter().flat_map(|h| h.iter().copied()));
    out.extend(state.theta.slice(s![.., 1..]).iter().copied());
    out.extend(state.beta.iter().flat_map(|b| b.iter().copied()));
    let squares: Vec<f64> = out.iter().map(|x| x * x).collect();
    out.extend(squares);
    out
}

fn statistic_names(state: &LatentState) -> Vec<String> {
    let mut names = Vec::new();
    for (s, p) in state.pi.iter().enumerate() {
        names.extend((0..p.len()).map(|j| format!("pi[{s}][{j}]")));
    }
    names.extend(ndarray::indices(state.w.dim()).into_iter().map(|(p, k)| format!("w[{p},{k}]")));
    for (s, h) in state.h.iter().enumerate() {
        names.extend(ndarray::indices(h.dim()).into_iter().map(|(k, i)| format!("h[{s}][{k},{i}]")));
    }
    let levels = state.truncation();
    for k in 0..state.num_patterns() {
        names.extend((1..levels).map(|l| format!("theta[{k},{l}]")));
    }
    for (s, b) in state.beta.iter().enumerate() {
        names.extend(ndarray::indices(b.dim()).into_iter().map(|(k, l, q)| format!("beta[{s}][{k},{l},{q}]")));
    }
    let squared: Vec<String> = names.iter().map(|n| format!("{n}^2")).collect();
    names.extend(squared);
    names
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentComparison {
    pub name: String,
    pub forward_mean: f64,
    pub forward_se: f64,
    pub chain_mean: f64,
    pub chain_se: f64,
    /// Difference in units of the combined standard error.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GetItRightReport {
    pub rounds: usize,
    pub comparisons: Vec<MomentComparison>,
    pub threshold: f64,
    pub passed: bool,
}

impl GetItRightReport {
    pub fn worst(&self) -> Option<&MomentComparison> {
        self.comparisons.iter().max_by(|a, b| a.z.abs().total_cmp(&b.z.abs()))
    }
}

fn mean_and_se_iid(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn mean_and_se_batches(values: &[f64], batches: usize) -> (f64, f64) {
    let size = values.len() / batches;
    let means: Vec<f64> =
        values.chunks_exact(size).take(batches).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let (_, se) = mean_and_se_iid(&means);
    (values.iter().sum::<f64>() / values.len() as f64, se)
}

/// Joint-distribution test on the tiny instance.
///
/// The forward side uses independent draws; the chain side uses batch means
/// with `batches` batches for its standard errors.
pub fn getting_it_right(
    rounds: usize,
    batches: usize,
    threshold: f64,
    seed: u64,
) -> Result<GetItRightReport, SamplerError> {
    let design = tiny_design();
    let hp = tiny_hyperparameters();

    let mut forward_rng = RngStream::new(seed, 0);
    let mut forward = Vec::with_capacity(rounds);
    let mut names = Vec::new();
    for _ in 0..rounds {
        let (_, state) = forward_sample(&design, &hp, &mut forward_rng)?;
        if names.is_empty() {
            names = statistic_names(&state);
        }
        forward.push(tracked_statistics(&state));
    }

    let mut chain_rng = RngStream::new(seed, 1);
    let (mut data, mut state) = forward_sample(&design, &hp, &mut chain_rng)?;
    let plan = SweepPlan::full(hp.num_patterns);
    let mut chain = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        gibbs_sweep(&data, &hp, &mut state, &plan, &mut chain_rng)?;
        regenerate_counts(&mut data, &mut state, &mut chain_rng);
        chain.push(tracked_statistics(&state));
    }

    let mut comparisons = Vec::with_capacity(names.len());
    for (j, name) in names.into_iter().enumerate() {
        let f: Vec<f64> = forward.iter().map(|v| v[j]).collect();
        let c: Vec<f64> = chain.iter().map(|v| v[j]).collect();
        let (forward_mean, forward_se) = mean_and_se_iid(&f);
        let (chain_mean, chain_se) = mean_and_se_batches(&c, batches);
        let z = (chain_mean - forward_mean) / (forward_se.powi(2) + chain_se.powi(2)).sqrt();
        comparisons.push(MomentComparison { name, forward_mean, forward_se, chain_mean, chain_se, z });
    }
    let passed = comparisons.iter().all(|c| c.z.abs() <= threshold);
    Ok(GetItRightReport { rounds, comparisons, threshold, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{audit_state, ProbitTerms};

    #[test]
    fn forward_samples_are_consistent() {
        let design = tiny_design();
        let hp = tiny_hyperparameters();
        let mut rng = RngStream::new(1, 0);
        for _ in 0..200 {
            let (data, state) = forward_sample(&design, &hp, &mut rng).unwrap();
            assert!(audit_state(&data, &hp, &state).is_empty());
            assert!(log_joint(&data, &hp, &state, ProbitTerms::Augmented).unwrap().is_finite());
        }
    }

    #[test]
    fn every_kernel_matches_the_joint() {
        for report in check_all_kernels(100, 2024).unwrap() {
            assert!(report.passed, "{report:?}");
        }
    }
}
