//! Full-conditional updates, the systematic-scan sweep, and the chain driver.
//!
//! Every kernel is expressed as a set of conditionally independent units, each
//! with an explicit [`Conditional`] distribution. Sampling and the
//! conditional/joint oracle share that one description.

mod chain;
mod kernels;
pub mod oracle;

pub use chain::{
    degenerate_state, run_chain, summarize_draws, RunConfig, SweepDiagnostics, PRUNE_OCCUPANCY, PRUNE_WINDOW,
};
pub use kernels::{
    update_cluster_indicators, update_cluster_means, update_covariate_effects, update_latent_counts,
    update_pattern_matrix, update_probit_augmentation, update_scores, update_zero_indicators,
    update_zero_probabilities, ClusterIndicators, ClusterMeans, CovariateEffects, LatentCounts, PatternMatrix,
    ProbitAugmentation, Scores, ZeroIndicators, ZeroProbabilities,
};

use crate::distributions::{
    log_beta_pdf, log_gamma_pdf, log_inverse_gamma_pdf, log_standard_normal_cdf, sample_bernoulli, sample_beta,
    sample_categorical_log, sample_gamma, sample_inverse_gamma, sample_multinomial, sample_standard_normal,
    sample_truncated_normal, standard_normal_cdf, DistributionError, RngStream, TruncationSide,
};
use crate::model::{CountDataset, HyperParameters, LatentState, ModelError, ProbitTerms, StateViolation};
use nalgebra::{Cholesky, DVector, Dyn};
use ndarray::ArrayView1;
use statrs::function::factorial::ln_factorial;
use thiserror::Error;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid run configuration: {0}")]
    InvalidRunConfig(String),
    #[error("state audit failed after sweep {sweep}: {violations:?}")]
    Audit { sweep: usize, violations: Vec<StateViolation> },
    #[error("stored draws do not contain `{0}`")]
    MissingField(&'static str),
}

/// Update blocks in their fixed scan order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    LatentCounts,
    ZeroIndicators,
    ZeroProbabilities,
    PatternMatrix,
    ClusterIndicators,
    ProbitAugmentation,
    CovariateEffects,
    ClusterMeans,
    Scores,
}

pub const UPDATE_ORDER: [Block; 9] = [
    Block::LatentCounts,
    Block::ZeroIndicators,
    Block::ZeroProbabilities,
    Block::PatternMatrix,
    Block::ClusterIndicators,
    Block::ProbitAugmentation,
    Block::CovariateEffects,
    Block::ClusterMeans,
    Block::Scores,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepPlan {
    /// Indexed like [`UPDATE_ORDER`].
    pub blocks_enabled: [bool; 9],
    /// Patterns whose labels are frozen at the spike and skipped by the label update.
    pub pinned_patterns: Vec<bool>,
}

impl SweepPlan {
    pub fn full(num_patterns: usize) -> Self {
        Self { blocks_enabled: [true; 9], pinned_patterns: vec![false; num_patterns] }
    }

    pub fn disabled(num_patterns: usize) -> Self {
        Self { blocks_enabled: [false; 9], pinned_patterns: vec![false; num_patterns] }
    }

    /// Plain multi-study Poisson NMF: no zero inflation, one fixed Gamma score cluster.
    pub fn degenerate(num_patterns: usize) -> Self {
        let mut plan = Self::disabled(num_patterns);
        for block in [Block::LatentCounts, Block::PatternMatrix, Block::ClusterMeans, Block::Scores] {
            plan.set(block, true);
        }
        plan
    }

    pub fn is_enabled(&self, block: Block) -> bool {
        self.blocks_enabled[block_index(block)]
    }

    pub fn set(&mut self, block: Block, enabled: bool) {
        self.blocks_enabled[block_index(block)] = enabled;
    }
}

fn block_index(block: Block) -> usize {
    UPDATE_ORDER.iter().position(|b| *b == block).expect("every block is in the scan order")
}

pub fn linear_predictor(beta: ArrayView1<'_, f64>, x: ArrayView1<'_, f64>) -> f64 {
    beta.dot(&x)
}

/// Probit stick-breaking weights from the L*-1 linear predictors.
///
/// `w_l = Phi(eta_l) prod_{r<l} (1 - Phi(eta_r))`; the last stick takes the remainder.
pub fn stick_weights(predictors: &[f64]) -> Vec<f64> {
    let mut weights = Vec::with_capacity(predictors.len() + 1);
    let mut remaining = 1.0;
    for &eta in predictors {
        let take = standard_normal_cdf(eta);
        weights.push(remaining * take);
        remaining *= standard_normal_cdf(-eta);
    }
    weights.push(remaining);
    weights
}

pub fn log_stick_weights(predictors: &[f64]) -> Vec<f64> {
    let mut weights = Vec::with_capacity(predictors.len() + 1);
    let mut remaining = 0.0;
    for &eta in predictors {
        weights.push(remaining + log_standard_normal_cdf(eta));
        remaining += log_standard_normal_cdf(-eta);
    }
    weights.push(remaining);
    weights
}

/// Stick weights of one pattern for covariate vector `x`; `beta_k` is (L*-1)×Q.
pub fn compute_stick_weights(beta_k: ndarray::ArrayView2<'_, f64>, x: ArrayView1<'_, f64>) -> Vec<f64> {
    let predictors: Vec<f64> = beta_k.rows().into_iter().map(|b| linear_predictor(b, x)).collect();
    stick_weights(&predictors)
}

/// Coordinates of one conditionally independent unit of a block.
///
/// The meaning of `row`, `col`, and `level` is kernel specific, e.g. `(p, k)`
/// for loadings and `(k, i, l)` for the probit augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unit {
    pub study: usize,
    pub row: usize,
    pub col: usize,
    pub level: usize,
}

impl Unit {
    pub fn new(study: usize, row: usize, col: usize, level: usize) -> Self {
        Self { study, row, col, level }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Flag(bool),
    Label(usize),
    Counts(Vec<u32>),
    Vector(Vec<f64>),
}

/// The full conditional distribution of one unit.
#[derive(Debug, Clone)]
pub enum Conditional {
    Gamma {
        shape: f64,
        rate: f64,
    },
    InverseGamma {
        shape: f64,
        scale: f64,
    },
    Beta {
        a: f64,
        b: f64,
    },
    /// Success probability given through its log-odds for stability.
    Bernoulli {
        log_odds: f64,
    },
    /// Normalized log-probabilities.
    Categorical {
        log_probs: Vec<f64>,
    },
    Multinomial {
        total: u32,
        weights: Vec<f64>,
    },
    TruncatedNormal {
        mean: f64,
        side: TruncationSide,
    },
    /// The unit is not defined in the current configuration (stored as NaN).
    Undefined,
    MvNormal {
        mean: DVector<f64>,
        precision: Cholesky<f64, Dyn>,
    },
}

fn ln_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

impl Conditional {
    pub fn sample(&self, rng: &mut RngStream) -> Result<Value, SamplerError> {
        Ok(match self {
            Conditional::Gamma { shape, rate } => Value::Real(sample_gamma(*shape, *rate, rng)?),
            Conditional::InverseGamma { shape, scale } => Value::Real(sample_inverse_gamma(*shape, *scale, rng)?),
            Conditional::Beta { a, b } => Value::Real(sample_beta(*a, *b, rng)?),
            Conditional::Bernoulli { log_odds } => Value::Flag(sample_bernoulli(ln_sigmoid(*log_odds).exp(), rng)),
            Conditional::Categorical { log_probs } => Value::Label(sample_categorical_log(log_probs, rng)),
            Conditional::Multinomial { total, weights } => {
                if *total == 0 {
                    Value::Counts(vec![0; weights.len()])
                } else {
                    Value::Counts(sample_multinomial(*total, weights, rng)?)
                }
            }
            Conditional::TruncatedNormal { mean, side } => Value::Real(sample_truncated_normal(*mean, *side, rng)),
            Conditional::Undefined => Value::Real(f64::NAN),
            Conditional::MvNormal { mean, precision } => {
                let eps = DVector::from_fn(mean.len(), |_, _| sample_standard_normal(rng));
                // x = mu + L^{-T} eps has covariance (L L^T)^{-1}.
                let shift = precision
                    .l()
                    .transpose()
                    .solve_upper_triangular(&eps)
                    .ok_or_else(|| SamplerError::NumericalFailure("singular precision factor".into()))?;
                Value::Vector((mean + shift).iter().copied().collect())
            }
        })
    }

    /// Log-density (or log-mass) of `value` under this conditional.
    pub fn log_density(&self, value: &Value) -> Result<f64, SamplerError> {
        let mismatch = || SamplerError::NumericalFailure(format!("value {value:?} does not fit {self:?}"));
        Ok(match (self, value) {
            (Conditional::Gamma { shape, rate }, Value::Real(x)) => log_gamma_pdf(*x, *shape, *rate)?,
            (Conditional::InverseGamma { shape, scale }, Value::Real(x)) => log_inverse_gamma_pdf(*x, *shape, *scale)?,
            (Conditional::Beta { a, b }, Value::Real(x)) => log_beta_pdf(*x, *a, *b)?,
            (Conditional::Bernoulli { log_odds }, Value::Flag(flag)) => {
                if *flag {
                    ln_sigmoid(*log_odds)
                } else {
                    ln_sigmoid(-*log_odds)
                }
            }
            (Conditional::Categorical { log_probs }, Value::Label(l)) => *log_probs.get(*l).ok_or_else(mismatch)?,
            (Conditional::Multinomial { total, weights }, Value::Counts(counts)) => {
                if counts.len() != weights.len() || counts.iter().sum::<u32>() != *total {
                    return Err(mismatch());
                }
                let sum: f64 = weights.iter().sum();
                let mut lp = ln_factorial(u64::from(*total));
                for (&z, &w) in counts.iter().zip(weights) {
                    if z > 0 {
                        lp += f64::from(z) * (w / sum).ln() - ln_factorial(u64::from(z));
                    }
                }
                lp
            }
            (Conditional::TruncatedNormal { mean, side }, Value::Real(y)) => {
                let (inside, mass) = match side {
                    TruncationSide::Positive => (*y > 0.0, log_standard_normal_cdf(*mean)),
                    TruncationSide::Negative => (*y < 0.0, log_standard_normal_cdf(-*mean)),
                };
                if !inside {
                    return Ok(f64::NEG_INFINITY);
                }
                -0.5 * (y - mean).powi(2) - 0.5 * LN_2PI - mass
            }
            (Conditional::Undefined, Value::Real(y)) => {
                if y.is_nan() {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            (Conditional::MvNormal { mean, precision }, Value::Vector(x)) => {
                if x.len() != mean.len() {
                    return Err(mismatch());
                }
                let diff = DVector::from_column_slice(x) - mean;
                let projected = precision.l().transpose() * diff;
                let log_det: f64 = precision.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
                -0.5 * projected.norm_squared() + 0.5 * log_det - 0.5 * mean.len() as f64 * LN_2PI
            }
            _ => return Err(mismatch()),
        })
    }
}

/// One block of the sampler, viewed as a collection of independent units.
pub trait Kernel {
    fn block(&self) -> Block;

    /// Representation of the allocation terms under which this kernel's
    /// conditional is the exact full conditional of the joint.
    fn probit_terms(&self) -> ProbitTerms {
        ProbitTerms::Augmented
    }

    fn units(&self, data: &CountDataset, state: &LatentState) -> Vec<Unit>;

    fn conditional(
        &self,
        data: &CountDataset,
        hp: &HyperParameters,
        state: &LatentState,
        unit: Unit,
    ) -> Result<Conditional, SamplerError>;

    fn get(&self, state: &LatentState, unit: Unit) -> Value;

    fn set(&self, state: &mut LatentState, unit: Unit, value: Value);
}

/// Draws every unit of `kernel` from its full conditional, in unit order.
pub fn update_block(
    kernel: &dyn Kernel,
    data: &CountDataset,
    hp: &HyperParameters,
    state: &mut LatentState,
    rng: &mut RngStream,
) -> Result<(), SamplerError> {
    for unit in kernel.units(data, state) {
        let value = kernel.conditional(data, hp, state, unit)?.sample(rng)?;
        kernel.set(state, unit, value);
    }
    Ok(())
}

/// One systematic scan over the enabled blocks in [`UPDATE_ORDER`].
pub fn gibbs_sweep(
    data: &CountDataset,
    hp: &HyperParameters,
    state: &mut LatentState,
    plan: &SweepPlan,
    rng: &mut RngStream,
) -> Result<(), SamplerError> {
    for block in UPDATE_ORDER {
        if !plan.is_enabled(block) {
            continue;
        }
        match block {
            Block::LatentCounts => update_block(&LatentCounts, data, hp, state, rng)?,
            Block::ZeroIndicators => update_block(&ZeroIndicators, data, hp, state, rng)?,
            Block::ZeroProbabilities => update_block(&ZeroProbabilities, data, hp, state, rng)?,
            Block::PatternMatrix => update_block(&PatternMatrix, data, hp, state, rng)?,
            Block::ClusterIndicators => {
                let kernel = ClusterIndicators { pinned: plan.pinned_patterns.clone() };
                update_block(&kernel, data, hp, state, rng)?
            }
            Block::ProbitAugmentation => update_block(&ProbitAugmentation, data, hp, state, rng)?,
            Block::CovariateEffects => update_block(&CovariateEffects, data, hp, state, rng)?,
            Block::ClusterMeans => update_block(&ClusterMeans, data, hp, state, rng)?,
            Block::Scores => update_block(&Scores, data, hp, state, rng)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn stick_weight_examples() {
        assert_eq!(stick_weights(&[0.0]), vec![0.5, 0.5]);
        assert_eq!(stick_weights(&[0.0, 0.0]), vec![0.5, 0.25, 0.25]);
        let beta = array![[0.3, -1.0], [2.0, 0.5]];
        let w = compute_stick_weights(beta.view(), array![1.0, 0.3].view());
        assert_abs_diff_eq!(w[0], standard_normal_cdf(0.0), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn stick_weights_form_a_simplex(etas in proptest::collection::vec(-40.0f64..40.0, 1..8)) {
            let w = stick_weights(&etas);
            prop_assert_eq!(w.len(), etas.len() + 1);
            prop_assert!(w.iter().all(|x| *x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn log_weights_match_weights(etas in proptest::collection::vec(-6.0f64..6.0, 1..6)) {
            let w = stick_weights(&etas);
            let lw = log_stick_weights(&etas);
            for (a, b) in w.iter().zip(&lw) {
                prop_assert!((a.ln() - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sweep_plans() {
        let plan = SweepPlan::degenerate(3);
        assert!(plan.is_enabled(Block::Scores));
        assert!(!plan.is_enabled(Block::ClusterIndicators));
        assert!(!plan.is_enabled(Block::ZeroIndicators));
        assert!(SweepPlan::full(2).blocks_enabled.iter().all(|b| *b));
    }

    #[test]
    fn bernoulli_log_density_is_normalized() {
        let c = Conditional::Bernoulli { log_odds: 3.0_f64.ln() };
        let one = c.log_density(&Value::Flag(true)).unwrap();
        let zero = c.log_density(&Value::Flag(false)).unwrap();
        assert_abs_diff_eq!(one.exp(), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(one.exp() + zero.exp(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn multinomial_log_density_matches_binomial() {
        let c = Conditional::Multinomial { total: 3, weights: vec![1.0, 3.0] };
        // C(3,1) 0.25 0.75^2
        let expected = (3.0 * 0.25 * 0.75 * 0.75f64).ln();
        assert_abs_diff_eq!(c.log_density(&Value::Counts(vec![1, 2])).unwrap(), expected, epsilon = 1e-13);
    }

    #[test]
    fn mv_normal_density_and_draws() {
        let precision = nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let chol = Cholesky::new(precision.clone()).unwrap();
        let c = Conditional::MvNormal { mean: DVector::from_vec(vec![1.0, -1.0]), precision: chol };
        // Density at the mean: sqrt(det) / (2 pi).
        let at_mean = c.log_density(&Value::Vector(vec![1.0, -1.0])).unwrap();
        assert_abs_diff_eq!(at_mean, 0.5 * 1.75f64.ln() - LN_2PI, epsilon = 1e-13);

        let mut rng = RngStream::new(3, 0);
        let n = 200_000;
        let mut sum = [0.0; 2];
        let mut cross = [[0.0; 2]; 2];
        for _ in 0..n {
            let Value::Vector(x) = c.sample(&mut rng).unwrap() else { unreachable!() };
            let d = [x[0] - 1.0, x[1] + 1.0];
            for a in 0..2 {
                sum[a] += d[a];
                for b in 0..2 {
                    cross[a][b] += d[a] * d[b];
                }
            }
        }
        let cov = precision.try_inverse().unwrap();
        for a in 0..2 {
            assert!((sum[a] / n as f64).abs() < 0.01);
            for b in 0..2 {
                assert_abs_diff_eq!(cross[a][b] / n as f64, cov[(a, b)], epsilon = 0.01);
            }
        }
    }

    #[test]
    fn truncated_normal_density_integrates() {
        let c = Conditional::TruncatedNormal { mean: -1.3, side: TruncationSide::Positive };
        let step = 1e-3;
        let total: f64 =
            (0..20_000).map(|j| c.log_density(&Value::Real((j as f64 + 0.5) * step)).unwrap().exp() * step).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
        assert_eq!(c.log_density(&Value::Real(-0.1)).unwrap(), f64::NEG_INFINITY);
    }
}
