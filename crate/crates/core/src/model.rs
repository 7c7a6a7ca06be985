//! Data, hyperparameters, and the augmented latent state.
//!
//! Cluster labels are stored densely as 0-based indices into `0..L*`; index 0
//! is the spike component. Probit augmentation values that the model leaves
//! undefined are stored as `NaN`.

use crate::distributions::{
    log_beta_pdf, log_gamma_pdf, log_inverse_gamma_pdf, log_normal_pdf, log_poisson_pmf, sample_bernoulli, sample_beta,
    sample_gamma, sample_inverse_gamma, sample_multinomial_into, sample_standard_normal, sample_truncated_normal,
    DistributionError, RngStream, TruncationSide,
};
use crate::gibbs::{linear_predictor, log_stick_weights, stick_weights};
use ndarray::{Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("inconsistent latent state: {0}")]
    InconsistentState(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParameters(String),
    #[error("dataset failed validation with {} violation(s)", .0.len())]
    InvalidDataset(Vec<Violation>),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// One study: a P×N count matrix and an N×Q covariate matrix with an intercept column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyData {
    pub counts: Array2<u32>,
    pub covariates: Array2<f64>,
    pub variable_names: Vec<String>,
    pub subject_ids: Vec<String>,
}

impl StudyData {
    pub fn num_variables(&self) -> usize {
        self.counts.nrows()
    }

    pub fn num_subjects(&self) -> usize {
        self.counts.ncols()
    }

    pub fn num_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariate_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.covariates.row(i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDataset {
    pub studies: Vec<StudyData>,
}

impl CountDataset {
    pub fn num_studies(&self) -> usize {
        self.studies.len()
    }

    pub fn num_variables(&self) -> usize {
        self.studies.first().map_or(0, StudyData::num_variables)
    }

    pub fn total_subjects(&self) -> usize {
        self.studies.iter().map(StudyData::num_subjects).sum()
    }
}

/// A single dataset invariant violation with its coordinates (0-based).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    NoStudies,
    EmptyStudy { study: usize },
    VariableDimensionMismatch { study: usize, expected: usize, found: usize },
    VariableNameMismatch { study: usize, variable: usize },
    VariableNameCount { study: usize, expected: usize, found: usize },
    SubjectIdCount { study: usize, expected: usize, found: usize },
    CovariateRowMismatch { study: usize, subjects: usize, rows: usize },
    MissingCovariates { study: usize },
    MissingIntercept { study: usize, subject: usize },
    NonFiniteCovariate { study: usize, subject: usize, column: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoStudies => write!(f, "dataset has no studies"),
            Violation::EmptyStudy { study } => write!(f, "study {}: no subjects", study + 1),
            Violation::VariableDimensionMismatch { study, expected, found } => {
                write!(f, "study {}: variable-dimension mismatch (expected P={expected}, found P={found})", study + 1)
            }
            Violation::VariableNameMismatch { study, variable } => {
                write!(f, "study {}: variable ordering mismatch at variable {}", study + 1, variable + 1)
            }
            Violation::VariableNameCount { study, expected, found } => {
                write!(f, "study {}: {found} variable names for {expected} count rows", study + 1)
            }
            Violation::SubjectIdCount { study, expected, found } => {
                write!(f, "study {}: {found} subject ids for {expected} count columns", study + 1)
            }
            Violation::CovariateRowMismatch { study, subjects, rows } => {
                write!(f, "study {}: covariate rows ({rows}) do not match subjects ({subjects})", study + 1)
            }
            Violation::MissingCovariates { study } => {
                write!(f, "study {}: missing intercept/covariates", study + 1)
            }
            Violation::MissingIntercept { study, subject } => write!(
                f,
                "study {}, subject {}: missing intercept (covariate column 1 is not 1)",
                study + 1,
                subject + 1
            ),
            Violation::NonFiniteCovariate { study, subject, column } => {
                write!(f, "study {}, subject {}, covariate {}: non-finite value", study + 1, subject + 1, column + 1)
            }
        }
    }
}

/// Returns every invariant violation; an empty vector means the dataset is usable.
pub fn validate_dataset(data: &CountDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let Some(first) = data.studies.first() else {
        out.push(Violation::NoStudies);
        return out;
    };
    let p = first.num_variables();
    for (s, study) in data.studies.iter().enumerate() {
        let n = study.num_subjects();
        if n == 0 {
            out.push(Violation::EmptyStudy { study: s });
        }
        if study.num_variables() != p {
            out.push(Violation::VariableDimensionMismatch { study: s, expected: p, found: study.num_variables() });
        }
        if study.variable_names.len() != study.num_variables() {
            out.push(Violation::VariableNameCount {
                study: s,
                expected: study.num_variables(),
                found: study.variable_names.len(),
            });
        } else if s > 0 && study.num_variables() == p {
            for (v, (a, b)) in first.variable_names.iter().zip(&study.variable_names).enumerate() {
                if a != b {
                    out.push(Violation::VariableNameMismatch { study: s, variable: v });
                }
            }
        }
        if study.subject_ids.len() != n {
            out.push(Violation::SubjectIdCount { study: s, expected: n, found: study.subject_ids.len() });
        }
        if study.covariates.ncols() == 0 {
            out.push(Violation::MissingCovariates { study: s });
            continue;
        }
        if study.covariates.nrows() != n {
            out.push(Violation::CovariateRowMismatch { study: s, subjects: n, rows: study.covariates.nrows() });
        }
        for ((i, q), value) in study.covariates.indexed_iter() {
            if !value.is_finite() {
                out.push(Violation::NonFiniteCovariate { study: s, subject: i, column: q });
            } else if q == 0 && *value != 1.0 {
                out.push(Violation::MissingIntercept { study: s, subject: i });
            }
        }
    }
    out
}

fn default_alpha_m() -> f64 {
    1.0
}
fn default_beta_m() -> f64 {
    1.0
}
fn default_alpha_w() -> f64 {
    1.0
}
fn default_beta_w() -> f64 {
    25.0
}
fn default_c() -> f64 {
    10.0
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_gamma1() -> f64 {
    1.5
}
fn default_gamma2() -> f64 {
    20.0
}
fn default_beta0() -> Vec<f64> {
    vec![1.5, 0.0, 0.0, 0.0]
}
fn default_tau0() -> f64 {
    5.0
}
fn default_truncation() -> usize {
    5
}
fn default_patterns() -> usize {
    10
}

/// Fixed prior constants.
///
/// `beta0[l]` is the prior mean of the intercept coefficient of stick level
/// `l`; all other coefficients have prior mean zero. `tau0` is a precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParameters {
    #[serde(default = "default_alpha_m")]
    pub alpha_m: f64,
    #[serde(default = "default_beta_m")]
    pub beta_m: f64,
    #[serde(default = "default_alpha_w")]
    pub alpha_w: f64,
    #[serde(default = "default_beta_w")]
    pub beta_w: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_gamma1")]
    pub gamma1_theta: f64,
    #[serde(default = "default_gamma2")]
    pub gamma2_theta: f64,
    #[serde(default = "default_beta0")]
    pub beta0: Vec<f64>,
    #[serde(default = "default_tau0")]
    pub tau0: f64,
    #[serde(rename = "L_star", default = "default_truncation")]
    pub truncation: usize,
    #[serde(rename = "R", default = "default_patterns")]
    pub num_patterns: usize,
}

impl Default for HyperParameters {
    fn default() -> Self {
        Self {
            alpha_m: default_alpha_m(),
            beta_m: default_beta_m(),
            alpha_w: default_alpha_w(),
            beta_w: default_beta_w(),
            c: default_c(),
            epsilon: default_epsilon(),
            gamma1_theta: default_gamma1(),
            gamma2_theta: default_gamma2(),
            beta0: default_beta0(),
            tau0: default_tau0(),
            truncation: default_truncation(),
            num_patterns: default_patterns(),
        }
    }
}

impl HyperParameters {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("alpha_m", self.alpha_m),
            ("beta_m", self.beta_m),
            ("alpha_w", self.alpha_w),
            ("beta_w", self.beta_w),
            ("epsilon", self.epsilon),
            ("gamma1_theta", self.gamma1_theta),
            ("gamma2_theta", self.gamma2_theta),
            ("tau0", self.tau0),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::InvalidHyperParameters(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.c >= 2.0 && self.c.is_finite()) {
            return Err(ModelError::InvalidHyperParameters(format!("c must be at least 2, got {}", self.c)));
        }
        if self.epsilon > 0.5 {
            return Err(ModelError::InvalidHyperParameters(format!(
                "epsilon must not exceed 0.5, got {}",
                self.epsilon
            )));
        }
        if self.truncation < 2 {
            return Err(ModelError::InvalidHyperParameters("L_star must be at least 2".into()));
        }
        if self.num_patterns < 1 {
            return Err(ModelError::InvalidHyperParameters("R must be at least 1".into()));
        }
        if self.beta0.len() + 1 < self.truncation {
            return Err(ModelError::InvalidHyperParameters(format!(
                "beta0 needs one entry per stick level ({}), got {}",
                self.truncation - 1,
                self.beta0.len()
            )));
        }
        if self.beta0.iter().any(|b| !b.is_finite()) {
            return Err(ModelError::InvalidHyperParameters("beta0 must be finite".into()));
        }
        Ok(())
    }

    /// Kernel shape of cluster `l` (0-based): 1 for the spike, `c` otherwise.
    pub fn cluster_shape(&self, l: usize) -> f64 {
        if l == 0 {
            1.0
        } else {
            self.c
        }
    }

    /// Prior mean vector of the level-`l` coefficients in a study with `q` covariates.
    pub fn beta_prior_mean(&self, l: usize, q: usize) -> Array1<f64> {
        let mut mean = Array1::zeros(q);
        if q > 0 {
            mean[0] = self.beta0.get(l).copied().unwrap_or(0.0);
        }
        mean
    }

    /// Prior mean of the non-spike cluster means, used to scale initial scores.
    pub fn prior_theta_mean(&self) -> f64 {
        if self.gamma1_theta > 1.0 {
            self.gamma2_theta / (self.gamma1_theta - 1.0)
        } else {
            self.gamma2_theta
        }
    }
}

/// Full configuration of every latent variable of the augmented model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    /// P×K loadings.
    pub w: Array2<f64>,
    /// Per study, K×N scores.
    pub h: Vec<Array2<f64>>,
    /// Per study, P×N excess-zero indicators.
    pub a: Vec<Array2<bool>>,
    /// Per study, P×K×N latent counts.
    pub z: Vec<Array3<u32>>,
    /// Per study, length-P excess-zero probabilities.
    pub pi: Vec<Array1<f64>>,
    /// Per study, K×N cluster labels in `0..L*`.
    pub d: Vec<Array2<usize>>,
    /// K×L* cluster means; column 0 is pinned to epsilon.
    pub theta: Array2<f64>,
    /// Per study, K×(L*-1)×Q probit coefficients.
    pub beta: Vec<Array3<f64>>,
    /// Per study, K×(L*-1)×N probit augmentation; NaN where undefined.
    pub y: Vec<Array3<f64>>,
}

impl LatentState {
    pub fn num_patterns(&self) -> usize {
        self.w.ncols()
    }

    pub fn truncation(&self) -> usize {
        self.theta.ncols()
    }

    /// Poisson rate `sum_k w[p,k] h[k,i]` of one cell.
    pub fn poisson_rate(&self, s: usize, p: usize, i: usize) -> f64 {
        let h = &self.h[s];
        self.w.row(p).iter().enumerate().map(|(k, w)| w * h[[k, i]]).sum()
    }
}

/// Draws an overdispersed, prior-consistent starting state.
pub fn init_state(data: &CountDataset, hp: &HyperParameters, rng: &mut RngStream) -> Result<LatentState, ModelError> {
    hp.validate()?;
    let violations = validate_dataset(data);
    if !violations.is_empty() {
        return Err(ModelError::InvalidDataset(violations));
    }
    let p_dim = data.num_variables();
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

    let theta_bar = hp.prior_theta_mean();
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

    for study in &data.studies {
        let n = study.num_subjects();
        let q = study.num_covariates();

        let mut pi = Array1::zeros(p_dim);
        for v in pi.iter_mut() {
            *v = sample_beta(hp.alpha_m, hp.beta_m, rng)?;
        }

        let mut a = Array2::from_elem((p_dim, n), false);
        for ((p, i), cell) in a.indexed_iter_mut() {
            if study.counts[[p, i]] == 0 {
                *cell = sample_bernoulli(pi[p], rng);
            }
        }

        let mut h = Array2::zeros((k_dim, n));
        for v in h.iter_mut() {
            *v = sample_gamma(hp.c, hp.c / theta_bar, rng)?;
        }

        let mut d = Array2::zeros((k_dim, n));
        for v in d.iter_mut() {
            *v = (rand::Rng::random::<f64>(rng) * levels as f64) as usize;
            *v = (*v).min(levels - 1);
        }

        let mut beta = Array3::zeros((k_dim, levels - 1, q));
        let sd = hp.tau0.recip().sqrt();
        for k in 0..k_dim {
            for l in 0..levels - 1 {
                let mean = hp.beta_prior_mean(l, q);
                for j in 0..q {
                    beta[[k, l, j]] = mean[j] + sd * sample_standard_normal(rng);
                }
            }
        }

        state.pi.push(pi);
        state.a.push(a);
        state.h.push(h);
        state.d.push(d);
        state.beta.push(beta);
        state.z.push(Array3::zeros((p_dim, k_dim, n)));
        state.y.push(Array3::from_elem((k_dim, levels - 1, n), f64::NAN));
    }

    let mut weights = vec![0.0; k_dim];
    let mut row = vec![0u32; k_dim];
    for (s, study) in data.studies.iter().enumerate() {
        for p in 0..p_dim {
            for i in 0..study.num_subjects() {
                let m = study.counts[[p, i]];
                if state.a[s][[p, i]] || m == 0 {
                    continue;
                }
                for k in 0..k_dim {
                    weights[k] = state.w[[p, k]] * state.h[s][[k, i]];
                }
                sample_multinomial_into(m, &weights, &mut row, rng)?;
                for k in 0..k_dim {
                    state.z[s][[p, k, i]] = row[k];
                }
            }
        }
        for k in 0..k_dim {
            for i in 0..study.num_subjects() {
                let label = state.d[s][[k, i]];
                for l in 0..levels - 1 {
                    let mean = linear_predictor(state.beta[s].slice(ndarray::s![k, l, ..]), study.covariate_row(i));
                    state.y[s][[k, l, i]] = match l.cmp(&label) {
                        std::cmp::Ordering::Equal => sample_truncated_normal(mean, TruncationSide::Positive, rng),
                        std::cmp::Ordering::Less => sample_truncated_normal(mean, TruncationSide::Negative, rng),
                        std::cmp::Ordering::Greater => f64::NAN,
                    };
                }
            }
        }
    }
    Ok(state)
}

/// Which representation of the stick-breaking allocation enters the joint density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbitTerms {
    /// Truncated-normal augmentation densities of `y` (requires sign-consistent `y`).
    Augmented,
    /// `y` integrated out: `ln omega_{d}` at the current coefficients.
    Marginal,
}

/// Complete-data log-likelihood of the counts under the augmented representation.
pub fn log_likelihood(data: &CountDataset, state: &LatentState) -> Result<f64, ModelError> {
    let k_dim = state.num_patterns();
    let mut total = 0.0;
    for (s, study) in data.studies.iter().enumerate() {
        let h = &state.h[s];
        let z = &state.z[s];
        for p in 0..study.num_variables() {
            for i in 0..study.num_subjects() {
                let m = study.counts[[p, i]];
                if state.a[s][[p, i]] {
                    if m != 0 || (0..k_dim).any(|k| z[[p, k, i]] != 0) {
                        return Err(ModelError::InconsistentState(format!(
                            "study {s}, cell ({p},{i}): excess zero with nonzero counts"
                        )));
                    }
                    continue;
                }
                let mut sum = 0u32;
                for k in 0..k_dim {
                    let count = z[[p, k, i]];
                    sum += count;
                    total += log_poisson_pmf(count, state.w[[p, k]] * h[[k, i]])?;
                }
                if sum != m {
                    return Err(ModelError::InconsistentState(format!(
                        "study {s}, cell ({p},{i}): latent counts sum to {sum}, observed {m}"
                    )));
                }
            }
        }
    }
    Ok(total)
}

/// Log of the full joint density of data and latent state (up to no constant).
pub fn log_joint(
    data: &CountDataset,
    hp: &HyperParameters,
    state: &LatentState,
    probit: ProbitTerms,
) -> Result<f64, ModelError> {
    let levels = state.truncation();
    let k_dim = state.num_patterns();
    let mut total = log_likelihood(data, state)?;

    for (s, study) in data.studies.iter().enumerate() {
        for p in 0..study.num_variables() {
            let pi = state.pi[s][p];
            total += log_beta_pdf(pi, hp.alpha_m, hp.beta_m)?;
            let ones = (0..study.num_subjects()).filter(|&i| state.a[s][[p, i]]).count() as f64;
            let zeros = study.num_subjects() as f64 - ones;
            total += ones * pi.ln() + zeros * (-pi).ln_1p();
        }
    }

    for &w in &state.w {
        total += log_gamma_pdf(w, hp.alpha_w, hp.beta_w)?;
    }

    for k in 0..k_dim {
        if state.theta[[k, 0]] != hp.epsilon {
            return Err(ModelError::InconsistentState(format!(
                "spike mean of pattern {k} is {} instead of epsilon",
                state.theta[[k, 0]]
            )));
        }
        for l in 1..levels {
            total += log_inverse_gamma_pdf(state.theta[[k, l]], hp.gamma1_theta, hp.gamma2_theta)?;
        }
    }

    let prior_variance = hp.tau0.recip();
    for (s, study) in data.studies.iter().enumerate() {
        let q = study.num_covariates();
        for k in 0..k_dim {
            for l in 0..levels - 1 {
                let mean = hp.beta_prior_mean(l, q);
                for j in 0..q {
                    total += log_normal_pdf(state.beta[s][[k, l, j]], mean[j], prior_variance);
                }
            }
        }

        for k in 0..k_dim {
            for i in 0..study.num_subjects() {
                let label = state.d[s][[k, i]];
                let shape = hp.cluster_shape(label);
                total += log_gamma_pdf(state.h[s][[k, i]], shape, shape / state.theta[[k, label]])?;
                let x = study.covariate_row(i);
                match probit {
                    ProbitTerms::Marginal => {
                        let predictors: Vec<f64> = (0..levels - 1)
                            .map(|l| linear_predictor(state.beta[s].slice(ndarray::s![k, l, ..]), x))
                            .collect();
                        total += log_stick_weights(&predictors)[label];
                    }
                    ProbitTerms::Augmented => {
                        for l in 0..levels - 1 {
                            let y = state.y[s][[k, l, i]];
                            let consistent = match l.cmp(&label) {
                                std::cmp::Ordering::Less => y < 0.0,
                                std::cmp::Ordering::Equal => y > 0.0,
                                std::cmp::Ordering::Greater => y.is_nan(),
                            };
                            if !consistent {
                                return Err(ModelError::InconsistentState(format!(
                                    "study {s}, pattern {k}, subject {i}: y at level {l} is {y} with label {label}"
                                )));
                            }
                            if l <= label {
                                let mean = linear_predictor(state.beta[s].slice(ndarray::s![k, l, ..]), x);
                                total += log_normal_pdf(y, mean, 1.0);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(total)
}

/// A latent-state invariant violation found by [`audit_state`].
#[derive(Debug, Clone, PartialEq)]
pub enum StateViolation {
    Shape(String),
    CountSum { study: usize, variable: usize, subject: usize },
    ExcessZeroOnPositiveCount { study: usize, variable: usize, subject: usize },
    NonPositive { field: &'static str },
    ProbabilityOutOfRange { study: usize, variable: usize },
    SpikeNotPinned { pattern: usize },
    LabelOutOfRange { study: usize, pattern: usize, subject: usize },
    ProbitSign { study: usize, pattern: usize, level: usize, subject: usize },
    StickWeights { study: usize, pattern: usize, subject: usize },
}

/// Checks every latent-state invariant in one pass.
///
/// `pi == 0` is accepted so the degenerate configuration, which pins zero
/// inflation off, can be audited too.
pub fn audit_state(data: &CountDataset, hp: &HyperParameters, state: &LatentState) -> Vec<StateViolation> {
    let mut out = Vec::new();
    let p_dim = data.num_variables();
    let k_dim = state.num_patterns();
    let levels = state.truncation();
    if state.w.dim() != (p_dim, k_dim) || levels != hp.truncation {
        out.push(StateViolation::Shape("loadings or truncation".into()));
        return out;
    }
    if state.w.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        out.push(StateViolation::NonPositive { field: "w" });
    }
    if state.theta.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        out.push(StateViolation::NonPositive { field: "theta" });
    }
    for k in 0..k_dim {
        if state.theta[[k, 0]] != hp.epsilon {
            out.push(StateViolation::SpikeNotPinned { pattern: k });
        }
    }
    let per_study =
        [state.h.len(), state.a.len(), state.z.len(), state.pi.len(), state.d.len(), state.beta.len(), state.y.len()];
    if per_study.iter().any(|len| *len != data.num_studies()) {
        out.push(StateViolation::Shape("per-study field count".into()));
        return out;
    }
    for (s, study) in data.studies.iter().enumerate() {
        let n = study.num_subjects();
        let q = study.num_covariates();
        if state.h[s].dim() != (k_dim, n)
            || state.a[s].dim() != (p_dim, n)
            || state.z[s].dim() != (p_dim, k_dim, n)
            || state.pi[s].len() != p_dim
            || state.d[s].dim() != (k_dim, n)
            || state.beta[s].dim() != (k_dim, levels - 1, q)
            || state.y[s].dim() != (k_dim, levels - 1, n)
        {
            out.push(StateViolation::Shape(format!("study {s}")));
            continue;
        }
        if state.h[s].iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            out.push(StateViolation::NonPositive { field: "h" });
        }
        for p in 0..p_dim {
            let pi = state.pi[s][p];
            if !(pi >= 0.0 && pi < 1.0) {
                out.push(StateViolation::ProbabilityOutOfRange { study: s, variable: p });
            }
            for i in 0..n {
                let m = study.counts[[p, i]];
                let sum: u32 = (0..k_dim).map(|k| state.z[s][[p, k, i]]).sum();
                if state.a[s][[p, i]] {
                    if m != 0 {
                        out.push(StateViolation::ExcessZeroOnPositiveCount { study: s, variable: p, subject: i });
                    }
                    if sum != 0 {
                        out.push(StateViolation::CountSum { study: s, variable: p, subject: i });
                    }
                } else if sum != m {
                    out.push(StateViolation::CountSum { study: s, variable: p, subject: i });
                }
            }
        }
        for k in 0..k_dim {
            for i in 0..n {
                let label = state.d[s][[k, i]];
                if label >= levels {
                    out.push(StateViolation::LabelOutOfRange { study: s, pattern: k, subject: i });
                    continue;
                }
                for l in 0..levels - 1 {
                    let y = state.y[s][[k, l, i]];
                    let ok = match l.cmp(&label) {
                        std::cmp::Ordering::Less => y < 0.0,
                        std::cmp::Ordering::Equal => y > 0.0,
                        std::cmp::Ordering::Greater => y.is_nan(),
                    };
                    if !ok {
                        out.push(StateViolation::ProbitSign { study: s, pattern: k, level: l, subject: i });
                    }
                }
                let predictors: Vec<f64> = (0..levels - 1)
                    .map(|l| linear_predictor(state.beta[s].slice(ndarray::s![k, l, ..]), study.covariate_row(i)))
                    .collect();
                let weights = stick_weights(&predictors);
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 || weights.iter().any(|w| *w < 0.0) {
                    out.push(StateViolation::StickWeights { study: s, pattern: k, subject: i });
                }
            }
        }
    }
    out
}

/// Which latent fields each stored draw retains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrawFields {
    pub w: bool,
    pub pi: bool,
    pub d: bool,
    pub h_summary: bool,
    pub h: bool,
    pub theta: bool,
}

impl Default for DrawFields {
    fn default() -> Self {
        Self { w: true, pi: true, d: true, h_summary: true, h: false, theta: false }
    }
}

/// A thinned post-burn-in snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub sweep: usize,
    pub w: Option<Array2<f64>>,
    pub pi: Option<Vec<Array1<f64>>>,
    pub d: Option<Vec<Array2<usize>>>,
    /// K×S mean score per pattern and study.
    pub h_summary: Option<Array2<f64>>,
    pub h: Option<Vec<Array2<f64>>>,
    pub theta: Option<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummaries {
    pub w_median: Array2<f64>,
    pub h_median: Vec<Array2<f64>>,
    pub pi_median: Vec<Array1<f64>>,
    pub pi_lower: Vec<Array1<f64>>,
    pub pi_upper: Vec<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chain_id: u64,
    pub truncation: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub draws: Vec<Draw>,
    pub summaries: PosteriorSummaries,
    /// K×S share of subjects outside the spike cluster.
    pub prevalence: Array2<f64>,
    pub meta: ChainMeta,
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    /// Two studies of 4 and 5 subjects, P=3, covariates `[1, 0.3 i]`.
    pub(crate) fn small_dataset() -> CountDataset {
        let study = |n: usize, offset: u32| StudyData {
            counts: Array2::from_shape_fn((3, n), |(p, i)| (p as u32 + i as u32 + offset) % 4),
            covariates: Array2::from_shape_fn((n, 2), |(i, q)| if q == 0 { 1.0 } else { i as f64 * 0.3 }),
            variable_names: vec!["a".into(), "b".into(), "c".into()],
            subject_ids: (0..n).map(|i| format!("s{i}")).collect(),
        };
        CountDataset { studies: vec![study(4, 0), study(5, 1)] }
    }
}
