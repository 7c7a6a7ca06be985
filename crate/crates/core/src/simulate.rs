//! Ground-truth generators for the benchmark scenarios.
//!
//! Every generator draws from a single stream `(seed, SIMULATION_STREAM)`, so
//! a seed fully determines the data.

use crate::distributions::{
    sample_bernoulli, sample_gamma, sample_standard_normal, standard_normal_cdf, DistributionError, RngStream,
};
use crate::gibbs::stick_weights;
use crate::model::{CountDataset, StudyData};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

/// Stream id reserved for data generation; chains use their chain id.
pub const SIMULATION_STREAM: u64 = 1 << 40;

pub const FULL_SCALE_SUBJECTS: usize = 100;
pub const SCENARIO3_SUBJECTS: [usize; 3] = [946, 460, 304];
pub const STRUCTURAL_ZERO_RATE: f64 = 0.25;
pub const SCENARIO1_LOADING: f64 = 0.2;
pub const PRESENT_SCORE: (f64, f64) = (10.0, 0.2);
pub const SCENARIO2_INCLUSION: [f64; 3] = [0.0, 1.0, 1.0];
pub const SCENARIO3_CLUSTERS: [(f64, f64); 3] = [(1.0, 0.25), (10.0, 2.0), (10.0, 0.2)];
pub const CLUSTERING_CLUSTERS: [(f64, f64); 3] = [(1.0, 0.25), (10.0, 1.0), (10.0, 0.2)];
/// Probit coefficients on `[1, x1, x2]` for the two stick levels of the clustered pattern.
pub const CLUSTERING_COEFFICIENTS: [[f64; 3]; 2] = [[-0.3, 1.2, 0.8], [0.2, -1.0, 0.8]];
pub const ZERO_RATE_RANGE: (f64, f64) = (0.07, 0.95);

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("scale must lie in (0, 1], got {0}")]
    InvalidScale(f64),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusteringBase {
    Scenario1,
    Scenario2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    One,
    Two,
    Three,
    Clustering(ClusteringBase),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    /// P×K true loadings.
    pub w_true: Array2<f64>,
    /// Per study, K×N true scores.
    pub h_true: Vec<Array2<f64>>,
    /// Per study, P×N structural-zero mask.
    pub zero_mask: Vec<Array2<bool>>,
    /// K×S presence design.
    pub sharing: Array2<bool>,
    /// Per study, K×N 1-based labels. Clustered patterns carry their score
    /// cluster; other patterns carry 1 (absent) or 2 (present).
    pub cluster_labels: Option<Vec<Array2<usize>>>,
    pub generator_config: serde_json::Value,
}

impl ScenarioTruth {
    /// Patterns whose labels encode score clusters.
    pub fn clustered_patterns(&self) -> Vec<usize> {
        self.generator_config
            .get("clustered_patterns")
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|x| x.as_u64().map(|k| k as usize)).collect())
            .unwrap_or_default()
    }
}

/// Patterns 1-2 in every study, 3 in studies {1,2}, 4 in {2,3}, 5 in {3}.
pub fn canonical_sharing() -> Array2<bool> {
    let design = [[1, 1, 1], [1, 1, 1], [1, 1, 0], [0, 1, 1], [0, 0, 1]];
    Array2::from_shape_fn((5, 3), |(k, s)| design[k][s] == 1)
}

/// Study sizes after scaling: `round(n * scale)`, at least 2.
pub fn scaled_sizes(base: &[usize], scale: f64) -> Result<Vec<usize>, SimulationError> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(SimulationError::InvalidScale(scale));
    }
    Ok(base.iter().map(|n| ((*n as f64 * scale).round() as usize).max(2)).collect())
}

/// 22 rates evenly spaced on the log scale over [`ZERO_RATE_RANGE`].
pub fn scenario3_zero_rates(p_dim: usize) -> Vec<f64> {
    let (lo, hi) = (ZERO_RATE_RANGE.0.ln(), ZERO_RATE_RANGE.1.ln());
    (0..p_dim).map(|p| (lo + (hi - lo) * p as f64 / (p_dim - 1).max(1) as f64).exp()).collect()
}

fn poisson(lambda: f64, rng: &mut RngStream) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map_or(0, |d| d.sample(rng) as u32)
}

fn dirichlet_columns(
    p_dim: usize,
    k_dim: usize,
    alpha: f64,
    rng: &mut RngStream,
) -> Result<Array2<f64>, SimulationError> {
    let mut w = Array2::zeros((p_dim, k_dim));
    for k in 0..k_dim {
        for p in 0..p_dim {
            w[[p, k]] = sample_gamma(alpha, 1.0, rng)?;
        }
        let total = w.column(k).sum();
        w.column_mut(k).mapv_inplace(|x| x / total);
    }
    Ok(w)
}

fn disjoint_loadings(p_dim: usize, k_dim: usize, value: f64) -> Array2<f64> {
    let support = p_dim / k_dim;
    Array2::from_shape_fn((p_dim, k_dim), |(p, k)| if p / support == k { value } else { 0.0 })
}

/// Columns `[1, x1, x2]` with `x1 ~ Bernoulli(0.5)`, `x2 ~ N(0, 1)`.
fn binary_and_normal_covariates(n: usize, rng: &mut RngStream) -> Array2<f64> {
    let mut x = Array2::ones((n, 3));
    for i in 0..n {
        x[[i, 1]] = if sample_bernoulli(0.5, rng) { 1.0 } else { 0.0 };
        x[[i, 2]] = sample_standard_normal(rng);
    }
    x
}

fn draw_label(weights: &[f64], rng: &mut RngStream) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (l, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return l;
        }
    }
    weights.len() - 1
}

/// Poisson counts with an independent structural-zero mask applied afterwards.
fn observe(w: &Array2<f64>, h: &Array2<f64>, zero_rates: &[f64], rng: &mut RngStream) -> (Array2<u32>, Array2<bool>) {
    let rates = w.dot(h);
    let mut counts = Array2::zeros(rates.dim());
    let mut mask = Array2::from_elem(rates.dim(), false);
    for ((p, i), lambda) in rates.indexed_iter() {
        let m = poisson(*lambda, rng);
        let zero = sample_bernoulli(zero_rates[p], rng);
        mask[[p, i]] = zero;
        counts[[p, i]] = if zero { 0 } else { m };
    }
    (counts, mask)
}

fn study(counts: Array2<u32>, covariates: Array2<f64>, s: usize) -> StudyData {
    let (p_dim, n) = counts.dim();
    StudyData {
        counts,
        covariates,
        variable_names: (1..=p_dim).map(|p| format!("var{p}")).collect(),
        subject_ids: (1..=n).map(|i| format!("s{}_{i}", s + 1)).collect(),
    }
}

struct Backbone {
    w: Array2<f64>,
    covariates: Vec<Array2<f64>>,
    h: Vec<Array2<f64>>,
    presence: Vec<Array2<usize>>,
}

/// Scenario 1/2 scores: each present (pattern, study) pair switches on per subject.
fn backbone(
    base: ClusteringBase,
    sizes: &[usize],
    with_covariates: bool,
    rng: &mut RngStream,
) -> Result<Backbone, SimulationError> {
    let sharing = canonical_sharing();
    let k_dim = sharing.nrows();
    let w = match base {
        ClusteringBase::Scenario1 => disjoint_loadings(20, k_dim, SCENARIO1_LOADING),
        ClusteringBase::Scenario2 => dirichlet_columns(50, k_dim, 0.5, rng)?,
    };
    let mut out = Backbone { w, covariates: Vec::new(), h: Vec::new(), presence: Vec::new() };
    for (s, &n) in sizes.iter().enumerate() {
        let x = if with_covariates || base == ClusteringBase::Scenario2 {
            binary_and_normal_covariates(n, rng)
        } else {
            Array2::ones((n, 1))
        };
        let mut h = Array2::zeros((k_dim, n));
        let mut presence = Array2::from_elem((k_dim, n), 1);
        for k in 0..k_dim {
            if !sharing[[k, s]] {
                continue;
            }
            for i in 0..n {
                let p_on = match base {
                    ClusteringBase::Scenario1 => 0.5,
                    ClusteringBase::Scenario2 => {
                        let b = SCENARIO2_INCLUSION;
                        standard_normal_cdf(b[0] + b[1] * x[[i, 1]] + b[2] * x[[i, 2]])
                    }
                };
                if sample_bernoulli(p_on, rng) {
                    h[[k, i]] = sample_gamma(PRESENT_SCORE.0, PRESENT_SCORE.1, rng)?;
                    presence[[k, i]] = 2;
                }
            }
        }
        out.covariates.push(x);
        out.h.push(h);
        out.presence.push(presence);
    }
    Ok(out)
}

fn assemble(backbone: Backbone, zero_rates: &[f64], rng: &mut RngStream) -> (CountDataset, Vec<Array2<bool>>) {
    let mut studies = Vec::new();
    let mut masks = Vec::new();
    for (s, (h, x)) in backbone.h.iter().zip(&backbone.covariates).enumerate() {
        let (counts, mask) = observe(&backbone.w, h, zero_rates, rng);
        studies.push(study(counts, x.clone(), s));
        masks.push(mask);
    }
    (CountDataset { studies }, masks)
}

/// Disjoint 4-variable patterns over P=20 with the canonical sharing design.
pub fn generate_scenario1(seed: u64, n_per_study: usize) -> Result<(CountDataset, ScenarioTruth), SimulationError> {
    let mut rng = RngStream::new(seed, SIMULATION_STREAM);
    let sizes = vec![n_per_study; 3];
    let backbone = backbone(ClusteringBase::Scenario1, &sizes, false, &mut rng)?;
    let w_true = backbone.w.clone();
    let h_true = backbone.h.clone();
    let (data, zero_mask) = assemble(backbone, &vec![STRUCTURAL_ZERO_RATE; 20], &mut rng);
    let truth = ScenarioTruth {
        w_true,
        h_true,
        zero_mask,
        sharing: canonical_sharing(),
        cluster_labels: None,
        generator_config: json!({
            "scenario": "1",
            "seed": seed,
            "stream": SIMULATION_STREAM,
            "studies": 3,
            "variables": 20,
            "patterns": 5,
            "subjects_per_study": sizes,
            "loading_value": SCENARIO1_LOADING,
            "support_size": 4,
            "present_probability": 0.5,
            "present_score_gamma_shape_rate": PRESENT_SCORE,
            "structural_zero_rate": STRUCTURAL_ZERO_RATE,
            "sharing": sharing_json(&canonical_sharing()),
            "covariates": "intercept",
            "clustered_patterns": [],
        }),
    };
    Ok((data, truth))
}

/// Dirichlet(0.5) patterns over P=50 with covariate-dependent inclusion.
pub fn generate_scenario2(seed: u64, n_per_study: usize) -> Result<(CountDataset, ScenarioTruth), SimulationError> {
    let mut rng = RngStream::new(seed, SIMULATION_STREAM);
    let sizes = vec![n_per_study; 3];
    let backbone = backbone(ClusteringBase::Scenario2, &sizes, true, &mut rng)?;
    let w_true = backbone.w.clone();
    let h_true = backbone.h.clone();
    let (data, zero_mask) = assemble(backbone, &vec![STRUCTURAL_ZERO_RATE; 50], &mut rng);
    let truth = ScenarioTruth {
        w_true,
        h_true,
        zero_mask,
        sharing: canonical_sharing(),
        cluster_labels: None,
        generator_config: json!({
            "scenario": "2",
            "seed": seed,
            "stream": SIMULATION_STREAM,
            "studies": 3,
            "variables": 50,
            "patterns": 5,
            "subjects_per_study": sizes,
            "dirichlet_concentration": 0.5,
            "inclusion_probit_coefficients": SCENARIO2_INCLUSION,
            "present_score_gamma_shape_rate": PRESENT_SCORE,
            "structural_zero_rate": STRUCTURAL_ZERO_RATE,
            "sharing": sharing_json(&canonical_sharing()),
            "covariates": ["intercept", "x1~Bernoulli(0.5)", "x2~N(0,1)"],
            "clustered_patterns": [],
        }),
    };
    Ok((data, truth))
}

/// Three score clusters per pattern with probit stick-breaking membership.
pub fn generate_scenario3(seed: u64, scale: f64) -> Result<(CountDataset, ScenarioTruth), SimulationError> {
    let sizes = scaled_sizes(&SCENARIO3_SUBJECTS, scale)?;
    let mut rng = RngStream::new(seed, SIMULATION_STREAM);
    let (p_dim, k_dim, levels) = (22, 5, SCENARIO3_CLUSTERS.len());
    let w = dirichlet_columns(p_dim, k_dim, 0.5, &mut rng)?;
    let zero_rates = scenario3_zero_rates(p_dim);
    let mut studies = Vec::new();
    let mut h_true = Vec::new();
    let mut masks = Vec::new();
    let mut labels = Vec::new();
    let mut coefficients = Vec::new();
    for (s, &n) in sizes.iter().enumerate() {
        let x = binary_and_normal_covariates(n, &mut rng);
        let beta: Vec<Vec<Array1<f64>>> = (0..k_dim)
            .map(|_| (0..levels - 1).map(|_| Array1::from_shape_fn(3, |_| sample_standard_normal(&mut rng))).collect())
            .collect();
        let mut h = Array2::zeros((k_dim, n));
        let mut d = Array2::zeros((k_dim, n));
        for k in 0..k_dim {
            for i in 0..n {
                let predictors: Vec<f64> = beta[k].iter().map(|b| b.dot(&x.row(i))).collect();
                let label = draw_label(&stick_weights(&predictors), &mut rng);
                let (shape, rate) = SCENARIO3_CLUSTERS[label];
                h[[k, i]] = sample_gamma(shape, rate, &mut rng)?;
                d[[k, i]] = label + 1;
            }
        }
        let (counts, mask) = observe(&w, &h, &zero_rates, &mut rng);
        studies.push(study(counts, x, s));
        coefficients
            .push(beta.iter().map(|levels| levels.iter().map(|b| b.to_vec()).collect::<Vec<_>>()).collect::<Vec<_>>());
        h_true.push(h);
        masks.push(mask);
        labels.push(d);
    }
    let truth = ScenarioTruth {
        w_true: w,
        h_true,
        zero_mask: masks,
        sharing: Array2::from_elem((k_dim, sizes.len()), true),
        cluster_labels: Some(labels),
        generator_config: json!({
            "scenario": "3",
            "seed": seed,
            "stream": SIMULATION_STREAM,
            "scale": scale,
            "studies": 3,
            "variables": p_dim,
            "patterns": k_dim,
            "subjects_per_study": sizes,
            "dirichlet_concentration": 0.5,
            "cluster_gamma_shape_rate": SCENARIO3_CLUSTERS,
            "probit_coefficients": coefficients,
            "zero_rates": zero_rates,
            "covariates": ["intercept", "x1~Bernoulli(0.5)", "x2~N(0,1)"],
            "clustered_patterns": (0..k_dim).collect::<Vec<_>>(),
        }),
    };
    Ok((CountDataset { studies }, truth))
}

/// Scenario 1 or 2 backbone where pattern 1 is present for every subject
/// with three covariate-dependent score clusters.
pub fn generate_clustering_scenario(
    seed: u64,
    base: ClusteringBase,
    n_per_study: usize,
) -> Result<(CountDataset, ScenarioTruth), SimulationError> {
    let mut rng = RngStream::new(seed, SIMULATION_STREAM);
    let sizes = vec![n_per_study; 3];
    let mut backbone = backbone(base, &sizes, true, &mut rng)?;
    let mut labels = backbone.presence.clone();
    for (s, x) in backbone.covariates.iter().enumerate() {
        for i in 0..x.nrows() {
            let predictors: Vec<f64> =
                CLUSTERING_COEFFICIENTS.iter().map(|b| b.iter().zip(x.row(i)).map(|(b, x)| b * x).sum()).collect();
            let label = draw_label(&stick_weights(&predictors), &mut rng);
            let (shape, rate) = CLUSTERING_CLUSTERS[label];
            backbone.h[s][[0, i]] = sample_gamma(shape, rate, &mut rng)?;
            labels[s][[0, i]] = label + 1;
        }
    }
    let p_dim = backbone.w.nrows();
    let w_true = backbone.w.clone();
    let h_true = backbone.h.clone();
    let (data, zero_mask) = assemble(backbone, &vec![STRUCTURAL_ZERO_RATE; p_dim], &mut rng);
    let mut sharing = canonical_sharing();
    sharing.row_mut(0).fill(true);
    let truth = ScenarioTruth {
        w_true,
        h_true,
        zero_mask,
        sharing: sharing.clone(),
        cluster_labels: Some(labels),
        generator_config: json!({
            "scenario": "clustering",
            "base": base,
            "seed": seed,
            "stream": SIMULATION_STREAM,
            "studies": 3,
            "variables": p_dim,
            "patterns": 5,
            "subjects_per_study": sizes,
            "cluster_gamma_shape_rate": CLUSTERING_CLUSTERS,
            "cluster_probit_coefficients": CLUSTERING_COEFFICIENTS,
            "present_score_gamma_shape_rate": PRESENT_SCORE,
            "structural_zero_rate": STRUCTURAL_ZERO_RATE,
            "sharing": sharing_json(&sharing),
            "covariates": ["intercept", "x1~Bernoulli(0.5)", "x2~N(0,1)"],
            "clustered_patterns": [0],
        }),
    };
    Ok((data, truth))
}

/// Dispatches on `scenario`; `scale` shrinks every study size.
pub fn generate(scenario: Scenario, seed: u64, scale: f64) -> Result<(CountDataset, ScenarioTruth), SimulationError> {
    match scenario {
        Scenario::Three => generate_scenario3(seed, scale),
        other => {
            let n = scaled_sizes(&[FULL_SCALE_SUBJECTS], scale)?[0];
            match other {
                Scenario::One => generate_scenario1(seed, n),
                Scenario::Two => generate_scenario2(seed, n),
                Scenario::Clustering(base) => generate_clustering_scenario(seed, base, n),
                Scenario::Three => unreachable!(),
            }
        }
    }
}

fn sharing_json(sharing: &Array2<bool>) -> Vec<Vec<u8>> {
    sharing.rows().into_iter().map(|r| r.iter().map(|b| u8::from(*b)).collect()).collect()
}
