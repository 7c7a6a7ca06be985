//! Pattern selection and prevalence from posterior cluster labels.

use crate::gibbs::SamplerError;
use crate::model::ChainOutput;
use ndarray::Array2;
use std::collections::BTreeSet;

pub const DEFAULT_ACTIVITY_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceReport {
    /// K×S share of subjects whose spike probability is below one half.
    pub prevalence: Array2<f64>,
    /// Per pattern, the studies where it is active.
    pub active_in: Vec<BTreeSet<usize>>,
    pub global_active_count: usize,
}

/// K×S prevalence from per-study K×N posterior spike probabilities.
pub fn prevalence_from_spike_frequencies(spike: &[Array2<f64>]) -> Array2<f64> {
    let k_dim = spike.first().map_or(0, |m| m.nrows());
    Array2::from_shape_fn((k_dim, spike.len()), |(k, s)| {
        let row = spike[s].row(k);
        if row.is_empty() {
            return 0.0;
        }
        row.iter().filter(|p| **p < 0.5).count() as f64 / row.len() as f64
    })
}

/// N_s×L* empirical label frequencies of pattern `k` in study `s`.
pub fn cluster_membership_probabilities(chain: &ChainOutput, k: usize, s: usize) -> Result<Array2<f64>, SamplerError> {
    let levels = chain.meta.truncation;
    let mut counts: Option<Array2<f64>> = None;
    let mut draws = 0.0;
    for draw in &chain.draws {
        let labels = draw.d.as_ref().ok_or(SamplerError::MissingField("d"))?;
        let row = labels[s].row(k);
        let acc = counts.get_or_insert_with(|| Array2::zeros((row.len(), levels)));
        for (i, l) in row.iter().enumerate() {
            acc[[i, *l]] += 1.0;
        }
        draws += 1.0;
    }
    let counts = counts.ok_or(SamplerError::MissingField("d"))?;
    Ok(counts / draws)
}

pub fn prevalence_report(prevalence: &Array2<f64>, activity_threshold: f64) -> PrevalenceReport {
    let active_in: Vec<BTreeSet<usize>> = prevalence
        .rows()
        .into_iter()
        .map(|row| row.iter().enumerate().filter(|(_, p)| **p >= activity_threshold).map(|(s, _)| s).collect())
        .collect();
    let global_active_count = active_in.iter().filter(|set| !set.is_empty()).count();
    PrevalenceReport { prevalence: prevalence.clone(), active_in, global_active_count }
}

/// Prevalence report of a chain; labels are recomputed from stored draws when present.
pub fn pattern_prevalence(chain: &ChainOutput, activity_threshold: f64) -> PrevalenceReport {
    let has_labels = !chain.draws.is_empty() && chain.draws.iter().all(|d| d.d.is_some());
    if !has_labels {
        return prevalence_report(&chain.prevalence, activity_threshold);
    }
    let (k_dim, studies) = chain.prevalence.dim();
    let mut spike = Vec::with_capacity(studies);
    for s in 0..studies {
        let n = chain.draws[0].d.as_ref().map_or(0, |d| d[s].ncols());
        let mut m = Array2::zeros((k_dim, n));
        for k in 0..k_dim {
            let probs = cluster_membership_probabilities(chain, k, s).expect("labels are stored");
            m.row_mut(k).assign(&probs.column(0));
        }
        spike.push(m);
    }
    prevalence_report(&prevalence_from_spike_frequencies(&spike), activity_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChainMeta, Draw, PosteriorSummaries};
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    fn chain_with_labels(labels: Vec<Vec<Array2<usize>>>, levels: usize) -> ChainOutput {
        let studies = labels[0].len();
        let k_dim = labels[0][0].nrows();
        ChainOutput {
            draws: labels
                .into_iter()
                .enumerate()
                .map(|(t, d)| Draw {
                    sweep: t + 1,
                    w: None,
                    pi: None,
                    d: Some(d),
                    h_summary: None,
                    h: None,
                    theta: None,
                })
                .collect(),
            summaries: PosteriorSummaries {
                w_median: Array2::zeros((1, k_dim)),
                h_median: vec![],
                pi_median: vec![Array1::zeros(1)],
                pi_lower: vec![],
                pi_upper: vec![],
            },
            prevalence: Array2::zeros((k_dim, studies)),
            meta: ChainMeta {
                iterations: 1,
                burn_in: 0,
                thin: 1,
                seed: 0,
                chain_id: 0,
                truncation: levels,
                config_hash: String::new(),
            },
        }
    }

    #[test]
    fn single_draw_is_one_hot() {
        let chain = chain_with_labels(vec![vec![array![[0, 2, 1]]]], 3);
        let m = cluster_membership_probabilities(&chain, 0, 0).unwrap();
        assert_eq!(m, array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
    }

    #[test]
    fn extreme_prevalences() {
        let chain = chain_with_labels(vec![vec![array![[0, 0, 0], [1, 3, 2]]]; 4], 4);
        let report = pattern_prevalence(&chain, DEFAULT_ACTIVITY_THRESHOLD);
        assert_eq!(report.prevalence, array![[0.0], [1.0]]);
        assert_eq!(report.global_active_count, 1);
        assert!(report.active_in[0].is_empty());
    }

    #[test]
    fn missing_labels_are_reported() {
        let mut chain = chain_with_labels(vec![vec![array![[0]]]], 2);
        chain.draws[0].d = None;
        assert!(matches!(cluster_membership_probabilities(&chain, 0, 0), Err(SamplerError::MissingField("d"))));
    }

    fn labels_strategy() -> impl Strategy<Value = Vec<Vec<Array2<usize>>>> {
        (1usize..6, 1usize..4, 1usize..7).prop_flat_map(|(draws, k_dim, n)| {
            proptest::collection::vec(proptest::collection::vec(0usize..4, k_dim * n), draws).prop_map(move |all| {
                all.into_iter().map(|flat| vec![Array2::from_shape_vec((k_dim, n), flat).unwrap()]).collect()
            })
        })
    }

    proptest! {
        #[test]
        fn membership_rows_are_stochastic(labels in labels_strategy()) {
            let chain = chain_with_labels(labels, 4);
            let k_dim = chain.prevalence.nrows();
            for k in 0..k_dim {
                let m = cluster_membership_probabilities(&chain, k, 0).unwrap();
                for row in m.rows() {
                    prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
                }
            }
            let report = pattern_prevalence(&chain, DEFAULT_ACTIVITY_THRESHOLD);
            prop_assert!(report.global_active_count <= k_dim);
        }

        #[test]
        fn prevalence_ignores_non_spike_relabeling(labels in labels_strategy()) {
            let base = pattern_prevalence(&chain_with_labels(labels.clone(), 4), 0.05);
            let swapped: Vec<Vec<Array2<usize>>> = labels
                .into_iter()
                .map(|d| d.into_iter().map(|m| m.mapv(|l| if l == 0 { 0 } else { 4 - l })).collect())
                .collect();
            let relabeled = pattern_prevalence(&chain_with_labels(swapped, 4), 0.05);
            prop_assert_eq!(base, relabeled);
        }
    }
}
