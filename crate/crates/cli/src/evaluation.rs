//! Fit-versus-truth comparison shared by `evaluate` and the benchmark runs.

use crate::output::FitSummary;
use ndarray::Array2;
use zinmf_core::evaluate::{
    adjusted_rand_index, match_patterns, point_estimate_from_partitions, reconstruction_error, score_error,
    tertile_baseline, EvaluateError, MatchMethod, MatchResult, DEFAULT_MATCH_THRESHOLD,
};
use zinmf_core::simulate::ScenarioTruth;
use zinmf_core::stick::{prevalence_report, DEFAULT_ACTIVITY_THRESHOLD};

#[derive(Debug, Clone, PartialEq)]
pub struct FitEvaluation {
    pub matching: MatchResult,
    /// Per true pattern: the matched similarity, else the best similarity to any estimated column.
    pub cosines: Vec<f64>,
    /// `None` when nothing matched.
    pub score_error: Option<f64>,
    pub reconstruction_error: f64,
    pub pattern_count: usize,
    /// Per true pattern, the prevalence row of its matched estimate.
    pub matched_prevalence: Vec<Option<Vec<f64>>>,
    /// `(true pattern, ARI)` for patterns with cluster labels.
    pub ari: Vec<(usize, f64)>,
    pub baseline_ari: Vec<(usize, f64)>,
}

impl FitEvaluation {
    pub fn median_cosine(&self) -> f64 {
        let mut c = self.cosines.clone();
        c.sort_by(f64::total_cmp);
        let n = c.len();
        if n % 2 == 1 {
            c[n / 2]
        } else {
            0.5 * (c[n / 2 - 1] + c[n / 2])
        }
    }
}

fn best_column(similarities: &Array2<f64>, t: usize) -> usize {
    (0..similarities.nrows()).max_by(|&a, &b| similarities[[a, t]].total_cmp(&similarities[[b, t]])).unwrap_or(0)
}

fn estimate_for(matching: &MatchResult, t: usize) -> usize {
    matching.estimated_for(t).unwrap_or_else(|| best_column(&matching.similarities, t))
}

fn pooled_row(h: &[Array2<f64>], k: usize) -> Vec<f64> {
    h.iter().flat_map(|m| m.row(k).to_vec()).collect()
}

fn pooled_truth_labels(labels: &[Array2<usize>], k: usize) -> Vec<usize> {
    labels.iter().flat_map(|m| m.row(k).to_vec()).collect()
}

/// Compares one fit to the truth. The tertile baseline uses `baseline`'s
/// scores when given, else the fit's own.
pub fn evaluate_fit(
    fit: &FitSummary,
    truth: &ScenarioTruth,
    baseline: Option<&FitSummary>,
) -> Result<FitEvaluation, EvaluateError> {
    let matching = match_patterns(&fit.w_median, &truth.w_true, DEFAULT_MATCH_THRESHOLD, MatchMethod::Greedy, None)?;
    let k_true = truth.w_true.ncols();
    let cosines = (0..k_true)
        .map(|t| {
            matching
                .similarity_for(t)
                .unwrap_or_else(|| matching.similarities[[best_column(&matching.similarities, t), t]])
        })
        .collect();
    let score_error = match score_error(&fit.h_median, &truth.h_true, &fit.w_median, &truth.w_true, &matching) {
        Ok(e) => Some(e),
        Err(EvaluateError::NoMatch) => None,
        Err(e) => return Err(e),
    };
    let reconstruction_error = reconstruction_error(&fit.w_median, &fit.h_median, &truth.w_true, &truth.h_true)?;
    let pattern_count = prevalence_report(&fit.prevalence, DEFAULT_ACTIVITY_THRESHOLD).global_active_count;
    let matched_prevalence =
        (0..k_true).map(|t| matching.estimated_for(t).map(|e| fit.prevalence.row(e).to_vec())).collect();

    let mut ari = Vec::new();
    let mut baseline_ari = Vec::new();
    if let Some(labels) = &truth.cluster_labels {
        let clustered = truth.clustered_patterns();
        for &t in &clustered {
            let truth_labels = pooled_truth_labels(labels, t);
            let e = estimate_for(&matching, t);
            if let Some(draws) = &fit.d_draws {
                let partitions: Vec<Vec<usize>> = draws
                    .iter()
                    .map(|d| d.iter().flat_map(|m| m.row(e).iter().map(|l| l + 1).collect::<Vec<_>>()).collect())
                    .collect();
                let estimate = point_estimate_from_partitions(&partitions)?;
                ari.push((t, adjusted_rand_index(&estimate, &truth_labels)?));
            }
            let scores = match baseline {
                Some(b) => {
                    let m = match_patterns(&b.w_median, &truth.w_true, 0.0, MatchMethod::Greedy, None)?;
                    pooled_row(&b.h_median, estimate_for(&m, t))
                }
                None => pooled_row(&fit.h_median, e),
            };
            baseline_ari.push((t, adjusted_rand_index(&tertile_baseline(&scores), &truth_labels)?));
        }
    }
    Ok(FitEvaluation {
        matching,
        cosines,
        score_error,
        reconstruction_error,
        pattern_count,
        matched_prevalence,
        ari,
        baseline_ari,
    })
}
