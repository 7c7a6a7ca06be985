//! Recovery metrics against simulation truth.

use crate::model::ChainOutput;
use crate::stick::{pattern_prevalence, DEFAULT_ACTIVITY_THRESHOLD};
use ndarray::{Array2, ArrayView1};
use pathfinding::prelude::{kuhn_munkres, Matrix};
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum EvaluateError {
    #[error("cosine similarity undefined for a zero vector")]
    DegenerateVector,
    #[error("no estimated pattern matched any true pattern")]
    NoMatch,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("stored draws do not contain `{0}`")]
    MissingField(&'static str),
}

pub fn cosine_similarity(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64, EvaluateError> {
    if u.len() != v.len() {
        return Err(EvaluateError::DimensionMismatch(format!("{} vs {}", u.len(), v.len())));
    }
    let (nu, nv) = (u.dot(&u).sqrt(), v.dot(&v).sqrt());
    if nu == 0.0 || nv == 0.0 {
        return Err(EvaluateError::DegenerateVector);
    }
    Ok(u.dot(&v) / (nu * nv))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchMethod {
    #[default]
    Greedy,
    /// Optimal assignment maximizing total similarity.
    Hungarian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(estimated column, true column, similarity)`, sorted by true column.
    pub assignment: Vec<(usize, usize, f64)>,
    /// Estimated × true cosine similarities.
    pub similarities: Array2<f64>,
    pub unmatched_estimated: BTreeSet<usize>,
    pub unmatched_true: BTreeSet<usize>,
}

impl MatchResult {
    pub fn estimated_for(&self, true_column: usize) -> Option<usize> {
        self.assignment.iter().find(|(_, t, _)| *t == true_column).map(|(e, _, _)| *e)
    }

    pub fn similarity_for(&self, true_column: usize) -> Option<f64> {
        self.assignment.iter().find(|(_, t, _)| *t == true_column).map(|(_, _, s)| *s)
    }

    pub fn median_similarity(&self) -> Option<f64> {
        let mut values: Vec<f64> = self.assignment.iter().map(|(_, _, s)| *s).collect();
        median(&mut values)
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Injective column matching keeping only pairs at or above `threshold`.
///
/// Only the estimated columns listed in `candidates` take part; `None` uses all.
pub fn match_patterns(
    w_est: &Array2<f64>,
    w_true: &Array2<f64>,
    threshold: f64,
    method: MatchMethod,
    candidates: Option<&[usize]>,
) -> Result<MatchResult, EvaluateError> {
    if w_est.nrows() != w_true.nrows() {
        return Err(EvaluateError::DimensionMismatch(format!(
            "{} estimated rows vs {} true rows",
            w_est.nrows(),
            w_true.nrows()
        )));
    }
    let (ke, kt) = (w_est.ncols(), w_true.ncols());
    let mut similarities = Array2::zeros((ke, kt));
    for e in 0..ke {
        for t in 0..kt {
            similarities[[e, t]] = cosine_similarity(w_est.column(e), w_true.column(t))?;
        }
    }
    let eligible: Vec<usize> = candidates.map_or_else(|| (0..ke).collect(), <[usize]>::to_vec);

    let mut pairs: Vec<(usize, usize, f64)> = match method {
        MatchMethod::Greedy => {
            let mut all: Vec<(usize, usize, f64)> = eligible
                .iter()
                .flat_map(|&e| (0..kt).map(move |t| (e, t)))
                .map(|(e, t)| (e, t, similarities[[e, t]]))
                .collect();
            all.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
            let mut used_e = BTreeSet::new();
            let mut used_t = BTreeSet::new();
            let mut chosen = Vec::new();
            for (e, t, s) in all {
                if s < threshold {
                    break;
                }
                if used_e.contains(&e) || used_t.contains(&t) {
                    continue;
                }
                used_e.insert(e);
                used_t.insert(t);
                chosen.push((e, t, s));
            }
            chosen
        }
        MatchMethod::Hungarian => {
            hungarian(&similarities, &eligible, kt).into_iter().filter(|(_, _, s)| *s >= threshold).collect()
        }
    };
    pairs.sort_by_key(|(_, t, _)| *t);
    let unmatched_estimated = eligible.iter().copied().filter(|e| !pairs.iter().any(|p| p.0 == *e)).collect();
    let unmatched_true = (0..kt).filter(|t| !pairs.iter().any(|p| p.1 == *t)).collect();
    Ok(MatchResult { assignment: pairs, similarities, unmatched_estimated, unmatched_true })
}

fn hungarian(similarities: &Array2<f64>, eligible: &[usize], kt: usize) -> Vec<(usize, usize, f64)> {
    const SCALE: f64 = 1e9;
    if eligible.is_empty() || kt == 0 {
        return Vec::new();
    }
    let weight = |e: usize, t: usize| (similarities[[e, t]] * SCALE).round() as i64;
    if eligible.len() <= kt {
        let m = Matrix::from_fn(eligible.len(), kt, |(r, t)| weight(eligible[r], t));
        let (_, assign) = kuhn_munkres(&m);
        assign.into_iter().enumerate().map(|(r, t)| (eligible[r], t, similarities[[eligible[r], t]])).collect()
    } else {
        let m = Matrix::from_fn(kt, eligible.len(), |(t, r)| weight(eligible[r], t));
        let (_, assign) = kuhn_munkres(&m);
        assign.into_iter().enumerate().map(|(t, r)| (eligible[r], t, similarities[[eligible[r], t]])).collect()
    }
}

/// Sum over studies of the Frobenius distance between matched score rows,
/// each row rescaled by the column sum of its loading vector.
pub fn score_error(
    h_est: &[Array2<f64>],
    h_true: &[Array2<f64>],
    w_est: &Array2<f64>,
    w_true: &Array2<f64>,
    matching: &MatchResult,
) -> Result<f64, EvaluateError> {
    if matching.assignment.is_empty() {
        return Err(EvaluateError::NoMatch);
    }
    if h_est.len() != h_true.len() {
        return Err(EvaluateError::DimensionMismatch("study counts differ".into()));
    }
    let mut total = 0.0;
    for (he, ht) in h_est.iter().zip(h_true) {
        if he.ncols() != ht.ncols() {
            return Err(EvaluateError::DimensionMismatch("subject counts differ".into()));
        }
        let mut sq = 0.0;
        for &(e, t, _) in &matching.assignment {
            let se = w_est.column(e).sum();
            let st = w_true.column(t).sum();
            for i in 0..he.ncols() {
                sq += (he[[e, i]] * se - ht[[t, i]] * st).powi(2);
            }
        }
        total += sq.sqrt();
    }
    Ok(total)
}

pub fn reconstruction_error(
    w_est: &Array2<f64>,
    h_est: &[Array2<f64>],
    w_true: &Array2<f64>,
    h_true: &[Array2<f64>],
) -> Result<f64, EvaluateError> {
    if h_est.len() != h_true.len() || w_est.nrows() != w_true.nrows() {
        return Err(EvaluateError::DimensionMismatch("factor shapes differ".into()));
    }
    let mut total = 0.0;
    for (he, ht) in h_est.iter().zip(h_true) {
        if he.ncols() != ht.ncols() || he.nrows() != w_est.ncols() || ht.nrows() != w_true.ncols() {
            return Err(EvaluateError::DimensionMismatch("score shapes differ".into()));
        }
        let diff = w_est.dot(he) - w_true.dot(ht);
        total += diff.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    Ok(total)
}

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Pair-counting adjusted Rand index; 1 when both partitions are trivial and equal.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64, EvaluateError> {
    if a.len() != b.len() {
        return Err(EvaluateError::DimensionMismatch(format!("{} vs {} labels", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(EvaluateError::DimensionMismatch("at least two labels required".into()));
    }
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|n| choose2(*n)).sum();
    let sum_a: f64 = rows.values().map(|n| choose2(*n)).sum();
    let sum_b: f64 = cols.values().map(|n| choose2(*n)).sum();
    let expected = sum_a * sum_b / choose2(a.len());
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Tertile groups `floor(3 r / N) + 1` by ascending score rank `r`; tied
/// scores share the label of their lowest rank.
pub fn tertile_baseline(scores: &[f64]) -> Vec<usize> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut labels = vec![0; n];
    let mut r = 0;
    while r < n {
        let mut end = r;
        while end + 1 < n && scores[order[end + 1]] == scores[order[r]] {
            end += 1;
        }
        let label = 3 * r / n + 1;
        for &i in &order[r..=end] {
            labels[i] = label;
        }
        r = end + 1;
    }
    labels
}

/// Co-clustering frequencies over sampled partitions.
pub fn posterior_similarity(partitions: &[Vec<usize>]) -> Array2<f64> {
    let n = partitions.first().map_or(0, Vec::len);
    let mut psm = Array2::zeros((n, n));
    for labels in partitions {
        for i in 0..n {
            for j in i..n {
                if labels[i] == labels[j] {
                    psm[[i, j]] += 1.0;
                }
            }
        }
    }
    let t = partitions.len().max(1) as f64;
    for i in 0..n {
        for j in i..n {
            let v = psm[[i, j]] / t;
            psm[[i, j]] = v;
            psm[[j, i]] = v;
        }
    }
    psm
}

/// Lower bound of the posterior expected variation of information, up to
/// a term that does not depend on `labels`.
pub fn expected_vi_lower_bound(labels: &[usize], psm: &Array2<f64>) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut size: f64 = 0.0;
        let mut mass: f64 = 0.0;
        let mut row_mass: f64 = 0.0;
        for j in 0..n {
            row_mass += psm[[i, j]];
            if labels[j] == labels[i] {
                size += 1.0;
                mass += psm[[i, j]];
            }
        }
        total += size.log2() - 2.0 * mass.log2() + row_mass.log2();
    }
    total / n as f64
}

fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Sampled partition minimizing the expected-VI lower bound; ties keep the earliest draw.
pub fn point_estimate_from_partitions(partitions: &[Vec<usize>]) -> Result<Vec<usize>, EvaluateError> {
    if partitions.is_empty() {
        return Err(EvaluateError::MissingField("d"));
    }
    let psm = posterior_similarity(partitions);
    let mut seen = BTreeSet::new();
    let mut best: Option<(f64, usize)> = None;
    for (t, labels) in partitions.iter().enumerate() {
        if !seen.insert(canonical(labels)) {
            continue;
        }
        let loss = expected_vi_lower_bound(labels, &psm);
        if best.is_none_or(|(b, _)| loss < b) {
            best = Some((loss, t));
        }
    }
    let (_, t) = best.expect("at least one partition");
    Ok(partitions[t].clone())
}

fn label_draws(chain: &ChainOutput, k: usize, studies: &[usize]) -> Result<Vec<Vec<usize>>, EvaluateError> {
    if chain.draws.is_empty() {
        return Err(EvaluateError::MissingField("d"));
    }
    chain
        .draws
        .iter()
        .map(|draw| {
            let d = draw.d.as_ref().ok_or(EvaluateError::MissingField("d"))?;
            Ok(studies.iter().flat_map(|&s| d[s].row(k).iter().map(|l| l + 1).collect::<Vec<_>>()).collect())
        })
        .collect()
}

/// Point-estimate labels (1-based clusters) of pattern `k` in study `s`.
pub fn partition_point_estimate(chain: &ChainOutput, k: usize, s: usize) -> Result<Vec<usize>, EvaluateError> {
    point_estimate_from_partitions(&label_draws(chain, k, &[s])?)
}

/// Point estimate of pattern `k` with all studies' subjects pooled, in study order.
pub fn pooled_partition_point_estimate(chain: &ChainOutput, k: usize) -> Result<Vec<usize>, EvaluateError> {
    let studies: Vec<usize> = (0..chain.prevalence.ncols()).collect();
    point_estimate_from_partitions(&label_draws(chain, k, &studies)?)
}

pub fn pattern_count(chain: &ChainOutput) -> usize {
    pattern_prevalence(chain, DEFAULT_ACTIVITY_THRESHOLD).global_active_count
}

/// Patterns active in at least one study.
pub fn active_patterns(chain: &ChainOutput) -> Vec<usize> {
    pattern_prevalence(chain, DEFAULT_ACTIVITY_THRESHOLD)
        .active_in
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_empty())
        .map(|(k, _)| k)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(
            cosine_similarity(array![1.0, 2.0, 3.0].view(), array![1.0, 2.0, 3.0].view()).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_eq!(cosine_similarity(array![1.0, 0.0].view(), array![0.0, 1.0].view()).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine_similarity(array![1.0, 1.0].view(), array![1.0, 0.0].view()).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        assert_eq!(
            cosine_similarity(array![0.0, 0.0].view(), array![1.0, 0.0].view()),
            Err(EvaluateError::DegenerateVector)
        );
    }

    #[test]
    fn permuted_columns_match_perfectly() {
        let w_true = array![[1.0, 0.0, 0.2], [0.0, 1.0, 0.3], [0.5, 0.1, 1.0]];
        let w_est = array![[0.2, 1.0, 0.0], [0.3, 0.0, 1.0], [1.0, 0.5, 0.1]];
        for method in [MatchMethod::Greedy, MatchMethod::Hungarian] {
            let m = match_patterns(&w_est, &w_true, 0.8, method, None).unwrap();
            assert_eq!(m.assignment.iter().map(|(e, t, _)| (*e, *t)).collect::<Vec<_>>(), vec![(1, 0), (2, 1), (0, 2)]);
            assert!(m.assignment.iter().all(|(_, _, s)| (*s - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn noise_column_is_unmatched() {
        let w_true = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        let w_est = array![[1.0, 0.0, 0.3], [1.0, 0.0, 0.1], [0.0, 1.0, 0.35], [0.0, 1.0, 0.05]];
        let m = match_patterns(&w_est, &w_true, 0.8, MatchMethod::Greedy, None).unwrap();
        assert_eq!(m.unmatched_estimated, BTreeSet::from([2]));
        assert!(m.unmatched_true.is_empty());
    }

    #[test]
    fn score_error_examples() {
        let w = array![[0.5, 0.0], [0.5, 1.0]];
        let h = vec![array![[1.0, 2.0], [3.0, 4.0]]];
        let m = match_patterns(&w, &w, 0.8, MatchMethod::Greedy, None).unwrap();
        assert_eq!(score_error(&h, &h, &w, &w, &m).unwrap(), 0.0);

        let mut h2 = h.clone();
        h2[0][[1, 0]] += 0.25;
        assert_abs_diff_eq!(score_error(&h2, &h, &w, &w, &m).unwrap(), 0.25, epsilon = 1e-15);

        let mut w_scaled = w.clone();
        w_scaled.column_mut(0).mapv_inplace(|x| x * 2.0);
        let mut h_scaled = h2.clone();
        h_scaled[0].row_mut(0).mapv_inplace(|x| x / 2.0);
        assert_abs_diff_eq!(score_error(&h_scaled, &h, &w_scaled, &w, &m).unwrap(), 0.25, epsilon = 1e-15);

        let empty = MatchResult { assignment: vec![], ..m };
        assert_eq!(score_error(&h, &h, &w, &w, &empty), Err(EvaluateError::NoMatch));
    }

    #[test]
    fn reconstruction_examples() {
        let w = array![[1.0, 2.0], [0.5, 0.0], [0.0, 1.0]];
        let h = vec![array![[1.0, 0.0, 2.0], [0.5, 3.0, 1.0]]];
        assert_eq!(reconstruction_error(&w, &h, &w, &h).unwrap(), 0.0);
        let wp = array![[2.0, 1.0], [0.0, 0.5], [1.0, 0.0]];
        let hp = vec![array![[0.5, 3.0, 1.0], [1.0, 0.0, 2.0]]];
        assert_eq!(reconstruction_error(&wp, &hp, &w, &h).unwrap(), 0.0);
        // Perturb one loading so the product changes by a known matrix.
        let mut w_shift = w.clone();
        w_shift[[1, 0]] += 0.1;
        let e = 0.1 * (1.0f64 + 0.0 + 4.0).sqrt();
        assert_abs_diff_eq!(reconstruction_error(&w_shift, &h, &w, &h).unwrap(), e, epsilon = 1e-14);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[1, 1, 2, 2]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 3], &[5, 5, 5, 5]).unwrap(), 0.0);
        assert_abs_diff_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap(), -0.5, epsilon = 1e-15);
        assert!(adjusted_rand_index(&[1, 2], &[1]).is_err());
    }

    /// Brute-force pair counting over all unordered pairs.
    fn ari_by_pairs(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut only_a, mut only_b, mut total) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                total += 1.0;
                if sa && sb {
                    both += 1.0;
                }
                if sa {
                    only_a += 1.0;
                }
                if sb {
                    only_b += 1.0;
                }
            }
        }
        let expected = only_a * only_b / total;
        let max = 0.5 * (only_a + only_b);
        if max == expected {
            1.0
        } else {
            (both - expected) / (max - expected)
        }
    }

    #[test]
    fn tertile_examples() {
        let scores: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(tertile_baseline(&scores), vec![1, 1, 1, 2, 2, 2, 3, 3, 3]);
        assert_eq!(tertile_baseline(&[2.0; 7]), vec![1; 7]);
        assert_eq!(tertile_baseline(&[3.0, 1.0, 2.0]), vec![3, 1, 2]);
    }

    #[test]
    fn point_estimate_of_identical_draws() {
        let draws = vec![vec![1, 2, 2, 3]; 5];
        assert_eq!(point_estimate_from_partitions(&draws).unwrap(), vec![1, 2, 2, 3]);
        assert!(point_estimate_from_partitions(&[]).is_err());
    }

    #[test]
    fn point_estimate_prefers_the_consensus() {
        let mut draws = vec![vec![1, 1, 2, 2, 3, 3]; 6];
        draws.push(vec![1, 2, 1, 2, 1, 2]);
        draws.push(vec![1, 1, 1, 1, 1, 1]);
        assert_eq!(point_estimate_from_partitions(&draws).unwrap(), vec![1, 1, 2, 2, 3, 3]);
    }

    fn labels(n: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0usize..4, n)
    }

    proptest! {
        #[test]
        fn ari_matches_pair_counting((a, b) in (2usize..30).prop_flat_map(|n| (labels(n), labels(n)))) {
            let fast = adjusted_rand_index(&a, &b).unwrap();
            prop_assert!((fast - ari_by_pairs(&a, &b)).abs() < 1e-12);
            prop_assert!(fast <= 1.0 + 1e-12);
        }

        #[test]
        fn ari_ignores_relabeling((a, b) in (2usize..30).prop_flat_map(|n| (labels(n), labels(n)))) {
            let relabeled: Vec<usize> = a.iter().map(|l| 10 + (3 - l) * 7).collect();
            let x = adjusted_rand_index(&a, &b).unwrap();
            let y = adjusted_rand_index(&relabeled, &b).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
        }

        #[test]
        fn tertile_groups_are_balanced(scores in proptest::collection::hash_set(0u32..100_000, 1..20)) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let n = scores.len() * 3;
            let tripled: Vec<f64> = (0..3).flat_map(|j| scores.iter().map(move |s| s + j as f64 * 1e6)).collect();
            let labels = tertile_baseline(&tripled);
            for g in 1..=3 {
                prop_assert_eq!(labels.iter().filter(|l| **l == g).count(), n / 3);
            }
        }

        #[test]
        fn psm_is_a_similarity(draws in (2usize..12).prop_flat_map(|n| proptest::collection::vec(labels(n), 1..8))) {
            let psm = posterior_similarity(&draws);
            for i in 0..psm.nrows() {
                prop_assert_eq!(psm[[i, i]], 1.0);
                for j in 0..psm.ncols() {
                    prop_assert_eq!(psm[[i, j]], psm[[j, i]]);
                    prop_assert!((0.0..=1.0).contains(&psm[[i, j]]));
                }
            }
        }

        #[test]
        fn matching_commutes_with_permutation(
            w in proptest::collection::vec(0.0f64..1.0, 24),
            perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle(),
        ) {
            let w_true = Array2::from_shape_vec((6, 4), w).unwrap().mapv(|x| x + 0.01);
            let w_est = w_true.mapv(|x| x * 1.5);
            let permuted = Array2::from_shape_fn((6, 4), |(p, k)| w_est[[p, perm[k]]]);
            for method in [MatchMethod::Greedy, MatchMethod::Hungarian] {
                let m = match_patterns(&permuted, &w_true, 0.0, method, None).unwrap();
                for (e, t, s) in &m.assignment {
                    prop_assert_eq!(perm[*e], *t);
                    prop_assert!((s - 1.0).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn score_error_is_scale_invariant(scale in 0.1f64..10.0, h in proptest::collection::vec(0.0f64..5.0, 6)) {
            let w = array![[0.2, 0.7], [0.8, 0.3]];
            let h_true = vec![Array2::from_shape_vec((2, 3), h).unwrap()];
            let h_est = vec![h_true[0].mapv(|x| x + 0.3)];
            let m = match_patterns(&w, &w, 0.5, MatchMethod::Greedy, None).unwrap();
            let base = score_error(&h_est, &h_true, &w, &w, &m).unwrap();
            let mut w_s = w.clone();
            w_s.column_mut(1).mapv_inplace(|x| x * scale);
            let mut h_s = h_est.clone();
            h_s[0].row_mut(1).mapv_inplace(|x| x / scale);
            let scaled = score_error(&h_s, &h_true, &w_s, &w, &m).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9 * base.max(1.0));
        }
    }
}
