use super::{linear_predictor, log_stick_weights, update_block, Block, Conditional, Kernel, SamplerError, Unit, Value};
use crate::distributions::{log_gamma_pdf, normalize_log_weights, RngStream, TruncationSide};
use crate::model::{CountDataset, HyperParameters, LatentState, ProbitTerms};
use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::s;

fn predictors(data: &CountDataset, state: &LatentState, s: usize, k: usize, i: usize) -> Vec<f64> {
    let x = data.studies[s].covariate_row(i);
    (0..state.truncation() - 1).map(|l| linear_predictor(state.beta[s].slice(s![k, l, ..]), x)).collect()
}

/// Z: multinomial split of each observed count across patterns.
#[derive(Debug, Clone, Copy, Default)]
pub struct LatentCounts;

impl Kernel for LatentCounts {
    fn block(&self) -> Block {
        Block::LatentCounts
    }

    fn units(&self, data: &CountDataset, _state: &LatentState) -> Vec<Unit> {
        let mut units = Vec::new();
        for (s, study) in data.studies.iter().enumerate() {
            for p in 0..study.num_variables() {
                for i in 0..study.num_subjects() {
                    units.push(Unit::new(s, p, i, 0));
                }
            }
        }
        units
    }

    fn conditional(
        &self,
        data: &CountDataset,
        _hp: &HyperParameters,
        state: &LatentState,
        u: Unit,
    ) -> Result<Conditional, SamplerError> {
        let total = if state.a[u.study][[u.row, u.col]] { 0 } else { data.studies[u.study].counts[[u.row, u.col]] };
        let weights = (0..state.num_patterns()).map(|k| state.w[[u.row, k]] * state.h[u.study][[k, u.col]]).collect();
        Ok(Conditional::Multinomial { total, weights })
    }

    fn get(&self, state: &LatentState, u: Unit) -> Value {
        Value::Counts(state.z[u.study].slice(s![u.row, .., u.col]).to_vec())
    }

    fn set(&self, state: &mut LatentState, u: Unit, value: Value) {
        let Value::Counts(counts) = value else { panic!("latent counts take count vectors") };
        for (k, c) in counts.into_iter().enumerate() {
            state.z[u.study][[u.row, k, u.col]] = c;
        }
    }
}

/// A: excess-zero indicators, possible only where the observed count is zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroIndicators;

impl Kernel for ZeroIndicators {
    fn block(&self) -> Block {
        Block::ZeroIndicators
    }

    fn units(&self, data: &CountDataset, state: &LatentState) -> Vec<Unit> {
        LatentCounts.units(data, state)
    }

    fn conditional(
        &self,
        data: &CountDataset,
        _hp: &HyperParameters,
        state: &LatentState,
        u: Unit,
    ) -> Result<Conditional, SamplerError> {
        if data.studies[u.study].counts[[u.row, u.col]] > 0 {
            return Ok(Conditional::Bernoulli { log_odds: f64::NEG_INFINITY });
        }
        let pi = state.pi[u.study][u.row];
        let lambda = state.poisson_rate(u.study, u.row, u.col);
        Ok(Conditional::Bernoulli { log_odds: pi.ln() - (-pi).ln_1p() + lambda })
    }

    fn get(&self, state: &LatentState, u: Unit) -> Value {
        Value::Flag(state.a[u.study][[u.row, u.col]])
    }

    fn set(&self, state: &mut LatentState, u: Unit, value: Value) {
        let Value::Flag(flag) = value else { panic!("indicators take flags") };
        state.a[u.study][[u.row, u.col]] = flag;
        if flag {
            state.z[u.study].slice_mut(s![u.row, .., u.col]).fill(0);
        }
    }
}

/// pi: per-study, per-variable excess-zero probabilities.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroProbabilities;

impl Kernel for ZeroProbabilities {
    fn block(&self) -> Block {
        Block::ZeroProbabilities
    }

    fn units(&self, data: &CountDataset, _state: &LatentState) -> Vec<Unit> {
        let mut units = Vec::new();
        for (s, study) in data.studies.iter().enumerate() {
            for p in 0..study.num_variables() {
                units.push(Unit::new(s, p, 0, 0));
            }
        }
        units
    }

    fn conditional(
        &self,
        _data: &CountDataset,
        hp: &HyperParameters,
        state: &LatentState,
        u: Unit,
    ) -> Result<Conditional, SamplerError> {
        let row = state.a[u.study].row(u.row);
        let ones = row.iter().filter(|a| **a).count() as f64;
        let n = row.len() as f64;
        Ok(Conditional::Beta { a: hp.alpha_m + ones, b: hp.beta_m + n - ones })
    }

    fn get(&self, state: &LatentState, u: Unit) -> Value {
        Value::Real(state.pi[u.study][u.row])
    }

    fn set(&self, state: &mut LatentState, u: Unit, value: Value) {
        let Value::Real(x) = value else { panic!("probabilities take reals") };
        state.pi[u.study][u.row] = x;
    }
}

/// W: loadings shared by all studies.
#[derive(Debug, Clone, Copy, Default)]
pub struct PatternMatrix;

impl Kernel for PatternMatrix {
    fn block(&self) -> Block {
        Block::PatternMatrix
    }

    fn units(&self, _data: &CountDataset, state: &LatentState) -> Vec<Unit> {
        let (p_dim, k_dim) = state.w.dim();
        (0..p_dim).flat_map(|p| (0..k_dim).map(move |k| Unit::new(0, p, k, 0))).collect()
    }

    fn conditional(
        &self,
        _data: &CountDataset,
        hp: &HyperParameters,
        state: &LatentState,
        u: Unit,
    ) -> Result<Conditional, SamplerError> {
        let (p, k) = (u.row, u.col);
        let mut counts = 0.0;
        let mut exposure = 0.0;
        for s in 0..state.h.len() {
            let a = state.a[s].row(p);
            let h = state.h[s].row(k);
            let z = state.z[s].slice(s![p, k, ..]);
            for i in 0..a.len() {
                counts += f64::from(z[i]);
                if !a[i] {
                    exposure += h[i];
                }
            }
        }
        Ok(Conditional::Gamma { shape: hp.alpha_w + counts, rate: hp.beta_w + exposure })
    }

    fn get(&self, state: &LatentState, u: Unit) -> Value {
        Value::Real(state.w[[u.row, u.col]])
    }

    fn set(&self, state: &mut LatentState, u: Unit, value: Value) {
        let Value::Real(x) = value else { panic!("loadings take reals") };
        state.w[[u.row, u.col]] = x;
    }
}

/// D: score-cluster labels with the probit augmentation integrated out.
#[derive(Debug, Clone, Default)]
pub struct ClusterIndicators {
    pub pinned: Vec<bool>,
}

impl Kernel for ClusterIndicators {
    fn block(&self) -> Block {
        Block::ClusterIndicators
    }

    fn probit_terms(&self) -> ProbitTerms {
        ProbitTerms::Marginal
    }

    fn units(&self, data: &CountDataset, state: &LatentState) -> Vec<Unit> {
        let mut units = Vec::new();
        for (s, study) in data.studies.iter().enumerate() {
            for k in 0..state.num_patterns() {
                if self.pinned.get(k).copied().unwrap_or(false) {
                    continue;
                }
                for i in 0..study.num_subjects() {
                    units.push(Unit::new(s, k, i, 0));
                }
            }
        }
        units
    }

    fn conditional(
        &self,
        data: &CountDataset,
        hp: &HyperParameters,
        state: &LatentState,
        u: Unit,
    ) -> Result<Conditional, SamplerError> {
        let (k, i) = (u.row, u.col);
        let h = state.h[u.study][[k, i]];
        let mut log_w = log_stick_weights(&predictors(data, state, u.study, k, i));
        for (l, lw) in log_w.iter_mut().enumerate() {
            let shape = hp.cluster_shape(l);
            *lw += log_gamma_pdf(h, shape, shape / state.theta[[k, l]])?;
        }
        let probs = normalize_log_weights(&log_w);
        Ok(Conditional::Categorical { log_probs: probs.iter().map(|p| p.ln()).collect() })
    }

    fn get(&self, state: &LatentState, u: Unit) -> Value {
        Value::Label(state.d[u.study][[u.row, u.col]])
    }

    fn set(&self, state: &mut LatentState, u: Unit, value: Value) {
        let Value::Label(l) = value else { panic!("labels take indices") };
        state.d[u.study][[u.row, u.col]] = l;
    }
}

/// Y: truncated-normal augmentation of each stick-breaking decision.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProbitAugmentation;

impl Kernel for ProbitAugmentation {
    fn block(&self) -> Block {
        Block::ProbitAugmentation
    }

    fn units(&self, data: &CountDataset, state: &LatentState) -> Vec<Unit> {
        let mut units = Vec::new();
        for (s, study) in data.studies.iter().enumerate() {
            for k in 0..state.num_patterns() {
                for i in 0..study.num_subjects() {
                    for l in 0..state.truncation() - 1 {
                        units.push(Unit::new(s, k, i, l));
                    }
                }
            }
        }
        units
    }

    fn conditional(
        &self,
        data: &CountDataset,
        _hp: &HyperParameters,
        state: &LatentState,
        u: Unit,
    ) -> Result<Conditional, SamplerError> {
        let (k, i, l) = (u.row, u.col, u.level);
        let label = state.d[u.study][[k, i]];
        if l > label {
            return Ok(Conditional::Undefined);
        }
        let mean = linear_predictor(state.beta[u.study].slice(s![k, l, ..]), data.studies[u.study].covariate_row(i));
        let side = if l == label { TruncationSide::Positive } else { TruncationSide::Negative };
        Ok(Conditional::TruncatedNormal { mean, side })
    }

    fn get(&self, state: &LatentState, u: Unit) -> Value {
        Value::Real(state.y[u.study][[u.row, u.level, u.col]])
    }

    fn set(&self, state: &mut LatentState, u: Unit, value: Value) {
        let Value::Real(y) = value else { panic!("augmentation takes reals") };
        state.y[u.study][[u.row, u.level, u.col]] = y;
    }
}

/// beta: per-(pattern, level, study) probit regression coefficients.
#[derive(Debug, Clone, Copy, Default)]
pub struct CovariateEffects;

impl Kernel for CovariateEffects {
    fn block(&self) -> Block {
        Block::CovariateEffects
    }

    fn units(&self, data: &CountDataset, state: &LatentState) -> Vec<Unit> {
        let mut units = Vec::new();
        for s in 0..data.num_studies() {
            for k in 0..state.num_patterns() {
                for l in 0..state.truncation() - 1 {
                    units.push(Unit::new(s, k, 0, l));
                }
            }
        }
        units
    }

    fn conditional(
        &self,
        data: &CountDataset,
        hp: &HyperParameters,
        state: &LatentState,
        u: Unit,
    ) -> Result<Conditional, SamplerError> {
        let (k, l) = (u.row, u.level);
        let study = &data.studies[u.study];
        let q = study.num_covariates();
        let mut precision = DMatrix::<f64>::identity(q, q) * hp.tau0;
        let prior_mean = hp.beta_prior_mean(l, q);
        let mut rhs = DVector::from_fn(q, |j, _| hp.tau0 * prior_mean[j]);
        for i in 0..study.num_subjects() {
            if state.d[u.study][[k, i]] < l {
                continue;
            }
            let x = study.covariate_row(i);
            let y = state.y[u.study][[k, l, i]];
            for a in 0..q {
                rhs[a] += x[a] * y;
                for b in 0..q {
                    precision[(a, b)] += x[a] * x[b];
                }
            }
        }
        let factor = Cholesky::new(precision).ok_or_else(|| {
            SamplerError::NumericalFailure(format!(
                "coefficient precision not positive definite (study {}, pattern {k}, level {l})",
                u.study
            ))
        })?;
        let mean = factor.solve(&rhs);
        Ok(Conditional::MvNormal { mean, precision: factor })
    }

    fn get(&self, state: &LatentState, u: Unit) -> Value {
        Value::Vector(state.beta[u.study].slice(s![u.row, u.level, ..]).to_vec())
    }

    fn set(&self, state: &mut LatentState, u: Unit, value: Value) {
        let Value::Vector(v) = value else { panic!("coefficients take vectors") };
        for (j, x) in v.into_iter().enumerate() {
            state.beta[u.study][[u.row, u.level, j]] = x;
        }
    }
}

/// theta: non-spike cluster means, pooled over studies.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClusterMeans;

impl Kernel for ClusterMeans {
    fn block(&self) -> Block {
        Block::ClusterMeans
    }

    fn units(&self, _data: &CountDataset, state: &LatentState) -> Vec<Unit> {
        let levels = state.truncation();
        (0..state.num_patterns()).flat_map(|k| (1..levels).map(move |l| Unit::new(0, k, 0, l))).collect()
    }

    fn conditional(
        &self,
        _data: &CountDataset,
        hp: &HyperParameters,
        state: &LatentState,
        u: Unit,
    ) -> Result<Conditional, SamplerError> {
        let (k, l) = (u.row, u.level);
        let mut members = 0.0;
        let mut total = 0.0;
        for s in 0..state.d.len() {
            for (label, h) in state.d[s].row(k).iter().zip(state.h[s].row(k)) {
                if *label == l {
                    members += 1.0;
                    total += h;
                }
            }
        }
        let c = hp.cluster_shape(l);
        Ok(Conditional::InverseGamma { shape: hp.gamma1_theta + c * members, scale: hp.gamma2_theta + c * total })
    }

    fn get(&self, state: &LatentState, u: Unit) -> Value {
        Value::Real(state.theta[[u.row, u.level]])
    }

    fn set(&self, state: &mut LatentState, u: Unit, value: Value) {
        let Value::Real(x) = value else { panic!("cluster means take reals") };
        state.theta[[u.row, u.level]] = x;
    }
}

/// H: subject scores under their current cluster kernel.
#[derive(Debug, Clone, Copy, Default)]
pub struct Scores;

impl Kernel for Scores {
    fn block(&self) -> Block {
        Block::Scores
    }

    fn units(&self, data: &CountDataset, state: &LatentState) -> Vec<Unit> {
        let mut units = Vec::new();
        for (s, study) in data.studies.iter().enumerate() {
            for k in 0..state.num_patterns() {
                for i in 0..study.num_subjects() {
                    units.push(Unit::new(s, k, i, 0));
                }
            }
        }
        units
    }

    fn conditional(
        &self,
        _data: &CountDataset,
        hp: &HyperParameters,
        state: &LatentState,
        u: Unit,
    ) -> Result<Conditional, SamplerError> {
        let (k, i) = (u.row, u.col);
        let label = state.d[u.study][[k, i]];
        let c = hp.cluster_shape(label);
        let mut counts = 0.0;
        let mut exposure = 0.0;
        for p in 0..state.w.nrows() {
            if !state.a[u.study][[p, i]] {
                counts += f64::from(state.z[u.study][[p, k, i]]);
                exposure += state.w[[p, k]];
            }
        }
        Ok(Conditional::Gamma { shape: c + counts, rate: c / state.theta[[k, label]] + exposure })
    }

    fn get(&self, state: &LatentState, u: Unit) -> Value {
        Value::Real(state.h[u.study][[u.row, u.col]])
    }

    fn set(&self, state: &mut LatentState, u: Unit, value: Value) {
        let Value::Real(x) = value else { panic!("scores take reals") };
        state.h[u.study][[u.row, u.col]] = x;
    }
}

pub fn update_latent_counts(
    data: &CountDataset,
    hp: &HyperParameters,
    state: &mut LatentState,
    rng: &mut RngStream,
) -> Result<(), SamplerError> {
    update_block(&LatentCounts, data, hp, state, rng)
}

pub fn update_zero_indicators(
    data: &CountDataset,
    hp: &HyperParameters,
    state: &mut LatentState,
    rng: &mut RngStream,
) -> Result<(), SamplerError> {
    update_block(&ZeroIndicators, data, hp, state, rng)
}

pub fn update_zero_probabilities(
    data: &CountDataset,
    hp: &HyperParameters,
    state: &mut LatentState,
    rng: &mut RngStream,
) -> Result<(), SamplerError> {
    update_block(&ZeroProbabilities, data, hp, state, rng)
}

pub fn update_pattern_matrix(
    data: &CountDataset,
    hp: &HyperParameters,
    state: &mut LatentState,
    rng: &mut RngStream,
) -> Result<(), SamplerError> {
    update_block(&PatternMatrix, data, hp, state, rng)
}

pub fn update_cluster_indicators(
    data: &CountDataset,
    hp: &HyperParameters,
    state: &mut LatentState,
    rng: &mut RngStream,
) -> Result<(), SamplerError> {
    update_block(&ClusterIndicators::default(), data, hp, state, rng)
}

pub fn update_probit_augmentation(
    data: &CountDataset,
    hp: &HyperParameters,
    state: &mut LatentState,
    rng: &mut RngStream,
) -> Result<(), SamplerError> {
    update_block(&ProbitAugmentation, data, hp, state, rng)
}

pub fn update_covariate_effects(
    data: &CountDataset,
    hp: &HyperParameters,
    state: &mut LatentState,
    rng: &mut RngStream,
) -> Result<(), SamplerError> {
    update_block(&CovariateEffects, data, hp, state, rng)
}

pub fn update_cluster_means(
    data: &CountDataset,
    hp: &HyperParameters,
    state: &mut LatentState,
    rng: &mut RngStream,
) -> Result<(), SamplerError> {
    update_block(&ClusterMeans, data, hp, state, rng)
}

pub fn update_scores(
    data: &CountDataset,
    hp: &HyperParameters,
    state: &mut LatentState,
    rng: &mut RngStream,
) -> Result<(), SamplerError> {
    update_block(&Scores, data, hp, state, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{audit_state, init_state, StudyData};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Array2, Array3};

    /// One study with `n` subjects, P=1, K=1, L*=2, intercept-only covariates.
    fn scalar_setup(n: usize, count: u32) -> (CountDataset, HyperParameters, LatentState) {
        let data = CountDataset {
            studies: vec![StudyData {
                counts: Array2::from_elem((1, n), count),
                covariates: Array2::ones((n, 1)),
                variable_names: vec!["v".into()],
                subject_ids: (0..n).map(|i| i.to_string()).collect(),
            }],
        };
        let hp = HyperParameters { truncation: 2, num_patterns: 1, beta0: vec![0.0], ..Default::default() };
        let state = LatentState {
            w: array![[1.0]],
            h: vec![Array2::ones((1, n))],
            a: vec![Array2::from_elem((1, n), false)],
            z: vec![Array3::from_elem((1, 1, n), count)],
            pi: vec![array![0.5]],
            d: vec![Array2::ones((1, n))],
            theta: array![[0.5, 2.0]],
            beta: vec![Array3::zeros((1, 1, 1))],
            y: vec![Array3::from_elem((1, 1, n), -1.0)],
        };
        (data, hp, state)
    }

    fn gamma_params(c: Conditional) -> (f64, f64) {
        match c {
            Conditional::Gamma { shape, rate } => (shape, rate),
            other => panic!("expected gamma, got {other:?}"),
        }
    }

    #[test]
    fn single_pattern_counts_are_deterministic() {
        let (data, hp, mut state) = scalar_setup(1, 4);
        let mut rng = RngStream::new(1, 0);
        update_latent_counts(&data, &hp, &mut state, &mut rng).unwrap();
        assert_eq!(state.z[0][[0, 0, 0]], 4);
    }

    #[test]
    fn excess_zero_probabilities() {
        let (data, hp, mut state) = scalar_setup(1, 3);
        let unit = Unit::new(0, 0, 0, 0);
        let c = ZeroIndicators.conditional(&data, &hp, &state, unit).unwrap();
        assert_eq!(c.log_density(&Value::Flag(false)).unwrap(), 0.0);

        let (data, hp, _) = scalar_setup(1, 0);
        state.z[0][[0, 0, 0]] = 0;
        state.w[[0, 0]] = 3f64.ln();
        let c = ZeroIndicators.conditional(&data, &hp, &state, unit).unwrap();
        assert_abs_diff_eq!(c.log_density(&Value::Flag(true)).unwrap().exp(), 0.75, epsilon = 1e-14);
        state.w[[0, 0]] = 1e-12;
        let c = ZeroIndicators.conditional(&data, &hp, &state, unit).unwrap();
        assert_abs_diff_eq!(c.log_density(&Value::Flag(true)).unwrap().exp(), 0.5, epsilon = 1e-10);
    }

    #[test]
    fn zero_probability_posteriors() {
        let (data, mut hp, mut state) = scalar_setup(100, 0);
        hp.alpha_m = 1.0;
        hp.beta_m = 1.0;
        let unit = Unit::new(0, 0, 0, 0);
        match ZeroProbabilities.conditional(&data, &hp, &state, unit).unwrap() {
            Conditional::Beta { a, b } => assert_eq!((a, b), (1.0, 101.0)),
            other => panic!("{other:?}"),
        }
        for i in 0..40 {
            state.a[0][[0, i]] = true;
        }
        match ZeroProbabilities.conditional(&data, &hp, &state, unit).unwrap() {
            Conditional::Beta { a, b } => assert_eq!((a, b), (41.0, 61.0)),
            other => panic!("{other:?}"),
        }
        let mut rng = RngStream::new(5, 0);
        state.a[0].fill(false);
        let draws: f64 = (0..200_000)
            .map(|_| {
                update_zero_probabilities(&data, &hp, &mut state, &mut rng).unwrap();
                state.pi[0][0]
            })
            .sum();
        assert_abs_diff_eq!(draws / 200_000.0, 1.0 / 102.0, epsilon = 1e-4);
    }

    #[test]
    fn empty_study_gives_prior_beta() {
        let (mut data, hp, mut state) = scalar_setup(1, 0);
        data.studies[0].counts = Array2::zeros((1, 0));
        state.a[0] = Array2::from_elem((1, 0), false);
        match ZeroProbabilities.conditional(&data, &hp, &state, Unit::new(0, 0, 0, 0)).unwrap() {
            Conditional::Beta { a, b } => assert_eq!((a, b), (hp.alpha_m, hp.beta_m)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loading_posterior_arithmetic() {
        // 25 subjects, z = 4 each (sum 100), h = 3 each (sum 75).
        let (data, mut hp, mut state) = scalar_setup(25, 4);
        hp.alpha_w = 1.0;
        hp.beta_w = 25.0;
        state.h[0].fill(3.0);
        let (shape, rate) = gamma_params(PatternMatrix.conditional(&data, &hp, &state, Unit::new(0, 0, 0, 0)).unwrap());
        assert_eq!((shape, rate), (101.0, 100.0));
        assert_abs_diff_eq!(shape / rate, 1.01, epsilon = 1e-15);

        let (data, hp, mut state) = scalar_setup(25, 0);
        state.a[0].fill(true);
        state.z[0].fill(0);
        let (shape, rate) = gamma_params(PatternMatrix.conditional(&data, &hp, &state, Unit::new(0, 0, 0, 0)).unwrap());
        assert_eq!((shape, rate), (hp.alpha_w, hp.beta_w));
    }

    #[test]
    fn loading_increases_with_counts() {
        let mut rng = RngStream::new(9, 0);
        let mut means = Vec::new();
        for count in [1, 3, 6] {
            let (data, hp, mut state) = scalar_setup(10, count);
            let mut total = 0.0;
            for _ in 0..20_000 {
                update_pattern_matrix(&data, &hp, &mut state, &mut rng).unwrap();
                total += state.w[[0, 0]];
            }
            means.push(total / 20_000.0);
        }
        assert!(means[0] < means[1] && means[1] < means[2]);
    }

    #[test]
    fn score_posterior_arithmetic() {
        let (data, hp, mut state) = scalar_setup(1, 0);
        state.a[0].fill(true);
        state.z[0].fill(0);
        state.d[0].fill(0);
        let (shape, rate) = gamma_params(Scores.conditional(&data, &hp, &state, Unit::new(0, 0, 0, 0)).unwrap());
        assert_eq!((shape, rate), (1.0, 2.0));

        // P = 4 variables, loadings 1 each, counts summing to 30; cluster with c=10, theta=2.
        let data = CountDataset {
            studies: vec![StudyData {
                counts: array![[10], [5], [15], [0]],
                covariates: array![[1.0]],
                variable_names: (0..4).map(|p| p.to_string()).collect(),
                subject_ids: vec!["0".into()],
            }],
        };
        let state = LatentState {
            w: Array2::ones((4, 1)),
            h: vec![array![[1.0]]],
            a: vec![Array2::from_elem((4, 1), false)],
            z: vec![Array3::from_shape_vec((4, 1, 1), vec![10, 5, 15, 0]).unwrap()],
            pi: vec![Array1::from_elem(4, 0.5)],
            d: vec![array![[1]]],
            theta: array![[0.5, 2.0]],
            beta: vec![Array3::zeros((1, 1, 1))],
            y: vec![Array3::from_elem((1, 1, 1), -1.0)],
        };
        let (shape, rate) = gamma_params(Scores.conditional(&data, &hp, &state, Unit::new(0, 0, 0, 0)).unwrap());
        assert_eq!((shape, rate), (40.0, 9.0));
    }

    #[test]
    fn cluster_mean_posteriors() {
        let (data, mut hp, mut state) = scalar_setup(7, 0);
        hp.c = 10.0;
        state.h[0].fill(3.0);
        match ClusterMeans.conditional(&data, &hp, &state, Unit::new(0, 0, 0, 1)).unwrap() {
            Conditional::InverseGamma { shape, scale } => assert_eq!((shape, scale), (71.5, 230.0)),
            other => panic!("{other:?}"),
        }
        state.d[0].fill(0);
        match ClusterMeans.conditional(&data, &hp, &state, Unit::new(0, 0, 0, 1)).unwrap() {
            Conditional::InverseGamma { shape, scale } => {
                assert_eq!((shape, scale), (hp.gamma1_theta, hp.gamma2_theta))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spike_mean_untouched() {
        let data = crate::model::tests_support::small_dataset();
        let hp = HyperParameters { num_patterns: 3, ..Default::default() };
        let mut rng = RngStream::new(2, 0);
        let mut state = init_state(&data, &hp, &mut rng).unwrap();
        let plan = super::super::SweepPlan::full(3);
        for _ in 0..100 {
            super::super::gibbs_sweep(&data, &hp, &mut state, &plan, &mut rng).unwrap();
        }
        assert!(state.theta.column(0).iter().all(|t| *t == hp.epsilon));
        assert!(audit_state(&data, &hp, &state).is_empty());
    }

    #[test]
    fn disabled_plan_is_identity() {
        let data = crate::model::tests_support::small_dataset();
        let hp = HyperParameters { num_patterns: 2, ..Default::default() };
        let mut rng = RngStream::new(2, 0);
        let mut state = init_state(&data, &hp, &mut rng).unwrap();
        let before = state.clone();
        super::super::gibbs_sweep(&data, &hp, &mut state, &super::super::SweepPlan::disabled(2), &mut rng).unwrap();
        // NaN marks undefined augmentation values, so compare the rendered states.
        assert_eq!(format!("{before:?}"), format!("{state:?}"));
    }

    #[test]
    fn spike_wins_for_tiny_scores() {
        let (data, mut hp, mut state) = scalar_setup(1, 0);
        hp.c = 10.0;
        hp.epsilon = 0.5;
        state.theta = array![[0.5, 50.0]];
        state.h[0].fill(0.05);
        let c = ClusterIndicators::default().conditional(&data, &hp, &state, Unit::new(0, 0, 0, 0)).unwrap();
        let p_spike = c.log_density(&Value::Label(0)).unwrap().exp();
        assert!(p_spike > 0.999);
        let p_other = c.log_density(&Value::Label(1)).unwrap().exp();
        assert_abs_diff_eq!(p_spike + p_other, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn saturated_stick_forces_spike() {
        let (data, hp, mut state) = scalar_setup(1, 0);
        state.beta[0].fill(60.0);
        state.h[0].fill(5.0);
        let c = ClusterIndicators::default().conditional(&data, &hp, &state, Unit::new(0, 0, 0, 0)).unwrap();
        assert_eq!(c.log_density(&Value::Label(1)).unwrap().exp(), 0.0);
    }

    #[test]
    fn probit_signs_follow_labels() {
        let data = crate::model::tests_support::small_dataset();
        let hp = HyperParameters { num_patterns: 3, truncation: 4, ..Default::default() };
        let mut rng = RngStream::new(8, 0);
        let mut state = init_state(&data, &hp, &mut rng).unwrap();
        state.d[0][[0, 0]] = 0;
        state.d[0][[1, 0]] = 3;
        update_probit_augmentation(&data, &hp, &mut state, &mut rng).unwrap();
        assert!(state.y[0][[0, 0, 0]] > 0.0);
        assert!(state.y[0][[0, 1, 0]].is_nan() && state.y[0][[0, 2, 0]].is_nan());
        assert!((0..3).all(|l| state.y[0][[1, l, 0]] < 0.0));
        assert!(audit_state(&data, &hp, &state).is_empty());
    }

    #[test]
    fn coefficient_posterior_arithmetic() {
        let (data, mut hp, mut state) = scalar_setup(2, 0);
        hp.tau0 = 5.0;
        state.d[0].fill(1);
        state.y[0] = Array3::from_shape_vec((1, 1, 2), vec![2.0, 4.0]).unwrap();
        // Labels are 1 for both subjects, so level 0 includes both.
        let Conditional::MvNormal { mean, precision } =
            CovariateEffects.conditional(&data, &hp, &state, Unit::new(0, 0, 0, 0)).unwrap()
        else {
            panic!()
        };
        assert_abs_diff_eq!(mean[0], 6.0 / 7.0, epsilon = 1e-14);
        let cov = precision.inverse();
        assert_abs_diff_eq!(cov[(0, 0)], 1.0 / 7.0, epsilon = 1e-14);
    }

    #[test]
    fn coefficient_posterior_solves_normal_equations() {
        let data = crate::model::tests_support::small_dataset();
        let hp = HyperParameters { num_patterns: 2, truncation: 3, ..Default::default() };
        let mut rng = RngStream::new(12, 0);
        let state = init_state(&data, &hp, &mut rng).unwrap();
        for unit in CovariateEffects.units(&data, &state) {
            let Conditional::MvNormal { mean, precision } =
                CovariateEffects.conditional(&data, &hp, &state, unit).unwrap()
            else {
                panic!()
            };
            let study = &data.studies[unit.study];
            let q = study.num_covariates();
            let mut lhs = DMatrix::<f64>::identity(q, q) * hp.tau0;
            let prior = hp.beta_prior_mean(unit.level, q);
            let mut rhs = DVector::from_fn(q, |j, _| hp.tau0 * prior[j]);
            let mut members = 0;
            for i in 0..study.num_subjects() {
                if state.d[unit.study][[unit.row, i]] >= unit.level {
                    members += 1;
                    let x = DVector::from_iterator(q, study.covariate_row(i).iter().copied());
                    lhs += &x * x.transpose();
                    rhs += &x * state.y[unit.study][[unit.row, unit.level, i]];
                }
            }
            let residual = (&lhs * &mean - &rhs).amax();
            assert!(residual < 1e-10);
            let _ = (precision, members);
        }
    }

    #[test]
    fn empty_design_gives_prior() {
        let (data, hp, mut state) = scalar_setup(3, 0);
        state.d[0].fill(0);
        state.y[0].fill(f64::NAN);
        let unit = Unit::new(0, 0, 0, 1);
        let mut beta = Array3::zeros((1, 2, 1));
        beta[[0, 1, 0]] = 0.0;
        state.beta[0] = beta;
        state.theta = array![[0.5, 2.0, 3.0]];
        let hp = HyperParameters { truncation: 3, beta0: vec![1.5, 0.7], ..hp };
        let y = Array3::from_shape_fn((1, 2, 3), |(_, l, _)| if l == 0 { 1.0 } else { f64::NAN });
        state.y[0] = y;
        let Conditional::MvNormal { mean, precision } = CovariateEffects.conditional(&data, &hp, &state, unit).unwrap()
        else {
            panic!()
        };
        assert_abs_diff_eq!(mean[0], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(precision.inverse()[(0, 0)], 1.0 / hp.tau0, epsilon = 1e-15);
    }

    #[test]
    fn multinomial_split_proportion() {
        let data = CountDataset {
            studies: vec![StudyData {
                counts: array![[100_000]],
                covariates: array![[1.0]],
                variable_names: vec!["v".into()],
                subject_ids: vec!["i".into()],
            }],
        };
        let hp = HyperParameters { num_patterns: 2, truncation: 2, beta0: vec![0.0], ..Default::default() };
        let mut state = LatentState {
            w: array![[1.0, 3.0]],
            h: vec![array![[1.0], [1.0]]],
            a: vec![array![[false]]],
            z: vec![Array3::zeros((1, 2, 1))],
            pi: vec![array![0.5]],
            d: vec![array![[1], [1]]],
            theta: array![[0.5, 2.0], [0.5, 2.0]],
            beta: vec![Array3::zeros((2, 1, 1))],
            y: vec![Array3::from_elem((2, 1, 1), -1.0)],
        };
        let mut rng = RngStream::new(21, 0);
        update_latent_counts(&data, &hp, &mut state, &mut rng).unwrap();
        let share = f64::from(state.z[0][[0, 0, 0]]) / 100_000.0;
        assert!((share - 0.25).abs() < 0.005);
        assert_eq!(state.z[0][[0, 0, 0]] + state.z[0][[0, 1, 0]], 100_000);
    }
}
