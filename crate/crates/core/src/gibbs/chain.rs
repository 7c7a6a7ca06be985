use super::{gibbs_sweep, update_block, ProbitAugmentation, SamplerError, SweepPlan};
use crate::distributions::RngStream;
use crate::model::{
    audit_state, init_state, log_joint, ChainMeta, ChainOutput, CountDataset, Draw, DrawFields, HyperParameters,
    LatentState, PosteriorSummaries, ProbitTerms,
};
use crate::stick::prevalence_from_spike_frequencies;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Spike occupancy above which a pattern counts towards pruning.
pub const PRUNE_OCCUPANCY: f64 = 0.99;
/// Consecutive sweeps above [`PRUNE_OCCUPANCY`] before a pattern is pinned.
pub const PRUNE_WINDOW: usize = 200;

const ACTIVE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chain_id: u64,
    #[serde(default)]
    pub prune: bool,
    #[serde(default)]
    pub degenerate: bool,
    #[serde(default)]
    pub store: DrawFields,
    #[serde(default)]
    pub audit_every_sweep: bool,
    #[serde(default)]
    pub config_hash: String,
}

impl RunConfig {
    pub fn new(iterations: usize, burn_in: usize, thin: usize, seed: u64, chain_id: u64) -> Self {
        Self {
            iterations,
            burn_in,
            thin,
            seed,
            chain_id,
            prune: false,
            degenerate: false,
            store: DrawFields::default(),
            audit_every_sweep: false,
            config_hash: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.thin == 0 {
            return Err(SamplerError::InvalidRunConfig("thin must be at least 1".into()));
        }
        if self.iterations <= self.burn_in {
            return Err(SamplerError::InvalidRunConfig(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.stored_count() == 0 {
            return Err(SamplerError::InvalidRunConfig(format!(
                "thin {} leaves no stored draw after burn-in",
                self.thin
            )));
        }
        Ok(())
    }

    /// Sweeps are numbered from 1; sweep `t` is kept iff `t > burn_in` and
    /// `(t - burn_in) % thin == 0`.
    pub fn stores(&self, sweep: usize) -> bool {
        sweep > self.burn_in && (sweep - self.burn_in) % self.thin == 0
    }

    pub fn stored_count(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thin.max(1)
    }
}

/// Scalar diagnostics handed to a progress sink after every sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepDiagnostics {
    pub sweep: usize,
    /// `None` when the joint is not defined, as under the degenerate plan.
    pub log_joint: Option<f64>,
    /// Patterns with at least 5% of some study's subjects outside the spike.
    pub active_patterns: usize,
}

/// Initial state for the no-zero-inflation, single-score-cluster baseline.
pub fn degenerate_state(
    data: &CountDataset,
    hp: &HyperParameters,
    rng: &mut RngStream,
) -> Result<LatentState, SamplerError> {
    let mut state = init_state(data, hp, rng)?;
    for s in 0..state.a.len() {
        state.a[s].fill(false);
        state.pi[s].fill(0.0);
        state.d[s].fill(1);
    }
    update_block(&ProbitAugmentation, data, hp, &mut state, rng)?;
    Ok(state)
}

fn active_patterns(state: &LatentState) -> usize {
    (0..state.num_patterns())
        .filter(|&k| {
            state.d.iter().any(|d| {
                let row = d.row(k);
                let outside = row.iter().filter(|l| **l > 0).count() as f64;
                !row.is_empty() && outside / row.len() as f64 >= ACTIVE_SHARE
            })
        })
        .count()
}

fn spike_occupancy(state: &LatentState, k: usize) -> f64 {
    let mut spike = 0usize;
    let mut total = 0usize;
    for d in &state.d {
        let row = d.row(k);
        spike += row.iter().filter(|l| **l == 0).count();
        total += row.len();
    }
    spike as f64 / total.max(1) as f64
}

/// Linear-interpolation sample quantile of already sorted values.
pub(crate) fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn elementwise_quantiles(draws: &[&Array2<f64>], qs: &[f64]) -> Vec<Array2<f64>> {
    let dim = draws[0].dim();
    let mut out = vec![Array2::zeros(dim); qs.len()];
    let mut buf = Vec::with_capacity(draws.len());
    for idx in ndarray::indices(dim) {
        buf.clear();
        buf.extend(draws.iter().map(|d| d[idx]));
        buf.sort_by(f64::total_cmp);
        for (o, q) in out.iter_mut().zip(qs) {
            o[idx] = sorted_quantile(&buf, *q);
        }
    }
    out
}

/// Medians of W and H and the median with 2.5%/97.5% quantiles of pi.
pub fn summarize_draws(w: &[Array2<f64>], h: &[Vec<Array2<f64>>], pi: &[Vec<Array1<f64>>]) -> PosteriorSummaries {
    let w_refs: Vec<&Array2<f64>> = w.iter().collect();
    let w_median = elementwise_quantiles(&w_refs, &[0.5]).remove(0);
    let studies = h.first().map_or(0, Vec::len);
    let mut h_median = Vec::with_capacity(studies);
    let mut pi_median = Vec::with_capacity(studies);
    let mut pi_lower = Vec::with_capacity(studies);
    let mut pi_upper = Vec::with_capacity(studies);
    for s in 0..studies {
        let refs: Vec<&Array2<f64>> = h.iter().map(|d| &d[s]).collect();
        h_median.push(elementwise_quantiles(&refs, &[0.5]).remove(0));
        let as_cols: Vec<Array2<f64>> = pi.iter().map(|d| d[s].clone().insert_axis(ndarray::Axis(1))).collect();
        let refs: Vec<&Array2<f64>> = as_cols.iter().collect();
        let mut qs = elementwise_quantiles(&refs, &[0.5, 0.025, 0.975]).into_iter();
        let mut column = || qs.next().expect("three quantiles").column(0).to_owned();
        pi_median.push(column());
        pi_lower.push(column());
        pi_upper.push(column());
    }
    PosteriorSummaries { w_median, h_median, pi_median, pi_lower, pi_upper }
}

/// Runs one chain serially; identical inputs give an identical output.
pub fn run_chain(
    data: &CountDataset,
    hp: &HyperParameters,
    config: &RunConfig,
    mut progress: Option<&mut dyn FnMut(&SweepDiagnostics)>,
) -> Result<ChainOutput, SamplerError> {
    config.validate()?;
    hp.validate()?;
    let mut rng = RngStream::new(config.seed, config.chain_id);
    let k_dim = hp.num_patterns;
    let (mut state, mut plan) = if config.degenerate {
        (degenerate_state(data, hp, &mut rng)?, SweepPlan::degenerate(k_dim))
    } else {
        (init_state(data, hp, &mut rng)?, SweepPlan::full(k_dim))
    };

    let stored = config.stored_count();
    let mut draws = Vec::with_capacity(stored);
    let mut w_buf = Vec::with_capacity(stored);
    let mut h_buf = Vec::with_capacity(stored);
    let mut pi_buf = Vec::with_capacity(stored);
    let mut spike_counts: Vec<Array2<f64>> = state.d.iter().map(|d| Array2::zeros(d.dim())).collect();
    let mut streak = vec![0usize; k_dim];

    for sweep in 1..=config.iterations {
        gibbs_sweep(data, hp, &mut state, &plan, &mut rng)?;

        if config.prune && !config.degenerate {
            let mut pinned_now = false;
            for k in 0..k_dim {
                if plan.pinned_patterns[k] {
                    continue;
                }
                if spike_occupancy(&state, k) > PRUNE_OCCUPANCY {
                    streak[k] += 1;
                } else {
                    streak[k] = 0;
                }
                if streak[k] >= PRUNE_WINDOW {
                    plan.pinned_patterns[k] = true;
                    pinned_now = true;
                    for d in state.d.iter_mut() {
                        d.row_mut(k).fill(0);
                    }
                }
            }
            if pinned_now {
                update_block(&ProbitAugmentation, data, hp, &mut state, &mut rng)?;
            }
        }

        if config.audit_every_sweep {
            let violations = audit_state(data, hp, &state);
            if !violations.is_empty() {
                return Err(SamplerError::Audit { sweep, violations });
            }
        }

        if let Some(sink) = progress.as_mut() {
            let log_joint =
                if config.degenerate { None } else { Some(log_joint(data, hp, &state, ProbitTerms::Augmented)?) };
            sink(&SweepDiagnostics { sweep, log_joint, active_patterns: active_patterns(&state) });
        }

        if !config.stores(sweep) {
            continue;
        }
        for (counts, d) in spike_counts.iter_mut().zip(&state.d) {
            counts.zip_mut_with(d, |c, l| {
                if *l == 0 {
                    *c += 1.0;
                }
            });
        }
        w_buf.push(state.w.clone());
        h_buf.push(state.h.clone());
        pi_buf.push(state.pi.clone());
        let fields = config.store;
        draws.push(Draw {
            sweep,
            w: fields.w.then(|| state.w.clone()),
            pi: fields.pi.then(|| state.pi.clone()),
            d: fields.d.then(|| state.d.clone()),
            h_summary: fields.h_summary.then(|| {
                Array2::from_shape_fn((k_dim, state.h.len()), |(k, s)| state.h[s].row(k).mean().unwrap_or(0.0))
            }),
            h: fields.h.then(|| state.h.clone()),
            theta: fields.theta.then(|| state.theta.clone()),
        });
    }

    let n_draws = draws.len() as f64;
    let spike_probabilities: Vec<Array2<f64>> = spike_counts.iter().map(|c| c / n_draws).collect();
    Ok(ChainOutput {
        draws,
        summaries: summarize_draws(&w_buf, &h_buf, &pi_buf),
        prevalence: prevalence_from_spike_frequencies(&spike_probabilities),
        meta: ChainMeta {
            iterations: config.iterations,
            burn_in: config.burn_in,
            thin: config.thin,
            seed: config.seed,
            chain_id: config.chain_id,
            truncation: hp.truncation,
            config_hash: config.config_hash.clone(),
        },
    })
}
