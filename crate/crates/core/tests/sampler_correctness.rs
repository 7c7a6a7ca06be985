use zinmf_core::gibbs::oracle::{check_all_kernels, check_kernel, getting_it_right, tiny_design, tiny_hyperparameters};
use zinmf_core::gibbs::{Block, Conditional, Kernel, PatternMatrix, SamplerError, Unit, Value};
use zinmf_core::model::{CountDataset, HyperParameters, LatentState, ProbitTerms};
use zinmf_core::RngStream;

/// Loadings kernel with the exposure term dropped from the rate.
struct RateDroppedLoadings;

impl Kernel for RateDroppedLoadings {
    fn block(&self) -> Block {
        Block::PatternMatrix
    }

    fn probit_terms(&self) -> ProbitTerms {
        ProbitTerms::Augmented
    }

    fn units(&self, data: &CountDataset, state: &LatentState) -> Vec<Unit> {
        PatternMatrix.units(data, state)
    }

    fn conditional(
        &self,
        data: &CountDataset,
        hp: &HyperParameters,
        state: &LatentState,
        unit: Unit,
    ) -> Result<Conditional, SamplerError> {
        match PatternMatrix.conditional(data, hp, state, unit)? {
            Conditional::Gamma { shape, .. } => Ok(Conditional::Gamma { shape, rate: hp.beta_w }),
            other => Ok(other),
        }
    }

    fn get(&self, state: &LatentState, unit: Unit) -> Value {
        PatternMatrix.get(state, unit)
    }

    fn set(&self, state: &mut LatentState, unit: Unit, value: Value) {
        PatternMatrix.set(state, unit, value)
    }
}

#[test]
fn all_conditionals_agree_with_the_joint() {
    for report in check_all_kernels(100, 7).unwrap() {
        assert!(report.passed, "{report:?}");
        assert_eq!(report.pairs, 100);
    }
}

#[test]
fn oracle_rejects_a_corrupted_kernel() {
    let mut rng = RngStream::new(99, 0);
    let report = check_kernel(&RateDroppedLoadings, &tiny_design(), &tiny_hyperparameters(), 100, &mut rng).unwrap();
    assert!(!report.passed);
    assert!(report.max_error > 1e-3);
}

#[test]
fn forward_and_successive_conditional_moments_agree() {
    let report = getting_it_right(50_000, 50, 4.0, 2718).unwrap();
    let worst = report.worst().unwrap();
    assert!(report.passed, "worst statistic {worst:?}");
}
