//! Exact sampling from `k`-set comparisons.
//!
//! The one-step map of the grand coupling already fans every losing member of
//! the drawn set into the winner, so the `k`-set engines are the pairwise
//! engines behind a stricter front door: a uniform set size `3 ≤ k ≤ max_k`.

use crate::cftp::{CftpEngine, CftpOutcome, SampleBudget};
use crate::error::{Error, Result};
use crate::learning::{learn_from_oracle, LearnConfig, LearnResult};
use crate::model::{LssOracle, TargetDistribution};
use crate::rng::StreamRng;

pub const DEFAULT_MAX_K: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct KSetEngineConfig {
    pub k: usize,
    pub max_k: usize,
    pub budget: SampleBudget,
    /// Thinning estimate; learned from the oracle when absent.
    pub estimate: Option<TargetDistribution>,
    /// Ratio bound handed to the learner.
    pub phi: f64,
}

impl KSetEngineConfig {
    pub fn new(k: usize, phi: f64) -> Self {
        Self {
            k,
            max_k: DEFAULT_MAX_K,
            budget: SampleBudget::default(),
            estimate: None,
            phi,
        }
    }

    pub fn with_estimate(mut self, estimate: TargetDistribution) -> Self {
        self.estimate = Some(estimate);
        self
    }
}

fn check_kset(oracle: &LssOracle, k: usize, max_k: usize) -> Result<()> {
    let actual = oracle.comparisons().k();
    if actual != k {
        return Err(Error::InvalidParameter(format!("instance has set size {actual}, config says {k}")));
    }
    if !(3..=max_k).contains(&k) {
        return Err(Error::InvalidParameter(format!("k-set engine needs 3 <= k <= {max_k}, got {k}")));
    }
    Ok(())
}

/// One thinned `k`-set coupling run: every loser `x` of the drawn set moves
/// to the winner `y` iff the step's uniform is below `min(p(x)/p(y), 1)`.
/// The coalesced state is then accepted with probability `p(y)`.
pub fn run_kset_cftp(
    oracle: &mut LssOracle,
    coins: &mut StreamRng,
    p: &[f64],
    budget: &mut SampleBudget,
) -> Result<CftpOutcome> {
    let k = oracle.comparisons().k();
    check_kset(oracle, k, DEFAULT_MAX_K)?;
    CftpEngine::new(oracle, coins).parameterized(p, budget)
}

/// Sampler output together with the learning phase it used, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct KSetSample {
    pub outcome: CftpOutcome,
    pub learned: Option<LearnResult>,
}

/// Learns an estimate at `ε = 1/√n` when the config carries none, then loops
/// [`run_kset_cftp`] until a run is accepted.
pub fn run_kset_sampler_with_learning(
    oracle: &mut LssOracle,
    coins: &mut StreamRng,
    config: &mut KSetEngineConfig,
) -> Result<KSetSample> {
    check_kset(oracle, config.k, config.max_k)?;
    let mut learned = None;
    if config.estimate.is_none() {
        let result = learn_from_oracle(oracle, &LearnConfig::for_sampler(oracle.n(), config.phi))?;
        config.estimate = Some(result.estimate());
        learned = Some(result);
    }
    let estimate = config.estimate.as_ref().expect("estimate set above");
    if estimate.n() != oracle.n() {
        return Err(Error::DimensionMismatch { expected: oracle.n(), found: estimate.n() });
    }
    let outcome = CftpEngine::new(oracle, coins).with_estimate(estimate, &mut config.budget)?;
    Ok(KSetSample { outcome, learned })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cftp::CftpResult;
    use crate::model::{ComparisonDistribution, Instance, LocalSamplingScheme};
    use crate::rng::SeedTree;

    #[test]
    fn full_support_set_coalesces_in_one_step() {
        let comp = ComparisonDistribution::new(3, vec![(vec![0, 1, 2], 1.0)]).unwrap();
        let inst = Instance::new(TargetDistribution::from_weights(vec![1.0, 2.0, 3.0]).unwrap(), comp, None).unwrap();
        for seed in 0..20 {
            let mut oracle = LssOracle::simulated(&inst, SeedTree::new(seed));
            let mut coins = SeedTree::new(seed).derive("coins", 0).rng();
            let out = run_kset_cftp(&mut oracle, &mut coins, &[1.0; 3], &mut SampleBudget::default()).unwrap();
            assert_eq!(out.steps, 1);
            assert!(out.accepted());
        }
    }

    #[test]
    fn rejects_pairs_and_oversized_sets() {
        let comp = ComparisonDistribution::new(2, vec![(vec![0, 1], 1.0)]).unwrap();
        let inst = Instance::new(TargetDistribution::uniform(2), comp, None).unwrap();
        let mut oracle = LssOracle::simulated(&inst, SeedTree::new(0));
        let mut coins = SeedTree::new(1).rng();
        assert!(run_kset_cftp(&mut oracle, &mut coins, &[0.5; 2], &mut SampleBudget::default()).is_err());
        let mut cfg = KSetEngineConfig::new(2, 2.0);
        assert!(run_kset_sampler_with_learning(&mut oracle, &mut coins, &mut cfg).is_err());

        let comp = ComparisonDistribution::new(4, vec![(vec![0, 1, 2, 3], 1.0)]).unwrap();
        let inst = Instance::new(TargetDistribution::uniform(4), comp, None).unwrap();
        let mut oracle = LssOracle::simulated(&inst, SeedTree::new(0));
        let mut cfg = KSetEngineConfig { max_k: 3, ..KSetEngineConfig::new(4, 2.0) };
        assert!(run_kset_sampler_with_learning(&mut oracle, &mut coins, &mut cfg).is_err());
        let mut cfg = KSetEngineConfig::new(3, 2.0);
        assert!(run_kset_sampler_with_learning(&mut oracle, &mut coins, &mut cfg).is_err());
    }

    #[test]
    fn exact_estimate_loops_about_n_times() {
        let inst = crate::model::make_clique_instance(
            5,
            3,
            crate::model::TargetShape::Random { phi: 2.0 },
            &mut SeedTree::new(4).rng(),
        )
        .unwrap();
        let scheme = LocalSamplingScheme::new(&inst);
        let runs = 2000;
        let mut loops = 0u64;
        for i in 0..runs {
            let mut oracle = scheme.oracle(SeedTree::new(5).derive("oracle", i));
            let mut coins = SeedTree::new(5).derive("coins", i).rng();
            let mut cfg = KSetEngineConfig::new(3, 2.0).with_estimate(inst.target.clone());
            let s = run_kset_sampler_with_learning(&mut oracle, &mut coins, &mut cfg).unwrap();
            assert!(matches!(s.outcome.result, CftpResult::Sample(_)));
            assert!(s.learned.is_none());
            loops += s.outcome.loops;
        }
        // loops per sample is geometric with mean n = 5, variance n(n-1) = 20
        let mean = loops as f64 / runs as f64;
        let sigma = (20.0 / runs as f64).sqrt();
        assert!((mean - 5.0).abs() < 4.0 * sigma, "mean loops {mean}");
    }
}
