//! Library-level acceptance checks with pinned seeds.
//!
//! Each check returns a [`CriterionReport`]; none of them panics on a failed
//! threshold, so callers can print every line before deciding the exit code.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{
    chi_square_gof, coalescence_benchmark, fiedler_concentration_experiment, histogram, rejection_rate_check,
    three_state_closed_form_sampler, DEFAULT_SIGNIFICANCE,
};
use crate::cftp::{run_exact_sampler_with_learning, run_naive_cftp, SampleBudget};
use crate::error::Result;
use crate::hypergraph::{run_kset_sampler_with_learning, KSetEngineConfig};
use crate::learning::{
    learn, learn_from_oracle, learn_population, nll_gradient, relative_error, LearnConfig, ParamVector,
};
use crate::model::{
    make_bimodal_path_instance, make_path_instance, make_random_instance, ComparisonDistribution, Instance,
    LocalSamplingScheme, LssOracle, TargetDistribution, TargetShape,
};
use crate::rng::SeedTree;
use crate::spectral::{
    absolute_spectral_gap, build_laplacian, build_rescaled_matrix, build_transition_matrix, fiedler_eigenvalue,
    stationary_distribution,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CriterionReport {
    fn new(id: u32, name: &str, pass: bool, detail: String) -> Self {
        Self { id, name: name.into(), pass, detail }
    }

    pub fn line(&self) -> String {
        let status = if self.pass { "PASS" } else { "FAIL" };
        format!("criterion {:>2} [{status}] {}: {}", self.id, self.name, self.detail)
    }
}

/// The pinned seed of the acceptance runs.
pub const ACCEPTANCE_SEED: u64 = 20_240_601;

fn root() -> SeedTree {
    SeedTree::new(ACCEPTANCE_SEED)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Twenty random instances, `n ≤ 8`, alternating pairs and triples.
pub fn instance_suite() -> Result<Vec<Instance>> {
    let seed = root().derive("instance-suite", 0);
    (0..20)
        .map(|i| {
            let n = 3 + (i % 6);
            let k = if i % 2 == 0 { 2 } else { 3 };
            make_random_instance(n, k, 2.0, &mut seed.derive("instance", i as u64).rng())
        })
        .collect()
}

/// Exact samples from `trials` independent runs of `run`, seeded per trial.
fn sample_states<F>(trials: usize, seed: SeedTree, run: F) -> Result<Vec<usize>>
where
    F: Fn(SeedTree) -> Result<Option<usize>> + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|i| {
            run(seed.derive("trial", i as u64))?
                .ok_or_else(|| crate::error::Error::InvalidParameter(format!("trial {i} exceeded its budget")))
        })
        .collect()
}

pub fn stationary_correctness() -> Result<CriterionReport> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for inst in instance_suite()? {
        let m = build_transition_matrix(&inst.target, &inst.comparisons)?;
        worst = worst.max(max_abs_diff(&stationary_distribution(&m)?, inst.target.probs()));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(CriterionReport::new(
        1,
        "stationary law of the comparison chain",
        worst <= 1e-9 && secs < 5.0,
        format!(
            "max error {worst:.3e} over 20 instances (<= 1e-9), {}",
            if secs < 5.0 { "under 5s" } else { "over 5s" }
        ),
    ))
}

pub fn naive_exact_sampling() -> Result<CriterionReport> {
    let inst = make_bimodal_path_instance(7)?;
    let scheme = LocalSamplingScheme::new(&inst);
    let states = sample_states(20_000, root().derive("naive", 0), |s| {
        let mut oracle = scheme.oracle(s);
        Ok(run_naive_cftp(&mut oracle, &mut SampleBudget::default())?.state())
    })?;
    let gof = chi_square_gof(&histogram(&states, 7), inst.target.probs(), DEFAULT_SIGNIFICANCE)?;
    Ok(CriterionReport::new(
        2,
        "naive engine output law",
        gof.pass,
        format!("bimodal n=7, 20000 runs, chi-square {:.3}, p = {:.4} (> 0.001)", gof.statistic, gof.p_value),
    ))
}

fn estimate_sampling(inst: &Instance, estimate: &TargetDistribution, seed: SeedTree) -> Result<super::GofReport> {
    let scheme = LocalSamplingScheme::new(inst);
    let states = sample_states(20_000, seed, |s| {
        let mut oracle = scheme.oracle(s.derive("oracle", 0));
        let mut coins = s.derive("coins", 0).rng();
        Ok(run_exact_sampler_with_learning(&mut oracle, &mut coins, estimate, &mut SampleBudget::default())?.state())
    })?;
    chi_square_gof(&histogram(&states, inst.n()), inst.target.probs(), DEFAULT_SIGNIFICANCE)
}

pub fn learned_exact_sampling() -> Result<CriterionReport> {
    let inst = make_bimodal_path_instance(7)?;
    let exact = estimate_sampling(&inst, &inst.target, root().derive("exact-estimate", 0))?;
    let mut oracle = LssOracle::simulated(&inst, root().derive("learn", 0));
    let learned = learn_from_oracle(&mut oracle, &LearnConfig::for_sampler(7, 2.0))?;
    let (r1, r2) = relative_error(&inst.target, &learned.estimate())?;
    let fitted = estimate_sampling(&inst, &learned.estimate(), root().derive("learned-estimate", 0))?;
    Ok(CriterionReport::new(
        3,
        "thinned engine output law",
        exact.pass && fitted.pass,
        format!(
            "bimodal n=7, 20000 runs each: p = {:.4} with D, p = {:.4} with learned estimate \
             ({} samples, relative error {:.3})",
            exact.p_value,
            fitted.p_value,
            learned.samples_used,
            r1.max(r2)
        ),
    ))
}

/// Estimate with relative error at most `eps` in both directions.
fn perturbed_estimate(target: &TargetDistribution, eps: f64, seed: SeedTree) -> Result<TargetDistribution> {
    use rand::Rng;
    let mut rng = seed.rng();
    // keeps both relative-error directions below eps after normalization
    let half = eps / 2.2;
    TargetDistribution::from_weights(target.probs().iter().map(|d| d * if rng.random_bool(0.5) { 1.0 + half } else { 1.0 - half }).collect())
}

pub fn near_uniform_rescaled_stationary() -> Result<CriterionReport> {
    let eps: f64 = 0.1;
    let bound = ((1.0 + eps) / (1.0 - eps)).powi(2);
    let mut worst_uniform: f64 = 0.0;
    let mut worst_ratio: f64 = 1.0;
    let mut worst_rel: f64 = 0.0;
    let mut instances = instance_suite()?;
    instances.push(make_bimodal_path_instance(7)?);
    for (i, inst) in instances.iter().enumerate() {
        let n = inst.n();
        let m = build_rescaled_matrix(&inst.target, &inst.comparisons, &inst.target)?;
        let pi = stationary_distribution(&m)?;
        worst_uniform = worst_uniform.max(pi.iter().fold(0.0, |acc, p| acc.max((p - 1.0 / n as f64).abs())));

        let estimate = perturbed_estimate(&inst.target, eps, root().derive("perturb", i as u64))?;
        let (a, b) = relative_error(&inst.target, &estimate)?;
        worst_rel = worst_rel.max(a.max(b));
        let pi = stationary_distribution(&build_rescaled_matrix(&inst.target, &inst.comparisons, &estimate)?)?;
        let max = pi.iter().copied().fold(f64::MIN, f64::max);
        let min = pi.iter().copied().fold(f64::MAX, f64::min);
        worst_ratio = worst_ratio.max(max / min);
    }
    Ok(CriterionReport::new(
        4,
        "near-uniform rescaled stationary law",
        worst_uniform <= 1e-9 && worst_rel <= eps && worst_ratio <= bound,
        format!(
            "exact estimate: max deviation from uniform {worst_uniform:.3e} (<= 1e-9); \
             estimates at relative error <= {worst_rel:.3}: max/min {worst_ratio:.4} (<= {bound:.4})"
        ),
    ))
}

pub fn spectral_gap_ordering() -> Result<CriterionReport> {
    let mut worst = f64::INFINITY;
    for inst in instance_suite()? {
        let m = build_rescaled_matrix(&inst.target, &inst.comparisons, &inst.target)?;
        let pi = stationary_distribution(&m)?;
        let gap = absolute_spectral_gap(&m, &pi)?;
        let lambda = fiedler_eigenvalue(&build_laplacian(&inst.comparisons));
        worst = worst.min(gap / lambda);
    }
    Ok(CriterionReport::new(
        5,
        "rescaled spectral gap against the Fiedler value",
        worst >= 0.1,
        format!("min gap / lambda(Q) over 20 instances = {worst:.4} (>= 0.1)"),
    ))
}

pub fn bimodal_speedup() -> Result<CriterionReport> {
    let report = coalescence_benchmark(&[7, 9, 11], 50, root().derive("bench", 0), None)?;
    let ratios: Vec<f64> = report.ratios.iter().map(|r| r.coalescence_ratio).collect();
    let last = *ratios.last().expect("three sizes");
    Ok(CriterionReport::new(
        6,
        "coalescence speedup on the bimodal path",
        last >= 5.0 && report.monotone,
        format!(
            "naive/thinned mean coalescence at n = 7, 9, 11: {:.2}, {:.2}, {:.2} (need >= 5 at 11, nondecreasing)",
            ratios[0], ratios[1], ratios[2]
        ),
    ))
}

/// A four-state path satisfying the ratio bound.
pub fn four_state_instance() -> Result<Instance> {
    make_path_instance(4, TargetShape::Random { phi: 2.0 }, &mut root().derive("four-state", 0).rng())
}

pub fn rejection_rate() -> Result<CriterionReport> {
    let inst = four_state_instance()?;
    let exact = rejection_rate_check(&inst, inst.target.probs(), 3000, root().derive("reject-exact", 0))?;
    let mut halved = inst.target.probs().to_vec();
    halved[2] *= 0.5;
    let perturbed = rejection_rate_check(&inst, &halved, 3000, root().derive("reject-perturbed", 0))?;
    Ok(CriterionReport::new(
        7,
        "acceptance rate 1/A",
        exact.pass && perturbed.pass && (exact.a - 4.0).abs() < 1e-12,
        format!(
            "p = D: {:.4} vs 1/4 (sigma {:.4}); perturbed: {:.4} vs 1/A = {:.4} (sigma {:.4})",
            exact.empirical_acceptance,
            exact.sigma,
            perturbed.empirical_acceptance,
            perturbed.expected_acceptance,
            perturbed.sigma
        ),
    ))
}

/// The four-state path used by the learning checks.
pub fn learning_path_instance() -> Result<Instance> {
    let comp = ComparisonDistribution::from_weights(4, (0..3).map(|i| (vec![i, i + 1], 1.0)).collect())?;
    let target = TargetDistribution::from_weights(vec![4.0, 2.0, 3.0, 1.5])?;
    Instance::new(target, comp, Some(2.0))
}

fn direct_nll(z: &[f64], samples: &[crate::model::LssSample], comp: &ComparisonDistribution) -> f64 {
    samples
        .iter()
        .map(|s| s.members(comp).iter().map(|&m| z[m].exp()).sum::<f64>().ln() - z[s.winner])
        .sum::<f64>()
        / samples.len() as f64
}

pub fn learning_recovery() -> Result<CriterionReport> {
    use rand::Rng;
    let inst = learning_path_instance()?;
    let truth = ParamVector(inst.target.log_params().to_vec()).centered();
    let population = learn_population(&inst, &LearnConfig::default())?;
    let pop_err = population.raw_params.sup_distance(&truth);

    let config = LearnConfig { epsilon: 0.1, ..LearnConfig::default() };
    let lambda = fiedler_eigenvalue(&build_laplacian(&inst.comparisons));
    let hits = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let mut oracle = LssOracle::simulated(&inst, root().derive("learn-trial", i));
            let result = learn(&mut oracle, &config, lambda)?;
            let (a, b) = relative_error(&inst.target, &result.estimate())?;
            Ok(a.max(b) <= 0.1)
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&h| h)
        .count();

    let mut rng = root().derive("gradient-probes", 0).rng();
    let mut worst_fd: f64 = 0.0;
    for probe in 0..100u64 {
        let k = if probe % 2 == 0 { 2 } else { 3 };
        let random = make_random_instance(6, k, 2.0, &mut rng)?;
        let samples = LssOracle::simulated(&random, root().derive("probe", probe)).draw_many(200)?;
        let z: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = nll_gradient(&ParamVector(z.clone()), &samples, &random.comparisons)?;
        let h = 1e-5;
        for x in 0..6 {
            let mut up = z.clone();
            let mut down = z.clone();
            up[x] += h;
            down[x] -= h;
            let fd = (direct_nll(&up, &samples, &random.comparisons) - direct_nll(&down, &samples, &random.comparisons))
                / (2.0 * h);
            worst_fd = worst_fd.max((fd - g[x]).abs() / g[x].abs().max(1e-3));
        }
    }
    Ok(CriterionReport::new(
        8,
        "learning recovery",
        pop_err <= 1e-6 && hits >= 16 && worst_fd <= 1e-6,
        format!(
            "population error {pop_err:.2e} (<= 1e-6); {hits}/20 finite-sample runs within relative error 0.1 \
             (>= 16); worst finite-difference mismatch {worst_fd:.2e} (<= 1e-6)"
        ),
    ))
}

pub fn fiedler_concentration() -> Result<CriterionReport> {
    let path = make_path_instance(6, TargetShape::Uniform, &mut root().rng())?;
    let report = fiedler_concentration_experiment(&path.comparisons, 2000, 100, 0.3, root().derive("fiedler", 0))?;
    Ok(CriterionReport::new(
        9,
        "empirical Fiedler value concentration",
        report.fraction >= 0.9,
        format!("path n=6, m=2000, eps=0.3: {}/100 trials within (1 +- eps) lambda(Q) (>= 0.9)", report.successes),
    ))
}

/// The `n = 5`, `k = 3` instance of the end-to-end check.
pub fn kset_instance() -> Result<Instance> {
    make_random_instance(5, 3, 2.0, &mut root().derive("kset-instance", 0).rng())
}

pub fn kset_end_to_end() -> Result<CriterionReport> {
    let inst = kset_instance()?;
    let pi = stationary_distribution(&build_transition_matrix(&inst.target, &inst.comparisons)?)?;
    let stationary_err = max_abs_diff(&pi, inst.target.probs());

    let scheme = LocalSamplingScheme::new(&inst);
    let seed = root().derive("kset", 0);
    // the first call learns the estimate; later calls reuse it
    let mut config = KSetEngineConfig::new(3, 2.0);
    let mut oracle = scheme.oracle(seed.derive("learn-oracle", 0));
    let mut coins = seed.derive("learn-coins", 0).rng();
    let first = run_kset_sampler_with_learning(&mut oracle, &mut coins, &mut config)?;
    let learned = first.learned.as_ref().map_or(0, |l| l.samples_used);
    let mut states = vec![first.outcome.state().unwrap_or(usize::MAX)];
    let rest = sample_states(9_999, seed.derive("samples", 0), |s| {
        let mut cfg = config.clone();
        let mut oracle = scheme.oracle(s.derive("oracle", 0));
        let mut coins = s.derive("coins", 0).rng();
        Ok(run_kset_sampler_with_learning(&mut oracle, &mut coins, &mut cfg)?.outcome.state())
    })?;
    states.extend(rest);
    let valid = states.iter().all(|&s| s < 5);
    let gof = if valid {
        Some(chi_square_gof(&histogram(&states, 5), inst.target.probs(), DEFAULT_SIGNIFICANCE)?)
    } else {
        None
    };
    Ok(CriterionReport::new(
        10,
        "k-set end to end",
        stationary_err <= 1e-9 && gof.as_ref().is_some_and(|g| g.pass),
        format!(
            "n=5, k=3: stationary error {stationary_err:.2e} (<= 1e-9); 10000 samples after learning from \
             {learned} comparisons, p = {:.4} (> 0.001)",
            gof.map_or(f64::NAN, |g| g.p_value)
        ),
    ))
}

pub fn footnote_sampler() -> Result<CriterionReport> {
    let comp = ComparisonDistribution::new(3, vec![(vec![0, 1], 0.5), (vec![1, 2], 0.5)])?;
    let target = TargetDistribution::from_probs(vec![0.5, 0.25, 0.25])?;
    let inst = Instance::new(target, comp, Some(2.0))?;
    let scheme = LocalSamplingScheme::new(&inst);
    let states = sample_states(100_000, root().derive("footnote", 0), |s| {
        Ok(Some(three_state_closed_form_sampler(&mut scheme.oracle(s))?))
    })?;
    let gof = chi_square_gof(&histogram(&states, 3), inst.target.probs(), DEFAULT_SIGNIFICANCE)?;
    Ok(CriterionReport::new(
        11,
        "three-state closed-form sampler",
        gof.pass,
        format!("D = (0.5, 0.25, 0.25), 100000 runs, p = {:.4} (> 0.001)", gof.p_value),
    ))
}

/// Runs library criterion `id` (1 to 11).
pub fn run_criterion(id: u32) -> Result<CriterionReport> {
    match id {
        1 => stationary_correctness(),
        2 => naive_exact_sampling(),
        3 => learned_exact_sampling(),
        4 => near_uniform_rescaled_stationary(),
        5 => spectral_gap_ordering(),
        6 => bimodal_speedup(),
        7 => rejection_rate(),
        8 => learning_recovery(),
        9 => fiedler_concentration(),
        10 => kset_end_to_end(),
        11 => footnote_sampler(),
        _ => Err(crate::error::Error::InvalidParameter(format!("no library criterion {id}"))),
    }
}

/// Criteria 1 to 11 in order.
pub fn run_library_criteria() -> Result<Vec<CriterionReport>> {
    (1..=11).map(run_criterion).collect()
}
