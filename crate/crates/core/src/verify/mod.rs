//! Statistical and spectral checks of the samplers and the learner.
//!
//! Every report keeps the raw per-trial data it was computed from, and trials
//! draw their randomness from seeds derived per trial index, so reports are
//! reproducible and independent of thread scheduling.

pub mod suite;

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::gamma_ur;

use crate::cftp::{coalescence_time_samples, CftpEngine, CftpResult, EngineKind, SampleBudget};
use crate::error::{Error, Result};
use crate::learning::empirical_laplacian;
use crate::model::{
    make_bimodal_path_instance, ComparisonDistribution, Instance, LocalSamplingScheme, LssOracle,
    TargetDistribution,
};
use crate::rng::SeedTree;
use crate::spectral::{build_laplacian, fiedler_eigenvalue};

pub const DEFAULT_SIGNIFICANCE: f64 = 0.001;
/// Smallest expected count per bin before merging.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofReport {
    pub counts: Vec<u64>,
    /// Expected counts before merging.
    pub expected: Vec<f64>,
    /// Bins left after merging low-expectation neighbours.
    pub bins: usize,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub significance: f64,
    pub pass: bool,
}

/// Pearson chi-square test of `observed` counts against probabilities
/// `expected`. Consecutive bins are merged until each expected count is at
/// least five; the p-value is `Q(dof/2, statistic/2)`.
pub fn chi_square_gof(observed: &[u64], expected: &[f64], significance: f64) -> Result<GofReport> {
    if observed.len() != expected.len() {
        return Err(Error::DimensionMismatch { expected: expected.len(), found: observed.len() });
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::InvalidParameter(format!("significance must lie in (0, 1), got {significance}")));
    }
    if let Some((index, &value)) = expected.iter().enumerate().find(|(_, &p)| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::NonPositive { index, value });
    }
    let mass: f64 = expected.iter().sum();
    let total: u64 = observed.iter().sum();
    if total == 0 || mass <= 0.0 {
        return Err(Error::DegenerateBins);
    }
    let expected_counts: Vec<f64> = expected.iter().map(|p| p / mass * total as f64).collect();

    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut open = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(&expected_counts) {
        open.0 += o as f64;
        open.1 += e;
        if open.1 >= MIN_EXPECTED {
            merged.push(open);
            open = (0.0, 0.0);
        }
    }
    if open.0 > 0.0 || open.1 > 0.0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += open.0;
                last.1 += open.1;
            }
            None => merged.push(open),
        }
    }
    if merged.len() < 2 {
        return Err(Error::DegenerateBins);
    }
    let statistic: f64 = merged.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    let dof = merged.len() - 1;
    let p_value = if statistic <= 0.0 { 1.0 } else { gamma_ur(dof as f64 / 2.0, statistic / 2.0).clamp(0.0, 1.0) };
    Ok(GofReport {
        counts: observed.to_vec(),
        expected: expected_counts,
        bins: merged.len(),
        statistic,
        dof,
        p_value,
        significance,
        pass: p_value > significance,
    })
}

/// Histogram of states in `0..n`.
pub fn histogram(states: &[usize], n: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n];
    for &s in states {
        counts[s] += 1;
    }
    counts
}

/// One benchmark row: a single engine on a single instance size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub engine: String,
    pub trials: usize,
    /// Oracle samples per trial (all loops of a trial for the thinned engine).
    pub steps: Vec<u64>,
    /// Thinned runs per trial until acceptance (all ones for the naive engine).
    pub loops: Vec<u64>,
    pub mean_steps: f64,
    pub median_steps: f64,
    pub max_steps: u64,
    pub mean_loops: f64,
    /// Mean oracle samples per single coupling run.
    pub mean_steps_per_run: f64,
    /// Trials that hit the per-trial cap; their step counts are lower bounds.
    pub budget_exceeded: usize,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl BenchRow {
    fn from_raw(n: usize, engine: &str, steps: Vec<u64>, loops: Vec<u64>, exceeded: usize, wall: f64) -> Self {
        let trials = steps.len();
        let total_steps: u64 = steps.iter().sum();
        let total_loops: u64 = loops.iter().sum();
        let mut sorted = steps.clone();
        sorted.sort_unstable();
        let median_steps = if trials % 2 == 1 {
            sorted[trials / 2] as f64
        } else {
            (sorted[trials / 2 - 1] + sorted[trials / 2]) as f64 / 2.0
        };
        Self {
            n,
            engine: engine.to_string(),
            trials,
            mean_steps: total_steps as f64 / trials as f64,
            median_steps,
            max_steps: sorted[trials - 1],
            mean_loops: total_loops as f64 / trials as f64,
            mean_steps_per_run: total_steps as f64 / total_loops as f64,
            budget_exceeded: exceeded,
            steps,
            loops,
            wall_time_secs: wall,
        }
    }

    /// Recomputes the summary from the raw arrays.
    pub fn recomputed(&self) -> Self {
        Self::from_raw(self.n, &self.engine, self.steps.clone(), self.loops.clone(), self.budget_exceeded, self.wall_time_secs)
    }
}

/// Naive-to-thinned comparison at one size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRatio {
    pub n: usize,
    /// `mean_steps_per_run(naive) / mean_steps_per_run(param)`.
    pub coalescence_ratio: f64,
    /// `mean_steps(naive) / mean_steps(param)`, counting rejected runs.
    pub per_sample_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub family: String,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub per_trial_cap: Option<u64>,
    pub rows: Vec<BenchRow>,
    pub ratios: Vec<BenchRatio>,
    /// Coalescence ratio nondecreasing over the sizes.
    pub monotone: bool,
}

impl BenchReport {
    /// One line per row, tab separated, with a header.
    pub fn to_table(&self) -> String {
        let mut out = String::from("n\tengine\ttrials\tmean_steps\tmedian_steps\tmax_steps\tmean_loops\tmean_steps_per_run\tbudget_exceeded\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.n, r.engine, r.trials, r.mean_steps, r.median_steps, r.max_steps, r.mean_loops, r.mean_steps_per_run, r.budget_exceeded
            ));
        }
        out
    }
}

/// Runs the naive engine and the thinned engine with `p = D` (looped until
/// acceptance) on bimodal paths of the given odd sizes.
pub fn coalescence_benchmark(sizes: &[usize], trials: usize, seed: SeedTree, per_trial_cap: Option<u64>) -> Result<BenchReport> {
    if trials < 10 {
        return Err(Error::InvalidParameter(format!("benchmark needs at least 10 trials, got {trials}")));
    }
    if sizes.is_empty() {
        return Err(Error::InvalidParameter("benchmark needs at least one size".into()));
    }
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for &n in sizes {
        let instance = make_bimodal_path_instance(n)?;
        let scheme = LocalSamplingScheme::new(&instance);
        let size_seed = seed.derive("bench-size", n as u64);

        let start = Instant::now();
        let naive = coalescence_time_samples(&scheme, &EngineKind::Naive, trials, size_seed.derive("naive", 0), per_trial_cap)?;
        let exceeded = naive.iter().filter(|t| !t.coalesced).count();
        let naive_row = BenchRow::from_raw(
            n,
            "naive",
            naive.iter().map(|t| t.steps).collect(),
            vec![1; trials],
            exceeded,
            start.elapsed().as_secs_f64(),
        );

        let start = Instant::now();
        let param_seed = size_seed.derive("param", 0);
        let runs: Vec<(u64, u64, bool)> = (0..trials)
            .into_par_iter()
            .map(|i| {
                let mut oracle = scheme.oracle(param_seed.derive("oracle", i as u64));
                let mut coins = param_seed.derive("coins", i as u64).rng();
                let mut budget = SampleBudget { cap: per_trial_cap, consumed: 0 };
                let out = CftpEngine::new(&mut oracle, &mut coins).with_estimate(&instance.target, &mut budget)?;
                Ok((out.steps, out.loops, out.result == CftpResult::BudgetExceeded))
            })
            .collect::<Result<_>>()?;
        let exceeded = runs.iter().filter(|r| r.2).count();
        let param_row = BenchRow::from_raw(
            n,
            "param",
            runs.iter().map(|r| r.0).collect(),
            runs.iter().map(|r| r.1).collect(),
            exceeded,
            start.elapsed().as_secs_f64(),
        );
        ratios.push(BenchRatio {
            n,
            coalescence_ratio: naive_row.mean_steps_per_run / param_row.mean_steps_per_run,
            per_sample_ratio: naive_row.mean_steps / param_row.mean_steps,
        });
        rows.push(naive_row);
        rows.push(param_row);
    }
    let monotone = ratios.windows(2).all(|w| w[1].coalescence_ratio >= w[0].coalescence_ratio);
    Ok(BenchReport {
        family: "bimodal_path".into(),
        sizes: sizes.to_vec(),
        trials,
        per_trial_cap,
        rows,
        ratios,
        monotone,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiedlerReport {
    pub lambda_q: f64,
    pub samples_per_trial: usize,
    pub trials: usize,
    pub epsilon: f64,
    /// Empirical `λ(L)` per trial.
    pub lambdas: Vec<f64>,
    pub successes: usize,
    pub fraction: f64,
    /// `ln(n/δ) / (λ(Q) ε²)` at `δ = 0.05`: the order of the sample count at
    /// which concentration is guaranteed, up to an unspecified constant.
    pub reference_sample_count: f64,
}

/// Fraction of trials in which the empirical Laplacian of `m` draws has
/// `λ(L) ∈ [(1-ε)λ(Q), (1+ε)λ(Q)]`.
pub fn fiedler_concentration_experiment(
    comp: &ComparisonDistribution,
    m: usize,
    trials: usize,
    epsilon: f64,
    seed: SeedTree,
) -> Result<FiedlerReport> {
    if m == 0 || trials == 0 {
        return Err(Error::InvalidParameter("samples per trial and trials must be positive".into()));
    }
    let n = comp.n();
    // set draws do not depend on the target
    let instance = Instance::new(TargetDistribution::uniform(n), comp.clone(), None)?;
    let scheme = LocalSamplingScheme::new(&instance);
    let lambda_q = fiedler_eigenvalue(&build_laplacian(comp));
    let lambdas: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let samples = scheme.oracle(seed.derive("fiedler", i as u64)).draw_many(m)?;
            Ok(fiedler_eigenvalue(&empirical_laplacian(&samples, comp)?))
        })
        .collect::<Result<_>>()?;
    let successes = lambdas.iter().filter(|&&l| (l - lambda_q).abs() <= epsilon * lambda_q).count();
    Ok(FiedlerReport {
        lambda_q,
        samples_per_trial: m,
        trials,
        epsilon,
        fraction: successes as f64 / trials as f64,
        successes,
        lambdas,
        reference_sample_count: (n as f64 / 0.05).ln() / (lambda_q * epsilon * epsilon),
    })
}

/// Three-state sampler from the two comparisons `{0,1}` and `{1,2}`: draw a
/// winner `x` of `{0,1}` and a winner `y` of `{1,2}` until `(x, y) ≠ (0, 2)`;
/// output `1` if both are `1`, otherwise the coordinate that is not `1`.
pub fn three_state_closed_form_sampler(oracle: &mut LssOracle) -> Result<usize> {
    let comp = oracle.comparisons();
    let left = comp.set_index(&[0, 1]);
    let right = comp.set_index(&[1, 2]);
    let (left, right) = match (comp.n(), comp.sets().len(), left, right) {
        (3, 2, Some(l), Some(r)) => (l, r),
        _ => {
            return Err(Error::InvalidParameter(
                "three-state sampler needs n = 3 with support {0,1}, {1,2}".into(),
            ))
        }
    };
    let mut winner_of = |set: usize| -> Result<usize> {
        loop {
            let s = oracle.draw()?;
            if s.set == set {
                return Ok(s.winner);
            }
        }
    };
    loop {
        let x = winner_of(left)?;
        let y = winner_of(right)?;
        match (x, y) {
            (0, 2) => continue,
            (1, 1) => return Ok(1),
            (1, other) | (other, 1) => return Ok(other),
            _ => unreachable!("winners come from their sets"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionReport {
    /// `A = Σ_y D(y) / p(y)`.
    pub a: f64,
    pub expected_acceptance: f64,
    pub trials: usize,
    pub accepted: usize,
    pub empirical_acceptance: f64,
    pub sigma: f64,
    pub pass: bool,
}

/// Acceptance frequency of single thinned runs with `p = estimate`, compared
/// against `1/A` at three binomial standard deviations.
pub fn rejection_rate_check(instance: &Instance, estimate: &[f64], trials: usize, seed: SeedTree) -> Result<RejectionReport> {
    crate::cftp::check_thinning(estimate, instance.n())?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let scheme = LocalSamplingScheme::new(instance);
    let a: f64 = instance.target.probs().iter().zip(estimate).map(|(d, p)| d / p).sum();
    let outcomes: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut oracle = scheme.oracle(seed.derive("oracle", i as u64));
            let mut coins = seed.derive("coins", i as u64).rng();
            let out = CftpEngine::new(&mut oracle, &mut coins).parameterized(estimate, &mut SampleBudget::default())?;
            if out.result == CftpResult::BudgetExceeded {
                return Err(Error::InvalidParameter("sample budget exhausted".into()));
            }
            Ok(out.accepted())
        })
        .collect::<Result<_>>()?;
    let accepted = outcomes.iter().filter(|&&a| a).count();
    let expected = 1.0 / a;
    let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
    let empirical = accepted as f64 / trials as f64;
    Ok(RejectionReport {
        a,
        expected_acceptance: expected,
        trials,
        accepted,
        empirical_acceptance: empirical,
        sigma,
        pass: (empirical - expected).abs() <= 3.0 * sigma,
    })
}
