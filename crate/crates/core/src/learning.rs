//! Relative-error learning of the target from comparison data.
//!
//! The learner minimizes the empirical negative log-likelihood of the
//! Plackett-Luce choice model (Bradley-Terry-Luce for pairs)
//!
//! ```text
//! L_N(z) = (1/N) Σ_i [ -z_{winner_i} + log Σ_{j ∈ S_i} exp(z_j) ]
//! ```
//!
//! by projected gradient descent over
//! `Ω_φ = { z : Σ z = 0, |z_x - z_y| ≤ log φ for every co-occurring pair }`,
//! then shifts the centered solution onto the simplex with a log-sum-exp.
//! Samples are folded into per-set winner counts first, so each iteration
//! costs `O(|supp Q| · k)` regardless of the sample count.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_phi, ComparisonDistribution, Instance, LssOracle, LssSample, TargetDistribution};
use crate::spectral::{fiedler_eigenvalue, Laplacian};

/// Largest constraint violation tolerated by [`project_to_omega_phi`].
pub const PROJECTION_TOLERANCE: f64 = 1e-10;
/// Sweep cap for [`project_to_omega_phi`].
pub const PROJECTION_MAX_SWEEPS: usize = 10_000;
/// Slack of the descent check in the optimizer.
const DESCENT_SLACK: f64 = 1e-12;
/// Pilot-batch doublings allowed while the empirical Laplacian is singular.
const MAX_PILOT_DOUBLINGS: usize = 20;

/// Natural-parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Copy with the mean removed.
    pub fn centered(&self) -> Self {
        let mean = self.0.iter().sum::<f64>() / self.0.len().max(1) as f64;
        Self(self.0.iter().map(|v| v - mean).collect())
    }

    pub fn is_centered(&self) -> bool {
        self.0.iter().sum::<f64>().abs() <= 1e-10
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

/// Winner weights per supported set. Sample counts for data, exact expected
/// masses `Q(S) D(x) / D(S)` for the population objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonStats {
    n: usize,
    /// `weights[s][j]` belongs to `sets()[s].members[j]`.
    weights: Vec<Vec<f64>>,
    total: f64,
}

impl ComparisonStats {
    pub fn from_samples(comp: &ComparisonDistribution, samples: &[LssSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        let mut weights: Vec<Vec<f64>> = comp.sets().iter().map(|s| vec![0.0; s.members.len()]).collect();
        for s in samples {
            let members = &comp
                .sets()
                .get(s.set)
                .ok_or_else(|| Error::MalformedSample(format!("set index {} out of range", s.set)))?
                .members;
            let pos = members
                .iter()
                .position(|&m| m == s.winner)
                .ok_or_else(|| Error::MalformedSample(format!("winner {} not in set {}", s.winner, s.set)))?;
            weights[s.set][pos] += 1.0;
        }
        Ok(Self {
            n: comp.n(),
            weights,
            total: samples.len() as f64,
        })
    }

    /// Expected statistics of one draw from `Samp(Q; D)`.
    pub fn population(instance: &Instance) -> Self {
        let comp = &instance.comparisons;
        let d = instance.target.probs();
        let weights = comp
            .sets()
            .iter()
            .map(|s| {
                let mass = instance.target.mass(&s.members);
                s.members.iter().map(|&m| s.prob * d[m] / mass).collect()
            })
            .collect();
        Self { n: comp.n(), weights, total: 1.0 }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nll(&self, comp: &ComparisonDistribution, z: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (set, w) in comp.sets().iter().zip(&self.weights) {
            let set_total: f64 = w.iter().sum();
            if set_total == 0.0 {
                continue;
            }
            let lse = log_sum_exp(set.members.iter().map(|&m| z[m]));
            let linear: f64 = set.members.iter().zip(w).map(|(&m, &c)| c * z[m]).sum();
            acc += set_total * lse - linear;
        }
        acc / self.total
    }

    pub fn gradient(&self, comp: &ComparisonDistribution, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n];
        for (set, w) in comp.sets().iter().zip(&self.weights) {
            let set_total: f64 = w.iter().sum();
            if set_total == 0.0 {
                continue;
            }
            let max = set.members.iter().map(|&m| z[m]).fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = set.members.iter().map(|&m| (z[m] - max).exp()).sum();
            for (&m, &c) in set.members.iter().zip(w) {
                let softmax = (z[m] - max).exp() / denom;
                g[m] += set_total * softmax - c;
            }
        }
        for v in g.iter_mut() {
            *v /= self.total;
        }
        g
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_dims(z: &ParamVector, comp: &ComparisonDistribution) -> Result<()> {
    if z.0.len() != comp.n() {
        return Err(Error::DimensionMismatch { expected: comp.n(), found: z.0.len() });
    }
    Ok(())
}

/// Empirical negative log-likelihood; shift invariant in `z`.
pub fn negative_log_likelihood(
    z: &ParamVector,
    samples: &[LssSample],
    comp: &ComparisonDistribution,
) -> Result<f64> {
    check_dims(z, comp)?;
    Ok(ComparisonStats::from_samples(comp, samples)?.nll(comp, &z.0))
}

/// Gradient of [`negative_log_likelihood`]; its components sum to zero.
pub fn nll_gradient(
    z: &ParamVector,
    samples: &[LssSample],
    comp: &ComparisonDistribution,
) -> Result<Vec<f64>> {
    check_dims(z, comp)?;
    Ok(ComparisonStats::from_samples(comp, samples)?.gradient(comp, &z.0))
}

/// Euclidean projection onto `Ω_φ`.
///
/// The zero-sum hyperplane is handled in closed form first. Every pairwise
/// slab `|z_x - z_y| ≤ log φ` has normal `e_x - e_y ⟂ 1`, so projecting onto
/// the slabs never leaves the hyperplane; their intersection is handled by
/// Dykstra's alternating projections, each slab in closed form.
pub fn project_to_omega_phi(z: &ParamVector, comp: &ComparisonDistribution, phi: f64) -> Result<ParamVector> {
    check_dims(z, comp)?;
    check_phi(phi)?;
    let pairs = comp.cooccurring_pairs();
    Projector::new(pairs, phi.ln()).project(z)
}

struct Projector {
    pairs: Vec<(usize, usize)>,
    bound: f64,
}

impl Projector {
    fn new(pairs: Vec<(usize, usize)>, bound: f64) -> Self {
        Self { pairs, bound }
    }

    fn violation(&self, z: &[f64]) -> f64 {
        self.pairs
            .iter()
            .fold(0.0, |acc, &(x, y)| acc.max((z[x] - z[y]).abs() - self.bound))
    }

    fn project(&self, z: &ParamVector) -> Result<ParamVector> {
        let mut z = z.centered().0;
        let mut corrections = vec![0.0; self.pairs.len()];
        let mut violation = self.violation(&z);
        for _ in 0..PROJECTION_MAX_SWEEPS {
            let mut moved: f64 = 0.0;
            for (&(x, y), q) in self.pairs.iter().zip(corrections.iter_mut()) {
                let a = z[x] + *q;
                let b = z[y] - *q;
                let d = a - b;
                let shift = 0.5 * (d - d.clamp(-self.bound, self.bound));
                let (nx, ny) = (a - shift, b + shift);
                moved = moved.max((nx - z[x]).abs()).max((ny - z[y]).abs());
                z[x] = nx;
                z[y] = ny;
                *q = shift;
            }
            violation = self.violation(&z);
            if violation <= PROJECTION_TOLERANCE && moved <= 1e-13 {
                return Ok(ParamVector(z));
            }
        }
        if violation <= PROJECTION_TOLERANCE {
            return Ok(ParamVector(z));
        }
        Err(Error::ProjectionFailed { sweeps: PROJECTION_MAX_SWEEPS, violation })
    }
}

/// Learner settings. `sample_constant` is the constant `C` in
/// `N = ceil(C · n · ln(1/δ) / (λ ε²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LearnConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub phi: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub grad_tolerance: f64,
    pub sample_constant: f64,
    /// Pilot batch for estimating `λ(Q)` has `ceil(pilot_constant · ln n)` draws.
    pub pilot_constant: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            delta: 0.05,
            phi: 2.0,
            step_size: 1.0,
            max_iters: 100_000,
            grad_tolerance: 1e-9,
            sample_constant: 200.0,
            pilot_constant: 50.0,
        }
    }
}

impl LearnConfig {
    /// Accuracy `ε = min(1/√n, 1/2)`, as used ahead of the exact sampler.
    pub fn for_sampler(n: usize, phi: f64) -> Self {
        Self {
            epsilon: (1.0 / (n.max(1) as f64).sqrt()).min(0.5),
            phi,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_phi(self.phi)?;
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.epsilon) || !open_unit(self.delta) {
            return Err(Error::InvalidParameter(format!(
                "epsilon and delta must lie in (0, 1), got {} and {}",
                self.epsilon, self.delta
            )));
        }
        if !(self.step_size > 0.0 && self.grad_tolerance > 0.0 && self.sample_constant > 0.0 && self.pilot_constant > 0.0) {
            return Err(Error::InvalidParameter("step size, tolerance and constants must be positive".into()));
        }
        Ok(())
    }

    /// `ceil(C · n · ln(1/δ) / (λ ε²))`.
    pub fn sample_count(&self, n: usize, lambda: f64) -> u64 {
        (self.sample_constant * n as f64 * (1.0 / self.delta).ln() / (lambda * self.epsilon * self.epsilon)).ceil() as u64
    }

    fn pilot_count(&self, n: usize) -> usize {
        (self.pilot_constant * (n as f64).ln()).ceil().max(1.0) as usize
    }
}

/// Learner output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnResult {
    pub estimate: Vec<f64>,
    /// Centered minimizer over `Ω_φ`.
    pub raw_params: ParamVector,
    pub iterations: usize,
    /// Sup-norm of the projected-gradient mapping at the final iterate.
    pub final_gradient_norm: f64,
    pub final_objective: f64,
    pub samples_used: u64,
    /// `λ` used to size the training batch (`None` in population mode).
    pub lambda_estimate: Option<f64>,
}

impl LearnResult {
    pub fn estimate(&self) -> TargetDistribution {
        shift_to_distribution(&self.raw_params)
    }
}

/// Optimizer trace.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ParamVector,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    /// Objective at the start and after every accepted iterate.
    pub objective_history: Vec<f64>,
}

/// Projected gradient descent from `z = 0` with step halving whenever a
/// candidate would increase the objective. Stops when the projected-gradient
/// mapping `|z - P(z - η∇L)|_∞ / η` falls below `grad_tolerance`.
pub fn fit(stats: &ComparisonStats, comp: &ComparisonDistribution, config: &LearnConfig) -> Result<FitResult> {
    config.validate()?;
    let n = comp.n();
    let projector = Projector::new(comp.cooccurring_pairs(), config.phi.ln());
    let mut z = ParamVector::zeros(n);
    let mut value = stats.nll(comp, &z.0);
    let mut history = vec![value];
    let mut eta = config.step_size;
    let mut mapping_norm = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.max_iters {
        let g = stats.gradient(comp, &z.0);
        let (candidate, cand_value) = loop {
            let stepped = ParamVector(z.0.iter().zip(&g).map(|(a, b)| a - eta * b).collect());
            let candidate = projector.project(&stepped)?;
            let cand_value = stats.nll(comp, &candidate.0);
            if cand_value <= value + DESCENT_SLACK || eta < 1e-12 {
                break (candidate, cand_value);
            }
            eta *= 0.5;
        };
        iterations += 1;
        mapping_norm = z.sup_distance(&candidate) / eta;
        if cand_value > value + DESCENT_SLACK {
            // step collapsed without descent: stay at the current iterate
            break;
        }
        z = candidate;
        value = cand_value;
        history.push(value);
        if mapping_norm <= config.grad_tolerance {
            break;
        }
    }
    Ok(FitResult {
        params: z,
        iterations,
        final_gradient_norm: mapping_norm,
        objective_history: history,
    })
}

fn finish(fit: FitResult, comp: &ComparisonDistribution, stats: &ComparisonStats, samples_used: u64, lambda: Option<f64>) -> LearnResult {
    let estimate = shift_to_distribution(&fit.params);
    LearnResult {
        estimate: estimate.probs().to_vec(),
        final_objective: stats.nll(comp, &fit.params.0),
        raw_params: fit.params,
        iterations: fit.iterations,
        final_gradient_norm: fit.final_gradient_norm,
        samples_used,
        lambda_estimate: lambda,
    }
}

fn trivial_result() -> LearnResult {
    LearnResult {
        estimate: vec![1.0],
        raw_params: ParamVector::zeros(1),
        iterations: 0,
        final_gradient_norm: 0.0,
        final_objective: 0.0,
        samples_used: 0,
        lambda_estimate: None,
    }
}

/// Draws `ceil(C · n · ln(1/δ) / (λ ε²))` samples with the supplied `λ` and
/// fits the constrained maximum-likelihood estimate.
pub fn learn(oracle: &mut LssOracle, config: &LearnConfig, lambda_estimate: f64) -> Result<LearnResult> {
    config.validate()?;
    if !(lambda_estimate > 0.0 && lambda_estimate.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda estimate must be positive, got {lambda_estimate}")));
    }
    let n = oracle.n();
    if n == 1 {
        return Ok(trivial_result());
    }
    let mut result = learn_from_samples(oracle, config, config.sample_count(n, lambda_estimate) as usize)?;
    result.lambda_estimate = Some(lambda_estimate);
    Ok(result)
}

/// Fits on exactly `count` fresh draws from the oracle.
pub fn learn_from_samples(oracle: &mut LssOracle, config: &LearnConfig, count: usize) -> Result<LearnResult> {
    config.validate()?;
    if oracle.n() == 1 {
        return Ok(trivial_result());
    }
    let samples = oracle.draw_many(count)?;
    let comp = oracle.comparisons().clone();
    let stats = ComparisonStats::from_samples(&comp, &samples)?;
    let result = fit(&stats, &comp, config)?;
    Ok(finish(result, &comp, &stats, count as u64, None))
}

/// [`learn`] without knowing `λ(Q)`: a pilot batch of
/// `ceil(pilot_constant · ln n)` draws estimates it through the empirical
/// Laplacian, doubling while that Laplacian is still singular.
pub fn learn_from_oracle(oracle: &mut LssOracle, config: &LearnConfig) -> Result<LearnResult> {
    config.validate()?;
    let n = oracle.n();
    if n == 1 {
        return Ok(trivial_result());
    }
    let mut pilot = config.pilot_count(n);
    let mut used = 0u64;
    for _ in 0..=MAX_PILOT_DOUBLINGS {
        let samples = oracle.draw_many(pilot)?;
        used += pilot as u64;
        let lambda = fiedler_eigenvalue(&empirical_laplacian(&samples, oracle.comparisons())?);
        if lambda > 1e-9 {
            let mut result = learn(oracle, config, lambda)?;
            result.samples_used += used;
            return Ok(result);
        }
        pilot *= 2;
    }
    Err(Error::Disconnected)
}

/// Fits the population objective, whose minimizer over `Ω_φ` is the centered
/// natural parameter vector whenever the instance satisfies the ratio bound.
pub fn learn_population(instance: &Instance, config: &LearnConfig) -> Result<LearnResult> {
    config.validate()?;
    if instance.n() == 1 {
        return Ok(trivial_result());
    }
    let stats = ComparisonStats::population(instance);
    let result = fit(&stats, &instance.comparisons, config)?;
    Ok(finish(result, &instance.comparisons, &stats, 0, None))
}

/// Subtracts `C = log Σ exp(ẑ_x)` so that the parameters describe a
/// distribution.
pub fn shift_to_distribution(z_hat: &ParamVector) -> TargetDistribution {
    TargetDistribution::from_params(&z_hat.0)
}

/// `(|1 - d1/d2|_∞, |1 - d2/d1|_∞)`.
pub fn relative_error(d1: &TargetDistribution, d2: &TargetDistribution) -> Result<(f64, f64)> {
    if d1.n() != d2.n() {
        return Err(Error::DimensionMismatch { expected: d1.n(), found: d2.n() });
    }
    let mut out = (0.0f64, 0.0f64);
    for (&a, &b) in d1.probs().iter().zip(d2.probs()) {
        out.0 = out.0.max((1.0 - a / b).abs());
        out.1 = out.1.max((1.0 - b / a).abs());
    }
    Ok(out)
}

/// Average of `E_i (kI - 11ᵀ) E_iᵀ` over the drawn sets; for pairs this is
/// the average of `(e_i - e_j)(e_i - e_j)ᵀ`.
pub fn empirical_laplacian(samples: &[LssSample], comp: &ComparisonDistribution) -> Result<Laplacian> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = comp.n();
    let mut counts = vec![0u64; comp.sets().len()];
    for s in samples {
        *counts
            .get_mut(s.set)
            .ok_or_else(|| Error::MalformedSample(format!("set index {} out of range", s.set)))? += 1;
    }
    let total = samples.len() as f64;
    let k = comp.k() as f64;
    let mut m = DMatrix::zeros(n, n);
    for (set, &c) in comp.sets().iter().zip(&counts) {
        if c == 0 {
            continue;
        }
        let w = c as f64 / total;
        for &x in &set.members {
            m[(x, x)] += (k - 1.0) * w;
            for &y in &set.members {
                if x != y {
                    m[(x, y)] -= w;
                }
            }
        }
    }
    Ok(Laplacian(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_bimodal_path_instance, make_random_instance};
    use crate::rng::SeedTree;
    use crate::spectral::build_laplacian;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn pair() -> ComparisonDistribution {
        ComparisonDistribution::new(2, vec![(vec![0, 1], 1.0)]).unwrap()
    }

    fn path4_instance() -> Instance {
        let comp = ComparisonDistribution::from_weights(4, (0..3).map(|i| (vec![i, i + 1], 1.0)).collect()).unwrap();
        let target = TargetDistribution::from_weights(vec![4.0, 2.0, 3.0, 1.5]).unwrap();
        Instance::new(target, comp, Some(2.0)).unwrap()
    }

    /// Per-sample objective written straight from its definition.
    fn direct_nll(z: &[f64], samples: &[LssSample], comp: &ComparisonDistribution) -> f64 {
        samples
            .iter()
            .map(|s| {
                let members = s.members(comp);
                let lse = members.iter().map(|&m| z[m].exp()).sum::<f64>().ln();
                lse - z[s.winner]
            })
            .sum::<f64>()
            / samples.len() as f64
    }

    #[test]
    fn nll_examples() {
        let comp = pair();
        let s = [LssSample { set: 0, winner: 0 }];
        assert_abs_diff_eq!(
            negative_log_likelihood(&ParamVector(vec![0.0, 0.0]), &s, &comp).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );
        let v = negative_log_likelihood(&ParamVector(vec![2f64.ln(), 0.0]), &s, &comp).unwrap();
        assert_abs_diff_eq!(v, 1.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.405465, epsilon = 1e-6);
        assert!(matches!(
            negative_log_likelihood(&ParamVector(vec![0.0, 0.0]), &[], &comp),
            Err(Error::EmptySamples)
        ));
    }

    #[test]
    fn gradient_examples() {
        let comp = pair();
        let s = [LssSample { set: 0, winner: 0 }];
        let g = nll_gradient(&ParamVector(vec![0.0, 0.0]), &s, &comp).unwrap();
        assert_abs_diff_eq!(g[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.5, epsilon = 1e-15);
        assert!(nll_gradient(&ParamVector(vec![0.0]), &s, &comp).is_err());

        // population optimum: gradient vanishes at z*
        let inst = path4_instance();
        let stats = ComparisonStats::population(&inst);
        let g = stats.gradient(&inst.comparisons, inst.target.log_params());
        for v in g {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SeedTree::new(9).rng();
        for k in [2, 3] {
            let inst = make_random_instance(6, k, 2.0, &mut rng).unwrap();
            let mut oracle = LssOracle::simulated(&inst, SeedTree::new(k as u64));
            for _ in 0..20 {
                let samples = oracle.draw_many(rng.random_range(1..200)).unwrap();
                let z = ParamVector((0..6).map(|_| rng.random_range(-2.0..2.0)).collect());
                let g = nll_gradient(&z, &samples, &inst.comparisons).unwrap();
                let h = 1e-5;
                for x in 0..6 {
                    let mut up = z.0.clone();
                    let mut down = z.0.clone();
                    up[x] += h;
                    down[x] -= h;
                    let fd = (direct_nll(&up, &samples, &inst.comparisons) - direct_nll(&down, &samples, &inst.comparisons)) / (2.0 * h);
                    assert!((fd - g[x]).abs() <= 1e-6 * g[x].abs().max(1e-3), "{fd} vs {}", g[x]);
                }
                assert_abs_diff_eq!(g.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
                assert_abs_diff_eq!(
                    negative_log_likelihood(&z, &samples, &inst.comparisons).unwrap(),
                    direct_nll(&z.0, &samples, &inst.comparisons),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn projection_examples() {
        let comp = pair();
        let half_log2 = 2f64.ln() / 2.0;
        let p = project_to_omega_phi(&ParamVector(vec![1.0, -1.0]), &comp, 2.0).unwrap();
        assert_abs_diff_eq!(p.0[0], half_log2, epsilon = 1e-12);
        assert_abs_diff_eq!(p.0[1], -half_log2, epsilon = 1e-12);
        assert_abs_diff_eq!(half_log2, 0.3466, epsilon = 1e-4);
        let p = project_to_omega_phi(&ParamVector(vec![2.0, 0.0]), &comp, 2.0).unwrap();
        assert_abs_diff_eq!(p.0[0], half_log2, epsilon = 1e-12);
        assert_abs_diff_eq!(p.0[1], -half_log2, epsilon = 1e-12);

        let feasible = ParamVector(vec![0.1, -0.1]);
        assert_eq!(project_to_omega_phi(&feasible, &comp, 2.0).unwrap(), feasible);
        assert!(project_to_omega_phi(&feasible, &comp, 0.5).is_err());
    }

    /// Brute-force check of the projection's optimality conditions: the
    /// result is feasible and no feasible point sampled nearby is closer.
    #[test]
    fn projection_is_nearest_point() {
        let mut rng = SeedTree::new(21).rng();
        for k in [2, 3] {
            let inst = make_random_instance(5, k, 1.5, &mut rng).unwrap();
            let comp = &inst.comparisons;
            for _ in 0..20 {
                let z = ParamVector((0..5).map(|_| rng.random_range(-3.0..3.0)).collect());
                let p = project_to_omega_phi(&z, comp, 1.5).unwrap();
                assert!(p.is_centered());
                let bound = 1.5f64.ln();
                for (x, y) in comp.cooccurring_pairs() {
                    assert!((p.0[x] - p.0[y]).abs() <= bound + 1e-10);
                }
                let dist = |w: &[f64]| w.iter().zip(&z.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                let best = dist(&p.0);
                for _ in 0..200 {
                    let trial: Vec<f64> = p.0.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
                    let trial = ParamVector(trial).centered();
                    let feasible = comp
                        .cooccurring_pairs()
                        .iter()
                        .all(|&(x, y)| (trial.0[x] - trial.0[y]).abs() <= bound);
                    if feasible {
                        assert!(dist(&trial.0) >= best - 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn population_recovers_truth() {
        let inst = path4_instance();
        let result = learn_population(&inst, &LearnConfig::default()).unwrap();
        let truth = ParamVector(inst.target.log_params().to_vec()).centered();
        assert!(result.raw_params.sup_distance(&truth) <= 1e-6);
        assert!(result.raw_params.is_centered());

        // on the boundary of Ω_φ: every ratio of the bimodal path is exactly φ
        let bimodal = make_bimodal_path_instance(7).unwrap();
        let result = learn_population(&bimodal, &LearnConfig::default()).unwrap();
        let (a, b) = relative_error(&bimodal.target, &result.estimate()).unwrap();
        assert!(a.max(b) <= 1e-6, "{a} {b}");

        let sym = Instance::new(TargetDistribution::uniform(2), pair(), Some(2.0)).unwrap();
        let result = learn_population(&sym, &LearnConfig::default()).unwrap();
        assert!(result.raw_params.0.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn objective_never_increases() {
        let inst = make_bimodal_path_instance(9).unwrap();
        let mut oracle = LssOracle::simulated(&inst, SeedTree::new(1));
        let samples = oracle.draw_many(5000).unwrap();
        let stats = ComparisonStats::from_samples(&inst.comparisons, &samples).unwrap();
        let config = LearnConfig { step_size: 8.0, ..LearnConfig::default() };
        let fit = fit(&stats, &inst.comparisons, &config).unwrap();
        for w in fit.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(fit.final_gradient_norm <= config.grad_tolerance);
    }

    #[test]
    fn finite_sample_recovery() {
        let inst = path4_instance();
        let config = LearnConfig { epsilon: 0.1, ..LearnConfig::default() };
        let truth = ParamVector(inst.target.log_params().to_vec()).centered();
        let lambda = fiedler_eigenvalue(&build_laplacian(&inst.comparisons));
        let mut hits = 0;
        for seed in 0..20 {
            let mut oracle = LssOracle::simulated(&inst, SeedTree::new(seed).derive("learn", 0));
            let result = learn(&mut oracle, &config, lambda).unwrap();
            assert_eq!(result.samples_used, oracle.samples_drawn());
            if result.raw_params.sup_distance(&truth) <= 0.1 {
                hits += 1;
            }
        }
        assert!(hits >= 16, "{hits}");
    }

    #[test]
    fn pilot_learning_on_symmetric_pair() {
        let sym = Instance::new(TargetDistribution::uniform(2), pair(), Some(2.0)).unwrap();
        let mut oracle = LssOracle::simulated(&sym, SeedTree::new(3));
        let result = learn_from_oracle(&mut oracle, &LearnConfig { epsilon: 0.2, ..LearnConfig::default() }).unwrap();
        assert!(result.raw_params.0[0].abs() < 0.05);
        assert_eq!(result.samples_used, oracle.samples_drawn());
        let est = result.estimate();
        assert_abs_diff_eq!(est.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn shift_and_relative_error_examples() {
        let d = shift_to_distribution(&ParamVector(vec![2f64.ln(), 0.5f64.ln()]));
        assert_abs_diff_eq!(d.probs()[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(d.probs()[1], 0.2, epsilon = 1e-15);
        let z = ParamVector(vec![0.3f64.ln(), 0.7f64.ln()]);
        let d = shift_to_distribution(&z);
        assert_abs_diff_eq!(d.probs()[0], 0.3, epsilon = 1e-15);
        let shifted = shift_to_distribution(&ParamVector(vec![z.0[0] + 5.0, z.0[1] + 5.0]));
        assert_abs_diff_eq!(shifted.probs()[1], 0.7, epsilon = 1e-12);

        let a = TargetDistribution::from_probs(vec![0.5, 0.5]).unwrap();
        let b = TargetDistribution::from_probs(vec![0.6, 0.4]).unwrap();
        assert_eq!(relative_error(&a, &a).unwrap(), (0.0, 0.0));
        let (r1, r2) = relative_error(&a, &b).unwrap();
        assert_abs_diff_eq!(r1, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(r2, 0.2, epsilon = 1e-15);
        assert!(relative_error(&a, &TargetDistribution::uniform(3)).is_err());
    }

    #[test]
    fn empirical_laplacian_examples() {
        let comp = pair();
        let l = empirical_laplacian(&[LssSample { set: 0, winner: 1 }; 4], &comp).unwrap();
        assert_eq!(l.0, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));

        for k in [2, 3] {
            let inst = make_random_instance(6, k, 2.0, &mut SeedTree::new(k as u64).rng()).unwrap();
            let mut oracle = LssOracle::simulated(&inst, SeedTree::new(8));
            let samples = oracle.draw_many(100_000).unwrap();
            let l = empirical_laplacian(&samples, &inst.comparisons).unwrap();
            let q = build_laplacian(&inst.comparisons);
            assert!((l.0 - q.0).amax() <= 0.02);
        }
    }

    proptest! {
        #[test]
        fn nll_is_convex_and_shift_invariant(
            z1 in prop::collection::vec(-3.0f64..3.0, 5),
            z2 in prop::collection::vec(-3.0f64..3.0, 5),
            t in 0.01f64..0.99,
            c in -50.0f64..50.0,
            seed in 0u64..1000,
        ) {
            let inst = make_random_instance(5, 2 + (seed % 2) as usize, 2.0, &mut SeedTree::new(seed).rng()).unwrap();
            let comp = &inst.comparisons;
            let samples = LssOracle::simulated(&inst, SeedTree::new(seed)).draw_many(50).unwrap();
            let f = |z: &[f64]| negative_log_likelihood(&ParamVector(z.to_vec()), &samples, comp).unwrap();
            let mix: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
            prop_assert!(f(&mix) <= t * f(&z1) + (1.0 - t) * f(&z2) + 1e-12);
            let shifted: Vec<f64> = z1.iter().map(|v| v + c).collect();
            prop_assert!((f(&shifted) - f(&z1)).abs() <= 1e-12 * f(&z1).abs().max(1.0));
            let g = nll_gradient(&ParamVector(z1.clone()), &samples, comp).unwrap();
            prop_assert!(g.iter().sum::<f64>().abs() <= 1e-12);
        }

        #[test]
        fn stability_of_relative_error(
            z in prop::collection::vec(-2.0f64..2.0, 4),
            noise in prop::collection::vec(-1.0f64..1.0, 4),
            eps in 0.001f64..0.5,
        ) {
            let z_hat: Vec<f64> = z.iter().zip(&noise).map(|(a, b)| a + eps * b).collect();
            let d1 = softmax(&z);
            let d2 = softmax(&z_hat);
            // centered parameters within ε in sup-norm ⇒ relative error ≤ e^{2ε} - 1
            let c1 = ParamVector(z.clone()).centered();
            let c2 = ParamVector(z_hat).centered();
            let dist = c1.sup_distance(&c2);
            let (a, b) = relative_error(&d1, &d2).unwrap();
            prop_assert!(a <= (2.0 * dist).exp() - 1.0 + 1e-12);
            prop_assert!(b <= (2.0 * dist).exp() - 1.0 + 1e-12);
        }
    }

    fn softmax(z: &[f64]) -> TargetDistribution {
        TargetDistribution::from_params(z)
    }
}
