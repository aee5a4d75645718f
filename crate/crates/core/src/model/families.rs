//! Instance generators: the bimodal path, uniform paths and cliques, and
//! random instances that satisfy connectivity and the ratio bound.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{check_phi, validate_instance, ComparisonDistribution, Instance, TargetDistribution};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

const MAX_GENERATION_ATTEMPTS: usize = 100_000;

/// How a generator chooses the target distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetShape {
    Uniform,
    /// Random weights satisfying the ratio bound `phi` on every supported set.
    Random { phi: f64 },
}

/// Odd-length path whose weights halve from each end toward the middle:
/// `(1/2, 1/4, ..., 2^{-(n+1)/2}, ..., 1/4, 1/2)`, normalized, with `Q`
/// uniform over the `n - 1` path edges. Adjacent ratios are exactly 2.
pub fn make_bimodal_path_instance(n: usize) -> Result<Instance> {
    if n < 3 || n % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "bimodal path needs an odd n >= 3, got {n}"
        )));
    }
    let weights = (0..n)
        .map(|i| 0.5f64.powi((i + 1).min(n - i) as i32))
        .collect();
    let target = TargetDistribution::from_weights(weights)?;
    Instance::new(target, path_comparisons(n)?, Some(2.0))
}

fn path_comparisons(n: usize) -> Result<ComparisonDistribution> {
    let sets = (0..n.saturating_sub(1)).map(|i| (vec![i, i + 1], 1.0)).collect();
    ComparisonDistribution::from_weights(n, sets)
}

/// Path graph with `Q` uniform on its edges.
pub fn make_path_instance(n: usize, shape: TargetShape, rng: &mut StreamRng) -> Result<Instance> {
    if n < 2 {
        return Err(Error::InvalidParameter("path needs n >= 2".into()));
    }
    let comp = path_comparisons(n)?;
    let (target, phi) = match shape {
        TargetShape::Uniform => (TargetDistribution::uniform(n), None),
        TargetShape::Random { phi } => {
            check_phi(phi)?;
            // walk along the path with steps bounded by log(phi)
            let step = phi.ln();
            let mut z = vec![0.0; n];
            for i in 1..n {
                z[i] = z[i - 1] + rng.random_range(-step..=step);
            }
            (TargetDistribution::from_params(&z), Some(phi))
        }
    };
    Instance::new(target, comp, phi)
}

/// Every `k`-subset of `[n]` with equal probability.
pub fn make_clique_instance(
    n: usize,
    k: usize,
    shape: TargetShape,
    rng: &mut StreamRng,
) -> Result<Instance> {
    if k < 2 || k > n {
        return Err(Error::InvalidParameter(format!("clique needs 2 <= k <= n, got k = {k}, n = {n}")));
    }
    let subsets = k_subsets(n, k);
    if subsets.len() > 200_000 {
        return Err(Error::InvalidParameter(format!(
            "clique with n = {n}, k = {k} has too many sets"
        )));
    }
    let comp = ComparisonDistribution::from_weights(n, subsets.into_iter().map(|s| (s, 1.0)).collect())?;
    let (target, phi) = match shape {
        TargetShape::Uniform => (TargetDistribution::uniform(n), None),
        TargetShape::Random { phi } => {
            check_phi(phi)?;
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=phi.ln())).collect();
            (TargetDistribution::from_params(&z), Some(phi))
        }
    };
    Instance::new(target, comp, phi)
}

/// Random sparse instance with sets of size `k`, resampled until the
/// comparison graph is connected and every set respects the ratio bound.
pub fn make_random_instance(n: usize, k: usize, phi: f64, rng: &mut StreamRng) -> Result<Instance> {
    check_phi(phi)?;
    if n < 2 || k < 2 || k > n {
        return Err(Error::InvalidParameter(format!(
            "random instance needs 2 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let sets = random_sets(n, k, rng);
        let comp = ComparisonDistribution::from_weights(
            n,
            sets.into_iter().map(|s| (s, rng.random_range(0.5..1.5))).collect(),
        )?;
        let spread = 1.5 * phi.ln();
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=spread)).collect();
        let target = TargetDistribution::from_params(&z);
        if validate_instance(&target, &comp, phi)?.valid {
            return Instance::new(target, comp, Some(phi));
        }
    }
    Err(Error::InvalidParameter(format!(
        "no valid random instance found for n = {n}, k = {k}, phi = {phi}"
    )))
}

/// A random spanning structure plus a few extra sets.
fn random_sets(n: usize, k: usize, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut sets: Vec<Vec<usize>> = Vec::new();
    // chain new vertices onto the already-covered prefix
    let mut covered = 1;
    while covered < n {
        let fresh = (k - 1).min(n - covered);
        let mut set: Vec<usize> = order[covered..covered + fresh].to_vec();
        let mut pool: Vec<usize> = order[..covered].to_vec();
        pool.shuffle(rng);
        set.extend(pool.into_iter().take(k - fresh));
        set.sort_unstable();
        sets.push(set);
        covered += fresh;
    }
    let extra = rng.random_range(0..=n);
    for _ in 0..extra {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(rng);
        let mut set = all[..k].to_vec();
        set.sort_unstable();
        if !sets.contains(&set) {
            sets.push(set);
        }
    }
    sets
}

fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bimodal_weights_match_pattern() {
        let inst = make_bimodal_path_instance(7).unwrap();
        let raw = [0.5, 0.25, 0.125, 0.0625, 0.125, 0.25, 0.5];
        let total: f64 = raw.iter().sum();
        for (p, w) in inst.target.probs().iter().zip(raw) {
            assert_abs_diff_eq!(*p, w / total, epsilon = 1e-15);
        }
        assert_eq!(inst.comparisons.sets().len(), 6);
        for s in inst.comparisons.sets() {
            assert_abs_diff_eq!(s.prob, 1.0 / 6.0, epsilon = 1e-15);
            let (a, b) = (inst.target.probs()[s.members[0]], inst.target.probs()[s.members[1]]);
            assert_abs_diff_eq!(a.max(b) / a.min(b), 2.0, epsilon = 1e-12);
        }

        let small = make_bimodal_path_instance(3).unwrap();
        assert_abs_diff_eq!(small.target.probs()[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(small.target.probs()[1], 0.2, epsilon = 1e-15);

        assert!(make_bimodal_path_instance(6).is_err());
        assert!(make_bimodal_path_instance(1).is_err());
    }

    #[test]
    fn clique_uniform() {
        let mut rng = SeedTree::new(0).rng();
        let inst = make_clique_instance(3, 2, TargetShape::Uniform, &mut rng).unwrap();
        assert_eq!(inst.comparisons.sets().len(), 3);
        for s in inst.comparisons.sets() {
            assert_abs_diff_eq!(s.prob, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_eq!(k_subsets(5, 3).len(), 10);
    }

    #[test]
    fn random_instances_are_valid_and_deterministic() {
        for k in [2, 3] {
            for seed in 0..20 {
                let a = make_random_instance(6, k, 2.0, &mut SeedTree::new(seed).rng()).unwrap();
                let b = make_random_instance(6, k, 2.0, &mut SeedTree::new(seed).rng()).unwrap();
                assert_eq!(a, b);
                assert_eq!(a.comparisons.k(), k);
                assert!(validate_instance(&a.target, &a.comparisons, 2.0).unwrap().valid);
            }
        }
        let mut rng = SeedTree::new(1).rng();
        let path = make_path_instance(6, TargetShape::Random { phi: 2.0 }, &mut rng).unwrap();
        assert!(validate_instance(&path.target, &path.comparisons, 2.0).unwrap().valid);
    }
}
