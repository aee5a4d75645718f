//! Problem instances: the hidden target distribution, the comparison-set
//! distribution, and the local sampling oracle every engine consumes.

mod families;
mod oracle;

pub use families::{
    make_bimodal_path_instance, make_clique_instance, make_path_instance, make_random_instance,
    TargetShape,
};
pub use oracle::{LocalSamplingScheme, LssOracle, LssSample, OracleMode};

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Absolute tolerance used when checking that probabilities sum to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Relative slack when comparing a within-set ratio against `phi`.
const RATIO_SLACK: f64 = 1e-9;

/// A strictly positive distribution over `[n]`, stored in linear and log space.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    probs: Vec<f64>,
    log_params: Vec<f64>,
}

impl TargetDistribution {
    /// Accepts probabilities that already sum to one within
    /// [`NORMALIZATION_TOLERANCE`] and renormalizes them exactly.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        check_positive(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
        Ok(Self::normalized(probs, sum))
    }

    /// Normalizes arbitrary positive weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        check_positive(&weights)?;
        let sum: f64 = weights.iter().sum();
        Ok(Self::normalized(weights, sum))
    }

    /// Uniform distribution over `[n]`.
    pub fn uniform(n: usize) -> Self {
        Self::from_params(&vec![0.0; n])
    }

    /// Softmax of a parameter vector, computed with max-subtraction.
    pub fn from_params(z: &[f64]) -> Self {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = shifted.iter().sum();
        let log_total = max + total.ln();
        Self {
            probs: shifted.iter().map(|&w| w / total).collect(),
            log_params: z.iter().map(|&v| v - log_total).collect(),
        }
    }

    fn normalized(mut probs: Vec<f64>, sum: f64) -> Self {
        for p in probs.iter_mut() {
            *p /= sum;
        }
        let log_params = probs.iter().map(|p| p.ln()).collect();
        Self { probs, log_params }
    }

    pub fn n(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Natural parameters `z_x = log D(x)`.
    pub fn log_params(&self) -> &[f64] {
        &self.log_params
    }

    /// Total mass of a subset.
    pub fn mass(&self, members: &[usize]) -> f64 {
        members.iter().map(|&x| self.probs[x]).sum()
    }

    /// The same distribution with states renamed: state `x` becomes `perm[x]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut probs = vec![0.0; self.n()];
        for (x, &p) in self.probs.iter().enumerate() {
            probs[perm[x]] = p;
        }
        let log_params = probs.iter().map(|p: &f64| p.ln()).collect();
        Self { probs, log_params }
    }
}

/// Softmax of a parameter vector; `z` and `z + c` give identical output.
pub fn softmax_from_params(z: &[f64]) -> TargetDistribution {
    TargetDistribution::from_params(z)
}

fn check_positive(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("distribution needs at least one state".into()));
    }
    for (index, &value) in values.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositive { index, value });
        }
    }
    Ok(())
}

/// One supported comparison set with its probability under `Q`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedSet {
    /// Sorted, distinct state indices.
    pub members: Vec<usize>,
    pub prob: f64,
}

/// A distribution over comparison sets of a uniform size `k`.
#[derive(Debug, Clone)]
pub struct ComparisonDistribution {
    n: usize,
    k: usize,
    sets: Vec<WeightedSet>,
    index: HashMap<Vec<usize>, usize>,
}

impl PartialEq for ComparisonDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.k == other.k && self.sets == other.sets
    }
}

impl ComparisonDistribution {
    /// Builds `Q` from `(members, prob)` pairs whose probabilities sum to one
    /// within tolerance. Only `n = 1` may have no sets at all.
    pub fn new(n: usize, sets: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let sum: f64 = sets.iter().map(|(_, p)| p).sum();
        if !sets.is_empty() && (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
        Self::build(n, sets)
    }

    /// Like [`ComparisonDistribution::new`] but normalizes positive weights.
    pub fn from_weights(n: usize, sets: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        Self::build(n, sets)
    }

    fn build(n: usize, raw: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        if raw.is_empty() {
            if n == 1 {
                return Ok(Self {
                    n,
                    k: 2,
                    sets: Vec::new(),
                    index: HashMap::new(),
                });
            }
            return Err(Error::InvalidSet("no comparison sets for n > 1".into()));
        }
        let k = raw[0].0.len();
        if k < 2 {
            return Err(Error::InvalidSet(format!("sets need at least two members, got {k}")));
        }
        let total: f64 = raw.iter().map(|(_, p)| p).sum();
        let mut sets = Vec::with_capacity(raw.len());
        let mut index = HashMap::with_capacity(raw.len());
        for (i, (mut members, prob)) in raw.into_iter().enumerate() {
            if members.len() != k {
                return Err(Error::InvalidSet(format!(
                    "set {i} has {} members but k = {k}",
                    members.len()
                )));
            }
            if !(prob > 0.0 && prob.is_finite()) {
                return Err(Error::NonPositive { index: i, value: prob });
            }
            members.sort_unstable();
            if members.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidSet(format!("set {i} repeats a member")));
            }
            if let Some(&m) = members.last().filter(|&&m| m >= n) {
                return Err(Error::InvalidSet(format!("member {m} out of range for n = {n}")));
            }
            if index.insert(members.clone(), i).is_some() {
                return Err(Error::InvalidSet(format!("set {members:?} listed twice")));
            }
            sets.push(WeightedSet {
                members,
                prob: prob / total,
            });
        }
        Ok(Self { n, k, sets, index })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Uniform set size (2 for pairwise comparisons).
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sets(&self) -> &[WeightedSet] {
        &self.sets
    }

    /// Position of a member set in [`ComparisonDistribution::sets`], if supported.
    pub fn set_index(&self, members: &[usize]) -> Option<usize> {
        if members.windows(2).all(|w| w[0] < w[1]) {
            self.index.get(members).copied()
        } else {
            let mut sorted = members.to_vec();
            sorted.sort_unstable();
            self.index.get(&sorted).copied()
        }
    }

    /// Distinct unordered pairs `(x, y)`, `x < y`, that share a supported set.
    pub fn cooccurring_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self
            .sets
            .iter()
            .flat_map(|s| {
                let m = &s.members;
                (0..m.len()).flat_map(move |a| (a + 1..m.len()).map(move |b| (m[a], m[b])))
            })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// Whether the induced (hyper)graph on `[n]` is connected.
    pub fn is_connected(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut components = self.n;
        for s in &self.sets {
            let root = find(&mut parent, s.members[0]);
            for &m in &s.members[1..] {
                let r = find(&mut parent, m);
                if r != root {
                    parent[r] = root;
                    components -= 1;
                }
            }
        }
        components == 1
    }

    /// The same distribution with states renamed by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let sets = self
            .sets
            .iter()
            .map(|s| (s.members.iter().map(|&m| perm[m]).collect(), s.prob))
            .collect();
        Self::build(self.n, sets).expect("permutation preserves validity")
    }
}

/// A target distribution paired with its comparison distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub target: TargetDistribution,
    pub comparisons: ComparisonDistribution,
    /// Ratio bound the instance is declared to satisfy, when known.
    pub phi: Option<f64>,
}

impl Instance {
    pub fn new(
        target: TargetDistribution,
        comparisons: ComparisonDistribution,
        phi: Option<f64>,
    ) -> Result<Self> {
        if target.n() != comparisons.n() {
            return Err(Error::DimensionMismatch {
                expected: comparisons.n(),
                found: target.n(),
            });
        }
        if let Some(phi) = phi {
            check_phi(phi)?;
        }
        Ok(Self {
            target,
            comparisons,
            phi,
        })
    }

    pub fn n(&self) -> usize {
        self.target.n()
    }

    /// Renames every state `x` to `perm[x]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            target: self.target.permuted(perm),
            comparisons: self.comparisons.permuted(perm),
            phi: self.phi,
        }
    }
}

pub(crate) fn check_phi(phi: f64) -> Result<()> {
    if phi > 1.0 && phi.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("phi must exceed 1, got {phi}")))
    }
}

/// Ratio check for one supported set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetRatioCheck {
    pub members: Vec<usize>,
    /// `max D(x) / D(y)` over members of the set.
    pub max_ratio: f64,
    pub within_phi: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub k: usize,
    pub phi: f64,
    /// Induced graph connected.
    pub connected: bool,
    pub set_checks: Vec<SetRatioCheck>,
    /// Connectivity and every within-set ratio in `[1/phi, phi]`.
    pub valid: bool,
}

/// Checks connectivity of the comparison graph and the within-set ratio bound.
pub fn validate_instance(
    target: &TargetDistribution,
    comp: &ComparisonDistribution,
    phi: f64,
) -> Result<ValidationReport> {
    if target.n() != comp.n() {
        return Err(Error::DimensionMismatch {
            expected: comp.n(),
            found: target.n(),
        });
    }
    check_phi(phi)?;
    let sum: f64 = target.probs().iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::NotNormalized { sum });
    }
    let set_checks: Vec<SetRatioCheck> = comp
        .sets()
        .iter()
        .map(|s| {
            let probs = s.members.iter().map(|&m| target.probs()[m]);
            let hi = probs.clone().fold(f64::MIN, f64::max);
            let lo = probs.fold(f64::MAX, f64::min);
            let max_ratio = hi / lo;
            SetRatioCheck {
                members: s.members.clone(),
                max_ratio,
                within_phi: max_ratio <= phi * (1.0 + RATIO_SLACK),
            }
        })
        .collect();
    let connected = comp.is_connected();
    let valid = connected && set_checks.iter().all(|c| c.within_phi);
    Ok(ValidationReport {
        n: comp.n(),
        k: comp.k(),
        phi,
        connected,
        set_checks,
        valid,
    })
}
