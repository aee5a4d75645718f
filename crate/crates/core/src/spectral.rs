//! Comparison Laplacians, LSS transition matrices and their spectra.
//!
//! Everything here is dense: supports are small, and the exact stationary
//! distributions and eigenvalues computed here serve as ground truth for the
//! samplers and the learner.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{ComparisonDistribution, TargetDistribution};

/// Residual target for [`stationary_distribution`].
pub const STATIONARY_RESIDUAL: f64 = 1e-12;
/// Iteration cap for [`stationary_distribution`].
pub const STATIONARY_MAX_ITERS: usize = 1_000_000;
/// Tolerance of the reversibility check in [`absolute_spectral_gap`].
pub const REVERSIBILITY_TOLERANCE: f64 = 1e-9;

fn serialize_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

/// Weighted comparison Laplacian; serializes as row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Laplacian(#[serde(serialize_with = "serialize_rows")] pub DMatrix<f64>);

/// Dense row-stochastic matrix; serializes as row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct TransitionMatrix(#[serde(serialize_with = "serialize_rows")] pub DMatrix<f64>);

impl Laplacian {
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl TransitionMatrix {
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0[(x, y)]
    }

    /// Builds from rows, checking shape and row-stochasticity within 1e-12.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut m = DMatrix::zeros(n, n);
        for (x, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: row.len() });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidParameter(format!("row {x} is not stochastic")));
            }
            for (y, &v) in row.iter().enumerate() {
                m[(x, y)] = v;
            }
        }
        Ok(Self(m))
    }
}

/// Fiedler eigenvalue, absolute spectral gap and stationary distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub fiedler_eigenvalue: f64,
    pub absolute_spectral_gap: f64,
    pub stationary: Vec<f64>,
}

/// Off-diagonal `-sum_{S ∋ x,y} Q(S)`, diagonal `(k-1) sum_{S ∋ x} Q(S)`.
/// For `k = 2` this is the usual weighted graph Laplacian.
pub fn build_laplacian(comp: &ComparisonDistribution) -> Laplacian {
    let n = comp.n();
    let k = comp.k() as f64;
    let mut m = DMatrix::zeros(n, n);
    for s in comp.sets() {
        for &x in &s.members {
            m[(x, x)] += (k - 1.0) * s.prob;
            for &y in &s.members {
                if x != y {
                    m[(x, y)] -= s.prob;
                }
            }
        }
    }
    Laplacian(m)
}

/// The LSS chain: `P_xy = sum_{S ⊇ {x,y}} Q(S) D(y) / D(S)` off the diagonal,
/// with the diagonal completing each row to one.
pub fn build_transition_matrix(
    target: &TargetDistribution,
    comp: &ComparisonDistribution,
) -> Result<TransitionMatrix> {
    build_scaled(target, comp, None)
}

/// The chain driven by the downscaled grand coupling: each move `x -> w` of
/// [`build_transition_matrix`] is thinned by `min(p(x) / p(w), 1)`, where `p`
/// is the estimate's probability vector.
pub fn build_rescaled_matrix(
    target: &TargetDistribution,
    comp: &ComparisonDistribution,
    estimate: &TargetDistribution,
) -> Result<TransitionMatrix> {
    if estimate.n() != target.n() {
        return Err(Error::DimensionMismatch { expected: target.n(), found: estimate.n() });
    }
    build_scaled(target, comp, Some(estimate.probs()))
}

fn build_scaled(
    target: &TargetDistribution,
    comp: &ComparisonDistribution,
    p: Option<&[f64]>,
) -> Result<TransitionMatrix> {
    let n = comp.n();
    if target.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: target.n() });
    }
    if let Some(p) = p {
        if let Some((index, &value)) = p.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::NonPositive { index, value });
        }
    }
    let d = target.probs();
    let mut m = DMatrix::zeros(n, n);
    for s in comp.sets() {
        let mass = target.mass(&s.members);
        for &x in &s.members {
            for &y in &s.members {
                if x == y {
                    continue;
                }
                let scale = p.map_or(1.0, |p| (p[x] / p[y]).min(1.0));
                m[(x, y)] += s.prob * d[y] / mass * scale;
            }
        }
    }
    for x in 0..n {
        let off: f64 = (0..n).filter(|&y| y != x).map(|y| m[(x, y)]).sum();
        m[(x, x)] = 1.0 - off;
    }
    Ok(TransitionMatrix(m))
}

fn symmetric_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut values: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Second-smallest eigenvalue of the Laplacian; zero iff disconnected.
pub fn fiedler_eigenvalue(laplacian: &Laplacian) -> f64 {
    if laplacian.n() < 2 {
        return 0.0;
    }
    let values = symmetric_eigenvalues(laplacian.0.clone());
    values[1].max(0.0)
}

/// `1 - max(|λ_2|, |λ_n|)` of a chain reversible with respect to `pi`.
pub fn absolute_spectral_gap(m: &TransitionMatrix, pi: &[f64]) -> Result<f64> {
    let n = m.n();
    if pi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: pi.len() });
    }
    if let Some((index, &value)) = pi.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NonPositive { index, value });
    }
    let mut violation: f64 = 0.0;
    for x in 0..n {
        for y in x + 1..n {
            violation = violation.max((pi[x] * m.get(x, y) - pi[y] * m.get(y, x)).abs());
        }
    }
    if violation > REVERSIBILITY_TOLERANCE {
        return Err(Error::NotReversible { violation });
    }
    if n == 1 {
        return Ok(1.0);
    }
    let sqrt_pi: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let sym = DMatrix::from_fn(n, n, |x, y| sqrt_pi[x] * m.get(x, y) / sqrt_pi[y]);
    let mut values = symmetric_eigenvalues(sym);
    // the top eigenvalue is the unit eigenvalue of the stochastic matrix
    values.pop();
    let second = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok((1.0 - second).clamp(0.0, 1.0))
}

/// Strongly connected on positive entries and aperiodic via a self-loop.
pub fn check_ergodic(m: &TransitionMatrix) -> Result<()> {
    let n = m.n();
    if !(0..n).any(|x| m.get(x, x) > 0.0) {
        return Err(Error::NotErgodic("no positive diagonal entry".into()));
    }
    for forward in [true, false] {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for y in 0..n {
                let w = if forward { m.get(x, y) } else { m.get(y, x) };
                if w > 0.0 && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        if let Some(lost) = seen.iter().position(|s| !s) {
            return Err(Error::NotErgodic(format!("state {lost} is not mutually reachable from state 0")));
        }
    }
    Ok(())
}

/// Left eigenvector for eigenvalue one by power iteration, stopping when the
/// sup-norm residual `|πM - π|` drops to [`STATIONARY_RESIDUAL`].
pub fn stationary_distribution(m: &TransitionMatrix) -> Result<Vec<f64>> {
    let n = m.n();
    if n == 0 {
        return Err(Error::InvalidParameter("empty matrix".into()));
    }
    check_ergodic(m)?;
    let mt = m.0.transpose();
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    let mut residual = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_ITERS {
        let mut next = &mt * &pi;
        let total = next.sum();
        next /= total;
        residual = (&next - &pi).amax();
        pi = next;
        if residual <= STATIONARY_RESIDUAL {
            return Ok(pi.iter().copied().collect());
        }
    }
    Err(Error::NoConvergence { iterations: STATIONARY_MAX_ITERS, residual })
}

/// All three spectral quantities for one chain.
pub fn spectral_report(laplacian: &Laplacian, chain: &TransitionMatrix) -> Result<SpectralReport> {
    let stationary = stationary_distribution(chain)?;
    let gap = absolute_spectral_gap(chain, &stationary)?;
    Ok(SpectralReport {
        fiedler_eigenvalue: fiedler_eigenvalue(laplacian),
        absolute_spectral_gap: gap,
        stationary,
    })
}
