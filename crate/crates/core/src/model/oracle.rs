use std::sync::Arc;

use rand::Rng;

use super::{ComparisonDistribution, Instance};
use crate::error::{Error, Result};
use crate::rng::{SeedTree, StreamRng};

/// One draw `(S, x)`: the index of the drawn set in the comparison
/// distribution and the winning state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LssSample {
    pub set: usize,
    pub winner: usize,
}

impl LssSample {
    /// Builds a sample from explicit members, rejecting sets outside the
    /// support and winners outside the set.
    pub fn from_members(
        comp: &ComparisonDistribution,
        members: &[usize],
        winner: usize,
    ) -> Result<Self> {
        let set = comp.set_index(members).ok_or_else(|| {
            Error::MalformedSample(format!("set {members:?} is not in the support"))
        })?;
        if !members.contains(&winner) {
            return Err(Error::MalformedSample(format!(
                "winner {winner} is not a member of {members:?}"
            )));
        }
        Ok(Self { set, winner })
    }

    pub fn members<'a>(&self, comp: &'a ComparisonDistribution) -> &'a [usize] {
        &comp.sets()[self.set].members
    }
}

/// Precomputed sampling tables for `Samp(Q; D)`. Cheap to clone; hand out
/// independent oracles with [`LocalSamplingScheme::oracle`].
#[derive(Debug, Clone)]
pub struct LocalSamplingScheme {
    inner: Arc<SchemeTables>,
}

#[derive(Debug)]
struct SchemeTables {
    comparisons: Arc<ComparisonDistribution>,
    set_cdf: Vec<f64>,
    winner_cdf: Vec<Vec<f64>>,
}

impl LocalSamplingScheme {
    pub fn new(instance: &Instance) -> Self {
        let comp = &instance.comparisons;
        let target = &instance.target;
        let set_cdf = cumulative(comp.sets().iter().map(|s| s.prob));
        let winner_cdf = comp
            .sets()
            .iter()
            .map(|s| cumulative(s.members.iter().map(|&m| target.probs()[m])))
            .collect();
        Self {
            inner: Arc::new(SchemeTables {
                comparisons: Arc::new(comp.clone()),
                set_cdf,
                winner_cdf,
            }),
        }
    }

    pub fn comparisons(&self) -> &ComparisonDistribution {
        &self.inner.comparisons
    }

    /// A simulated oracle driven by the stream of `seed`.
    pub fn oracle(&self, seed: SeedTree) -> LssOracle {
        LssOracle {
            comparisons: Arc::clone(&self.inner.comparisons),
            source: Source::Simulated {
                tables: Arc::clone(&self.inner),
                rng: seed.rng(),
            },
            drawn: 0,
        }
    }
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    if let Some(last) = cdf.last_mut() {
        let total = *last;
        for c in cdf.iter_mut() {
            *c /= total;
        }
        *cdf.last_mut().unwrap() = 1.0;
    }
    cdf
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    Simulated,
    Replay,
}

#[derive(Debug)]
enum Source {
    Simulated {
        tables: Arc<SchemeTables>,
        rng: StreamRng,
    },
    Replay {
        samples: Vec<LssSample>,
        pos: usize,
    },
}

/// Source of comparison samples: simulated from `(Q, D)` or replayed from a
/// recorded stream. Not shareable across threads mid-run; give each worker
/// its own oracle.
#[derive(Debug)]
pub struct LssOracle {
    comparisons: Arc<ComparisonDistribution>,
    source: Source,
    drawn: u64,
}

impl LssOracle {
    pub fn simulated(instance: &Instance, seed: SeedTree) -> Self {
        LocalSamplingScheme::new(instance).oracle(seed)
    }

    /// Replays a recorded stream. Samples must reference sets of `comp`.
    pub fn replay(comp: ComparisonDistribution, samples: Vec<LssSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            let ok = comp
                .sets()
                .get(s.set)
                .is_some_and(|set| set.members.contains(&s.winner));
            if !ok {
                return Err(Error::MalformedSample(format!("replay sample {i} is inconsistent")));
            }
        }
        Ok(Self {
            comparisons: Arc::new(comp),
            source: Source::Replay { samples, pos: 0 },
            drawn: 0,
        })
    }

    pub fn comparisons(&self) -> &ComparisonDistribution {
        &self.comparisons
    }

    pub fn n(&self) -> usize {
        self.comparisons.n()
    }

    pub fn mode(&self) -> OracleMode {
        match self.source {
            Source::Simulated { .. } => OracleMode::Simulated,
            Source::Replay { .. } => OracleMode::Replay,
        }
    }

    pub fn samples_drawn(&self) -> u64 {
        self.drawn
    }

    /// Draws one comparison: `S ~ Q`, then the winner `x ~ D_S`.
    pub fn draw(&mut self) -> Result<LssSample> {
        let sample = match &mut self.source {
            Source::Simulated { tables, rng } => {
                if tables.set_cdf.is_empty() {
                    return Err(Error::InvalidParameter(
                        "instance has no comparison sets to draw from".into(),
                    ));
                }
                let u: f64 = rng.random();
                let set = tables.set_cdf.partition_point(|&c| c <= u).min(tables.set_cdf.len() - 1);
                let cdf = &tables.winner_cdf[set];
                let v: f64 = rng.random();
                let pos = cdf.partition_point(|&c| c <= v).min(cdf.len() - 1);
                LssSample {
                    set,
                    winner: tables.comparisons.sets()[set].members[pos],
                }
            }
            Source::Replay { samples, pos } => {
                let s = *samples
                    .get(*pos)
                    .ok_or(Error::ReplayExhausted { consumed: self.drawn })?;
                *pos += 1;
                s
            }
        };
        self.drawn += 1;
        Ok(sample)
    }

    /// Draws `count` samples.
    pub fn draw_many(&mut self, count: usize) -> Result<Vec<LssSample>> {
        (0..count).map(|_| self.draw()).collect()
    }
}
