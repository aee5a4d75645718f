//! Coupling from the past over the chain induced by a local sampling scheme.
//!
//! The grand coupling is stored as the time-0 image of every start state.
//! Each oracle draw `(S, w)` defines a one-step map in which every member of
//! `S` other than the winner `w` jumps to `w` (optionally thinned by
//! `min(p(x) / p(w), 1)`), and all other states stay put. Prepending that map
//! to the current composition is an `O(k)` update: `images[x] = images[w]`
//! for every loser that moves. Once all images agree, extending further into
//! the past can no longer change them, and the common value is an exact draw
//! from the chain's stationary law.
//!
//! # Trace format
//!
//! With a trace writer attached, each step emits one line
//!
//! ```text
//! <t>,<m1;m2;...;mk>,<winner>,<aux>,<coalesced>
//! ```
//!
//! where `t` is the (negative) time of the step, the members and winner are
//! 0-based state indices, `aux` is the uniform that drove the thinning coins
//! (`-` for the unthinned engine, `;`-separated per loser in per-state coin
//! mode) and `coalesced` is `0` or `1`. Each run ends with
//! `#end,<state>,<accept-coin>,<accepted>` (`-` where not applicable).

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{LocalSamplingScheme, LssOracle, LssSample, TargetDistribution};
use crate::rng::{SeedTree, StreamRng};

/// Default cap on oracle samples per end-to-end call.
pub const DEFAULT_SAMPLE_CAP: u64 = 100_000_000;

/// Composition `F_t = f_{-1} ∘ ... ∘ f_t` stored as time-0 images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrandCouplingMap {
    images: Vec<usize>,
    counts: Vec<usize>,
    distinct: usize,
    t: i64,
    samples_consumed: u64,
}

impl GrandCouplingMap {
    pub fn identity(n: usize) -> Self {
        Self {
            images: (0..n).collect(),
            counts: vec![1; n],
            distinct: n,
            t: 0,
            samples_consumed: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.images.len()
    }

    /// `images[x]` is where a walk started at `x` at time `t` sits at time 0.
    pub fn images(&self) -> &[usize] {
        &self.images
    }

    pub fn t(&self) -> i64 {
        self.t
    }

    pub fn samples_consumed(&self) -> u64 {
        self.samples_consumed
    }

    pub fn is_coalesced(&self) -> bool {
        self.distinct <= 1
    }

    /// The common image once coalesced.
    pub fn value(&self) -> Option<usize> {
        self.is_coalesced().then(|| self.images.first().copied()).flatten()
    }

    /// Prepends the one-step map built from a comparison and one shared
    /// uniform. Without `p` every loser moves to the winner; with `p` a loser
    /// `x` moves iff `aux_uniform < min(p(x) / p(winner), 1)`.
    pub fn extend_one_step(
        &mut self,
        members: &[usize],
        winner: usize,
        aux_uniform: f64,
        p: Option<&[f64]>,
    ) -> Result<()> {
        self.check_step(members, winner)?;
        if !(0.0..1.0).contains(&aux_uniform) {
            return Err(Error::MalformedSample(format!("aux uniform {aux_uniform} not in [0, 1)")));
        }
        if let Some(p) = p {
            check_thinning(p, self.n())?;
        }
        self.extend_with(members, winner, p, |_| aux_uniform);
        Ok(())
    }

    fn check_step(&self, members: &[usize], winner: usize) -> Result<()> {
        let n = self.n();
        if members.iter().any(|&m| m >= n) {
            return Err(Error::MalformedSample(format!("member out of range in {members:?}")));
        }
        if !members.contains(&winner) {
            return Err(Error::MalformedSample(format!(
                "winner {winner} not in {members:?}"
            )));
        }
        let mut sorted = members.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::MalformedSample(format!("repeated member in {members:?}")));
        }
        Ok(())
    }

    /// `coin(x)` supplies the uniform compared against loser `x`'s threshold.
    fn extend_with(
        &mut self,
        members: &[usize],
        winner: usize,
        p: Option<&[f64]>,
        mut coin: impl FnMut(usize) -> f64,
    ) {
        let target = self.images[winner];
        for &x in members {
            if x == winner {
                continue;
            }
            let moves = match p {
                None => true,
                Some(p) => coin(x) < (p[x] / p[winner]).min(1.0),
            };
            if moves {
                self.relabel(x, target);
            }
        }
        self.t -= 1;
        self.samples_consumed += 1;
    }

    fn relabel(&mut self, x: usize, to: usize) {
        let from = self.images[x];
        if from == to {
            return;
        }
        self.counts[from] -= 1;
        if self.counts[from] == 0 {
            self.distinct -= 1;
        }
        if self.counts[to] == 0 {
            self.distinct += 1;
        }
        self.counts[to] += 1;
        self.images[x] = to;
    }
}

pub fn check_thinning(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: p.len() });
    }
    for (index, &value) in p.iter().enumerate() {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "thinning vector entry {index} = {value} is not in (0, 1]"
            )));
        }
    }
    Ok(())
}

/// Oracle-sample allowance for one end-to-end call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SampleBudget {
    pub cap: Option<u64>,
    pub consumed: u64,
}

impl Default for SampleBudget {
    fn default() -> Self {
        Self::capped(DEFAULT_SAMPLE_CAP)
    }
}

impl SampleBudget {
    pub fn capped(cap: u64) -> Self {
        Self { cap: Some(cap), consumed: 0 }
    }

    pub fn unlimited() -> Self {
        Self { cap: None, consumed: 0 }
    }

    fn try_charge(&mut self) -> bool {
        if self.cap.is_some_and(|cap| self.consumed >= cap) {
            return false;
        }
        self.consumed += 1;
        true
    }

    /// Soft threshold `1000 · n · ln(n + 1)` past which callers may warn that
    /// a run is unusually long.
    pub fn advisory_threshold(n: usize) -> u64 {
        (1000.0 * n as f64 * ((n + 1) as f64).ln()).ceil() as u64
    }
}

/// How the thinning coins of one step are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoinMode {
    /// One uniform per step, compared against every loser's threshold.
    #[default]
    Shared,
    /// An independent uniform per losing state.
    PerState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "state")]
pub enum CftpResult {
    Sample(usize),
    Rejected,
    BudgetExceeded,
}

/// Result of one engine call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CftpOutcome {
    pub result: CftpResult,
    /// Oracle samples consumed by this call.
    pub steps: u64,
    /// Parameterized runs performed (1 for single-shot engines).
    pub loops: u64,
}

impl CftpOutcome {
    pub fn accepted(&self) -> bool {
        matches!(self.result, CftpResult::Sample(_))
    }

    pub fn state(&self) -> Option<usize> {
        match self.result {
            CftpResult::Sample(x) => Some(x),
            _ => None,
        }
    }
}

/// Outcome of running the grand coupling to coalescence (no acceptance step).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Coalescence {
    pub state: Option<usize>,
    pub steps: u64,
}

/// Drives the coupling engines from an oracle and a coin stream.
pub struct CftpEngine<'a> {
    oracle: &'a mut LssOracle,
    coins: &'a mut StreamRng,
    coin_mode: CoinMode,
    trace: Option<&'a mut dyn Write>,
}

impl<'a> CftpEngine<'a> {
    pub fn new(oracle: &'a mut LssOracle, coins: &'a mut StreamRng) -> Self {
        Self {
            oracle,
            coins,
            coin_mode: CoinMode::Shared,
            trace: None,
        }
    }

    pub fn coin_mode(mut self, mode: CoinMode) -> Self {
        self.coin_mode = mode;
        self
    }

    pub fn trace(mut self, sink: &'a mut dyn Write) -> Self {
        self.trace = Some(sink);
        self
    }

    /// Runs the (optionally thinned) grand coupling until coalescence or
    /// until the budget runs out.
    pub fn coalesce(&mut self, p: Option<&[f64]>, budget: &mut SampleBudget) -> Result<Coalescence> {
        let n = self.oracle.n();
        if let Some(p) = p {
            check_thinning(p, n)?;
        }
        let mut map = GrandCouplingMap::identity(n);
        let mut aux_buf: Vec<f64> = Vec::new();
        while !map.is_coalesced() {
            if !budget.try_charge() {
                return Ok(Coalescence { state: None, steps: map.samples_consumed() });
            }
            let sample = self.oracle.draw()?;
            let comp = self.oracle.comparisons();
            let members = sample.members(comp);
            aux_buf.clear();
            match (p, self.coin_mode) {
                (None, _) => map.extend_with(members, sample.winner, None, |_| 0.0),
                (Some(_), CoinMode::Shared) => {
                    let u: f64 = self.coins.random();
                    aux_buf.push(u);
                    map.extend_with(members, sample.winner, p, |_| u);
                }
                (Some(_), CoinMode::PerState) => {
                    let coins = &mut *self.coins;
                    map.extend_with(members, sample.winner, p, |_| {
                        let u: f64 = coins.random();
                        aux_buf.push(u);
                        u
                    });
                }
            }
            if let Some(w) = self.trace.as_mut() {
                write_step(&mut **w, &map, members, &sample, p.is_some(), &aux_buf)?;
            }
        }
        Ok(Coalescence { state: map.value(), steps: map.samples_consumed() })
    }

    /// Unthinned coupling: the output is an exact draw from `D`.
    pub fn naive(&mut self, budget: &mut SampleBudget) -> Result<CftpOutcome> {
        let c = self.coalesce(None, budget)?;
        let result = c.state.map_or(CftpResult::BudgetExceeded, CftpResult::Sample);
        self.trace_end(c.state, None, result)?;
        Ok(CftpOutcome { result, steps: c.steps, loops: 1 })
    }

    /// Thinned coupling followed by a `Be(p(y))` acceptance coin at the
    /// coalesced state `y`. Accepted outputs are exact draws from `D`.
    pub fn parameterized(&mut self, p: &[f64], budget: &mut SampleBudget) -> Result<CftpOutcome> {
        let c = self.coalesce(Some(p), budget)?;
        let (result, coin) = match c.state {
            None => (CftpResult::BudgetExceeded, None),
            Some(y) => {
                let u: f64 = self.coins.random();
                if u < p[y] {
                    (CftpResult::Sample(y), Some(u))
                } else {
                    (CftpResult::Rejected, Some(u))
                }
            }
        };
        self.trace_end(c.state, coin, result)?;
        Ok(CftpOutcome { result, steps: c.steps, loops: 1 })
    }

    /// Repeats [`CftpEngine::parameterized`] with `p = estimate` until a run
    /// is accepted. Never returns [`CftpResult::Rejected`].
    pub fn with_estimate(
        &mut self,
        estimate: &TargetDistribution,
        budget: &mut SampleBudget,
    ) -> Result<CftpOutcome> {
        let mut steps = 0;
        let mut loops = 0;
        loop {
            let out = self.parameterized(estimate.probs(), budget)?;
            steps += out.steps;
            loops += 1;
            match out.result {
                CftpResult::Rejected => continue,
                result => return Ok(CftpOutcome { result, steps, loops }),
            }
        }
    }

    fn trace_end(&mut self, state: Option<usize>, coin: Option<f64>, result: CftpResult) -> Result<()> {
        if let Some(w) = self.trace.as_mut() {
            let state = state.map_or("-".to_string(), |s| s.to_string());
            let coin = coin.map_or("-".to_string(), |u| u.to_string());
            let accepted = u8::from(matches!(result, CftpResult::Sample(_)));
            writeln!(w, "#end,{state},{coin},{accepted}")?;
        }
        Ok(())
    }
}

fn write_step(
    w: &mut dyn Write,
    map: &GrandCouplingMap,
    members: &[usize],
    sample: &LssSample,
    thinned: bool,
    aux: &[f64],
) -> Result<()> {
    let set = members.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(";");
    let aux = if !thinned {
        "-".to_string()
    } else if aux.is_empty() {
        // per-state mode with no losers drawn (cannot happen for k >= 2)
        "-".to_string()
    } else {
        aux.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(";")
    };
    writeln!(
        w,
        "{},{set},{},{aux},{}",
        map.t(),
        sample.winner,
        u8::from(map.is_coalesced())
    )?;
    Ok(())
}

/// Direct coupling from the past on the LSS chain.
pub fn run_naive_cftp(oracle: &mut LssOracle, budget: &mut SampleBudget) -> Result<CftpOutcome> {
    // the unthinned engine never touches its coin stream
    let mut coins = SeedTree::new(0).rng();
    CftpEngine::new(oracle, &mut coins).naive(budget)
}

/// One thinned coupling run plus the acceptance coin.
pub fn run_parameterized_cftp(
    oracle: &mut LssOracle,
    coins: &mut StreamRng,
    p: &[f64],
    budget: &mut SampleBudget,
) -> Result<CftpOutcome> {
    CftpEngine::new(oracle, coins).parameterized(p, budget)
}

/// Loops the thinned engine with `p = estimate` until acceptance.
pub fn run_exact_sampler_with_learning(
    oracle: &mut LssOracle,
    coins: &mut StreamRng,
    estimate: &TargetDistribution,
    budget: &mut SampleBudget,
) -> Result<CftpOutcome> {
    if estimate.n() != oracle.n() {
        return Err(Error::DimensionMismatch { expected: oracle.n(), found: estimate.n() });
    }
    CftpEngine::new(oracle, coins).with_estimate(estimate, budget)
}

/// Which coupling a benchmark runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineKind {
    Naive,
    Parameterized(Vec<f64>),
}

/// Per-trial coalescence record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrialCoalescence {
    pub steps: u64,
    /// False when the per-trial cap was hit first.
    pub coalesced: bool,
}

/// Oracle samples needed to coalesce, for `trials` independent runs seeded
/// from `seed.derive("oracle", i)` and `seed.derive("coins", i)`. Acceptance
/// coins are not drawn. Trials run in parallel; the output order is the
/// trial order.
pub fn coalescence_time_samples(
    scheme: &LocalSamplingScheme,
    engine: &EngineKind,
    trials: usize,
    seed: SeedTree,
    cap: Option<u64>,
) -> Result<Vec<TrialCoalescence>> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let p = match engine {
        EngineKind::Naive => None,
        EngineKind::Parameterized(p) => {
            check_thinning(p, scheme.comparisons().n())?;
            Some(p.as_slice())
        }
    };
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut oracle = scheme.oracle(seed.derive("oracle", i as u64));
            let mut coins = seed.derive("coins", i as u64).rng();
            let mut budget = SampleBudget { cap, consumed: 0 };
            let c = CftpEngine::new(&mut oracle, &mut coins).coalesce(p, &mut budget)?;
            Ok(TrialCoalescence { steps: c.steps, coalesced: c.state.is_some() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_bimodal_path_instance, ComparisonDistribution, Instance};
    use crate::spectral::{build_rescaled_matrix, build_transition_matrix};

    fn instance(d: Vec<f64>, sets: Vec<(Vec<usize>, f64)>) -> Instance {
        let n = d.len();
        Instance::new(
            TargetDistribution::from_probs(d).unwrap(),
            ComparisonDistribution::new(n, sets).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn one_step_examples() {
        let mut map = GrandCouplingMap::identity(3);
        map.extend_one_step(&[0, 1], 0, 0.0, None).unwrap();
        assert_eq!(map.images(), &[0, 0, 2]);
        assert_eq!((map.t(), map.samples_consumed()), (-1, 1));

        let p = [0.5, 0.2, 0.9];
        let mut map = GrandCouplingMap::identity(3);
        map.extend_one_step(&[0, 1], 0, 0.3, Some(&p)).unwrap();
        assert_eq!(map.images(), &[0, 0, 2]);

        let mut map = GrandCouplingMap::identity(3);
        map.extend_one_step(&[0, 1], 0, 0.7, Some(&p)).unwrap();
        assert_eq!(map.images(), &[0, 1, 2]);

        // tie: threshold is exactly 1
        let mut map = GrandCouplingMap::identity(2);
        map.extend_one_step(&[0, 1], 1, 0.999_999, Some(&[0.5, 0.5])).unwrap();
        assert!(map.is_coalesced());
        assert_eq!(map.value(), Some(1));
    }

    #[test]
    fn one_step_rejects_malformed() {
        let mut map = GrandCouplingMap::identity(3);
        assert!(map.extend_one_step(&[0, 1], 2, 0.1, None).is_err());
        assert!(map.extend_one_step(&[0, 3], 0, 0.1, None).is_err());
        assert!(map.extend_one_step(&[0, 0], 0, 0.1, None).is_err());
        assert!(map.extend_one_step(&[0, 1], 0, 1.0, None).is_err());
        assert!(map.extend_one_step(&[0, 1], 0, 0.1, Some(&[0.5, 0.0, 1.0])).is_err());
        assert!(map.extend_one_step(&[0, 1], 0, 0.1, Some(&[0.5, 1.5, 1.0])).is_err());
        assert_eq!(map, GrandCouplingMap::identity(3));
    }

    #[test]
    fn composition_prepends_new_step() {
        // step at t=-1 maps 1 -> 2; step at t=-2 maps 0 -> 1.
        // A walk from 0 at t=-2 goes 0 -> 1 -> 2.
        let mut map = GrandCouplingMap::identity(3);
        map.extend_one_step(&[1, 2], 2, 0.0, None).unwrap();
        map.extend_one_step(&[0, 1], 1, 0.0, None).unwrap();
        assert_eq!(map.images(), &[2, 2, 2]);
        assert!(map.is_coalesced());
    }

    #[test]
    fn coalesced_map_is_frozen() {
        let inst = make_bimodal_path_instance(7).unwrap();
        let scheme = LocalSamplingScheme::new(&inst);
        for seed in 0..20 {
            let mut oracle = scheme.oracle(SeedTree::new(seed));
            let mut coins = SeedTree::new(seed + 100).rng();
            let mut map = GrandCouplingMap::identity(7);
            while !map.is_coalesced() {
                let s = oracle.draw().unwrap();
                let u: f64 = coins.random();
                map.extend_one_step(s.members(&inst.comparisons), s.winner, u, Some(inst.target.probs())).unwrap();
            }
            let value = map.value();
            for _ in 0..10 {
                let s = oracle.draw().unwrap();
                let u: f64 = coins.random();
                map.extend_one_step(s.members(&inst.comparisons), s.winner, u, Some(inst.target.probs())).unwrap();
                assert_eq!(map.value(), value);
            }
        }
    }

    #[test]
    fn trivial_single_state() {
        let inst = instance(vec![1.0], vec![]);
        let mut oracle = LssOracle::simulated(&inst, SeedTree::new(0));
        let out = run_naive_cftp(&mut oracle, &mut SampleBudget::default()).unwrap();
        assert_eq!(out.result, CftpResult::Sample(0));
        assert_eq!(out.steps, 0);
        let mut coins = SeedTree::new(1).rng();
        let out = run_parameterized_cftp(&mut oracle, &mut coins, &[1.0], &mut SampleBudget::default()).unwrap();
        assert_eq!(out.result, CftpResult::Sample(0));
    }

    #[test]
    fn two_state_coalesces_on_first_draw() {
        let inst = instance(vec![0.5, 0.5], vec![(vec![0, 1], 1.0)]);
        for seed in 0..50 {
            let mut oracle = LssOracle::simulated(&inst, SeedTree::new(seed));
            let out = run_naive_cftp(&mut oracle, &mut SampleBudget::default()).unwrap();
            assert_eq!(out.steps, 1);
            assert_eq!(oracle.samples_drawn(), 1);
        }
    }

    #[test]
    fn all_ones_matches_naive_and_never_rejects() {
        let inst = make_bimodal_path_instance(5).unwrap();
        let ones = vec![1.0; 5];
        for seed in 0..30 {
            let mut a = LssOracle::simulated(&inst, SeedTree::new(seed));
            let mut b = LssOracle::simulated(&inst, SeedTree::new(seed));
            let naive = run_naive_cftp(&mut a, &mut SampleBudget::default()).unwrap();
            let mut coins = SeedTree::new(seed).derive("coins", 0).rng();
            let param = run_parameterized_cftp(&mut b, &mut coins, &ones, &mut SampleBudget::default()).unwrap();
            assert_eq!(naive, param);
        }
    }

    #[test]
    fn budget_exceeded_is_an_outcome() {
        let inst = make_bimodal_path_instance(11).unwrap();
        let mut oracle = LssOracle::simulated(&inst, SeedTree::new(5));
        let mut budget = SampleBudget::capped(3);
        let out = run_naive_cftp(&mut oracle, &mut budget).unwrap();
        assert_eq!(out.result, CftpResult::BudgetExceeded);
        assert_eq!(out.steps, 3);
        assert_eq!(budget.consumed, 3);
        assert!(!out.accepted());

        let mut coins = SeedTree::new(6).rng();
        let mut budget = SampleBudget::capped(10);
        let out = run_exact_sampler_with_learning(&mut oracle, &mut coins, &inst.target, &mut budget).unwrap();
        assert_eq!(out.result, CftpResult::BudgetExceeded);
        assert_eq!(budget.consumed, 10);
    }

    #[test]
    fn replay_exhaustion_propagates() {
        let inst = make_bimodal_path_instance(7).unwrap();
        let comp = inst.comparisons.clone();
        let s = LssSample::from_members(&comp, &[0, 1], 0).unwrap();
        let mut oracle = LssOracle::replay(comp, vec![s; 3]).unwrap();
        assert!(matches!(
            run_naive_cftp(&mut oracle, &mut SampleBudget::default()),
            Err(Error::ReplayExhausted { consumed: 3 })
        ));
    }

    /// One step from the identity map realizes exactly one row of the chain.
    fn one_step_frequencies(inst: &Instance, p: Option<&[f64]>, mode: CoinMode, steps: usize) -> Vec<Vec<f64>> {
        let n = inst.n();
        let mut oracle = LssOracle::simulated(inst, SeedTree::new(77));
        let mut coins = SeedTree::new(78).rng();
        let mut freq = vec![vec![0.0; n]; n];
        for _ in 0..steps {
            let s = oracle.draw().unwrap();
            let mut map = GrandCouplingMap::identity(n);
            let members = s.members(&inst.comparisons);
            match mode {
                CoinMode::Shared => {
                    let u: f64 = coins.random();
                    map.extend_with(members, s.winner, p, |_| u);
                }
                CoinMode::PerState => map.extend_with(members, s.winner, p, |_| coins.random()),
            }
            for x in 0..n {
                freq[x][map.images()[x]] += 1.0;
            }
        }
        freq
    }

    fn assert_rows_match(freq: &[Vec<f64>], m: &crate::spectral::TransitionMatrix, steps: f64) {
        for (x, row) in freq.iter().enumerate() {
            for (y, &count) in row.iter().enumerate() {
                let p = m.get(x, y);
                let sigma = (steps * p * (1.0 - p)).sqrt().max(1.0);
                assert!(
                    (count - steps * p).abs() <= 3.0 * sigma + 1e-9,
                    "row {x} col {y}: {count} vs {}",
                    steps * p
                );
            }
        }
    }

    #[test]
    fn one_step_marginals_match_chain_rows() {
        let inst = instance(
            vec![0.4, 0.1, 0.2, 0.3],
            vec![(vec![0, 1], 0.3), (vec![1, 2], 0.3), (vec![2, 3], 0.2), (vec![0, 3], 0.2)],
        );
        let steps = 100_000;
        let freq = one_step_frequencies(&inst, None, CoinMode::Shared, steps);
        let m = build_transition_matrix(&inst.target, &inst.comparisons).unwrap();
        assert_rows_match(&freq, &m, steps as f64);

        let est = TargetDistribution::from_probs(vec![0.3, 0.2, 0.2, 0.3]).unwrap();
        let m = build_rescaled_matrix(&inst.target, &inst.comparisons, &est).unwrap();
        for mode in [CoinMode::Shared, CoinMode::PerState] {
            let freq = one_step_frequencies(&inst, Some(est.probs()), mode, steps);
            assert_rows_match(&freq, &m, steps as f64);
        }
    }

    #[test]
    fn trace_lines_follow_format() {
        let inst = make_bimodal_path_instance(3).unwrap();
        let mut oracle = LssOracle::simulated(&inst, SeedTree::new(2));
        let mut coins = SeedTree::new(3).rng();
        let mut buf: Vec<u8> = Vec::new();
        let out = CftpEngine::new(&mut oracle, &mut coins)
            .trace(&mut buf)
            .parameterized(inst.target.probs(), &mut SampleBudget::default())
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len() as u64, out.steps + 1);
        for (i, line) in lines[..lines.len() - 1].iter().enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 5);
            assert_eq!(fields[0].parse::<i64>().unwrap(), -(i as i64) - 1);
            let u: f64 = fields[3].parse().unwrap();
            assert!((0.0..1.0).contains(&u));
        }
        assert!(lines.last().unwrap().starts_with("#end,"));
        assert!(lines[lines.len() - 2].ends_with(",1"));
    }

    #[test]
    fn coalescence_samples_basic() {
        let single = instance(vec![1.0], vec![]);
        let steps = coalescence_time_samples(
            &LocalSamplingScheme::new(&single),
            &EngineKind::Naive,
            5,
            SeedTree::new(0),
            None,
        )
        .unwrap();
        assert!(steps.iter().all(|t| t.steps == 0 && t.coalesced));

        let pair = instance(vec![0.5, 0.5], vec![(vec![0, 1], 1.0)]);
        let steps = coalescence_time_samples(
            &LocalSamplingScheme::new(&pair),
            &EngineKind::Naive,
            100,
            SeedTree::new(0),
            None,
        )
        .unwrap();
        let mean = steps.iter().map(|t| t.steps as f64).sum::<f64>() / 100.0;
        assert!((1.0..=10.0).contains(&mean));

        let a = coalescence_time_samples(
            &LocalSamplingScheme::new(&pair),
            &EngineKind::Parameterized(vec![0.5, 0.5]),
            20,
            SeedTree::new(4),
            Some(1000),
        )
        .unwrap();
        let b = coalescence_time_samples(
            &LocalSamplingScheme::new(&pair),
            &EngineKind::Parameterized(vec![0.5, 0.5]),
            20,
            SeedTree::new(4),
            Some(1000),
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(coalescence_time_samples(&LocalSamplingScheme::new(&pair), &EngineKind::Naive, 0, SeedTree::new(0), None).is_err());
    }

    /// Expected coalescence time from the chain of occupied-state subsets of
    /// the forward composition, which has the law of the backward one.
    /// Pairwise supports only.
    fn exact_mean_coalescence(inst: &Instance, p: &[f64]) -> f64 {
        let n = inst.n();
        let d = inst.target.probs();
        let states: Vec<usize> = (1..1usize << n).filter(|m| m.count_ones() >= 2).collect();
        let index: std::collections::HashMap<usize, usize> = states.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        let mut a = nalgebra::DMatrix::<f64>::identity(states.len(), states.len());
        for (row, &m) in states.iter().enumerate() {
            for s in inst.comparisons.sets() {
                let (i, j) = (s.members[0], s.members[1]);
                for (win, lose) in [(i, j), (j, i)] {
                    let pw = s.prob * d[win] / (d[i] + d[j]);
                    let moves = (p[lose] / p[win]).min(1.0);
                    let next = if m >> lose & 1 == 1 { (m & !(1 << lose)) | (1 << win) } else { m };
                    if let Some(&col) = index.get(&next) {
                        a[(row, col)] -= pw * moves;
                    }
                    if let Some(&col) = index.get(&m) {
                        a[(row, col)] -= pw * (1.0 - moves);
                    }
                }
            }
        }
        let t = a.lu().solve(&nalgebra::DVector::from_element(states.len(), 1.0)).unwrap();
        t[index[&((1 << n) - 1)]]
    }

    #[test]
    fn mean_coalescence_matches_subset_chain() {
        let inst = make_bimodal_path_instance(7).unwrap();
        let scheme = LocalSamplingScheme::new(&inst);
        for engine in [EngineKind::Naive, EngineKind::Parameterized(inst.target.probs().to_vec())] {
            let p = match &engine {
                EngineKind::Naive => vec![1.0; 7],
                EngineKind::Parameterized(p) => p.clone(),
            };
            let exact = exact_mean_coalescence(&inst, &p);
            let trials = 4000;
            let steps: Vec<f64> = coalescence_time_samples(&scheme, &engine, trials, SeedTree::new(77), None)
                .unwrap()
                .iter()
                .map(|t| t.steps as f64)
                .collect();
            let mean = steps.iter().sum::<f64>() / trials as f64;
            let var = steps.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
            let se = (var / trials as f64).sqrt();
            assert!((mean - exact).abs() < 4.0 * se, "{engine:?}: {mean} vs {exact} (se {se})");
        }
    }
}
