//! Metropolis–Hastings over a fiber with proposal moves generated on the fly.
//!
//! Each iteration draws a fresh random column order, re-reduces the sampling
//! system exactly under that order, and splits the resulting free cells into
//! a copied prefix and a re-sampled suffix. The split point comes from a
//! distribution over prefix lengths that is tuned separately; long prefixes
//! give cheap local moves, short ones give sweeping moves.
//!
//! The proposal copies the first `m` free cells from the current table, then
//! walks the remaining free cells in order, sampling each from its current
//! integer range; at the first walked cell the current table's value is
//! excluded, so a completed proposal always differs from the current state.
//! Bound cells follow by exact back-substitution and are checked against
//! their global boxes; any dead end keeps the chain where it is.
//!
//! The acceptance ratio multiplies the target ratio by the probability of
//! the reverse walk (same order, same split, roles of the two tables
//! swapped) divided by the forward walk's probability. The split-length
//! distribution cancels because both directions share the draw.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::lp::FiberLp;
use crate::pipeline::Fiber;
use crate::rref::{Reducer, RrefSystem};
use crate::sampler::{CellDist, CellKernel};
use crate::special::ln_factorial;
use crate::{Error, Result};

/// Stationary distribution over the fiber.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    /// Every table equally likely.
    Uniform,
    /// Table probability proportional to the reciprocal of the product of
    /// its cell factorials, as under independent multinomial sampling
    /// conditioned on the margins.
    Hypergeometric,
}

/// Distribution of the copied-prefix length `m` over `{0, .., support-1}`.
#[derive(Clone, Debug)]
pub struct PrefixDistribution {
    probs: Vec<f64>,
    cum: Vec<f64>,
}

impl PrefixDistribution {
    /// Uniform over all admissible prefix lengths.
    pub fn uniform(support: usize) -> Result<Self> {
        if support == 0 {
            return Err(Error::BadConfig("prefix distribution needs a non-empty support".into()));
        }
        Self::from_weights(vec![1.0; support])
    }

    /// Normalizes arbitrary positive weights over `{0, .., len-1}`.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::BadConfig("prefix distribution needs a non-empty support".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::BadConfig("prefix weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::BadConfig("prefix weights must not all vanish".into()));
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut cum = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cum.push(acc);
        }
        *cum.last_mut().unwrap() = 1.0;
        Ok(PrefixDistribution { probs, cum })
    }

    pub fn support(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, m: usize) -> f64 {
        self.probs.get(m).copied().unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(m, &p)| m as f64 * p).sum()
    }

    /// Expected number of cells rewritten per move: the walked suffix plus,
    /// on average, as many bound cells again.
    pub fn expected_updates(&self, num_free: usize) -> f64 {
        2.0 * (num_free as f64 - self.mean())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u = rng.gen::<f64>();
        match self.cum.iter().position(|&c| u < c) {
            Some(k) => k,
            None => self.probs.len() - 1,
        }
    }
}

/// Counters over the lifetime of a chain.
#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct ChainStats {
    pub proposals: u64,
    pub accepted: u64,
    /// Walks that dead-ended or had nothing to propose.
    pub walk_failures: u64,
    /// Completions with a non-integer, negative or out-of-box bound cell.
    pub completion_failures: u64,
    /// Completed proposals turned down by the acceptance test.
    pub mh_rejections: u64,
}

impl ChainStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// One Markov chain over a fiber, with all per-iteration workspaces owned.
pub struct Chain<'a> {
    fiber: &'a Fiber,
    target: TargetKind,
    dist: CellDist,
    g: PrefixDistribution,
    table: Vec<i64>,
    stats: ChainStats,
    // workspaces
    order: Vec<usize>,
    reducer: Reducer,
    reduced: RrefSystem,
    lp: FiberLp,
    kernel: CellKernel,
    free_cells: Vec<usize>,
    free_vals: Vec<i64>,
    proposal: Vec<i64>,
}

impl<'a> Chain<'a> {
    pub fn new(
        fiber: &'a Fiber,
        target: TargetKind,
        dist: CellDist,
        g: PrefixDistribution,
    ) -> Result<Self> {
        fiber.require_non_singleton()?;
        if g.support() != fiber.num_free() {
            return Err(Error::BadConfig(format!(
                "prefix distribution covers {} lengths but the fiber has {} free cells",
                g.support(),
                fiber.num_free()
            )));
        }
        let mut proposal = vec![0i64; fiber.num_cells()];
        for &(c, v) in &fiber.fixed {
            proposal[c] = v;
        }
        Ok(Chain {
            fiber,
            target,
            dist,
            g,
            table: fiber.observed().to_vec(),
            stats: ChainStats::default(),
            order: (0..fiber.system.num_cols()).collect(),
            reducer: Reducer::new(),
            reduced: RrefSystem::default(),
            lp: FiberLp::new(),
            kernel: CellKernel::new(),
            free_cells: Vec::new(),
            free_vals: Vec::new(),
            proposal,
        })
    }

    pub fn state(&self) -> &[i64] {
        &self.table
    }

    pub fn stats(&self) -> ChainStats {
        self.stats
    }

    /// Advances the chain one iteration. Returns whether the state changed.
    pub fn step(&mut self, rng: &mut impl Rng) -> Result<bool> {
        self.stats.proposals += 1;
        self.order.shuffle(rng);
        let m_copy = self.g.sample(rng);

        self.reducer.reduce(&self.fiber.system, Some(&self.order), &mut self.reduced)?;
        let nf = self.reduced.num_free();
        debug_assert_eq!(nf, self.g.support());
        self.free_cells.clear();
        self.free_cells.extend_from_slice(&self.reduced.free_cells);
        self.free_vals.clear();
        self.free_vals.resize(nf, 0);

        self.lp.rebuild(&self.reduced, &self.fiber.system, |c| self.fiber.bounds[c]);
        self.lp.attach_rows(&self.fiber.full_system);
        self.lp.set_anchor(&self.table);

        // copied prefix: freeze without probing
        for k in 0..m_copy {
            let c = self.free_cells[k];
            self.free_vals[k] = self.table[c];
            self.lp.pin_at_current(c, self.table[c]);
        }

        // forward walk; the first walked cell may not keep its current value
        let mut ln_fwd = 0.0f64;
        let first = self.free_cells[m_copy];
        let cur_first = self.table[first];
        let r_first = self.lp.probe(first)?;
        debug_assert!(
            r_first.lo_int <= cur_first && cur_first <= r_first.hi_int,
            "current value escaped its own range"
        );
        match self.kernel.sample(
            self.dist,
            r_first.lo_int,
            r_first.hi_int,
            Some(cur_first),
            rng,
        ) {
            Some((v, lp_v)) => {
                self.lp.pin(first, v);
                self.free_vals[m_copy] = v;
                ln_fwd += lp_v;
            }
            None => {
                self.stats.walk_failures += 1;
                return Ok(false);
            }
        }
        for k in m_copy + 1..nf {
            let c = self.free_cells[k];
            let r = self.lp.probe(c)?;
            if r.is_empty() {
                self.stats.walk_failures += 1;
                return Ok(false);
            }
            match self.kernel.sample(self.dist, r.lo_int, r.hi_int, None, rng) {
                Some((v, lp_v)) => {
                    self.lp.pin(c, v);
                    self.free_vals[k] = v;
                    ln_fwd += lp_v;
                }
                None => {
                    self.stats.walk_failures += 1;
                    return Ok(false);
                }
            }
        }

        // exact completion of the bound cells, with box checks
        let bound_vals = match self.reduced.back_substitute(&self.free_vals) {
            Ok(vals) => vals,
            Err(_) => {
                self.stats.completion_failures += 1;
                return Ok(false);
            }
        };
        for (i, &c) in self.reduced.bound_cells.iter().enumerate() {
            let (lo, hi) = self.fiber.bounds[c];
            if bound_vals[i] < lo || bound_vals[i] > hi {
                self.stats.completion_failures += 1;
                return Ok(false);
            }
        }
        for (k, &c) in self.free_cells.iter().enumerate() {
            self.proposal[c] = self.free_vals[k];
        }
        for (i, &c) in self.reduced.bound_cells.iter().enumerate() {
            self.proposal[c] = bound_vals[i];
        }
        debug_assert!(self.reduced.satisfied_by(&self.proposal));

        // reverse walk: same order and split, tables exchanged
        self.lp.pop_pins_to(0);
        self.lp.set_anchor(&self.proposal);
        for k in 0..m_copy {
            let c = self.free_cells[k];
            self.lp.pin_at_current(c, self.free_vals[k]);
        }
        let mut ln_rev = 0.0f64;
        {
            let r = self.lp.probe(first)?;
            debug_assert_eq!((r.lo_int, r.hi_int), (r_first.lo_int, r_first.hi_int));
            let lp_v = self.kernel.ln_prob(
                self.dist,
                r.lo_int,
                r.hi_int,
                Some(self.free_vals[m_copy]),
                cur_first,
            );
            debug_assert!(lp_v.is_finite());
            ln_rev += lp_v;
            self.lp.pin(first, cur_first);
        }
        for k in m_copy + 1..nf {
            let c = self.free_cells[k];
            let r = self.lp.probe(c)?;
            let v = self.table[c];
            let lp_v = self.kernel.ln_prob(self.dist, r.lo_int, r.hi_int, None, v);
            debug_assert!(
                lp_v.is_finite(),
                "the current table must lie on a reachable reverse path"
            );
            ln_rev += lp_v;
            self.lp.pin(c, v);
        }

        // target ratio over the cells that changed
        let mut ln_ratio = ln_rev - ln_fwd;
        if self.target == TargetKind::Hypergeometric {
            for k in m_copy..nf {
                let c = self.free_cells[k];
                ln_ratio += ln_factorial(self.table[c]) - ln_factorial(self.proposal[c]);
            }
            for &c in &self.reduced.bound_cells {
                ln_ratio += ln_factorial(self.table[c]) - ln_factorial(self.proposal[c]);
            }
        }

        if ln_ratio >= 0.0 || rng.gen::<f64>().ln() < ln_ratio {
            self.table.copy_from_slice(&self.proposal);
            self.stats.accepted += 1;
            Ok(true)
        } else {
            self.stats.mh_rejections += 1;
            Ok(false)
        }
    }
}

/// Options for a complete chain run.
#[derive(Clone, Debug)]
pub struct McmcOptions {
    pub iterations: u64,
    pub burn_in: u64,
    /// Number of batches for the batch-means spread of the estimate.
    pub batches: usize,
    pub target: TargetKind,
    pub dist: CellDist,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions {
            iterations: 100_000,
            burn_in: 10_000,
            batches: 50,
            target: TargetKind::Hypergeometric,
            dist: CellDist::Reciprocal,
        }
    }
}

/// Result of a single-chain p-value run.
#[derive(Clone, Debug, serde::Serialize)]
pub struct McmcReport {
    /// Fraction of post-burn-in states whose statistic reached the observed.
    pub p_value: f64,
    /// Spread of the per-batch estimates (sample standard deviation).
    pub p_spread: f64,
    pub acceptance_rate: f64,
    pub iterations: u64,
    pub burn_in: u64,
    pub batches: usize,
    pub stats: ChainStats,
}

/// Runs one chain and forwards every post-burn-in state to `on_state`; the
/// second argument says whether the state just changed.
pub fn run_chain_with(
    fiber: &Fiber,
    opts: &McmcOptions,
    g: PrefixDistribution,
    rng: &mut impl Rng,
    mut on_state: impl FnMut(&[i64], bool),
) -> Result<ChainStats> {
    if opts.iterations == 0 {
        return Err(Error::BadConfig("cannot run a zero-length chain".into()));
    }
    let mut chain = Chain::new(fiber, opts.target, opts.dist, g)?;
    for _ in 0..opts.burn_in {
        chain.step(rng)?;
    }
    let mut first = true;
    for _ in 0..opts.iterations {
        let changed = chain.step(rng)?;
        on_state(chain.state(), changed || first);
        first = false;
    }
    Ok(chain.stats())
}

/// Runs one chain and estimates `P(crit(N) >= crit_obs)` under the target.
pub fn run_chain(
    fiber: &Fiber,
    opts: &McmcOptions,
    g: PrefixDistribution,
    rng: &mut impl Rng,
    mut crit: impl FnMut(&[i64]) -> f64,
    crit_obs: f64,
) -> Result<McmcReport> {
    let batches = opts.batches.max(1);
    let batch_len = (opts.iterations / batches as u64).max(1);
    let mut batch_hits = vec![0u64; batches];
    let mut batch_sizes = vec![0u64; batches];
    let mut seen = 0u64;
    let mut cached_hit = false;
    let stats = run_chain_with(fiber, opts, g, rng, |state, changed| {
        if changed {
            cached_hit = crit(state) >= crit_obs;
        }
        let b = ((seen / batch_len) as usize).min(batches - 1);
        batch_hits[b] += cached_hit as u64;
        batch_sizes[b] += 1;
        seen += 1;
    })?;

    let total_hits: u64 = batch_hits.iter().sum();
    let p_value = total_hits as f64 / seen as f64;
    let means: Vec<f64> = batch_hits
        .iter()
        .zip(&batch_sizes)
        .filter(|(_, &n)| n > 0)
        .map(|(&h, &n)| h as f64 / n as f64)
        .collect();
    let p_spread = if means.len() > 1 {
        let mean = means.iter().sum::<f64>() / means.len() as f64;
        let var =
            means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (means.len() - 1) as f64;
        var.sqrt()
    } else {
        f64::NAN
    };

    Ok(McmcReport {
        p_value,
        p_spread,
        acceptance_rate: stats.acceptance_rate(),
        iterations: opts.iterations,
        burn_in: opts.burn_in,
        batches,
        stats,
    })
}
