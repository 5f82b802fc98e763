//! Fits the distribution of copied-prefix lengths by exploring the fiber.
//!
//! For a random fiber member and a random column order, there is a unique
//! prefix length `s` such that pinning the first `s` free cells to the
//! member's values still leaves room for a different table, while pinning
//! one more cell determines the member uniquely. Long feasible prefixes mean
//! cheap chain moves, so the empirical distribution of `s` over many random
//! (member, order) pairs is a natural choice for the proposal's prefix
//! distribution: it concentrates where moves tend to complete.
//!
//! Finding `s` exactly is expensive, so it is approached from both sides:
//! a bisection over prefix lengths finds the largest prefix whose suffix
//! still has slack in the relaxed per-cell ranges (an upper bound for `s`),
//! and a descending sequence of sampling attempts finds a prefix length that
//! demonstrably completes to a different table (a lower bound). The lower
//! bound is recorded.

use std::cmp::min;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lp::FiberLp;
use crate::mcmc::PrefixDistribution;
use crate::pipeline::Fiber;
use crate::rref::{Reducer, RrefSystem};
use crate::sampler::{CellDist, CellKernel};
use crate::{Error, Result};

/// Sampling attempts per prefix length before stepping down.
const REFINE_ATTEMPTS: usize = 50;
/// Attempts to generate one random fiber member before giving up.
const GENERATE_ATTEMPTS: usize = 10_000;
/// Iterations per RNG stream; results merge additively, so the estimate does
/// not depend on how blocks are scheduled.
const BLOCK_LEN: u64 = 1024;

/// Largest number of leading free cells that can be pinned to `table`'s
/// values while the relaxed ranges of the remaining free cells keep slack
/// somewhere. Pinning one more cell collapses every remaining range to a
/// single integer, so past that point no other table shares the prefix.
///
/// Expects `lp` rebuilt for the system that produced `free_cells`, anchored
/// at `table`, with no pins. Range slack is necessary but not sufficient for
/// another table to exist, so the result only bounds the true split point
/// from above. Errs when even the empty prefix leaves no slack, which proves
/// the fiber contains exactly one table.
pub fn max_slack_prefix(lp: &mut FiberLp, free_cells: &[usize], table: &[i64]) -> Result<usize> {
    debug_assert_eq!(lp.num_pins(), 0);
    let nf = free_cells.len();
    if suffix_is_collapsed(lp, free_cells, table, 0)? {
        return Err(Error::SingletonFiber(
            "every free cell is already determined by its range".into(),
        ));
    }
    let mut s1 = 0usize;
    let mut s2 = nf;
    while s1 + 1 != s2 {
        let s = (s1 + s2) / 2;
        lp.pop_pins_to(0);
        lp.set_anchor(table);
        for &c in &free_cells[..s] {
            lp.pin_at_current(c, table[c]);
        }
        if suffix_is_collapsed(lp, free_cells, table, s)? {
            s2 = s;
        } else {
            s1 = s;
        }
    }
    lp.pop_pins_to(0);
    Ok(s1)
}

/// Whether every free cell from position `s` on has a relaxed range that
/// rounds to a single integer under the pins currently in force. Stops at
/// the first cell with slack.
fn suffix_is_collapsed(
    lp: &mut FiberLp,
    free_cells: &[usize],
    table: &[i64],
    s: usize,
) -> Result<bool> {
    for &c in &free_cells[s..] {
        let r = lp.probe(c)?;
        debug_assert!(
            r.lo_int <= table[c] && table[c] <= r.hi_int,
            "anchor value {} outside probed range [{}, {}]",
            table[c],
            r.lo_int,
            r.hi_int
        );
        if r.lo_int < r.hi_int {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Walks the free cells from position `start`, sampling each from `dist`
/// over its current range, then completes the bound cells exactly. Returns
/// the bound-cell values when the completion is integral and inside every
/// box, `None` when the walk or the completion dead-ends. `vals[..start]`
/// must already hold the pinned prefix.
fn sample_completion(
    lp: &mut FiberLp,
    reduced: &RrefSystem,
    bounds: &[(i64, i64)],
    dist: CellDist,
    kernel: &mut CellKernel,
    vals: &mut [i64],
    start: usize,
    rng: &mut impl Rng,
) -> Result<Option<Vec<i64>>> {
    for k in start..reduced.free_cells.len() {
        let c = reduced.free_cells[k];
        let r = lp.probe(c)?;
        match kernel.sample(dist, r.lo_int, r.hi_int, None, rng) {
            Some((v, _)) => {
                vals[k] = v;
                lp.pin(c, v);
            }
            None => return Ok(None),
        }
    }
    let bound_vals = match reduced.back_substitute(vals) {
        Ok(b) => b,
        Err(_) => return Ok(None),
    };
    for (i, &c) in reduced.bound_cells.iter().enumerate() {
        let (lo, hi) = bounds[c];
        if bound_vals[i] < lo || bound_vals[i] > hi {
            return Ok(None);
        }
    }
    Ok(Some(bound_vals))
}

/// Starting from the upper bound `sb`, finds a prefix length whose pinned
/// prefix provably completes to a table different from `table`: for each
/// length, up to [`REFINE_ATTEMPTS`] sampled completions are tried; a
/// completion equal to `table` steps down immediately, dead-ends retry.
/// Returns 0 when every length is exhausted. The result never exceeds the
/// true split point.
pub fn refine_prefix(
    lp: &mut FiberLp,
    reduced: &RrefSystem,
    bounds: &[(i64, i64)],
    table: &[i64],
    sb: usize,
    dist: CellDist,
    kernel: &mut CellKernel,
    rng: &mut impl Rng,
) -> Result<usize> {
    let free = &reduced.free_cells;
    let nf = free.len();
    let mut vals = vec![0i64; nf];
    for s in (0..=sb).rev() {
        for _ in 0..REFINE_ATTEMPTS {
            lp.pop_pins_to(0);
            lp.set_anchor(table);
            for (k, &c) in free[..s].iter().enumerate() {
                vals[k] = table[c];
                lp.pin_at_current(c, table[c]);
            }
            let completed =
                sample_completion(lp, reduced, bounds, dist, kernel, &mut vals, s, rng)?;
            if completed.is_none() {
                continue;
            }
            if free.iter().enumerate().any(|(k, &c)| vals[k] != table[c]) {
                lp.pop_pins_to(0);
                return Ok(s);
            }
            break; // reproduced the same table: a shorter prefix is needed
        }
    }
    lp.pop_pins_to(0);
    Ok(0)
}

/// Tally of the prefix lengths observed while exploring a fiber. Every
/// length starts at one so the fitted distribution is positive everywhere,
/// which the chain needs to reach the whole fiber.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ExplorationRecord {
    /// Number of (member, order) pairs explored.
    pub iterations: u64,
    /// Per-length tallies including the one-count prior; sums to
    /// `iterations + counts.len()`.
    pub counts: Vec<u64>,
}

impl ExplorationRecord {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// A fitted prefix distribution together with its exploration tally.
#[derive(Clone, Debug)]
pub struct PrefixFit {
    pub distribution: PrefixDistribution,
    pub record: ExplorationRecord,
}

/// Workspaces for repeated fiber exploration.
struct Explorer<'a> {
    fiber: &'a Fiber,
    dist: CellDist,
    gen_order: Vec<usize>,
    gen_reducer: Reducer,
    gen_reduced: RrefSystem,
    gen_lp: FiberLp,
    gen_vals: Vec<i64>,
    table: Vec<i64>,
    order: Vec<usize>,
    reducer: Reducer,
    reduced: RrefSystem,
    lp: FiberLp,
    kernel: CellKernel,
}

impl<'a> Explorer<'a> {
    fn new(fiber: &'a Fiber, dist: CellDist) -> Self {
        let mut table = vec![0i64; fiber.num_cells()];
        for &(c, v) in &fiber.fixed {
            table[c] = v;
        }
        Explorer {
            fiber,
            dist,
            gen_order: (0..fiber.system.num_cols()).collect(),
            gen_reducer: Reducer::new(),
            gen_reduced: RrefSystem::default(),
            gen_lp: FiberLp::new(),
            gen_vals: vec![0i64; fiber.num_free()],
            table,
            order: (0..fiber.system.num_cols()).collect(),
            reducer: Reducer::new(),
            reduced: RrefSystem::default(),
            lp: FiberLp::new(),
            kernel: CellKernel::new(),
        }
    }

    /// Draws a random fiber member by walking the free cells under a fresh
    /// random column order and completing the rest, reshuffling after each
    /// dead end so retries do not keep replaying one order's hard spots.
    fn generate_member(&mut self, rng: &mut impl Rng) -> Result<()> {
        for _ in 0..GENERATE_ATTEMPTS {
            self.gen_order.shuffle(rng);
            self.gen_reducer.reduce(
                &self.fiber.system,
                Some(&self.gen_order),
                &mut self.gen_reduced,
            )?;
            self.gen_lp.rebuild(&self.gen_reduced, &self.fiber.system, |c| self.fiber.bounds[c]);
            self.gen_lp.attach_rows(&self.fiber.full_system);
            self.gen_lp.set_anchor(self.fiber.observed());
            let bound_vals = sample_completion(
                &mut self.gen_lp,
                &self.gen_reduced,
                &self.fiber.bounds,
                self.dist,
                &mut self.kernel,
                &mut self.gen_vals,
                0,
                rng,
            )?;
            if let Some(bound_vals) = bound_vals {
                let red = &self.gen_reduced;
                for (k, &c) in red.free_cells.iter().enumerate() {
                    self.table[c] = self.gen_vals[k];
                }
                for (i, &c) in red.bound_cells.iter().enumerate() {
                    self.table[c] = bound_vals[i];
                }
                debug_assert!(red.satisfied_by(&self.table));
                return Ok(());
            }
        }
        Err(Error::SamplingFailed(format!(
            "no feasible table completed in {GENERATE_ATTEMPTS} attempts"
        )))
    }

    /// One exploration step: a fresh member, a fresh order, and the prefix
    /// length demonstrated for that pair.
    fn observe(&mut self, rng: &mut impl Rng) -> Result<usize> {
        self.generate_member(rng)?;
        self.order.shuffle(rng);
        self.reducer.reduce(&self.fiber.system, Some(&self.order), &mut self.reduced)?;
        self.lp.rebuild(&self.reduced, &self.fiber.system, |c| self.fiber.bounds[c]);
        self.lp.attach_rows(&self.fiber.full_system);
        self.lp.set_anchor(&self.table);
        let sb = max_slack_prefix(&mut self.lp, &self.reduced.free_cells, &self.table)?;
        refine_prefix(
            &mut self.lp,
            &self.reduced,
            &self.fiber.bounds,
            &self.table,
            sb,
            self.dist,
            &mut self.kernel,
            rng,
        )
    }
}

/// Explores the fiber for `iterations` (member, order) pairs and returns the
/// normalized tally of demonstrated prefix lengths.
///
/// Iterations are grouped into fixed-size blocks, each driven by its own RNG
/// stream derived from `seed`, and tallies merge by addition — the result is
/// reproducible and independent of how blocks would be scheduled across
/// workers.
pub fn estimate_prefix_distribution(
    fiber: &Fiber,
    dist: CellDist,
    iterations: u64,
    seed: u64,
) -> Result<PrefixFit> {
    fiber.require_non_singleton()?;
    if iterations == 0 {
        return Err(Error::BadConfig("prefix fitting needs at least one iteration".into()));
    }
    let nf = fiber.num_free();
    let mut counts = vec![1u64; nf];
    let mut explorer = Explorer::new(fiber, dist);
    let blocks = iterations.div_ceil(BLOCK_LEN);
    for b in 0..blocks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b);
        let todo = min(BLOCK_LEN, iterations - b * BLOCK_LEN);
        for _ in 0..todo {
            let s = explorer.observe(&mut rng)?;
            counts[s] += 1;
        }
    }
    let distribution =
        PrefixDistribution::from_weights(counts.iter().map(|&c| c as f64).collect())?;
    Ok(PrefixFit { distribution, record: ExplorationRecord { iterations, counts } })
}

/// On-disk form of a fitted prefix distribution.
#[derive(serde::Serialize, serde::Deserialize)]
struct StoredPrefixDistribution {
    support_size: usize,
    probs: Vec<f64>,
}

/// Writes a prefix distribution as JSON `{"support_size": .., "probs": [..]}`.
pub fn save_prefix_distribution(path: &Path, g: &PrefixDistribution) -> Result<()> {
    let stored =
        StoredPrefixDistribution { support_size: g.support(), probs: g.probs().to_vec() };
    let text = serde_json::to_string_pretty(&stored)
        .map_err(|e| Error::BadConfig(format!("cannot encode prefix distribution: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

/// Reads a prefix distribution saved by [`save_prefix_distribution`].
pub fn load_prefix_distribution(path: &Path) -> Result<PrefixDistribution> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(e.to_string()))?;
    let stored: StoredPrefixDistribution = serde_json::from_str(&text)
        .map_err(|e| Error::BadConfig(format!("malformed prefix distribution file: {e}")))?;
    if stored.support_size != stored.probs.len() {
        return Err(Error::BadConfig(format!(
            "prefix distribution file claims {} lengths but lists {}",
            stored.support_size,
            stored.probs.len()
        )));
    }
    PrefixDistribution::from_weights(stored.probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_dataset, parse_dataset};
    use crate::enumerate::collect_fiber;

    fn small_fiber(json: &str) -> Fiber {
        Fiber::build(parse_dataset(json).unwrap()).unwrap()
    }

    fn three_by_three() -> Fiber {
        small_fiber(
            r#"{"dims": [3, 3], "counts": [2, 0, 1, 1, 1, 0, 0, 2, 1], "model": [[1], [2]]}"#,
        )
    }

    /// Prefix length past which no other table can share the prefix,
    /// computed directly from the full table list.
    fn true_split(tables: &[Vec<i64>], table: &[i64], free_cells: &[usize]) -> usize {
        (0..free_cells.len())
            .rev()
            .find(|&s| {
                tables.iter().any(|t| {
                    t != table && free_cells[..s].iter().all(|&c| t[c] == table[c])
                })
            })
            .expect("fiber has at least two tables")
    }

    #[test]
    fn single_free_cell_has_no_pinnable_prefix() {
        let fiber = small_fiber(r#"{"dims": [2, 2], "counts": [1, 0, 0, 1], "model": [[1], [2]]}"#);
        assert_eq!(fiber.num_free(), 1);
        let mut lp = FiberLp::new();
        lp.rebuild(&fiber.reduced, &fiber.system, |c| fiber.bounds[c]);
        lp.set_anchor(fiber.observed());
        let sb = max_slack_prefix(&mut lp, &fiber.reduced.free_cells, fiber.observed()).unwrap();
        assert_eq!(sb, 0);
        let fit = estimate_prefix_distribution(&fiber, CellDist::Hypergeometric, 40, 7).unwrap();
        assert_eq!(fit.distribution.probs(), &[1.0]);
        assert_eq!(fit.record.total(), 40 + 1);
    }

    #[test]
    fn fully_pinned_fiber_is_reported_singleton() {
        // margins force every cell: the all-zero row/column margins example
        let fiber = small_fiber(r#"{"dims": [2, 2], "counts": [3, 0, 0, 0], "model": [[1], [2]]}"#);
        let mut lp = FiberLp::new();
        lp.rebuild(&fiber.reduced, &fiber.system, |c| fiber.bounds[c]);
        lp.set_anchor(fiber.observed());
        match max_slack_prefix(&mut lp, &fiber.reduced.free_cells, fiber.observed()) {
            Err(Error::SingletonFiber(_)) => {}
            other => panic!("expected a singleton report, got {other:?}"),
        }
    }

    #[test]
    fn slack_vanishes_exactly_past_the_returned_prefix() {
        let fiber = three_by_three();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut order: Vec<usize> = (0..fiber.system.num_cols()).collect();
        let mut reducer = Reducer::new();
        let mut reduced = RrefSystem::default();
        let mut lp = FiberLp::new();
        for _ in 0..12 {
            order.shuffle(&mut rng);
            reducer.reduce(&fiber.system, Some(&order), &mut reduced).unwrap();
            lp.rebuild(&reduced, &fiber.system, |c| fiber.bounds[c]);
            lp.set_anchor(fiber.observed());
            let table = fiber.observed();
            let sb = max_slack_prefix(&mut lp, &reduced.free_cells, table).unwrap();
            let nf = reduced.free_cells.len();
            assert!(sb < nf);
            // at sb there is slack somewhere in the suffix
            lp.pop_pins_to(0);
            lp.set_anchor(table);
            for &c in &reduced.free_cells[..sb] {
                lp.pin_at_current(c, table[c]);
            }
            let slack = reduced.free_cells[sb..]
                .iter()
                .any(|&c| { let r = lp.probe(c).unwrap(); r.lo_int < r.hi_int });
            assert!(slack, "no slack at the returned prefix length {sb}");
            // one cell further every range rounds to the anchor value
            lp.pop_pins_to(0);
            lp.set_anchor(table);
            for &c in &reduced.free_cells[..sb + 1] {
                lp.pin_at_current(c, table[c]);
            }
            for &c in &reduced.free_cells[sb + 1..] {
                let r = lp.probe(c).unwrap();
                assert_eq!((r.lo_int, r.hi_int), (table[c], table[c]));
            }
            lp.pop_pins_to(0);
        }
    }

    #[test]
    fn refined_prefix_never_exceeds_the_true_split() {
        let fiber = three_by_three();
        let tables = collect_fiber(&fiber.walk_context(), 10_000).unwrap();
        assert!(tables.len() > 1);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut order: Vec<usize> = (0..fiber.system.num_cols()).collect();
        let mut reducer = Reducer::new();
        let mut reduced = RrefSystem::default();
        let mut lp = FiberLp::new();
        let mut kernel = CellKernel::new();
        for _ in 0..12 {
            order.shuffle(&mut rng);
            reducer.reduce(&fiber.system, Some(&order), &mut reduced).unwrap();
            lp.rebuild(&reduced, &fiber.system, |c| fiber.bounds[c]);
            let table = fiber.observed().to_vec();
            lp.set_anchor(&table);
            let expected = true_split(&tables, &table, &reduced.free_cells);
            let sb = max_slack_prefix(&mut lp, &reduced.free_cells, &table).unwrap();
            assert!(sb >= expected, "upper bound {sb} below true split {expected}");
            let s = refine_prefix(
                &mut lp,
                &reduced,
                &fiber.bounds,
                &table,
                sb,
                CellDist::Hypergeometric,
                &mut kernel,
                &mut rng,
            )
            .unwrap();
            assert!(s <= expected, "demonstrated prefix {s} above true split {expected}");
        }
    }

    #[test]
    fn estimates_are_reproducible_and_normalized() {
        let fiber = three_by_three();
        let a = estimate_prefix_distribution(&fiber, CellDist::Hypergeometric, 300, 99).unwrap();
        let b = estimate_prefix_distribution(&fiber, CellDist::Hypergeometric, 300, 99).unwrap();
        assert_eq!(a.record.counts, b.record.counts);
        assert_eq!(a.record.total(), 300 + fiber.num_free() as u64);
        let sum: f64 = a.distribution.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(a.distribution.probs().iter().all(|&p| p > 0.0));
        let c = estimate_prefix_distribution(&fiber, CellDist::Hypergeometric, 300, 100).unwrap();
        assert_ne!(a.record.counts, c.record.counts);
    }

    #[test]
    fn stored_distributions_round_trip() {
        let fiber = three_by_three();
        let fit = estimate_prefix_distribution(&fiber, CellDist::Hypergeometric, 120, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prefix.json");
        save_prefix_distribution(&path, &fit.distribution).unwrap();
        let loaded = load_prefix_distribution(&path).unwrap();
        for (a, b) in loaded.probs().iter().zip(fit.distribution.probs()) {
            assert!((a - b).abs() < 1e-12, "probability drifted through disk: {a} vs {b}");
        }
        std::fs::write(&path, r#"{"support_size": 3, "probs": [1.0]}"#).unwrap();
        assert!(load_prefix_distribution(&path).is_err());
    }

    #[test]
    fn survey_mass_sits_at_long_prefixes_on_real_data() {
        let fiber = Fiber::build(load_dataset(Path::new("../../data/nber.json")).unwrap()).unwrap();
        assert_eq!(fiber.num_free(), 26);
        let fit = estimate_prefix_distribution(&fiber, CellDist::Reciprocal, 1200, 2024).unwrap();
        let probs = fit.distribution.probs();
        let mode = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        // nearly every pair demonstrates a prefix within two cells of the top
        assert!((24..=25).contains(&mode), "mode at {mode}");
        assert!(probs[24] + probs[25] > 0.55, "top-two mass is {}", probs[24] + probs[25]);
        assert!(probs[24] > 0.17, "mass at 24 is {}", probs[24]);
        let updates = fit.distribution.expected_updates(fiber.num_free());
        assert!((3.2..=5.6).contains(&updates), "expected per-move updates {updates}");
    }
}
