//! Cell-value distributions and the sequential importance sampler.
//!
//! A sampling walk visits cells one at a time, draws a value from the cell's
//! current integer range under a chosen family of weights, pins the cell, and
//! moves on. The per-cell families are: uniform weights, reciprocal weights
//! `1/(1+v)` favouring small counts, and a symmetric hypergeometric-shaped
//! family over the range. All are normalized by direct summation over the
//! range, optionally with one value excluded from the support.
//!
//! The full-walk sampler visits every non-fixed cell in lexicographic order,
//! which yields an independent draw from a fully known product proposal.
//! Ratios against the uniform and hypergeometric targets turn a stream of
//! such draws into estimates of the p-value and of the number of tables.

use rand::Rng;

use crate::constraint::ConstraintSystem;
use crate::lp::FiberLp;
use crate::rref::RrefSystem;
use crate::special::ln_choose;
use crate::{Error, Result};

/// Weight family used when drawing one cell value from its range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellDist {
    /// Every admissible value is equally likely.
    Uniform,
    /// Weight `1/(1+v)`: favours small counts, mimicking sparse tables.
    Reciprocal,
    /// Symmetric bell over the range, shaped like a hypergeometric law.
    Hypergeometric,
}

/// Reusable scratch for sampling and evaluating single-cell draws.
#[derive(Default)]
pub struct CellKernel {
    weights: Vec<f64>,
}

impl CellKernel {
    pub fn new() -> Self {
        Self::default()
    }

    fn fill_weights(&mut self, dist: CellDist, lo: i64, hi: i64, exclude: Option<i64>) -> f64 {
        debug_assert!(lo <= hi);
        let len = (hi - lo + 1) as usize;
        self.weights.clear();
        self.weights.reserve(len);
        match dist {
            CellDist::Uniform => {
                for v in lo..=hi {
                    self.weights.push(if Some(v) == exclude { 0.0 } else { 1.0 });
                }
            }
            CellDist::Reciprocal => {
                for v in lo..=hi {
                    self.weights.push(if Some(v) == exclude {
                        0.0
                    } else {
                        1.0 / (1.0 + v as f64)
                    });
                }
            }
            CellDist::Hypergeometric => {
                // ln C(hi, v) + ln C(hi, lo + hi - v), rescaled by the max for
                // stability; the shape is symmetric about the range midpoint
                let mut max_ln = f64::NEG_INFINITY;
                for v in lo..=hi {
                    if Some(v) == exclude {
                        self.weights.push(f64::NEG_INFINITY);
                        continue;
                    }
                    let w = ln_choose(hi, v) + ln_choose(hi, lo + hi - v);
                    max_ln = max_ln.max(w);
                    self.weights.push(w);
                }
                for w in &mut self.weights {
                    *w = if w.is_finite() { (*w - max_ln).exp() } else { 0.0 };
                }
            }
        }
        self.weights.iter().sum()
    }

    /// Draws a value from `[lo, hi]` minus `exclude`; returns the value and
    /// the natural log of its probability. `None` when the support is empty.
    pub fn sample(
        &mut self,
        dist: CellDist,
        lo: i64,
        hi: i64,
        exclude: Option<i64>,
        rng: &mut impl Rng,
    ) -> Option<(i64, f64)> {
        if lo > hi {
            return None;
        }
        let total = self.fill_weights(dist, lo, hi, exclude);
        if total <= 0.0 {
            return None;
        }
        let mut u = rng.gen::<f64>() * total;
        let mut pick = None;
        for (k, &w) in self.weights.iter().enumerate() {
            if w > 0.0 {
                pick = Some(k);
                if u < w {
                    break;
                }
                u -= w;
            }
        }
        let k = pick?;
        Some((lo + k as i64, (self.weights[k] / total).ln()))
    }

    /// Log-probability that a draw over `[lo, hi]` minus `exclude` yields
    /// `value`; negative infinity when `value` is outside the support.
    pub fn ln_prob(
        &mut self,
        dist: CellDist,
        lo: i64,
        hi: i64,
        exclude: Option<i64>,
        value: i64,
    ) -> f64 {
        if value < lo || value > hi || Some(value) == exclude {
            return f64::NEG_INFINITY;
        }
        let total = self.fill_weights(dist, lo, hi, exclude);
        if total <= 0.0 {
            return f64::NEG_INFINITY;
        }
        (self.weights[(value - lo) as usize] / total).ln()
    }
}

/// Everything a sampling walk needs to know about a fiber. Bounds are indexed
/// by original cell id and already include fixed cells as point ranges.
pub struct WalkContext<'a> {
    /// Reduced system over the non-fixed cells, canonical column order.
    pub sys: &'a RrefSystem,
    /// The sparse equality system that `sys` reduces; bound solvers read the
    /// original all-ones rows from here.
    pub rows: &'a ConstraintSystem,
    /// Global integer bounds per original cell id.
    pub bounds: &'a [(i64, i64)],
    /// Cells outside the reduced system, with their known values.
    pub fixed: &'a [(usize, i64)],
    /// A member of the fiber (normally the observed table), used as the
    /// feasible starting point of every walk.
    pub anchor: &'a [i64],
    /// Equality rows for interval tightening, preferably untrimmed; `None`
    /// makes every bound probe run the simplex.
    pub tighten: Option<&'a ConstraintSystem>,
}

impl WalkContext<'_> {
    pub fn num_cells(&self) -> usize {
        self.anchor.len()
    }

    /// Non-fixed cells in lexicographic order.
    pub fn walk_cells(&self) -> Vec<usize> {
        let mut cells: Vec<usize> =
            self.sys.bound_cells.iter().chain(&self.sys.free_cells).copied().collect();
        cells.sort_unstable();
        cells
    }
}

/// Stream statistics from a sequential importance sampling run.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SisReport {
    /// Self-normalized estimate of the conditional p-value.
    pub p_value: f64,
    /// Delta-method standard error of the p-value estimate.
    pub p_se: f64,
    /// Estimated number of tables in the fiber.
    pub table_count: f64,
    /// Standard error of the table-count estimate.
    pub table_count_se: f64,
    pub draws: usize,
    /// Walks that dead-ended before completing a table.
    pub failures: usize,
}

/// Runs `draws` independent full walks and folds them into estimates.
///
/// `crit` maps a completed table to its test statistic; draws with a
/// statistic at least `crit_obs` count toward the p-value. The p-value
/// weights each draw by the ratio of the hypergeometric target to the
/// proposal; the table count averages the inverse proposal probabilities.
pub fn run_sis(
    ctx: &WalkContext,
    dist: CellDist,
    draws: usize,
    rng: &mut impl Rng,
    mut crit: impl FnMut(&[i64]) -> f64,
    crit_obs: f64,
) -> Result<SisReport> {
    if draws == 0 {
        return Err(Error::BadConfig("cannot run zero draws".into()));
    }
    let mut lp = FiberLp::new();
    lp.rebuild(ctx.sys, ctx.rows, |c| ctx.bounds[c]);
    if let Some(rows) = ctx.tighten {
        lp.attach_rows(rows);
    }
    let mut kernel = CellKernel::new();
    let cells = ctx.walk_cells();

    let mut table = vec![0i64; ctx.num_cells()];
    for &(c, v) in ctx.fixed {
        table[c] = v;
    }

    // accumulators: inverse-proposal for the table count, target/proposal
    // ratio and indicator for the p-value
    let mut sum_inv = 0.0f64;
    let mut sum_inv_sq = 0.0f64;
    let mut sum_w = 0.0f64;
    let mut sum_wh = 0.0f64;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(draws);
    let mut failures = 0usize;

    for _ in 0..draws {
        lp.pop_pins_to(0);
        lp.set_anchor(ctx.anchor);
        match one_walk(ctx, &mut lp, &mut kernel, dist, &cells, &mut table, rng)? {
            Some(ln_proposal) => {
                let inv = (-ln_proposal).exp();
                sum_inv += inv;
                sum_inv_sq += inv * inv;
                // unnormalized hypergeometric target over the varying cells
                let mut ln_target = 0.0;
                for &c in &cells {
                    ln_target -= crate::special::ln_factorial(table[c]);
                }
                let w = (ln_target - ln_proposal).exp();
                let h = if crit(&table) >= crit_obs { 1.0 } else { 0.0 };
                sum_w += w;
                sum_wh += w * h;
                pairs.push((w, h));
            }
            None => {
                failures += 1;
                pairs.push((0.0, 0.0));
            }
        }
    }

    let n = draws as f64;
    let table_count = sum_inv / n;
    let var_inv = (sum_inv_sq / n - table_count * table_count).max(0.0);
    let table_count_se = (var_inv / n).sqrt();

    let (p_value, p_se) = if sum_w > 0.0 {
        let p = sum_wh / sum_w;
        let mean_w = sum_w / n;
        let mut s = 0.0;
        for &(w, h) in &pairs {
            let d = w * (h - p);
            s += d * d;
        }
        let se = (s / n).sqrt() / (mean_w * n.sqrt());
        (p, se)
    } else {
        (f64::NAN, f64::NAN)
    };

    Ok(SisReport { p_value, p_se, table_count, table_count_se, draws, failures })
}

/// One sequential walk over all non-fixed cells. Returns the log proposal
/// probability of the completed table (written into `table`), or `None` if a
/// cell range collapsed to nothing.
fn one_walk(
    ctx: &WalkContext,
    lp: &mut FiberLp,
    kernel: &mut CellKernel,
    dist: CellDist,
    cells: &[usize],
    table: &mut [i64],
    rng: &mut impl Rng,
) -> Result<Option<f64>> {
    let mut ln_proposal = 0.0f64;
    for &cell in cells {
        let r = lp.probe(cell)?;
        if r.is_empty() {
            return Ok(None);
        }
        if r.is_forced() {
            lp.pin(cell, r.lo_int);
            table[cell] = r.lo_int;
            continue;
        }
        match kernel.sample(dist, r.lo_int, r.hi_int, None, rng) {
            Some((v, lp_v)) => {
                lp.pin(cell, v);
                table[cell] = v;
                ln_proposal += lp_v;
            }
            None => return Ok(None),
        }
    }
    debug_assert!(ctx.sys.satisfied_by(table), "walk left the fiber");
    Ok(Some(ln_proposal))
}
