//! Per-cell bounds over the linear relaxation of a fiber.
//!
//! Given a reduced constraint system, each cell of the table is one variable
//! with a box constraint, and each reduced row ties a bound cell to the free
//! cells. Minimizing and maximizing a single coordinate over that polytope
//! yields real bounds which bracket the integer bounds from outside: rounding
//! the minimum up and the maximum down can only lose non-integer slack, never
//! an achievable integer value.
//!
//! The solver is a bounded-variable primal simplex on a dense tableau.
//! Non-basic variables may rest anywhere inside their boxes, not only at a
//! bound; this allows starting from any feasible point (an *anchor*, normally
//! the current integer table, which satisfies the equalities exactly) without
//! a feasibility phase. During a sampling walk, cells are pinned one at a time
//! to chosen values; feasibility is preserved by interpolating between the
//! recorded minimizer and maximizer of the pinned cell, which stays inside the
//! polytope by convexity. Pins form a stack that unwinds when the walk ends.

use crate::constraint::ConstraintSystem;
use crate::rref::RrefSystem;
use crate::{Error, Result};

/// Temporary profiling counters: (optimize calls, pivots, pricing passes).
pub static LP_CALLS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static LP_PIVOTS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static LP_ELIMS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static LP_ROW_NNZ: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static LP_DEGEN: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static LP_PROBES: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static LP_PROBES_W0: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static T_REBUILD: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static T_TIGHTEN: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static T_OPT: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static T_PRICE: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static T_FTRAN: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static T_PIVOT: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

#[inline]
fn bump(c: &std::sync::atomic::AtomicU64, t0: std::time::Instant) {
    c.fetch_add(t0.elapsed().as_nanos() as u64, std::sync::atomic::Ordering::Relaxed);
}

/// Gradient entries smaller than this are treated as zero when pricing.
const PRICE_TOL: f64 = 1e-9;
/// Tableau entries smaller than this never serve as pivots.
const PIVOT_TOL: f64 = 1e-11;
/// Steps shorter than this count as degenerate.
const DEGEN_TOL: f64 = 1e-12;
/// Consecutive degenerate steps before switching to lowest-index pricing.
const BLAND_AFTER: usize = 48;
/// Hard cap on pivots per optimization call.
const MAX_PIVOTS: usize = 20_000;
/// Hard cap on interval-tightening sweeps per probe; sweeps also stop when a
/// full pass shrinks nothing or the probed cell's interval closes.
const MAX_TIGHTEN_SWEEPS: usize = 64;
/// Pivots between from-scratch refactorizations of the basis inverse.
const REFACTOR_EVERY: usize = 128;
/// Real bounds this close to an integer are snapped onto it before rounding.
const SNAP_TOL: f64 = 1e-7;

/// Snaps near-integers, then rounds a real interval outward to the integer
/// interval it brackets.
pub fn integer_bracket(lo: f64, hi: f64) -> (i64, i64) {
    (snap(lo).ceil() as i64, snap(hi).floor() as i64)
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= SNAP_TOL {
        r
    } else {
        v
    }
}

/// Real and bracketed integer bounds of one cell under the current pins.
#[derive(Clone, Copy, Debug)]
pub struct CellRange {
    pub lo_int: i64,
    pub hi_int: i64,
    pub lo_lp: f64,
    pub hi_lp: f64,
}

impl CellRange {
    pub fn is_empty(&self) -> bool {
        self.lo_int > self.hi_int
    }

    pub fn is_forced(&self) -> bool {
        self.lo_int == self.hi_int
    }
}

/// Bounded-variable revised simplex over the cells of a reduced system.
///
/// The equality rows are kept in their original sparse all-ones form; the
/// only dense object is the inverse of the current basis, an `m x m` matrix
/// that every pivot updates in place. Entering columns and reduced costs are
/// recovered on demand by combining basis-inverse columns selected by the
/// sparse rows, so per-pivot work scales with the rank, not with the number
/// of cells.
pub struct FiberLp {
    /// variable -> original cell id
    cells: Vec<usize>,
    /// original cell id -> variable (usize::MAX when absent)
    var_of_cell: Vec<usize>,
    m: usize,
    n: usize,
    /// constraint rows touching each variable, flattened: variable `v`
    /// appears with coefficient one in rows `col_rows[col_ends[v-1]..col_ends[v]]`
    col_rows: Vec<u32>,
    col_ends: Vec<u32>,
    /// the same rows in row-major form, for pricing: row `r` holds the
    /// variables `row_vars[row_ends[r-1]..row_ends[r]]`
    row_vars: Vec<u32>,
    row_ends: Vec<u32>,
    /// basis inverse, column-major: entry `(i, k)` at `binv[k * m + i]`
    binv: Vec<f64>,
    /// pivots since the inverse was last rebuilt from scratch
    since_refactor: usize,
    basis: Vec<usize>,
    /// variable -> basis position, usize::MAX when non-basic
    row_of: Vec<usize>,
    /// the non-basic variables, unordered; mirrored by `nonbasic_pos`
    nonbasic: Vec<usize>,
    /// variable -> index in `nonbasic` (usize::MAX when basic)
    nonbasic_pos: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    /// scratch: entering column expressed in the current basis
    col: Vec<f64>,
    /// scratch: the objective variable's row of the basis inverse
    y: Vec<f64>,
    /// scratch: per-variable reduced costs of the current pricing pass
    price: Vec<f64>,
    /// (variable, previous lo, previous hi)
    pins: Vec<(usize, f64, f64)>,
    /// minimizer recorded by the last `probe`, for pin interpolation
    probe_min: Vec<f64>,
    probe_cell: usize,
    probe_range: (f64, f64),
    /// unit-sum equality rows for interval tightening, flattened: variables
    /// of row r are `prop_vars[prop_ends[r-1]..prop_ends[r]]`
    prop_vars: Vec<u32>,
    prop_ends: Vec<u32>,
    prop_rhs: Vec<f64>,
    /// scratch: tightened per-variable intervals
    prop_lo: Vec<f64>,
    prop_hi: Vec<f64>,
    /// scratch: rows already at their residual fixpoint in this sweep set
    prop_done: Vec<bool>,
}

impl FiberLp {
    pub fn new() -> Self {
        FiberLp {
            cells: Vec::new(),
            var_of_cell: Vec::new(),
            m: 0,
            n: 0,
            col_rows: Vec::new(),
            col_ends: Vec::new(),
            row_vars: Vec::new(),
            row_ends: Vec::new(),
            binv: Vec::new(),
            since_refactor: 0,
            basis: Vec::new(),
            row_of: Vec::new(),
            nonbasic: Vec::new(),
            nonbasic_pos: Vec::new(),
            lo: Vec::new(),
            hi: Vec::new(),
            x: Vec::new(),
            col: Vec::new(),
            y: Vec::new(),
            price: Vec::new(),
            pins: Vec::new(),
            probe_min: Vec::new(),
            probe_cell: usize::MAX,
            probe_range: (0.0, 0.0),
            prop_vars: Vec::new(),
            prop_ends: Vec::new(),
            prop_rhs: Vec::new(),
            prop_lo: Vec::new(),
            prop_hi: Vec::new(),
        }
    }

    /// Rebuilds the solver state for one polytope: `rows` is the sparse
    /// equality system and `sys` its reduction, which supplies the variable
    /// order (bound cells first) and the starting basis (the bound cells,
    /// which the reduction proves independent). `box_of` supplies the integer
    /// box of each original cell.
    pub fn rebuild(
        &mut self,
        sys: &RrefSystem,
        rows: &ConstraintSystem,
        mut box_of: impl FnMut(usize) -> (i64, i64),
    ) {
        let t0 = std::time::Instant::now();
        let m = sys.rank();
        let nf = sys.num_free();
        let n = m + nf;
        debug_assert_eq!(sys.pivot_rows.len(), m);
        self.m = m;
        self.n = n;

        self.cells.clear();
        self.cells.extend_from_slice(&sys.bound_cells);
        self.cells.extend_from_slice(&sys.free_cells);

        let max_cell = self.cells.iter().copied().max().map_or(0, |c| c + 1);
        self.var_of_cell.clear();
        self.var_of_cell.resize(max_cell, usize::MAX);
        for (v, &c) in self.cells.iter().enumerate() {
            self.var_of_cell[c] = v;
        }

        // sparse columns over the reduction's row basis: which of the chosen
        // rows contain each variable
        let mut next = vec![0u32; n];
        for &r in &sys.pivot_rows {
            for &c in &rows.rows[r].cols {
                next[self.var_of_cell[rows.column_cells[c]]] += 1;
            }
        }
        self.col_ends.clear();
        let mut acc = 0u32;
        for v in 0..n {
            let start = acc;
            acc += next[v];
            self.col_ends.push(acc);
            next[v] = start;
        }
        self.col_rows.clear();
        self.col_rows.resize(acc as usize, 0);
        for (k, &r) in sys.pivot_rows.iter().enumerate() {
            for &c in &rows.rows[r].cols {
                let v = self.var_of_cell[rows.column_cells[c]];
                self.col_rows[next[v] as usize] = k as u32;
                next[v] += 1;
            }
        }

        self.basis.clear();
        self.basis.extend(0..m);
        self.row_of.clear();
        self.row_of.resize(n, usize::MAX);
        for r in 0..m {
            self.row_of[r] = r;
        }
        self.nonbasic.clear();
        self.nonbasic.extend(m..n);
        self.nonbasic_pos.clear();
        self.nonbasic_pos.resize(n, usize::MAX);
        for (k, &v) in self.nonbasic.iter().enumerate() {
            self.nonbasic_pos[v] = k;
        }
        self.col.clear();
        self.col.resize(m, 0.0);
        self.y.clear();
        self.y.resize(m, 0.0);
        self.factorize().expect("the reduction guarantees an invertible starting basis");

        self.lo.clear();
        self.hi.clear();
        for &c in &self.cells {
            let (l, h) = box_of(c);
            self.lo.push(l as f64);
            self.hi.push(h as f64);
        }
        self.x.clear();
        self.x.resize(n, 0.0);
        self.pins.clear();
        self.probe_cell = usize::MAX;
        // attached rows index variables, so a rebuild invalidates them
        self.prop_vars.clear();
        self.prop_ends.clear();
        self.prop_rhs.clear();
        bump(&T_REBUILD, t0);
    }

    /// Variables' sparse column: the rows containing variable `v`.
    #[inline]
    fn rows_of(&self, v: usize) -> &[u32] {
        let start = if v == 0 { 0 } else { self.col_ends[v - 1] as usize };
        &self.col_rows[start..self.col_ends[v] as usize]
    }

    /// Recomputes the basis inverse from the sparse columns of the current
    /// basis by Gauss-Jordan elimination with partial pivoting.
    fn factorize(&mut self) -> Result<()> {
        let m = self.m;
        // row-major scratch: w starts as B, v_inv as the identity; the same
        // row operations turn w into a row permutation and v_inv into that
        // permutation times the inverse
        let mut w = vec![0.0f64; m * m];
        for (k, &var) in self.basis.iter().enumerate() {
            for &r in self.rows_of(var) {
                w[r as usize * m + k] = 1.0;
            }
        }
        let mut v_inv = vec![0.0f64; m * m];
        for i in 0..m {
            v_inv[i * m + i] = 1.0;
        }
        let mut pivot_row = vec![usize::MAX; m];
        let mut used = vec![false; m];
        let mut w_piv = vec![0.0f64; m];
        let mut v_piv = vec![0.0f64; m];
        for k in 0..m {
            let mut p = usize::MAX;
            let mut best = PIVOT_TOL;
            for i in 0..m {
                let a = w[i * m + k].abs();
                if !used[i] && a > best {
                    best = a;
                    p = i;
                }
            }
            if p == usize::MAX {
                return Err(Error::LpStalled("basis matrix is numerically singular".into()));
            }
            used[p] = true;
            pivot_row[k] = p;
            let inv = 1.0 / w[p * m + k];
            for j in 0..m {
                w[p * m + j] *= inv;
                v_inv[p * m + j] *= inv;
            }
            w_piv.copy_from_slice(&w[p * m..(p + 1) * m]);
            v_piv.copy_from_slice(&v_inv[p * m..(p + 1) * m]);
            for i in 0..m {
                if i == p {
                    continue;
                }
                let f = w[i * m + k];
                if f != 0.0 {
                    for j in 0..m {
                        w[i * m + j] -= f * w_piv[j];
                    }
                    for j in 0..m {
                        v_inv[i * m + j] -= f * v_piv[j];
                    }
                }
            }
        }
        // the ops gave (P v_inv) B = I up to ordering: row i of the true
        // inverse is the row of v_inv that eliminated column i
        self.binv.clear();
        self.binv.resize(m * m, 0.0);
        for k in 0..m {
            for i in 0..m {
                self.binv[k * m + i] = v_inv[pivot_row[i] * m + k];
            }
        }
        self.since_refactor = 0;
        Ok(())
    }

    /// Attaches the fiber's unit-coefficient equality rows for interval
    /// tightening. With rows attached, `probe` first sweeps them to bracket
    /// the cell: a bracket of width zero settles the probe outright, and a
    /// wider one lets the simplex stop as soon as it touches either end.
    /// Dependent rows tighten too, so passing an untrimmed system is best.
    /// Must be called after `rebuild`, which drops any attached rows.
    pub fn attach_rows(&mut self, sys: &ConstraintSystem) {
        self.prop_vars.clear();
        self.prop_ends.clear();
        self.prop_rhs.clear();
        for row in &sys.rows {
            for &c in &row.cols {
                let v = self.var_of_cell[sys.column_cells[c]];
                debug_assert_ne!(v, usize::MAX, "attached row names a cell outside the solve");
                self.prop_vars.push(v as u32);
            }
            self.prop_ends.push(self.prop_vars.len() as u32);
            self.prop_rhs.push(row.rhs as f64);
        }
        self.prop_lo.resize(self.n, 0.0);
        self.prop_hi.resize(self.n, 0.0);
    }

    /// Sweeps the attached rows, repeatedly shrinking every variable's
    /// interval against each row's residual range, and returns the final
    /// interval of `t`. Starts from the current boxes, so pins participate.
    /// All quantities stay exact integers in floating point. The result
    /// brackets the feasible range of `t` from outside; a width of zero
    /// therefore identifies the exact range.
    fn tighten(&mut self, t: usize) -> (f64, f64) {
        self.prop_lo.copy_from_slice(&self.lo);
        self.prop_hi.copy_from_slice(&self.hi);
        for _ in 0..MAX_TIGHTEN_SWEEPS {
            let mut changed = false;
            let mut start = 0usize;
            for (r, &end) in self.prop_ends.iter().enumerate() {
                let end = end as usize;
                let rhs = self.prop_rhs[r];
                let vars = &self.prop_vars[start..end];
                start = end;
                let mut slo = 0.0;
                let mut shi = 0.0;
                for &v in vars {
                    slo += self.prop_lo[v as usize];
                    shi += self.prop_hi[v as usize];
                }
                if slo == rhs && shi == rhs {
                    continue; // row already settled, nothing left to shrink
                }
                for &v in vars {
                    let v = v as usize;
                    let nl = rhs - (shi - self.prop_hi[v]);
                    let nh = rhs - (slo - self.prop_lo[v]);
                    if nl > self.prop_lo[v] {
                        self.prop_lo[v] = nl;
                        changed = true;
                    }
                    if nh < self.prop_hi[v] {
                        self.prop_hi[v] = nh;
                        changed = true;
                    }
                }
            }
            if !changed || self.prop_hi[t] <= self.prop_lo[t] {
                break;
            }
        }
        (self.prop_lo[t], self.prop_hi[t])
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// Places the current point on an integer table from the fiber. The
    /// equalities then hold exactly. Requires an empty pin stack.
    pub fn set_anchor(&mut self, cell_values: &[i64]) {
        debug_assert!(self.pins.is_empty(), "anchoring under pins loses feasibility");
        for v in 0..self.n {
            self.x[v] = cell_values[self.cells[v]] as f64;
        }
        self.probe_cell = usize::MAX;
    }

    /// Permanently tightens the box of one cell. The current point may fall
    /// outside the new box; re-anchor before the next solve.
    pub fn fix_box(&mut self, cell: usize, lo: i64, hi: i64) {
        let v = self.var_of_cell[cell];
        self.lo[v] = lo as f64;
        self.hi[v] = hi as f64;
    }

    /// Current bounds of `cell` under the pins in effect, recording the
    /// minimizer so that a following `pin` of the same cell can interpolate.
    pub fn probe(&mut self, cell: usize) -> Result<CellRange> {
        LP_PROBES.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let v = self.var_of_cell[cell];
        let (mut cert_lo, mut cert_hi) = (f64::NEG_INFINITY, f64::INFINITY);
        if !self.prop_rhs.is_empty() {
            let tt = std::time::Instant::now();
            let (tl, th) = self.tighten(v);
            bump(&T_TIGHTEN, tt);
            if th <= tl {
                // the outer bracket closed, so it equals the exact range and
                // the current point already sits on it; no simplex needed
                LP_PROBES_W0.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                debug_assert!((self.x[v] - tl).abs() < 1e-6);
                self.probe_cell = cell;
                self.probe_range = (tl, tl);
                let value = tl as i64;
                return Ok(CellRange { lo_int: value, hi_int: value, lo_lp: tl, hi_lp: tl });
            }
            cert_lo = tl;
            cert_hi = th;
        }
        let to = std::time::Instant::now();
        let lo_lp = self.optimize(v, false, cert_lo)?;
        self.probe_min.clear();
        self.probe_min.extend_from_slice(&self.x);
        let hi_lp = self.optimize(v, true, cert_hi)?;
        bump(&T_OPT, to);
        self.probe_cell = cell;
        self.probe_range = (lo_lp, hi_lp);
        let (lo_int, hi_int) = integer_bracket(lo_lp, hi_lp);
        Ok(CellRange { lo_int, hi_int, lo_lp, hi_lp })
    }

    /// Pins `cell` to `value`, which must lie within the range returned by the
    /// immediately preceding `probe(cell)`. The current point moves onto the
    /// segment between the recorded minimizer and maximizer, so it stays
    /// feasible and the walk can continue without a feasibility phase.
    pub fn pin(&mut self, cell: usize, value: i64) {
        assert_eq!(self.probe_cell, cell, "pin must follow a probe of the same cell");
        let v = self.var_of_cell[cell];
        let (lo_lp, hi_lp) = self.probe_range;
        let val = value as f64;
        let span = hi_lp - lo_lp;
        if span > 1e-9 {
            let t = ((val - lo_lp) / span).clamp(0.0, 1.0);
            for i in 0..self.n {
                self.x[i] = self.probe_min[i] + t * (self.x[i] - self.probe_min[i]);
            }
        }
        self.x[v] = val;
        self.pins.push((v, self.lo[v], self.hi[v]));
        self.lo[v] = val;
        self.hi[v] = val;
        self.probe_cell = usize::MAX;
    }

    /// Pins `cell` at the value the current point already has there, without
    /// probing: the point does not move, so feasibility is untouched. Used to
    /// freeze the copied prefix of a walk in constant time per cell.
    pub fn pin_at_current(&mut self, cell: usize, value: i64) {
        let v = self.var_of_cell[cell];
        debug_assert!(
            (self.x[v] - value as f64).abs() < 1e-9,
            "pin_at_current requires the point to sit on the pinned value"
        );
        self.pins.push((v, self.lo[v], self.hi[v]));
        let val = value as f64;
        self.lo[v] = val;
        self.hi[v] = val;
        self.x[v] = val;
        self.probe_cell = usize::MAX;
    }

    /// Number of pins currently in effect.
    pub fn num_pins(&self) -> usize {
        self.pins.len()
    }

    /// Unwinds pins down to the given stack depth, restoring boxes.
    pub fn pop_pins_to(&mut self, depth: usize) {
        while self.pins.len() > depth {
            let (v, l, h) = self.pins.pop().unwrap();
            self.lo[v] = l;
            self.hi[v] = h;
        }
        self.probe_cell = usize::MAX;
    }

    /// Maximizes (or minimizes) the variable `t` from the current point,
    /// leaving the point at the optimum. Returns the optimal value.
    ///
    /// `limit` is a proven outer bound on the optimum (+inf / -inf when none
    /// is known): reaching it certifies optimality without a pricing pass.
    fn optimize(&mut self, t: usize, maximize: bool, limit: f64) -> Result<f64> {
        LP_CALLS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let sign = if maximize { 1.0 } else { -1.0 };
        let m = self.m;
        let mut degen_streak = 0usize;

        for _ in 0..MAX_PIVOTS {
            if sign * (self.x[t] - limit) >= -1e-9 {
                return Ok(self.x[t]);
            }
            LP_PIVOTS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            let tp = std::time::Instant::now();
            // --- pricing: choose an entering variable and direction ---
            let bland = degen_streak >= BLAND_AFTER;
            let mut enter: Option<(usize, f64)> = None;
            let row_t = self.row_of[t];
            if row_t == usize::MAX {
                // the objective variable itself is non-basic; only moving it
                // changes the objective
                let dir = sign;
                if self.room(t, dir) > DEGEN_TOL {
                    enter = Some((t, dir));
                }
            } else {
                // the objective row of the implied tableau: y sums the basis
                // inverse row of t over each candidate's sparse column
                for i in 0..m {
                    self.y[i] = self.binv[i * m + row_t];
                }
                let mut best_score = PRICE_TOL;
                for &j in &self.nonbasic {
                    let mut g = 0.0;
                    for &r in self.rows_of(j) {
                        g += self.y[r as usize];
                    }
                    let g = -sign * g;
                    let (score, dir) = if g > 0.0 { (g, 1.0) } else { (-g, -1.0) };
                    if score <= PRICE_TOL {
                        continue;
                    }
                    if self.room(j, dir) <= DEGEN_TOL {
                        continue;
                    }
                    if bland {
                        // lowest variable index wins, whatever the list order
                        if enter.is_none_or(|(e, _)| j < e) {
                            enter = Some((j, dir));
                        }
                    } else if score > best_score {
                        best_score = score;
                        enter = Some((j, dir));
                    }
                }
            }
            bump(&T_PRICE, tp);
            let Some((j, dir)) = enter else {
                return Ok(self.x[t]);
            };

            // entering column in the current basis: a sum of inverse columns
            let tf = std::time::Instant::now();
            {
                let FiberLp { col, binv, col_rows, col_ends, .. } = self;
                col.fill(0.0);
                let start = if j == 0 { 0 } else { col_ends[j - 1] as usize };
                for &r in &col_rows[start..col_ends[j] as usize] {
                    let src = &binv[r as usize * m..r as usize * m + m];
                    for (c, &b) in col.iter_mut().zip(src) {
                        *c += b;
                    }
                }
            }
            bump(&T_FTRAN, tf);

            // --- ratio test: how far can x_j move before a box blocks ---
            let mut theta = self.room(j, dir).max(0.0);
            let mut blocking: Option<usize> = None; // basis row
            let mut blocking_abs = 0.0f64;
            for i in 0..m {
                let a = self.col[i];
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                let rate = -a * dir; // movement of the row's basic variable
                let bv = self.basis[i];
                let head = if rate > 0.0 {
                    self.hi[bv] - self.x[bv]
                } else {
                    self.x[bv] - self.lo[bv]
                };
                let cand = head.max(0.0) / rate.abs();
                let tie = (cand - theta).abs() <= 1e-9 * (1.0 + theta.abs());
                if cand < theta && !tie {
                    theta = cand;
                    blocking = Some(i);
                    blocking_abs = a.abs();
                } else if tie && blocking.is_some() {
                    let better = if bland {
                        self.basis[i] < self.basis[blocking.unwrap()]
                    } else {
                        a.abs() > blocking_abs
                    };
                    if better && cand <= theta + 1e-9 * (1.0 + theta.abs()) {
                        theta = theta.min(cand);
                        blocking = Some(i);
                        blocking_abs = a.abs();
                    }
                }
            }

            if theta <= DEGEN_TOL {
                degen_streak += 1;
                if blocking.is_some() {
                    LP_DEGEN.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                }
            } else {
                degen_streak = 0;
            }

            // --- move the point ---
            let step = theta * dir;
            self.x[j] += step;
            for i in 0..m {
                let a = self.col[i];
                if a != 0.0 {
                    let bv = self.basis[i];
                    self.x[bv] -= a * step;
                    // kill eps-scale box violations from rounding
                    if self.x[bv] < self.lo[bv] && self.x[bv] > self.lo[bv] - 1e-9 {
                        self.x[bv] = self.lo[bv];
                    } else if self.x[bv] > self.hi[bv] && self.x[bv] < self.hi[bv] + 1e-9 {
                        self.x[bv] = self.hi[bv];
                    }
                }
            }

            match blocking {
                None => {
                    // x_j reached its own bound exactly
                    self.x[j] = if dir > 0.0 { self.hi[j] } else { self.lo[j] };
                }
                Some(p) => {
                    // the basic variable of row p hit a bound; place it there
                    // exactly and let x_j enter the basis
                    let leave = self.basis[p];
                    let rate = -self.col[p] * dir;
                    self.x[leave] = if rate > 0.0 { self.hi[leave] } else { self.lo[leave] };
                    let tv = std::time::Instant::now();
                    self.pivot(p, j)?;
                    bump(&T_PIVOT, tv);
                }
            }
        }
        Err(Error::LpStalled(format!(
            "no optimum for variable {t} within {MAX_PIVOTS} pivots"
        )))
    }

    #[inline]
    fn room(&self, v: usize, dir: f64) -> f64 {
        if dir > 0.0 {
            self.hi[v] - self.x[v]
        } else {
            self.x[v] - self.lo[v]
        }
    }

    /// Basis change: variable `j` enters at position `p`. Expects the
    /// entering column (in the current basis) in `self.col` and applies the
    /// matching product-form update to the basis inverse.
    fn pivot(&mut self, p: usize, j: usize) -> Result<()> {
        let m = self.m;
        let piv = self.col[p];
        debug_assert!(piv.abs() > PIVOT_TOL);
        let inv = 1.0 / piv;
        LP_ELIMS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        {
            let FiberLp { binv, col, .. } = self;
            for k in 0..m {
                let kcol = &mut binv[k * m..k * m + m];
                let f = kcol[p] * inv;
                if f != 0.0 {
                    for (v, &c) in kcol.iter_mut().zip(col.iter()) {
                        *v -= f * c;
                    }
                }
                kcol[p] = f;
            }
        }
        let leave = self.basis[p];
        self.row_of[leave] = usize::MAX;
        self.row_of[j] = p;
        self.basis[p] = j;
        // j leaves the non-basic list, the old basic variable joins it
        let k = self.nonbasic_pos[j];
        debug_assert_ne!(k, usize::MAX);
        self.nonbasic[k] = leave;
        self.nonbasic_pos[leave] = k;
        self.nonbasic_pos[j] = usize::MAX;
        // heal accumulated floating-point drift before it can mislead
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            self.factorize()?;
        }
        Ok(())
    }
}

impl Default for FiberLp {
    fn default() -> Self {
        Self::new()
    }
}

/// Integer per-cell bounds of the whole fiber: repeated bracketing sweeps,
/// tightening boxes until a fixed point. Returns one `(lo, hi)` pair per
/// original cell of the system. The observed table re-anchors every solve, so
/// feasibility never needs restoring.
pub fn global_cell_bounds(
    sys: &RrefSystem,
    rows: &ConstraintSystem,
    start_box: impl Fn(usize) -> (i64, i64),
    anchor: &[i64],
) -> Result<Vec<(usize, i64, i64)>> {
    let mut lp = FiberLp::new();
    lp.rebuild(sys, rows, |c| start_box(c));
    lp.attach_rows(rows);
    let mut cells: Vec<usize> = sys.bound_cells.iter().chain(&sys.free_cells).copied().collect();
    cells.sort_unstable();
    let mut bounds: Vec<(usize, i64, i64)> = cells.iter().map(|&c| {
        let (l, h) = start_box(c);
        (c, l, h)
    }).collect();

    loop {
        let mut changed = false;
        for slot in bounds.iter_mut() {
            let (cell, cur_lo, cur_hi) = *slot;
            if cur_lo == cur_hi {
                continue;
            }
            lp.set_anchor(anchor);
            let r = lp.probe(cell)?;
            let lo = r.lo_int.max(cur_lo);
            let hi = r.hi_int.min(cur_hi);
            if lo > hi {
                return Err(Error::EmptyFiber(format!(
                    "cell {cell} has empty integer range [{lo}, {hi}]"
                )));
            }
            if (lo, hi) != (cur_lo, cur_hi) {
                *slot = (cell, lo, hi);
                lp.fix_box(cell, lo, hi);
                changed = true;
            }
        }
        if !changed {
            return Ok(bounds);
        }
    }
}
