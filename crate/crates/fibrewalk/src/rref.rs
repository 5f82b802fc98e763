//! Exact reduced row echelon forms of constraint systems.
//!
//! The reduction is a fraction-free Gauss–Jordan elimination over 128-bit
//! integers: every intermediate entry is a minor of the input matrix, each
//! two-term update divides exactly by the previous pivot, and all final rows
//! share the last pivot as a common denominator. Entries therefore stay exact
//! rationals throughout. If intermediate values approach the 128-bit range the
//! reduction transparently retries with arbitrary-precision rationals; only a
//! final system whose reduced coefficients cannot fit 128 bits at all is
//! rejected.
//!
//! Pivoting is partial: within the next column, the largest-magnitude entry
//! among unused rows wins, ties broken by the lowest row index. Columns are
//! visited in a caller-supplied order, so the same machinery serves both the
//! canonical reduction and the per-iteration reductions under random cell
//! permutations. Pivot columns become *bound* cells (each determined by one
//! reduced row), non-pivot columns become *free* cells.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::constraint::ConstraintSystem;
use crate::{Error, Result};

/// Entries are kept below this bound; one update step can at most square and
/// double a magnitude, which then still fits in an `i128`.
const MAX_ENTRY: i128 = 3_000_000_000_000_000_000; // 3e18

/// A constraint system in reduced row echelon form. Row `r` encodes
/// `den[r] * x[bound_cells[r]] + sum_j coef[r][j] * x[free_cells[j]] = rhs[r]`
/// where all values are exact integers and `den[r] > 0`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RrefSystem {
    /// Original cell ids of pivot columns, in pivot order.
    pub bound_cells: Vec<usize>,
    /// Original cell ids of non-pivot columns, in visit order.
    pub free_cells: Vec<usize>,
    /// Indices of the input rows that carried a pivot. They form a basis of
    /// the row space: reducing just these rows reproduces the same result.
    pub pivot_rows: Vec<usize>,
    den: Vec<i128>,
    /// rank x (free + 1), row-major; the trailing entry of each row is the
    /// right-hand side.
    coef: Vec<i128>,
}

impl RrefSystem {
    pub fn rank(&self) -> usize {
        self.bound_cells.len()
    }

    pub fn num_free(&self) -> usize {
        self.free_cells.len()
    }

    fn stride(&self) -> usize {
        self.free_cells.len() + 1
    }

    pub fn row_den(&self, r: usize) -> i128 {
        self.den[r]
    }

    pub fn row_coefs(&self, r: usize) -> &[i128] {
        let s = self.stride();
        &self.coef[r * s..r * s + self.num_free()]
    }

    pub fn row_rhs(&self, r: usize) -> i128 {
        self.coef[r * self.stride() + self.num_free()]
    }

    /// Coefficient of free cell `j` in bound row `r`, as a reduced fraction.
    pub fn coefficient(&self, r: usize, j: usize) -> (i128, i128) {
        reduce_pair(self.row_coefs(r)[j], self.den[r])
    }

    /// Right-hand side of row `r` as a reduced fraction.
    pub fn rhs(&self, r: usize) -> (i128, i128) {
        reduce_pair(self.row_rhs(r), self.den[r])
    }

    /// Solves each bound cell from the given free-cell values (in
    /// `free_cells` order). Fails if any bound cell comes out non-integer or
    /// negative; box constraints are the caller's concern.
    pub fn back_substitute(&self, free_values: &[i64]) -> std::result::Result<Vec<i64>, BackSubstituteError> {
        assert_eq!(free_values.len(), self.num_free());
        let mut out = Vec::with_capacity(self.rank());
        for r in 0..self.rank() {
            let coefs = self.row_coefs(r);
            let mut acc = self.row_rhs(r);
            for (w, &v) in coefs.iter().zip(free_values) {
                acc -= w * v as i128;
            }
            let den = self.den[r];
            if acc % den != 0 {
                return Err(BackSubstituteError::NonInteger { row: r });
            }
            let v = acc / den;
            if v < 0 {
                return Err(BackSubstituteError::Negative { row: r });
            }
            out.push(v as i64);
        }
        Ok(out)
    }

    /// Exact residual check of a full assignment indexed by original cell id.
    pub fn satisfied_by(&self, cell_values: &[i64]) -> bool {
        (0..self.rank()).all(|r| {
            let mut acc = self.den[r] * cell_values[self.bound_cells[r]] as i128;
            for (w, &f) in self.row_coefs(r).iter().zip(&self.free_cells) {
                acc += w * cell_values[f] as i128;
            }
            acc == self.row_rhs(r)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackSubstituteError {
    NonInteger { row: usize },
    Negative { row: usize },
}

pub(crate) fn reduce_pair(num: i128, den: i128) -> (i128, i128) {
    debug_assert!(den > 0);
    if num == 0 {
        return (0, 1);
    }
    let g = gcd_i128(num.unsigned_abs(), den.unsigned_abs()) as i128;
    (num / g, den / g)
}

fn gcd_i128(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Reusable elimination workspace; reduction allocates nothing once the
/// buffers have grown to the problem size.
#[derive(Default)]
pub struct Reducer {
    mat: Vec<i128>,
    pos_of_col: Vec<usize>,
    pivot_cols: Vec<usize>,
    row_origin: Vec<usize>,
}

impl Reducer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reduces `system`, visiting columns in `order` (positions into the
    /// system's columns; `None` means natural order), writing the result into
    /// `out`. Detects inconsistent systems exactly.
    pub fn reduce(
        &mut self,
        system: &ConstraintSystem,
        order: Option<&[usize]>,
        out: &mut RrefSystem,
    ) -> Result<()> {
        let m = system.num_rows();
        let n = system.num_cols();
        if let Some(ord) = order {
            if ord.len() != n {
                return Err(Error::NotPermutation(format!(
                    "order has {} entries for {n} columns",
                    ord.len()
                )));
            }
            self.pos_of_col.clear();
            self.pos_of_col.resize(n, usize::MAX);
            for (j, &c) in ord.iter().enumerate() {
                if c >= n || self.pos_of_col[c] != usize::MAX {
                    return Err(Error::NotPermutation(format!("entry {c} repeated or out of range")));
                }
                self.pos_of_col[c] = j;
            }
        }

        let stride = n + 1;
        self.mat.clear();
        self.mat.resize(m * stride, 0);
        for (i, row) in system.rows.iter().enumerate() {
            for &c in &row.cols {
                let j = match order {
                    Some(_) => self.pos_of_col[c],
                    None => c,
                };
                self.mat[i * stride + j] = 1;
            }
            self.mat[i * stride + n] = row.rhs as i128;
        }

        self.row_origin.clear();
        self.row_origin.extend(0..m);
        match eliminate_i128(&mut self.mat, m, n, &mut self.pivot_cols, &mut self.row_origin) {
            Ok(den) => {
                extract(system, order, &self.mat, m, n, &self.pivot_cols, den, out);
                out.pivot_rows.clear();
                out.pivot_rows.extend_from_slice(&self.row_origin[..self.pivot_cols.len()]);
                Ok(())
            }
            Err(ElimFailure::Inconsistent) => Err(Error::InconsistentSystem(
                "the marginal and fixed-cell constraints admit no solution".into(),
            )),
            Err(ElimFailure::Overflow) => {
                // rare: retry with arbitrary-precision rationals
                reduce_big(system, order, out)
            }
        }
    }
}

/// One-shot reduction in natural column order.
pub fn rref(system: &ConstraintSystem) -> Result<RrefSystem> {
    let mut out = RrefSystem::default();
    Reducer::new().reduce(system, None, &mut out)?;
    Ok(out)
}

enum ElimFailure {
    Inconsistent,
    Overflow,
}

/// Fraction-free Gauss–Jordan on an `m x (n+1)` row-major matrix (last column
/// is the right-hand side). Pivot columns are zeroed in place and their pivot
/// values carried implicitly; on success every pivot equals the returned
/// common denominator. `pivot_cols` receives the pivot column positions in
/// order.
fn eliminate_i128(
    mat: &mut [i128],
    m: usize,
    n: usize,
    pivot_cols: &mut Vec<usize>,
    row_origin: &mut [usize],
) -> std::result::Result<i128, ElimFailure> {
    let stride = n + 1;
    pivot_cols.clear();
    let mut prev: i128 = 1;
    let mut rank = 0usize;
    let mut max_abs: i128 = 1;

    for col in 0..n {
        if rank == m {
            break;
        }
        // partial pivoting: largest magnitude among unused rows, lowest index wins ties
        let mut best = usize::MAX;
        let mut best_abs: i128 = 0;
        for i in rank..m {
            let v = mat[i * stride + col].abs();
            if v > best_abs {
                best_abs = v;
                best = i;
            }
        }
        if best == usize::MAX {
            continue; // free column
        }
        if max_abs > MAX_ENTRY {
            return Err(ElimFailure::Overflow);
        }
        if best != rank {
            let (a, b) = split_rows(mat, rank, best, stride);
            a.swap_with_slice(b);
            row_origin.swap(rank, best);
        }
        let p = mat[rank * stride + col];

        // snapshot multipliers, then zero the pivot column (pivot value is implicit)
        for i in 0..m {
            let f = mat[i * stride + col];
            mat[i * stride + col] = 0;
            if i == rank {
                continue;
            }
            if f == 0 {
                if p != prev {
                    let row = &mut mat[i * stride..i * stride + stride];
                    for v in row.iter_mut() {
                        if *v != 0 {
                            *v = *v * p / prev;
                            max_abs = max_abs.max(v.abs());
                        }
                    }
                }
            } else {
                let (row_i, row_p) = if i < rank {
                    let (lo, hi) = split_rows(mat, i, rank, stride);
                    (lo, hi)
                } else {
                    let (hi, lo) = split_rows(mat, rank, i, stride);
                    (lo, hi)
                };
                for (vi, &vp) in row_i.iter_mut().zip(row_p.iter()) {
                    let num = p * *vi - f * vp;
                    let v = num / prev;
                    *vi = v;
                    max_abs = max_abs.max(v.abs());
                }
            }
        }
        prev = p;
        pivot_cols.push(col);
        rank += 1;
    }

    // unused rows are zero in every remaining column; a leftover rhs is a contradiction
    for i in rank..m {
        if mat[i * stride + n] != 0 {
            return Err(ElimFailure::Inconsistent);
        }
        debug_assert!(mat[i * stride..i * stride + n].iter().all(|&v| v == 0));
    }
    Ok(prev)
}

fn split_rows(mat: &mut [i128], i: usize, j: usize, stride: usize) -> (&mut [i128], &mut [i128]) {
    debug_assert!(i < j);
    let (head, tail) = mat.split_at_mut(j * stride);
    (&mut head[i * stride..i * stride + stride], &mut tail[..stride])
}

fn extract(
    system: &ConstraintSystem,
    order: Option<&[usize]>,
    mat: &[i128],
    m: usize,
    n: usize,
    pivot_cols: &[usize],
    den: i128,
    out: &mut RrefSystem,
) {
    debug_assert!(m * (n + 1) <= mat.len());
    let stride = n + 1;
    let rank = pivot_cols.len();
    let cell_at = |pos: usize| -> usize {
        let col = match order {
            Some(ord) => ord[pos],
            None => pos,
        };
        system.column_cells[col]
    };

    out.bound_cells.clear();
    out.bound_cells.extend(pivot_cols.iter().map(|&p| cell_at(p)));

    out.free_cells.clear();
    let mut is_pivot = vec![false; n];
    for &p in pivot_cols {
        is_pivot[p] = true;
    }
    let free_pos: Vec<usize> = (0..n).filter(|&p| !is_pivot[p]).collect();
    out.free_cells.extend(free_pos.iter().map(|&p| cell_at(p)));

    let sign = if den < 0 { -1 } else { 1 };
    out.den.clear();
    out.den.resize(rank, den * sign as i128);
    out.coef.clear();
    out.coef.reserve(rank * (free_pos.len() + 1));
    for r in 0..rank {
        let row = &mat[r * stride..r * stride + stride];
        for &p in &free_pos {
            out.coef.push(row[p] * sign as i128);
        }
        out.coef.push(row[n] * sign as i128);
    }
}

/// Arbitrary-precision fallback: textbook Gauss–Jordan over rationals with
/// the same pivoting rule, converted back to the shared integer layout.
fn reduce_big(
    system: &ConstraintSystem,
    order: Option<&[usize]>,
    out: &mut RrefSystem,
) -> Result<()> {
    let m = system.num_rows();
    let n = system.num_cols();
    let stride = n + 1;
    let mut pos_of_col = vec![0usize; n];
    match order {
        Some(ord) => {
            for (j, &c) in ord.iter().enumerate() {
                pos_of_col[c] = j;
            }
        }
        None => {
            for (c, slot) in pos_of_col.iter_mut().enumerate() {
                *slot = c;
            }
        }
    }

    let zero = BigRational::zero();
    let mut mat = vec![zero; m * stride];
    for (i, row) in system.rows.iter().enumerate() {
        for &c in &row.cols {
            mat[i * stride + pos_of_col[c]] = BigRational::from_integer(BigInt::from(1));
        }
        mat[i * stride + n] = BigRational::from_integer(BigInt::from(row.rhs));
    }

    let mut pivot_cols = Vec::new();
    let mut row_origin: Vec<usize> = (0..m).collect();
    let mut rank = 0usize;
    for col in 0..n {
        if rank == m {
            break;
        }
        let mut best = usize::MAX;
        let mut best_abs = BigRational::zero();
        for i in rank..m {
            let v = mat[i * stride + col].abs();
            if v > best_abs {
                best_abs = v;
                best = i;
            }
        }
        if best == usize::MAX {
            continue;
        }
        if best != rank {
            for j in 0..stride {
                mat.swap(rank * stride + j, best * stride + j);
            }
            row_origin.swap(rank, best);
        }
        let p = mat[rank * stride + col].clone();
        for j in 0..stride {
            let v = std::mem::replace(&mut mat[rank * stride + j], BigRational::zero());
            mat[rank * stride + j] = v / p.clone();
        }
        for i in 0..m {
            if i == rank {
                continue;
            }
            let f = mat[i * stride + col].clone();
            if f.is_zero() {
                continue;
            }
            for j in 0..stride {
                let sub = f.clone() * mat[rank * stride + j].clone();
                let v = std::mem::replace(&mut mat[i * stride + j], BigRational::zero());
                mat[i * stride + j] = v - sub;
            }
        }
        pivot_cols.push(col);
        rank += 1;
    }

    for i in rank..m {
        if !mat[i * stride + n].is_zero() {
            return Err(Error::InconsistentSystem(
                "the marginal and fixed-cell constraints admit no solution".into(),
            ));
        }
    }

    let cell_at = |pos: usize| -> usize {
        let col = match order {
            Some(ord) => ord[pos],
            None => pos,
        };
        system.column_cells[col]
    };
    let mut is_pivot = vec![false; n];
    for &p in &pivot_cols {
        is_pivot[p] = true;
    }
    let free_pos: Vec<usize> = (0..n).filter(|&p| !is_pivot[p]).collect();

    out.bound_cells.clear();
    out.bound_cells.extend(pivot_cols.iter().map(|&p| cell_at(p)));
    out.free_cells.clear();
    out.free_cells.extend(free_pos.iter().map(|&p| cell_at(p)));
    out.pivot_rows.clear();
    out.pivot_rows.extend_from_slice(&row_origin[..rank]);
    out.den.clear();
    out.coef.clear();

    let to_i128 = |v: &BigInt| -> Result<i128> {
        v.to_i128().ok_or_else(|| {
            Error::ExactOverflow("reduced coefficients exceed the 128-bit range".into())
        })
    };
    for r in 0..rank {
        let row = &mat[r * stride..(r + 1) * stride];
        let mut lcm = BigInt::from(1);
        for p in free_pos.iter().chain(std::iter::once(&n)) {
            lcm = num_integer::lcm(lcm, row[*p].denom().clone());
        }
        out.den.push(to_i128(&lcm)?);
        for p in free_pos.iter().chain(std::iter::once(&n)) {
            let scaled = row[*p].numer() * (&lcm / row[*p].denom());
            out.coef.push(to_i128(&scaled)?);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::build_constraints;
    use crate::table::{ModelSpec, Table, TableSchema};

    fn system_2x2(counts: Vec<i64>) -> (Table, ConstraintSystem) {
        let s = TableSchema::new(vec![2, 2]).unwrap();
        let t = Table::new(s, counts).unwrap();
        let model = ModelSpec::new(t.schema(), vec![vec![0], vec![1]]).unwrap();
        let sys = build_constraints(&t, &model, &[]).unwrap();
        (t, sys)
    }

    #[test]
    fn two_by_two_independence_rank_three_one_free() {
        let (t, sys) = system_2x2(vec![1, 0, 0, 1]);
        let r = rref(&sys).unwrap();
        assert_eq!(r.rank(), 3);
        assert_eq!(r.num_free(), 1);
        assert_eq!(r.free_cells, vec![3]);
        assert_eq!(r.bound_cells, vec![0, 1, 2]);
        assert!(r.satisfied_by(t.counts()));
    }

    #[test]
    fn back_substitution_recovers_each_table() {
        let (_, sys) = system_2x2(vec![1, 0, 0, 1]);
        let r = rref(&sys).unwrap();
        // the fiber of margins (1,1)/(1,1) holds exactly two tables
        let diag = r.back_substitute(&[1]).unwrap();
        assert_eq!(diag, vec![1, 0, 0]);
        let anti = r.back_substitute(&[0]).unwrap();
        assert_eq!(anti, vec![0, 1, 1]);
        // value 2 forces a negative bound cell
        assert_eq!(
            r.back_substitute(&[2]).unwrap_err(),
            BackSubstituteError::Negative { row: 1 }
        );
    }

    #[test]
    fn column_order_changes_the_free_cell() {
        let (t, sys) = system_2x2(vec![1, 0, 0, 1]);
        let mut out = RrefSystem::default();
        Reducer::new().reduce(&sys, Some(&[3, 2, 1, 0]), &mut out).unwrap();
        assert_eq!(out.rank(), 3);
        assert_eq!(out.free_cells, vec![0]);
        assert!(out.satisfied_by(t.counts()));
    }

    #[test]
    fn inconsistent_fixed_cells_are_detected() {
        let (t, _) = system_2x2(vec![1, 0, 0, 1]);
        let model = ModelSpec::new(t.schema(), vec![vec![0], vec![1]]).unwrap();
        // pinning both cells of the first row to 2 contradicts its marginal of 1
        let sys = build_constraints(&t, &model, &[(0, 2), (1, 2)]).unwrap();
        assert!(matches!(rref(&sys), Err(Error::InconsistentSystem(_))));
        // a single pin to 2 is linearly consistent (the solution merely goes
        // negative, which is a bounds matter, not an inconsistency)
        let sys = build_constraints(&t, &model, &[(0, 2)]).unwrap();
        assert!(rref(&sys).is_ok());
    }

    #[test]
    fn unit_rows_make_their_cells_pivots() {
        let (t, _) = system_2x2(vec![1, 0, 0, 1]);
        let model = ModelSpec::new(t.schema(), vec![vec![0], vec![1]]).unwrap();
        let sys = build_constraints(&t, &model, &[(3, 1)]).unwrap();
        let r = rref(&sys).unwrap();
        assert_eq!(r.rank(), 4);
        assert_eq!(r.num_free(), 0);
        assert!(r.bound_cells.contains(&3));
        assert_eq!(r.back_substitute(&[]).unwrap().len(), 4);
    }

    #[test]
    fn nber_has_26_free_cells_once_zeros_are_fixed() {
        let ds = crate::dataset::load_dataset(
            &std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/nber.json"),
        )
        .unwrap();
        let fixed: Vec<(usize, i64)> =
            ds.bounds.structural_zero_cells().iter().map(|&c| (c, 0)).collect();
        assert_eq!(fixed.len(), 12);
        let sys = build_constraints(&ds.table, &ds.model, &fixed).unwrap();
        let r = rref(&sys).unwrap();
        assert_eq!(r.num_free(), 26);
        assert_eq!(r.rank(), 54);
        assert!(r.satisfied_by(ds.table.counts()));
        // every fixed cell is a pivot column
        for (c, _) in &fixed {
            assert!(r.bound_cells.contains(c));
        }
        // the observed table's own free values reproduce the observed table
        let free_vals: Vec<i64> = r.free_cells.iter().map(|&c| ds.table.counts()[c]).collect();
        let bound_vals = r.back_substitute(&free_vals).unwrap();
        for (k, &cell) in r.bound_cells.iter().enumerate() {
            assert_eq!(bound_vals[k], ds.table.counts()[cell], "cell {cell}");
        }
    }

    #[test]
    fn rochdale_has_219_free_cells() {
        let ds = crate::dataset::load_dataset(
            &std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/rochdale.json"),
        )
        .unwrap();
        let sys = build_constraints(&ds.table, &ds.model, &[]).unwrap();
        let r = rref(&sys).unwrap();
        assert_eq!(r.num_free(), 219);
        assert_eq!(r.rank(), 37);
        assert!(r.satisfied_by(ds.table.counts()));
        let free_vals: Vec<i64> = r.free_cells.iter().map(|&c| ds.table.counts()[c]).collect();
        let bound_vals = r.back_substitute(&free_vals).unwrap();
        for (k, &cell) in r.bound_cells.iter().enumerate() {
            assert_eq!(bound_vals[k], ds.table.counts()[cell]);
        }
    }

    #[test]
    fn rank_is_invariant_under_column_order() {
        let ds = crate::dataset::load_dataset(
            &std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/nber.json"),
        )
        .unwrap();
        let sys = build_constraints(&ds.table, &ds.model, &[]).unwrap();
        let base = rref(&sys).unwrap();
        let mut order: Vec<usize> = (0..sys.num_cols()).collect();
        // a fixed scramble
        let len = order.len();
        for i in 0..len {
            order.swap(i, (i * 37 + 11) % len);
        }
        let mut out = RrefSystem::default();
        Reducer::new().reduce(&sys, Some(&order), &mut out).unwrap();
        assert_eq!(out.rank(), base.rank());
        assert_eq!(out.num_free(), base.num_free());
    }

    #[test]
    fn fast_and_big_paths_agree() {
        let ds = crate::dataset::load_dataset(
            &std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/nber.json"),
        )
        .unwrap();
        let fixed: Vec<(usize, i64)> =
            ds.bounds.structural_zero_cells().iter().map(|&c| (c, 0)).collect();
        let sys = build_constraints(&ds.table, &ds.model, &fixed).unwrap();
        let fast = rref(&sys).unwrap();
        let mut big = RrefSystem::default();
        reduce_big(&sys, None, &mut big).unwrap();
        assert_eq!(fast.bound_cells, big.bound_cells);
        assert_eq!(fast.free_cells, big.free_cells);
        for r in 0..fast.rank() {
            assert_eq!(fast.rhs(r), big.rhs(r));
            for j in 0..fast.num_free() {
                assert_eq!(fast.coefficient(r, j), big.coefficient(r, j), "row {r} col {j}");
            }
        }
    }

    #[test]
    fn pivot_rows_are_a_row_basis() {
        let ds = crate::dataset::load_dataset(
            &std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/rochdale.json"),
        )
        .unwrap();
        let sys = build_constraints(&ds.table, &ds.model, &[]).unwrap();
        let full = rref(&sys).unwrap();
        assert_eq!(full.pivot_rows.len(), full.rank());
        // reducing only the pivot rows reproduces the same reduced system
        let trimmed = ConstraintSystem {
            rows: full.pivot_rows.iter().map(|&i| sys.rows[i].clone()).collect(),
            column_cells: sys.column_cells.clone(),
        };
        let again = rref(&trimmed).unwrap();
        assert_eq!(again.bound_cells, full.bound_cells);
        assert_eq!(again.free_cells, full.free_cells);
        for r in 0..full.rank() {
            assert_eq!(again.rhs(r), full.rhs(r));
            for j in 0..full.num_free() {
                assert_eq!(again.coefficient(r, j), full.coefficient(r, j));
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn observed_tables_satisfy_their_own_reduction(
            dims in proptest::collection::vec(2usize..4, 2..=3),
            seed in proptest::prelude::any::<u64>(),
        ) {
            let schema = TableSchema::new(dims.clone()).unwrap();
            let m = schema.num_cells();
            // small deterministic counts derived from the seed
            let counts: Vec<i64> = (0..m).map(|i| {
                let x = seed
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add((i as u64).wrapping_mul(1442695040888963407));
                ((x >> 33) % 6) as i64
            }).collect();
            let t = Table::new(schema, counts).unwrap();
            let gens: Vec<Vec<usize>> = if dims.len() == 2 {
                vec![vec![0], vec![1]]
            } else {
                vec![vec![0, 1], vec![1, 2], vec![0, 2]]
            };
            let model = ModelSpec::new(t.schema(), gens).unwrap();
            let sys = build_constraints(&t, &model, &[]).unwrap();
            let r = rref(&sys).unwrap();
            proptest::prop_assert!(r.satisfied_by(t.counts()));
            let free_vals: Vec<i64> = r.free_cells.iter().map(|&c| t.counts()[c]).collect();
            let bound = r.back_substitute(&free_vals).unwrap();
            for (k, &cell) in r.bound_cells.iter().enumerate() {
                proptest::prop_assert_eq!(bound[k], t.counts()[cell]);
            }
            // rank does not depend on the column visit order
            let mut order: Vec<usize> = (0..sys.num_cols()).collect();
            order.reverse();
            let mut scrambled = RrefSystem::default();
            Reducer::new().reduce(&sys, Some(&order), &mut scrambled).unwrap();
            proptest::prop_assert_eq!(scrambled.rank(), r.rank());
            proptest::prop_assert!(scrambled.satisfied_by(t.counts()));
        }
    }
}
