//! The linear constraint system `A n = b` describing a reference set: one
//! 0/1 row per marginal cell of every model generator, plus one unit row per
//! cell whose value is already forced. Rows are stored sparsely as sorted
//! column lists.

use crate::table::{project_cell, ModelSpec, Table};
use crate::{Error, Result};

/// Where a constraint row came from. Retained for diagnostics and for
/// substituting fixed cells without losing track of the original shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RowKind {
    /// Marginal cell `marginal_cell` (flat, within the marginal) of
    /// `generator` (index into the model's generating class).
    Marginal { generator: usize, marginal_cell: usize },
    /// A cell pinned to a known value.
    FixedCell { cell: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintRow {
    /// Column positions with coefficient one, strictly increasing.
    pub cols: Vec<usize>,
    pub rhs: i64,
    pub kind: RowKind,
}

/// A consistent-by-construction constraint system. `column_cells[j]` is the
/// original flat cell index occupying column `j`, so systems stay meaningful
/// under column reordering and after substituting fixed cells away.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintSystem {
    pub rows: Vec<ConstraintRow>,
    pub column_cells: Vec<usize>,
}

impl ConstraintSystem {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.column_cells.len()
    }

    /// Residuals `A x - b`; all zeros iff `x` (indexed by column) satisfies
    /// every row exactly.
    pub fn residuals(&self, x: &[i64]) -> Vec<i64> {
        assert_eq!(x.len(), self.num_cols());
        self.rows
            .iter()
            .map(|r| r.cols.iter().map(|&c| x[c]).sum::<i64>() - r.rhs)
            .collect()
    }

    pub fn is_satisfied_by(&self, x: &[i64]) -> bool {
        self.residuals(x).iter().all(|&r| r == 0)
    }
}

/// Builds the constraint system for `table` under `model`: the rows fix every
/// marginal of every generator at its observed value, then pin each cell in
/// `fixed` to its known value.
pub fn build_constraints(
    table: &Table,
    model: &ModelSpec,
    fixed: &[(usize, i64)],
) -> Result<ConstraintSystem> {
    let schema = table.schema();
    let m = schema.num_cells();
    let mut rows = Vec::new();

    for (gi, gen) in model.generators().iter().enumerate() {
        let marg = table.marginal(gen)?;
        let mut cols_per_cell: Vec<Vec<usize>> = vec![Vec::new(); marg.num_cells()];
        for idx in 0..m {
            cols_per_cell[project_cell(schema, idx, gen)].push(idx);
        }
        for (mc, cols) in cols_per_cell.into_iter().enumerate() {
            rows.push(ConstraintRow {
                cols,
                rhs: marg.sums[mc],
                kind: RowKind::Marginal { generator: gi, marginal_cell: mc },
            });
        }
    }

    for &(cell, value) in fixed {
        if cell >= m {
            return Err(Error::BadCoordinates(format!(
                "fixed cell index {cell} outside 0..{m}"
            )));
        }
        rows.push(ConstraintRow { cols: vec![cell], rhs: value, kind: RowKind::FixedCell { cell } });
    }

    Ok(ConstraintSystem { rows, column_cells: (0..m).collect() })
}

/// Returns the system with columns permuted: new column `j` is old column
/// `order[j]`.
pub fn reorder_columns(system: &ConstraintSystem, order: &[usize]) -> Result<ConstraintSystem> {
    let n = system.num_cols();
    if order.len() != n {
        return Err(Error::NotPermutation(format!(
            "order has {} entries for {} columns",
            order.len(),
            n
        )));
    }
    let mut pos = vec![usize::MAX; n];
    for (j, &old) in order.iter().enumerate() {
        if old >= n || pos[old] != usize::MAX {
            return Err(Error::NotPermutation(format!(
                "entry {old} repeated or out of range"
            )));
        }
        pos[old] = j;
    }
    let rows = system
        .rows
        .iter()
        .map(|r| {
            let mut cols: Vec<usize> = r.cols.iter().map(|&c| pos[c]).collect();
            cols.sort_unstable();
            ConstraintRow { cols, rhs: r.rhs, kind: r.kind.clone() }
        })
        .collect();
    let column_cells = order.iter().map(|&old| system.column_cells[old]).collect();
    Ok(ConstraintSystem { rows, column_cells })
}

/// Substitutes known cell values out of the system: dropped columns, adjusted
/// right-hand sides, and removal of rows that become empty. An empty row with
/// a non-zero remaining rhs means no table matches the fixed values.
pub fn substitute_fixed(
    system: &ConstraintSystem,
    fixed: &[(usize, i64)],
) -> Result<ConstraintSystem> {
    let n = system.num_cols();
    let mut value_of_col: Vec<Option<i64>> = vec![None; n];
    let mut cell_to_col = std::collections::HashMap::new();
    for (j, &cell) in system.column_cells.iter().enumerate() {
        cell_to_col.insert(cell, j);
    }
    for &(cell, v) in fixed {
        let &col = cell_to_col
            .get(&cell)
            .ok_or_else(|| Error::BadCoordinates(format!("cell {cell} not in the system")))?;
        value_of_col[col] = Some(v);
    }

    let mut new_pos = vec![usize::MAX; n];
    let mut column_cells = Vec::new();
    for j in 0..n {
        if value_of_col[j].is_none() {
            new_pos[j] = column_cells.len();
            column_cells.push(system.column_cells[j]);
        }
    }

    let mut rows = Vec::new();
    for r in &system.rows {
        if matches!(r.kind, RowKind::FixedCell { .. }) {
            continue;
        }
        let mut rhs = r.rhs;
        let mut cols = Vec::with_capacity(r.cols.len());
        for &c in &r.cols {
            match value_of_col[c] {
                Some(v) => rhs -= v,
                None => cols.push(new_pos[c]),
            }
        }
        if cols.is_empty() {
            if rhs != 0 {
                return Err(Error::InconsistentSystem(format!(
                    "fixed values contradict a marginal constraint by {rhs}"
                )));
            }
            continue;
        }
        rows.push(ConstraintRow { cols, rhs, kind: r.kind.clone() });
    }

    Ok(ConstraintSystem { rows, column_cells })
}
