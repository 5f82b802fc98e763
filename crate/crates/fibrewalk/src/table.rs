//! Multi-way contingency tables: schemas, lexicographic cell indexing,
//! marginal sums, per-cell bounds and hierarchical model generators.
//!
//! Cells are stored flat in lexicographic order with the *last* coordinate
//! varying fastest. Coordinates are one-based at the public boundary (files,
//! CLI, error messages); flat indices are zero-based everywhere.

use crate::{Error, Result};

/// Dimensions of a k-way table: `dims[v]` is the number of levels of
/// variable `v`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableSchema {
    dims: Vec<usize>,
}

impl TableSchema {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::BadSchema("a table needs at least one variable".into()));
        }
        if let Some(&d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::BadSchema(format!(
                "every variable needs at least two levels, got {d}"
            )));
        }
        Ok(TableSchema { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_vars(&self) -> usize {
        self.dims.len()
    }

    /// Total number of cells.
    pub fn num_cells(&self) -> usize {
        self.dims.iter().product()
    }

    /// Flat index of a one-based coordinate tuple; the last coordinate varies
    /// fastest.
    pub fn lex_index(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.dims.len() {
            return Err(Error::BadCoordinates(format!(
                "expected {} coordinates, got {}",
                self.dims.len(),
                coords.len()
            )));
        }
        let mut idx = 0;
        for (v, (&c, &d)) in coords.iter().zip(&self.dims).enumerate() {
            if c < 1 || c > d {
                return Err(Error::BadCoordinates(format!(
                    "coordinate {} of variable {} is outside 1..={}",
                    c,
                    v + 1,
                    d
                )));
            }
            idx = idx * d + (c - 1);
        }
        Ok(idx)
    }

    /// Inverse of [`lex_index`](Self::lex_index): one-based coordinates of a
    /// flat index.
    pub fn lex_cell(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.num_cells() {
            return Err(Error::BadCoordinates(format!(
                "cell index {index} outside 0..{}",
                self.num_cells()
            )));
        }
        let mut coords = vec![0; self.dims.len()];
        let mut rest = index;
        for v in (0..self.dims.len()).rev() {
            coords[v] = rest % self.dims[v] + 1;
            rest /= self.dims[v];
        }
        Ok(coords)
    }
}

/// An observed table: a schema plus one non-negative count per cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    schema: TableSchema,
    counts: Vec<i64>,
}

impl Table {
    pub fn new(schema: TableSchema, counts: Vec<i64>) -> Result<Self> {
        if counts.len() != schema.num_cells() {
            return Err(Error::BadTable(format!(
                "expected {} counts, got {}",
                schema.num_cells(),
                counts.len()
            )));
        }
        if let Some(&c) = counts.iter().find(|&&c| c < 0) {
            return Err(Error::BadTable(format!("negative cell count {c}")));
        }
        Ok(Table { schema, counts })
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn counts(&self) -> &[i64] {
        &self.counts
    }

    pub fn grand_total(&self) -> i64 {
        self.counts.iter().sum()
    }

    /// Marginal table over the variable subset `vars` (zero-based, strictly
    /// increasing). The empty subset yields the grand total as a single cell.
    pub fn marginal(&self, vars: &[usize]) -> Result<Marginal> {
        marginal_of(&self.schema, &self.counts, vars)
    }
}

/// Marginal sums over a subset of variables. Unlike [`Table`] this may have
/// zero variables (the grand total).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Marginal {
    pub vars: Vec<usize>,
    pub dims: Vec<usize>,
    pub sums: Vec<i64>,
}

impl Marginal {
    pub fn num_cells(&self) -> usize {
        self.sums.len()
    }
}

pub(crate) fn marginal_of(schema: &TableSchema, counts: &[i64], vars: &[usize]) -> Result<Marginal> {
    validate_var_subset(schema, vars)?;
    let dims: Vec<usize> = vars.iter().map(|&v| schema.dims()[v]).collect();
    let mut sums = vec![0i64; dims.iter().product::<usize>().max(1)];
    for (idx, &c) in counts.iter().enumerate() {
        sums[project_cell(schema, idx, vars)] += c;
    }
    Ok(Marginal { vars: vars.to_vec(), dims, sums })
}

/// Flat index within the marginal over `vars` that full-table cell `idx`
/// contributes to.
pub(crate) fn project_cell(schema: &TableSchema, idx: usize, vars: &[usize]) -> usize {
    let k = schema.num_vars();
    let mut coords = [0usize; 32];
    debug_assert!(k <= 32);
    let mut rest = idx;
    for v in (0..k).rev() {
        coords[v] = rest % schema.dims()[v];
        rest /= schema.dims()[v];
    }
    let mut out = 0;
    for &v in vars {
        out = out * schema.dims()[v] + coords[v];
    }
    out
}

fn validate_var_subset(schema: &TableSchema, vars: &[usize]) -> Result<()> {
    for w in vars.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::BadModel(
                "variable subsets must be strictly increasing".into(),
            ));
        }
    }
    if let Some(&v) = vars.iter().find(|&&v| v >= schema.num_vars()) {
        return Err(Error::BadModel(format!(
            "variable {} outside the schema (k = {})",
            v + 1,
            schema.num_vars()
        )));
    }
    Ok(())
}

/// Per-cell integer box constraints. A structural zero is a cell with
/// `lower = upper = 0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundsSpec {
    pub lower: Vec<i64>,
    pub upper: Vec<i64>,
}

impl BoundsSpec {
    /// Unconstrained boxes for a table with the given grand total: lower 0,
    /// upper the grand total.
    pub fn free(num_cells: usize, grand_total: i64) -> Self {
        BoundsSpec { lower: vec![0; num_cells], upper: vec![grand_total; num_cells] }
    }

    pub fn validate(&self, table: &Table) -> Result<()> {
        let m = table.schema().num_cells();
        if self.lower.len() != m || self.upper.len() != m {
            return Err(Error::BadBounds(format!(
                "bounds must have {m} entries, got {}/{}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for i in 0..m {
            if self.lower[i] < 0 || self.lower[i] > self.upper[i] {
                return Err(Error::BadBounds(format!(
                    "cell {}: invalid box [{}, {}]",
                    coord_str(table.schema(), i),
                    self.lower[i],
                    self.upper[i]
                )));
            }
            let c = table.counts()[i];
            if c < self.lower[i] || c > self.upper[i] {
                return Err(Error::CountOutsideBounds(format!(
                    "cell {}: observed count {} outside [{}, {}]",
                    coord_str(table.schema(), i),
                    c,
                    self.lower[i],
                    self.upper[i]
                )));
            }
        }
        Ok(())
    }

    pub fn is_structural_zero(&self, cell: usize) -> bool {
        self.lower[cell] == 0 && self.upper[cell] == 0
    }

    pub fn structural_zero_cells(&self) -> Vec<usize> {
        (0..self.lower.len()).filter(|&i| self.is_structural_zero(i)).collect()
    }
}

pub(crate) fn coord_str(schema: &TableSchema, idx: usize) -> String {
    match schema.lex_cell(idx) {
        Ok(c) => format!(
            "({})",
            c.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        ),
        Err(_) => format!("#{idx}"),
    }
}

/// Generating class of a hierarchical log-linear model: a list of variable
/// subsets (zero-based internally) whose marginals are the sufficient
/// statistics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    generators: Vec<Vec<usize>>,
}

impl ModelSpec {
    pub fn new(schema: &TableSchema, generators: Vec<Vec<usize>>) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::BadModel("a model needs at least one generator".into()));
        }
        for g in &generators {
            if g.is_empty() {
                return Err(Error::BadModel("empty generator".into()));
            }
            validate_var_subset(schema, g)?;
        }
        // a generator contained in another is redundant but harmless; reject
        // exact duplicates as a likely input mistake
        for (i, g) in generators.iter().enumerate() {
            if generators[..i].contains(g) {
                return Err(Error::BadModel(format!(
                    "duplicate generator {:?}",
                    g.iter().map(|v| v + 1).collect::<Vec<_>>()
                )));
            }
        }
        Ok(ModelSpec { generators })
    }

    /// All two-way interactions for a k-variable schema.
    pub fn all_two_way(schema: &TableSchema) -> Self {
        let k = schema.num_vars();
        let mut generators = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                generators.push(vec![i, j]);
            }
        }
        if generators.is_empty() {
            generators.push(vec![0]);
        }
        ModelSpec { generators }
    }

    pub fn generators(&self) -> &[Vec<usize>] {
        &self.generators
    }

    /// Downward closure of the generating class, including the empty set:
    /// the index sets of the interaction terms the model contains.
    pub fn term_sets(&self) -> Vec<Vec<usize>> {
        let mut seen = std::collections::BTreeSet::new();
        seen.insert(Vec::new());
        for g in &self.generators {
            // subsets via bitmask; generators are tiny in practice
            let n = g.len();
            assert!(n <= 24, "generator too large");
            for mask in 1u32..(1 << n) {
                let sub: Vec<usize> =
                    (0..n).filter(|&b| mask & (1 << b) != 0).map(|b| g[b]).collect();
                seen.insert(sub);
            }
        }
        seen.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema_454() -> TableSchema {
        TableSchema::new(vec![4, 5, 4]).unwrap()
    }

    #[test]
    fn lex_index_last_coordinate_fastest() {
        let s = schema_454();
        assert_eq!(s.lex_index(&[1, 1, 1]).unwrap(), 0);
        assert_eq!(s.lex_index(&[1, 1, 2]).unwrap(), 1);
        assert_eq!(s.lex_index(&[1, 2, 1]).unwrap(), 4);
        assert_eq!(s.lex_index(&[2, 1, 1]).unwrap(), 20);
        assert_eq!(s.lex_index(&[4, 5, 4]).unwrap(), 79);
    }

    #[test]
    fn lex_cell_inverts_lex_index() {
        let s = schema_454();
        for idx in 0..s.num_cells() {
            let c = s.lex_cell(idx).unwrap();
            assert_eq!(s.lex_index(&c).unwrap(), idx);
        }
    }

    #[test]
    fn bad_coordinates_are_rejected() {
        let s = schema_454();
        assert!(s.lex_index(&[0, 1, 1]).is_err());
        assert!(s.lex_index(&[1, 6, 1]).is_err());
        assert!(s.lex_index(&[1, 1]).is_err());
        assert!(s.lex_cell(80).is_err());
    }

    #[test]
    fn schema_validation() {
        assert!(TableSchema::new(vec![]).is_err());
        assert!(TableSchema::new(vec![3, 1]).is_err());
        assert!(TableSchema::new(vec![2]).is_ok());
    }

    #[test]
    fn marginal_sums_and_empty_subset() {
        let s = TableSchema::new(vec![2, 2]).unwrap();
        let t = Table::new(s, vec![1, 2, 3, 4]).unwrap();
        let rows = t.marginal(&[0]).unwrap();
        assert_eq!(rows.sums, vec![3, 7]);
        let cols = t.marginal(&[1]).unwrap();
        assert_eq!(cols.sums, vec![4, 6]);
        let total = t.marginal(&[]).unwrap();
        assert_eq!(total.sums, vec![10]);
        assert_eq!(total.num_cells(), 1);
    }

    #[test]
    fn marginal_of_marginal_is_nested() {
        // summing the (0,1) marginal over variable 1 matches the (0) marginal
        let s = TableSchema::new(vec![3, 2, 2]).unwrap();
        let counts: Vec<i64> = (0..12).map(|x| (x * 7 % 5) as i64).collect();
        let t = Table::new(s.clone(), counts).unwrap();
        let m01 = t.marginal(&[0, 1]).unwrap();
        let m0 = t.marginal(&[0]).unwrap();
        for a in 0..3 {
            let summed: i64 = (0..2).map(|b| m01.sums[a * 2 + b]).sum();
            assert_eq!(summed, m0.sums[a]);
        }
    }

    #[test]
    fn bounds_validation_catches_violations() {
        let s = TableSchema::new(vec![2, 2]).unwrap();
        let t = Table::new(s, vec![1, 0, 0, 1]).unwrap();
        let mut b = BoundsSpec::free(4, 2);
        b.validate(&t).unwrap();
        b.upper[0] = 0;
        let err = b.validate(&t).unwrap_err();
        assert!(matches!(err, Error::CountOutsideBounds(_)));
        b.upper[0] = 2;
        b.lower[1] = 3;
        assert!(matches!(b.validate(&t).unwrap_err(), Error::BadBounds(_)));
    }

    #[test]
    fn model_term_sets_close_downward() {
        let s = schema_454();
        let m = ModelSpec::new(&s, vec![vec![0, 1], vec![0, 2], vec![1, 2]]).unwrap();
        let terms = m.term_sets();
        // empty, three singletons, three pairs
        assert_eq!(terms.len(), 7);
        assert!(terms.contains(&vec![]));
        assert!(terms.contains(&vec![2]));
        assert!(terms.contains(&vec![1, 2]));
    }

    #[test]
    fn model_rejects_bad_generators() {
        let s = schema_454();
        assert!(ModelSpec::new(&s, vec![]).is_err());
        assert!(ModelSpec::new(&s, vec![vec![0, 0]]).is_err());
        assert!(ModelSpec::new(&s, vec![vec![0, 3]]).is_err());
        assert!(ModelSpec::new(&s, vec![vec![0], vec![0]]).is_err());
    }
}
