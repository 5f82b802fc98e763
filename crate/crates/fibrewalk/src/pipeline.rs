//! Fiber setup: from a dataset to a ready-to-sample reference set.
//!
//! Building a [`Fiber`] performs, in order: constraint assembly from the
//! model's generator marginals and explicitly fixed cells, an exact reduction
//! to find the system's rank, global per-cell integer bounds over the linear
//! relaxation, discovery of *forced* cells (bounds met from both sides),
//! substitution of all fixed cells out of the system, and a final reduction
//! of the remaining sampling system trimmed to an independent row basis.
//!
//! Samplers receive the trimmed system: its row space equals the full
//! system's, so reductions under any column order agree, while per-iteration
//! eliminations touch only rank-many rows.

use crate::constraint::{build_constraints, substitute_fixed, ConstraintSystem};
use crate::dataset::Dataset;
use crate::lp::global_cell_bounds;
use crate::rref::{rref, RrefSystem};
use crate::sampler::WalkContext;
use crate::{Error, Result};

/// A fully prepared reference set of tables: the observed table, the global
/// integer box of every cell, the cells pinned by bounds or by the
/// constraints themselves, and the reduced sampling system over the rest.
pub struct Fiber {
    pub dataset: Dataset,
    /// Global integer bounds per cell, fixed cells included as point boxes.
    pub bounds: Vec<(i64, i64)>,
    /// Cells with a single admissible value, with that value.
    pub fixed: Vec<(usize, i64)>,
    /// Sampling system over non-fixed cells, trimmed to a row basis.
    pub system: ConstraintSystem,
    /// The sampling system before trimming. Dependent rows add no rank, but
    /// during walks each row tightens per-cell intervals independently, so
    /// keeping them all makes the cheap bound checks much stronger.
    pub full_system: ConstraintSystem,
    /// Canonical reduction of the sampling system.
    pub reduced: RrefSystem,
}

impl Fiber {
    pub fn build(dataset: Dataset) -> Result<Fiber> {
        let table = &dataset.table;
        let bounds_spec = &dataset.bounds;
        let num_cells = table.schema().num_cells();

        // cells the input data already pins to a point
        let pre_fixed: Vec<(usize, i64)> = (0..num_cells)
            .filter(|&c| bounds_spec.lower[c] == bounds_spec.upper[c])
            .map(|c| (c, bounds_spec.lower[c]))
            .collect();

        // global integer bounds over the relaxation of the full system
        let full_sys = build_constraints(table, &dataset.model, &pre_fixed)?;
        let full_reduced = rref(&full_sys)?;
        debug_assert!(full_reduced.satisfied_by(table.counts()));
        let per_cell = global_cell_bounds(
            &full_reduced,
            &full_sys,
            |c| (bounds_spec.lower[c], bounds_spec.upper[c]),
            table.counts(),
        )?;
        let mut bounds = vec![(0i64, 0i64); num_cells];
        for &(c, lo, hi) in &per_cell {
            bounds[c] = (lo, hi);
        }

        // forced cells join the fixed set, then leave the system entirely
        let fixed: Vec<(usize, i64)> = bounds
            .iter()
            .enumerate()
            .filter(|(_, &(lo, hi))| lo == hi)
            .map(|(c, &(lo, _))| (c, lo))
            .collect();
        let marginal_sys = build_constraints(table, &dataset.model, &[])?;
        let sampling_full = substitute_fixed(&marginal_sys, &fixed)?;
        let reduced_full = rref(&sampling_full)?;

        // an independent row basis suffices and reduces faster
        let system = ConstraintSystem {
            rows: reduced_full.pivot_rows.iter().map(|&i| sampling_full.rows[i].clone()).collect(),
            column_cells: sampling_full.column_cells.clone(),
        };
        let reduced = rref(&system)?;
        debug_assert_eq!(reduced.free_cells, reduced_full.free_cells);
        debug_assert!(reduced.satisfied_by(table.counts()));

        Ok(Fiber { dataset, bounds, fixed, system, full_system: sampling_full, reduced })
    }

    pub fn num_cells(&self) -> usize {
        self.dataset.table.schema().num_cells()
    }

    /// Number of free cells of the sampling system; zero means the fiber
    /// holds only the observed table.
    pub fn num_free(&self) -> usize {
        self.reduced.num_free()
    }

    pub fn observed(&self) -> &[i64] {
        self.dataset.table.counts()
    }

    pub fn walk_context(&self) -> WalkContext<'_> {
        WalkContext {
            sys: &self.reduced,
            rows: &self.system,
            bounds: &self.bounds,
            fixed: &self.fixed,
            anchor: self.observed(),
            tighten: Some(&self.full_system),
        }
    }

    /// Errors out when the sampling system has no freedom left.
    pub fn require_non_singleton(&self) -> Result<()> {
        if self.num_free() == 0 {
            return Err(Error::SingletonFiber(
                "every cell is determined by the constraints; the observed table is the whole fiber"
                    .into(),
            ));
        }
        Ok(())
    }
}
