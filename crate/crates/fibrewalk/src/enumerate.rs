//! Exhaustive enumeration of small fibers.
//!
//! A depth-first search over the non-fixed cells in lexicographic order. At
//! each depth the current cell's integer range is recomputed under the pins
//! accumulated so far, so branches that cannot lead to a valid table are cut
//! as soon as a range collapses. Every leaf is a complete table of the fiber.
//!
//! The search re-probes a cell before each pinned value: probing is cheap
//! thanks to warm starts, and it keeps the interpolation snapshot of the pin
//! mechanism coherent after deeper levels have moved the working point.

use crate::lp::FiberLp;
use crate::sampler::WalkContext;
use crate::{Error, Result};

/// Visits every table of the fiber, aborting once more than `limit` tables
/// have been seen. Returns the number of tables.
pub fn enumerate_fiber(
    ctx: &WalkContext,
    limit: usize,
    mut visit: impl FnMut(&[i64]),
) -> Result<usize> {
    let mut lp = FiberLp::new();
    lp.rebuild(ctx.sys, ctx.rows, |c| ctx.bounds[c]);
    if let Some(rows) = ctx.tighten {
        lp.attach_rows(rows);
    }
    lp.set_anchor(ctx.anchor);
    let cells = ctx.walk_cells();
    let mut table = vec![0i64; ctx.num_cells()];
    for &(c, v) in ctx.fixed {
        table[c] = v;
    }
    let mut count = 0usize;
    descend(&mut lp, &cells, 0, &mut table, limit, &mut count, &mut visit)?;
    Ok(count)
}

/// Collects the fiber into memory; convenient for tests and tiny cases.
pub fn collect_fiber(ctx: &WalkContext, limit: usize) -> Result<Vec<Vec<i64>>> {
    let mut out = Vec::new();
    enumerate_fiber(ctx, limit, |t| out.push(t.to_vec()))?;
    Ok(out)
}

fn descend(
    lp: &mut FiberLp,
    cells: &[usize],
    depth: usize,
    table: &mut [i64],
    limit: usize,
    count: &mut usize,
    visit: &mut impl FnMut(&[i64]),
) -> Result<()> {
    if depth == cells.len() {
        *count += 1;
        if *count > limit {
            return Err(Error::EnumerationOverflow(limit));
        }
        visit(table);
        return Ok(());
    }
    let cell = cells[depth];
    let range = lp.probe(cell)?;
    if range.is_empty() {
        return Ok(());
    }
    let pin_depth = lp.num_pins();
    for v in range.lo_int..=range.hi_int {
        if v > range.lo_int {
            // refresh the interpolation snapshot; the range itself is stable
            let again = lp.probe(cell)?;
            debug_assert_eq!((again.lo_int, again.hi_int), (range.lo_int, range.hi_int));
        }
        lp.pin(cell, v);
        table[cell] = v;
        descend(lp, cells, depth + 1, table, limit, count, visit)?;
        lp.pop_pins_to(pin_depth);
    }
    Ok(())
}
