use std::time::Instant;

use fibrewalk::gdist::estimate_prefix_distribution;
use fibrewalk::mcmc::{run_chain_with, McmcOptions, TargetKind};
use fibrewalk::pipeline::Fiber;
use fibrewalk::sampler::CellDist;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let path = std::env::args().nth(1).unwrap_or("data/nber.json".into());
    let steps: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let gfit_iters: u64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(200);

    let fiber = Fiber::build(fibrewalk::load_dataset(std::path::Path::new(&path)).unwrap()).unwrap();
    println!("free cells: {}", fiber.num_free());

    let t0 = Instant::now();
    let fit = estimate_prefix_distribution(&fiber, CellDist::Reciprocal, gfit_iters, 7).unwrap();
    println!(
        "gfit {gfit_iters} iters in {:.1?} ({:.1} ms/iter), E[updates]={:.2}",
        t0.elapsed(),
        t0.elapsed().as_secs_f64() * 1e3 / gfit_iters as f64,
        fit.distribution.expected_updates(fiber.num_free())
    );

    let opts = McmcOptions {
        iterations: steps,
        burn_in: 0,
        batches: 1,
        target: TargetKind::Hypergeometric,
        dist: CellDist::Reciprocal,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c0 = fibrewalk::lp::LP_CALLS.load(std::sync::atomic::Ordering::Relaxed);
    let p0 = fibrewalk::lp::LP_PIVOTS.load(std::sync::atomic::Ordering::Relaxed);
    let e0 = fibrewalk::lp::LP_ELIMS.load(std::sync::atomic::Ordering::Relaxed);
    let z0 = fibrewalk::lp::LP_ROW_NNZ.load(std::sync::atomic::Ordering::Relaxed);
    let d0 = fibrewalk::lp::LP_DEGEN.load(std::sync::atomic::Ordering::Relaxed);
    let pr0 = fibrewalk::lp::LP_PROBES.load(std::sync::atomic::Ordering::Relaxed);
    let w0 = fibrewalk::lp::LP_PROBES_W0.load(std::sync::atomic::Ordering::Relaxed);
    let tb0: Vec<u64> = [
        &fibrewalk::lp::T_REBUILD,
        &fibrewalk::lp::T_TIGHTEN,
        &fibrewalk::lp::T_OPT,
        &fibrewalk::lp::T_PRICE,
        &fibrewalk::lp::T_FTRAN,
        &fibrewalk::lp::T_PIVOT,
    ]
    .iter()
    .map(|c| c.load(std::sync::atomic::Ordering::Relaxed))
    .collect();
    let t0 = Instant::now();
    let stats = run_chain_with(&fiber, &opts, fit.distribution, &mut rng, |_, _| {}).unwrap();
    let dt = t0.elapsed();
    println!(
        "{steps} steps in {:.1?} ({:.3} ms/step), acceptance {:.3}, walk failures {:.3}",
        dt,
        dt.as_secs_f64() * 1e3 / steps as f64,
        stats.acceptance_rate(),
        stats.walk_failures as f64 / stats.proposals as f64
    );
    let calls = fibrewalk::lp::LP_CALLS.load(std::sync::atomic::Ordering::Relaxed) - c0;
    let pivots = fibrewalk::lp::LP_PIVOTS.load(std::sync::atomic::Ordering::Relaxed) - p0;
    let elims = fibrewalk::lp::LP_ELIMS.load(std::sync::atomic::Ordering::Relaxed) - e0;
    let nnz = fibrewalk::lp::LP_ROW_NNZ.load(std::sync::atomic::Ordering::Relaxed) - z0;
    let degen = fibrewalk::lp::LP_DEGEN.load(std::sync::atomic::Ordering::Relaxed) - d0;
    println!(
        "lp: {:.1} optimize calls/step, {:.1} pivot loops/call, {:.1} elims/call, {:.1} nnz/pivot-row, {:.2} degen frac",
        calls as f64 / steps as f64,
        pivots as f64 / calls as f64,
        elims as f64 / calls as f64,
        nnz as f64 / elims.max(1) as f64,
        degen as f64 / elims.max(1) as f64
    );
    let probes = fibrewalk::lp::LP_PROBES.load(std::sync::atomic::Ordering::Relaxed) - pr0;
    let width0 = fibrewalk::lp::LP_PROBES_W0.load(std::sync::atomic::Ordering::Relaxed) - w0;
    println!(
        "probes: {:.1}/step, width-0 fraction {:.3}",
        probes as f64 / steps as f64,
        width0 as f64 / probes.max(1) as f64
    );
    let ms = |c: &std::sync::atomic::AtomicU64, base: u64| {
        (c.load(std::sync::atomic::Ordering::Relaxed) - base) as f64 / 1e6 / steps as f64
    };
    println!(
        "time/step: rebuild {:.3} ms, tighten {:.3} ms, opt {:.3} ms (price {:.3}, ftran {:.3}, pivot {:.3})",
        ms(&fibrewalk::lp::T_REBUILD, tb0[0]),
        ms(&fibrewalk::lp::T_TIGHTEN, tb0[1]),
        ms(&fibrewalk::lp::T_OPT, tb0[2]),
        ms(&fibrewalk::lp::T_PRICE, tb0[3]),
        ms(&fibrewalk::lp::T_FTRAN, tb0[4]),
        ms(&fibrewalk::lp::T_PIVOT, tb0[5]),
    );
}
// profiling appendix: dump LP counter totals
