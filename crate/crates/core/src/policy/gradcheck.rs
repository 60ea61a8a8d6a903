//! Central finite-difference comparison for hand-derived gradients.

use rand::Rng;

use super::PolicyParams;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Magnitude below which differences are judged absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error over `n` coordinates drawn evenly from every
/// parameter block (embeddings, start row, trunk, heads).
pub fn max_rel_error<R: Rng + ?Sized>(
    params: &PolicyParams,
    analytic: &PolicyParams,
    n: usize,
    rng: &mut R,
    f: impl Fn(&PolicyParams) -> f64,
) -> f64 {
    let s = params.shape();
    let blocks = [
        (s.emb(), s.start()),
        (s.start(), s.w1()),
        (s.w1(), s.b1()),
        (s.b1(), s.a()),
        (s.a(), s.d()),
        (s.d(), s.len()),
    ];
    let mut worst: f64 = 0.0;
    let mut q = params.clone();
    for i in 0..n {
        let (lo, hi) = blocks[i % blocks.len()];
        let k = rng.random_range(lo..hi);
        let orig = q.data[k];
        q.data[k] = orig + STEP;
        let up = f(&q);
        q.data[k] = orig - STEP;
        let down = f(&q);
        q.data[k] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(rel_error(analytic.data[k], numeric));
    }
    worst
}
