//! Images of a leaf's cylinder points under a real-valued map, binned at a
//! resolution to see whether they fill an interval.

use super::GeometryError;
use crate::model::{Point, PerturbedMap, WALL};
use crate::symbolic::{LeafApprox, Symbol};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectionReport {
    pub resolution: f64,
    pub points: usize,
    /// Bins `[k·res, (k+1)·res)` between the smallest and largest image.
    pub bins: usize,
    pub hit: usize,
    pub hit_fraction: f64,
    /// Length of the longest run of consecutive hit bins.
    pub longest_run: f64,
    pub range: [f64; 2],
}

/// One point per cylinder of the leaf with `D_s ≤ resolution`, pushed forward onto
/// the leaf and mapped by `target`.
pub fn projection_interval_test(
    map: &PerturbedMap,
    leaf: &LeafApprox,
    target: &(dyn Fn(Point) -> f64 + Sync),
    resolution: f64,
) -> Result<ProjectionReport, GeometryError> {
    if !(resolution > 0.0 && resolution < 1.0) {
        return Err(GeometryError::Config(format!("resolution {resolution} must lie in (0,1)")));
    }
    let m = map.model();
    let base = Point::new(m.leaf_u(leaf), WALL, WALL);
    let h = 1e-6;
    let dw = (target(Point { w: base.w + h, ..base }) - target(Point { w: base.w - h, ..base })) / (2.0 * h);
    if !(dw.abs() >= 1e-8) {
        return Err(GeometryError::DegenerateMap(format!("|dP/dw| = {dw:e} at the leaf's wall")));
    }
    let fut_leaf = m.leaf_future(leaf, 48);
    let words = m.words_at_scale(resolution, Some(leaf.box_symbol()), 1);
    let mut values = Vec::with_capacity(words.len());
    for word in &words {
        let mut fut: Vec<Symbol> = word.letters().iter().rev().copied().collect();
        fut.extend_from_slice(&fut_leaf);
        let mut p = Point::new(m.u_of_future(&fut), WALL, WALL);
        for _ in 0..word.len() {
            p = map.apply(p)?;
        }
        values.push(target(p));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = (lo / resolution).floor() as i64;
    let bins = ((hi / resolution).floor() as i64 - first + 1) as usize;
    let mut hit = vec![false; bins];
    for v in &values {
        hit[((v / resolution).floor() as i64 - first) as usize] = true;
    }
    let n_hit = hit.iter().filter(|&&b| b).count();
    let mut run = 0usize;
    let mut best = 0usize;
    for &b in &hit {
        run = if b { run + 1 } else { 0 };
        best = best.max(run);
    }
    Ok(ProjectionReport {
        resolution,
        points: values.len(),
        bins,
        hit: n_hit,
        hit_fraction: n_hit as f64 / bins as f64,
        longest_run: best as f64 * resolution,
        range: [lo, hi],
    })
}
