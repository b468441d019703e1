//! Chasing almost strong-stable curves through the inverse branches while their
//! wall crossing stays in `K`.

use super::GeometryError;
use crate::model::{Point, PerturbedMap, WALL};
use crate::stacking::CandidateK;
use crate::symbolic::{LeafApprox, Symbol};
use serde::{Deserialize, Serialize};

/// Graph `w = w(s)` over `s ∈ [0, 1]`, as nodes `(w, s)` with increasing `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub nodes: Vec<[f64; 2]>,
}

impl Curve {
    /// Straight curve crossing the wall at `x` with `dw/ds = slope`.
    pub fn line(x: f64, slope: f64, n: usize) -> Self {
        let n = n.max(2);
        let nodes = (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                [x + slope * (s - WALL), s]
            })
            .collect();
        Self { nodes }
    }

    pub fn w_at(&self, s: f64) -> f64 {
        let n = &self.nodes;
        let i = n.partition_point(|p| p[1] < s).clamp(1, n.len() - 1);
        let (a, b) = (n[i - 1], n[i]);
        if b[1] == a[1] {
            return a[0];
        }
        a[0] + (b[0] - a[0]) * (s - a[1]) / (b[1] - a[1])
    }

    /// Largest `|Δw/Δs|` between consecutive nodes.
    pub fn slope(&self) -> f64 {
        self.nodes
            .windows(2)
            .filter(|p| p[1][1] > p[0][1])
            .map(|p| ((p[1][0] - p[0][0]) / (p[1][1] - p[0][1])).abs())
            .fold(0.0, f64::max)
    }

    fn resample(&self, lo: f64, hi: f64, n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|i| {
                let s = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                [self.w_at(s), s]
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChaseResult {
    /// One-based letters in the order they were chosen.
    pub itinerary: Vec<usize>,
    /// Wall crossing after each step.
    pub crossings: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Forward images of the final wall crossing; the last lies on the input curve.
    pub limit: Point,
    /// Boxes visited by the forward orbit of the limit point, one-based.
    pub forward_boxes: Vec<usize>,
    /// `max(D_s, Π λss)` of the nested box.
    pub box_diameter: f64,
    /// Distance in `w` of the limit point from the input curve.
    pub curve_error: f64,
}

fn pull_back(map: &PerturbedMap, c: &Curve, u: f64, a: Symbol, future: &[Symbol], n: usize) -> Option<Curve> {
    let [s0, s1] = map.model().branch(a).slab();
    let mut nodes = Vec::with_capacity(n);
    for p in c.resample(s0, s1, n) {
        let x = map.apply_inverse_along(Point::new(u, p[0], p[1]), a, Some(future)).ok()?;
        nodes.push([x.w, x.s]);
    }
    nodes.sort_by(|a, b| a[1].total_cmp(&b[1]));
    Some(Curve { nodes })
}

/// Greedy chase: at each depth the largest admissible letter whose pulled-back
/// curve crosses the wall inside `K`.
pub fn blender_curve_chase(
    map: &PerturbedMap,
    k: &CandidateK,
    leaf: &LeafApprox,
    curve: &Curve,
    max_depth: usize,
) -> Result<ChaseResult, GeometryError> {
    let m = map.model();
    if curve.nodes.len() < 2 {
        return Err(GeometryError::Config("curve needs at least two nodes".into()));
    }
    let n_nodes = curve.nodes.len();
    let mut letters = leaf.suffix.letters().to_vec();
    let mut future = m.leaf_future(leaf, map.max_leaf_len() + leaf.depth() + 2);
    let mut u = m.leaf_u(leaf);
    let mut cur = curve.clone();
    let mut itinerary = Vec::with_capacity(max_depth);
    let mut crossings = Vec::with_capacity(max_depth);
    let mut slopes = vec![curve.slope()];
    for depth in 1..=max_depth {
        let head = future[0];
        let mut chosen = None;
        for a in (0..m.n_symbols() as Symbol).rev() {
            if !m.subshift().allows(a, head) {
                continue;
            }
            let Some(next) = pull_back(map, &cur, u, a, &future, n_nodes) else { continue };
            let x = next.w_at(WALL);
            let mut ext = letters.clone();
            ext.push(a);
            if k.get(&ext).is_some_and(|set| set.depth(x) > 0.0) {
                chosen = Some((a, next, x, ext));
                break;
            }
        }
        let Some((a, next, x, ext)) = chosen else { return Err(GeometryError::ChaseFailed(depth)) };
        u = m.u_inverse(a, u);
        future.insert(0, a);
        letters = ext;
        itinerary.push(a as usize + 1);
        crossings.push(x);
        slopes.push(next.slope());
        cur = next;
    }
    let mut p = Point::new(u, cur.w_at(WALL), WALL);
    let mut forward_boxes = Vec::with_capacity(max_depth);
    for _ in 0..max_depth {
        let b = m.box_of_u(p.u).ok_or(crate::model::ModelError::OutsideDomain(p.u, p.w, p.s))?;
        forward_boxes.push(b as usize + 1);
        p = map.apply(p)?;
    }
    let fw: Vec<Symbol> = itinerary.iter().rev().map(|&c| (c - 1) as Symbol).collect();
    let ss: f64 = fw.iter().map(|&c| m.branch(c).rate_ss).product();
    let box_diameter = m.ds(&fw).max(ss);
    let curve_error = (p.w - curve.w_at(p.s)).abs();
    Ok(ChaseResult { itinerary, crossings, slopes, limit: p, forward_boxes, box_diameter, curve_error })
}
