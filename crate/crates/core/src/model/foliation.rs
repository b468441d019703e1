//! Strong-stable direction, projection along the strong-stable foliation onto the
//! wall `s = ½`, and cone-field checks.

use super::{HorseshoeModel, ModelError, Point, PerturbedMap};
use crate::symbolic::{LeafApprox, Symbol};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Wall height inside every Markov box.
pub const WALL: f64 = 0.5;

/// Coordinate `x` on the wall of `leaf`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WallPoint {
    pub x: f64,
    pub leaf: LeafApprox,
}

/// Steps of forward matching needed for `(λss/λws)^N < 1e−13`.
pub fn matching_steps(model: &HorseshoeModel) -> usize {
    let r = model.max_rate_ratio();
    ((1e-13f64).ln() / r.ln()).ceil().clamp(8.0, 400.0) as usize
}

/// One step of an orbit whose current box is `fut[0]`; the image has future `fut[1..]`.
pub(crate) fn step(map: &PerturbedMap, fut: &[Symbol], w: f64, s: f64) -> Result<(f64, f64), ModelError> {
    let m = map.model();
    let c = fut[0];
    let mut nw = m.w_map(c, w, s);
    let ns = m.s_map(c, s);
    if !map.layers().is_empty() {
        nw += map.displacement(Some(&fut[1..]), Point::new(f64::NAN, nw, ns))?.0;
    }
    Ok((nw, ns))
}

/// `Δw_N / Π λ` for the pair `p = (w, s)` and `q = (w*, ½)` sharing the future `fut`.
fn scaled_gap(map: &PerturbedMap, fut: &[Symbol], steps: usize, w: f64, s: f64, wstar: f64) -> Result<f64, ModelError> {
    let m = map.model();
    let perturbed = !map.layers().is_empty();
    let (mut pw, mut ps) = (w, s);
    let (mut dw, mut ds) = (wstar - w, WALL - s);
    let mut scale = 1.0;
    for k in 0..steps {
        let c = fut[k];
        let b = m.branch(c);
        let mut nw = m.w_map(c, pw, ps);
        let ns = m.s_map(c, ps);
        let mut ndw = m.w_map_difference(c, pw, ps, dw, ds);
        let nds = b.rate_ss * ds;
        if perturbed {
            let rest = &fut[k + 1..];
            let dp = map.displacement(Some(rest), Point::new(f64::NAN, nw, ns))?.0;
            let dq = map.displacement(Some(rest), Point::new(f64::NAN, nw + ndw, ns + nds))?.0;
            nw += dp;
            ndw += dq - dp;
        }
        pw = nw;
        ps = ns;
        dw = ndw;
        ds = nds;
        scale *= b.rate_ws;
    }
    Ok(dw / scale)
}

/// Projection by forward orbit matching, for a point on a leaf with future `fut`.
pub fn project_ss_numeric(map: &PerturbedMap, fut: &[Symbol], w: f64, s: f64) -> Result<f64, ModelError> {
    let steps = matching_steps(map.model());
    if fut.len() < steps + map.max_leaf_len() + 1 {
        return Err(ModelError::Domain("future too short for the projection".into()));
    }
    let g = |x: f64| scaled_gap(map, fut, steps, w, s, x);
    let mut a = w;
    let mut fa = g(a)?;
    if fa == 0.0 {
        return Ok(a);
    }
    let mut b = w - fa;
    let mut fb = g(b)?;
    for _ in 0..40 {
        if fb == 0.0 || (b - a).abs() < 1e-16 {
            break;
        }
        let next = b - fb * (b - a) / (fb - fa);
        if !next.is_finite() {
            return Err(ModelError::FoliationEscape(next));
        }
        a = b;
        fa = fb;
        b = next;
        fb = g(b)?;
        if fb.abs() < 1e-15 {
            break;
        }
    }
    if !(-0.5..=1.5).contains(&b) {
        return Err(ModelError::FoliationEscape(b));
    }
    Ok(b)
}

/// `Π_{θ⁻}(z)` for `z = (w, s)` on the leaf.
pub fn project_ss(map: &PerturbedMap, leaf: &LeafApprox, w: f64, s: f64) -> Result<WallPoint, ModelError> {
    let m = map.model();
    let x = if map.is_unperturbed() && m.is_affine() {
        w
    } else {
        let fut = m.leaf_future(leaf, matching_steps(m) + map.max_leaf_len() + 2);
        project_ss_numeric(map, &fut, w, s)?
    };
    Ok(WallPoint { x, leaf: leaf.clone() })
}

fn solve_stable(j: &[[f64; 3]; 3], v: [f64; 2]) -> [f64; 2] {
    // stable block [[a, b], [0, d]] in (w, s)
    let (a, b, d) = (j[1][1], j[1][2], j[2][2]);
    let vs = v[1] / d;
    [(v[0] - b * vs) / a, vs]
}

/// `E^ss(p)` from `depth` forward steps pulled back by `Df⁻¹`; returns the unit
/// vector and the error scale `(λss/λws)^depth`.
pub fn strong_stable_direction(map: &PerturbedMap, p: Point, depth: usize) -> Result<([f64; 3], f64), ModelError> {
    let mut orbit = Vec::with_capacity(depth);
    let mut x = p;
    for k in 0..depth {
        orbit.push(x);
        x = map.apply(x).map_err(|_| ModelError::OrbitEscape(k))?;
    }
    let mut v = [0.0, 1.0];
    for (k, x) in orbit.iter().enumerate().rev() {
        let j = map.jacobian(*x).map_err(|_| ModelError::OrbitEscape(k))?;
        v = solve_stable(&j, v);
        let n = v[0].hypot(v[1]);
        v = [v[0] / n, v[1] / n];
    }
    if v[1] < 0.0 {
        v = [-v[0], -v[1]];
    }
    Ok(([0.0, v[0], v[1]], map.model().max_rate_ratio().powi(depth as i32)))
}

#[derive(Clone, Debug, Serialize)]
pub struct ConeReport {
    /// Worst `|v_w|/|v_s|` after pulling back the ss-cone boundary.
    pub ss_backward: f64,
    /// Worst stable/unstable slope after pushing the unstable cone forward.
    pub u_forward: f64,
    /// Worst `|v_s|/|v_w|` after pushing the ws-cone forward.
    pub ws_forward: f64,
    pub checked: usize,
}

/// Cones of half-width ½ along random orbit segments.
pub fn cone_check(map: &PerturbedMap, samples: usize, steps: usize, seed: u64) -> Result<ConeReport, ModelError> {
    let m = map.model();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ConeReport { ss_backward: 0.0, u_forward: 0.0, ws_forward: 0.0, checked: 0 };
    for _ in 0..samples {
        let i = rng.gen_range(0..m.n_symbols());
        let [a, b] = m.branches()[i].u_interval;
        let mut x = Point::new(rng.gen_range(a..b), rng.gen(), rng.gen());
        for _ in 0..steps {
            let j = map.jacobian(x)?;
            for sign in [-1.0, 1.0] {
                let v = solve_stable(&j, [0.5 * sign, 1.0]);
                rep.ss_backward = rep.ss_backward.max((v[0] / v[1]).abs());
                let fu = [1.0, 0.5 * sign, 0.5];
                let img: Vec<f64> = (0..3).map(|r| (0..3).map(|c| j[r][c] * fu[c]).sum()).collect();
                rep.u_forward = rep.u_forward.max(img[1].abs().max(img[2].abs()) / img[0].abs());
                let fw = [0.0, 1.0, 0.5 * sign];
                let iw: f64 = j[1][1] * fw[1] + j[1][2] * fw[2];
                let is: f64 = j[2][2] * fw[2];
                rep.ws_forward = rep.ws_forward.max((is / iw).abs());
            }
            rep.checked += 1;
            match map.apply(x) {
                Ok(y) if m.box_of_u(y.u).is_some() => x = y,
                _ => break,
            }
        }
    }
    let worst = rep.ss_backward.max(rep.u_forward).max(rep.ws_forward);
    if worst >= 0.5 {
        return Err(ModelError::SplittingLost(format!("cone image slope {worst:.4} reaches the cone boundary")));
    }
    Ok(rep)
}
