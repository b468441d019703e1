//! Skew horseshoes on the unit cube `(u, w, s)`: `u` unstable, `w` weak stable,
//! `s` strong stable. Branch `i` acts on the Markov box `P_i = U_i × [0,1]²` by
//!
//! ```text
//! u ↦ lo_i + μ_i (u − a_i),   w ↦ λ_i w + t_i + N(w, s),   s ↦ λss_i s + q_i
//! ```
//!
//! with an optional nonlinearity `N(w,s) = λ_i w(1−w)(κ_w + κ_s(s − ½))` that fixes
//! the `w` endpoints but bends every deeper cylinder.

mod foliation;
mod perturb;

pub use foliation::{cone_check, matching_steps, project_ss, project_ss_numeric, strong_stable_direction, ConeReport, WallPoint, WALL};
pub(crate) use foliation::step as symbolic_step;
pub use perturb::{BlockSpec, Layer, PerturbationFamily, PerturbedMap, Trie};

use crate::symbolic::{LeafApprox, Orientation, Symbol, TransitionMatrix, Word};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack used for membership tests on box and slab boundaries.
pub const EDGE_TOL: f64 = 1e-12;

/// Depth of the canonical continuation used to place a leaf representative.
const REP_DEPTH: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("point ({0}, {1}, {2}) outside every Markov box")]
    OutsideDomain(f64, f64, f64),
    #[error("no preimage of the point in branch {0}")]
    BranchError(usize),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("orbit left the domain after {0} steps")]
    OrbitEscape(usize),
    #[error("strong-stable projection escaped the box (w* = {0})")]
    FoliationEscape(f64),
    #[error("blocks do not partition the symbol space: {0}")]
    PartitionError(String),
    #[error("sharp splitting lost: {0}")]
    SplittingLost(String),
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Symbolic(#[from] crate::symbolic::SymbolicError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub u: f64,
    pub w: f64,
    pub s: f64,
}

impl Point {
    pub fn new(u: f64, w: f64, s: f64) -> Self {
        Self { u, w, s }
    }

    pub fn dist_inf(&self, o: &Point) -> f64 {
        (self.u - o.u).abs().max((self.w - o.w).abs()).max((self.s - o.s).abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeBox {
    pub u: [f64; 2],
    pub w: [f64; 2],
    pub s: [f64; 2],
}

impl CubeBox {
    pub fn unit() -> Self {
        Self { u: [0.0, 1.0], w: [0.0, 1.0], s: [0.0, 1.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub u_interval: [f64; 2],
    pub rate_u: f64,
    #[serde(default)]
    pub u_image_lo: f64,
    pub rate_ws: f64,
    pub t: f64,
    pub rate_ss: f64,
    pub q: f64,
}

impl Branch {
    pub fn u_image(&self) -> [f64; 2] {
        let w = self.rate_u * (self.u_interval[1] - self.u_interval[0]);
        [self.u_image_lo, self.u_image_lo + w]
    }

    pub fn slab(&self) -> [f64; 2] {
        [self.q, self.q + self.rate_ss]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Nonlinearity {
    pub kappa_w: f64,
    pub kappa_s: f64,
}

impl Nonlinearity {
    fn bound(&self) -> f64 {
        self.kappa_w.abs() + 0.5 * self.kappa_s.abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RawModel {
    transitions: Vec<Vec<u8>>,
    branches: Vec<Branch>,
    #[serde(default)]
    nonlinearity: Option<Nonlinearity>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct HorseshoeModel {
    subshift: TransitionMatrix,
    branches: Vec<Branch>,
    nonlinearity: Option<Nonlinearity>,
}

impl TryFrom<RawModel> for HorseshoeModel {
    type Error = ModelError;
    fn try_from(r: RawModel) -> Result<Self, ModelError> {
        HorseshoeModel::new(TransitionMatrix::new(r.transitions)?, r.branches, r.nonlinearity)
    }
}

impl From<HorseshoeModel> for RawModel {
    fn from(m: HorseshoeModel) -> Self {
        RawModel { transitions: m.subshift.rows(), branches: m.branches, nonlinearity: m.nonlinearity }
    }
}

fn overlaps(a: [f64; 2], b: [f64; 2]) -> bool {
    a[0] < b[1] - EDGE_TOL && b[0] < a[1] - EDGE_TOL
}

impl HorseshoeModel {
    pub fn new(
        subshift: TransitionMatrix,
        branches: Vec<Branch>,
        nonlinearity: Option<Nonlinearity>,
    ) -> Result<Self, ModelError> {
        let n = subshift.n_symbols();
        let bad = |m: String| Err(ModelError::Invalid(m));
        if branches.len() != n {
            return bad(format!("{} branches for {} symbols", branches.len(), n));
        }
        let k = nonlinearity.map_or(0.0, |nl| nl.bound());
        if k >= 1.0 {
            return bad("nonlinearity too large to keep the w-maps monotone".into());
        }
        for (i, b) in branches.iter().enumerate() {
            let id = i + 1;
            let ok_rates = 0.0 < b.rate_ss && b.rate_ss < b.rate_ws * (1.0 - k) && b.rate_ws < 1.0 && b.rate_u > 1.0;
            if !ok_rates {
                return bad(format!("branch {id}: rates violate 0 < ss < ws < 1 < u"));
            }
            let [a, c] = b.u_interval;
            if !(0.0 <= a && a < c && c <= 1.0) {
                return bad(format!("branch {id}: u_interval outside [0,1]"));
            }
            let img = b.u_image();
            if img[0] < -EDGE_TOL || img[1] > 1.0 + EDGE_TOL {
                return bad(format!("branch {id}: u image leaves [0,1]"));
            }
            if b.t < -EDGE_TOL || b.t + b.rate_ws > 1.0 + EDGE_TOL {
                return bad(format!("branch {id}: w image leaves [0,1]"));
            }
            if b.q < -EDGE_TOL || b.q + b.rate_ss > 1.0 + EDGE_TOL {
                return bad(format!("branch {id}: s slab leaves [0,1]"));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if overlaps(branches[i].u_interval, branches[j].u_interval) {
                    return bad(format!("u intervals of branches {} and {} overlap", i + 1, j + 1));
                }
                if overlaps(branches[i].slab(), branches[j].slab()) {
                    return bad(format!("s slabs of branches {} and {} overlap", i + 1, j + 1));
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                let img = branches[b].u_image();
                let ua = branches[a].u_interval;
                let covers = img[0] <= ua[0] + EDGE_TOL && img[1] >= ua[1] - EDGE_TOL;
                let allowed = subshift.allows(a as Symbol, b as Symbol);
                if allowed && !covers {
                    return bad(format!("A[{}][{}] = 1 but f(P_{}) does not cross P_{}", a + 1, b + 1, b + 1, a + 1));
                }
                if !allowed && overlaps(img, ua) {
                    return bad(format!("A[{}][{}] = 0 but f(P_{}) meets P_{}", a + 1, b + 1, b + 1, a + 1));
                }
            }
        }
        Ok(Self { subshift, branches, nonlinearity })
    }

    fn thirds(rates_ws: [f64; 3], t: [f64; 3]) -> Self {
        let q = [0.0, 0.375, 0.75];
        let branches = (0..3)
            .map(|i| Branch {
                u_interval: [i as f64 / 3.0, (i + 1) as f64 / 3.0],
                rate_u: 3.0,
                u_image_lo: 0.0,
                rate_ws: rates_ws[i],
                t: t[i],
                rate_ss: 0.25,
                q: q[i],
            })
            .collect();
        Self::new(TransitionMatrix::full_shift(3), branches, None).expect("reference model is valid")
    }

    /// Conformal three-branch model, dimension log 3 / log 2.
    pub fn ref3() -> Self {
        Self::thirds([0.5; 3], [0.0, 0.25, 0.5])
    }

    /// Non-conformal three-branch model.
    pub fn ref3b() -> Self {
        Self::thirds([0.5, 0.5, 0.4], [0.0, 0.28, 0.55])
    }

    fn halves(rates_ws: [f64; 2], t: [f64; 2]) -> Self {
        let u = [[0.0, 1.0 / 3.0], [2.0 / 3.0, 1.0]];
        let q = [0.0, 0.375];
        let branches = (0..2)
            .map(|i| Branch {
                u_interval: u[i],
                rate_u: 3.0,
                u_image_lo: 0.0,
                rate_ws: rates_ws[i],
                t: t[i],
                rate_ss: 0.25,
                q: q[i],
            })
            .collect();
        Self::new(TransitionMatrix::full_shift(2), branches, None).expect("reference model is valid")
    }

    /// Middle-thirds weak-stable Cantor set, dimension log 2 / log 3 < 1.
    pub fn ref2() -> Self {
        Self::halves([1.0 / 3.0; 2], [0.0, 2.0 / 3.0])
    }

    /// Two maps with weak rates 1/2 and 1/3.
    pub fn two_map() -> Self {
        Self::halves([0.5, 1.0 / 3.0], [0.0, 2.0 / 3.0])
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "ref3" => Some(Self::ref3()),
            "ref3b" => Some(Self::ref3b()),
            "ref2" => Some(Self::ref2()),
            "two_map" | "two-map" => Some(Self::two_map()),
            _ => None,
        }
    }

    pub fn with_nonlinearity(&self, nl: Option<Nonlinearity>) -> Result<Self, ModelError> {
        Self::new(self.subshift.clone(), self.branches.clone(), nl)
    }

    /// Same model with weak rates scaled by `1 + t_i`.
    pub fn with_rate_scaling(&self, t: &[f64]) -> Result<Self, ModelError> {
        let mut br = self.branches.clone();
        for (b, &ti) in br.iter_mut().zip(t) {
            b.rate_ws *= 1.0 + ti;
        }
        Self::new(self.subshift.clone(), br, self.nonlinearity)
    }

    pub fn subshift(&self) -> &TransitionMatrix {
        &self.subshift
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch(&self, i: Symbol) -> &Branch {
        &self.branches[i as usize]
    }

    pub fn nonlinearity(&self) -> Option<Nonlinearity> {
        self.nonlinearity
    }

    pub fn is_affine(&self) -> bool {
        self.nonlinearity.map_or(true, |nl| nl.kappa_w == 0.0 && nl.kappa_s == 0.0)
    }

    pub fn n_symbols(&self) -> usize {
        self.branches.len()
    }

    pub fn min_rate_ws(&self) -> f64 {
        self.branches.iter().map(|b| b.rate_ws).fold(f64::INFINITY, f64::min)
    }

    pub fn max_rate_ws(&self) -> f64 {
        self.branches.iter().map(|b| b.rate_ws).fold(0.0, f64::max)
    }

    pub fn max_rate_u(&self) -> f64 {
        self.branches.iter().map(|b| b.rate_u).fold(0.0, f64::max)
    }

    /// Largest ratio λss/λws over branches, with the nonlinearity's worst case.
    pub fn max_rate_ratio(&self) -> f64 {
        let k = self.nonlinearity.map_or(0.0, |nl| nl.bound());
        self.branches
            .iter()
            .map(|b| b.rate_ss / (b.rate_ws * (1.0 - k)))
            .fold(0.0, f64::max)
    }

    /// `c₁ = (min λws)⁻¹ + 0.01`.
    pub fn default_c1(&self) -> f64 {
        1.0 / self.min_rate_ws() + 0.01
    }

    /// `c = log(max λws) / log(min λws)`.
    pub fn default_c(&self) -> f64 {
        self.max_rate_ws().ln() / self.min_rate_ws().ln()
    }

    // --- one-dimensional pieces of the branch maps ---

    pub fn u_map(&self, i: Symbol, u: f64) -> f64 {
        let b = self.branch(i);
        b.u_image_lo + b.rate_u * (u - b.u_interval[0])
    }

    pub fn u_inverse(&self, i: Symbol, u: f64) -> f64 {
        let b = self.branch(i);
        b.u_interval[0] + (u - b.u_image_lo) / b.rate_u
    }

    pub fn s_map(&self, i: Symbol, s: f64) -> f64 {
        let b = self.branch(i);
        b.rate_ss * s + b.q
    }

    pub fn s_inverse(&self, i: Symbol, s: f64) -> f64 {
        let b = self.branch(i);
        (s - b.q) / b.rate_ss
    }

    fn bend(&self, s: f64) -> f64 {
        self.nonlinearity.map_or(0.0, |nl| nl.kappa_w + nl.kappa_s * (s - 0.5))
    }

    pub fn w_map(&self, i: Symbol, w: f64, s: f64) -> f64 {
        let b = self.branch(i);
        b.rate_ws * w + b.t + b.rate_ws * w * (1.0 - w) * self.bend(s)
    }

    /// Partial derivatives of the w-map in (w, s).
    pub fn w_map_grad(&self, i: Symbol, w: f64, s: f64) -> (f64, f64) {
        let b = self.branch(i);
        let ks = self.nonlinearity.map_or(0.0, |nl| nl.kappa_s);
        (
            b.rate_ws * (1.0 + (1.0 - 2.0 * w) * self.bend(s)),
            b.rate_ws * w * (1.0 - w) * ks,
        )
    }

    /// `w_map(i, q) − w_map(i, p)` without cancellation.
    pub fn w_map_difference(&self, i: Symbol, wp: f64, sp: f64, dw: f64, ds: f64) -> f64 {
        let b = self.branch(i);
        let lin = b.rate_ws * dw;
        match self.nonlinearity {
            None => lin,
            Some(nl) => {
                let wq = wp + dw;
                let sq = sp + ds;
                let quad = dw * (1.0 - wq - wp) * (nl.kappa_w + nl.kappa_s * (sq - 0.5));
                let tilt = wp * (1.0 - wp) * nl.kappa_s * ds;
                lin + b.rate_ws * (quad + tilt)
            }
        }
    }

    /// Solves `w_map(i, w, s) = target` for w.
    pub fn w_inverse(&self, i: Symbol, target: f64, s: f64) -> f64 {
        let b = self.branch(i);
        let mut w = (target - b.t) / b.rate_ws;
        if self.is_affine() {
            return w;
        }
        for _ in 0..60 {
            let f = self.w_map(i, w, s) - target;
            let (d, _) = self.w_map_grad(i, w, s);
            let step = f / d;
            w -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        w
    }

    // --- codings ---

    pub fn box_of_u(&self, u: f64) -> Option<Symbol> {
        self.branches
            .iter()
            .position(|b| u >= b.u_interval[0] - EDGE_TOL && u <= b.u_interval[1] + EDGE_TOL)
            .map(|i| i as Symbol)
    }

    pub fn slab_of_s(&self, s: f64) -> Option<Symbol> {
        self.branches
            .iter()
            .position(|b| s >= b.q - EDGE_TOL && s <= b.q + b.rate_ss + EDGE_TOL)
            .map(|i| i as Symbol)
    }

    /// Slab containing `s`, or the closest one when `s` sits in a gap.
    pub fn nearest_slab(&self, s: f64) -> Symbol {
        let mut best = (f64::INFINITY, 0);
        for (i, b) in self.branches.iter().enumerate() {
            let [lo, hi] = b.slab();
            let d = if s < lo { lo - s } else if s > hi { s - hi } else { 0.0 };
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1 as Symbol
    }

    /// Future letters of a point with unstable coordinate `u`.
    pub fn future_of_u(&self, mut u: f64, len: usize) -> Option<Vec<Symbol>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let i = self.box_of_u(u)?;
            out.push(i);
            u = self.u_map(i, u);
        }
        Some(out)
    }

    /// Box containing `u`, or the closest one when `u` sits in a gap.
    pub fn nearest_box(&self, u: f64) -> Symbol {
        let mut best = (f64::INFINITY, 0);
        for (i, b) in self.branches.iter().enumerate() {
            let [lo, hi] = b.u_interval;
            let d = if u < lo { lo - u } else if u > hi { u - hi } else { 0.0 };
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1 as Symbol
    }

    /// Future letters by nearest box; never fails.
    pub fn future_of_u_nearest(&self, mut u: f64, len: usize) -> Vec<Symbol> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let i = self.nearest_box(u);
            out.push(i);
            u = self.u_map(i, u);
        }
        out
    }

    /// Past letters read from the strong-stable coordinate (nearest slab in gaps).
    pub fn past_of_s(&self, mut s: f64, len: usize) -> Vec<Symbol> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let i = self.nearest_slab(s);
            out.push(i);
            s = self.s_inverse(i, s);
        }
        out
    }

    // --- base map ---

    pub fn base_apply(&self, p: Point) -> Result<Point, ModelError> {
        let i = self.box_of_u(p.u).ok_or(ModelError::OutsideDomain(p.u, p.w, p.s))?;
        let inside = |x: f64| (-EDGE_TOL..=1.0 + EDGE_TOL).contains(&x);
        if !inside(p.w) || !inside(p.s) {
            return Err(ModelError::OutsideDomain(p.u, p.w, p.s));
        }
        Ok(Point::new(self.u_map(i, p.u), self.w_map(i, p.w, p.s), self.s_map(i, p.s)))
    }

    // --- cylinder geometry ---

    /// Weak/strong stable ranges of the forward cylinder, from corner images.
    pub fn stable_box(&self, letters: &[Symbol]) -> ([f64; 2], [f64; 2]) {
        let mut w = [0.0, 1.0];
        let mut s = [0.0, 1.0];
        for &c in letters.iter().rev() {
            (w, s) = self.branch_box(c, w, s);
        }
        (w, s)
    }

    /// Image of `[w]×[s]` under branch `c`.
    pub fn branch_box(&self, c: Symbol, w: [f64; 2], s: [f64; 2]) -> ([f64; 2], [f64; 2]) {
        let nw = if self.is_affine() {
            [self.w_map(c, w[0], 0.5), self.w_map(c, w[1], 0.5)]
        } else {
            [
                self.w_map(c, w[0], s[0]).min(self.w_map(c, w[0], s[1])),
                self.w_map(c, w[1], s[0]).max(self.w_map(c, w[1], s[1])),
            ]
        };
        (nw, [self.s_map(c, s[0]), self.s_map(c, s[1])])
    }

    pub fn cylinder_box(&self, word: &Word) -> Result<CubeBox, ModelError> {
        if !crate::symbolic::is_admissible(word, &self.subshift)? {
            return Err(ModelError::Domain(format!("word {word} is not admissible")));
        }
        Ok(match word.orientation() {
            Orientation::Forward => {
                let (w, s) = self.stable_box(word.letters());
                let u = word.first().map_or([0.0, 1.0], |c| self.branch(c).u_image());
                CubeBox { u, w, s }
            }
            Orientation::Backward => {
                let u = if word.is_empty() { [0.0, 1.0] } else { self.leaf_u_interval(word.letters()) };
                CubeBox { u, w: [0.0, 1.0], s: [0.0, 1.0] }
            }
        })
    }

    /// Weak-stable extent of the forward cylinder.
    pub fn ds(&self, letters: &[Symbol]) -> f64 {
        let (w, _) = self.stable_box(letters);
        w[1] - w[0]
    }

    /// `(d_s per sampled leaf, D_s)`. The maps do not depend on `u`, so every leaf
    /// sees the same slice.
    pub fn stable_diameters(&self, word: &Word, leaves: &[LeafApprox]) -> (Vec<f64>, f64) {
        let d = self.ds(word.letters());
        let per: Vec<f64> = if leaves.is_empty() { vec![d] } else { leaves.iter().map(|_| d).collect() };
        let big = per.iter().copied().fold(0.0, f64::max);
        (per, big)
    }

    /// Forward words accepted at the first length where `D_s ≤ c₁ρ`.
    pub fn cylinders_at_scale(&self, rho: f64, c1: f64, leaf: Option<&LeafApprox>) -> Vec<Word> {
        self.words_at_scale(rho * c1, leaf.map(|l| l.box_symbol()), 0)
    }

    /// Prefix-minimal forward words with `D_s ≤ threshold`, at least `min_len` long.
    pub fn words_at_scale(&self, threshold: f64, following: Option<Symbol>, min_len: usize) -> Vec<Word> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        self.scale_dfs(threshold, following, min_len, &mut stack, &mut out);
        out
    }

    fn scale_dfs(
        &self,
        threshold: f64,
        following: Option<Symbol>,
        min_len: usize,
        stack: &mut Vec<Symbol>,
        out: &mut Vec<Word>,
    ) {
        if stack.len() >= min_len && (self.ds(stack) <= threshold || stack.len() >= 64) {
            out.push(Word::forward(stack.clone()));
            return;
        }
        for b in 0..self.n_symbols() as Symbol {
            let ok = match stack.last() {
                Some(&p) => self.subshift.allows(p, b),
                None => following.map_or(true, |k| self.subshift.allows(k, b)),
            };
            if ok {
                stack.push(b);
                self.scale_dfs(threshold, following, min_len, stack, out);
                stack.pop();
            }
        }
    }

    /// Backward words (reading order) accepted at the first length where the leaf
    /// block's u-width is `≤ alpha`, at least one letter long.
    pub fn leaf_blocks_at_scale(&self, alpha: f64) -> Vec<Word> {
        let mut out = Vec::new();
        // future letters, θ₀ first
        let mut fut: Vec<Symbol> = Vec::new();
        self.leaf_dfs(alpha, &mut fut, &mut out);
        out.sort();
        out
    }

    fn leaf_dfs(&self, alpha: f64, fut: &mut Vec<Symbol>, out: &mut Vec<Word>) {
        if !fut.is_empty() {
            let letters: Vec<Symbol> = fut.iter().rev().copied().collect();
            let u = self.leaf_u_interval(&letters);
            if u[1] - u[0] <= alpha || fut.len() >= 40 {
                out.push(Word::backward(letters));
                return;
            }
        }
        for b in 0..self.n_symbols() as Symbol {
            // next future letter b follows the current one in time: A[b][last] = 1
            let ok = fut.last().map_or(true, |&p| self.subshift.allows(b, p));
            if ok {
                fut.push(b);
                self.leaf_dfs(alpha, fut, out);
                fut.pop();
            }
        }
    }

    // --- leaves ---

    /// u-interval of the leaf block `(θ₋ₘ,…,θ₀)` in reading order.
    pub fn leaf_u_interval(&self, letters: &[Symbol]) -> [f64; 2] {
        let mut it = letters.iter();
        let first = *it.next().expect("nonempty backward word");
        let mut iv = self.branch(first).u_interval;
        for &c in it {
            iv = [self.u_inverse(c, iv[0]), self.u_inverse(c, iv[1])];
        }
        iv
    }

    pub fn leaf(&self, suffix: Word) -> Result<LeafApprox, ModelError> {
        if suffix.orientation() != Orientation::Backward || suffix.is_empty() {
            return Err(ModelError::Domain("leaf suffix must be a nonempty backward word".into()));
        }
        if !crate::symbolic::is_admissible(&suffix, &self.subshift)? {
            return Err(ModelError::Domain(format!("leaf {suffix} is not admissible")));
        }
        let iv = self.leaf_u_interval(suffix.letters());
        Ok(LeafApprox { suffix, error_bound: iv[1] - iv[0] })
    }

    pub fn leaf_from(&self, letters: &[usize]) -> Result<LeafApprox, ModelError> {
        self.leaf(Word::from_one_based(letters, Orientation::Backward))
    }

    /// Symbolic future of the leaf, canonically continued.
    pub fn leaf_future(&self, leaf: &LeafApprox, len: usize) -> Vec<Symbol> {
        leaf.future(&self.subshift, len)
    }

    /// Unstable coordinate of the leaf's canonical representative.
    pub fn leaf_u(&self, leaf: &LeafApprox) -> f64 {
        let fut = self.leaf_future(leaf, REP_DEPTH.max(leaf.depth()));
        self.u_of_future(&fut)
    }

    pub fn u_of_future(&self, fut: &[Symbol]) -> f64 {
        let last = *fut.last().expect("nonempty future");
        let iv = self.branch(last).u_interval;
        let mut u = 0.5 * (iv[0] + iv[1]);
        for &c in fut.iter().rev().skip(1) {
            u = self.u_inverse(c, u);
        }
        u
    }

    pub fn leaf_distance(&self, l1: &LeafApprox, l2: &LeafApprox) -> Result<f64, ModelError> {
        if l1.box_symbol() != l2.box_symbol() {
            return Err(ModelError::Domain("leaves lie in different Markov boxes".into()));
        }
        Ok((self.leaf_u(l1) - self.leaf_u(l2)).abs())
    }
}
