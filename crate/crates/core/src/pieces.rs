//! Pieces `(θ⁻, θ̲)`: wall intervals of leaf ∩ cylinder, and the renormalization
//! operator `R_a̲` that blows a piece back up to unit size.
//!
//! On affine models every piece interval is `[C, C + Λ]` with `Λ = Π λ_{a_k}` and
//! `C` affine in the perturbation parameters, so both the interval and `R_a̲` are
//! exact. Nonlinear models go through forward orbit matching instead.

use crate::model::{
    project_ss_numeric, symbolic_step, matching_steps, HorseshoeModel, ModelError, PerturbationFamily, PerturbedMap,
    Point, WallPoint, WALL,
};
use crate::symbolic::{LeafApprox, Symbol, Word};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Piece {
    pub leaf: LeafApprox,
    pub word: Word,
    pub interval: [f64; 2],
    pub scale: f64,
}

/// `R_a̲(x)` or the sentinel for points outside the piece.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Renormalized {
    Inside(WallPoint),
    Outside,
}

impl Renormalized {
    pub fn point(&self) -> Option<&WallPoint> {
        match self {
            Self::Inside(p) => Some(p),
            Self::Outside => None,
        }
    }
}

/// Offset `C = base + Σ_layers amplitude·Σ coef·param[id]` and slope `Λ` of a piece.
#[derive(Clone, Debug, PartialEq)]
pub struct PieceAffine {
    pub base: f64,
    pub slope: f64,
    /// Sparse `(block id, coefficient)` per layer.
    pub terms: Vec<Vec<(usize, f64)>>,
}

impl PieceAffine {
    pub fn offset(&self, map: &PerturbedMap) -> f64 {
        let mut c = self.base;
        for (layer, terms) in map.layers().iter().zip(&self.terms) {
            c += layer.family.amplitude * terms.iter().map(|&(id, k)| k * layer.params[id]).sum::<f64>();
        }
        c
    }

    /// Offset for a single layer given directly by its parameters.
    pub fn offset_with(&self, amplitude: f64, params: &[f64], layer: usize) -> f64 {
        self.base + amplitude * self.terms[layer].iter().map(|&(id, k)| k * params[id]).sum::<f64>()
    }

    pub fn interval(&self, map: &PerturbedMap) -> [f64; 2] {
        let c = self.offset(map);
        [c, c + self.slope]
    }
}

/// Leaf `θ⁻a̲`.
pub fn extend_leaf(model: &HorseshoeModel, leaf: &LeafApprox, word: &[Symbol]) -> Result<LeafApprox, ModelError> {
    let mut letters = leaf.suffix.letters().to_vec();
    letters.extend_from_slice(word);
    model.leaf(Word::backward(letters))
}

fn check_word(model: &HorseshoeModel, leaf: &LeafApprox, word: &[Symbol]) -> Result<(), ModelError> {
    let a = model.subshift();
    let ok = !word.is_empty()
        && a.allows(leaf.box_symbol(), word[0])
        && word.windows(2).all(|p| a.allows(p[0], p[1]));
    if !ok {
        return Err(ModelError::Domain("word is empty or not admissible after the leaf".into()));
    }
    Ok(())
}

fn block_at(fam: &PerturbationFamily, fut: &[Symbol], j: usize, wall_past: &[Symbol]) -> usize {
    fam.lookup(fut[j..].iter().copied(), fut[..j].iter().rev().chain(wall_past).copied())
        .expect("complete partition covers every admissible address")
}

/// Blocks met by the piece's wall point: entry `h` is the block at backward hitting
/// time `h` (`h = 0` is the last forward step, into the leaf's box); the second list
/// holds the blocks of the projection correction along the leaf.
pub fn piece_blocks(model: &HorseshoeModel, fam: &PerturbationFamily, leaf: &LeafApprox, word: &[Symbol]) -> (Vec<usize>, Vec<usize>) {
    let n = word.len();
    let jmax = fam.max_word_len();
    let fut_leaf = model.leaf_future(leaf, jmax + fam.max_leaf_len() + 2);
    let wp = model.past_of_s(WALL, jmax);
    let mut fut: Vec<Symbol> = word.iter().rev().copied().collect();
    fut.extend_from_slice(&fut_leaf);
    let orbit = (0..n).map(|h| block_at(fam, &fut, n - h, &wp)).collect();
    let mut corr = Vec::new();
    for i in 1..jmax {
        corr.push(block_at(fam, &fut, n + i, &wp));
        corr.push(block_at(fam, &fut_leaf, i, &wp));
    }
    (orbit, corr)
}

/// Coefficients of `C` in units of `amplitude·param` for one family.
pub fn piece_terms(model: &HorseshoeModel, fam: &PerturbationFamily, leaf: &LeafApprox, word: &[Symbol]) -> Vec<(usize, f64)> {
    let n = word.len();
    let jmax = fam.max_word_len();
    let fut_leaf = model.leaf_future(leaf, jmax + fam.max_leaf_len() + 2);
    let wp = model.past_of_s(WALL, jmax);
    let mut fut = Vec::with_capacity(n + fut_leaf.len());
    fut.extend(word.iter().rev());
    fut.extend_from_slice(&fut_leaf);
    let rate = |c: Symbol| model.branch(c).rate_ws;
    let mut terms = Vec::with_capacity(n + 2 * jmax);
    // forward steps of the wall point of θ⁻a̲, contracted by the remaining branches
    let mut tail = 1.0;
    for j in (1..=n).rev() {
        terms.push((block_at(fam, &fut, j, &wp), tail));
        tail *= rate(fut[j - 1]);
    }
    // projection correction on θ⁻, relative to the wall
    let mut l = 1.0;
    for i in 1..jmax {
        l *= rate(fut_leaf[i - 1]);
        terms.push((block_at(fam, &fut, n + i, &wp), 1.0 / l));
        terms.push((block_at(fam, &fut_leaf, i, &wp), -1.0 / l));
    }
    terms.sort_by_key(|t| t.0);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
    for (id, k) in terms {
        match merged.last_mut() {
            Some(last) if last.0 == id => last.1 += k,
            _ => merged.push((id, k)),
        }
    }
    merged.retain(|t| t.1 != 0.0);
    merged
}

/// Exact affine data of a piece on an affine model.
pub fn piece_affine(map: &PerturbedMap, leaf: &LeafApprox, word: &[Symbol]) -> Result<PieceAffine, ModelError> {
    let m = map.model();
    if !m.is_affine() {
        return Err(ModelError::Domain("closed-form pieces need an affine model".into()));
    }
    check_word(m, leaf, word)?;
    let mut base = 0.0;
    let mut slope = 1.0;
    for &c in word.iter().rev() {
        base = m.w_map(c, base, WALL);
        slope *= m.branch(c).rate_ws;
    }
    let terms = map.layers().iter().map(|l| piece_terms(m, l.family, leaf, word)).collect();
    Ok(PieceAffine { base, slope, terms })
}

fn forward_from_new_leaf(map: &PerturbedMap, fut_new: &[Symbol], n: usize, w: f64) -> Result<(f64, f64), ModelError> {
    let (mut w, mut s) = (w, WALL);
    for j in 0..n {
        (w, s) = symbolic_step(map, &fut_new[j..], w, s)?;
    }
    Ok((w, s))
}

fn futures(map: &PerturbedMap, leaf: &LeafApprox, word: &[Symbol]) -> (Vec<Symbol>, Vec<Symbol>) {
    let m = map.model();
    let len = matching_steps(m) + map.max_leaf_len() + map.max_word_len() + 4;
    let fut_leaf = m.leaf_future(leaf, len + word.len());
    let mut fut_new: Vec<Symbol> = word.iter().rev().copied().collect();
    fut_new.extend_from_slice(&fut_leaf);
    (fut_leaf, fut_new)
}

/// Piece interval by forward orbit matching (any model).
pub fn piece_interval_numeric(map: &PerturbedMap, leaf: &LeafApprox, word: &[Symbol]) -> Result<[f64; 2], ModelError> {
    check_word(map.model(), leaf, word)?;
    let (fut_leaf, fut_new) = futures(map, leaf, word);
    let n = word.len();
    let mut ends = [0.0; 2];
    for (k, w0) in [0.0, 1.0].into_iter().enumerate() {
        let (w, s) = forward_from_new_leaf(map, &fut_new, n, w0)?;
        ends[k] = project_ss_numeric(map, &fut_leaf, w, s)?;
    }
    Ok([ends[0].min(ends[1]), ends[0].max(ends[1])])
}

pub fn piece_interval(map: &PerturbedMap, leaf: &LeafApprox, word: &[Symbol]) -> Result<[f64; 2], ModelError> {
    if map.model().is_affine() {
        Ok(piece_affine(map, leaf, word)?.interval(map))
    } else {
        piece_interval_numeric(map, leaf, word)
    }
}

/// All pieces of `leaf` at scale `ρ` (first length with `D_s ≤ c₁ρ`).
pub fn pieces_at_scale(map: &PerturbedMap, leaf: &LeafApprox, rho: f64, c1: f64) -> Result<Vec<Piece>, ModelError> {
    let m = map.model();
    m.cylinders_at_scale(rho, c1, Some(leaf))
        .into_iter()
        .map(|word| {
            let interval = piece_interval(map, leaf, word.letters())?;
            Ok(Piece { leaf: leaf.clone(), word, interval, scale: rho })
        })
        .collect()
}

/// `R_a̲(x, θ⁻)`.
pub fn renormalize(map: &PerturbedMap, word: &[Symbol], x: &WallPoint) -> Result<Renormalized, ModelError> {
    let m = map.model();
    if !m.is_affine() {
        return renormalize_numeric(map, word, x);
    }
    let pa = piece_affine(map, &x.leaf, word)?;
    let r = (x.x - pa.offset(map)) / pa.slope;
    if r <= 0.0 || r >= 1.0 {
        return Ok(Renormalized::Outside);
    }
    Ok(Renormalized::Inside(WallPoint { x: r, leaf: extend_leaf(m, &x.leaf, word)? }))
}

/// Lift, pull back through the inverse branches, and re-project.
pub fn renormalize_numeric(map: &PerturbedMap, word: &[Symbol], x: &WallPoint) -> Result<Renormalized, ModelError> {
    let m = map.model();
    check_word(m, &x.leaf, word)?;
    let iv = piece_interval_numeric(map, &x.leaf, word)?;
    if x.x <= iv[0] || x.x >= iv[1] {
        return Ok(Renormalized::Outside);
    }
    let (fut_leaf, fut_new) = futures(map, &x.leaf, word);
    let mut s_z = WALL;
    for &c in word.iter().rev() {
        s_z = m.s_map(c, s_z);
    }
    // lift: w on the leaf at height s_z with projection x
    let proj = |w: f64| project_ss_numeric(map, &fut_leaf, w, s_z).map(|p| p - x.x);
    let (mut a, mut fa) = (x.x, proj(x.x)?);
    let mut b = a - fa;
    let mut fb = proj(b)?;
    for _ in 0..40 {
        if fb.abs() < 1e-15 || (b - a).abs() < 1e-16 {
            break;
        }
        let next = b - fb * (b - a) / (fb - fa);
        (a, fa) = (b, fb);
        b = next;
        fb = proj(b)?;
    }
    let mut y = Point::new(m.leaf_u(&x.leaf), b, s_z);
    let n = word.len();
    for (k, &c) in word.iter().enumerate() {
        y = match map.apply_inverse_along(y, c, Some(&fut_new[n - k..])) {
            Ok(p) => p,
            Err(ModelError::BranchError(_)) => return Ok(Renormalized::Outside),
            Err(e) => return Err(e),
        };
    }
    let r = project_ss_numeric(map, &fut_new, y.w, y.s)?;
    if r <= 0.0 || r >= 1.0 {
        return Ok(Renormalized::Outside);
    }
    Ok(Renormalized::Inside(WallPoint { x: r, leaf: extend_leaf(m, &x.leaf, word)? }))
}
