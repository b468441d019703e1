//! Block perturbation families `f^γ = (id + Σ γ_a X_a) ∘ f` with weak-stable
//! displacement fields `X_a = amplitude · χ(‖T_a(y)‖∞) · e_w`.

use super::{CubeBox, HorseshoeModel, ModelError, Point, EDGE_TOL};
use crate::symbolic::{enumerate_words, Orientation, Symbol, TransitionMatrix, Word};
use serde::{Deserialize, Serialize};

const NONE: u32 = u32::MAX;

/// Prefix tree over symbol strings; terminals carry an index.
#[derive(Clone, Debug)]
pub struct Trie {
    n: usize,
    children: Vec<u32>,
    terminal: Vec<u32>,
    depth: usize,
}

impl Trie {
    pub fn new(n: usize) -> Self {
        Self { n, children: vec![NONE; n], terminal: vec![NONE], depth: 0 }
    }

    pub fn max_depth(&self) -> usize {
        self.depth
    }

    pub fn insert(&mut self, letters: &[Symbol], id: u32) -> Result<(), ModelError> {
        let mut node = 0usize;
        for &c in letters {
            if self.terminal[node] != NONE {
                return Err(ModelError::PartitionError("a block is a prefix of another".into()));
            }
            let slot = node * self.n + c as usize;
            if self.children[slot] == NONE {
                let fresh = self.terminal.len() as u32;
                self.terminal.push(NONE);
                self.children.extend(std::iter::repeat(NONE).take(self.n));
                self.children[slot] = fresh;
            }
            node = self.children[slot] as usize;
        }
        if self.terminal[node] != NONE || self.children[node * self.n..(node + 1) * self.n].iter().any(|&c| c != NONE) {
            return Err(ModelError::PartitionError("duplicate or nested block".into()));
        }
        self.terminal[node] = id;
        self.depth = self.depth.max(letters.len());
        Ok(())
    }

    pub fn lookup(&self, letters: impl IntoIterator<Item = Symbol>) -> Option<u32> {
        let mut node = 0usize;
        let mut it = letters.into_iter();
        loop {
            if self.terminal[node] != NONE {
                return Some(self.terminal[node]);
            }
            let c = it.next()? as usize;
            let next = self.children[node * self.n + c];
            if next == NONE {
                return None;
            }
            node = next as usize;
        }
    }

    /// Every admissible continuation ends in exactly one terminal. `allowed(prev, next)`
    /// gives the adjacency of consecutive letters in the key order.
    pub fn is_complete(&self, allowed: impl Fn(Symbol, Symbol) -> bool, first: impl Fn(Symbol) -> bool) -> bool {
        self.complete_from(0, None, &allowed, &first)
    }

    fn complete_from(
        &self,
        node: usize,
        prev: Option<Symbol>,
        allowed: &impl Fn(Symbol, Symbol) -> bool,
        first: &impl Fn(Symbol) -> bool,
    ) -> bool {
        if self.terminal[node] != NONE {
            return true;
        }
        (0..self.n as Symbol).all(|c| {
            let ok = match prev {
                Some(p) => allowed(p, c),
                None => first(c),
            };
            if !ok {
                return true;
            }
            let next = self.children[node * self.n + c as usize];
            next != NONE && self.complete_from(next as usize, Some(c), allowed, first)
        })
    }
}

/// Leaf scale α (u-width of backward blocks) and word scale α̃ (`D_s` of forward blocks).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub alpha: f64,
    pub alpha_tilde: f64,
}

#[derive(Clone, Debug)]
pub struct PerturbationFamily {
    n: usize,
    leaf_blocks: Vec<Word>,
    word_blocks: Vec<Word>,
    leaf_trie: Trie,
    word_trie: Trie,
    leaf_u: Vec<[f64; 2]>,
    word_s: Vec<[f64; 2]>,
    ids: Vec<u32>,
    pairs: Vec<(u32, u32)>,
    pub rho: f64,
    pub amplitude: f64,
    pub c2: f64,
}

impl PerturbationFamily {
    /// Blocks at leaf scale α and word scale α̃, amplitude `c₃ρ`.
    pub fn make(model: &HorseshoeModel, spec: BlockSpec, rho: f64, c2: f64, c3: f64) -> Result<Self, ModelError> {
        if !(spec.alpha > 0.0 && spec.alpha < 1.0 && spec.alpha_tilde > 0.0 && spec.alpha_tilde < 1.0) {
            return Err(ModelError::PartitionError(format!(
                "block scales ({}, {}) must lie in (0,1)",
                spec.alpha, spec.alpha_tilde
            )));
        }
        let leaf_blocks = model.leaf_blocks_at_scale(spec.alpha);
        let word_blocks = model.words_at_scale(spec.alpha_tilde, None, 1);
        Self::from_blocks(model, leaf_blocks, word_blocks, rho, c3 * rho, c2)
    }

    /// All admissible backward words of `leaf_len` × forward words of `word_len`.
    pub fn uniform(
        model: &HorseshoeModel,
        leaf_len: usize,
        word_len: usize,
        amplitude: f64,
        c2: f64,
    ) -> Result<Self, ModelError> {
        let a = model.subshift();
        let leaves = enumerate_words(a, leaf_len, None)
            .into_iter()
            .map(|w| Word::backward(w.letters().to_vec()))
            .collect();
        let words = enumerate_words(a, word_len, None);
        Self::from_blocks(model, leaves, words, amplitude, amplitude, c2)
    }

    pub fn from_blocks(
        model: &HorseshoeModel,
        leaf_blocks: Vec<Word>,
        word_blocks: Vec<Word>,
        rho: f64,
        amplitude: f64,
        c2: f64,
    ) -> Result<Self, ModelError> {
        let a: &TransitionMatrix = model.subshift();
        let n = a.n_symbols();
        if !(c2 > 1.0) {
            return Err(ModelError::PartitionError("bump plateau radius c2 must exceed 1".into()));
        }
        let mut leaf_trie = Trie::new(n);
        for (i, w) in leaf_blocks.iter().enumerate() {
            if w.orientation() != Orientation::Backward || w.is_empty() {
                return Err(ModelError::PartitionError(format!("leaf block {w} must be a nonempty backward word")));
            }
            let key: Vec<Symbol> = w.letters().iter().rev().copied().collect();
            leaf_trie.insert(&key, i as u32)?;
        }
        let mut word_trie = Trie::new(n);
        for (i, w) in word_blocks.iter().enumerate() {
            if w.orientation() != Orientation::Forward || w.is_empty() {
                return Err(ModelError::PartitionError(format!("word block {w} must be a nonempty forward word")));
            }
            word_trie.insert(w.letters(), i as u32)?;
        }
        // future keys θ₀, θ₋₁, …: consecutive (p, c) needs A[c][p]
        if !leaf_trie.is_complete(|p, c| a.allows(c, p), |_| true) {
            return Err(ModelError::PartitionError("leaf blocks do not cover every admissible leaf".into()));
        }
        if !word_trie.is_complete(|p, c| a.allows(p, c), |_| true) {
            return Err(ModelError::PartitionError("word blocks do not cover every admissible word".into()));
        }
        let leaf_u = leaf_blocks.iter().map(|w| model.leaf_u_interval(w.letters())).collect();
        let word_s = word_blocks.iter().map(|w| model.stable_box(w.letters()).1).collect();
        let nw = word_blocks.len();
        let mut ids = vec![NONE; leaf_blocks.len() * nw];
        let mut pairs = Vec::new();
        for (li, l) in leaf_blocks.iter().enumerate() {
            let theta0 = l.last().expect("nonempty");
            for (wi, w) in word_blocks.iter().enumerate() {
                if a.allows(theta0, w.first().expect("nonempty")) {
                    ids[li * nw + wi] = pairs.len() as u32;
                    pairs.push((li as u32, wi as u32));
                }
            }
        }
        Ok(Self { n, leaf_blocks, word_blocks, leaf_trie, word_trie, leaf_u, word_s, ids, pairs, rho, amplitude, c2 })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn n_symbols(&self) -> usize {
        self.n
    }

    pub fn leaf_blocks(&self) -> &[Word] {
        &self.leaf_blocks
    }

    pub fn word_blocks(&self) -> &[Word] {
        &self.word_blocks
    }

    pub fn max_leaf_len(&self) -> usize {
        self.leaf_trie.max_depth()
    }

    pub fn max_word_len(&self) -> usize {
        self.word_trie.max_depth()
    }

    /// `(leaf block, word block)` of a block id.
    pub fn block(&self, id: usize) -> (&Word, &Word) {
        let (l, w) = self.pairs[id];
        (&self.leaf_blocks[l as usize], &self.word_blocks[w as usize])
    }

    pub fn block_id(&self, leaf_idx: usize, word_idx: usize) -> Option<usize> {
        let id = self.ids[leaf_idx * self.word_blocks.len() + word_idx];
        (id != NONE).then_some(id as usize)
    }

    /// Block containing a point with the given future (θ₀ first) and past (θ₁ first).
    pub fn lookup(
        &self,
        future: impl IntoIterator<Item = Symbol>,
        past: impl IntoIterator<Item = Symbol>,
    ) -> Option<usize> {
        let l = self.leaf_trie.lookup(future)? as usize;
        let w = self.word_trie.lookup(past)? as usize;
        self.block_id(l, w)
    }

    pub fn block_box(&self, id: usize) -> CubeBox {
        let (l, w) = self.pairs[id];
        CubeBox { u: self.leaf_u[l as usize], w: [0.0, 1.0], s: self.word_s[w as usize] }
    }

    /// `χ` and `dχ/dr`.
    pub fn bump(&self, r: f64) -> (f64, f64) {
        let a = self.c2;
        let b = self.c2 * self.c2;
        if r <= a {
            return (1.0, 0.0);
        }
        if r >= b {
            return (0.0, 0.0);
        }
        let x = (b - r) / (b - a);
        let h = |x: f64| (-1.0 / x).exp();
        let (h0, h1) = (h(x), h(1.0 - x));
        let s = h0 / (h0 + h1);
        let ds = (h0 / (x * x) * h1 + h0 * h1 / ((1.0 - x) * (1.0 - x))) / ((h0 + h1) * (h0 + h1));
        (s, -ds / (b - a))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Layer<'a> {
    pub family: &'a PerturbationFamily,
    pub params: &'a [f64],
}

/// A model together with zero or more additive perturbation layers.
#[derive(Clone, Debug)]
pub struct PerturbedMap<'a> {
    model: &'a HorseshoeModel,
    layers: Vec<Layer<'a>>,
}

const INVERSE_ITERS: usize = 50;
const INVERSE_TOL: f64 = 1e-12;

impl<'a> PerturbedMap<'a> {
    pub fn base(model: &'a HorseshoeModel) -> Self {
        Self { model, layers: Vec::new() }
    }

    pub fn new(model: &'a HorseshoeModel, family: &'a PerturbationFamily, gamma: &'a [f64]) -> Result<Self, ModelError> {
        Self::base(model).with_layer(family, gamma)
    }

    pub fn with_layer(mut self, family: &'a PerturbationFamily, params: &'a [f64]) -> Result<Self, ModelError> {
        if params.len() != family.len() {
            return Err(ModelError::Domain(format!(
                "parameter vector has {} entries, family has {} blocks",
                params.len(),
                family.len()
            )));
        }
        if family.n_symbols() != self.model.n_symbols() {
            return Err(ModelError::Domain("family built for another alphabet".into()));
        }
        self.layers.push(Layer { family, params });
        Ok(self)
    }

    pub fn model(&self) -> &'a HorseshoeModel {
        self.model
    }

    pub fn layers(&self) -> &[Layer<'a>] {
        &self.layers
    }

    pub fn is_unperturbed(&self) -> bool {
        self.layers.iter().all(|l| l.params.iter().all(|&g| g == 0.0))
    }

    /// Largest word-block length over layers.
    pub fn max_word_len(&self) -> usize {
        self.layers.iter().map(|l| l.family.max_word_len()).max().unwrap_or(0)
    }

    pub fn max_leaf_len(&self) -> usize {
        self.layers.iter().map(|l| l.family.max_leaf_len()).max().unwrap_or(0)
    }

    /// Displacement of an image point `y` and its gradient in `(u, w, s)`.
    /// With `future = None` the future address is read from `y.u`.
    pub fn displacement(&self, future: Option<&[Symbol]>, y: Point) -> Result<(f64, [f64; 3]), ModelError> {
        let mut d = 0.0;
        let mut g = [0.0; 3];
        if self.layers.is_empty() {
            return Ok((d, g));
        }
        let m = self.model;
        let depth = self.max_leaf_len().max(1);
        let past: Vec<Symbol> = m.past_of_s(y.s, self.max_word_len().max(1));
        let coded;
        let fut: &[Symbol] = match future {
            Some(f) => f,
            None => {
                coded = m.future_of_u_nearest(y.u, depth);
                &coded
            }
        };
        for layer in &self.layers {
            let fam = layer.family;
            let id = fam
                .lookup(fut.iter().copied(), past.iter().copied())
                .ok_or_else(|| ModelError::Domain("point has no block (inadmissible address)".into()))?;
            let gamma = layer.params[id];
            if gamma == 0.0 {
                continue;
            }
            let bx = fam.block_box(id);
            let norm = |x: f64, iv: [f64; 2]| 2.0 * (x - iv[0]) / (iv[1] - iv[0]) - 1.0;
            // (normalized coordinate, its scale, axis)
            let mut arg = (norm(y.w, bx.w), 2.0 / (bx.w[1] - bx.w[0]), 1);
            let ts = (norm(y.s, bx.s), 2.0 / (bx.s[1] - bx.s[0]), 2);
            if ts.0.abs() > arg.0.abs() {
                arg = ts;
            }
            if future.is_none() {
                let tu = (norm(y.u, bx.u), 2.0 / (bx.u[1] - bx.u[0]), 0);
                if tu.0.abs() > arg.0.abs() {
                    arg = tu;
                }
            }
            let r = arg.0.abs();
            let (chi, dchi) = fam.bump(r);
            let amp = fam.amplitude * gamma;
            d += amp * chi;
            if dchi != 0.0 {
                g[arg.2] += amp * dchi * arg.0.signum() * arg.1;
            }
        }
        Ok((d, g))
    }

    pub fn apply(&self, p: Point) -> Result<Point, ModelError> {
        let mut y = self.model.base_apply(p)?;
        if !self.layers.is_empty() {
            y.w += self.displacement(None, y)?.0;
        }
        Ok(y)
    }

    /// Preimage of `p` inside `P_branch`.
    pub fn apply_inverse(&self, p: Point, branch: Symbol) -> Result<Point, ModelError> {
        self.apply_inverse_along(p, branch, None)
    }

    /// As [`apply_inverse`](Self::apply_inverse), with the future address of `p`
    /// given symbolically instead of read from `p.u`.
    pub fn apply_inverse_along(&self, p: Point, branch: Symbol, future: Option<&[Symbol]>) -> Result<Point, ModelError> {
        let m = self.model;
        let b = m.branch(branch);
        let err = ModelError::BranchError(branch as usize + 1);
        let [s0, s1] = b.slab();
        let [u0, u1] = b.u_image();
        if p.s < s0 - EDGE_TOL || p.s > s1 + EDGE_TOL || p.u < u0 - EDGE_TOL || p.u > u1 + EDGE_TOL {
            return Err(err);
        }
        let mut yw = p.w;
        if !self.layers.is_empty() {
            let mut converged = false;
            for _ in 0..INVERSE_ITERS {
                let (d, _) = self.displacement(future, Point::new(p.u, yw, p.s))?;
                let next = p.w - d;
                let step = (next - yw).abs();
                yw = next;
                if step < INVERSE_TOL {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(err);
            }
        }
        let s = m.s_inverse(branch, p.s);
        let x = Point::new(m.u_inverse(branch, p.u), m.w_inverse(branch, yw, s), s);
        if x.w < -EDGE_TOL || x.w > 1.0 + EDGE_TOL {
            return Err(err);
        }
        Ok(x)
    }

    /// `Df` at `x` as a row-major 3×3 matrix in `(u, w, s)`.
    pub fn jacobian(&self, x: Point) -> Result<[[f64; 3]; 3], ModelError> {
        let m = self.model;
        let i = m.box_of_u(x.u).ok_or(ModelError::OutsideDomain(x.u, x.w, x.s))?;
        let b = m.branch(i);
        let (fw, fs) = m.w_map_grad(i, x.w, x.s);
        let base = [[b.rate_u, 0.0, 0.0], [0.0, fw, fs], [0.0, 0.0, b.rate_ss]];
        if self.layers.is_empty() {
            return Ok(base);
        }
        let y = m.base_apply(x)?;
        let (_, g) = self.displacement(None, y)?;
        let mut out = base;
        for col in 0..3 {
            out[1][col] += g[0] * base[0][col] + g[1] * base[1][col] + g[2] * base[2][col];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ref3_family(rho: f64) -> (HorseshoeModel, PerturbationFamily) {
        let m = HorseshoeModel::ref3();
        let spec = BlockSpec { alpha: 0.5 * rho.sqrt(), alpha_tilde: rho.sqrt() };
        let f = PerturbationFamily::make(&m, spec, rho, 1.2, 1.0).unwrap();
        (m, f)
    }

    #[test]
    fn block_counts() {
        let (_, f) = ref3_family(2f64.powi(-6));
        assert_eq!(f.leaf_blocks().len(), 27);
        assert_eq!(f.word_blocks().len(), 27);
        assert_eq!(f.len(), 27 * 27);
    }

    #[test]
    fn zero_parameters_reproduce_base() {
        let (m, f) = ref3_family(2f64.powi(-6));
        let g = vec![0.0; f.len()];
        let map = PerturbedMap::new(&m, &f, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = Point::new(rng.gen(), rng.gen(), rng.gen());
            assert_eq!(map.apply(p).unwrap(), m.base_apply(p).unwrap());
        }
    }

    #[test]
    fn single_block_displacement() {
        let (m, f) = ref3_family(2f64.powi(-6));
        let p = Point::new(0.5, 0.2, 0.8);
        let y = m.base_apply(p).unwrap();
        let fut = m.future_of_u(y.u, 3).unwrap();
        let past = m.past_of_s(y.s, 3);
        let id = f.lookup(fut, past).unwrap();
        let mut g = vec![0.0; f.len()];
        g[id] = 1.0;
        let map = PerturbedMap::new(&m, &f, &g).unwrap();
        let z = map.apply(p).unwrap();
        assert!((z.w - y.w - f.amplitude).abs() < 1e-15);
        assert_eq!((z.u, z.s), (y.u, y.s));
        // sup displacement bounded by the amplitude
        let all = vec![1.0; f.len()];
        let map = PerturbedMap::new(&m, &f, &all).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let p = Point::new(rng.gen(), rng.gen(), rng.gen());
            let d = map.apply(p).unwrap().dist_inf(&m.base_apply(p).unwrap());
            assert!(d <= f.amplitude + 1e-15);
        }
    }

    #[test]
    fn inverse_examples() {
        let m = HorseshoeModel::ref3();
        let map = PerturbedMap::base(&m);
        let x = map.apply_inverse(Point::new(0.5, 0.35, 0.575), 1).unwrap();
        assert!(x.dist_inf(&Point::new(0.5, 0.2, 0.8)) < 1e-15);
        assert_eq!(map.apply_inverse(Point::new(0.5, 0.9, 0.1), 0), Err(ModelError::BranchError(1)));
    }

    #[test]
    fn perturbed_round_trip() {
        let (m, f) = ref3_family(2f64.powi(-6));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g: Vec<f64> = (0..f.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let map = PerturbedMap::new(&m, &f, &g).unwrap();
        for _ in 0..1000 {
            let p = Point::new(rng.gen(), rng.gen(), rng.gen());
            let i = m.box_of_u(p.u).unwrap();
            let y = map.apply(p).unwrap();
            let back = map.apply_inverse(y, i).unwrap();
            assert!(map.apply(back).unwrap().dist_inf(&y) < 1e-10);
        }
    }

    #[test]
    fn bump_profile() {
        let (_, f) = ref3_family(2f64.powi(-6));
        assert_eq!(f.bump(0.3).0, 1.0);
        assert_eq!(f.bump(1.2).0, 1.0);
        assert_eq!(f.bump(1.44).0, 0.0);
        let mut prev = 1.0;
        for k in 1..100 {
            let r = 1.2 + 0.24 * k as f64 / 100.0;
            let (v, dv) = f.bump(r);
            assert!(v <= prev && dv <= 0.0);
            let h = 1e-6;
            let fd = (f.bump(r + h).0 - f.bump(r - h).0) / (2.0 * h);
            assert!((fd - dv).abs() < 1e-4);
            prev = v;
        }
    }

    #[test]
    fn bad_partitions_rejected() {
        let m = HorseshoeModel::ref3();
        let leaves = vec![Word::from_one_based(&[1], Orientation::Backward)];
        let words = enumerate_words(m.subshift(), 1, None);
        assert!(matches!(
            PerturbationFamily::from_blocks(&m, leaves, words, 0.1, 0.01, 1.2),
            Err(ModelError::PartitionError(_))
        ));
        assert!(PerturbationFamily::make(&m, BlockSpec { alpha: 1.5, alpha_tilde: 0.1 }, 0.1, 1.2, 1.0).is_err());
    }
}
