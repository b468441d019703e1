//! Stackings of pieces over fundamental intervals and the candidate recurrent compact set.

use super::{is_nonrecurrent_word, StackingError};
use crate::intervals::IntervalSet;
use crate::marstrand::leaf_density;
use crate::model::{HorseshoeModel, PerturbedMap};
use crate::pieces::{pieces_at_scale, Piece};
use crate::symbolic::{LeafApprox, Symbol};
use crate::thermo::MarkovMeasure;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Debug, Serialize)]
pub struct Stack {
    /// Fundamental interval `[iρ, (i+1)ρ]`.
    pub index: i64,
    pub interval: [f64; 2],
    pub pieces: Vec<Piece>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StackingSet {
    pub leaf: LeafApprox,
    pub scale: f64,
    pub relaxation: f64,
    pub stacks: Vec<Stack>,
    pub input_pieces: usize,
    pub retained: usize,
}

impl StackingSet {
    /// Union of the fundamental intervals.
    pub fn support(&self) -> IntervalSet {
        IntervalSet::new(self.stacks.iter().map(|s| s.interval).collect())
    }

    /// Union of the wall projections of the retained pieces.
    pub fn projection(&self) -> IntervalSet {
        IntervalSet::new(self.stacks.iter().flat_map(|s| s.pieces.iter().map(|p| p.interval)).collect())
    }

    /// Every piece meets its interval dilated to `relaxation·ρ` about the centre.
    pub fn check_relaxed(&self) -> bool {
        let h = 0.5 * self.relaxation * self.scale;
        self.stacks.iter().all(|s| {
            let c = 0.5 * (s.interval[0] + s.interval[1]);
            s.pieces.iter().all(|p| p.interval[1] >= c - h && p.interval[0] <= c + h)
        })
    }
}

/// `max(1, ⌈Q̃·ρ^{−(c/k)(d−1)}⌉)`.
pub fn min_stack_size(q_tilde: f64, rho: f64, c: f64, k: f64, d: f64) -> usize {
    let x = q_tilde * rho.powf(-(c / k) * (d - 1.0));
    ((x - 1e-9).ceil().max(1.0)) as usize
}

fn bucket(pieces: Vec<Piece>, rho: f64) -> BTreeMap<i64, Vec<Piece>> {
    let mut m: BTreeMap<i64, Vec<Piece>> = BTreeMap::new();
    for p in pieces {
        let c = 0.5 * (p.interval[0] + p.interval[1]);
        m.entry((c / rho).floor() as i64).or_default().push(p);
    }
    m
}

/// One stack per fundamental interval holding at least `min_size` piece centres.
pub fn build_stackings(pieces: Vec<Piece>, rho: f64, min_size: usize, relaxation: f64) -> Result<StackingSet, StackingError> {
    let leaf = pieces.first().map(|p| p.leaf.clone()).ok_or(StackingError::EmptyStacking(min_size))?;
    let input = pieces.len();
    let stacks: Vec<Stack> = bucket(pieces, rho)
        .into_iter()
        .filter(|(_, v)| v.len() >= min_size)
        .map(|(i, v)| Stack { index: i, interval: [i as f64 * rho, (i + 1) as f64 * rho], pieces: v })
        .collect();
    if stacks.is_empty() {
        return Err(StackingError::EmptyStacking(min_size));
    }
    let retained = stacks.iter().map(|s| s.pieces.len()).sum();
    Ok(StackingSet { leaf, scale: rho, relaxation, stacks, input_pieces: input, retained })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KParams {
    pub rho: f64,
    /// Upper stable dimension.
    pub d: f64,
    pub c: f64,
    pub k: f64,
    pub c1: f64,
    pub c14: f64,
    pub c25: f64,
    pub q_tilde: f64,
    /// Per-parent cap constant.
    pub c19: f64,
    /// Distinct-parent target constant.
    pub c24: f64,
}

impl KParams {
    pub fn new(model: &HorseshoeModel, rho: f64, d: f64) -> Self {
        Self {
            rho,
            d,
            c: model.default_c(),
            k: 2.0,
            c1: model.default_c1(),
            c14: 1.0,
            c25: 3.0,
            q_tilde: 0.5,
            c19: 1.0,
            c24: 0.5,
        }
    }

    pub fn parent_scale(&self) -> f64 {
        self.rho.powf(self.c / self.k)
    }

    pub fn min_size(&self) -> usize {
        min_stack_size(self.q_tilde, self.rho, self.c, self.k, self.d)
    }

    pub fn cap(&self) -> usize {
        let x = self.c19 * self.rho.powf(-(1.0 - self.c / self.k) * (self.d - 1.0));
        ((x - 1e-9).ceil().max(1.0)) as usize
    }

    pub fn parent_target(&self) -> usize {
        min_stack_size(self.c24, self.rho, self.c, self.k, self.d)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WellDistributed {
    pub set: StackingSet,
    /// Distinct scale-`ρ^{c/k}` parents per stack.
    pub parents: Vec<usize>,
    pub target_parents: usize,
    pub shortfall: usize,
    pub cap: usize,
    pub filtered_out: usize,
}

/// Shortest prefix with `D_s ≤ c₁·scale`.
fn parent_len(model: &HorseshoeModel, word: &[Symbol], threshold: f64) -> usize {
    (1..=word.len()).find(|&n| model.ds(&word[..n]) <= threshold).unwrap_or(word.len())
}

/// Non-recurrent pieces at scale ρ, stacked by fundamental interval, with at most
/// `cap` pieces from any one parent cylinder per stack. Stacks with fewer than the
/// target number of distinct parents are dropped and counted in `shortfall`.
pub fn build_well_distributed(map: &PerturbedMap, leaf: &LeafApprox, p: &KParams) -> Result<WellDistributed, StackingError> {
    let model = map.model();
    let alpha = p.parent_scale();
    let all = pieces_at_scale(map, leaf, p.rho, p.c1)?;
    let n_all = all.len();
    let mut pieces = Vec::with_capacity(n_all);
    for pc in all {
        if is_nonrecurrent_word(model, leaf, pc.word.letters(), alpha, p.rho)? {
            pieces.push(pc);
        }
    }
    let filtered_out = n_all - pieces.len();
    let cap = p.cap();
    let min_size = p.min_size();
    let threshold = p.c1 * alpha;
    let target = p.parent_target();
    let mut shortfall = 0;
    let mut stacks = Vec::new();
    let mut parents = Vec::new();
    for (i, v) in bucket(pieces, p.rho) {
        let mut per: BTreeMap<Vec<Symbol>, usize> = BTreeMap::new();
        let mut kept = Vec::new();
        for pc in v {
            let w = pc.word.letters();
            let par = w[..parent_len(model, w, threshold)].to_vec();
            let n = per.entry(par).or_insert(0);
            if *n < cap {
                *n += 1;
                kept.push(pc);
            }
        }
        if kept.len() < min_size {
            continue;
        }
        if per.len() < target {
            shortfall += 1;
        } else {
            parents.push(per.len());
            stacks.push(Stack { index: i, interval: [i as f64 * p.rho, (i + 1) as f64 * p.rho], pieces: kept });
        }
    }
    if stacks.is_empty() {
        return Err(StackingError::EmptyStacking(min_size));
    }
    let retained = stacks.iter().map(|s| s.pieces.len()).sum();
    Ok(WellDistributed {
        set: StackingSet { leaf: leaf.clone(), scale: p.rho, relaxation: p.c25, stacks, input_pieces: n_all, retained },
        parents,
        target_parents: target,
        shortfall,
        cap,
        filtered_out,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KBlock {
    /// Backward block, reading order, zero-based.
    pub letters: Vec<Symbol>,
    pub u_range: [f64; 2],
    pub set: IntervalSet,
    pub stacks: usize,
    pub min_parents: usize,
}

/// Per leaf-block wall sets; `default` applies to leaves of no listed block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateK {
    pub rho: f64,
    pub block_scale: f64,
    pub blocks: BTreeMap<String, KBlock>,
    pub default: Option<IntervalSet>,
    pub skipped_blocks: usize,
}

pub fn block_key(letters: &[Symbol]) -> String {
    letters.iter().map(|&c| (c as usize + 1).to_string()).collect::<Vec<_>>().join(",")
}

impl CandidateK {
    /// The same set on every leaf.
    pub fn uniform(set: IntervalSet, rho: f64, block_scale: f64) -> Self {
        Self { rho, block_scale, blocks: BTreeMap::new(), default: Some(set), skipped_blocks: 0 }
    }

    fn lengths(&self) -> BTreeSet<usize> {
        self.blocks.values().map(|b| b.letters.len()).collect()
    }

    /// Wall set of the leaf whose backward letters end with `letters`.
    pub fn get(&self, letters: &[Symbol]) -> Option<&IntervalSet> {
        for n in self.lengths() {
            if n <= letters.len() {
                if let Some(b) = self.blocks.get(&block_key(&letters[letters.len() - n..])) {
                    return Some(&b.set);
                }
            }
        }
        self.default.as_ref()
    }

    /// `K₋δ`: erosion by δ on the wall, block shrinkage by δ in u.
    pub fn relaxed_interior(&self, delta: f64) -> Self {
        let mut out = self.clone();
        for b in out.blocks.values_mut() {
            b.set = b.set.erode(delta);
            b.u_range = [b.u_range[0] + delta, b.u_range[1] - delta];
        }
        out.default = out.default.map(|s| s.erode(delta));
        out
    }

    /// Whether `(x, leaf)` lies in K, with `u` checked against the block's range.
    pub fn contains(&self, letters: &[Symbol], u: f64, x: f64) -> bool {
        for n in self.lengths() {
            if n <= letters.len() {
                if let Some(b) = self.blocks.get(&block_key(&letters[letters.len() - n..])) {
                    return b.u_range[0] <= u && u <= b.u_range[1] && b.set.contains(x);
                }
            }
        }
        self.default.as_ref().is_some_and(|s| s.contains(x))
    }

    pub fn min_measure(&self) -> f64 {
        let m = self.blocks.values().map(|b| b.set.measure()).fold(f64::INFINITY, f64::min);
        match &self.default {
            Some(d) => m.min(d.measure()),
            None => m,
        }
    }

    /// Leaf blocks the grid runs over.
    pub fn grid_blocks(&self, model: &HorseshoeModel) -> Vec<(Vec<Symbol>, IntervalSet)> {
        if self.default.is_some() {
            model
                .leaf_blocks_at_scale(self.block_scale)
                .into_iter()
                .filter_map(|w| self.get(w.letters()).map(|s| (w.letters().to_vec(), s.clone())))
                .collect()
        } else {
            self.blocks.values().map(|b| (b.letters.clone(), b.set.clone())).collect()
        }
    }
}

/// K over the leaf blocks at scale `c₁₄ρ` whose squared L² density at the given map
/// is `≤ k1` (all blocks when `k1` is `None`): union of fundamental intervals of
/// the well-distributed stacks of the block's leaf.
pub fn build_candidate_k(
    map: &PerturbedMap,
    measure: &MarkovMeasure,
    p: &KParams,
    k1: Option<f64>,
) -> Result<CandidateK, StackingError> {
    let model = map.model();
    let scale = p.c14 * p.rho;
    let blocks = model.leaf_blocks_at_scale(scale);
    let built: Vec<Option<KBlock>> = blocks
        .par_iter()
        .map(|b| {
            let leaf = model.leaf(b.clone())?;
            if let Some(k1) = k1 {
                if leaf_density(measure, map, &leaf, p.rho, p.c1, p.rho)?.squared > k1 {
                    return Ok(None);
                }
            }
            match build_well_distributed(map, &leaf, p) {
                Ok(wd) => Ok(Some(KBlock {
                    letters: b.letters().to_vec(),
                    u_range: model.leaf_u_interval(b.letters()),
                    set: wd.set.support(),
                    stacks: wd.set.stacks.len(),
                    min_parents: wd.parents.iter().copied().min().unwrap_or(0),
                })),
                Err(StackingError::EmptyStacking(_)) | Err(StackingError::InsufficientDepth { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, StackingError>>()?;
    let skipped = built.iter().filter(|b| b.is_none()).count();
    let blocks: BTreeMap<String, KBlock> = built.into_iter().flatten().map(|b| (block_key(&b.letters), b)).collect();
    if blocks.is_empty() {
        return Err(StackingError::EmptyK);
    }
    Ok(CandidateK { rho: p.rho, block_scale: scale, blocks, default: None, skipped_blocks: skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dimension::lambda_n;
    use crate::thermo::build_gibbs_measure;

    fn ref3_pieces(rho: f64, leaf: &[usize]) -> (HorseshoeModel, Vec<Piece>) {
        let m = HorseshoeModel::ref3();
        let l = m.leaf_from(leaf).unwrap();
        let p = pieces_at_scale(&PerturbedMap::base(&m), &l, rho, 1.0).unwrap();
        (m, p)
    }

    /// Occupancy of the 16 intervals by centres of `Σ_k 2^{-k}t + 1/32`, in 1/64 units.
    fn occupancy_oracle() -> Vec<usize> {
        let mut counts = vec![0; 16];
        for code in 0..81usize {
            let mut c = 0usize;
            let mut x = code;
            for k in 0..4 {
                c += (x % 3) * (16 >> k);
                x /= 3;
            }
            counts[(c + 2) / 4] += 1;
        }
        counts
    }

    #[test]
    fn ref3_first_stacking() {
        let (_, pieces) = ref3_pieces(1.0 / 16.0, &[2, 3]);
        assert_eq!(pieces.len(), 81);
        let oracle = occupancy_oracle();
        let set = build_stackings(pieces.clone(), 1.0 / 16.0, 1, 1.0).unwrap();
        let got: Vec<usize> = (0..16).map(|i| set.stacks.iter().find(|s| s.index == i).map_or(0, |s| s.pieces.len())).collect();
        assert_eq!(got, oracle);
        let min_size = 4;
        let s4 = build_stackings(pieces.clone(), 1.0 / 16.0, min_size, 3.0).unwrap();
        assert_eq!(s4.stacks.len(), oracle.iter().filter(|&&n| n >= min_size).count());
        assert!(s4.retained >= 81 - 16 * min_size);
        assert!(s4.check_relaxed() && set.check_relaxed());
        let maxocc = *oracle.iter().max().unwrap();
        assert!(matches!(build_stackings(pieces, 1.0 / 16.0, maxocc + 1, 1.0), Err(StackingError::EmptyStacking(_))));
    }

    #[test]
    fn stacks_are_disjoint() {
        let (_, pieces) = ref3_pieces(1.0 / 32.0, &[1, 1, 2]);
        let set = build_stackings(pieces, 1.0 / 32.0, 2, 3.0).unwrap();
        let mut seen = BTreeSet::new();
        for s in &set.stacks {
            for p in &s.pieces {
                assert!(seen.insert(p.word.letters().to_vec()));
            }
        }
        assert_eq!(seen.len(), set.retained);
    }

    /// Most distinct length-4 prefixes among the 3⁸ words landing in one interval of 2^-8.
    fn parent_oracle() -> usize {
        let mut sets: BTreeMap<i64, BTreeSet<usize>> = BTreeMap::new();
        for code in 0..6561usize {
            let mut c = 0i64;
            let mut x = code;
            let mut parent = 0;
            for k in 0..8 {
                let d = x % 3;
                c += (d as i64) * (128 >> k);
                if k < 4 {
                    parent = parent * 3 + d;
                }
                x /= 3;
            }
            // centre c/512 + 1/512 in units of 1/512; interval width 2
            sets.entry((c + 1).div_euclid(2)).or_default().insert(parent);
        }
        sets.values().map(|s| s.len()).max().unwrap()
    }

    #[test]
    fn ref3_well_distributed() {
        let m = HorseshoeModel::ref3();
        let d = 3f64.ln() / 2f64.ln();
        let p = KParams { c24: 0.75, ..KParams::new(&m, 2f64.powi(-8), d) };
        assert_eq!(p.c, 1.0);
        assert_eq!(p.parent_target(), 4);
        let leaf = m.leaf_from(&[1, 2, 3, 1, 3, 2]).unwrap();
        let map = PerturbedMap::base(&m);
        let wd = build_well_distributed(&map, &leaf, &p).unwrap();
        assert!(wd.parents.iter().all(|&n| n >= 4), "{:?}", wd.parents);
        let alpha = p.parent_scale();
        for s in &wd.set.stacks {
            assert!(s.pieces.len() >= p.min_size());
            for pc in &s.pieces {
                assert!(is_nonrecurrent_word(&m, &leaf, pc.word.letters(), alpha, p.rho).unwrap());
            }
        }
        assert!(wd.parents.iter().max().unwrap() <= &parent_oracle());
        assert!(wd.set.projection().measure() >= 0.5);
    }

    #[test]
    fn candidate_k_ref3() {
        let m = HorseshoeModel::ref3();
        let d = lambda_n(&m, 4).unwrap();
        let g = build_gibbs_measure(&m, d).unwrap();
        let p = KParams::new(&m, 2f64.powi(-6), d);
        let k = build_candidate_k(&PerturbedMap::base(&m), &g, &p, None).unwrap();
        assert!(k.min_measure() >= 0.1, "{}", k.min_measure());
        // two leaves of one block
        let a = [1u8, 0, 2, 1, 0, 2, 0];
        let b = [2u8, 2, 2, 1, 0, 2, 0];
        assert!(k.get(&a).is_some());
        assert_eq!(k.get(&a), k.get(&b));
        let json = serde_json::to_string(&k).unwrap();
        let back: CandidateK = serde_json::from_str(&json).unwrap();
        assert_eq!(back, k);
        let e = k.relaxed_interior(0.0);
        assert_eq!(e, k);
    }

    #[test]
    fn candidate_k_ref2_shrinks() {
        let m = HorseshoeModel::ref2();
        let d = 2f64.ln() / 3f64.ln();
        let g = build_gibbs_measure(&m, d).unwrap();
        let mut leb = Vec::new();
        for n in [3, 5] {
            let p = KParams::new(&m, 3f64.powi(-n), d);
            match build_candidate_k(&PerturbedMap::base(&m), &g, &p, None) {
                Ok(k) => leb.push(k.blocks.values().map(|b| b.set.measure()).fold(0.0, f64::max)),
                Err(StackingError::EmptyK) => leb.push(0.0),
                Err(e) => panic!("{e}"),
            }
        }
        assert!(leb[1] < leb[0] || leb[1] == 0.0, "{leb:?}");
    }
}
