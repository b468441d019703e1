//! Leafwise function systems under a translation family, transversality and
//! distortion checks, L² densities of the wall measures, and the choice of `t*`.

use crate::model::{HorseshoeModel, ModelError, PerturbationFamily, PerturbedMap};
use crate::pieces::{piece_affine, pieces_at_scale, PieceAffine};
use crate::stacking::{nonrecurrent_pattern, StackingError};
use crate::symbolic::{enumerate_words, LeafApprox, Symbol, Word};
use crate::thermo::{backward_measure, MarkovMeasure, WallMass};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// Leaf-pattern and word-block length of the translation family.
pub const FAMILY_DEPTH: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarstrandError {
    #[error("no sampled parameter gives bounded densities")]
    SelectionError,
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stacking(#[from] StackingError),
}

/// Blocks (2-letter leaf pattern, 2-letter word) with physical shift `δ·t_B`.
pub fn translation_family(model: &HorseshoeModel, delta: f64) -> Result<PerturbationFamily, ModelError> {
    PerturbationFamily::uniform(model, FAMILY_DEPTH, FAMILY_DEPTH, delta, 1.2)
}

/// `φ_θ̲(x) = offset + slope·x` for each word of one leaf.
#[derive(Clone, Debug, Serialize)]
pub struct FunctionSystem {
    pub leaf: LeafApprox,
    pub maps: Vec<(Word, f64, f64)>,
}

impl FunctionSystem {
    pub fn image(&self, i: usize) -> [f64; 2] {
        let (_, c, l) = &self.maps[i];
        [*c, c + l]
    }
}

pub fn function_system(map: &PerturbedMap, leaf: &LeafApprox, words: &[Word]) -> Result<FunctionSystem, ModelError> {
    let maps = words
        .iter()
        .map(|w| {
            let pa = piece_affine(map, leaf, w.letters())?;
            Ok((w.clone(), pa.offset(map), pa.slope))
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(FunctionSystem { leaf: leaf.clone(), maps })
}

/// Left endpoint of the depth-`m` nested interval and its error `(max λws)^m`.
pub fn pi_limit(map: &PerturbedMap, leaf: &LeafApprox, theta_plus: &[Symbol]) -> Result<(f64, f64), ModelError> {
    let pa = piece_affine(map, leaf, theta_plus)?;
    Ok((pa.offset(map), map.model().max_rate_ws().powi(theta_plus.len() as i32)))
}

#[derive(Clone, Debug, Serialize)]
pub struct TransversalityReport {
    pub pairs: usize,
    /// Smallest `|d(Δπ)/dt|` along the first-letter block of θ, per unit shift.
    pub min_derivative: f64,
    /// `(r, max over pairs of Leb{t : |Δπ| ≤ r}/r)`.
    pub c_by_r: Vec<(f64, f64)>,
}

impl TransversalityReport {
    pub fn c(&self) -> f64 {
        self.c_by_r.iter().map(|x| x.1).fold(0.0, f64::max)
    }

    pub fn stability_ratio(&self) -> f64 {
        let lo = self.c_by_r.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        self.c() / lo
    }
}

#[derive(Clone, Debug)]
pub struct TransversalityConfig {
    pub pairs: usize,
    pub depth: usize,
    pub leaf_depth: usize,
    pub other_samples: usize,
    pub r_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for TransversalityConfig {
    fn default() -> Self {
        Self { pairs: 1000, depth: 8, leaf_depth: 4, other_samples: 64, r_grid: vec![1e-2, 1e-3, 1e-4], seed: 1 }
    }
}

fn random_word(rng: &mut impl Rng, model: &HorseshoeModel, after: Symbol, len: usize, first: Option<Symbol>) -> Vec<Symbol> {
    let a = model.subshift();
    let n = model.n_symbols() as Symbol;
    let mut w = Vec::with_capacity(len);
    let mut prev = after;
    while w.len() < len {
        let c = if w.is_empty() && first.is_some() { first.unwrap() } else { rng.gen_range(0..n) };
        if a.allows(prev, c) {
            w.push(c);
            prev = c;
        } else if w.is_empty() && first.is_some() {
            return Vec::new();
        }
    }
    w
}

/// Transversality on the translation family: sampled pairs `θ, τ` with `θ₁ ≠ τ₁`,
/// both non-recurrent for the leaf's 2-letter pattern.
pub fn transversality_constant(
    model: &HorseshoeModel,
    family: &PerturbationFamily,
    cfg: &TransversalityConfig,
) -> Result<TransversalityReport, MarstrandError> {
    if cfg.leaf_depth < FAMILY_DEPTH + 1 {
        return Err(MarstrandError::Config("leaf depth must exceed the pattern length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = model.n_symbols() as Symbol;
    let zero = vec![0.0; family.len()];
    let map = PerturbedMap::new(model, family, &zero)?;
    let delta = family.amplitude;
    let mut pairs: Vec<(LeafApprox, PieceAffine, PieceAffine, usize)> = Vec::with_capacity(cfg.pairs);
    let mut guard = 0;
    while pairs.len() < cfg.pairs {
        guard += 1;
        if guard > 1000 * cfg.pairs {
            return Err(MarstrandError::Config("could not sample non-recurrent pairs".into()));
        }
        let start = rng.gen_range(0..n);
        let lw: Vec<Symbol> = std::iter::once(start).chain(random_word(&mut rng, model, start, cfg.leaf_depth - 1, None)).collect();
        if !nonrecurrent_pattern(&lw, &[], FAMILY_DEPTH, FAMILY_DEPTH + 1) {
            continue;
        }
        let th0 = *lw.last().unwrap();
        let a1 = rng.gen_range(0..n);
        let b1 = rng.gen_range(0..n);
        if a1 == b1 {
            continue;
        }
        let theta = random_word(&mut rng, model, th0, cfg.depth, Some(a1));
        let tau = random_word(&mut rng, model, th0, cfg.depth, Some(b1));
        if theta.is_empty() || tau.is_empty() {
            continue;
        }
        let window = FAMILY_DEPTH + 1;
        if !nonrecurrent_pattern(&lw, &theta, FAMILY_DEPTH, window) || !nonrecurrent_pattern(&lw, &tau, FAMILY_DEPTH, window) {
            continue;
        }
        let leaf = model.leaf(Word::backward(lw))?;
        let fut = model.leaf_future(&leaf, FAMILY_DEPTH + 1);
        let block = family
            .lookup(fut.iter().copied(), theta.iter().copied())
            .ok_or_else(|| MarstrandError::Config("address outside the family".into()))?;
        let pt = piece_affine(&map, &leaf, &theta)?;
        let pu = piece_affine(&map, &leaf, &tau)?;
        pairs.push((leaf, pt, pu, block));
    }
    let h = 1e-4;
    let stats: Vec<(f64, Vec<f64>)> = pairs
        .par_iter()
        .enumerate()
        .map(|(k, (_, pt, pu, b))| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9).clone();
            rng.set_stream(k as u64);
            let mut g: Vec<f64> = (0..family.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let gap = |g: &[f64]| pt.offset_with(delta, g, 0) - pu.offset_with(delta, g, 0);
            let keep = g[*b];
            g[*b] = keep + h;
            let up = gap(&g);
            g[*b] = keep - h;
            let dn = gap(&g);
            let deriv = (up - dn) / (2.0 * h * delta);
            // condition on t_B: Δπ = a + deriv·x over x ∈ [−δ, δ]
            let mut probs = vec![0.0; cfg.r_grid.len()];
            for _ in 0..cfg.other_samples {
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj = if j == *b { 0.0 } else { rng.gen_range(-1.0..1.0) };
                }
                let a = gap(&g);
                for (slot, &r) in probs.iter_mut().zip(&cfg.r_grid) {
                    let c = deriv.abs().max(1e-300);
                    let lo = ((-a - r) / c).max(-delta);
                    let hi = ((-a + r) / c).min(delta);
                    *slot += (hi - lo).max(0.0) / (2.0 * delta);
                }
            }
            (deriv.abs(), probs.into_iter().map(|p| p / cfg.other_samples as f64).collect())
        })
        .collect();
    let min_derivative = stats.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let c_by_r = cfg
        .r_grid
        .iter()
        .enumerate()
        .map(|(j, &r)| (r, stats.iter().map(|s| s.1[j] / r).fold(0.0, f64::max)))
        .collect();
    Ok(TransversalityReport { pairs: pairs.len(), min_derivative, c_by_r })
}

/// `max |log(‖φ¹′‖/‖φ²′‖)| / |θ̲|` over words of length `1..=n_max`.
pub fn distortion_continuity_check(m1: &HorseshoeModel, m2: &HorseshoeModel, n_max: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for n in 1..=n_max {
        for w in enumerate_words(m1.subshift(), n, None) {
            let r = (m1.ds(w.letters()) / m2.ds(w.letters())).ln().abs() / n as f64;
            worst = worst.max(r);
        }
    }
    worst
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct L2Density {
    /// `Σ (mass/width)²·width`.
    pub squared: f64,
    pub norm: f64,
    pub total_mass: f64,
}

/// Histogram density of interval-spread masses at `bin_width`.
pub fn density_l2(masses: &[WallMass], bin_width: f64) -> L2Density {
    if masses.is_empty() {
        return L2Density { squared: 0.0, norm: 0.0, total_mass: 0.0 };
    }
    let lo = masses.iter().map(|m| m.interval[0]).fold(f64::INFINITY, f64::min);
    let hi = masses.iter().map(|m| m.interval[1]).fold(f64::NEG_INFINITY, f64::max);
    let origin = (lo / bin_width).floor() * bin_width;
    let nb = (((hi - origin) / bin_width).ceil() as usize).max(1);
    let mut bins = vec![0.0; nb];
    for m in masses {
        let [a, b] = m.interval;
        let len = b - a;
        let first = ((a - origin) / bin_width).floor().max(0.0) as usize;
        let last = (((b - origin) / bin_width).ceil() as usize).min(nb);
        for (k, bin) in bins.iter_mut().enumerate().take(last).skip(first) {
            let x0 = origin + k as f64 * bin_width;
            let ov = (b.min(x0 + bin_width) - a.max(x0)).max(0.0);
            *bin += if len > 0.0 { m.mass * ov / len } else { 0.0 };
        }
    }
    let squared: f64 = bins.iter().map(|&x| x * x / bin_width).sum();
    L2Density { squared, norm: squared.sqrt(), total_mass: masses.iter().map(|m| m.mass).sum() }
}

pub fn leaf_density(
    measure: &MarkovMeasure,
    map: &PerturbedMap,
    leaf: &LeafApprox,
    rho: f64,
    c1: f64,
    bin_width: f64,
) -> Result<L2Density, ModelError> {
    let masses: Vec<WallMass> = pieces_at_scale(map, leaf, rho, c1)?
        .into_iter()
        .map(|p| WallMass { mass: measure.cylinder(p.word.letters()), word: p.word, interval: p.interval })
        .collect();
    Ok(density_l2(&masses, bin_width))
}

#[derive(Clone, Debug)]
pub struct MarstrandConfig {
    pub xi: f64,
    pub rho: f64,
    pub t_samples: usize,
    pub leaf_samples: usize,
    pub c14: f64,
    pub c1: f64,
    pub bin_width: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LeafScore {
    pub block: Word,
    pub weight: f64,
    pub l2_squared: f64,
    pub l2_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MarstrandSelection {
    /// Parameters in `[−1,1]^N`; the physical shift is `δ·t*`.
    pub t_star: Vec<f64>,
    pub t_index: usize,
    pub k1: f64,
    /// `Σ_MB`: sampled leaf blocks with squared L² density `≤ K1`.
    pub good_blocks: Vec<Word>,
    pub coverage: f64,
    pub scores: Vec<LeafScore>,
    pub quantiles: Vec<f64>,
}

fn weighted_quantile(vals: &[(f64, f64)], q: f64) -> f64 {
    let mut v = vals.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = v.iter().map(|x| x.1).sum();
    let mut acc = 0.0;
    for (x, w) in &v {
        acc += w;
        if acc >= q * total - 1e-12 {
            return *x;
        }
    }
    v.last().map_or(f64::INFINITY, |x| x.0)
}

/// Leaf blocks at u-scale `c₁₄ρ`, sampled by `μ⁻` (all of them when affordable).
pub fn sample_leaf_blocks(
    model: &HorseshoeModel,
    measure: &MarkovMeasure,
    scale: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Vec<(Word, f64)> {
    let blocks = model.leaf_blocks_at_scale(scale);
    let weights: Vec<f64> = blocks.iter().map(|b| backward_measure(measure, b)).collect();
    if samples >= blocks.len() {
        return blocks.into_iter().zip(weights).collect();
    }
    let dist = WeightedIndex::new(&weights).expect("positive block weights");
    (0..samples).map(|_| (blocks[dist.sample(rng)].clone(), 1.0 / samples as f64)).collect()
}

/// The sampled `t` minimizing the `μ⁻`-weighted `(1−ξ/2)`-quantile of leafwise
/// squared L² densities.
pub fn select_marstrand_parameter(
    model: &HorseshoeModel,
    measure: &MarkovMeasure,
    family: &PerturbationFamily,
    cfg: &MarstrandConfig,
) -> Result<MarstrandSelection, MarstrandError> {
    if !(cfg.xi > 0.0 && cfg.xi < 1.0) {
        return Err(MarstrandError::Config(format!("xi = {} must lie in (0,1)", cfg.xi)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let leaves = sample_leaf_blocks(model, measure, cfg.c14 * cfg.rho, cfg.leaf_samples, &mut rng);
    let mut ts: Vec<Vec<f64>> = vec![vec![0.0; family.len()]];
    while ts.len() < cfg.t_samples.max(1) {
        ts.push((0..family.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    let q = 1.0 - cfg.xi / 2.0;
    let mut best: Option<(usize, f64, Vec<LeafScore>)> = None;
    let mut quantiles = Vec::with_capacity(ts.len());
    for (ti, t) in ts.iter().enumerate() {
        let map = PerturbedMap::new(model, family, t)?;
        let scores: Vec<LeafScore> = leaves
            .par_iter()
            .map(|(b, w)| {
                let leaf = model.leaf(b.clone())?;
                let d = leaf_density(measure, &map, &leaf, cfg.rho, cfg.c1, cfg.bin_width)?;
                Ok(LeafScore { block: b.clone(), weight: *w, l2_squared: d.squared, l2_norm: d.norm })
            })
            .collect::<Result<_, ModelError>>()?;
        let vals: Vec<(f64, f64)> = scores.iter().map(|s| (s.l2_squared, s.weight)).collect();
        let k = weighted_quantile(&vals, q);
        quantiles.push(k);
        if k.is_finite() && best.as_ref().map_or(true, |b| k < b.1) {
            best = Some((ti, k, scores));
        }
    }
    let (ti, k1, scores) = best.ok_or(MarstrandError::SelectionError)?;
    let total: f64 = scores.iter().map(|s| s.weight).sum();
    let mut good: Vec<Word> = scores.iter().filter(|s| s.l2_squared <= k1).map(|s| s.block.clone()).collect();
    good.sort();
    good.dedup();
    let coverage = scores.iter().filter(|s| s.l2_squared <= k1).map(|s| s.weight).sum::<f64>() / total;
    Ok(MarstrandSelection { t_star: ts[ti].clone(), t_index: ti, k1, good_blocks: good, coverage, scores, quantiles })
}

/// `η` solving `(1+ε₀/4)η + (ε₀/4)·log λ = 0`.
pub fn eta_from_eps0(eps0: f64, lambda: f64) -> f64 {
    -(eps0 / 4.0) * lambda.ln() / (1.0 + eps0 / 4.0)
}

/// `D_s/‖φ′‖` extremes over the given words: the measured `c₉`.
pub fn c9_constant(map: &PerturbedMap, leaf: &LeafApprox, words: &[Vec<Symbol>]) -> Result<f64, ModelError> {
    let m = map.model();
    let mut c: f64 = 1.0;
    for w in words {
        let iv = crate::pieces::piece_interval(map, leaf, w)?;
        let r = m.ds(w) / (iv[1] - iv[0]);
        c = c.max(r).max(1.0 / r);
    }
    Ok(c)
}

/// Discretized `∫∫∫ χ_r(|π^t(θ)−π^t(τ)|) dμ(θ)dμ(τ)dt` over depth-`m` words and the
/// given parameter samples: sum over all ordered pairs.
pub fn ssu_pairwise(pis: &[Vec<f64>], weights: &[f64], r: f64) -> f64 {
    let nt = pis.len() as f64;
    let mut total = 0.0;
    for p in pis {
        for (i, x) in p.iter().enumerate() {
            for (j, y) in p.iter().enumerate() {
                if (x - y).abs() <= r {
                    total += weights[i] * weights[j];
                }
            }
        }
    }
    total / nt
}

/// The same statistic split over `A_β` (pairs whose common prefix has length β);
/// `words` are the depth-`m` words in lexicographic order.
pub fn ssu_partition(pis: &[Vec<f64>], weights: &[f64], words: &[Vec<Symbol>], r: f64) -> (f64, Vec<f64>) {
    let m = words.first().map_or(0, |w| w.len());
    let mut parts = vec![0.0; m + 1];
    let nt = pis.len() as f64;
    for p in pis {
        for i in 0..words.len() {
            for j in 0..words.len() {
                let beta = words[i].iter().zip(&words[j]).take_while(|(a, b)| a == b).count();
                if (p[i] - p[j]).abs() <= r {
                    parts[beta] += weights[i] * weights[j] / nt;
                }
            }
        }
    }
    (parts.iter().sum(), parts)
}
