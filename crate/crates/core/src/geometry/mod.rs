//! Certificates that a candidate `K` is recurrent, their robustness under small
//! perturbations, the dispersion check of piece endpoints, blender curve chasing
//! and projection interval tests.

use crate::model::{HorseshoeModel, ModelError, PerturbationFamily, PerturbedMap, WallPoint};
use crate::pieces::{extend_leaf, piece_blocks, piece_interval};
use crate::stacking::{block_key, CandidateK, StackingError};
use crate::symbolic::{enumerate_words, LeafApprox, Symbol, Word};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod blender;
mod projection;

pub use crate::pieces::{renormalize, Renormalized};
pub use blender::{blender_curve_chase, ChaseResult, Curve};
pub use projection::{projection_interval_test, ProjectionReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("no admissible letter keeps the curve in K at depth {0}")]
    ChaseFailed(usize),
    #[error("degenerate projection: {0}")]
    DegenerateMap(String),
    #[error("the block is met more than once along the piece")]
    RecurrentPiece,
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stacking(#[from] StackingError),
}

/// Margin recorded for a witness whose point leaves the piece.
pub const OUTSIDE_MARGIN: f64 = -1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// Leaf block, one-based, reading order.
    pub block: Vec<usize>,
    pub cell: [f64; 2],
    /// One-based forward word.
    pub word: Vec<usize>,
    pub raw: f64,
    pub grid_error: f64,
    pub margin: f64,
    pub expansion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceCertificate {
    pub dx: f64,
    pub max_len: usize,
    pub witnesses: Vec<Witness>,
    pub min_margin: f64,
    pub longest_word: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub block: Vec<usize>,
    pub x: f64,
    pub cell: [f64; 2],
    /// No piece of length `≤ max_len` meets the cell at all.
    pub uncovered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Verification {
    Certified(RecurrenceCertificate),
    Counterexample(Counterexample),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub dx: f64,
    pub max_len: usize,
    /// Halvings allowed for a cell without a witness.
    pub subdivisions: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { dx: 1e-3, max_len: 3, subdivisions: 6 }
    }
}

struct Candidate {
    word: Word,
    interval: [f64; 2],
    target: Option<crate::intervals::IntervalSet>,
}

struct Failure {
    cell: [f64; 2],
    met: bool,
}

fn leaf_of(model: &HorseshoeModel, letters: &[Symbol]) -> Result<LeafApprox, ModelError> {
    model.leaf(Word::backward(letters.to_vec()))
}

fn one_based(letters: &[Symbol]) -> Vec<usize> {
    letters.iter().map(|&c| c as usize + 1).collect()
}

fn zero_based(letters: &[usize]) -> Vec<Symbol> {
    letters.iter().map(|&c| (c - 1) as Symbol).collect()
}

fn candidates(map: &PerturbedMap, k: &CandidateK, leaf: &LeafApprox, max_len: usize) -> Result<Vec<Vec<Candidate>>, GeometryError> {
    let m = map.model();
    let mut out = Vec::with_capacity(max_len);
    for n in 1..=max_len {
        let mut row = Vec::new();
        for word in enumerate_words(m.subshift(), n, Some(leaf.box_symbol())) {
            let interval = piece_interval(map, leaf, word.letters())?;
            let ext = extend_leaf(m, leaf, word.letters())?;
            let target = k.get(ext.suffix.letters()).cloned();
            row.push(Candidate { word, interval, target });
        }
        out.push(row);
    }
    Ok(out)
}

/// `(raw depth, grid error)` of `R_a̲(x)` in its target block.
fn score(map: &PerturbedMap, leaf: &LeafApprox, c: &Candidate, x: f64, h: f64) -> Result<Option<(f64, f64)>, GeometryError> {
    let Some(target) = &c.target else { return Ok(None) };
    let expansion = 1.0 / (c.interval[1] - c.interval[0]);
    match renormalize(map, c.word.letters(), &WallPoint { x, leaf: leaf.clone() })? {
        Renormalized::Outside => Ok(None),
        Renormalized::Inside(p) => Ok(Some((target.depth(p.x), 0.5 * h * expansion))),
    }
}

fn certify_cell(
    map: &PerturbedMap,
    leaf: &LeafApprox,
    table: &[Vec<Candidate>],
    cell: [f64; 2],
    depth_left: usize,
    out: &mut Vec<Witness>,
) -> Result<Option<Failure>, GeometryError> {
    let met = table.iter().flatten().any(|c| c.interval[0] < cell[1] && c.interval[1] > cell[0]);
    if !met {
        return Ok(Some(Failure { cell, met }));
    }
    let x = 0.5 * (cell[0] + cell[1]);
    let h = cell[1] - cell[0];
    for row in table {
        let mut best: Option<Witness> = None;
        for c in row {
            if !(c.interval[0] < x && x < c.interval[1]) {
                continue;
            }
            if let Some((raw, err)) = score(map, leaf, c, x, h)? {
                if raw > 2.0 * err && best.as_ref().map_or(true, |b| raw - err > b.margin) {
                    best = Some(Witness {
                        block: one_based(leaf.suffix.letters()),
                        cell,
                        word: c.word.one_based(),
                        raw,
                        grid_error: err,
                        margin: raw - err,
                        expansion: 1.0 / (c.interval[1] - c.interval[0]),
                    });
                }
            }
        }
        if let Some(w) = best {
            out.push(w);
            return Ok(None);
        }
    }
    if depth_left == 0 {
        return Ok(Some(Failure { cell, met }));
    }
    for half in [[cell[0], x], [x, cell[1]]] {
        if let Some(f) = certify_cell(map, leaf, table, half, depth_left - 1, out)? {
            return Ok(Some(f));
        }
    }
    Ok(None)
}

/// Picks the reported point among failing cells (in grid order): the middle of the
/// first run of cells no piece meets, else the first failing cell.
fn pick_counterexample(block: &[Symbol], fails: &[Failure]) -> Counterexample {
    let blk = one_based(block);
    if let Some(start) = fails.iter().position(|f| !f.met) {
        let mut end = start;
        while end + 1 < fails.len() && !fails[end + 1].met && (fails[end + 1].cell[0] - fails[end].cell[1]).abs() < 1e-12 {
            end += 1;
        }
        let (lo, hi) = (fails[start].cell[0], fails[end].cell[1]);
        let mid = 0.5 * (lo + hi);
        let cell = fails[start..=end].iter().find(|f| f.cell[0] <= mid && mid <= f.cell[1]).map_or([lo, hi], |f| f.cell);
        return Counterexample { block: blk, x: mid, cell, uncovered: true };
    }
    let f = &fails[0];
    Counterexample { block: blk, x: 0.5 * (f.cell[0] + f.cell[1]), cell: f.cell, uncovered: false }
}

/// Grid verification that every point of `K` has a word `a̲` with `R_a̲(x) ∈ K`.
/// Among witnesses of the shortest length the one with the largest margin is kept.
pub fn verify_recurrent_compact(map: &PerturbedMap, k: &CandidateK, cfg: &VerifyConfig) -> Result<Verification, GeometryError> {
    if !(cfg.dx > 0.0) || cfg.max_len == 0 {
        return Err(GeometryError::Config("dx must be positive and max_len at least 1".into()));
    }
    let m = map.model();
    let blocks = k.grid_blocks(m);
    if blocks.is_empty() {
        return Err(StackingError::EmptyK.into());
    }
    let results: Vec<Result<(Vec<Witness>, Vec<Failure>), GeometryError>> = blocks
        .par_iter()
        .map(|(letters, set)| {
            let leaf = leaf_of(m, letters)?;
            let table = candidates(map, k, &leaf, cfg.max_len)?;
            let mut wit = Vec::new();
            let mut fails = Vec::new();
            for part in set.parts() {
                let n = ((part[1] - part[0]) / cfg.dx - 1e-9).ceil().max(1.0) as usize;
                let h = (part[1] - part[0]) / n as f64;
                for i in 0..n {
                    let cell = [part[0] + i as f64 * h, if i + 1 == n { part[1] } else { part[0] + (i + 1) as f64 * h }];
                    if let Some(f) = certify_cell(map, &leaf, &table, cell, cfg.subdivisions, &mut wit)? {
                        fails.push(f);
                    }
                }
            }
            Ok((wit, fails))
        })
        .collect();
    let mut witnesses = Vec::new();
    for ((letters, _), r) in blocks.iter().zip(results) {
        let (w, fails) = r?;
        if !fails.is_empty() {
            return Ok(Verification::Counterexample(pick_counterexample(letters, &fails)));
        }
        witnesses.extend(w);
    }
    let min_margin = witnesses.iter().map(|w| w.margin).fold(f64::INFINITY, f64::min);
    let longest_word = witnesses.iter().map(|w| w.word.len()).max().unwrap_or(0);
    Ok(Verification::Certified(RecurrenceCertificate { dx: cfg.dx, max_len: cfg.max_len, witnesses, min_margin, longest_word }))
}

/// Margin of a stored witness under `map`; [`OUTSIDE_MARGIN`] if the point leaves
/// the piece or its target block.
pub fn evaluate_witness(map: &PerturbedMap, k: &CandidateK, w: &Witness) -> Result<f64, GeometryError> {
    let m = map.model();
    let leaf = leaf_of(m, &zero_based(&w.block))?;
    let word = Word::forward(zero_based(&w.word));
    let ext = extend_leaf(m, &leaf, word.letters())?;
    let Some(target) = k.get(ext.suffix.letters()) else { return Ok(OUTSIDE_MARGIN) };
    let x = 0.5 * (w.cell[0] + w.cell[1]);
    Ok(match renormalize(map, word.letters(), &WallPoint { x, leaf })? {
        Renormalized::Outside => OUTSIDE_MARGIN,
        Renormalized::Inside(p) => target.depth(p.x) - w.grid_error,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub delta: f64,
    pub min_margin: f64,
    pub broken: bool,
    /// Largest margin loss per unit `δ·expansion`.
    pub degradation: f64,
}

/// Re-evaluates every witness after adding `template` at amplitude δ with random
/// parameters in `[−1, 1]`.
pub fn robustness_check(
    map: &PerturbedMap,
    template: &PerturbationFamily,
    k: &CandidateK,
    cert: &RecurrenceCertificate,
    deltas: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<RobustnessRow>, GeometryError> {
    let mut rows = Vec::with_capacity(deltas.len());
    for (di, &delta) in deltas.iter().enumerate() {
        let mut fam = template.clone();
        fam.amplitude = delta;
        let mut min_margin = f64::INFINITY;
        let mut degradation: f64 = 0.0;
        for t in 0..samples.max(1) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((di * samples.max(1) + t) as u64);
            let gamma: Vec<f64> = (0..fam.len()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let pm = map.clone().with_layer(&fam, &gamma)?;
            let margins: Vec<f64> =
                cert.witnesses.par_iter().map(|w| evaluate_witness(&pm, k, w)).collect::<Result<_, _>>()?;
            for (w, &mg) in cert.witnesses.iter().zip(&margins) {
                min_margin = min_margin.min(mg);
                if delta > 0.0 {
                    degradation = degradation.max((w.margin - mg) / (delta * w.expansion));
                }
            }
        }
        rows.push(RobustnessRow { delta, min_margin, broken: min_margin <= 0.0, degradation });
    }
    Ok(rows)
}

/// Backward hitting time of the block along the piece, or never.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HitCase {
    Hit(usize),
    Never,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DispersionCheck {
    pub case: HitCase,
    pub derivative: f64,
    pub band: [f64; 2],
    pub pass: bool,
}

const FD_STEP: f64 = 1e-4;

/// Hitting structure of `block` along the piece `(leaf, word)` under the family.
pub fn hit_case(model: &HorseshoeModel, fam: &PerturbationFamily, leaf: &LeafApprox, word: &[Symbol], block: usize) -> Result<HitCase, GeometryError> {
    let (orbit, corr) = piece_blocks(model, fam, leaf, word);
    let hits: Vec<usize> = orbit.iter().enumerate().filter(|(_, &b)| b == block).map(|(h, _)| h).collect();
    if hits.len() > 1 || corr.contains(&block) {
        return Err(GeometryError::RecurrentPiece);
    }
    Ok(hits.first().map_or(HitCase::Never, |&h| HitCase::Hit(h)))
}

/// Central difference of the piece's left endpoint in `γ_block`, against the band
/// `[½λ_min^j, 2λ_max^j]·amplitude` (or `< 1e−8·amplitude` when never hit).
pub fn dispersion_finite_difference_check(
    model: &HorseshoeModel,
    fam: &PerturbationFamily,
    params: &[f64],
    leaf: &LeafApprox,
    word: &[Symbol],
    block: usize,
) -> Result<DispersionCheck, GeometryError> {
    if block >= fam.len() || params.len() != fam.len() {
        return Err(GeometryError::Config(format!("block {block} or parameter vector does not fit the family")));
    }
    let case = hit_case(model, fam, leaf, word, block)?;
    let endpoint = |g: f64| -> Result<f64, GeometryError> {
        let mut p = params.to_vec();
        p[block] += g;
        let pm = PerturbedMap::new(model, fam, &p)?;
        Ok(piece_interval(&pm, leaf, word)?[0])
    };
    let derivative = (endpoint(FD_STEP)? - endpoint(-FD_STEP)?) / (2.0 * FD_STEP);
    let amp = fam.amplitude;
    let band = match case {
        HitCase::Hit(j) => {
            [0.5 * model.min_rate_ws().powi(j as i32) * amp, 2.0 * model.max_rate_ws().powi(j as i32) * amp]
        }
        HitCase::Never => [0.0, 1e-8 * amp],
    };
    let d = derivative.abs();
    let pass = match case {
        HitCase::Hit(_) => band[0] <= d && d <= band[1],
        HitCase::Never => d < band[1],
    };
    Ok(DispersionCheck { case, derivative, band, pass })
}

fn random_leaf(model: &HorseshoeModel, rng: &mut ChaCha8Rng, depth: usize) -> Result<LeafApprox, ModelError> {
    let n = model.n_symbols();
    // future letters, θ₀ first
    let mut fut: Vec<Symbol> = vec![rng.gen_range(0..n) as Symbol];
    while fut.len() < depth {
        let last = *fut.last().expect("nonempty");
        let opts: Vec<Symbol> = (0..n as Symbol).filter(|&b| model.subshift().allows(b, last)).collect();
        fut.push(opts[rng.gen_range(0..opts.len())]);
    }
    fut.reverse();
    model.leaf(Word::backward(fut))
}

/// Random `(leaf, word, block)` triples at scale `c₁ρ` where `block` is hit exactly
/// at backward time `j`, or (`None`) not at all.
pub fn sample_dispersion_cases(
    model: &HorseshoeModel,
    fam: &PerturbationFamily,
    rho: f64,
    c1: f64,
    leaf_depth: usize,
    case: Option<usize>,
    count: usize,
    seed: u64,
) -> Result<Vec<(LeafApprox, Word, usize)>, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 200 * count.max(1) {
            return Err(GeometryError::Config(format!("only {} of {count} dispersion cases found", out.len())));
        }
        let leaf = random_leaf(model, &mut rng, leaf_depth)?;
        let words = model.cylinders_at_scale(rho, c1, Some(&leaf));
        let word = words[rng.gen_range(0..words.len())].clone();
        let (orbit, _) = piece_blocks(model, fam, &leaf, word.letters());
        let block = match case {
            Some(j) => {
                if j >= orbit.len() {
                    continue;
                }
                orbit[j]
            }
            None => rng.gen_range(0..fam.len()),
        };
        if matches!(hit_case(model, fam, &leaf, word.letters(), block), Ok(c) if c == case.map_or(HitCase::Never, HitCase::Hit)) {
            out.push((leaf, word, block));
        }
    }
    Ok(out)
}

/// Key of the leaf block a witness belongs to.
pub fn witness_key(w: &Witness) -> String {
    block_key(&zero_based(&w.block))
}

#[cfg(test)]
mod tests;
