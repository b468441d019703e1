//! Non-recurrence filters, the recurrent census, stackings, the candidate recurrent
//! compact set `K`, and the Monte Carlo check of the main property over `Ω`.

use crate::model::ModelError;
use crate::symbolic::{enumerate_words, LeafApprox, Symbol};
use crate::thermo::MarkovMeasure;
use crate::model::HorseshoeModel;
use std::collections::HashSet;
use thiserror::Error;

mod montecarlo;
mod stacks;

pub use montecarlo::{
    bernoulli_failure, fit_failure_exponent, monte_carlo_recurrence, omega_value, FailureCell, MonteCarloConfig,
    MonteCarloReport, OmegaParams,
};
pub use stacks::{
    block_key, build_candidate_k, build_stackings, build_well_distributed, min_stack_size, CandidateK, KBlock, KParams,
    Stack, StackingSet, WellDistributed,
};

/// Longest block length the census enumerates.
pub const CENSUS_BUDGET: usize = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StackingError {
    #[error("leaf truncation of depth {depth} is too shallow for scale {scale}")]
    InsufficientDepth { depth: usize, scale: f64 },
    #[error("every fundamental interval is below the size threshold {0}")]
    EmptyStacking(usize),
    #[error("no leaf block survives the selection")]
    EmptyK,
    #[error("block length {0} exceeds the census budget")]
    Budget(usize),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Shortest final word of the leaf whose u-interval has width `≤ scale`.
pub fn leaf_scale_len(model: &HorseshoeModel, leaf: &LeafApprox, scale: f64) -> Result<usize, StackingError> {
    let letters = leaf.suffix.letters();
    (1..=letters.len())
        .find(|&k| {
            let iv = model.leaf_u_interval(&letters[letters.len() - k..]);
            iv[1] - iv[0] <= scale
        })
        .ok_or(StackingError::InsufficientDepth { depth: letters.len(), scale })
}

/// Length at which every forward word has `D_s ≤ scale`.
pub fn word_scale_len(model: &HorseshoeModel, scale: f64) -> usize {
    let r = model.max_rate_ws();
    ((scale.ln() / r.ln() - 1e-9).ceil().max(1.0)) as usize
}

/// Positions other than `skip` where `pattern` occurs in `text`.
fn occurs_elsewhere(text: &[Symbol], pattern: &[Symbol], skip: usize) -> bool {
    text.windows(pattern.len()).enumerate().any(|(i, w)| i != skip && w == pattern)
}

/// Whether the leaf's scale-α final word never reappears in (scale-β final word)·word.
pub fn is_nonrecurrent_word(
    model: &HorseshoeModel,
    leaf: &LeafApprox,
    word: &[Symbol],
    alpha: f64,
    beta: f64,
) -> Result<bool, StackingError> {
    let ka = leaf_scale_len(model, leaf, alpha)?;
    let kb = leaf_scale_len(model, leaf, beta)?.max(ka);
    Ok(nonrecurrent_pattern(leaf.suffix.letters(), word, ka, kb))
}

/// Same test with the pattern and window lengths given directly.
pub fn nonrecurrent_pattern(leaf: &[Symbol], word: &[Symbol], pattern_len: usize, window_len: usize) -> bool {
    let window = &leaf[leaf.len() - window_len..];
    let pattern = &leaf[leaf.len() - pattern_len..];
    let mut text = window.to_vec();
    text.extend_from_slice(word);
    !occurs_elsewhere(&text, pattern, window_len - pattern_len)
}

/// Whether the scale-α final word of the leaf repeats inside its scale-β final word.
pub fn is_nonrecurrent_leaf(model: &HorseshoeModel, leaf: &LeafApprox, alpha: f64, beta: f64) -> Result<bool, StackingError> {
    let ka = leaf_scale_len(model, leaf, alpha)?;
    let kb = leaf_scale_len(model, leaf, beta)?.max(ka);
    Ok(nonrecurrent_pattern(leaf.suffix.letters(), &[], ka, kb))
}

/// Whether some subword of length `p` occurs at two positions.
pub fn has_repeat(word: &[Symbol], p: usize) -> bool {
    if p == 0 || p >= word.len() {
        return false;
    }
    let mut seen = HashSet::with_capacity(word.len());
    word.windows(p).any(|w| !seen.insert(w))
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct Census {
    pub block_len: usize,
    pub pattern_len: usize,
    pub recurrent_mass: f64,
    pub total_mass: f64,
    pub n_blocks: usize,
}

impl Census {
    pub fn fraction(&self) -> f64 {
        self.recurrent_mass / self.total_mass
    }
}

/// Exact `μ⁻`-mass of length-`block_len` backward words with a repeated subword of
/// length `pattern_len`.
pub fn census_core(model: &HorseshoeModel, measure: &MarkovMeasure, block_len: usize, pattern_len: usize) -> Result<Census, StackingError> {
    if block_len > CENSUS_BUDGET {
        return Err(StackingError::Budget(block_len));
    }
    let mut rec = 0.0;
    let mut total = 0.0;
    let words = enumerate_words(model.subshift(), block_len, None);
    for w in &words {
        let m = measure.cylinder(w.letters());
        total += m;
        if has_repeat(w.letters(), pattern_len) {
            rec += m;
        }
    }
    Ok(Census { block_len, pattern_len, recurrent_mass: rec, total_mass: total, n_blocks: words.len() })
}

/// Census at working scale ρ: blocks at u-scale `½c₁₄ρ`, patterns at weak scale `ρ^{c/k}`.
pub fn recurrent_census(
    model: &HorseshoeModel,
    measure: &MarkovMeasure,
    rho: f64,
    c: f64,
    k: f64,
    c14: f64,
) -> Result<Census, StackingError> {
    let mu = model.branches().iter().map(|b| b.rate_u).fold(f64::INFINITY, f64::min);
    let block_len = ((0.5 * c14 * rho).ln() / (1.0 / mu).ln() - 1e-9).ceil().max(1.0) as usize;
    let pattern_len = word_scale_len(model, rho.powf(c / k));
    census_core(model, measure, block_len, pattern_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermo::build_gibbs_measure;

    fn ref3_leaf(m: &HorseshoeModel, l: &[usize]) -> LeafApprox {
        m.leaf_from(l).unwrap()
    }

    #[test]
    fn word_filter_examples() {
        let m = HorseshoeModel::ref3();
        let leaf = ref3_leaf(&m, &[3, 1, 2]);
        // α-suffix (2) has length 1 at α = 1/3
        let (a, b) = (0.34, 0.12);
        assert!(is_nonrecurrent_word(&m, &leaf, &[2, 2, 2], a, b).unwrap());
        assert!(!is_nonrecurrent_word(&m, &leaf, &[2, 1, 2], a, b).unwrap());
        assert!(!is_nonrecurrent_word(&m, &leaf, &[1, 1], a, b).unwrap());
        assert!(is_nonrecurrent_word(&m, &leaf, &[0, 2, 0], a, b).unwrap());
    }

    #[test]
    fn leaf_filter_examples() {
        let m = HorseshoeModel::ref3();
        let periodic = ref3_leaf(&m, &[1; 8]);
        assert!(!is_nonrecurrent_leaf(&m, &periodic, 0.12, 1.01 * 3f64.powi(-6)).unwrap());
        // square-free over three letters
        let thue = ref3_leaf(&m, &[1, 2, 3, 1, 3, 2, 1, 2, 3, 2, 1, 3]);
        for (a, b) in [(2, 6), (3, 10), (4, 12)] {
            let sc = |k: i32| 1.01 * 3f64.powi(-k);
            assert!(is_nonrecurrent_leaf(&m, &thue, sc(a), sc(b)).unwrap());
        }
        assert!(is_nonrecurrent_leaf(&m, &periodic, 0.12, 0.12).unwrap());
        assert!(matches!(
            is_nonrecurrent_leaf(&m, &ref3_leaf(&m, &[1, 2]), 0.1, 1e-4),
            Err(StackingError::InsufficientDepth { .. })
        ));
    }

    fn naive_repeat(w: &[u8], p: usize) -> bool {
        for i in 0..w.len() {
            for j in i + 1..w.len() {
                if j + p <= w.len() && w[i..i + p] == w[j..j + p] {
                    return true;
                }
            }
        }
        false
    }

    #[test]
    fn census_ref3() {
        let m = HorseshoeModel::ref3();
        let g = build_gibbs_measure(&m, 3f64.ln() / 2f64.ln()).unwrap();
        let c = recurrent_census(&m, &g, 2f64.powi(-8), 1.0, 2.0, 0.05).unwrap();
        assert_eq!((c.block_len, c.pattern_len), (9, 4));
        // exhaustive double-occurrence oracle
        let words = enumerate_words(m.subshift(), 9, None);
        let hits = words.iter().filter(|w| naive_repeat(w.letters(), 4)).count();
        assert!((c.fraction() - hits as f64 / words.len() as f64).abs() < 1e-12);
        assert!(c.fraction() < 0.2);
        let finer = recurrent_census(&m, &g, 2f64.powi(-10), 1.0, 2.0, 0.05).unwrap();
        assert!(finer.fraction() < c.fraction());
        assert_eq!(census_core(&m, &g, 6, 6).unwrap().fraction(), 0.0);
    }
}
