//! Monte Carlo estimate of the recurrence failure probability over `Ω`.

use super::{CandidateK, StackingError};
use crate::intervals::IntervalSet;
use crate::model::{ModelError, PerturbationFamily, PerturbedMap};
use crate::pieces::piece_affine;
use crate::symbolic::{Symbol, Word};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

/// `ω ∈ [−1,1]^{Σ₁}` for one trial.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OmegaParams {
    pub values: Vec<f64>,
}

impl OmegaParams {
    /// Coordinates in block order; coordinate `b` equals `omega_value(seed, trial, b)`.
    pub fn sample(family: &PerturbationFamily, seed: u64, trial: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        Self { values: (0..family.len()).map(|_| rng.gen_range(-1.0..1.0)).collect() }
    }
}

/// Counter-based coordinate keyed by `(seed, trial, block)`.
pub fn omega_value(seed: u64, trial: u64, block: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng.set_word_pos(2 * block as u128);
    rng.gen_range(-1.0..1.0)
}

#[derive(Clone, Debug)]
pub struct MonteCarloConfig {
    pub trials: usize,
    pub seed: u64,
    pub c1: f64,
    /// Grid spacing in x; `ρ²` when `None`.
    pub grid_dx: Option<f64>,
    /// Relaxation of the target; `ρ²` when `None`.
    pub erosion: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FailureCell {
    pub block: String,
    pub x: f64,
    pub failures: u32,
    pub rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MonteCarloReport {
    pub rho: f64,
    pub trials: usize,
    pub cells: usize,
    pub leaves: usize,
    pub max_failure_rate: f64,
    /// No failure seen: the rate is `< 1/trials`.
    pub below_resolution: bool,
    pub failures: Vec<FailureCell>,
}

impl MonteCarloReport {
    pub fn resolution(&self) -> f64 {
        1.0 / self.trials as f64
    }
}

struct PreparedPiece {
    offset: f64,
    slope: f64,
    terms: Vec<(usize, f64)>,
    target: Vec<[f64; 2]>,
}

fn cell_range(lo: f64, hi: f64, dx: f64) -> (i64, i64) {
    // cells j with centre (j+½)dx in [lo, hi]
    ((lo / dx - 0.5).ceil() as i64, (hi / dx - 0.5).floor() as i64)
}

/// For each grid cell of K, the fraction of sampled `ω` for which no piece at scale ρ
/// renormalizes the cell centre into `K₋ε`. The last layer of `map` is the `Ω`
/// family (its parameters are ignored); earlier layers are held fixed.
pub fn monte_carlo_recurrence(map: &PerturbedMap, k: &CandidateK, cfg: &MonteCarloConfig) -> Result<MonteCarloReport, StackingError> {
    let model = map.model();
    let rho = k.rho;
    let layers = map.layers();
    let omega_layer = layers.len().checked_sub(1).ok_or_else(|| StackingError::Config("map has no Ω layer".into()))?;
    let fam = layers[omega_layer].family;
    let amp = fam.amplitude;
    let dx = cfg.grid_dx.unwrap_or(rho * rho);
    let eps = cfg.erosion.unwrap_or(rho * rho);
    let inner = k.relaxed_interior(eps);
    let omegas: Vec<OmegaParams> = (0..cfg.trials as u64).map(|t| OmegaParams::sample(fam, cfg.seed, t)).collect();
    let grid = k.grid_blocks(model);
    let per_leaf: Vec<(usize, BTreeMap<i64, u32>)> = grid
        .par_iter()
        .map(|(letters, set)| {
            let leaf = model.leaf(Word::backward(letters.clone()))?;
            let mut prepared = Vec::new();
            for w in model.cylinders_at_scale(rho, cfg.c1, Some(&leaf)) {
                let mut next: Vec<Symbol> = letters.clone();
                next.extend_from_slice(w.letters());
                let Some(target) = inner.get(&next) else { continue };
                if target.is_empty() {
                    continue;
                }
                let pa = piece_affine(map, &leaf, w.letters())?;
                // fixed layers at their parameters, the Ω layer at zero
                let fixed = pa.base
                    + layers[..omega_layer]
                        .iter()
                        .zip(&pa.terms)
                        .map(|(l, t)| l.family.amplitude * t.iter().map(|&(id, c)| c * l.params[id]).sum::<f64>())
                        .sum::<f64>();
                prepared.push(PreparedPiece {
                    offset: fixed,
                    slope: pa.slope,
                    terms: pa.terms[omega_layer].clone(),
                    target: target.parts().to_vec(),
                });
            }
            let cells: usize = set
                .parts()
                .iter()
                .map(|iv| {
                    let (a, b) = cell_range(iv[0], iv[1], dx);
                    (b - a + 1).max(0) as usize
                })
                .sum();
            let mut fails: BTreeMap<i64, u32> = BTreeMap::new();
            let mut ivs = Vec::new();
            for om in &omegas {
                ivs.clear();
                for p in &prepared {
                    let c = p.offset + amp * p.terms.iter().map(|&(id, k)| k * om.values[id]).sum::<f64>();
                    ivs.extend(p.target.iter().map(|t| [c + p.slope * t[0], c + p.slope * t[1]]));
                }
                let success = IntervalSet::new(std::mem::take(&mut ivs));
                for gap in set.difference(&success).parts() {
                    let (a, b) = cell_range(gap[0], gap[1], dx);
                    for j in a..=b {
                        let x = (j as f64 + 0.5) * dx;
                        if !success.contains(x) {
                            *fails.entry(j).or_insert(0) += 1;
                        }
                    }
                }
            }
            Ok((cells, fails))
        })
        .collect::<Result<_, ModelError>>()?;
    let mut failures = Vec::new();
    let mut cells = 0;
    for ((letters, _), (n, f)) in grid.iter().zip(per_leaf) {
        cells += n;
        for (j, c) in f {
            failures.push(FailureCell {
                block: super::block_key(letters),
                x: (j as f64 + 0.5) * dx,
                failures: c,
                rate: c as f64 / cfg.trials as f64,
            });
        }
    }
    let max = failures.iter().map(|f| f.rate).fold(0.0, f64::max);
    Ok(MonteCarloReport {
        rho,
        trials: cfg.trials,
        cells,
        leaves: grid.len(),
        max_failure_rate: max,
        below_resolution: max == 0.0,
        failures,
    })
}

/// Slope of `log(max failure rate)` against `ρ^{−(c/k)(d−1)}` over rows with a
/// resolved rate; `None` with fewer than two such rows.
pub fn fit_failure_exponent(rows: &[MonteCarloReport], c_over_k: f64, d: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.max_failure_rate > 0.0)
        .map(|r| (r.rho.powf(-c_over_k * (d - 1.0)), r.max_failure_rate.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Failure frequency of a stack of `m` independent pieces each succeeding with
/// probability `p`, and its binomial standard error.
pub fn bernoulli_failure(p: f64, m: usize, trials: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fails = (0..trials).filter(|_| (0..m).all(|_| !rng.gen_bool(p))).count();
    let est = fails as f64 / trials as f64;
    let q = (1.0 - p).powi(m as i32);
    (est, (q * (1.0 - q) / trials as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BlockSpec, HorseshoeModel};
    use crate::pieces::{renormalize, Renormalized};
    use crate::model::WallPoint;

    #[test]
    fn counter_based_omega() {
        let m = HorseshoeModel::ref3();
        let fam = PerturbationFamily::uniform(&m, 2, 2, 0.01, 1.2).unwrap();
        let om = OmegaParams::sample(&fam, 9, 3);
        for b in [0, 1, 17, fam.len() - 1] {
            assert_eq!(om.values[b], omega_value(9, 3, b));
        }
        assert_ne!(om, OmegaParams::sample(&fam, 9, 4));
        assert!(om.values.iter().all(|x| (-1.0..1.0).contains(x)));
    }

    #[test]
    fn bernoulli_oracle() {
        let (est, sigma) = bernoulli_failure(0.3, 10, 40_000, 5);
        let exact = 0.7f64.powi(10);
        assert!((exact - 0.02824).abs() < 1e-5);
        assert!((est - exact).abs() <= 3.0 * sigma, "{est} vs {exact} ± {sigma}");
    }

    fn ref3_setup(m: &HorseshoeModel, rho: f64) -> PerturbationFamily {
        let spec = BlockSpec { alpha: 0.5 * rho.sqrt(), alpha_tilde: rho.sqrt() };
        PerturbationFamily::make(m, spec, rho, 1.2, 0.01).unwrap()
    }

    #[test]
    fn ref3_one_letter_never_fails() {
        let m = HorseshoeModel::ref3();
        let rho = 0.5;
        let fam = ref3_setup(&m, rho);
        let zeros = vec![0.0; fam.len()];
        let map = PerturbedMap::new(&m, &fam, &zeros).unwrap();
        let k = CandidateK::uniform(IntervalSet::single(0.05, 0.95), rho, 0.34);
        let cfg = MonteCarloConfig { trials: 50, seed: 1, c1: 1.0, grid_dx: Some(1e-3), erosion: Some(0.02) };
        let rep = monte_carlo_recurrence(&map, &k, &cfg).unwrap();
        assert_eq!(rep.leaves, 3);
        assert_eq!(rep.cells, 3 * 900);
        assert!(rep.below_resolution, "{:?}", &rep.failures[..rep.failures.len().min(5)]);
    }

    #[test]
    fn success_set_matches_renormalization() {
        // the interval form agrees with pointwise R on a perturbed affine model
        let m = HorseshoeModel::ref3b();
        let rho = 2f64.powi(-4);
        let fam = ref3_setup(&m, rho);
        let om = OmegaParams::sample(&fam, 2, 0);
        let map = PerturbedMap::new(&m, &fam, &om.values).unwrap();
        let leaf = m.leaf_from(&[1, 3]).unwrap();
        let w = [1u8, 0, 2, 2];
        let pa = piece_affine(&map, &leaf, &w).unwrap();
        let c = pa.offset(&map);
        for y in [0.1, 0.5, 0.9] {
            let x = c + pa.slope * y;
            let r = renormalize(&map, &w, &WallPoint { x, leaf: leaf.clone() }).unwrap();
            let Renormalized::Inside(p) = r else { panic!("outside") };
            assert!((p.x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn exponent_fit() {
        let mk = |rho: f64, rate: f64| MonteCarloReport {
            rho,
            trials: 10,
            cells: 1,
            leaves: 1,
            max_failure_rate: rate,
            below_resolution: rate == 0.0,
            failures: vec![],
        };
        let d = 1.5;
        let rows: Vec<_> = [0.1f64, 0.01].iter().map(|&r| mk(r, (-2.0 * r.powf(-0.5 * 0.5)).exp())).collect();
        assert!((fit_failure_exponent(&rows, 0.5, d).unwrap() + 2.0).abs() < 1e-12);
        assert!(fit_failure_exponent(&[mk(0.1, 0.0), mk(0.01, 0.0)], 0.5, d).is_none());
    }
}
