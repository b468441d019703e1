//! Gibbs state of `φ = d·log λws` as an explicit Markov measure, pressure, and the
//! leaf measures obtained by pushing cylinder masses to the wall.

use crate::dimension::{ds_values, DsSpectrum};
use crate::model::{HorseshoeModel, ModelError, PerturbedMap};
use crate::pieces::pieces_at_scale;
use crate::symbolic::{enumerate_words, mixing_exponent, LeafApprox, Symbol, Word};
use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermoError {
    #[error("transition matrix is not mixing")]
    NotMixing,
    #[error("Perron eigendata not found: {0}")]
    Eigen(String),
    #[error("exponent must be positive, got {0}")]
    BadExponent(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, Serialize)]
pub struct MarkovMeasure {
    pub stationary: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    /// Spectral radius of `B`; `log β` is the pressure.
    pub spectral_radius: f64,
    pub exponent: f64,
}

impl MarkovMeasure {
    /// `p_{θ₁} Π Q_{θᵢθᵢ₊₁}`; zero on inadmissible words.
    pub fn cylinder(&self, letters: &[Symbol]) -> f64 {
        let Some(&first) = letters.first() else { return 1.0 };
        let mut m = self.stationary[first as usize];
        for p in letters.windows(2) {
            m *= self.transition[p[0] as usize][p[1] as usize];
        }
        m
    }

    pub fn n_symbols(&self) -> usize {
        self.stationary.len()
    }
}

pub fn cylinder_measure(measure: &MarkovMeasure, word: &Word) -> f64 {
    measure.cylinder(word.letters())
}

/// `μ⁻` of a backward block, read in reading order.
pub fn backward_measure(measure: &MarkovMeasure, block: &Word) -> f64 {
    measure.cylinder(block.letters())
}

fn weight_matrix(model: &HorseshoeModel, d: f64) -> DMatrix<f64> {
    let n = model.n_symbols();
    let a = model.subshift();
    DMatrix::from_fn(n, n, |i, j| {
        if a.allows(i as Symbol, j as Symbol) {
            model.branch(j as Symbol).rate_ws.powf(d)
        } else {
            0.0
        }
    })
}

fn null_vector(m: &DMatrix<f64>) -> Result<Vec<f64>, ThermoError> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.ok_or_else(|| ThermoError::Eigen("SVD failed".into()))?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| ThermoError::Eigen("empty matrix".into()))?;
    let v: Vec<f64> = vt.row(k).iter().copied().collect();
    let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let v: Vec<f64> = v.iter().map(|x| x * sign).collect();
    if v.iter().any(|&x| x <= 0.0) {
        return Err(ThermoError::Eigen("Perron vector not positive".into()));
    }
    Ok(v)
}

/// Markov measure from the Perron data of `B_{ij} = A_{ij}(λws_j)^d`.
pub fn build_gibbs_measure(model: &HorseshoeModel, d: f64) -> Result<MarkovMeasure, ThermoError> {
    if !(d > 0.0) {
        return Err(ThermoError::BadExponent(d));
    }
    let n = model.n_symbols();
    if mixing_exponent(model.subshift(), 4 * n * n).is_none() {
        return Err(ThermoError::NotMixing);
    }
    let b = weight_matrix(model, d);
    let beta = b
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let shift = DMatrix::identity(n, n) * beta;
    let r = null_vector(&(&b - &shift))?;
    let l = null_vector(&(b.transpose() - &shift))?;
    let transition = (0..n)
        .map(|i| (0..n).map(|j| b[(i, j)] * r[j] / (beta * r[i])).collect())
        .collect();
    let mut p: Vec<f64> = (0..n).map(|i| l[i] * r[i]).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(MarkovMeasure { stationary: p, transition, spectral_radius: beta, exponent: d })
}

/// Spectral radius by power iteration, for cross-checking.
pub fn power_iteration_radius(model: &HorseshoeModel, d: f64, tol: f64) -> f64 {
    let b = weight_matrix(model, d);
    let n = b.nrows();
    let mut v = nalgebra::DVector::from_element(n, 1.0 / n as f64);
    let mut beta = 0.0;
    for _ in 0..10_000 {
        let w = &b * &v;
        let nb = w.sum();
        v = w / nb;
        if (nb - beta).abs() < tol {
            return nb;
        }
        beta = nb;
    }
    beta
}

/// `(1/n) log Σ_{|θ̲|=n} D_s(θ̲)^d`.
pub fn pressure_estimate(model: &HorseshoeModel, d: f64, n: usize) -> f64 {
    DsSpectrum::from_values(&ds_values(model, n)).sum(d).ln() / n as f64
}

/// Min and max of `μ(θ̲)/D_s(θ̲)^d` over words of length `1..=n_max`.
pub fn gibbs_ratio_bounds(model: &HorseshoeModel, measure: &MarkovMeasure, n_max: usize) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let d = measure.exponent;
    for n in 1..=n_max {
        for w in enumerate_words(model.subshift(), n, None) {
            let r = measure.cylinder(w.letters()) / model.ds(w.letters()).powf(d);
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    (lo, hi)
}

#[derive(Clone, Debug, Serialize)]
pub struct WallMass {
    pub word: Word,
    pub interval: [f64; 2],
    pub mass: f64,
}

/// `ν_{θ⁻}` at scale ρ: each piece interval weighted by `μ(θ̲)`. `keep` restricts the
/// word family (e.g. to non-recurrent words).
pub fn leaf_pushforward(
    measure: &MarkovMeasure,
    map: &PerturbedMap,
    leaf: &LeafApprox,
    rho: f64,
    c1: f64,
    keep: Option<&dyn Fn(&Word) -> bool>,
) -> Result<Vec<WallMass>, ThermoError> {
    Ok(pieces_at_scale(map, leaf, rho, c1)?
        .into_iter()
        .filter(|p| keep.map_or(true, |k| k(&p.word)))
        .map(|p| WallMass { mass: measure.cylinder(p.word.letters()), word: p.word, interval: p.interval })
        .collect())
}

/// `max(mass/ρ^d, ρ^d/mass)` over a pushforward: the measured `c₁₁`.
pub fn mass_constant(masses: &[WallMass], rho: f64, d: f64) -> f64 {
    let s = rho.powf(d);
    masses.iter().map(|m| (m.mass / s).max(s / m.mass)).fold(1.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dimension::lambda_n;

    fn close(a: f64, b: f64, t: f64) -> bool {
        (a - b).abs() <= t
    }

    #[test]
    fn ref3_bernoulli() {
        let m = HorseshoeModel::ref3();
        let g = build_gibbs_measure(&m, 3f64.ln() / 2f64.ln()).unwrap();
        assert!(close(g.spectral_radius, 1.0, 1e-12));
        for p in &g.stationary {
            assert!(close(*p, 1.0 / 3.0, 1e-12));
        }
        assert!(close(g.cylinder(&[0, 1]), 1.0 / 9.0, 1e-14));
        assert_eq!(g.cylinder(&[]), 1.0);
        let (lo, hi) = gibbs_ratio_bounds(&m, &g, 6);
        assert!(close(lo, 1.0, 1e-12) && close(hi, 1.0, 1e-12));
        let g1 = build_gibbs_measure(&m, 1.0).unwrap();
        assert!(close(g1.spectral_radius, 1.5, 1e-12));
        assert!(close(pressure_estimate(&m, 1.0, 10), 1.5f64.ln(), 1e-12));
        assert!(pressure_estimate(&m, 3f64.ln() / 2f64.ln(), 7).abs() < 1e-12);
    }

    #[test]
    fn ref3b_dimension_equation() {
        let m = HorseshoeModel::ref3b();
        let d = lambda_n(&m, 6).unwrap();
        let g = build_gibbs_measure(&m, d).unwrap();
        assert!(close(g.spectral_radius, 1.0, 1e-8));
        assert!(close(power_iteration_radius(&m, d, 1e-14), g.spectral_radius, 1e-10));
        assert!(pressure_estimate(&m, d, 12).abs() < 1e-3);
        let (a6, b6) = gibbs_ratio_bounds(&m, &g, 6);
        let (a10, b10) = gibbs_ratio_bounds(&m, &g, 10);
        assert!(a10 <= a6 && b10 >= b6 && b10 / a10 < 10.0);
    }

    #[test]
    fn kolmogorov_and_shift_invariance() {
        let m = HorseshoeModel::ref3b();
        let g = build_gibbs_measure(&m, 1.3).unwrap();
        let a = m.subshift();
        for n in 1..=5 {
            for w in enumerate_words(a, n, None) {
                let mu = g.cylinder(w.letters());
                let right: f64 = (0..3u8)
                    .map(|b| {
                        let mut x = w.letters().to_vec();
                        x.push(b);
                        g.cylinder(&x)
                    })
                    .sum();
                let left: f64 = (0..3u8)
                    .map(|b| {
                        let mut x = vec![b];
                        x.extend_from_slice(w.letters());
                        g.cylinder(&x)
                    })
                    .sum();
                assert!(close(mu, right, 1e-14) && close(mu, left, 1e-14));
            }
        }
        for row in &g.transition {
            assert!(close(row.iter().sum::<f64>(), 1.0, 1e-12));
        }
    }

    #[test]
    fn pressure_root_matches_lambda() {
        let m = HorseshoeModel::ref3b();
        for n in [3, 8] {
            let l = lambda_n(&m, n).unwrap();
            let (mut lo, mut hi) = (0.0, 3.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if pressure_estimate(&m, mid, n) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!(close(lo, l, 1e-6));
        }
    }

    #[test]
    fn uniform_pushforward() {
        let m = HorseshoeModel::ref3();
        let g = build_gibbs_measure(&m, 3f64.ln() / 2f64.ln()).unwrap();
        let map = PerturbedMap::base(&m);
        let leaf = m.leaf_from(&[1, 2]).unwrap();
        let nu = leaf_pushforward(&g, &map, &leaf, 0.125, 1.0, None).unwrap();
        assert_eq!(nu.len(), 27);
        for x in &nu {
            assert!(close(x.interval[1] - x.interval[0], 0.125, 1e-15));
            assert!(close(x.mass, 1.0 / 27.0, 1e-14));
        }
        let total: f64 = nu.iter().map(|x| x.mass).sum();
        assert!(total <= 1.0 + 1e-12);
        let mb = HorseshoeModel::ref3b();
        let d = lambda_n(&mb, 8).unwrap();
        let gb = build_gibbs_measure(&mb, d).unwrap();
        let rho = 2f64.powi(-6);
        let nub = leaf_pushforward(&gb, &PerturbedMap::base(&mb), &mb.leaf_from(&[2]).unwrap(), rho, mb.default_c1(), None).unwrap();
        let c11 = mass_constant(&nub, rho, d);
        assert!(c11 < 5.0);
    }
}
