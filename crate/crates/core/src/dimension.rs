//! Upper stable dimension: the exponents `λₙ` solving `Σ_{|θ̲|=n} D_s(θ̲)^λ = 1`.

use crate::model::{cone_check, HorseshoeModel, ModelError, Nonlinearity, PerturbedMap};
use crate::symbolic::Symbol;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_BUDGET: usize = 14;
const BISECT_TOL: f64 = 1e-12;
const BISECT_ITERS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DimensionError {
    #[error("some cylinder of length {0} has D_s >= 1")]
    NotContracted(usize),
    #[error("no admissible words of length {n} from {a} to {b}")]
    EmptyFamily { n: usize, a: usize, b: usize },
    #[error("word length {n} exceeds the budget {max}")]
    Budget { n: usize, max: usize },
    #[error("no convergence within the budget; last values {partial:?}")]
    Convergence { partial: Vec<(usize, f64)> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `D_s` values grouped into `(log D_s, multiplicity)`.
#[derive(Clone, Debug, Default)]
pub struct DsSpectrum {
    groups: Vec<(f64, f64)>,
    pub max_ds: f64,
    pub count: usize,
}

impl DsSpectrum {
    pub fn from_values(values: &[f64]) -> Self {
        let mut logs: Vec<f64> = values.iter().map(|d| d.ln()).collect();
        logs.sort_by(f64::total_cmp);
        let mut groups: Vec<(f64, f64)> = Vec::new();
        let (mut sum, mut cnt, mut anchor) = (0.0, 0.0, f64::NAN);
        for l in logs {
            if cnt > 0.0 && (l - anchor).abs() > 1e-13 {
                groups.push((sum / cnt, cnt));
                sum = 0.0;
                cnt = 0.0;
            }
            if cnt == 0.0 {
                anchor = l;
            }
            sum += l;
            cnt += 1.0;
        }
        if cnt > 0.0 {
            groups.push((sum / cnt, cnt));
        }
        let max_ds = values.iter().copied().fold(0.0, f64::max);
        Self { groups, max_ds, count: values.len() }
    }

    pub fn sum(&self, lambda: f64) -> f64 {
        self.groups.iter().map(|&(l, k)| k * (lambda * l).exp()).sum()
    }

    /// Root of `Σ D^λ = 1`; the map is strictly decreasing once every `D < 1`.
    pub fn root(&self, n: usize) -> Result<f64, DimensionError> {
        if self.count == 0 {
            return Err(DimensionError::EmptyFamily { n, a: 0, b: 0 });
        }
        if self.max_ds >= 1.0 {
            return Err(DimensionError::NotContracted(n));
        }
        let f = |x: f64| self.sum(x) - 1.0;
        let mut lo = 0.0;
        let mut hi = 3.0;
        while f(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..BISECT_ITERS {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < BISECT_TOL {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `D_s` of every admissible forward word of length `n`, built by prepending letters
/// (`V_{cθ̲} = F_c(V_θ̲)`) so each box is one branch image of its child.
pub fn ds_values(model: &HorseshoeModel, n: usize) -> Vec<f64> {
    ds_values_filtered(model, n, |_| true)
}

fn ds_values_filtered(model: &HorseshoeModel, n: usize, keep: impl Fn(&[Symbol]) -> bool + Sync) -> Vec<f64> {
    if n == 0 {
        return vec![1.0];
    }
    let k = model.n_symbols() as Symbol;
    // suffix letter θₙ, then prepend down to θ₁
    (0..k)
        .into_par_iter()
        .flat_map_iter(|last| {
            let mut out = Vec::new();
            let mut word = vec![last];
            let (w, s) = model.branch_box(last, [0.0, 1.0], [0.0, 1.0]);
            prepend(model, n, &mut word, w, s, &keep, &mut out);
            out
        })
        .collect()
}

fn prepend(
    model: &HorseshoeModel,
    n: usize,
    rev: &mut Vec<Symbol>,
    w: [f64; 2],
    s: [f64; 2],
    keep: &impl Fn(&[Symbol]) -> bool,
    out: &mut Vec<f64>,
) {
    if rev.len() == n {
        let word: Vec<Symbol> = rev.iter().rev().copied().collect();
        if keep(&word) {
            out.push(w[1] - w[0]);
        }
        return;
    }
    let head = *rev.last().expect("nonempty");
    for c in 0..model.n_symbols() as Symbol {
        if model.subshift().allows(c, head) {
            let (nw, ns) = model.branch_box(c, w, s);
            rev.push(c);
            prepend(model, n, rev, nw, ns, keep, out);
            rev.pop();
        }
    }
}

fn check_budget(n: usize, budget: usize) -> Result<(), DimensionError> {
    if n > budget {
        return Err(DimensionError::Budget { n, max: budget });
    }
    Ok(())
}

pub fn lambda_n(model: &HorseshoeModel, n: usize) -> Result<f64, DimensionError> {
    lambda_n_with_budget(model, n, DEFAULT_BUDGET)
}

pub fn lambda_n_with_budget(model: &HorseshoeModel, n: usize, budget: usize) -> Result<f64, DimensionError> {
    if n == 0 {
        return Err(DimensionError::NotContracted(0));
    }
    check_budget(n, budget)?;
    DsSpectrum::from_values(&ds_values(model, n)).root(n)
}

/// Root over words with `θ₁ = a`, `θₙ = b` and `ba` admissible.
pub fn tilde_lambda_n(model: &HorseshoeModel, n: usize, a: Symbol, b: Symbol) -> Result<f64, DimensionError> {
    check_budget(n, DEFAULT_BUDGET)?;
    let empty = DimensionError::EmptyFamily { n, a: a as usize + 1, b: b as usize + 1 };
    let k = model.n_symbols() as Symbol;
    if a >= k || b >= k || n == 0 || !model.subshift().allows(b, a) {
        return Err(empty);
    }
    let vals = ds_values_filtered(model, n, |w| w[0] == a && w[n - 1] == b);
    if vals.is_empty() {
        return Err(empty);
    }
    DsSpectrum::from_values(&vals).root(n)
}

/// Measured `c ∈ (0,1]` with `c·D(a)D(b) ≤ D(ab) ≤ c⁻¹·D(a)D(b)` over admissible
/// concatenations of total length `≤ max_total`.
pub fn submultiplicativity_constant(model: &HorseshoeModel, max_total: usize) -> f64 {
    let a = model.subshift();
    let mut all: Vec<Vec<Symbol>> = Vec::new();
    for len in 1..max_total {
        all.extend(crate::symbolic::enumerate_words(a, len, None).into_iter().map(|w| w.letters().to_vec()));
    }
    let ds: Vec<f64> = all.iter().map(|w| model.ds(w)).collect();
    all.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut c: f64 = 1.0;
            for (j, y) in all.iter().enumerate() {
                if x.len() + y.len() > max_total || !a.allows(*x.last().unwrap(), y[0]) {
                    continue;
                }
                let mut xy = x.clone();
                xy.extend_from_slice(y);
                let r = model.ds(&xy) / (ds[i] * ds[j]);
                c = c.min(r).min(1.0 / r);
            }
            c
        })
        .reduce(|| 1.0, f64::min)
}

#[derive(Clone, Debug, Serialize)]
pub struct DimensionEstimate {
    pub estimate: f64,
    pub error_bar: f64,
    pub n: usize,
    /// `(n, λₙ)` for every length that was contracted.
    pub sequence: Vec<(usize, f64)>,
    pub submultiplicativity: f64,
}

/// `λₙ` for increasing `n` until successive values differ by less than `eps`.
pub fn upper_stable_dimension(model: &HorseshoeModel, eps: f64, budget: usize) -> Result<DimensionEstimate, DimensionError> {
    let c = submultiplicativity_constant(model, 8.min(budget.max(2)));
    let mut seq: Vec<(usize, f64)> = Vec::new();
    for n in 1..=budget {
        let spec = DsSpectrum::from_values(&ds_values(model, n));
        let l = match spec.root(n) {
            Ok(l) => l,
            Err(DimensionError::NotContracted(_)) => continue,
            Err(e) => return Err(e),
        };
        if let Some(&(_, prev)) = seq.last() {
            let diff = (l - prev).abs();
            if diff < eps {
                let eps_n = c.ln().abs() / (n as f64 * spec.max_ds.ln().abs());
                seq.push((n, l));
                return Ok(DimensionEstimate {
                    estimate: l,
                    error_bar: l * eps_n + diff,
                    n,
                    sequence: seq,
                    submultiplicativity: c,
                });
            }
        }
        seq.push((n, l));
    }
    Err(DimensionError::Convergence { partial: seq })
}

/// `(n, λₙ, λ̃ₙ)` rows, `λ̃ₙ` taken with `a = b = first symbol` (None if empty).
pub fn lambda_table(model: &HorseshoeModel, n_max: usize) -> Result<Vec<(usize, f64, Option<f64>)>, DimensionError> {
    let mut rows = Vec::new();
    for n in 1..=n_max {
        let l = lambda_n(model, n)?;
        let t = if n >= 2 { tilde_lambda_n(model, n, 0, 0).ok() } else { None };
        rows.push((n, l, t));
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuityRow {
    pub delta: f64,
    pub estimate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuityReport {
    pub rows: Vec<ContinuityRow>,
    /// `max |Δd̄_s| / δ` over the nonzero sizes.
    pub fitted_c: f64,
}

/// `d̄_s` on the models bent by `N` with `κ_w = κ_s = δ`.
pub fn continuity_experiment(model: &HorseshoeModel, deltas: &[f64], n: usize) -> Result<ContinuityReport, DimensionError> {
    let base = lambda_n(model, n)?;
    let mut rows = Vec::new();
    let mut fitted: f64 = 0.0;
    for &d in deltas {
        let m = model.with_nonlinearity(Some(Nonlinearity { kappa_w: d, kappa_s: d }))?;
        cone_check(&PerturbedMap::base(&m), 200, 6, 7)?;
        let est = lambda_n(&m, n)?;
        if d > 0.0 {
            fitted = fitted.max((est - base).abs() / d);
        }
        rows.push(ContinuityRow { delta: d, estimate: est });
    }
    Ok(ContinuityReport { rows, fitted_c: fitted })
}

/// `λₙ` by the count of admissible words when all weak rates are equal.
pub fn conformal_lambda(model: &HorseshoeModel, n: usize) -> Option<f64> {
    let r = model.min_rate_ws();
    if (model.max_rate_ws() - r).abs() > 0.0 || !model.is_affine() {
        return None;
    }
    let count = crate::symbolic::enumerate_words(model.subshift(), n, None).len() as f64;
    Some(count.ln() / (-(n as f64) * r.ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::TransitionMatrix;

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn ref3_conformal_identity() {
        let m = HorseshoeModel::ref3();
        let d = 3f64.ln() / 2f64.ln();
        for n in 1..=8 {
            assert!((lambda_n(&m, n).unwrap() - d).abs() < 1e-10);
            assert!((conformal_lambda(&m, n).unwrap() - d).abs() < 1e-12);
        }
    }

    #[test]
    fn two_map_self_similar() {
        let m = HorseshoeModel::two_map();
        let oracle = bisect(|x| 2f64.powf(-x) + 3f64.powf(-x) - 1.0, 0.0, 2.0);
        assert!((oracle - 0.7878).abs() < 1e-4);
        for n in [1, 5, 9] {
            assert!((lambda_n(&m, n).unwrap() - oracle).abs() < 1e-8);
        }
    }

    #[test]
    fn ref2_dimension() {
        let m = HorseshoeModel::ref2();
        let d = 2f64.ln() / 3f64.ln();
        assert!((lambda_n(&m, 4).unwrap() - d).abs() < 1e-10);
        let est = upper_stable_dimension(&m, 1e-9, 10).unwrap();
        assert!((est.estimate - 0.63093).abs() < 1e-5);
    }

    #[test]
    fn tilde_lambda_example() {
        let m = HorseshoeModel::ref3();
        let t = tilde_lambda_n(&m, 4, 0, 0).unwrap();
        assert!((t - 9f64.ln() / (4.0 * 2f64.ln())).abs() < 1e-10);
        for n in 2..=7 {
            assert!(tilde_lambda_n(&m, n, 0, 1).unwrap() <= lambda_n(&m, n).unwrap());
        }
    }

    #[test]
    fn tilde_gap_shrinks_on_ref3b() {
        let m = HorseshoeModel::ref3b();
        let r = crate::symbolic::mixing_exponent(m.subshift(), 10).unwrap() as f64;
        let rate = (1.0 / m.min_rate_ws()).ln();
        let mut prev = f64::INFINITY;
        for n in 6..=12 {
            let gap = lambda_n(&m, n).unwrap() - tilde_lambda_n(&m, n, 2, 2).unwrap();
            assert!(gap >= 0.0);
            assert!(gap <= 2.0 * r * rate / n as f64 + 0.5, "{n}: {gap}");
            assert!(gap < prev);
            prev = gap;
        }
    }

    #[test]
    fn empty_family_and_contraction() {
        let a = TransitionMatrix::new(vec![vec![1, 1], vec![1, 0]]).unwrap();
        let mut br = HorseshoeModel::ref2().branches().to_vec();
        // second branch maps onto the first box only
        br[1].u_interval = [2.0 / 3.0, 0.8];
        br[1].rate_u = 2.5;
        br[1].u_image_lo = 0.0;
        let m = HorseshoeModel::new(a, br, None).unwrap();
        // words starting and ending at symbol 2 with "2 2" forbidden
        assert!(matches!(tilde_lambda_n(&m, 3, 1, 1), Err(DimensionError::EmptyFamily { .. })));
        assert!(matches!(lambda_n(&m, 20), Err(DimensionError::Budget { .. })));
    }

    #[test]
    fn ref3b_limit() {
        let m = HorseshoeModel::ref3b();
        let oracle = bisect(|x| 2.0 * 0.5f64.powf(x) + 0.4f64.powf(x) - 1.0, 0.0, 3.0);
        assert!(oracle > 1.40 && oracle < 1.50);
        let est = upper_stable_dimension(&m, 1e-3, 12).unwrap();
        assert!((est.estimate - oracle).abs() < 1e-3);
        assert!(est.submultiplicativity > 0.99);
    }

    #[test]
    fn submultiplicativity_affine() {
        for m in [HorseshoeModel::ref3(), HorseshoeModel::ref3b(), HorseshoeModel::ref2()] {
            assert!(submultiplicativity_constant(&m, 6) >= 0.99);
        }
        let nl = HorseshoeModel::ref3b().with_nonlinearity(Some(Nonlinearity { kappa_w: 0.1, kappa_s: 0.1 })).unwrap();
        let c = submultiplicativity_constant(&nl, 6);
        assert!(c < 1.0 && c > 0.5);
    }

    #[test]
    fn upper_semicontinuity_inequality() {
        let m = HorseshoeModel::ref3b();
        let c = submultiplicativity_constant(&m, 8);
        for n in 1..=7 {
            let spec = DsSpectrum::from_values(&ds_values(&m, n));
            let ln = spec.root(n).unwrap();
            let eps = c.ln().abs() / (n as f64 * spec.max_ds.ln().abs());
            let mut k = 2;
            while k * n <= 14 {
                let lkn = lambda_n(&m, k * n).unwrap();
                assert!(lkn * (1.0 + eps) <= ln + 1e-9);
                k += 1;
            }
        }
    }

    #[test]
    fn continuity_small_bend() {
        let m = HorseshoeModel::ref3();
        let rep = continuity_experiment(&m, &[0.0, 1e-3, 1e-2], 8).unwrap();
        assert_eq!(rep.rows[0].estimate, lambda_n(&m, 8).unwrap());
        assert!((rep.rows[2].estimate - rep.rows[0].estimate).abs() < 0.1);
        let r2 = continuity_experiment(&HorseshoeModel::ref2(), &[1e-3, 1e-2], 8).unwrap();
        assert!(r2.rows.iter().all(|r| r.estimate < 1.0));
    }
}
