use super::*;
use crate::intervals::IntervalSet;
use crate::model::BlockSpec;

fn uniform_k(lo: f64, hi: f64) -> CandidateK {
    CandidateK::uniform(IntervalSet::single(lo, hi), 0.5, 0.34)
}

fn certify(m: &HorseshoeModel, k: &CandidateK, max_len: usize) -> Verification {
    let map = PerturbedMap::base(m);
    verify_recurrent_compact(&map, k, &VerifyConfig { dx: 1e-3, max_len, subdivisions: 6 }).unwrap()
}

// best one-letter depth for x ↦ (x − t_a)/½ on REF3 into [0.05, 0.95]
fn ref3_best_depth(x: f64) -> f64 {
    [0.0, 0.25, 0.5]
        .iter()
        .map(|t| {
            let r = (x - t) / 0.5;
            if r <= 0.0 || r >= 1.0 { f64::NEG_INFINITY } else { (r - 0.05).min(0.95 - r) }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn ref3_certified_with_one_letter() {
    let m = HorseshoeModel::ref3();
    let k = uniform_k(0.05, 0.95);
    let Verification::Certified(cert) = certify(&m, &k, 3) else { panic!("REF3 should certify") };
    assert_eq!(cert.longest_word, 1);
    assert!(cert.min_margin >= 0.02, "min margin {}", cert.min_margin);
    assert_eq!(cert.witnesses.len(), 3 * 900);
    for w in &cert.witnesses {
        let x = 0.5 * (w.cell[0] + w.cell[1]);
        assert!((w.raw - ref3_best_depth(x)).abs() < 1e-12, "{w:?}");
        assert!((w.grid_error - (w.cell[1] - w.cell[0])).abs() < 1e-12);
    }
    // worst point is the left edge
    let worst = cert.witnesses.iter().min_by(|a, b| a.margin.total_cmp(&b.margin)).unwrap();
    assert!(worst.cell[0] < 0.052 || worst.cell[1] > 0.948);
}

#[test]
fn witnesses_reevaluate_exactly() {
    let m = HorseshoeModel::ref3();
    let k = uniform_k(0.05, 0.95);
    let Verification::Certified(cert) = certify(&m, &k, 2) else { panic!() };
    let map = PerturbedMap::base(&m);
    for w in cert.witnesses.iter().step_by(37) {
        assert!((evaluate_witness(&map, &k, w).unwrap() - w.margin).abs() < 1e-12);
    }
    assert_eq!(certify(&m, &k, 2), Verification::Certified(cert));
}

#[test]
fn ref2_gap_is_reported() {
    let m = HorseshoeModel::ref2();
    let Verification::Counterexample(c) = certify(&m, &uniform_k(0.05, 0.95), 3) else { panic!("REF2 cannot certify") };
    assert!(c.uncovered);
    assert!(c.x > 0.35 && c.x < 0.65, "{c:?}");
}

#[test]
fn full_interval_fails_at_the_edge() {
    let m = HorseshoeModel::ref3();
    let Verification::Counterexample(c) = certify(&m, &uniform_k(0.0, 1.0), 3) else { panic!() };
    assert!(!c.uncovered);
    assert!(c.x < 0.01, "{c:?}");
}

#[test]
fn robustness_small_delta() {
    let m = HorseshoeModel::ref3();
    let k = uniform_k(0.05, 0.95);
    let Verification::Certified(cert) = certify(&m, &k, 1) else { panic!() };
    let template = PerturbationFamily::uniform(&m, 2, 2, 1.0, 1.2).unwrap();
    let map = PerturbedMap::base(&m);
    let rows = robustness_check(&map, &template, &k, &cert, &[0.0, 1e-3], 4, 7).unwrap();
    assert!((rows[0].min_margin - cert.min_margin).abs() < 1e-12);
    assert!(!rows[1].broken);
    assert!(rows[1].min_margin >= cert.min_margin - 1e-3 * rows[1].degradation * 2.0 - 1e-12);
    // orbit and projection terms are each at most δ·Σλ^j = 2δ
    assert!(rows[1].degradation <= 4.0 + 1e-9, "{}", rows[1].degradation);

    let mut zero = cert.clone();
    zero.witnesses = vec![Witness {
        block: vec![1],
        cell: [0.475, 0.475],
        word: vec![1],
        raw: 0.0,
        grid_error: 0.0,
        margin: 0.0,
        expansion: 2.0,
    }];
    let rows = robustness_check(&map, &template, &k, &zero, &[1e-3, 1e-4], 8, 3).unwrap();
    assert!(rows.iter().all(|r| r.broken));
}

fn dispersion_family(m: &HorseshoeModel, rho: f64) -> PerturbationFamily {
    PerturbationFamily::make(m, BlockSpec { alpha: 0.5 * rho.sqrt(), alpha_tilde: rho.sqrt() }, rho, 1.2, 1.0).unwrap()
}

#[test]
fn dispersion_bands() {
    let m = HorseshoeModel::ref3();
    let rho = 2f64.powi(-6);
    let fam = dispersion_family(&m, rho);
    let params = vec![0.0; fam.len()];
    for case in [Some(0), Some(1), Some(2), None] {
        let cases = sample_dispersion_cases(&m, &fam, rho, 1.0, 8, case, 20, 5).unwrap();
        for (leaf, word, block) in &cases {
            let d = dispersion_finite_difference_check(&m, &fam, &params, leaf, word.letters(), *block).unwrap();
            assert!(d.pass, "{case:?} {d:?}");
            if let Some(j) = case {
                // affine model: exactly λ^j·amplitude
                assert!((d.derivative.abs() - 0.5f64.powi(j as i32) * fam.amplitude).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn dispersion_rejects_repeated_block() {
    let m = HorseshoeModel::ref3();
    let rho = 2f64.powi(-6);
    let fam = dispersion_family(&m, rho);
    let params = vec![0.0; fam.len()];
    let leaf = m.leaf_from(&[1; 8]).unwrap();
    let word = [0u8; 6];
    let (orbit, _) = piece_blocks(&m, &fam, &leaf, &word);
    assert_eq!(
        dispersion_finite_difference_check(&m, &fam, &params, &leaf, &word, orbit[0]),
        Err(GeometryError::RecurrentPiece)
    );
}

// straight lines stay straight: crossing and slope after pulling back through `a`
fn line_chase(m: &HorseshoeModel, mut x: f64, mut slope: f64, depth: usize) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::new();
    for _ in 0..depth {
        let step = (0..m.n_symbols()).rev().find_map(|a| {
            let b = m.branch(a as Symbol);
            let xs = (x + slope * (b.q + 0.5 * b.rate_ss - 0.5) - b.t) / b.rate_ws;
            // both ends of the pulled-back segment stay in [0, 1]
            let sl = slope * b.rate_ss / b.rate_ws;
            let ok = (xs - 0.5 * sl.abs()) >= 0.0 && (xs + 0.5 * sl.abs()) <= 1.0 && xs > 0.05 && xs < 0.95;
            ok.then_some((a + 1, xs, sl))
        });
        let Some(s) = step else { break };
        (x, slope) = (s.1, s.2);
        out.push(s);
    }
    out
}

#[test]
fn ref3_chase() {
    let m = HorseshoeModel::ref3();
    let k = uniform_k(0.05, 0.95);
    let map = PerturbedMap::base(&m);
    let leaf = m.leaf_from(&[1, 2, 3]).unwrap();
    for (x, slope) in [(0.3, 0.0), (0.3, 0.05), (0.61, -0.04)] {
        let r = blender_curve_chase(&map, &k, &leaf, &Curve::line(x, slope, 33), 20).unwrap();
        let oracle = line_chase(&m, x, slope, 20);
        assert_eq!(oracle.len(), 20);
        assert_eq!(r.itinerary, oracle.iter().map(|o| o.0).collect::<Vec<_>>());
        for (c, o) in r.crossings.iter().zip(&oracle) {
            assert!((c - o.1).abs() < 1e-9);
        }
        for (s, o) in r.slopes[1..].iter().zip(&oracle) {
            assert!((s - o.2.abs()).abs() < 1e-9);
        }
        let back: Vec<usize> = r.forward_boxes.iter().rev().copied().collect();
        assert_eq!(back, r.itinerary);
        assert!(r.box_diameter <= 2f64.powi(-20) * (1.0 + 1e-12));
        assert!(r.curve_error < 1e-9);
    }
    let r = blender_curve_chase(&map, &k, &leaf, &Curve::line(0.3, 0.0, 9), 8).unwrap();
    assert_eq!(r.itinerary, vec![2, 1, 1, 2, 2, 1, 1, 2]);
}

#[test]
fn ref2_gap_curve_fails() {
    let m = HorseshoeModel::ref2();
    let k = uniform_k(0.05, 0.95);
    let map = PerturbedMap::base(&m);
    let leaf = m.leaf_from(&[1, 2]).unwrap();
    let e = blender_curve_chase(&map, &k, &leaf, &Curve::line(0.5, 0.02, 17), 10).unwrap_err();
    assert_eq!(e, GeometryError::ChaseFailed(1));
}

// middle-thirds centres at depth n, binned at `res`: (hit fraction, longest run in bins)
fn cantor_bins(n: usize, res: f64) -> (f64, usize) {
    let mut bins: Vec<i64> = (0..1usize << n)
        .map(|bits| {
            let x: f64 = (0..n).map(|i| if bits >> (n - 1 - i) & 1 == 1 { 2.0 * 3f64.powi(-(i as i32) - 1) } else { 0.0 }).sum();
            ((x + 0.5 * 3f64.powi(-(n as i32))) / res).floor() as i64
        })
        .collect();
    bins.sort();
    bins.dedup();
    let (mut run, mut best) = (1, 1);
    for w in bins.windows(2) {
        run = if w[1] == w[0] + 1 { run + 1 } else { 1 };
        best = best.max(run);
    }
    (bins.len() as f64 / (bins[bins.len() - 1] - bins[0] + 1) as f64, best)
}

#[test]
fn projection_ref3_and_ref2() {
    let m = HorseshoeModel::ref3();
    let map = PerturbedMap::base(&m);
    let leaf = m.leaf_from(&[1, 2, 3]).unwrap();
    for k in 8..=10 {
        let r = projection_interval_test(&map, &leaf, &|p| p.w, 2f64.powi(-k)).unwrap();
        assert_eq!(r.points, 3usize.pow(k as u32));
        assert_eq!(r.hit_fraction, 1.0);
        assert_eq!(r.bins, 1 << k);
    }
    let m2 = HorseshoeModel::ref2();
    let map2 = PerturbedMap::base(&m2);
    let leaf2 = m2.leaf_from(&[1, 2]).unwrap();
    let mut last = 1.0;
    for (k, n) in [(8, 6), (9, 6), (10, 7)] {
        let res = 2f64.powi(-k);
        let r = projection_interval_test(&map2, &leaf2, &|p| p.w, res).unwrap();
        let (frac, run) = cantor_bins(n, res);
        assert_eq!(r.points, 1 << n);
        assert!((r.hit_fraction - frac).abs() < 1e-12, "{r:?}");
        assert!((r.longest_run - run as f64 * res).abs() < 1e-15);
        assert!(r.hit_fraction <= last);
        last = r.hit_fraction;
    }
    // on the triadic grid every hit bin is isolated
    for n in 5..=7 {
        let res = 3f64.powi(-n);
        let r = projection_interval_test(&map2, &leaf2, &|p| p.w, res * (1.0 + 1e-12)).unwrap();
        assert!((r.longest_run - res).abs() < 1e-12, "{r:?}");
    }
    assert!(matches!(
        projection_interval_test(&map, &leaf, &|p| p.s, 0.01),
        Err(GeometryError::DegenerateMap(_))
    ));
}
