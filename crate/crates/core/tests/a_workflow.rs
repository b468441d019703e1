use horseshoe_lab::dimension::lambda_n;
use horseshoe_lab::geometry::{renormalize, verify_recurrent_compact, Renormalized, Verification, VerifyConfig};
use horseshoe_lab::intervals::IntervalSet;
use horseshoe_lab::model::{HorseshoeModel, PerturbedMap, WallPoint};
use horseshoe_lab::pieces::{piece_interval, pieces_at_scale};
use horseshoe_lab::stacking::{build_candidate_k, monte_carlo_recurrence, CandidateK, KParams, MonteCarloConfig};
use horseshoe_lab::symbolic::enumerate_words;
use horseshoe_lab::thermo::{build_gibbs_measure, leaf_pushforward, pressure_estimate};

#[test]
fn measure_is_consistent_and_invariant() {
    let m = HorseshoeModel::ref3b();
    let g = build_gibbs_measure(&m, lambda_n(&m, 10).unwrap()).unwrap();
    let n = m.n_symbols() as u8;
    for len in 1..=5 {
        for w in enumerate_words(m.subshift(), len, None) {
            let mu = g.cylinder(w.letters());
            let ext: f64 = (0..n).map(|b| g.cylinder(&[w.letters(), &[b]].concat())).sum();
            let pre: f64 = (0..n).map(|a| g.cylinder(&[&[a], w.letters()].concat())).sum();
            assert!((ext - mu).abs() < 1e-14 && (pre - mu).abs() < 1e-14, "{w:?}");
        }
    }
}

#[test]
fn pressure_vanishes_at_lambda_n() {
    let m = HorseshoeModel::two_map();
    for n in 1..=10 {
        let l = lambda_n(&m, n).unwrap();
        assert!(pressure_estimate(&m, l, n).abs() < 1e-9);
    }
}

#[test]
fn ref3_pushforward_is_uniform() {
    let m = HorseshoeModel::ref3();
    let g = build_gibbs_measure(&m, 3f64.ln() / 2f64.ln()).unwrap();
    let leaf = m.leaf_from(&[3, 1, 2]).unwrap();
    let masses = leaf_pushforward(&g, &PerturbedMap::base(&m), &leaf, 0.125, 1.0, None).unwrap();
    assert_eq!(masses.len(), 27);
    for wm in &masses {
        assert!((wm.interval[1] - wm.interval[0] - 0.125).abs() < 1e-15);
        assert!((wm.mass - 1.0 / 27.0).abs() < 1e-15);
    }
}

#[test]
fn renormalization_rescales_pieces() {
    let m = HorseshoeModel::ref3b();
    let map = PerturbedMap::base(&m);
    let leaf = m.leaf_from(&[2, 3, 1, 1]).unwrap();
    for p in pieces_at_scale(&map, &leaf, 2f64.powi(-4), 1.0).unwrap().iter().step_by(5) {
        let [lo, hi] = piece_interval(&map, &leaf, p.word.letters()).unwrap();
        for f in [0.1, 0.5, 0.9] {
            let x = lo + f * (hi - lo);
            match renormalize(&map, p.word.letters(), &WallPoint { x, leaf: leaf.clone() }).unwrap() {
                Renormalized::Inside(r) => assert!((r.x - f).abs() < 1e-10, "{:?} {f} {}", p.word, r.x),
                Renormalized::Outside => panic!("{x} in {:?}", [lo, hi]),
            }
        }
        let out = renormalize(&map, p.word.letters(), &WallPoint { x: hi + 0.01, leaf: leaf.clone() }).unwrap();
        assert_eq!(out, Renormalized::Outside);
    }
}

#[test]
fn built_k_feeds_monte_carlo() {
    let m = HorseshoeModel::ref3();
    let d = 3f64.ln() / 2f64.ln();
    let g = build_gibbs_measure(&m, d).unwrap();
    let rho = 2f64.powi(-6);
    let base = PerturbedMap::base(&m);
    let p = KParams::new(&m, rho, d);
    let k = build_candidate_k(&base, &g, &p, None).unwrap();
    assert!(!k.blocks.is_empty());
    for b in k.blocks.values() {
        assert!(b.set.is_subset_of(&IntervalSet::single(0.0, 1.0), 1e-12));
        assert!(b.set.measure() > 0.0);
    }
    let fam = horseshoe_lab::model::PerturbationFamily::uniform(&m, 2, 2, 0.0, 1.2).unwrap();
    let z = vec![0.0; fam.len()];
    let map = base.clone().with_layer(&fam, &z).unwrap();
    let cfg = MonteCarloConfig { trials: 4, seed: 2, c1: p.c1, grid_dx: Some(1e-3), erosion: Some(0.0) };
    let r = monte_carlo_recurrence(&map, &k, &cfg).unwrap();
    assert!(r.cells > 0 && r.leaves > 0);
    // zero amplitude: every trial sees the same map
    assert!(r.failures.iter().all(|f| f.failures == 4));
    assert_eq!(r.trials, 4);
}

#[test]
fn certificate_survives_json() {
    let m = HorseshoeModel::ref3();
    let k = CandidateK::uniform(IntervalSet::single(0.05, 0.95), 0.5, 0.34);
    let v = verify_recurrent_compact(&PerturbedMap::base(&m), &k, &VerifyConfig { dx: 1e-2, ..Default::default() }).unwrap();
    let Verification::Certified(cert) = &v else { panic!() };
    assert_eq!(cert.witnesses.len(), 3 * 90);
    let text = serde_json::to_string(&v).unwrap();
    let back: Verification = serde_json::from_str(&text).unwrap();
    assert_eq!(back, v);
}
