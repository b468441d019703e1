//! Stage runner. Each stage reads what earlier stages left in [`State`] and emits
//! one [`Report`]; artifacts can be reloaded from an output directory.

use crate::config::{ExperimentSpec, KSource, ResolvedSpec, Stage};
use crate::plot::{emit_plotdata, PlotKind};
use crate::CliError;
use horseshoe_lab::dimension::{lambda_table, submultiplicativity_constant, upper_stable_dimension};
use horseshoe_lab::geometry::{
    blender_curve_chase, projection_interval_test, robustness_check, verify_recurrent_compact, Curve, GeometryError,
    Verification, VerifyConfig,
};
use horseshoe_lab::intervals::IntervalSet;
use horseshoe_lab::marstrand::{
    select_marstrand_parameter, transversality_constant, translation_family, MarstrandConfig, TransversalityConfig,
};
use horseshoe_lab::model::{BlockSpec, HorseshoeModel, PerturbationFamily, PerturbedMap};
use horseshoe_lab::stacking::{
    build_candidate_k, fit_failure_exponent, monte_carlo_recurrence, CandidateK, KParams, MonteCarloConfig,
    MonteCarloReport,
};
use horseshoe_lab::symbolic::{Orientation, Word};
use horseshoe_lab::thermo::{build_gibbs_measure, gibbs_ratio_bounds, power_iteration_radius, pressure_estimate, MarkovMeasure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constant {
    pub value: f64,
    pub provenance: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub stage: Stage,
    pub spec: ExperimentSpec,
    pub constants: BTreeMap<String, Constant>,
    pub result: Value,
}

impl Report {
    pub fn to_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Reports keyed by stage plus CSV plot data keyed by file name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportBundle {
    pub reports: BTreeMap<Stage, Report>,
    pub plots: BTreeMap<String, String>,
    /// Set when verify-k produced a counterexample.
    pub counterexample: bool,
}

impl ReportBundle {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        for (stage, r) in &self.reports {
            let p = dir.join(format!("{}.json", stage.name()));
            std::fs::write(&p, r.to_json()? + "\n").map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        }
        for (name, csv) in &self.plots {
            let p = dir.join(name);
            std::fs::write(&p, csv).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        }
        Ok(())
    }
}

/// Outputs of completed stages.
#[derive(Clone, Debug, Default)]
pub struct State {
    pub done: Vec<Stage>,
    pub d: Option<f64>,
    pub measure: Option<MarkovMeasure>,
    /// `(t*, K1)`.
    pub marstrand: Option<(Vec<f64>, f64)>,
    pub k: Option<CandidateK>,
    pub verified: Option<(CandidateK, Verification)>,
    pub measured: BTreeMap<String, f64>,
}

impl State {
    fn need(&self, stage: Stage, dep: Stage) -> Result<(), CliError> {
        if self.done.contains(&dep) {
            Ok(())
        } else {
            Err(CliError::Dependency { stage: stage.name().into(), missing: dep.name().into() })
        }
    }

    fn measure(&self) -> &MarkovMeasure {
        self.measure.as_ref().expect("gibbs stage ran")
    }

    fn t_star(&self) -> (&[f64], f64) {
        let (t, k1) = self.marstrand.as_ref().expect("marstrand stage ran");
        (t, *k1)
    }
}

fn field<'a>(v: &'a Value, key: &str, stage: Stage) -> Result<&'a Value, CliError> {
    v.get(key).ok_or_else(|| CliError::Dependency { stage: stage.name().into(), missing: format!("{key} in saved report") })
}

/// Restores state from reports in `dir` written under the same spec.
pub fn load_state(dir: &Path, rs: &ResolvedSpec) -> Result<State, CliError> {
    let mut st = State::default();
    for stage in [Stage::Dim, Stage::Gibbs, Stage::Marstrand, Stage::BuildK, Stage::VerifyK] {
        let p = dir.join(format!("{}.json", stage.name()));
        let Ok(text) = std::fs::read_to_string(&p) else { continue };
        let r: Report = serde_json::from_str(&text)?;
        if r.spec != rs.spec {
            continue;
        }
        let res = &r.result;
        match stage {
            Stage::Dim => st.d = Some(serde_json::from_value(field(res, "d", stage)?.clone())?),
            Stage::Gibbs => {
                let Some(d) = st.d else { continue };
                st.measure = Some(build_gibbs_measure(&rs.spec.build_model()?, d)?);
            }
            Stage::Marstrand => {
                let t = serde_json::from_value(field(res, "t_star", stage)?.clone())?;
                let k1 = serde_json::from_value(field(res, "k1", stage)?.clone())?;
                st.marstrand = Some((t, k1));
            }
            Stage::BuildK => st.k = Some(serde_json::from_value(field(res, "k", stage)?.clone())?),
            Stage::VerifyK => {
                let k = serde_json::from_value(field(res, "k", stage)?.clone())?;
                let v = serde_json::from_value(field(res, "verification", stage)?.clone())?;
                st.verified = Some((k, v));
            }
            _ => unreachable!(),
        }
        for (name, c) in r.constants {
            if c.provenance == "measured" {
                st.measured.insert(name, c.value);
            }
        }
        st.done.push(stage);
    }
    Ok(st)
}

fn constants(rs: &ResolvedSpec, st: &State) -> BTreeMap<String, Constant> {
    let s = &rs.spec;
    let configured: [(&str, f64); 17] = [
        ("rho", s.rho),
        ("seed", s.seed as f64),
        ("marstrand.xi", s.marstrand.xi),
        ("marstrand.delta", s.marstrand.delta),
        ("marstrand.c14", s.marstrand.c14),
        ("marstrand.c1", s.marstrand.c1.expect("resolved")),
        ("marstrand.bin_width", s.marstrand.bin_width.expect("resolved")),
        ("k.c", s.k.c.expect("resolved")),
        ("k.k", s.k.k),
        ("k.c1", s.k.c1.expect("resolved")),
        ("k.c14", s.k.c14),
        ("k.c25", s.k.c25),
        ("k.q_tilde", s.k.q_tilde),
        ("k.c19", s.k.c19),
        ("k.c24", s.k.c24),
        ("mc.c2", s.mc.c2),
        ("mc.c3", s.mc.c3),
    ];
    let mut out = BTreeMap::new();
    for (name, value) in configured {
        let provenance = rs.provenance.get(name).copied().unwrap_or("configured");
        out.insert(name.to_string(), Constant { value, provenance: provenance.to_string() });
    }
    for (name, &value) in &st.measured {
        out.insert(name.clone(), Constant { value, provenance: "measured".into() });
    }
    out
}

fn leaf_word(letters: &[usize]) -> Word {
    Word::from_one_based(letters, Orientation::Backward)
}

fn k_params(model: &HorseshoeModel, rs: &ExperimentSpec, rho: f64, d: f64) -> KParams {
    let mut p = KParams::new(model, rho, d);
    let k = &rs.k;
    p.c = k.c.unwrap_or(p.c);
    p.k = k.k;
    p.c1 = k.c1.unwrap_or(p.c1);
    p.c14 = k.c14;
    p.c25 = k.c25;
    p.q_tilde = k.q_tilde;
    p.c19 = k.c19;
    p.c24 = k.c24;
    p
}

fn marstrand_cfg(spec: &ExperimentSpec, rho: f64) -> MarstrandConfig {
    let ms = &spec.marstrand;
    MarstrandConfig {
        xi: ms.xi,
        rho,
        t_samples: ms.t_samples,
        leaf_samples: ms.leaf_samples,
        c14: ms.c14,
        c1: ms.c1.expect("resolved"),
        // bins follow the scale
        bin_width: ms.bin_width.expect("resolved") * rho / spec.rho,
        seed: spec.seed,
    }
}

/// K at `rho` with the `(t*, K1)` it was built from. Other scales than the
/// configured ρ get their own Marstrand selection.
fn build_k_at(model: &HorseshoeModel, spec: &ExperimentSpec, st: &State, rho: f64) -> Result<(CandidateK, Vec<f64>, f64), CliError> {
    let fam = translation_family(model, spec.marstrand.delta)?;
    let (t, k1) = if rho == spec.rho {
        let (t, k1) = st.t_star();
        (t.to_vec(), k1)
    } else {
        let sel = select_marstrand_parameter(model, st.measure(), &fam, &marstrand_cfg(spec, rho))?;
        (sel.t_star, sel.k1)
    };
    let map = PerturbedMap::new(model, &fam, &t)?;
    let p = k_params(model, spec, rho, st.d.expect("dim stage ran"));
    Ok((build_candidate_k(&map, st.measure(), &p, Some(k1))?, t, k1))
}

fn run_dim(model: &HorseshoeModel, spec: &ExperimentSpec, st: &mut State) -> Result<Value, CliError> {
    let table = lambda_table(model, spec.dim.n_max)?;
    let est = upper_stable_dimension(model, spec.dim.eps, spec.dim.budget)?;
    let d = table.last().map(|r| r.1).unwrap_or(est.estimate);
    let c = submultiplicativity_constant(model, 8.min(spec.dim.budget));
    st.d = Some(d);
    st.measured.insert("d".into(), d);
    st.measured.insert("submultiplicativity".into(), c);
    let rows: Vec<Value> = table.iter().map(|(n, l, t)| json!({ "n": n, "lambda_n": l, "tilde_lambda_n": t })).collect();
    Ok(json!({ "d": d, "estimate": est, "lambda_table": rows, "submultiplicativity": c }))
}

fn run_gibbs(model: &HorseshoeModel, spec: &ExperimentSpec, st: &mut State) -> Result<Value, CliError> {
    let d = st.d.expect("dim stage ran");
    let g = build_gibbs_measure(model, d)?;
    let power = power_iteration_radius(model, d, spec.gibbs.tol);
    let pressure = pressure_estimate(model, d, spec.gibbs.pressure_len);
    let (lo, hi) = gibbs_ratio_bounds(model, &g, spec.gibbs.ratio_len);
    st.measured.insert("gibbs.ratio_lo".into(), lo);
    st.measured.insert("gibbs.ratio_hi".into(), hi);
    let out = json!({
        "spectral_radius": g.spectral_radius,
        "power_iteration_radius": power,
        "pressure_estimate": pressure,
        "ratio_bounds": [lo, hi],
        "stationary": g.stationary,
        "transition": g.transition,
    });
    st.measure = Some(g);
    Ok(out)
}

fn run_marstrand(model: &HorseshoeModel, spec: &ExperimentSpec, st: &mut State) -> Result<Value, CliError> {
    let ms = &spec.marstrand;
    let fam = translation_family(model, ms.delta)?;
    let cfg = marstrand_cfg(spec, spec.rho);
    let sel = select_marstrand_parameter(model, st.measure(), &fam, &cfg)?;
    let trans = if ms.transversality_pairs > 0 {
        let tc = TransversalityConfig { pairs: ms.transversality_pairs, seed: spec.seed, ..TransversalityConfig::default() };
        let r = transversality_constant(model, &fam, &tc)?;
        st.measured.insert("transversality.c".into(), r.c());
        st.measured.insert("transversality.min_derivative".into(), r.min_derivative);
        Some(r)
    } else {
        None
    };
    st.measured.insert("k1".into(), sel.k1);
    st.measured.insert("marstrand.coverage".into(), sel.coverage);
    st.marstrand = Some((sel.t_star.clone(), sel.k1));
    Ok(json!({
        "t_star": sel.t_star,
        "t_index": sel.t_index,
        "k1": sel.k1,
        "coverage": sel.coverage,
        "good_blocks": sel.good_blocks,
        "quantiles": sel.quantiles,
        "scores": sel.scores,
        "transversality": trans,
    }))
}

fn run_build_k(model: &HorseshoeModel, spec: &ExperimentSpec, st: &mut State) -> Result<Value, CliError> {
    let (k, _, _) = build_k_at(model, spec, st, spec.rho)?;
    let p = k_params(model, spec, spec.rho, st.d.expect("dim stage ran"));
    st.measured.insert("k.min_measure".into(), k.min_measure());
    let out = json!({
        "blocks": k.blocks.len(),
        "skipped_blocks": k.skipped_blocks,
        "min_measure": k.min_measure(),
        "min_stack_size": p.min_size(),
        "parent_cap": p.cap(),
        "parent_target": p.parent_target(),
        "k": k,
    });
    st.k = Some(k);
    Ok(out)
}

fn run_verify(model: &HorseshoeModel, spec: &ExperimentSpec, st: &mut State) -> Result<(Value, bool), CliError> {
    let vs = &spec.verify;
    let fam = translation_family(model, spec.marstrand.delta)?;
    let (k, t): (CandidateK, Vec<f64>) = match vs.source {
        KSource::BuildK => {
            st.need(Stage::VerifyK, Stage::BuildK)?;
            (st.k.clone().expect("build-k ran"), st.t_star().0.to_vec())
        }
        KSource::Uniform => {
            let set = IntervalSet::single(vs.interval[0], vs.interval[1]);
            (CandidateK::uniform(set, spec.rho, vs.block_scale), vec![0.0; fam.len()])
        }
    };
    let map = PerturbedMap::new(model, &fam, &t)?;
    let cfg = VerifyConfig { dx: vs.dx, max_len: vs.max_len, subdivisions: vs.subdivisions };
    let v = verify_recurrent_compact(&map, &k, &cfg)?;
    let mut out = json!({});
    let counter = match &v {
        Verification::Certified(cert) => {
            st.measured.insert("verify.min_margin".into(), cert.min_margin);
            let template = translation_family(model, 1.0)?;
            let rows = robustness_check(&map, &template, &k, cert, &vs.robustness_deltas, vs.robustness_samples, spec.seed)?;
            out["robustness"] = serde_json::to_value(&rows)?;
            out["min_margin"] = json!(cert.min_margin);
            out["witnesses"] = json!(cert.witnesses.len());
            out["longest_word"] = json!(cert.longest_word);
            false
        }
        Verification::Counterexample(c) => {
            out["counterexample"] = serde_json::to_value(c)?;
            true
        }
    };
    out["verification"] = serde_json::to_value(&v)?;
    out["k"] = serde_json::to_value(&k)?;
    st.verified = Some((k, v));
    Ok((out, counter))
}

fn mc_summary(r: &MonteCarloReport) -> Value {
    let mut worst = r.failures.clone();
    worst.sort_by(|a, b| b.rate.total_cmp(&a.rate));
    worst.truncate(20);
    json!({
        "rho": r.rho,
        "trials": r.trials,
        "cells": r.cells,
        "leaves": r.leaves,
        "max_failure_rate": r.max_failure_rate,
        "below_resolution": r.below_resolution,
        "failing_cells": r.failures.len(),
        "worst": worst,
    })
}

fn run_mc(model: &HorseshoeModel, spec: &ExperimentSpec, st: &mut State) -> Result<Value, CliError> {
    let fam = translation_family(model, spec.marstrand.delta)?;
    let d = st.d.expect("dim stage ran");
    let mut rhos = vec![spec.rho];
    rhos.extend(spec.mc.extra_rhos.iter().copied().filter(|&r| r != spec.rho));
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    for &rho in &rhos {
        let (k, t, k1) = if rho == spec.rho {
            let (t, k1) = st.t_star();
            (st.k.clone().expect("build-k ran"), t.to_vec(), k1)
        } else {
            build_k_at(model, spec, st, rho)?
        };
        let p = k_params(model, spec, rho, d);
        let bs = BlockSpec { alpha: 0.5 * rho.powf(1.0 / p.k), alpha_tilde: rho.powf(p.c / p.k) };
        let omega = PerturbationFamily::make(model, bs, rho, spec.mc.c2, spec.mc.c3)?;
        let z = vec![0.0; omega.len()];
        let map = PerturbedMap::new(model, &fam, &t)?.with_layer(&omega, &z)?;
        let cfg = MonteCarloConfig { trials: spec.mc.trials, seed: spec.seed, c1: p.c1, grid_dx: spec.mc.grid_dx, erosion: spec.mc.erosion };
        let r = monte_carlo_recurrence(&map, &k, &cfg)?;
        let mut row = mc_summary(&r);
        row["k1"] = json!(k1);
        row["k_blocks"] = json!(k.blocks.len());
        runs.push(row);
        reports.push(r);
    }
    let p = k_params(model, spec, spec.rho, d);
    let slope = fit_failure_exponent(&reports, p.c / p.k, d);
    Ok(json!({ "runs": runs, "failure_exponent_slope": slope }))
}

fn run_blender(model: &HorseshoeModel, spec: &ExperimentSpec, st: &mut State) -> Result<Value, CliError> {
    let bs = &spec.blender;
    let (k, v) = st.verified.as_ref().expect("verify-k ran");
    if let Verification::Counterexample(c) = v {
        return Err(CliError::Dependency { stage: "blender".into(), missing: format!("a certified K (verify-k found x = {})", c.x) });
    }
    let leaf = model.leaf(leaf_word(&bs.leaf))?;
    let Some(set) = k.get(leaf.suffix.letters()).map(|s| s.erode(bs.inset)) else {
        return Err(CliError::Config("blender.leaf: K has no block for this leaf".into()));
    };
    if set.is_empty() {
        return Err(CliError::Config("blender.inset: nothing of K is left".into()));
    }
    let mut rows = Vec::new();
    for (gi, &gamma) in bs.gammas.iter().enumerate() {
        let fam = translation_family(model, gamma)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(gi as u64);
        let params: Vec<f64> = (0..fam.len()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let map = PerturbedMap::new(model, &fam, &params)?;
        let mut ok = 0;
        let mut failed_at = Vec::new();
        let mut max_box: f64 = 0.0;
        for _ in 0..bs.curves {
            let mut pos = rng.gen_range(0.0..set.measure());
            let mut x = set.parts()[0][0];
            for part in set.parts() {
                if pos <= part[1] - part[0] {
                    x = part[0] + pos;
                    break;
                }
                pos -= part[1] - part[0];
            }
            let slope = rng.gen_range(-bs.max_slope..=bs.max_slope);
            match blender_curve_chase(&map, k, &leaf, &Curve::line(x, slope, bs.nodes), bs.max_depth) {
                Ok(r) => {
                    ok += 1;
                    max_box = max_box.max(r.box_diameter);
                }
                Err(GeometryError::ChaseFailed(depth)) => failed_at.push(json!({ "x": x, "slope": slope, "depth": depth })),
                Err(e) => return Err(e.into()),
            }
        }
        rows.push(json!({
            "gamma": gamma,
            "curves": bs.curves,
            "succeeded": ok,
            "failed": failed_at,
            "max_box_diameter": max_box,
        }));
    }
    Ok(json!({ "runs": rows }))
}

fn run_project(model: &HorseshoeModel, spec: &ExperimentSpec) -> Result<Value, CliError> {
    let ps = &spec.project;
    let leaf = model.leaf(leaf_word(&ps.leaf))?;
    let map = PerturbedMap::base(model);
    let mut rows = Vec::new();
    for &tilt in &ps.tilts {
        for &res in &ps.resolutions {
            let target = move |p: horseshoe_lab::model::Point| p.w + tilt * p.s;
            let r = projection_interval_test(&map, &leaf, &target, res)?;
            rows.push(json!({
                "tilt": tilt,
                "resolution": res,
                "points": r.points,
                "bins": r.bins,
                "hit_fraction": r.hit_fraction,
                "longest_run": r.longest_run,
                "range": r.range,
            }));
        }
    }
    Ok(json!({ "runs": rows }))
}

fn deps(stage: Stage, spec: &ExperimentSpec) -> Vec<Stage> {
    match stage {
        Stage::Dim | Stage::Project => vec![],
        Stage::Gibbs => vec![Stage::Dim],
        Stage::Marstrand => vec![Stage::Gibbs],
        Stage::BuildK => vec![Stage::Marstrand],
        Stage::VerifyK if spec.verify.source == KSource::BuildK => vec![Stage::BuildK],
        Stage::VerifyK => vec![],
        Stage::Mc => vec![Stage::BuildK],
        Stage::Blender => vec![Stage::VerifyK],
    }
}

fn plot_name(kind: PlotKind) -> String {
    format!("{}.csv", kind.name())
}

/// Runs `stages` in pipeline order on top of `state`.
pub fn run_pipeline(rs: &ResolvedSpec, stages: &[Stage], mut state: State) -> Result<(ReportBundle, State), CliError> {
    let spec = &rs.spec;
    let model = spec.build_model()?;
    let mut order: Vec<Stage> = stages.to_vec();
    order.sort();
    order.dedup();
    let mut bundle = ReportBundle::default();
    for stage in order {
        for dep in deps(stage, spec) {
            state.need(stage, dep)?;
        }
        let result = match stage {
            Stage::Dim => run_dim(&model, spec, &mut state)?,
            Stage::Gibbs => run_gibbs(&model, spec, &mut state)?,
            Stage::Marstrand => run_marstrand(&model, spec, &mut state)?,
            Stage::BuildK => run_build_k(&model, spec, &mut state)?,
            Stage::VerifyK => {
                let (v, counter) = run_verify(&model, spec, &mut state)?;
                bundle.counterexample |= counter;
                v
            }
            Stage::Mc => run_mc(&model, spec, &mut state)?,
            Stage::Blender => run_blender(&model, spec, &mut state)?,
            Stage::Project => run_project(&model, spec)?,
        };
        state.done.push(stage);
        let report = Report { stage, spec: spec.clone(), constants: constants(rs, &state), result };
        for kind in PlotKind::ALL {
            if kind.stage() == stage {
                bundle.plots.insert(plot_name(kind), emit_plotdata(&report, kind)?);
            }
        }
        bundle.reports.insert(stage, report);
    }
    Ok((bundle, state))
}
