use horseshoe_cli::config::KSource;
use horseshoe_cli::{emit_plotdata, load_state, parse_config, run_pipeline, CliError, PlotKind, Stage, State};
use std::process::Command;

const REF3: &str = r#"
seed = 3
stages = ["dim", "gibbs", "verify-k", "project"]
[model]
preset = "ref3"
[verify]
source = "uniform"
"#;

#[test]
fn dim_report_has_the_dimension() {
    let rs = parse_config(REF3).unwrap();
    let (b, _) = run_pipeline(&rs, &[Stage::Dim], State::default()).unwrap();
    let d = b.reports[&Stage::Dim].result["d"].as_f64().unwrap();
    assert!((d - 3f64.ln() / 2f64.ln()).abs() < 1e-10);
    assert!(b.reports[&Stage::Dim].to_json().unwrap().contains("1.58496250"));
    let csv = emit_plotdata(&b.reports[&Stage::Dim], PlotKind::LambdaN).unwrap();
    let col: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(col.len(), 10);
    assert!(col.iter().all(|l| (l - d).abs() < 1e-10));
    assert_eq!(b.reports[&Stage::Dim].constants["d"].provenance, "measured");
    assert_eq!(b.reports[&Stage::Dim].constants["k.c"].provenance, "measured");
}

#[test]
fn missing_dependency() {
    let rs = parse_config(REF3).unwrap();
    match run_pipeline(&rs, &[Stage::Mc], State::default()) {
        Err(CliError::Dependency { stage, missing }) => assert_eq!((stage.as_str(), missing.as_str()), ("mc", "build-k")),
        other => panic!("{other:?}"),
    }
    let mut spec = rs.clone();
    spec.spec.verify.source = KSource::BuildK;
    assert!(matches!(run_pipeline(&spec, &[Stage::VerifyK], State::default()), Err(CliError::Dependency { .. })));
}

#[test]
fn same_seed_same_bytes() {
    let rs = parse_config(REF3).unwrap();
    let render = || {
        let (b, _) = run_pipeline(&rs, &rs.spec.stages, State::default()).unwrap();
        let mut out = String::new();
        for r in b.reports.values() {
            out += &r.to_json().unwrap();
        }
        for c in b.plots.values() {
            out += c;
        }
        out
    };
    assert_eq!(render(), render());
}

#[test]
fn stages_resume_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let rs = parse_config(REF3).unwrap();
    let (b, _) = run_pipeline(&rs, &[Stage::Dim], State::default()).unwrap();
    b.write(dir.path()).unwrap();
    let st = load_state(dir.path(), &rs).unwrap();
    assert_eq!(st.done, vec![Stage::Dim]);
    let (g, _) = run_pipeline(&rs, &[Stage::Gibbs, Stage::VerifyK], st).unwrap();
    let r = g.reports[&Stage::Gibbs].result["spectral_radius"].as_f64().unwrap();
    assert!((r - 1.0).abs() < 1e-8);
    // a report written under another spec is ignored
    let other = parse_config(&REF3.replace("seed = 3", "seed = 4")).unwrap();
    assert!(load_state(dir.path(), &other).unwrap().done.is_empty());
}

#[test]
fn embedded_spec_reproduces_the_stage() {
    let rs = parse_config(REF3).unwrap();
    let (b, _) = run_pipeline(&rs, &[Stage::Project], State::default()).unwrap();
    let r = &b.reports[&Stage::Project];
    let again = r.spec.clone().resolve().unwrap();
    let (b2, _) = run_pipeline(&again, &[Stage::Project], State::default()).unwrap();
    assert_eq!(b2.reports[&Stage::Project].result, r.result);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_horseshoe"))
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ref2.toml");
    std::fs::write(&cfg, "[model]\npreset = \"ref2\"\n[verify]\nsource = \"uniform\"\n").unwrap();
    let out = dir.path().join("out");
    let st = bin().args(["verify-k", "--config"]).arg(&cfg).arg("--out-dir").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(2));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("verify-k.json")).unwrap()).unwrap();
    let x = v["result"]["counterexample"]["x"].as_f64().unwrap();
    assert!(x > 0.35 && x < 0.65);

    let st = bin().args(["dim", "--seed", "9", "--threads", "1", "--config"]).arg(&cfg).arg("--out-dir").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[dim]\nnmax = 3\n").unwrap();
    let o = bin().args(["dim", "--config"]).arg(&bad).arg("--out-dir").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nmax"));
    let st = bin().args(["mc", "--config"]).arg(&cfg).arg("--out-dir").arg(dir.path().join("empty")).status().unwrap();
    assert_eq!(st.code(), Some(1));
}
