//! Experiment configuration: one TOML file, every constant either configured or
//! filled from the model.

use crate::CliError;
use horseshoe_lab::model::HorseshoeModel;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Dim,
    Gibbs,
    Marstrand,
    BuildK,
    VerifyK,
    Mc,
    Blender,
    Project,
}

impl Stage {
    pub const ALL: [Stage; 8] =
        [Stage::Dim, Stage::Gibbs, Stage::Marstrand, Stage::BuildK, Stage::VerifyK, Stage::Mc, Stage::Blender, Stage::Project];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Dim => "dim",
            Stage::Gibbs => "gibbs",
            Stage::Marstrand => "marstrand",
            Stage::BuildK => "build-k",
            Stage::VerifyK => "verify-k",
            Stage::Mc => "mc",
            Stage::Blender => "blender",
            Stage::Project => "project",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    /// ref3, ref3b, ref2 or two-map.
    pub preset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_scaling: Option<Vec<f64>>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { preset: "ref3".into(), rate_scaling: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DimSpec {
    pub n_max: usize,
    pub eps: f64,
    pub budget: usize,
}

impl Default for DimSpec {
    fn default() -> Self {
        Self { n_max: 10, eps: 1e-6, budget: 14 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GibbsSpec {
    pub pressure_len: usize,
    pub ratio_len: usize,
    pub tol: f64,
}

impl Default for GibbsSpec {
    fn default() -> Self {
        Self { pressure_len: 12, ratio_len: 6, tol: 1e-12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarstrandSpec {
    pub xi: f64,
    pub delta: f64,
    pub t_samples: usize,
    pub leaf_samples: usize,
    pub c14: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    /// ρ when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_width: Option<f64>,
    /// 0 skips the transversality estimate.
    pub transversality_pairs: usize,
}

impl Default for MarstrandSpec {
    fn default() -> Self {
        Self { xi: 0.1, delta: 0.1, t_samples: 8, leaf_samples: 64, c14: 1.0, c1: None, bin_width: None, transversality_pairs: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    pub k: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    pub c14: f64,
    pub c25: f64,
    pub q_tilde: f64,
    pub c19: f64,
    pub c24: f64,
}

impl Default for KSpec {
    fn default() -> Self {
        Self { c: None, k: 2.0, c1: None, c14: 1.0, c25: 3.0, q_tilde: 0.5, c19: 1.0, c24: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KSource {
    BuildK,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub source: KSource,
    /// K on every leaf block when `source = "uniform"`.
    pub interval: [f64; 2],
    pub block_scale: f64,
    pub dx: f64,
    pub max_len: usize,
    pub subdivisions: usize,
    pub robustness_deltas: Vec<f64>,
    pub robustness_samples: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            source: KSource::BuildK,
            interval: [0.05, 0.95],
            block_scale: 0.34,
            dx: 1e-3,
            max_len: 3,
            subdivisions: 6,
            robustness_deltas: vec![1e-3],
            robustness_samples: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSpec {
    pub trials: usize,
    pub c2: f64,
    pub c3: f64,
    /// ρ² when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_dx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub erosion: Option<f64>,
    /// Further scales; K1, t* and K are redone at each with the same constants.
    pub extra_rhos: Vec<f64>,
}

impl Default for McSpec {
    fn default() -> Self {
        Self { trials: 500, c2: 1.2, c3: 1.0, grid_dx: None, erosion: None, extra_rhos: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlenderSpec {
    pub curves: usize,
    pub max_depth: usize,
    pub max_slope: f64,
    pub nodes: usize,
    /// One-based leaf block letters.
    pub leaf: Vec<usize>,
    /// Amplitudes of the random translation layer; 0 is the unperturbed map.
    pub gammas: Vec<f64>,
    /// Curves cross the wall at least this deep inside K.
    pub inset: f64,
}

impl Default for BlenderSpec {
    fn default() -> Self {
        Self { curves: 50, max_depth: 20, max_slope: 0.05, nodes: 33, leaf: vec![1, 2, 3], gammas: vec![0.0, 1e-3], inset: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectSpec {
    pub resolutions: Vec<f64>,
    pub leaf: Vec<usize>,
    /// `P = w + tilt·s` for each entry.
    pub tilts: Vec<f64>,
}

impl Default for ProjectSpec {
    fn default() -> Self {
        Self { resolutions: vec![2f64.powi(-8), 2f64.powi(-9), 2f64.powi(-10)], leaf: vec![1, 2, 3], tilts: vec![0.0, 0.3] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub rho: f64,
    pub stages: Vec<Stage>,
    pub model: ModelSpec,
    pub dim: DimSpec,
    pub gibbs: GibbsSpec,
    pub marstrand: MarstrandSpec,
    pub k: KSpec,
    pub verify: VerifySpec,
    pub mc: McSpec,
    pub blender: BlenderSpec,
    pub project: ProjectSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            rho: 2f64.powi(-6),
            stages: Stage::ALL.to_vec(),
            model: ModelSpec::default(),
            dim: DimSpec::default(),
            gibbs: GibbsSpec::default(),
            marstrand: MarstrandSpec::default(),
            k: KSpec::default(),
            verify: VerifySpec::default(),
            mc: McSpec::default(),
            blender: BlenderSpec::default(),
            project: ProjectSpec::default(),
        }
    }
}

/// A spec with every model-dependent constant filled, and where each came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedSpec {
    pub spec: ExperimentSpec,
    pub provenance: BTreeMap<String, &'static str>,
}

impl ExperimentSpec {
    pub fn build_model(&self) -> Result<HorseshoeModel, CliError> {
        let m = HorseshoeModel::preset(&self.model.preset)
            .ok_or_else(|| CliError::Config(format!("model.preset: unknown preset `{}`", self.model.preset)))?;
        match &self.model.rate_scaling {
            Some(t) => Ok(m.with_rate_scaling(t)?),
            None => Ok(m),
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Fills unset constants from the model, recording provenance.
    pub fn resolve(mut self) -> Result<ResolvedSpec, CliError> {
        let m = self.build_model()?;
        self.validate()?;
        let mut prov = BTreeMap::new();
        let mut fill = |name: &str, slot: &mut Option<f64>, value: f64| {
            prov.insert(name.to_string(), if slot.is_some() { "configured" } else { "measured" });
            slot.get_or_insert(value);
        };
        fill("k.c", &mut self.k.c, m.default_c());
        fill("k.c1", &mut self.k.c1, m.default_c1());
        fill("marstrand.c1", &mut self.marstrand.c1, m.default_c1());
        fill("marstrand.bin_width", &mut self.marstrand.bin_width, self.rho);
        for name in [
            "rho", "seed", "marstrand.xi", "marstrand.delta", "marstrand.c14", "k.k", "k.c14", "k.c25", "k.q_tilde", "k.c19",
            "k.c24", "mc.c2", "mc.c3",
        ] {
            prov.insert(name.to_string(), "configured");
        }
        Ok(ResolvedSpec { spec: self, provenance: prov })
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: &str| Err(CliError::Config(format!("{field}: {why}")));
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho", "must lie in (0,1)");
        }
        if !(self.marstrand.xi > 0.0 && self.marstrand.xi < 1.0) {
            return bad("marstrand.xi", "must lie in (0,1)");
        }
        if self.mc.trials == 0 {
            return bad("mc.trials", "must be positive");
        }
        if self.verify.interval[0] >= self.verify.interval[1] {
            return bad("verify.interval", "must be increasing");
        }
        if self.project.resolutions.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return bad("project.resolutions", "entries must lie in (0,1)");
        }
        Ok(())
    }
}

/// The spec as written, before model defaults are filled in.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

pub fn read_spec(path: &Path) -> Result<ExperimentSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_spec(&text)
}

pub fn parse_config(text: &str) -> Result<ResolvedSpec, CliError> {
    parse_spec(text)?.resolve()
}

pub fn load_config(path: &Path) -> Result<ResolvedSpec, CliError> {
    read_spec(path)?.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let rs = parse_config("[model]\npreset = \"ref3\"\n").unwrap();
        assert_eq!(rs.spec.k.c, Some(1.0));
        assert_eq!(rs.spec.marstrand.bin_width, Some(rs.spec.rho));
        assert_eq!(rs.provenance["k.c"], "measured");
        assert_eq!(rs.provenance["k.k"], "configured");
        assert_eq!(rs.spec.stages, Stage::ALL.to_vec());
        let rs = parse_config("[k]\nc = 0.9\n").unwrap();
        assert_eq!(rs.provenance["k.c"], "configured");
    }

    #[test]
    fn unknown_field_is_named() {
        let e = parse_config("[mc]\ntrails = 10\n").unwrap_err().to_string();
        assert!(e.contains("trails"), "{e}");
        let e = parse_config("[model]\npreset = \"ref9\"\n").unwrap_err().to_string();
        assert!(e.contains("model.preset"), "{e}");
        let e = parse_config("rho = 2.0\n").unwrap_err().to_string();
        assert!(e.contains("rho"), "{e}");
    }

    #[test]
    fn resolved_spec_round_trips() {
        let rs = parse_config("seed = 5\nstages = [\"dim\", \"mc\"]\n[model]\npreset = \"ref3b\"\n[mc]\nextra_rhos = [0.0078125]\n").unwrap();
        let text = rs.spec.to_toml().unwrap();
        let again = parse_config(&text).unwrap();
        assert_eq!(again.spec, rs.spec);
        assert_eq!(again.spec.to_toml().unwrap(), text);
    }

    #[test]
    fn stage_names() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("montecarlo".parse::<Stage>().is_err());
    }

    #[test]
    fn overrides_before_resolving() {
        let mut spec = parse_spec("[model]\npreset = \"ref3b\"\n").unwrap();
        spec.rho = 2f64.powi(-7);
        let rs = spec.resolve().unwrap();
        assert_eq!(rs.spec.marstrand.bin_width, Some(2f64.powi(-7)));
        assert_eq!(rs.provenance["k.c1"], "measured");
    }
}
