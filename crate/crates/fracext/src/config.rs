//! Run configuration (JSON), scenario construction and deterministic report
//! emission.
//!
//! Configs parse strictly (unknown keys are rejected) and round-trip through
//! serialization. Reports are written by a fixed-order emitter with floats
//! at 17 significant digits, so identical configs and seeds produce
//! byte-identical files.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::HalfSpaceGrid;
use crate::solver::{
    boundary_reaction, bulk_reaction, layer_setup, BoundaryReactionProblem, ClampSpec, LayerSetup,
};
use crate::weights::Weight;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    #[serde(rename = "L_y")]
    pub l_y: f64,
    #[serde(rename = "N_y")]
    pub n_y: usize,
    #[serde(rename = "L_x")]
    pub l_x: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selector {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct U0Spec {
    pub name: String,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default)]
    pub perturb_amp: f64,
    #[serde(default = "default_perturb_width")]
    pub perturb_width: f64,
}

fn default_width() -> f64 {
    2.0
}
fn default_perturb_width() -> f64 {
    3.0
}

impl Default for U0Spec {
    fn default() -> Self {
        Self {
            name: "tanh_layer".into(),
            width: default_width(),
            perturb_amp: 0.0,
            perturb_width: default_perturb_width(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_lid_updates")]
    pub lid_updates: usize,
}

fn default_tol() -> f64 {
    1e-9
}
fn default_max_iter() -> usize {
    60
}
fn default_lid_updates() -> usize {
    2
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            lid_updates: default_lid_updates(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClampCfg {
    pub dims: Vec<usize>,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    /// phi selectors: "capacity:R" or "bump:R"
    #[serde(default = "default_phi")]
    pub phi: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eps_grad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub destabilize: Option<f64>,
    #[serde(default)]
    pub expect_stable: bool,
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<u32>,
    #[serde(default)]
    pub monotone_dim: usize,
}

fn default_phi() -> Vec<String> {
    vec!["capacity:4".into(), "capacity:8".into(), "bump:8".into()]
}
fn default_radii() -> Vec<f64> {
    vec![2.0, 4.0, 8.0, 16.0]
}
fn default_modes() -> Vec<u32> {
    vec![1, 2, 3]
}

impl Default for AuditSpec {
    fn default() -> Self {
        Self {
            phi: default_phi(),
            eps_grad: None,
            destabilize: None,
            expect_stable: false,
            radii: default_radii(),
            modes: default_modes(),
            monotone_dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub weight: WeightSpec,
    #[serde(default = "default_f")]
    pub f: Selector,
    #[serde(default = "default_g")]
    pub g: Selector,
    #[serde(default)]
    pub u0: U0Spec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clamp: Option<ClampCfg>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub window: Option<f64>,
    #[serde(default)]
    pub audit: AuditSpec,
    #[serde(default)]
    pub seed: u64,
}

fn default_f() -> Selector {
    Selector {
        name: "scaled_sine".into(),
    }
}
fn default_g() -> Selector {
    Selector {
        name: "zero".into(),
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn build_grid(&self) -> Result<Arc<HalfSpaceGrid>> {
        Ok(Arc::new(HalfSpaceGrid::new(
            self.grid.n,
            self.grid.l_y,
            self.grid.n_y,
            self.grid.l_x,
            self.grid.m,
            self.grid.gamma,
        )?))
    }

    pub fn build_weight(&self, base_dir: &Path) -> Result<Weight> {
        match self.weight.kind.as_str() {
            "power" => {
                let alpha = self
                    .weight
                    .alpha
                    .ok_or_else(|| Error::Config("power weight needs 'alpha'".into()))?;
                Weight::power_law(alpha)
            }
            "table" => {
                let rel = self
                    .weight
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("table weight needs 'path'".into()))?;
                let path = base_dir.join(rel);
                let text = std::fs::read_to_string(&path)?;
                let mut xs = Vec::new();
                let mut mus = Vec::new();
                for (k, line) in text.lines().enumerate() {
                    if k == 0 || line.trim().is_empty() {
                        continue; // header x,mu
                    }
                    let mut parts = line.split(',');
                    let x: f64 = parts
                        .next()
                        .and_then(|s| s.trim().parse().ok())
                        .ok_or_else(|| Error::Config(format!("bad weight row {}", k + 1)))?;
                    let mu: f64 = parts
                        .next()
                        .and_then(|s| s.trim().parse().ok())
                        .ok_or_else(|| Error::Config(format!("bad weight row {}", k + 1)))?;
                    xs.push(x);
                    mus.push(mu);
                }
                // samples define panel midpoint values on [x_k, x_{k+1}]
                if xs.len() < 2 {
                    return Err(Error::Config("weight table needs at least 2 rows".into()));
                }
                let values = mus[..mus.len() - 1].to_vec();
                Weight::tabulated(xs, values)
            }
            other => Err(Error::Config(format!("unknown weight kind '{other}'"))),
        }
    }

    pub fn clamp_spec(&self) -> Option<ClampSpec> {
        self.clamp.as_ref().map(|c| ClampSpec {
            dims: c.dims.clone(),
            half_width: c.half_width,
        })
    }

    /// Builds the solve scenario described by the config (problem + u0).
    pub fn build_scenario(&self, base_dir: &Path) -> Result<LayerSetup> {
        let grid = self.build_grid()?;
        let weight = self.build_weight(base_dir)?;
        let f = boundary_reaction(&self.f.name)?;
        let g = bulk_reaction(&self.g.name)?;
        match self.u0.name.as_str() {
            "tanh_layer" => {
                let profile: Vec<f64> = (0..grid.n_y())
                    .map(|i| (grid.y_coord(i) / self.u0.width).tanh())
                    .collect();
                let perturb = if self.u0.perturb_amp != 0.0 {
                    Some((self.u0.perturb_amp, self.u0.perturb_width))
                } else {
                    None
                };
                layer_setup(weight, f, g, grid, &profile, self.clamp_spec(), perturb)
            }
            "zero" => {
                let u0 = crate::grid::GridFunction::constant(grid.clone(), 0.0)?;
                let problem = BoundaryReactionProblem {
                    weight,
                    f,
                    g,
                    grid: grid.clone(),
                    top_bc: vec![0.0; grid.nodes_per_level()],
                    clamp: self.clamp_spec(),
                };
                Ok(LayerSetup { problem, u0 })
            }
            other => Err(Error::Config(format!("unknown u0 selector '{other}'"))),
        }
    }
}

/// Minimal deterministic JSON value for reports.
#[derive(Debug, Clone)]
pub enum Json {
    Null,
    B(bool),
    I(i64),
    F(f64),
    S(String),
    A(Vec<Json>),
    O(Vec<(&'static str, Json)>),
}

impl Json {
    fn emit(&self, out: &mut String) {
        match self {
            Json::Null => out.push_str("null"),
            Json::B(b) => out.push_str(if *b { "true" } else { "false" }),
            Json::I(i) => out.push_str(&i.to_string()),
            Json::F(x) => {
                if x.is_finite() {
                    out.push_str(&format!("{x:.16e}"));
                } else {
                    out.push_str("null");
                }
            }
            Json::S(s) => {
                out.push('"');
                for c in s.chars() {
                    match c {
                        '"' => out.push_str("\\\""),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
                        c => out.push(c),
                    }
                }
                out.push('"');
            }
            Json::A(items) => {
                out.push('[');
                for (k, it) in items.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    it.emit(out);
                }
                out.push(']');
            }
            Json::O(fields) => {
                out.push('{');
                for (k, (name, val)) in fields.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    out.push('"');
                    out.push_str(name);
                    out.push_str("\":");
                    val.emit(out);
                }
                out.push('}');
            }
        }
    }

    pub fn to_string_deterministic(&self) -> String {
        let mut s = String::new();
        self.emit(&mut s);
        s.push('\n');
        s
    }
}

/// Writes a report atomically-ish (full content in one call).
pub fn write_report(path: &Path, json: &Json) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(json.to_string_deterministic().as_bytes())?;
    Ok(())
}

/// Parses a phi selector of the form "capacity:R" or "bump:R".
pub fn parse_phi_selector(s: &str) -> Result<crate::geometry::PhiFamily> {
    let (kind, r) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("bad phi selector '{s}' (want kind:R)")))?;
    let r: f64 = r
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad phi radius in '{s}'")))?;
    match kind {
        "capacity" => Ok(crate::geometry::PhiFamily::Capacity { r }),
        "bump" => Ok(crate::geometry::PhiFamily::Bump { r }),
        other => Err(Error::Config(format!("unknown phi kind '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_config() -> RunConfig {
        RunConfig::from_json_str(
            r#"{
                "grid": {"n": 1, "L_y": 40.0, "N_y": 64, "L_x": 20.0, "M": 32, "gamma": 2.0},
                "weight": {"kind": "power", "alpha": 0.0},
                "f": {"name": "scaled_sine"},
                "g": {"name": "zero"},
                "u0": {"name": "tanh_layer", "width": 2.0},
                "clamp": {"dims": [0], "half_width": 19.0},
                "seed": 7
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn config_round_trips() {
        let cfg = sample_config();
        let text = cfg.to_json();
        let back = RunConfig::from_json_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = r#"{
            "grid": {"n": 1, "L_y": 40.0, "N_y": 64, "L_x": 20.0, "M": 32, "gamma": 2.0},
            "weight": {"kind": "power", "alpha": 0.0},
            "surprise": 1
        }"#;
        assert!(matches!(
            RunConfig::from_json_str(bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn malformed_json_is_config_error() {
        assert!(matches!(
            RunConfig::from_json_str("{"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn scenario_builds() {
        let cfg = sample_config();
        let setup = cfg.build_scenario(Path::new(".")).unwrap();
        assert_eq!(setup.u0.grid().n_y(), 64);
        assert!(setup.problem.clamp.is_some());
    }

    #[test]
    fn reports_are_fixed_format() {
        let j = Json::O(vec![
            ("alpha", Json::F(0.5)),
            ("converged", Json::B(true)),
            ("modes", Json::A(vec![Json::I(1), Json::I(2)])),
            ("note", Json::S("ok".into())),
            ("missing", Json::Null),
        ]);
        let s = j.to_string_deterministic();
        assert_eq!(
            s,
            "{\"alpha\":5.0000000000000000e-1,\"converged\":true,\"modes\":[1,2],\"note\":\"ok\",\"missing\":null}\n"
        );
    }

    #[test]
    fn phi_selectors_parse() {
        assert!(matches!(
            parse_phi_selector("capacity:8").unwrap(),
            crate::geometry::PhiFamily::Capacity { r } if r == 8.0
        ));
        assert!(matches!(
            parse_phi_selector("bump:4.5").unwrap(),
            crate::geometry::PhiFamily::Bump { r } if r == 4.5
        ));
        assert!(parse_phi_selector("cone:3").is_err());
        assert!(parse_phi_selector("capacity").is_err());
    }
}
