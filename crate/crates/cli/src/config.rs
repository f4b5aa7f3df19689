use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use fractal_forms::quasilinear::SolverOptions;
use fractal_forms::spde::{QProfile, SimulationOptions};
use fractal_forms::{FractalSpec, LevelGraph, Tolerances};

use crate::error::{CliError, CliResult};

/// Environment variable that relative output directories are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "FRACFORMS_OUTPUT_ROOT";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in fractal id: `sg` or `interval`.
    pub fractal: String,
    pub level: usize,
    pub measure: MeasureChoice,
    pub pde: PdeConfig,
    pub spde: SpdeConfig,
    pub diagnostics: DiagnosticsConfig,
    pub tolerances: Tolerances,
    pub seed: u64,
    pub output_dir: String,
    /// Runs whose level graph would exceed this many vertices are refused.
    pub max_vertices: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fractal: "sg".into(),
            level: 4,
            measure: MeasureChoice::default(),
            pde: PdeConfig::default(),
            spde: SpdeConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            tolerances: Tolerances::default(),
            seed: 0,
            output_dir: "out".into(),
            max_vertices: 200_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureChoice {
    Kusuoka {},
    /// Self-similar weights, one per map; empty means uniform.
    SelfSimilar {
        #[serde(default)]
        weights: Vec<f64>,
    },
    /// Harmonic coordinates followed by the harmonic extensions of the given
    /// boundary values.
    General {
        #[serde(default)]
        pool: Vec<Vec<f64>>,
    },
}

impl Default for MeasureChoice {
    fn default() -> Self {
        MeasureChoice::Kusuoka {}
    }
}

impl MeasureChoice {
    pub fn id(&self) -> &'static str {
        match self {
            MeasureChoice::Kusuoka {} => "kusuoka",
            MeasureChoice::SelfSimilar { .. } => "self_similar",
            MeasureChoice::General { .. } => "general",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadSpec {
    /// `sin(frequency · x) + offset` in the first plot coordinate.
    Sine { frequency: f64, offset: f64 },
    Eigenfunction { index: usize },
    Constant { value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintChoice {
    Dirichlet,
    ZeroMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeConfig {
    pub p: f64,
    /// Adds `κ v` to the coefficient when positive.
    pub kappa: f64,
    pub load: LoadSpec,
    pub constraint: ConstraintChoice,
    /// Subtract the measure mean of the load before a zero-mean solve.
    pub center_load: bool,
    pub solver: SolverOptions,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            p: 3.0,
            kappa: 0.0,
            load: LoadSpec::Sine {
                frequency: 6.0,
                offset: 0.5,
            },
            constraint: ConstraintChoice::Dirichlet,
            center_load: true,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Zero,
    Eigenfunction { index: usize, amplitude: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpdeConfig {
    pub p: f64,
    pub kappa: f64,
    /// Number of retained noise modes.
    pub truncation: usize,
    pub covariance: QProfile,
    pub initial: InitialState,
    pub simulation: SimulationOptions,
    pub paths: usize,
    pub uniqueness_trials: usize,
}

impl Default for SpdeConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            kappa: 0.0,
            truncation: 20,
            covariance: QProfile::default(),
            initial: InitialState::Eigenfunction {
                index: 1,
                amplitude: 1.0,
            },
            simulation: SimulationOptions::default(),
            paths: 1,
            uniqueness_trials: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Exponent of the p-energy table.
    pub p: f64,
    /// First level of the p-energy and eigenvalue tables.
    pub min_level: usize,
    pub spectrum_k: usize,
    pub probes: usize,
    /// Coefficients of `F(a, b) = c0 a + c1 b + c2 a² + c3 ab + c4 b²`
    /// applied to the harmonic coordinates in the p-energy table.
    pub polynomial: [f64; 5],
    /// Random samples per identity in `verify`.
    pub trials: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            p: 4.0,
            min_level: 2,
            spectrum_k: 10,
            probes: 200,
            polynomial: [1.0, 0.0, 0.0, 0.0, 0.5],
            trials: 20,
        }
    }
}

impl RunConfig {
    /// Reads an optional JSON file, applies `key.path=value` overrides, and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> CliResult<Self> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for (key, value) in overrides {
            set_path(&mut root, key, value.clone())?;
        }
        Self::from_value(root)
    }

    pub fn from_value(root: Value) -> CliResult<Self> {
        let cfg: RunConfig = serde_path_to_error::deserialize(root).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.resolved()
    }

    /// Expands implicit defaults and checks value ranges.
    pub fn resolved(mut self) -> CliResult<Self> {
        let spec = self.spec()?;
        match &mut self.measure {
            MeasureChoice::SelfSimilar { weights } => {
                if weights.is_empty() {
                    *weights = vec![1.0 / spec.n_maps as f64; spec.n_maps];
                }
                if weights.len() != spec.n_maps {
                    return Err(CliError::Config(format!(
                        "at `measure.weights`: expected {} weights, got {}",
                        spec.n_maps,
                        weights.len()
                    )));
                }
            }
            MeasureChoice::General { pool } => {
                if let Some(i) = pool.iter().position(|b| b.len() != spec.n_corners) {
                    return Err(CliError::Config(format!(
                        "at `measure.pool[{i}]`: expected {} boundary values",
                        spec.n_corners
                    )));
                }
            }
            MeasureChoice::Kusuoka {} => {}
        }
        for (key, p) in [
            ("pde.p", self.pde.p),
            ("spde.p", self.spde.p),
            ("diagnostics.p", self.diagnostics.p),
        ] {
            if !(p >= 2.0) || !p.is_finite() {
                return Err(CliError::Config(format!("at `{key}`: p must be finite and >= 2, got {p}")));
            }
        }
        for (key, k) in [("pde.kappa", self.pde.kappa), ("spde.kappa", self.spde.kappa)] {
            if !(k >= 0.0) {
                return Err(CliError::Config(format!("at `{key}`: must be nonnegative")));
            }
        }
        if self.diagnostics.min_level > self.level {
            return Err(CliError::Config(format!(
                "at `diagnostics.min_level`: {} exceeds level {}",
                self.diagnostics.min_level, self.level
            )));
        }
        if self.spde.simulation.stride == 0 {
            return Err(CliError::Config("at `spde.simulation.stride`: must be positive".into()));
        }
        if self.spde.paths == 0 {
            return Err(CliError::Config("at `spde.paths`: must be positive".into()));
        }
        self.check_budget(self.level)?;
        Ok(self)
    }

    pub fn spec(&self) -> CliResult<FractalSpec> {
        FractalSpec::builtin(&self.fractal)
            .map_err(|_| CliError::Config(format!("at `fractal`: unknown fractal `{}`", self.fractal)))
    }

    /// Refuses levels whose vertex count exceeds `max_vertices`.
    pub fn check_budget(&self, level: usize) -> CliResult<()> {
        let spec = self.spec()?;
        let needed = LevelGraph::expected_vertex_count(&spec, level).unwrap_or(usize::MAX);
        if needed > self.max_vertices {
            return Err(CliError::Config(format!(
                "resource limit: level {level} needs {needed} vertices, max_vertices is {}",
                self.max_vertices
            )));
        }
        Ok(())
    }

    /// The resolved config as written next to outputs.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of [`RunConfig::to_json`], hex encoded.
    pub fn hash(&self) -> String {
        hash_bytes(self.to_json().as_bytes())
    }

    pub fn output_path(&self) -> PathBuf {
        output_path(&self.output_dir, std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
    }

    /// Creates the output directory and writes the resolved config into it.
    pub fn prepare_output(&self) -> CliResult<PathBuf> {
        let dir = self.output_path();
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(RESOLVED_CONFIG_FILE), self.to_json())?;
        Ok(dir)
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn output_path(dir: &str, root: Option<PathBuf>) -> PathBuf {
    let dir = PathBuf::from(dir);
    match root {
        Some(r) if dir.is_relative() => r.join(dir),
        _ => dir,
    }
}

/// Parses `a.b.c=value`; the value is read as JSON, falling back to a string.
pub fn parse_override(s: &str) -> CliResult<(String, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{s}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("at `{key}`: `{part}` is not inside an object")))?;
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("at `{key}`: parent is not an object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default().resolved().unwrap();
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn unknown_key_reports_path() {
        let v: Value = serde_json::json!({"pde": {"p": 3.0, "pp": 1}});
        let err = RunConfig::from_value(v).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("pde"), "{err}");
    }

    #[test]
    fn overrides_apply_nested() {
        let o = vec![
            parse_override("level=3").unwrap(),
            parse_override("pde.p=4").unwrap(),
            parse_override("measure.kind=self_similar").unwrap(),
        ];
        let cfg = RunConfig::load(None, &o).unwrap();
        assert_eq!(cfg.level, 3);
        assert_eq!(cfg.pde.p, 4.0);
        assert_eq!(
            cfg.measure,
            MeasureChoice::SelfSimilar {
                weights: vec![1.0 / 3.0; 3]
            }
        );
    }

    #[test]
    fn budget_refusal_is_config_error() {
        let o = vec![parse_override("level=12").unwrap()];
        let err = RunConfig::load(None, &o).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("resource limit"));
    }

    #[test]
    fn relative_output_uses_root() {
        let p = output_path("runs/a", Some(PathBuf::from("/tmp/x")));
        assert_eq!(p, PathBuf::from("/tmp/x/runs/a"));
        assert_eq!(output_path("/abs", Some(PathBuf::from("/tmp/x"))), PathBuf::from("/abs"));
    }
}
