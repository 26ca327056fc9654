//! Scenario configuration: TOML with includes and strict key checking.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::drift::{DriftScale, DriftSpec};
use crate::error::{Error, Result};
use crate::levy::KernelSpec;
use crate::molecule::{ExponentChoice, MoleculeProfile, TraceOptions};
use crate::solver::SolverConfig;
use crate::spaces::MorreyParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub points: usize,
    pub side_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub spec: DriftSpec,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_scale")]
    pub scale: DriftScale,
    pub morrey: MorreyParams,
    /// Width of the space-time mollifier, none when absent.
    #[serde(default)]
    pub mollifier: Option<f64>,
    /// Drift horizon; the evolution horizon when absent.
    #[serde(default)]
    pub horizon: Option<f64>,
}

fn default_nodes() -> usize {
    5
}

fn default_scale() -> DriftScale {
    DriftScale::Raw
}

/// Initial datum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Theta0Spec {
    /// Random band-limited field, optionally mapped affinely onto `[lo, hi]`.
    BandLimited {
        max_mode: i64,
        decay: f64,
        #[serde(default)]
        range: Option<[f64; 2]>,
    },
    Constant { value: f64 },
    /// `inside` on the ball `|x − center| < radius`, `outside` elsewhere.
    Indicator {
        center: Vec<f64>,
        radius: f64,
        #[serde(default = "one")]
        inside: f64,
        #[serde(default)]
        outside: f64,
    },
    /// First field of a binary field file, relative to the config file.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub horizon: f64,
    #[serde(default)]
    pub epsilon_visc: f64,
}

/// Certificates requested from the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub checks: Vec<Check>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_p_list")]
    pub p_list: Vec<f64>,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_p_list() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, f64::INFINITY]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    SymbolBounds,
    Nondegeneracy,
    MaxPrinciple,
    Positivity,
    StroockVaropoulos,
    Besov,
    Transfer,
    PicardContraction,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::SymbolBounds => "symbol-bounds",
            Check::Nondegeneracy => "nondegeneracy",
            Check::MaxPrinciple => "max-principle",
            Check::Positivity => "positivity",
            Check::StroockVaropoulos => "stroock-varopoulos",
            Check::Besov => "besov",
            Check::Transfer => "transfer",
            Check::PicardContraction => "picard-contraction",
        }
    }

    /// Whether the check needs an evolved trajectory.
    pub fn needs_trajectory(self) -> bool {
        !matches!(self, Check::SymbolBounds | Check::Nondegeneracy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    pub q: f64,
    pub mu: f64,
    /// Lower kernel bound used in the `K` condition; the kernel's `cbar1` when absent.
    #[serde(default)]
    pub cbar1: Option<f64>,
    #[serde(default = "one")]
    pub eta_prefactor: f64,
    /// Evaluate at a fixed choice and `ζ` instead of searching.
    #[serde(default)]
    pub choice: Option<ExponentChoice>,
    #[serde(default)]
    pub zeta: Option<f64>,
    /// Use the largest admissible `K` instead of the `η` formula.
    #[serde(default)]
    pub k_at_bound: bool,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoleculeLabConfig {
    pub radii: Vec<f64>,
    pub x0: Vec<f64>,
    pub gamma: f64,
    pub omega_exp: f64,
    #[serde(default)]
    pub profile: MoleculeProfile,
    #[serde(default = "default_eps_step")]
    pub eps_step: f64,
    pub t0: f64,
    pub constants: ConstantsConfig,
    pub trace: TraceOptions,
}

fn default_eps_step() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderConfig {
    pub t0: f64,
    pub gamma: f64,
    pub omega_exp: f64,
    pub zeta: f64,
    #[serde(default)]
    pub profile: MoleculeProfile,
    #[serde(default = "default_stride")]
    pub center_stride: usize,
    #[serde(default = "default_r2")]
    pub min_r2: f64,
    #[serde(default = "default_stability")]
    pub stability: f64,
    #[serde(default = "default_agreement")]
    pub agreement: f64,
}

fn default_stride() -> usize {
    4
}

fn default_r2() -> f64 {
    0.9
}

fn default_stability() -> f64 {
    0.1
}

fn default_agreement() -> f64 {
    0.15
}

/// A complete scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub grid: GridConfig,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub drift: Option<DriftConfig>,
    #[serde(default)]
    pub theta0: Option<Theta0Spec>,
    #[serde(default)]
    pub evolution: Option<EvolutionConfig>,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
    #[serde(default)]
    pub molecule: Option<MoleculeLabConfig>,
    #[serde(default)]
    pub holder: Option<HolderConfig>,
}

fn default_name() -> String {
    "scenario".into()
}

/// A parsed scenario with the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
    /// The merged tree, used for sweeps and digests.
    pub tree: toml::Table,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Output directory, defaulting to `out/<name>` next to the config.
    pub fn output_dir(&self) -> PathBuf {
        match &self.config.output_dir {
            Some(p) => self.resolve(p),
            None => self.base_dir.join("out").join(&self.config.name),
        }
    }

    /// SHA-256 of the canonical JSON form of the merged tree.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(&self.tree).unwrap_or_default();
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn config_err(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Overlay `top` onto `base`, merging tables key by key.
pub fn deep_merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => deep_merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn load_tree(path: &Path, stack: &mut BTreeSet<PathBuf>) -> Result<toml::Table> {
    let canonical = path
        .canonicalize()
        .map_err(|e| config_err(path.display().to_string(), format!("cannot open: {e}")))?;
    if !stack.insert(canonical.clone()) {
        return Err(config_err("include", format!("include cycle through {}", path.display())));
    }
    let text = std::fs::read_to_string(&canonical)?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| config_err(path.display().to_string(), e.to_string()))?;
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(toml::Value::String(s)) => vec![s],
        Some(toml::Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s),
                _ => Err(config_err("include", "entries must be strings")),
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(config_err("include", "must be a string or an array of strings")),
    };
    let dir = canonical.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut merged = toml::Table::new();
    for inc in includes {
        let sub = load_tree(&dir.join(inc), stack)?;
        deep_merge(&mut merged, sub);
    }
    deep_merge(&mut merged, table);
    stack.remove(&canonical);
    Ok(merged)
}

/// Deserialize a merged tree, reporting the key path of the first offending entry.
pub fn parse_tree(tree: &toml::Table) -> Result<ScenarioConfig> {
    let value = toml::Value::Table(tree.clone());
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        config_err(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
    })
}

/// Load a scenario file with its includes.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let tree = load_tree(path, &mut BTreeSet::new())?;
    let config = parse_tree(&tree)?;
    let base_dir = path
        .canonicalize()?
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    Ok(LoadedConfig {
        config,
        base_dir,
        tree,
    })
}

/// Replace the scalar at a dotted path, keeping integers integral where possible.
pub fn set_scalar(tree: &mut toml::Table, path: &str, value: f64) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| config_err(path, "empty axis"))?;
    let mut cur = tree;
    for p in parts {
        cur = match cur.get_mut(p) {
            Some(toml::Value::Table(t)) => t,
            _ => return Err(config_err(path, format!("`{p}` is not a table"))),
        };
    }
    match cur.get(last) {
        Some(toml::Value::Float(_)) => {
            cur.insert(last.to_string(), toml::Value::Float(value));
        }
        Some(toml::Value::Integer(_)) => {
            if value.fract() != 0.0 || !value.is_finite() {
                return Err(config_err(path, "axis holds an integer"));
            }
            cur.insert(last.to_string(), toml::Value::Integer(value as i64));
        }
        Some(_) => return Err(config_err(path, "axis must address a scalar number")),
        None => return Err(config_err(path, "no such key")),
    }
    Ok(())
}

impl ScenarioConfig {
    /// Cross-field checks that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = &self.verify {
            if v.checks.is_empty() {
                return Err(config_err("verify.checks", "must not be empty"));
            }
            let needs = v.checks.iter().any(|c| c.needs_trajectory());
            if needs && (self.theta0.is_none() || self.evolution.is_none() || self.solver.is_none()) {
                return Err(config_err(
                    "verify.checks",
                    "trajectory checks need [theta0], [evolution] and [solver]",
                ));
            }
        }
        if let (Some(d), Some(e)) = (&self.drift, &self.evolution) {
            if let Some(h) = d.horizon {
                if h < e.horizon {
                    return Err(config_err("drift.horizon", "must be at least the evolution horizon"));
                }
                let transfer = self.verify.as_ref().is_some_and(|v| v.checks.contains(&Check::Transfer));
                if transfer && (h - e.horizon).abs() > 1e-12 * h {
                    return Err(config_err("drift.horizon", "the transfer check needs it equal to the evolution horizon"));
                }
            }
        }
        if self.holder.is_some() &&(self.theta0.is_none() || self.evolution.is_none() || self.solver.is_none()) {
            return Err(config_err("holder", "needs [theta0], [evolution] and [solver]"));
        }
        if let Some(m) = &self.molecule {
            if m.radii.is_empty() {
                return Err(config_err("molecule.radii", "must not be empty"));
            }
            if m.x0.len() != self.grid.n {
                return Err(config_err("molecule.x0", "needs one coordinate per dimension"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    const BASE: &str = r#"
name = "base"
[grid]
n = 2
points = 32
side_length = 6.0
[kernel]
alpha = 0.8
delta = 0.6
cbar1 = 1.0
cbar2 = 1.0
profile = "stable"
"#;

    #[test]
    fn include_merges_and_overrides() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "base.toml", BASE);
        let top = write(d.path(), "top.toml", "include = [\"base.toml\"]\nname = \"top\"\n[grid]\npoints = 64\n");
        let c = load_config(&top).unwrap();
        assert_eq!(c.config.name, "top");
        assert_eq!(c.config.grid.points, 64);
        assert_eq!(c.config.grid.side_length, 6.0);
    }

    #[test]
    fn unknown_key_reports_path() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "bad.toml", &format!("{BASE}\n[kernel.extra]\nx = 1\n"));
        match load_config(&p) {
            Err(Error::Config { path, .. }) => assert!(path.starts_with("kernel"), "{path}"),
            other => panic!("{other:?}"),
        }
        let p = write(d.path(), "bad2.toml", &BASE.replace("points = 32", "points = 32\npionts = 3"));
        match load_config(&p) {
            Err(Error::Config { path, reason }) => assert!(path.starts_with("grid") && reason.contains("pionts"), "{path} {reason}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn include_cycle_is_rejected() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "a.toml", "include = \"b.toml\"\n");
        let b = write(d.path(), "b.toml", "include = \"a.toml\"\n");
        assert!(matches!(load_config(&b), Err(Error::Config { .. })));
    }

    #[test]
    fn set_scalar_addresses_numbers_only() {
        let mut t: toml::Table = BASE.parse().unwrap();
        set_scalar(&mut t, "kernel.alpha", 0.7).unwrap();
        assert_eq!(t["kernel"]["alpha"].as_float(), Some(0.7));
        set_scalar(&mut t, "grid.points", 16.0).unwrap();
        assert_eq!(t["grid"]["points"].as_integer(), Some(16));
        assert!(set_scalar(&mut t, "grid.points", 16.5).is_err());
        assert!(set_scalar(&mut t, "kernel.profile", 1.0).is_err());
        assert!(set_scalar(&mut t, "kernel.nope", 1.0).is_err());
    }
}
