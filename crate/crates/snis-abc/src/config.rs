//! Experiment configuration: a TOML tree with one section per subsystem,
//! plus `section.key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use snis_abc_core::{
    BootstrapSpec, BrSnisSpec, GaussianMixtureSpec, KernelSpec, Method, Points, QueryScheme,
};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pool: PoolConfig,
    pub queries: QueryConfig,
    pub kernel: KernelConfig,
    pub harness: HarnessConfig,
    pub bootstrap: BootstrapConfig,
    pub brsnis: BrSnisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub centers: Vec<Vec<f64>>,
    pub sigma: f64,
    /// Empty means uniform over the centers.
    pub mode_probs: Vec<f64>,
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuerySchemeName {
    FromP,
    IsotropicGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryConfig {
    pub scheme: QuerySchemeName,
    /// Per-coordinate standard deviation for `isotropic-gaussian`.
    pub scale: f64,
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub replacement: bool,
    pub master_seed: u64,
    /// Per-estimate wall-clock timing. Timed reports are not reproducible
    /// byte for byte.
    pub record_timing: bool,
    /// Leading trials at each point excluded from timing.
    pub warmup_skip: usize,
    /// Smallest n included in the log-log slope fits.
    pub fit_min_n: usize,
    /// Redraws allowed per trial when an estimator rejects its batch.
    pub retry_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrSnisConfig {
    pub iterations: usize,
    pub burn_in: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            centers: vec![
                vec![0.5, 0.5],
                vec![-0.5, 0.5],
                vec![-0.5, -0.5],
                vec![0.5, -0.5],
            ],
            sigma: 0.1,
            mode_probs: Vec::new(),
            size: 200_000,
            seed: 1,
        }
    }
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig {
            scheme: QuerySchemeName::FromP,
            scale: 0.5,
            count: 100,
            seed: 2,
        }
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { tau: 0.1 }
    }
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            n_grid: vec![16, 32, 64, 128, 256, 512],
            trials: 50_000,
            methods: vec![Method::Standard, Method::Abc],
            replacement: true,
            master_seed: 3,
            record_timing: false,
            warmup_skip: 10,
            fit_min_n: 16,
            retry_cap: 100,
        }
    }
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { replicates: 100 }
    }
}

impl Default for BrSnisConfig {
    fn default() -> Self {
        BrSnisConfig {
            iterations: 10,
            burn_in: 1,
        }
    }
}

/// Core specs built from a validated configuration.
#[derive(Debug, Clone)]
pub struct ResolvedSpecs {
    pub mixture: GaussianMixtureSpec,
    pub scheme: QueryScheme,
    pub kernel: KernelSpec,
    pub bootstrap: BootstrapSpec,
    pub brsnis: BrSnisSpec,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Applies `section.key=value` overrides. Values parse as TOML
    /// (`[4, 8]`, `true`, `0.2`, `"abc"`); bare words fall back to strings.
    /// Every path must name an existing key.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut tree =
            toml::Table::try_from(self).map_err(|e| HarnessError::Config(e.to_string()))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (path, value) = raw.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("override `{raw}` is not key=value"))
            })?;
            let value = parse_override_value(value.trim());
            set_path(&mut tree, path.trim(), value)?;
        }
        toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<ResolvedSpecs> {
        let cfg_err = |msg: String| HarnessError::Config(msg);
        let core_err = |e: snis_abc_core::Error| HarnessError::Config(e.to_string());
        let dim = self.pool.centers.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || self.pool.centers.iter().any(|c| c.len() != dim) {
            return Err(cfg_err(
                "pool.centers must be nonempty rows of equal length".into(),
            ));
        }
        let centers = Points::from_rows(&self.pool.centers).map_err(core_err)?;
        let probs = (!self.pool.mode_probs.is_empty()).then(|| self.pool.mode_probs.clone());
        let mixture =
            GaussianMixtureSpec::new(centers, self.pool.sigma, probs).map_err(core_err)?;
        if self.pool.size == 0 {
            return Err(cfg_err("pool.size must be positive".into()));
        }
        if self.queries.count == 0 {
            return Err(cfg_err("queries.count must be positive".into()));
        }
        let scheme = match self.queries.scheme {
            QuerySchemeName::FromP => QueryScheme::FromP,
            QuerySchemeName::IsotropicGaussian => {
                if !(self.queries.scale.is_finite() && self.queries.scale >= 0.0) {
                    return Err(cfg_err("queries.scale must be nonnegative".into()));
                }
                QueryScheme::IsotropicGaussian {
                    scale: self.queries.scale,
                }
            }
        };
        let kernel = KernelSpec::exponential(self.kernel.tau).map_err(core_err)?;
        let h = &self.harness;
        if h.n_grid.is_empty() {
            return Err(cfg_err("harness.n_grid must not be empty".into()));
        }
        if h.n_grid.contains(&0) || h.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(cfg_err(
                "harness.n_grid must be positive, ascending and distinct".into(),
            ));
        }
        if h.trials == 0 {
            return Err(cfg_err("harness.trials must be positive".into()));
        }
        if h.methods.is_empty() {
            return Err(cfg_err("harness.methods must not be empty".into()));
        }
        let mut seen = h.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != h.methods.len() {
            return Err(cfg_err("harness.methods has duplicates".into()));
        }
        if !h.replacement {
            if let Some(&max_n) = h.n_grid.last() {
                if max_n > self.pool.size {
                    return Err(cfg_err(format!(
                        "n = {max_n} exceeds pool.size without replacement"
                    )));
                }
            }
        }
        let bootstrap = BootstrapSpec::new(self.bootstrap.replicates).map_err(core_err)?;
        let brsnis =
            BrSnisSpec::new(self.brsnis.iterations, self.brsnis.burn_in).map_err(core_err)?;
        Ok(ResolvedSpecs {
            mixture,
            scheme,
            kernel,
            bootstrap,
            brsnis,
        })
    }
}

fn parse_override_value(text: &str) -> toml::Value {
    let wrapped = format!("v = {text}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(text.to_owned())),
        Err(_) => toml::Value::String(text.to_owned()),
    }
}

fn set_path(tree: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts = path.split('.').peekable();
    let mut node = tree;
    while let Some(key) = parts.next() {
        let slot = node
            .get_mut(key)
            .ok_or_else(|| HarnessError::Config(format!("unknown config key `{path}`")))?;
        if parts.peek().is_none() {
            *slot = value;
            return Ok(());
        }
        node = slot
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("`{key}` in `{path}` is not a section")))?;
    }
    Err(HarnessError::Config(format!(
        "empty override path `{path}`"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "[kernel]\ntau = 0.2\n[harness]\nmethods = [\"standard\", \"jackknife\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.kernel.tau, 0.2);
        assert_eq!(
            cfg.harness.methods,
            vec![Method::Standard, Method::Jackknife]
        );
        assert_eq!(cfg.pool, PoolConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml_str("[kernel]\ntemp = 0.2\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[harness]\nmethods = [\"magic\"]\n").is_err());
    }

    #[test]
    fn overrides_apply_by_dot_path() {
        let cfg = ExperimentConfig::default()
            .with_overrides(&[
                "harness.trials=1",
                "harness.n_grid=[4]",
                "queries.scheme=isotropic-gaussian",
                "kernel.tau=0.25",
            ])
            .unwrap();
        assert_eq!(cfg.harness.trials, 1);
        assert_eq!(cfg.harness.n_grid, vec![4]);
        assert_eq!(cfg.queries.scheme, QuerySchemeName::IsotropicGaussian);
        assert_eq!(cfg.kernel.tau, 0.25);
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_must_name_existing_keys() {
        let cfg = ExperimentConfig::default();
        assert!(cfg.with_overrides(&["harness.trails=3"]).is_err());
        assert!(cfg.with_overrides(&["nope.x=3"]).is_err());
        assert!(cfg.with_overrides(&["harness=3"]).is_err());
        assert!(cfg.with_overrides(&["harness.trials"]).is_err());
        assert!(cfg.with_overrides(&["harness.trials=lots"]).is_err());
    }

    #[test]
    fn invalid_grids() {
        for grid in ["[8, 4]", "[4, 4]", "[0, 4]", "[]"] {
            let cfg = ExperimentConfig::default()
                .with_overrides(&[format!("harness.n_grid={grid}")])
                .unwrap();
            assert!(cfg.validate().is_err(), "{grid}");
        }
        let cfg = ExperimentConfig::default()
            .with_overrides(&[
                "harness.replacement=false",
                "pool.size=10",
                "harness.n_grid=[4, 16]",
            ])
            .unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::default()
            .with_overrides(&["brsnis.burn_in=10"])
            .unwrap();
        assert!(cfg.validate().is_err());
    }
}
