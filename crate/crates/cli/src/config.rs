//! JSON experiment configuration. The schema lives in `schema/config.schema.json`.

use std::path::{Path, PathBuf};

use loopgas::lattice::{periodize_potential, PeriodicPotential, PotentialSpec, Torus};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Selftest,
    Meanfield,
    Largemass,
    Volume,
    Heatkernel,
    ClusterLogz,
    GinibreZ,
    SymanzikZ,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Selftest => "selftest",
            Experiment::Meanfield => "meanfield",
            Experiment::Largemass => "largemass",
            Experiment::Volume => "volume",
            Experiment::Heatkernel => "heatkernel",
            Experiment::ClusterLogz => "cluster-logz",
            Experiment::GinibreZ => "ginibre-z",
            Experiment::SymanzikZ => "symanzik-z",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// `λ = ν²` with `κ` fixed.
    NuSquared,
    /// `λ = 1` with `κ = κ0/ν`.
    One,
    /// `λ` given by the `lambda` field.
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Agreement threshold in standard errors.
    #[serde(default = "Tolerances::default_sigma")]
    pub sigma: f64,
    /// Truncation tolerance of exact oracles.
    #[serde(default = "Tolerances::default_oracle_tol")]
    pub oracle_tol: f64,
    /// `‖v‖₁` above which the volume sweep warns.
    #[serde(default = "Tolerances::default_l1_threshold")]
    pub l1_threshold: f64,
    /// Window for successive error ratios in convergence sweeps.
    #[serde(default = "Tolerances::default_ratio_window")]
    pub ratio_window: [f64; 2],
    /// Largest `|Λ|^{p + n_max}` for which an exact oracle is used.
    #[serde(default = "Tolerances::default_oracle_budget")]
    pub oracle_budget: f64,
}

impl Tolerances {
    fn default_sigma() -> f64 {
        3.0
    }
    fn default_oracle_tol() -> f64 {
        1e-12
    }
    fn default_l1_threshold() -> f64 {
        0.1
    }
    fn default_ratio_window() -> [f64; 2] {
        [1.6, 2.4]
    }
    fn default_oracle_budget() -> f64 {
        1e5
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            sigma: Self::default_sigma(),
            oracle_tol: Self::default_oracle_tol(),
            l1_threshold: Self::default_l1_threshold(),
            ratio_window: Self::default_ratio_window(),
            oracle_budget: Self::default_oracle_budget(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "one")]
    pub d: usize,
    #[serde(rename = "L", default)]
    pub l: Option<usize>,
    #[serde(rename = "L_list", default)]
    pub l_list: Vec<usize>,
    /// Potential file, relative to the config file.
    #[serde(default)]
    pub potential_file: Option<PathBuf>,
    /// Inline potential in the potential-file format.
    #[serde(default)]
    pub potential: Option<serde_json::Value>,
    #[serde(default)]
    pub nu: Vec<f64>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub kappa0: Option<f64>,
    #[serde(default)]
    pub lambda_rule: Option<LambdaRule>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "one")]
    pub p: usize,
    #[serde(default)]
    pub x: Option<Vec<usize>>,
    #[serde(default)]
    pub y: Option<Vec<usize>>,
    /// Cluster-expansion truncation order.
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub t: Vec<f64>,
    #[serde(rename = "L0", default)]
    pub l0: Option<usize>,
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Directory of the config file; potential paths resolve against it.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn default_samples() -> u64 {
    100_000
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    /// Default self-test configuration.
    pub fn selftest_default() -> Self {
        Self::from_json_str(r#"{"experiment": "selftest", "samples": 50000}"#).expect("valid default")
    }

    pub fn expect(&self, e: Experiment) -> Result<()> {
        if self.experiment != e {
            return config_err(format!("config is for '{}', not '{}'", self.experiment.name(), e.name()));
        }
        Ok(())
    }

    pub fn potential_spec(&self) -> Result<PotentialSpec> {
        let text = match (&self.potential_file, &self.potential) {
            (Some(_), Some(_)) => return config_err("give either potential_file or potential, not both"),
            (Some(f), None) => {
                let path = match &self.base_dir {
                    Some(b) if f.is_relative() => b.join(f),
                    _ => f.clone(),
                };
                std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            (None, Some(v)) => v.to_string(),
            (None, None) => return config_err("no potential given"),
        };
        let spec = PotentialSpec::from_json_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        if spec.d() != self.d {
            return config_err(format!("potential has d = {}, config has d = {}", spec.d(), self.d));
        }
        Ok(spec)
    }

    pub fn side(&self) -> Result<usize> {
        self.l.ok_or_else(|| CliError::Config("missing L".into()))
    }

    pub fn sides(&self) -> Result<Vec<usize>> {
        match (&self.l, self.l_list.is_empty()) {
            (_, false) => Ok(self.l_list.clone()),
            (Some(l), true) => Ok(vec![*l]),
            (None, true) => config_err("missing L or L_list"),
        }
    }

    pub fn torus(&self) -> Result<Torus> {
        Torus::new(self.d, self.side()?).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn periodic_potential(&self, l: usize) -> Result<PeriodicPotential> {
        periodize_potential(&self.potential_spec()?, l).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn kappa(&self) -> Result<f64> {
        match self.kappa {
            Some(k) if k > 0.0 && k.is_finite() => Ok(k),
            Some(k) => config_err(format!("kappa = {k} must be positive")),
            None => config_err("missing kappa"),
        }
    }

    pub fn kappa0(&self) -> Result<f64> {
        match self.kappa0 {
            Some(k) if k > 0.0 && k.is_finite() => Ok(k),
            Some(k) => config_err(format!("kappa0 = {k} must be positive")),
            None => config_err("missing kappa0"),
        }
    }

    pub fn nus(&self) -> Result<Vec<f64>> {
        if self.nu.is_empty() {
            return config_err("missing nu list");
        }
        if let Some(bad) = self.nu.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return config_err(format!("nu = {bad} must be positive"));
        }
        Ok(self.nu.clone())
    }

    pub fn n_max(&self) -> Result<usize> {
        self.n_max.ok_or_else(|| CliError::Config("missing n_max".into()))
    }

    pub fn l0(&self) -> Result<usize> {
        self.l0.ok_or_else(|| CliError::Config("missing L0".into()))
    }

    /// Source and target points, all origins by default.
    pub fn points(&self, n_sites: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let x = self.x.clone().unwrap_or_else(|| vec![0; self.p]);
        let y = self.y.clone().unwrap_or_else(|| vec![0; self.p]);
        if x.len() != self.p || y.len() != self.p {
            return config_err(format!("x and y need p = {} entries", self.p));
        }
        if x.iter().chain(&y).any(|&s| s >= n_sites) {
            return config_err("point outside the torus");
        }
        Ok((x, y))
    }

    /// The λ rule, checked against the regime of the experiment. Missing
    /// rules default to the regime's own.
    pub fn lambda_rule(&self, allowed: &[LambdaRule]) -> Result<LambdaRule> {
        let rule = self.lambda_rule.unwrap_or(allowed[0]);
        if !allowed.contains(&rule) {
            return config_err(format!("lambda_rule {rule:?} does not match the '{}' regime", self.experiment.name()));
        }
        match (rule, self.lambda) {
            (LambdaRule::Explicit, None) => config_err("lambda_rule explicit needs lambda"),
            (LambdaRule::Explicit, Some(l)) if !(l >= 0.0 && l.is_finite()) => config_err("lambda must be >= 0"),
            (LambdaRule::Explicit, _) => Ok(rule),
            (_, Some(_)) => config_err("lambda is only read with lambda_rule explicit"),
            _ => Ok(rule),
        }
    }

    pub fn seed_or(&self, cli: Option<u64>) -> u64 {
        cli.or(self.seed).unwrap_or(1)
    }
}
