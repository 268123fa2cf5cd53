//! Versioned run configuration shared by the CLI and the service.
//!
//! Accepted as JSON or TOML. Every section is optional and falls back to
//! its defaults; `schema_version` must match [`SCHEMA_VERSION`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::demand::{fit_baseline, BaselineModel, History, WorldConfig, DEFAULT_WINSOR_PERCENTILE};
use crate::domain::{Assignment, Catalogue, DepthSet};
use crate::error::{Error, Result};
use crate::experiment::OnlineTestConfig;
use crate::ithax::{default_mapping, BandMapping, CoverBand, IthaxTargets, Levers, DEFAULT_MIN_WIDTH};
use crate::validation::RegionConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub targets: Option<TargetsConfig>,
    /// Depths the operator allows in an event.
    pub depths: Vec<f64>,
    /// Initial band mapping; empty means generate one from the catalogue.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub bands: Vec<CoverBand>,
    pub min_width: f64,
    pub levers: LeversConfig,
    pub tolerances: Tolerances,
    pub holdout_fraction: f64,
    /// Upper tail share of training sales clamped before fitting; 0 disables.
    pub winsor_percentile: f64,
    pub region: RegionConfig,
    pub world: WorldConfig,
    pub experiment: ExperimentConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            targets: None,
            depths: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
            bands: Vec::new(),
            min_width: DEFAULT_MIN_WIDTH,
            levers: LeversConfig::default(),
            tolerances: Tolerances::default(),
            holdout_fraction: 0.5,
            winsor_percentile: DEFAULT_WINSOR_PERCENTILE,
            region: RegionConfig::default(),
            world: WorldConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsConfig {
    pub stock_value: f64,
    pub stock_depth: f64,
    /// Optional per-group stock value targets; must sum to `stock_value`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<GroupTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupTarget {
    pub group: String,
    pub stock_value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeversConfig {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub inclusions: Vec<Inclusion>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub exclusions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    pub id: String,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub f1: f64,
    pub f2: f64,
    pub max_iterations: usize,
    pub stagnation: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let t = IthaxTargets::new(1.0, 0.1);
        Tolerances { f1: t.f1_tol, f2: t.f2_tol, max_iterations: t.max_iterations, stagnation: t.stagnation_tol }
    }
}

/// Simulated three-arm test settings; the world comes from the `world` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Event stock value as a share of the catalogue's total stock value.
    pub stock_value_share: f64,
    pub stock_depth: f64,
    pub depths: Vec<f64>,
    pub event_weeks: u32,
    pub seeds: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            stock_value_share: 0.4,
            stock_depth: 0.25,
            depths: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            event_weeks: 2,
            seeds: 50,
        }
    }
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: EngineConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: EngineConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Loads `.json` or `.toml` by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match crate::io::extension(path).as_str() {
            "json" => Self::from_json(&text),
            "toml" => Self::from_toml(&text),
            other => Err(Error::invalid(format!("unsupported config format `{other}` (use .json or .toml)"))),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        DepthSet::new(self.depths.clone())?;
        if !(0.0..=1.0).contains(&self.holdout_fraction) {
            return Err(Error::invalid("holdout_fraction must lie in [0, 1]"));
        }
        if !(0.0..0.5).contains(&self.winsor_percentile) {
            return Err(Error::invalid("winsor_percentile must lie in [0, 0.5)"));
        }
        if !(self.min_width > 0.0) {
            return Err(Error::invalid("min_width must be positive"));
        }
        self.world.validate()?;
        Ok(())
    }

    pub fn depth_set(&self) -> Result<DepthSet> {
        DepthSet::new(self.depths.clone())
    }

    pub fn ithax_targets(&self) -> Result<IthaxTargets> {
        let t = self.targets.as_ref().ok_or_else(|| Error::invalid("config has no `targets` section"))?;
        let mut out = IthaxTargets::new(t.stock_value, t.stock_depth);
        out.f1_tol = self.tolerances.f1;
        out.f2_tol = self.tolerances.f2;
        out.max_iterations = self.tolerances.max_iterations;
        out.stagnation_tol = self.tolerances.stagnation;
        if !t.groups.is_empty() {
            out.group_values = Some(t.groups.iter().map(|g| (g.group.clone(), g.stock_value)).collect());
        }
        Ok(out)
    }

    pub fn levers(&self) -> Result<Levers> {
        let mut inclusions = Assignment::new();
        for inc in &self.levers.inclusions {
            inclusions.insert(inc.id.clone(), inc.depth)?;
        }
        Ok(Levers { inclusions, exclusions: self.levers.exclusions.iter().cloned().collect(), rng_seed: self.seed })
    }

    /// The configured mapping, or one generated from the catalogue.
    pub fn initial_mapping(&self, catalogue: &Catalogue) -> Result<BandMapping> {
        if !self.bands.is_empty() {
            return BandMapping::new(self.bands.clone(), self.min_width);
        }
        default_mapping(catalogue, &self.depth_set()?, &self.ithax_targets()?, &self.levers()?, self.min_width)
    }

    /// Fits the built-in model, winsorizing first when configured.
    pub fn fit(&self, history: &History) -> Result<BaselineModel> {
        if self.winsor_percentile > 0.0 {
            fit_baseline(&history.winsorized(self.winsor_percentile))
        } else {
            fit_baseline(history)
        }
    }

    pub fn online_test(&self, catalogue: &Catalogue) -> OnlineTestConfig {
        OnlineTestConfig {
            stock_value: self.experiment.stock_value_share * catalogue.total_stock_value(),
            stock_depth: self.experiment.stock_depth,
            depths: self.experiment.depths.clone(),
            holdout_fraction: self.holdout_fraction,
            event_weeks: self.experiment.event_weeks,
            min_width: self.min_width,
        }
    }
}
