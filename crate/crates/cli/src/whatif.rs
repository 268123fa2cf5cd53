//! What-if requests: a side-effect-free solve (optionally repriced) shaped
//! for the planner console.

use std::collections::BTreeMap;

use markdown_core::config::{EngineConfig, LeversConfig, TargetsConfig, Tolerances};
use markdown_core::demand::DemandModel;
use markdown_core::domain::{Assignment, Catalogue};
use markdown_core::ithax::{solve, CoverBand, SolveReport};
use markdown_core::optimizer::reprice;
use markdown_core::stats::quantile_sorted;
use markdown_core::validation::FeasibleRegion;
use serde::{Deserialize, Serialize};

use crate::ENGINE_VERSION;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    #[default]
    IthaxOnly,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub catalogue_id: String,
    pub targets: TargetsConfig,
    /// Initial band mapping; generated from the catalogue when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bands: Vec<CoverBand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_width: Option<f64>,
    #[serde(default)]
    pub levers: LeversConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<Tolerances>,
    #[serde(default)]
    pub pipeline: Pipeline,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl WhatIfRequest {
    /// The request as a run configuration on top of `base`; replayable with
    /// `markdown solve --config`.
    pub fn to_config(&self, base: &EngineConfig) -> markdown_core::Result<EngineConfig> {
        let mut c = base.clone();
        c.targets = Some(self.targets.clone());
        c.bands = self.bands.clone();
        if let Some(d) = &self.depths {
            c.depths = d.clone();
        }
        if let Some(w) = self.min_width {
            c.min_width = w;
        }
        c.levers = self.levers.clone();
        if let Some(t) = &self.tolerances {
            c.tolerances = t.clone();
        }
        if let Some(h) = self.holdout_fraction {
            c.holdout_fraction = h;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub target_value: f64,
    pub target_depth: f64,
    pub achieved_value: f64,
    pub achieved_depth: f64,
    /// `(V - V*) / V*`.
    pub value_discrepancy: f64,
    /// `M - M*`.
    pub depth_discrepancy: f64,
    pub f1: f64,
    pub f2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub products: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub product_id: String,
    pub cover: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub depth: f64,
    pub products: usize,
    pub stock_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub stock_value: f64,
    pub stock_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmProfit {
    pub arm: String,
    pub products: usize,
    pub expected_profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub engine_version: String,
    pub seed: u64,
    pub catalogue_id: String,
    pub pipeline: Pipeline,
    pub summary: SolutionSummary,
    pub scatter: Vec<ScatterPoint>,
    pub histogram: Vec<HistogramBin>,
    pub trajectory: Vec<TrajectoryPoint>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub group_values: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub arms: Option<Vec<ArmProfit>>,
    /// Final depth per product; post it to `/events` to accept the scenario.
    pub solution: Assignment,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

pub enum WhatIfError {
    /// Bad request: preconditions, unknown fields, missing model.
    Invalid(String),
    /// The solver stopped without meeting both tolerances. Carries the
    /// solve report, or the stuck band mapping when no band could move.
    NotConverged { message: String, detail: serde_json::Value },
    Internal(String),
}

impl From<markdown_core::Error> for WhatIfError {
    fn from(e: markdown_core::Error) -> Self {
        use markdown_core::Error as E;
        match e {
            E::Io(_) | E::Csv(_) | E::Json(_) | E::Toml(_) => WhatIfError::Internal(e.to_string()),
            E::BottomedOut { ref mapping } => WhatIfError::NotConverged {
                message: e.to_string(),
                detail: serde_json::json!({ "mapping": mapping }),
            },
            other => WhatIfError::Invalid(other.to_string()),
        }
    }
}

/// Runs a what-if. Pure: the same inputs give the same response.
pub fn run_whatif(
    catalogue: &Catalogue,
    request: &WhatIfRequest,
    base: &EngineConfig,
    model: Option<&dyn DemandModel>,
    region: Option<&FeasibleRegion>,
) -> Result<WhatIfResponse, WhatIfError> {
    let config = request.to_config(base)?;
    let targets = config.ithax_targets()?;
    let levers = config.levers()?;
    let initial = config.initial_mapping(catalogue)?;
    let solution = solve(catalogue, &targets, &initial, &levers)?;
    if !solution.report.converged {
        return Err(not_converged(&solution.report));
    }

    let (final_assignment, arms) = match request.pipeline {
        Pipeline::IthaxOnly => (solution.assignment.clone(), None),
        Pipeline::Full => {
            let (Some(model), Some(region)) = (model, region) else {
                return Err(WhatIfError::Invalid("full pipeline needs a demand model and feasible region loaded".into()));
            };
            let event = reprice(
                catalogue,
                &solution.assignment,
                model,
                region,
                &config.depth_set()?,
                config.holdout_fraction,
                config.seed,
            )?;
            let arms = vec![
                ArmProfit {
                    arm: "supply_side".into(),
                    products: event.summary.control_size,
                    expected_profit: event.summary.control_expected_profit,
                },
                ArmProfit {
                    arm: "full_optimization".into(),
                    products: event.summary.treatment_size,
                    expected_profit: event.summary.treatment_expected_profit,
                },
            ];
            (event.assignment(), Some(arms))
        }
    };

    let r = &solution.report;
    let summary = SolutionSummary {
        target_value: targets.stock_value,
        target_depth: targets.stock_depth,
        achieved_value: r.achieved_value,
        achieved_depth: r.achieved_depth,
        value_discrepancy: (r.achieved_value - targets.stock_value) / targets.stock_value,
        depth_discrepancy: r.achieved_depth - targets.stock_depth,
        f1: r.f1,
        f2: r.f2,
        iterations: r.iterations,
        converged: r.converged,
        products: solution.assignment.len(),
    };
    Ok(WhatIfResponse {
        engine_version: ENGINE_VERSION.to_string(),
        seed: config.seed,
        catalogue_id: request.catalogue_id.clone(),
        pipeline: request.pipeline,
        summary,
        scatter: scatter(catalogue, &solution.assignment),
        histogram: histogram(catalogue, &solution.assignment),
        trajectory: r
            .value_trajectory
            .iter()
            .zip(&r.depth_trajectory)
            .enumerate()
            .map(|(i, (&v, &d))| TrajectoryPoint { iteration: i + 1, stock_value: v, stock_depth: d })
            .collect(),
        group_values: r.group_values.clone(),
        arms,
        solution: final_assignment,
        warnings: r.warnings.clone(),
    })
}

fn not_converged(report: &SolveReport) -> WhatIfError {
    WhatIfError::NotConverged {
        message: format!(
            "no convergence after {} iterations (f1 = {:.4}, f2 = {:.4})",
            report.iterations, report.f1, report.f2
        ),
        detail: serde_json::json!({ "report": report }),
    }
}

fn scatter(catalogue: &Catalogue, assignment: &Assignment) -> Vec<ScatterPoint> {
    assignment
        .iter()
        .filter_map(|(id, depth)| {
            let p = catalogue.get(id)?;
            p.cover().is_finite().then(|| ScatterPoint { product_id: id.to_string(), cover: p.cover(), depth })
        })
        .collect()
}

fn histogram(catalogue: &Catalogue, assignment: &Assignment) -> Vec<HistogramBin> {
    let mut bins: BTreeMap<i64, HistogramBin> = BTreeMap::new();
    for (id, depth) in assignment.iter() {
        let Some(p) = catalogue.get(id) else { continue };
        // key on basis points so float noise cannot split a bin
        let bin = bins.entry((depth * 1e4).round() as i64).or_insert(HistogramBin { depth, products: 0, stock_value: 0.0 });
        bin.products += 1;
        bin.stock_value += p.stock_value();
    }
    bins.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub products: usize,
    pub stock_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogueSummary {
    pub period: i64,
    pub products: usize,
    pub total_stock_value: f64,
    pub zero_sellers: usize,
    pub out_of_stock: usize,
    /// Cover quantiles over products with finite, positive cover.
    pub cover_quantiles: BTreeMap<String, f64>,
    pub groups: BTreeMap<String, GroupSummary>,
}

impl CatalogueSummary {
    pub fn of(catalogue: &Catalogue) -> Self {
        let mut covers: Vec<f64> =
            catalogue.products().iter().map(|p| p.cover()).filter(|c| c.is_finite() && *c > 0.0).collect();
        covers.sort_by(f64::total_cmp);
        let mut cover_quantiles = BTreeMap::new();
        if !covers.is_empty() {
            for (name, q) in [("p10", 0.1), ("p50", 0.5), ("p90", 0.9)] {
                cover_quantiles.insert(name.to_string(), quantile_sorted(&covers, q));
            }
        }
        let mut groups: BTreeMap<String, GroupSummary> = BTreeMap::new();
        for p in catalogue.products() {
            let g = groups.entry(p.group.clone()).or_insert(GroupSummary { products: 0, stock_value: 0.0 });
            g.products += 1;
            g.stock_value += p.stock_value();
        }
        CatalogueSummary {
            period: catalogue.period(),
            products: catalogue.len(),
            total_stock_value: catalogue.total_stock_value(),
            zero_sellers: catalogue.products().iter().filter(|p| p.stock_units > 0 && p.sold_units == 0).count(),
            out_of_stock: catalogue.products().iter().filter(|p| p.stock_units == 0).count(),
            cover_quantiles,
            groups,
        }
    }
}
