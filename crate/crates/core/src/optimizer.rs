//! Per-product depth choice and the full select-split-reprice pipeline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demand::{DemandModel, Query};
use crate::domain::{Assignment, Catalogue, DepthSet, Product, DEPTH_EPS};
use crate::error::{Error, Result};
use crate::ithax::{solve, BandMapping, IthaxTargets, Levers, SolveReport};
use crate::validation::FeasibleRegion;

/// Profit earned on one unit sold at a depth.
pub trait ProfitModel: Send + Sync {
    fn unit_profit(&self, product: &Product, depth: f64) -> f64;
}

/// Discounted price minus unit cost, in major currency units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitMargin;

impl ProfitModel for UnitMargin {
    fn unit_profit(&self, product: &Product, depth: f64) -> f64 {
        product.full_price.as_major() * (1.0 - depth) - product.unit_cost.as_major()
    }
}

/// Expected sales times unit profit.
pub fn expected_total_profit(
    product: &Product,
    depth: f64,
    model: &dyn DemandModel,
    profit: &dyn ProfitModel,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&depth) {
        return Err(Error::invalid(format!("depth {depth} outside [0, 1]")));
    }
    Ok(model.predict(&Query::from(product), depth)? * profit.unit_profit(product, depth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthChoice {
    pub depth: f64,
    /// Expected sales times expected profit at `depth`.
    pub objective: f64,
    pub expected_sales: f64,
    pub expected_profit: f64,
    /// No candidate had a positive objective; `depth` is the shallowest.
    pub no_profitable_depth: bool,
}

/// Depth maximizing expected sales times expected profit, shallowest on ties.
pub fn optimize_depth(
    product: &Product,
    feasible: &[f64],
    model: &dyn DemandModel,
    profit: &dyn ProfitModel,
) -> Result<DepthChoice> {
    if feasible.is_empty() {
        return Err(Error::Precondition(format!("no feasible depth for `{}`", product.id)));
    }
    let mut depths = feasible.to_vec();
    depths.sort_by(f64::total_cmp);
    let query = Query::from(product);
    let mut best: Option<DepthChoice> = None;
    let mut shallowest: Option<DepthChoice> = None;
    for d in depths {
        let s = model.predict(&query, d)?;
        let g = s * profit.unit_profit(product, d);
        let choice = DepthChoice { depth: d, objective: s * g, expected_sales: s, expected_profit: g, no_profitable_depth: false };
        shallowest.get_or_insert(choice);
        if best.is_none_or(|b| choice.objective > b.objective) {
            best = Some(choice);
        }
    }
    let best = best.expect("non-empty depths");
    if best.objective <= 0.0 {
        return Ok(DepthChoice { no_profitable_depth: true, ..shallowest.expect("non-empty depths") });
    }
    Ok(best)
}

/// Splits a solution into (control, treatment) uniformly at random.
/// The control share is `fraction` of the products, rounded.
pub fn randomize_holdout(solution: &Assignment, fraction: f64, seed: u64) -> Result<(Assignment, Assignment)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("holdout fraction {fraction} outside [0, 1]")));
    }
    let mut ids: Vec<(&str, f64)> = solution.iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_control = (fraction * ids.len() as f64).round() as usize;
    let control = ids[..n_control].iter().map(|&(id, d)| (id.to_string(), d)).collect();
    let treatment = ids[n_control..].iter().map(|&(id, d)| (id.to_string(), d)).collect();
    Ok((control, treatment))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Keeps the supply-side depth.
    Control,
    /// Repriced by the depth optimizer.
    Treatment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLine {
    pub product_id: String,
    pub arm: Arm,
    pub ithax_depth: f64,
    pub final_depth: f64,
    pub expected_sales: f64,
    pub expected_profit: f64,
    /// Treatment product with no feasible depth, left at its supply-side depth.
    pub fallback: bool,
    pub no_profitable_depth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub control_size: usize,
    pub treatment_size: usize,
    pub control_expected_profit: f64,
    pub treatment_expected_profit: f64,
    /// Stock depth of the whole event after repricing (diagnostic only).
    pub final_stock_depth: Option<f64>,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedEvent {
    pub control: Assignment,
    pub treatment: Assignment,
    pub lines: Vec<EventLine>,
    pub summary: EventSummary,
    pub solve_report: Option<SolveReport>,
}

impl OptimizedEvent {
    /// Final depth of every product in the event.
    pub fn assignment(&self) -> Assignment {
        self.lines.iter().map(|l| (l.product_id.clone(), l.final_depth)).collect()
    }
}

/// Region depths for a group that also belong to the event's depth set.
pub fn feasible_depths(region: &FeasibleRegion, group: &str, depths: &DepthSet) -> Vec<f64> {
    region.allowed(group).into_iter().filter(|&d| d > DEPTH_EPS && depths.contains(d)).collect()
}

/// Splits a supply-side solution and reprices its treatment half.
pub fn reprice(
    catalogue: &Catalogue,
    solution: &Assignment,
    model: &dyn DemandModel,
    region: &FeasibleRegion,
    depths: &DepthSet,
    holdout_fraction: f64,
    seed: u64,
) -> Result<OptimizedEvent> {
    let profit = UnitMargin;
    let (control, treatment_in) = randomize_holdout(solution, holdout_fraction, seed)?;
    let mut lines = Vec::with_capacity(solution.len());
    let mut treatment = Assignment::new();
    for (id, depth) in solution.iter() {
        let p = catalogue.get(id).ok_or_else(|| Error::UnknownProduct(id.to_string()))?;
        if control.contains(id) {
            lines.push(EventLine {
                product_id: id.to_string(),
                arm: Arm::Control,
                ithax_depth: depth,
                final_depth: depth,
                expected_sales: model.predict(&Query::from(p), depth)?,
                expected_profit: expected_total_profit(p, depth, model, &profit)?,
                fallback: false,
                no_profitable_depth: false,
            });
            continue;
        }
        debug_assert!(treatment_in.contains(id));
        let allowed = feasible_depths(region, &p.group, depths);
        let line = if allowed.is_empty() {
            EventLine {
                product_id: id.to_string(),
                arm: Arm::Treatment,
                ithax_depth: depth,
                final_depth: depth,
                expected_sales: model.predict(&Query::from(p), depth)?,
                expected_profit: expected_total_profit(p, depth, model, &profit)?,
                fallback: true,
                no_profitable_depth: false,
            }
        } else {
            let choice = optimize_depth(p, &allowed, model, &profit)?;
            EventLine {
                product_id: id.to_string(),
                arm: Arm::Treatment,
                ithax_depth: depth,
                final_depth: choice.depth,
                expected_sales: choice.expected_sales,
                expected_profit: choice.expected_profit,
                fallback: false,
                no_profitable_depth: choice.no_profitable_depth,
            }
        };
        treatment.insert(id.to_string(), line.final_depth)?;
        lines.push(line);
    }
    let sum = |arm: Arm| lines.iter().filter(|l| l.arm == arm).map(|l| l.expected_profit).sum::<f64>();
    let final_assignment: Assignment = lines.iter().map(|l| (l.product_id.clone(), l.final_depth)).collect();
    let summary = EventSummary {
        control_size: control.len(),
        treatment_size: treatment.len(),
        control_expected_profit: sum(Arm::Control),
        treatment_expected_profit: sum(Arm::Treatment),
        final_stock_depth: final_assignment.stock_depth(catalogue).ok(),
        fallbacks: lines.iter().filter(|l| l.fallback).count(),
    };
    Ok(OptimizedEvent { control, treatment, lines, summary, solve_report: None })
}

/// Select with the supply-side solver, hold out a random share at its
/// depths, and reprice the rest within the feasible region.
#[allow(clippy::too_many_arguments)]
pub fn run_promotheus(
    catalogue: &Catalogue,
    targets: &IthaxTargets,
    initial: &BandMapping,
    levers: &Levers,
    model: &dyn DemandModel,
    region: &FeasibleRegion,
    depths: &DepthSet,
    holdout_fraction: f64,
    seed: u64,
) -> Result<OptimizedEvent> {
    let solution = solve(catalogue, targets, initial, levers)?;
    let mut event = reprice(catalogue, &solution.assignment, model, region, depths, holdout_fraction, seed)?;
    event.solve_report = Some(solution.report);
    Ok(event)
}
