//! Simulated three-arm markdown test: manual, supply-side and full optimization.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rank_tests::{jarque_bera, kruskal_wallis, mann_whitney_u, Normality};
use crate::demand::{DemandModel, SyntheticWorld};
use crate::domain::{Assignment, Catalogue, DepthSet};
use crate::error::{Error, Result};
use crate::ithax::{default_mapping, solve, IthaxTargets, Levers, SolveReport};
use crate::optimizer::{reprice, ProfitModel, UnitMargin};
use crate::stats::{mean, median};
use crate::validation::FeasibleRegion;

pub const MANUAL: &str = "manual";
pub const SUPPLY_SIDE: &str = "supply_side";
pub const FULL_OPTIMIZATION: &str = "full_optimization";

/// Naive operator rule: slowest sellers first, one depth for everything.
///
/// Products are ranked by cover, highest first, skipping zero-sellers and
/// excluded ids, and added at depth `stock_depth` until the next one would
/// push the stock value past `stock_value`.
pub fn manual_baseline(
    catalogue: &Catalogue,
    stock_value: f64,
    stock_depth: f64,
    exclusions: &BTreeSet<String>,
) -> Result<Assignment> {
    if !(stock_value > 0.0) || !(stock_depth > 0.0 && stock_depth <= 1.0) {
        return Err(Error::Precondition("manual baseline needs positive targets and depth in (0, 1]".into()));
    }
    let mut ranked: Vec<_> = catalogue
        .products()
        .iter()
        .filter(|p| p.stock_units > 0 && p.cover().is_finite() && !exclusions.contains(&p.id))
        .collect();
    ranked.sort_by(|a, b| b.cover().total_cmp(&a.cover()).then_with(|| a.id.cmp(&b.id)));
    let mut out = Assignment::new();
    let mut value = 0.0;
    for p in ranked {
        if value + p.stock_value() > stock_value {
            break;
        }
        value += p.stock_value();
        out.insert(p.id.clone(), stock_depth)?;
    }
    if out.is_empty() {
        return Err(Error::Precondition("no product fits the manual stock value target".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArm {
    pub name: String,
    pub assignment: Assignment,
    /// Realized profit per product, in assignment id order.
    pub profits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub stock_value: f64,
    pub stock_depth: f64,
    pub normality: Option<Normality>,
}

/// One ordered pair `better > worse`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftRow {
    pub better: String,
    pub worse: String,
    /// `(median_better - median_worse) / median_worse`; absent when undefined.
    pub median_uplift: Option<f64>,
    pub mean_uplift: Option<f64>,
    pub u: f64,
    pub p: f64,
}

/// Relative difference `(a - b) / b`, undefined for `b == 0`.
pub fn uplift(a: f64, b: f64) -> Option<f64> {
    (b != 0.0 && a.is_finite() && b.is_finite()).then(|| (a - b) / b)
}

/// Pairwise comparisons in arm order: every arm against each later arm.
pub fn uplift_report(arms: &[PolicyArm]) -> Result<Vec<UpliftRow>> {
    if arms.len() < 2 {
        return Err(Error::invalid("uplift needs at least two arms"));
    }
    let mut rows = Vec::new();
    for i in 0..arms.len() {
        for j in i + 1..arms.len() {
            let (a, b) = (&arms[i], &arms[j]);
            let mw = mann_whitney_u(&a.profits, &b.profits)?;
            rows.push(UpliftRow {
                better: a.name.clone(),
                worse: b.name.clone(),
                median_uplift: uplift(median(&a.profits), median(&b.profits)),
                mean_uplift: uplift(mean(&a.profits), mean(&b.profits)),
                u: mw.u,
                p: mw.p,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub seed: u64,
    pub arms: Vec<ArmSummary>,
    pub kruskal_h: f64,
    pub kruskal_p: f64,
    /// Full > supply-side, full > manual, supply-side > manual.
    pub pairwise: Vec<UpliftRow>,
    pub solve_report: SolveReport,
}

impl TestReport {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn pair(&self, better: &str, worse: &str) -> Option<&UpliftRow> {
        self.pairwise.iter().find(|r| r.better == better && r.worse == worse)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineTestConfig {
    /// Whole-event targets; each half of the test gets half the stock value.
    pub stock_value: f64,
    pub stock_depth: f64,
    pub depths: Vec<f64>,
    pub holdout_fraction: f64,
    pub event_weeks: u32,
    pub min_width: f64,
}

impl Default for OnlineTestConfig {
    fn default() -> Self {
        OnlineTestConfig {
            stock_value: 0.0,
            stock_depth: 0.35,
            depths: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
            holdout_fraction: 0.5,
            event_weeks: 2,
            min_width: crate::ithax::DEFAULT_MIN_WIDTH,
        }
    }
}

/// Outcome of one simulated test, with per-product profits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineTest {
    pub report: TestReport,
    /// Full optimization, supply-side, manual.
    pub arms: Vec<PolicyArm>,
}

/// Runs one three-arm test on the synthetic world.
///
/// The catalogue is split at random into two equal pools so the arms never
/// share products. The manual rule spends half the stock value on one pool.
/// The supply-side solver spends the other half on the other pool, and its
/// selection is split again: the holdout keeps solver depths (supply-side),
/// the rest is repriced within the feasible region (full optimization).
/// Profit is realized units over the event times discounted margin.
pub fn run_online_test(
    world: &SyntheticWorld,
    catalogue: &Catalogue,
    config: &OnlineTestConfig,
    model: &dyn DemandModel,
    region: &FeasibleRegion,
    seed: u64,
) -> Result<OnlineTest> {
    let depths = DepthSet::new(config.depths.clone())?;
    let mut ids: Vec<&str> = catalogue.products().iter().map(|p| p.id.as_str()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = ids.len() / 2;
    let manual_pool: BTreeSet<String> = ids[..half].iter().map(|s| s.to_string()).collect();
    let algo_pool: BTreeSet<String> = ids[half..].iter().map(|s| s.to_string()).collect();

    let half_value = config.stock_value / 2.0;
    let manual = manual_baseline(catalogue, half_value, config.stock_depth, &algo_pool)?;

    let targets = IthaxTargets::new(half_value, config.stock_depth);
    let levers = Levers { exclusions: manual_pool, rng_seed: seed, ..Levers::default() };
    let initial = default_mapping(catalogue, &depths, &targets, &levers, config.min_width)?;
    let solution = solve(catalogue, &targets, &initial, &levers)?;
    let event = reprice(catalogue, &solution.assignment, model, region, &depths, config.holdout_fraction, seed)?;

    let arms = vec![
        realize(world, catalogue, FULL_OPTIMIZATION, event.treatment, config.event_weeks, seed)?,
        realize(world, catalogue, SUPPLY_SIDE, event.control, config.event_weeks, seed)?,
        realize(world, catalogue, MANUAL, manual, config.event_weeks, seed)?,
    ];
    let samples: Vec<&[f64]> = arms.iter().map(|a| a.profits.as_slice()).collect();
    let kw = kruskal_wallis(&samples)?;
    let summaries = arms
        .iter()
        .map(|a| {
            Ok(ArmSummary {
                name: a.name.clone(),
                n: a.profits.len(),
                mean: mean(&a.profits),
                median: median(&a.profits),
                stock_value: a.assignment.stock_value(catalogue)?,
                stock_depth: a.assignment.stock_depth(catalogue)?,
                normality: jarque_bera(&a.profits),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = TestReport {
        seed,
        arms: summaries,
        kruskal_h: kw.h,
        kruskal_p: kw.p,
        pairwise: uplift_report(&arms)?,
        solve_report: solution.report,
    };
    Ok(OnlineTest { report, arms })
}

fn realize(
    world: &SyntheticWorld,
    catalogue: &Catalogue,
    name: &str,
    assignment: Assignment,
    weeks: u32,
    seed: u64,
) -> Result<PolicyArm> {
    if assignment.is_empty() {
        return Err(Error::Precondition(format!("arm `{name}` is empty")));
    }
    let sold = world.simulate_sales(&assignment, weeks, seed)?;
    let margin = UnitMargin;
    let profits = assignment
        .iter()
        .map(|(id, depth)| {
            let p = catalogue.get(id).expect("assignment validated against catalogue");
            sold[id] as f64 * margin.unit_profit(p, depth)
        })
        .collect();
    Ok(PolicyArm { name: name.to_string(), assignment, profits })
}
