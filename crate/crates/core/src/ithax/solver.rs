//! The alternating allocate / adjust loop.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::allocation::{to_allocation, CandidatePool, Levers, PoolAllocation};
use super::bands::BandMapping;
use crate::domain::{Assignment, Catalogue};
use crate::error::{Error, Result};

/// Stock value / stock depth targets and solver tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IthaxTargets {
    pub stock_value: f64,
    pub stock_depth: f64,
    /// Optional split of `stock_value` across product groups.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_values: Option<BTreeMap<String, f64>>,
    #[serde(default = "defaults::f1_tol")]
    pub f1_tol: f64,
    #[serde(default = "defaults::f2_tol")]
    pub f2_tol: f64,
    #[serde(default = "defaults::max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "defaults::stagnation_tol")]
    pub stagnation_tol: f64,
}

mod defaults {
    pub fn f1_tol() -> f64 {
        0.05
    }
    pub fn f2_tol() -> f64 {
        0.005
    }
    pub fn max_iterations() -> usize {
        200
    }
    pub fn stagnation_tol() -> f64 {
        1e-4
    }
}

impl IthaxTargets {
    pub fn new(stock_value: f64, stock_depth: f64) -> Self {
        IthaxTargets {
            stock_value,
            stock_depth,
            group_values: None,
            f1_tol: defaults::f1_tol(),
            f2_tol: defaults::f2_tol(),
            max_iterations: defaults::max_iterations(),
            stagnation_tol: defaults::stagnation_tol(),
        }
    }

    /// Splits the stock value target across groups by proportion.
    pub fn with_group_shares(mut self, shares: &[(&str, f64)]) -> Self {
        let total: f64 = shares.iter().map(|(_, s)| s).sum();
        self.group_values =
            Some(shares.iter().map(|(g, s)| (g.to_string(), self.stock_value * s / total)).collect());
        self
    }

    pub fn validate(&self, initial: &BandMapping) -> Result<()> {
        if !(self.stock_value > 0.0) || !self.stock_value.is_finite() {
            return Err(Error::Precondition("stock value target must be positive".into()));
        }
        if !(self.stock_depth > 0.0) {
            return Err(Error::Precondition("stock depth target must be positive".into()));
        }
        if self.stock_depth >= initial.max_depth() {
            return Err(Error::Precondition(format!(
                "stock depth target {} must be below the deepest band depth {}",
                self.stock_depth,
                initial.max_depth()
            )));
        }
        if !(self.f1_tol > 0.0 && self.f2_tol > 0.0) || self.max_iterations == 0 {
            return Err(Error::Precondition("tolerances and iteration cap must be positive".into()));
        }
        if let Some(groups) = &self.group_values {
            if groups.is_empty() || groups.values().any(|v| !(*v > 0.0)) {
                return Err(Error::Precondition("group stock value targets must be positive".into()));
            }
            let sum: f64 = groups.values().sum();
            if (sum - self.stock_value).abs() > 1e-6 * self.stock_value {
                return Err(Error::Precondition(format!(
                    "group targets sum to {sum}, expected {}",
                    self.stock_value
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub achieved_value: f64,
    pub achieved_depth: f64,
    pub f1: f64,
    pub f2: f64,
    pub converged: bool,
    /// Stock depth after each allocation pass.
    pub depth_trajectory: Vec<f64>,
    /// Stock value after each allocation pass.
    pub value_trajectory: Vec<f64>,
    /// Mapping used by each allocation pass.
    pub band_history: Vec<BandMapping>,
    pub final_mapping: BandMapping,
    /// Achieved stock value per group when group targets are set.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub group_values: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub assignment: Assignment,
    pub report: SolveReport,
}

/// One allocation scope: the whole catalogue, or one product group.
struct Scope {
    group: Option<String>,
    budget: f64,
    pool: CandidatePool,
}

struct Pass {
    entries: Vec<(usize, f64)>,
    value: f64,
    depth: f64,
    f1: f64,
    f2: f64,
    group_values: BTreeMap<String, f64>,
    exhausted: bool,
}

fn allocate_all(scopes: &[Scope], mapping: &BandMapping, targets: &IthaxTargets, rng: &mut ChaCha8Rng) -> Pass {
    let mut merged = PoolAllocation::default();
    let mut group_values = BTreeMap::new();
    let mut exhausted = false;
    let mut worst_group = 0.0f64;
    for scope in scopes {
        let part = scope.pool.allocate(mapping, scope.budget, rng);
        if let Some(g) = &scope.group {
            group_values.insert(g.clone(), part.value);
            worst_group = worst_group.max((part.value - scope.budget).abs() / scope.budget);
        }
        exhausted |= part.exhausted;
        merged.value += part.value;
        merged.discounted += part.discounted;
        merged.entries.extend(part.entries);
    }
    let depth = merged.stock_depth().unwrap_or(0.0);
    let overall = (merged.value - targets.stock_value).abs() / targets.stock_value;
    Pass {
        entries: merged.entries,
        value: merged.value,
        depth,
        f1: overall.max(worst_group),
        f2: (depth - targets.stock_depth).abs(),
        group_values,
        exhausted,
    }
}

/// Selects and prices an event hitting the stock value and stock depth targets.
///
/// Each iteration allocates products from the current mapping, scores the
/// pass, and cuts one band: on overshoot the search restarts at the deepest
/// band, on undershoot it continues from the band cut last time. Stops when
/// both costs are under tolerance or the iteration cap is hit; the latter
/// returns the last pass with `converged = false`.
pub fn solve(catalogue: &Catalogue, targets: &IthaxTargets, initial: &BandMapping, levers: &Levers) -> Result<Solution> {
    initial.validate()?;
    targets.validate(initial)?;
    levers.validate(catalogue)?;

    let mut warnings = Vec::new();
    let floor = 4.0 * initial.min_width();
    for b in initial.lowest()..=initial.highest() {
        if initial.band(b).width() <= floor {
            warnings.push(format!("band {b} is not wider than 4x the minimum width; the search may bottom out"));
        }
    }

    let scopes: Vec<Scope> = match &targets.group_values {
        None => vec![Scope {
            group: None,
            budget: targets.stock_value,
            pool: CandidatePool::new(catalogue, levers, |_| true),
        }],
        Some(groups) => groups
            .iter()
            .map(|(g, &budget)| Scope {
                group: Some(g.clone()),
                budget,
                pool: CandidatePool::new(catalogue, levers, |p| &p.group == g),
            })
            .collect(),
    };
    if scopes.iter().all(|s| s.pool.is_empty()) {
        return Err(Error::Precondition("catalogue is empty after exclusions".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(levers.rng_seed);
    let mut mapping = initial.clone();
    let mut bx = mapping.highest();
    let mut previous_depth: Option<f64> = None;
    let mut depth_trajectory = Vec::new();
    let mut value_trajectory = Vec::new();
    let mut band_history = Vec::new();

    for iteration in 1..=targets.max_iterations {
        let pass = allocate_all(&scopes, &mapping, targets, &mut rng);
        depth_trajectory.push(pass.depth);
        value_trajectory.push(pass.value);
        band_history.push(mapping.clone());

        let converged = pass.f1 < targets.f1_tol && pass.f2 < targets.f2_tol;
        if converged || iteration == targets.max_iterations {
            if !converged && pass.exhausted && pass.f1 >= targets.f1_tol {
                warnings.push("insufficient catalogue: stock value target unreachable with eligible products".into());
            }
            let assignment = to_allocation(
                catalogue,
                &PoolAllocation { entries: pass.entries, ..Default::default() },
            )
            .assignment;
            let report = SolveReport {
                iterations: iteration,
                achieved_value: pass.value,
                achieved_depth: pass.depth,
                f1: pass.f1,
                f2: pass.f2,
                converged,
                depth_trajectory,
                value_trajectory,
                band_history,
                final_mapping: mapping,
                group_values: pass.group_values,
                warnings,
            };
            return Ok(Solution { assignment, report });
        }

        let (next, next_bx) = if pass.depth > targets.stock_depth {
            mapping.adjust_overshoot(mapping.highest())?
        } else {
            mapping.adjust_undershoot(bx, pass.depth, previous_depth, iteration, targets.stagnation_tol)?
        };
        log::debug!("iteration {iteration}: V={:.2} M={:.4} -> cut band {next_bx}", pass.value, pass.depth);
        mapping = next;
        bx = next_bx;
        previous_depth = Some(pass.depth);
    }
    unreachable!("loop returns on the final iteration")
}
