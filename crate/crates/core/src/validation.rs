//! Backtesting: WAPE, time-series folds, feasible regions and elasticity audits.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::demand::{predict_curve, DemandModel, History, Query};
use crate::domain::{Catalogue, DepthSet, DEPTH_EPS};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.55;
pub const DEFAULT_MIN_SUPPORT: usize = 30;
pub const DEFAULT_MIN_TRAIN_WEEKS: u32 = 8;

/// Weighted absolute percentage error, `sum |a - f| / sum a`.
pub fn wape(actuals: &[f64], forecasts: &[f64]) -> Result<f64> {
    if actuals.len() != forecasts.len() {
        return Err(Error::invalid(format!(
            "{} actuals but {} forecasts",
            actuals.len(),
            forecasts.len()
        )));
    }
    let total: f64 = actuals.iter().sum();
    if !(total > 0.0) {
        return Err(Error::UndefinedWape);
    }
    Ok(actuals.iter().zip(forecasts).map(|(a, f)| (a - f).abs()).sum::<f64>() / total)
}

/// Inclusive week ranges of one backtest fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    /// 1 holds out the latest weeks.
    pub fold: u32,
    pub train: (u32, u32),
    pub holdout: (u32, u32),
}

/// Folds over weeks `first..=last`, each holding out `horizon` weeks and
/// stepping back one horizon per fold. Training is everything earlier.
pub fn timeseries_kfold(first: u32, last: u32, folds: u32, horizon: u32, min_train: u32) -> Result<Vec<FoldSplit>> {
    if folds == 0 || horizon == 0 {
        return Err(Error::invalid("folds and horizon must be positive"));
    }
    let available = last.saturating_sub(first) + 1;
    let required = folds * horizon + min_train;
    if last < first || available < required {
        return Err(Error::InsufficientHistory { required, available: if last < first { 0 } else { available } });
    }
    Ok((1..=folds)
        .map(|k| {
            let end = last - (k - 1) * horizon;
            let start = end + 1 - horizon;
            FoldSplit { fold: k, train: (first, start - 1), holdout: (start, end) }
        })
        .collect())
}

/// Folds over the span of a history.
pub fn history_folds(history: &History, folds: u32, horizon: u32, min_train: u32) -> Result<Vec<FoldSplit>> {
    let (first, last) = history.week_span().ok_or(Error::InsufficientHistory {
        required: folds * horizon + min_train,
        available: 0,
    })?;
    timeseries_kfold(first, last, folds, horizon, min_train)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    pub group: String,
    pub depth: f64,
    /// Mean of per-fold WAPEs; absent when the cell has no support.
    pub wape: Option<f64>,
    pub support: usize,
    pub feasible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Depths each group may be priced at, with the accuracy table behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    pub threshold: f64,
    pub depths: Vec<f64>,
    pub cells: Vec<RegionCell>,
}

impl FeasibleRegion {
    /// Region from an already scored `(group, depth, wape)` table.
    pub fn from_wape_table(cells: &[(&str, f64, f64)], threshold: f64) -> Self {
        let mut depths: Vec<f64> = Vec::new();
        let cells = cells
            .iter()
            .map(|&(g, d, w)| {
                if !depths.iter().any(|x| (x - d).abs() <= DEPTH_EPS) {
                    depths.push(d);
                }
                RegionCell { group: g.to_string(), depth: d, wape: Some(w), support: 0, feasible: w < threshold, reason: None }
            })
            .collect();
        depths.sort_by(f64::total_cmp);
        FeasibleRegion { threshold, depths, cells }
    }

    /// Feasible depths of `group`, ascending.
    pub fn allowed(&self, group: &str) -> Vec<f64> {
        let mut out: Vec<f64> = self.cells.iter().filter(|c| c.group == group && c.feasible).map(|c| c.depth).collect();
        out.sort_by(f64::total_cmp);
        out
    }

    pub fn contains(&self, group: &str, depth: f64) -> bool {
        self.cells.iter().any(|c| c.group == group && c.feasible && (c.depth - depth).abs() <= DEPTH_EPS)
    }

    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.cells.iter().map(|c| c.group.clone()).collect();
        g.sort();
        g.dedup();
        g
    }

    pub fn cell(&self, group: &str, depth: f64) -> Option<&RegionCell> {
        self.cells.iter().find(|c| c.group == group && (c.depth - depth).abs() <= DEPTH_EPS)
    }

    /// Same scores judged against another threshold.
    pub fn with_threshold(&self, threshold: f64) -> Self {
        let mut next = self.clone();
        next.threshold = threshold;
        for c in &mut next.cells {
            c.feasible = c.wape.is_some_and(|w| w < threshold) && c.reason.is_none();
        }
        next
    }

    /// Depth-by-group WAPE table as delimited text; infeasible cells are
    /// suffixed with `*`, unsupported ones read `na*`.
    pub fn to_table_csv(&self) -> String {
        let groups = self.groups();
        let mut out = String::from("depth");
        for g in &groups {
            out.push(',');
            out.push_str(g);
        }
        out.push('\n');
        for &d in &self.depths {
            let _ = write!(out, "{d}");
            for g in &groups {
                let cell = match self.cell(g, d) {
                    Some(RegionCell { wape: Some(w), feasible, .. }) => {
                        format!("{w:.3}{}", if *feasible { "" } else { "*" })
                    }
                    _ => "na*".to_string(),
                };
                out.push(',');
                out.push_str(&cell);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionConfig {
    pub folds: u32,
    pub horizon: u32,
    pub min_train: u32,
    pub min_support: usize,
    pub threshold: f64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig {
            folds: 10,
            horizon: 5,
            min_train: DEFAULT_MIN_TRAIN_WEEKS,
            min_support: DEFAULT_MIN_SUPPORT,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Backtests `fit` over time-series folds and keeps the (group, depth) cells
/// whose mean holdout WAPE is under the threshold.
///
/// Holdout rows on markdown are bucketed to the nearest grid depth; rows
/// further than half a grid step outside the grid, and full-price rows, are
/// not scored.
pub fn build_feasible_region<M, F>(
    history: &History,
    fit: F,
    grid: &DepthSet,
    groups: &[String],
    config: &RegionConfig,
) -> Result<FeasibleRegion>
where
    M: DemandModel,
    F: Fn(&History) -> Result<M>,
{
    let splits = history_folds(history, config.folds, config.horizon, config.min_train)?;
    let depths = grid.depths().to_vec();
    let reach = half_step(&depths);
    // per cell: fold WAPEs and total support
    let mut scores: BTreeMap<(usize, usize), (Vec<f64>, usize)> = BTreeMap::new();

    for split in &splits {
        let model = fit(&history.window(split.train.0, split.train.1))?;
        let mut cells: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in history.records.iter().filter(|r| r.week >= split.holdout.0 && r.week <= split.holdout.1) {
            if r.depth <= DEPTH_EPS {
                continue;
            }
            let Some(g) = groups.iter().position(|g| **g == *r.group) else { continue };
            let nearest = grid.nearest(r.depth);
            if (nearest - r.depth).abs() > reach {
                continue;
            }
            let d = depths.iter().position(|&x| x == nearest).expect("nearest grid depth");
            let row = history.row(r);
            let q = Query { product_id: &r.product_id, group: &r.group, covariates: &row };
            let f = model.predict(&q, nearest)?;
            let cell = cells.entry((g, d)).or_default();
            cell.0.push(r.sales);
            cell.1.push(f);
        }
        for (key, (a, f)) in cells {
            let entry = scores.entry(key).or_default();
            entry.1 += a.len();
            if let Ok(w) = wape(&a, &f) {
                entry.0.push(w);
            }
        }
    }

    let mut cells = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        for (di, &d) in depths.iter().enumerate() {
            let (fold_wapes, support) = scores.get(&(gi, di)).cloned().unwrap_or_default();
            let mean = (!fold_wapes.is_empty()).then(|| fold_wapes.iter().sum::<f64>() / fold_wapes.len() as f64);
            let reason = if support < config.min_support || mean.is_none() { Some("no support".to_string()) } else { None };
            let feasible = reason.is_none() && mean.is_some_and(|w| w < config.threshold);
            cells.push(RegionCell { group: g.clone(), depth: d, wape: mean, support, feasible, reason });
        }
    }
    Ok(FeasibleRegion { threshold: config.threshold, depths, cells })
}

fn half_step(depths: &[f64]) -> f64 {
    let step = depths.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if step.is_finite() {
        step / 2.0 + DEPTH_EPS
    } else {
        0.05
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub products: usize,
    /// Share of products whose curve never decreases over the full grid.
    pub non_decreasing: f64,
    /// Share of assessable products whose curve strictly increases across
    /// their group's feasible depths; absent when none can be assessed.
    pub strictly_increasing_in_region: Option<f64>,
    pub in_region_products: usize,
    pub violators: Vec<String>,
    pub in_region_violators: Vec<String>,
}

/// Checks every product's forecast curve for monotonicity in depth.
///
/// Products with fewer than two feasible depths are not assessed in-region.
pub fn audit_monotonicity(
    model: &dyn DemandModel,
    catalogue: &Catalogue,
    grid: &DepthSet,
    region: Option<&FeasibleRegion>,
) -> Result<AuditReport> {
    let mut violators = Vec::new();
    let mut in_region_violators = Vec::new();
    let mut assessed = 0usize;
    for p in catalogue.products() {
        let curve = predict_curve(model, &Query::from(p), grid)?;
        if curve.windows(2).any(|w| w[1].1 < w[0].1) {
            violators.push(p.id.clone());
        }
        let allowed: Vec<&(f64, f64)> = match region {
            Some(r) => curve.iter().filter(|(d, _)| r.contains(&p.group, *d)).collect(),
            None => curve.iter().collect(),
        };
        if allowed.len() >= 2 {
            assessed += 1;
            if allowed.windows(2).any(|w| w[1].1 <= w[0].1) {
                in_region_violators.push(p.id.clone());
            }
        }
    }
    let n = catalogue.len();
    Ok(AuditReport {
        products: n,
        non_decreasing: if n == 0 { 1.0 } else { 1.0 - violators.len() as f64 / n as f64 },
        strictly_increasing_in_region: (assessed > 0)
            .then(|| 1.0 - in_region_violators.len() as f64 / assessed as f64),
        in_region_products: assessed,
        violators,
        in_region_violators,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{fit_baseline, generate_catalogue, PredictionTable, WorldConfig};

    #[test]
    fn wape_examples() {
        assert_eq!(wape(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let w = wape(&[10.0, 20.0, 30.0], &[12.0, 18.0, 33.0]).unwrap();
        assert!((w - 7.0 / 60.0).abs() < 1e-12);
        assert_eq!(wape(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(wape(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::UndefinedWape)));
        assert!(wape(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn fold_arithmetic() {
        let f = timeseries_kfold(1, 104, 10, 5, DEFAULT_MIN_TRAIN_WEEKS).unwrap();
        assert_eq!(f.len(), 10);
        assert_eq!(f[0].holdout, (100, 104));
        assert_eq!(f[9].holdout, (55, 59));
        assert_eq!(f[9].train, (1, 54));
        let one = timeseries_kfold(1, 20, 1, 4, 8).unwrap();
        assert_eq!(one, vec![FoldSplit { fold: 1, train: (1, 16), holdout: (17, 20) }]);
        match timeseries_kfold(1, 52, 10, 5, DEFAULT_MIN_TRAIN_WEEKS) {
            Err(Error::InsufficientHistory { required, available }) => assert_eq!((required, available), (58, 52)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn threshold_zero_gives_empty_region() {
        let r = FeasibleRegion::from_wape_table(&[("A", 0.2, 0.1), ("A", 0.3, 0.0)], 0.55);
        assert_eq!(r.allowed("A"), vec![0.2, 0.3]);
        assert!(r.with_threshold(0.0).allowed("A").is_empty());
    }

    #[test]
    fn region_on_synthetic_history() {
        let cfg = WorldConfig { products: 600, history_weeks: 40, ..WorldConfig::default() };
        let (cat, history, _) = generate_catalogue(&cfg, 2).unwrap();
        let grid = DepthSet::range(0.1, 0.7, 0.1).unwrap();
        let groups: Vec<String> = cat.groups().into_iter().map(String::from).collect();
        let rc = RegionConfig { folds: 3, horizon: 5, ..RegionConfig::default() };
        let a = build_feasible_region(&history, fit_baseline, &grid, &groups, &rc).unwrap();
        let b = build_feasible_region(&history, fit_baseline, &grid, &groups, &rc).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), groups.len() * 7);
        for c in &a.cells {
            if c.support < rc.min_support {
                assert!(!c.feasible);
                assert_eq!(c.reason.as_deref(), Some("no support"));
            }
        }
    }

    #[test]
    fn broken_adapter_is_flagged() {
        let cfg = WorldConfig { products: 100, history_weeks: 10, ..WorldConfig::default() };
        let (cat, _, _) = generate_catalogue(&cfg, 4).unwrap();
        let grid = DepthSet::range(0.1, 0.5, 0.1).unwrap();
        let mut table = PredictionTable::new();
        for (i, p) in cat.products().iter().enumerate() {
            for (j, &d) in grid.depths().iter().enumerate() {
                let s = if i == 17 && j == 3 { 0.5 } else { 1.0 + j as f64 };
                table.insert(p.id.clone(), d, s).unwrap();
            }
        }
        let report = audit_monotonicity(&table, &cat, &grid, None).unwrap();
        assert!((report.non_decreasing - 0.99).abs() < 1e-12);
        assert_eq!(report.violators, vec![cat.products()[17].id.clone()]);
        assert_eq!(report.strictly_increasing_in_region, Some(0.99));
    }
}
