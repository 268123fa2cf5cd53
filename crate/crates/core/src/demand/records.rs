use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default share of the largest training targets to clamp.
pub const DEFAULT_WINSOR_PERCENTILE: f64 = 0.005;

/// Named numeric inputs for a forecast.
pub trait Covariates {
    fn value(&self, name: &str) -> Option<f64>;
}

impl Covariates for BTreeMap<String, f64> {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

/// Positional feature values read through a shared schema.
#[derive(Debug, Clone, Copy)]
pub struct FeatureRow<'a> {
    pub names: &'a [String],
    pub values: &'a [f64],
}

impl Covariates for FeatureRow<'_> {
    fn value(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

/// One product-week of observed sales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub product_id: Arc<str>,
    pub group: Arc<str>,
    pub week: u32,
    pub depth: f64,
    pub features: Vec<f64>,
    pub sales: f64,
}

impl TrainingRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.sales >= 0.0) {
            return Err(Error::invalid(format!("record {}@{}: negative sales", self.product_id, self.week)));
        }
        if !(0.0..=1.0).contains(&self.depth) {
            return Err(Error::invalid(format!("record {}@{}: depth outside [0, 1]", self.product_id, self.week)));
        }
        Ok(())
    }
}

/// Training records sharing one feature schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub features: Vec<String>,
    pub records: Vec<TrainingRecord>,
}

impl History {
    pub fn new(features: Vec<String>, records: Vec<TrainingRecord>) -> Result<Self> {
        for r in &records {
            r.validate()?;
            if r.features.len() != features.len() {
                return Err(Error::invalid(format!(
                    "record {}@{} has {} features, schema has {}",
                    r.product_id,
                    r.week,
                    r.features.len(),
                    features.len()
                )));
            }
        }
        Ok(History { features, records })
    }

    pub fn row<'a>(&'a self, record: &'a TrainingRecord) -> FeatureRow<'a> {
        FeatureRow { names: &self.features, values: &record.features }
    }

    /// First and last week present.
    pub fn week_span(&self) -> Option<(u32, u32)> {
        let min = self.records.iter().map(|r| r.week).min()?;
        let max = self.records.iter().map(|r| r.week).max()?;
        Some((min, max))
    }

    /// Records whose week lies in `[first, last]`.
    pub fn window(&self, first: u32, last: u32) -> History {
        History {
            features: self.features.clone(),
            records: self.records.iter().filter(|r| r.week >= first && r.week <= last).cloned().collect(),
        }
    }

    pub fn winsorized(&self, upper_percentile: f64) -> History {
        History { features: self.features.clone(), records: winsorize_targets(&self.records, upper_percentile) }
    }
}

/// Clamps sales above the `1 - upper_percentile` quantile down to it.
///
/// The clamp is one-sided and global. Because `log(1 + s)` is monotone the
/// clamp is identical in sales or log-sales space. Order and count are kept.
pub fn winsorize_targets(records: &[TrainingRecord], upper_percentile: f64) -> Vec<TrainingRecord> {
    if records.is_empty() || !(upper_percentile > 0.0) {
        return records.to_vec();
    }
    let cap = winsor_cap(records, upper_percentile);
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.sales > cap {
                r.sales = cap;
            }
            r
        })
        .collect()
}

/// The clamp value `winsorize_targets` would use.
///
/// An order statistic rather than an interpolated quantile, so clamping
/// leaves the cap unchanged and a second pass is a no-op.
pub fn winsor_cap(records: &[TrainingRecord], upper_percentile: f64) -> f64 {
    let mut sales: Vec<f64> = records.iter().map(|r| r.sales).collect();
    sales.sort_by(f64::total_cmp);
    let q = 1.0 - upper_percentile.clamp(0.0, 1.0);
    sales[(q * (sales.len() - 1) as f64).ceil() as usize]
}
