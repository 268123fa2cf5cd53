//! Demand models: the pluggable interface, the built-in monotone learner and
//! a file-backed adapter for externally trained models.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::records::{Covariates, History};
use crate::domain::{DepthSet, Product, DEPTH_EPS};
use crate::error::{Error, Result};

/// Ridge penalty per observation on standardized columns.
const RIDGE: f64 = 1e-6;

/// What a forecast is asked about.
#[derive(Clone, Copy)]
pub struct Query<'a> {
    pub product_id: &'a str,
    pub group: &'a str,
    pub covariates: &'a dyn Covariates,
}

impl<'a> From<&'a Product> for Query<'a> {
    fn from(p: &'a Product) -> Self {
        Query { product_id: &p.id, group: &p.group, covariates: &p.covariates }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub kind: String,
    pub features: Vec<String>,
    /// First and last training week, when known.
    pub training_window: Option<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Expected weekly unit sales as a function of depth.
///
/// Implementations must return finite, non-negative values. Monotonicity in
/// depth is expected but is audited rather than assumed.
pub trait DemandModel: Send + Sync {
    fn predict(&self, query: &Query<'_>, depth: f64) -> Result<f64>;

    fn metadata(&self) -> ModelMetadata;
}

/// One prediction per grid depth, in grid order.
pub fn predict_curve(model: &dyn DemandModel, query: &Query<'_>, grid: &DepthSet) -> Result<Vec<(f64, f64)>> {
    grid.depths().iter().map(|&d| Ok((d, model.predict(query, d)?))).collect()
}

/// Log-linear fit for one product group: `log(1 + s) = a + b.x + c*depth`, `c >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub depth_coefficient: f64,
    pub observations: usize,
}

impl GroupFit {
    fn zero(features: usize) -> Self {
        GroupFit { intercept: 0.0, coefficients: vec![0.0; features], depth_coefficient: 0.0, observations: 0 }
    }

    fn linear(&self, x: &[f64], depth: f64) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>() + self.depth_coefficient * depth
    }
}

/// Built-in learner: per-group ridge regression on `log(1 + sales)` with a
/// depth coefficient constrained to be non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub features: Vec<String>,
    pub groups: BTreeMap<String, GroupFit>,
    /// Fit over all groups, used for groups unseen in training.
    pub pooled: GroupFit,
    pub training_window: Option<(u32, u32)>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl BaselineModel {
    fn fit_for(&self, group: &str) -> &GroupFit {
        self.groups.get(group).unwrap_or(&self.pooled)
    }

    pub fn depth_coefficient(&self, group: &str) -> f64 {
        self.fit_for(group).depth_coefficient
    }

    fn gather(&self, covariates: &dyn Covariates) -> Result<Vec<f64>> {
        self.features
            .iter()
            .map(|name| {
                covariates.value(name).ok_or_else(|| Error::invalid(format!("missing covariate `{name}`")))
            })
            .collect()
    }
}

impl DemandModel for BaselineModel {
    fn predict(&self, query: &Query<'_>, depth: f64) -> Result<f64> {
        let x = self.gather(query.covariates)?;
        let z = self.fit_for(query.group).linear(&x, depth);
        Ok((z.exp() - 1.0).max(0.0))
    }

    fn metadata(&self) -> ModelMetadata {
        ModelMetadata {
            kind: "baseline".into(),
            features: self.features.clone(),
            training_window: self.training_window,
            warnings: self.warnings.clone(),
        }
    }
}

/// Accumulated normal equations over standardized columns.
struct Design {
    cols: usize,
    n: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

fn fit_rows<'a>(
    rows: impl Iterator<Item = (&'a [f64], f64, f64)> + Clone,
    features: usize,
    with_depth: bool,
) -> GroupFit {
    let cols = features + usize::from(with_depth);
    let column = |x: &[f64], d: f64, j: usize| if j < features { x[j] } else { d };

    let mut design = Design { cols, n: 0, sum: vec![0.0; cols], sumsq: vec![0.0; cols] };
    let mut ysum = 0.0;
    for (x, d, y) in rows.clone() {
        design.n += 1;
        ysum += y;
        for j in 0..cols {
            let v = column(x, d, j);
            design.sum[j] += v;
            design.sumsq[j] += v * v;
        }
    }
    let n = design.n;
    if n == 0 {
        return GroupFit::zero(features);
    }
    let nf = n as f64;
    let ymean = ysum / nf;
    let means: Vec<f64> = design.sum.iter().map(|s| s / nf).collect();
    let scales: Vec<f64> = (0..design.cols)
        .map(|j| (design.sumsq[j] / nf - means[j] * means[j]).max(0.0).sqrt())
        .collect();
    // Columns with no variation carry no information within this group.
    let active: Vec<usize> = (0..cols).filter(|&j| scales[j] > 1e-12).collect();

    let q = active.len();
    let mut xtx = DMatrix::<f64>::zeros(q, q);
    let mut xty = DVector::<f64>::zeros(q);
    let mut z = vec![0.0; q];
    for (x, d, y) in rows {
        for (a, &j) in active.iter().enumerate() {
            z[a] = (column(x, d, j) - means[j]) / scales[j];
        }
        let yc = y - ymean;
        for a in 0..q {
            xty[a] += z[a] * yc;
            for b in 0..=a {
                xtx[(a, b)] += z[a] * z[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
        xtx[(a, a)] += RIDGE * nf;
    }
    let beta = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => xtx.lu().solve(&xty).unwrap_or_else(|| DVector::zeros(q)),
    };

    let mut fit = GroupFit::zero(features);
    fit.observations = n;
    fit.intercept = ymean;
    for (a, &j) in active.iter().enumerate() {
        let b = beta[a] / scales[j];
        fit.intercept -= b * means[j];
        if j < features {
            fit.coefficients[j] = b;
        } else {
            fit.depth_coefficient = b;
        }
    }
    fit
}

fn fit_constrained<'a>(
    rows: impl Iterator<Item = (&'a [f64], f64, f64)> + Clone,
    features: usize,
    distinct_depths: usize,
    label: &str,
    warnings: &mut Vec<String>,
) -> GroupFit {
    if distinct_depths < 2 {
        warnings.push(format!("{label}: fewer than two distinct depths; depth coefficient fixed at 0"));
        return fit_rows(rows, features, false);
    }
    let fit = fit_rows(rows.clone(), features, true);
    if fit.depth_coefficient >= 0.0 {
        return fit;
    }
    log::info!("{label}: unconstrained depth slope {:.4} clamped to 0", fit.depth_coefficient);
    fit_rows(rows, features, false)
}

/// Fits the built-in model on `log(1 + sales)`, one regression per group.
pub fn fit_baseline(history: &History) -> Result<BaselineModel> {
    if history.records.is_empty() {
        return Err(Error::invalid("no training records"));
    }
    let p = history.features.len();
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in history.records.iter().enumerate() {
        by_group.entry(&r.group).or_default().push(i);
    }
    let depth_key = |d: f64| (d * 1e6).round() as i64;
    let row = |i: &usize| {
        let r = &history.records[*i];
        (r.features.as_slice(), r.depth, r.sales.ln_1p())
    };

    let mut warnings = Vec::new();
    let mut groups = BTreeMap::new();
    for (g, idx) in &by_group {
        let distinct: BTreeSet<i64> = idx.iter().map(|&i| depth_key(history.records[i].depth)).collect();
        let fit = fit_constrained(idx.iter().map(row), p, distinct.len(), &format!("group {g}"), &mut warnings);
        groups.insert(g.to_string(), fit);
    }
    let all: Vec<usize> = (0..history.records.len()).collect();
    let distinct: BTreeSet<i64> = history.records.iter().map(|r| depth_key(r.depth)).collect();
    let pooled = fit_constrained(all.iter().map(row), p, distinct.len(), "pooled", &mut warnings);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(BaselineModel {
        features: history.features.clone(),
        groups,
        pooled,
        training_window: history.week_span(),
        warnings,
    })
}

/// Externally produced predictions keyed by `(product_id, depth)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionTable {
    entries: HashMap<String, Vec<(f64, f64)>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct PredictionRow {
    product_id: String,
    depth: f64,
    expected_sales: f64,
}

impl PredictionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, product_id: impl Into<String>, depth: f64, expected_sales: f64) -> Result<()> {
        let product_id = product_id.into();
        if !(expected_sales.is_finite() && expected_sales >= 0.0) {
            return Err(Error::invalid(format!(
                "prediction for `{product_id}` at depth {depth} must be finite and non-negative"
            )));
        }
        if !(0.0..=1.0).contains(&depth) {
            return Err(Error::invalid(format!("prediction depth {depth} outside [0, 1]")));
        }
        let curve = self.entries.entry(product_id).or_default();
        match curve.iter_mut().find(|(d, _)| (d - depth).abs() <= DEPTH_EPS) {
            Some(slot) => slot.1 = expected_sales,
            None => curve.push((depth, expected_sales)),
        }
        Ok(())
    }

    /// Reads `product_id,depth,expected_sales` rows, rejecting negative or
    /// non-finite predictions.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut table = PredictionTable::new();
        let mut rdr = csv::Reader::from_reader(reader);
        for (i, row) in rdr.deserialize::<PredictionRow>().enumerate() {
            let row = row.map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
            table
                .insert(row.product_id, row.depth, row.expected_sales)
                .map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl DemandModel for PredictionTable {
    fn predict(&self, query: &Query<'_>, depth: f64) -> Result<f64> {
        self.entries
            .get(query.product_id)
            .and_then(|curve| curve.iter().find(|(d, _)| (d - depth).abs() <= DEPTH_EPS))
            .map(|&(_, s)| s)
            .ok_or_else(|| Error::MissingPrediction { product: query.product_id.to_string(), depth })
    }

    fn metadata(&self) -> ModelMetadata {
        ModelMetadata { kind: "prediction-table".into(), ..Default::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::records::TrainingRecord;

    fn history(rows: &[(f64, f64, f64)]) -> History {
        // (feature, depth, sales)
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, &(x, d, s))| TrainingRecord {
                product_id: format!("p{}", i % 10).into(),
                group: "g".into(),
                week: i as u32,
                depth: d,
                features: vec![x],
                sales: s,
            })
            .collect();
        History::new(vec!["x".into()], records).unwrap()
    }

    fn covs(x: f64) -> BTreeMap<String, f64> {
        [("x".to_string(), x)].into_iter().collect()
    }

    #[test]
    fn all_zero_sales_predict_zero() {
        let rows: Vec<_> = (0..50).map(|i| (i as f64, (i % 5) as f64 / 10.0, 0.0)).collect();
        let m = fit_baseline(&history(&rows)).unwrap();
        let c = covs(3.0);
        let q = Query { product_id: "p", group: "g", covariates: &c };
        for d in [0.0, 0.3, 0.9] {
            assert_eq!(m.predict(&q, d).unwrap(), 0.0);
        }
    }

    #[test]
    fn confounded_negative_slope_is_clamped() {
        // deeper depth, fewer sales, nothing else to explain it
        let rows: Vec<_> = (0..200).map(|i| {
            let d = (i % 8) as f64 / 10.0;
            (((i * 7) % 13) as f64, d, 100.0 * (-2.0 * d).exp())
        }).collect();
        let m = fit_baseline(&history(&rows)).unwrap();
        assert_eq!(m.depth_coefficient("g"), 0.0);
        let c = covs(1.0);
        let q = Query { product_id: "p", group: "g", covariates: &c };
        let grid = DepthSet::range(0.1, 0.8, 0.1).unwrap();
        let curve = predict_curve(&m, &q, &grid).unwrap();
        assert!(curve.windows(2).all(|w| (w[1].1 - w[0].1).abs() < 1e-9));
    }

    #[test]
    fn single_depth_warns_and_zeroes_slope() {
        let rows: Vec<_> = (0..30).map(|i| (i as f64, 0.2, 10.0 + i as f64)).collect();
        let m = fit_baseline(&history(&rows)).unwrap();
        assert_eq!(m.depth_coefficient("g"), 0.0);
        assert!(!m.warnings.is_empty());
    }

    #[test]
    fn exact_log_linear_data_is_recovered() {
        let rows: Vec<_> = (0..400)
            .map(|i| {
                let x = (i % 17) as f64 / 4.0;
                let d = (i % 7) as f64 / 10.0;
                (x, d, (1.0 + 0.3 * x + 1.5 * d).exp() - 1.0)
            })
            .collect();
        let m = fit_baseline(&history(&rows)).unwrap();
        let f = &m.groups["g"];
        assert!((f.depth_coefficient - 1.5).abs() < 1e-3, "{}", f.depth_coefficient);
        assert!((f.coefficients[0] - 0.3).abs() < 1e-3);
        assert!((f.intercept - 1.0).abs() < 1e-3);
    }

    #[test]
    fn missing_covariate_is_an_error() {
        let rows: Vec<_> = (0..30).map(|i| (i as f64, (i % 3) as f64 / 10.0, 5.0)).collect();
        let m = fit_baseline(&history(&rows)).unwrap();
        let empty = BTreeMap::new();
        let q = Query { product_id: "p", group: "g", covariates: &empty };
        assert!(m.predict(&q, 0.2).is_err());
    }

    #[test]
    fn prediction_table_lookup_and_rejection() {
        let csv = "product_id,depth,expected_sales\na,0.2,10\na,0.3,12\nb,0.2,3\n";
        let t = PredictionTable::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.len(), 3);
        let empty = BTreeMap::new();
        let q = Query { product_id: "a", group: "g", covariates: &empty };
        assert_eq!(t.predict(&q, 0.3).unwrap(), 12.0);
        assert!(matches!(t.predict(&q, 0.4), Err(Error::MissingPrediction { .. })));

        let bad = "product_id,depth,expected_sales\na,0.2,-1\n";
        assert!(matches!(PredictionTable::from_csv(bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let nan = "product_id,depth,expected_sales\na,0.2,NaN\n";
        assert!(PredictionTable::from_csv(nan.as_bytes()).is_err());
    }
}
