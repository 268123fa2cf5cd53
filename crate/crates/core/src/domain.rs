//! Retail data model and the three operational metrics: cover, stock value
//! and stock depth.
//!
//! Prices are held in minor currency units ([`Money`]) so that ingestion is
//! exact; metric arithmetic happens in `f64`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used when matching a depth to a [`DepthSet`] grid point.
pub const DEPTH_EPS: f64 = 1e-9;

/// Currency amount in minor units (pence, cents).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Money(pub i64);

impl Money {
    pub fn from_major(value: f64) -> Self {
        Money((value * 100.0).round() as i64)
    }

    pub fn minor(self) -> i64 {
        self.0
    }

    pub fn as_major(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub full_price: Money,
    pub stock_units: u64,
    pub sold_units: u64,
    pub group: String,
    pub unit_cost: Money,
    #[serde(default)]
    pub covariates: BTreeMap<String, f64>,
}

impl Product {
    pub fn new(
        id: impl Into<String>,
        full_price: Money,
        stock_units: u64,
        sold_units: u64,
        group: impl Into<String>,
        unit_cost: Money,
    ) -> Self {
        Product {
            id: id.into(),
            full_price,
            stock_units,
            sold_units,
            group: group.into(),
            unit_cost,
            covariates: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("product id is empty"));
        }
        if self.full_price.0 <= 0 {
            return Err(Error::invalid(format!("product `{}`: full_price must be > 0", self.id)));
        }
        if self.unit_cost.0 < 0 {
            return Err(Error::invalid(format!("product `{}`: unit_cost must be >= 0", self.id)));
        }
        if self.unit_cost > self.full_price {
            log::warn!("product `{}`: unit cost exceeds full price", self.id);
        }
        Ok(())
    }

    /// Weeks of cover at the current rate of sale.
    pub fn cover(&self) -> f64 {
        cover(self.stock_units, self.sold_units)
    }

    /// Full-price value of the stock on hand, `f_p * k_p`.
    pub fn stock_value(&self) -> f64 {
        self.full_price.as_major() * self.stock_units as f64
    }

    /// Shelf price after applying `depth`.
    pub fn discounted_price(&self, depth: f64) -> f64 {
        self.full_price.as_major() * (1.0 - depth)
    }
}

/// `stock / sold`; zero stock is zero cover and a zero-seller with stock is
/// infinite cover.
pub fn cover(stock_units: u64, sold_units: u64) -> f64 {
    if stock_units == 0 {
        0.0
    } else if sold_units == 0 {
        f64::INFINITY
    } else {
        stock_units as f64 / sold_units as f64
    }
}

/// Sum of `f_p * k_p`. Depth plays no part.
pub fn stock_value<'a>(products: impl IntoIterator<Item = &'a Product>) -> f64 {
    products.into_iter().map(Product::stock_value).sum()
}

/// Stock-weighted mean depth over (value, depth) pairs.
pub fn stock_depth_weighted(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<f64> {
    let (mut total, mut discounted) = (0.0, 0.0);
    for (value, depth) in pairs {
        total += value;
        discounted += (1.0 - depth) * value;
    }
    if total <= 0.0 {
        return Err(Error::UndefinedStockDepth);
    }
    Ok(1.0 - discounted / total)
}

/// `1 - sum((1-d) f k) / sum(f k)` over the assigned products.
pub fn stock_depth(assignment: &Assignment, catalogue: &Catalogue) -> Result<f64> {
    let mut pairs = Vec::with_capacity(assignment.len());
    for (id, depth) in assignment.iter() {
        let product = catalogue.get(id).ok_or_else(|| Error::UnknownProduct(id.to_string()))?;
        pairs.push((product.stock_value(), depth));
    }
    stock_depth_weighted(pairs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogueDoc {
    #[serde(default)]
    period: i64,
    products: Vec<Product>,
}

/// Immutable product universe for one period.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "CatalogueDoc", into = "CatalogueDoc")]
pub struct Catalogue {
    period: i64,
    products: Vec<Product>,
    index: HashMap<String, usize>,
}

impl TryFrom<CatalogueDoc> for Catalogue {
    type Error = Error;

    fn try_from(doc: CatalogueDoc) -> Result<Self> {
        Catalogue::new(doc.period, doc.products)
    }
}

impl From<Catalogue> for CatalogueDoc {
    fn from(c: Catalogue) -> Self {
        CatalogueDoc { period: c.period, products: c.products }
    }
}

impl PartialEq for Catalogue {
    fn eq(&self, other: &Self) -> bool {
        self.period == other.period && self.products == other.products
    }
}

impl Catalogue {
    pub fn new(period: i64, products: Vec<Product>) -> Result<Self> {
        let mut index = HashMap::with_capacity(products.len());
        for (i, p) in products.iter().enumerate() {
            p.validate()?;
            if index.insert(p.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate product id `{}`", p.id)));
            }
        }
        Ok(Catalogue { period, products, index })
    }

    pub fn period(&self) -> i64 {
        self.period
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Product> {
        self.index.get(id).map(|&i| &self.products[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn groups(&self) -> BTreeSet<&str> {
        self.products.iter().map(|p| p.group.as_str()).collect()
    }

    pub fn total_stock_value(&self) -> f64 {
        stock_value(&self.products)
    }

    /// Catalogue restricted to the products `keep` accepts, preserving order.
    pub fn filtered(&self, mut keep: impl FnMut(&Product) -> bool) -> Catalogue {
        let products: Vec<Product> = self.products.iter().filter(|p| keep(p)).cloned().collect();
        let index = products.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect();
        Catalogue { period: self.period, products, index }
    }
}

/// Discretized, strictly increasing depths in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DepthSet(Vec<f64>);

impl TryFrom<Vec<f64>> for DepthSet {
    type Error = Error;

    fn try_from(depths: Vec<f64>) -> Result<Self> {
        DepthSet::new(depths)
    }
}

impl From<DepthSet> for Vec<f64> {
    fn from(d: DepthSet) -> Self {
        d.0
    }
}

impl DepthSet {
    pub fn new(depths: Vec<f64>) -> Result<Self> {
        if depths.is_empty() {
            return Err(Error::invalid("depth set is empty"));
        }
        for w in depths.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("depth set must be strictly increasing"));
            }
        }
        if depths.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::invalid("depths must lie in [0, 1]"));
        }
        Ok(DepthSet(depths))
    }

    /// `start, start+step, ... <= end`, rounded to 1e-9.
    pub fn range(start: f64, end: f64, step: f64) -> Result<Self> {
        if step <= 0.0 {
            return Err(Error::invalid("depth step must be positive"));
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        let depths = (0..=n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect();
        DepthSet::new(depths)
    }

    pub fn depths(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, depth: f64) -> bool {
        self.0.iter().any(|d| (d - depth).abs() <= DEPTH_EPS)
    }

    /// Nearest grid depth; ties resolve to the shallower point.
    pub fn nearest(&self, depth: f64) -> f64 {
        let mut best = self.0[0];
        for &d in &self.0[1..] {
            if (d - depth).abs() < (best - depth).abs() - DEPTH_EPS {
                best = d;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        *self.0.last().expect("non-empty")
    }
}

/// Products in a markdown event and their depths. Membership implies depth > 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct Assignment(BTreeMap<String, f64>);

impl TryFrom<BTreeMap<String, f64>> for Assignment {
    type Error = Error;

    fn try_from(entries: BTreeMap<String, f64>) -> Result<Self> {
        let mut a = Assignment::new();
        for (id, d) in entries {
            a.insert(id, d)?;
        }
        Ok(a)
    }
}

impl From<Assignment> for BTreeMap<String, f64> {
    fn from(a: Assignment) -> Self {
        a.0
    }
}

impl Assignment {
    pub fn new() -> Self {
        Assignment(BTreeMap::new())
    }

    pub fn insert(&mut self, id: impl Into<String>, depth: f64) -> Result<()> {
        let id = id.into();
        if !(depth > 0.0 && depth <= 1.0) {
            return Err(Error::invalid(format!("depth {depth} for `{id}` outside (0, 1]")));
        }
        self.0.insert(id, depth);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.0.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0.contains_key(id)
    }

    pub fn remove(&mut self, id: &str) -> Option<f64> {
        self.0.remove(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.0.keys().map(String::as_str)
    }

    pub fn validate(&self, catalogue: &Catalogue) -> Result<()> {
        match self.ids().find(|id| catalogue.get(id).is_none()) {
            Some(id) => Err(Error::UnknownProduct(id.to_string())),
            None => Ok(()),
        }
    }

    pub fn stock_value(&self, catalogue: &Catalogue) -> Result<f64> {
        let mut total = 0.0;
        for id in self.ids() {
            total += catalogue.get(id).ok_or_else(|| Error::UnknownProduct(id.to_string()))?.stock_value();
        }
        Ok(total)
    }

    pub fn stock_depth(&self, catalogue: &Catalogue) -> Result<f64> {
        stock_depth(self, catalogue)
    }
}

impl FromIterator<(String, f64)> for Assignment {
    /// Panics on a depth outside `(0, 1]`; use [`Assignment::insert`] for fallible construction.
    fn from_iter<T: IntoIterator<Item = (String, f64)>>(iter: T) -> Self {
        let mut a = Assignment::new();
        for (id, d) in iter {
            a.insert(id, d).expect("valid depth");
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Four products A-D with hand-checked metrics.
    fn worked_example() -> Catalogue {
        Catalogue::new(
            0,
            vec![
                Product::new("A", Money(700), 100, 10, "g", Money(300)),
                Product::new("B", Money(1200), 100, 5, "g", Money(500)),
                Product::new("C", Money(800), 100, 20, "g", Money(300)),
                Product::new("D", Money(1000), 100, 50, "g", Money(400)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn cover_conventions() {
        assert_eq!(cover(100, 10), 10.0);
        assert_eq!(cover(100, 5), 20.0);
        assert_eq!(cover(100, 0), f64::INFINITY);
        assert_eq!(cover(0, 0), 0.0);
        assert_eq!(cover(0, 7), 0.0);
    }

    #[test]
    fn worked_example_metrics() {
        let cat = worked_example();
        let covers: Vec<f64> = cat.products().iter().map(Product::cover).collect();
        assert_eq!(covers, vec![10.0, 20.0, 5.0, 2.0]);

        let a: Assignment =
            [("A".to_string(), 0.30), ("B".to_string(), 0.50), ("C".to_string(), 0.10)].into_iter().collect();
        assert_eq!(a.stock_value(&cat).unwrap(), 2700.0);
        let m = a.stock_depth(&cat).unwrap();
        assert!((m - 890.0 / 2700.0).abs() < 1e-12);
        assert!((m - 0.32963).abs() < 1e-5);
        assert!((cat.get("A").unwrap().discounted_price(0.3) - 4.9).abs() < 1e-12);
    }

    #[test]
    fn stock_value_edge_cases() {
        assert_eq!(stock_value(std::iter::empty()), 0.0);
        let p = Product::new("x", Money(1000), 100, 1, "g", Money(0));
        assert_eq!(stock_value([&p]), 1000.0);
    }

    #[test]
    fn empty_assignment_has_no_depth() {
        let cat = worked_example();
        assert!(matches!(stock_depth(&Assignment::new(), &cat), Err(Error::UndefinedStockDepth)));
    }

    #[test]
    fn single_and_uniform_depths() {
        let cat = worked_example();
        let mut a = Assignment::new();
        a.insert("B", 0.4).unwrap();
        assert!((a.stock_depth(&cat).unwrap() - 0.4).abs() < 1e-12);
        for id in ["A", "C", "D"] {
            a.insert(id, 0.4).unwrap();
        }
        assert!((a.stock_depth(&cat).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn assignment_rejects_zero_depth() {
        let mut a = Assignment::new();
        assert!(a.insert("A", 0.0).is_err());
        assert!(a.insert("A", 1.2).is_err());
        assert!(a.insert("A", 1.0).is_ok());
    }

    #[test]
    fn catalogue_rejects_duplicates_and_bad_prices() {
        let p = Product::new("x", Money(1000), 1, 1, "g", Money(0));
        assert!(Catalogue::new(0, vec![p.clone(), p.clone()]).is_err());
        let bad = Product::new("y", Money(0), 1, 1, "g", Money(0));
        assert!(Catalogue::new(0, vec![bad]).is_err());
        // clearance below cost is allowed
        let below = Product::new("z", Money(100), 1, 1, "g", Money(500));
        assert!(Catalogue::new(0, vec![below]).is_ok());
    }

    #[test]
    fn depth_set_grid() {
        let d = DepthSet::range(0.2, 0.8, 0.1).unwrap();
        assert_eq!(d.depths(), &[0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]);
        assert!(d.contains(0.3 + 1e-12));
        assert_eq!(d.nearest(0.34), 0.3);
        assert_eq!(d.nearest(0.25), 0.2);
        assert!(DepthSet::new(vec![0.3, 0.2]).is_err());
        assert!(DepthSet::new(vec![0.3, 1.2]).is_err());
    }

    #[test]
    fn catalogue_json_round_trip_is_exact() {
        let cat = worked_example();
        let text = serde_json::to_string(&cat).unwrap();
        let back: Catalogue = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cat);
        assert_eq!(back.get("C").unwrap().full_price, Money(800));
    }
}
