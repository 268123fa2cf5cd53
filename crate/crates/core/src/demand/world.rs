//! Synthetic retail world with known demand, for desk-scale experiments.
//!
//! Every product has a ground-truth weekly sales rate that rises
//! exponentially with depth. History is generated under a logged pricing
//! policy that gives poorer sellers deeper discounts, so naive fits see a
//! spurious negative depth effect.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use super::model::{DemandModel, ModelMetadata, Query};
use super::records::{History, TrainingRecord};
use crate::domain::{Assignment, Catalogue, DepthSet, Money, Product};
use crate::error::{Error, Result};

/// Weeks of sales behind the velocity feature.
const VELOCITY_WINDOW: u32 = 4;

pub const FEATURE_LOG_PRICE: &str = "log_price";
pub const FEATURE_VELOCITY: &str = "log_velocity";
pub const FEATURE_SEASON_SIN: &str = "season_sin";
pub const FEATURE_SEASON_COS: &str = "season_cos";
pub const FEATURE_WEEKS_ON_SITE: &str = "weeks_on_site";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub products: usize,
    pub groups: usize,
    pub history_weeks: u32,
    pub price_median: f64,
    pub price_sigma: f64,
    /// Unit cost as a share of full price, drawn uniformly from this range.
    pub cost_share: (f64, f64),
    /// Median full-price weekly sales rate.
    pub rate_median: f64,
    pub rate_sigma: f64,
    pub stock_median: f64,
    pub stock_sigma: f64,
    /// Ground-truth elasticity (log-sales per unit depth) range.
    pub elasticity: (f64, f64),
    /// Weight of sales performance in a product's elasticity, in [0, 1]:
    /// 0 draws uniformly over the range, 1 ranks slow sellers most elastic.
    pub elasticity_poorness: f64,
    pub max_season_amplitude: f64,
    /// Gamma-Poisson overdispersion; 0 gives deterministic sales.
    pub dispersion: f64,
    /// Share of historical product-weeks spent on markdown.
    pub markdown_share: f64,
    /// Depths used by the historical policy.
    pub policy_depths: Vec<f64>,
    /// Weight of sales performance in the historical depth choice, in [0, 1].
    pub confound: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            products: 10_000,
            groups: 4,
            history_weeks: 104,
            price_median: 30.0,
            price_sigma: 0.45,
            cost_share: (0.25, 0.45),
            rate_median: 6.0,
            rate_sigma: 0.9,
            stock_median: 150.0,
            stock_sigma: 0.35,
            elasticity: (1.5, 4.0),
            elasticity_poorness: 0.5,
            max_season_amplitude: 0.3,
            dispersion: 0.3,
            markdown_share: 0.3,
            policy_depths: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
            confound: 0.6,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.products == 0 || self.groups == 0 || self.groups > self.products {
            return Err(Error::invalid("world needs products >= groups >= 1"));
        }
        if self.history_weeks <= VELOCITY_WINDOW {
            return Err(Error::invalid(format!("history must exceed {VELOCITY_WINDOW} weeks")));
        }
        if !(self.cost_share.0 >= 0.0 && self.cost_share.0 <= self.cost_share.1) {
            return Err(Error::invalid("cost share range invalid"));
        }
        if !(self.elasticity.0 >= 0.0 && self.elasticity.0 <= self.elasticity.1) {
            return Err(Error::invalid("elasticity range must be non-negative"));
        }
        if self.price_median <= 0.0 || self.rate_median <= 0.0 || self.stock_median <= 0.0 {
            return Err(Error::invalid("medians must be positive"));
        }
        if self.dispersion < 0.0
            || !(0.0..=1.0).contains(&self.markdown_share)
            || !(0.0..=1.0).contains(&self.confound)
            || !(0.0..=1.0).contains(&self.elasticity_poorness)
        {
            return Err(Error::invalid("dispersion, markdown share or confound out of range"));
        }
        DepthSet::new(self.policy_depths.clone())?;
        Ok(())
    }
}

/// Ground truth for one product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductTruth {
    pub id: String,
    pub group: String,
    pub base_rate: f64,
    pub elasticity: f64,
    pub season_amplitude: f64,
    pub season_phase: f64,
    pub stock_units: u64,
    pub full_price: Money,
    pub unit_cost: Money,
}

impl ProductTruth {
    pub fn expected_sales(&self, week: u32, depth: f64) -> f64 {
        self.base_rate * season(week, self.season_amplitude, self.season_phase) * (self.elasticity * depth).exp()
    }
}

fn season(week: u32, amplitude: f64, phase: f64) -> f64 {
    1.0 + amplitude * (TAU * week as f64 / 52.0 + phase).sin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub products: Vec<ProductTruth>,
    pub dispersion: f64,
    /// First week after the generated history.
    pub event_week: u32,
    pub seed: u64,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl SyntheticWorld {
    pub fn new(products: Vec<ProductTruth>, dispersion: f64, event_week: u32, seed: u64) -> Self {
        let index = products.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect();
        SyntheticWorld { products, dispersion, event_week, seed, index }
    }

    pub fn truth(&self, id: &str) -> Option<&ProductTruth> {
        if self.index.is_empty() {
            return self.products.iter().find(|p| p.id == id);
        }
        self.index.get(id).map(|&i| &self.products[i])
    }

    fn position(&self, id: &str) -> Option<usize> {
        if self.index.is_empty() {
            return self.products.iter().position(|p| p.id == id);
        }
        self.index.get(id).copied()
    }

    /// Expected units over `periods` event weeks, before the stock cap.
    pub fn expected_event_sales(&self, id: &str, depth: f64, periods: u32) -> Option<f64> {
        let t = self.truth(id)?;
        Some((0..periods).map(|w| t.expected_sales(self.event_week + w, depth)).sum())
    }

    /// Realized units per product over `periods` event weeks starting at the
    /// event week, never exceeding stock on hand.
    ///
    /// Each product draws from its own stream of `seed`, so a product's
    /// realization does not depend on what else is in the assignment.
    pub fn simulate_sales(&self, assignment: &Assignment, periods: u32, seed: u64) -> Result<BTreeMap<String, u64>> {
        let mut out = BTreeMap::new();
        for (id, depth) in assignment.iter() {
            let i = self.position(id).ok_or_else(|| Error::UnknownProduct(id.to_string()))?;
            let t = &self.products[i];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut sold = 0u64;
            for w in 0..periods {
                let mean = t.expected_sales(self.event_week + w, depth);
                sold += draw_sales(mean, self.dispersion, &mut rng);
            }
            out.insert(id.to_string(), sold.min(t.stock_units));
        }
        Ok(out)
    }
}

/// The world's own expectation for the first event week, as a forecast.
impl DemandModel for SyntheticWorld {
    fn predict(&self, query: &Query<'_>, depth: f64) -> Result<f64> {
        let t = self.truth(query.product_id).ok_or_else(|| Error::UnknownProduct(query.product_id.to_string()))?;
        Ok(t.expected_sales(self.event_week, depth))
    }

    fn metadata(&self) -> ModelMetadata {
        ModelMetadata { kind: "ground-truth".into(), ..Default::default() }
    }
}

fn draw_sales<R: Rng + ?Sized>(mean: f64, dispersion: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if dispersion == 0.0 {
        return mean.round() as u64;
    }
    let shape = 1.0 / dispersion;
    let rate = Gamma::new(shape, mean / shape).map(|g| g.sample(rng)).unwrap_or(mean);
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Feature names produced by the generator, in column order.
pub fn feature_names(groups: usize) -> Vec<String> {
    let mut names: Vec<String> = [
        FEATURE_LOG_PRICE,
        FEATURE_VELOCITY,
        FEATURE_SEASON_SIN,
        FEATURE_SEASON_COS,
        FEATURE_WEEKS_ON_SITE,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend((0..groups).map(|g| format!("group_{}", group_name(g))));
    names
}

fn group_name(g: usize) -> String {
    format!("G{}", g + 1)
}

fn features(truth: &ProductTruth, group: usize, groups: usize, week: u32, age: f64, velocity: f64) -> Vec<f64> {
    let angle = TAU * week as f64 / 52.0;
    let mut x = vec![
        truth.full_price.as_major().ln(),
        velocity.ln_1p(),
        angle.sin(),
        angle.cos(),
        (age + week as f64) / 52.0,
    ];
    x.extend((0..groups).map(|g| if g == group { 1.0 } else { 0.0 }));
    x
}

/// Generates a catalogue, its sales history and the world behind them.
///
/// A product's `sold_units` is its weekly run rate: mean sales over its last
/// four full-price weeks, rounded. Weeks on markdown are left out so a recent
/// discount does not make a slow seller look fast.
pub fn generate_catalogue(config: &WorldConfig, seed: u64) -> Result<(Catalogue, History, SyntheticWorld)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.products;
    let price = LogNormal::new(config.price_median.ln(), config.price_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let rate = LogNormal::new(config.rate_median.ln(), config.rate_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let stock = LogNormal::new(config.stock_median.ln(), config.stock_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let group_phase: Vec<f64> = (0..config.groups).map(|_| rng.random_range(0.0..TAU)).collect();

    // elasticity holds a uniform draw until poorness is known
    let mut truths = Vec::with_capacity(n);
    let mut ages = Vec::with_capacity(n);
    for i in 0..n {
        let g = i % config.groups;
        let full_price = Money::from_major(price.sample(&mut rng).max(1.0));
        let cost_share = rng.random_range(config.cost_share.0..=config.cost_share.1);
        let unit_cost = Money::from_major(full_price.as_major() * cost_share);
        truths.push(ProductTruth {
            id: format!("P{:06}", i + 1),
            group: group_name(g),
            base_rate: rate.sample(&mut rng),
            elasticity: rng.random::<f64>(),
            season_amplitude: rng.random_range(0.0..=config.max_season_amplitude),
            season_phase: group_phase[g],
            stock_units: stock.sample(&mut rng).round().max(1.0) as u64,
            full_price,
            unit_cost,
        });
        ages.push(rng.random_range(0.0..52.0));
    }

    // Poorness in [0, 1]: 1 for the slowest seller.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| truths[a].base_rate.total_cmp(&truths[b].base_rate));
    let mut poorness = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        poorness[i] = if n > 1 { 1.0 - rank as f64 / (n - 1) as f64 } else { 0.5 };
    }

    let (lo, hi) = config.elasticity;
    for (t, &u) in truths.iter_mut().zip(&poorness) {
        let w = config.elasticity_poorness;
        t.elasticity = lo + (hi - lo) * (w * u + (1.0 - w) * t.elasticity);
    }

    let grid = DepthSet::new(config.policy_depths.clone())?;
    let (dmin, dmax) = (grid.depths()[0], grid.max());
    let names = feature_names(config.groups);
    let weeks = config.history_weeks;
    let ids: Vec<Arc<str>> = truths.iter().map(|t| Arc::from(t.id.as_str())).collect();
    let groups: Vec<Arc<str>> = (0..config.groups).map(|g| Arc::from(group_name(g).as_str())).collect();

    let mut records = Vec::with_capacity(n * weeks as usize);
    let mut run_rate = vec![0u64; n];
    let mut recent: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (i, t) in truths.iter().enumerate() {
        // burn-in weeks at full price feed the first velocity window
        let mut window = Vec::with_capacity(VELOCITY_WINDOW as usize);
        for w in 0..VELOCITY_WINDOW {
            window.push(draw_sales(t.expected_sales(w, 0.0), config.dispersion, &mut rng) as f64);
        }
        let mut full_price = window.clone();
        for week in 1..=weeks {
            let velocity = window.iter().sum::<f64>() / window.len() as f64;
            let depth = if rng.random::<f64>() < config.markdown_share {
                let u = config.confound * poorness[i] + (1.0 - config.confound) * rng.random::<f64>();
                grid.nearest(dmin + (dmax - dmin) * u)
            } else {
                0.0
            };
            let sold = draw_sales(t.expected_sales(VELOCITY_WINDOW + week, depth), config.dispersion, &mut rng);
            records.push(TrainingRecord {
                product_id: ids[i].clone(),
                group: groups[i % config.groups].clone(),
                week,
                depth,
                features: features(t, i % config.groups, config.groups, week, ages[i], velocity),
                sales: sold as f64,
            });
            window.remove(0);
            window.push(sold as f64);
            if depth == 0.0 {
                full_price.remove(0);
                full_price.push(sold as f64);
            }
        }
        run_rate[i] = (full_price.iter().sum::<f64>() / full_price.len() as f64).round() as u64;
        recent[i] = window;
    }

    let event_week = weeks + 1;
    let products = truths
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let velocity = recent[i].iter().sum::<f64>() / recent[i].len() as f64;
            let x = features(t, i % config.groups, config.groups, event_week, ages[i], velocity);
            let mut p = Product::new(
                t.id.clone(),
                t.full_price,
                t.stock_units,
                run_rate[i],
                t.group.clone(),
                t.unit_cost,
            );
            p.covariates = names.iter().cloned().zip(x).collect();
            p
        })
        .collect();
    let catalogue = Catalogue::new(event_week as i64, products)?;
    let history = History::new(names, records)?;
    // truths carry week offsets relative to the burn-in start
    let world = SyntheticWorld::new(truths, config.dispersion, VELOCITY_WINDOW + event_week, seed);
    Ok((catalogue, history, world))
}

/// Multiplies the sales of a random `share` of records by `factor`.
/// Returns the modified history and a per-record outlier mask.
pub fn inject_outliers(history: &History, share: f64, factor: f64, seed: u64) -> (History, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = history.clone();
    let mut mask = vec![false; out.records.len()];
    for (r, m) in out.records.iter_mut().zip(mask.iter_mut()) {
        if rng.random::<f64>() < share {
            r.sales = ((r.sales + 1.0) * factor).round();
            *m = true;
        }
    }
    (out, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::spearman;

    fn small() -> WorldConfig {
        WorldConfig { products: 400, history_weeks: 30, ..WorldConfig::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_catalogue(&small(), 7).unwrap();
        let b = generate_catalogue(&small(), 7).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2.products, b.2.products);
        let c = generate_catalogue(&small(), 8).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn invalid_dimensions_are_rejected() {
        assert!(generate_catalogue(&WorldConfig { products: 0, ..small() }, 1).is_err());
        assert!(generate_catalogue(&WorldConfig { groups: 0, ..small() }, 1).is_err());
        assert!(generate_catalogue(&WorldConfig { history_weeks: 2, ..small() }, 1).is_err());
    }

    #[test]
    fn history_carries_the_depth_confound() {
        let (_, history, _) = generate_catalogue(&small(), 3).unwrap();
        let md: Vec<&TrainingRecord> = history.records.iter().filter(|r| r.depth > 0.0).collect();
        let depth: Vec<f64> = md.iter().map(|r| r.depth).collect();
        let sales: Vec<f64> = md.iter().map(|r| r.sales).collect();
        let rho = spearman(&depth, &sales);
        assert!(rho < 0.0, "depth/sales rank correlation {rho}");
    }

    #[test]
    fn noiseless_simulation_matches_expectation() {
        let cfg = WorldConfig { dispersion: 0.0, ..small() };
        let (cat, _, world) = generate_catalogue(&cfg, 5).unwrap();
        let mut a = Assignment::new();
        for p in cat.products().iter().take(50) {
            a.insert(p.id.clone(), 0.3).unwrap();
        }
        let sold = world.simulate_sales(&a, 1, 99).unwrap();
        for (id, units) in &sold {
            let t = world.truth(id).unwrap();
            let expect = (t.expected_sales(world.event_week, 0.3).round() as u64).min(t.stock_units);
            assert_eq!(*units, expect);
        }
    }

    #[test]
    fn simulated_sales_respect_stock() {
        let (cat, _, world) = generate_catalogue(&small(), 5).unwrap();
        let a: Assignment = cat.products().iter().map(|p| (p.id.clone(), 0.9)).collect();
        let sold = world.simulate_sales(&a, 52, 1).unwrap();
        for (id, units) in sold {
            assert!(units <= cat.get(&id).unwrap().stock_units);
        }
    }

    #[test]
    fn deeper_depth_sells_more_on_average() {
        let (cat, _, world) = generate_catalogue(&small(), 11).unwrap();
        let ids: Vec<String> = cat.products().iter().take(40).map(|p| p.id.clone()).collect();
        let at = |d: f64| -> Assignment { ids.iter().map(|id| (id.clone(), d)).collect() };
        let (shallow, deep) = (at(0.1), at(0.4));
        let mut totals = (0.0, 0.0);
        for seed in 0..100 {
            totals.0 += world.simulate_sales(&shallow, 1, seed).unwrap().values().sum::<u64>() as f64;
            totals.1 += world.simulate_sales(&deep, 1, seed).unwrap().values().sum::<u64>() as f64;
        }
        assert!(totals.1 >= totals.0);
    }
}
