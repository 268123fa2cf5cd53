//! Depth allocation: fill a stock-value budget from the deepest band down.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bands::BandMapping;
use crate::domain::{Assignment, Catalogue};
use crate::error::{Error, Result};

/// Operator controls over event contents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Levers {
    /// Products forced into the event at the given depth.
    #[serde(default)]
    pub inclusions: Assignment,
    /// Products removed from consideration altogether.
    #[serde(default)]
    pub exclusions: BTreeSet<String>,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Levers {
    pub fn with_seed(seed: u64) -> Self {
        Levers { rng_seed: seed, ..Levers::default() }
    }

    pub fn validate(&self, catalogue: &Catalogue) -> Result<()> {
        self.inclusions.validate(catalogue)?;
        if let Some(id) = self.inclusions.ids().find(|id| self.exclusions.contains(*id)) {
            return Err(Error::invalid(format!("product `{id}` is both included and excluded")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    index: usize,
    cover: f64,
    value: f64,
}

/// Eligible products of one allocation scope, sorted by cover so that band
/// membership is a pair of binary searches.
#[derive(Debug, Clone)]
pub(crate) struct CandidatePool {
    candidates: Vec<Candidate>,
    /// (catalogue index, depth, value) of forced products in this scope.
    forced: Vec<(usize, f64, f64)>,
}

/// Result of one allocation pass, in catalogue indices.
#[derive(Debug, Clone, Default)]
pub(crate) struct PoolAllocation {
    pub entries: Vec<(usize, f64)>,
    pub value: f64,
    pub discounted: f64,
    /// True when every product in a discounted band fit inside the budget.
    pub exhausted: bool,
}

impl PoolAllocation {
    pub fn stock_depth(&self) -> Option<f64> {
        (self.value > 0.0).then(|| 1.0 - self.discounted / self.value)
    }
}

impl CandidatePool {
    /// Builds the pool of products in `catalogue` passing `scope`, minus
    /// exclusions, zero-stock products, and forced inclusions (which seed the
    /// allocation instead).
    pub fn new(catalogue: &Catalogue, levers: &Levers, scope: impl Fn(&crate::domain::Product) -> bool) -> Self {
        let mut candidates = Vec::new();
        let mut forced = Vec::new();
        for (index, p) in catalogue.products().iter().enumerate() {
            if !scope(p) || levers.exclusions.contains(&p.id) {
                continue;
            }
            if let Some(depth) = levers.inclusions.get(&p.id) {
                forced.push((index, depth, p.stock_value()));
            } else if p.stock_units > 0 {
                candidates.push(Candidate { index, cover: p.cover(), value: p.stock_value() });
            }
        }
        candidates.sort_by(|a, b| a.cover.total_cmp(&b.cover).then(a.index.cmp(&b.index)));
        CandidatePool { candidates, forced }
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty() && self.forced.is_empty()
    }

    fn band_slice(&self, lower: f64, upper: f64) -> &[Candidate] {
        let start = self.candidates.partition_point(|c| c.cover <= lower);
        let end = self.candidates.partition_point(|c| c.cover <= upper);
        &self.candidates[start..end.max(start)]
    }

    pub fn allocate<R: Rng + ?Sized>(&self, mapping: &BandMapping, budget: f64, rng: &mut R) -> PoolAllocation {
        let mut out = PoolAllocation { exhausted: true, ..Default::default() };
        for &(index, depth, value) in &self.forced {
            out.entries.push((index, depth));
            out.value += value;
            out.discounted += (1.0 - depth) * value;
        }
        let mut scratch: Vec<Candidate> = Vec::new();
        for b in mapping.allocation_order() {
            let band = mapping.band(b);
            let members = self.band_slice(band.lower, band.upper);
            if members.is_empty() {
                continue;
            }
            let band_value: f64 = members.iter().map(|c| c.value).sum();
            if out.value + band_value <= budget {
                for c in members {
                    out.entries.push((c.index, band.depth));
                }
                out.value += band_value;
                out.discounted += (1.0 - band.depth) * band_value;
            } else {
                out.exhausted = false;
                // Seeded shuffle, then greedy: keep every product that still fits.
                scratch.clear();
                scratch.extend_from_slice(members);
                scratch.shuffle(rng);
                for c in &scratch {
                    if out.value + c.value <= budget {
                        out.entries.push((c.index, band.depth));
                        out.value += c.value;
                        out.discounted += (1.0 - band.depth) * c.value;
                    }
                }
            }
        }
        out
    }
}

/// Outcome of [`depth_allocation`].
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub assignment: Assignment,
    pub stock_value: f64,
    /// Every eligible product in a discounted band was taken.
    pub exhausted: bool,
}

impl Allocation {
    /// Relative shortfall against the budget.
    pub fn shortfall(&self, budget: f64) -> f64 {
        (budget - self.stock_value) / budget
    }

    /// The catalogue cannot reach `budget` within `tolerance`, even taking
    /// every eligible product.
    pub fn insufficient(&self, budget: f64, tolerance: f64) -> bool {
        self.exhausted && self.shortfall(budget) >= tolerance
    }
}

/// Populates an event from `mapping`, filling `budget` stock value from the
/// deepest band down. Whole bands are taken while they fit; the first band
/// that would overflow contributes a random subset, as do the bands below it.
/// Inclusions seed the event before any band is visited.
pub fn depth_allocation<R: Rng + ?Sized>(
    mapping: &BandMapping,
    budget: f64,
    catalogue: &Catalogue,
    levers: &Levers,
    rng: &mut R,
) -> Result<Allocation> {
    levers.validate(catalogue)?;
    let pool = CandidatePool::new(catalogue, levers, |_| true);
    if pool.is_empty() {
        return Err(Error::Precondition("catalogue is empty after exclusions".into()));
    }
    let raw = pool.allocate(mapping, budget, rng);
    Ok(to_allocation(catalogue, &raw))
}

pub(crate) fn to_allocation(catalogue: &Catalogue, raw: &PoolAllocation) -> Allocation {
    let products = catalogue.products();
    let assignment = raw.entries.iter().map(|&(i, d)| (products[i].id.clone(), d)).collect();
    Allocation { assignment, stock_value: raw.value, exhausted: raw.exhausted }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Money, Product};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const INF: f64 = f64::INFINITY;

    /// Six bands, four of them discounted.
    fn six_bands() -> BandMapping {
        BandMapping::from_triples(
            &[
                (0.0, 20.0, 0.0),
                (20.0, 40.0, 0.15),
                (40.0, 60.0, 0.30),
                (60.0, 70.0, 0.50),
                (70.0, 100.0, 0.75),
                (100.0, INF, 0.0),
            ],
            3.0,
        )
        .unwrap()
    }

    /// Covers 25, 45 and 65 weeks, each holding roughly 1000 of stock value.
    fn three_products() -> Catalogue {
        Catalogue::new(
            0,
            vec![
                Product::new("c25", Money(1000), 100, 4, "g", Money(0)),
                Product::new("c45", Money(1111), 90, 2, "g", Money(0)),
                Product::new("c65", Money(769), 130, 2, "g", Money(0)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn three_product_example_matches_brute_force() {
        let cat = three_products();
        let covers: Vec<f64> = cat.products().iter().map(Product::cover).collect();
        assert_eq!(covers, vec![25.0, 45.0, 65.0]);

        let budget = 2000.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let got = depth_allocation(&six_bands(), budget, &cat, &Levers::default(), &mut rng).unwrap();
        assert_eq!(got.assignment.get("c65"), Some(0.50));
        assert_eq!(got.assignment.get("c45"), Some(0.30));
        assert!(!got.assignment.contains("c25"));
        assert!(got.stock_value <= budget);

        // Brute force over all subsets: the value-maximal subset within budget
        // that never takes a lower-cover product while skipping a higher-cover one.
        let values: Vec<f64> = cat.products().iter().map(Product::stock_value).collect();
        let mut best: Option<(f64, u32)> = None;
        for mask in 0u32..8 {
            let v: f64 = (0..3).filter(|i| mask & (1 << i) != 0).map(|i| values[i]).sum();
            let consistent = (0..3).all(|i| mask & (1 << i) == 0 || (i + 1..3).all(|j| mask & (1 << j) != 0));
            if v <= budget && consistent && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, mask));
            }
        }
        assert_eq!(best.unwrap().1, 0b110);
    }

    #[test]
    fn budget_above_total_takes_every_discounted_product() {
        let cat = three_products();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let got = depth_allocation(&six_bands(), 1e9, &cat, &Levers::default(), &mut rng).unwrap();
        assert_eq!(got.assignment.len(), 3);
        assert!(got.exhausted);
        assert!(got.insufficient(1e9, 0.05));
    }

    #[test]
    fn inclusions_count_before_bands() {
        let cat = three_products();
        let mut levers = Levers::default();
        levers.inclusions.insert("c25", 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v25 = cat.get("c25").unwrap().stock_value();
        let budget = v25 + 1.0;
        let got = depth_allocation(&six_bands(), budget, &cat, &levers, &mut rng).unwrap();
        assert_eq!(got.assignment.len(), 1);
        assert_eq!(got.assignment.get("c25"), Some(0.9));
    }

    #[test]
    fn exclusions_are_never_assigned() {
        let cat = three_products();
        let mut levers = Levers::default();
        levers.exclusions.insert("c65".into());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = depth_allocation(&six_bands(), 1e9, &cat, &levers, &mut rng).unwrap();
        assert!(!got.assignment.contains("c65"));
    }

    #[test]
    fn included_and_excluded_is_rejected() {
        let cat = three_products();
        let mut levers = Levers::default();
        levers.exclusions.insert("c65".into());
        levers.inclusions.insert("c65", 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(depth_allocation(&six_bands(), 1e9, &cat, &levers, &mut rng).is_err());
    }
}
