//! Default starting mapping for a catalogue and a pair of targets.

use super::allocation::Levers;
use super::bands::{BandMapping, CoverBand};
use super::solver::IthaxTargets;
use crate::domain::{Catalogue, DepthSet};
use crate::error::{Error, Result};

/// How far above the stock depth target the first pass should land.
const FIRST_PASS_MARGIN: f64 = 0.02;

/// Extra stock value, as a share of the target, held by the shallowest band.
/// Allocation fills the deepest bands first, so the reserve leaves the first
/// pass unchanged; it keeps value reachable after later cuts slide bands down.
const RESERVE: f64 = 1.0;

/// Narrowest band generated, as a multiple of the minimum width.
const MIN_WIDTH_FACTOR: f64 = 5.0;

/// Builds a starting mapping whose discounted bands carry every positive
/// depth of `depths`, laid out downward from the highest finite cover.
///
/// Each band is sized to hold a share of the stock value target. Shares
/// lean toward the deeper bands just enough that a first allocation pass
/// lands slightly above the stock depth target. The shallowest band also
/// holds a reserve below its share. Bands are never narrower than
/// `MIN_WIDTH_FACTOR * min_width`.
///
/// Excluded products are ignored. Forced inclusions are counted up front:
/// the bands are shaped for the budget and depth the inclusions leave over.
pub fn default_mapping(
    catalogue: &Catalogue,
    depths: &DepthSet,
    targets: &IthaxTargets,
    levers: &Levers,
    min_width: f64,
) -> Result<BandMapping> {
    let positive: Vec<f64> = depths.depths().iter().copied().filter(|&d| d > 0.0).collect();
    if positive.is_empty() || depths.max() <= targets.stock_depth {
        return Err(Error::Precondition(format!(
            "depth set must contain a depth above the stock depth target {}",
            targets.stock_depth
        )));
    }
    let eligible: Vec<&crate::domain::Product> = catalogue
        .products()
        .iter()
        .filter(|p| p.stock_units > 0 && p.cover().is_finite())
        .filter(|p| !levers.exclusions.contains(&p.id) && !levers.inclusions.contains(&p.id))
        .collect();
    let mut items: Vec<(f64, f64)> = eligible.iter().map(|p| (p.cover(), p.stock_value())).collect();
    if items.is_empty() {
        return Err(Error::Precondition("no product with finite cover".into()));
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));

    // With group targets every group fills from the same bands, so the
    // reserve grows with the group asking most relative to its stock.
    let mut reserve = RESERVE * targets.stock_value;
    if let Some(groups) = &targets.group_values {
        let total: f64 = items.iter().map(|i| i.1).sum();
        for (g, v) in groups {
            let held: f64 = eligible.iter().filter(|p| &p.group == g).map(|p| p.stock_value()).sum();
            if held > 0.0 {
                reserve = reserve.max(RESERVE * v * total / held);
            }
        }
    }

    let (mut forced_value, mut forced_discounted) = (0.0, 0.0);
    for (id, depth) in levers.inclusions.iter() {
        if let Some(p) = catalogue.get(id) {
            forced_value += p.stock_value();
            forced_discounted += (1.0 - depth) * p.stock_value();
        }
    }
    let budget = targets.stock_value - forced_value;
    if !(budget > 0.0) {
        return Err(Error::Precondition("inclusions already exhaust the stock value target".into()));
    }
    let overall = (targets.stock_depth + FIRST_PASS_MARGIN).min(0.5 * (targets.stock_depth + depths.max()));
    // depth the free part must reach so the whole event lands on `overall`
    let goal = (overall * targets.stock_value - (forced_value - forced_discounted)) / budget;
    let shares = tilted_shares(&positive, goal);
    let floor = MIN_WIDTH_FACTOR * min_width;

    // walk down the cover axis, deepest band first
    let mut upper = items.last().unwrap().0 + floor;
    let mut cursor = items.len();
    let mut edges = vec![upper];
    for (j, share) in shares.iter().enumerate().rev() {
        let want = share * budget + if j == 0 { reserve } else { 0.0 };
        let mut held = 0.0;
        let mut lower = upper - floor;
        while cursor > 0 && (held < want || items[cursor - 1].0 > lower) {
            cursor -= 1;
            held += items[cursor].1;
            lower = lower.min(items[cursor].0);
        }
        // the band is (lower, upper]; step just under the last product taken
        let below = if cursor > 0 { items[cursor - 1].0 } else { 0.0 };
        lower = 0.5 * (lower + below.min(lower));
        if !(lower > 0.0) {
            // ran off the bottom of the cover axis: squeeze the remaining bands
            lower = 0.5 * upper;
        }
        edges.push(lower);
        upper = lower;
    }
    edges.reverse();
    let mut bands = vec![CoverBand::new(0.0, edges[0], 0.0)];
    for (j, &d) in positive.iter().enumerate() {
        bands.push(CoverBand::new(edges[j], edges[j + 1], d));
    }
    bands.push(CoverBand::new(edges[positive.len()], f64::INFINITY, 0.0));
    BandMapping::new(bands, min_width)
}

/// Shares proportional to `exp(theta * d)` whose depth-weighted mean is `goal`.
fn tilted_shares(depths: &[f64], goal: f64) -> Vec<f64> {
    let shares = |theta: f64| -> Vec<f64> {
        let w: Vec<f64> = depths.iter().map(|d| (theta * d).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    };
    let mean = |s: &[f64]| -> f64 { s.iter().zip(depths).map(|(a, d)| a * d).sum() };
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean(&shares(mid)) < goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    shares(0.5 * (lo + hi))
}
