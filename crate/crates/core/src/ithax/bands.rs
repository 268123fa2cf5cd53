//! Cover-band to depth mappings and the binary-cut boundary adjustments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default minimum half-width (in weeks of cover) for a band to be adjustable.
pub const DEFAULT_MIN_WIDTH: f64 = 3.0;

/// Half-open cover interval `(lower, upper]` priced at `depth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverBand {
    pub lower: f64,
    #[serde(with = "cover_bound")]
    pub upper: f64,
    pub depth: f64,
}

impl CoverBand {
    pub fn new(lower: f64, upper: f64, depth: f64) -> Self {
        CoverBand { lower, upper, depth }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, cover: f64) -> bool {
        cover > self.lower && cover <= self.upper
    }
}

/// A band can be cut when it carries a discount and half its width is at
/// least `min_width`.
pub fn is_adjustable(band: &CoverBand, min_width: f64) -> bool {
    band.depth > 0.0 && band.width() / 2.0 >= min_width
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MappingDoc {
    bands: Vec<CoverBand>,
    #[serde(default = "default_min_width")]
    min_width: f64,
}

fn default_min_width() -> f64 {
    DEFAULT_MIN_WIDTH
}

/// Ordered, gap-free cover bands, lowest cover first.
///
/// The first and last bands carry depth 0 (fast sellers and zero-sellers stay
/// out of the event); every interior band carries a positive depth that never
/// decreases as cover rises.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MappingDoc", into = "MappingDoc")]
pub struct BandMapping {
    bands: Vec<CoverBand>,
    min_width: f64,
}

impl TryFrom<MappingDoc> for BandMapping {
    type Error = Error;

    fn try_from(doc: MappingDoc) -> Result<Self> {
        BandMapping::new(doc.bands, doc.min_width)
    }
}

impl From<BandMapping> for MappingDoc {
    fn from(m: BandMapping) -> Self {
        MappingDoc { bands: m.bands, min_width: m.min_width }
    }
}

impl BandMapping {
    pub fn new(bands: Vec<CoverBand>, min_width: f64) -> Result<Self> {
        let m = BandMapping { bands, min_width };
        m.validate()?;
        Ok(m)
    }

    /// Builds a mapping from `(lower, upper, depth)` triples.
    pub fn from_triples(triples: &[(f64, f64, f64)], min_width: f64) -> Result<Self> {
        BandMapping::new(triples.iter().map(|&(l, u, d)| CoverBand::new(l, u, d)).collect(), min_width)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bands;
        if b.len() < 3 {
            return Err(Error::invalid("a band mapping needs at least three bands"));
        }
        if !(self.min_width > 0.0) {
            return Err(Error::invalid("min_width must be positive"));
        }
        if b[0].lower != 0.0 {
            return Err(Error::invalid("first band must start at cover 0"));
        }
        if b[b.len() - 1].upper != f64::INFINITY {
            return Err(Error::invalid("last band must be unbounded above"));
        }
        if b[0].depth != 0.0 || b[b.len() - 1].depth != 0.0 {
            return Err(Error::invalid("first and last bands must carry depth 0"));
        }
        for (i, band) in b.iter().enumerate() {
            if !(band.lower < band.upper) || band.lower.is_nan() || band.upper.is_nan() {
                return Err(Error::invalid(format!("band {i} has non-positive width")));
            }
            if !(0.0..=1.0).contains(&band.depth) {
                return Err(Error::invalid(format!("band {i} depth outside [0, 1]")));
            }
            if i > 0 && b[i - 1].upper != band.lower {
                return Err(Error::invalid(format!("bands {} and {i} are not contiguous", i - 1)));
            }
        }
        for i in 1..b.len() - 1 {
            if b[i].depth <= 0.0 {
                return Err(Error::invalid(format!("interior band {i} must carry a positive depth")));
            }
            if i > 1 && b[i].depth < b[i - 1].depth {
                return Err(Error::invalid("depth must not decrease as cover increases"));
            }
        }
        Ok(())
    }

    pub fn bands(&self) -> &[CoverBand] {
        &self.bands
    }

    pub fn band(&self, idx: usize) -> &CoverBand {
        &self.bands[idx]
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn min_width(&self) -> f64 {
        self.min_width
    }

    /// Index of the band with the highest depth (the highest-cover one on ties).
    pub fn highest(&self) -> usize {
        self.bands.len() - 2
    }

    /// Index of the band with the lowest positive depth.
    pub fn lowest(&self) -> usize {
        1
    }

    pub fn max_depth(&self) -> f64 {
        self.bands[self.highest()].depth
    }

    /// Discounted bands in allocation order: deepest first.
    pub fn allocation_order(&self) -> impl Iterator<Item = usize> {
        (self.lowest()..=self.highest()).rev()
    }

    pub fn is_adjustable(&self, idx: usize) -> bool {
        is_adjustable(&self.bands[idx], self.min_width)
    }

    /// Band index whose interval contains `cover`.
    pub fn band_of(&self, cover: f64) -> usize {
        self.bands.iter().position(|b| b.contains(cover)).unwrap_or(0)
    }

    /// Depth the mapping gives a product with this cover.
    pub fn depth_for(&self, cover: f64) -> f64 {
        if cover <= 0.0 {
            return 0.0;
        }
        self.bands[self.band_of(cover)].depth
    }

    fn find_adjustable_below(&self, mut bx: usize) -> Result<usize> {
        while !self.is_adjustable(bx) {
            if bx == 0 {
                return Err(Error::BottomedOut { mapping: self.clone() });
            }
            bx -= 1;
        }
        Ok(bx)
    }

    /// The zero-depth band above the deepest band follows its upper bound.
    fn reattach_top(&mut self) {
        let h = self.highest();
        self.bands[h + 1].lower = self.bands[h].upper;
    }

    /// Cut for stock depth above target.
    ///
    /// Walks down from `bx` to the first adjustable band, lowers its upper
    /// bound by half its width and slides every deeper band down by the same
    /// amount so their widths are unchanged. Returns the band that was cut.
    pub fn adjust_overshoot(&self, bx: usize) -> Result<(BandMapping, usize)> {
        let mut next = self.clone();
        let bx = next.find_adjustable_below(bx.min(self.len() - 1))?;
        let x = next.bands[bx].width() / 2.0;
        next.bands[bx].upper -= x;
        for b in bx + 1..=next.highest() {
            next.bands[b].lower -= x;
            next.bands[b].upper -= x;
        }
        next.reattach_top();
        Ok((next, bx))
    }

    /// Widens band `bx` upward by half its width, sliding deeper bands up.
    pub fn widen(&self, bx: usize) -> BandMapping {
        let mut next = self.clone();
        let x = next.bands[bx].width() / 2.0;
        next.bands[bx].upper += x;
        for b in bx + 1..=next.highest() {
            next.bands[b].lower += x;
            next.bands[b].upper += x;
        }
        next.reattach_top();
        next
    }

    /// Cut for stock depth below target.
    ///
    /// On the first iteration, or while the deepest band is still gaining
    /// depth, the deepest band is widened. Once widening stalls
    /// (`|m_current - m_previous| <= stagnation_tol`), range is transferred from
    /// the first adjustable lower band to the deepest band instead: the lower
    /// band loses half its width, intermediate bands slide down, and the
    /// deepest band keeps its upper bound.
    pub fn adjust_undershoot(
        &self,
        bx: usize,
        m_current: f64,
        m_previous: Option<f64>,
        iteration: usize,
        stagnation_tol: f64,
    ) -> Result<(BandMapping, usize)> {
        let highest = self.highest();
        let mut bx = bx.min(self.len() - 1);
        if iteration <= 1 {
            return Ok((self.widen(bx), bx));
        }
        if bx == highest {
            let stalled = m_previous.is_some_and(|prev| (m_current - prev).abs() <= stagnation_tol);
            if !stalled {
                return Ok((self.widen(bx), bx));
            }
            bx -= 1;
        }
        let mut next = self.clone();
        let bx = next.find_adjustable_below(bx)?;
        let x = next.bands[bx].width() / 2.0;
        next.bands[bx].upper -= x;
        for b in bx + 1..=highest {
            next.bands[b].lower -= x;
            if b < highest {
                next.bands[b].upper -= x;
            }
        }
        next.reattach_top();
        Ok((next, bx))
    }
}

/// Serializes an infinite cover bound as the string `"inf"`.
pub(crate) mod cover_bound {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct BoundVisitor;

        impl<'de> Visitor<'de> for BoundVisitor {
            type Value = f64;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v.to_ascii_lowercase().as_str() {
                    "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
                    other => other.parse().map_err(E::custom),
                }
            }

            fn visit_unit<E: de::Error>(self) -> Result<f64, E> {
                Ok(f64::INFINITY)
            }

            fn visit_none<E: de::Error>(self) -> Result<f64, E> {
                Ok(f64::INFINITY)
            }
        }

        d.deserialize_any(BoundVisitor)
    }
}
