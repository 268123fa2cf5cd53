//! Nonparametric two- and k-sample tests, plus a normality check.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::stats::{average_ranks, mean};

/// Largest `n_a * n_b` for which Mann-Whitney p-values are exact.
pub const EXACT_LIMIT: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U of the first sample: pairs where it is larger, ties counting half.
    pub u: f64,
    /// U of the second sample; `u + u_other = n_a * n_b`.
    pub u_other: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

impl MannWhitney {
    /// True when the first sample tends to be larger.
    pub fn first_larger(&self) -> bool {
        self.u > self.u_other
    }
}

/// Two-sided Mann-Whitney U test with midranks for ties.
///
/// Exact p-values come from the permutation distribution of the rank sum,
/// ties included; beyond `EXACT_LIMIT` the normal approximation with tie and
/// continuity corrections is used.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("Mann-Whitney needs two non-empty samples"));
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    let rank_sum: f64 = ranks[..na].iter().sum();
    let u = rank_sum - (na * (na + 1)) as f64 / 2.0;
    let u_other = (na * nb) as f64 - u;
    if na * nb <= EXACT_LIMIT {
        let p = exact_p(&ranks, na);
        return Ok(MannWhitney { u, u_other, p, exact: true });
    }
    let n = (na + nb) as f64;
    let ties = tie_term(&pooled);
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = (((u - (na * nb) as f64 / 2.0).abs() - 0.5).max(0.0)) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * (1.0 - normal.cdf(z))).min(1.0)
    };
    Ok(MannWhitney { u, u_other, p, exact: false })
}

/// Sum of `t^3 - t` over tie groups.
fn tie_term(data: &[f64]) -> f64 {
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        total += t * t * t - t;
        i = j + 1;
    }
    total
}

/// Two-sided permutation p-value of the first `na` ranks' sum.
///
/// Ranks are doubled so midranks become integers, then a subset-sum count
/// gives the number of ways each rank sum can arise.
fn exact_p(ranks: &[f64], na: usize) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let observed: usize = doubled[..na].iter().sum();
    let max_sum: usize = {
        let mut d = doubled.clone();
        d.sort_unstable_by(|a, b| b.cmp(a));
        d[..na].iter().sum()
    };
    // ways[k][s]: subsets of size k with doubled rank sum s
    let mut ways = vec![vec![0.0f64; max_sum + 1]; na + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=na).rev() {
            let (lower, upper) = ways.split_at_mut(k);
            let (src, dst) = (&lower[k - 1], &mut upper[0]);
            for s in (r..=max_sum).rev() {
                dst[s] += src[s - r];
            }
        }
    }
    let dist = &ways[na];
    let total: f64 = dist.iter().sum();
    let below: f64 = dist[..=observed].iter().sum();
    let above: f64 = dist[observed..].iter().sum();
    (2.0 * below.min(above) / total).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub p: f64,
    pub df: usize,
}

/// Kruskal-Wallis H with tie correction; p from chi-squared on k - 1 df.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<KruskalWallis> {
    if groups.len() < 2 || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::invalid("Kruskal-Wallis needs at least two non-empty groups"));
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let n = pooled.len() as f64;
    let ranks = average_ranks(&pooled);
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let raw = 12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0);
    let correction = 1.0 - tie_term(&pooled) / (n * n * n - n);
    let df = groups.len() - 1;
    if correction <= 0.0 {
        return Ok(KruskalWallis { h: 0.0, p: 1.0, df });
    }
    let h = (raw / correction).max(0.0);
    let chi = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    Ok(KruskalWallis { h, p: 1.0 - chi.cdf(h), df })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normality {
    pub jarque_bera: f64,
    pub p: f64,
}

/// Jarque-Bera test; small p means the sample is unlikely to be normal.
pub fn jarque_bera(data: &[f64]) -> Option<Normality> {
    if data.len() < 3 {
        return None;
    }
    let n = data.len() as f64;
    let m = mean(data);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in data {
        let d = x - m;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return None;
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    let jb = n / 6.0 * (skew * skew + (kurt - 3.0).powi(2) / 4.0);
    let chi = ChiSquared::new(2.0).expect("two degrees of freedom");
    Some(Normality { jarque_bera: jb, p: 1.0 - chi.cdf(jb) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_samples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!((r.u, r.u_other), (0.0, 9.0));
        assert!((r.p - 0.1).abs() < 1e-12);
        assert!(r.exact);
    }

    #[test]
    fn identical_samples() {
        let r = mann_whitney_u(&[2.0, 2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(r.p, 1.0);
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64 + 100.0).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(!r.exact);
        assert!(r.p < 1e-9);
    }

    #[test]
    fn kruskal_two_groups_agrees_with_mann_whitney_direction() {
        let a = [1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 30.0];
        let b = [2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0];
        let kw = kruskal_wallis(&[&a, &b]).unwrap();
        let shifted: Vec<f64> = b.iter().map(|x| x + 50.0).collect();
        let kw_far = kruskal_wallis(&[&a, &shifted]).unwrap();
        assert!(kw_far.h > kw.h);
        assert!(kw_far.p < kw.p);
        assert_eq!(kruskal_wallis(&[&[1.0, 1.0], &[1.0]]).unwrap().p, 1.0);
    }

    #[test]
    fn normality() {
        let skewed: Vec<f64> = (1..200).map(|i| (i as f64 / 20.0).exp()).collect();
        assert!(jarque_bera(&skewed).unwrap().p < 0.001);
        assert!(jarque_bera(&[1.0, 1.0, 1.0]).is_none());
    }
}
