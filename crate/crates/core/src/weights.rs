//! Weight reduction.
//!
//! The OT work of a purchase scales with the sum of the weights, so it pays
//! to pick the smallest weight vector that still prices the catalog
//! correctly. Three tools live here: exact reduction by the common divisor,
//! approximate reduction by rounding to a caller-chosen unit `q`, and a
//! category profile for catalogs priced in a few tiers.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightError {
    #[error("weight vector is empty")]
    Empty,
    #[error("weight at position {0} is zero")]
    ZeroWeight(usize),
    #[error("reduction unit q must be at least 2, got {0}")]
    UnitTooSmall(u64),
    #[error("weight vanishes under reduction: weight {weight} at position {index} rounds to 0 with q = {q}")]
    Vanishes { index: usize, weight: u64, q: u64 },
    #[error("line {line}: expected a positive integer, got {text:?}")]
    Parse { line: usize, text: String },
}

/// Parse a price file: one positive integer per line. Blank lines and
/// lines starting with `#` are skipped.
pub fn parse_prices(text: &str) -> Result<Vec<u64>, WeightError> {
    let mut prices = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let price: u64 = line.parse().map_err(|_| WeightError::Parse {
            line: n + 1,
            text: line.chars().take(40).collect(),
        })?;
        if price == 0 {
            return Err(WeightError::ZeroWeight(prices.len()));
        }
        prices.push(price);
    }
    if prices.is_empty() {
        return Err(WeightError::Empty);
    }
    Ok(prices)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReductionReport {
    /// The divisor; each purchase is billed `q` times the reduced total.
    pub q: u64,
    pub original: Vec<u64>,
    pub reduced: Vec<u64>,
    pub exact: bool,
    /// max_i |reduced_i · q − original_i| / original_i.
    pub max_relative_error: Ratio<u128>,
}

impl ReductionReport {
    pub fn unit_price_multiplier(&self) -> u64 {
        self.q
    }

    pub fn original_work(&self) -> u64 {
        self.original.iter().sum()
    }

    pub fn reduced_work(&self) -> u64 {
        self.reduced.iter().sum()
    }
}

impl fmt::Display for ReductionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[u64]| {
            v.iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(f, "q={}", self.q)?;
        writeln!(f, "exact={}", self.exact)?;
        writeln!(f, "original=[{}]", join(&self.original))?;
        writeln!(f, "reduced=[{}]", join(&self.reduced))?;
        let err = self.max_relative_error;
        writeln!(
            f,
            "max_relative_error={}/{} ({:.6})",
            err.numer(),
            err.denom(),
            *err.numer() as f64 / *err.denom() as f64
        )?;
        writeln!(f, "unit_price_multiplier={}", self.q)?;
        write!(
            f,
            "ot_work={} -> {}",
            self.original_work(),
            self.reduced_work()
        )
    }
}

fn check_weights(weights: &[u64]) -> Result<(), WeightError> {
    if weights.is_empty() {
        return Err(WeightError::Empty);
    }
    if let Some(index) = weights.iter().position(|&w| w == 0) {
        return Err(WeightError::ZeroWeight(index));
    }
    Ok(())
}

pub fn weights_gcd(weights: &[u64]) -> u64 {
    weights.iter().fold(0, |acc, &w| gcd(acc, w))
}

/// Divide every weight by their greatest common divisor.
pub fn gcd_reduce(weights: &[u64]) -> Result<ReductionReport, WeightError> {
    check_weights(weights)?;
    let q = weights_gcd(weights);
    Ok(ReductionReport {
        q,
        original: weights.to_vec(),
        reduced: weights.iter().map(|w| w / q).collect(),
        exact: true,
        max_relative_error: Ratio::from_integer(0),
    })
}

/// Replace each weight by the nearest integer to `weight / q`, halves
/// rounding up. A weight that would round to zero is an error.
pub fn approx_reduce(weights: &[u64], q: u64) -> Result<ReductionReport, WeightError> {
    check_weights(weights)?;
    if q < 2 {
        return Err(WeightError::UnitTooSmall(q));
    }
    let q128 = q as u128;
    let mut reduced = Vec::with_capacity(weights.len());
    let mut max_err = Ratio::from_integer(0u128);
    for (index, &weight) in weights.iter().enumerate() {
        let w = weight as u128;
        let r = (2 * w + q128) / (2 * q128);
        if r == 0 {
            return Err(WeightError::Vanishes { index, weight, q });
        }
        let err = Ratio::new((r * q128).abs_diff(w), w);
        if err > max_err {
            max_err = err;
        }
        // r ≤ weight/q + 1 ≤ u64::MAX
        reduced.push(r as u64);
    }
    let exact = weights.iter().all(|w| w % q == 0);
    Ok(ReductionReport {
        q,
        original: weights.to_vec(),
        reduced,
        exact,
        max_relative_error: max_err,
    })
}

/// Candidate units for [`approx_reduce`]: divisors ≥ 2 of the median and
/// the smallest weight under which no weight vanishes. Never applied
/// automatically.
pub fn suggest_units(weights: &[u64]) -> Result<Vec<u64>, WeightError> {
    check_weights(weights)?;
    let mut sorted = weights.to_vec();
    sorted.sort_unstable();
    let median = sorted[sorted.len() / 2];
    let min = sorted[0];
    let mut out = Vec::new();
    for value in [min, median] {
        let mut d = 1u64;
        while d * d <= value {
            if value % d == 0 {
                out.push(d);
                out.push(value / d);
            }
            d += 1;
        }
    }
    out.sort_unstable();
    out.dedup();
    // A weight survives rounding iff 2·w ≥ q.
    out.retain(|&q| q >= 2 && 2 * min as u128 >= q as u128);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightProfile {
    /// Distinct weight → multiplicity, ascending by weight.
    pub categories: BTreeMap<u64, usize>,
    pub n: usize,
    /// Σ p_i before reduction.
    pub work: u64,
    pub gcd: u64,
    /// Σ p_i / gcd.
    pub reduced_work: u64,
}

impl WeightProfile {
    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    /// Reduced work per item; "around 3n" corresponds to 3.0.
    pub fn work_per_item(&self) -> f64 {
        self.reduced_work as f64 / self.n as f64
    }
}

impl fmt::Display for WeightProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n={} categories={}", self.n, self.category_count())?;
        for (weight, count) in &self.categories {
            writeln!(f, "  weight {weight}: {count} item(s)")?;
        }
        write!(
            f,
            "ot_work={} gcd={} reduced_work={} ({:.2} per item)",
            self.work,
            self.gcd,
            self.reduced_work,
            self.work_per_item()
        )
    }
}

pub fn weight_profile(weights: &[u64]) -> Result<WeightProfile, WeightError> {
    check_weights(weights)?;
    let mut categories = BTreeMap::new();
    for &w in weights {
        *categories.entry(w).or_insert(0) += 1;
    }
    let work = weights.iter().sum();
    let g = weights_gcd(weights);
    Ok(WeightProfile {
        categories,
        n: weights.len(),
        work,
        gcd: g,
        reduced_work: work / g,
    })
}
