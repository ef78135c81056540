//! Price-leakage auditing.
//!
//! The sender always learns the total T of a purchase. If only one subset
//! of the catalog sums to T, the choice is fully exposed; if every subset
//! summing to T shares an item, that item is exposed. This module counts
//! subsets per total and reports both kinds of leak before prices go live.

use std::fmt;

use thiserror::Error;

/// Largest catalog the exhaustive counters accept.
pub const MAX_AUDIT_ITEMS: usize = 30;
/// Largest number of distinct achievable totals `audit_prices` will track.
pub const MAX_DISTINCT_TOTALS: usize = 1 << 22;
pub const DEFAULT_MIN_AMBIGUITY: u64 = 2;
pub const DEFAULT_WITNESS_CAP: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuditError {
    #[error("{n} items exceeds the audit cap of {cap}")]
    TooManyItems { n: usize, cap: usize },
    #[error("price at position {0} is zero")]
    ZeroPrice(usize),
    #[error("price vector is empty")]
    Empty,
    #[error("sum of prices overflows")]
    Overflow,
    #[error("more than {cap} distinct achievable totals")]
    TooManyTotals { cap: usize },
}

fn check_prices(prices: &[u64]) -> Result<(), AuditError> {
    if prices.len() > MAX_AUDIT_ITEMS {
        return Err(AuditError::TooManyItems {
            n: prices.len(),
            cap: MAX_AUDIT_ITEMS,
        });
    }
    if let Some(i) = prices.iter().position(|&p| p == 0) {
        return Err(AuditError::ZeroPrice(i));
    }
    prices
        .iter()
        .try_fold(0u64, |acc, &p| acc.checked_add(p))
        .ok_or(AuditError::Overflow)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsetCount {
    pub count: u64,
    /// Every subset summing to the total, as ascending index lists, when
    /// `count` does not exceed the witness cap.
    pub witnesses: Option<Vec<Vec<usize>>>,
}

/// All `(sum, mask)` pairs over `prices`, masks shifted by `base`.
fn half_sums(prices: &[u64], base: usize) -> Vec<(u64, u32)> {
    let mut out = Vec::with_capacity(1 << prices.len());
    out.push((0u64, 0u32));
    for (i, &p) in prices.iter().enumerate() {
        let bit = 1u32 << (base + i);
        for k in 0..out.len() {
            let (s, m) = out[k];
            out.push((s + p, m | bit));
        }
    }
    out
}

fn mask_to_indices(mask: u32) -> Vec<usize> {
    (0..32).filter(|i| mask & (1 << i) != 0).collect()
}

/// Number of subsets of `prices` summing to `total`, by meet-in-the-middle.
pub fn count_subsets(prices: &[u64], total: u64, witness_cap: usize) -> Result<SubsetCount, AuditError> {
    check_prices(prices)?;
    let mid = prices.len() / 2;
    let left = half_sums(&prices[..mid], 0);
    let mut right = half_sums(&prices[mid..], mid);
    right.sort_unstable();

    let matches = |s: u64| -> &[(u64, u32)] {
        match total.checked_sub(s) {
            Some(need) => {
                let lo = right.partition_point(|&(r, _)| r < need);
                let hi = right.partition_point(|&(r, _)| r <= need);
                &right[lo..hi]
            }
            None => &[],
        }
    };

    let count: u64 = left.iter().map(|&(s, _)| matches(s).len() as u64).sum();
    let witnesses = (count <= witness_cap as u64).then(|| {
        let mut w: Vec<Vec<usize>> = left
            .iter()
            .flat_map(|&(s, lm)| matches(s).iter().map(move |&(_, rm)| mask_to_indices(lm | rm)))
            .collect();
        w.sort();
        w
    });
    Ok(SubsetCount { count, witnesses })
}

/// Reference counter: enumerate all 2^n subsets.
pub fn count_subsets_naive(prices: &[u64], total: u64) -> u64 {
    assert!(prices.len() < 32);
    (0u32..1 << prices.len())
        .filter(|&mask| {
            let sum: u64 = (0..prices.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| prices[i])
                .sum();
            sum == total
        })
        .count() as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verdict {
    Ok,
    Warn,
    Unsafe,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Verdict::Ok => "OK",
            Verdict::Warn => "WARN",
            Verdict::Unsafe => "UNSAFE",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TotalLeak {
    pub total: u64,
    /// c(t): number of subsets summing to `total`.
    pub count: u64,
    /// Items in every subset summing to `total`.
    pub forced_in: Vec<usize>,
    /// Items in no subset summing to `total`.
    pub forced_out: Vec<usize>,
}

impl TotalLeak {
    pub fn has_forced(&self) -> bool {
        !self.forced_in.is_empty() || !self.forced_out.is_empty()
    }

    /// UNSAFE if this total identifies the choice, WARN if it forces some
    /// item or falls below `min_ambiguity`, else OK.
    pub fn verdict(&self, min_ambiguity: u64) -> Verdict {
        if self.count == 1 {
            Verdict::Unsafe
        } else if self.count < min_ambiguity || self.has_forced() {
            Verdict::Warn
        } else {
            Verdict::Ok
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeakReport {
    pub prices: Vec<u64>,
    /// Every achievable total, ascending, including 0 and Σ.
    pub totals: Vec<TotalLeak>,
    /// Smallest c(t) over totals strictly between 0 and Σ; `None` for a
    /// single-item catalog.
    pub min_ambiguity: Option<u64>,
    /// Nonzero totals reached by exactly one subset.
    pub fully_leaking: Vec<u64>,
}

impl LeakReport {
    pub fn sum(&self) -> u64 {
        self.prices.iter().sum()
    }

    /// Totals other than 0 and Σ, which reveal nothing beyond "nothing"
    /// and "everything" and are therefore not held against the prices.
    pub fn interior(&self) -> impl Iterator<Item = &TotalLeak> {
        let sum = self.sum();
        self.totals.iter().filter(move |t| t.total != 0 && t.total != sum)
    }

    /// UNSAFE if some interior total identifies the whole choice; WARN if
    /// some interior total is reached by fewer than `min_ambiguity` subsets
    /// or forces an item in or out; otherwise OK.
    pub fn verdict(&self, min_ambiguity: u64) -> Verdict {
        self.interior()
            .map(|t| t.verdict(min_ambiguity))
            .max()
            .unwrap_or(Verdict::Ok)
    }

    /// Interior totals whose anonymity set has at least `k` subsets.
    pub fn ambiguous_totals(&self, k: u64) -> Vec<u64> {
        self.interior().filter(|t| t.count >= k).map(|t| t.total).collect()
    }

    pub fn render(&self, min_ambiguity: u64) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "prices: {:?}", self.prices);
        let _ = writeln!(out, "achievable totals: {}", self.totals.len());
        match self.min_ambiguity {
            Some(m) => {
                let _ = writeln!(out, "min ambiguity: {m}");
            }
            None => {
                let _ = writeln!(out, "min ambiguity: n/a");
            }
        }
        let _ = writeln!(out, "fully leaking totals: {}", self.fully_leaking.len());
        for t in self.interior() {
            let v = t.verdict(min_ambiguity);
            if v != Verdict::Ok {
                let _ = writeln!(
                    out,
                    "  {v:<6} T={} count={} forced_in={:?} forced_out={:?}",
                    t.total, t.count, t.forced_in, t.forced_out
                );
            }
        }
        let _ = writeln!(
            out,
            "totals with at least {min_ambiguity} subsets: {}",
            self.ambiguous_totals(min_ambiguity).len()
        );
        let _ = writeln!(out, "verdict: {}", self.verdict(min_ambiguity));
        out
    }
}

/// Sparse subset-count table: `(total, c(total))` ascending.
fn subset_counts(prices: &[u64]) -> Result<Vec<(u64, u64)>, AuditError> {
    let mut table = vec![(0u64, 1u64)];
    for &p in prices {
        let mut next = Vec::with_capacity(table.len() * 2);
        let (mut i, mut j) = (0, 0);
        while i < table.len() || j < table.len() {
            let a = table.get(i).copied();
            let b = table.get(j).map(|&(t, c)| (t + p, c));
            match (a, b) {
                (Some(a), Some(b)) if a.0 == b.0 => {
                    next.push((a.0, a.1 + b.1));
                    i += 1;
                    j += 1;
                }
                (Some(a), Some(b)) if a.0 < b.0 => {
                    next.push(a);
                    i += 1;
                }
                (Some(a), None) => {
                    next.push(a);
                    i += 1;
                }
                (_, Some(b)) => {
                    next.push(b);
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        if next.len() > MAX_DISTINCT_TOTALS {
            return Err(AuditError::TooManyTotals {
                cap: MAX_DISTINCT_TOTALS,
            });
        }
        table = next;
    }
    Ok(table)
}

/// Full leakage report for a price vector.
pub fn audit_prices(prices: &[u64]) -> Result<LeakReport, AuditError> {
    if prices.is_empty() {
        return Err(AuditError::Empty);
    }
    check_prices(prices)?;
    let table = subset_counts(prices)?;
    let totals: Vec<u64> = table.iter().map(|&(t, _)| t).collect();
    let counts: Vec<u64> = table.iter().map(|&(_, c)| c).collect();

    let mut forced_in = vec![Vec::new(); totals.len()];
    let mut forced_out = vec![Vec::new(); totals.len()];
    let mut without = vec![0u64; totals.len()];
    for (item, &p) in prices.iter().enumerate() {
        // Subsets avoiding `item`: without[t] = c[t] - without[t - p].
        let mut j = 0;
        for k in 0..totals.len() {
            let t = totals[k];
            let shifted = match t.checked_sub(p) {
                Some(prev) => {
                    while totals[j] < prev {
                        j += 1;
                    }
                    if totals[j] == prev {
                        without[j]
                    } else {
                        0
                    }
                }
                None => 0,
            };
            without[k] = counts[k] - shifted;
            if without[k] == 0 {
                forced_in[k].push(item);
            } else if without[k] == counts[k] {
                forced_out[k].push(item);
            }
        }
    }

    let sum: u64 = prices.iter().sum();
    let leaks: Vec<TotalLeak> = totals
        .iter()
        .zip(&counts)
        .zip(forced_in.into_iter().zip(forced_out))
        .map(|((&total, &count), (forced_in, forced_out))| TotalLeak {
            total,
            count,
            forced_in,
            forced_out,
        })
        .collect();
    let min_ambiguity = leaks
        .iter()
        .filter(|t| t.total != 0 && t.total != sum)
        .map(|t| t.count)
        .min();
    let fully_leaking = leaks
        .iter()
        .filter(|t| t.total != 0 && t.count == 1)
        .map(|t| t.total)
        .collect();
    Ok(LeakReport {
        prices: prices.to_vec(),
        totals: leaks,
        min_ambiguity,
        fully_leaking,
    })
}
