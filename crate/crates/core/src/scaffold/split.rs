use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{canonical_key, murcko_scaffold};
use crate::molio::{ring_counts, LabeledDataset, MolecularGraph};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    Ratios([f64; 3]),
    #[error("scaffold split needs at least 3 scaffold groups, found {0}")]
    TooFewGroups(usize),
    #[error("ring-split buckets '{0}' and '{1}' overlap")]
    Overlap(String, String),
    #[error("ring-split bucket '{0}' has an empty range")]
    EmptyBucket(String),
    #[error("no ring-split bucket covers {rings} rings with {aromatic} aromatic")]
    Uncovered { rings: usize, aromatic: usize },
}

/// Disjoint index lists into a dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Scaffold keys for every record of a dataset.
pub fn scaffold_keys(ds: &LabeledDataset) -> Vec<String> {
    ds.records
        .iter()
        .map(|r| canonical_key(&murcko_scaffold(&r.graph)))
        .collect()
}

/// Groups record indices by key; groups come out largest first, equal sizes ordered by key
/// or, with a seed, shuffled.
fn ordered_groups(keys: &[String], seed: Option<u64>) -> Vec<Vec<usize>> {
    let mut by_key: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        by_key.entry(k).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = by_key.into_values().collect();
    if let Some(seed) = seed {
        groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    // Stable sort keeps key order (or the shuffled order) within equal sizes.
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
    groups
}

/// Scaffold split over precomputed keys.
///
/// Groups are taken largest first. Train takes groups until it holds at least `ratios.0` of
/// the records, always leaving two groups behind. Valid then takes groups until it holds
/// its share of what train left, `ratios.1 / (ratios.1 + ratios.2)`, leaving one group
/// behind. Test gets the rest.
pub fn scaffold_split_keys(
    keys: &[String],
    ratios: [f64; 3],
    seed: Option<u64>,
) -> Result<SplitAssignment, SplitError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(SplitError::Ratios(ratios));
    }
    let groups = ordered_groups(keys, seed);
    if groups.len() < 3 {
        return Err(SplitError::TooFewGroups(groups.len()));
    }
    let n = keys.len();
    let train_target = (ratios[0] * n as f64 - 1e-9).ceil() as usize;
    let mut out = SplitAssignment::default();
    let mut it = groups.into_iter().peekable();
    let mut remaining_groups = it.len();
    while out.train.len() < train_target && remaining_groups > 2 {
        out.train.extend(it.next().expect("counted"));
        remaining_groups -= 1;
    }
    let rest = n - out.train.len();
    let tail = ratios[1] + ratios[2];
    let valid_share = if tail > 0.0 { ratios[1] / tail } else { 0.5 };
    let valid_target = (valid_share * rest as f64 - 1e-9).ceil() as usize;
    while out.valid.len() < valid_target && remaining_groups > 1 {
        out.valid.extend(it.next().expect("counted"));
        remaining_groups -= 1;
    }
    for g in it {
        out.test.extend(g);
    }
    out.train.sort_unstable();
    out.valid.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn scaffold_split(
    ds: &LabeledDataset,
    ratios: [f64; 3],
    seed: Option<u64>,
) -> Result<SplitAssignment, SplitError> {
    scaffold_split_keys(&scaffold_keys(ds), ratios, seed)
}

/// Inclusive range; `max: None` is unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountRange {
    pub min: usize,
    pub max: Option<usize>,
}

impl CountRange {
    pub const fn new(min: usize, max: Option<usize>) -> Self {
        CountRange { min, max }
    }

    pub fn contains(&self, v: usize) -> bool {
        v >= self.min && self.max.is_none_or(|m| v <= m)
    }

    fn intersect(&self, other: &CountRange) -> Option<CountRange> {
        let min = self.min.max(other.min);
        let max = match (self.max, other.max) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        (max.is_none_or(|m| min <= m)).then_some(CountRange { min, max })
    }
}

/// Predicate over `(rings, aromatic rings)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingBucket {
    pub name: String,
    pub rings: CountRange,
    pub aromatic: CountRange,
}

impl RingBucket {
    pub fn matches(&self, rings: usize, aromatic: usize) -> bool {
        self.rings.contains(rings) && self.aromatic.contains(aromatic)
    }

    /// Whether any point with `aromatic <= rings` satisfies the predicate.
    fn satisfiable(&self) -> bool {
        self.rings
            .max
            .is_none_or(|r_max| self.aromatic.min <= r_max && self.rings.min <= r_max)
            && self.aromatic.max.is_none_or(|a| self.aromatic.min <= a)
    }
}

pub fn default_ring_buckets() -> Vec<RingBucket> {
    let b = |name: &str, rings: CountRange, aromatic: CountRange| RingBucket {
        name: name.to_string(),
        rings,
        aromatic,
    };
    let any = CountRange::new(0, None);
    vec![
        b("D-1", CountRange::new(0, Some(0)), any),
        b("D-2", CountRange::new(1, Some(2)), CountRange::new(1, None)),
        b(
            "D-3",
            CountRange::new(1, Some(2)),
            CountRange::new(0, Some(0)),
        ),
        b("O-1", CountRange::new(3, Some(4)), any),
        b("O-2", CountRange::new(5, None), any),
    ]
}

/// Rejects buckets that can never match or that share a lattice point with another.
pub fn validate_buckets(buckets: &[RingBucket]) -> Result<(), SplitError> {
    for b in buckets {
        if !b.satisfiable() {
            return Err(SplitError::EmptyBucket(b.name.clone()));
        }
    }
    for (i, a) in buckets.iter().enumerate() {
        for b in &buckets[i + 1..] {
            let joint = match (
                a.rings.intersect(&b.rings),
                a.aromatic.intersect(&b.aromatic),
            ) {
                (Some(r), Some(ar)) => RingBucket {
                    name: String::new(),
                    rings: r,
                    aromatic: ar,
                }
                .satisfiable(),
                _ => false,
            };
            if joint {
                return Err(SplitError::Overlap(a.name.clone(), b.name.clone()));
            }
        }
    }
    Ok(())
}

/// Record indices per bucket name, each molecule placed by its scaffold's ring counts.
pub fn ring_split_graphs(
    graphs: &[&MolecularGraph],
    buckets: &[RingBucket],
) -> Result<BTreeMap<String, Vec<usize>>, SplitError> {
    validate_buckets(buckets)?;
    let mut out: BTreeMap<String, Vec<usize>> = buckets
        .iter()
        .map(|b| (b.name.clone(), Vec::new()))
        .collect();
    for (i, g) in graphs.iter().enumerate() {
        let (rings, aromatic) = ring_counts(&murcko_scaffold(g));
        let bucket = buckets
            .iter()
            .find(|b| b.matches(rings, aromatic))
            .ok_or(SplitError::Uncovered { rings, aromatic })?;
        out.get_mut(&bucket.name).expect("initialized").push(i);
    }
    Ok(out)
}

pub fn ring_split(
    ds: &LabeledDataset,
    buckets: &[RingBucket],
) -> Result<BTreeMap<String, Vec<usize>>, SplitError> {
    let graphs: Vec<&MolecularGraph> = ds.records.iter().map(|r| &r.graph).collect();
    ring_split_graphs(&graphs, buckets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        validate_buckets(&default_ring_buckets()).unwrap();
    }

    #[test]
    fn overlap_detected() {
        let mut b = default_ring_buckets();
        b[3].rings = CountRange::new(2, Some(4));
        assert!(matches!(
            validate_buckets(&b),
            Err(SplitError::Overlap(_, _))
        ));
    }

    #[test]
    fn aromatic_above_rings_is_not_overlap() {
        // Both need aromatic >= 3 with rings <= 2: unreachable, so no shared point.
        let a = RingBucket {
            name: "a".into(),
            rings: CountRange::new(0, Some(2)),
            aromatic: CountRange::new(0, Some(0)),
        };
        let b = RingBucket {
            name: "b".into(),
            rings: CountRange::new(0, Some(5)),
            aromatic: CountRange::new(3, None),
        };
        validate_buckets(&[a, b]).unwrap();
    }
}
