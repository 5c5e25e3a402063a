//! Probability distributions over bitstrings, sample sets, marginals and parities,
//! synthetic datasets and image ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use itertools::Itertools;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bits::{BitString, SubsetMask};
use crate::error::{invalid, Error, Result};
use crate::rng::rng_from_seed;

/// Tolerance on the total mass of a distribution.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Largest register that is ever expanded into a dense vector of 2^n entries.
pub const DENSE_CAP: usize = 25;

/// A normalized map from bitstrings of a common length to positive probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    n_bits: usize,
    entries: BTreeMap<BitString, f64>,
}

impl Distribution {
    /// Build from probabilities that already sum to one. Zero entries are
    /// dropped and repeated keys are merged.
    pub fn new(n_bits: usize, entries: impl IntoIterator<Item = (BitString, f64)>) -> Result<Self> {
        let d = Self::collect(n_bits, entries)?;
        let total: f64 = d.entries.values().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return invalid(format!("probabilities sum to {total}, not 1"));
        }
        Ok(d)
    }

    /// Build from nonnegative weights, normalizing them.
    pub fn from_weights(
        n_bits: usize,
        entries: impl IntoIterator<Item = (BitString, f64)>,
    ) -> Result<Self> {
        let mut d = Self::collect(n_bits, entries)?;
        let total: f64 = d.entries.values().sum();
        if !(total > 0.0) || !total.is_finite() {
            return invalid("weights must have a positive finite total");
        }
        for v in d.entries.values_mut() {
            *v /= total;
        }
        Ok(d)
    }

    fn collect(n_bits: usize, entries: impl IntoIterator<Item = (BitString, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (x, p) in entries {
            if x.len() != n_bits {
                return invalid(format!(
                    "bitstring {x} has length {}, expected {n_bits}",
                    x.len()
                ));
            }
            if !(p >= 0.0) || !p.is_finite() {
                return invalid(format!(
                    "probability {p} for {x} is not a nonnegative number"
                ));
            }
            if p > 0.0 {
                *map.entry(x).or_insert(0.0) += p;
            }
        }
        if map.is_empty() {
            return invalid("distribution has empty support");
        }
        Ok(Distribution {
            n_bits,
            entries: map,
        })
    }

    /// Point mass on a single bitstring.
    pub fn point(x: BitString) -> Self {
        let n_bits = x.len();
        Distribution {
            n_bits,
            entries: BTreeMap::from([(x, 1.0)]),
        }
    }

    /// Uniform distribution over the given (distinct) strings.
    pub fn uniform_over(
        n_bits: usize,
        support: impl IntoIterator<Item = BitString>,
    ) -> Result<Self> {
        Self::from_weights(n_bits, support.into_iter().map(|x| (x, 1.0)))
    }

    /// Build from a dense vector indexed by the binary value of each string.
    pub fn from_dense(n_bits: usize, probs: &[f64]) -> Result<Self> {
        if probs.len() != 1usize << n_bits {
            return Err(Error::LengthMismatch {
                expected: 1 << n_bits,
                got: probs.len(),
            });
        }
        Self::new(
            n_bits,
            probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(i, &p)| (BitString::from_index(i as u64, n_bits), p)),
        )
    }

    /// Dense vector of all 2^n probabilities.
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        if self.n_bits > DENSE_CAP {
            return Err(Error::CapExceeded {
                n: self.n_bits,
                cap: DENSE_CAP,
            });
        }
        let mut v = vec![0.0; 1usize << self.n_bits];
        for (x, &p) in &self.entries {
            v[x.to_index() as usize] = p;
        }
        Ok(v)
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn probability(&self, x: &BitString) -> f64 {
        self.entries.get(x).copied().unwrap_or(0.0)
    }

    pub fn support_size(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BitString, f64)> {
        self.entries.iter().map(|(x, &p)| (x, p))
    }

    pub fn support(&self) -> impl Iterator<Item = &BitString> {
        self.entries.keys()
    }

    /// Write as CSV with header `bitstring,probability`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bitstring", "probability"])?;
        for (x, p) in self.iter() {
            w.write_record([x.to_string(), format!("{p:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for row in r.records() {
            let row = row?;
            let x: BitString = row
                .get(0)
                .ok_or_else(|| Error::Parse("missing bitstring".into()))?
                .parse()?;
            let p: f64 = row
                .get(1)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad probability for {x}")))?;
            entries.push((x, p));
        }
        let n = entries
            .first()
            .map(|(x, _)| x.len())
            .ok_or_else(|| Error::Parse("empty distribution file".into()))?;
        Self::new(n, entries)
    }
}

/// Bitstrings drawn from a distribution or a state, in draw order.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub n_bits: usize,
    pub samples: Vec<BitString>,
    pub seed: u64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Relative frequencies of a sample set.
pub fn empirical_distribution(samples: &SampleSet) -> Result<Distribution> {
    if samples.is_empty() {
        return invalid("cannot form an empirical distribution from zero samples");
    }
    let mut counts: BTreeMap<BitString, usize> = BTreeMap::new();
    for s in &samples.samples {
        *counts.entry(s.clone()).or_insert(0) += 1;
    }
    let total = samples.len() as f64;
    Ok(Distribution {
        n_bits: samples.n_bits,
        entries: counts
            .into_iter()
            .map(|(x, c)| (x, c as f64 / total))
            .collect(),
    })
}

/// Distribution of the sub-bitstring on the positions of `subset`.
pub fn marginal(dist: &Distribution, subset: &SubsetMask) -> Result<Distribution> {
    check_subset(dist, subset)?;
    if subset.is_empty() {
        return invalid("marginal over the empty subset");
    }
    let mut acc: BTreeMap<BitString, f64> = BTreeMap::new();
    for (x, p) in dist.iter() {
        *acc.entry(x.restrict(subset.indices())).or_insert(0.0) += p;
    }
    Distribution::from_weights(subset.len(), acc)
}

/// Expectation of the Z-string on `subset`: Σ_x p(x)(−1)^{parity of x on subset}.
pub fn average_parity(dist: &Distribution, subset: &SubsetMask) -> Result<f64> {
    check_subset(dist, subset)?;
    Ok(parity_sum(dist, subset.mask()))
}

pub(crate) fn parity_sum(dist: &Distribution, mask: &BitString) -> f64 {
    dist.iter()
        .map(|(x, p)| if x.masked_parity(mask) { -p } else { p })
        .sum()
}

fn check_subset(dist: &Distribution, subset: &SubsetMask) -> Result<()> {
    if subset.mask().len() != dist.n_bits() {
        return invalid(format!(
            "subset built for {} bits, distribution has {}",
            subset.mask().len(),
            dist.n_bits()
        ));
    }
    Ok(())
}

/// Σ_x |p(x) − q(x)| over the union of supports.
pub fn total_variation(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.n_bits() != q.n_bits() {
        return Err(Error::LengthMismatch {
            expected: p.n_bits(),
            got: q.n_bits(),
        });
    }
    let mut s = 0.0;
    for (x, pv) in p.iter() {
        s += (pv - q.probability(x)).abs();
    }
    for (x, qv) in q.iter() {
        if p.probability(x) == 0.0 {
            s += qv;
        }
    }
    Ok(s)
}

/// Synthetic target families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    /// Uniform on the all-zeros and all-ones strings.
    Ghz,
    /// Uniform on `k` distinct random strings.
    RandomK { k: usize },
    /// Uniform on all strings of Hamming weight ⌊n/2⌋.
    Cardinality,
    /// Three bits whose last bit is the XOR of the first two.
    Parity3,
    /// Point mass on the all-zeros string.
    PointZero,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "ghz" => Ok(DatasetKind::Ghz),
            "cardinality" => Ok(DatasetKind::Cardinality),
            "parity3" => Ok(DatasetKind::Parity3),
            "point_zero" | "pointzero" | "zero" => Ok(DatasetKind::PointZero),
            _ => match lower.strip_prefix("random_") {
                Some(k) => k
                    .parse()
                    .map(|k| DatasetKind::RandomK { k })
                    .map_err(|_| Error::Parse(format!("bad dataset '{s}'"))),
                None => Err(Error::Parse(format!("unknown dataset '{s}'"))),
            },
        }
    }
}

/// Largest number of strings any enumerated dataset may contain.
const DATASET_SUPPORT_CAP: usize = 1 << 22;

pub fn make_dataset(kind: DatasetKind, n: usize, seed: u64) -> Result<Distribution> {
    if n == 0 {
        return invalid("datasets need at least one bit");
    }
    match kind {
        DatasetKind::Ghz => {
            Distribution::uniform_over(n, [BitString::zeros(n), BitString::ones(n)])
        }
        DatasetKind::PointZero => Ok(Distribution::point(BitString::zeros(n))),
        DatasetKind::Parity3 => {
            if n != 3 {
                return invalid(format!("the parity dataset has 3 bits, not {n}"));
            }
            let support = (0..4u64).map(|i| {
                let (a, b) = (i >> 1 & 1 == 1, i & 1 == 1);
                BitString::from_bits(&[a, b, a ^ b])
            });
            Distribution::uniform_over(3, support)
        }
        DatasetKind::Cardinality => {
            let w = n / 2;
            if binomial_f64(n, w) > DATASET_SUPPORT_CAP as f64 {
                return Err(Error::Budget(format!(
                    "cardinality dataset for n = {n} is too large"
                )));
            }
            let support = (0..n).combinations(w).map(|ones| {
                let mut x = BitString::zeros(n);
                for i in ones {
                    x.set(i, true);
                }
                x
            });
            Distribution::uniform_over(n, support)
        }
        DatasetKind::RandomK { k } => {
            if k == 0 {
                return invalid("RANDOM_K needs k >= 1");
            }
            if n < 64 && k as u128 > 1u128 << n {
                return invalid(format!("cannot draw {k} distinct strings of {n} bits"));
            }
            if k > DATASET_SUPPORT_CAP {
                return Err(Error::Budget(format!("{k} random strings is too many")));
            }
            let mut rng = rng_from_seed(seed);
            let mut chosen = BTreeSet::new();
            while chosen.len() < k {
                let bits: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
                chosen.insert(BitString::from_bits(&bits));
            }
            Distribution::uniform_over(n, chosen)
        }
    }
}

pub(crate) fn binomial_f64(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Parse whitespace-separated pixel grids separated by blank lines, binarize
/// each pixel against `threshold_factor` times the mean pixel value over the
/// whole dataset (strictly greater means 1), flatten row-major and return the
/// empirical distribution of the resulting strings.
pub fn parse_image_dataset(text: &str, threshold_factor: f64) -> Result<Distribution> {
    let mut images: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut current: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                images.push(std::mem::take(&mut current));
            }
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad pixel '{t}'", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        current.push(row);
    }
    if !current.is_empty() {
        images.push(current);
    }
    let first = images
        .first()
        .ok_or_else(|| Error::Parse("no images found".into()))?;
    let (rows, cols) = (first.len(), first[0].len());
    for (i, img) in images.iter().enumerate() {
        if img.len() != rows || img.iter().any(|r| r.len() != cols) {
            return Err(Error::Parse(format!(
                "image {i} is not a {rows}x{cols} grid"
            )));
        }
    }
    let n = rows * cols;
    let total: f64 = images.iter().flatten().flatten().sum();
    let threshold = threshold_factor * total / (n * images.len()) as f64;
    let strings = images.iter().map(|img| {
        let bits: Vec<bool> = img.iter().flatten().map(|&v| v > threshold).collect();
        BitString::from_bits(&bits)
    });
    let samples = SampleSet {
        n_bits: n,
        samples: strings.collect(),
        seed: 0,
    };
    empirical_distribution(&samples)
}

pub fn ingest_image_dataset(path: &Path, threshold_factor: f64) -> Result<Distribution> {
    let text = std::fs::read_to_string(path)?;
    parse_image_dataset(&text, threshold_factor)
}
