//! The sender's priced inventory.
//!
//! A catalog is an ordered list of items, each carrying a positive integer
//! weight (its price) and an opaque payload. Both parties agree on a flat
//! enumeration of every key share in the catalog: item `i` owns the
//! contiguous range `offsets[i] .. offsets[i] + weight[i]` of `[0, N)`.
//! The base OT runs over that flat space.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::symcrypto::KeyLength;

/// Name of the manifest-source file inside a catalog directory.
pub const MANIFEST_SOURCE: &str = "catalog.tsv";

/// Default per-item weight cap.
pub const DEFAULT_MAX_WEIGHT: u64 = 1 << 20;

/// Longest accepted item id, in bytes.
pub const MAX_ID_LEN: usize = 255;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CatalogError {
    #[error("line {line}: expected `id<TAB>weight<TAB>filename`")]
    MalformedLine { line: usize },
    #[error("line {line}: weight is not an integer: {text:?}")]
    BadWeight { line: usize, text: String },
    #[error("item {id:?}: nonpositive weight")]
    NonpositiveWeight { id: String },
    #[error("item {id:?}: weight {weight} exceeds cap {cap}")]
    WeightTooLarge { id: String, weight: u64, cap: u64 },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("invalid item id {0:?}")]
    InvalidId(String),
    #[error("invalid payload filename {0:?}")]
    InvalidFilename(String),
    #[error("missing payload file {0:?}")]
    MissingPayload(String),
    #[error("catalog is empty")]
    Empty,
    #[error("total weight overflows u64")]
    Overflow,
    #[error("item index {index} out of range (n = {n})")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("duplicate choice index {0}")]
    DuplicateChoice(usize),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Which of the two weighted-OT constructions a bundle was published for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProtocolMode {
    /// Nested locks: item `i` sits under `p_i` independent encryption layers.
    P1,
    /// Key splitting: item `i` has one key, XOR-split into `p_i` shares.
    P2,
}

impl ProtocolMode {
    pub fn code(self) -> u8 {
        match self {
            ProtocolMode::P1 => 1,
            ProtocolMode::P2 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(ProtocolMode::P1),
            2 => Some(ProtocolMode::P2),
            _ => None,
        }
    }
}

impl fmt::Display for ProtocolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolMode::P1 => f.write_str("p1"),
            ProtocolMode::P2 => f.write_str("p2"),
        }
    }
}

impl std::str::FromStr for ProtocolMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => Ok(ProtocolMode::P1),
            "p2" => Ok(ProtocolMode::P2),
            other => Err(format!("unknown mode {other:?} (expected p1 or p2)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Item {
    pub id: String,
    pub weight: u64,
    pub payload: Vec<u8>,
}

/// An ordered, validated list of items. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Catalog {
    items: Vec<Item>,
    total: u64,
}

/// Limits applied while building a catalog.
#[derive(Clone, Copy, Debug)]
pub struct CatalogLimits {
    pub max_weight: u64,
}

impl Default for CatalogLimits {
    fn default() -> Self {
        CatalogLimits {
            max_weight: DEFAULT_MAX_WEIGHT,
        }
    }
}

/// Item ids double as file names in a bundle directory, so they are kept to
/// a conservative character set.
pub fn validate_id(id: &str) -> Result<(), CatalogError> {
    let ok = !id.is_empty()
        && id.len() <= MAX_ID_LEN
        && id != "."
        && id != ".."
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
    if ok {
        Ok(())
    } else {
        Err(CatalogError::InvalidId(id.to_string()))
    }
}

impl Catalog {
    pub fn new(items: Vec<Item>) -> Result<Self, CatalogError> {
        Self::with_limits(items, CatalogLimits::default())
    }

    pub fn with_limits(items: Vec<Item>, limits: CatalogLimits) -> Result<Self, CatalogError> {
        if items.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut seen = HashSet::new();
        let mut total: u64 = 0;
        for item in &items {
            validate_id(&item.id)?;
            if !seen.insert(item.id.as_str()) {
                return Err(CatalogError::DuplicateId(item.id.clone()));
            }
            if item.weight == 0 {
                return Err(CatalogError::NonpositiveWeight {
                    id: item.id.clone(),
                });
            }
            if item.weight > limits.max_weight {
                return Err(CatalogError::WeightTooLarge {
                    id: item.id.clone(),
                    weight: item.weight,
                    cap: limits.max_weight,
                });
            }
            total = total
                .checked_add(item.weight)
                .ok_or(CatalogError::Overflow)?;
        }
        Ok(Catalog { items, total })
    }

    /// Convenience constructor for tests and demos: item `i` gets id
    /// `item{i}` and the given payload.
    pub fn from_weights_and_payloads(
        weights: &[u64],
        payloads: Vec<Vec<u8>>,
    ) -> Result<Self, CatalogError> {
        assert_eq!(weights.len(), payloads.len());
        let items = weights
            .iter()
            .zip(payloads)
            .enumerate()
            .map(|(i, (&weight, payload))| Item {
                id: format!("item{i}"),
                weight,
                payload,
            })
            .collect();
        Catalog::new(items)
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// N = Σ p_i.
    pub fn total_weight(&self) -> u64 {
        self.total
    }

    pub fn weights(&self) -> Vec<u64> {
        self.items.iter().map(|item| item.weight).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|item| item.id == id)
    }

    pub fn flat_index(&self) -> FlatIndexMap {
        // Weights were validated and their sum checked on construction.
        FlatIndexMap::new(&self.weights()).expect("validated catalog")
    }
}

/// One parsed line of a manifest-source file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceEntry {
    pub id: String,
    pub weight: u64,
    pub filename: String,
}

/// Parse the line-oriented `id<TAB>weight<TAB>filename` format. Blank lines
/// and lines starting with `#` are skipped.
pub fn parse_manifest_source(text: &str) -> Result<Vec<SourceEntry>, CatalogError> {
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(CatalogError::MalformedLine { line });
        }
        let id = fields[0].trim();
        validate_id(id)?;
        let weight_text = fields[1].trim();
        let weight: i128 = weight_text.parse().map_err(|_| CatalogError::BadWeight {
            line,
            text: weight_text.to_string(),
        })?;
        if weight <= 0 {
            return Err(CatalogError::NonpositiveWeight { id: id.to_string() });
        }
        let weight = u64::try_from(weight).map_err(|_| CatalogError::Overflow)?;
        let filename = fields[2].trim();
        if filename.is_empty()
            || filename.contains('/')
            || filename.contains('\\')
            || filename == "."
            || filename == ".."
        {
            return Err(CatalogError::InvalidFilename(filename.to_string()));
        }
        entries.push(SourceEntry {
            id: id.to_string(),
            weight,
            filename: filename.to_string(),
        });
    }
    Ok(entries)
}

pub fn load_catalog(dir: &Path) -> Result<Catalog, CatalogError> {
    load_catalog_with_limits(dir, CatalogLimits::default())
}

pub fn load_catalog_with_limits(dir: &Path, limits: CatalogLimits) -> Result<Catalog, CatalogError> {
    let source_path = dir.join(MANIFEST_SOURCE);
    let text = fs::read_to_string(&source_path).map_err(|e| CatalogError::Io {
        path: source_path.display().to_string(),
        message: e.to_string(),
    })?;
    let entries = parse_manifest_source(&text)?;
    let mut items = Vec::with_capacity(entries.len());
    for entry in entries {
        let path = dir.join(&entry.filename);
        if !path.is_file() {
            return Err(CatalogError::MissingPayload(entry.filename));
        }
        let payload = fs::read(&path).map_err(|e| CatalogError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        items.push(Item {
            id: entry.id,
            weight: entry.weight,
            payload,
        });
    }
    Catalog::with_limits(items, limits)
}

/// Canonical bijection between `(item, share)` pairs and `[0, N)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatIndexMap {
    offsets: Vec<u64>,
    weights: Vec<u64>,
    total: u64,
}

impl FlatIndexMap {
    pub fn new(weights: &[u64]) -> Result<Self, CatalogError> {
        if weights.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut offsets = Vec::with_capacity(weights.len());
        let mut acc: u64 = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w == 0 {
                return Err(CatalogError::NonpositiveWeight {
                    id: format!("#{i}"),
                });
            }
            offsets.push(acc);
            acc = acc.checked_add(w).ok_or(CatalogError::Overflow)?;
        }
        Ok(FlatIndexMap {
            offsets,
            weights: weights.to_vec(),
            total: acc,
        })
    }

    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    pub fn weights(&self) -> &[u64] {
        &self.weights
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn items(&self) -> usize {
        self.offsets.len()
    }

    /// Flat position of share `share` of item `item`.
    pub fn flat_of(&self, item: usize, share: u64) -> Option<u64> {
        let weight = *self.weights.get(item)?;
        (share < weight).then(|| self.offsets[item] + share)
    }

    /// Inverse of [`flat_of`](Self::flat_of).
    pub fn item_of(&self, flat: u64) -> Option<(usize, u64)> {
        if flat >= self.total {
            return None;
        }
        let item = self.offsets.partition_point(|&off| off <= flat) - 1;
        Some((item, flat - self.offsets[item]))
    }

    /// The flat range owned by `item`.
    pub fn range_of(&self, item: usize) -> Option<std::ops::Range<u64>> {
        let weight = *self.weights.get(item)?;
        Some(self.offsets[item]..self.offsets[item] + weight)
    }
}

/// Σ_{i ∈ choices} p_i. Choices must be distinct and in range.
pub fn total_price(catalog: &Catalog, choices: &[usize]) -> Result<u64, CatalogError> {
    price_of_weights(&catalog.weights(), choices)
}

pub fn price_of_weights(weights: &[u64], choices: &[usize]) -> Result<u64, CatalogError> {
    let mut seen = HashSet::new();
    let mut total: u64 = 0;
    for &index in choices {
        let weight = *weights.get(index).ok_or(CatalogError::IndexOutOfRange {
            index,
            n: weights.len(),
        })?;
        if !seen.insert(index) {
            return Err(CatalogError::DuplicateChoice(index));
        }
        total = total.checked_add(weight).ok_or(CatalogError::Overflow)?;
    }
    Ok(total)
}

/// SHA-256 of a published ciphertext, as stored in the manifest.
pub fn ciphertext_digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub weight: u64,
    pub ciphertext_len: u64,
    pub digest: [u8; 32],
}

/// Public description of a published bundle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub mode: ProtocolMode,
    pub group_id: String,
    pub key_len: KeyLength,
    /// Random identifier chosen at publish time; bound into every
    /// ciphertext's associated data.
    pub catalog_id: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn weights(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    pub fn flat_index(&self) -> Result<FlatIndexMap, CatalogError> {
        FlatIndexMap::new(&self.weights())
    }

    /// Checks a ciphertext against its manifest entry, bit for bit.
    pub fn verify(&self, index: usize, ciphertext: &[u8]) -> bool {
        self.entries
            .get(index)
            .map(|e| e.ciphertext_len == ciphertext.len() as u64 && e.digest == ciphertext_digest(ciphertext))
            .unwrap_or(false)
    }

    /// Human-readable dump used by the CLI.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# mode={} group={} lambda={} catalog={}\n",
            self.mode,
            self.group_id,
            self.key_len.bits(),
            self.catalog_id
        ));
        for entry in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                entry.id,
                entry.weight,
                entry.ciphertext_len,
                hex::encode(entry.digest)
            ));
        }
        out
    }
}
