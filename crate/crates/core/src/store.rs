//! Embedding datasets, attribute-label sidecars and dataset manifests.
//!
//! Binary layout of an embedding file (all integers little-endian):
//!
//! ```text
//! 0..8     magic  b"DBLENS01"
//! 8..12    n      u32
//! 12..16   d      u32
//! 16..     n*d    f32, row-major
//! ...      n      newline-terminated UTF-8 ids
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const EMB_MAGIC: &[u8; 8] = b"DBLENS01";
const HEADER_LEN: usize = 16;

/// An `n x d` matrix of encoder features with one unique id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    rows: Array2<f32>,
    ids: Vec<String>,
}

impl EmbeddingDataset {
    pub fn new(rows: Array2<f32>, ids: Vec<String>) -> Result<Self> {
        let (n, d) = rows.dim();
        if n == 0 {
            return Err(Error::EmptyDataset("dataset has no rows".into()));
        }
        if d == 0 {
            return Err(Error::Validation("feature dimension must be >= 1".into()));
        }
        if ids.len() != n {
            return Err(Error::Validation(format!(
                "{} ids for {} rows",
                ids.len(),
                n
            )));
        }
        for (i, row) in rows.outer_iter().enumerate() {
            if let Some(c) = row.iter().position(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite value at row {i}, column {c}"
                )));
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if id.is_empty() || id.contains('\n') || id.contains('\r') {
                return Err(Error::Validation(format!("invalid sample id {id:?}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id `{id}`")));
            }
        }
        Ok(Self {
            rows: rows.as_standard_layout().into_owned(),
            ids,
        })
    }

    /// Builds a dataset from f64 rows, rounding to the 32-bit storage precision.
    pub fn from_f64_rows(rows: &[Vec<f64>], ids: Vec<String>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::Validation(format!(
                    "row {i} has length {}, expected {d}",
                    r.len()
                )));
            }
            flat.extend(r.iter().map(|&x| x as f32));
        }
        let arr = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::Validation(e.to_string()))?;
        Self::new(arr, ids)
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Array2<f32> {
        &self.rows
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.rows.row(i)
    }

    /// Row `i` widened to f64.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.rows.row(i).iter().map(|&x| x as f64).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Selects rows by index, keeping the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset("selection is empty".into()));
        }
        let rows = self.rows.select(ndarray::Axis(0), indices);
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        Self::new(rows, ids)
    }

    /// Little-endian f32 payload bytes, row-major.
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.n() * self.d() * 4);
        for x in self.rows.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Hex SHA-256 of the float payload.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.payload_bytes()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.n() * self.d() * 4);
        out.extend_from_slice(EMB_MAGIC);
        out.extend_from_slice(&(self.n() as u32).to_le_bytes());
        out.extend_from_slice(&(self.d() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload_bytes());
        for id in &self.ids {
            out.extend_from_slice(id.as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != EMB_MAGIC {
            return Err(Error::Format("missing DBLENS01 magic header".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Corruption("truncated header".into()));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if n == 0 || d == 0 {
            return Err(Error::Validation(format!("header declares n={n}, d={d}")));
        }
        let payload_len = n
            .checked_mul(d)
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
        let end = HEADER_LEN + payload_len;
        if bytes.len() < end {
            return Err(Error::Corruption(format!(
                "payload truncated: expected {payload_len} bytes, found {}",
                bytes.len() - HEADER_LEN
            )));
        }
        let values: Vec<f32> = bytes[HEADER_LEN..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        let text = std::str::from_utf8(&bytes[end..])
            .map_err(|e| Error::Corruption(format!("id block is not UTF-8: {e}")))?;
        let text = text.strip_suffix('\n').unwrap_or(text);
        let ids: Vec<String> = if text.is_empty() {
            Vec::new()
        } else {
            text.split('\n').map(str::to_owned).collect()
        };
        if ids.len() != n {
            return Err(Error::Corruption(format!(
                "id block has {} lines, expected {n}",
                ids.len()
            )));
        }
        let rows = Array2::from_shape_vec((n, d), values).expect("shape checked above");
        Self::new(rows, ids)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingDataset::from_bytes(&bytes)
}

pub fn save_embeddings(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ds.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Group labels for one attribute, aligned to a dataset's row order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeTable {
    pub attribute: String,
    pub groups: Vec<String>,
    /// One entry per dataset row; `None` marks an unlabeled sample.
    pub labels: Vec<Option<usize>>,
}

impl AttributeTable {
    pub fn new(attribute: String, groups: Vec<String>, labels: Vec<Option<usize>>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Validation("group vocabulary is empty".into()));
        }
        let mut seen = HashSet::new();
        for g in &groups {
            if !seen.insert(g) {
                return Err(Error::Validation(format!("duplicate group name `{g}`")));
            }
        }
        for (row, l) in labels.iter().enumerate() {
            if let Some(g) = *l {
                if g >= groups.len() {
                    return Err(Error::Validation(format!(
                        "row {row}: label {g} outside {} groups",
                        groups.len()
                    )));
                }
            }
        }
        Ok(Self {
            attribute,
            groups,
            labels,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_index(&self, name: &str) -> Result<usize> {
        self.groups
            .iter()
            .position(|g| g == name)
            .ok_or_else(|| Error::Lookup {
                kind: "group",
                name: name.to_owned(),
            })
    }

    /// Row indices labeled with group `g`, in row order.
    pub fn members(&self, g: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| (*l == Some(g)).then_some(i))
            .collect()
    }

    pub fn unlabeled(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.is_none().then_some(i))
            .collect()
    }

    /// Labeled sample count per group.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.groups.len()];
        for g in self.labels.iter().flatten() {
            sizes[*g] += 1;
        }
        sizes
    }

    /// Sidecar JSON for `ds` (ids of unlabeled rows are omitted).
    pub fn to_sidecar_json(&self, ds: &EmbeddingDataset) -> Result<String> {
        if self.labels.len() != ds.n() {
            return Err(Error::Shape {
                expected: ds.n(),
                actual: self.labels.len(),
            });
        }
        let mut labels = serde_json::Map::new();
        for (id, l) in ds.ids().iter().zip(&self.labels) {
            if let Some(g) = l {
                labels.insert(id.clone(), (*g).into());
            }
        }
        let doc = serde_json::json!({
            "attribute": self.attribute,
            "groups": self.groups,
            "labels": labels,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// `labels` object of a sidecar, rejecting duplicate keys.
struct LabelEntries(Vec<(String, i64)>);

impl<'de> Deserialize<'de> for LabelEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = LabelEntries;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from sample id to group index")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut seen = HashSet::new();
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, i64>()? {
                    if !seen.insert(k.clone()) {
                        return Err(serde::de::Error::custom(format!(
                            "duplicate id `{k}` in sidecar"
                        )));
                    }
                    out.push((k, v));
                }
                Ok(LabelEntries(out))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

#[derive(Deserialize)]
struct Sidecar {
    attribute: String,
    groups: Vec<String>,
    labels: LabelEntries,
}

/// Parses a label sidecar and aligns it to `ds` by id.
pub fn parse_labels(json: &str, ds: &EmbeddingDataset) -> Result<AttributeTable> {
    let sidecar: Sidecar = serde_json::from_str(json).map_err(|e| {
        if e.to_string().contains("duplicate id") {
            Error::Validation(e.to_string())
        } else {
            Error::Json(e)
        }
    })?;
    if sidecar.groups.is_empty() {
        return Err(Error::Validation("group vocabulary is empty".into()));
    }
    let index: HashMap<&str, usize> = ds
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let g_count = sidecar.groups.len();
    let mut labels = vec![None; ds.n()];
    for (id, value) in sidecar.labels.0 {
        let row = *index.get(id.as_str()).ok_or_else(|| {
            Error::Validation(format!("sidecar id `{id}` is not in the dataset"))
        })?;
        if value < 0 || value as usize >= g_count {
            return Err(Error::Validation(format!(
                "label {value} for `{id}` outside {g_count} groups"
            )));
        }
        labels[row] = Some(value as usize);
    }
    AttributeTable::new(sidecar.attribute, sidecar.groups, labels)
}

pub fn load_labels(path: impl AsRef<Path>, ds: &EmbeddingDataset) -> Result<AttributeTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, ds)
}

pub fn save_labels(table: &AttributeTable, ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, table.to_sidecar_json(ds)?).map_err(|e| Error::io(path, e))
}

/// The rows of `ds` labeled `group`, in their original relative order.
pub fn subset_by_group(ds: &EmbeddingDataset, table: &AttributeTable, group: &str) -> Result<EmbeddingDataset> {
    if table.labels.len() != ds.n() {
        return Err(Error::Shape {
            expected: ds.n(),
            actual: table.labels.len(),
        });
    }
    let g = table.group_index(group)?;
    let members = table.members(g);
    if members.is_empty() {
        return Err(Error::EmptyDataset(format!("group `{group}` has no members")));
    }
    ds.select(&members)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub embeddings: PathBuf,
    pub labels: Vec<PathBuf>,
    pub checksum: String,
    pub note: String,
}

impl DatasetManifest {
    pub fn describe(ds: &EmbeddingDataset, embeddings: PathBuf, labels: Vec<PathBuf>, note: impl Into<String>) -> Self {
        Self {
            embeddings,
            labels,
            checksum: ds.checksum(),
            note: note.into(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Loads the referenced embeddings, relative to `base` when not absolute,
    /// and checks the payload checksum.
    pub fn load_dataset(&self, base: &Path) -> Result<EmbeddingDataset> {
        let path = if self.embeddings.is_absolute() {
            self.embeddings.clone()
        } else {
            base.join(&self.embeddings)
        };
        let ds = load_embeddings(&path)?;
        let actual = ds.checksum();
        if actual != self.checksum {
            return Err(Error::Corruption(format!(
                "checksum mismatch for {}: manifest {}, payload {actual}",
                path.display(),
                self.checksum
            )));
        }
        Ok(ds)
    }
}
