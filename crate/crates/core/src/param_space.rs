//! Partitioned parameter vectors and per-objective gradient containers.
//!
//! A model is a set of named dense blocks: ordered backbone blocks (the
//! "layers" shared by every objective) plus one head block per
//! (language, task) pair. All optimizer arithmetic lives here as pure
//! functions over that structure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Identifier of one parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockId {
    /// Shared backbone layer, contiguous indices `0..L`.
    Backbone(usize),
    /// Head for language `language` and task `task`; owned by one objective.
    Head { language: usize, task: usize },
}

impl BlockId {
    pub fn is_backbone(&self) -> bool {
        matches!(self, BlockId::Backbone(_))
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockId::Backbone(i) => write!(f, "backbone_{i}"),
            BlockId::Head { language, task } => write!(f, "head_{language}_{task}"),
        }
    }
}

impl FromStr for BlockId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| -> Result<usize> {
            t.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad block id `{s}`")))
        };
        if let Some(rest) = s.strip_prefix("backbone_") {
            return Ok(BlockId::Backbone(parse(rest)?));
        }
        if let Some(rest) = s.strip_prefix("head_") {
            let mut parts = rest.splitn(2, '_');
            let language = parse(parts.next().unwrap_or(""))?;
            let task = parse(parts.next().unwrap_or(""))?;
            return Ok(BlockId::Head { language, task });
        }
        Err(Error::Config(format!("bad block id `{s}`")))
    }
}

impl Serialize for BlockId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BlockId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Identifier of one training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObjectiveId {
    /// Supervised objective for `(language, task)`; owns head block
    /// `BlockId::Head { language, task }`.
    Supervised { language: usize, task: usize },
    /// The single self-supervised objective; touches the backbone only.
    Unsupervised,
}

impl ObjectiveId {
    pub fn head_block(&self) -> Option<BlockId> {
        match self {
            ObjectiveId::Supervised { language, task } => Some(BlockId::Head {
                language: *language,
                task: *task,
            }),
            ObjectiveId::Unsupervised => None,
        }
    }

    pub fn is_supervised(&self) -> bool {
        matches!(self, ObjectiveId::Supervised { .. })
    }
}

impl fmt::Display for ObjectiveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveId::Supervised { language, task } => write!(f, "t{language}_n{task}"),
            ObjectiveId::Unsupervised => write!(f, "unsup"),
        }
    }
}

impl FromStr for ObjectiveId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "unsup" {
            return Ok(ObjectiveId::Unsupervised);
        }
        let bad = || Error::Config(format!("bad objective id `{s}`, expected `t<i>_n<j>` or `unsup`"));
        let rest = s.strip_prefix('t').ok_or_else(bad)?;
        let (lang, task) = rest.split_once("_n").ok_or_else(bad)?;
        Ok(ObjectiveId::Supervised {
            language: lang.parse().map_err(|_| bad())?,
            task: task.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for ObjectiveId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ObjectiveId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Dense parameter (or gradient) vector partitioned into named blocks.
///
/// All arithmetic between two vectors requires identical block structure.
/// Values are plain `f64`; every library-produced update is checked finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    blocks: BTreeMap<BlockId, Vec<f64>>,
}

impl ParamVector {
    pub fn new(blocks: BTreeMap<BlockId, Vec<f64>>) -> Self {
        ParamVector { blocks }
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            blocks: self
                .blocks
                .iter()
                .map(|(id, v)| (*id, vec![0.0; v.len()]))
                .collect(),
        }
    }

    pub fn block(&self, id: &BlockId) -> Option<&[f64]> {
        self.blocks.get(id).map(|v| v.as_slice())
    }

    pub fn block_ids(&self) -> impl Iterator<Item = &BlockId> {
        self.blocks.keys()
    }

    pub fn backbone_ids(&self) -> BTreeSet<BlockId> {
        self.blocks
            .keys()
            .filter(|id| id.is_backbone())
            .copied()
            .collect()
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&BlockId, &[f64])> {
        self.blocks.iter().map(|(id, v)| (id, v.as_slice()))
    }

    pub fn dim(&self) -> usize {
        self.blocks.values().map(|v| v.len()).sum()
    }

    pub fn same_structure(&self, other: &ParamVector) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(other.blocks.iter())
                .all(|((ida, va), (idb, vb))| ida == idb && va.len() == vb.len())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.values().flatten().all(|v| v.is_finite())
    }

    /// Restriction of this vector to its backbone blocks.
    pub fn backbone_only(&self) -> ParamVector {
        ParamVector {
            blocks: self
                .blocks
                .iter()
                .filter(|(id, _)| id.is_backbone())
                .map(|(id, v)| (*id, v.clone()))
                .collect(),
        }
    }

    /// Euclidean norm over `filter` (all blocks when `None`).
    pub fn norm(&self, filter: Option<&BTreeSet<BlockId>>) -> f64 {
        inner(self, self, filter)
            .expect("self always shares structure with itself")
            .sqrt()
    }

    /// In-place `block += scale * delta` for one block; checks finiteness.
    pub fn update_block(&mut self, id: &BlockId, scale: f64, delta: &[f64]) -> Result<()> {
        let block = self.blocks.get_mut(id).ok_or_else(|| {
            Error::StructureMismatch(format!("no block {id} in parameter vector"))
        })?;
        if block.len() != delta.len() {
            return Err(Error::StructureMismatch(format!(
                "block {id} has dim {}, update has dim {}",
                block.len(),
                delta.len()
            )));
        }
        for (x, d) in block.iter_mut().zip(delta) {
            *x += scale * d;
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("update of block {id}")));
            }
        }
        Ok(())
    }

    /// In-place `self += scale * partial` over every block of `partial`,
    /// which must be a sub-structure of `self`.
    pub fn add_scaled_blocks(&mut self, scale: f64, partial: &ParamVector) -> Result<()> {
        for (id, delta) in partial.blocks() {
            self.update_block(id, scale, delta)?;
        }
        Ok(())
    }

    /// Hex SHA-256 over block ids and little-endian value bytes.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (id, values) in &self.blocks {
            hasher.update(id.to_string().as_bytes());
            hasher.update([0x1f]);
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Serialize for ParamVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.blocks.len()))?;
        for (id, values) in &self.blocks {
            map.serialize_entry(&id.to_string(), values)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ParamVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct PvVisitor;
        impl<'de> Visitor<'de> for PvVisitor {
            type Value = ParamVector;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from block id to number array")
            }
            fn visit_map<A: MapAccess<'de>>(
                self,
                mut access: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut blocks = BTreeMap::new();
                while let Some((key, values)) = access.next_entry::<String, Vec<f64>>()? {
                    let id: BlockId = key.parse().map_err(de::Error::custom)?;
                    blocks.insert(id, values);
                }
                Ok(ParamVector { blocks })
            }
        }
        deserializer.deserialize_map(PvVisitor)
    }
}

fn check_filter(v: &ParamVector, filter: Option<&BTreeSet<BlockId>>) -> Result<()> {
    if let Some(set) = filter {
        for id in set {
            if v.block(id).is_none() {
                return Err(Error::StructureMismatch(format!(
                    "filter block {id} not present in vector"
                )));
            }
        }
    }
    Ok(())
}

fn in_filter(id: &BlockId, filter: Option<&BTreeSet<BlockId>>) -> bool {
    filter.map_or(true, |set| set.contains(id))
}

/// Pure `target + scale * direction` on filtered blocks, other blocks copied
/// unchanged.
pub fn axpy(
    target: &ParamVector,
    scale: f64,
    direction: &ParamVector,
    filter: Option<&BTreeSet<BlockId>>,
) -> Result<ParamVector> {
    if !target.same_structure(direction) {
        return Err(Error::StructureMismatch(
            "axpy requires identical block structure".into(),
        ));
    }
    check_filter(target, filter)?;
    let mut blocks = BTreeMap::new();
    for ((id, t), (_, d)) in target.blocks.iter().zip(direction.blocks.iter()) {
        let values = if in_filter(id, filter) {
            let out: Vec<f64> = t.iter().zip(d).map(|(a, b)| a + scale * b).collect();
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("axpy result on block {id}")));
            }
            out
        } else {
            t.clone()
        };
        blocks.insert(*id, values);
    }
    Ok(ParamVector { blocks })
}

/// Inner product over filtered blocks; symmetric in its arguments.
pub fn inner(
    g1: &ParamVector,
    g2: &ParamVector,
    filter: Option<&BTreeSet<BlockId>>,
) -> Result<f64> {
    if !g1.same_structure(g2) {
        return Err(Error::StructureMismatch(
            "inner requires identical block structure".into(),
        ));
    }
    check_filter(g1, filter)?;
    let mut acc = 0.0;
    for ((id, a), (_, b)) in g1.blocks.iter().zip(g2.blocks.iter()) {
        if in_filter(id, filter) {
            for (x, y) in a.iter().zip(b) {
                acc += x * y;
            }
        }
    }
    Ok(acc)
}

/// Per-objective gradients over the shared backbone, one column per objective.
///
/// Head gradients never live here; they are objective-private and carried by
/// the evaluation record instead.
#[derive(Debug, Clone)]
pub struct GradientMatrix {
    objectives: Vec<ObjectiveId>,
    columns: Vec<ParamVector>,
}

impl GradientMatrix {
    pub fn new(entries: Vec<(ObjectiveId, ParamVector)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("gradient matrix with no columns".into()));
        }
        let mut objectives = Vec::with_capacity(entries.len());
        let mut columns = Vec::with_capacity(entries.len());
        for (id, column) in entries {
            if column.block_ids().any(|b| !b.is_backbone()) {
                return Err(Error::StructureMismatch(format!(
                    "gradient column for {id} contains non-backbone blocks"
                )));
            }
            if let Some(first) = columns.first() {
                if !column.same_structure(first) {
                    return Err(Error::StructureMismatch(format!(
                        "gradient column for {id} differs from the first column"
                    )));
                }
            }
            if objectives.contains(&id) {
                return Err(Error::Config(format!("duplicate objective {id}")));
            }
            objectives.push(id);
            columns.push(column);
        }
        Ok(GradientMatrix { objectives, columns })
    }

    pub fn objectives(&self) -> &[ObjectiveId] {
        &self.objectives
    }

    pub fn len(&self) -> usize {
        self.objectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectives.is_empty()
    }

    pub fn column(&self, index: usize) -> &ParamVector {
        &self.columns[index]
    }

    pub fn column_for(&self, id: &ObjectiveId) -> Option<&ParamVector> {
        self.objectives
            .iter()
            .position(|o| o == id)
            .map(|i| &self.columns[i])
    }

    /// Sub-matrix with columns for `ids`, in the order given.
    pub fn subset(&self, ids: &[ObjectiveId]) -> Result<GradientMatrix> {
        let entries = ids
            .iter()
            .map(|id| {
                self.column_for(id)
                    .map(|c| (*id, c.clone()))
                    .ok_or_else(|| Error::Config(format!("objective {id} not in gradient matrix")))
            })
            .collect::<Result<Vec<_>>>()?;
        GradientMatrix::new(entries)
    }
}

/// Weighted column sum `sum_m lambda_m * column_m`.
pub fn combine(matrix: &GradientMatrix, weights: &crate::simplex::SimplexWeights) -> Result<ParamVector> {
    if weights.len() != matrix.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} gradient columns",
            weights.len(),
            matrix.len()
        )));
    }
    let mut out = matrix.column(0).zeros_like();
    for (column, w) in matrix.columns.iter().zip(weights.as_slice()) {
        out.add_scaled_blocks(*w, column)?;
    }
    Ok(out)
}
