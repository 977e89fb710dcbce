//! Versioned on-disk model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"DBTMODEL"  magic
//! u32          format version
//! u32          header length, then that many bytes of UTF-8 JSON
//! u32          mean-estimator tree count, then the trees
//! u32          step tree count, then the trees
//! ```
//!
//! The JSON header carries everything small enough to read by eye: model
//! kind, config, data schema, target scaling, threshold and the estimator's
//! scalar fields. Schedule arrays are not stored; they are rebuilt from the
//! config on load.
//!
//! A tree is `u32 n_features`, a child reference for the root, `u32` node
//! count and the nodes, `u32` leaf count and `f64` leaf values. A child is a
//! `u8` tag (0 node, 1 leaf) and a `u32` index. A node is `u32 feature`, the
//! rule, `u8 default_left`, two children and `f64 gain`. A rule is tag 0 with
//! an `f64` threshold, or tag 1 with two `u32`-counted lists of `u32`
//! category codes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Affine, Schema};
use crate::diffusion::{DbtConfig, DiffusionModel, ModelKind};
use crate::error::{Error, Result};
use crate::mean_estimator::{LossKind, MeanEstimator};
use crate::tree::{Child, DecisionTree, SplitNode, SplitRule};

pub const MAGIC: &[u8; 8] = b"DBTMODEL";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model together with the schema its inputs are encoded under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: DiffusionModel,
    pub schema: Schema,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: DbtConfig,
    schema: Schema,
    target_scale: Option<Affine>,
    class_threshold: Option<f64>,
    mean_estimator: EstimatorHeader,
    step_trees: usize,
}

#[derive(Serialize, Deserialize)]
struct EstimatorHeader {
    loss: LossKind,
    base_score: f64,
    shrinkage: f64,
    trees: usize,
}

impl ModelFile {
    pub fn new(model: DiffusionModel, schema: Schema) -> Result<Self> {
        if schema.kinds() != model.feature_kinds() {
            return Err(Error::Schema("schema column kinds do not match the model's inputs".into()));
        }
        Ok(Self { model, schema })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        let est = m.mean_estimator();
        let header = Header {
            kind: m.kind(),
            config: *m.config(),
            schema: self.schema.clone(),
            target_scale: m.target_scale(),
            class_threshold: m.class_threshold(),
            mean_estimator: EstimatorHeader {
                loss: est.loss,
                base_score: est.base_score,
                shrinkage: est.shrinkage,
                trees: est.trees.len(),
            },
            step_trees: m.step_trees().len(),
        };
        let json = serde_json::to_vec_pretty(&header).map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_len(&mut out, json.len())?;
        out.extend_from_slice(&json);
        for trees in [&est.trees[..], m.step_trees()] {
            put_len(&mut out, trees.len())?;
            for tree in trees {
                write_tree(&mut out, tree)?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::ModelFormat("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "model file format version {version} is not supported (this build reads version {FORMAT_VERSION})"
            )));
        }
        let len = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(len)?).map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
        let mean_trees = r.trees()?;
        let step_trees = r.trees()?;
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if mean_trees.len() != header.mean_estimator.trees || step_trees.len() != header.step_trees {
            return Err(Error::ModelFormat("tree counts disagree with the header".into()));
        }
        let est = MeanEstimator {
            loss: header.mean_estimator.loss,
            base_score: header.mean_estimator.base_score,
            shrinkage: header.mean_estimator.shrinkage,
            trees: mean_trees,
        };
        let kinds = header.schema.kinds();
        let model = DiffusionModel::from_parts(
            header.kind,
            header.config,
            est,
            step_trees,
            kinds,
            header.target_scale,
            header.class_threshold,
        )?;
        Self::new(model, header.schema)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::ModelFormat(msg) => Error::ModelFormat(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let v = u32::try_from(n).map_err(|_| Error::ModelFormat(format!("count {n} does not fit the format")))?;
    put_u32(out, v);
    Ok(())
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_child(out: &mut Vec<u8>, c: Child) {
    let (tag, idx) = match c {
        Child::Node(i) => (0u8, i),
        Child::Leaf(i) => (1u8, i),
    };
    out.push(tag);
    put_u32(out, idx);
}

fn write_tree(out: &mut Vec<u8>, tree: &DecisionTree) -> Result<()> {
    put_len(out, tree.n_features())?;
    put_child(out, tree.root());
    put_len(out, tree.nodes().len())?;
    for node in tree.nodes() {
        put_u32(out, node.feature);
        match &node.rule {
            SplitRule::Threshold(v) => {
                out.push(0);
                put_f64(out, *v);
            }
            SplitRule::Categories { left, right } => {
                out.push(1);
                for side in [left, right] {
                    put_len(out, side.len())?;
                    side.iter().for_each(|&c| put_u32(out, c));
                }
            }
        }
        out.push(u8::from(node.default_left));
        put_child(out, node.left);
        put_child(out, node.right);
        put_f64(out, node.gain);
    }
    put_len(out, tree.leaves().len())?;
    tree.leaves().iter().for_each(|&v| put_f64(out, v));
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::ModelFormat(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    /// A count, sanity-checked against the bytes left so corrupt input fails
    /// cleanly instead of allocating.
    fn count(&mut self, min_item_bytes: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item_bytes) > self.bytes.len() - self.pos {
            return Err(Error::ModelFormat(format!("count {n} exceeds remaining data")));
        }
        Ok(n)
    }

    fn child(&mut self) -> Result<Child> {
        let tag = self.u8()?;
        let idx = self.u32()?;
        match tag {
            0 => Ok(Child::Node(idx)),
            1 => Ok(Child::Leaf(idx)),
            _ => Err(Error::ModelFormat(format!("bad child tag {tag}"))),
        }
    }

    fn codes(&mut self) -> Result<Vec<u32>> {
        let n = self.count(4)?;
        (0..n).map(|_| self.u32()).collect()
    }

    fn tree(&mut self) -> Result<DecisionTree> {
        let n_features = self.u32()? as usize;
        let root = self.child()?;
        let n_nodes = self.count(27)?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let feature = self.u32()?;
            let rule = match self.u8()? {
                0 => SplitRule::Threshold(self.f64()?),
                1 => {
                    let left = self.codes()?;
                    let right = self.codes()?;
                    SplitRule::Categories { left, right }
                }
                tag => return Err(Error::ModelFormat(format!("bad rule tag {tag}"))),
            };
            let default_left = match self.u8()? {
                0 => false,
                1 => true,
                v => return Err(Error::ModelFormat(format!("bad default flag {v}"))),
            };
            let left = self.child()?;
            let right = self.child()?;
            let gain = self.f64()?;
            nodes.push(SplitNode {
                feature,
                rule,
                default_left,
                left,
                right,
                gain,
            });
        }
        let n_leaves = self.count(8)?;
        let leaves = (0..n_leaves).map(|_| self.f64()).collect::<Result<_>>()?;
        DecisionTree::from_parts(n_features, root, nodes, leaves)
    }

    fn trees(&mut self) -> Result<Vec<DecisionTree>> {
        let n = self.count(21)?;
        (0..n).map(|_| self.tree()).collect()
    }
}
