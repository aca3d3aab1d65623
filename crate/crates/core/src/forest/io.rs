//! Forest model file.
//!
//! ```text
//! magic "PDFR", version u32 = 1
//! seed u64, n_trees u32, mtry u32, min_node_size u32, max_depth u32 (0 = none)
//! mtry_setting u32 (0 = default), n_features u64, n_rows u64
//! classes u8 count, then the labels
//! per tree: n_nodes u32, preorder records
//!     leaf   0u8, label u8
//!     split  1u8, feature u32, threshold f64, right child u32
//! per tree: bag n_rows × u32
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{DecisionTree, Forest, ForestParams, Node};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"PDFR";
const VERSION: u32 = 1;

impl<T: Scalar> Forest<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let p = &self.params;
        out.write_u32::<LE>(VERSION).unwrap();
        out.write_u64::<LE>(p.seed).unwrap();
        out.write_u32::<LE>(self.trees.len() as u32).unwrap();
        out.write_u32::<LE>(self.mtry as u32).unwrap();
        out.write_u32::<LE>(p.min_node_size as u32).unwrap();
        out.write_u32::<LE>(p.max_depth.map_or(0, |d| d as u32)).unwrap();
        out.write_u32::<LE>(p.mtry.map_or(0, |m| m as u32)).unwrap();
        out.write_u64::<LE>(self.n_features as u64).unwrap();
        out.write_u64::<LE>(self.n_rows as u64).unwrap();
        out.write_u8(9).unwrap();
        out.extend(1..=9u8);
        for tree in &self.trees {
            out.write_u32::<LE>(tree.nodes().len() as u32).unwrap();
            for node in tree.nodes() {
                match *node {
                    Node::Leaf { label } => {
                        out.write_u8(0).unwrap();
                        out.write_u8(label).unwrap();
                    }
                    Node::Split { feature, threshold, right } => {
                        out.write_u8(1).unwrap();
                        out.write_u32::<LE>(feature).unwrap();
                        out.write_f64::<LE>(threshold.as_f64()).unwrap();
                        out.write_u32::<LE>(right).unwrap();
                    }
                }
            }
        }
        for bag in &self.bags {
            for &r in bag {
                out.write_u32::<LE>(r).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format(origin, reason);
        let trunc = |_| Error::format(origin, "truncated forest file");
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(trunc)?;
        if &magic != MAGIC {
            return Err(bad("not a forest file"));
        }
        if r.read_u32::<LE>().map_err(trunc)? != VERSION {
            return Err(bad("unsupported forest version"));
        }
        let seed = r.read_u64::<LE>().map_err(trunc)?;
        let n_trees = r.read_u32::<LE>().map_err(trunc)? as usize;
        let mtry = r.read_u32::<LE>().map_err(trunc)? as usize;
        let min_node_size = r.read_u32::<LE>().map_err(trunc)? as usize;
        let max_depth = match r.read_u32::<LE>().map_err(trunc)? {
            0 => None,
            d => Some(d as usize),
        };
        let mtry_setting = match r.read_u32::<LE>().map_err(trunc)? {
            0 => None,
            m => Some(m as usize),
        };
        let n_features = r.read_u64::<LE>().map_err(trunc)? as usize;
        let n_rows = r.read_u64::<LE>().map_err(trunc)? as usize;
        let n_classes = r.read_u8().map_err(trunc)?;
        let mut classes = vec![0u8; n_classes as usize];
        r.read_exact(&mut classes).map_err(trunc)?;
        if classes != (1..=9).collect::<Vec<u8>>() {
            return Err(bad("unexpected class set"));
        }
        if n_trees == 0 || mtry == 0 || mtry > n_features || n_rows == 0 {
            return Err(bad("inconsistent forest header"));
        }
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = r.read_u32::<LE>().map_err(trunc)? as usize;
            if n_nodes > bytes.len() {
                return Err(bad("node count exceeds file size"));
            }
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                nodes.push(match r.read_u8().map_err(trunc)? {
                    0 => Node::Leaf { label: r.read_u8().map_err(trunc)? },
                    1 => {
                        let feature = r.read_u32::<LE>().map_err(trunc)?;
                        let threshold = T::of(r.read_f64::<LE>().map_err(trunc)?);
                        let right = r.read_u32::<LE>().map_err(trunc)?;
                        if feature as usize >= n_features {
                            return Err(bad("split feature out of range"));
                        }
                        Node::Split { feature, threshold, right }
                    }
                    _ => return Err(bad("bad node tag")),
                });
            }
            trees.push(DecisionTree::from_nodes(nodes).ok_or_else(|| bad("malformed tree"))?);
        }
        let mut bags = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let mut bag = vec![0u32; n_rows];
            r.read_u32_into::<LE>(&mut bag).map_err(trunc)?;
            if bag.iter().any(|&b| b as usize >= n_rows) {
                return Err(bad("bag row out of range"));
            }
            bags.push(bag);
        }
        if r.position() as usize != bytes.len() {
            return Err(bad("trailing bytes after forest"));
        }
        let params = ForestParams { n_trees, mtry: mtry_setting, min_node_size, max_depth, seed };
        Ok(Forest { trees, bags, n_features, n_rows, mtry, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsutil::read(path)?, path)
    }
}
