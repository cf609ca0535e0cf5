//! Single-file index format.
//!
//! ```text
//! "VCANN1"
//! config: k u32 | metric u8 | mode u8 | include_self u8 | num_trees u32 | search_budget u32 | seed u64 | leaf_size u32 | refine_rounds u32
//! features: byte length u64 | VCF1 block
//! forest (approximate only): dim u32 | roots (count u32, u32...) | nodes (count u32, node...)
//!   leaf:  0u8 | count u32 | u32 items
//!   split: 1u8 | left u32 | right u32 | offset f64 | dim f64 normal
//! ```

use std::fs;
use std::path::Path;

use super::forest::{Forest, Node, LEAF_SIZE};
use super::{Index, KnnConfig, Metric, SearchMode};
use crate::binio::{ByteReader, ByteWriter};
use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 6] = b"VCANN1";

impl Index {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cfg = self.config();
        let mut w = ByteWriter::default();
        w.bytes(INDEX_MAGIC);
        w.len_u32(cfg.k)?;
        w.u8(match cfg.metric {
            Metric::Cosine => 0,
            Metric::Euclidean => 1,
        });
        w.u8(match cfg.mode {
            SearchMode::Exact => 0,
            SearchMode::Approximate => 1,
        });
        w.u8(cfg.include_self as u8);
        w.len_u32(cfg.num_trees)?;
        w.len_u32(cfg.search_budget)?;
        w.u64(cfg.seed);
        w.len_u32(LEAF_SIZE)?;
        w.len_u32(cfg.refine_rounds)?;

        let features = self.features().to_binary_bytes()?;
        w.u64(features.len() as u64);
        w.bytes(&features);

        if let Some(forest) = self.forest() {
            w.len_u32(forest.dim())?;
            w.len_u32(forest.roots().len())?;
            forest.roots().iter().for_each(|&r| w.u32(r));
            w.len_u32(forest.nodes().len())?;
            for node in forest.nodes() {
                match node {
                    Node::Leaf { items } => {
                        w.u8(0);
                        w.len_u32(items.len())?;
                        items.iter().for_each(|&i| w.u32(i));
                    }
                    Node::Split {
                        normal,
                        offset,
                        left,
                        right,
                    } => {
                        w.u8(1);
                        w.u32(*left);
                        w.u32(*right);
                        w.f64(*offset);
                        normal.iter().for_each(|&x| w.f64(x));
                    }
                }
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Index> {
        let mut r = ByteReader::new(bytes, "index file");
        if r.take(6)? != INDEX_MAGIC {
            return Err(Error::format("index file", "bad magic, expected VCANN1"));
        }
        let k = r.u32()? as usize;
        let metric = match r.u8()? {
            0 => Metric::Cosine,
            1 => Metric::Euclidean,
            t => return Err(Error::format("index file", format!("unknown metric tag {t}"))),
        };
        let mode = match r.u8()? {
            0 => SearchMode::Exact,
            1 => SearchMode::Approximate,
            t => return Err(Error::format("index file", format!("unknown mode tag {t}"))),
        };
        let include_self = r.u8()? != 0;
        let num_trees = r.u32()? as usize;
        let search_budget = r.u32()? as usize;
        let seed = r.u64()?;
        let leaf_size = r.u32()? as usize;
        let refine_rounds = r.u32()? as usize;
        if leaf_size != LEAF_SIZE {
            return Err(Error::format(
                "index file",
                format!("leaf size {leaf_size} differs from this build ({LEAF_SIZE})"),
            ));
        }
        let config = KnnConfig {
            k,
            metric,
            mode,
            num_trees,
            search_budget,
            seed,
            include_self,
            refine_rounds,
        };

        let flen = r.u64()? as usize;
        let block = r.take(flen)?;
        let features = FeatureMatrix::read_binary(&mut &block[..])?;
        let n = features.n();

        let forest = match mode {
            SearchMode::Exact => None,
            SearchMode::Approximate => {
                let dim = r.len(features.dim())?;
                if dim != features.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: features.dim(),
                        found: dim,
                    });
                }
                let nroots = r.len(r.remaining() / 4)?;
                let roots = (0..nroots).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                let nnodes = r.len(r.remaining())?;
                let mut nodes = Vec::with_capacity(nnodes);
                for _ in 0..nnodes {
                    let node = match r.u8()? {
                        0 => {
                            let count = r.len(n)?;
                            let items = (0..count)
                                .map(|_| {
                                    let i = r.u32()?;
                                    if i as usize >= n {
                                        return Err(Error::format("index file", "leaf item out of range"));
                                    }
                                    Ok(i)
                                })
                                .collect::<Result<Vec<_>>>()?;
                            Node::Leaf { items }
                        }
                        1 => {
                            let left = r.u32()?;
                            let right = r.u32()?;
                            let offset = r.f64()?;
                            let normal = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                            Node::Split {
                                normal,
                                offset,
                                left,
                                right,
                            }
                        }
                        t => return Err(Error::format("index file", format!("unknown node tag {t}"))),
                    };
                    nodes.push(node);
                }
                let in_range = |i: u32| (i as usize) < nodes.len();
                let links_ok = nodes.iter().all(|node| match node {
                    Node::Split { left, right, .. } => in_range(*left) && in_range(*right),
                    Node::Leaf { .. } => true,
                });
                if !links_ok || !roots.iter().all(|&x| in_range(x)) {
                    return Err(Error::format("index file", "node reference out of range"));
                }
                Some(Forest::from_parts(dim, nodes, roots))
            }
        };
        r.finish()?;
        Index::from_parts(config, features, forest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Index> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Index::from_bytes(&bytes)
    }
}
