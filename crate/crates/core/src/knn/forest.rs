//! Forest of random hyperplane-split trees (Annoy-style).
//!
//! Each tree splits its item set with the bisecting hyperplane of two
//! centroids found by a short randomized two-means pass, recursing until a
//! node holds at most [`LEAF_SIZE`] items. A query walks all trees at once
//! through a shared priority queue keyed by the smallest margin seen on the
//! path, and stops once the candidate budget is reached.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{dot, squared_euclidean};

pub const LEAF_SIZE: usize = 32;
const TWO_MEANS_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        /// Unit normal; all zeros for a random fallback split.
        normal: Vec<f64>,
        offset: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        items: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    dim: usize,
    nodes: Vec<Node>,
    roots: Vec<u32>,
}

/// Per-tree RNG: the master seed selects the key, the tree index the stream,
/// so trees are independent of build order and thread count.
fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

impl Forest {
    pub fn build(points: &[f64], dim: usize, num_trees: usize, seed: u64) -> Forest {
        let n = points.len() / dim;
        let trees: Vec<Vec<Node>> = (0..num_trees)
            .into_par_iter()
            .map(|t| {
                let mut builder = TreeBuilder {
                    points,
                    dim,
                    rng: tree_rng(seed, t),
                    nodes: Vec::new(),
                };
                let items: Vec<u32> = (0..n as u32).collect();
                builder.build(items);
                builder.nodes
            })
            .collect();

        let mut nodes = Vec::new();
        let mut roots = Vec::with_capacity(num_trees);
        for tree in trees {
            let base = nodes.len() as u32;
            // The builder emits children before their parent, so the root is last.
            roots.push(base + tree.len() as u32 - 1);
            nodes.extend(tree.into_iter().map(|node| match node {
                Node::Split {
                    normal,
                    offset,
                    left,
                    right,
                } => Node::Split {
                    normal,
                    offset,
                    left: left + base,
                    right: right + base,
                },
                leaf => leaf,
            }));
        }
        Forest { dim, nodes, roots }
    }

    pub(crate) fn from_parts(dim: usize, nodes: Vec<Node>, roots: Vec<u32>) -> Forest {
        Forest { dim, nodes, roots }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn roots(&self) -> &[u32] {
        &self.roots
    }

    pub fn num_trees(&self) -> usize {
        self.roots.len()
    }

    /// Distinct candidate rows for `query`, at least `budget` of them unless
    /// the forest runs out, never containing `exclude`.
    pub fn candidates(
        &self,
        query: &[f64],
        budget: usize,
        n: usize,
        exclude: Option<usize>,
    ) -> Vec<u32> {
        let mut seen = vec![false; n];
        if let Some(x) = exclude {
            seen[x] = true;
        }
        let mut out = Vec::with_capacity(budget + LEAF_SIZE);
        let mut heap: BinaryHeap<Pending> = self
            .roots
            .iter()
            .map(|&node| Pending {
                priority: 0.0,
                node,
            })
            .collect();
        while out.len() < budget {
            let Some(Pending { priority, node }) = heap.pop() else {
                break;
            };
            match &self.nodes[node as usize] {
                Node::Leaf { items } => {
                    for &item in items {
                        let slot = &mut seen[item as usize];
                        if !*slot {
                            *slot = true;
                            out.push(item);
                        }
                    }
                }
                Node::Split {
                    normal,
                    offset,
                    left,
                    right,
                } => {
                    let margin = dot(normal, query) - offset;
                    let pen = margin * margin;
                    heap.push(Pending {
                        priority: if margin > 0.0 { priority } else { priority - pen },
                        node: *right,
                    });
                    heap.push(Pending {
                        priority: if margin > 0.0 { priority - pen } else { priority },
                        node: *left,
                    });
                }
            }
        }
        out
    }
}

struct Pending {
    priority: f64,
    node: u32,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.node.cmp(&self.node))
    }
}

struct TreeBuilder<'a> {
    points: &'a [f64],
    dim: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn point(&self, i: u32) -> &[f64] {
        let i = i as usize;
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn push(&mut self, node: Node) -> u32 {
        self.nodes.push(node);
        (self.nodes.len() - 1) as u32
    }

    fn build(&mut self, items: Vec<u32>) -> u32 {
        if items.len() <= LEAF_SIZE {
            return self.push(Node::Leaf { items });
        }
        let (normal, offset) = self.two_means_plane(&items);
        let (mut left, mut right): (Vec<u32>, Vec<u32>) = items
            .iter()
            .partition(|&&i| dot(&normal, self.point(i)) - offset <= 0.0);
        let (normal, offset) = if left.is_empty() || right.is_empty() {
            // Coincident points: split at random and let queries visit both sides.
            let mut shuffled = items;
            shuffled.shuffle(&mut self.rng);
            right = shuffled.split_off(shuffled.len() / 2);
            left = shuffled;
            (vec![0.0; self.dim], 0.0)
        } else {
            (normal, offset)
        };
        let l = self.build(left);
        let r = self.build(right);
        self.push(Node::Split {
            normal,
            offset,
            left: l,
            right: r,
        })
    }

    fn two_means_plane(&mut self, items: &[u32]) -> (Vec<f64>, f64) {
        let a = self.rng.random_range(0..items.len());
        let mut b = self.rng.random_range(0..items.len() - 1);
        if b >= a {
            b += 1;
        }
        let mut c0 = self.point(items[a]).to_vec();
        let mut c1 = self.point(items[b]).to_vec();
        let (mut n0, mut n1) = (1.0f64, 1.0f64);
        for _ in 0..TWO_MEANS_STEPS {
            let pick = items[self.rng.random_range(0..items.len())];
            let p = self.point(pick);
            let d0 = n0 * squared_euclidean(&c0, p);
            let d1 = n1 * squared_euclidean(&c1, p);
            let (c, count) = if d0 < d1 {
                (&mut c0, &mut n0)
            } else {
                (&mut c1, &mut n1)
            };
            for (cj, pj) in c.iter_mut().zip(p) {
                *cj = (*cj * *count + pj) / (*count + 1.0);
            }
            *count += 1.0;
        }
        let mut normal: Vec<f64> = c1.iter().zip(&c0).map(|(x, y)| x - y).collect();
        let norm = dot(&normal, &normal).sqrt();
        if norm == 0.0 {
            return (vec![0.0; self.dim], 0.0);
        }
        normal.iter_mut().for_each(|x| *x /= norm);
        let mut proj: Vec<f64> = items.iter().map(|&i| dot(&normal, self.point(i))).collect();
        let mid = proj.len() / 2;
        proj.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
        let offset = proj[mid];
        (normal, offset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_tree_covers_every_item() {
        let d = 3;
        let points: Vec<f64> = (0..300 * d).map(|i| ((i * 7919) % 101) as f64).collect();
        let forest = Forest::build(&points, d, 4, 1);
        assert_eq!(forest.num_trees(), 4);
        for &root in forest.roots() {
            let mut stack = vec![root];
            let mut seen = vec![0usize; 300];
            while let Some(node) = stack.pop() {
                match &forest.nodes()[node as usize] {
                    Node::Leaf { items } => {
                        assert!(items.len() <= LEAF_SIZE);
                        items.iter().for_each(|&i| seen[i as usize] += 1);
                    }
                    Node::Split { left, right, .. } => stack.extend([*left, *right]),
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn identical_points_still_split() {
        let points = vec![1.0; 100 * 2];
        let forest = Forest::build(&points, 2, 2, 3);
        let cands = forest.candidates(&[1.0, 1.0], 100, 100, Some(0));
        assert_eq!(cands.len(), 99);
        assert!(!cands.contains(&0));
    }

    #[test]
    fn build_is_independent_of_thread_count() {
        let d = 4;
        let points: Vec<f64> = (0..500 * d).map(|i| ((i * 104729) % 997) as f64 / 997.0).collect();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| Forest::build(&points, d, 6, 42));
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| Forest::build(&points, d, 6, 42));
        assert_eq!(one, many);
    }
}
