//! Deterministic k-nearest-neighbour graphs over anchor positions.
//!
//! Neighbours are ranked by `(squared distance, index)`, so equal distances
//! resolve to the lower anchor index. The k-d tree below is only an
//! accelerator: its answers are identical to a brute-force scan.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::math::{dist2, Vec3};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree over a point set. Point ids are the caller's indices.
#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [Vec3],
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    /// Indexes every point.
    pub fn new(points: &'a [Vec3]) -> Self {
        Self::with_ids(points, (0..points.len()).collect())
    }

    /// Indexes the subset `ids` of `points`.
    pub fn with_ids(points: &'a [Vec3], mut ids: Vec<usize>) -> Self {
        let mut nodes = Vec::new();
        if !ids.is_empty() {
            let n = ids.len();
            build(points, &mut ids, 0, n, &mut nodes);
        }
        Self { points, ids, nodes }
    }

    /// The `k` nearest indexed points to `query` within `radius`, skipping
    /// `exclude`, sorted by `(distance, id)`.
    pub fn knn(
        &self,
        query: Vec3,
        k: usize,
        radius: Option<f64>,
        exclude: Option<usize>,
    ) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if self.nodes.is_empty() || k == 0 {
            return best;
        }
        let r2 = radius.map(|r| r * r).unwrap_or(f64::INFINITY);
        self.search(0, query, k, r2, exclude, &mut best);
        best
    }

    fn search(
        &self,
        node: usize,
        q: Vec3,
        k: usize,
        r2: f64,
        exclude: Option<usize>,
        best: &mut Vec<(f64, usize)>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.ids[start..end] {
                    if Some(id) == exclude {
                        continue;
                    }
                    let d2 = dist2(q, self.points[id]);
                    if d2 > r2 {
                        continue;
                    }
                    let cand = (d2, id);
                    if best.len() == k {
                        let worst = best[k - 1];
                        if !less(cand, worst) {
                            continue;
                        }
                        best.pop();
                    }
                    let pos = best.partition_point(|&b| less(b, cand));
                    best.insert(pos, cand);
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, r2, exclude, best);
                let bound = diff * diff;
                // Equal bounds are still visited: a tie may carry a lower id.
                let worst = if best.len() == k { best[k - 1].0 } else { f64::INFINITY };
                if bound <= r2 && bound <= worst {
                    self.search(far, q, k, r2, exclude, best);
                }
            }
        }
    }
}

#[inline]
fn less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn build(points: &[Vec3], ids: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let slot = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return slot;
    }
    let slice = &mut ids[start..end];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &id in slice.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(points[id][a]);
            hi[a] = hi[a].max(points[id][a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap_or(0);
    if hi[axis] == lo[axis] {
        // All points coincide.
        nodes.push(Node::Leaf { start, end });
        return slot;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let value = points[slice[mid]][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    // Left holds coordinates <= value, right holds >= value.
    let left = build(points, ids, start, start + mid, nodes);
    let right = build(points, ids, start + mid, end, nodes);
    nodes[slot] = Node::Split { axis, value, left, right };
    slot
}

/// Per-anchor neighbour lists, each sorted by ascending distance then index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    lists: Vec<Vec<u32>>,
    k: usize,
    radius: Option<f64>,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn radius(&self) -> Option<f64> {
        self.radius
    }

    pub fn lists(&self) -> &[Vec<u32>] {
        &self.lists
    }

    /// Neighbours of anchor `i`.
    pub fn neighbors(&self, i: usize) -> Result<&[u32]> {
        self.lists
            .get(i)
            .map(Vec::as_slice)
            .ok_or(Error::IndexOutOfRange { index: i, len: self.lists.len() })
    }

    pub fn edge_count(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    /// Little-endian serialization used to compare graphs byte for byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.lists.len() as u32).to_le_bytes());
        for list in &self.lists {
            out.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for &j in list {
                out.extend_from_slice(&j.to_le_bytes());
            }
        }
        out
    }

    /// One line per anchor: `i: j1 j2 ...`.
    pub fn debug_dump(&self) -> String {
        let mut s = String::new();
        for (i, list) in self.lists.iter().enumerate() {
            let _ = write!(s, "{i}:");
            for j in list {
                let _ = write!(s, " {j}");
            }
            s.push('\n');
        }
        s
    }
}

/// Builds the k-nearest-within-radius graph. `radius = None` is unbounded.
pub fn build_graph(positions: &[Vec3], k: usize, radius: Option<f64>) -> Result<NeighborGraph> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if let Some(r) = radius {
        if !(r > 0.0) {
            return Err(Error::invalid("radius must be positive"));
        }
    }
    if positions.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("graph positions"));
    }
    let tree = KdTree::new(positions);
    let row = |i: usize| -> Vec<u32> {
        tree.knn(positions[i], k, radius, Some(i)).into_iter().map(|(_, j)| j as u32).collect()
    };
    #[cfg(feature = "parallel")]
    let lists = {
        use rayon::prelude::*;
        (0..positions.len()).into_par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let lists = (0..positions.len()).map(row).collect();
    Ok(NeighborGraph { lists, k, radius })
}

/// Neighbours of anchor `i` in `graph`.
pub fn query_neighbors(graph: &NeighborGraph, i: usize) -> Result<&[u32]> {
    graph.neighbors(i)
}
