//! Weighted radius graphs over patch nodes.
//!
//! Nodes are connected when their local distance `d` is below the radius `r`,
//! with weight `r / (r + d)`. Adjacency is stored as sorted sparse rows. Every
//! reduction over nodes (degrees, resolution, propagation) runs in a canonical
//! node order, the lexicographic order of node features, so building the graph
//! from a permuted patch permutes every result exactly instead of changing it
//! in the last bits.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::patching::Patch;

/// Floor on node degree before taking `D^{-1/2}`.
pub const DEGREE_EPS: f64 = 1e-8;
/// Default radius as a multiple of the patch's average local resolution.
pub const DEFAULT_RADIUS_MULTIPLIER: f64 = 4.0;
/// Hop count reported for nodes that cannot reach the target.
pub const UNREACHABLE: usize = usize::MAX;

/// How the connection radius is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    /// Absolute radius in local (normalized) units.
    Fixed(f64),
    /// Multiple of the average nearest-neighbor spacing of the local points.
    Relative(f64),
}

impl Default for Radius {
    fn default() -> Self {
        Radius::Relative(DEFAULT_RADIUS_MULTIPLIER)
    }
}

/// Edge weight as a function of distance: `r / (r + d)` inside the ball, 0 outside.
#[inline]
pub fn edge_weight(r: f64, d: f64) -> f64 {
    if d < r {
        r / (r + d)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGraph {
    node_features: Vec<[f64; 6]>,
    rank: Vec<usize>,
    order: Vec<usize>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    degree: Vec<f64>,
    radius_used: f64,
}

pub(crate) fn canonical_order(features: &[[f64; 6]]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (&features[a], &features[b]);
        for k in 0..6 {
            match fa[k].total_cmp(&fb[k]) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        a.cmp(&b)
    });
    order
}

#[inline]
fn local_dist(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Mean distance from each node to its nearest node at a nonzero distance.
/// Coincident duplicates are skipped so resampled patches keep a usable radius.
fn local_resolution(features: &[[f64; 6]], order: &[usize]) -> Result<f64> {
    let mut sum = 0.0;
    let mut counted = 0usize;
    for &j in order {
        let mut best = f64::INFINITY;
        for k in 0..features.len() {
            let d = local_dist(&features[j], &features[k]);
            if d > 0.0 && d < best {
                best = d;
            }
        }
        if best.is_finite() {
            sum += best;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::Degenerate("all patch nodes coincide".into()));
    }
    Ok(sum / counted as f64)
}

impl PatchGraph {
    /// Builds the graph over a patch's local points.
    pub fn from_patch(patch: &Patch, radius: Radius) -> Result<Self> {
        Self::build(patch.local_points.clone(), radius)
    }

    pub fn build(node_features: Vec<[f64; 6]>, radius: Radius) -> Result<Self> {
        let n = node_features.len();
        if n == 0 {
            return Err(Error::InvalidInput("graph needs at least one node".into()));
        }
        if node_features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite node feature".into()));
        }
        let order = canonical_order(&node_features);
        let mut rank = vec![0; n];
        for (r, &j) in order.iter().enumerate() {
            rank[j] = r;
        }
        let r = match radius {
            Radius::Fixed(r) => r,
            Radius::Relative(rho) => rho * local_resolution(&node_features, &order)?,
        };
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidInput(format!("graph radius must be > 0, got {r}")));
        }

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for j in 0..n {
            // visit candidates in canonical order so rows come out rank-sorted
            for &k in &order {
                if k == j {
                    continue;
                }
                let w = edge_weight(r, local_dist(&node_features[j], &node_features[k]));
                if w > 0.0 {
                    cols.push(k);
                    weights.push(w);
                }
            }
            row_ptr.push(cols.len());
        }
        if cols.is_empty() {
            return Err(Error::Degenerate(format!(
                "no edges at radius {r:.4}; patch too sparse"
            )));
        }
        let degree = (0..n)
            .map(|j| {
                let s: f64 = weights[row_ptr[j]..row_ptr[j + 1]].iter().sum();
                s.max(DEGREE_EPS)
            })
            .collect();
        Ok(Self {
            node_features,
            rank,
            order,
            row_ptr,
            cols,
            weights,
            degree,
            radius_used: r,
        })
    }

    pub fn len(&self) -> usize {
        self.node_features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_features.is_empty()
    }

    pub fn node_features(&self) -> &[[f64; 6]] {
        &self.node_features
    }

    /// Node features as an `n x 6` tensor.
    pub fn feature_tensor(&self) -> Tensor {
        Tensor::from_rows(&self.node_features)
    }

    pub fn radius_used(&self) -> f64 {
        self.radius_used
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    /// Position of `node` in the canonical order.
    pub fn rank(&self, node: usize) -> usize {
        self.rank[node]
    }

    /// Nodes in canonical order.
    pub fn canonical_order(&self) -> &[usize] {
        &self.order
    }

    pub fn edge_count(&self) -> usize {
        self.cols.len() / 2
    }

    /// `(neighbor, weight)` pairs of `node`, in canonical neighbor order.
    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[node]..self.row_ptr[node + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    pub fn weight(&self, j: usize, k: usize) -> f64 {
        self.neighbors(j)
            .find(|(c, _)| *c == k)
            .map_or(0.0, |(_, w)| w)
    }

    pub fn adjacency_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut a = vec![vec![0.0; n]; n];
        for (j, row) in a.iter_mut().enumerate() {
            for (k, w) in self.neighbors(j) {
                row[k] = w;
            }
        }
        a
    }

    /// The symmetrically normalized adjacency `D^{-1/2} A D^{-1/2}`.
    pub fn propagation(&self) -> Propagation {
        let inv_sqrt: Vec<f64> = self.degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut values = Vec::with_capacity(self.weights.len());
        for j in 0..self.len() {
            for (k, w) in self.neighbors(j) {
                values.push(w * inv_sqrt[j] * inv_sqrt[k]);
            }
        }
        Propagation {
            n: self.len(),
            row_ptr: self.row_ptr.clone(),
            cols: self.cols.clone(),
            values,
        }
    }

    /// Unweighted breadth-first hop counts from `target` over positive-weight
    /// edges; [`UNREACHABLE`] for other components.
    pub fn shortest_hops(&self, target: usize) -> Result<Vec<usize>> {
        self.check_node(target)?;
        let mut hops = vec![UNREACHABLE; self.len()];
        hops[target] = 0;
        let mut queue = VecDeque::from([target]);
        while let Some(j) = queue.pop_front() {
            for (k, _) in self.neighbors(j) {
                if hops[k] == UNREACHABLE {
                    hops[k] = hops[j] + 1;
                    queue.push_back(k);
                }
            }
        }
        Ok(hops)
    }

    /// Shortest path lengths from `target` with Euclidean edge lengths in the
    /// local frame (infinite when unreachable).
    pub fn geodesic_distances(&self, target: usize) -> Result<Vec<f64>> {
        self.check_node(target)?;
        #[derive(PartialEq)]
        struct State(f64, usize);
        impl Eq for State {}
        impl Ord for State {
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
            }
        }
        impl PartialOrd for State {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        let mut dist = vec![f64::INFINITY; self.len()];
        dist[target] = 0.0;
        let mut heap = BinaryHeap::from([State(0.0, target)]);
        while let Some(State(d, j)) = heap.pop() {
            if d > dist[j] {
                continue;
            }
            for (k, _) in self.neighbors(j) {
                let nd = d + local_dist(&self.node_features[j], &self.node_features[k]);
                if nd < dist[k] {
                    dist[k] = nd;
                    heap.push(State(nd, k));
                }
            }
        }
        Ok(dist)
    }

    /// Hop distance between two nodes.
    pub fn hop_distance(&self, a: usize, b: usize) -> Result<usize> {
        Ok(self.shortest_hops(a)?[b])
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node >= self.len() {
            return Err(Error::InvalidInput(format!(
                "node {node} out of range for graph of {} nodes",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Sparse symmetric propagation matrix in row-compressed form.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl Propagation {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `M X` for an `n x d` tensor.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.rows(), self.n, "propagation row mismatch");
        let d = x.cols();
        let mut out = Tensor::zeros(self.n, d);
        let xs = x.data();
        let os = out.data_mut();
        for j in 0..self.n {
            let dst = &mut os[j * d..(j + 1) * d];
            for e in self.row_ptr[j]..self.row_ptr[j + 1] {
                let w = self.values[e];
                let src = &xs[self.cols[e] * d..(self.cols[e] + 1) * d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (j, row) in m.iter_mut().enumerate() {
            for e in self.row_ptr[j]..self.row_ptr[j + 1] {
                row[self.cols[e]] = self.values[e];
            }
        }
        m
    }

    /// Zero matrix over `n` nodes.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            row_ptr: vec![0; n + 1],
            cols: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from a dense symmetric matrix (zero entries dropped).
    pub fn from_dense(m: &[Vec<f64>]) -> Self {
        let n = m.len();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut values = Vec::new();
        for row in m {
            for (k, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    cols.push(k);
                    values.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            values,
        }
    }
}

/// Supervision targets: per-node values decaying with distance from the
/// keypoint, which is valued 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueLabels {
    pub values: Vec<f64>,
    pub keypoint_index: usize,
}

/// Distance used for value labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelMetric {
    /// Unweighted hop count `h`, value `1 / (1 + h)`.
    #[default]
    Hops,
    /// Geodesic length `g` in units of the graph radius, value `1 / (1 + g / r)`.
    Geodesic,
}

pub fn label_values(graph: &PatchGraph, keypoint: usize) -> Result<ValueLabels> {
    label_values_with(graph, keypoint, LabelMetric::Hops)
}

pub fn label_values_with(
    graph: &PatchGraph,
    keypoint: usize,
    metric: LabelMetric,
) -> Result<ValueLabels> {
    let values = match metric {
        LabelMetric::Hops => graph
            .shortest_hops(keypoint)?
            .into_iter()
            .map(|h| if h == UNREACHABLE { 0.0 } else { 1.0 / (1.0 + h as f64) })
            .collect(),
        LabelMetric::Geodesic => {
            let r = graph.radius_used();
            graph
                .geodesic_distances(keypoint)?
                .into_iter()
                .map(|g| if g.is_finite() { 1.0 / (1.0 + g / r) } else { 0.0 })
                .collect()
        }
    };
    Ok(ValueLabels {
        values,
        keypoint_index: keypoint,
    })
}
