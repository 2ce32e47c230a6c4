//! Static 3-d tree with median splits.
//!
//! The tree is an implicit balanced layout over a permutation of point
//! indices: the median of each slice is the splitting node, the left half holds
//! coordinates `<=` the split and the right half `>=`. Results are exact and
//! ordered by `(squared distance, index)`, so ties always resolve to the lower
//! point index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn build<'a, I>(positions: I) -> Self
    where
        I: IntoIterator<Item = &'a Vector3<f64>>,
    {
        let points: Vec<[f64; 3]> = positions.into_iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut order: Vec<usize> = (0..points.len()).collect();
        build_rec(&points, &mut order, 0);
        Self { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points as `(index, squared distance)`, ascending.
    pub fn knn_with_dist2(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let q = [query.x, query.y, query.z];
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(&q, k, 0, self.order.len(), 0, &mut heap);
        let mut out = heap.into_sorted_vec();
        out.truncate(k);
        out.into_iter().map(|c| (c.index, c.dist2)).collect()
    }

    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<usize> {
        self.knn_with_dist2(query, k)
            .into_iter()
            .map(|(i, _)| i)
            .collect()
    }

    /// Nearest point as `(index, squared distance)`.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        self.knn_with_dist2(query, 1).into_iter().next()
    }

    /// All points with distance `< radius`, sorted by `(distance, index)`.
    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<(usize, f64)> {
        let q = [query.x, query.y, query.z];
        let r2 = radius * radius;
        let mut out = Vec::new();
        self.radius_rec(&q, r2, 0, self.order.len(), 0, &mut out);
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist2)).collect()
    }

    fn knn_rec(
        &self,
        q: &[f64; 3],
        k: usize,
        lo: usize,
        hi: usize,
        depth: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if hi - lo <= LEAF_SIZE {
            for &idx in &self.order[lo..hi] {
                offer(heap, k, Candidate {
                    dist2: dist2(q, &self.points[idx]),
                    index: idx,
                });
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let axis = depth % 3;
        offer(heap, k, Candidate {
            dist2: dist2(q, &self.points[idx]),
            index: idx,
        });
        let diff = q[axis] - self.points[idx][axis];
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_rec(q, k, near.0, near.1, depth + 1, heap);
        let bound = diff * diff;
        if heap.len() < k || bound <= heap.peek().map_or(f64::INFINITY, |c| c.dist2) {
            self.knn_rec(q, k, far.0, far.1, depth + 1, heap);
        }
    }

    fn radius_rec(
        &self,
        q: &[f64; 3],
        r2: f64,
        lo: usize,
        hi: usize,
        depth: usize,
        out: &mut Vec<Candidate>,
    ) {
        if hi - lo <= LEAF_SIZE {
            for &idx in &self.order[lo..hi] {
                let d2 = dist2(q, &self.points[idx]);
                if d2 < r2 {
                    out.push(Candidate { dist2: d2, index: idx });
                }
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let axis = depth % 3;
        let d2 = dist2(q, &self.points[idx]);
        if d2 < r2 {
            out.push(Candidate { dist2: d2, index: idx });
        }
        let diff = q[axis] - self.points[idx][axis];
        if diff <= 0.0 || diff * diff < r2 {
            self.radius_rec(q, r2, lo, mid, depth + 1, out);
        }
        if diff >= 0.0 || diff * diff < r2 {
            self.radius_rec(q, r2, mid + 1, hi, depth + 1, out);
        }
    }
}

fn offer(heap: &mut BinaryHeap<Candidate>, k: usize, c: Candidate) {
    if heap.len() < k {
        heap.push(c);
    } else if let Some(worst) = heap.peek() {
        if c < *worst {
            heap.pop();
            heap.push(c);
        }
    }
}

fn build_rec(points: &[[f64; 3]], order: &mut [usize], depth: usize) {
    if order.len() <= LEAF_SIZE {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .total_cmp(&points[b][axis])
            .then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    build_rec(points, left, depth + 1);
    build_rec(points, &mut right[1..], depth + 1);
}
