//! Exact k-nearest-neighbor and radius queries over a subset of matrix rows.
//!
//! All comparisons use squared Euclidean distance computed by the same
//! routine, so `d(a, b)` and `d(b, a)` agree bit for bit.

use std::collections::BinaryHeap;

use crate::features::FeatureMatrix;
use crate::kmeans::sq_dist;

const LEAF_SIZE: usize = 16;

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

pub struct KdTree<'a> {
    m: &'a FeatureMatrix,
    /// row indices, permuted so each leaf owns a contiguous range
    idx: Vec<usize>,
    root: Node,
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl<'a> KdTree<'a> {
    pub fn new(m: &'a FeatureMatrix, rows: Vec<usize>) -> Self {
        let mut idx = rows;
        let n = idx.len();
        let root = build(m, &mut idx, 0, n);
        KdTree { m, idx, root }
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    /// Squared distance from row `q` to its k-th nearest other row in the
    /// tree, or `None` when the tree holds fewer than k rows besides `q`.
    pub fn kth_sq_dist(&self, q: usize, k: usize) -> Option<f64> {
        if k == 0 {
            return Some(0.0);
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn(&self.root, q, self.m.row(q), k, &mut heap);
        (heap.len() == k).then(|| heap.peek().expect("k > 0").0)
    }

    /// Every other row within squared radius `r2` (inclusive), ascending.
    pub fn within(&self, q: usize, r2: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius(&self.root, q, self.m.row(q), r2, &mut out);
        out.sort_unstable();
        out
    }

    fn knn(&self, node: &Node, q: usize, p: &[f64], k: usize, heap: &mut BinaryHeap<HeapItem>) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.idx[*start..*end] {
                    if i == q {
                        continue;
                    }
                    let d = sq_dist(p, self.m.row(i));
                    if heap.len() < k {
                        heap.push(HeapItem(d, i));
                    } else if d < heap.peek().expect("non-empty").0 {
                        heap.pop();
                        heap.push(HeapItem(d, i));
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = p[*dim] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn(near, q, p, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().expect("non-empty").0 {
                    self.knn(far, q, p, k, heap);
                }
            }
        }
    }

    fn radius(&self, node: &Node, q: usize, p: &[f64], r2: f64, out: &mut Vec<usize>) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.idx[*start..*end] {
                    if i != q && sq_dist(p, self.m.row(i)) <= r2 {
                        out.push(i);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = p[*dim] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.radius(left, q, p, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.radius(right, q, p, r2, out);
                }
            }
        }
    }
}

fn build(m: &FeatureMatrix, idx: &mut [usize], start: usize, end: usize) -> Node {
    let len = end - start;
    if len <= LEAF_SIZE || m.dims() == 0 {
        return Node::Leaf { start, end };
    }
    let slice = &mut idx[start..end];
    // split on the widest dimension
    let dim = (0..m.dims())
        .map(|d| {
            let (lo, hi) = slice
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = m.row(i)[d];
                    (lo.min(v), hi.max(v))
                });
            (d, hi - lo)
        })
        .fold((0, f64::NEG_INFINITY), |best, (d, w)| {
            if w > best.1 {
                (d, w)
            } else {
                best
            }
        })
        .0;
    let mid = len / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| m.row(a)[dim].total_cmp(&m.row(b)[dim]));
    let value = m.row(slice[mid])[dim];
    // left holds values <= split, right holds values >= split
    let left = build(m, idx, start, start + mid);
    let right = build(m, idx, start + mid, end);
    Node::Split {
        dim,
        value,
        left: Box::new(left),
        right: Box::new(right),
    }
}
