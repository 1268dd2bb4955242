//! Balanced 3-d tree for exact nearest-neighbor queries.
//!
//! Neighbors are ordered by `(squared distance, insertion index)`, so ties
//! resolve toward the point inserted first.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    pub fn dist(&self) -> f64 {
        self.dist2.sqrt()
    }
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

#[inline]
pub fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let d = a - b;
    d.x * d.x + d.y * d.y + d.z * d.z
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut tree = Self { nodes: Vec::with_capacity(points.len()), points, root: None };
        let mut order: Vec<usize> = (0..tree.points.len()).collect();
        tree.root = tree.build(&mut order);
        tree
    }

    fn build(&mut self, idx: &mut [usize]) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in idx.iter() {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = idx.len() / 2;
        let pts = &self.points;
        idx.select_nth_unstable_by(mid, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
        let point = idx[mid];
        let slot = self.nodes.len();
        self.nodes.push(Node { point, axis, left: None, right: None });
        let (left, rest) = idx.split_at_mut(mid);
        let left = self.build(left);
        let right = self.build(&mut rest[1..]);
        self.nodes[slot].left = left;
        self.nodes[slot].right = right;
        Some(slot)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// The `k` nearest points, closest first.
    pub fn knn(&self, query: &Vec3, k: usize) -> Vec<Neighbor> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if let Some(root) = self.root {
            self.knn_rec(root, query, k, &mut heap);
        }
        heap.into_sorted_vec()
    }

    fn knn_rec(&self, node: usize, q: &Vec3, k: usize, heap: &mut BinaryHeap<Neighbor>) {
        let n = &self.nodes[node];
        let cand = Neighbor { index: n.point, dist2: dist2(q, &self.points[n.point]) };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().unwrap() {
            heap.pop();
            heap.push(cand);
        }
        let diff = q[n.axis] - self.points[n.point][n.axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if let Some(c) = near {
            self.knn_rec(c, q, k, heap);
        }
        if let Some(c) = far {
            if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
                self.knn_rec(c, q, k, heap);
            }
        }
    }

    pub fn nearest(&self, query: &Vec3) -> Option<Neighbor> {
        self.knn(query, 1).into_iter().next()
    }

    /// Nearest point other than the stored point `index`.
    pub fn nearest_other(&self, index: usize) -> Option<Neighbor> {
        self.knn(&self.points[index], 2).into_iter().find(|n| n.index != index)
    }

    /// Indices of all points within `radius` (inclusive), ascending by index.
    pub fn within(&self, query: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if let Some(root) = self.root {
            self.within_rec(root, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn within_rec(&self, node: usize, q: &Vec3, r2: f64, out: &mut Vec<usize>) {
        let n = &self.nodes[node];
        if dist2(q, &self.points[n.point]) <= r2 {
            out.push(n.point);
        }
        let diff = q[n.axis] - self.points[n.point][n.axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if let Some(c) = near {
            self.within_rec(c, q, r2, out);
        }
        if let Some(c) = far {
            if diff * diff <= r2 {
                self.within_rec(c, q, r2, out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(points: &[Vec3], q: &Vec3, k: usize) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> =
            points.iter().enumerate().map(|(index, p)| Neighbor { index, dist2: dist2(q, p) }).collect();
        all.sort();
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec3> = (0..300).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let tree = KdTree::new(pts.clone());
        for _ in 0..50 {
            let q = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            for k in [1, 5, 17, 300] {
                assert_eq!(tree.knn(&q, k), brute_knn(&pts, &q, k));
            }
            let mut expect: Vec<usize> = (0..pts.len()).filter(|&i| dist2(&q, &pts[i]) <= 0.04).collect();
            expect.sort();
            assert_eq!(tree.within(&q, 0.2), expect);
        }
    }

    #[test]
    fn ties_resolve_by_insertion_index() {
        let pts = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::zeros()];
        let tree = KdTree::new(pts);
        let got: Vec<usize> = tree.knn(&Vec3::zeros(), 3).iter().map(|n| n.index).collect();
        assert_eq!(got, vec![3, 0, 1]);
        assert_eq!(tree.nearest_other(3).unwrap().index, 0);
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(Vec::new());
        assert!(tree.knn(&Vec3::zeros(), 3).is_empty());
        assert!(tree.nearest(&Vec3::zeros()).is_none());
    }

    proptest! {
        #[test]
        fn knn_on_lattice_with_ties(n in 1usize..6, k in 1usize..30, qx in -1.0f64..5.0, qy in -1.0f64..5.0) {
            let pts: Vec<Vec3> = (0..n * n * n)
                .map(|i| Vec3::new((i % n) as f64, ((i / n) % n) as f64, (i / (n * n)) as f64))
                .collect();
            let q = Vec3::new(qx.round(), qy.round(), 0.0);
            let tree = KdTree::new(pts.clone());
            prop_assert_eq!(tree.knn(&q, k), brute_knn(&pts, &q, k));
        }
    }
}
