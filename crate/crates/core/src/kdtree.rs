//! Exact k-d tree over points of any fixed dimension.
//!
//! Used both for descriptor retrieval (dimension N_w) and for ICP
//! correspondences (dimension 2). Search is exact: subtrees are pruned only
//! when their bounding plane is strictly farther than the current best, so
//! equal-distance candidates are always visited and ties resolve by the
//! smaller key.

const LEAF_SIZE: usize = 8;

/// Sum of squared coordinate differences, accumulated in index order.
///
/// Every distance in the crate goes through this function so the tree and
/// a linear scan produce bit-identical values.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    /// Insertion index of the point.
    pub index: usize,
    pub key: u64,
    pub dist_sq: f64,
}

impl Neighbor {
    fn better_than(&self, other: &Neighbor) -> bool {
        self.dist_sq < other.dist_sq || (self.dist_sq == other.dist_sq && self.key < other.key)
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    keys: Vec<u64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    /// Builds a tree over `coords` (row-major, `dim` values per point).
    /// `keys[i]` is the tie-break key of point `i`.
    pub fn build(dim: usize, coords: Vec<f64>, keys: Vec<u64>) -> Self {
        assert!(dim > 0, "dimension must be positive");
        assert_eq!(coords.len(), keys.len() * dim, "coordinate count mismatch");
        let mut tree = KdTree {
            dim,
            coords,
            order: (0..keys.len()).collect(),
            keys,
            nodes: Vec::new(),
        };
        if !tree.keys.is_empty() {
            tree.build_node(0, tree.keys.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.coords[index * self.dim..(index + 1) * self.dim]
    }

    pub fn key(&self, index: usize) -> u64 {
        self.keys[index]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let dim = self.dim;
        let coords = &self.coords;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a * dim + axis].total_cmp(&coords[b * dim + axis])
        });
        let value = self.coords[self.order[mid] * dim + axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for axis in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.coords[i * self.dim + axis];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best.1 {
                best = (axis, hi - lo);
            }
        }
        best.0
    }

    pub fn nearest(&self, query: &[f64]) -> Option<Neighbor> {
        self.nearest_filtered(query, |_| true)
    }

    /// Nearest point among those whose insertion index passes `admit`.
    pub fn nearest_filtered<F>(&self, query: &[f64], admit: F) -> Option<Neighbor>
    where
        F: Fn(usize) -> bool,
    {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<Neighbor> = None;
        self.search(0, query, &admit, &mut best);
        best
    }

    fn search<F>(&self, node: usize, query: &[f64], admit: &F, best: &mut Option<Neighbor>)
    where
        F: Fn(usize) -> bool,
    {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if !admit(i) {
                        continue;
                    }
                    let cand = Neighbor {
                        index: i,
                        key: self.keys[i],
                        dist_sq: squared_distance(query, self.point(i)),
                    };
                    if best.is_none_or(|b| cand.better_than(&b)) {
                        *best = Some(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, admit, best);
                let bound = diff * diff;
                if best.is_none_or(|b| bound <= b.dist_sq) {
                    self.search(far, query, admit, best);
                }
            }
        }
    }
}

/// Exhaustive nearest neighbor with the same tie rule as the tree.
pub fn linear_nearest<F>(
    dim: usize,
    coords: &[f64],
    keys: &[u64],
    query: &[f64],
    admit: F,
) -> Option<Neighbor>
where
    F: Fn(usize) -> bool,
{
    let mut best: Option<Neighbor> = None;
    for (i, &key) in keys.iter().enumerate() {
        if !admit(i) {
            continue;
        }
        let cand = Neighbor {
            index: i,
            key,
            dist_sq: squared_distance(query, &coords[i * dim..(i + 1) * dim]),
        };
        if best.is_none_or(|b| cand.better_than(&b)) {
            best = Some(cand);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(coords: &[f64], dim: usize, q: &[f64]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for i in 0..coords.len() / dim {
            let mut d = 0.0;
            for k in 0..dim {
                let e = q[k] - coords[i * dim + k];
                d += e * e;
            }
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn empty_tree_has_no_neighbor() {
        let t = KdTree::build(3, vec![], vec![]);
        assert!(t.nearest(&[0.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn matches_naive_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &dim in &[2usize, 5, 42] {
            let n = 700;
            let coords: Vec<f64> = (0..n * dim)
                .map(|_| rng.random_range(-10.0..10.0))
                .collect();
            let keys: Vec<u64> = (0..n as u64).collect();
            let tree = KdTree::build(dim, coords.clone(), keys);
            for _ in 0..50 {
                let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-12.0..12.0)).collect();
                let got = tree.nearest(&q).unwrap();
                let (idx, d) = naive(&coords, dim, &q);
                assert_eq!(got.index, idx);
                assert_eq!(got.dist_sq, d);
            }
        }
    }

    #[test]
    fn duplicate_points_prefer_smaller_key() {
        let coords = vec![1.0, 1.0, 5.0, 5.0, 1.0, 1.0];
        let tree = KdTree::build(2, coords, vec![9, 4, 2]);
        let n = tree.nearest(&[1.0, 1.0]).unwrap();
        assert_eq!(n.key, 2);
        assert_eq!(n.index, 2);
    }

    #[test]
    fn many_ties_across_leaves() {
        // every point identical: the winner must be the globally smallest key
        let n = 100;
        let coords = vec![0.5; n * 3];
        let keys: Vec<u64> = (0..n as u64).rev().collect();
        let tree = KdTree::build(3, coords, keys);
        assert_eq!(tree.nearest(&[0.0, 0.0, 0.0]).unwrap().key, 0);
    }

    #[test]
    fn filter_excludes_points() {
        let coords = vec![0.0, 0.0, 1.0, 0.0, 10.0, 0.0];
        let tree = KdTree::build(2, coords, vec![0, 1, 2]);
        let n = tree.nearest_filtered(&[0.0, 0.0], |i| i != 0).unwrap();
        assert_eq!(n.index, 1);
        assert!(tree.nearest_filtered(&[0.0, 0.0], |_| false).is_none());
    }
}
