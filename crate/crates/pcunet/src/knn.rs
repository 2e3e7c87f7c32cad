//! Static kd-tree for exact nearest-neighbor queries in 3D.
//!
//! Equidistant neighbors resolve to the lowest point index, so accelerated
//! queries agree exactly with a brute-force scan that uses `<` on
//! `(distance^2, index)`.

#[derive(Debug)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Point indices arranged so each subtree occupies a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    /// Range into `order`.
    start: usize,
    end: usize,
    axis: usize,
    split: f64,
    left: usize,
    right: usize,
}

const LEAF_SIZE: usize = 16;
const NONE: usize = usize::MAX;

impl KdTree {
    pub fn build(points: &[[f64; 3]]) -> Self {
        assert!(!points.is_empty(), "kd-tree needs at least one point");
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        tree.split(0, points.len(), 0);
        tree
    }

    fn split(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            start,
            end,
            axis: depth % 3,
            split: 0.0,
            left: NONE,
            right: NONE,
        });
        if end - start > LEAF_SIZE {
            let axis = depth % 3;
            let mid = (start + end) / 2;
            let points = &self.points;
            self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                points[a][axis]
                    .partial_cmp(&points[b][axis])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let split = self.points[self.order[mid]][axis];
            let left = self.split(start, mid, depth + 1);
            let right = self.split(mid, end, depth + 1);
            let node = &mut self.nodes[id];
            node.split = split;
            node.left = left;
            node.right = right;
        }
        id
    }

    /// Index of and squared distance to the nearest point.
    pub fn nearest(&self, q: [f64; 3]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        best
    }

    fn search(&self, node_id: usize, q: [f64; 3], best: &mut (usize, f64)) {
        let node = self.nodes[node_id];
        if node.left == NONE {
            for &i in &self.order[node.start..node.end] {
                let p = self.points[i];
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d2 < best.1 || (d2 == best.1 && i < best.0) {
                    *best = (i, d2);
                }
            }
            return;
        }
        let diff = q[node.axis] - node.split;
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, q, best);
        if diff * diff <= best.1 {
            self.search(far, q, best);
        }
    }
}

/// Brute-force oracle with the same tie rule.
pub fn nearest_brute(points: &[[f64; 3]], q: [f64; 3]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
        if d2 < best.1 || (d2 == best.1 && i < best.0) {
            best = (i, d2);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let n = rng.gen_range(1..300);
            let points: Vec<[f64; 3]> = (0..n)
                .map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
                .collect();
            let tree = KdTree::build(&points);
            for _ in 0..50 {
                let q = [
                    rng.gen_range(-6.0..6.0),
                    rng.gen_range(-6.0..6.0),
                    rng.gen_range(-6.0..6.0),
                ];
                assert_eq!(tree.nearest(q), nearest_brute(&points, q));
            }
        }
    }

    #[test]
    fn tie_resolves_to_lowest_index() {
        // Two points equidistant from the origin query.
        let points = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let tree = KdTree::build(&points);
        let (idx, d2) = tree.nearest([0.0, 0.0, 0.0]);
        assert_eq!(idx, 0);
        assert!((d2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn duplicate_points_supported() {
        let points = vec![[2.0, 2.0, 2.0]; 40];
        let tree = KdTree::build(&points);
        assert_eq!(tree.nearest([2.0, 2.0, 2.0]), (0, 0.0));
    }
}
