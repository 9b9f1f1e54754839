//! Minimum spanning tree over the keypoints.
//!
//! Edge cost between keypoints k and q is the denominator of the pairwise
//! regularizer: `|x_k - x_q| + |F(k) - F(q)| / sigma_I`. Candidates come
//! from a k-nearest-neighbor graph; disconnected components are joined
//! through their cheapest cross pair.

use super::{KeypointSet, SpanningTree};
use crate::image::Image3D;

pub fn build_mst(
    keys: &KeypointSet,
    intensity_image: &Image3D,
    knn: usize,
    sigma_intensity: f64,
) -> SpanningTree {
    let n = keys.len();
    assert!(n >= 1, "spanning tree needs at least one keypoint");
    let intensities: Vec<f64> = keys
        .points
        .iter()
        .map(|&p| intensity_image.nearest(p).unwrap_or(0.0))
        .collect();
    build_mst_from_values(&keys.points, &intensities, knn, sigma_intensity)
}

pub(crate) fn build_mst_from_values(
    points: &[[f64; 3]],
    intensities: &[f64],
    knn: usize,
    sigma_intensity: f64,
) -> SpanningTree {
    let n = points.len();
    if n == 1 {
        return SpanningTree {
            root: 0,
            parent: vec![0],
            children: vec![vec![]],
            edge_weight: vec![0.0],
            order: vec![0],
        };
    }

    let weight = |a: usize, b: usize| -> f64 {
        let mut d2 = 0.0;
        for c in 0..3 {
            let d = points[a][c] - points[b][c];
            d2 += d * d;
        }
        d2.sqrt() + (intensities[a] - intensities[b]).abs() / sigma_intensity
    };

    // candidate edges: k nearest neighbours by Euclidean distance
    let k = knn.min(n - 1);
    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..n {
        let mut near: Vec<(f64, usize)> = (0..n)
            .filter(|&b| b != a)
            .map(|b| {
                let mut d2 = 0.0;
                for c in 0..3 {
                    let d = points[a][c] - points[b][c];
                    d2 += d * d;
                }
                (d2, b)
            })
            .collect();
        near.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for &(_, b) in near.iter().take(k) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            edges.push((weight(lo, hi), lo, hi));
        }
    }
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    edges.dedup_by(|a, b| a.1 == b.1 && a.2 == b.2);
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());

    // Kruskal
    let mut dsu = Dsu::new(n);
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![vec![]; n];
    let mut taken = 0;
    for &(w, a, b) in &edges {
        if dsu.union(a, b) {
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
            taken += 1;
            if taken == n - 1 {
                break;
            }
        }
    }
    // kNN graph may be disconnected: join remaining components through
    // their cheapest cross pair
    while taken < n - 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            for b in (a + 1)..n {
                if dsu.find(a) != dsu.find(b) {
                    let w = weight(a, b);
                    if best.map_or(true, |(bw, _, _)| w < bw) {
                        best = Some((w, a, b));
                    }
                }
            }
        }
        let (w, a, b) = best.expect("disconnected components must have a cross pair");
        dsu.union(a, b);
        adjacency[a].push((b, w));
        adjacency[b].push((a, w));
        taken += 1;
    }

    // root: node nearest the centroid
    let mut centroid = [0.0f64; 3];
    for p in points {
        for c in 0..3 {
            centroid[c] += p[c];
        }
    }
    for c in centroid.iter_mut() {
        *c /= n as f64;
    }
    let mut root = 0;
    let mut best = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d2: f64 = (0..3).map(|c| (p[c] - centroid[c]).powi(2)).sum();
        if d2 < best {
            best = d2;
            root = i;
        }
    }

    // orient the tree away from the root
    let mut parent = vec![usize::MAX; n];
    let mut edge_weight = vec![0.0; n];
    let mut children: Vec<Vec<usize>> = vec![vec![]; n];
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![root];
    parent[root] = root;
    while let Some(u) = stack.pop() {
        order.push(u);
        let mut next: Vec<(usize, f64)> = adjacency[u]
            .iter()
            .filter(|(v, _)| parent[*v] == usize::MAX)
            .cloned()
            .collect();
        next.sort_by(|a, b| a.0.cmp(&b.0));
        for (v, w) in next.into_iter().rev() {
            if parent[v] == usize::MAX {
                parent[v] = u;
                edge_weight[v] = w;
                children[u].push(v);
                stack.push(v);
            }
        }
    }
    for ch in children.iter_mut() {
        ch.sort_unstable();
    }

    SpanningTree {
        root,
        parent,
        children,
        edge_weight,
        order,
    }
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}
