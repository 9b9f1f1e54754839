//! Two-pass min-sum belief propagation on the spanning tree.
//!
//! Messages are quadratic min-convolutions with per-edge weight
//! `alpha_kp / w_kq`; after the leaves-to-root and root-to-leaves passes
//! every node holds its exact min-marginals over the displacement lattice.

use super::{quadratic_distance_transform, CostVolume, SpanningTree};

/// Exact per-keypoint min-marginal energies of the tree model.
pub fn tree_bp_marginals(cost: &CostVolume, tree: &SpanningTree, alpha_kp: f64) -> Vec<Vec<f64>> {
    let n = cost.costs.len();
    assert_eq!(tree.parent.len(), n, "tree and cost volume disagree on node count");
    let n_labels = cost.lattice.num_labels();

    // upward pass: h[k] = unary + sum of child messages, m_up[k] = message
    // from k to its parent
    let mut h: Vec<Vec<f64>> = cost.costs.clone();
    let mut m_up: Vec<Option<Vec<f64>>> = vec![None; n];
    for &k in tree.order.iter().rev() {
        for &c in &tree.children[k] {
            let mc = m_up[c].as_ref().expect("child processed before parent");
            for (hv, mv) in h[k].iter_mut().zip(mc.iter()) {
                *hv += mv;
            }
        }
        if k != tree.root {
            let w = alpha_kp / tree.edge_weight[k];
            let (vals, _) = quadratic_distance_transform(&h[k], &cost.lattice, w);
            m_up[k] = Some(vals);
        }
    }

    // downward pass: marginal[k] = h[k] + message from the parent side
    let mut marginals: Vec<Vec<f64>> = vec![Vec::new(); n];
    for &k in tree.order.iter() {
        if k == tree.root {
            marginals[k] = h[k].clone();
            continue;
        }
        let q = tree.parent[k];
        let up = m_up[k].as_ref().unwrap();
        // everything the parent knows except what came from k
        let mut rest: Vec<f64> = Vec::with_capacity(n_labels);
        for i in 0..n_labels {
            rest.push(marginals[q][i] - up[i]);
        }
        let w = alpha_kp / tree.edge_weight[k];
        let (down, _) = quadratic_distance_transform(&rest, &cost.lattice, w);
        let mut marg = h[k].clone();
        for (mv, dv) in marg.iter_mut().zip(down.iter()) {
            *mv += dv;
        }
        marginals[k] = marg;
    }
    marginals
}
