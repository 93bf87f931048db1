//! Independent reference implementations shared by the integration tests
//! and the acceptance suite. Nothing here calls the code under test except
//! to build inputs.

#![allow(dead_code)]

use treetrack::appearance::{AppearanceHead, Label, TrainingExample};
use treetrack::geometry::BoundingBox;
use treetrack::model_tree::{ModelTree, NodeId};
use treetrack::rng::RngStream;
use treetrack::FeatureVector;

/// Smallest possible head; tree tests only care about structure.
pub fn tiny_head() -> AppearanceHead {
    AppearanceHead::zeros(1, 1)
}

/// Edge score that is sometimes exactly repeated so ties occur.
pub fn random_score(rng: &mut RngStream) -> f64 {
    if rng.uniform() < 0.3 {
        rng.below(5) as f64 / 4.0
    } else {
        rng.uniform()
    }
}

/// Grows a tree of `n` nodes; each new node hangs under a uniformly chosen
/// currently active node.
pub fn random_tree(n: usize, capacity: usize, rng: &mut RngStream) -> ModelTree {
    let mut tree = ModelTree::new(tiny_head(), vec![0], capacity).unwrap();
    for i in 1..n {
        let active = tree.active_ids();
        let parent = active[rng.below(active.len())];
        tree.add_node(parent, tiny_head(), vec![i], random_score(rng)).unwrap();
    }
    tree
}

/// Minimum edge score along the explicit root path, found by walking
/// parent links; 1 for the root.
pub fn path_min(tree: &ModelTree, id: NodeId) -> f64 {
    let mut m = 1.0f64;
    let mut cur = id;
    while let Some(p) = tree.nodes()[cur].parent {
        m = m.min(tree.nodes()[cur].edge_score);
        cur = p;
    }
    m
}

/// Exhaustive parent choice: among all active nodes with the largest
/// `min(score, reliability)`, the most recently created one.
pub fn parent_oracle(active: &[NodeId], score: &dyn Fn(NodeId) -> f64, rel: &dyn Fn(NodeId) -> f64) -> NodeId {
    let vals: Vec<f64> = active.iter().map(|&v| score(v).min(rel(v))).collect();
    let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    active
        .iter()
        .zip(&vals)
        .filter(|(_, &v)| v == best)
        .map(|(&id, _)| id)
        .max()
        .unwrap()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Ridge regression with an unpenalized intercept from the normal
/// equations of the augmented design `[X 1]`:
///
/// ```text
/// [X'X + lambda I   X'1] [w]   [X'y]
/// [1'X              n  ] [b] = [1'y]
/// ```
pub fn ridge_oracle(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let d = x[0].len();
    let mut a = vec![vec![0.0; d + 1]; d + 1];
    let mut rhs = vec![0.0; d + 1];
    for (row, &t) in x.iter().zip(y) {
        let aug: Vec<f64> = row.iter().cloned().chain(std::iter::once(1.0)).collect();
        for i in 0..=d {
            for j in 0..=d {
                a[i][j] += aug[i] * aug[j];
            }
            rhs[i] += aug[i] * t;
        }
    }
    for (i, r) in a.iter_mut().enumerate().take(d) {
        r[i] += lambda;
    }
    let mut sol = solve(a, rhs);
    let b = sol.pop().unwrap();
    (sol, b)
}

/// Overlap by explicit interval arithmetic. Identical boxes can round to
/// one ulp above 1, so the ratio is capped at its mathematical maximum.
pub fn iou_oracle(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    (inter / (a.w * a.h + b.w * b.h - inter)).min(1.0)
}

pub fn center_error_oracle(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let dx = (a.x + a.w / 2.0) - (b.x + b.w / 2.0);
    let dy = (a.y + a.h / 2.0) - (b.y + b.h / 2.0);
    (dx * dx + dy * dy).sqrt()
}

/// Per-threshold recount: precision (center error <= t, t = 0..50),
/// success (IoU > k/20, k = 0..20) and AUC as their plain mean.
pub struct Recount {
    pub precision: Vec<f64>,
    pub success: Vec<f64>,
    pub auc: f64,
}

pub fn recount(traj: &[BoundingBox], gt: &[BoundingBox]) -> Recount {
    let n = traj.len() as f64;
    let mut precision = Vec::new();
    for t in 0..=50 {
        let mut hits = 0usize;
        for (a, b) in traj.iter().zip(gt) {
            if center_error_oracle(a, b) <= t as f64 {
                hits += 1;
            }
        }
        precision.push(hits as f64 / n);
    }
    let mut success = Vec::new();
    for k in 0..=20 {
        let tau = k as f64 / 20.0;
        let mut hits = 0usize;
        for (a, b) in traj.iter().zip(gt) {
            if iou_oracle(a, b) > tau {
                hits += 1;
            }
        }
        success.push(hits as f64 / n);
    }
    let mut total = 0.0;
    for v in &success {
        total += v;
    }
    Recount {
        precision,
        success,
        auc: total / 21.0,
    }
}

/// Mean cross-entropy computed from scratch with explicit loops.
pub fn loss_oracle(head: &AppearanceHead, batch: &[TrainingExample]) -> f64 {
    let mut total = 0.0;
    for ex in batch {
        let mut a: Vec<f64> = ex.features.as_slice().to_vec();
        for (k, l) in head.layers.iter().enumerate() {
            let mut z = vec![0.0; l.outputs];
            for (o, zo) in z.iter_mut().enumerate() {
                *zo = l.bias[o] + (0..l.inputs).map(|i| l.weights[o * l.inputs + i] * a[i]).sum::<f64>();
            }
            if k < 2 {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        let m = a[0].max(a[1]);
        let lse = m + ((a[0] - m).exp() + (a[1] - m).exp()).ln();
        let class = match ex.label {
            Label::Positive => 0,
            Label::Negative => 1,
        };
        total += lse - a[class];
    }
    total / batch.len() as f64
}

/// Smallest |pre-activation| of either hidden layer over the batch; near
/// zero the loss has a kink and finite differences are meaningless.
pub fn min_hidden_preactivation(head: &AppearanceHead, batch: &[TrainingExample]) -> f64 {
    let mut m = f64::INFINITY;
    for ex in batch {
        let mut a: Vec<f64> = ex.features.as_slice().to_vec();
        for l in &head.layers[..2] {
            let mut z = vec![0.0; l.outputs];
            for (o, zo) in z.iter_mut().enumerate() {
                *zo = l.bias[o] + (0..l.inputs).map(|i| l.weights[o * l.inputs + i] * a[i]).sum::<f64>();
                m = m.min(zo.abs());
            }
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            a = z;
        }
    }
    m
}

/// Central differences of [`loss_oracle`] for every parameter, in
/// `flat_params` order.
pub fn numeric_gradient(head: &AppearanceHead, batch: &[TrainingExample], eps: f64) -> Vec<f64> {
    let base = head.flat_params();
    let (d, h) = (head.input_dim(), head.hidden());
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + eps;
            let up = loss_oracle(&AppearanceHead::from_flat(d, h, &p).unwrap(), batch);
            p[i] = base[i] - eps;
            let down = loss_oracle(&AppearanceHead::from_flat(d, h, &p).unwrap(), batch);
            (up - down) / (2.0 * eps)
        })
        .collect()
}

pub fn random_example(dim: usize, rng: &mut RngStream) -> TrainingExample {
    TrainingExample {
        features: FeatureVector::new((0..dim).map(|_| rng.gaussian(0.0, 1.0)).collect()),
        label: if rng.uniform() < 0.5 { Label::Positive } else { Label::Negative },
        frame: 0,
    }
}

pub fn random_box(rng: &mut RngStream) -> BoundingBox {
    BoundingBox::new(
        rng.uniform_in(0.0, 100.0),
        rng.uniform_in(0.0, 100.0),
        rng.uniform_in(5.0, 40.0),
        rng.uniform_in(5.0, 40.0),
    )
    .unwrap()
}
