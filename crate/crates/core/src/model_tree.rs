//! Tree of appearance models.
//!
//! Every node owns a trained [`AppearanceHead`], the frames it was trained
//! on, the score of the edge from its parent and its cached reliability:
//! the weakest edge score on the path from the root. A node's reliability
//! is computed once, from its parent's, when the node is added.
//!
//! The active set holds the `K` most recently created nodes; only these
//! take part in state estimation and parent selection.

use crate::appearance::{AppearanceError, AppearanceHead};
use crate::features::FeatureVector;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write;
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no tentative edge score for active node {0}")]
    MissingScore(NodeId),
    #[error("edge score {0} outside [0, 1]")]
    EdgeScore(f64),
    #[error("edge score needs at least one frame")]
    NoFrames,
    #[error("active set capacity must be at least 1")]
    Capacity,
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Head(#[from] AppearanceError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub head: AppearanceHead,
    pub frames: Vec<usize>,
    pub edge_score: f64,
    pub reliability: f64,
}

impl ModelNode {
    /// Ids are assigned in creation order.
    pub fn creation_order(&self) -> usize {
        self.id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelTree {
    nodes: Vec<ModelNode>,
    capacity: usize,
    active: VecDeque<NodeId>,
}

/// Mean positive score of `head` over the estimated-state features of a
/// frame set: the score of a (possibly tentative) edge out of `head`.
pub fn edge_score(head: &AppearanceHead, frame_features: &[FeatureVector]) -> Result<f64, TreeError> {
    if frame_features.is_empty() {
        return Err(TreeError::NoFrames);
    }
    let mut sum = 0.0;
    for f in frame_features {
        sum += head.score(f)?;
    }
    Ok(sum / frame_features.len() as f64)
}

impl ModelTree {
    /// New tree holding only the root. The root's reliability is 1.
    pub fn new(root_head: AppearanceHead, root_frames: Vec<usize>, capacity: usize) -> Result<Self, TreeError> {
        if capacity == 0 {
            return Err(TreeError::Capacity);
        }
        let root = ModelNode {
            id: 0,
            parent: None,
            head: root_head,
            frames: root_frames,
            edge_score: 1.0,
            reliability: 1.0,
        };
        Ok(Self {
            nodes: vec![root],
            capacity,
            active: VecDeque::from([0]),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> &ModelNode {
        &self.nodes[0]
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn node(&self, id: NodeId) -> Result<&ModelNode, TreeError> {
        self.nodes.get(id).ok_or(TreeError::UnknownNode(id))
    }

    pub fn nodes(&self) -> &[ModelNode] {
        &self.nodes
    }

    /// Active node ids, oldest first.
    pub fn active(&self) -> impl ExactSizeIterator<Item = NodeId> + '_ {
        self.active.iter().copied()
    }

    pub fn active_ids(&self) -> Vec<NodeId> {
        self.active.iter().copied().collect()
    }

    pub fn newest(&self) -> NodeId {
        self.nodes.len() - 1
    }

    pub fn reliability(&self, id: NodeId) -> Result<f64, TreeError> {
        Ok(self.node(id)?.reliability)
    }

    /// Ids on the path root -> `id`, inclusive.
    pub fn path_to(&self, id: NodeId) -> Result<Vec<NodeId>, TreeError> {
        let mut path = vec![id];
        let mut cur = self.node(id)?;
        while let Some(p) = cur.parent {
            path.push(p);
            cur = self.node(p)?;
        }
        path.reverse();
        Ok(path)
    }

    /// The active node maximizing `min(tentative score, reliability)`.
    /// Ties go to the most recently created node.
    pub fn select_parent(&self, tentative: &BTreeMap<NodeId, f64>) -> Result<NodeId, TreeError> {
        let mut best: Option<(NodeId, f64)> = None;
        for id in self.active() {
            let s = *tentative.get(&id).ok_or(TreeError::MissingScore(id))?;
            let v = s.min(self.nodes[id].reliability);
            // active ids ascend, so >= hands ties to the newer node
            if best.is_none_or(|(_, b)| v >= b) {
                best = Some((id, v));
            }
        }
        Ok(best.expect("active set is never empty").0)
    }

    /// Appends a node under `parent` and slides the active window.
    pub fn add_node(
        &mut self,
        parent: NodeId,
        head: AppearanceHead,
        frames: Vec<usize>,
        edge_score: f64,
    ) -> Result<NodeId, TreeError> {
        let parent_rel = self.reliability(parent)?;
        if !(0.0..=1.0).contains(&edge_score) {
            return Err(TreeError::EdgeScore(edge_score));
        }
        let id = self.nodes.len();
        self.nodes.push(ModelNode {
            id,
            parent: Some(parent),
            head,
            frames,
            edge_score,
            reliability: edge_score.min(parent_rel),
        });
        self.active.push_back(id);
        while self.active.len() > self.capacity {
            self.active.pop_front();
        }
        Ok(id)
    }

    /// Graphviz rendering: nodes labelled with id, reliability and frame
    /// range; edges with their scores. Active nodes are drawn bold.
    pub fn export_dot(&self) -> String {
        let mut out = String::from("digraph model_tree {\n  node [shape=box];\n");
        for n in &self.nodes {
            let range = match (n.frames.first(), n.frames.last()) {
                (Some(a), Some(b)) if a == b => format!("{a}"),
                (Some(a), Some(b)) => format!("{a}-{b}"),
                _ => String::from("-"),
            };
            let style = if self.active.contains(&n.id) { ", style=bold" } else { "" };
            let _ = writeln!(
                out,
                "  n{} [label=\"#{}\\nbeta={:.3}\\nframes {}\"{}];",
                n.id, n.id, n.reliability, range, style
            );
        }
        for n in &self.nodes {
            if let Some(p) = n.parent {
                let _ = writeln!(out, "  n{} -> n{} [label=\"{:.3}\"];", p, n.id, n.edge_score);
            }
        }
        out.push_str("}\n");
        out
    }

    pub fn to_snapshot(&self) -> TreeSnapshot {
        let b64 = base64::engine::general_purpose::STANDARD;
        TreeSnapshot {
            capacity: self.capacity,
            active: self.active_ids(),
            nodes: self
                .nodes
                .iter()
                .map(|n| {
                    let bytes: Vec<u8> = n
                        .head
                        .flat_params()
                        .iter()
                        .flat_map(|&v| (v as f32).to_le_bytes())
                        .collect();
                    NodeSnapshot {
                        id: n.id,
                        parent: n.parent,
                        frames: n.frames.clone(),
                        edge_score: n.edge_score,
                        beta: n.reliability,
                        input_dim: n.head.input_dim(),
                        hidden: n.head.hidden(),
                        head: b64.encode(bytes),
                    }
                })
                .collect(),
        }
    }

    /// Rebuilds a tree from a snapshot. Head weights come back at f32
    /// precision.
    pub fn from_snapshot(snap: &TreeSnapshot) -> Result<Self, TreeError> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let err = |m: String| TreeError::Snapshot(m);
        if snap.capacity == 0 {
            return Err(TreeError::Capacity);
        }
        let mut nodes = Vec::with_capacity(snap.nodes.len());
        for (i, n) in snap.nodes.iter().enumerate() {
            if n.id != i {
                return Err(err(format!("node ids must be 0..n in order, found {} at {i}", n.id)));
            }
            match n.parent {
                None if i != 0 => return Err(err(format!("node {i} has no parent"))),
                Some(p) if p >= i => return Err(err(format!("node {i} has parent {p} created later"))),
                _ => {}
            }
            let bytes = b64.decode(&n.head).map_err(|e| err(e.to_string()))?;
            if bytes.len() % 4 != 0 {
                return Err(err(format!("node {i}: head buffer not a multiple of 4 bytes")));
            }
            let flat: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let head = AppearanceHead::from_flat(n.input_dim, n.hidden, &flat)
                .ok_or_else(|| err(format!("node {i}: head buffer has wrong length")))?;
            nodes.push(ModelNode {
                id: i,
                parent: n.parent,
                head,
                frames: n.frames.clone(),
                edge_score: n.edge_score,
                reliability: n.beta,
            });
        }
        if nodes.is_empty() {
            return Err(err("no nodes".into()));
        }
        if let Some(&bad) = snap.active.iter().find(|&&a| a >= nodes.len()) {
            return Err(TreeError::UnknownNode(bad));
        }
        Ok(Self {
            nodes,
            capacity: snap.capacity,
            active: snap.active.iter().copied().collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub frames: Vec<usize>,
    pub edge_score: f64,
    pub beta: f64,
    pub input_dim: usize,
    pub hidden: usize,
    /// Base64 of the little-endian f32 parameter buffer (w1, b1, w2, b2, w3, b3).
    pub head: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub capacity: usize,
    pub active: Vec<NodeId>,
    pub nodes: Vec<NodeSnapshot>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn head() -> AppearanceHead {
        AppearanceHead::zeros(2, 2)
    }

    /// Head whose score is the constant `p` for any input.
    fn constant_head(p: f64) -> AppearanceHead {
        let mut h = AppearanceHead::zeros(2, 2);
        // logit difference ln(p / (1 - p)) through the output bias
        h.layers[2].bias = vec![(p / (1.0 - p)).ln(), 0.0];
        h
    }

    fn chain(scores: &[f64], capacity: usize) -> ModelTree {
        let mut t = ModelTree::new(head(), vec![0], capacity).unwrap();
        for (i, &s) in scores.iter().enumerate() {
            t.add_node(i, head(), vec![i + 1], s).unwrap();
        }
        t
    }

    #[test]
    fn edge_score_examples() {
        let fs: Vec<_> = (0..10).map(|i| FeatureVector::new(vec![i as f64, 1.0])).collect();
        assert!((edge_score(&constant_head(0.8), &fs).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(edge_score(&head(), &[]), Err(TreeError::NoFrames));

        // two frames scoring ~1 and ~0: use a head that thresholds on x[0]
        let mut h = AppearanceHead::zeros(2, 1);
        h.layers[0].weights = vec![1.0, 0.0];
        h.layers[1].weights = vec![1.0];
        h.layers[2].weights = vec![100.0, 0.0];
        h.layers[2].bias = vec![-50.0, 0.0];
        let two = [FeatureVector::new(vec![100.0, 0.0]), FeatureVector::new(vec![0.0, 0.0])];
        let s = edge_score(&h, &two).unwrap();
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn edge_score_matches_direct_sum() {
        let mut rng = RngStream::new(3, 0);
        let h = AppearanceHead::new_random(4, 6, &mut rng);
        let fs: Vec<_> = (0..10)
            .map(|_| FeatureVector::new((0..4).map(|_| rng.normal() * 3.0).collect()))
            .collect();
        let mut total = 0.0;
        for f in &fs {
            total += h.score(f).unwrap();
        }
        assert!((edge_score(&h, &fs).unwrap() - total / 10.0).abs() < 1e-12);
    }

    #[test]
    fn reliability_examples() {
        let t = chain(&[0.9, 0.6, 0.8], 10);
        assert_eq!(t.reliability(0).unwrap(), 1.0);
        assert_eq!(t.reliability(3).unwrap(), 0.6);
        assert_eq!(t.reliability(7), Err(TreeError::UnknownNode(7)));

        let mut t = chain(&[0.3], 10);
        let c = t.add_node(1, head(), vec![5], 0.9).unwrap();
        assert_eq!(t.reliability(c).unwrap(), 0.3);
    }

    #[test]
    fn select_parent_examples() {
        // a = node 1 (beta 0.9), b = node 2 (beta 0.5)
        let mut t = ModelTree::new(head(), vec![0], 2).unwrap();
        t.add_node(0, head(), vec![1], 0.9).unwrap();
        t.add_node(0, head(), vec![2], 0.5).unwrap();
        let scores = BTreeMap::from([(1, 0.7), (2, 0.9)]);
        assert_eq!(t.select_parent(&scores).unwrap(), 1);

        let single = ModelTree::new(head(), vec![0], 3).unwrap();
        assert_eq!(single.select_parent(&BTreeMap::from([(0, 0.1)])).unwrap(), 0);

        let mut tie = ModelTree::new(head(), vec![0], 3).unwrap();
        tie.add_node(0, head(), vec![1], 0.6).unwrap();
        tie.add_node(0, head(), vec![2], 0.8).unwrap();
        let scores = BTreeMap::from([(0, 0.6), (1, 0.9), (2, 0.6)]);
        assert_eq!(tie.select_parent(&scores).unwrap(), 2);

        assert_eq!(
            tie.select_parent(&BTreeMap::from([(0, 0.6)])),
            Err(TreeError::MissingScore(1))
        );
    }

    #[test]
    fn active_set_slides() {
        let t = chain(&[0.5; 10], 10);
        assert_eq!(t.len(), 11);
        assert_eq!(t.active_ids(), (1..=10).collect::<Vec<_>>());
        let small = chain(&[0.5; 3], 10);
        assert_eq!(small.active_ids(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn add_node_errors() {
        let mut t = chain(&[], 10);
        assert_eq!(t.add_node(4, head(), vec![1], 0.5), Err(TreeError::UnknownNode(4)));
        assert_eq!(t.add_node(0, head(), vec![1], 1.5), Err(TreeError::EdgeScore(1.5)));
        assert!(ModelTree::new(head(), vec![0], 0).is_err());
    }

    #[test]
    fn dot_export_shapes() {
        let single = chain(&[], 10).export_dot();
        assert_eq!(single.matches("->").count(), 0);
        assert_eq!(single.matches("[label=\"#").count(), 1);
        let three = chain(&[0.9, 0.4], 10).export_dot();
        let edges: Vec<_> = three.lines().filter(|l| l.contains("->")).collect();
        assert_eq!(edges, vec!["  n0 -> n1 [label=\"0.900\"];", "  n1 -> n2 [label=\"0.400\"];"]);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut rng = RngStream::new(5, 0);
        let mut t = ModelTree::new(AppearanceHead::new_random(3, 4, &mut rng), vec![0], 2).unwrap();
        t.add_node(0, AppearanceHead::new_random(3, 4, &mut rng), vec![1, 2], 0.75).unwrap();
        t.add_node(1, AppearanceHead::new_random(3, 4, &mut rng), vec![3, 4], 0.5).unwrap();
        let snap = t.to_snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        let back = ModelTree::from_snapshot(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.active_ids(), vec![1, 2]);
        assert_eq!(back.reliability(2).unwrap(), 0.5);
        for (a, b) in back.nodes().iter().zip(t.nodes()) {
            for (x, y) in a.head.flat_params().iter().zip(b.head.flat_params()) {
                assert_eq!(*x, y as f32 as f64);
            }
        }
        // re-serializing the restored tree is byte-identical
        assert_eq!(serde_json::to_string(&back.to_snapshot()).unwrap(), json);
    }

    fn brute_path_min(t: &ModelTree, id: NodeId) -> f64 {
        let mut m = 1.0f64;
        let mut cur = id;
        while let Some(p) = t.nodes()[cur].parent {
            m = m.min(t.nodes()[cur].edge_score);
            cur = p;
        }
        m
    }

    proptest! {
        #[test]
        fn cached_reliability_is_path_minimum(
            steps in prop::collection::vec((any::<prop::sample::Index>(), 0.0f64..=1.0), 0..100),
            k in 1usize..12,
        ) {
            let mut t = ModelTree::new(head(), vec![0], k).unwrap();
            for (pick, s) in steps {
                let parent = pick.index(t.len());
                t.add_node(parent, head(), vec![t.len()], s).unwrap();
            }
            for n in t.nodes() {
                prop_assert_eq!(n.reliability, brute_path_min(&t, n.id));
                if let Some(p) = n.parent {
                    prop_assert!(p < n.id);
                    prop_assert!(n.reliability <= t.nodes()[p].reliability);
                }
            }
            let expect: Vec<_> = (t.len().saturating_sub(k)..t.len()).collect();
            prop_assert_eq!(t.active_ids(), expect);
        }
    }
}
