//! Majority-cluster HDBSCAN over a precomputed distance matrix.
//!
//! The clustering is specialised for `min_cluster_size > n/2`:
//!
//! * `min_samples = 1`, so every core distance is zero and the mutual
//!   reachability distance is the raw distance;
//! * the minimum spanning tree of the complete graph is built with Prim's
//!   algorithm, ties going to the lexicographically smaller `(a, b)` edge;
//! * the single-linkage hierarchy is condensed with `min_cluster_size`.
//!   Because two disjoint components cannot both reach a strict majority,
//!   every split sheds points from one chain and the condensed tree holds a
//!   single cluster;
//! * excess-of-mass selection with single-cluster selection allowed picks that
//!   cluster, and a point belongs to it when it survives to the deepest
//!   `λ = 1/distance` level of the chain.
//!
//! Points that fall out earlier are labelled noise.

use tracing::debug;

use crate::config::majority;
use crate::cosine::DistanceMatrix;
use crate::error::PipelineError;

/// Edge of the mutual-reachability minimum spanning tree. `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

impl MstEdge {
    fn new(x: usize, y: usize, weight: f64) -> Self {
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        Self { a, b, weight }
    }

    fn precedes(&self, other: &MstEdge) -> bool {
        (self.weight, self.a, self.b) < (other.weight, other.a, other.b)
    }
}

/// One agglomeration step. Nodes `< n` are points; node `n + i` is the
/// cluster formed by merge `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondensedChild {
    Point(usize),
    Cluster(usize),
}

/// Row of the condensed tree: `child` leaves `parent` at `lambda_death`.
/// `lambda_birth` is the level at which `parent` itself appeared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondensedNode {
    pub parent: usize,
    pub child: CondensedChild,
    pub lambda_birth: f64,
    pub lambda_death: f64,
    pub size: usize,
}

/// Benign (1) / noise (0) marks per client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabels {
    labels: Vec<u8>,
    accepted: usize,
}

impl ClusterLabels {
    /// # Panics
    ///
    /// Panics if a label is neither 0 nor 1.
    pub fn from_labels(labels: Vec<u8>) -> Self {
        assert!(labels.iter().all(|&l| l <= 1), "labels must be 0 or 1");
        let accepted = labels.iter().filter(|&&l| l == 1).count();
        Self { labels, accepted }
    }

    pub fn accept_all(n: usize) -> Self {
        Self {
            labels: vec![1; n],
            accepted: n,
        }
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted
    }

    pub fn is_accepted(&self, client: usize) -> bool {
        self.labels[client] == 1
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn accepted_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 1)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClusterOutcome {
    Majority(ClusterLabels),
    /// No component of at least `min_cluster_size` clients survived.
    AllNoise,
}

impl ClusterOutcome {
    pub fn labels(&self) -> Option<&ClusterLabels> {
        match self {
            ClusterOutcome::Majority(l) => Some(l),
            ClusterOutcome::AllNoise => None,
        }
    }
}

/// Labels the majority cluster of `matrix` benign.
///
/// `min_cluster_size` must be a strict majority (`> n/2`); smaller values
/// could yield several clusters and are rejected.
pub fn cluster_and_label(
    matrix: &DistanceMatrix,
    min_cluster_size: usize,
) -> Result<ClusterOutcome, PipelineError> {
    let n = matrix.n();
    if n == 0 {
        return Err(PipelineError::NoClients);
    }
    if min_cluster_size < majority(n) {
        return Err(PipelineError::MinClusterSizeTooSmall {
            min_cluster_size,
            clients: n,
        });
    }
    if min_cluster_size > n {
        return Ok(ClusterOutcome::AllNoise);
    }
    if n == 1 {
        return Ok(ClusterOutcome::Majority(ClusterLabels::accept_all(1)));
    }

    let mst = minimum_spanning_tree(matrix);
    let merges = single_linkage(n, &mst);
    let tree = CondensedTree::build(n, &merges, min_cluster_size);
    debug_assert_eq!(tree.cluster_count(), 1);
    let selected = tree.select_clusters();
    let labels = tree.label_points(&selected);
    debug!(
        clients = n,
        accepted = labels.iter().filter(|&&l| l == 1).count(),
        "majority clustering"
    );
    let labels = ClusterLabels::from_labels(labels);
    if labels.accepted_count() == 0 {
        return Ok(ClusterOutcome::AllNoise);
    }
    Ok(ClusterOutcome::Majority(labels))
}

/// Prim's algorithm over the complete mutual-reachability graph, starting from
/// point 0. With `min_samples = 1` the edge weight is `max(0, d(a, b))`.
pub fn minimum_spanning_tree(matrix: &DistanceMatrix) -> Vec<MstEdge> {
    let n = matrix.n();
    if n < 2 {
        return Vec::new();
    }
    let reach = |a: usize, b: usize| matrix.get(a, b).max(0.0);
    let mut in_tree = vec![false; n];
    in_tree[0] = true;
    // best known connection of every outside point to the tree
    let mut best: Vec<Option<MstEdge>> = (0..n)
        .map(|j| (j != 0).then(|| MstEdge::new(0, j, reach(0, j))))
        .collect();
    let mut edges = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let (next, edge) = best
            .iter()
            .enumerate()
            .filter(|(j, _)| !in_tree[*j])
            .filter_map(|(j, e)| e.map(|e| (j, e)))
            .reduce(|acc, cand| if cand.1.precedes(&acc.1) { cand } else { acc })
            .expect("graph is complete");
        in_tree[next] = true;
        edges.push(edge);
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let cand = MstEdge::new(next, j, reach(next, j));
            match best[j] {
                Some(cur) if !cand.precedes(&cur) => {}
                _ => best[j] = Some(cand),
            }
        }
    }
    edges
}

struct LinkageUnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
    next_label: usize,
}

impl LinkageUnionFind {
    fn new(n: usize) -> Self {
        let total = 2 * n - 1;
        let mut size = vec![0; total];
        size[..n].fill(1);
        Self {
            parent: (0..total).collect(),
            size,
            next_label: n,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let up = self.parent[x];
            self.parent[x] = root;
            x = up;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let label = self.next_label;
        self.parent[a] = label;
        self.parent[b] = label;
        self.size[label] = self.size[a] + self.size[b];
        self.next_label += 1;
        label
    }
}

/// Single-linkage hierarchy from MST edges processed in ascending weight
/// (ties by `(a, b)`).
pub fn single_linkage(n: usize, mst: &[MstEdge]) -> Vec<Merge> {
    assert_eq!(mst.len(), n.saturating_sub(1), "spanning tree has n - 1 edges");
    if n < 2 {
        return Vec::new();
    }
    let mut edges = mst.to_vec();
    edges.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    let mut uf = LinkageUnionFind::new(n);
    edges
        .iter()
        .map(|e| {
            let left = uf.find(e.a);
            let right = uf.find(e.b);
            let label = uf.union(left, right);
            Merge {
                left,
                right,
                distance: e.weight,
                size: uf.size[label],
            }
        })
        .collect()
}

fn lambda_of(distance: f64) -> f64 {
    if distance > 0.0 {
        1.0 / distance
    } else {
        f64::INFINITY
    }
}

/// HDBSCAN condensed tree. Cluster ids start at `points` (the root).
#[derive(Debug, Clone)]
pub struct CondensedTree {
    points: usize,
    nodes: Vec<CondensedNode>,
    /// Birth level per cluster, indexed by `id - points`.
    births: Vec<f64>,
}

impl CondensedTree {
    pub fn build(points: usize, merges: &[Merge], min_cluster_size: usize) -> Self {
        assert_eq!(merges.len() + 1, points);
        let root = 2 * points - 2;
        let size_of = |node: usize| {
            if node < points {
                1
            } else {
                merges[node - points].size
            }
        };
        let children = |node: usize| {
            let m = &merges[node - points];
            (m.left, m.right)
        };
        // all hierarchy nodes below (and including) `node`, breadth first
        let descendants = |node: usize| {
            let mut out = vec![node];
            let mut i = 0;
            while i < out.len() {
                if out[i] >= points {
                    let (l, r) = children(out[i]);
                    out.push(l);
                    out.push(r);
                }
                i += 1;
            }
            out
        };

        let mut relabel = vec![usize::MAX; root + 1];
        relabel[root] = points;
        let mut births = vec![0.0];
        let mut ignore = vec![false; root + 1];
        let mut nodes = Vec::new();

        for node in descendants(root) {
            if ignore[node] || node < points {
                continue;
            }
            let (left, right) = children(node);
            let lambda = lambda_of(merges[node - points].distance);
            let parent = relabel[node];
            let birth = births[parent - points];
            let (left_n, right_n) = (size_of(left), size_of(right));

            let mut shed = |side: usize, nodes: &mut Vec<CondensedNode>| {
                for sub in descendants(side) {
                    if sub < points {
                        nodes.push(CondensedNode {
                            parent,
                            child: CondensedChild::Point(sub),
                            lambda_birth: birth,
                            lambda_death: lambda,
                            size: 1,
                        });
                    }
                    ignore[sub] = true;
                }
            };

            match (left_n >= min_cluster_size, right_n >= min_cluster_size) {
                (true, true) => {
                    for (side, count) in [(left, left_n), (right, right_n)] {
                        let id = points + births.len();
                        births.push(lambda);
                        relabel[side] = id;
                        nodes.push(CondensedNode {
                            parent,
                            child: CondensedChild::Cluster(id),
                            lambda_birth: birth,
                            lambda_death: lambda,
                            size: count,
                        });
                    }
                }
                (false, false) => {
                    shed(left, &mut nodes);
                    shed(right, &mut nodes);
                }
                (false, true) => {
                    relabel[right] = parent;
                    shed(left, &mut nodes);
                }
                (true, false) => {
                    relabel[left] = parent;
                    shed(right, &mut nodes);
                }
            }
        }

        Self {
            points,
            nodes,
            births,
        }
    }

    pub fn nodes(&self) -> &[CondensedNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.points
    }

    /// Number of clusters in the tree, including the root.
    pub fn cluster_count(&self) -> usize {
        self.births.len()
    }

    /// Excess-of-mass stability of every cluster, indexed by `id - root`.
    pub fn stabilities(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.births.len()];
        for node in &self.nodes {
            let idx = node.parent - self.points;
            out[idx] += (node.lambda_death - self.births[idx]) * node.size as f64;
        }
        out
    }

    fn cluster_children(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(move |n| match n.child {
            CondensedChild::Cluster(c) if n.parent == cluster => Some(c),
            _ => None,
        })
    }

    /// Excess-of-mass selection, root eligible. Returns selected cluster ids.
    pub fn select_clusters(&self) -> Vec<usize> {
        let count = self.births.len();
        let mut stability = self.stabilities();
        let mut selected = vec![true; count];
        for idx in (0..count).rev() {
            let id = self.points + idx;
            let subtree: f64 = self
                .cluster_children(id)
                .map(|c| stability[c - self.points])
                .sum();
            if subtree > stability[idx] {
                selected[idx] = false;
                stability[idx] = subtree;
            } else {
                let mut stack: Vec<usize> = self.cluster_children(id).collect();
                while let Some(c) = stack.pop() {
                    selected[c - self.points] = false;
                    stack.extend(self.cluster_children(c));
                }
            }
        }
        (0..count)
            .filter(|&i| selected[i])
            .map(|i| self.points + i)
            .collect()
    }

    /// 1 for points inside a selected cluster, 0 for noise.
    ///
    /// When the root is the only selected cluster, a point belongs to it only
    /// if it leaves the root no earlier than the deepest level reached by any
    /// child of the root.
    pub fn label_points(&self, selected: &[usize]) -> Vec<u8> {
        let mut parent_of = vec![usize::MAX; self.points + self.births.len()];
        let mut point_lambda = vec![0.0; self.points];
        for node in &self.nodes {
            match node.child {
                CondensedChild::Point(p) => {
                    parent_of[p] = node.parent;
                    point_lambda[p] = node.lambda_death;
                }
                CondensedChild::Cluster(c) => parent_of[c] = node.parent,
            }
        }
        let root = self.points;
        let single_root = selected == [root];
        let root_threshold = self
            .nodes
            .iter()
            .filter(|n| n.parent == root)
            .map(|n| n.lambda_death)
            .fold(f64::NEG_INFINITY, f64::max);

        (0..self.points)
            .map(|p| {
                let mut c = parent_of[p];
                while c != root && !selected.contains(&c) {
                    c = parent_of[c];
                }
                u8::from(c != root || (single_root && point_lambda[p] >= root_threshold))
            })
            .collect()
    }
}
