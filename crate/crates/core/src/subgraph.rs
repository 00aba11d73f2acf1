//! Subgraph extraction, distance labeling, and feature initialization.
//!
//! Around a target triple `(h, r_t, t)` two local graphs can be extracted:
//!
//! * **enclosing** — nodes within `k` undirected hops of *both* targets
//!   (intersection of the k-hop neighborhoods), the classic GraIL choice;
//! * **neighbor-enhanced** — nodes within `k` hops of *either* target
//!   (union), keeping the isolated neighbors the enclosing variant drops.
//!
//! Every instance of the exact target triple is removed from the extracted
//! edge set so a model can never read the answer off its own input. Nodes
//! carry a `(distance-to-head, distance-to-tail)` label pair computed on the
//! extracted subgraph, each side with the *other* target deleted; the pair is
//! the only node feature the model sees.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::tensor::Tensor;

/// Which node set to extract around the target pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubgraphMode {
    Enclosing,
    NeighborEnhanced,
}

impl SubgraphMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SubgraphMode::Enclosing => "enclosing",
            SubgraphMode::NeighborEnhanced => "neighbor_enhanced",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "enclosing" => Ok(SubgraphMode::Enclosing),
            "neighbor_enhanced" | "neighbor-enhanced" | "ne" => Ok(SubgraphMode::NeighborEnhanced),
            other => Err(Error::InvalidArgument(format!(
                "unknown subgraph mode `{other}` (expected enclosing|neighbor_enhanced)"
            ))),
        }
    }
}

/// Distance value assigned to nodes unreachable from a target (or farther
/// than `k`): one past the largest real distance bucket.
pub fn distance_sentinel(k: usize) -> usize {
    k + 1
}

/// A local graph extracted around one target triple.
///
/// Local node 0 is the target head and local node 1 the target tail; the
/// target triple itself never appears in `edges`.
#[derive(Debug, Clone)]
pub struct Subgraph {
    /// Global entity ids; index in this list is the local node id.
    pub nodes: Vec<usize>,
    /// `(local head, relation, local tail)`, target triple excluded.
    pub edges: Vec<(usize, usize, usize)>,
    /// Per-node `(d_head, d_tail)` distance labels.
    pub labels: Vec<(usize, usize)>,
    pub target_relation: usize,
    /// Undirected, unlabeled adjacency over local nodes: sorted, deduplicated
    /// neighbor lists, with self-loops when enabled at extraction.
    pub homo_adj: Vec<Vec<usize>>,
}

impl Subgraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Plain-text edge list plus label table, entity/relation names resolved
    /// against the source graph.
    pub fn dump(&self, g: &KnowledgeGraph) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "nodes: {} edges: {} target relation: {}\n",
            self.nodes.len(),
            self.edges.len(),
            g.relations().name(self.target_relation)
        ));
        out.push_str("node\tentity\td_head\td_tail\n");
        for (i, &global) in self.nodes.iter().enumerate() {
            let (dh, dt) = self.labels[i];
            out.push_str(&format!("{i}\t{}\t{dh}\t{dt}\n", g.entities().name(global)));
        }
        out.push_str("edges:\n");
        for &(u, r, v) in &self.edges {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                g.entities().name(self.nodes[u]),
                g.relations().name(r),
                g.entities().name(self.nodes[v])
            ));
        }
        out
    }
}

/// All entities within undirected distance `k` of `e`, mapped to their
/// distance (`e` itself at 0).
pub fn k_hop_set(g: &KnowledgeGraph, e: usize, k: usize) -> Result<HashMap<usize, usize>> {
    if k < 1 {
        return Err(Error::InvalidHopCount(k));
    }
    if e >= g.num_entities() {
        return Err(Error::EntityOutOfRange {
            id: e,
            count: g.num_entities(),
        });
    }
    let mut dist = HashMap::new();
    dist.insert(e, 0usize);
    let mut queue = VecDeque::new();
    queue.push_back(e);
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        if du == k {
            continue;
        }
        for &(_, v) in g.out_edges(u).iter().chain(g.in_edges(u)) {
            if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(v) {
                slot.insert(du + 1);
                queue.push_back(v);
            }
        }
    }
    Ok(dist)
}

/// BFS distances from `start` over the local undirected adjacency, with
/// `blocked` deleted from the graph. Unreachable nodes get `usize::MAX`.
fn local_bfs(adj: &[Vec<usize>], start: usize, blocked: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    if start == blocked {
        return dist;
    }
    dist[start] = 0;
    let mut queue = VecDeque::new();
    queue.push_back(start);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if v != blocked && dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Double-radius labels for a local edge set whose node 0 is the head and
/// node 1 the tail. `d_head` is computed with the tail deleted and vice
/// versa; distances beyond `k` (or unreachable) collapse into the sentinel
/// bucket `k + 1`. Targets are forced to `(0, 1)` and `(1, 0)`.
pub fn double_radius_label(
    num_nodes: usize,
    edges: &[(usize, usize, usize)],
    k: usize,
) -> Vec<(usize, usize)> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
    for &(u, _, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    let sentinel = distance_sentinel(k);
    let clamp = |d: usize| if d > k { sentinel } else { d };
    let from_head = local_bfs(&adj, 0, 1);
    let from_tail = local_bfs(&adj, 1, 0);
    let mut labels: Vec<(usize, usize)> = (0..num_nodes)
        .map(|i| (clamp(from_head[i]), clamp(from_tail[i])))
        .collect();
    labels[0] = (0, 1);
    if num_nodes > 1 {
        labels[1] = (1, 0);
    }
    labels
}

/// One-hot feature rows `[one_hot(d_head) ⊕ one_hot(d_tail)]`, each side
/// `k + 2` wide (distances 0..=k plus the sentinel bucket).
pub fn one_hot_init(labels: &[(usize, usize)], k: usize) -> Result<Tensor> {
    let width = k + 2;
    let mut out = Tensor::zeros(labels.len(), 2 * width);
    for (i, &(dh, dt)) in labels.iter().enumerate() {
        if dh > k + 1 || dt > k + 1 {
            return Err(Error::LabelOutOfRange {
                value: dh.max(dt),
                max: k + 1,
            });
        }
        out.set(i, dh, 1.0);
        out.set(i, width + dt, 1.0);
    }
    Ok(out)
}

/// Extract a subgraph around `(h, r_t, t)`.
///
/// `homo_self_loops` controls whether the homogeneous view carries self
/// edges; without them a node's own state is erased by the bi-directional
/// layer, which has no self term.
pub fn extract(
    g: &KnowledgeGraph,
    h: usize,
    r_t: usize,
    t: usize,
    k: usize,
    mode: SubgraphMode,
    homo_self_loops: bool,
) -> Result<Subgraph> {
    if r_t >= g.num_relations() {
        return Err(Error::RelationOutOfRange {
            id: r_t,
            count: g.num_relations(),
        });
    }
    let near_head = k_hop_set(g, h, k)?;
    let near_tail = k_hop_set(g, t, k)?;

    let mut rest: Vec<usize> = match mode {
        SubgraphMode::Enclosing => near_head
            .keys()
            .filter(|e| near_tail.contains_key(e))
            .copied()
            .filter(|&e| e != h && e != t)
            .collect(),
        SubgraphMode::NeighborEnhanced => {
            let mut set: Vec<usize> = near_head
                .keys()
                .chain(near_tail.keys())
                .copied()
                .filter(|&e| e != h && e != t)
                .collect();
            set.sort_unstable();
            set.dedup();
            set
        }
    };
    rest.sort_unstable();
    rest.dedup();

    // Local ids: 0 = head, 1 = tail, then remaining globals in ascending
    // order. A self-loop target (h == t) keeps two local slots; edges attach
    // to slot 0.
    let mut nodes = Vec::with_capacity(rest.len() + 2);
    nodes.push(h);
    nodes.push(t);
    nodes.extend(rest);
    let mut local_of: HashMap<usize, usize> = HashMap::with_capacity(nodes.len());
    for (i, &e) in nodes.iter().enumerate().rev() {
        local_of.insert(e, i);
    }

    let mut edges = Vec::new();
    let mut seen_globals = std::collections::HashSet::new();
    for &u in &nodes {
        if !seen_globals.insert(u) {
            continue;
        }
        let lu = local_of[&u];
        for &(r, v) in g.out_edges(u) {
            if let Some(&lv) = local_of.get(&v) {
                if u == h && r == r_t && v == t {
                    continue; // target link removed
                }
                edges.push((lu, r, lv));
            }
        }
    }
    edges.sort_unstable();

    let mut labels = double_radius_label(nodes.len(), &edges, k);

    if mode == SubgraphMode::Enclosing {
        // Intersection nodes that end up farther than k from both targets
        // cannot lie on any connecting path; drop them and their edges.
        let keep: Vec<bool> = labels
            .iter()
            .enumerate()
            .map(|(i, &(dh, dt))| i < 2 || dh <= k || dt <= k)
            .collect();
        if keep.iter().any(|&b| !b) {
            let mut remap = vec![usize::MAX; nodes.len()];
            let mut new_nodes = Vec::new();
            let mut new_labels = Vec::new();
            for i in 0..nodes.len() {
                if keep[i] {
                    remap[i] = new_nodes.len();
                    new_nodes.push(nodes[i]);
                    new_labels.push(labels[i]);
                }
            }
            edges = edges
                .into_iter()
                .filter(|&(u, _, v)| keep[u] && keep[v])
                .map(|(u, r, v)| (remap[u], r, remap[v]))
                .collect();
            nodes = new_nodes;
            labels = new_labels;
        }
    }

    let homo_adj = build_homo_adj(nodes.len(), &edges, homo_self_loops);
    Ok(Subgraph {
        nodes,
        edges,
        labels,
        target_relation: r_t,
        homo_adj,
    })
}

fn build_homo_adj(
    num_nodes: usize,
    edges: &[(usize, usize, usize)],
    self_loops: bool,
) -> Vec<Vec<usize>> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
    for &(u, _, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    for (i, list) in adj.iter_mut().enumerate() {
        if self_loops {
            list.push(i);
        }
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Enclosing subgraph with self-loops on the homogeneous view.
pub fn extract_enclosing(
    g: &KnowledgeGraph,
    h: usize,
    r_t: usize,
    t: usize,
    k: usize,
) -> Result<Subgraph> {
    extract(g, h, r_t, t, k, SubgraphMode::Enclosing, true)
}

/// Neighbor-enhanced subgraph with self-loops on the homogeneous view.
pub fn extract_neighbor_enhanced(
    g: &KnowledgeGraph,
    h: usize,
    r_t: usize,
    t: usize,
    k: usize,
) -> Result<Subgraph> {
    extract(g, h, r_t, t, k, SubgraphMode::NeighborEnhanced, true)
}
