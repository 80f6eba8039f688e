use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::Taxonomy;
use crate::error::{Error, Result};

/// Relation of an ego-graph node to the ego center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelPosition {
    SelfNode,
    Parent,
    Child,
    Ancestor,
    Descendant,
    Sibling,
}

impl RelPosition {
    pub const COUNT: usize = 6;

    pub const ALL: [RelPosition; 6] = [
        RelPosition::SelfNode,
        RelPosition::Parent,
        RelPosition::Child,
        RelPosition::Ancestor,
        RelPosition::Descendant,
        RelPosition::Sibling,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::contract(format!("unknown relative-position class {i}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            RelPosition::SelfNode => "self",
            RelPosition::Parent => "parent",
            RelPosition::Child => "child",
            RelPosition::Ancestor => "ancestor",
            RelPosition::Descendant => "descendant",
            RelPosition::Sibling => "sibling",
        }
    }

    /// Member of the set the readout combines.
    pub fn is_one_hop(self) -> bool {
        matches!(
            self,
            RelPosition::SelfNode | RelPosition::Parent | RelPosition::Child
        )
    }
}

/// Which nodes beyond parents and children enter an ego graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighborhood {
    pub ancestors: bool,
    pub descendants: bool,
    pub siblings: bool,
    /// Hop limit for the ancestor and descendant walks.
    pub max_hops: usize,
}

impl Default for Neighborhood {
    fn default() -> Self {
        Self {
            ancestors: true,
            descendants: true,
            siblings: false,
            max_hops: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EgoNode {
    /// Taxonomy index.
    pub node: usize,
    pub rel: RelPosition,
    pub depth: usize,
}

/// Induced subgraph around a center node. The center is always at local index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoGraph {
    pub center: usize,
    pub nodes: Vec<EgoNode>,
    /// Induced `(parent, child)` edges in local indices.
    pub edges: Vec<(usize, usize)>,
}

impl EgoGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Local adjacency (parents and children inside the graph), in edge order.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(p, c) in &self.edges {
            adj[p].push(c);
            adj[c].push(p);
        }
        adj
    }

    /// Local indices combined by the readout.
    pub fn one_hop(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].rel.is_one_hop())
            .collect()
    }

    pub fn local_index(&self, node: usize) -> Option<usize> {
        self.nodes.iter().position(|n| n.node == node)
    }
}

fn walk(t: &Taxonomy, start: usize, up: bool, max_hops: usize, excluded: &BTreeSet<usize>) -> BTreeMap<usize, usize> {
    let mut dist = BTreeMap::new();
    let mut queue = VecDeque::from([(start, 0usize)]);
    while let Some((u, d)) = queue.pop_front() {
        if d == max_hops {
            continue;
        }
        let next = if up { t.parents(u) } else { t.children(u) };
        for &v in next {
            if excluded.contains(&v) || v == start || dist.contains_key(&v) {
                continue;
            }
            dist.insert(v, d + 1);
            queue.push_back((v, d + 1));
        }
    }
    dist
}

/// Ego graph around `anchor`.
pub fn ego_graph(t: &Taxonomy, anchor: usize, cfg: &Neighborhood) -> EgoGraph {
    ego_graph_excluding(t, anchor, cfg, &BTreeSet::new())
}

/// Ego graph around `anchor` as if the `excluded` nodes were absent from the
/// taxonomy. Walks never pass through an excluded node.
pub fn ego_graph_excluding(
    t: &Taxonomy,
    anchor: usize,
    cfg: &Neighborhood,
    excluded: &BTreeSet<usize>,
) -> EgoGraph {
    let hops = cfg.max_hops.max(1);
    let up = walk(t, anchor, true, if cfg.ancestors { hops } else { 1 }, excluded);
    let down = walk(t, anchor, false, if cfg.descendants { hops } else { 1 }, excluded);

    let mut rel: BTreeMap<usize, RelPosition> = BTreeMap::new();
    rel.insert(anchor, RelPosition::SelfNode);
    let mut classed = |nodes: Vec<usize>, class: RelPosition| {
        for n in nodes {
            rel.entry(n).or_insert(class);
        }
    };
    classed(up.iter().filter(|e| *e.1 == 1).map(|e| *e.0).collect(), RelPosition::Parent);
    classed(down.iter().filter(|e| *e.1 == 1).map(|e| *e.0).collect(), RelPosition::Child);
    classed(up.iter().filter(|e| *e.1 > 1).map(|e| *e.0).collect(), RelPosition::Ancestor);
    classed(down.iter().filter(|e| *e.1 > 1).map(|e| *e.0).collect(), RelPosition::Descendant);
    if cfg.siblings {
        let sibs: Vec<usize> = t
            .parents(anchor)
            .iter()
            .filter(|p| !excluded.contains(p))
            .flat_map(|&p| t.children(p).iter().copied())
            .filter(|s| *s != anchor && !excluded.contains(s))
            .collect();
        classed(sibs, RelPosition::Sibling);
    }

    let mut order: Vec<(RelPosition, usize)> = rel.iter().map(|(&n, &r)| (r, n)).collect();
    order.sort_unstable();
    let nodes: Vec<EgoNode> = order
        .iter()
        .map(|&(r, n)| EgoNode {
            node: n,
            rel: r,
            depth: t.depth(n),
        })
        .collect();
    let local: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(i, n)| (n.node, i)).collect();
    let mut edges = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        for c in t.children(n.node) {
            if let Some(&j) = local.get(c) {
                edges.push((i, j));
            }
        }
    }
    EgoGraph {
        center: anchor,
        nodes,
        edges,
    }
}

/// Relation of `other` to `center` over the whole taxonomy.
pub fn relative_position(center: usize, other: usize, t: &Taxonomy) -> Result<RelPosition> {
    if center >= t.len() || other >= t.len() {
        return Err(Error::contract("relative_position: node index out of range"));
    }
    if center == other {
        return Ok(RelPosition::SelfNode);
    }
    if t.has_edge(other, center) {
        return Ok(RelPosition::Parent);
    }
    if t.has_edge(center, other) {
        return Ok(RelPosition::Child);
    }
    let none = BTreeSet::new();
    if walk(t, center, true, usize::MAX, &none).contains_key(&other) {
        return Ok(RelPosition::Ancestor);
    }
    if walk(t, center, false, usize::MAX, &none).contains_key(&other) {
        return Ok(RelPosition::Descendant);
    }
    if t.parents(center).iter().any(|&p| t.has_edge(p, other)) {
        return Ok(RelPosition::Sibling);
    }
    Err(Error::contract(format!(
        "`{}` is not related to `{}` within ego-graph scope",
        t.id(other),
        t.id(center)
    )))
}
