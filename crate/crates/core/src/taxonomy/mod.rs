//! The concept DAG: loading, validation, depths, ego graphs, dataset splits
//! and self-supervised training groups.

mod ego;
mod groups;
mod split;

pub use ego::{ego_graph, ego_graph_excluding, relative_position, EgoGraph, EgoNode, Neighborhood, RelPosition};
pub use groups::{build_training_groups, TrainingGroup};
pub use split::{
    read_manifest, split_dataset, write_manifest, DatasetSplit, ManifestEntry, QueryRecord, SplitKind,
};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::fsio;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Concept {
    pub id: String,
    pub name: String,
    /// May be empty.
    pub definition: String,
}

impl Concept {
    pub fn new(id: impl Into<String>, name: impl Into<String>, definition: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            definition: definition.into(),
        }
    }
}

/// Validated, immutable concept DAG. Nodes are addressed by dense indices in
/// ascending id order; adjacency lists are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    concepts: Vec<Concept>,
    index: BTreeMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    n_edges: usize,
    duplicate_edges: usize,
}

impl Taxonomy {
    /// Builds and validates a taxonomy from concepts and `(parent, child)` id pairs.
    pub fn new(mut concepts: Vec<Concept>, edges: &[(String, String)]) -> Result<Self> {
        if concepts.is_empty() {
            return Err(Error::Validation("taxonomy has no concepts".into()));
        }
        concepts.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = BTreeMap::new();
        for (i, c) in concepts.iter().enumerate() {
            if index.insert(c.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate concept id `{}`", c.id)));
            }
        }
        let n = concepts.len();
        let mut set = BTreeSet::new();
        let mut duplicate_edges = 0;
        for (p, c) in edges {
            let pi = *index
                .get(p)
                .ok_or_else(|| Error::Validation(format!("edge {p} -> {c}: unknown parent `{p}`")))?;
            let ci = *index
                .get(c)
                .ok_or_else(|| Error::Validation(format!("edge {p} -> {c}: unknown child `{c}`")))?;
            if !set.insert((pi, ci)) {
                duplicate_edges += 1;
            }
        }
        if duplicate_edges > 0 {
            warn!("dropped {duplicate_edges} duplicate edges");
        }
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(p, c) in &set {
            children[p].push(c);
            parents[c].push(p);
        }
        parents.iter_mut().for_each(|v| v.sort_unstable());
        if let Some(cycle) = find_cycle(&children) {
            let names: Vec<&str> = cycle.iter().map(|&i| concepts[i].id.as_str()).collect();
            return Err(Error::Validation(format!("cycle detected: {}", names.join(" -> "))));
        }
        let depth = bfs_depths(&parents, &children);
        Ok(Self {
            concepts,
            index,
            parents,
            children,
            depth,
            n_edges: set.len(),
            duplicate_edges,
        })
    }

    /// Loads the edges and concepts TSV files.
    pub fn load(edges_file: &Path, concepts_file: &Path) -> Result<Self> {
        let concepts = read_concepts(concepts_file)?;
        let edges = read_edges(edges_file)?;
        Self::new(concepts, &edges)
    }

    /// Writes both files in canonical (sorted) order.
    pub fn save(&self, edges_file: &Path, concepts_file: &Path) -> Result<()> {
        fsio::write_atomic(edges_file, self.edges_tsv().as_bytes())?;
        fsio::write_atomic(concepts_file, concepts_tsv(&self.concepts).as_bytes())
    }

    pub fn edges_tsv(&self) -> String {
        let mut out = String::new();
        for (p, c) in self.edge_ids() {
            let _ = writeln!(out, "{p}\t{c}");
        }
        out
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Number of repeated edges dropped while building.
    pub fn duplicate_edges(&self) -> usize {
        self.duplicate_edges
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn concept(&self, i: usize) -> &Concept {
        &self.concepts[i]
    }

    pub fn id(&self, i: usize) -> &str {
        &self.concepts[i].id
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn has_edge(&self, parent: usize, child: usize) -> bool {
        self.children[parent].binary_search(&child).is_ok()
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.parents[i].is_empty()).collect()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.children[i].is_empty()).collect()
    }

    /// All `(parent, child)` index pairs in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.children
            .iter()
            .enumerate()
            .flat_map(|(p, cs)| cs.iter().map(move |&c| (p, c)))
            .collect()
    }

    pub fn edge_ids(&self) -> Vec<(&str, &str)> {
        let mut e: Vec<(&str, &str)> = self
            .edges()
            .into_iter()
            .map(|(p, c)| (self.id(p), self.id(c)))
            .collect();
        e.sort_unstable();
        e
    }

    /// Shortest-path depth from any root.
    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    /// Copy without the given nodes and their incident edges.
    pub fn without(&self, removed: &BTreeSet<usize>) -> Result<Self> {
        let concepts: Vec<Concept> = (0..self.len())
            .filter(|i| !removed.contains(i))
            .map(|i| self.concepts[i].clone())
            .collect();
        let edges: Vec<(String, String)> = self
            .edges()
            .into_iter()
            .filter(|(p, c)| !removed.contains(p) && !removed.contains(c))
            .map(|(p, c)| (self.id(p).to_string(), self.id(c).to_string()))
            .collect();
        Self::new(concepts, &edges)
    }
}

/// Depth of every node keyed by id.
pub fn depth_map(t: &Taxonomy) -> BTreeMap<String, usize> {
    (0..t.len()).map(|i| (t.id(i).to_string(), t.depth(i))).collect()
}

fn bfs_depths(parents: &[Vec<usize>], children: &[Vec<usize>]) -> Vec<usize> {
    let mut depth = vec![usize::MAX; parents.len()];
    let mut queue = VecDeque::new();
    for (i, p) in parents.iter().enumerate() {
        if p.is_empty() {
            depth[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &c in &children[u] {
            if depth[c] == usize::MAX {
                depth[c] = depth[u] + 1;
                queue.push_back(c);
            }
        }
    }
    depth
}

/// Returns the nodes of one directed cycle, closed (first == last), if any.
fn find_cycle(children: &[Vec<usize>]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = children.len();
    let mut mark = vec![Mark::New; n];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for start in 0..n {
        if mark[start] != Mark::New {
            continue;
        }
        mark[start] = Mark::Active;
        stack.push((start, 0));
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if let Some(&v) = children[u].get(*next) {
                *next += 1;
                match mark[v] {
                    Mark::New => {
                        mark[v] = Mark::Active;
                        stack.push((v, 0));
                    }
                    Mark::Active => {
                        let pos = stack.iter().position(|&(w, _)| w == v).unwrap();
                        let mut cycle: Vec<usize> = stack[pos..].iter().map(|&(w, _)| w).collect();
                        cycle.push(v);
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[u] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn read_edges(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fsio::read_to_string(path)?;
    parse_edges(&text, path)
}

pub(crate) fn parse_edges(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut f = line.split('\t');
        match (f.next(), f.next(), f.next()) {
            (Some(p), Some(c), None) if !p.is_empty() && !c.is_empty() => {
                out.push((p.to_string(), c.to_string()))
            }
            _ => return Err(parse_err(path, no + 1, "expected `parent<TAB>child`")),
        }
    }
    Ok(out)
}

pub fn read_concepts(path: &Path) -> Result<Vec<Concept>> {
    let text = fsio::read_to_string(path)?;
    parse_concepts(&text, path)
}

pub(crate) fn parse_concepts(text: &str, path: &Path) -> Result<Vec<Concept>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.splitn(3, '\t').collect();
        if f.len() < 2 || f[0].is_empty() {
            return Err(parse_err(path, no + 1, "expected `id<TAB>name<TAB>definition`"));
        }
        out.push(Concept::new(f[0], f[1], f.get(2).copied().unwrap_or("")));
    }
    Ok(out)
}

pub fn concepts_tsv(concepts: &[Concept]) -> String {
    let mut sorted: Vec<&Concept> = concepts.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = String::new();
    for c in sorted {
        let _ = writeln!(out, "{}\t{}\t{}", c.id, c.name, c.definition);
    }
    out
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    fn ids(t: &Taxonomy, v: &[usize]) -> Vec<String> {
        v.iter().map(|&i| t.id(i).to_string()).collect()
    }

    #[test]
    fn load_examples() {
        let t = tax(&[("a", "b"), ("a", "c")]);
        assert_eq!((t.len(), t.n_edges()), (3, 2));
        assert_eq!(ids(&t, &t.roots()), ["a"]);

        let cyc = Taxonomy::new(
            vec![Concept::new("a", "", ""), Concept::new("b", "", "")],
            &[("a".into(), "b".into()), ("b".into(), "a".into())],
        )
        .unwrap_err();
        assert!(cyc.to_string().contains("a -> b -> a"), "{cyc}");

        let t = tax(&[("a", "b"), ("c", "b")]);
        assert_eq!(ids(&t, &t.roots()), ["a", "c"]);
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let e = Taxonomy::new(vec![Concept::new("a", "", "")], &[("a".into(), "a".into())]);
        assert!(matches!(e, Err(Error::Validation(_))));
    }

    #[test]
    fn dangling_edge_and_duplicates() {
        let e = Taxonomy::new(vec![Concept::new("a", "", "")], &[("a".into(), "zz".into())]);
        assert!(e.unwrap_err().to_string().contains("zz"));
        let concepts = vec![Concept::new("a", "", ""), Concept::new("b", "", "")];
        let t = Taxonomy::new(concepts, &[("a".into(), "b".into()), ("a".into(), "b".into())]).unwrap();
        assert_eq!((t.n_edges(), t.duplicate_edges()), (1, 1));
    }

    #[test]
    fn depth_examples() {
        let t = tax(&[("a", "b"), ("b", "c")]);
        let d = depth_map(&t);
        assert_eq!((d["a"], d["b"], d["c"]), (0, 1, 2));
        let t = tax(&[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]);
        assert_eq!(depth_map(&t)["d"], 2);
        // shortcut edge: depth follows the shortest root path
        let t = tax(&[("a", "b"), ("b", "c"), ("a", "c")]);
        assert_eq!(depth_map(&t)["c"], 1);
        for (p, c) in t.edges() {
            assert!(t.depth(c) <= t.depth(p) + 1);
        }
    }

    #[test]
    fn file_round_trip_is_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("edges.tsv");
        let c = dir.path().join("concepts.tsv");
        std::fs::write(&e, "# header\nr\tz\nr\ta\n\nr\ta\n").unwrap();
        std::fs::write(&c, "z\tzed\tlast letter\nr\troot\t\na\tay\n").unwrap();
        let t = Taxonomy::load(&e, &c).unwrap();
        assert_eq!(t.duplicate_edges(), 1);
        assert_eq!(t.concept(t.index_of("a").unwrap()).definition, "");
        let e2 = dir.path().join("e2.tsv");
        let c2 = dir.path().join("c2.tsv");
        t.save(&e2, &c2).unwrap();
        let t2 = Taxonomy::load(&e2, &c2).unwrap();
        assert_eq!(t2.edge_ids(), t.edge_ids());
        assert_eq!(t2.concepts(), t.concepts());
        let e3 = dir.path().join("e3.tsv");
        let c3 = dir.path().join("c3.tsv");
        t2.save(&e3, &c3).unwrap();
        assert_eq!(std::fs::read(&e2).unwrap(), std::fs::read(&e3).unwrap());
        assert_eq!(std::fs::read(&c2).unwrap(), std::fs::read(&c3).unwrap());
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = parse_edges("a\tb\nbad line\n", Path::new("e.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_concepts("onlyid\n", Path::new("c.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn removing_nodes_drops_incident_edges() {
        let t = tax(&[("a", "b"), ("a", "c"), ("c", "d")]);
        let removed: BTreeSet<usize> = [t.index_of("d").unwrap()].into();
        let s = t.without(&removed).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.edge_ids(), [("a", "b"), ("a", "c")]);
    }
}
