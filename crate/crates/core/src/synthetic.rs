//! Random tree taxonomies whose features follow the hierarchy.
//!
//! Each child sits at its parent's feature plus a step of length `STEP` along
//! an axis chosen by (parent depth, child slot) from a random orthonormal
//! basis, plus Gaussian noise. With zero noise the nearest feature to any leaf
//! is its parent.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fsio;
use crate::taxonomy::{concepts_tsv, Concept, Taxonomy};

pub const STEP: f64 = 0.5;

pub const EDGES_FILE: &str = "taxonomy.tsv";
pub const CONCEPTS_FILE: &str = "concepts.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_nodes: usize,
    pub branching: usize,
    pub depth: usize,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub taxonomy: Taxonomy,
    /// Per-node feature, by taxonomy index.
    pub features: Vec<Vec<f64>>,
    /// Embedding rows: name token then definition token per node.
    pub tokens: Vec<(String, Vec<f64>)>,
}

pub fn concept_id(i: usize) -> String {
    format!("c{i:04}")
}

fn orthonormal_basis<R: Rng>(rng: &mut R, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let SyntheticSpec {
        n_nodes,
        branching,
        depth,
        feature_dim,
        noise,
        seed,
    } = *spec;
    if n_nodes == 0 || branching == 0 || feature_dim == 0 {
        return Err(Error::Validation("n_nodes, branching and feature_dim must be positive".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Validation(format!("noise must be finite and non-negative, got {noise}")));
    }
    let mut capacity = 0usize;
    let mut level = 1usize;
    for _ in 0..=depth {
        capacity = capacity.saturating_add(level);
        level = level.saturating_mul(branching);
    }
    if n_nodes > capacity {
        return Err(Error::Validation(format!(
            "a tree of depth {depth} and branching {branching} holds at most {capacity} nodes, asked for {n_nodes}"
        )));
    }
    if depth * branching > feature_dim {
        log::warn!("{} offset axes requested but feature_dim is {feature_dim}; axes wrap around", depth * branching);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = orthonormal_basis(&mut rng, feature_dim);
    let mut node_depth = vec![0usize];
    let mut n_children = vec![0usize];
    let mut features = vec![vec![0.0; feature_dim]];
    let mut edges = Vec::with_capacity(n_nodes.saturating_sub(1));
    let sigma = noise / (feature_dim as f64).sqrt();
    for i in 1..n_nodes {
        let frontier: Vec<usize> = (0..i)
            .filter(|&p| node_depth[p] < depth && n_children[p] < branching)
            .collect();
        let p = *frontier.choose(&mut rng).expect("capacity checked");
        let axis = &basis[(node_depth[p] * branching + n_children[p]) % feature_dim];
        let f: Vec<f64> = (0..feature_dim)
            .map(|j| {
                let g: f64 = rng.sample(StandardNormal);
                features[p][j] + STEP * (axis[j] + sigma * g)
            })
            .collect();
        features.push(f);
        node_depth.push(node_depth[p] + 1);
        n_children.push(0);
        n_children[p] += 1;
        edges.push((concept_id(p), concept_id(i)));
    }

    let mut tokens = Vec::with_capacity(2 * n_nodes);
    for (i, f) in features.iter().enumerate() {
        tokens.push((format!("n{i}"), f.clone()));
        let d: Vec<f64> = f
            .iter()
            .map(|x| {
                let g: f64 = rng.sample(StandardNormal);
                x + STEP * sigma * g
            })
            .collect();
        tokens.push((format!("d{i}"), d));
    }
    let concepts = (0..n_nodes)
        .map(|i| Concept::new(concept_id(i), format!("n{i}"), format!("d{i}")))
        .collect();
    let taxonomy = Taxonomy::new(concepts, &edges)?;
    Ok(SyntheticData {
        taxonomy,
        features,
        tokens,
    })
}

pub fn embeddings_text(tokens: &[(String, Vec<f64>)]) -> String {
    let dim = tokens.first().map_or(0, |t| t.1.len());
    let mut s = format!("{} {dim}\n", tokens.len());
    for (tok, v) in tokens {
        s.push_str(tok);
        for x in v {
            s.push(' ');
            s.push_str(&x.to_string());
        }
        s.push('\n');
    }
    s
}

impl SyntheticData {
    /// Writes the edges, concepts and embeddings files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fsio::create_dir_all(dir)?;
        fsio::write_atomic(&dir.join(EDGES_FILE), self.taxonomy.edges_tsv().as_bytes())?;
        fsio::write_atomic(&dir.join(CONCEPTS_FILE), concepts_tsv(self.taxonomy.concepts()).as_bytes())?;
        fsio::write_atomic(&dir.join(EMBEDDINGS_FILE), embeddings_text(&self.tokens).as_bytes())
    }
}
