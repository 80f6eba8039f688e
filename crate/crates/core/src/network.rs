//! Full scoring network: anchor encoder plus matching head over one parameter store.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::backend::{Backend, Eager};
use crate::engine::optim::curvature_value;
use crate::engine::params::ParamStore;
use crate::error::{Error, Result};
use crate::features::{self, Geometry};
use crate::hgnn::{Encoder, HgnnConfig, HgnnIds};
use crate::matching::{infonce, MatchIds, Matcher};
use crate::taxonomy::{ego_graph, Taxonomy, TrainingGroup};

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub hgnn: HgnnConfig,
    pub match_layers: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hgnn: HgnnConfig::default(),
            match_layers: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkIds {
    pub hgnn: HgnnIds,
    pub matching: MatchIds,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    pub feature_dim: usize,
    pub geometry: Geometry,
    pub store: ParamStore,
    pub ids: NetworkIds,
}

impl Network {
    pub fn new(config: NetworkConfig, feature_dim: usize, geometry: Geometry, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let hgnn = HgnnIds::init(&mut store, &mut rng, &config.hgnn, feature_dim);
        let h = &config.hgnn;
        let matching = MatchIds::init(
            &mut store,
            &mut rng,
            h.manifold,
            *hgnn.curvatures.last().unwrap(),
            h.curvature,
            h.hidden_dim,
            feature_dim,
            config.match_layers,
        );
        Self {
            config,
            feature_dim,
            geometry,
            store,
            ids: NetworkIds { hgnn, matching },
        }
    }

    /// Rebuilds a network around restored parameters, checking that every
    /// tensor name and shape matches the layout `config` implies.
    pub fn from_store(config: NetworkConfig, feature_dim: usize, geometry: Geometry, store: ParamStore) -> Result<Self> {
        let mut net = Self::new(config, feature_dim, geometry, 0);
        if net.store.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, configuration expects {}",
                store.len(),
                net.store.len()
            )));
        }
        for ((_, want), (_, got)) in net.store.iter().zip(store.iter()) {
            if want.name != got.name || want.shape != got.shape || want.space != got.space {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        net.store = store;
        Ok(net)
    }

    /// Current curvature values, layers first and the matching curvature last.
    pub fn curvatures(&self) -> Vec<f64> {
        self.ids
            .hgnn
            .curvatures
            .iter()
            .map(|&id| curvature_value(&self.store, id))
            .collect()
    }
}

/// Encoder and matcher bound to one backend, with anchor and query images
/// cached for reuse across groups.
pub struct Context<'f, B: Backend> {
    pub encoder: Encoder<'f, B>,
    pub matcher: Matcher<B>,
    anchor_images: BTreeMap<(usize, Option<usize>), B::V>,
    query_images: BTreeMap<usize, B::V>,
    full_egos: BTreeMap<usize, BTreeSet<usize>>,
}

impl<'f, B: Backend> Context<'f, B> {
    /// `features[i]` is the raw feature of taxonomy node `i`.
    pub fn new(b: &mut B, net: &Network, features: &'f [Vec<f64>]) -> Self {
        let encoder = Encoder::new(b, &net.config.hgnn, &net.ids.hgnn, features, net.geometry);
        let k = encoder.curvature(net.config.hgnn.n_layers).clone();
        let matcher = Matcher::new(b, net.config.hgnn.manifold, &k, &net.ids.matching);
        Self {
            encoder,
            matcher,
            anchor_images: BTreeMap::new(),
            query_images: BTreeMap::new(),
            full_egos: BTreeMap::new(),
        }
    }

    /// Image of `anchor`, encoded as if `hidden` were absent when it falls in
    /// the anchor's ego graph.
    pub fn anchor_image(&mut self, b: &mut B, t: &Taxonomy, anchor: usize, hidden: Option<usize>) -> B::V {
        let nb = self.encoder_neighborhood();
        let ego = self
            .full_egos
            .entry(anchor)
            .or_insert_with(|| ego_graph(t, anchor, &nb).nodes.iter().map(|n| n.node).collect());
        let key = (anchor, hidden.filter(|q| ego.contains(q)));
        if let Some(v) = self.anchor_images.get(&key) {
            return v.clone();
        }
        let excluded: BTreeSet<usize> = key.1.into_iter().collect();
        let o = self.encoder.encode_anchor(b, t, anchor, &excluded);
        let img = self.matcher.anchor_image(b, &o);
        self.anchor_images.insert(key, img.clone());
        img
    }

    fn encoder_neighborhood(&self) -> crate::taxonomy::Neighborhood {
        self.encoder.config().neighborhood
    }

    /// Image of a raw query feature lifted onto the matching curvature.
    pub fn raw_query_image(&mut self, b: &mut B, feature: &[f64], model: crate::manifold::Model) -> B::V {
        let k = self.matcher.curvature().clone();
        let geometry = self.encoder.geometry();
        let o = features::lift(b, feature, geometry, model, &k);
        self.matcher.query_image(b, &o)
    }

    /// Image of a taxonomy node used as a query.
    pub fn node_query_image(&mut self, b: &mut B, node: usize) -> B::V {
        if let Some(v) = self.query_images.get(&node) {
            return v.clone();
        }
        let f = self.encoder.feature(node).to_vec();
        let model = self.encoder.config().manifold;
        let img = self.raw_query_image(b, &f, model);
        self.query_images.insert(node, img.clone());
        img
    }

    /// Score vector of one training group, positive first.
    pub fn group_scores(&mut self, b: &mut B, t: &Taxonomy, g: &TrainingGroup) -> B::V {
        let q = self.node_query_image(b, g.query);
        let scores: Vec<B::V> = g
            .anchors
            .iter()
            .map(|&a| {
                let img = self.anchor_image(b, t, a, Some(g.query));
                self.matcher.score_images(b, &img, &q)
            })
            .collect();
        b.concat(&scores)
    }

    /// Mean InfoNCE loss over `groups`.
    pub fn loss(&mut self, b: &mut B, t: &Taxonomy, groups: &[TrainingGroup]) -> B::V {
        let scores: Vec<B::V> = groups.iter().map(|g| self.group_scores(b, t, g)).collect();
        infonce(b, &scores)
    }
}

/// Eager scorer holding every anchor image of a taxonomy.
pub struct Scorer<'a> {
    net: &'a Network,
    anchor_images: Vec<Vec<f64>>,
}

impl<'a> Scorer<'a> {
    pub fn new(net: &'a Network, t: &Taxonomy, features: &[Vec<f64>]) -> Result<Self> {
        if features.len() != t.len() {
            return Err(Error::contract(format!(
                "{} features for {} taxonomy nodes",
                features.len(),
                t.len()
            )));
        }
        let mut b = Eager::with_params(&net.store);
        let mut ctx = Context::new(&mut b, net, features);
        let anchor_images = (0..t.len()).map(|a| ctx.anchor_image(&mut b, t, a, None)).collect::<Vec<_>>();
        if let Some(a) = anchor_images.iter().position(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::numeric(format!("non-finite encoding for anchor `{}`", t.id(a))));
        }
        Ok(Self { net, anchor_images })
    }

    /// Scores of `feature` against every anchor, indexed by taxonomy node.
    pub fn score(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.net.feature_dim {
            return Err(Error::contract(format!(
                "query feature has dimension {}, expected {}",
                feature.len(),
                self.net.feature_dim
            )));
        }
        let mut b = Eager::with_params(&self.net.store);
        let empty: [Vec<f64>; 0] = [];
        let mut ctx = Context::new(&mut b, self.net, &empty);
        let q = ctx.raw_query_image(&mut b, feature, self.net.config.hgnn.manifold);
        let scores: Vec<f64> = self
            .anchor_images
            .iter()
            .map(|a| ctx.matcher.score_images(&mut b, a, &q)[0])
            .collect();
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::numeric("non-finite matching score"));
        }
        Ok(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::tape::Tape;
    use crate::manifold::Model;
    use crate::taxonomy::{build_training_groups, Concept};
    use rand::Rng;

    fn tiny(model: Model) -> NetworkConfig {
        NetworkConfig {
            hgnn: HgnnConfig {
                hidden_dim: 4,
                rel_pos_dim: 3,
                abs_pos_dim: 2,
                manifold: model,
                max_depth: 4,
                ..HgnnConfig::default()
            },
            match_layers: 2,
        }
    }

    fn tree(n: usize) -> Taxonomy {
        let concepts = (0..n).map(|i| Concept::new(format!("c{i:02}"), "", "")).collect();
        let edges: Vec<(String, String)> = (1..n).map(|i| (format!("c{:02}", (i - 1) / 2), format!("c{i:02}"))).collect();
        Taxonomy::new(concepts, &edges).unwrap()
    }

    #[test]
    fn loss_near_uniform_at_init_and_tape_matches_eager() {
        let t = tree(15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f: Vec<Vec<f64>> = (0..15).map(|_| (0..3).map(|_| rng.random_range(-0.5..0.5)).collect()).collect();
        let groups = build_training_groups(&t, 8, &mut rng).unwrap();
        for model in [Model::Lorentz, Model::PoincareBall, Model::Euclidean] {
            let net = Network::new(tiny(model), 3, Geometry::Euclidean, 5);
            let mut e = Eager::with_params(&net.store);
            let mut ctx = Context::new(&mut e, &net, &f);
            let le = ctx.loss(&mut e, &t, &groups)[0];
            assert!((le - 9f64.ln()).abs() < 0.5, "{model}: {le}");
            let mut tp = Tape::new(&net.store);
            let mut ctx = Context::new(&mut tp, &net, &f);
            let lt = ctx.loss(&mut tp, &t, &groups);
            assert_eq!(tp.value(&lt)[0], le);
            let g = tp.backward(lt).unwrap();
            assert!(g.global_norm() > 0.0);
        }
    }

    #[test]
    fn scorer_matches_context_scores() {
        let t = tree(7);
        let f: Vec<Vec<f64>> = (0..7).map(|i| vec![0.1 * i as f64, -0.05 * i as f64, 0.2]).collect();
        let net = Network::new(tiny(Model::Lorentz), 3, Geometry::Euclidean, 1);
        let s = Scorer::new(&net, &t, &f).unwrap();
        let scores = s.score(&f[3]).unwrap();
        let mut e = Eager::with_params(&net.store);
        let mut ctx = Context::new(&mut e, &net, &f);
        let q = ctx.node_query_image(&mut e, 3);
        for (a, &expected) in scores.iter().enumerate() {
            let img = ctx.anchor_image(&mut e, &t, a, None);
            assert_eq!(ctx.matcher.score_images(&mut e, &img, &q)[0], expected);
        }
        assert!(s.score(&[0.0; 2]).is_err());
    }

    #[test]
    fn training_query_is_hidden_from_its_parent() {
        let t = tree(7);
        let f: Vec<Vec<f64>> = (0..7).map(|i| vec![0.1 * i as f64, 0.3, -0.1]).collect();
        let net = Network::new(tiny(Model::PoincareBall), 3, Geometry::Euclidean, 4);
        let mut e = Eager::with_params(&net.store);
        let mut ctx = Context::new(&mut e, &net, &f);
        let open = ctx.anchor_image(&mut e, &t, 1, None);
        let hidden = ctx.anchor_image(&mut e, &t, 1, Some(3));
        assert_ne!(open, hidden);
        // node 6 is outside the ego graph of node 1
        let far = ctx.anchor_image(&mut e, &t, 1, Some(6));
        assert_eq!(open, far);
    }

    #[test]
    fn from_store_checks_layout() {
        let net = Network::new(tiny(Model::Lorentz), 3, Geometry::Euclidean, 1);
        let back = Network::from_store(tiny(Model::Lorentz), 3, Geometry::Euclidean, net.store.clone()).unwrap();
        assert_eq!(back.store, net.store);
        assert!(Network::from_store(tiny(Model::Lorentz), 4, Geometry::Euclidean, net.store.clone()).is_err());
        assert_eq!(net.curvatures().len(), 3);
        assert!(net.curvatures().iter().all(|k| (k - 1.0).abs() < 1e-12));
    }
}
