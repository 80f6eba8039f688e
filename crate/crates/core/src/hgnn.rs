//! Anchor encoder: positional concatenation, hyperbolic linear messages,
//! tangent-space attention aggregation and a weighted 1-hop readout.
//!
//! Layer `ℓ` runs on curvature `k_ℓ` and its activation maps to `k_{ℓ+1}`; the
//! output of the last layer lives on the curvature shared with the matching
//! head, so `n_layers + 1` curvature scalars exist in total.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::engine::backend::Backend;
use crate::engine::func::Func;
use crate::engine::params::{ParamId, ParamSpace, ParamStore};
use crate::features::{self, Geometry};
use crate::manifold::{ops, Curvature, Model, CURVATURE_FLOOR};
use crate::taxonomy::{ego_graph_excluding, EgoGraph, Neighborhood, RelPosition, Taxonomy};

/// How the readout combines the 1-hop embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutMode {
    /// `exp_o(Σ πⱼ log_o(zⱼ))`.
    Tangent,
    /// Weighted sum of coordinates, projected back onto the manifold.
    Coordinate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HgnnConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub rel_pos_dim: usize,
    pub abs_pos_dim: usize,
    pub manifold: Model,
    /// Initial curvature scale of every layer.
    pub curvature: f64,
    pub trainable_curvature: bool,
    pub neighborhood: Neighborhood,
    /// Last row of the absolute-position table; deeper nodes share it.
    pub max_depth: usize,
    pub use_rel_pos: bool,
    pub use_abs_pos: bool,
    pub readout: ReadoutMode,
}

impl Default for HgnnConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            hidden_dim: 100,
            rel_pos_dim: 50,
            abs_pos_dim: 50,
            manifold: Model::Lorentz,
            curvature: 1.0,
            trainable_curvature: true,
            neighborhood: Neighborhood::default(),
            max_depth: 16,
            use_rel_pos: true,
            use_abs_pos: true,
            readout: ReadoutMode::Tangent,
        }
    }
}

/// Parameters of one generalized concatenation `(M_x ⊗ x) ⊕ (M_p ⊗ p) ⊕ bias`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcatIds {
    pub m_x: ParamId,
    pub m_p: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionIds {
    pub w_center: ParamId,
    pub w_neighbor: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerIds {
    pub concat_rel: Option<ConcatIds>,
    pub concat_abs: Option<ConcatIds>,
    pub w: ParamId,
    pub b: ParamId,
    pub att: AttentionIds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HgnnIds {
    /// `n_layers + 1` raw curvature scalars; the last is shared with matching.
    pub curvatures: Vec<ParamId>,
    pub rel_table: ParamId,
    pub abs_table: ParamId,
    pub layers: Vec<LayerIds>,
    pub alpha: ParamId,
}

/// Glorot-uniform matrix.
pub(crate) fn glorot<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.random_range(-a..a)).collect()
}

/// `rows × cols` matrix placing the input in rows `offset..offset + cols`.
pub(crate) fn block_embedding(rows: usize, cols: usize, offset: usize) -> Vec<f64> {
    let mut m = vec![0.0; rows * cols];
    for i in 0..cols {
        m[(offset + i) * cols + i] = 1.0;
    }
    m
}

pub(crate) fn manifold_space(model: Model, curvature: ParamId) -> ParamSpace {
    match model {
        Model::Lorentz => ParamSpace::Lorentz { curvature },
        Model::PoincareBall => ParamSpace::Poincare,
        _ => ParamSpace::Euclidean,
    }
}

/// Manifold origin as stored data.
pub(crate) fn origin_data(model: Model, k: f64, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; model.coord_dim(n)];
    if model == Model::Lorentz {
        v[0] = k.sqrt();
    }
    v
}

pub(crate) fn add_curvature(store: &mut ParamStore, name: &str, k: f64, trainable: bool) -> ParamId {
    let raw = Curvature::new(k, trainable).map(|c| c.raw()).unwrap_or(0.0);
    let id = store.add(name, vec![1], vec![raw], ParamSpace::Euclidean);
    store.set_trainable(id, trainable);
    id
}

impl HgnnIds {
    /// Registers and initialises every encoder tensor.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        cfg: &HgnnConfig,
        feature_dim: usize,
    ) -> Self {
        let model = cfg.manifold;
        let train_k = cfg.trainable_curvature && model.is_hyperbolic();
        let curvatures: Vec<ParamId> = (0..=cfg.n_layers)
            .map(|l| {
                let name = if l == cfg.n_layers {
                    "curvature.match".to_string()
                } else {
                    format!("curvature.{l}")
                };
                add_curvature(store, &name, cfg.curvature, train_k)
            })
            .collect();

        let rel_table = store.add(
            "hgnn.rel_table",
            vec![RelPosition::COUNT, cfg.rel_pos_dim],
            vec![0.0; RelPosition::COUNT * cfg.rel_pos_dim],
            ParamSpace::Euclidean,
        );
        let abs_table = store.add(
            "hgnn.abs_table",
            vec![cfg.max_depth + 1, cfg.abs_pos_dim],
            vec![0.0; (cfg.max_depth + 1) * cfg.abs_pos_dim],
            ParamSpace::Euclidean,
        );

        let h = cfg.hidden_dim;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for (l, &k_id) in curvatures.iter().enumerate().take(cfg.n_layers) {
            let space = manifold_space(model, k_id);
            let mut dim = if l == 0 { feature_dim } else { h };
            let concat = |store: &mut ParamStore, tag: &str, dim: usize, pdim: usize| {
                let out = dim + pdim;
                let m_x = store.add(
                    format!("hgnn.{l}.{tag}.m_x"),
                    vec![out, dim],
                    block_embedding(out, dim, 0),
                    ParamSpace::Euclidean,
                );
                let m_p = store.add(
                    format!("hgnn.{l}.{tag}.m_p"),
                    vec![out, pdim],
                    block_embedding(out, pdim, dim),
                    ParamSpace::Euclidean,
                );
                let bias = store.add(
                    format!("hgnn.{l}.{tag}.bias"),
                    vec![model.coord_dim(out)],
                    origin_data(model, cfg.curvature, out),
                    space,
                );
                ConcatIds { m_x, m_p, bias }
            };
            let concat_rel = cfg.use_rel_pos.then(|| concat(store, "concat_rel", dim, cfg.rel_pos_dim));
            if cfg.use_rel_pos {
                dim += cfg.rel_pos_dim;
            }
            let concat_abs = cfg.use_abs_pos.then(|| concat(store, "concat_abs", dim, cfg.abs_pos_dim));
            if cfg.use_abs_pos {
                dim += cfg.abs_pos_dim;
            }
            let w = store.add(format!("hgnn.{l}.w"), vec![h, dim], glorot(rng, h, dim), ParamSpace::Euclidean);
            let b = store.add(
                format!("hgnn.{l}.b"),
                vec![model.coord_dim(h)],
                origin_data(model, cfg.curvature, h),
                space,
            );
            let att = AttentionIds {
                w_center: store.add(format!("hgnn.{l}.att.w_center"), vec![h, h], glorot(rng, h, h), ParamSpace::Euclidean),
                w_neighbor: store.add(format!("hgnn.{l}.att.w_neighbor"), vec![h, h], glorot(rng, h, h), ParamSpace::Euclidean),
                b1: store.add(format!("hgnn.{l}.att.b1"), vec![h], vec![0.0; h], ParamSpace::Euclidean),
                w2: store.add(format!("hgnn.{l}.att.w2"), vec![1, h], glorot(rng, 1, h), ParamSpace::Euclidean),
                b2: store.add(format!("hgnn.{l}.att.b2"), vec![1], vec![0.0], ParamSpace::Euclidean),
            };
            layers.push(LayerIds {
                concat_rel,
                concat_abs,
                w,
                b,
                att,
            });
        }
        let alpha = store.add(
            "hgnn.readout_alpha",
            vec![RelPosition::COUNT],
            vec![0.0; RelPosition::COUNT],
            ParamSpace::Euclidean,
        );
        Self {
            curvatures,
            rel_table,
            abs_table,
            layers,
            alpha,
        }
    }
}

/// `softplus(raw) + 1e−3` on the backend.
pub fn read_curvature<B: Backend>(b: &mut B, id: ParamId) -> B::V {
    let raw = b.param(id);
    let sp = b.map(&raw, Func::Softplus);
    b.shift(&sp, CURVATURE_FLOOR)
}

/// Reads a manifold-valued parameter, re-deriving the Lorentz time coordinate
/// from the current curvature.
pub fn read_point<B: Backend>(b: &mut B, model: Model, k: &B::V, id: ParamId) -> B::V {
    let raw = b.param(id);
    match model {
        Model::Lorentz => ops::project(b, model, k, &raw),
        _ => raw,
    }
}

/// Softmax over attention logits of `candidates` relative to `center`, all
/// given as origin-tangent vectors.
pub fn attention_weights<B: Backend>(
    b: &mut B,
    att: &AttentionHandles<B>,
    center: &B::V,
    candidates: &[B::V],
) -> B::V {
    let c = b.matvec(&att.w_center, center);
    let c = b.add(&c, &att.b1);
    let logits: Vec<B::V> = candidates
        .iter()
        .map(|u| {
            let n = b.matvec(&att.w_neighbor, u);
            attention_logit(b, att, &c, &n)
        })
        .collect();
    let e = b.concat(&logits);
    b.softmax(&e)
}

fn attention_logit<B: Backend>(b: &mut B, att: &AttentionHandles<B>, center_term: &B::V, neighbor_term: &B::V) -> B::V {
    let s = b.add(center_term, neighbor_term);
    let a = b.map(&s, Func::LeakyRelu);
    let o = b.matvec(&att.w2, &a);
    b.add(&o, &att.b2)
}

/// `exp_{h_i}(Σ wⱼ log_{h_i}(h_j))` over the given neighbors; `offset` skips
/// leading entries of `weights` that belong to other candidates.
pub fn aggregate<B: Backend>(
    b: &mut B,
    model: Model,
    k: &B::V,
    center: &B::V,
    neighbors: &[B::V],
    weights: &B::V,
    offset: usize,
) -> B::V {
    let mut acc: Option<B::V> = None;
    for (j, h) in neighbors.iter().enumerate() {
        let v = ops::logmap(b, model, k, center, h);
        let w = b.index(weights, offset + j);
        let wv = b.scale(&v, &w);
        acc = Some(match acc {
            None => wv,
            Some(a) => b.add(&a, &wv),
        });
    }
    match acc {
        None => center.clone(),
        Some(v) => ops::expmap(b, model, k, center, &v),
    }
}

pub struct AttentionHandles<B: Backend> {
    pub w_center: B::M,
    pub w_neighbor: B::M,
    pub b1: B::V,
    pub w2: B::M,
    pub b2: B::V,
}

struct ConcatHandles<B: Backend> {
    m_x: B::M,
    bias: B::V,
    /// Lazily computed `M_p ⊗ exp_o(table row)` per row.
    images: Vec<Option<B::V>>,
    m_p: B::M,
    table: ParamId,
}

struct LayerHandles<B: Backend> {
    rel: Option<ConcatHandles<B>>,
    abs: Option<ConcatHandles<B>>,
    w: B::M,
    b: B::V,
    att: AttentionHandles<B>,
}

/// Parameter handles and per-computation caches for encoding anchors.
///
/// One encoder is created per backend context (one tape, or one eager
/// evaluation pass); messages of the first layer and positional images are
/// shared by every anchor encoded through it.
pub struct Encoder<'f, B: Backend> {
    cfg: HgnnConfig,
    ks: Vec<B::V>,
    layers: Vec<LayerHandles<B>>,
    alpha_sp: B::V,
    features: &'f [Vec<f64>],
    geometry: Geometry,
    lifted: BTreeMap<usize, B::V>,
    first_messages: BTreeMap<(usize, RelPosition), B::V>,
}

fn closure(set: &BTreeSet<usize>, adj: &[Vec<usize>]) -> BTreeSet<usize> {
    let mut out = set.clone();
    for &i in set {
        out.extend(adj[i].iter().copied());
    }
    out
}

impl<'f, B: Backend> Encoder<'f, B> {
    /// `features[i]` is the raw feature of taxonomy node `i`.
    pub fn new(
        b: &mut B,
        cfg: &HgnnConfig,
        ids: &HgnnIds,
        features: &'f [Vec<f64>],
        geometry: Geometry,
    ) -> Self {
        let model = cfg.manifold;
        let ks: Vec<B::V> = ids.curvatures.iter().map(|&id| read_curvature(b, id)).collect();
        let concat = |b: &mut B, c: &ConcatIds, k: &B::V, table: ParamId, rows: usize| ConcatHandles {
            m_x: b.param_matrix(c.m_x),
            bias: read_point(b, model, k, c.bias),
            images: vec![None; rows],
            m_p: b.param_matrix(c.m_p),
            table,
        };
        let layers = ids
            .layers
            .iter()
            .enumerate()
            .map(|(l, li)| {
                let k = ks[l].clone();
                LayerHandles {
                    rel: li
                        .concat_rel
                        .as_ref()
                        .map(|c| concat(b, c, &k, ids.rel_table, RelPosition::COUNT)),
                    abs: li
                        .concat_abs
                        .as_ref()
                        .map(|c| concat(b, c, &k, ids.abs_table, cfg.max_depth + 1)),
                    w: b.param_matrix(li.w),
                    b: read_point(b, model, &k, li.b),
                    att: AttentionHandles {
                        w_center: b.param_matrix(li.att.w_center),
                        w_neighbor: b.param_matrix(li.att.w_neighbor),
                        b1: b.param(li.att.b1),
                        w2: b.param_matrix(li.att.w2),
                        b2: b.param(li.att.b2),
                    },
                }
            })
            .collect();
        let alpha = b.param(ids.alpha);
        let alpha_sp = b.map(&alpha, Func::Softplus);
        Self {
            cfg: cfg.clone(),
            ks,
            layers,
            alpha_sp,
            features,
            geometry,
            lifted: BTreeMap::new(),
            first_messages: BTreeMap::new(),
        }
    }

    /// Curvature handle of layer `l`; index `n_layers` is the output curvature.
    pub fn curvature(&self, l: usize) -> &B::V {
        &self.ks[l]
    }

    pub fn config(&self) -> &HgnnConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn feature(&self, node: usize) -> &[f64] {
        &self.features[node]
    }

    fn lifted(&mut self, b: &mut B, node: usize) -> B::V {
        if let Some(v) = self.lifted.get(&node) {
            return v.clone();
        }
        let v = features::lift(b, &self.features[node], self.geometry, self.cfg.manifold, &self.ks[0]);
        self.lifted.insert(node, v.clone());
        v
    }

    fn pos_image(&mut self, b: &mut B, l: usize, rel: bool, row: usize) -> B::V {
        let model = self.cfg.manifold;
        let k = self.ks[l].clone();
        let layer = &mut self.layers[l];
        let c = if rel { layer.rel.as_mut() } else { layer.abs.as_mut() }.expect("positional concat enabled");
        if let Some(v) = &c.images[row] {
            return v.clone();
        }
        let r = b.param_row(c.table, row);
        let p = ops::exp0(b, model, &k, &r);
        let img = ops::matvec(b, model, &k, &c.m_p, &p);
        c.images[row] = Some(img.clone());
        img
    }

    /// Positional concatenation: `x ← (M ⊗ x) ⊕ image(class) ⊕ bias`, once for
    /// the relative class and once for the depth.
    pub fn layer_input_concat(&mut self, b: &mut B, l: usize, x: &B::V, rel: RelPosition, depth: usize) -> B::V {
        let model = self.cfg.manifold;
        let k = self.ks[l].clone();
        let mut x = x.clone();
        if self.layers[l].rel.is_some() {
            let img = self.pos_image(b, l, true, rel.index());
            let c = self.layers[l].rel.as_ref().unwrap();
            let (m, bias) = (c.m_x.clone(), c.bias.clone());
            let mx = ops::matvec(b, model, &k, &m, &x);
            x = ops::concat_images(b, model, &k, &mx, &img, &bias);
        }
        if self.layers[l].abs.is_some() {
            let row = depth.min(self.cfg.max_depth);
            let img = self.pos_image(b, l, false, row);
            let c = self.layers[l].abs.as_ref().unwrap();
            let (m, bias) = (c.m_x.clone(), c.bias.clone());
            let mx = ops::matvec(b, model, &k, &m, &x);
            x = ops::concat_images(b, model, &k, &mx, &img, &bias);
        }
        x
    }

    /// `h = (W ⊗ concat(x)) ⊕ b`.
    pub fn message(&mut self, b: &mut B, l: usize, x: &B::V, rel: RelPosition, depth: usize) -> B::V {
        let x = self.layer_input_concat(b, l, x, rel, depth);
        let model = self.cfg.manifold;
        let k = self.ks[l].clone();
        let (w, bias) = (self.layers[l].w.clone(), self.layers[l].b.clone());
        ops::linear(b, model, &k, &w, &x, &bias)
    }

    fn first_message(&mut self, b: &mut B, node: usize, rel: RelPosition, depth: usize) -> B::V {
        if let Some(v) = self.first_messages.get(&(node, rel)) {
            return v.clone();
        }
        let x = self.lifted(b, node);
        let h = self.message(b, 0, &x, rel, depth);
        self.first_messages.insert((node, rel), h.clone());
        h
    }

    /// Aggregation and activation for one center given its neighbors' messages.
    pub fn aggregate_node(&mut self, b: &mut B, l: usize, center: &B::V, neighbors: &[B::V]) -> B::V {
        let model = self.cfg.manifold;
        let k_in = self.ks[l].clone();
        let k_out = self.ks[l + 1].clone();
        let att = &self.layers[l].att;
        let agg = if model == Model::Euclidean {
            if neighbors.is_empty() {
                center.clone()
            } else {
                let w = attention_weights(b, att, center, neighbors);
                let mut acc = center.clone();
                for (j, h) in neighbors.iter().enumerate() {
                    let wj = b.index(&w, j);
                    let t = b.scale(h, &wj);
                    acc = b.add(&acc, &t);
                }
                acc
            }
        } else if neighbors.is_empty() {
            center.clone()
        } else {
            let uc = ops::log0(b, model, &k_in, center);
            let mut cands = Vec::with_capacity(neighbors.len() + 1);
            cands.push(uc.clone());
            for h in neighbors {
                cands.push(ops::log0(b, model, &k_in, h));
            }
            let w = attention_weights(b, att, &uc, &cands);
            aggregate(b, model, &k_in, center, neighbors, &w, 1)
        };
        ops::activation(b, model, &k_in, &k_out, &agg)
    }

    /// Weighted readout over the 1-hop nodes of `ego`, given final embeddings.
    pub fn readout(&mut self, b: &mut B, ego: &EgoGraph, finals: &[Option<B::V>]) -> B::V {
        let model = self.cfg.manifold;
        let k = self.ks[self.cfg.n_layers].clone();
        let hop = ego.one_hop();
        let ws: Vec<B::V> = hop
            .iter()
            .map(|&i| b.index(&self.alpha_sp, ego.nodes[i].rel.index()))
            .collect();
        let w = b.concat(&ws);
        let total = b.sum(&w);
        let inv = b.map(&total, Func::Recip);
        let pi = b.scale(&w, &inv);
        let mut acc: Option<B::V> = None;
        for (j, &i) in hop.iter().enumerate() {
            let z = finals[i].as_ref().expect("final embedding for 1-hop node");
            let v = match self.cfg.readout {
                ReadoutMode::Tangent => ops::log0(b, model, &k, z),
                ReadoutMode::Coordinate => z.clone(),
            };
            let pj = b.index(&pi, j);
            let t = b.scale(&v, &pj);
            acc = Some(match acc {
                None => t,
                Some(a) => b.add(&a, &t),
            });
        }
        let acc = acc.expect("ego graph contains its center");
        match self.cfg.readout {
            ReadoutMode::Tangent => ops::exp0(b, model, &k, &acc),
            ReadoutMode::Coordinate => ops::project(b, model, &k, &acc),
        }
    }

    /// Runs every layer over an ego graph, computing each layer only on the
    /// nodes its successors need, and returns the final embeddings by local index.
    pub fn forward_ego(&mut self, b: &mut B, ego: &EgoGraph) -> Vec<Option<B::V>> {
        let adj = ego.neighbors();
        let n_layers = self.cfg.n_layers;
        let mut out_sets = vec![BTreeSet::new(); n_layers];
        out_sets[n_layers - 1] = ego.one_hop().into_iter().collect();
        for l in (0..n_layers - 1).rev() {
            out_sets[l] = closure(&out_sets[l + 1], &adj);
        }
        let mut x: Vec<Option<B::V>> = vec![None; ego.len()];
        for (l, out_set) in out_sets.iter().enumerate() {
            let msg_set = closure(out_set, &adj);
            let mut h: Vec<Option<B::V>> = vec![None; ego.len()];
            for &i in &msg_set {
                let node = ego.nodes[i];
                h[i] = Some(if l == 0 {
                    self.first_message(b, node.node, node.rel, node.depth)
                } else {
                    let xi = x[i].clone().expect("layer input computed");
                    self.message(b, l, &xi, node.rel, node.depth)
                });
            }
            let mut y: Vec<Option<B::V>> = vec![None; ego.len()];
            for &i in out_set {
                let center = h[i].clone().unwrap();
                let nbrs: Vec<B::V> = adj[i].iter().map(|&j| h[j].clone().unwrap()).collect();
                y[i] = Some(self.aggregate_node(b, l, &center, &nbrs));
            }
            x = y;
        }
        x
    }

    pub fn encode_ego(&mut self, b: &mut B, ego: &EgoGraph) -> B::V {
        let finals = self.forward_ego(b, ego);
        self.readout(b, ego, &finals)
    }

    /// Encodes `anchor` with the `excluded` nodes treated as absent.
    pub fn encode_anchor(&mut self, b: &mut B, t: &Taxonomy, anchor: usize, excluded: &BTreeSet<usize>) -> B::V {
        let ego = ego_graph_excluding(t, anchor, &self.cfg.neighborhood, excluded);
        self.encode_ego(b, &ego)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::backend::Eager;
    use crate::engine::tape::Tape;
    use crate::manifold::{HPoint, MANIFOLD_TOL};
    use crate::taxonomy::{ego_graph, Concept};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(model: Model) -> HgnnConfig {
        HgnnConfig {
            hidden_dim: 5,
            rel_pos_dim: 3,
            abs_pos_dim: 2,
            manifold: model,
            max_depth: 3,
            ..HgnnConfig::default()
        }
    }

    fn chain(n: usize) -> Taxonomy {
        let concepts = (0..n).map(|i| Concept::new(format!("c{i}"), "", "")).collect();
        let edges: Vec<(String, String)> = (1..n).map(|i| (format!("c{}", i - 1), format!("c{i}"))).collect();
        Taxonomy::new(concepts, &edges).unwrap()
    }

    fn feats(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-0.5..0.5)).collect()).collect()
    }

    fn setup(model: Model) -> (ParamStore, HgnnIds, HgnnConfig) {
        let cfg = small_cfg(model);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ids = HgnnIds::init(&mut store, &mut rng, &cfg, 4);
        (store, ids, cfg)
    }

    #[test]
    fn attention_weights_form_a_distribution() {
        let (store, ids, cfg) = setup(Model::Lorentz);
        let mut b = Eager::with_params(&store);
        let f = feats(1, 4, 0);
        let enc = Encoder::new(&mut b, &cfg, &ids, &f, Geometry::Euclidean);
        let att = &enc.layers[0].att;
        let c = vec![0.1, 0.2, -0.3, 0.0, 0.4];
        let u = vec![0.3, -0.2, 0.1, 0.5, 0.0];
        let w = attention_weights(&mut b, att, &c, &[u.clone(), u.clone()]);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        let w = attention_weights(&mut b, att, &c, std::slice::from_ref(&u));
        assert_eq!(w, vec![1.0]);
        let w = attention_weights(&mut b, att, &c, &[u, c.clone(), vec![1.0; 5]]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(w.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn aggregate_examples() {
        let mut b = Eager::new();
        let k = vec![1.0];
        for model in [Model::Lorentz, Model::PoincareBall] {
            let c = ops::exp0(&mut b, model, &k, &vec![0.2, -0.1]);
            let n1 = ops::exp0(&mut b, model, &k, &vec![-0.4, 0.3]);
            let n2 = ops::exp0(&mut b, model, &k, &vec![0.5, 0.5]);
            let r = aggregate(&mut b, model, &k, &c, std::slice::from_ref(&n1), &vec![1.0], 0);
            for (x, y) in r.iter().zip(&n1) {
                assert!((x - y).abs() < 1e-6);
            }
            let r = aggregate(&mut b, model, &k, &c, &[c.clone(), c.clone()], &vec![0.3, 0.7], 0);
            for (x, y) in r.iter().zip(&c) {
                assert!((x - y).abs() < 1e-12);
            }
            let r = aggregate(&mut b, model, &k, &c, &[n1.clone(), n2], &vec![1.0, 0.0], 0);
            for (x, y) in r.iter().zip(&n1) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn positional_concat_identities() {
        let (store, ids, cfg) = setup(Model::PoincareBall);
        // zero tables at init: the concatenation pads x with origin blocks
        for id in [ids.rel_table, ids.abs_table] {
            assert!(store.get(id).data.iter().all(|&v| v == 0.0));
        }
        let f = feats(1, 4, 0);
        let mut b = Eager::with_params(&store);
        let mut enc = Encoder::new(&mut b, &cfg, &ids, &f, Geometry::Euclidean);
        let x = vec![0.2, -0.1, 0.05, 0.3, 0.0];
        let y = enc.layer_input_concat(&mut b, 1, &x, RelPosition::Parent, 2);
        assert_eq!(y.len(), x.len() + cfg.rel_pos_dim + cfg.abs_pos_dim);
        for (i, a) in y.iter().enumerate() {
            let want = x.get(i).copied().unwrap_or(0.0);
            assert!((a - want).abs() < 1e-12, "{i}: {a} vs {want}");
        }
    }

    #[test]
    fn depth_lookup_clamps_and_distinguishes() {
        let (mut store, ids, cfg) = setup(Model::Lorentz);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        store.get_mut(ids.abs_table).data.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        let f = feats(1, 4, 0);
        let mut b = Eager::with_params(&store);
        let mut enc = Encoder::new(&mut b, &cfg, &ids, &f, Geometry::Euclidean);
        let x = ops::exp0(&mut b, Model::Lorentz, &vec![1.0], &vec![0.1, 0.2, 0.0, -0.1, 0.3]);
        let at_max = enc.layer_input_concat(&mut b, 1, &x, RelPosition::Child, 3);
        let beyond = enc.layer_input_concat(&mut b, 1, &x, RelPosition::Child, 9);
        let other = enc.layer_input_concat(&mut b, 1, &x, RelPosition::Child, 1);
        assert_eq!(at_max, beyond);
        assert_ne!(at_max, other);
    }

    #[test]
    fn encodings_stay_on_manifold() {
        let t = chain(7);
        let f = feats(7, 4, 3);
        for model in [Model::Lorentz, Model::PoincareBall] {
            let (store, ids, cfg) = setup(model);
            let mut b = Eager::with_params(&store);
            let mut enc = Encoder::new(&mut b, &cfg, &ids, &f, Geometry::Euclidean);
            for a in 0..t.len() {
                let z = enc.encode_anchor(&mut b, &t, a, &BTreeSet::new());
                let k = enc.curvature(cfg.n_layers)[0];
                let p = HPoint::new(z.clone(), model, k);
                assert!(p.is_ok(), "{model}: {z:?}");
                if model == Model::Lorentz {
                    let r = crate::engine::backend::k_lorentz(&z, &z) + k;
                    assert!(r.abs() < MANIFOLD_TOL);
                }
            }
        }
    }

    #[test]
    fn single_node_readout_and_isomorphic_anchors() {
        let concepts = vec![Concept::new("solo", "", "")];
        let t = Taxonomy::new(concepts, &[]).unwrap();
        let f = feats(1, 4, 1);
        let (store, ids, cfg) = setup(Model::Lorentz);
        let mut b = Eager::with_params(&store);
        let mut enc = Encoder::new(&mut b, &cfg, &ids, &f, Geometry::Euclidean);
        let ego = ego_graph(&t, 0, &cfg.neighborhood);
        let finals = enc.forward_ego(&mut b, &ego);
        let z = enc.readout(&mut b, &ego, &finals);
        for (a, c) in z.iter().zip(finals[0].as_ref().unwrap()) {
            assert!((a - c).abs() < 1e-9);
        }

        // two leaves under one root with identical features encode identically
        let concepts = ["r", "x", "y"].iter().map(|i| Concept::new(*i, "", "")).collect();
        let t = Taxonomy::new(concepts, &[("r".into(), "x".into()), ("r".into(), "y".into())]).unwrap();
        let mut f = feats(3, 4, 2);
        f[2] = f[1].clone();
        let mut enc = Encoder::new(&mut b, &cfg, &ids, &f, Geometry::Euclidean);
        let zx = enc.encode_anchor(&mut b, &t, 1, &BTreeSet::new());
        let zy = enc.encode_anchor(&mut b, &t, 2, &BTreeSet::new());
        assert_eq!(zx, zy);
    }

    #[test]
    fn neighbor_order_does_not_matter() {
        let t = chain(6);
        let f = feats(6, 4, 5);
        let (store, ids, cfg) = setup(Model::Lorentz);
        let mut b = Eager::with_params(&store);
        let mut enc = Encoder::new(&mut b, &cfg, &ids, &f, Geometry::Euclidean);
        let ego = ego_graph(&t, 2, &cfg.neighborhood);
        let z1 = enc.encode_ego(&mut b, &ego);
        let mut shuffled = ego.clone();
        shuffled.edges.reverse();
        let z2 = enc.encode_ego(&mut b, &shuffled);
        for (a, c) in z1.iter().zip(&z2) {
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn readout_self_weight_dominates() {
        let t = chain(4);
        let f = feats(4, 4, 6);
        let (mut store, ids, cfg) = setup(Model::PoincareBall);
        let alpha = &mut store.get_mut(ids.alpha).data;
        alpha.iter_mut().for_each(|v| *v = -60.0);
        alpha[RelPosition::SelfNode.index()] = 2.0;
        let mut b = Eager::with_params(&store);
        let mut enc = Encoder::new(&mut b, &cfg, &ids, &f, Geometry::Euclidean);
        let ego = ego_graph(&t, 1, &cfg.neighborhood);
        let finals = enc.forward_ego(&mut b, &ego);
        let z = enc.readout(&mut b, &ego, &finals);
        for (a, c) in z.iter().zip(finals[0].as_ref().unwrap()) {
            assert!((a - c).abs() < 1e-6);
        }
    }

    #[test]
    fn coordinate_readout_stays_on_manifold() {
        let t = chain(5);
        let f = feats(5, 4, 8);
        for model in [Model::Lorentz, Model::PoincareBall] {
            let (store, ids, mut cfg) = setup(model);
            cfg.readout = ReadoutMode::Coordinate;
            let mut b = Eager::with_params(&store);
            let mut enc = Encoder::new(&mut b, &cfg, &ids, &f, Geometry::Euclidean);
            let z = enc.encode_anchor(&mut b, &t, 2, &BTreeSet::new());
            assert!(HPoint::new(z, model, enc.curvature(cfg.n_layers)[0]).is_ok());
        }
    }

    #[test]
    fn tape_and_eager_encodings_agree() {
        let t = chain(5);
        let f = feats(5, 4, 9);
        let (store, ids, cfg) = setup(Model::Lorentz);
        let mut e = Eager::with_params(&store);
        let mut enc = Encoder::new(&mut e, &cfg, &ids, &f, Geometry::Euclidean);
        let ze = enc.encode_anchor(&mut e, &t, 2, &BTreeSet::new());
        let mut tp = Tape::new(&store);
        let mut enc = Encoder::new(&mut tp, &cfg, &ids, &f, Geometry::Euclidean);
        let zt = enc.encode_anchor(&mut tp, &t, 2, &BTreeSet::new());
        assert_eq!(tp.value(&zt), ze.as_slice());
    }
}
