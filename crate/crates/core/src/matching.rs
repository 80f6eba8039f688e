//! Matching head and contrastive loss.
//!
//! A pair `(anchor, query)` is fused by a generalized concatenation, passed
//! through hyperbolic layers `φ(M ⊗ z ⊕ b)` and read by a linear functional of
//! `log_o(z)`.

use rand::Rng;

use crate::engine::backend::{k_logsumexp, Backend};
use crate::engine::params::{ParamId, ParamSpace, ParamStore};
use crate::error::{Error, Result};
use crate::hgnn::{block_embedding, glorot, manifold_space, origin_data, read_point};
use crate::manifold::{ops, Model};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchLayerIds {
    pub m: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchIds {
    pub m_anchor: ParamId,
    pub m_query: ParamId,
    pub bias: ParamId,
    pub layers: Vec<MatchLayerIds>,
    pub w: ParamId,
}

impl MatchIds {
    /// Anchors enter with `hidden` and queries with `query_dim` intrinsic
    /// dimensions; the concatenation starts as an exact block embedding.
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        model: Model,
        curvature: ParamId,
        k0: f64,
        hidden: usize,
        query_dim: usize,
        n_layers: usize,
    ) -> Self {
        let space = manifold_space(model, curvature);
        let point = |store: &mut ParamStore, name: String, n: usize| {
            store.add(name, vec![model.coord_dim(n)], origin_data(model, k0, n), space)
        };
        let cat = hidden + query_dim;
        let m_anchor = store.add("match.m_anchor", vec![cat, hidden], block_embedding(cat, hidden, 0), ParamSpace::Euclidean);
        let m_query = store.add(
            "match.m_query",
            vec![cat, query_dim],
            block_embedding(cat, query_dim, hidden),
            ParamSpace::Euclidean,
        );
        let bias = point(store, "match.bias".into(), cat);
        let mut width = cat;
        let layers = (0..n_layers)
            .map(|l| {
                let m = store.add(format!("match.{l}.m"), vec![hidden, width], glorot(rng, hidden, width), ParamSpace::Euclidean);
                width = hidden;
                MatchLayerIds {
                    m,
                    b: point(store, format!("match.{l}.b"), hidden),
                }
            })
            .collect();
        let w = store.add("match.w", vec![1, width], glorot(rng, 1, width), ParamSpace::Euclidean);
        Self {
            m_anchor,
            m_query,
            bias,
            layers,
            w,
        }
    }
}

/// Parameter handles for one backend context.
pub struct Matcher<B: Backend> {
    model: Model,
    k: B::V,
    m_anchor: B::M,
    m_query: B::M,
    bias: B::V,
    layers: Vec<(B::M, B::V)>,
    w: B::M,
}

impl<B: Backend> Matcher<B> {
    /// `k` is the shared output curvature of the encoder.
    pub fn new(b: &mut B, model: Model, k: &B::V, ids: &MatchIds) -> Self {
        Self {
            model,
            k: k.clone(),
            m_anchor: b.param_matrix(ids.m_anchor),
            m_query: b.param_matrix(ids.m_query),
            bias: read_point(b, model, k, ids.bias),
            layers: ids
                .layers
                .iter()
                .map(|l| (b.param_matrix(l.m), read_point(b, model, k, l.b)))
                .collect(),
            w: b.param_matrix(ids.w),
        }
    }

    pub fn curvature(&self) -> &B::V {
        &self.k
    }

    /// `M_a ⊗ o_a`; reusable across every query scored against this anchor.
    pub fn anchor_image(&self, b: &mut B, o_a: &B::V) -> B::V {
        ops::matvec(b, self.model, &self.k, &self.m_anchor, o_a)
    }

    /// `M_q ⊗ o_q`; reusable across every anchor.
    pub fn query_image(&self, b: &mut B, o_q: &B::V) -> B::V {
        ops::matvec(b, self.model, &self.k, &self.m_query, o_q)
    }

    pub fn score_images(&self, b: &mut B, anchor_img: &B::V, query_img: &B::V) -> B::V {
        let (model, k) = (self.model, &self.k);
        let mut z = ops::concat_images(b, model, k, anchor_img, query_img, &self.bias);
        for (m, bias) in &self.layers {
            let h = ops::linear(b, model, k, m, &z, bias);
            z = ops::activation(b, model, k, k, &h);
        }
        let u = ops::log0(b, model, k, &z);
        b.matvec(&self.w, &u)
    }

    pub fn score(&self, b: &mut B, o_a: &B::V, o_q: &B::V) -> B::V {
        let a = self.anchor_image(b, o_a);
        let q = self.query_image(b, o_q);
        self.score_images(b, &a, &q)
    }
}

/// Mean over groups of `logsumexp(s) − s₀`, where each group holds the
/// positive score first.
pub fn infonce<B: Backend>(b: &mut B, groups: &[B::V]) -> B::V {
    assert!(!groups.is_empty(), "infonce over zero groups");
    let mut total: Option<B::V> = None;
    for s in groups {
        let lse = b.logsumexp(s);
        let pos = b.index(s, 0);
        let l = b.sub(&lse, &pos);
        total = Some(match total {
            None => l,
            Some(t) => b.add(&t, &l),
        });
    }
    b.mul_const(&total.unwrap(), 1.0 / groups.len() as f64)
}

/// Eager InfoNCE over score lists; rejects empty or non-finite input.
pub fn infonce_loss(groups: &[Vec<f64>]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::contract("infonce_loss: no groups"));
    }
    let mut total = 0.0;
    for (g, s) in groups.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::contract(format!("infonce_loss: group {g} is empty")));
        }
        if let Some(j) = s.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("infonce_loss: non-finite score at group {g}, position {j}")));
        }
        total += k_logsumexp(s) - s[0];
    }
    Ok(total / groups.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::backend::Eager;
    use crate::engine::tape::Tape;
    use crate::hgnn::add_curvature;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_examples() {
        assert!((infonce_loss(&[vec![0.0, 0.0]]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(infonce_loss(&[vec![10.0, 0.0, 0.0]]).unwrap() < 1e-3);
        let l = infonce_loss(&[vec![0.0; 32]]).unwrap();
        assert!((l - 32f64.ln()).abs() < 1e-12);
        assert!(infonce_loss(&[vec![f64::NAN, 0.0]]).is_err());
        assert!(infonce_loss(&[]).is_err());
    }

    proptest! {
        #[test]
        fn loss_is_shift_invariant_and_gradients_sum_to_zero(
            s in prop::collection::vec(-5.0f64..5.0, 2..12),
            c in -20.0f64..20.0,
        ) {
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            let a = infonce_loss(std::slice::from_ref(&s)).unwrap();
            let b = infonce_loss(&[shifted]).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(a >= 0.0);

            let mut store = ParamStore::new();
            let id = store.add("s", vec![s.len()], s.clone(), ParamSpace::Euclidean);
            let mut t = Tape::new(&store);
            let v = t.param(id);
            let l = infonce(&mut t, &[v]);
            let g = t.backward(l).unwrap();
            let sum: f64 = g.get(id).iter().sum();
            prop_assert!(sum.abs() < 1e-12);
        }
    }

    #[test]
    fn tape_matches_eager_and_scores_are_finite() {
        for model in [Model::Lorentz, Model::PoincareBall, Model::Euclidean] {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let kid = add_curvature(&mut store, "k", 1.0, true);
            let ids = MatchIds::init(&mut store, &mut rng, model, kid, 1.0, 4, 3, 2);
            let mut e = Eager::with_params(&store);
            let k = crate::hgnn::read_curvature(&mut e, kid);
            let m = Matcher::new(&mut e, model, &k, &ids);
            let oa = ops::exp0(&mut e, model, &k, &vec![0.3, -0.2, 0.1, 0.4]);
            let oq = ops::exp0(&mut e, model, &k, &vec![0.1, 0.5, -0.3]);
            let s = m.score(&mut e, &oa, &oq);
            assert!(s[0].is_finite());

            let mut t = Tape::new(&store);
            let k = crate::hgnn::read_curvature(&mut t, kid);
            let m = Matcher::new(&mut t, model, &k, &ids);
            let oa = t.constant(oa.clone());
            let oq = t.constant(oq.clone());
            let st = m.score(&mut t, &oa, &oq);
            assert_eq!(t.value(&st), s.as_slice());
        }
    }
}
