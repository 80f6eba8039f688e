//! Initial concept features pooled from pretrained word embeddings.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;

use crate::engine::backend::Backend;
use crate::error::{Error, Result};
use crate::fsio;
use crate::manifold::{self, ops, HPoint, Model, BALL_EPS};
use crate::taxonomy::Concept;

/// Geometry of the stored word vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    Euclidean,
    /// Cartesian product of Poincaré balls of `factor_dim` dimensions each.
    PoincareProduct { factor_dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: BTreeMap<String, usize>,
    vectors: Vec<Vec<f64>>,
    dim: usize,
    geometry: Geometry,
}

/// Lowercases and splits on whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn project_factors(v: &mut [f64], factor_dim: usize) {
    let max = 1.0 - BALL_EPS;
    for f in v.chunks_mut(factor_dim) {
        let n = manifold::norm(f);
        if n > max {
            f.iter_mut().for_each(|x| *x *= max / n);
        }
    }
}

impl EmbeddingTable {
    pub fn new(tokens: Vec<(String, Vec<f64>)>, geometry: Geometry) -> Result<Self> {
        let dim = tokens.first().map_or(0, |t| t.1.len());
        if let Geometry::PoincareProduct { factor_dim } = geometry {
            if factor_dim == 0 || !dim.is_multiple_of(factor_dim) {
                return Err(Error::Validation(format!(
                    "embedding dim {dim} is not divisible by factor dim {factor_dim}"
                )));
            }
        }
        let mut vocab = BTreeMap::new();
        let mut vectors: Vec<Vec<f64>> = Vec::new();
        let mut dups = 0;
        for (tok, mut v) in tokens {
            if v.len() != dim {
                return Err(Error::Validation(format!(
                    "token `{tok}` has {} values, expected {dim}",
                    v.len()
                )));
            }
            if let Geometry::PoincareProduct { factor_dim } = geometry {
                project_factors(&mut v, factor_dim);
            }
            match vocab.get(&tok) {
                Some(&i) => {
                    dups += 1;
                    vectors[i] = v;
                }
                None => {
                    vocab.insert(tok, vectors.len());
                    vectors.push(v);
                }
            }
        }
        if dups > 0 {
            warn!("{dups} repeated embedding tokens; the last occurrence of each was kept");
        }
        Ok(Self {
            vocab,
            vectors,
            dim,
            geometry,
        })
    }

    /// Loads the whitespace-delimited text format: a `vocab_size dim` header,
    /// then one `token v1 … vd` line per token.
    pub fn load(path: &Path, geometry: Geometry) -> Result<Self> {
        let text = fsio::read_to_string(path)?;
        Self::parse(&text, path, geometry)
    }

    pub fn parse(text: &str, path: &Path, geometry: Geometry) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        let (count, dim) = match h.as_slice() {
            [c, d] => match (c.parse::<usize>(), d.parse::<usize>()) {
                (Ok(c), Ok(d)) if d > 0 => (c, d),
                _ => return Err(err(1, format!("bad header `{header}`"))),
            },
            _ => return Err(err(1, "header must be `vocab_size dim`".into())),
        };
        let mut tokens = Vec::with_capacity(count);
        for (no, line) in lines {
            let mut fields = line.split_whitespace();
            let tok = fields.next().unwrap().to_lowercase();
            let vals: Vec<f64> = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(no + 1, format!("bad number: {e}")))?;
            if vals.len() != dim {
                return Err(err(
                    no + 1,
                    format!("token `{tok}` has {} values, header declares {dim}", vals.len()),
                ));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(err(no + 1, format!("token `{tok}` has a non-finite value")));
            }
            tokens.push((tok, vals));
        }
        if tokens.len() != count {
            return Err(err(
                text.lines().count(),
                format!("header declares {count} rows, file has {}", tokens.len()),
            ));
        }
        Self::new(tokens, geometry)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vocab.get(token).map(|&i| self.vectors[i].as_slice())
    }
}

/// Pooled text vector; `oov` is set when no token was found.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vector: Vec<f64>,
    pub oov: bool,
}

/// Per-factor Einstein midpoint of Poincaré-product vectors, computed in Klein
/// coordinates and mapped back.
fn product_midpoint(vs: &[&[f64]], dim: usize, factor_dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for f in 0..dim / factor_dim {
        let span = f * factor_dim..(f + 1) * factor_dim;
        let klein: Vec<Vec<f64>> = vs.iter().map(|v| manifold::poincare_to_klein(&v[span.clone()])).collect();
        let refs: Vec<&[f64]> = klein.iter().map(Vec::as_slice).collect();
        out.extend(manifold::klein_to_poincare(&manifold::einstein_midpoint_raw(&refs)));
    }
    out
}

fn pool(table: &EmbeddingTable, vs: &[&[f64]]) -> Vec<f64> {
    match table.geometry {
        Geometry::Euclidean => {
            let mut acc = vec![0.0; table.dim];
            for v in vs {
                acc.iter_mut().zip(v.iter()).for_each(|(a, x)| *a += x);
            }
            let n = vs.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        }
        Geometry::PoincareProduct { factor_dim } => product_midpoint(vs, table.dim, factor_dim),
    }
}

/// Average pooling (Euclidean) or per-factor Einstein midpoint (Poincaré
/// product) of the in-vocabulary tokens of `text`.
pub fn embed_text(table: &EmbeddingTable, text: &str) -> TextEmbedding {
    let toks = tokenize(text);
    let vs: Vec<&[f64]> = toks.iter().filter_map(|t| table.get(t)).collect();
    if vs.is_empty() {
        return TextEmbedding {
            vector: vec![0.0; table.dim],
            oov: true,
        };
    }
    TextEmbedding {
        vector: pool(table, &vs),
        oov: false,
    }
}

/// Combines the name and definition embeddings. A part with no known tokens is
/// dropped; if both are unknown the origin is returned.
pub fn concept_feature(table: &EmbeddingTable, c: &Concept) -> TextEmbedding {
    let name = embed_text(table, &c.name);
    let def = embed_text(table, &c.definition);
    match (name.oov, def.oov) {
        (false, false) => TextEmbedding {
            vector: pool(table, &[&name.vector, &def.vector]),
            oov: false,
        },
        (false, true) => name,
        (true, false) => def,
        (true, true) => name,
    }
}

/// Lifts a raw feature onto the working manifold.
///
/// Euclidean features go through the exponential map at the origin. Product
/// features are read as one point of the unit ball (projected inside if
/// needed) and carried over isometrically. A Euclidean target keeps the raw
/// coordinates.
pub fn lift<B: Backend>(b: &mut B, v: &[f64], source: Geometry, model: Model, k: &B::V) -> B::V {
    match (model, source) {
        (Model::Euclidean, _) => b.constant(v.to_vec()),
        (_, Geometry::Euclidean) => {
            let u = b.constant(v.to_vec());
            ops::exp0(b, model, k, &u)
        }
        (Model::PoincareBall, Geometry::PoincareProduct { .. }) => {
            let p = b.constant(v.to_vec());
            ops::project_ball(b, &p)
        }
        (Model::Lorentz, Geometry::PoincareProduct { .. }) => {
            let mut p = v.to_vec();
            let n = manifold::norm(&p);
            if n > 1.0 - BALL_EPS {
                p.iter_mut().for_each(|x| *x *= (1.0 - BALL_EPS) / n);
            }
            let n2 = manifold::dot(&p, &p);
            let s: Vec<f64> = p.iter().map(|x| 2.0 * x / (1.0 - n2)).collect();
            let s = b.constant(s);
            let sk = b.map(k, crate::engine::func::Func::Sqrt);
            let sp = b.scale(&s, &sk);
            ops::lorentz_from_spatial(b, k, &sp)
        }
        (Model::Klein, _) => panic!("features cannot be lifted onto the Klein model"),
    }
}

/// Eager, validated form of [`lift`].
pub fn lift_feature(v: &[f64], source: Geometry, model: Model, k: f64) -> Result<HPoint> {
    if model == Model::Klein {
        return Err(Error::contract("features cannot be lifted onto the Klein model"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("non-finite feature"));
    }
    let mut b = crate::engine::backend::Eager::new();
    let coords = lift(&mut b, v, source, model, &vec![k]);
    HPoint::new(coords, model, k)
}

/// Features for every concept, indexed like the input slice.
pub fn concept_features(table: &EmbeddingTable, concepts: &[Concept]) -> (Vec<Vec<f64>>, usize) {
    let mut oov = 0;
    let feats = concepts
        .iter()
        .map(|c| {
            let e = concept_feature(table, c);
            oov += usize::from(e.oov);
            e.vector
        })
        .collect();
    (feats, oov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::convert;

    fn table(rows: &[(&str, &[f64])], geometry: Geometry) -> EmbeddingTable {
        EmbeddingTable::new(
            rows.iter().map(|(t, v)| (t.to_string(), v.to_vec())).collect(),
            geometry,
        )
        .unwrap()
    }

    #[test]
    fn load_examples() {
        let p = Path::new("emb.txt");
        let t = EmbeddingTable::parse(
            "3 4\na 1 2 3 4\nb 0 0 0 0\nc 1 1 1 1\n",
            p,
            Geometry::Euclidean,
        )
        .unwrap();
        assert_eq!((t.len(), t.dim()), (3, 4));

        let e = EmbeddingTable::parse("5 2\na 1 2\nb 1 2\nc 0 0\nd 1 1\n", p, Geometry::Euclidean);
        assert!(matches!(e, Err(Error::Parse { .. })));

        let t = EmbeddingTable::parse("2 2\na 1 2\na 3 4\n", p, Geometry::Euclidean).unwrap();
        assert_eq!(t.get("a").unwrap(), &[3.0, 4.0]);

        let e = EmbeddingTable::parse("2 2\na 1 2\nb 1 2 3\n", p, Geometry::Euclidean).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
    }

    #[test]
    fn product_rows_are_projected_and_checked() {
        let t = table(&[("a", &[3.0, 4.0, 0.1, 0.0])], Geometry::PoincareProduct { factor_dim: 2 });
        let v = t.get("a").unwrap();
        assert!(manifold::norm(&v[..2]) < 1.0);
        assert_eq!(&v[2..], &[0.1, 0.0]);
        assert!(EmbeddingTable::new(
            vec![("a".into(), vec![0.0; 3])],
            Geometry::PoincareProduct { factor_dim: 2 }
        )
        .is_err());
    }

    #[test]
    fn tokenization() {
        assert_eq!(tokenize("The Cat, sat-on a MAT."), ["the", "cat", "sat", "on", "a", "mat"]);
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn embed_text_examples() {
        let t = table(&[("v", &[1.0, -2.0]), ("w", &[-1.0, 2.0])], Geometry::Euclidean);
        assert_eq!(embed_text(&t, "v").vector, vec![1.0, -2.0]);
        assert_eq!(embed_text(&t, "v w").vector, vec![0.0, 0.0]);
        let e = embed_text(&t, "unknown words");
        assert!(e.oov);
        assert_eq!(e.vector, vec![0.0, 0.0]);
        assert_eq!(embed_text(&t, "w v unknown").vector, embed_text(&t, "v w").vector);

        let t = table(&[("a", &[0.5, 0.0]), ("o", &[0.0, 0.0])], Geometry::PoincareProduct { factor_dim: 2 });
        let e = embed_text(&t, "a o");
        // ball (0.5, 0) is Klein (0.8, 0); γ = 5/3 gives the Klein midpoint (0.5, 0),
        // which is ball (2 − √3, 0)
        let klein_mid = HPoint::new(vec![0.5, 0.0], Model::Klein, 1.0).unwrap();
        let expected = convert(&klein_mid, Model::PoincareBall).unwrap();
        assert!((expected.coords()[0] - (2.0 - 3f64.sqrt())).abs() < 1e-12);
        assert!((e.vector[0] - expected.coords()[0]).abs() < 1e-12);
        assert!((e.vector[0] - 0.26795).abs() < 1e-5);
        assert_eq!(e.vector[1], 0.0);
    }

    #[test]
    fn concept_feature_examples() {
        let t = table(&[("x", &[1.0, 0.0]), ("y", &[0.0, 1.0])], Geometry::Euclidean);
        let same = concept_feature(&t, &Concept::new("c", "x", "x"));
        assert_eq!(same.vector, vec![1.0, 0.0]);
        let name_only = concept_feature(&t, &Concept::new("c", "x", ""));
        assert_eq!(name_only.vector, vec![1.0, 0.0]);
        let mixed = concept_feature(&t, &Concept::new("c", "x", "y"));
        assert_eq!(mixed.vector, vec![0.5, 0.5]);
        let oov = concept_feature(&t, &Concept::new("c", "zzz", "qqq"));
        assert!(oov.oov);
    }

    #[test]
    fn lift_examples() {
        let o = lift_feature(&[0.0, 0.0], Geometry::Euclidean, Model::Lorentz, 2.0).unwrap();
        assert_eq!(o, HPoint::origin(Model::Lorentz, 2.0, 2));
        let p = lift_feature(&[1.0, 0.0], Geometry::Euclidean, Model::PoincareBall, 1.0).unwrap();
        assert!((p.coords()[0] - 0.76159).abs() < 1e-5);

        let src = Geometry::PoincareProduct { factor_dim: 2 };
        let v = [0.3, -0.2, 0.1, 0.4];
        for k in [1.0, 0.4] {
            let l = lift_feature(&v, src, Model::Lorentz, k).unwrap();
            let back = convert(&l, Model::PoincareBall).unwrap();
            for (a, b) in back.coords().iter().zip(&v) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
