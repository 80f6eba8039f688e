//! Run configuration: a TOML file with `[data]`, `[model]` and `[train]`
//! sections, every key optional, plus key-level overrides.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Geometry;
use crate::hgnn::{HgnnConfig, ReadoutMode};
use crate::manifold::Model;
use crate::network::NetworkConfig;
use crate::taxonomy::Neighborhood;
use crate::train::TrainOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryKind {
    Euclidean,
    PoincareProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutKind {
    Tangent,
    Coordinate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub taxonomy: PathBuf,
    pub concepts: PathBuf,
    pub embeddings: PathBuf,
    pub geometry: GeometryKind,
    /// Factor width for product-space embeddings.
    pub factor_dim: usize,
    pub out_dir: PathBuf,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            taxonomy: "taxonomy.tsv".into(),
            concepts: "concepts.tsv".into(),
            embeddings: "embeddings.txt".into(),
            geometry: GeometryKind::Euclidean,
            factor_dim: 2,
            out_dir: "run".into(),
            n_val: 20,
            n_test: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub manifold: Model,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub rel_pos_dim: usize,
    pub abs_pos_dim: usize,
    pub curvature: f64,
    pub trainable_curvature: bool,
    pub ancestors: bool,
    pub descendants: bool,
    pub siblings: bool,
    pub max_hops: usize,
    pub max_depth: usize,
    pub use_rel_pos: bool,
    pub use_abs_pos: bool,
    pub readout: ReadoutKind,
    pub match_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let h = HgnnConfig::default();
        Self {
            manifold: h.manifold,
            n_layers: h.n_layers,
            hidden_dim: h.hidden_dim,
            rel_pos_dim: h.rel_pos_dim,
            abs_pos_dim: h.abs_pos_dim,
            curvature: h.curvature,
            trainable_curvature: h.trainable_curvature,
            ancestors: h.neighborhood.ancestors,
            descendants: h.neighborhood.descendants,
            siblings: h.neighborhood.siblings,
            max_hops: h.neighborhood.max_hops,
            max_depth: h.max_depth,
            use_rel_pos: h.use_rel_pos,
            use_abs_pos: h.use_abs_pos,
            readout: ReadoutKind::Tangent,
            match_layers: NetworkConfig::default().match_layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub n_neg: usize,
    pub lr_burnin: f64,
    pub lr_main: f64,
    pub burn_in: usize,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            n_neg: t.n_neg,
            lr_burnin: t.lr_burnin,
            lr_main: t.lr_main,
            burn_in: t.burn_in,
            plateau_patience: t.plateau_patience,
            early_stop_patience: t.early_stop_patience,
            clip_norm: t.clip_norm.unwrap_or(0.0),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// One `section.key = value` override.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub section: String,
    pub key: String,
    pub value: toml::Value,
}

impl Override {
    pub fn new(section: &str, key: &str, value: impl Into<toml::Value>) -> Self {
        Self {
            section: section.into(),
            key: key.into(),
            value: value.into(),
        }
    }

    /// Parses `section.key=value`; the value is read as TOML and falls back to a string.
    pub fn parse(s: &str) -> Result<Self> {
        let (path, raw) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{s}` is not `section.key=value`")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key `{path}` is not `section.key`")))?;
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        Ok(Self::new(section, key, value))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::layered(Some(text), &[])
    }

    /// File contents (if any) with `overrides` applied on top, then validated.
    pub fn layered(text: Option<&str>, overrides: &[Override]) -> Result<Self> {
        let mut table: toml::Table = match text {
            Some(t) => toml::from_str(t).map_err(|e| Error::Config(format!("config: {e}")))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            let section = table
                .entry(o.section.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let section = section
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("config: `{}` is not a section", o.section)))?;
            section.insert(o.key.clone(), o.value.clone());
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let m = &self.model;
        if m.manifold == Model::Klein {
            return bad("model.manifold: the Klein model is only used for feature pooling".into());
        }
        for (name, v) in [
            ("model.n_layers", m.n_layers),
            ("model.hidden_dim", m.hidden_dim),
            ("model.rel_pos_dim", m.rel_pos_dim),
            ("model.abs_pos_dim", m.abs_pos_dim),
            ("model.max_hops", m.max_hops),
            ("train.batch_size", self.train.batch_size),
            ("train.n_neg", self.train.n_neg),
            ("data.factor_dim", self.data.factor_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(m.curvature.is_finite() && m.curvature > crate::manifold::CURVATURE_FLOOR) {
            return bad(format!(
                "model.curvature must exceed {}, got {}",
                crate::manifold::CURVATURE_FLOOR,
                m.curvature
            ));
        }
        let t = &self.train;
        for (name, v) in [("train.lr_burnin", t.lr_burnin), ("train.lr_main", t.lr_main)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(t.clip_norm.is_finite() && t.clip_norm >= 0.0) {
            return bad(format!("train.clip_norm must be non-negative, got {}", t.clip_norm));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.train.seed.unwrap_or(0)
    }

    pub fn geometry(&self) -> Geometry {
        match self.data.geometry {
            GeometryKind::Euclidean => Geometry::Euclidean,
            GeometryKind::PoincareProduct => Geometry::PoincareProduct {
                factor_dim: self.data.factor_dim,
            },
        }
    }

    pub fn network(&self) -> NetworkConfig {
        let m = &self.model;
        NetworkConfig {
            hgnn: HgnnConfig {
                n_layers: m.n_layers,
                hidden_dim: m.hidden_dim,
                rel_pos_dim: m.rel_pos_dim,
                abs_pos_dim: m.abs_pos_dim,
                manifold: m.manifold,
                curvature: m.curvature,
                trainable_curvature: m.trainable_curvature,
                neighborhood: Neighborhood {
                    ancestors: m.ancestors,
                    descendants: m.descendants,
                    siblings: m.siblings,
                    max_hops: m.max_hops,
                },
                max_depth: m.max_depth,
                use_rel_pos: m.use_rel_pos,
                use_abs_pos: m.use_abs_pos,
                readout: match m.readout {
                    ReadoutKind::Tangent => ReadoutMode::Tangent,
                    ReadoutKind::Coordinate => ReadoutMode::Coordinate,
                },
            },
            match_layers: m.match_layers,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        let t = &self.train;
        TrainOptions {
            epochs: t.epochs,
            batch_size: t.batch_size,
            n_neg: t.n_neg,
            burn_in: t.burn_in,
            lr_burnin: t.lr_burnin,
            lr_main: t.lr_main,
            plateau_patience: t.plateau_patience,
            early_stop_patience: t.early_stop_patience,
            clip_norm: (t.clip_norm > 0.0).then_some(t.clip_norm),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.n_neg, 31);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.train.lr_burnin, 1e-5);
        assert_eq!(c.train.lr_main, 1e-3);
        assert_eq!(c.train.burn_in, 20);
        assert_eq!(c.train.plateau_patience, 10);
        assert_eq!(c.train.early_stop_patience, 30);
        assert_eq!(c.model.n_layers, 2);
        assert_eq!(c.model.rel_pos_dim, 50);
        assert_eq!(c.model.abs_pos_dim, 50);
        assert_eq!(c.model.hidden_dim, 100);
        assert_eq!(c.train_options(), TrainOptions::default());
    }

    #[test]
    fn file_then_overrides() {
        let text = "[model]\nmanifold = \"poincare\"\nhidden_dim = 12\n[train]\nseed = 4\n";
        let c = RunConfig::layered(
            Some(text),
            &[
                Override::parse("model.hidden_dim=20").unwrap(),
                Override::parse("model.siblings = true").unwrap(),
                Override::parse("data.out_dir=out/x").unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(c.model.manifold, Model::PoincareBall);
        assert_eq!(c.model.hidden_dim, 20);
        assert!(c.network().hgnn.neighborhood.siblings);
        assert_eq!(c.data.out_dir, PathBuf::from("out/x"));
        assert_eq!(c.seed(), 4);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::from_toml("[model]\nhidden = 3\n").is_err());
        assert!(RunConfig::from_toml("[model]\nmanifold = \"klein\"\n").is_err());
        assert!(RunConfig::from_toml("[model]\nhidden_dim = 0\n").is_err());
        assert!(RunConfig::from_toml("[train]\nlr_main = -1.0\n").is_err());
        assert!(RunConfig::from_toml("[extra]\n").is_err());
        assert!(Override::parse("nodot=3").is_err());
    }
}
