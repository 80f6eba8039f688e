//! File-level train, predict and eval commands.
//!
//! A training run writes into its output directory:
//!
//! * `checkpoint.bin`: best-validation parameters, optimizer state and the
//!   resolved configuration
//! * `train_log.csv`: `epoch,loss,val_mrr_x10,lr`
//! * `seed_edges.tsv`, `seed_concepts.tsv`: the seed taxonomy trained on
//! * `split.tsv`: held-out queries with their true parents
//! * `config.toml`: the resolved configuration

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::engine::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, rank_candidates, write_results, MetricReport, RankingResult, DEFAULT_KS};
use crate::features::{concept_feature, concept_features, EmbeddingTable};
use crate::fsio;
use crate::network::{Network, Scorer};
use crate::taxonomy::{
    concepts_tsv, read_concepts, read_manifest, split_dataset, write_manifest, Concept, ManifestEntry, SplitKind,
    Taxonomy,
};
use crate::train::{train, EpochRecord, LabeledQuery};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.csv";
pub const SEED_EDGES_FILE: &str = "seed_edges.tsv";
pub const SEED_CONCEPTS_FILE: &str = "seed_concepts.tsv";
pub const SPLIT_FILE: &str = "split.tsv";
pub const CONFIG_FILE: &str = "config.toml";
pub const RESULTS_FILE: &str = "results.tsv";
pub const METRICS_FILE: &str = "metrics.json";

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

fn query_features(table: &EmbeddingTable, concepts: &[Concept]) -> Vec<Vec<f64>> {
    concepts
        .iter()
        .map(|c| {
            let f = concept_feature(table, c);
            if f.oov {
                warn!("query `{}` has no known tokens; using the origin", c.id);
            }
            f.vector
        })
        .collect()
}

fn seed_features(table: &EmbeddingTable, t: &Taxonomy) -> Vec<Vec<f64>> {
    let (f, oov) = concept_features(table, t.concepts());
    if oov > 0 {
        warn!("{oov} taxonomy concepts have no known tokens; using the origin");
    }
    f
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub best_val_mrr_x10: f64,
    pub best_epoch: usize,
    pub out_dir: PathBuf,
}

pub fn train_log_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,val_mrr_x10,lr\n");
    for r in records {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.loss, r.val_mrr_x10, r.lr));
    }
    s
}

/// Splits the dataset, trains on the seed taxonomy and writes every run artifact.
pub fn run_train(cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainSummary> {
    let mut cfg = cfg.clone();
    cfg.data.taxonomy = absolute(&cfg.data.taxonomy)?;
    cfg.data.concepts = absolute(&cfg.data.concepts)?;
    cfg.data.embeddings = absolute(&cfg.data.embeddings)?;
    let seed = cfg.seed();
    cfg.train.seed = Some(seed);

    let full = Taxonomy::load(&cfg.data.taxonomy, &cfg.data.concepts)?;
    let table = EmbeddingTable::load(&cfg.data.embeddings, cfg.geometry())?;
    let split = split_dataset(&full, cfg.data.n_val, cfg.data.n_test, seed)?;
    info!(
        "{} concepts, seed taxonomy {} nodes / {} edges, {} val and {} test queries",
        full.len(),
        split.seed.len(),
        split.seed.n_edges(),
        split.val.len(),
        split.test.len()
    );
    let features = seed_features(&table, &split.seed);
    let val_concepts: Vec<Concept> = split.val.iter().map(|q| q.concept.clone()).collect();
    let val: Vec<LabeledQuery> = split
        .val
        .iter()
        .zip(query_features(&table, &val_concepts))
        .map(|(q, feature)| LabeledQuery {
            id: q.concept.id.clone(),
            feature,
            parents: q.parents.clone(),
        })
        .collect();

    let out = &cfg.data.out_dir;
    fsio::create_dir_all(out)?;
    fsio::write_atomic(&out.join(SEED_EDGES_FILE), split.seed.edges_tsv().as_bytes())?;
    fsio::write_atomic(&out.join(SEED_CONCEPTS_FILE), concepts_tsv(split.seed.concepts()).as_bytes())?;
    write_manifest(&out.join(SPLIT_FILE), &split.manifest())?;
    let config_text = cfg.to_toml();
    fsio::write_atomic(&out.join(CONFIG_FILE), config_text.as_bytes())?;

    let mut net = Network::new(cfg.network(), table.dim(), cfg.geometry(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let outcome = train(&mut net, &split.seed, &features, &val, &cfg.train_options(), &mut rng, |r| on_epoch(r))?;
    fsio::write_atomic(&out.join(LOG_FILE), train_log_csv(&outcome.records).as_bytes())?;
    let ckpt = Checkpoint {
        config_text,
        best_val_mrr: outcome.best_val_mrr_x10,
        curvatures: net.curvatures(),
        params: net.store.clone(),
        optimizer: Some(outcome.optimizer.clone()),
    };
    ckpt.save(&out.join(CHECKPOINT_FILE))?;
    Ok(TrainSummary {
        records: outcome.records,
        best_val_mrr_x10: outcome.best_val_mrr_x10,
        best_epoch: outcome.best_epoch,
        out_dir: out.clone(),
    })
}

/// A trained network together with the seed taxonomy and features it scores against.
pub struct LoadedModel {
    pub config: RunConfig,
    pub network: Network,
    pub seed: Taxonomy,
    pub features: Vec<Vec<f64>>,
    pub table: EmbeddingTable,
}

impl LoadedModel {
    /// Loads a checkpoint; the seed taxonomy files are read from the same directory.
    pub fn load(checkpoint: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(checkpoint)?;
        let config = RunConfig::from_toml(&ckpt.config_text)?;
        let dir = checkpoint.parent().unwrap_or(Path::new("."));
        let seed = Taxonomy::load(&dir.join(SEED_EDGES_FILE), &dir.join(SEED_CONCEPTS_FILE))?;
        let table = EmbeddingTable::load(&config.data.embeddings, config.geometry())?;
        let network = Network::from_store(config.network(), table.dim(), config.geometry(), ckpt.params)?;
        let features = seed_features(&table, &seed);
        Ok(Self {
            config,
            network,
            seed,
            features,
            table,
        })
    }

    pub fn scorer(&self) -> Result<Scorer<'_>> {
        Scorer::new(&self.network, &self.seed, &self.features)
    }
}

/// One predicted attachment.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub query_id: String,
    pub rank: usize,
    pub candidate_id: String,
    pub score: f64,
}

/// Top-`k` parents for each concept in `queries`.
pub fn predict(model: &LoadedModel, queries: &[Concept], top_k: usize) -> Result<Vec<Prediction>> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let scorer = model.scorer()?;
    let feats = query_features(&model.table, queries);
    let mut out = Vec::new();
    for (q, f) in queries.iter().zip(&feats) {
        if model.seed.index_of(&q.id).is_some() {
            return Err(Error::Validation(format!("query `{}` is already in the seed taxonomy", q.id)));
        }
        let scores = scorer.score(f)?;
        for (rank, i) in crate::eval::rank_order(&scores).into_iter().take(top_k).enumerate() {
            out.push(Prediction {
                query_id: q.id.clone(),
                rank: rank + 1,
                candidate_id: model.seed.id(i).to_string(),
                score: scores[i],
            });
        }
    }
    Ok(out)
}

pub fn predictions_tsv(preds: &[Prediction]) -> String {
    preds
        .iter()
        .map(|p| format!("{}\t{}\t{}\t{}\n", p.query_id, p.rank, p.candidate_id, p.score))
        .collect()
}

pub fn run_predict(checkpoint: &Path, queries: &Path, out: &Path, top_k: usize) -> Result<usize> {
    let queries = read_concepts(queries)?;
    let model = LoadedModel::load(checkpoint)?;
    let preds = predict(&model, &queries, top_k)?;
    fsio::write_atomic(out, predictions_tsv(&preds).as_bytes())?;
    Ok(queries.len())
}

/// Ranks every manifest query (optionally one split only) against the seed taxonomy.
pub fn evaluate(model: &LoadedModel, manifest: &[ManifestEntry], kind: Option<SplitKind>) -> Result<Vec<RankingResult>> {
    let all = read_concepts(&model.config.data.concepts)?;
    let by_id: std::collections::BTreeMap<&str, &Concept> = all.iter().map(|c| (c.id.as_str(), c)).collect();
    let entries: Vec<&ManifestEntry> = manifest.iter().filter(|e| kind.is_none_or(|k| e.kind == k)).collect();
    let mut seen = BTreeSet::new();
    let scorer = model.scorer()?;
    entries
        .iter()
        .map(|e| {
            if !seen.insert(e.query_id.as_str()) {
                return Err(Error::Validation(format!("query `{}` listed twice in the manifest", e.query_id)));
            }
            let c = by_id
                .get(e.query_id.as_str())
                .ok_or_else(|| Error::Validation(format!("manifest query `{}` has no concept profile", e.query_id)))?;
            let f = concept_feature(&model.table, c);
            rank_candidates(&scorer, &model.seed, &e.query_id, &f.vector, &e.parents)
        })
        .collect()
}

pub fn run_eval(checkpoint: &Path, manifest: &Path, out_dir: &Path, kind: Option<SplitKind>) -> Result<MetricReport> {
    let model = LoadedModel::load(checkpoint)?;
    let manifest = read_manifest(manifest)?;
    let results = evaluate(&model, &manifest, kind)?;
    let report = compute_metrics(&results, &DEFAULT_KS)?;
    fsio::create_dir_all(out_dir)?;
    write_results(&out_dir.join(RESULTS_FILE), &results)?;
    fsio::write_atomic(&out_dir.join(METRICS_FILE), report.to_json().as_bytes())?;
    Ok(report)
}
