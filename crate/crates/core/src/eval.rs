//! Candidate ranking and ranking metrics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fsio;
use crate::network::Scorer;
use crate::taxonomy::Taxonomy;

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

/// Ranked candidates for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub query_id: String,
    /// Candidate ids, best first.
    pub ranked: Vec<String>,
    /// Scores aligned with `ranked`.
    pub scores: Vec<f64>,
    /// 1-based ranks of the true parents, ascending.
    pub parent_ranks: Vec<usize>,
}

impl RankingResult {
    pub fn new(query_id: impl Into<String>, ranked: Vec<String>, scores: Vec<f64>, parents: &[String]) -> Result<Self> {
        let query_id = query_id.into();
        if scores.len() != ranked.len() {
            return Err(Error::contract("ranking: scores and candidates differ in length"));
        }
        if parents.is_empty() {
            return Err(Error::Validation(format!("query `{query_id}` has no true parent")));
        }
        let pos: BTreeMap<&str, usize> = ranked.iter().enumerate().map(|(i, c)| (c.as_str(), i + 1)).collect();
        let mut parent_ranks = parents
            .iter()
            .map(|p| {
                pos.get(p.as_str()).copied().ok_or_else(|| {
                    Error::Validation(format!("true parent `{p}` of `{query_id}` is not a candidate"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        parent_ranks.sort_unstable();
        parent_ranks.dedup();
        Ok(Self {
            query_id,
            ranked,
            scores,
            parent_ranks,
        })
    }

    pub fn best_rank(&self) -> usize {
        self.parent_ranks[0]
    }

    fn hits(&self, k: usize) -> usize {
        self.parent_ranks.iter().filter(|&&r| r <= k).count()
    }
}

/// Candidate indices by descending score, ties by ascending index.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Ranks every node of `t` as a parent of the query with the given feature.
pub fn rank_candidates(
    scorer: &Scorer<'_>,
    t: &Taxonomy,
    query_id: &str,
    feature: &[f64],
    parents: &[String],
) -> Result<RankingResult> {
    if t.index_of(query_id).is_some() {
        return Err(Error::Validation(format!("query `{query_id}` is part of the seed taxonomy")));
    }
    let scores = scorer.score(feature)?;
    ranking_from_scores(t, query_id, &scores, parents)
}

pub fn ranking_from_scores(t: &Taxonomy, query_id: &str, scores: &[f64], parents: &[String]) -> Result<RankingResult> {
    let order = rank_order(scores);
    let ranked = order.iter().map(|&i| t.id(i).to_string()).collect();
    let sorted = order.iter().map(|&i| scores[i]).collect();
    RankingResult::new(query_id, ranked, sorted, parents)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub n_queries: usize,
    pub mean_rank: f64,
    pub mrr_x10: f64,
    pub recall: BTreeMap<usize, f64>,
    pub precision: BTreeMap<usize, f64>,
}

impl MetricReport {
    /// `key value` lines, one metric per line.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "queries {}\nmean_rank {:.6}\nmrr_x10 {:.6}\n",
            self.n_queries, self.mean_rank, self.mrr_x10
        );
        for (k, v) in &self.recall {
            s.push_str(&format!("recall@{k} {v:.6}\n"));
        }
        for (k, v) in &self.precision {
            s.push_str(&format!("precision@{k} {v:.6}\n"));
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut m = serde_json::Map::new();
        m.insert("queries".into(), self.n_queries.into());
        m.insert("mean_rank".into(), self.mean_rank.into());
        m.insert("mrr_x10".into(), self.mrr_x10.into());
        for (k, v) in &self.recall {
            m.insert(format!("recall@{k}"), (*v).into());
        }
        for (k, v) in &self.precision {
            m.insert(format!("precision@{k}"), (*v).into());
        }
        let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(m)).expect("metrics serialize");
        s.push('\n');
        s
    }
}

/// Mean rank over all (query, parent) pairs; MRR, recall and precision
/// averaged per query.
pub fn compute_metrics(results: &[RankingResult], ks: &[usize]) -> Result<MetricReport> {
    if results.is_empty() {
        return Err(Error::Validation("no ranking results to evaluate".into()));
    }
    let n = results.len() as f64;
    let pairs: usize = results.iter().map(|r| r.parent_ranks.len()).sum();
    let mean_rank = results.iter().flat_map(|r| &r.parent_ranks).map(|&r| r as f64).sum::<f64>() / pairs as f64;
    let mrr = results
        .iter()
        .map(|r| r.parent_ranks.iter().map(|&k| 1.0 / k as f64).sum::<f64>() / r.parent_ranks.len() as f64)
        .sum::<f64>()
        / n;
    let mut recall = BTreeMap::new();
    let mut precision = BTreeMap::new();
    for &k in ks {
        let r = results
            .iter()
            .map(|r| r.hits(k) as f64 / r.parent_ranks.len() as f64)
            .sum::<f64>()
            / n;
        let p = results.iter().map(|r| r.hits(k) as f64 / k as f64).sum::<f64>() / n;
        recall.insert(k, r);
        precision.insert(k, p);
    }
    Ok(MetricReport {
        n_queries: results.len(),
        mean_rank,
        mrr_x10: 10.0 * mrr,
        recall,
        precision,
    })
}

/// `query_id<TAB>rank_of_best_true_parent<TAB>top10` lines.
pub fn results_tsv(results: &[RankingResult]) -> String {
    let mut s = String::new();
    for r in results {
        let top: Vec<&str> = r.ranked.iter().take(10).map(String::as_str).collect();
        s.push_str(&format!("{}\t{}\t{}\n", r.query_id, r.best_rank(), top.join(",")));
    }
    s
}

pub fn write_results(path: &Path, results: &[RankingResult]) -> Result<()> {
    fsio::write_atomic(path, results_tsv(results).as_bytes())
}

/// `10·H_C/C`, the expected MRR×10 of uniformly random scores over `c` candidates.
pub fn random_mrr_x10(c: usize) -> f64 {
    let h: f64 = (1..=c).map(|i| 1.0 / i as f64).sum();
    10.0 * h / c as f64
}
