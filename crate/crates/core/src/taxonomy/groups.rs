use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;

use super::Taxonomy;
use crate::error::{Error, Result};

/// One query, its true parent at index 0 and sampled negative anchors after it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingGroup {
    pub query: usize,
    pub anchors: Vec<usize>,
}

/// One group per edge of `t`, in edge order, with `n_neg` negatives drawn
/// uniformly without replacement from nodes that are neither the query nor
/// one of its parents or children.
pub fn build_training_groups<R: Rng + ?Sized>(
    t: &Taxonomy,
    n_neg: usize,
    rng: &mut R,
) -> Result<Vec<TrainingGroup>> {
    if n_neg == 0 {
        return Err(Error::contract("n_neg must be at least 1"));
    }
    let mut groups = Vec::with_capacity(t.n_edges());
    for (p, q) in t.edges() {
        let mut excluded: BTreeSet<usize> = t.parents(q).iter().copied().collect();
        excluded.extend(t.children(q).iter().copied());
        excluded.insert(q);
        let pool: Vec<usize> = (0..t.len()).filter(|i| !excluded.contains(i)).collect();
        if pool.len() < n_neg {
            return Err(Error::Validation(format!(
                "query `{}` has {} negative candidates, fewer than n_neg = {n_neg}",
                t.id(q),
                pool.len()
            )));
        }
        let mut anchors = Vec::with_capacity(n_neg + 1);
        anchors.push(p);
        anchors.extend(sample(rng, pool.len(), n_neg).into_iter().map(|i| pool[i]));
        groups.push(TrainingGroup { query: q, anchors });
    }
    Ok(groups)
}
