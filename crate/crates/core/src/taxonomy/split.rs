use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Concept, Taxonomy};
use crate::error::{Error, Result};
use crate::fsio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SplitKind {
    Val,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }
}

/// A held-out concept with its ground-truth parent ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRecord {
    pub concept: Concept,
    pub parents: Vec<String>,
    pub kind: SplitKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub seed: Taxonomy,
    pub val: Vec<QueryRecord>,
    pub test: Vec<QueryRecord>,
}

impl DatasetSplit {
    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.val
            .iter()
            .chain(&self.test)
            .map(|q| ManifestEntry {
                query_id: q.concept.id.clone(),
                parents: q.parents.clone(),
                kind: q.kind,
            })
            .collect()
    }
}

/// Samples `n_val + n_test` leaves that have a parent and removes them from the
/// taxonomy. Identical seeds give identical splits.
pub fn split_dataset(t: &Taxonomy, n_val: usize, n_test: usize, seed: u64) -> Result<DatasetSplit> {
    let leaves: Vec<usize> = t
        .leaves()
        .into_iter()
        .filter(|&i| !t.parents(i).is_empty())
        .collect();
    let need = n_val + n_test;
    if leaves.len() < need {
        return Err(Error::Validation(format!(
            "need {need} held-out leaves but the taxonomy has only {}",
            leaves.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<usize> = sample(&mut rng, leaves.len(), need)
        .into_iter()
        .map(|i| leaves[i])
        .collect();
    let record = |i: usize, kind| QueryRecord {
        concept: t.concept(i).clone(),
        parents: t.parents(i).iter().map(|&p| t.id(p).to_string()).collect(),
        kind,
    };
    let mut val: Vec<QueryRecord> = picked[..n_val].iter().map(|&i| record(i, SplitKind::Val)).collect();
    let mut test: Vec<QueryRecord> = picked[n_val..].iter().map(|&i| record(i, SplitKind::Test)).collect();
    val.sort_by(|a, b| a.concept.id.cmp(&b.concept.id));
    test.sort_by(|a, b| a.concept.id.cmp(&b.concept.id));
    let removed: BTreeSet<usize> = picked.into_iter().collect();
    Ok(DatasetSplit {
        seed: t.without(&removed)?,
        val,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub query_id: String,
    pub parents: Vec<String>,
    pub kind: SplitKind,
}

pub fn manifest_tsv(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let _ = writeln!(out, "{}\t{}\t{}", e.query_id, e.parents.join(","), e.kind.name());
    }
    out
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    fsio::write_atomic(path, manifest_tsv(entries).as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fsio::read_to_string(path)?;
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: no + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 || f[0].is_empty() {
            return Err(err("expected `query_id<TAB>parents<TAB>val|test`"));
        }
        let parents: Vec<String> = f[1]
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if parents.is_empty() {
            return Err(err("query has no ground-truth parents"));
        }
        let kind = match f[2] {
            "val" => SplitKind::Val,
            "test" => SplitKind::Test,
            _ => return Err(err("split must be `val` or `test`")),
        };
        out.push(ManifestEntry {
            query_id: f[0].to_string(),
            parents,
            kind,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::tax;
    use super::*;

    fn ten_leaf_tree() -> Taxonomy {
        let mut e = vec![("r", "a"), ("r", "b")];
        let leaves = ["l0", "l1", "l2", "l3", "l4", "l5", "l6", "l7", "l8", "l9"];
        for (i, l) in leaves.iter().enumerate() {
            e.push((if i < 5 { "a" } else { "b" }, l));
        }
        tax(&e)
    }

    #[test]
    fn split_examples() {
        let t = ten_leaf_tree();
        let s = split_dataset(&t, 2, 2, 5).unwrap();
        assert_eq!(s.seed.len(), t.len() - 4);
        assert_eq!((s.val.len(), s.test.len()), (2, 2));
        assert_eq!(split_dataset(&t, 2, 2, 5).unwrap(), s);
        assert!(split_dataset(&t, 6, 5, 5).is_err());
        for q in s.val.iter().chain(&s.test) {
            assert!(s.seed.index_of(&q.concept.id).is_none());
            assert!(q.parents.iter().all(|p| s.seed.index_of(p).is_some()));
        }
    }

    #[test]
    fn manifest_round_trip() {
        let t = ten_leaf_tree();
        let s = split_dataset(&t, 3, 1, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.tsv");
        write_manifest(&p, &s.manifest()).unwrap();
        let back = read_manifest(&p).unwrap();
        assert_eq!(back, s.manifest());
        assert_eq!(back.iter().filter(|e| e.kind == SplitKind::Val).count(), 3);
    }
}
