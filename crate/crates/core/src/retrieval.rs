//! Nearest-neighbor place retrieval over R-ReFeree descriptors.

use serde::{Deserialize, Serialize};

use crate::descriptor::RReferee;
use crate::error::{Error, Result};
use crate::kdtree::{linear_nearest, squared_distance, KdTree, Neighbor};
use crate::scan_io::DescriptorRecord;

/// Entries appended after the last rebuild are scanned linearly until the
/// tail reaches this length.
const REBUILD_TAIL: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Acceptance threshold: a match is kept when its distance is strictly below.
    pub tau: f64,
    /// Candidates with `|query_id - cand_id| <= exclusion_window` are skipped
    /// in single-session mode. Zero disables the rule.
    pub exclusion_window: u64,
    /// Answer queries by exhaustive scan instead of the tree.
    pub linear_scan: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            tau: 300.0,
            exclusion_window: 50,
            linear_scan: false,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) {
            return Err(Error::Config("retrieval.tau must be non-negative".into()));
        }
        Ok(())
    }

    fn admits(&self, query_id: u64, cand_id: u64) -> bool {
        self.exclusion_window == 0 || query_id.abs_diff(cand_id) > self.exclusion_window
    }
}

pub fn l2_distance(a: &RReferee, b: &RReferee) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let a: Vec<f64> = a.0.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = b.0.iter().map(|&v| v as f64).collect();
    Ok(squared_distance(&a, &b).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopCandidate {
    pub query_id: u64,
    pub cand_id: u64,
    pub distance: f64,
}

/// R-ReFeree database with an exact k-d tree index.
#[derive(Clone, Debug)]
pub struct DescriptorDatabase {
    dim: usize,
    config_hash: u64,
    ids: Vec<u64>,
    coords: Vec<f64>,
    tree: KdTree,
}

impl DescriptorDatabase {
    pub fn new(dim: usize, config_hash: u64) -> Self {
        DescriptorDatabase {
            dim,
            config_hash,
            ids: Vec::new(),
            coords: Vec::new(),
            tree: KdTree::build(dim.max(1), Vec::new(), Vec::new()),
        }
    }

    pub fn build(records: &[DescriptorRecord]) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyDatabase)?;
        let mut db = DescriptorDatabase::new(first.r_referee.len(), first.config_hash);
        for r in records {
            if r.config_hash != db.config_hash {
                return Err(Error::ConfigHashMismatch {
                    expected: db.config_hash,
                    found: r.config_hash,
                });
            }
            db.append(r.scan_id, &RReferee(r.r_referee.clone()))?;
        }
        db.rebuild();
        Ok(db)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config_hash(&self) -> u64 {
        self.config_hash
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    fn append(&mut self, scan_id: u64, desc: &RReferee) -> Result<()> {
        if desc.len() != self.dim {
            return Err(Error::LengthMismatch(self.dim, desc.len()));
        }
        self.ids.push(scan_id);
        self.coords.extend(desc.0.iter().map(|&v| v as f64));
        Ok(())
    }

    /// Appends one entry; the tree is rebuilt lazily.
    pub fn push(&mut self, scan_id: u64, desc: &RReferee) -> Result<()> {
        self.append(scan_id, desc)?;
        if self.ids.len() - self.tree.len() >= REBUILD_TAIL {
            self.rebuild();
        }
        Ok(())
    }

    fn rebuild(&mut self) {
        self.tree = KdTree::build(self.dim, self.coords.clone(), self.ids.clone());
    }

    fn nearest(&self, q: &[f64], admit: impl Fn(u64) -> bool, linear: bool) -> Option<Neighbor> {
        if linear {
            return linear_nearest(self.dim, &self.coords, &self.ids, q, |i| admit(self.ids[i]));
        }
        let indexed = self.tree.len();
        let from_tree = self.tree.nearest_filtered(q, |i| admit(self.ids[i]));
        let tail = linear_nearest(
            self.dim,
            &self.coords[indexed * self.dim..],
            &self.ids[indexed..],
            q,
            |i| admit(self.ids[indexed + i]),
        )
        .map(|n| Neighbor {
            index: n.index + indexed,
            ..n
        });
        match (from_tree, tail) {
            (Some(a), Some(b)) => {
                if b.dist_sq < a.dist_sq || (b.dist_sq == a.dist_sq && b.key < a.key) {
                    Some(b)
                } else {
                    Some(a)
                }
            }
            (a, b) => a.or(b),
        }
    }

    /// Best admissible candidate regardless of `tau`.
    pub fn top1(
        &self,
        q: &RReferee,
        query_id: u64,
        cfg: &RetrievalConfig,
    ) -> Result<Option<LoopCandidate>> {
        if self.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        if q.len() != self.dim {
            return Err(Error::LengthMismatch(self.dim, q.len()));
        }
        let qv: Vec<f64> = q.0.iter().map(|&v| v as f64).collect();
        Ok(self
            .nearest(&qv, |id| cfg.admits(query_id, id), cfg.linear_scan)
            .map(|n| LoopCandidate {
                query_id,
                cand_id: n.key,
                distance: n.dist_sq.sqrt(),
            }))
    }

    /// Best admissible candidate, kept only when its distance is below `tau`.
    pub fn query(
        &self,
        q: &RReferee,
        query_id: u64,
        cfg: &RetrievalConfig,
    ) -> Result<Option<LoopCandidate>> {
        Ok(self
            .top1(q, query_id, cfg)?
            .filter(|c| c.distance < cfg.tau))
    }
}
