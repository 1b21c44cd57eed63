//! Local Outlier Factor scoring.
//!
//! `N_k(A)` is every other point within `k-distance(A)` (ties included).
//! A point with at least k exact duplicates has zero reachability to its
//! neighborhood; its LRD is the `+inf` sentinel and its LOF is 1.
//!
//! In cluster-restricted mode a point's neighbor candidates are the members
//! of its own k-means cluster. This is an approximation: it equals exact
//! scoring only when every true neighborhood stays inside one cluster.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::kmeans::{sq_dist, Clustering};
use crate::knn::KdTree;
use crate::tsv::{parse_field, Table};

pub const DEFAULT_K_NEIGHBORS: usize = 7;
pub const DEFAULT_TOP_N: usize = 100;

#[derive(Debug, Clone, Copy)]
pub enum NeighborMode<'a> {
    Exact,
    ClusterRestricted(&'a Clustering),
}

#[derive(Debug, Clone, Copy)]
pub struct NeighborQuery<'a> {
    pub k_neighbors: usize,
    pub mode: NeighborMode<'a>,
}

impl<'a> NeighborQuery<'a> {
    pub fn exact(k_neighbors: usize) -> Self {
        NeighborQuery {
            k_neighbors,
            mode: NeighborMode::Exact,
        }
    }

    pub fn cluster_restricted(k_neighbors: usize, c: &'a Clustering) -> Self {
        NeighborQuery {
            k_neighbors,
            mode: NeighborMode::ClusterRestricted(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LofResult {
    pub node_id: u64,
    pub k_distance: f64,
    /// `f64::INFINITY` for duplicate groups.
    pub lrd: f64,
    pub lof: f64,
    /// 1-based; rank 1 has the largest LOF.
    pub rank: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LofReport {
    /// Sorted by rank.
    pub results: Vec<LofResult>,
    pub k_neighbors: usize,
    pub cluster_restricted: bool,
    /// Nodes whose cluster was too small and that were scored exactly.
    pub fallback_nodes: Vec<u64>,
    pub top_n: usize,
}

impl LofReport {
    pub fn approximate(&self) -> bool {
        self.cluster_restricted
    }

    pub fn flagged(&self) -> &[LofResult] {
        &self.results[..self.top_n.min(self.results.len())]
    }

    pub fn ranked_ids(&self) -> Vec<u64> {
        self.results.iter().map(|r| r.node_id).collect()
    }

    pub fn score_of(&self, node: u64) -> Option<&LofResult> {
        self.results.iter().find(|r| r.node_id == node)
    }

    /// `rank  node_id  lof  relative_lof`, relative to the largest score.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["rank", "node_id", "lof", "relative_lof"]);
        let max = self.results.first().map_or(1.0, |r| r.lof);
        for r in &self.results {
            t.push(vec![
                r.rank.to_string(),
                r.node_id.to_string(),
                r.lof.to_string(),
                relative(r.lof, max).to_string(),
            ]);
        }
        t.comments.push(format!(
            "k_neighbors={} mode={} approximate={} top={} fallback_nodes={}",
            self.k_neighbors,
            if self.cluster_restricted {
                "cluster"
            } else {
                "exact"
            },
            self.approximate(),
            self.top_n,
            self.fallback_nodes.len()
        ));
        t
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_table().write(path)
    }
}

fn relative(lof: f64, max: f64) -> f64 {
    match (lof.is_infinite(), max.is_infinite()) {
        (true, _) => 1.0,
        (false, true) => 0.0,
        _ if max > 0.0 => lof / max,
        _ => 0.0,
    }
}

/// A ranked score list read back from a `lof` TSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedScores {
    /// (node id, lof) in rank order.
    pub entries: Vec<(u64, f64)>,
}

impl RankedScores {
    pub fn from_report(r: &LofReport) -> Self {
        RankedScores {
            entries: r.results.iter().map(|x| (x.node_id, x.lof)).collect(),
        }
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let t = Table::read(path)?;
        t.expect_header(&["rank", "node_id", "lof", "relative_lof"])?;
        let mut entries = Vec::with_capacity(t.rows.len());
        for (i, row) in t.rows.iter().enumerate() {
            let rank: usize = parse_field(&row[0], "rank")?;
            if rank != i + 1 {
                return Err(Error::Format(format!("row {} has rank {rank}", i + 1)));
            }
            entries.push((
                parse_field(&row[1], "node id")?,
                parse_field(&row[2], "lof")?,
            ));
        }
        Ok(RankedScores { entries })
    }
}

/// Neighbor-search context: one candidate pool per row.
struct Scorer<'a> {
    m: &'a FeatureMatrix,
    k: usize,
    global: Option<KdTree<'a>>,
    clusters: Vec<KdTree<'a>>,
    /// `Some(cluster)` for rows searched within their cluster
    pool: Vec<Option<usize>>,
}

impl<'a> Scorer<'a> {
    fn new(m: &'a FeatureMatrix, q: &NeighborQuery<'_>) -> Result<Self> {
        let k = q.k_neighbors;
        if k == 0 {
            return Err(Error::Domain("k_neighbors must be at least 1".into()));
        }
        if m.rows() <= k {
            return Err(Error::InsufficientData(format!(
                "{} points, need more than k_neighbors = {k}",
                m.rows()
            )));
        }
        let (pool, clusters) = match q.mode {
            NeighborMode::Exact => (vec![None; m.rows()], Vec::new()),
            NeighborMode::ClusterRestricted(c) => {
                let assign = c.assignments_for(m)?;
                let mut members = vec![Vec::new(); c.k];
                for (i, &a) in assign.iter().enumerate() {
                    members
                        .get_mut(a)
                        .ok_or_else(|| Error::Consistency(format!("cluster {a} out of range")))?
                        .push(i);
                }
                let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
                let pool = assign
                    .iter()
                    .map(|&a| (sizes[a] > k).then_some(a))
                    .collect();
                let trees = members
                    .into_iter()
                    .map(|rows| KdTree::new(m, rows))
                    .collect();
                (pool, trees)
            }
        };
        let global = pool
            .iter()
            .any(Option::is_none)
            .then(|| KdTree::new(m, (0..m.rows()).collect()));
        Ok(Scorer {
            m,
            k,
            global,
            clusters,
            pool,
        })
    }

    fn tree(&self, row: usize) -> &KdTree<'a> {
        match self.pool[row] {
            Some(c) => &self.clusters[c],
            None => self.global.as_ref().expect("global tree for fallback rows"),
        }
    }

    fn k_distance_sq(&self, row: usize) -> f64 {
        self.tree(row)
            .kth_sq_dist(row, self.k)
            .expect("pool holds more than k points")
    }

    fn neighbors(&self, row: usize, kd_sq: f64) -> Vec<usize> {
        self.tree(row).within(row, kd_sq)
    }

    fn d(&self, a: usize, b: usize) -> f64 {
        sq_dist(self.m.row(a), self.m.row(b)).sqrt()
    }
}

fn lrd_from(reach_sum: f64, count: usize) -> f64 {
    if reach_sum == 0.0 {
        f64::INFINITY
    } else {
        count as f64 / reach_sum
    }
}

fn lof_from(own_lrd: f64, neighbor_lrds: impl Iterator<Item = f64>) -> f64 {
    if own_lrd.is_infinite() {
        return 1.0;
    }
    let (sum, n) = neighbor_lrds.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (sum / n as f64) / own_lrd
}

fn row_of(m: &FeatureMatrix, node: u64) -> Result<usize> {
    m.row_of(node).ok_or(Error::UnknownNode(node))
}

/// Distance from `a` to its k-th nearest other point.
pub fn k_distance(a: u64, q: &NeighborQuery<'_>, m: &FeatureMatrix) -> Result<f64> {
    let s = Scorer::new(m, q)?;
    Ok(s.k_distance_sq(row_of(m, a)?).sqrt())
}

/// The k-distance neighborhood of `a`, as node ids in row order.
pub fn neighbors(a: u64, q: &NeighborQuery<'_>, m: &FeatureMatrix) -> Result<Vec<u64>> {
    let s = Scorer::new(m, q)?;
    let r = row_of(m, a)?;
    Ok(s.neighbors(r, s.k_distance_sq(r))
        .into_iter()
        .map(|i| m.node_ids[i])
        .collect())
}

/// `max(k-distance(b), d(a, b))`.
pub fn reachability_distance(
    a: u64,
    b: u64,
    q: &NeighborQuery<'_>,
    m: &FeatureMatrix,
) -> Result<f64> {
    if a == b {
        return Err(Error::Domain(
            "reachability distance of a point to itself".into(),
        ));
    }
    let s = Scorer::new(m, q)?;
    let (ra, rb) = (row_of(m, a)?, row_of(m, b)?);
    Ok(s.k_distance_sq(rb).sqrt().max(s.d(ra, rb)))
}

fn lrd_row(s: &Scorer<'_>, r: usize) -> f64 {
    let nb = s.neighbors(r, s.k_distance_sq(r));
    let sum: f64 = nb
        .iter()
        .map(|&b| s.k_distance_sq(b).sqrt().max(s.d(r, b)))
        .sum();
    lrd_from(sum, nb.len())
}

/// Inverse mean reachability distance from `a` to its neighborhood.
pub fn lrd(a: u64, q: &NeighborQuery<'_>, m: &FeatureMatrix) -> Result<f64> {
    let s = Scorer::new(m, q)?;
    Ok(lrd_row(&s, row_of(m, a)?))
}

/// Mean neighborhood LRD over the LRD of `a`.
pub fn lof(a: u64, q: &NeighborQuery<'_>, m: &FeatureMatrix) -> Result<f64> {
    let s = Scorer::new(m, q)?;
    let r = row_of(m, a)?;
    let nb = s.neighbors(r, s.k_distance_sq(r));
    Ok(lof_from(lrd_row(&s, r), nb.iter().map(|&b| lrd_row(&s, b))))
}

/// Scores every node in three parallel passes (k-distances and
/// neighborhoods, LRDs, LOFs) and ranks them by descending LOF, ties by
/// ascending node id. The first `top_n` are flagged.
pub fn score_all(m: &FeatureMatrix, q: &NeighborQuery<'_>, top_n: usize) -> Result<LofReport> {
    let s = Scorer::new(m, q)?;
    let n = m.rows();

    let kd_sq: Vec<f64> = (0..n).into_par_iter().map(|r| s.k_distance_sq(r)).collect();
    let hoods: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|r| s.neighbors(r, kd_sq[r]))
        .collect();
    let kd: Vec<f64> = kd_sq.iter().map(|x| x.sqrt()).collect();

    let lrds: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|r| {
            let sum: f64 = hoods[r].iter().map(|&b| kd[b].max(s.d(r, b))).sum();
            lrd_from(sum, hoods[r].len())
        })
        .collect();
    let lofs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|r| lof_from(lrds[r], hoods[r].iter().map(|&b| lrds[b])))
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        lofs[b]
            .total_cmp(&lofs[a])
            .then(m.node_ids[a].cmp(&m.node_ids[b]))
    });
    let results = order
        .iter()
        .enumerate()
        .map(|(i, &r)| LofResult {
            node_id: m.node_ids[r],
            k_distance: kd[r],
            lrd: lrds[r],
            lof: lofs[r],
            rank: i + 1,
            flagged: i < top_n,
        })
        .collect();
    let mut fallback_nodes: Vec<u64> = match q.mode {
        NeighborMode::Exact => Vec::new(),
        NeighborMode::ClusterRestricted(_) => (0..n)
            .filter(|&r| s.pool[r].is_none())
            .map(|r| m.node_ids[r])
            .collect(),
    };
    fallback_nodes.sort_unstable();
    Ok(LofReport {
        results,
        k_neighbors: q.k_neighbors,
        cluster_restricted: matches!(q.mode, NeighborMode::ClusterRestricted(_)),
        fallback_nodes,
        top_n,
    })
}

/// Node id to LOF lookup.
pub fn score_map(r: &LofReport) -> HashMap<u64, f64> {
    r.results.iter().map(|x| (x.node_id, x.lof)).collect()
}
