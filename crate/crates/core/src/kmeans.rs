//! Lloyd's k-means over normalized feature vectors, plus entropy-based
//! selection of k.
//!
//! All internal passes visit rows in ascending node-id order, so the result
//! does not depend on how the input rows are ordered.

use std::collections::{HashMap, HashSet};
use std::ops::RangeInclusive;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::tsv::{parse_field, Table};

pub const DEFAULT_K: usize = 7;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_K_RANGE: RangeInclusive<usize> = 2..=10;
pub const ENTROPY_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Node ids in the row order of the clustered matrix.
    pub node_ids: Vec<u64>,
    /// Cluster index per row, aligned with `node_ids`.
    pub assignments: Vec<usize>,
    pub wcss: f64,
    pub iterations: usize,
    /// Objective after every centroid update.
    pub objective_trace: Vec<f64>,
}

impl Clustering {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Cluster index for every row of `m`, matched by node id.
    pub fn assignments_for(&self, m: &FeatureMatrix) -> Result<Vec<usize>> {
        if self.node_ids == m.node_ids {
            return Ok(self.assignments.clone());
        }
        let by_id: HashMap<u64, usize> = self
            .node_ids
            .iter()
            .copied()
            .zip(self.assignments.iter().copied())
            .collect();
        m.node_ids
            .iter()
            .map(|id| by_id.get(id).copied().ok_or(Error::UnknownNode(*id)))
            .collect()
    }

    /// Recomputes the objective from `m`.
    pub fn recompute_wcss(&self, m: &FeatureMatrix) -> Result<f64> {
        let assign = self.assignments_for(m)?;
        Ok(sorted_rows(m)
            .iter()
            .map(|&i| sq_dist(m.row(i), &self.centroids[assign[i]]))
            .sum())
    }

    pub fn write_tsv(
        &self,
        m: &FeatureMatrix,
        assignments_path: impl AsRef<Path>,
        centroids_path: impl AsRef<Path>,
    ) -> Result<()> {
        let assign = self.assignments_for(m)?;
        let mut a = Table::new(["node_id", "cluster", "distance"]);
        for (i, id) in m.node_ids.iter().enumerate() {
            let c = assign[i];
            a.push(vec![
                id.to_string(),
                c.to_string(),
                sq_dist(m.row(i), &self.centroids[c]).sqrt().to_string(),
            ]);
        }
        a.write(assignments_path)?;

        let mut c =
            Table::new(std::iter::once("cluster".to_string()).chain(m.feature_names.clone()));
        for (i, centroid) in self.centroids.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(centroid.iter().map(|v| v.to_string()));
            c.push(row);
        }
        c.write(centroids_path)
    }

    pub fn read_tsv(
        assignments_path: impl AsRef<Path>,
        centroids_path: impl AsRef<Path>,
    ) -> Result<Clustering> {
        let c = Table::read(centroids_path)?;
        c.expect_header(&["cluster"])?;
        let mut centroids = Vec::with_capacity(c.rows.len());
        for (i, row) in c.rows.iter().enumerate() {
            if parse_field::<usize>(&row[0], "cluster index")? != i {
                return Err(Error::Format("centroid rows must be numbered 0..k".into()));
            }
            centroids.push(
                row[1..]
                    .iter()
                    .map(|v| parse_field(v, "centroid value"))
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        let a = Table::read(assignments_path)?;
        a.expect_header(&["node_id", "cluster", "distance"])?;
        let mut node_ids = Vec::with_capacity(a.rows.len());
        let mut assignments = Vec::with_capacity(a.rows.len());
        let mut wcss = 0.0;
        for row in &a.rows {
            node_ids.push(parse_field(&row[0], "node id")?);
            let ci: usize = parse_field(&row[1], "cluster index")?;
            if ci >= centroids.len() {
                return Err(Error::Format(format!("cluster {ci} has no centroid")));
            }
            assignments.push(ci);
            let d: f64 = parse_field(&row[2], "distance")?;
            wcss += d * d;
        }
        Ok(Clustering {
            k: centroids.len(),
            centroids,
            node_ids,
            assignments,
            wcss,
            iterations: 0,
            objective_trace: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// k distinct rows drawn by a seeded shuffle of the sorted node ids.
    #[default]
    Random,
    /// First seed drawn as above, the rest by farthest-point traversal.
    FarthestPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub init: Init,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            init: Init::Random,
        }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row indices in ascending node-id order.
fn sorted_rows(m: &FeatureMatrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..m.rows()).collect();
    order.sort_by_key(|&i| (m.node_ids[i], i));
    order
}

fn row_key(row: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 are the same point
    row.iter().map(|v| (v + 0.0).to_bits()).collect()
}

pub fn distinct_rows(m: &FeatureMatrix) -> usize {
    (0..m.rows())
        .map(|i| row_key(m.row(i)))
        .collect::<HashSet<_>>()
        .len()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(row, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn initial_centroids(m: &FeatureMatrix, order: &[usize], cfg: &KMeansConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shuffled = order.to_vec();
    shuffled.shuffle(&mut rng);

    let mut seen = HashSet::new();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(cfg.k);
    match cfg.init {
        Init::Random => {
            for &i in &shuffled {
                if centroids.len() == cfg.k {
                    break;
                }
                if seen.insert(row_key(m.row(i))) {
                    centroids.push(m.row(i).to_vec());
                }
            }
        }
        Init::FarthestPoint => {
            centroids.push(m.row(shuffled[0]).to_vec());
            let mut min_d: Vec<f64> = order
                .iter()
                .map(|&i| sq_dist(m.row(i), &centroids[0]))
                .collect();
            while centroids.len() < cfg.k {
                let (pos, _) =
                    min_d
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (p, &d)| {
                            if d > best.1 {
                                (p, d)
                            } else {
                                best
                            }
                        });
                let c = m.row(order[pos]).to_vec();
                for (p, &i) in order.iter().enumerate() {
                    min_d[p] = min_d[p].min(sq_dist(m.row(i), &c));
                }
                centroids.push(c);
            }
        }
    }
    centroids
}

/// Means of the assigned rows, summed in node-id order. Empty clusters are
/// reseeded with the row farthest from its own centroid.
fn update_centroids(
    m: &FeatureMatrix,
    order: &[usize],
    assign: &mut [usize],
    centroids: &mut [Vec<f64>],
) {
    let k = centroids.len();
    let d = m.dims();
    loop {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for &i in order {
            let c = assign[i];
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(m.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        let mut far: Option<(usize, f64)> = None;
        for &i in order {
            if counts[assign[i]] < 2 {
                continue;
            }
            let dist = sq_dist(m.row(i), &centroids[assign[i]]);
            if far.is_none_or(|(_, fd)| dist > fd) {
                far = Some((i, dist));
            }
        }
        let (i, _) = far.expect("k <= distinct rows leaves a donor cluster");
        assign[i] = empty;
    }
}

fn objective(m: &FeatureMatrix, order: &[usize], assign: &[usize], centroids: &[Vec<f64>]) -> f64 {
    order
        .iter()
        .map(|&i| sq_dist(m.row(i), &centroids[assign[i]]))
        .sum()
}

/// Lloyd iterations from a seeded start until assignments stop changing or
/// `max_iter` centroid updates have run.
pub fn kmeans_with(m: &FeatureMatrix, cfg: &KMeansConfig) -> Result<Clustering> {
    if cfg.k == 0 {
        return Err(Error::Infeasible("k must be positive".into()));
    }
    if cfg.max_iter == 0 {
        return Err(Error::Infeasible("max_iter must be positive".into()));
    }
    let distinct = distinct_rows(m);
    if cfg.k > distinct {
        return Err(Error::Infeasible(format!(
            "k = {} exceeds the {distinct} distinct rows",
            cfg.k
        )));
    }
    let order = sorted_rows(m);
    let mut centroids = initial_centroids(m, &order, cfg);
    let mut assign: Vec<usize> = (0..m.rows())
        .into_par_iter()
        .map(|i| nearest(m.row(i), &centroids).0)
        .collect();

    update_centroids(m, &order, &mut assign, &mut centroids);
    let mut trace = vec![objective(m, &order, &assign, &centroids)];
    while trace.len() < cfg.max_iter {
        // a row only moves when another centroid is strictly closer
        let next: Vec<usize> = (0..m.rows())
            .into_par_iter()
            .map(|i| {
                let (c, d) = nearest(m.row(i), &centroids);
                if d < sq_dist(m.row(i), &centroids[assign[i]]) {
                    c
                } else {
                    assign[i]
                }
            })
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        update_centroids(m, &order, &mut assign, &mut centroids);
        trace.push(objective(m, &order, &assign, &centroids));
    }

    Ok(Clustering {
        k: cfg.k,
        centroids,
        node_ids: m.node_ids.clone(),
        assignments: assign,
        wcss: *trace.last().expect("at least one update"),
        iterations: trace.len(),
        objective_trace: trace,
    })
}

pub fn kmeans(m: &FeatureMatrix, k: usize, seed: u64, max_iter: usize) -> Result<Clustering> {
    kmeans_with(
        m,
        &KMeansConfig {
            max_iter,
            ..KMeansConfig::new(k, seed)
        },
    )
}

/// Nearest centroid to a node's feature vector and its Euclidean distance.
pub fn assign(m: &FeatureMatrix, c: &Clustering, node: u64) -> Result<(usize, f64)> {
    let row = m.row_of(node).ok_or(Error::UnknownNode(node))?;
    let (idx, d) = nearest(m.row(row), &c.centroids);
    Ok((idx, d.sqrt()))
}

/// Cross-cluster entropy of a partition.
///
/// Each column is cut into ten equal-width bins over its global range; the
/// Shannon entropy (natural log) of every cluster's bin histogram is weighted
/// by cluster size, and the weighted means are summed over columns. Lower
/// means more homogeneous clusters.
pub fn cluster_entropy(m: &FeatureMatrix, assignments: &[usize], k: usize) -> f64 {
    let n = m.rows();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for j in 0..m.dims() {
        let col = m.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = hi - lo;
        let mut hist = vec![[0usize; ENTROPY_BINS]; k];
        for (i, &x) in col.iter().enumerate() {
            let b = if width > 0.0 {
                (((x - lo) / width * ENTROPY_BINS as f64) as usize).min(ENTROPY_BINS - 1)
            } else {
                0
            };
            hist[assignments[i]][b] += 1;
        }
        for h in &hist {
            let size: usize = h.iter().sum();
            if size == 0 {
                continue;
            }
            let entropy: f64 = h
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / size as f64;
                    -p * p.ln()
                })
                .sum();
            total += size as f64 / n as f64 * entropy;
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub best_k: usize,
    pub entropies: Vec<(usize, f64)>,
    pub best: Clustering,
}

/// Runs k-means for every k in the range and keeps the smallest entropy;
/// ties go to the smaller k. A k above the number of distinct rows is
/// evaluated with as many clusters as there are distinct rows.
pub fn select_k(
    m: &FeatureMatrix,
    k_range: RangeInclusive<usize>,
    seed: u64,
    max_iter: usize,
) -> Result<KSelection> {
    if k_range.is_empty() || *k_range.start() == 0 {
        return Err(Error::Infeasible(format!("empty k range {k_range:?}")));
    }
    let distinct = distinct_rows(m);
    let mut entropies = Vec::new();
    let mut best: Option<(usize, f64, Clustering)> = None;
    for k in k_range {
        let c = kmeans(m, k.min(distinct), seed, max_iter)?;
        let h = cluster_entropy(m, &c.assignments, c.k);
        entropies.push((k, h));
        if best.as_ref().is_none_or(|(_, bh, _)| h < *bh) {
            best = Some((k, h, c));
        }
    }
    let (best_k, _, best) = best.expect("non-empty range");
    Ok(KSelection {
        best_k,
        entropies,
        best,
    })
}
