//! Evaluation of ranked outliers without ground truth: centroid-distance
//! ratios, the dual user/transaction agreement metric, and known-label hits.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::GraphKind;
use crate::kmeans::{sq_dist, Clustering};
use crate::ledger::LedgerRecord;

pub const DEFAULT_DUAL_N: usize = 100;
pub const DEFAULT_DUAL_M: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentroidRatio {
    pub ratio: f64,
    /// Outliers whose cluster has zero spread; each counts as ratio 1.
    pub degenerate: usize,
}

/// Mean over the `top_n` highest-ranked outliers of
/// `d(outlier, its centroid) / max d(member, that centroid)`.
pub fn centroid_ratio(
    ranked: &[u64],
    c: &Clustering,
    m: &FeatureMatrix,
    top_n: usize,
) -> Result<CentroidRatio> {
    if top_n == 0 || top_n > ranked.len() {
        return Err(Error::Domain(format!(
            "top_n = {top_n} outside 1..={}",
            ranked.len()
        )));
    }
    let assign = c.assignments_for(m)?;
    let mut max_d = vec![0.0f64; c.k];
    for (i, &a) in assign.iter().enumerate() {
        max_d[a] = max_d[a].max(sq_dist(m.row(i), &c.centroids[a]).sqrt());
    }
    let rows: HashMap<u64, usize> = m
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let mut sum = 0.0;
    let mut degenerate = 0;
    for id in &ranked[..top_n] {
        let r = *rows.get(id).ok_or(Error::UnknownNode(*id))?;
        let a = assign[r];
        if max_d[a] == 0.0 {
            degenerate += 1;
            sum += 1.0;
        } else {
            sum += sq_dist(m.row(r), &c.centroids[a]).sqrt() / max_d[a];
        }
    }
    Ok(CentroidRatio {
        ratio: sum / top_n as f64,
        degenerate,
    })
}

/// Both halves of the dual evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSets {
    pub top_user_outliers: Vec<u64>,
    pub top_tx_outliers: Vec<u64>,
    /// Transactions involving any top user outlier.
    pub x_n: BTreeSet<u64>,
    /// Users party to any top transaction outlier.
    pub y_m: BTreeSet<u64>,
    pub a1: f64,
    pub a2: f64,
    pub m_de: f64,
}

pub fn m_de(a1: f64, a2: f64) -> f64 {
    (a1 + a2) / 2.0
}

/// Expands `top` through `incident` into a set S, then returns S and the
/// fraction of S found among the first |S| entries of `other_ranked`.
pub fn dual_fraction<F>(top: &[u64], incident: F, other_ranked: &[u64]) -> (BTreeSet<u64>, f64)
where
    F: Fn(u64) -> Vec<u64>,
{
    let set: BTreeSet<u64> = top.iter().flat_map(|&id| incident(id)).collect();
    if set.is_empty() {
        return (set, f64::NAN);
    }
    let head: HashSet<u64> = other_ranked.iter().take(set.len()).copied().collect();
    let hits = set.iter().filter(|id| head.contains(id)).count();
    let frac = hits as f64 / set.len() as f64;
    (set, frac)
}

/// Dual evaluation metric for user ranking `user_ranked` and transaction
/// ranking `tx_ranked` (both best-first), using their top `n` and `m`.
pub fn dual_metric(
    user_ranked: &[u64],
    tx_ranked: &[u64],
    ledger: &[LedgerRecord],
    n: usize,
    m: usize,
) -> Result<DualSets> {
    let mut txs_of_user: HashMap<u64, Vec<u64>> = HashMap::new();
    let mut users_of_tx: HashMap<u64, Vec<u64>> = HashMap::new();
    for r in ledger {
        let parties = r.parties();
        for &u in &parties {
            txs_of_user.entry(u).or_default().push(r.tx_id);
        }
        users_of_tx.insert(r.tx_id, parties);
    }
    let top_users: Vec<u64> = user_ranked.iter().take(n).copied().collect();
    let top_txs: Vec<u64> = tx_ranked.iter().take(m).copied().collect();

    let (x_n, a1) = dual_fraction(
        &top_users,
        |u| txs_of_user.get(&u).cloned().unwrap_or_default(),
        tx_ranked,
    );
    if x_n.is_empty() {
        return Err(Error::Undefined(
            "X_N is empty: no transaction involves the top user outliers".into(),
        ));
    }
    let (y_m, a2) = dual_fraction(
        &top_txs,
        |t| users_of_tx.get(&t).cloned().unwrap_or_default(),
        user_ranked,
    );
    if y_m.is_empty() {
        return Err(Error::Undefined(
            "Y_M is empty: no user is party to the top transaction outliers".into(),
        ));
    }
    Ok(DualSets {
        top_user_outliers: top_users,
        top_tx_outliers: top_txs,
        x_n,
        y_m,
        a1,
        a2,
        m_de: m_de(a1, a2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label {
    pub kind: GraphKind,
    pub id: u64,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.kind, self.id)
    }
}

/// One `user:<id>` or `tx:<id>` per line; blank lines and `#` comments skipped.
pub fn parse_labels(text: &str) -> Result<Vec<Label>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (kind, id) = line.split_once(':').ok_or_else(|| Error::Parse {
            line: i as u64 + 1,
            message: format!("label {line:?} lacks a user:/tx: prefix"),
        })?;
        let kind = match kind {
            "user" => GraphKind::User,
            "tx" => GraphKind::Transaction,
            other => {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    message: format!("unknown label prefix {other:?}"),
                })
            }
        };
        let id = id.trim().parse().map_err(|_| Error::Parse {
            line: i as u64 + 1,
            message: format!("invalid label id in {line:?}"),
        })?;
        out.push(Label { kind, id });
    }
    Ok(out)
}

pub fn format_labels(labels: &[Label]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<Label>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

/// Labels found within the first `top_n` of `ranked`, with their 1-based rank,
/// in rank order.
pub fn label_check(ranked: &[u64], labels: &[u64], top_n: usize) -> Vec<(u64, usize)> {
    let wanted: HashSet<u64> = labels.iter().copied().collect();
    ranked
        .iter()
        .take(top_n)
        .enumerate()
        .filter(|(_, id)| wanted.contains(id))
        .map(|(i, &id)| (id, i + 1))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub centroid_ratio_user: Option<CentroidRatio>,
    pub centroid_ratio_tx: Option<CentroidRatio>,
    pub dual: DualSets,
    /// (label, rank found)
    pub label_hits: Vec<(Label, usize)>,
}

fn fmt_ratio(r: &Option<CentroidRatio>) -> String {
    r.map_or_else(|| "NA".to_string(), |r| r.ratio.to_string())
}

impl EvalReport {
    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "centroid_ratio_user={}",
            fmt_ratio(&self.centroid_ratio_user)
        );
        let _ = writeln!(
            s,
            "centroid_ratio_tx={}",
            fmt_ratio(&self.centroid_ratio_tx)
        );
        let _ = writeln!(s, "N={}", self.dual.top_user_outliers.len());
        let _ = writeln!(s, "M={}", self.dual.top_tx_outliers.len());
        let _ = writeln!(s, "X_N_size={}", self.dual.x_n.len());
        let _ = writeln!(s, "Y_M_size={}", self.dual.y_m.len());
        let _ = writeln!(s, "A1={}", self.dual.a1);
        let _ = writeln!(s, "A2={}", self.dual.a2);
        let _ = writeln!(s, "m_DE={}", self.dual.m_de);
        let hits: Vec<String> = self
            .label_hits
            .iter()
            .map(|(l, rank)| format!("{l}@{rank}"))
            .collect();
        let _ = writeln!(s, "label_hit_count={}", hits.len());
        let _ = writeln!(s, "label_hits={}", hits.join(","));
        s
    }
}
