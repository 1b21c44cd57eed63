//! User and transaction graphs built from a ledger.
//!
//! In the transaction graph an edge `A -> B` means "B takes money from A":
//! it runs from the source transaction to the spending one.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ledger::{Amount, LedgerRecord};
use crate::tsv::{parse_field, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GraphKind {
    User,
    Transaction,
}

impl GraphKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphKind::User => "user",
            GraphKind::Transaction => "tx",
        }
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" => Ok(GraphKind::User),
            "tx" | "transaction" => Ok(GraphKind::Transaction),
            other => Err(Error::Config(format!("unknown graph kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: u64,
    pub dst: u64,
    pub value: Amount,
    pub timestamp: i64,
    pub tx_id: u64,
}

/// Directed multigraph over users or transactions.
///
/// `nodes` is sorted and unique; `edges` follow ledger order, so building
/// twice from the same records yields identical values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeGraph {
    pub kind: GraphKind,
    pub nodes: Vec<u64>,
    pub edges: Vec<Edge>,
}

impl NodeGraph {
    pub fn index_of(&self, node: u64) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for e in &self.edges {
            deg[self.index_of(e.dst).expect("edge endpoint in nodes")] += 1;
        }
        deg
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for e in &self.edges {
            deg[self.index_of(e.src).expect("edge endpoint in nodes")] += 1;
        }
        deg
    }

    /// Edge multiset in canonical order, for comparisons that ignore
    /// construction order.
    pub fn sorted_edges(&self) -> Vec<Edge> {
        let mut e = self.edges.clone();
        e.sort();
        e
    }

    pub fn write_tsv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut nodes = Table::new(["node_id"]);
        for n in &self.nodes {
            nodes.push(vec![n.to_string()]);
        }
        nodes.write(dir.join(format!("{}_nodes.tsv", self.kind)))?;

        let mut edges = Table::new(EDGE_HEADER);
        for e in &self.edges {
            edges.push(vec![
                e.src.to_string(),
                e.dst.to_string(),
                e.value.to_string(),
                e.timestamp.to_string(),
                e.tx_id.to_string(),
            ]);
        }
        edges.write(dir.join(format!("{}_edges.tsv", self.kind)))
    }

    pub fn read_tsv(dir: impl AsRef<Path>, kind: GraphKind) -> Result<NodeGraph> {
        let dir = dir.as_ref();
        let nodes_t = Table::read(dir.join(format!("{kind}_nodes.tsv")))?;
        nodes_t.expect_header(&["node_id"])?;
        let mut nodes = nodes_t
            .rows
            .iter()
            .map(|r| parse_field::<u64>(&r[0], "node id"))
            .collect::<Result<Vec<_>>>()?;
        nodes.sort_unstable();
        nodes.dedup();

        let edges_t = Table::read(dir.join(format!("{kind}_edges.tsv")))?;
        edges_t.expect_header(&EDGE_HEADER)?;
        let edges = edges_t
            .rows
            .iter()
            .map(|r| {
                Ok(Edge {
                    src: parse_field(&r[0], "src")?,
                    dst: parse_field(&r[1], "dst")?,
                    value: r[2].parse().map_err(|m: String| Error::Format(m))?,
                    timestamp: parse_field(&r[3], "timestamp")?,
                    tx_id: parse_field(&r[4], "tx_id")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let g = NodeGraph { kind, nodes, edges };
        for e in &g.edges {
            if g.index_of(e.src).is_none() || g.index_of(e.dst).is_none() {
                return Err(Error::Format(format!(
                    "edge {} -> {} references a missing node",
                    e.src, e.dst
                )));
            }
        }
        Ok(g)
    }
}

const EDGE_HEADER: [&str; 5] = ["src", "dst", "value", "timestamp", "tx_id"];

/// Splits `total` over `weights` proportionally with largest-remainder
/// rounding, so the shares sum to `total` exactly. Equal weights are used when
/// every weight is zero. Remainder ties go to the earlier entry.
pub(crate) fn apportion(total: u64, weights: &[u64]) -> Vec<u64> {
    if weights.is_empty() {
        return Vec::new();
    }
    let uniform;
    let weights = if weights.iter().all(|&w| w == 0) {
        uniform = vec![1u64; weights.len()];
        &uniform[..]
    } else {
        weights
    };
    let denom: u128 = weights.iter().map(|&w| w as u128).sum();
    let mut shares = Vec::with_capacity(weights.len());
    let mut rems = Vec::with_capacity(weights.len());
    for &w in weights {
        let num = total as u128 * w as u128;
        shares.push((num / denom) as u64);
        rems.push(num % denom);
    }
    let mut leftover = total - shares.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for i in order {
        if leftover == 0 {
            break;
        }
        shares[i] += 1;
        leftover -= 1;
    }
    shares
}

/// One edge per (input user, output) pair of each transaction. An output's
/// value is split across the distinct input users in proportion to what each
/// contributed; transactions without inputs only add their receivers as nodes.
pub fn build_user_graph(records: &[LedgerRecord]) -> NodeGraph {
    let mut nodes = BTreeSet::new();
    let mut edges = Vec::new();
    for r in records {
        // distinct senders in first-seen order with their contributed sats
        let mut senders: Vec<(u64, u64)> = Vec::new();
        for input in &r.inputs {
            nodes.insert(input.user_id);
            match senders.iter_mut().find(|(u, _)| *u == input.user_id) {
                Some((_, c)) => *c += input.value.sats(),
                None => senders.push((input.user_id, input.value.sats())),
            }
        }
        for o in &r.outputs {
            nodes.insert(o.user_id);
        }
        if senders.is_empty() {
            continue;
        }
        let weights: Vec<u64> = senders.iter().map(|s| s.1).collect();
        let splits: Vec<Vec<u64>> = r
            .outputs
            .iter()
            .map(|o| apportion(o.value.sats(), &weights))
            .collect();
        for (si, (user, _)) in senders.iter().enumerate() {
            for (o, split) in r.outputs.iter().zip(&splits) {
                edges.push(Edge {
                    src: *user,
                    dst: o.user_id,
                    value: Amount::from_sats(split[si]),
                    timestamp: r.timestamp,
                    tx_id: r.tx_id,
                });
            }
        }
    }
    NodeGraph {
        kind: GraphKind::User,
        nodes: nodes.into_iter().collect(),
        edges,
    }
}

/// One node per transaction; one edge `src_tx -> tx` carrying the input's
/// value for every input that names a source transaction.
pub fn build_tx_graph(records: &[LedgerRecord]) -> NodeGraph {
    let mut nodes: Vec<u64> = records.iter().map(|r| r.tx_id).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let edges = records
        .iter()
        .flat_map(|r| {
            r.inputs.iter().filter_map(move |i| {
                i.src_tx_id.map(|src| Edge {
                    src,
                    dst: r.tx_id,
                    value: i.value,
                    timestamp: r.timestamp,
                    tx_id: r.tx_id,
                })
            })
        })
        .collect();
    NodeGraph {
        kind: GraphKind::Transaction,
        nodes,
        edges,
    }
}
