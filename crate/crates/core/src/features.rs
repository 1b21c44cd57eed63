//! Per-node feature vectors for both graph kinds.
//!
//! The clustering/scoring sets are six user features and three transaction
//! features. `extended` adds the remaining descriptive features, which are
//! reported but not meant for k-means or LOF.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{GraphKind, NodeGraph};
use crate::ledger::LedgerRecord;
use crate::tsv::{parse_field, Table};

pub const USER_FEATURES: [&str; 6] = [
    "in_degree",
    "out_degree",
    "mean_in_value",
    "mean_out_value",
    "mean_time_interval",
    "clustering_coefficient",
];

pub const USER_EXTENDED_FEATURES: [&str; 7] = [
    "unique_in_degree",
    "unique_out_degree",
    "mean_in_interval",
    "mean_out_interval",
    "balance",
    "creation_date",
    "active_duration",
];

pub const TX_FEATURES: [&str; 3] = ["in_degree", "out_degree", "total_value"];

pub const TX_EXTENDED_FEATURES: [&str; 11] = [
    "unique_in_degree",
    "unique_out_degree",
    "mean_in_value",
    "mean_out_value",
    "mean_in_interval",
    "mean_out_interval",
    "user_count",
    "balance",
    "clustering_coefficient",
    "creation_date",
    "active_duration",
];

/// Row-major matrix of node feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub graph_kind: GraphKind,
    pub feature_names: Vec<String>,
    pub node_ids: Vec<u64>,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(
        graph_kind: GraphKind,
        feature_names: Vec<String>,
        node_ids: Vec<u64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != node_ids.len() * feature_names.len() {
            return Err(Error::Consistency(format!(
                "{} values for {} rows x {} columns",
                values.len(),
                node_ids.len(),
                feature_names.len()
            )));
        }
        Ok(FeatureMatrix {
            graph_kind,
            feature_names,
            node_ids,
            values,
        })
    }

    /// Builds an anonymous matrix from rows; node ids are the row indices.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dims) {
            return Err(Error::Consistency("ragged rows".into()));
        }
        FeatureMatrix::new(
            GraphKind::User,
            (0..dims).map(|d| format!("f{d}")).collect(),
            (0..rows.len() as u64).collect(),
            rows.concat(),
        )
    }

    pub fn rows(&self) -> usize {
        self.node_ids.len()
    }

    pub fn dims(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dims();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.row(i)[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .map(|j| self.column(j))
    }

    pub fn row_of(&self, node: u64) -> Option<usize> {
        self.node_ids.iter().position(|&n| n == node)
    }

    /// Keeps only the named columns, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<FeatureMatrix> {
        let idx = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| Error::Consistency(format!("no feature named {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = (0..self.rows())
            .flat_map(|i| {
                let row = self.row(i);
                idx.iter().map(move |&j| row[j])
            })
            .collect();
        FeatureMatrix::new(
            self.graph_kind,
            names.iter().map(|s| s.to_string()).collect(),
            self.node_ids.clone(),
            values,
        )
    }

    pub fn to_table(&self) -> Table {
        let mut t =
            Table::new(std::iter::once("node_id".to_string()).chain(self.feature_names.clone()));
        for (i, id) in self.node_ids.iter().enumerate() {
            let mut row = vec![id.to_string()];
            row.extend(self.row(i).iter().map(|v| v.to_string()));
            t.push(row);
        }
        t.comments.push(format!("kind={}", self.graph_kind));
        t
    }

    pub fn from_table(t: &Table) -> Result<Self> {
        t.expect_header(&["node_id"])?;
        let kind = t
            .comments
            .iter()
            .find_map(|c| c.strip_prefix("kind="))
            .map(str::parse)
            .transpose()?
            .unwrap_or(GraphKind::User);
        let mut node_ids = Vec::with_capacity(t.rows.len());
        let mut values = Vec::with_capacity(t.rows.len() * (t.header.len() - 1));
        for row in &t.rows {
            node_ids.push(parse_field(&row[0], "node id")?);
            for v in &row[1..] {
                let x: f64 = parse_field(v, "feature value")?;
                if !x.is_finite() {
                    return Err(Error::Format(format!("non-finite feature value {v:?}")));
                }
                values.push(x);
            }
        }
        FeatureMatrix::new(kind, t.header[1..].to_vec(), node_ids, values)
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_table().write(path)
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        FeatureMatrix::from_table(&Table::read(path)?)
    }
}

fn mean(sum: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean gap between consecutive sorted event times; zero with fewer than
/// two events. The gaps telescope, so this is (last - first) / (n - 1).
fn mean_interval(times: &[i64]) -> f64 {
    if times.len() < 2 {
        return 0.0;
    }
    let (min, max) = times
        .iter()
        .fold((i64::MAX, i64::MIN), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    (max - min) as f64 / (times.len() - 1) as f64
}

struct Incidence {
    in_edges: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
    /// undirected simple neighbor lists, sorted, without self
    neighbors: Vec<Vec<usize>>,
}

impl Incidence {
    fn new(g: &NodeGraph) -> Self {
        let n = g.node_count();
        let mut in_edges = vec![Vec::new(); n];
        let mut out_edges = vec![Vec::new(); n];
        let mut neighbors = vec![Vec::new(); n];
        for (ei, e) in g.edges.iter().enumerate() {
            let s = g.index_of(e.src).expect("edge endpoint in nodes");
            let d = g.index_of(e.dst).expect("edge endpoint in nodes");
            out_edges[s].push(ei);
            in_edges[d].push(ei);
            if s != d {
                neighbors[s].push(d);
                neighbors[d].push(s);
            }
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
            nb.dedup();
        }
        Incidence {
            in_edges,
            out_edges,
            neighbors,
        }
    }

    /// Local clustering coefficient on the undirected simple projection;
    /// zero for fewer than two distinct neighbors.
    fn clustering(&self, v: usize) -> f64 {
        let nv = &self.neighbors[v];
        let d = nv.len();
        if d < 2 {
            return 0.0;
        }
        let mut links = 0usize;
        for &u in nv {
            let nu = &self.neighbors[u];
            let (small, large) = if nu.len() < nv.len() {
                (nu, nv)
            } else {
                (nv, nu)
            };
            links += small
                .iter()
                .filter(|x| large.binary_search(x).is_ok())
                .count();
        }
        // each neighbor pair counted from both ends
        links as f64 / (d * (d - 1)) as f64
    }
}

fn unique_count(g: &NodeGraph, edges: &[usize], endpoint: fn(&crate::graph::Edge) -> u64) -> usize {
    let mut ids: Vec<u64> = edges.iter().map(|&e| endpoint(&g.edges[e])).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.len()
}

fn sats_sum(g: &NodeGraph, edges: &[usize]) -> u64 {
    edges.iter().map(|&e| g.edges[e].value.sats()).sum()
}

fn times(g: &NodeGraph, edges: &[usize]) -> Vec<i64> {
    edges.iter().map(|&e| g.edges[e].timestamp).collect()
}

fn btc(sats: u64) -> f64 {
    sats as f64 / 1e8
}

fn check_kind(g: &NodeGraph, kind: GraphKind) -> Result<()> {
    if g.kind != kind {
        return Err(Error::Consistency(format!(
            "expected a {kind} graph, got a {} graph",
            g.kind
        )));
    }
    Ok(())
}

/// Raw user features: in/out degree, mean in/out edge value (BTC), mean time
/// interval over all incident edges (seconds), clustering coefficient.
pub fn extract_user_features(g: &NodeGraph, extended: bool) -> Result<FeatureMatrix> {
    check_kind(g, GraphKind::User)?;
    let inc = Incidence::new(g);
    let rows: Vec<Vec<f64>> = (0..g.node_count())
        .into_par_iter()
        .map(|v| {
            let ins = &inc.in_edges[v];
            let outs = &inc.out_edges[v];
            let in_sats = sats_sum(g, ins);
            let out_sats = sats_sum(g, outs);
            let mut incident: Vec<usize> = ins.iter().chain(outs).copied().collect();
            incident.sort_unstable();
            incident.dedup();
            let all_times = times(g, &incident);
            let mut row = vec![
                ins.len() as f64,
                outs.len() as f64,
                mean(btc(in_sats), ins.len()),
                mean(btc(out_sats), outs.len()),
                mean_interval(&all_times),
                inc.clustering(v),
            ];
            if extended {
                let first = all_times.iter().min().copied().unwrap_or(0);
                let last = all_times.iter().max().copied().unwrap_or(0);
                row.extend([
                    unique_count(g, ins, |e| e.src) as f64,
                    unique_count(g, outs, |e| e.dst) as f64,
                    mean_interval(&times(g, ins)),
                    mean_interval(&times(g, outs)),
                    (in_sats as i128 - out_sats as i128) as f64 / 1e8,
                    first as f64,
                    (last - first) as f64,
                ]);
            }
            row
        })
        .collect();
    let mut names: Vec<String> = USER_FEATURES.iter().map(|s| s.to_string()).collect();
    if extended {
        names.extend(USER_EXTENDED_FEATURES.iter().map(|s| s.to_string()));
    }
    FeatureMatrix::new(GraphKind::User, names, g.nodes.clone(), rows.concat())
}

/// Raw transaction features: in-degree (spent sources), out-degree (spending
/// children), total output value of the record (BTC).
pub fn extract_tx_features(
    g: &NodeGraph,
    records: &[LedgerRecord],
    extended: bool,
) -> Result<FeatureMatrix> {
    check_kind(g, GraphKind::Transaction)?;
    let by_id: HashMap<u64, &LedgerRecord> = records.iter().map(|r| (r.tx_id, r)).collect();
    let recs = g
        .nodes
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| Error::Consistency(format!("tx {id} missing from ledger")))
        })
        .collect::<Result<Vec<_>>>()?;
    let inc = Incidence::new(g);
    let rows: Vec<Vec<f64>> = (0..g.node_count())
        .into_par_iter()
        .map(|v| {
            let rec = recs[v];
            let ins = &inc.in_edges[v];
            let outs = &inc.out_edges[v];
            let mut row = vec![
                ins.len() as f64,
                outs.len() as f64,
                rec.output_total().btc(),
            ];
            if extended {
                let in_sats = sats_sum(g, ins);
                let out_sats = sats_sum(g, outs);
                let mut incident: Vec<usize> = ins.iter().chain(outs).copied().collect();
                incident.sort_unstable();
                incident.dedup();
                let all_times = times(g, &incident);
                let last = all_times.iter().max().copied().unwrap_or(rec.timestamp);
                row.extend([
                    unique_count(g, ins, |e| e.src) as f64,
                    unique_count(g, outs, |e| e.dst) as f64,
                    mean(btc(in_sats), ins.len()),
                    mean(btc(out_sats), outs.len()),
                    mean_interval(&times(g, ins)),
                    mean_interval(&times(g, outs)),
                    rec.parties().len() as f64,
                    (in_sats as i128 - out_sats as i128) as f64 / 1e8,
                    inc.clustering(v),
                    rec.timestamp as f64,
                    (last - rec.timestamp).max(0) as f64,
                ]);
            }
            row
        })
        .collect();
    let mut names: Vec<String> = TX_FEATURES.iter().map(|s| s.to_string()).collect();
    if extended {
        names.extend(TX_EXTENDED_FEATURES.iter().map(|s| s.to_string()));
    }
    FeatureMatrix::new(
        GraphKind::Transaction,
        names,
        g.nodes.clone(),
        rows.concat(),
    )
}

/// The clustering/scoring column set for a graph kind.
pub fn model_features(kind: GraphKind) -> &'static [&'static str] {
    match kind {
        GraphKind::User => &USER_FEATURES,
        GraphKind::Transaction => &TX_FEATURES,
    }
}

/// `log(1 + x)` per entry, then each column standardized to mean 0 and
/// population standard deviation 1. Constant columns become all zero.
/// Negative entries (only possible in extended balance columns) use the
/// odd extension `-log(1 + |x|)`.
pub fn normalize(m: &FeatureMatrix) -> FeatureMatrix {
    let (n, d) = (m.rows(), m.dims());
    let mut values: Vec<f64> = m
        .values()
        .iter()
        .map(|&x| x.signum() * x.abs().ln_1p())
        .collect();
    if n == 0 {
        return FeatureMatrix {
            values,
            ..m.clone()
        };
    }
    for j in 0..d {
        let mean = (0..n).map(|i| values[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| (values[i * d + j] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let sd = var.sqrt();
        let first = values[j];
        let constant = (0..n).all(|i| values[i * d + j] == first);
        for i in 0..n {
            let x = &mut values[i * d + j];
            *x = if constant || sd == 0.0 {
                0.0
            } else {
                (*x - mean) / sd
            };
        }
    }
    FeatureMatrix {
        values,
        ..m.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_tx_graph, build_user_graph};
    use crate::ledger::read_ledger;

    fn ledger(rows: &str) -> Vec<LedgerRecord> {
        read_ledger(format!("tx_id,timestamp,inputs,outputs\n{rows}").as_bytes()).unwrap()
    }

    fn user_row(m: &FeatureMatrix, id: u64) -> Vec<f64> {
        m.row(m.row_of(id).unwrap()).to_vec()
    }

    #[test]
    fn isolated_user_is_all_zero() {
        let g = build_user_graph(&ledger("1,10,,7:50.0\n"));
        let m = extract_user_features(&g, false).unwrap();
        assert_eq!(user_row(&m, 7), vec![0.0; 6]);
    }

    #[test]
    fn mean_in_value_is_arithmetic_mean() {
        let g = build_user_graph(&ledger(
            "1,10,,1:10.0\n2,20,1:1:2.0,2:2.0\n3,50,1:1:4.0,2:4.0\n",
        ));
        let m = extract_user_features(&g, false).unwrap();
        let r = user_row(&m, 2);
        assert_eq!(r[0], 2.0);
        assert_eq!(r[2], 3.0);
        assert_eq!(r[4], 30.0);
        let r1 = user_row(&m, 1);
        assert_eq!((r1[1], r1[3]), (2.0, 3.0));
    }

    #[test]
    fn triangle_has_unit_clustering() {
        let g = build_user_graph(&ledger(
            "1,1,,1:9.0;2:9.0;3:9.0\n2,2,1:1:1.0,2:1.0\n3,3,1:2:1.0,3:1.0\n4,4,1:3:1.0,1:1.0\n",
        ));
        let m = extract_user_features(&g, false).unwrap();
        for id in [1, 2, 3] {
            assert_eq!(user_row(&m, id)[5], 1.0);
        }
    }

    #[test]
    fn star_center_has_zero_clustering() {
        let g = build_user_graph(&ledger("1,1,,1:9.0\n2,2,1:1:3.0,2:1.0;3:1.0;4:1.0\n"));
        let m = extract_user_features(&g, false).unwrap();
        assert_eq!(user_row(&m, 1)[5], 0.0);
    }

    #[test]
    fn coinbase_tx_features() {
        let recs = ledger("1,10,,7:50.0\n");
        let m = extract_tx_features(&build_tx_graph(&recs), &recs, false).unwrap();
        assert_eq!(m.row(0), &[0.0, 0.0, 50.0]);
    }

    #[test]
    fn spending_tx_features() {
        let recs = ledger(
            "1,10,,4:30.0\n2,10,,9:20.0\n3,20,1:4:30.0;2:9:20.0,7:49.5;4:0.5\n4,30,3:7:49.5,8:49.5\n",
        );
        let m = extract_tx_features(&build_tx_graph(&recs), &recs, false).unwrap();
        assert_eq!(m.row(m.row_of(3).unwrap()), &[2.0, 1.0, 50.0]);
        // childless tx has out-degree 0
        assert_eq!(m.row(m.row_of(4).unwrap())[1], 0.0);
    }

    #[test]
    fn tx_missing_from_ledger_is_inconsistent() {
        let recs = ledger("1,10,,7:50.0\n2,20,1:7:1.0,8:1.0\n");
        let g = build_tx_graph(&recs);
        assert!(matches!(
            extract_tx_features(&g, &recs[1..], false),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn wrong_graph_kind_rejected() {
        let recs = ledger("1,10,,7:50.0\n");
        assert!(extract_user_features(&build_tx_graph(&recs), false).is_err());
    }

    #[test]
    fn extended_user_columns() {
        let recs =
            ledger("1,10,,1:10.0\n2,20,1:1:2.0,2:2.0\n3,50,1:1:4.0,2:4.0\n4,60,2:2:1.0,3:1.0\n");
        let m = extract_user_features(&build_user_graph(&recs), true).unwrap();
        assert_eq!(m.dims(), 13);
        let r = user_row(&m, 2);
        // unique in 1, unique out 1, in interval 30, out interval 0,
        // balance 6 - 1, created at 20, active 40
        assert_eq!(&r[6..], &[1.0, 1.0, 30.0, 0.0, 5.0, 20.0, 40.0]);
    }

    #[test]
    fn normalize_zero_column_stays_zero() {
        let m = FeatureMatrix::from_rows(&[vec![0.0], vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(normalize(&m).values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_two_point_column() {
        // log1p gives {0, 1}; population sd is 0.5 around mean 0.5
        let m = FeatureMatrix::from_rows(&[vec![0.0], vec![std::f64::consts::E - 1.0]]).unwrap();
        let z = normalize(&m);
        assert!((z.values()[0] + 1.0).abs() < 1e-12);
        assert!((z.values()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn table_roundtrip_preserves_kind() {
        let recs = ledger("1,10,,7:50.0\n2,20,1:7:1.0,8:1.0\n");
        let m = normalize(&extract_tx_features(&build_tx_graph(&recs), &recs, false).unwrap());
        let back =
            FeatureMatrix::from_table(&Table::parse(&m.to_table().to_text()).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
