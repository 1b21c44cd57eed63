//! C ABI over `ledgerlof`.
//!
//! Objects are opaque handles created by `llof_*` constructors and released
//! with the matching `llof_*_free`. Every fallible call returns an
//! `LlofStatus`; on failure `llof_last_error_message` describes the error
//! for the calling thread. Handles are not thread-safe to mutate, but none of
//! the functions here mutate a handle after creation.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ledgerlof::cli::model_matrix;
use ledgerlof::evaluate;
use ledgerlof::features::{self, FeatureMatrix};
use ledgerlof::graph::{self, GraphKind, NodeGraph};
use ledgerlof::kmeans::{self, Clustering};
use ledgerlof::ledger::{self, LedgerRecord};
use ledgerlof::lof::{self, LofReport, NeighborQuery};
use ledgerlof::synth::{self, AnomalyProfile, SynthConfig};
use ledgerlof::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlofStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Reference = 5,
    Consistency = 6,
    InsufficientData = 7,
    Degenerate = 8,
    Infeasible = 9,
    UnknownNode = 10,
    Domain = 11,
    Undefined = 12,
    Config = 13,
    Format = 14,
    Panic = 15,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlofGraphKind {
    User = 0,
    Transaction = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlofAnomalyProfile {
    ExtremeValue = 0,
    RingCluster = 1,
    BurstSender = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LlofSynthConfig {
    pub n_users: usize,
    pub n_tx: usize,
    pub degree_exponent: f64,
    pub densification_exponent: f64,
    pub anomaly_rate: f64,
    pub anomaly_profile: LlofAnomalyProfile,
    pub seed: u64,
}

pub struct LlofLedger {
    records: Vec<LedgerRecord>,
    labels: Vec<u64>,
}

pub struct LlofGraph(NodeGraph);

pub struct LlofFeatures(FeatureMatrix);

pub struct LlofClustering(Clustering);

pub struct LlofLofResult(LofReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> LlofStatus {
    match e {
        Error::Io { .. } => LlofStatus::Io,
        Error::Parse { .. } => LlofStatus::Parse,
        Error::Reference { .. } => LlofStatus::Reference,
        Error::Consistency(_) => LlofStatus::Consistency,
        Error::InsufficientData(_) => LlofStatus::InsufficientData,
        Error::Degenerate(_) => LlofStatus::Degenerate,
        Error::Infeasible(_) => LlofStatus::Infeasible,
        Error::UnknownNode(_) => LlofStatus::UnknownNode,
        Error::Domain(_) => LlofStatus::Domain,
        Error::Undefined(_) => LlofStatus::Undefined,
        Error::Config(_) => LlofStatus::Config,
        Error::Format(_) => LlofStatus::Format,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LlofStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LlofStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            LlofStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(&msg);
            LlofStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            LlofStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn write<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    unsafe { *out = value };
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn kind_of(k: LlofGraphKind) -> GraphKind {
    match k {
        LlofGraphKind::User => GraphKind::User,
        LlofGraphKind::Transaction => GraphKind::Transaction,
    }
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next `llof_*` call on the thread.
#[no_mangle]
pub extern "C" fn llof_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static string.
#[no_mangle]
pub extern "C" fn llof_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a ledger CSV file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn llof_ledger_parse(
    path: *const c_char,
    out: *mut *mut LlofLedger,
) -> LlofStatus {
    guard(|| {
        let path = path_arg(path)?;
        let records = ledger::parse_ledger(path)?;
        put(
            out,
            LlofLedger {
                records,
                labels: Vec::new(),
            },
        )
    })
}

/// Generates a synthetic ledger; planted user ids are available through
/// `llof_ledger_label_count` and `llof_ledger_label`.
///
/// # Safety
/// `cfg` must point to a valid config; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn llof_synth_generate(
    cfg: *const LlofSynthConfig,
    out: *mut *mut LlofLedger,
) -> LlofStatus {
    guard(|| {
        let c = deref(cfg, "cfg")?;
        let profile = match c.anomaly_profile {
            LlofAnomalyProfile::ExtremeValue => AnomalyProfile::ExtremeValue,
            LlofAnomalyProfile::RingCluster => AnomalyProfile::RingCluster,
            LlofAnomalyProfile::BurstSender => AnomalyProfile::BurstSender,
        };
        let generated = synth::generate(&SynthConfig {
            n_users: c.n_users,
            n_tx: c.n_tx,
            degree_exponent: c.degree_exponent,
            densification_exponent: c.densification_exponent,
            anomaly_rate: c.anomaly_rate,
            anomaly_profile: profile,
            seed: c.seed,
        })?;
        put(
            out,
            LlofLedger {
                records: generated.ledger,
                labels: generated.labels.iter().map(|l| l.id).collect(),
            },
        )
    })
}

/// Writes the ledger as CSV.
///
/// # Safety
/// `ledger` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn llof_ledger_write(
    ledger: *const LlofLedger,
    path: *const c_char,
) -> LlofStatus {
    guard(|| {
        let l = deref(ledger, "ledger")?;
        let path = path_arg(path)?;
        let mut buf = Vec::new();
        ledger::write_ledger(&mut buf, &l.records)?;
        ledgerlof::tsv::write_atomic(path, &buf)?;
        Ok(())
    })
}

/// Number of records; 0 for a null handle.
///
/// # Safety
/// `ledger` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn llof_ledger_len(ledger: *const LlofLedger) -> usize {
    ledger.as_ref().map_or(0, |l| l.records.len())
}

/// Number of planted labels (0 for parsed ledgers).
///
/// # Safety
/// `ledger` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn llof_ledger_label_count(ledger: *const LlofLedger) -> usize {
    ledger.as_ref().map_or(0, |l| l.labels.len())
}

/// # Safety
/// `ledger` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn llof_ledger_label(
    ledger: *const LlofLedger,
    index: usize,
    out: *mut u64,
) -> LlofStatus {
    guard(|| {
        let l = deref(ledger, "ledger")?;
        let id = *l
            .labels
            .get(index)
            .ok_or_else(|| Fail::Arg(format!("label index {index} out of range")))?;
        write(out, id)
    })
}

/// # Safety
/// `ledger` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn llof_ledger_free(ledger: *mut LlofLedger) {
    if !ledger.is_null() {
        drop(Box::from_raw(ledger));
    }
}

/// Builds the user or transaction graph of a ledger.
///
/// # Safety
/// `ledger` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn llof_graph_build(
    ledger: *const LlofLedger,
    kind: LlofGraphKind,
    out: *mut *mut LlofGraph,
) -> LlofStatus {
    guard(|| {
        let l = deref(ledger, "ledger")?;
        let g = match kind {
            LlofGraphKind::User => graph::build_user_graph(&l.records),
            LlofGraphKind::Transaction => graph::build_tx_graph(&l.records),
        };
        put(out, LlofGraph(g))
    })
}

/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn llof_graph_node_count(graph: *const LlofGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.node_count())
}

/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn llof_graph_edge_count(graph: *const LlofGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.edge_count())
}

/// Writes `<kind>_nodes.tsv` and `<kind>_edges.tsv` into `dir`.
///
/// # Safety
/// `graph` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn llof_graph_write_tsv(
    graph: *const LlofGraph,
    dir: *const c_char,
) -> LlofStatus {
    guard(|| {
        let g = deref(graph, "graph")?;
        let dir = path_arg(dir)?;
        g.0.write_tsv(dir)?;
        Ok(())
    })
}

/// Reads a graph written by `llof_graph_write_tsv` or the `build` command.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn llof_graph_read_tsv(
    dir: *const c_char,
    kind: LlofGraphKind,
    out: *mut *mut LlofGraph,
) -> LlofStatus {
    guard(|| {
        let dir = path_arg(dir)?;
        put(out, LlofGraph(NodeGraph::read_tsv(dir, kind_of(kind))?))
    })
}

/// # Safety
/// `graph` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn llof_graph_free(graph: *mut LlofGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Raw per-node features. Transaction graphs need the ledger; user graphs
/// accept a null ledger.
///
/// # Safety
/// `graph` must be a live handle, `ledger` null or live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn llof_features_extract(
    graph: *const LlofGraph,
    ledger: *const LlofLedger,
    extended: bool,
    out: *mut *mut LlofFeatures,
) -> LlofStatus {
    guard(|| {
        let g = deref(graph, "graph")?;
        let m = match g.0.kind {
            GraphKind::User => features::extract_user_features(&g.0, extended)?,
            GraphKind::Transaction => {
                let l = deref(ledger, "ledger")?;
                features::extract_tx_features(&g.0, &l.records, extended)?
            }
        };
        put(out, LlofFeatures(m))
    })
}

/// The matrix used for clustering and scoring: model columns (or all
/// columns), log-transformed and standardized.
///
/// # Safety
/// `raw` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn llof_features_model(
    raw: *const LlofFeatures,
    all_columns: bool,
    out: *mut *mut LlofFeatures,
) -> LlofStatus {
    guard(|| {
        let m = deref(raw, "features")?;
        put(out, LlofFeatures(model_matrix(&m.0, all_columns)?))
    })
}

/// Builds a matrix from `rows * dims` row-major values; node ids are
/// `0..rows`.
///
/// # Safety
/// `values` must point to `rows * dims` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn llof_features_from_values(
    values: *const f64,
    rows: usize,
    dims: usize,
    out: *mut *mut LlofFeatures,
) -> LlofStatus {
    guard(|| {
        let len = rows
            .checked_mul(dims)
            .ok_or_else(|| Fail::Arg("rows * dims overflows".into()))?;
        if values.is_null() && len > 0 {
            return Err(Fail::Null("values"));
        }
        let data: &[f64] = if len == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(values, len)
        };
        let row_vecs: Vec<Vec<f64>> = if dims == 0 {
            vec![Vec::new(); rows]
        } else {
            data.chunks(dims).map(<[f64]>::to_vec).collect()
        };
        put(out, LlofFeatures(FeatureMatrix::from_rows(&row_vecs)?))
    })
}

/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn llof_features_rows(f: *const LlofFeatures) -> usize {
    f.as_ref().map_or(0, |m| m.0.rows())
}

/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn llof_features_dims(f: *const LlofFeatures) -> usize {
    f.as_ref().map_or(0, |m| m.0.dims())
}

/// # Safety
/// `f` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn llof_features_value(
    f: *const LlofFeatures,
    row: usize,
    col: usize,
    out: *mut f64,
) -> LlofStatus {
    guard(|| {
        let m = &deref(f, "features")?.0;
        if row >= m.rows() || col >= m.dims() {
            return Err(Fail::Arg(format!("cell ({row}, {col}) out of range")));
        }
        write(out, m.row(row)[col])
    })
}

/// # Safety
/// `f` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn llof_features_node_id(
    f: *const LlofFeatures,
    row: usize,
    out: *mut u64,
) -> LlofStatus {
    guard(|| {
        let m = &deref(f, "features")?.0;
        let id = *m
            .node_ids
            .get(row)
            .ok_or_else(|| Fail::Arg(format!("row {row} out of range")))?;
        write(out, id)
    })
}

/// # Safety
/// `f` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn llof_features_free(f: *mut LlofFeatures) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Lloyd k-means with seeded random initialization.
///
/// # Safety
/// `f` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn llof_kmeans(
    f: *const LlofFeatures,
    k: usize,
    seed: u64,
    max_iter: usize,
    out: *mut *mut LlofClustering,
) -> LlofStatus {
    guard(|| {
        let m = deref(f, "features")?;
        put(
            out,
            LlofClustering(kmeans::kmeans(&m.0, k, seed, max_iter)?),
        )
    })
}

/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn llof_clustering_k(c: *const LlofClustering) -> usize {
    c.as_ref().map_or(0, |c| c.0.k)
}

/// Within-cluster sum of squares; NaN for a null handle.
///
/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn llof_clustering_wcss(c: *const LlofClustering) -> f64 {
    c.as_ref().map_or(f64::NAN, |c| c.0.wcss)
}

/// Cluster of the `row`-th node of the clustered matrix.
///
/// # Safety
/// `c` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn llof_clustering_assignment(
    c: *const LlofClustering,
    row: usize,
    out: *mut usize,
) -> LlofStatus {
    guard(|| {
        let c = &deref(c, "clustering")?.0;
        let a = *c
            .assignments
            .get(row)
            .ok_or_else(|| Fail::Arg(format!("row {row} out of range")))?;
        write(out, a)
    })
}

/// # Safety
/// `c` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn llof_clustering_free(c: *mut LlofClustering) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Scores every node. With a null `clustering` neighbors are exact;
/// otherwise they are searched within each node's cluster.
///
/// # Safety
/// `f` must be a live handle, `clustering` null or live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn llof_lof_score(
    f: *const LlofFeatures,
    k_neighbors: usize,
    clustering: *const LlofClustering,
    top_n: usize,
    out: *mut *mut LlofLofResult,
) -> LlofStatus {
    guard(|| {
        let m = deref(f, "features")?;
        let q = match clustering.as_ref() {
            None => NeighborQuery::exact(k_neighbors),
            Some(c) => NeighborQuery::cluster_restricted(k_neighbors, &c.0),
        };
        put(out, LlofLofResult(lof::score_all(&m.0, &q, top_n)?))
    })
}

/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn llof_lof_len(r: *const LlofLofResult) -> usize {
    r.as_ref().map_or(0, |r| r.0.results.len())
}

/// Node id and score at 0-based `rank_index` (0 is the strongest outlier).
///
/// # Safety
/// `r` must be a live handle; `node_id` and `score` writable.
#[no_mangle]
pub unsafe extern "C" fn llof_lof_get(
    r: *const LlofLofResult,
    rank_index: usize,
    node_id: *mut u64,
    score: *mut f64,
) -> LlofStatus {
    guard(|| {
        let r = &deref(r, "lof result")?.0;
        let x = r
            .results
            .get(rank_index)
            .ok_or_else(|| Fail::Arg(format!("rank index {rank_index} out of range")))?;
        write(node_id, x.node_id)?;
        write(score, x.lof)
    })
}

/// Writes the ranked scores as the `lof` command does.
///
/// # Safety
/// `r` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn llof_lof_write_tsv(
    r: *const LlofLofResult,
    path: *const c_char,
) -> LlofStatus {
    guard(|| {
        let r = deref(r, "lof result")?;
        let path = path_arg(path)?;
        r.0.write_tsv(path)?;
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn llof_lof_free(r: *mut LlofLofResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Dual evaluation metric `(a1 + a2) / 2`.
#[no_mangle]
pub extern "C" fn llof_m_de(a1: f64, a2: f64) -> f64 {
    evaluate::m_de(a1, a2)
}

/// Dual metric of a user ranking and a transaction ranking against a
/// ledger. Writes A1, A2 and m_DE.
///
/// # Safety
/// `users` and `txs` must be live handles scored on the user and
/// transaction graphs of `ledger`; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn llof_dual_metric(
    users: *const LlofLofResult,
    txs: *const LlofLofResult,
    ledger: *const LlofLedger,
    n: usize,
    m: usize,
    a1: *mut f64,
    a2: *mut f64,
    m_de: *mut f64,
) -> LlofStatus {
    guard(|| {
        let u = deref(users, "users")?.0.ranked_ids();
        let t = deref(txs, "txs")?.0.ranked_ids();
        let l = deref(ledger, "ledger")?;
        let d = evaluate::dual_metric(&u, &t, &l.records, n, m)?;
        write(a1, d.a1)?;
        write(a2, d.a2)?;
        write(m_de, d.m_de)
    })
}
