// Shared by several test targets; not every target uses every helper.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ledgerlof::features::FeatureMatrix;
use ledgerlof::graph::GraphKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
    FeatureMatrix::from_rows(rows).expect("rectangular rows")
}

pub fn matrix_with_ids(rows: &[Vec<f64>], ids: Vec<u64>) -> FeatureMatrix {
    let d = rows.first().map_or(0, Vec::len);
    FeatureMatrix::new(
        GraphKind::User,
        (0..d).map(|j| format!("f{j}")).collect(),
        ids,
        rows.concat(),
    )
    .expect("rectangular rows")
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Textbook O(n^2) LOF: full distance scan per point, ties included in the
/// neighborhood, lrd = +inf when every reachability distance is zero and
/// lof = 1 for such points.
pub fn oracle_lof(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = rows.len();
    let d2: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..n).map(|b| sq(&rows[a], &rows[b])).collect())
        .collect();
    let kd2: Vec<f64> = (0..n)
        .map(|a| {
            let mut ds: Vec<f64> = (0..n).filter(|&b| b != a).map(|b| d2[a][b]).collect();
            ds.sort_by(f64::total_cmp);
            ds[k - 1]
        })
        .collect();
    let hood: Vec<Vec<usize>> = (0..n)
        .map(|a| (0..n).filter(|&b| b != a && d2[a][b] <= kd2[a]).collect())
        .collect();
    let lrd: Vec<f64> = (0..n)
        .map(|a| {
            let s: f64 = hood[a]
                .iter()
                .map(|&b| kd2[b].sqrt().max(d2[a][b].sqrt()))
                .sum();
            if s == 0.0 {
                f64::INFINITY
            } else {
                hood[a].len() as f64 / s
            }
        })
        .collect();
    (0..n)
        .map(|a| {
            if lrd[a].is_infinite() {
                return 1.0;
            }
            let s: f64 = hood[a].iter().map(|&b| lrd[b]).sum();
            s / hood[a].len() as f64 / lrd[a]
        })
        .collect()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a.is_infinite() && a == b) || (a - b).abs() <= tol
}

pub fn uniform_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// `per` Gaussian points around each centre; returns rows and blob labels.
pub fn gaussian_blobs(
    seed: u64,
    centres: &[Vec<f64>],
    per: usize,
    sd: f64,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sd).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per {
            rows.push(centre.iter().map(|x| x + noise.sample(&mut rng)).collect());
            labels.push(c);
        }
    }
    (rows, labels)
}

/// Points drawn uniformly inside a ball of `radius` around each centre.
pub fn ball_blobs(seed: u64, centres: &[Vec<f64>], per: usize, radius: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for centre in centres {
        let d = centre.len();
        let mut made = 0;
        while made < per {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                rows.push(centre.iter().zip(&v).map(|(c, x)| c + radius * x).collect());
                made += 1;
            }
        }
    }
    rows
}

/// Fraction of points whose cluster holds only points of their own label.
pub fn purity(assign: &[usize], labels: &[usize]) -> f64 {
    let k = assign.iter().max().map_or(0, |m| m + 1);
    let mut hit = 0;
    for c in 0..k {
        let members: Vec<usize> = (0..assign.len()).filter(|&i| assign[i] == c).collect();
        let mut counts = std::collections::HashMap::new();
        for &i in &members {
            *counts.entry(labels[i]).or_insert(0usize) += 1;
        }
        hit += counts.values().max().copied().unwrap_or(0);
    }
    hit as f64 / assign.len() as f64
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ledgerlof")
}

pub fn run_cli<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawn ledgerlof")
}

pub fn ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

/// synth -> build -> features -> cluster -> lof -> eval -> powerlaw -> plot
/// into `dir`. Returns the paths of every TSV written.
pub fn run_pipeline(dir: &Path, n_users: usize, n_tx: usize, seed: u64) -> Vec<PathBuf> {
    let (nu, nt, sd) = (n_users.to_string(), n_tx.to_string(), seed.to_string());
    let ledger = p(dir, "ledger.csv");
    let labels = p(dir, "labels.txt");
    let graphs = p(dir, "graphs");
    let clusters = p(dir, "clusters");
    let steps: Vec<(&str, Vec<String>)> = vec![
        (
            "synth",
            vec![
                "synth".into(),
                "--n-users".into(),
                nu,
                "--n-tx".into(),
                nt,
                "--seed".into(),
                sd,
                "--out".into(),
                ledger.clone(),
                "--labels".into(),
                labels.clone(),
            ],
        ),
        (
            "build",
            vec![
                "build".into(),
                "--ledger".into(),
                ledger.clone(),
                "--out-dir".into(),
                graphs.clone(),
            ],
        ),
        (
            "features user",
            vec![
                "features".into(),
                "--graph-dir".into(),
                graphs.clone(),
                "--kind".into(),
                "user".into(),
                "--out".into(),
                p(dir, "user_features.tsv"),
            ],
        ),
        (
            "features tx",
            vec![
                "features".into(),
                "--graph-dir".into(),
                graphs.clone(),
                "--kind".into(),
                "tx".into(),
                "--ledger".into(),
                ledger.clone(),
                "--out".into(),
                p(dir, "tx_features.tsv"),
            ],
        ),
    ];
    let mut steps = steps;
    for kind in ["user", "tx"] {
        steps.push((
            "cluster",
            vec![
                "cluster".into(),
                "--features".into(),
                p(dir, &format!("{kind}_features.tsv")),
                "--select-k".into(),
                "2..10".into(),
                "--seed".into(),
                "3".into(),
                "--out-dir".into(),
                clusters.clone(),
            ],
        ));
        steps.push((
            "lof",
            vec![
                "lof".into(),
                "--features".into(),
                p(dir, &format!("{kind}_features.tsv")),
                "--mode".into(),
                "cluster".into(),
                "--cluster-dir".into(),
                clusters.clone(),
                "--out".into(),
                p(dir, &format!("{kind}_lof.tsv")),
            ],
        ));
    }
    steps.push((
        "eval",
        vec![
            "eval".into(),
            "--ledger".into(),
            ledger.clone(),
            "--user-lof".into(),
            p(dir, "user_lof.tsv"),
            "--tx-lof".into(),
            p(dir, "tx_lof.tsv"),
            "--user-features".into(),
            p(dir, "user_features.tsv"),
            "--tx-features".into(),
            p(dir, "tx_features.tsv"),
            "--cluster-dir".into(),
            clusters.clone(),
            "--labels".into(),
            labels.clone(),
            "--out".into(),
            p(dir, "eval.txt"),
        ],
    ));
    steps.push((
        "powerlaw densification",
        vec![
            "powerlaw".into(),
            "--quantity".into(),
            "densification".into(),
            "--ledger".into(),
            ledger.clone(),
            "--out".into(),
            p(dir, "densification.tsv"),
        ],
    ));
    steps.push((
        "powerlaw degree",
        vec![
            "powerlaw".into(),
            "--quantity".into(),
            "out_degree".into(),
            "--features".into(),
            p(dir, "user_features.tsv"),
            "--out".into(),
            p(dir, "out_degree_law.tsv"),
        ],
    ));
    steps.push((
        "plot powerlaw",
        vec![
            "plot".into(),
            "--input".into(),
            p(dir, "densification.tsv"),
            "--out".into(),
            p(dir, "densification_plot.tsv"),
        ],
    ));
    steps.push((
        "plot clusters",
        vec![
            "plot".into(),
            "--from".into(),
            "clusters".into(),
            "--features".into(),
            p(dir, "user_features.tsv"),
            "--cluster-dir".into(),
            clusters.clone(),
            "--out".into(),
            p(dir, "user_cluster_plot.tsv"),
        ],
    ));
    for (what, args) in &steps {
        ok(&run_cli(args), what);
    }
    let mut out = Vec::new();
    collect_tsv(dir, &mut out);
    out.sort();
    out
}

fn collect_tsv(dir: &Path, out: &mut Vec<PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            collect_tsv(&path, out);
        } else if path.extension().is_some_and(|x| x == "tsv") {
            out.push(path);
        }
    }
}
