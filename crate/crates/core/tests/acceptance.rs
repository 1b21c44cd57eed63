//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; the process exits non-zero
//! if any criterion fails.

mod common;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::panic;
use std::time::{Duration, Instant};

use common::*;
use ledgerlof::evaluate::{dual_metric, m_de};
use ledgerlof::features::{extract_user_features, model_features, normalize};
use ledgerlof::graph::{build_tx_graph, build_user_graph, GraphKind};
use ledgerlof::kmeans::{kmeans, kmeans_with, Init, KMeansConfig};
use ledgerlof::ledger::{read_ledger, write_ledger, Amount, LedgerRecord, TxInput, TxOutput};
use ledgerlof::lof::{score_all, score_map, NeighborQuery};
use ledgerlof::powerlaw::{
    degree_distribution_fit, densification_fit, Binning, DensificationSeries, Snapshot,
};
use ledgerlof::synth::{generate, AnomalyProfile, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lof_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        let dims = if inst % 2 == 0 { 3 } else { 6 };
        let k = if inst % 4 < 2 { 3 } else { 7 };
        let n = rng.random_range(60..=500);
        let mut rows = uniform_points(&mut rng, n, dims);
        // every fifth instance carries duplicate groups to exercise ties
        if inst % 5 == 4 {
            for g in 0..3 {
                let base = rows[g].clone();
                for _ in 0..k {
                    rows.push(base.clone());
                }
            }
            rows.truncate(500);
        }
        let m = matrix(&rows);
        let report = score_all(&m, &NeighborQuery::exact(k), 0).map_err(|e| e.to_string())?;
        let got = score_map(&report);
        let want = oracle_lof(&rows, k);
        for (i, w) in want.iter().enumerate() {
            let g = got[&(i as u64)];
            check(close(g, *w, 1e-9), || {
                format!(
                    "instance {inst} (n={}, d={dims}, k={k}) node {i}: {g} vs oracle {w}",
                    rows.len()
                )
            })?;
            if w.is_finite() {
                worst = worst.max((g - w).abs());
            }
        }
    }
    let took = start.elapsed();
    check(took < Duration::from_secs(10), || format!("took {took:?}"))?;
    Ok(format!(
        "20 instances, max |diff| {worst:.1e}, {:.2}s",
        took.as_secs_f64()
    ))
}

fn uniform_density_grid() -> Outcome {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for x in 0..20 {
        for y in 0..20 {
            rows.push(vec![x as f64, y as f64]);
        }
    }
    rows.push(vec![100.0, 100.0]);
    let far = rows.len() - 1;
    let m = matrix(&rows);
    let report = score_all(&m, &NeighborQuery::exact(7), 1).map_err(|e| e.to_string())?;
    let got = score_map(&report);
    let want = oracle_lof(&rows, 7);
    for (i, w) in want.iter().enumerate() {
        check(close(got[&(i as u64)], *w, 1e-9), || {
            format!("node {i}: {} vs oracle {w}", got[&(i as u64)])
        })?;
    }
    // LOF reads k-distances three hops out (neighbour, its neighbours, their
    // k-th neighbour), so interior means at least three steps from the edge
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for x in 3..17 {
        for y in 3..17 {
            let v = got[&((x * 20 + y) as u64)];
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    check(lo >= 0.95 && hi <= 1.05, || {
        format!("interior LOF range [{lo}, {hi}]")
    })?;
    let top = report.results[0];
    check(top.node_id == far as u64, || {
        format!("max LOF at node {}", top.node_id)
    })?;
    check(top.lof >= 2.0, || format!("far point LOF {}", top.lof))?;
    Ok(format!(
        "interior LOF in [{lo:.4}, {hi:.4}], far point LOF {:.2}",
        top.lof
    ))
}

fn cluster_restricted_exactness() -> Outcome {
    let radius = 1.0;
    let centres = vec![
        vec![0.0, 0.0, 0.0],
        vec![40.0, 0.0, 0.0],
        vec![0.0, 40.0, 0.0],
        vec![0.0, 0.0, 40.0],
    ];
    let rows = ball_blobs(77, &centres, 60, radius);
    let m = matrix(&rows);
    let c = kmeans_with(
        &m,
        &KMeansConfig {
            init: Init::FarthestPoint,
            ..KMeansConfig::new(4, 5)
        },
    )
    .map_err(|e| e.to_string())?;
    let exact = score_map(&score_all(&m, &NeighborQuery::exact(7), 0).map_err(|e| e.to_string())?);
    let restricted =
        score_all(&m, &NeighborQuery::cluster_restricted(7, &c), 0).map_err(|e| e.to_string())?;
    check(restricted.fallback_nodes.is_empty(), || {
        format!("{} fallback nodes", restricted.fallback_nodes.len())
    })?;
    let mut worst = 0.0f64;
    for r in &restricted.results {
        let e = exact[&r.node_id];
        worst = worst.max((r.lof - e).abs());
        check(close(r.lof, e, 1e-9), || {
            format!("node {}: restricted {} vs exact {e}", r.node_id, r.lof)
        })?;
    }
    Ok(format!("240 points in 4 blobs, max |diff| {worst:.1e}"))
}

const RECOVERY_THRESHOLD: f64 = 0.90;
const RECOVERY_TOLERANCE: f64 = 0.05;

fn planted_anomaly_recovery() -> Outcome {
    let start = Instant::now();
    let mut recalls = Vec::new();
    for seed in [1u64, 2, 3] {
        let cfg = SynthConfig {
            n_users: 50_000,
            n_tx: 200_000,
            anomaly_rate: 0.01,
            anomaly_profile: AnomalyProfile::ExtremeValue,
            seed,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).map_err(|e| e.to_string())?;
        let g = build_user_graph(&out.ledger);
        let raw = extract_user_features(&g, false).map_err(|e| e.to_string())?;
        let m = normalize(
            &raw.select(model_features(GraphKind::User))
                .map_err(|e| e.to_string())?,
        );
        let top = m.rows() / 100;
        let report = score_all(&m, &NeighborQuery::exact(7), top).map_err(|e| e.to_string())?;
        let flagged: HashSet<u64> = report.flagged().iter().map(|r| r.node_id).collect();
        let hits = out
            .labels
            .iter()
            .filter(|l| flagged.contains(&l.id))
            .count();
        recalls.push(hits as f64 / out.labels.len() as f64);
    }
    let took = start.elapsed();
    let floor = RECOVERY_THRESHOLD - RECOVERY_TOLERANCE;
    let shown: Vec<String> = recalls
        .iter()
        .map(|r| format!("{:.1}%", 100.0 * r))
        .collect();
    let detail = format!(
        "recall in top 1% over seeds 1-3: {} (need >= {:.0}%), {:.1}s",
        shown.join(", "),
        100.0 * floor,
        took.as_secs_f64()
    );
    check(recalls.iter().all(|&r| r >= floor), || detail.clone())?;
    check(took < Duration::from_secs(120), || detail.clone())?;
    Ok(detail)
}

fn power_law_recovery() -> Outcome {
    let out = generate(&SynthConfig {
        n_users: 50_000,
        n_tx: 200_000,
        anomaly_rate: 0.0,
        seed: 11,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let g = build_user_graph(&out.ledger);
    let raw = extract_user_features(&g, false).map_err(|e| e.to_string())?;
    let deg = raw.column_by_name("out_degree").unwrap();
    let gamma = degree_distribution_fit(&deg, Binning::default())
        .map_err(|e| e.to_string())?
        .exponent;
    check((gamma - 2.5).abs() <= 0.1, || format!("gamma {gamma}"))?;

    let series = DensificationSeries::from_ledger(&out.ledger, GraphKind::Transaction, 20);
    let alpha = densification_fit(&series)
        .map_err(|e| e.to_string())?
        .exponent;
    check((alpha - 1.3).abs() <= 0.05, || format!("alpha {alpha}"))?;

    let exact = DensificationSeries::new(vec![
        Snapshot {
            t: 1,
            nodes: 100,
            edges: 1_000,
        },
        Snapshot {
            t: 2,
            nodes: 10_000,
            edges: 1_000_000,
        },
        Snapshot {
            t: 3,
            nodes: 1_000_000,
            edges: 1_000_000_000,
        },
    ])
    .map_err(|e| e.to_string())?;
    let fit = densification_fit(&exact).map_err(|e| e.to_string())?;
    check((fit.exponent - 1.5).abs() <= 1e-12, || {
        format!("exact exponent {}", fit.exponent)
    })?;
    check((fit.r_squared - 1.0).abs() <= 1e-12, || {
        format!("exact r2 {}", fit.r_squared)
    })?;

    // P(k) proportional to k^-2 over k = 1..6, exact counts
    let mut values = Vec::new();
    for k in 1..=6u32 {
        for _ in 0..(3_600 / (k * k)) {
            values.push(k as f64);
        }
    }
    let law = degree_distribution_fit(&values, Binning::Exact).map_err(|e| e.to_string())?;
    check(
        (law.exponent - 2.0).abs() <= 1e-12 && (law.r_squared - 1.0).abs() <= 1e-12,
        || {
            format!(
                "k^-2 fixture exponent {} r2 {}",
                law.exponent, law.r_squared
            )
        },
    )?;
    Ok(format!(
        "gamma {gamma:.3}, alpha {alpha:.3}, exact law {:.12} (r2 {:.12})",
        fit.exponent, fit.r_squared
    ))
}

fn kmeans_properties() -> Outcome {
    let centres = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0]];
    let (rows, labels) = gaussian_blobs(9, &centres, 20, 0.3);
    let m = matrix(&rows);
    let c = kmeans(&m, 3, 0, 100).map_err(|e| e.to_string())?;
    let pur = purity(&c.assignments, &labels);
    check(pur == 1.0, || format!("purity {pur}"))?;

    let mut runs = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = uniform_points(&mut rng, 300, 4);
        let m = matrix(&data);
        for k in [2, 5, 9] {
            let a = kmeans(&m, k, seed, 100).map_err(|e| e.to_string())?;
            for w in a.objective_trace.windows(2) {
                check(w[1] <= w[0], || {
                    format!("seed {seed} k {k}: objective rose {} -> {}", w[0], w[1])
                })?;
            }
            let b = kmeans(&m, k, seed, 100).map_err(|e| e.to_string())?;
            let bits = |c: &ledgerlof::kmeans::Clustering| {
                let mut v: Vec<u64> = c.centroids.iter().flatten().map(|x| x.to_bits()).collect();
                v.push(c.wcss.to_bits());
                v.extend(c.objective_trace.iter().map(|x| x.to_bits()));
                v
            };
            check(a == b && bits(&a) == bits(&b), || {
                format!("seed {seed} k {k}: reruns differ")
            })?;
            runs += 1;
        }
    }
    Ok(format!(
        "purity 1.0 on 3 blobs, {runs} seeded runs monotone and reproducible"
    ))
}

fn rec(tx_id: u64, inputs: &[(Option<u64>, u64, u64)], outputs: &[(u64, u64)]) -> LedgerRecord {
    LedgerRecord {
        tx_id,
        timestamp: 1_000 + tx_id as i64,
        inputs: inputs
            .iter()
            .map(|&(src_tx_id, user_id, v)| TxInput {
                src_tx_id,
                user_id,
                value: Amount::from_sats(v),
            })
            .collect(),
        outputs: outputs
            .iter()
            .map(|&(user_id, v)| TxOutput {
                user_id,
                value: Amount::from_sats(v),
            })
            .collect(),
    }
}

fn dual_metric_arithmetic() -> Outcome {
    let v = m_de(0.72, 0.37);
    check((v - 0.545).abs() < 1e-15, || {
        format!("m_DE(0.72, 0.37) = {v}")
    })?;

    // 1, 2 coinbase to users 1, 2; 3: user 1 pays 3 and keeps change;
    // 4: user 2 pays 4; 5: users 3 and 4 pay 5
    let ledger = vec![
        rec(1, &[], &[(1, 50)]),
        rec(2, &[], &[(2, 50)]),
        rec(3, &[(Some(1), 1, 50)], &[(3, 30), (1, 20)]),
        rec(4, &[(Some(2), 2, 50)], &[(4, 50)]),
        rec(5, &[(Some(3), 3, 30), (Some(4), 4, 50)], &[(5, 80)]),
    ];
    // user 3 -> X_N = {3, 5}; tx head {5, 1} -> A1 = 1/2
    // tx 5 -> Y_M = {3, 4, 5}; user head {3, 5, 1} -> A2 = 2/3
    let d = dual_metric(&[3, 5, 1, 2, 4], &[5, 1, 3, 2, 4], &ledger, 1, 1)
        .map_err(|e| e.to_string())?;
    check(d.x_n == BTreeSet::from([3, 5]), || {
        format!("X_N {:?}", d.x_n)
    })?;
    check(d.y_m == BTreeSet::from([3, 4, 5]), || {
        format!("Y_M {:?}", d.y_m)
    })?;
    check(d.a1 == 0.5 && d.a2 == 2.0 / 3.0, || {
        format!("A1 {} A2 {}", d.a1, d.a2)
    })?;
    check(d.m_de == (0.5 + 2.0 / 3.0) / 2.0, || {
        format!("m_DE {}", d.m_de)
    })?;

    // coinciding outliers: user 1 <-> tx 3
    let p = dual_metric(&[1, 3, 2, 4, 5], &[3, 1, 2, 4, 5], &ledger, 1, 1)
        .map_err(|e| e.to_string())?;
    check(
        p.x_n == BTreeSet::from([1, 3]) && p.y_m == BTreeSet::from([1, 3]),
        || format!("X_N {:?} Y_M {:?}", p.x_n, p.y_m),
    )?;
    check(p.a1 == 1.0 && p.a2 == 1.0 && p.m_de == 1.0, || {
        format!("m_DE {}", p.m_de)
    })?;
    Ok(format!(
        "m_DE(0.72, 0.37) = {v}, 5-tx ledger A1 0.5 A2 2/3, coinciding sets m_DE 1"
    ))
}

fn pipeline_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fa = run_pipeline(a.path(), 3_000, 12_000, 5);
    let fb = run_pipeline(b.path(), 3_000, 12_000, 5);
    let rel = |root: &std::path::Path, v: &[std::path::PathBuf]| -> Vec<std::path::PathBuf> {
        v.iter()
            .map(|p| p.strip_prefix(root).unwrap().to_path_buf())
            .collect()
    };
    check(rel(a.path(), &fa) == rel(b.path(), &fb), || {
        "different file sets".into()
    })?;
    check(fa.len() >= 15, || format!("only {} TSVs", fa.len()))?;
    let mut extra = vec!["ledger.csv", "labels.txt", "eval.txt"]
        .into_iter()
        .map(std::path::PathBuf::from)
        .collect::<Vec<_>>();
    extra.extend(rel(a.path(), &fa));
    for r in &extra {
        let x = std::fs::read(a.path().join(r)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(r)).map_err(|e| e.to_string())?;
        check(x == y, || format!("{} differs", r.display()))?;
    }
    Ok(format!(
        "{} output files byte-identical across two runs",
        extra.len()
    ))
}

fn format_round_trip() -> Outcome {
    let mut checked = 0;
    for (seed, profile) in [
        (1, AnomalyProfile::ExtremeValue),
        (2, AnomalyProfile::RingCluster),
        (3, AnomalyProfile::BurstSender),
    ] {
        let out = generate(&SynthConfig {
            n_users: 2_000,
            n_tx: 8_000,
            anomaly_profile: profile,
            seed,
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_ledger(&mut buf, &out.ledger).map_err(|e| e.to_string())?;
        let back = read_ledger(buf.as_slice()).map_err(|e| e.to_string())?;
        check(back == out.ledger, || format!("{profile}: records differ"))?;
        for (a, b) in [
            (build_user_graph(&out.ledger), build_user_graph(&back)),
            (build_tx_graph(&out.ledger), build_tx_graph(&back)),
        ] {
            check(a.nodes == b.nodes, || {
                format!("{profile} {}: node sets differ", a.kind)
            })?;
            let mut ea: HashMap<_, usize> = HashMap::new();
            for e in &a.edges {
                *ea.entry(*e).or_default() += 1;
            }
            let mut eb: HashMap<_, usize> = HashMap::new();
            for e in &b.edges {
                *eb.entry(*e).or_default() += 1;
            }
            check(ea == eb && a == b, || {
                format!("{profile} {}: edges differ", a.kind)
            })?;
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} graphs rebuilt identically from written ledgers"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("LOF oracle equivalence", lof_oracle_equivalence),
        ("uniform-density sanity", uniform_density_grid),
        ("cluster-restricted exactness", cluster_restricted_exactness),
        ("planted-anomaly recovery", planted_anomaly_recovery),
        ("power-law recovery", power_law_recovery),
        ("k-means properties", kmeans_properties),
        ("dual metric arithmetic", dual_metric_arithmetic),
        ("pipeline determinism", pipeline_determinism),
        ("format round-trip", format_round_trip),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
