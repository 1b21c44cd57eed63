use std::ffi::{CStr, CString};
use std::ptr;

use ledgerlof_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(llof_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn cfg() -> LlofSynthConfig {
    LlofSynthConfig {
        n_users: 300,
        n_tx: 1_500,
        degree_exponent: 2.5,
        densification_exponent: 1.3,
        anomaly_rate: 0.02,
        anomaly_profile: LlofAnomalyProfile::ExtremeValue,
        seed: 5,
    }
}

#[test]
fn synth_to_lof_through_handles() {
    unsafe {
        let mut ledger = ptr::null_mut();
        assert_eq!(llof_synth_generate(&cfg(), &mut ledger), LlofStatus::Ok);
        assert_eq!(llof_ledger_len(ledger), 1_500);
        assert_eq!(llof_ledger_label_count(ledger), 6);

        let mut graph = ptr::null_mut();
        assert_eq!(
            llof_graph_build(ledger, LlofGraphKind::User, &mut graph),
            LlofStatus::Ok
        );
        assert!(llof_graph_node_count(graph) <= 300);
        assert!(llof_graph_edge_count(graph) > 0);

        let mut raw = ptr::null_mut();
        assert_eq!(
            llof_features_extract(graph, ptr::null(), false, &mut raw),
            LlofStatus::Ok
        );
        assert_eq!(llof_features_dims(raw), 6);
        let mut model = ptr::null_mut();
        assert_eq!(llof_features_model(raw, false, &mut model), LlofStatus::Ok);

        let mut clustering = ptr::null_mut();
        assert_eq!(
            llof_kmeans(model, 4, 1, 100, &mut clustering),
            LlofStatus::Ok
        );
        assert_eq!(llof_clustering_k(clustering), 4);
        assert!(llof_clustering_wcss(clustering).is_finite());
        let mut a = 99usize;
        assert_eq!(
            llof_clustering_assignment(clustering, 0, &mut a),
            LlofStatus::Ok
        );
        assert!(a < 4);

        let mut exact = ptr::null_mut();
        assert_eq!(
            llof_lof_score(model, 7, ptr::null(), 10, &mut exact),
            LlofStatus::Ok
        );
        assert_eq!(llof_lof_len(exact), llof_features_rows(model));
        let (mut id0, mut s0, mut id1, mut s1) = (0u64, 0f64, 0u64, 0f64);
        assert_eq!(llof_lof_get(exact, 0, &mut id0, &mut s0), LlofStatus::Ok);
        assert_eq!(llof_lof_get(exact, 1, &mut id1, &mut s1), LlofStatus::Ok);
        assert!(s0 >= s1);

        let mut restricted = ptr::null_mut();
        assert_eq!(
            llof_lof_score(model, 7, clustering, 10, &mut restricted),
            LlofStatus::Ok
        );
        assert_eq!(llof_lof_len(restricted), llof_lof_len(exact));

        let mut txg = ptr::null_mut();
        assert_eq!(
            llof_graph_build(ledger, LlofGraphKind::Transaction, &mut txg),
            LlofStatus::Ok
        );
        let mut txf = ptr::null_mut();
        assert_eq!(
            llof_features_extract(txg, ptr::null(), false, &mut txf),
            LlofStatus::NullPointer
        );
        assert!(last_error().contains("ledger"));
        assert_eq!(
            llof_features_extract(txg, ledger, false, &mut txf),
            LlofStatus::Ok
        );
        let mut txm = ptr::null_mut();
        assert_eq!(llof_features_model(txf, false, &mut txm), LlofStatus::Ok);
        let mut txl = ptr::null_mut();
        assert_eq!(
            llof_lof_score(txm, 7, ptr::null(), 10, &mut txl),
            LlofStatus::Ok
        );
        let (mut a1, mut a2, mut m) = (0.0, 0.0, 0.0);
        assert_eq!(
            llof_dual_metric(exact, txl, ledger, 10, 10, &mut a1, &mut a2, &mut m),
            LlofStatus::Ok
        );
        assert!((0.0..=1.0).contains(&m));
        assert_eq!(m, llof_m_de(a1, a2));

        llof_lof_free(txl);
        llof_features_free(txm);
        llof_features_free(txf);
        llof_graph_free(txg);
        llof_lof_free(restricted);
        llof_lof_free(exact);
        llof_clustering_free(clustering);
        llof_features_free(model);
        llof_features_free(raw);
        llof_graph_free(graph);
        llof_ledger_free(ledger);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut ledger = ptr::null_mut();
        let missing = CString::new("/nonexistent/ledger.csv").unwrap();
        assert_eq!(
            llof_ledger_parse(missing.as_ptr(), &mut ledger),
            LlofStatus::Io
        );
        assert!(ledger.is_null());
        assert!(!last_error().is_empty());

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "tx_id,timestamp,inputs,outputs\n1,10,5:1:1.0,2:1.0\n").unwrap();
        let p = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(
            llof_ledger_parse(p.as_ptr(), &mut ledger),
            LlofStatus::Reference
        );

        let mut bad_cfg = cfg();
        bad_cfg.anomaly_rate = 0.5;
        assert_eq!(
            llof_synth_generate(&bad_cfg, &mut ledger),
            LlofStatus::Config
        );

        assert_eq!(
            llof_ledger_parse(ptr::null(), &mut ledger),
            LlofStatus::NullPointer
        );
        assert_eq!(
            llof_graph_build(ptr::null(), LlofGraphKind::User, ptr::null_mut()),
            LlofStatus::NullPointer
        );

        let values = [0.0, 0.0, 1.0, 1.0];
        let mut f = ptr::null_mut();
        assert_eq!(
            llof_features_from_values(values.as_ptr(), 2, 2, &mut f),
            LlofStatus::Ok
        );
        let mut c = ptr::null_mut();
        assert_eq!(llof_kmeans(f, 0, 1, 10, &mut c), LlofStatus::Infeasible);
        let mut v = 0.0;
        assert_eq!(
            llof_features_value(f, 5, 0, &mut v),
            LlofStatus::InvalidArgument
        );
        assert_eq!(llof_features_value(f, 1, 1, &mut v), LlofStatus::Ok);
        assert_eq!(v, 1.0);
        llof_features_free(f);

        // success clears the message
        assert_eq!(
            llof_features_from_values(values.as_ptr(), 2, 2, &mut f),
            LlofStatus::Ok
        );
        assert!(last_error().is_empty());
        llof_features_free(f);

        // freeing null is a no-op
        llof_ledger_free(ptr::null_mut());
        llof_graph_free(ptr::null_mut());
        llof_features_free(ptr::null_mut());
        llof_clustering_free(ptr::null_mut());
        llof_lof_free(ptr::null_mut());
    }
}

#[test]
fn files_round_trip() {
    unsafe {
        let dir = tempfile::tempdir().unwrap();
        let mut ledger = ptr::null_mut();
        assert_eq!(llof_synth_generate(&cfg(), &mut ledger), LlofStatus::Ok);
        let path = CString::new(dir.path().join("l.csv").to_str().unwrap()).unwrap();
        assert_eq!(llof_ledger_write(ledger, path.as_ptr()), LlofStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(llof_ledger_parse(path.as_ptr(), &mut back), LlofStatus::Ok);
        assert_eq!(llof_ledger_len(back), llof_ledger_len(ledger));

        let mut g = ptr::null_mut();
        assert_eq!(
            llof_graph_build(back, LlofGraphKind::Transaction, &mut g),
            LlofStatus::Ok
        );
        let d = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(llof_graph_write_tsv(g, d.as_ptr()), LlofStatus::Ok);
        let mut g2 = ptr::null_mut();
        assert_eq!(
            llof_graph_read_tsv(d.as_ptr(), LlofGraphKind::Transaction, &mut g2),
            LlofStatus::Ok
        );
        assert_eq!(llof_graph_node_count(g2), llof_graph_node_count(g));
        assert_eq!(llof_graph_edge_count(g2), llof_graph_edge_count(g));

        llof_graph_free(g2);
        llof_graph_free(g);
        llof_ledger_free(back);
        llof_ledger_free(ledger);
    }
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(llof_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
