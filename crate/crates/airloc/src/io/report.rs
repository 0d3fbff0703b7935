//! Evaluation outputs: the report document, a flat PR table and a timing
//! sidecar. The report holds no wall-clock values so that it is
//! reproducible byte for byte; latencies go to the sidecar.

use std::collections::BTreeMap;

use airloc_core::reloc::RelocConfig;
use serde::Serialize;

use super::{to_json_line, FORMAT_VERSION};
use crate::harness::Evaluation;

#[derive(Serialize)]
struct PrRow {
    rho: f64,
    precision: f64,
    recall: f64,
}

#[derive(Serialize, Default)]
struct RoomCounts {
    queries: usize,
    correct: usize,
}

#[derive(Serialize)]
struct ReportDoc {
    version: u32,
    w: f64,
    t_diff: f64,
    queries: usize,
    geometry_queries: usize,
    accuracy: f64,
    auc: f64,
    best_f1: f64,
    pr_points: Vec<PrRow>,
    per_room: BTreeMap<String, RoomCounts>,
}

pub fn serialize_report(ev: &Evaluation, cfg: &RelocConfig) -> Vec<u8> {
    let r = &ev.report;
    let mut per_room: BTreeMap<String, RoomCounts> = BTreeMap::new();
    for o in &ev.outcomes {
        let c = per_room.entry(o.true_room.clone()).or_default();
        c.queries += 1;
        if o.result.top() == Some(o.true_room.as_str()) {
            c.correct += 1;
        }
    }
    to_json_line(&ReportDoc {
        version: FORMAT_VERSION,
        w: cfg.w,
        t_diff: cfg.t_diff,
        queries: r.queries,
        geometry_queries: r.geometry_queries,
        accuracy: r.accuracy,
        auc: r.pr.auc,
        best_f1: r.pr.best_f1,
        pr_points: r
            .pr
            .points
            .iter()
            .map(|p| PrRow {
                rho: p.threshold,
                precision: p.precision,
                recall: p.recall,
            })
            .collect(),
        per_room,
    })
}

/// `rho,precision,recall` rows with a header.
pub fn serialize_pr_csv(ev: &Evaluation) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &ev.report.pr.points {
        w.serialize(PrRow {
            rho: p.threshold,
            precision: p.precision,
            recall: p.recall,
        })
        .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

#[derive(Serialize)]
struct TimingDoc {
    version: u32,
    jobs: usize,
    queries: usize,
    geometry_queries: usize,
    node_encoding_ms: f64,
    appearance_ms: f64,
    geometry_ms: f64,
    overall_ms: f64,
}

pub fn serialize_timing(ev: &Evaluation, jobs: usize) -> Vec<u8> {
    let l = &ev.report.latencies;
    to_json_line(&TimingDoc {
        version: FORMAT_VERSION,
        jobs,
        queries: ev.report.queries,
        geometry_queries: ev.report.geometry_queries,
        node_encoding_ms: l.node_encoding_ms,
        appearance_ms: l.appearance_ms,
        geometry_ms: l.geometry_ms,
        overall_ms: l.overall_ms,
    })
}
