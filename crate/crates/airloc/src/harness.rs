//! Query grouping, per-stage timing and whole-set evaluation.

use std::collections::BTreeMap;
use std::time::Instant;

use airloc_core::appearance::VladParams;
use airloc_core::eval::{self, EvalReport, PrSummary, StageLatencies};
use airloc_core::geometry::GeometryNet;
use airloc_core::reloc::{self, RelocConfig, RelocResult};
use airloc_core::{ObjectObservation, RoomDatabase};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// All observations of one query image.
#[derive(Clone, Debug)]
pub struct QueryGroup {
    pub image_id: String,
    pub observations: Vec<ObjectObservation>,
}

/// Groups observations by image id, in id order.
pub fn group_queries(observations: Vec<ObjectObservation>) -> Vec<QueryGroup> {
    let mut by_image: BTreeMap<String, Vec<ObjectObservation>> = BTreeMap::new();
    for o in observations {
        by_image.entry(o.image_id.clone()).or_default().push(o);
    }
    by_image
        .into_iter()
        .map(|(image_id, observations)| QueryGroup { image_id, observations })
        .collect()
}

/// Wall-clock milliseconds spent in each stage of one query. `geometry_ms`
/// is zero when the geometry stage did not run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimes {
    pub node_encoding_ms: f64,
    pub appearance_ms: f64,
    pub geometry_ms: f64,
    pub overall_ms: f64,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Runs one query stage by stage. The result is identical to
/// [`reloc::relocalize`] with the same arguments.
pub fn relocalize_timed(
    query: &[ObjectObservation],
    db: &RoomDatabase,
    vlad: &VladParams,
    geom: Option<&GeometryNet>,
    cfg: &RelocConfig,
) -> Result<(RelocResult, StageTimes)> {
    cfg.validate()?;
    let start = Instant::now();
    let encoded = reloc::encode_query(query, vlad)?;
    let node_encoding_ms = ms(start);

    let t = Instant::now();
    let appearance = reloc::appearance_stage(db, &encoded)?;
    let appearance_ms = ms(t);

    let mut geometry_ms = 0.0;
    let result = match geom {
        Some(net) if encoded.len() >= 2 && reloc::gate(&appearance, encoded.len(), cfg.t_diff) => {
            let t = Instant::now();
            let geometry = reloc::geometry_stage(db, &encoded, net)?;
            geometry_ms = ms(t);
            let fused = reloc::ensemble(&appearance, &geometry, cfg.w)?;
            RelocResult {
                ranked: reloc::rank(&fused),
                used_geometry: true,
                appearance_scores: appearance,
                geometry_scores: geometry,
            }
        }
        _ => RelocResult {
            ranked: reloc::rank(&appearance),
            used_geometry: false,
            appearance_scores: appearance,
            geometry_scores: BTreeMap::new(),
        },
    };
    let overall_ms = ms(start);
    Ok((
        result,
        StageTimes {
            node_encoding_ms,
            appearance_ms,
            geometry_ms,
            overall_ms,
        },
    ))
}

/// Stage means over `times`; geometry is averaged over the queries that
/// ran it.
pub fn mean_latencies(times: &[StageTimes], used_geometry: &[bool]) -> StageLatencies {
    let n = times.len().max(1) as f64;
    let mean = |f: fn(&StageTimes) -> f64| times.iter().map(f).sum::<f64>() / n;
    let geo: Vec<f64> = times
        .iter()
        .zip(used_geometry)
        .filter(|(_, &u)| u)
        .map(|(t, _)| t.geometry_ms)
        .collect();
    StageLatencies {
        node_encoding_ms: mean(|t| t.node_encoding_ms),
        appearance_ms: mean(|t| t.appearance_ms),
        geometry_ms: if geo.is_empty() {
            0.0
        } else {
            geo.iter().sum::<f64>() / geo.len() as f64
        },
        overall_ms: mean(|t| t.overall_ms),
    }
}

/// Runs every query once and returns per-stage mean latencies.
pub fn time_stages(
    db: &RoomDatabase,
    queries: &[QueryGroup],
    vlad: &VladParams,
    geom: Option<&GeometryNet>,
    cfg: &RelocConfig,
) -> Result<StageLatencies> {
    let mut times = Vec::with_capacity(queries.len());
    let mut used = Vec::with_capacity(queries.len());
    for q in queries {
        let (r, t) = relocalize_timed(&q.observations, db, vlad, geom, cfg)?;
        times.push(t);
        used.push(r.used_geometry);
    }
    Ok(mean_latencies(&times, &used))
}

/// One evaluated query.
#[derive(Clone, Debug)]
pub struct QueryOutcome {
    pub image_id: String,
    pub true_room: String,
    pub result: RelocResult,
    pub times: StageTimes,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub outcomes: Vec<QueryOutcome>,
}

/// Evaluates every query against `db`. Each query must have a label.
/// With `jobs > 1` queries run on a thread pool of that size; metrics do
/// not depend on `jobs`, latencies do.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    db: &RoomDatabase,
    queries: &[QueryGroup],
    labels: &BTreeMap<String, String>,
    vlad: &VladParams,
    geom: Option<&GeometryNet>,
    cfg: &RelocConfig,
    thresholds: &[f64],
    jobs: usize,
) -> Result<Evaluation> {
    if queries.is_empty() {
        return Err(Error::Core(airloc_core::Error::Empty("queries")));
    }
    let mut truths = Vec::with_capacity(queries.len());
    for q in queries {
        let t = labels
            .get(&q.image_id)
            .ok_or_else(|| Error::Mismatch(format!("query {} has no label", q.image_id)))?;
        truths.push(t.as_str());
    }
    let run = |(q, truth): (&QueryGroup, &&str)| -> Result<QueryOutcome> {
        let (result, times) = relocalize_timed(&q.observations, db, vlad, geom, cfg)?;
        Ok(QueryOutcome {
            image_id: q.image_id.clone(),
            true_room: truth.to_string(),
            result,
            times,
        })
    };
    let outcomes: Vec<QueryOutcome> = if jobs <= 1 {
        queries.iter().zip(&truths).map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start {jobs} worker threads: {e}")))?;
        pool.install(|| queries.par_iter().zip(truths.par_iter()).map(run).collect::<Result<_>>())?
    };

    let pairs: Vec<(RelocResult, &str)> = outcomes.iter().map(|o| (o.result.clone(), o.true_room.as_str())).collect();
    let accuracy = eval::accuracy(&pairs)?;
    let candidates: Vec<_> = outcomes
        .iter()
        .map(|o| eval::candidates_from_result(&o.result, &o.true_room))
        .collect();
    let pr: PrSummary = eval::pr_sweep(&candidates, thresholds)?;
    let times: Vec<StageTimes> = outcomes.iter().map(|o| o.times).collect();
    let used: Vec<bool> = outcomes.iter().map(|o| o.result.used_geometry).collect();
    let report = EvalReport {
        accuracy,
        pr,
        latencies: mean_latencies(&times, &used),
        queries: outcomes.len(),
        geometry_queries: used.iter().filter(|&&u| u).count(),
    };
    Ok(Evaluation { report, outcomes })
}
