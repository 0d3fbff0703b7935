//! Database construction, threshold-gated ensembling and the query path.
//!
//! A query runs in stages (encode, appearance, gate, geometry, rank) that
//! are public so callers can time them individually; [`relocalize`] chains
//! them.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::appearance::{encode_object, score_all_rooms_with, QueryEmbeddings, VladParams};
use crate::error::{Error, Result};
use crate::geometry::{geometric_feature, geometry_scores_for_embedding, room_geom_embedding_ordered, GeometryNet};
use crate::model::{
    merge_embeddings, merge_geometric, GeometricFeature, ObjectEmbedding, ObjectObservation, RoomDatabase,
    RoomRecord, StoredObject,
};

#[derive(Clone, Debug, PartialEq)]
pub struct RelocConfig {
    /// Weight of the appearance score in the ensemble.
    pub w: f64,
    /// Top-1/top-2 gap (on per-object appearance scores) below which the
    /// geometry pathway is consulted.
    pub t_diff: f64,
    pub k: usize,
}

impl Default for RelocConfig {
    fn default() -> Self {
        Self {
            w: 10.0,
            t_diff: 0.1,
            k: 1,
        }
    }
}

impl RelocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w >= 0.0) || !self.w.is_finite() {
            return Err(Error::InvalidConfig("w must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.t_diff) {
            return Err(Error::InvalidConfig("T_diff must lie in [0, 1]".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelocResult {
    /// Rooms by descending final score, ties by room id.
    pub ranked: Vec<(String, f64)>,
    pub used_geometry: bool,
    pub appearance_scores: BTreeMap<String, f64>,
    /// Empty unless the geometry pathway ran.
    pub geometry_scores: BTreeMap<String, f64>,
}

impl RelocResult {
    pub fn top(&self) -> Option<&str> {
        self.ranked.first().map(|(r, _)| r.as_str())
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// `k` of `n` indices at uniform stride starting from `phase`, wrapping
/// around, returned sorted. Every selection contains `phase`.
pub fn stride_indices(n: usize, k: usize, phase: usize) -> Vec<usize> {
    debug_assert!(k >= 1 && k <= n && phase < n);
    let mut idx: Vec<usize> = (0..k).map(|i| (phase + i * n / k) % n).collect();
    idx.sort_unstable();
    idx
}

type Grouped<'a> = BTreeMap<&'a str, BTreeMap<&'a str, Vec<&'a ObjectObservation>>>;

fn group_by_room(observations: &[ObjectObservation]) -> Grouped<'_> {
    let mut rooms: Grouped<'_> = BTreeMap::new();
    for o in observations {
        rooms
            .entry(o.room_id.as_str())
            .or_default()
            .entry(o.image_id.as_str())
            .or_default()
            .push(o);
    }
    rooms
}

/// Builds the per-room object database from `k` images per room.
///
/// Images are taken at uniform stride over the id-sorted image list with a
/// seed-dependent phase. Each object's per-image embeddings and geometric
/// features are averaged; rooms with two or more objects get a geometry
/// embedding when `geom` is given.
pub fn build_database(
    observations: &[ObjectObservation],
    k: usize,
    vlad: &VladParams,
    geom: Option<&GeometryNet>,
    seed: u64,
    fingerprint: &str,
) -> Result<RoomDatabase> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    let first = observations.first().ok_or(Error::Empty("observations"))?;
    if let Some(o) = observations.iter().find(|o| o.scene_id != first.scene_id) {
        return Err(Error::InvalidConfig(alloc::format!(
            "observations mix scenes {} and {}",
            first.scene_id,
            o.scene_id
        )));
    }
    crate::model::check_unique_objects(observations)?;

    let mut rooms = Vec::new();
    for (room_id, images) in group_by_room(observations) {
        let n = images.len();
        if n < k {
            return Err(Error::InsufficientImages {
                room: room_id.to_string(),
                available: n,
                k,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(room_id));
        let phase = rng.random_range(0..n);
        let image_list: Vec<&Vec<&ObjectObservation>> = images.values().collect();

        let mut per_object: BTreeMap<&str, (Vec<ObjectEmbedding>, Vec<GeometricFeature>)> = BTreeMap::new();
        for idx in stride_indices(n, k, phase) {
            for o in image_list[idx] {
                let entry = per_object.entry(o.object_id.as_str()).or_default();
                entry.0.push(encode_object(&o.keypoints, vlad)?);
                entry.1.push(geometric_feature(&o.keypoints));
            }
        }
        let mut stored = Vec::with_capacity(per_object.len());
        for (id, (embs, geoms)) in per_object {
            stored.push(StoredObject {
                object_id: id.to_string(),
                embedding: merge_embeddings(&embs)?,
                geom: merge_geometric(&geoms)?,
                support: embs.len() as u32,
            });
        }
        let geom_embedding = match geom {
            Some(net) if stored.len() >= 2 => {
                let geoms: Vec<GeometricFeature> = stored.iter().map(|s| s.geom).collect();
                Some(room_geom_embedding_ordered(&geoms, net)?)
            }
            _ => None,
        };
        rooms.push(RoomRecord::new(room_id, stored, geom_embedding)?);
    }
    RoomDatabase::new(first.scene_id.clone(), k, rooms, fingerprint)
}

/// A query's objects after encoding and cross-image merging, in object-id
/// order.
#[derive(Clone, Debug)]
pub struct EncodedQuery {
    pub object_ids: Vec<String>,
    pub embeddings: Vec<ObjectEmbedding>,
    pub geoms: Vec<GeometricFeature>,
    stacked: QueryEmbeddings,
}

impl EncodedQuery {
    pub fn len(&self) -> usize {
        self.object_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.object_ids.is_empty()
    }
}

/// Node-encoding stage: encode every observation and merge per object id.
pub fn encode_query(query: &[ObjectObservation], vlad: &VladParams) -> Result<EncodedQuery> {
    if query.is_empty() {
        return Err(Error::Empty("query observations"));
    }
    let mut per_object: BTreeMap<&str, (Vec<ObjectEmbedding>, Vec<GeometricFeature>)> = BTreeMap::new();
    for o in query {
        let e = per_object.entry(o.object_id.as_str()).or_default();
        e.0.push(encode_object(&o.keypoints, vlad)?);
        e.1.push(geometric_feature(&o.keypoints));
    }
    let mut object_ids = Vec::new();
    let mut embeddings = Vec::new();
    let mut geoms = Vec::new();
    for (id, (embs, gs)) in per_object {
        object_ids.push(id.to_string());
        embeddings.push(merge_embeddings(&embs)?);
        geoms.push(merge_geometric(&gs)?);
    }
    let stacked = QueryEmbeddings::new(&embeddings)?;
    Ok(EncodedQuery {
        object_ids,
        embeddings,
        geoms,
        stacked,
    })
}

pub fn appearance_stage(db: &RoomDatabase, query: &EncodedQuery) -> Result<BTreeMap<String, f64>> {
    score_all_rooms_with(db, &query.stacked)
}

/// Gating rule on per-object (divided by Z) appearance scores: consult
/// geometry when the top-1/top-2 gap is below `t_diff`. `t_diff >= 1`
/// always consults it.
pub fn needs_geometry(top1: f64, top2: f64, t_diff: f64) -> bool {
    t_diff >= 1.0 || top1 - top2 < t_diff
}

/// Applies the gate to a full appearance score map for a query of `z`
/// objects. Fewer than two rankable rooms never gate.
pub fn gate(appearance: &BTreeMap<String, f64>, z: usize, t_diff: f64) -> bool {
    let mut finite: Vec<f64> = appearance.values().copied().filter(|s| s.is_finite()).collect();
    if finite.len() < 2 || z == 0 {
        return false;
    }
    finite.sort_by(|a, b| b.total_cmp(a));
    let zf = z as f64;
    needs_geometry(finite[0] / zf, finite[1] / zf, t_diff)
}

/// Geometry stage: embed the query layout and score every room.
pub fn geometry_stage(db: &RoomDatabase, query: &EncodedQuery, net: &GeometryNet) -> Result<BTreeMap<String, f64>> {
    let r = room_geom_embedding_ordered(&query.geoms, net)?;
    Ok(geometry_scores_for_embedding(db, &r))
}

/// `w * appearance + geometry`, per room.
pub fn ensemble(
    appearance: &BTreeMap<String, f64>,
    geometry: &BTreeMap<String, f64>,
    w: f64,
) -> Result<BTreeMap<String, f64>> {
    if appearance.len() != geometry.len() || appearance.keys().zip(geometry.keys()).any(|(a, b)| a != b) {
        return Err(Error::KeyMismatch);
    }
    Ok(appearance
        .iter()
        .zip(geometry.values())
        .map(|((room, &a), &g)| (room.clone(), w * a + g))
        .collect())
}

/// Descending by score, ties by room id; non-finite scores are dropped.
pub fn rank(scores: &BTreeMap<String, f64>) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = scores
        .iter()
        .filter(|(_, s)| s.is_finite())
        .map(|(r, &s)| (r.clone(), s))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Outcome of the gate plus geometry stages, given appearance scores.
pub fn finish(
    db: &RoomDatabase,
    query: &EncodedQuery,
    appearance: BTreeMap<String, f64>,
    geom: Option<&GeometryNet>,
    cfg: &RelocConfig,
) -> Result<RelocResult> {
    let gated = gate(&appearance, query.len(), cfg.t_diff);
    match geom {
        Some(net) if gated && query.len() >= 2 => {
            let geometry = geometry_stage(db, query, net)?;
            let fused = ensemble(&appearance, &geometry, cfg.w)?;
            Ok(RelocResult {
                ranked: rank(&fused),
                used_geometry: true,
                appearance_scores: appearance,
                geometry_scores: geometry,
            })
        }
        _ => Ok(RelocResult {
            ranked: rank(&appearance),
            used_geometry: false,
            appearance_scores: appearance,
            geometry_scores: BTreeMap::new(),
        }),
    }
}

/// End-to-end query against a database. Without `geom` the geometry pathway
/// is disabled.
pub fn relocalize(
    query: &[ObjectObservation],
    db: &RoomDatabase,
    vlad: &VladParams,
    geom: Option<&GeometryNet>,
    cfg: &RelocConfig,
) -> Result<RelocResult> {
    cfg.validate()?;
    let encoded = encode_query(query, vlad)?;
    let appearance = appearance_stage(db, &encoded)?;
    finish(db, &encoded, appearance, geom, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn ensemble_weighted_sum() {
        let out = ensemble(&map(&[("a", 0.5)]), &map(&[("a", 0.3)]), 10.0).unwrap();
        assert!((out["a"] - 5.3).abs() < 1e-12);
        let g = map(&[("a", 0.3), ("b", -0.2)]);
        assert_eq!(ensemble(&map(&[("a", 7.0), ("b", 1.0)]), &g, 0.0).unwrap(), g);
        assert_eq!(ensemble(&map(&[("a", 1.0)]), &map(&[("b", 1.0)]), 1.0), Err(Error::KeyMismatch));
    }

    #[test]
    fn gating_examples() {
        assert!(!needs_geometry(0.95, 0.70, 0.1));
        assert!(needs_geometry(0.62, 0.58, 0.1));
        assert!(!needs_geometry(0.62, 0.58, 0.0));
        assert!(needs_geometry(1.0, 0.0, 1.0));
    }

    #[test]
    fn gate_normalizes_by_query_size() {
        // raw gap 0.3 over 5 objects is 0.06 per object
        let a = map(&[("a", 4.0), ("b", 3.7), ("c", f64::NEG_INFINITY)]);
        assert!(gate(&a, 5, 0.1));
        assert!(!gate(&a, 1, 0.1));
        assert!(!gate(&map(&[("a", 1.0)]), 3, 1.0));
    }

    #[test]
    fn ranking_breaks_ties_by_id_and_drops_empty_rooms() {
        let r = rank(&map(&[("b", 1.0), ("a", 1.0), ("c", 2.0), ("d", f64::NEG_INFINITY)]));
        let ids: Vec<&str> = r.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn stride_selection() {
        assert_eq!(stride_indices(5, 5, 3), vec![0, 1, 2, 3, 4]);
        assert_eq!(stride_indices(10, 2, 0), vec![0, 5]);
        assert_eq!(stride_indices(10, 2, 7), vec![2, 7]);
        for phase in 0..7 {
            for k in 1..=7 {
                let idx = stride_indices(7, k, phase);
                assert_eq!(idx.len(), k);
                assert!(idx.windows(2).all(|w| w[0] < w[1]) && *idx.last().unwrap() < 7);
                assert!(idx.contains(&phase));
            }
        }
        // doubling K keeps the previous selection
        let small = stride_indices(12, 3, 5);
        let large = stride_indices(12, 6, 5);
        assert!(small.iter().all(|i| large.contains(i)));
    }

    #[test]
    fn config_validation() {
        assert!(RelocConfig::default().validate().is_ok());
        assert!(RelocConfig { w: -1.0, ..Default::default() }.validate().is_err());
        assert!(RelocConfig { t_diff: 1.5, ..Default::default() }.validate().is_err());
    }
}
