//! The built room database as one JSON document.
//!
//! Besides the rooms it records K, the build seed and content hashes of the
//! appearance and geometry weights it was built with. `fingerprint` hashes
//! those four values; it is recomputed and checked on load.

use std::path::Path;

use airloc_core::appearance::VladParams;
use airloc_core::geometry::GeometryNet;
use airloc_core::model::StoredObject;
use airloc_core::{GeometricFeature, ObjectEmbedding, RoomDatabase, RoomRecord};
use serde::{Deserialize, Serialize};

use super::weights::{geometry_fingerprint, vlad_fingerprint};
use super::{check_version, read_string, sha256_hex, to_json_line, write_bytes, FORMAT_VERSION};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectDoc {
    object: String,
    support: u32,
    embedding: Vec<f64>,
    geom: [f64; GeometricFeature::DIM],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoomDoc {
    room: String,
    objects: Vec<ObjectDoc>,
    geom_embedding: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatabaseDoc {
    version: u32,
    scene: String,
    #[serde(rename = "K")]
    k: usize,
    seed: u64,
    vlad: String,
    geom: Option<String>,
    rooms: Vec<RoomDoc>,
    fingerprint: String,
}

/// Build provenance carried by a database file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BuildInfo {
    pub seed: u64,
    pub vlad: String,
    pub geom: Option<String>,
}

impl BuildInfo {
    pub fn new(seed: u64, vlad: &VladParams, geom: Option<&GeometryNet>) -> Self {
        Self {
            seed,
            vlad: vlad_fingerprint(vlad),
            geom: geom.map(geometry_fingerprint),
        }
    }

    pub fn fingerprint(&self, k: usize) -> String {
        let text = format!(
            "vlad={};geom={};K={k};seed={}",
            self.vlad,
            self.geom.as_deref().unwrap_or("none"),
            self.seed
        );
        sha256_hex(text.as_bytes())
    }

    /// Checks that `vlad` (and `geom`, when the database carries geometry
    /// embeddings) are the weights this database was built with.
    pub fn check_weights(&self, vlad: &VladParams, geom: Option<&GeometryNet>) -> Result<()> {
        if vlad_fingerprint(vlad) != self.vlad {
            return Err(Error::Mismatch(
                "appearance weights differ from the ones the database was built with".into(),
            ));
        }
        if let Some(net) = geom {
            match &self.geom {
                Some(h) if *h == geometry_fingerprint(net) => {}
                Some(_) => {
                    return Err(Error::Mismatch(
                        "geometry weights differ from the ones the database was built with".into(),
                    ))
                }
                None => {
                    return Err(Error::Mismatch(
                        "database was built without geometry weights; rebuild it with --geom".into(),
                    ))
                }
            }
        }
        Ok(())
    }
}

pub fn serialize_database(db: &RoomDatabase, info: &BuildInfo) -> Vec<u8> {
    let rooms = db
        .rooms()
        .iter()
        .map(|r| RoomDoc {
            room: r.room_id().to_string(),
            objects: r
                .objects()
                .map(|o| ObjectDoc {
                    object: o.object_id.to_string(),
                    support: o.support,
                    embedding: o.embedding.to_vec(),
                    geom: o.geom.0,
                })
                .collect(),
            geom_embedding: r.geom_embedding().map(<[f64]>::to_vec),
        })
        .collect();
    to_json_line(&DatabaseDoc {
        version: FORMAT_VERSION,
        scene: db.scene_id.clone(),
        k: db.k(),
        seed: info.seed,
        vlad: info.vlad.clone(),
        geom: info.geom.clone(),
        rooms,
        fingerprint: db.config_fingerprint.clone(),
    })
}

pub fn parse_database(text: &str, path: &Path) -> Result<(RoomDatabase, BuildInfo)> {
    let doc: DatabaseDoc = serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
    check_version(path, doc.version)?;
    let info = BuildInfo {
        seed: doc.seed,
        vlad: doc.vlad,
        geom: doc.geom,
    };
    if info.fingerprint(doc.k) != doc.fingerprint {
        return Err(Error::format(path, "fingerprint does not match K, seed and weight hashes"));
    }
    let mut rooms = Vec::with_capacity(doc.rooms.len());
    for r in doc.rooms {
        let objects = r
            .objects
            .into_iter()
            .map(|o| StoredObject {
                object_id: o.object,
                embedding: ObjectEmbedding(o.embedding),
                geom: GeometricFeature(o.geom),
                support: o.support,
            })
            .collect();
        rooms.push(RoomRecord::new(r.room, objects, r.geom_embedding)?);
    }
    let db = RoomDatabase::new(doc.scene, doc.k, rooms, doc.fingerprint)?;
    Ok((db, info))
}

pub fn read_database(path: &Path) -> Result<(RoomDatabase, BuildInfo)> {
    parse_database(&read_string(path)?, path)
}

pub fn write_database(path: &Path, db: &RoomDatabase, info: &BuildInfo) -> Result<()> {
    write_bytes(path, &serialize_database(db, info))
}

