//! Seeded synthetic rooms with optional mirrored "twin" pairs.
//!
//! Every object identity owns a unit base descriptor, a layout anchor and a
//! keypoint shape. Twin rooms share identities (and therefore object ids)
//! with their partner but mirror the layout horizontally, so appearance
//! alone cannot tell them apart.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::{normalize_or_zero, sqrt, Matrix};
use crate::model::ObjectObservation;

#[derive(Clone, Debug, PartialEq)]
pub struct WorldSpec {
    pub scene_id: String,
    pub n_rooms: usize,
    pub objects_per_room: (usize, usize),
    pub images_per_room: usize,
    pub keypoints_per_object: (usize, usize),
    pub descriptor_dim: usize,
    /// Expected norm of the per-keypoint descriptor perturbation.
    pub descriptor_noise_sigma: f64,
    /// Keypoint position noise as a fraction of the image side.
    pub layout_jitter_sigma: f64,
    pub twin_room_pairs: usize,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            scene_id: "synth".into(),
            n_rooms: 20,
            objects_per_room: (5, 10),
            images_per_room: 15,
            keypoints_per_object: (16, 32),
            descriptor_dim: 256,
            descriptor_noise_sigma: 0.2,
            layout_jitter_sigma: 0.02,
            twin_room_pairs: 0,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.n_rooms == 0 || self.images_per_room == 0 || self.descriptor_dim == 0 {
            return bad("room, image and descriptor counts must be at least 1");
        }
        let (omin, omax) = self.objects_per_room;
        let (kmin, kmax) = self.keypoints_per_object;
        if omin == 0 || omin > omax {
            return bad("objects per room must satisfy 1 <= min <= max");
        }
        if kmin == 0 || kmin > kmax {
            return bad("keypoints per object must satisfy 1 <= min <= max");
        }
        for s in [self.descriptor_noise_sigma, self.layout_jitter_sigma] {
            if !(s >= 0.0) || !s.is_finite() {
                return bad("sigmas must be finite and non-negative");
            }
        }
        if 2 * self.twin_room_pairs > self.n_rooms {
            return bad("twin pairs need two rooms each");
        }
        if self.scene_id.is_empty() {
            return bad("scene id must be non-empty");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTruth {
    pub object_id: String,
    pub anchor: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoomTruth {
    pub room_id: String,
    pub twin_of: Option<String>,
    pub objects: Vec<ObjectTruth>,
    pub image_ids: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct World {
    pub spec: WorldSpec,
    pub observations: Vec<ObjectObservation>,
    pub rooms: Vec<RoomTruth>,
}

impl World {
    /// `(image_id, room_id)` for every generated image.
    pub fn labels(&self) -> Vec<(String, String)> {
        self.rooms
            .iter()
            .flat_map(|r| r.image_ids.iter().map(move |i| (i.clone(), r.room_id.clone())))
            .collect()
    }

    pub fn is_twin(&self, room_id: &str) -> bool {
        self.rooms
            .iter()
            .any(|r| r.twin_of.is_some() && (r.room_id == room_id || r.twin_of.as_deref() == Some(room_id)))
    }
}

struct Identity {
    object_id: String,
    descriptor: Vec<f64>,
    anchor: [f64; 2],
    // keypoint offsets from the anchor, at least keypoints_per_object.1 long
    shape: Vec<[f64; 2]>,
}

pub fn room_id(index: usize) -> String {
    format!("room{index:03}")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn new_identity(rng: &mut ChaCha8Rng, id: usize, spec: &WorldSpec) -> Identity {
    let mut descriptor: Vec<f64> = (0..spec.descriptor_dim).map(|_| normal(rng)).collect();
    normalize_or_zero(&mut descriptor, 0.0);
    let anchor = [rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)];
    let spread = [rng.random_range(0.02..0.08), rng.random_range(0.02..0.08)];
    let shape = (0..spec.keypoints_per_object.1)
        .map(|_| [normal(rng) * spread[0], normal(rng) * spread[1]])
        .collect();
    Identity {
        object_id: format!("obj{id:04}"),
        descriptor,
        anchor,
        shape,
    }
}

fn mirrored(base: &Identity) -> Identity {
    Identity {
        object_id: base.object_id.clone(),
        descriptor: base.descriptor.clone(),
        anchor: [1.0 - base.anchor[0], base.anchor[1]],
        shape: base.shape.iter().map(|p| [-p[0], p[1]]).collect(),
    }
}

/// Generates the world. Rooms `2i` and `2i + 1` for `i < twin_room_pairs`
/// are twins.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut next_identity = 0usize;
    let mut layouts: Vec<Vec<Identity>> = Vec::with_capacity(spec.n_rooms);
    for r in 0..spec.n_rooms {
        if r % 2 == 1 && r / 2 < spec.twin_room_pairs {
            let twin = layouts[r - 1].iter().map(mirrored).collect();
            layouts.push(twin);
            continue;
        }
        let n = rng.random_range(spec.objects_per_room.0..=spec.objects_per_room.1);
        let ids = (0..n)
            .map(|_| {
                next_identity += 1;
                new_identity(&mut rng, next_identity - 1, spec)
            })
            .collect();
        layouts.push(ids);
    }

    let d = spec.descriptor_dim;
    let noise_scale = spec.descriptor_noise_sigma / sqrt(d as f64);
    let jitter = spec.layout_jitter_sigma;
    let mut observations = Vec::new();
    let mut rooms = Vec::with_capacity(spec.n_rooms);
    for (r, identities) in layouts.iter().enumerate() {
        let rid = room_id(r);
        // per-room substream so rooms do not depend on each other's draws
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(r as u64 + 1);
        let mut image_ids = Vec::with_capacity(spec.images_per_room);
        for i in 0..spec.images_per_room {
            let image_id = format!("{rid}_img{i:03}");
            let shift = [normal(&mut rng) * jitter, normal(&mut rng) * jitter];
            for ident in identities {
                let n = rng.random_range(spec.keypoints_per_object.0..=spec.keypoints_per_object.1);
                let mut order: Vec<usize> = (0..ident.shape.len()).collect();
                order.shuffle(&mut rng);
                let mut points = Vec::with_capacity(n);
                let mut desc = Vec::with_capacity(n * d);
                for &s in &order[..n] {
                    let p = ident.shape[s];
                    points.push([
                        (ident.anchor[0] + p[0] + shift[0] + normal(&mut rng) * jitter).clamp(0.0, 1.0),
                        (ident.anchor[1] + p[1] + shift[1] + normal(&mut rng) * jitter).clamp(0.0, 1.0),
                    ]);
                    let start = desc.len();
                    desc.extend_from_slice(&ident.descriptor);
                    if noise_scale > 0.0 {
                        for x in &mut desc[start..] {
                            *x += normal(&mut rng) * noise_scale;
                        }
                        normalize_or_zero(&mut desc[start..], 0.0);
                    }
                }
                observations.push(ObjectObservation::new(
                    spec.scene_id.clone(),
                    rid.clone(),
                    image_id.clone(),
                    ident.object_id.clone(),
                    points,
                    Matrix::from_vec(n, d, desc),
                )?);
            }
            image_ids.push(image_id);
        }
        let twin_of = if r / 2 < spec.twin_room_pairs {
            Some(room_id(r ^ 1))
        } else {
            None
        };
        rooms.push(RoomTruth {
            room_id: rid,
            twin_of,
            objects: identities
                .iter()
                .map(|i| ObjectTruth {
                    object_id: i.object_id.clone(),
                    anchor: i.anchor,
                })
                .collect(),
            image_ids,
        });
    }
    Ok(World {
        spec: spec.clone(),
        observations,
        rooms,
    })
}

/// A single held-out image and its room.
#[derive(Clone, Debug)]
pub struct Query {
    pub image_id: String,
    pub room_id: String,
    pub observations: Vec<ObjectObservation>,
}

#[derive(Clone, Debug)]
pub struct Split {
    pub database: Vec<ObjectObservation>,
    pub queries: Vec<Query>,
}

impl Split {
    pub fn labels(&self) -> Vec<(String, String)> {
        self.queries.iter().map(|q| (q.image_id.clone(), q.room_id.clone())).collect()
    }
}

/// Splits each room's images into `k` database images and
/// `max(1, round(holdout_fraction * images))` single-image queries.
///
/// Queries are drawn first from a seeded permutation, so for a fixed seed
/// and fraction the query set does not depend on `k`.
pub fn split_query_db(world: &World, k: usize, holdout_fraction: f64, seed: u64) -> Result<Split> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&holdout_fraction) {
        return Err(Error::InvalidConfig("holdout fraction must lie in [0, 1]".into()));
    }
    let mut by_image: BTreeMap<&str, Vec<&ObjectObservation>> = BTreeMap::new();
    for o in &world.observations {
        by_image.entry(o.image_id.as_str()).or_default().push(o);
    }
    let mut database = Vec::new();
    let mut queries = Vec::new();
    for (r, room) in world.rooms.iter().enumerate() {
        let n = room.image_ids.len();
        let q = ((holdout_fraction * n as f64 + 0.5) as usize).max(1);
        if n <= k || q + k > n {
            return Err(Error::InsufficientImages {
                room: room.room_id.clone(),
                available: n,
                k,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64 + 1);
        let mut order: Vec<&String> = room.image_ids.iter().collect();
        order.shuffle(&mut rng);
        let mut held: Vec<&String> = order[..q].to_vec();
        held.sort();
        let mut db: Vec<&String> = order[q..q + k].to_vec();
        db.sort();
        for id in db {
            database.extend(by_image.get(id.as_str()).into_iter().flatten().map(|o| (*o).clone()));
        }
        for id in held {
            queries.push(Query {
                image_id: id.clone(),
                room_id: room.room_id.clone(),
                observations: by_image
                    .get(id.as_str())
                    .into_iter()
                    .flatten()
                    .map(|o| (*o).clone())
                    .collect(),
            });
        }
    }
    Ok(Split { database, queries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> WorldSpec {
        WorldSpec {
            n_rooms: 4,
            objects_per_room: (2, 4),
            images_per_room: 4,
            keypoints_per_object: (3, 6),
            descriptor_dim: 16,
            twin_room_pairs: 1,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_noise_gives_identical_descriptors() {
        let w = generate_world(&WorldSpec {
            descriptor_noise_sigma: 0.0,
            layout_jitter_sigma: 0.0,
            ..small(3)
        })
        .unwrap();
        let mut seen: BTreeMap<&str, &[f64]> = BTreeMap::new();
        for o in &w.observations {
            for row in o.keypoints.descriptors().iter_rows() {
                let first = *seen.entry(o.object_id.as_str()).or_insert(row);
                assert_eq!(first, row);
            }
        }
    }

    #[test]
    fn descriptors_are_unit() {
        let w = generate_world(&small(5)).unwrap();
        for o in &w.observations {
            for row in o.keypoints.descriptors().iter_rows() {
                assert!((crate::math::norm(row) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn twins_mirror_anchors() {
        let w = generate_world(&small(9)).unwrap();
        let (a, b) = (&w.rooms[0], &w.rooms[1]);
        assert_eq!(a.twin_of.as_deref(), Some("room001"));
        assert_eq!(b.twin_of.as_deref(), Some("room000"));
        assert_eq!(a.objects.len(), b.objects.len());
        for (x, y) in a.objects.iter().zip(&b.objects) {
            assert_eq!(x.object_id, y.object_id);
            assert_eq!(y.anchor[0], 1.0 - x.anchor[0]);
            assert_eq!(y.anchor[1], x.anchor[1]);
        }
        assert!(w.rooms[2].twin_of.is_none());
        assert!(w.is_twin("room001") && !w.is_twin("room003"));
    }

    #[test]
    fn split_is_disjoint_and_covers_rooms() {
        let w = generate_world(&small(1)).unwrap();
        let s = split_query_db(&w, 2, 0.5, 4).unwrap();
        let db: alloc::collections::BTreeSet<&str> = s.database.iter().map(|o| o.image_id.as_str()).collect();
        assert_eq!(db.len(), 8);
        assert!(s.queries.iter().all(|q| !db.contains(q.image_id.as_str())));
        assert_eq!(s.queries.len(), 8);
        let again = split_query_db(&w, 1, 0.5, 4).unwrap();
        let ids = |s: &Split| s.queries.iter().map(|q| q.image_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&s), ids(&again));
        assert!(split_query_db(&w, 4, 0.5, 4).is_err());
        assert!(split_query_db(&w, 3, 0.5, 4).is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_world(&WorldSpec { n_rooms: 0, ..small(0) }).is_err());
        assert!(generate_world(&WorldSpec { twin_room_pairs: 3, ..small(0) }).is_err());
        assert!(generate_world(&WorldSpec { descriptor_noise_sigma: -1.0, ..small(0) }).is_err());
    }
}
