//! Domain types shared by every stage of the pipeline, plus the cross-image
//! merge rules.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Matrix};

/// Descriptors whose norm is off by at most this much are rescaled to unit
/// length; anything further off is rejected.
pub const DESCRIPTOR_RENORM_WINDOW: f64 = 1e-3;

/// Below this deviation a descriptor is already unit length up to rounding
/// and is kept bit-for-bit.
const UNIT_EXACT: f64 = 1e-12;

/// Keypoints of one object in one image. Coordinates are fractions of the
/// image width and height; descriptors are rows of a `N x D_p` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSet {
    points: Vec<[f64; 2]>,
    descriptors: Matrix,
}

impl KeypointSet {
    /// Validates and, within [`DESCRIPTOR_RENORM_WINDOW`], renormalizes.
    pub fn new(points: Vec<[f64; 2]>, mut descriptors: Matrix) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidObservation {
            record: "keypoints".to_string(),
            reason,
        };
        if points.is_empty() {
            return Err(invalid("no keypoints".to_string()));
        }
        if points.len() != descriptors.rows() {
            return Err(invalid(format!(
                "{} points but {} descriptors",
                points.len(),
                descriptors.rows()
            )));
        }
        if descriptors.cols() == 0 {
            return Err(invalid("zero-length descriptors".to_string()));
        }
        for (i, p) in points.iter().enumerate() {
            for &c in p {
                if !(0.0..=1.0).contains(&c) {
                    return Err(invalid(format!("point {i} coordinate {c} outside [0, 1]")));
                }
            }
        }
        for i in 0..descriptors.rows() {
            let row = descriptors.row_mut(i);
            let n = math::norm(row);
            if !n.is_finite() || math::abs(n - 1.0) > DESCRIPTOR_RENORM_WINDOW {
                return Err(invalid(format!("descriptor {i} has norm {n}")));
            }
            if math::abs(n - 1.0) > UNIT_EXACT {
                math::scale(row, 1.0 / n);
            }
        }
        Ok(Self {
            points,
            descriptors,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn descriptors(&self) -> &Matrix {
        &self.descriptors
    }

    pub fn descriptor_dim(&self) -> usize {
        self.descriptors.cols()
    }
}

/// One object instance seen in one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectObservation {
    pub scene_id: String,
    pub room_id: String,
    pub image_id: String,
    pub object_id: String,
    pub keypoints: KeypointSet,
}

impl ObjectObservation {
    /// Builds an observation, validating the raw keypoints and naming the
    /// record in any error.
    pub fn new(
        scene_id: impl Into<String>,
        room_id: impl Into<String>,
        image_id: impl Into<String>,
        object_id: impl Into<String>,
        points: Vec<[f64; 2]>,
        descriptors: Matrix,
    ) -> Result<Self> {
        let (scene_id, room_id, image_id, object_id) =
            (scene_id.into(), room_id.into(), image_id.into(), object_id.into());
        let keypoints = KeypointSet::new(points, descriptors).map_err(|e| match e {
            Error::InvalidObservation { reason, .. } => Error::InvalidObservation {
                record: format!("{scene_id}/{image_id}/{object_id}"),
                reason,
            },
            other => other,
        })?;
        Ok(Self {
            scene_id,
            room_id,
            image_id,
            object_id,
            keypoints,
        })
    }
}

/// Rejects a second observation of the same object in the same image.
pub fn check_unique_objects(observations: &[ObjectObservation]) -> Result<()> {
    let mut keys: Vec<(&str, &str, &str)> = observations
        .iter()
        .map(|o| (o.scene_id.as_str(), o.image_id.as_str(), o.object_id.as_str()))
        .collect();
    keys.sort_unstable();
    for w in keys.windows(2) {
        if w[0] == w[1] {
            return Err(Error::DuplicateObject {
                scene: w[0].0.to_string(),
                image: w[0].1.to_string(),
                object: w[0].2.to_string(),
            });
        }
    }
    Ok(())
}

/// Appearance code of one object: `C` intra-normalized residual rows,
/// flattened and globally normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectEmbedding(pub Vec<f64>);

impl ObjectEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        math::norm(&self.0)
    }
}

/// Layout statistics of an object's keypoints:
/// `[mean(2), std(2), m1(2), m2(2), m3(2), sv(2)]`, x before y within each
/// pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricFeature(pub [f64; GeometricFeature::DIM]);

impl GeometricFeature {
    pub const DIM: usize = 12;

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn mean(&self) -> [f64; 2] {
        [self.0[0], self.0[1]]
    }

    pub fn std_dev(&self) -> [f64; 2] {
        [self.0[2], self.0[3]]
    }

    /// Central moment of order 1, 2 or 3.
    pub fn moment(&self, order: usize) -> [f64; 2] {
        assert!((1..=3).contains(&order), "moment order must be 1..=3");
        let i = 2 + 2 * order;
        [self.0[i], self.0[i + 1]]
    }

    pub fn singular_values(&self) -> [f64; 2] {
        [self.0[10], self.0[11]]
    }
}

/// Component-wise mean of per-image embeddings. The result is deliberately
/// not renormalized.
pub fn merge_embeddings(embeddings: &[ObjectEmbedding]) -> Result<ObjectEmbedding> {
    let first = embeddings.first().ok_or(Error::Empty("embeddings to merge"))?;
    let dim = first.dim();
    let mut acc = alloc::vec![0.0; dim];
    for e in embeddings {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: e.dim(),
            });
        }
        for (a, x) in acc.iter_mut().zip(&e.0) {
            *a += x;
        }
    }
    let n = embeddings.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(ObjectEmbedding(acc))
}

pub fn merge_geometric(features: &[GeometricFeature]) -> Result<GeometricFeature> {
    if features.is_empty() {
        return Err(Error::Empty("geometric features to merge"));
    }
    let mut acc = [0.0; GeometricFeature::DIM];
    for f in features {
        for (a, x) in acc.iter_mut().zip(&f.0) {
            *a += x;
        }
    }
    let n = features.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(GeometricFeature(acc))
}

/// One object as stored in a room: merged over `support` database images.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredObject {
    pub object_id: String,
    pub embedding: ObjectEmbedding,
    pub geom: GeometricFeature,
    pub support: u32,
}

/// Borrowed view of a stored object.
#[derive(Clone, Copy, Debug)]
pub struct ObjectView<'a> {
    pub object_id: &'a str,
    pub embedding: &'a [f64],
    pub geom: &'a GeometricFeature,
    pub support: u32,
}

/// Per-room database entry. Object embeddings are kept stacked in one
/// matrix, ordered by object id, so a room is scored with a single product.
#[derive(Clone, Debug, PartialEq)]
pub struct RoomRecord {
    room_id: String,
    object_ids: Vec<String>,
    geoms: Vec<GeometricFeature>,
    support: Vec<u32>,
    embeddings: Matrix,
    norms: Vec<f64>,
    geom_embedding: Option<Vec<f64>>,
}

impl RoomRecord {
    pub fn new(
        room_id: impl Into<String>,
        mut objects: Vec<StoredObject>,
        geom_embedding: Option<Vec<f64>>,
    ) -> Result<Self> {
        let room_id = room_id.into();
        objects.sort_by(|a, b| a.object_id.cmp(&b.object_id));
        for w in objects.windows(2) {
            if w[0].object_id == w[1].object_id {
                return Err(Error::InvalidConfig(format!(
                    "room {room_id} stores object {} twice",
                    w[0].object_id
                )));
            }
        }
        let dim = objects.first().map_or(0, |o| o.embedding.dim());
        let mut data = Vec::with_capacity(objects.len() * dim);
        let mut object_ids = Vec::with_capacity(objects.len());
        let mut geoms = Vec::with_capacity(objects.len());
        let mut support = Vec::with_capacity(objects.len());
        for o in objects {
            if o.embedding.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: o.embedding.dim(),
                });
            }
            if o.support == 0 {
                return Err(Error::InvalidConfig(format!(
                    "object {} in room {room_id} has zero support",
                    o.object_id
                )));
            }
            data.extend_from_slice(&o.embedding.0);
            object_ids.push(o.object_id);
            geoms.push(o.geom);
            support.push(o.support);
        }
        let embeddings = Matrix::from_vec(object_ids.len(), dim, data);
        let norms = embeddings.iter_rows().map(math::norm).collect();
        Ok(Self {
            room_id,
            object_ids,
            geoms,
            support,
            embeddings,
            norms,
            geom_embedding,
        })
    }

    pub fn room_id(&self) -> &str {
        &self.room_id
    }

    pub fn len(&self) -> usize {
        self.object_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.object_ids.is_empty()
    }

    pub fn objects(&self) -> impl Iterator<Item = ObjectView<'_>> {
        (0..self.len()).map(move |i| self.object_at(i))
    }

    pub fn object_at(&self, i: usize) -> ObjectView<'_> {
        ObjectView {
            object_id: &self.object_ids[i],
            embedding: self.embeddings.row(i),
            geom: &self.geoms[i],
            support: self.support[i],
        }
    }

    pub fn object(&self, object_id: &str) -> Option<ObjectView<'_>> {
        self.object_ids
            .binary_search_by(|id| id.as_str().cmp(object_id))
            .ok()
            .map(|i| self.object_at(i))
    }

    /// Stacked object embeddings, one row per object in id order.
    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn embedding_norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn geoms(&self) -> &[GeometricFeature] {
        &self.geoms
    }

    pub fn object_ids(&self) -> &[String] {
        &self.object_ids
    }

    pub fn geom_embedding(&self) -> Option<&[f64]> {
        self.geom_embedding.as_deref()
    }
}

/// The relocalization database for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct RoomDatabase {
    pub scene_id: String,
    k: usize,
    rooms: Vec<RoomRecord>,
    pub config_fingerprint: String,
}

impl RoomDatabase {
    /// Rooms are kept sorted by id; duplicate ids are rejected.
    pub fn new(
        scene_id: impl Into<String>,
        k: usize,
        mut rooms: Vec<RoomRecord>,
        config_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".to_string()));
        }
        rooms.sort_by(|a, b| a.room_id.cmp(&b.room_id));
        for w in rooms.windows(2) {
            if w[0].room_id == w[1].room_id {
                return Err(Error::InvalidConfig(format!(
                    "duplicate room {}",
                    w[0].room_id
                )));
            }
        }
        Ok(Self {
            scene_id: scene_id.into(),
            k,
            rooms,
            config_fingerprint: config_fingerprint.into(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rooms(&self) -> &[RoomRecord] {
        &self.rooms
    }

    pub fn room(&self, room_id: &str) -> Option<&RoomRecord> {
        self.rooms
            .binary_search_by(|r| r.room_id.as_str().cmp(room_id))
            .ok()
            .map(|i| &self.rooms[i])
    }

    pub fn is_empty(&self) -> bool {
        self.rooms.is_empty()
    }
}
