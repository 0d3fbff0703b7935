//! Appearance pathway: residual-aggregation object codes, object-level cosine
//! matching and max-sum room scoring.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::{self, Matrix};
use crate::model::{KeypointSet, ObjectEmbedding, RoomDatabase, RoomRecord};

pub const DEFAULT_CLUSTERS: usize = 32;
pub const DEFAULT_DESCRIPTOR_DIM: usize = 256;

/// Rows whose norm falls below this are left at zero by intra-normalization.
const ROW_EPS: f64 = 1e-12;

/// Assignment sharpness used when seeding parameters from the centers.
const SEED_SHARPNESS: f64 = 30.0;

/// Cluster centers and the affine soft-assignment scores.
#[derive(Clone, Debug, PartialEq)]
pub struct VladParams {
    centers: Matrix,
    assign_weights: Matrix,
    assign_bias: Vec<f64>,
}

impl VladParams {
    pub fn new(centers: Matrix, assign_weights: Matrix, assign_bias: Vec<f64>) -> Result<Self> {
        if centers.rows() == 0 || centers.cols() == 0 {
            return Err(Error::InvalidConfig("at least one cluster of nonzero dimension required".into()));
        }
        if assign_weights.shape() != centers.shape() {
            return Err(Error::DimensionMismatch {
                expected: centers.rows() * centers.cols(),
                got: assign_weights.rows() * assign_weights.cols(),
            });
        }
        if assign_bias.len() != centers.rows() {
            return Err(Error::DimensionMismatch {
                expected: centers.rows(),
                got: assign_bias.len(),
            });
        }
        Ok(Self {
            centers,
            assign_weights,
            assign_bias,
        })
    }

    /// Deterministic parameters: centers are unit vectors drawn from a
    /// ChaCha stream seeded with `seed`; assignment scores are the scaled
    /// center correlations `2a x_c . d - a |x_c|^2`.
    pub fn seeded(clusters: usize, dim: usize, seed: u64) -> Result<Self> {
        if clusters == 0 || dim == 0 {
            return Err(Error::InvalidConfig("clusters and dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centers = Matrix::zeros(clusters, dim);
        for c in 0..clusters {
            let row = centers.row_mut(c);
            loop {
                for x in row.iter_mut() {
                    *x = StandardNormal.sample(&mut rng);
                }
                if math::normalize_or_zero(row, 1e-9) > 1e-9 {
                    break;
                }
            }
        }
        let mut weights = centers.clone();
        weights.map_inplace(|x| 2.0 * SEED_SHARPNESS * x);
        let bias = centers
            .iter_rows()
            .map(|r| -SEED_SHARPNESS * math::dot(r, r))
            .collect();
        Self::new(centers, weights, bias)
    }

    pub fn clusters(&self) -> usize {
        self.centers.rows()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn embedding_dim(&self) -> usize {
        self.clusters() * self.descriptor_dim()
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    pub fn assign_weights(&self) -> &Matrix {
        &self.assign_weights
    }

    pub fn assign_bias(&self) -> &[f64] {
        &self.assign_bias
    }
}

fn softmax_inplace(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = math::exp(*x - max);
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

/// Soft assignment of one descriptor over the clusters (softmax of the
/// affine cluster scores).
pub fn soft_assign(descriptor: &[f64], params: &VladParams) -> Result<Vec<f64>> {
    if descriptor.len() != params.descriptor_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.descriptor_dim(),
            got: descriptor.len(),
        });
    }
    let mut logits: Vec<f64> = params
        .assign_weights
        .iter_rows()
        .zip(&params.assign_bias)
        .map(|(w, b)| math::dot(w, descriptor) + b)
        .collect();
    softmax_inplace(&mut logits);
    Ok(logits)
}

/// Encodes one object's keypoint descriptors.
pub fn encode_object(keypoints: &KeypointSet, params: &VladParams) -> Result<ObjectEmbedding> {
    encode_descriptors(keypoints.descriptors(), params)
}

/// Encodes raw descriptors (one per row). Each descriptor is first scaled to
/// unit length, so the code does not depend on descriptor magnitude.
pub fn encode_descriptors(descriptors: &Matrix, params: &VladParams) -> Result<ObjectEmbedding> {
    let (clusters, dim) = (params.clusters(), params.descriptor_dim());
    if descriptors.cols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: descriptors.cols(),
        });
    }
    if descriptors.rows() == 0 {
        return Err(Error::Empty("descriptors"));
    }
    let mut unit = descriptors.clone();
    for i in 0..unit.rows() {
        math::normalize_or_zero(unit.row_mut(i), 0.0);
    }

    // N x C assignment matrix.
    let mut assign = Matrix::product(&unit, false, &params.assign_weights, true);
    for i in 0..assign.rows() {
        let row = assign.row_mut(i);
        for (x, b) in row.iter_mut().zip(&params.assign_bias) {
            *x += b;
        }
        softmax_inplace(row);
    }
    let mut mass = vec![0.0; clusters];
    for row in assign.iter_rows() {
        for (m, a) in mass.iter_mut().zip(row) {
            *m += a;
        }
    }

    // Row c: sum_i a_c(d_i) d_i - (sum_i a_c(d_i)) x_c
    let mut code = Matrix::product(&assign, true, &unit, false);
    for c in 0..clusters {
        let row = code.row_mut(c);
        math::axpy(-mass[c], params.centers.row(c), row);
        math::normalize_or_zero(row, ROW_EPS);
    }
    let mut flat = code.into_vec();
    math::normalize_or_zero(&mut flat, ROW_EPS);
    Ok(ObjectEmbedding(flat))
}

/// Cosine similarities between database objects (rows) and query objects
/// (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Matrix,
    pub db_labels: Vec<String>,
    pub query_labels: Vec<String>,
}

impl SimilarityMatrix {
    pub fn new(values: Matrix) -> Self {
        Self {
            values,
            db_labels: Vec::new(),
            query_labels: Vec::new(),
        }
    }
}

pub fn object_similarity(db: &[ObjectEmbedding], query: &[ObjectEmbedding]) -> Result<SimilarityMatrix> {
    if db.is_empty() {
        return Err(Error::Empty("database objects"));
    }
    let q = QueryEmbeddings::new(query)?;
    let rows: Vec<&[f64]> = db.iter().map(|e| e.as_slice()).collect();
    for r in &rows {
        if r.len() != q.dim() {
            return Err(Error::DimensionMismatch {
                expected: q.dim(),
                got: r.len(),
            });
        }
    }
    let stacked = Matrix::from_rows(&rows);
    let norms: Vec<f64> = rows.iter().map(|r| math::norm(r)).collect();
    Ok(SimilarityMatrix::new(cosine_block(&stacked, &norms, &q)))
}

/// Query object codes stacked for repeated scoring against many rooms.
#[derive(Clone, Debug)]
pub struct QueryEmbeddings {
    matrix: Matrix,
    norms: Vec<f64>,
}

impl QueryEmbeddings {
    pub fn new(query: &[ObjectEmbedding]) -> Result<Self> {
        if query.is_empty() {
            return Err(Error::Empty("query objects"));
        }
        let dim = query[0].dim();
        if let Some(bad) = query.iter().find(|e| e.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        let matrix = Matrix::from_rows(&query.iter().map(|e| e.as_slice()).collect::<Vec<_>>());
        let norms = matrix.iter_rows().map(math::norm).collect();
        Ok(Self { matrix, norms })
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

fn cosine_block(db: &Matrix, db_norms: &[f64], q: &QueryEmbeddings) -> Matrix {
    let mut s = math::row_dots(db, &q.matrix);
    for (j, &nd) in db_norms.iter().enumerate() {
        let row = s.row_mut(j);
        for (x, &nq) in row.iter_mut().zip(&q.norms) {
            *x = if nd == 0.0 || nq == 0.0 { 0.0 } else { *x / (nd * nq) };
        }
    }
    s
}

/// Similarity of one room's stored objects against the query objects.
pub fn room_similarity(room: &RoomRecord, query: &QueryEmbeddings) -> Result<SimilarityMatrix> {
    if room.is_empty() {
        return Err(Error::Empty("room objects"));
    }
    if room.embeddings().cols() != query.dim() {
        return Err(Error::DimensionMismatch {
            expected: query.dim(),
            got: room.embeddings().cols(),
        });
    }
    let mut s = SimilarityMatrix::new(cosine_block(room.embeddings(), room.embedding_norms(), query));
    s.db_labels = room.object_ids().to_vec();
    s.query_labels = (0..query.len()).map(|k| k.to_string()).collect();
    Ok(s)
}

/// Sum over query objects of the best database-object similarity.
pub fn room_appearance_score(s: &SimilarityMatrix) -> Result<f64> {
    let m = &s.values;
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::Empty("similarity matrix"));
    }
    let mut best = m.row(0).to_vec();
    for row in m.iter_rows().skip(1) {
        for (b, &x) in best.iter_mut().zip(row) {
            if x > *b {
                *b = x;
            }
        }
    }
    Ok(best.iter().sum())
}

/// Appearance score of every room. Rooms without objects get
/// `f64::NEG_INFINITY` and never rank.
pub fn score_all_rooms(db: &RoomDatabase, query: &[ObjectEmbedding]) -> Result<BTreeMap<String, f64>> {
    let q = QueryEmbeddings::new(query)?;
    score_all_rooms_with(db, &q)
}

pub fn score_all_rooms_with(db: &RoomDatabase, query: &QueryEmbeddings) -> Result<BTreeMap<String, f64>> {
    if db.is_empty() {
        return Err(Error::Empty("database"));
    }
    let mut out = BTreeMap::new();
    for room in db.rooms() {
        let score = if room.is_empty() {
            f64::NEG_INFINITY
        } else {
            room_appearance_score(&room_similarity(room, query)?)?
        };
        out.insert(room.room_id().to_string(), score);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GeometricFeature, StoredObject};

    fn params_2x2(weights: [[f64; 2]; 2], bias: [f64; 2]) -> VladParams {
        VladParams::new(
            Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]),
            Matrix::from_rows(&weights),
            bias.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn equal_scores_split_evenly() {
        let p = params_2x2([[0.3, 0.1], [0.3, 0.1]], [0.2, 0.2]);
        let a = soft_assign(&[0.6, 0.8], &p).unwrap();
        assert_eq!(a, vec![0.5, 0.5]);
    }

    #[test]
    fn large_margin_saturates() {
        let p = params_2x2([[0.0, 0.0], [0.0, 0.0]], [20.0, 0.0]);
        let a = soft_assign(&[1.0, 0.0], &p).unwrap();
        assert!(a[0] > 1.0 - 1e-8);
    }

    #[test]
    fn overflow_safe_assignment() {
        let p = params_2x2([[0.0, 0.0], [0.0, 0.0]], [1000.0, 999.0]);
        let a = soft_assign(&[1.0, 0.0], &p).unwrap();
        assert!(a.iter().all(|x| x.is_finite()));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn soft_assign_dimension_checked() {
        let p = params_2x2([[0.0; 2]; 2], [0.0; 2]);
        assert!(matches!(soft_assign(&[1.0], &p), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn hand_evaluated_two_cluster_code() {
        let p = params_2x2([[0.0; 2]; 2], [0.0; 2]);
        let ks = KeypointSet::new(vec![[0.5, 0.5]], Matrix::from_rows(&[[1.0, 0.0]])).unwrap();
        let e = encode_object(&ks, &p).unwrap();
        let h = core::f64::consts::FRAC_1_SQRT_2;
        let want = [0.0, 0.0, h, -h];
        for (g, w) in e.0.iter().zip(want) {
            assert!((g - w).abs() < 1e-4, "{:?}", e.0);
        }
    }

    #[test]
    fn descriptors_on_centers_give_zero_code() {
        let p = params_2x2([[100.0, 0.0], [0.0, 100.0]], [0.0, 0.0]);
        let ks = KeypointSet::new(
            vec![[0.1, 0.1], [0.2, 0.2]],
            Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]),
        )
        .unwrap();
        let e = encode_object(&ks, &p).unwrap();
        assert!(e.0.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn seeded_params_are_reproducible() {
        let a = VladParams::seeded(4, 8, 9).unwrap();
        let b = VladParams::seeded(4, 8, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, VladParams::seeded(4, 8, 10).unwrap());
        for r in a.centers().iter_rows() {
            assert!((math::norm(r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn similarity_edge_values() {
        let e1 = ObjectEmbedding(vec![1.0, 0.0]);
        let e2 = ObjectEmbedding(vec![0.0, 1.0]);
        let z = ObjectEmbedding(vec![0.0, 0.0]);
        let s = object_similarity(&[e1.clone(), e2.clone(), z], &[e1]).unwrap();
        assert_eq!(s.values.as_slice(), &[1.0, 0.0, 0.0]);
        assert!(object_similarity(&[], &[e2.clone()]).is_err());
        assert!(object_similarity(&[e2], &[]).is_err());
    }

    #[test]
    fn max_sum_example() {
        let s = SimilarityMatrix::new(Matrix::from_rows(&[[0.9, 0.2], [0.1, 0.8]]));
        assert!((room_appearance_score(&s).unwrap() - 1.7).abs() < 1e-15);
        let single = SimilarityMatrix::new(Matrix::from_rows(&[[0.37]]));
        assert_eq!(room_appearance_score(&single).unwrap(), 0.37);
        let constant = SimilarityMatrix::new(Matrix::from_rows(&[[0.4], [0.4], [0.4]]));
        assert_eq!(room_appearance_score(&constant).unwrap(), 0.4);
        assert!(room_appearance_score(&SimilarityMatrix::new(Matrix::zeros(0, 0))).is_err());
    }

    fn stored(id: &str, v: Vec<f64>) -> StoredObject {
        StoredObject {
            object_id: id.into(),
            embedding: ObjectEmbedding(v),
            geom: GeometricFeature([0.0; GeometricFeature::DIM]),
            support: 1,
        }
    }

    #[test]
    fn rooms_scored_by_best_match() {
        let a = RoomRecord::new("A", vec![stored("a1", vec![1.0, 0.0, 0.0])], None).unwrap();
        let b = RoomRecord::new("B", vec![stored("b1", vec![0.0, 1.0, 0.0])], None).unwrap();
        let empty = RoomRecord::new("C", vec![], None).unwrap();
        let db = RoomDatabase::new("s", 1, vec![a, b, empty], "").unwrap();
        let scores = score_all_rooms(&db, &[ObjectEmbedding(vec![1.0, 0.0, 0.0])]).unwrap();
        assert_eq!(scores["A"], 1.0);
        assert_eq!(scores["B"], 0.0);
        assert_eq!(scores["C"], f64::NEG_INFINITY);
        assert!(score_all_rooms(&db, &[]).is_err());
    }

    #[test]
    fn perfect_matches_sum_to_query_size() {
        let objs: Vec<StoredObject> = (0..3)
            .map(|i| {
                let mut v = vec![0.0; 3];
                v[i] = 1.0;
                stored(&alloc::format!("o{i}"), v)
            })
            .collect();
        let query: Vec<ObjectEmbedding> = objs.iter().map(|o| o.embedding.clone()).collect();
        let db = RoomDatabase::new("s", 1, vec![RoomRecord::new("A", objs, None).unwrap()], "").unwrap();
        assert_eq!(score_all_rooms(&db, &query).unwrap()["A"], 3.0);
    }
}
