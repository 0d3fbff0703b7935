use std::collections::BTreeMap;

use airloc_core::appearance::{encode_descriptors, room_appearance_score, score_all_rooms, SimilarityMatrix, VladParams};
use airloc_core::eval::{accuracy, pr_auc, pr_sweep, thresholds, Candidate, PrPoint};
use airloc_core::geometry::{
    geometric_feature_from_points, room_matching_loss, GeometryConfig, GeometryNet, PairLabel, RoomPair,
};
use airloc_core::math::{norm, Matrix};
use airloc_core::model::{merge_embeddings, StoredObject};
use airloc_core::reloc::{rank, RelocResult};
use airloc_core::{GeometricFeature, ObjectEmbedding, RoomDatabase, RoomRecord};
use proptest::collection::vec;
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;

fn descriptors(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    vec(vec(-1.0f64..1.0, dim), 1..12).prop_filter("nonzero rows", |rows| rows.iter().all(|r| norm(r) > 1e-3))
}

fn tiny_vlad() -> VladParams {
    VladParams::seeded(4, 6, 3).unwrap()
}

fn tiny_net() -> GeometryNet {
    GeometryNet::init(
        GeometryConfig {
            mlp_hidden: 16,
            embed_dim: 8,
            gat_hidden: 12,
            out_dim: 8,
            heads: 2,
            dropout: 0.5,
            leaky_slope: 0.2,
        },
        9,
    )
    .unwrap()
}

fn db_from(rooms: &[Vec<Vec<f64>>]) -> RoomDatabase {
    let records = rooms
        .iter()
        .enumerate()
        .map(|(r, objs)| {
            let stored = objs
                .iter()
                .enumerate()
                .map(|(i, e)| StoredObject {
                    object_id: format!("o{i:02}"),
                    embedding: ObjectEmbedding(e.clone()),
                    geom: GeometricFeature([0.0; GeometricFeature::DIM]),
                    support: 1,
                })
                .collect();
            RoomRecord::new(format!("r{r:02}"), stored, None).unwrap()
        })
        .collect();
    RoomDatabase::new("s", 1, records, "").unwrap()
}

fn argmax(scores: &BTreeMap<String, f64>) -> String {
    let mut s: BTreeMap<String, f64> = scores.clone();
    s.retain(|_, v| v.is_finite());
    rank(&s)[0].0.clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embedding_is_unit_or_zero(rows in descriptors(6)) {
        let e = encode_descriptors(&Matrix::from_rows(&rows), &tiny_vlad()).unwrap();
        let n = e.norm();
        prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn embedding_ignores_order_and_scale(rows in descriptors(6), seed in any::<u64>(), scale in 0.01f64..100.0) {
        let vlad = tiny_vlad();
        let base = encode_descriptors(&Matrix::from_rows(&rows), &vlad).unwrap();
        let mut shuffled = rows.clone();
        let k = (seed as usize) % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let scaled: Vec<Vec<f64>> = shuffled.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
        let other = encode_descriptors(&Matrix::from_rows(&scaled), &vlad).unwrap();
        for (a, b) in base.0.iter().zip(&other.0) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn merge_is_permutation_invariant_and_idempotent(rows in vec(vec(-1.0f64..1.0, 5), 1..6), rot in 0usize..6) {
        let embs: Vec<ObjectEmbedding> = rows.iter().cloned().map(ObjectEmbedding).collect();
        let mut permuted = embs.clone();
        permuted.rotate_left(rot % embs.len());
        let a = merge_embeddings(&embs).unwrap();
        let b = merge_embeddings(&permuted).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let same = merge_embeddings(&vec![embs[0].clone(); 4]).unwrap();
        for (x, y) in same.0.iter().zip(&embs[0].0) {
            prop_assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn room_score_is_monotone(vals in vec(-1.0f64..1.0, 12), idx in 0usize..12, bump in 0.0f64..1.0) {
        let s = SimilarityMatrix::new(Matrix::from_vec(3, 4, vals.clone()));
        let mut up = vals;
        up[idx] += bump;
        let t = SimilarityMatrix::new(Matrix::from_vec(3, 4, up));
        prop_assert!(room_appearance_score(&t).unwrap() >= room_appearance_score(&s).unwrap());
    }

    #[test]
    fn duplicated_database_object_keeps_argmax(
        rooms in vec(vec(vec(-1.0f64..1.0, 4), 1..4), 2..5),
        query in vec(vec(-1.0f64..1.0, 4), 1..4),
        pick in any::<(usize, usize)>(),
    ) {
        let q: Vec<ObjectEmbedding> = query.into_iter().map(ObjectEmbedding).collect();
        let before = score_all_rooms(&db_from(&rooms), &q).unwrap();
        let mut dup = rooms.clone();
        let r = pick.0 % dup.len();
        let o = dup[r][pick.1 % dup[r].len()].clone();
        dup[r].push(o);
        let after = score_all_rooms(&db_from(&dup), &q).unwrap();
        for (k, v) in &before {
            prop_assert!((v - after[k]).abs() < 1e-12);
        }
        prop_assert_eq!(argmax(&before), argmax(&after));
    }

    #[test]
    fn geometric_feature_is_translation_covariant(
        pts in vec((0.0f64..1.0, 0.0f64..1.0), 1..20),
        dx in -0.5f64..0.5,
        dy in -0.5f64..0.5,
    ) {
        let a: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
        let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
        let fa = geometric_feature_from_points(&a).unwrap();
        let fb = geometric_feature_from_points(&b).unwrap();
        prop_assert!((fb.0[0] - fa.0[0] - dx).abs() < 1e-10);
        prop_assert!((fb.0[1] - fa.0[1] - dy).abs() < 1e-10);
        for i in 2..GeometricFeature::DIM {
            prop_assert!((fa.0[i] - fb.0[i]).abs() < 1e-10, "component {} moved", i);
        }
    }

    #[test]
    fn attention_rows_sum_to_one(feats in vec(vec(-1.0f64..1.0, GeometricFeature::DIM), 2..6)) {
        let geoms: Vec<GeometricFeature> =
            feats.iter().map(|f| GeometricFeature(f.clone().try_into().unwrap())).collect();
        let trace = tiny_net().forward::<ChaCha8Rng>(&geoms, None).unwrap();
        for head in trace.first_layer_heads().iter().chain(trace.second_layer_heads()) {
            for row in head.attention.iter_rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let again = tiny_net().forward::<ChaCha8Rng>(&geoms, None).unwrap();
        prop_assert_eq!(trace.embedding, again.embedding);
    }

    #[test]
    fn loss_is_non_negative(a in vec(-1.0f64..1.0, 6), b in vec(-1.0f64..1.0, 6), pos in any::<bool>()) {
        let label = if pos { PairLabel::Positive } else { PairLabel::Negative };
        let out = room_matching_loss(&[RoomPair { a: &a, b: &b, label }], 0.2).unwrap();
        prop_assert!(out.loss >= 0.0);
    }

    #[test]
    fn ranking_top_survives_increasing_transforms(scores in vec(-10.0f64..10.0, 1..10)) {
        let m: BTreeMap<String, f64> = scores.iter().enumerate().map(|(i, &s)| (format!("r{i}"), s)).collect();
        let t: BTreeMap<String, f64> = m.iter().map(|(k, &v)| (k.clone(), v.exp() * 3.0 + 1.0)).collect();
        let ids = |r: Vec<(String, f64)>| r.into_iter().map(|(k, _)| k).collect::<Vec<_>>();
        prop_assert_eq!(ids(rank(&m)), ids(rank(&t)));
    }

    #[test]
    fn pr_values_are_bounded(
        queries in vec(vec(-5.0f64..5.0, 2..6), 1..8),
        truth in vec(any::<usize>(), 8),
    ) {
        let cands: Vec<Vec<Candidate>> = queries
            .iter()
            .zip(&truth)
            .map(|(q, t)| {
                q.iter()
                    .enumerate()
                    .map(|(i, &s)| Candidate { room_id: format!("r{i}"), score: s, is_match: i == t % q.len() })
                    .collect()
            })
            .collect();
        let sweep = pr_sweep(&cands, &thresholds(21)).unwrap();
        for p in &sweep.points {
            prop_assert!((0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall));
        }
        prop_assert_eq!(sweep.points[0].recall, 1.0);
        let mut doubled: Vec<PrPoint> = sweep.points.clone();
        doubled.extend(sweep.points.iter().copied());
        prop_assert!((pr_auc(&doubled) - sweep.auc).abs() < 1e-12);
    }

    #[test]
    fn accuracy_ignores_query_order(tops in vec((0usize..3, 0usize..3), 1..10), rot in 0usize..10) {
        let results: Vec<(RelocResult, String)> = tops
            .iter()
            .map(|&(top, truth)| {
                (
                    RelocResult {
                        ranked: vec![(format!("r{top}"), 1.0)],
                        used_geometry: false,
                        appearance_scores: BTreeMap::new(),
                        geometry_scores: BTreeMap::new(),
                    },
                    format!("r{truth}"),
                )
            })
            .collect();
        let mut rotated = results.clone();
        rotated.rotate_left(rot % results.len());
        prop_assert_eq!(accuracy(&results).unwrap(), accuracy(&rotated).unwrap());
    }
}
