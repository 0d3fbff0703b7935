use std::collections::BTreeMap;
use std::path::Path;

use airloc::harness::{self, QueryGroup};
use airloc::io::database::{parse_database, serialize_database, BuildInfo};
use airloc::io::labels::{parse_labels, serialize_labels};
use airloc::io::observations::{parse_observations, serialize_observations};
use airloc::io::report::serialize_report;
use airloc::io::results::serialize_result;
use airloc::io::weights::{parse_geometry, parse_vlad, serialize_geometry, serialize_vlad};
use airloc::Error;
use airloc_core::appearance::VladParams;
use airloc_core::eval::thresholds;
use airloc_core::geometry::{GeometryConfig, GeometryNet};
use airloc_core::math::Matrix;
use airloc_core::reloc::{self, build_database, RelocConfig, RelocResult};
use airloc_core::synth::{generate_world, split_query_db, Split, WorldSpec};
use airloc_core::ObjectObservation;
use proptest::prelude::*;

fn p() -> &'static Path {
    Path::new("mem")
}

fn small_net() -> GeometryNet {
    let cfg = GeometryConfig {
        embed_dim: 16,
        gat_hidden: 16,
        out_dim: 8,
        heads: 2,
        ..GeometryConfig::default()
    };
    GeometryNet::init(cfg, 5).unwrap()
}

fn small_world() -> (Split, VladParams) {
    let spec = WorldSpec {
        n_rooms: 5,
        images_per_room: 6,
        descriptor_dim: 32,
        twin_room_pairs: 1,
        seed: 11,
        ..WorldSpec::default()
    };
    let world = generate_world(&spec).unwrap();
    (split_query_db(&world, 2, 0.5, 3).unwrap(), VladParams::seeded(8, 32, 1).unwrap())
}

fn groups(split: &Split) -> Vec<QueryGroup> {
    split
        .queries
        .iter()
        .map(|q| QueryGroup {
            image_id: q.image_id.clone(),
            observations: q.observations.clone(),
        })
        .collect()
}

fn same_result(a: &RelocResult, b: &RelocResult) {
    assert_eq!(a.used_geometry, b.used_geometry);
    assert_eq!(a.ranked.len(), b.ranked.len());
    for (x, y) in a.ranked.iter().zip(&b.ranked) {
        assert_eq!(x.0, y.0);
        assert_eq!(x.1.to_bits(), y.1.to_bits());
    }
}

fn arb_observation() -> impl Strategy<Value = ObjectObservation> {
    (1usize..5, 1usize..6).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec([0.0f64..=1.0, 0.0f64..=1.0], n),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n),
            "[a-z]{1,4}",
            "[a-z]{1,4}",
        )
            .prop_filter_map("zero descriptor", |(pts, desc, room, obj)| {
                let rows: Vec<Vec<f64>> = desc
                    .into_iter()
                    .map(|v| {
                        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        v.iter().map(|x| x / n).collect()
                    })
                    .collect();
                if rows.iter().flatten().any(|x| !x.is_finite()) {
                    return None;
                }
                ObjectObservation::new("s", room.clone(), format!("{room}_i"), obj, pts, Matrix::from_rows(&rows)).ok()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn observations_round_trip(o in arb_observation()) {
        let bytes = serialize_observations(std::slice::from_ref(&o));
        let back = parse_observations(std::str::from_utf8(&bytes).unwrap(), p()).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0], &o);
        prop_assert_eq!(serialize_observations(&back), bytes);
    }
}

#[test]
fn observation_errors_carry_line_numbers() {
    let good = r#"{"scene":"s","room":"r","image":"i","object":"a","points":[[0.1,0.2]],"desc":[[1.0,0.0]]}"#;
    let text = format!("{good}\n\n{{not json\n");
    match parse_observations(&text, p()).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        e => panic!("unexpected {e}"),
    }
    let out_of_range = good.replace("0.2]]", "1.5]]");
    match parse_observations(&out_of_range, p()).unwrap_err() {
        Error::Invalid { line, .. } => assert_eq!(line, 1),
        e => panic!("unexpected {e}"),
    }
    let dup = format!("{good}\n{good}\n");
    assert!(parse_observations(&dup, p()).is_err());
    let future = format!("{{\"version\":2,\"format\":\"airloc-observations\"}}\n{good}\n");
    assert!(matches!(parse_observations(&future, p()), Err(Error::Format { .. })));
}

#[test]
fn weights_round_trip_exactly() {
    let vlad = VladParams::seeded(4, 6, 9).unwrap();
    let bytes = serialize_vlad(&vlad);
    let back = parse_vlad(std::str::from_utf8(&bytes).unwrap(), p()).unwrap();
    assert_eq!(back, vlad);

    let net = small_net();
    let bytes = serialize_geometry(&net);
    let back = parse_geometry(std::str::from_utf8(&bytes).unwrap(), p()).unwrap();
    assert_eq!(serialize_geometry(&back), bytes);
    for (a, b) in net.tensors().iter().zip(back.tensors()) {
        assert_eq!(*a, b);
    }
}

#[test]
fn database_round_trip_and_fingerprint_check() {
    let (split, vlad) = small_world();
    let net = small_net();
    let info = BuildInfo::new(4, &vlad, Some(&net));
    let db = build_database(&split.database, 2, &vlad, Some(&net), 4, &info.fingerprint(2)).unwrap();
    let bytes = serialize_database(&db, &info);
    let text = String::from_utf8(bytes.clone()).unwrap();
    let (back, back_info) = parse_database(&text, p()).unwrap();
    assert_eq!(back, db);
    assert_eq!(back_info, info);
    assert_eq!(serialize_database(&back, &back_info), bytes);

    back_info.check_weights(&vlad, Some(&net)).unwrap();
    let other = VladParams::seeded(8, 32, 2).unwrap();
    assert!(matches!(back_info.check_weights(&other, None), Err(Error::Mismatch(_))));

    let tampered = text.replace("\"K\":2", "\"K\":3");
    assert!(matches!(parse_database(&tampered, p()), Err(Error::Format { .. })));
}

#[test]
fn labels_round_trip_and_reject_duplicates() {
    let labels = vec![("q1".to_string(), "r1".to_string()), ("q2".to_string(), "r,2".to_string())];
    let bytes = serialize_labels(&labels);
    assert!(bytes.starts_with(b"query_image_id,true_room\n"));
    let back = parse_labels(std::str::from_utf8(&bytes).unwrap(), p()).unwrap();
    assert_eq!(back.into_iter().collect::<Vec<_>>(), labels);
    assert!(parse_labels("query_image_id,true_room\na,b\na,c\n", p()).is_err());
}

#[test]
fn unrankable_scores_serialize_as_null() {
    let mut appearance = BTreeMap::new();
    appearance.insert("a".to_string(), 1.5);
    appearance.insert("empty".to_string(), f64::NEG_INFINITY);
    let r = RelocResult {
        ranked: reloc::rank(&appearance),
        used_geometry: false,
        appearance_scores: appearance,
        geometry_scores: BTreeMap::new(),
    };
    let line = String::from_utf8(serialize_result(&r, Some("q"))).unwrap();
    assert_eq!(line.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["top"], "a");
    assert!(v["appearance"]["empty"].is_null());
    assert_eq!(v["ranked"].as_array().unwrap().len(), 1);
}

#[test]
fn timed_stages_reproduce_relocalize() {
    let (split, vlad) = small_world();
    let net = small_net();
    let db = build_database(&split.database, 2, &vlad, Some(&net), 0, "").unwrap();
    for t_diff in [0.0, 0.1, 1.0] {
        let cfg = RelocConfig {
            t_diff,
            k: 2,
            ..RelocConfig::default()
        };
        for q in &split.queries {
            let plain = reloc::relocalize(&q.observations, &db, &vlad, Some(&net), &cfg).unwrap();
            let (timed, times) = harness::relocalize_timed(&q.observations, &db, &vlad, Some(&net), &cfg).unwrap();
            same_result(&plain, &timed);
            assert!(times.overall_ms >= times.appearance_ms);
            if !timed.used_geometry {
                assert_eq!(times.geometry_ms, 0.0);
            }
        }
    }
}

#[test]
fn evaluation_does_not_depend_on_worker_count() {
    let (split, vlad) = small_world();
    let net = small_net();
    let db = build_database(&split.database, 2, &vlad, Some(&net), 0, "").unwrap();
    let labels: BTreeMap<String, String> = split.labels().into_iter().collect();
    let cfg = RelocConfig {
        k: 2,
        ..RelocConfig::default()
    };
    let qs = groups(&split);
    let ts = thresholds(11);
    let one = harness::evaluate(&db, &qs, &labels, &vlad, Some(&net), &cfg, &ts, 1).unwrap();
    let many = harness::evaluate(&db, &qs, &labels, &vlad, Some(&net), &cfg, &ts, 3).unwrap();
    assert_eq!(serialize_report(&one, &cfg), serialize_report(&many, &cfg));
    assert_eq!(one.report.queries, split.queries.len());

    let mut missing = labels.clone();
    missing.remove(&split.queries[0].image_id);
    assert!(matches!(
        harness::evaluate(&db, &qs, &missing, &vlad, None, &cfg, &ts, 1),
        Err(Error::Mismatch(_))
    ));
}

#[test]
fn grouping_orders_by_image() {
    let (split, _) = small_world();
    let all: Vec<ObjectObservation> = split.queries.iter().rev().flat_map(|q| q.observations.clone()).collect();
    let g = harness::group_queries(all);
    assert_eq!(g.len(), split.queries.len());
    assert!(g.windows(2).all(|w| w[0].image_id < w[1].image_id));
}
