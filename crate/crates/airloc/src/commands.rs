//! Subcommand implementations.

use std::io::Write;
use std::path::Path;

use airloc_core::appearance::VladParams;
use airloc_core::eval;
use airloc_core::geometry::{self, GeometryConfig, GeometryNet, TrainConfig};
use airloc_core::reloc::{self, RelocConfig};
use airloc_core::synth::{self, WorldSpec};
use serde::Serialize;

use crate::cli::{BuildDbArgs, Command, EvalArgs, GenSynthArgs, InitVladArgs, QueryArgs, RelocArgs, TrainGeomArgs};
use crate::error::{Error, Result};
use crate::harness;
use crate::io::database::{self, BuildInfo};
use crate::io::{labels, observations, report, results, sidecar, weights, write_bytes};
use crate::manifest::{manifest_path, RunManifest};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenSynth(a) => gen_synth(&a),
        Command::InitVlad(a) => init_vlad(&a),
        Command::BuildDb(a) => build_db(&a),
        Command::Query(a) => query(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::TrainGeom(a) => train_geom(&a),
    }
}

/// Configuration problems in flags are usage errors, not domain errors.
fn usage(e: airloc_core::Error) -> Error {
    Error::Usage(e.to_string())
}

#[derive(Serialize)]
struct RoomRow<'a> {
    room: &'a str,
    twin_of: &'a str,
    objects: usize,
    images: usize,
}

fn gen_synth(a: &GenSynthArgs) -> Result<()> {
    let spec = WorldSpec {
        scene_id: a.scene.clone(),
        n_rooms: a.rooms,
        objects_per_room: (a.objects_min, a.objects_max),
        images_per_room: a.images,
        keypoints_per_object: (a.keypoints_min, a.keypoints_max),
        descriptor_dim: a.descriptor_dim,
        descriptor_noise_sigma: a.noise,
        layout_jitter_sigma: a.jitter,
        twin_room_pairs: a.twin_pairs,
        seed: a.seed,
    };
    spec.validate().map_err(usage)?;
    if a.clusters == 0 {
        return Err(Error::Usage("--clusters must be at least 1".into()));
    }
    let split_seed = a.split_seed.unwrap_or(a.seed);
    let world = synth::generate_world(&spec)?;
    let split = synth::split_query_db(&world, a.k, a.holdout, split_seed).map_err(usage)?;
    let vlad = VladParams::seeded(a.clusters, a.descriptor_dim, a.seed)?;

    let query_obs: Vec<_> = split.queries.iter().flat_map(|q| q.observations.iter().cloned()).collect();
    let mut rooms_csv = csv::Writer::from_writer(Vec::new());
    for r in &world.rooms {
        rooms_csv
            .serialize(RoomRow {
                room: &r.room_id,
                twin_of: r.twin_of.as_deref().unwrap_or(""),
                objects: r.objects.len(),
                images: r.image_ids.len(),
            })
            .expect("in-memory csv");
    }
    let files: [(&str, Vec<u8>); 6] = [
        ("observations.jsonl", observations::serialize_observations(&world.observations)),
        ("db_observations.jsonl", observations::serialize_observations(&split.database)),
        ("queries.jsonl", observations::serialize_observations(&query_obs)),
        ("labels.csv", labels::serialize_labels(&split.labels())),
        ("rooms.csv", rooms_csv.into_inner().expect("in-memory csv")),
        ("vlad.json", weights::serialize_vlad(&vlad)),
    ];
    let mut m = RunManifest::new("gen-synth", Some(a.seed));
    m.config("rooms", a.rooms)
        .config("objects_min", a.objects_min)
        .config("objects_max", a.objects_max)
        .config("images", a.images)
        .config("keypoints_min", a.keypoints_min)
        .config("keypoints_max", a.keypoints_max)
        .config("descriptor_dim", a.descriptor_dim)
        .config("noise", a.noise)
        .config("jitter", a.jitter)
        .config("twin_pairs", a.twin_pairs)
        .config("scene", a.scene.clone())
        .config("k", a.k)
        .config("holdout", a.holdout)
        .config("split_seed", split_seed)
        .config("clusters", a.clusters);
    for (name, bytes) in &files {
        write_bytes(&a.out.join(name), bytes)?;
        m.outputs.insert(name.to_string(), crate::io::sha256_hex(bytes));
    }
    m.write(&a.out.join("manifest.json"))
}

fn init_vlad(a: &InitVladArgs) -> Result<()> {
    let vlad = VladParams::seeded(a.clusters, a.dim, a.seed).map_err(usage)?;
    weights::write_vlad(&a.out, &vlad)?;
    let mut m = RunManifest::new("init-vlad", Some(a.seed));
    m.config("clusters", a.clusters).config("dim", a.dim);
    m.output(&a.out)?;
    m.write(&manifest_path(&a.out))
}

fn read_geom(path: Option<&Path>) -> Result<Option<GeometryNet>> {
    path.map(weights::read_geometry).transpose()
}

fn build_db(a: &BuildDbArgs) -> Result<()> {
    if a.k == 0 {
        return Err(Error::Usage("--k must be at least 1".into()));
    }
    let obs = observations::read_observations(&a.obs)?;
    let vlad = weights::read_vlad(&a.vlad)?;
    let geom = read_geom(a.geom.as_deref())?;
    let info = BuildInfo::new(a.seed, &vlad, geom.as_ref());
    let db = reloc::build_database(&obs, a.k, &vlad, geom.as_ref(), a.seed, &info.fingerprint(a.k))?;
    database::write_database(&a.out, &db, &info)?;

    let mut m = RunManifest::new("build-db", Some(a.seed));
    m.config("k", a.k);
    m.input(&a.obs)?.input(&a.vlad)?;
    if let Some(g) = &a.geom {
        m.input(g)?;
    }
    m.output(&a.out)?;
    m.write(&manifest_path(&a.out))
}

fn reloc_config(r: &RelocArgs, k: usize) -> Result<RelocConfig> {
    let cfg = RelocConfig {
        w: r.w,
        t_diff: r.tdiff,
        k,
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

struct Loaded {
    db: airloc_core::RoomDatabase,
    vlad: VladParams,
    geom: Option<GeometryNet>,
    cfg: RelocConfig,
}

fn load(db_path: &Path, r: &RelocArgs) -> Result<Loaded> {
    let (db, info) = database::read_database(db_path)?;
    let cfg = reloc_config(r, db.k())?;
    let vlad = weights::read_vlad(&r.vlad)?;
    let geom = read_geom(r.geom.as_deref())?;
    info.check_weights(&vlad, geom.as_ref())?;
    Ok(Loaded { db, vlad, geom, cfg })
}

fn reloc_manifest(m: &mut RunManifest, db: &Path, r: &RelocArgs) -> Result<()> {
    m.config("w", r.w).config("tdiff", r.tdiff);
    m.input(db)?.input(&r.vlad)?;
    if let Some(g) = &r.geom {
        m.input(g)?;
    }
    Ok(())
}

fn query(a: &QueryArgs) -> Result<()> {
    let l = load(&a.db, &a.reloc)?;
    let obs = observations::read_observations(&a.query_obs)?;
    let groups = if a.single {
        let id = obs.first().map(|o| o.image_id.clone()).unwrap_or_default();
        vec![harness::QueryGroup {
            image_id: id,
            observations: obs,
        }]
    } else {
        harness::group_queries(obs)
    };
    let mut out = Vec::new();
    for g in &groups {
        let r = reloc::relocalize(&g.observations, &l.db, &l.vlad, l.geom.as_ref(), &l.cfg)?;
        let label = (!a.single).then_some(g.image_id.as_str());
        out.extend(results::serialize_result(&r, label));
    }
    match &a.out {
        None => std::io::stdout()
            .write_all(&out)
            .map_err(|e| Error::io("<stdout>", e)),
        Some(path) => {
            write_bytes(path, &out)?;
            let mut m = RunManifest::new("query", None);
            reloc_manifest(&mut m, &a.db, &a.reloc)?;
            m.config("single", a.single);
            m.input(&a.query_obs)?;
            m.output(path)?;
            m.write(&manifest_path(path))
        }
    }
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    if a.thresholds < 2 {
        return Err(Error::Usage("--thresholds must be at least 2".into()));
    }
    if a.jobs == 0 {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    let l = load(&a.db, &a.reloc)?;
    let queries = harness::group_queries(observations::read_observations(&a.queries)?);
    let truth = labels::read_labels(&a.labels)?;
    let thresholds = eval::thresholds(a.thresholds);
    let ev = harness::evaluate(&l.db, &queries, &truth, &l.vlad, l.geom.as_ref(), &l.cfg, &thresholds, a.jobs)?;

    let pr_path = sidecar(&a.out, "pr.csv");
    let timing_path = sidecar(&a.out, "timing.json");
    write_bytes(&a.out, &report::serialize_report(&ev, &l.cfg))?;
    write_bytes(&pr_path, &report::serialize_pr_csv(&ev))?;
    write_bytes(&timing_path, &report::serialize_timing(&ev, a.jobs))?;

    let mut m = RunManifest::new("eval", None);
    reloc_manifest(&mut m, &a.db, &a.reloc)?;
    m.config("thresholds", a.thresholds).config("jobs", a.jobs);
    m.input(&a.queries)?.input(&a.labels)?;
    // wall-clock timings differ between runs, so they stay out of the hashes
    m.output(&a.out)?.output(&pr_path)?;
    m.write(&manifest_path(&a.out))
}

fn train_geom(a: &TrainGeomArgs) -> Result<()> {
    let net_cfg = GeometryConfig {
        mlp_hidden: a.mlp_hidden,
        embed_dim: a.embed_dim,
        gat_hidden: a.gat_hidden,
        out_dim: a.out_dim,
        heads: a.heads,
        dropout: a.dropout,
        ..GeometryConfig::default()
    };
    net_cfg.validate().map_err(usage)?;
    let train_cfg = TrainConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        margin: a.margin,
        seed: a.seed,
        max_subset_images: a.max_subset_images,
        ..TrainConfig::default()
    };
    train_cfg.validate().map_err(usage)?;

    let obs = observations::read_observations(&a.train_obs)?;
    let rooms = geometry::training_rooms_from_observations(&obs);
    let net = GeometryNet::init(net_cfg, a.seed)?;
    let mut log = String::from("epoch,loss\n");
    let outcome = geometry::train_geometry_from(net, &rooms, &train_cfg, |epoch, loss| {
        log.push_str(&format!("{epoch},{loss}\n"));
        eprintln!("epoch {epoch}: loss {loss:.6}");
    })?;
    if outcome.non_separable {
        eprintln!("warning: loss did not fall below 90% of its first-epoch value; layouts may not be separable");
    }
    let log_path = sidecar(&a.out, "loss.csv");
    weights::write_geometry(&a.out, &outcome.net)?;
    write_bytes(&log_path, log.as_bytes())?;

    let mut m = RunManifest::new("train-geom", Some(a.seed));
    m.config("epochs", a.epochs)
        .config("lr", a.lr)
        .config("batch_size", a.batch_size)
        .config("margin", a.margin)
        .config("max_subset_images", a.max_subset_images)
        .config("mlp_hidden", a.mlp_hidden)
        .config("embed_dim", a.embed_dim)
        .config("gat_hidden", a.gat_hidden)
        .config("out_dim", a.out_dim)
        .config("heads", a.heads)
        .config("dropout", a.dropout);
    m.input(&a.train_obs)?;
    m.output(&a.out)?.output(&log_path)?;
    m.write(&manifest_path(&a.out))
}
