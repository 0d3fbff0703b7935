use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{room_matching_loss, PairLabel, RoomPair};
use super::net::{GeometryConfig, GeometryNet};
use crate::error::{Error, Result};
use crate::geometry::geometric_feature;
use crate::math;
use crate::model::{merge_geometric, GeometricFeature, ObjectObservation};

/// Optimization settings for the geometry encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Room pairs per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    /// Hinge margin on negative-pair cosine.
    pub margin: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Upper bound on the images merged into the partner side of a pair.
    pub max_subset_images: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 256,
            epochs: 30,
            margin: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            max_subset_images: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("learning rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.max_subset_images == 0 {
            return bad("batch size and subset size must be positive");
        }
        if !(0.0..1.0).contains(&self.margin) {
            return bad("margin must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("moment decay rates must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

/// Objects seen in one training image, keyed by object id.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingImage {
    pub image_id: String,
    pub objects: BTreeMap<String, GeometricFeature>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRoom {
    pub room_id: String,
    pub images: Vec<TrainingImage>,
}

impl TrainingRoom {
    /// Per-object features merged over the chosen images, in object-id order.
    pub fn merged(&self, images: &[usize]) -> Vec<GeometricFeature> {
        let mut per_object: BTreeMap<&str, Vec<GeometricFeature>> = BTreeMap::new();
        for &i in images {
            for (id, f) in &self.images[i].objects {
                per_object.entry(id.as_str()).or_default().push(*f);
            }
        }
        per_object
            .values()
            .map(|fs| merge_geometric(fs).expect("non-empty by construction"))
            .collect()
    }

    fn object_count(&self) -> usize {
        let all: Vec<usize> = (0..self.images.len()).collect();
        self.merged(&all).len()
    }
}

/// Groups observations into rooms and images (both sorted by id) and
/// computes each observation's geometric feature.
pub fn training_rooms_from_observations(observations: &[ObjectObservation]) -> Vec<TrainingRoom> {
    let mut rooms: BTreeMap<&str, BTreeMap<&str, BTreeMap<String, GeometricFeature>>> = BTreeMap::new();
    for o in observations {
        rooms
            .entry(o.room_id.as_str())
            .or_default()
            .entry(o.image_id.as_str())
            .or_default()
            .insert(o.object_id.clone(), geometric_feature(&o.keypoints));
    }
    rooms
        .into_iter()
        .map(|(room_id, images)| TrainingRoom {
            room_id: room_id.into(),
            images: images
                .into_iter()
                .map(|(image_id, objects)| TrainingImage {
                    image_id: image_id.into(),
                    objects,
                })
                .collect(),
        })
        .collect()
}

/// One room pair: image subsets of two rooms (the same room for positives).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub room_a: usize,
    pub images_a: Vec<usize>,
    pub room_b: usize,
    pub images_b: Vec<usize>,
    pub label: PairLabel,
}

/// Adaptive-moment optimizer state over the encoder's tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &GeometryNet, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = net.tensors().iter().map(|t| alloc::vec![0.0; t.as_slice().len()]).collect();
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, net: &mut GeometryNet, grad: &GeometryNet) {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for (((p, g), m), v) in net
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((p, &g), m), v) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / bc1) / (math::sqrt(*v / bc2) + self.eps);
                *p -= self.lr * update;
            }
        }
    }
}

/// Total loss over `pairs` and its gradient with respect to every
/// parameter. Pairs where either side has fewer than two objects are
/// skipped and counted. `rng` enables dropout.
pub fn batch_loss_and_gradient<R: RngCore>(
    net: &GeometryNet,
    rooms: &[TrainingRoom],
    pairs: &[TrainingPair],
    margin: f64,
    mut rng: Option<&mut R>,
) -> Result<(f64, GeometryNet, usize)> {
    let mut grad = GeometryNet::zeros(*net.config())?;
    let mut total = 0.0;
    let mut used = 0;
    for p in pairs {
        let fa = rooms[p.room_a].merged(&p.images_a);
        let fb = rooms[p.room_b].merged(&p.images_b);
        if fa.len() < 2 || fb.len() < 2 {
            continue;
        }
        let ta = net.forward(&fa, rng.as_deref_mut())?;
        let tb = net.forward(&fb, rng.as_deref_mut())?;
        let out = room_matching_loss(
            &[RoomPair {
                a: &ta.embedding,
                b: &tb.embedding,
                label: p.label,
            }],
            margin,
        )?;
        if out.skipped > 0 {
            continue;
        }
        total += out.loss;
        used += 1;
        let (ga, gb) = &out.grads[0];
        if ga.iter().chain(gb).any(|&g| g != 0.0) {
            net.backward(&ta, ga, &mut grad);
            net.backward(&tb, gb, &mut grad);
        }
    }
    Ok((total, grad, used))
}

fn sample_subset<R: Rng>(n: usize, exclude: Option<usize>, max: usize, rng: &mut R) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).filter(|&i| Some(i) != exclude).collect();
    let size = rng.random_range(1..=max.min(pool.len()));
    let (chosen, _) = pool.partial_shuffle(rng, size);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    chosen
}

/// One epoch of pairs: every image anchors one positive pair (against a
/// disjoint subset of its own room) and one negative pair (against a subset
/// of a uniformly drawn other room).
fn epoch_pairs<R: Rng>(rooms: &[TrainingRoom], cfg: &TrainConfig, rng: &mut R) -> Vec<TrainingPair> {
    let mut out = Vec::new();
    for (p, room) in rooms.iter().enumerate() {
        let n = room.images.len();
        for i in 0..n {
            if n >= 2 {
                out.push(TrainingPair {
                    room_a: p,
                    images_a: alloc::vec![i],
                    room_b: p,
                    images_b: sample_subset(n, Some(i), cfg.max_subset_images, rng),
                    label: PairLabel::Positive,
                });
            }
            let mut q = rng.random_range(0..rooms.len() - 1);
            if q >= p {
                q += 1;
            }
            out.push(TrainingPair {
                room_a: p,
                images_a: alloc::vec![i],
                room_b: q,
                images_b: sample_subset(rooms[q].images.len(), None, cfg.max_subset_images, rng),
                label: PairLabel::Negative,
            });
        }
    }
    out.shuffle(rng);
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: GeometryNet,
    /// Mean per-pair loss of every epoch, measured on the training batches.
    pub epoch_losses: Vec<f64>,
    /// Pairs dropped because a side had fewer than two objects.
    pub skipped_pairs: usize,
    /// Set when the last epoch's loss stayed above 90% of the first.
    pub non_separable: bool,
}

/// Trains a freshly initialized encoder (seeded from `cfg.seed`).
pub fn train_geometry(rooms: &[TrainingRoom], net_config: GeometryConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let net = GeometryNet::init(net_config, cfg.seed)?;
    train_geometry_from(net, rooms, cfg, |_, _| {})
}

/// Trains `net` in place of a fresh initialization, reporting each epoch's
/// mean loss to `on_epoch` as `(epoch index from 1, loss)`.
pub fn train_geometry_from(
    mut net: GeometryNet,
    rooms: &[TrainingRoom],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if rooms.len() < 2 {
        return Err(Error::InvalidConfig("training needs at least two rooms".into()));
    }
    for r in rooms {
        if r.images.is_empty() || r.object_count() < 2 {
            return Err(Error::GeometryUnavailable(r.object_count()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut adam = Adam::new(&net, cfg);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut skipped_pairs = 0;
    for epoch in 0..cfg.epochs {
        let pairs = epoch_pairs(rooms, cfg, &mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in pairs.chunks(cfg.batch_size) {
            let (loss, grad, used) = batch_loss_and_gradient(&net, rooms, batch, cfg.margin, Some(&mut rng))?;
            skipped_pairs += batch.len() - used;
            sum += loss;
            count += used;
            if used > 0 {
                adam.step(&mut net, &grad);
            }
        }
        let mean = if count > 0 { sum / count as f64 } else { 0.0 };
        on_epoch(epoch + 1, mean);
        epoch_losses.push(mean);
    }
    let non_separable = match (epoch_losses.first(), epoch_losses.last()) {
        (Some(&first), Some(&last)) => last > 0.9 * first,
        _ => false,
    };
    Ok(TrainOutcome {
        net,
        epoch_losses,
        skipped_pairs,
        non_separable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_rooms() -> Vec<TrainingRoom> {
        (0..3)
            .map(|r| TrainingRoom {
                room_id: alloc::format!("r{r}"),
                images: (0..3)
                    .map(|i| TrainingImage {
                        image_id: alloc::format!("i{i}"),
                        objects: (0..3)
                            .map(|o| {
                                let mut f = [0.0; GeometricFeature::DIM];
                                for (d, x) in f.iter_mut().enumerate() {
                                    *x = libm::sin((r * 31 + o * 7 + d) as f64 + 0.01 * i as f64) * 0.4 + 0.5;
                                }
                                (alloc::format!("o{o}"), GeometricFeature(f))
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect()
    }

    fn small() -> GeometryConfig {
        GeometryConfig {
            mlp_hidden: 8,
            embed_dim: 8,
            gat_hidden: 16,
            out_dim: 8,
            heads: 2,
            dropout: 0.5,
            leaky_slope: 0.2,
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let rooms = toy_rooms();
        let cfg = TrainConfig { lr: 0.0, epochs: 2, batch_size: 4, ..TrainConfig::default() };
        let start = GeometryNet::init(small(), 3).unwrap();
        let out = train_geometry_from(start.clone(), &rooms, &cfg, |_, _| {}).unwrap();
        for (a, b) in out.net.tensors().iter().zip(start.tensors()) {
            assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let rooms = toy_rooms();
        let cfg = TrainConfig { lr: 1e-3, epochs: 2, batch_size: 5, seed: 11, ..TrainConfig::default() };
        let a = train_geometry(&rooms, small(), &cfg).unwrap();
        let b = train_geometry(&rooms, small(), &cfg).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a.epoch_losses.len(), 2);
    }

    #[test]
    fn epoch_pairs_are_disjoint_and_balanced() {
        let rooms = toy_rooms();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = epoch_pairs(&rooms, &TrainConfig::default(), &mut rng);
        assert_eq!(pairs.len(), 2 * 9);
        for p in &pairs {
            match p.label {
                PairLabel::Positive => {
                    assert_eq!(p.room_a, p.room_b);
                    assert!(p.images_a.iter().all(|i| !p.images_b.contains(i)));
                }
                PairLabel::Negative => assert_ne!(p.room_a, p.room_b),
            }
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let rooms = toy_rooms();
        assert!(train_geometry(&rooms[..1], small(), &TrainConfig::default()).is_err());
        let bad = TrainConfig { margin: 1.5, ..TrainConfig::default() };
        assert!(train_geometry(&rooms, small(), &bad).is_err());
    }
}
