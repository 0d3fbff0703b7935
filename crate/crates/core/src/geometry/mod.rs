//! Geometry pathway: per-object layout statistics, pairwise relative
//! features through an MLP, a two-layer graph-attention encoder with mean
//! pooling, cosine room scoring, and training under the room-matching loss.

mod features;
mod loss;
mod net;
mod train;

pub use features::{geometric_feature, geometric_feature_from_points};
pub use loss::{room_matching_loss, LossOutput, PairLabel, RoomPair};
pub use net::{
    gat_forward, gat_forward_train, geometry_scores, geometry_scores_for_embedding, relative_features, room_geom_embedding,
    room_geom_embedding_ordered, ForwardTrace, GatLayer, GeometryConfig, GeometryNet, HeadTrace,
};
pub use train::{
    batch_loss_and_gradient, train_geometry, train_geometry_from, training_rooms_from_observations,
    Adam, TrainConfig, TrainOutcome, TrainingImage, TrainingPair, TrainingRoom,
};
