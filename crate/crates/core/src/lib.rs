//! Object-based room-level relocalization.
//!
//! The pipeline works on pre-extracted object keypoints: every object is
//! encoded into a residual-aggregation appearance code, rooms are scored by
//! summing the best per-object cosine matches, and ambiguous queries are
//! resolved with a graph-attention embedding of the inter-object layout.
//!
//! The crate is `no_std` (with `alloc`). Enable the `std` feature to let the
//! matrix kernels pick SIMD paths at runtime.
#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod appearance;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod math;
pub mod model;
pub mod reloc;
pub mod synth;

pub use error::{Error, Result};
pub use model::{
    GeometricFeature, KeypointSet, ObjectEmbedding, ObjectObservation, RoomDatabase, RoomRecord,
};
