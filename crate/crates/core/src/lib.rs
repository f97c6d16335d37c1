//! Hashed path space filtering.
//!
//! Path vertices produced by a forward path tracer are grouped into jittered,
//! quantized, level-of-detail aware voxels. Each voxel's running radiance sum
//! and sample count live in a concurrent open-addressing hash table that is
//! addressed by one hash and verified by a second (the fingerprint). After an
//! accumulation pass every vertex replaces its own noisy contribution by the
//! average of its voxel, with neighborhood and coarse-level fallbacks for
//! sparsely populated voxels, and averages are carried across frames.
//!
//! This crate is `no_std` (it needs `alloc`). File formats, parallel drivers
//! and the command-line front end live in the `hpsf` crate.

#![no_std]
#![warn(missing_debug_implementations, rust_2018_idioms)]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod bvh;
pub mod image;
pub mod keys;
pub mod math;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod stats;
pub mod table;
pub mod temporal;
pub mod tracer;

pub use image::Image;
pub use keys::{CellHashes, CellKey, FilterConfig, SENTINEL};
pub use math::{Rgb, Vec3};
pub use scene::{Camera, Material, Scene, SceneError};
pub use stats::FrameStats;
pub use table::{HashTable, InsertOutcome, InsertStatus, SumMode};
pub use tracer::{PathId, TraceOutput, VertexDescriptor, VertexSelectionPolicy};
