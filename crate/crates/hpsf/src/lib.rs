//! Files, drivers and the command line around `hpsf-core`: the scene and
//! config text formats, PPM and stats output, table and partition dumps, a
//! rayon executor, the scaling benchmark and the `hpsf` runner.

pub mod bench;
pub mod config_file;
pub mod dump;
pub mod error;
pub mod exec;
pub mod ppm;
pub mod run;
pub mod scene_file;
pub mod stats_file;

pub use error::Error;
pub use exec::Pool;
pub use run::{run, Mode, RunConfig};
pub use scene_file::SceneFile;
