//! File formats: splat PLY interchange and training checkpoints.

pub(crate) mod bytes;
pub mod checkpoint;
pub mod ply;

pub use checkpoint::Checkpoint;
pub use ply::{read_ply, write_ply, SH_C0};
