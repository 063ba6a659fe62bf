//! Point-cloud graph networks with learned, radius-based neighborhoods.
//!
//! The crate builds a jet tagger out of GravNet-style conv blocks. Each block
//! embeds nodes into a low-dimensional space, connects them by a fixed radius
//! (or by k nearest neighbors for the original formulation) and aggregates
//! L1-normalized features with an exponential distance falloff. Everything
//! runs on a small reverse-mode tape, so the whole model trains without an
//! external tensor library.

pub mod alloc;
pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gravconv;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod spatial;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use gravconv::Variant;
pub use model::{Tagger, TaggerConfig};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
