//! Self-attention, coordinate attention, and the hybrid block built on them.

pub mod coord;
pub mod emsa;
pub mod ham;

pub use coord::{ca_forward, CoordAttention, CoordCache, DEFAULT_REDUCTION};
pub use emsa::{emsa_forward, Emsa, EmsaCache, DEFAULT_HEADS};
pub use ham::{ham_forward, Ham, HamCache, HamConfig};
