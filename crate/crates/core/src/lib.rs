//! Disk-resident graph index for high-dimensional vector search.
//!
//! The on-disk graph is packed into fixed-size blocks. Block shuffling
//! (`layout`) places graph neighbors in the same block so that one block
//! read serves several useful vertices, and the query engine (`engine`)
//! explores every promising occupant of each loaded block instead of just
//! the vertex it came for. Routing uses in-memory PQ codes (`pq`) and an
//! in-memory navigation graph over a sample of the data (`graph`).

pub mod bench;
pub mod dataset;
pub mod diskindex;
pub mod engine;
mod codec;
mod error;
pub mod graph;
pub mod layout;
pub mod pq;

pub use error::{Error, Result};
