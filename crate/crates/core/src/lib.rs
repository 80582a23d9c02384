//! Out-of-core detection of lockstep behavior in weighted, timestamped
//! user-product recommendation graphs.
//!
//! A *lockstep* is a group of users that recommended the same group of
//! products at around the same time, all with ratings on the same side of a
//! threshold (low ratings for defamation, high ratings for promotion). The
//! crate is organized bottom-up:
//!
//! * [`store`] ingests edge lists and lays them out as sorted binary shards
//!   that are scanned sequentially, one vertex adjacency at a time.
//! * [`lockstep`] holds the scoring functions and an exhaustive validity
//!   oracle for small instances.
//! * [`engine`] runs the seed-driven iterative search over a stored graph.
//! * [`attack`] generates random bipartite graphs, injects ground-truth
//!   attacks and scores recall.
//! * [`bench`] drives the scaling sweeps and fits them.

pub mod attack;
pub mod bench;
pub mod engine;
pub mod lockstep;
pub mod store;
mod types;

pub use types::{Mode, Recommendation, VertexId};
