//! Headless multi-agent schematic design review.
//!
//! The pipeline ingests a schematic, attaches netlist connectivity, partitions
//! each page into functional groups, retrieves and scores datasheet
//! specifications, runs `k` concurrent group reviews reconciled by a consensus
//! stage, clusters related findings into deterministically identified error
//! groups, and emits review comments.

pub mod datasheet;
pub mod gateway;
pub mod geometry;
pub mod hashing;
pub mod heuristic;
pub mod natural;
pub mod pipeline;
pub mod report;
pub mod review;
pub mod schematic;
pub mod singleflight;
pub mod trace;
pub mod unionfind;
mod xmlw;

pub use geometry::{BBox, Point};
