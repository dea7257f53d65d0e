//! CPU inference engine and static profiler for RefineNet-style
//! encoder-decoder segmentation networks, including the light-weight
//! variants built from 1x1 convolutions without residual conv units.

pub mod analyzer;
pub mod arch;
pub mod bench;
pub mod blocks;
pub mod cli;
pub mod container;
pub mod graph;
pub mod image;
pub mod metrics;
pub mod rf;
pub mod tensor;

pub use arch::{ArchSpec, Backbone, Variant};
pub use graph::{Graph, WeightStore};
pub use tensor::{Shape, Tensor};
