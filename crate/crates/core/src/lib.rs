//! Triplet Graph Transformer: an edge-augmented graph transformer whose pair
//! channels exchange information through third-order (triplet) interactions,
//! trained in three stages for distance-aware graph property prediction.

pub mod tensor;
pub mod graph;
pub mod seed;
pub mod encodings;
pub mod nn;
pub mod layers;
pub mod model;
pub mod noising;
pub mod pipeline;
pub mod bench;
pub mod cli;
pub mod verify;
