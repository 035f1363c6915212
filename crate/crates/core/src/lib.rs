pub mod agent;
pub mod encoder;
pub mod graph;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod patterns;
