pub mod ba;
pub mod cli;
pub mod config;
pub mod engine;
pub mod eval;
pub mod geometry;
pub mod ingest;
pub mod loss;
pub mod model;
pub mod synthetic;
pub mod triangulate;
pub mod twoview;
