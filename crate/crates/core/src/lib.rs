pub mod geometry;
pub mod graph;
pub mod inference;
pub mod control;
pub mod perception;
pub mod sim;
pub mod telemetry;
pub mod batch;
pub mod protocol;
