pub mod ensemble;
pub mod evaluation;
pub mod indicators;
pub mod ingest;
pub mod lstm;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod synthetic;
