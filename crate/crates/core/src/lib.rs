pub mod autodiff;
pub mod error;
pub mod forests;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod models;
pub mod runner;
pub mod store;
