pub mod calendar;
pub mod classifier;
pub mod cli;
pub mod clustering;
pub mod features;
pub mod ingest;
pub mod pipeline;
pub mod screening;
pub mod service;
pub mod synthgen;
