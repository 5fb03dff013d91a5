pub mod ask;
pub mod eval;
pub mod ingest;
pub mod queue;
pub mod serve;
