pub mod clustering;
pub mod demand;
pub mod experiments;
pub mod incentives;
pub mod ingest;
pub mod ldd;
pub mod milp;
pub mod model;
pub mod simulator;
