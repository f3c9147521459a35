pub mod check;
pub mod engine;
pub mod messages;
pub mod model;
pub mod orchestrator;
pub mod registration;
pub mod runner;
pub mod scenario;
pub mod security;
pub mod timesync;
pub mod topology;
pub mod tsn;
