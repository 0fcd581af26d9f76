pub mod alignment;
pub mod exec;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod world;
pub mod trainers;
