pub mod error;
pub mod solver;
pub mod tolerance;
pub mod geometry;
pub mod adaptation;
pub mod model;
pub mod controller;
pub mod synthesis;
pub mod sim;
pub mod verification;
pub mod config;
