pub mod checks;
pub mod cli;
pub mod config;
pub mod covariance;
pub mod data;
pub mod error;
pub mod metrics;
pub mod objective;
pub mod recipes;
pub mod rng;
pub mod solver;
pub mod spectral;
pub mod svg;
pub mod trainer;
