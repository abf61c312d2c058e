//! Discrete-event simulation of generalized Jackson networks and finite-buffer
//! GI/G/1 queues, with Palm estimators and adjoint-relationship checks.

pub mod bar;
pub mod config;
pub mod engine;
pub mod experiment;
pub mod heavy_traffic;
pub mod network;
pub mod oracles;
pub mod output;
pub mod palm;
pub mod quadrature;
pub mod stats;
pub mod stochastics;
