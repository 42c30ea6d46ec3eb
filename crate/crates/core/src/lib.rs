//! Simulated driving campaigns where a safety driver's interventions trigger
//! corner-case capture, plus the tooling to fold those captures back into a
//! segmentation training set and measure the effect.

pub mod agents;
pub mod arbitration;
pub mod capture;
pub mod curation;
pub mod eval;
pub mod experiment;
pub mod grid;
pub mod perception;
pub mod seed;
pub mod service;
pub mod world;
