//! Surrogate-assisted operating-point optimisation for a segmented solid
//! oxide electrolysis cell.
//!
//! The pipeline runs bottom-up: [`physics`] simulates the cell, [`dataset`]
//! samples it, [`surrogate`] fits one MLP per output, [`sensitivity`]
//! computes Sobol indices, [`optimize`] builds Pareto fronts at fixed power
//! and [`decision`] picks one point per front with LINMAP.

pub mod dataset;
pub mod decision;
pub mod indices;
pub mod optimize;
pub mod par;
pub mod physics;
pub mod roots;
pub mod sensitivity;
pub mod surrogate;
pub mod types;
