//! Plume-shine dose reference calculations and tree-ensemble surrogates.

pub mod dataset;
pub mod dispersion;
pub mod dose_kernel;
pub mod features;
pub mod kv;
pub mod nuclide_db;
pub mod pchip;
pub mod quadrature;
pub mod tree_models;
pub mod evaluation;
