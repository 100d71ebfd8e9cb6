//! Fusion of address-history records with census marginals into annual
//! block-group origin–destination flow matrices.
//!
//! The pipeline runs in four layers:
//!
//! * [`records`] turns dated address lists into expected one-year-ago
//!   responses and aggregates them into address-level matrices.
//! * [`crosswalk`] maps address-level matrices onto block groups.
//! * [`harmonize`] rescales the raw block-group matrix against population,
//!   mover, state-flow and county marginals (the last by block IPF).
//! * [`validate`], [`synth`] and [`analytics`] measure and use the result.

pub mod analytics;
pub mod commands;
pub mod config;
pub mod constraints;
pub mod crosswalk;
pub mod error;
pub mod flow;
pub mod geo;
pub mod harmonize;
pub mod io;
pub mod records;
pub mod rng;
pub mod synth;
pub mod validate;

mod kahan;

pub use error::{Error, Result};
pub use flow::{BlockPartition, BlockSel, DiagonalMode, FlowMatrix, Level};
pub use geo::{GeoHierarchy, GeographyChange};
