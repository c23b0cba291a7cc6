//! Day-ahead scheduling of interconnected microgrids as a cooperative game.
//!
//! The crate solves the cost-minimization schedule of every coalition of
//! microgrids — controllable generators with stepwise costs, battery storage
//! behind lossy converters, price-based load shifting, grid trade under
//! price risk and worst-case load/PV bounds — and allocates the grand
//! coalition's cost fairly with the Shapley value.
//!
//! Modules mirror the pipeline: [`scenario`] owns the instance data model,
//! [`uncertainty`] the price-risk estimates, [`model`] the mixed-integer
//! formulation, [`solver`] the LP/branch-and-bound engine, and [`game`] the
//! coalition enumeration and allocation.

pub mod game;
pub mod model;
pub mod scenario;
pub mod solver;
pub mod uncertainty;
