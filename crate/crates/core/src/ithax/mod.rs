//! Supply-side event construction.
//!
//! Products are priced purely from their cover through a [`BandMapping`];
//! the mapping is searched by repeated binary cuts until the event's stock
//! value and stock depth land on target.

mod allocation;
mod bands;
mod initial;
mod solver;

pub use allocation::{depth_allocation, Allocation, Levers};
pub use bands::{is_adjustable, BandMapping, CoverBand, DEFAULT_MIN_WIDTH};
pub use initial::default_mapping;
pub use solver::{solve, IthaxTargets, Solution, SolveReport};
