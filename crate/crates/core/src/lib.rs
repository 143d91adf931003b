//! Efficiency-optimal load sharing across input-parallel output-parallel
//! converter modules.
//!
//! Measured efficiency samples are fitted to per-module power polynomials in
//! output current. Allocators split a total output demand across an active
//! set of modules: the equal-incremental solver, a simulated annealer, an
//! exhaustive grid oracle and the equal-split baseline all implement
//! [`Allocator`] and can be looked up by name in an [`AllocatorRegistry`].

pub mod annealer;
pub mod compare;
pub mod curvefit;
pub mod dispatch;
pub mod error;
pub mod oracle;
pub mod profile;
pub mod strategy;
pub mod synth;
pub mod tps;

pub use annealer::{anneal, AnnealOutcome, AnnealerConfig};
pub use compare::{compare_with_equal_split, Comparison};
pub use curvefit::{fit_polynomial, fit_profile, FitReport, ProfileFit};
pub use dispatch::{
    build_dispatch_schedule, build_priority_list, solve_equal_incremental, ActiveSet, Allocation,
    DispatchSchedule, ModuleDispatch, PriorityList, ScheduleOptions,
};
pub use error::{Error, Result};
pub use oracle::{enumerate_combinations, grid_search, OracleResult};
pub use profile::{EfficiencySample, Fleet, ModuleProfile, PowerPolynomial, QuadraticLoss};
pub use strategy::{Allocator, AllocatorRegistry};
