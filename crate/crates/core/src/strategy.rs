//! Interchangeable allocation methods, looked up by name at runtime.
//!
//! Every method answers the same question: how to split `demand` across a
//! fixed active set. The registry lets the CLI and the schedule builder pick
//! one without knowing which.

use std::fmt;

use crate::annealer::{anneal, AnnealerConfig};
use crate::dispatch::{solve_equal_incremental, ActiveSet, Allocation};
use crate::error::{Error, Result};
use crate::oracle::{grid_search, DEFAULT_GRID_STEP};
use crate::profile::Fleet;

pub trait Allocator: Send + Sync {
    /// Registry key.
    fn name(&self) -> &str;

    fn description(&self) -> &str {
        ""
    }

    fn allocate(&self, fleet: &Fleet, active: &ActiveSet, demand: f64) -> Result<Allocation>;
}

/// Equal marginal rate with bound clamping.
#[derive(Debug, Clone, Copy, Default)]
pub struct EqualIncremental;

impl Allocator for EqualIncremental {
    fn name(&self) -> &str {
        "equal-incremental"
    }

    fn description(&self) -> &str {
        "equal dP_out/dP_in across unclamped modules, bounds enforced by clamping"
    }

    fn allocate(&self, fleet: &Fleet, active: &ActiveSet, demand: f64) -> Result<Allocation> {
        solve_equal_incremental(fleet, active, demand)
    }
}

/// Every active module at `demand / m`.
#[derive(Debug, Clone, Copy, Default)]
pub struct EqualSplit;

impl Allocator for EqualSplit {
    fn name(&self) -> &str {
        "equal-split"
    }

    fn description(&self) -> &str {
        "identical output power on every active module"
    }

    fn allocate(&self, fleet: &Fleet, active: &ActiveSet, demand: f64) -> Result<Allocation> {
        active.check_feasible(fleet, demand)?;
        Allocation::equal_split(fleet, active, demand)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Annealing {
    pub config: AnnealerConfig,
}

impl Allocator for Annealing {
    fn name(&self) -> &str {
        "anneal"
    }

    fn description(&self) -> &str {
        "simulated annealing over pairwise power transfers"
    }

    fn allocate(&self, fleet: &Fleet, active: &ActiveSet, demand: f64) -> Result<Allocation> {
        Ok(anneal(fleet, active, demand, &self.config, None)?.best)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GridOracle {
    pub step: f64,
}

impl Default for GridOracle {
    fn default() -> Self {
        Self {
            step: DEFAULT_GRID_STEP,
        }
    }
}

impl Allocator for GridOracle {
    fn name(&self) -> &str {
        "grid"
    }

    fn description(&self) -> &str {
        "exhaustive grid search over output powers (at most 4 modules)"
    }

    fn allocate(&self, fleet: &Fleet, active: &ActiveSet, demand: f64) -> Result<Allocation> {
        Ok(grid_search(fleet, active, demand, self.step)?.best)
    }
}

#[derive(Default)]
pub struct AllocatorRegistry {
    entries: Vec<Box<dyn Allocator>>,
}

impl fmt::Debug for AllocatorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

impl AllocatorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding the four built-in methods.
    pub fn with_builtins(anneal: AnnealerConfig, grid_step: f64) -> Self {
        let mut reg = Self::new();
        reg.register(Box::new(EqualIncremental)).expect("unique");
        reg.register(Box::new(Annealing { config: anneal }))
            .expect("unique");
        reg.register(Box::new(GridOracle { step: grid_step }))
            .expect("unique");
        reg.register(Box::new(EqualSplit)).expect("unique");
        reg
    }

    pub fn register(&mut self, allocator: Box<dyn Allocator>) -> Result<()> {
        if self.entries.iter().any(|a| a.name() == allocator.name()) {
            return Err(Error::Input(format!(
                "allocator `{}` is already registered",
                allocator.name()
            )));
        }
        self.entries.push(allocator);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&dyn Allocator> {
        self.entries
            .iter()
            .find(|a| a.name() == name)
            .map(|a| a.as_ref())
            .ok_or_else(|| {
                Error::Input(format!(
                    "unknown allocation method `{name}` (available: {})",
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|a| a.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Allocator> {
        self.entries.iter().map(|a| a.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::QuadraticLoss;

    fn fleet() -> Fleet {
        Fleet::new(vec![
            QuadraticLoss::new(3.0, 0.0, 0.002)
                .to_profile("A", 80.0, 10.0, 500.0)
                .unwrap(),
            QuadraticLoss::new(6.0, 0.0, 0.001)
                .to_profile("B", 80.0, 10.0, 500.0)
                .unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn builtins_are_registered_by_name() {
        let reg = AllocatorRegistry::with_builtins(AnnealerConfig::default(), 0.5);
        assert_eq!(
            reg.names(),
            ["equal-incremental", "anneal", "grid", "equal-split"]
        );
        assert!(reg.get("nope").is_err());
        let mut reg = reg;
        assert!(reg.register(Box::new(EqualSplit)).is_err());
    }

    #[test]
    fn every_builtin_serves_the_same_demand() {
        let fleet = fleet();
        let all = ActiveSet::all(&fleet);
        let reg = AllocatorRegistry::with_builtins(AnnealerConfig::default(), 0.5);
        for alloc in reg.iter() {
            let a = alloc.allocate(&fleet, &all, 300.0).unwrap();
            assert!((a.total_p_out - 300.0).abs() < 1e-6, "{}", alloc.name());
            assert!(a.eta <= 300.0 / 369.0 + 1e-9, "{}", alloc.name());
        }
        let best = reg
            .get("equal-incremental")
            .unwrap()
            .allocate(&fleet, &all, 300.0)
            .unwrap();
        let split = reg
            .get("equal-split")
            .unwrap()
            .allocate(&fleet, &all, 300.0)
            .unwrap();
        assert!(best.eta > split.eta);
    }
}
