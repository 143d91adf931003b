//! Load sharing across a fleet of parallel modules.
//!
//! The priority list orders modules by peak efficiency. For a fixed set of
//! active modules and a demand, [`solve_equal_incremental`] finds the split
//! that maximises total efficiency. [`schedule`] picks the best active set
//! per demand and locates the switching points between sets.

mod equal_incremental;
pub mod schedule;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{Fleet, ModuleProfile};

pub use equal_incremental::solve_equal_incremental;
pub use schedule::{
    best_combination, build_dispatch_schedule, candidate_sets, find_switching_point,
    find_switching_point_with, DispatchSchedule, ScheduleOptions, ScheduleRange, SwitchingPoint,
    EXHAUSTIVE_LIMIT,
};

/// Relative slack used when checking a demand against a feasible range.
pub(crate) const FEASIBILITY_SLACK: f64 = 1e-9;

/// Ordered, duplicate-free subset of a fleet's module ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ActiveSet(Vec<String>);

impl ActiveSet {
    pub fn new<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        if ids.is_empty() {
            return Err(Error::Input("active set must not be empty".into()));
        }
        for (k, id) in ids.iter().enumerate() {
            if ids[..k].contains(id) {
                return Err(Error::Input(format!(
                    "module `{id}` listed twice in active set"
                )));
            }
        }
        Ok(Self(ids))
    }

    /// Every module of the fleet, in fleet order.
    pub fn all(fleet: &Fleet) -> Self {
        Self(fleet.ids().map(str::to_string).collect())
    }

    pub fn ids(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn profiles<'a>(&self, fleet: &'a Fleet) -> Result<Vec<&'a ModuleProfile>> {
        self.0.iter().map(|id| fleet.get(id)).collect()
    }

    /// `(sum of p_out_min, sum of p_out_max)` over the members.
    pub fn output_range(&self, fleet: &Fleet) -> Result<(f64, f64)> {
        let profiles = self.profiles(fleet)?;
        Ok((
            profiles.iter().map(|p| p.p_out_min()).sum(),
            profiles.iter().map(|p| p.p_out_max()).sum(),
        ))
    }

    pub fn is_feasible(&self, fleet: &Fleet, demand: f64) -> Result<bool> {
        let (lo, hi) = self.output_range(fleet)?;
        Ok(within(demand, lo, hi))
    }

    pub fn check_feasible(&self, fleet: &Fleet, demand: f64) -> Result<()> {
        let (lo, hi) = self.output_range(fleet)?;
        if !demand.is_finite() || !within(demand, lo, hi) {
            return Err(Error::Infeasible { demand, lo, hi });
        }
        Ok(())
    }
}

pub(crate) fn within(x: f64, lo: f64, hi: f64) -> bool {
    let slack = FEASIBILITY_SLACK * hi.abs().max(1.0);
    x >= lo - slack && x <= hi + slack
}

impl TryFrom<Vec<String>> for ActiveSet {
    type Error = Error;

    fn try_from(ids: Vec<String>) -> Result<Self> {
        ActiveSet::new(ids)
    }
}

impl From<ActiveSet> for Vec<String> {
    fn from(set: ActiveSet) -> Self {
        set.0
    }
}

impl fmt::Display for ActiveSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("+"))
    }
}

/// Operating point of one module within an [`Allocation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleDispatch {
    pub module_id: String,
    #[serde(rename = "p_out_w")]
    pub p_out: f64,
    #[serde(rename = "p_in_w")]
    pub p_in: f64,
    #[serde(rename = "current_a")]
    pub current: f64,
    /// Pinned at `p_out_min` or `p_out_max`.
    pub clamped: bool,
}

/// Per-module output powers serving one demand, with the resulting totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub modules: Vec<ModuleDispatch>,
    #[serde(rename = "total_p_out_w")]
    pub total_p_out: f64,
    #[serde(rename = "total_p_in_w")]
    pub total_p_in: f64,
    pub eta: f64,
}

impl Allocation {
    pub fn from_parts(modules: Vec<ModuleDispatch>) -> Self {
        let total_p_out = modules.iter().map(|m| m.p_out).sum();
        let total_p_in = modules.iter().map(|m| m.p_in).sum();
        Self {
            modules,
            total_p_out,
            total_p_in,
            eta: total_p_out / total_p_in,
        }
    }

    /// Builds an allocation from per-module output powers, in the order of
    /// `active`. Modules sitting on a bound are flagged as clamped.
    pub fn from_outputs(fleet: &Fleet, active: &ActiveSet, outputs: &[f64]) -> Result<Self> {
        if outputs.len() != active.len() {
            return Err(Error::Input(format!(
                "{} outputs for {} active modules",
                outputs.len(),
                active.len()
            )));
        }
        let modules = active
            .profiles(fleet)?
            .into_iter()
            .zip(outputs)
            .map(|(profile, &p_out)| {
                let current = profile.invert_pout(p_out)?;
                let p_out = p_out.clamp(profile.p_out_min(), profile.p_out_max());
                Ok(ModuleDispatch {
                    module_id: profile.module_id().to_string(),
                    p_out,
                    p_in: profile.eval_pin(current)?,
                    current,
                    clamped: at_bound(p_out, profile.p_out_min(), profile.p_out_max()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_parts(modules))
    }

    /// Every member of `active` at `demand / m`.
    pub fn equal_split(fleet: &Fleet, active: &ActiveSet, demand: f64) -> Result<Self> {
        let share = demand / active.len() as f64;
        for p in active.profiles(fleet)? {
            if !within(share, p.p_out_min(), p.p_out_max()) {
                return Err(Error::Infeasible {
                    demand,
                    lo: p.p_out_min() * active.len() as f64,
                    hi: p.p_out_max() * active.len() as f64,
                });
            }
        }
        Self::from_outputs(fleet, active, &vec![share; active.len()])
    }

    pub fn outputs(&self) -> Vec<f64> {
        self.modules.iter().map(|m| m.p_out).collect()
    }

    pub fn active_set(&self) -> ActiveSet {
        ActiveSet(self.modules.iter().map(|m| m.module_id.clone()).collect())
    }

    /// Largest pairwise difference of `dP_out/dP_in` among unclamped modules.
    pub fn marginal_spread(&self, fleet: &Fleet) -> Result<f64> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for m in self.modules.iter().filter(|m| !m.clamped) {
            let rate = fleet.get(&m.module_id)?.marginal_rate(m.current)?;
            lo = lo.min(rate);
            hi = hi.max(rate);
        }
        Ok(if hi >= lo { hi - lo } else { 0.0 })
    }
}

pub(crate) fn at_bound(p: f64, lo: f64, hi: f64) -> bool {
    let tol = 1e-12 * hi.abs().max(1.0);
    (p - lo).abs() <= tol || (hi - p).abs() <= tol
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorityEntry {
    pub module_id: String,
    pub peak_eta: f64,
    #[serde(rename = "peak_p_out_w")]
    pub peak_power: f64,
}

/// Modules ordered by peak efficiency, best first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorityList {
    pub entries: Vec<PriorityEntry>,
}

impl PriorityList {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.module_id.as_str())
    }

    /// `[first]`, `[first, second]`, ... up to the whole fleet.
    pub fn prefixes(&self) -> Vec<ActiveSet> {
        (1..=self.entries.len())
            .map(|n| ActiveSet(self.ids().take(n).map(str::to_string).collect()))
            .collect()
    }
}

/// Sorts the fleet by peak efficiency, descending. Ties go to the module
/// with the lower input power at `i_min`, then to the smaller id.
pub fn build_priority_list(fleet: &Fleet) -> PriorityList {
    let mut keyed: Vec<_> = fleet
        .profiles()
        .iter()
        .map(|p| {
            let (i_pk, eta) = p.peak_efficiency();
            let idle = p.pin_poly().eval(p.i_min());
            (p, eta, p.pout_poly().eval(i_pk), idle)
        })
        .collect();
    keyed.sort_by(|a, b| {
        let by_eta = if (a.1 - b.1).abs() <= 1e-12 {
            std::cmp::Ordering::Equal
        } else {
            b.1.total_cmp(&a.1)
        };
        by_eta
            .then(a.3.total_cmp(&b.3))
            .then_with(|| a.0.module_id().cmp(b.0.module_id()))
    });
    PriorityList {
        entries: keyed
            .into_iter()
            .map(|(p, peak_eta, peak_power, _)| PriorityEntry {
                module_id: p.module_id().to_string(),
                peak_eta,
                peak_power,
            })
            .collect(),
    }
}
