//! Brute-force reference allocations.
//!
//! Output powers of all modules but the last run over a grid
//! `p_out_min + k * step` (plus `p_out_max`). The last module takes whatever
//! is left, and a cell is rejected when that remainder falls outside its
//! bounds. Total output is fixed, so the best cell is the one with the
//! smallest total input power.

use serde::Serialize;

use crate::dispatch::{within, ActiveSet, Allocation};
use crate::error::{Error, Result};
use crate::profile::{Fleet, ModuleProfile};

pub const MAX_ORACLE_MODULES: usize = 4;

pub const DEFAULT_GRID_STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub best: Allocation,
    pub active_set: ActiveSet,
    #[serde(rename = "grid_step_w")]
    pub grid_step: f64,
    /// Grid cells enumerated, including cells rejected because the last
    /// module could not absorb the remainder.
    pub evaluations: u64,
}

/// Output-power grid of one module with the matching input powers.
struct Axis {
    values: Vec<f64>,
    inputs: Vec<f64>,
    /// Number of leading values of the form `min + k * step`.
    regular: usize,
}

fn axis_values(profile: &ModuleProfile, step: f64) -> Vec<f64> {
    let (lo, hi) = (profile.p_out_min(), profile.p_out_max());
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    let mut values: Vec<f64> = (0..=n)
        .map(|k| lo + k as f64 * step)
        .filter(|&v| v <= hi)
        .collect();
    if hi - values.last().copied().unwrap_or(lo) > 1e-9 * hi.abs().max(1.0) {
        values.push(hi);
    }
    values
}

impl Axis {
    fn new(profile: &ModuleProfile, step: f64) -> Result<Self> {
        let values = axis_values(profile, step);
        let regular = values
            .iter()
            .enumerate()
            .take_while(|&(k, &v)| v == profile.p_out_min() + k as f64 * step)
            .count();
        let inputs = values
            .iter()
            .map(|&p| profile.eval_pin(profile.invert_pout(p)?))
            .collect::<Result<_>>()?;
        Ok(Self {
            values,
            inputs,
            regular,
        })
    }
}

/// Number of cells [`grid_search`] enumerates for `active`.
pub fn grid_cardinality(fleet: &Fleet, active: &ActiveSet, step: f64) -> Result<u64> {
    let profiles = active.profiles(fleet)?;
    Ok(profiles[..profiles.len() - 1]
        .iter()
        .map(|p| axis_values(p, step).len() as u64)
        .product())
}

fn check_capability(active: &ActiveSet, step: f64) -> Result<()> {
    if active.len() > MAX_ORACLE_MODULES {
        return Err(Error::Capability(format!(
            "grid search handles at most {MAX_ORACLE_MODULES} modules, got {}; use the annealer instead",
            active.len()
        )));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Input(format!(
            "grid step must be positive, got {step}"
        )));
    }
    Ok(())
}

struct Search<'a> {
    axes: Vec<Axis>,
    last: &'a ModuleProfile,
    demand: f64,
    step: f64,
    /// Remainder table for cells where every axis index is regular:
    /// `base - n * step` for `n = sum of indices`, as an input power.
    remainder_inputs: Vec<f64>,
    best_input: f64,
    best_cell: Option<Vec<usize>>,
}

impl Search<'_> {
    fn last_input(&self, remainder: f64) -> Option<f64> {
        let (lo, hi) = (self.last.p_out_min(), self.last.p_out_max());
        if !within(remainder, lo, hi) {
            return None;
        }
        let r = remainder.clamp(lo, hi);
        self.last.eval_pin(self.last.invert_pout(r).ok()?).ok()
    }

    fn walk(
        &mut self,
        depth: usize,
        cell: &mut Vec<usize>,
        out_sum: f64,
        in_sum: f64,
        regular_index: Option<usize>,
    ) {
        if depth == self.axes.len() {
            let pin = match regular_index {
                Some(n) => self.remainder_inputs[n],
                None => match self.last_input(self.demand - out_sum) {
                    Some(p) => p,
                    None => return,
                },
            };
            if pin.is_nan() {
                return;
            }
            let total = in_sum + pin;
            if total < self.best_input {
                self.best_input = total;
                self.best_cell = Some(cell.clone());
            }
            return;
        }
        let slack = 1e-9 * self.demand.abs().max(1.0);
        let innermost = depth + 1 == self.axes.len();
        // On the innermost axis, skip values that leave more than the last
        // module can take.
        let start = if innermost {
            let need = self.demand - out_sum - self.last.p_out_max() - slack;
            self.axes[depth].values.partition_point(|&v| v < need)
        } else {
            0
        };
        let floor = if innermost {
            self.last.p_out_min()
        } else {
            0.0
        };
        for k in start..self.axes[depth].values.len() {
            let (v, pin) = (self.axes[depth].values[k], self.axes[depth].inputs[k]);
            if out_sum + v + floor > self.demand + slack {
                break;
            }
            let idx = match regular_index {
                Some(n) if k < self.axes[depth].regular => Some(n + k),
                _ => None,
            };
            cell.push(k);
            self.walk(depth + 1, cell, out_sum + v, in_sum + pin, idx);
            cell.pop();
        }
    }
}

/// Exhaustive grid search over the split of `demand` across `active`.
/// Ties keep the lexicographically smallest output vector.
pub fn grid_search(
    fleet: &Fleet,
    active: &ActiveSet,
    demand: f64,
    step: f64,
) -> Result<OracleResult> {
    check_capability(active, step)?;
    active.check_feasible(fleet, demand)?;
    let profiles = active.profiles(fleet)?;
    let (head, last) = profiles.split_at(profiles.len() - 1);
    let last = last[0];

    let axes = head
        .iter()
        .map(|p| Axis::new(p, step))
        .collect::<Result<Vec<_>>>()?;
    let base = demand - head.iter().map(|p| p.p_out_min()).sum::<f64>();
    let max_index: usize = axes.iter().map(|a| a.regular.saturating_sub(1)).sum();
    let mut search = Search {
        axes,
        last,
        demand,
        step,
        remainder_inputs: Vec::new(),
        best_input: f64::INFINITY,
        best_cell: None,
    };
    search.remainder_inputs = (0..=max_index)
        .map(|n| {
            search
                .last_input(base - n as f64 * search.step)
                .unwrap_or(f64::NAN)
        })
        .collect();

    let mut cell = Vec::with_capacity(head.len());
    search.walk(0, &mut cell, 0.0, 0.0, Some(0));

    let cell = search
        .best_cell
        .ok_or_else(|| Error::Solver(format!("no grid cell at step {step} W serves {demand} W")))?;
    let mut outputs: Vec<f64> = cell
        .iter()
        .zip(&search.axes)
        .map(|(&k, axis)| axis.values[k])
        .collect();
    let rest = demand - outputs.iter().sum::<f64>();
    outputs.push(rest.clamp(last.p_out_min(), last.p_out_max()));

    Ok(OracleResult {
        best: Allocation::from_outputs(fleet, active, &outputs)?,
        active_set: active.clone(),
        grid_step: step,
        evaluations: grid_cardinality(fleet, active, step)?,
    })
}

/// Grid search over every feasible non-empty subset of the fleet.
pub fn enumerate_combinations(fleet: &Fleet, demand: f64, step: f64) -> Result<OracleResult> {
    let m = fleet.len();
    if m > MAX_ORACLE_MODULES {
        return Err(Error::Capability(format!(
            "combination search handles at most {MAX_ORACLE_MODULES} modules, got {m}; use the annealer instead"
        )));
    }
    let ids: Vec<&str> = fleet.ids().collect();
    let mut best: Option<OracleResult> = None;
    let mut evaluations = 0;
    for mask in 1u32..(1 << m) {
        let set = ActiveSet::new((0..m).filter(|k| mask & (1 << k) != 0).map(|k| ids[k]))?;
        if !set.is_feasible(fleet, demand)? {
            continue;
        }
        let r = grid_search(fleet, &set, demand, step)?;
        evaluations += r.evaluations;
        if best.as_ref().is_none_or(|b| r.best.eta > b.best.eta) {
            best = Some(r);
        }
    }
    let mut best = best.ok_or_else(|| {
        let lo = fleet
            .profiles()
            .iter()
            .map(|p| p.p_out_min())
            .fold(f64::INFINITY, f64::min);
        let hi = fleet.profiles().iter().map(|p| p.p_out_max()).sum();
        Error::Infeasible { demand, lo, hi }
    })?;
    best.evaluations = evaluations;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::QuadraticLoss;

    fn pair(a: QuadraticLoss, b: QuadraticLoss, b_max: f64) -> Fleet {
        Fleet::new(vec![
            a.to_profile("A", 80.0, 10.0, 500.0).unwrap(),
            b.to_profile("B", 80.0, 10.0, b_max).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn identical_pair_splits_evenly() {
        let m = QuadraticLoss::new(5.0, 0.0, 0.001);
        let fleet = pair(m, m, 500.0);
        let r = grid_search(&fleet, &ActiveSet::all(&fleet), 400.0, 1.0).unwrap();
        let out = r.best.outputs();
        assert!(
            (out[0] - 200.0).abs() < 1e-9 && (out[1] - 200.0).abs() < 1e-9,
            "{out:?}"
        );
        assert_eq!(r.evaluations, 491);
    }

    #[test]
    fn closed_form_pair() {
        let fleet = pair(
            QuadraticLoss::new(3.0, 0.0, 0.002),
            QuadraticLoss::new(6.0, 0.0, 0.001),
            500.0,
        );
        let r = grid_search(&fleet, &ActiveSet::all(&fleet), 300.0, 0.1).unwrap();
        let out = r.best.outputs();
        assert!(
            (out[0] - 100.0).abs() <= 0.1 && (out[1] - 200.0).abs() <= 0.1,
            "{out:?}"
        );
        assert!((r.best.eta - 0.813008).abs() < 1e-6);
    }

    #[test]
    fn full_capacity_is_the_corner() {
        let fleet = pair(
            QuadraticLoss::new(3.0, 0.0, 0.002),
            QuadraticLoss::new(6.0, 0.0, 0.001),
            333.3,
        );
        let r = grid_search(&fleet, &ActiveSet::all(&fleet), 833.3, 0.7).unwrap();
        let out = r.best.outputs();
        assert!(
            (out[0] - 500.0).abs() < 1e-9 && (out[1] - 333.3).abs() < 1e-9,
            "{out:?}"
        );
    }

    #[test]
    fn three_module_grid_matches_naive_enumeration() {
        let fleet = Fleet::new(vec![
            QuadraticLoss::new(3.0, 0.0, 0.002)
                .to_profile("A", 80.0, 10.0, 60.0)
                .unwrap(),
            QuadraticLoss::new(6.0, 0.0, 0.001)
                .to_profile("B", 80.0, 12.5, 75.0)
                .unwrap(),
            QuadraticLoss::new(4.0, 0.01, 0.0015)
                .to_profile("C", 80.0, 5.0, 50.0)
                .unwrap(),
        ])
        .unwrap();
        let all = ActiveSet::all(&fleet);
        let step = 0.5;
        let demand = 101.3;
        let r = grid_search(&fleet, &all, demand, step).unwrap();

        let ps = fleet.profiles();
        let pin = |p: &ModuleProfile, x: f64| p.eval_pin(p.invert_pout(x).unwrap()).unwrap();
        let mut best = f64::INFINITY;
        for x in axis_values(&ps[0], step) {
            for y in axis_values(&ps[1], step) {
                let z = demand - x - y;
                if z < ps[2].p_out_min() - 1e-9 || z > ps[2].p_out_max() + 1e-9 {
                    continue;
                }
                best = best.min(pin(&ps[0], x) + pin(&ps[1], y) + pin(&ps[2], z.clamp(5.0, 50.0)));
            }
        }
        assert!(
            (r.best.total_p_in - best).abs() < 1e-9,
            "{} vs {best}",
            r.best.total_p_in
        );
        let n0 = axis_values(&ps[0], step).len() as u64;
        let n1 = axis_values(&ps[1], step).len() as u64;
        assert_eq!(r.evaluations, n0 * n1);
    }

    #[test]
    fn halving_the_step_never_hurts() {
        let fleet = pair(
            QuadraticLoss::new(3.0, 0.0, 0.002),
            QuadraticLoss::new(6.0, 0.0, 0.001),
            500.0,
        );
        let all = ActiveSet::all(&fleet);
        for demand in [37.0, 211.1, 654.3] {
            let coarse = grid_search(&fleet, &all, demand, 2.0).unwrap().best.eta;
            let fine = grid_search(&fleet, &all, demand, 1.0).unwrap().best.eta;
            assert!(fine >= coarse - 1e-9);
        }
    }

    #[test]
    fn too_many_modules() {
        let m = QuadraticLoss::new(5.0, 0.0, 0.001);
        let fleet = Fleet::new(
            (0..5)
                .map(|k| m.to_profile(format!("m{k}"), 80.0, 10.0, 100.0).unwrap())
                .collect(),
        )
        .unwrap();
        assert!(matches!(
            grid_search(&fleet, &ActiveSet::all(&fleet), 250.0, 1.0),
            Err(Error::Capability(_))
        ));
        assert!(matches!(
            enumerate_combinations(&fleet, 250.0, 1.0),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn combinations_pick_single_at_light_load_and_pair_when_forced() {
        let m = QuadraticLoss::new(5.0, 0.0, 0.001);
        let fleet = pair(m, m, 500.0);
        let light = enumerate_combinations(&fleet, 60.0, 0.5).unwrap();
        assert_eq!(light.active_set.len(), 1);
        let heavy = enumerate_combinations(&fleet, 700.0, 0.5).unwrap();
        assert_eq!(heavy.active_set.len(), 2);
    }
}
