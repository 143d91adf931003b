//! Optimised dispatch against the equal-split control policy.

use serde::Serialize;

use crate::dispatch::{
    best_combination, build_priority_list, candidate_sets, ActiveSet, Allocation,
};
use crate::error::{Error, Result};
use crate::profile::Fleet;
use crate::strategy::Allocator;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    #[serde(rename = "demand_w")]
    pub demand: f64,
    /// All fleet modules at `demand / m`; `None` when that split is
    /// infeasible.
    pub eta_equal_split: Option<f64>,
    pub equal_split_note: Option<String>,
    /// Best over the candidate combinations.
    pub eta_optimized: f64,
    /// Optimised split with every fleet module active.
    pub eta_optimized_full_set: Option<f64>,
    /// `100 * (eta_optimized - eta_equal_split)`.
    pub improvement_points: Option<f64>,
    /// `100 * (eta_optimized_full_set - eta_equal_split)`.
    pub improvement_full_set_points: Option<f64>,
    pub optimized: Allocation,
}

pub fn compare_with_equal_split(
    allocator: &dyn Allocator,
    fleet: &Fleet,
    demand: f64,
    exhaustive: bool,
) -> Result<Comparison> {
    let all = ActiveSet::all(fleet);
    let priority = build_priority_list(fleet);
    let candidates = candidate_sets(fleet, &priority, exhaustive);
    let optimized = match best_combination(allocator, fleet, &candidates, demand)? {
        Some(a) => a,
        None => {
            let (_, hi) = all.output_range(fleet)?;
            let lo = fleet
                .profiles()
                .iter()
                .map(|p| p.p_out_min())
                .fold(f64::INFINITY, f64::min);
            return Err(Error::Infeasible { demand, lo, hi });
        }
    };

    let (eta_equal_split, equal_split_note) = match Allocation::equal_split(fleet, &all, demand) {
        Ok(a) => (Some(a.eta), None),
        Err(Error::Infeasible { .. }) => (
            None,
            Some(format!(
                "equal split of {demand} W across {} modules violates a module range",
                all.len()
            )),
        ),
        Err(e) => return Err(e),
    };
    let eta_optimized_full_set = if all.is_feasible(fleet, demand)? {
        Some(allocator.allocate(fleet, &all, demand)?.eta)
    } else {
        None
    };
    let points = |x: Option<f64>| Some(100.0 * (x? - eta_equal_split?));
    Ok(Comparison {
        demand,
        eta_equal_split,
        equal_split_note,
        eta_optimized: optimized.eta,
        eta_optimized_full_set,
        improvement_points: points(Some(optimized.eta)),
        improvement_full_set_points: points(eta_optimized_full_set),
        optimized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::QuadraticLoss;
    use crate::strategy::EqualIncremental;

    #[test]
    fn closed_form_pair_improvement() {
        let fleet = Fleet::new(vec![
            QuadraticLoss::new(3.0, 0.0, 0.002)
                .to_profile("A", 80.0, 10.0, 500.0)
                .unwrap(),
            QuadraticLoss::new(6.0, 0.0, 0.001)
                .to_profile("B", 80.0, 10.0, 500.0)
                .unwrap(),
        ])
        .unwrap();
        let c = compare_with_equal_split(&EqualIncremental, &fleet, 300.0, false).unwrap();
        let eq = c.eta_equal_split.unwrap();
        assert!((eq - 300.0 / 376.5).abs() < 1e-12);
        assert!((eq - 0.796813).abs() < 1e-6);
        assert!((c.eta_optimized - 300.0 / 369.0).abs() < 1e-9);
        let want = 100.0 * (300.0 / 369.0 - 300.0 / 376.5);
        assert!((c.improvement_points.unwrap() - want).abs() < 1e-7);
        assert!((want - 1.62).abs() < 0.01);
    }

    #[test]
    fn identical_pair_has_no_full_set_gain() {
        let m = QuadraticLoss::new(5.0, 0.0, 0.001);
        let fleet = Fleet::new(vec![
            m.to_profile("A1", 80.0, 10.0, 500.0).unwrap(),
            m.to_profile("A2", 80.0, 10.0, 500.0).unwrap(),
        ])
        .unwrap();
        for demand in [30.0, 90.0, 150.0, 400.0, 990.0] {
            let c = compare_with_equal_split(&EqualIncremental, &fleet, demand, false).unwrap();
            assert!(
                c.improvement_full_set_points.unwrap().abs() < 1e-7,
                "{demand}"
            );
            assert!(c.improvement_points.unwrap() >= -1e-9);
        }
    }

    #[test]
    fn infeasible_equal_split_is_reported() {
        let fleet = Fleet::new(vec![
            QuadraticLoss::new(3.0, 0.0, 0.002)
                .to_profile("A", 80.0, 10.0, 500.0)
                .unwrap(),
            QuadraticLoss::new(6.0, 0.0, 0.001)
                .to_profile("B", 80.0, 10.0, 100.0)
                .unwrap(),
        ])
        .unwrap();
        let c = compare_with_equal_split(&EqualIncremental, &fleet, 400.0, false).unwrap();
        assert!(c.eta_equal_split.is_none());
        assert!(c.equal_split_note.is_some());
        assert!(c.eta_optimized > 0.0);
    }
}
