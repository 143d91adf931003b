//! Active-set selection over a demand range and the switching points between
//! winning combinations.

use log::{debug, warn};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::profile::Fleet;
use crate::strategy::{Allocator, EqualIncremental};

use super::{build_priority_list, ActiveSet, Allocation, PriorityList};

/// Largest fleet for which `exhaustive` enumerates every subset.
pub const EXHAUSTIVE_LIMIT: usize = 12;

/// Efficiency gap below which two combinations count as tied at a switch.
const SWITCH_TOLERANCE: f64 = 1e-8;

/// Efficiency margin below which candidate sets are treated as equal.
const TIE_MARGIN: f64 = 1e-12;

/// Total output at which the best active set changes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingPoint {
    #[serde(rename = "p_total_w")]
    pub p_total: f64,
    pub set_below: ActiveSet,
    pub set_above: ActiveSet,
    pub eta_at_switch: f64,
}

/// Bisects `eta_a(P) - eta_b(P)` on `[p_lo, p_hi]` using equal-incremental
/// allocations for both sets.
pub fn find_switching_point(
    fleet: &Fleet,
    set_a: &ActiveSet,
    set_b: &ActiveSet,
    p_lo: f64,
    p_hi: f64,
) -> Result<Option<SwitchingPoint>> {
    find_switching_point_with(&EqualIncremental, fleet, set_a, set_b, p_lo, p_hi)
}

/// As [`find_switching_point`], with the per-set efficiency supplied by
/// `allocator`. Returns `None` when the gap does not change sign on the
/// bracket.
pub fn find_switching_point_with(
    allocator: &dyn Allocator,
    fleet: &Fleet,
    set_a: &ActiveSet,
    set_b: &ActiveSet,
    p_lo: f64,
    p_hi: f64,
) -> Result<Option<SwitchingPoint>> {
    if !(p_lo < p_hi) {
        return Err(Error::Input(format!(
            "switching bracket [{p_lo}, {p_hi}] is empty"
        )));
    }
    for set in [set_a, set_b] {
        set.check_feasible(fleet, p_lo)?;
        set.check_feasible(fleet, p_hi)?;
    }
    let gap = |p: f64| -> Result<(f64, f64)> {
        let ea = allocator.allocate(fleet, set_a, p)?.eta;
        let eb = allocator.allocate(fleet, set_b, p)?.eta;
        Ok((ea - eb, ea))
    };

    let (g_lo, _) = gap(p_lo)?;
    let (g_hi, _) = gap(p_hi)?;
    // Orientation: positive means set_a is ahead above the switch.
    let sense = if g_hi != 0.0 {
        g_hi.signum()
    } else if g_lo != 0.0 {
        -g_lo.signum()
    } else {
        return Ok(None);
    };
    if g_lo * sense > 0.0 || g_hi * sense < 0.0 {
        return Ok(None);
    }
    let (set_below, set_above) = if sense > 0.0 {
        (set_b.clone(), set_a.clone())
    } else {
        (set_a.clone(), set_b.clone())
    };

    let (mut lo, mut hi) = (p_lo, p_hi);
    let (mut best_p, mut best_g) = if g_lo.abs() <= g_hi.abs() {
        (p_lo, g_lo)
    } else {
        (p_hi, g_hi)
    };
    for _ in 0..200 {
        if best_g.abs() < 1e-14 || hi - lo <= 1e-12 * hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (g, _) = gap(mid)?;
        if g.abs() < best_g.abs() {
            best_p = mid;
            best_g = g;
        }
        if g * sense < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best_g.abs() >= SWITCH_TOLERANCE {
        return Err(Error::Solver(format!(
            "efficiencies of {set_a} and {set_b} jump across {best_p} W without crossing"
        )));
    }
    let (_, eta_a) = gap(best_p)?;
    Ok(Some(SwitchingPoint {
        p_total: best_p,
        set_below,
        set_above,
        eta_at_switch: eta_a,
    }))
}

/// Combinations evaluated per demand: priority-list prefixes followed by
/// singletons not already covered, or every non-empty subset when
/// `exhaustive` is set and the fleet has at most [`EXHAUSTIVE_LIMIT`] modules.
pub fn candidate_sets(fleet: &Fleet, priority: &PriorityList, exhaustive: bool) -> Vec<ActiveSet> {
    let order: Vec<&str> = priority.ids().collect();
    if exhaustive {
        if order.len() <= EXHAUSTIVE_LIMIT {
            let m = order.len();
            let mut subsets: Vec<u32> = (1..(1u32 << m)).collect();
            subsets.sort_by_key(|mask| (mask.count_ones(), std::cmp::Reverse(mask.reverse_bits())));
            return subsets
                .into_iter()
                .map(|mask| {
                    ActiveSet::new((0..m).filter(|k| mask & (1 << k) != 0).map(|k| order[k]))
                        .expect("subset of distinct ids")
                })
                .collect();
        }
        warn!(
            "fleet of {} modules exceeds the exhaustive limit of {EXHAUSTIVE_LIMIT}; using priority prefixes",
            fleet.len()
        );
    }
    let mut sets = priority.prefixes();
    for id in order {
        let single = ActiveSet::new([id]).expect("single id");
        if !sets.contains(&single) {
            sets.push(single);
        }
    }
    sets
}

/// Best allocation at `demand` among `candidates`, or `None` when no
/// candidate can serve it. Within [`TIE_MARGIN`] the larger set wins.
pub fn best_combination(
    allocator: &dyn Allocator,
    fleet: &Fleet,
    candidates: &[ActiveSet],
    demand: f64,
) -> Result<Option<Allocation>> {
    let mut best: Option<Allocation> = None;
    for set in candidates {
        if !set.is_feasible(fleet, demand)? {
            continue;
        }
        let alloc = match allocator.allocate(fleet, set, demand) {
            Ok(a) => a,
            Err(Error::Infeasible { .. }) => continue,
            Err(e) => return Err(e),
        };
        let better = match &best {
            None => true,
            Some(b) => {
                alloc.eta > b.eta + TIE_MARGIN
                    || ((alloc.eta - b.eta).abs() <= TIE_MARGIN
                        && alloc.modules.len() > b.modules.len())
            }
        };
        if better {
            best = Some(alloc);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleOptions {
    pub p_min: f64,
    pub p_max: f64,
    pub step: f64,
    pub exhaustive: bool,
}

/// A demand interval served by one active set. `active` is `None` for a
/// gap no combination can serve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleRange {
    #[serde(rename = "p_lo_w")]
    pub p_lo: f64,
    #[serde(rename = "p_hi_w")]
    pub p_hi: f64,
    pub active: Option<ActiveSet>,
    #[serde(rename = "example_demand_w")]
    pub example_demand: f64,
    pub example: Option<Allocation>,
}

impl ScheduleRange {
    pub fn eta(&self) -> Option<f64> {
        self.example.as_ref().map(|a| a.eta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchSchedule {
    pub priority: PriorityList,
    pub ranges: Vec<ScheduleRange>,
    pub switching_points: Vec<SwitchingPoint>,
}

impl DispatchSchedule {
    /// Range serving `demand`. Ranges are half-open `[p_lo, p_hi)` except the
    /// last, so a demand on a switching point goes to the set above it.
    pub fn range_for(&self, demand: f64) -> Option<&ScheduleRange> {
        let last = self.ranges.len().checked_sub(1)?;
        self.ranges.iter().enumerate().find_map(|(k, r)| {
            let inside = demand >= r.p_lo && (demand < r.p_hi || (k == last && demand <= r.p_hi));
            inside.then_some(r)
        })
    }
}

/// Evaluates the best combination on a demand grid, merges neighbouring
/// grid points with the same winner and refines each boundary.
pub fn build_dispatch_schedule(
    allocator: &dyn Allocator,
    fleet: &Fleet,
    opts: &ScheduleOptions,
) -> Result<DispatchSchedule> {
    let ScheduleOptions {
        p_min,
        p_max,
        step,
        exhaustive,
    } = *opts;
    if !(p_min.is_finite() && p_max.is_finite() && p_min < p_max) {
        return Err(Error::Input(format!(
            "demand range [{p_min}, {p_max}] is empty"
        )));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Input(format!("step must be positive, got {step}")));
    }

    let priority = build_priority_list(fleet);
    let candidates = candidate_sets(fleet, &priority, exhaustive);

    let n = ((p_max - p_min) / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| p_min + k as f64 * step).collect();
    if p_max - grid[n] > 1e-9 * p_max.abs().max(1.0) {
        grid.push(p_max);
    } else {
        grid[n] = p_max;
    }

    let winners: Vec<Option<Allocation>> = grid
        .iter()
        .map(|&p| best_combination(allocator, fleet, &candidates, p))
        .collect::<Result<_>>()?;
    let sets: Vec<Option<ActiveSet>> = winners
        .iter()
        .map(|w| w.as_ref().map(Allocation::active_set))
        .collect();

    // Runs of equal winners, as [start, end] grid indices.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for k in 0..grid.len() {
        match runs.last_mut() {
            Some((_, end)) if sets[*end] == sets[k] => *end = k,
            _ => runs.push((k, k)),
        }
    }

    let mut ranges = Vec::with_capacity(runs.len());
    let mut switching_points = Vec::new();
    let mut lo = p_min;
    for (r, &(start, end)) in runs.iter().enumerate() {
        let hi = if r + 1 < runs.len() {
            let next = runs[r + 1].0;
            let (edge, sp) = boundary(
                allocator,
                fleet,
                sets[end].as_ref(),
                sets[next].as_ref(),
                grid[end],
                grid[next],
            )?;
            if let Some(sp) = sp {
                switching_points.push(sp);
            }
            edge
        } else {
            p_max
        };
        let mid = 0.5 * (lo + hi);
        let example_k = (start..=end)
            .min_by(|&a, &b| (grid[a] - mid).abs().total_cmp(&(grid[b] - mid).abs()))
            .unwrap_or(start);
        ranges.push(ScheduleRange {
            p_lo: lo,
            p_hi: hi,
            active: sets[start].clone(),
            example_demand: grid[example_k],
            example: winners[example_k].clone(),
        });
        lo = hi;
    }
    debug!(
        "schedule: {} ranges, {} switching points",
        ranges.len(),
        switching_points.len()
    );

    Ok(DispatchSchedule {
        priority,
        ranges,
        switching_points,
    })
}

/// Boundary between a run ending at grid point `g0` with `below` and the
/// next run starting at `g1` with `above`.
fn boundary(
    allocator: &dyn Allocator,
    fleet: &Fleet,
    below: Option<&ActiveSet>,
    above: Option<&ActiveSet>,
    g0: f64,
    g1: f64,
) -> Result<(f64, Option<SwitchingPoint>)> {
    let mid = 0.5 * (g0 + g1);
    if let (Some(a), Some(b)) = (below, above) {
        let feasible = a.is_feasible(fleet, g1)? && b.is_feasible(fleet, g0)?;
        if feasible {
            match find_switching_point_with(allocator, fleet, a, b, g0, g1) {
                Ok(Some(sp)) => return Ok((sp.p_total, Some(sp))),
                Ok(None) => return Ok((mid, None)),
                Err(Error::Solver(msg)) => {
                    warn!("{msg}; using bracket midpoint");
                    return Ok((mid, None));
                }
                Err(e) => return Err(e),
            }
        }
    }
    // A set leaving or entering its feasible range forces the change.
    if let Some(a) = below {
        let (_, cap) = a.output_range(fleet)?;
        if cap > g0 && cap < g1 {
            return Ok((cap, None));
        }
    }
    if let Some(b) = above {
        let (floor, _) = b.output_range(fleet)?;
        if floor > g0 && floor < g1 {
            return Ok((floor, None));
        }
    }
    Ok((mid, None))
}
