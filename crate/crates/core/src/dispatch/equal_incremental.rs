//! Equal-incremental allocation for a fixed active set.
//!
//! With total output fixed, maximising `sum P_out / sum P_in` is the same as
//! minimising `sum P_in`. At an interior optimum every module runs at the
//! same marginal rate `dP_out/dP_in = lambda`. Writing `mu = 1 / lambda`,
//! each module's best response to `mu` minimises `P_in(I) - mu * P_out(I)`
//! over its current range. The summed response is non-decreasing in `mu`, so
//! an outer bisection on `mu` meets the demand.

use crate::error::{Error, Result};
use crate::profile::{Fleet, ModuleProfile};

use super::{at_bound, ActiveSet, Allocation, ModuleDispatch};

/// Subintervals scanned per module when enumerating stationary points.
const ROOT_SCAN: usize = 128;

/// Maximises total efficiency of `active` at output `demand`.
///
/// Modules whose best response sits on a bound are clamped there and the
/// remaining demand is re-solved over the free modules, until no new clamps
/// appear.
pub fn solve_equal_incremental(
    fleet: &Fleet,
    active: &ActiveSet,
    demand: f64,
) -> Result<Allocation> {
    active.check_feasible(fleet, demand)?;
    let profiles = active.profiles(fleet)?;
    let m = profiles.len();

    // (current, p_out) of modules pinned to a bound.
    let mut pinned: Vec<Option<(f64, f64)>> = vec![None; m];
    let mut solved: Vec<(f64, f64)> = vec![(0.0, 0.0); m];

    for _ in 0..=m {
        let free: Vec<usize> = (0..m).filter(|&k| pinned[k].is_none()).collect();
        let fixed_output: f64 = pinned.iter().flatten().map(|&(_, p)| p).sum();
        let remaining = demand - fixed_output;

        if free.is_empty() {
            if (remaining).abs() > 1e-9 * demand.abs().max(1.0) {
                return Err(Error::Solver(format!(
                    "all modules clamped but {remaining} W of demand is unassigned"
                )));
            }
            break;
        }

        let free_profiles: Vec<&ModuleProfile> = free.iter().map(|&k| profiles[k]).collect();
        let points = solve_free(&free_profiles, remaining)?;

        let mut newly_clamped = false;
        for (&k, &(current, p_out)) in free.iter().zip(&points) {
            let p = profiles[k];
            solved[k] = (current, p_out);
            if at_bound(p_out, p.p_out_min(), p.p_out_max()) {
                let (i, po) = if (p_out - p.p_out_min()).abs() <= (p.p_out_max() - p_out).abs() {
                    (p.i_min(), p.p_out_min())
                } else {
                    (p.i_max(), p.p_out_max())
                };
                pinned[k] = Some((i, po));
                newly_clamped = true;
            }
        }
        if !newly_clamped {
            break;
        }
    }

    let modules = profiles
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let (current, p_out, clamped) = match pinned[k] {
                Some((i, po)) => (i, po, true),
                None => (solved[k].0, solved[k].1, false),
            };
            Ok(ModuleDispatch {
                module_id: p.module_id().to_string(),
                p_out,
                p_in: p.eval_pin(current)?,
                current,
                clamped,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Allocation::from_parts(modules))
}

/// Best response of one module to `mu`: the current minimising
/// `P_in(I) - mu * P_out(I)` on `[i_min, i_max]`. Every local minimum of the
/// interior is compared against both endpoints.
fn best_response(profile: &ModuleProfile, mu: f64) -> f64 {
    let pin = profile.pin_poly();
    let pout = profile.pout_poly();
    let objective = |i: f64| pin.eval(i) - mu * pout.eval(i);
    let slope = |i: f64| pin.eval_derivative(i) - mu * pout.eval_derivative(i);

    let (a, b) = (profile.i_min(), profile.i_max());
    let mut best_i = a;
    let mut best = objective(a);
    let mut consider = |i: f64| {
        let v = objective(i);
        if v < best {
            best = v;
            best_i = i;
        }
    };

    let step = (b - a) / ROOT_SCAN as f64;
    let mut x0 = a;
    let mut s0 = slope(a);
    for k in 1..=ROOT_SCAN {
        let x1 = if k == ROOT_SCAN {
            b
        } else {
            a + k as f64 * step
        };
        let s1 = slope(x1);
        // Slope crossing from negative to non-negative marks a local minimum.
        if s0 < 0.0 && s1 >= 0.0 {
            consider(bisect_root(&slope, x0, x1));
        }
        x0 = x1;
        s0 = s1;
    }
    consider(b);
    best_i
}

fn bisect_root(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    // f(lo) < 0 <= f(hi)
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return hi;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

struct Response {
    currents: Vec<f64>,
    outputs: Vec<f64>,
    total: f64,
}

fn respond(profiles: &[&ModuleProfile], mu: f64) -> Response {
    let currents: Vec<f64> = profiles.iter().map(|p| best_response(p, mu)).collect();
    let outputs: Vec<f64> = profiles
        .iter()
        .zip(&currents)
        .map(|(p, &i)| p.pout_poly().eval(i))
        .collect();
    let total = outputs.iter().sum();
    Response {
        currents,
        outputs,
        total,
    }
}

/// Returns `(current, p_out)` per module with outputs summing to `target`.
fn solve_free(profiles: &[&ModuleProfile], target: f64) -> Result<Vec<(f64, f64)>> {
    // Initial bracket from the range of dP_in/dP_out across all modules.
    let mut mu_lo = f64::INFINITY;
    let mut mu_hi = f64::NEG_INFINITY;
    for p in profiles {
        for k in 0..=16 {
            let i = p.i_min() + (p.i_max() - p.i_min()) * k as f64 / 16.0;
            let r = p.pin_poly().eval_derivative(i) / p.pout_poly().eval_derivative(i);
            mu_lo = mu_lo.min(r);
            mu_hi = mu_hi.max(r);
        }
    }
    let mut width = (mu_hi - mu_lo).max(1e-3 * mu_hi.abs().max(1.0));
    let mut lo = respond(profiles, mu_lo);
    let mut expansions = 0;
    let floor: f64 = profiles.iter().map(|p| p.pout_poly().eval(p.i_min())).sum();
    let ceiling: f64 = profiles.iter().map(|p| p.pout_poly().eval(p.i_max())).sum();
    // Targets within the feasibility slack of a range end cannot be bracketed.
    while lo.total > target && lo.total > floor {
        mu_lo -= width;
        width *= 2.0;
        lo = respond(profiles, mu_lo);
        expansions += 1;
        if expansions > 100 {
            return Err(Error::Solver(
                "cannot bracket the marginal rate from below".into(),
            ));
        }
    }
    let mut width = (mu_hi - mu_lo).max(1e-3);
    let mut hi = respond(profiles, mu_hi);
    while hi.total < target && hi.total < ceiling {
        mu_hi += width;
        width *= 2.0;
        hi = respond(profiles, mu_hi);
        expansions += 1;
        if expansions > 200 {
            return Err(Error::Solver(
                "cannot bracket the marginal rate from above".into(),
            ));
        }
    }

    for _ in 0..200 {
        let mid = 0.5 * (mu_lo + mu_hi);
        if mid <= mu_lo || mid >= mu_hi {
            break;
        }
        let r = respond(profiles, mid);
        if r.total < target {
            mu_lo = mid;
            lo = r;
        } else {
            mu_hi = mid;
            hi = r;
        }
    }

    // lo.total <= target <= hi.total. Blend the two responses; for smooth
    // problems they coincide, at a response jump this splits the gap.
    let span = hi.total - lo.total;
    let theta = if span > 0.0 {
        ((target - lo.total) / span).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let blended = profiles
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let (pl, ph) = (lo.outputs[k], hi.outputs[k]);
            if pl == ph {
                Ok((lo.currents[k], pl))
            } else {
                let p_out = pl + theta * (ph - pl);
                Ok((p.invert_pout(p_out)?, p_out))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let jumped = profiles.iter().enumerate().any(|(k, p)| {
        (hi.outputs[k] - lo.outputs[k]).abs() > GAP_TOLERANCE * (p.p_out_max() - p.p_out_min())
    });
    if !jumped {
        return Ok(blended);
    }
    // A jump in the response means some module is non-convex and the blend
    // need not satisfy equal marginal rates. Enumerate branches instead.
    let input = |pts: &[(f64, f64)]| -> f64 {
        profiles
            .iter()
            .zip(pts)
            .map(|(p, &(i, _))| p.pin_poly().eval(i))
            .sum()
    };
    match enumerate_branches(profiles, target) {
        Some(best) if input(&best) < input(&blended) => Ok(best),
        _ => Ok(blended),
    }
}

/// Relative response jump, as a fraction of a module's output span, treated
/// as a discontinuity.
const GAP_TOLERANCE: f64 = 1e-7;
/// Combination count above which branch enumeration is skipped.
const MAX_BRANCH_COMBINATIONS: usize = 1 << 14;
/// Samples of the shared rate per branch combination.
const RATE_SCAN: usize = 32;

#[derive(Debug, Clone, Copy)]
enum Branch {
    Fixed(f64),
    /// Interval of current on which `dP_in/dP_out` is monotone.
    Monotone {
        lo: f64,
        hi: f64,
        rate_lo: f64,
        rate_hi: f64,
    },
}

fn input_rate(p: &ModuleProfile, i: f64) -> f64 {
    p.pin_poly().eval_derivative(i) / p.pout_poly().eval_derivative(i)
}

fn branches(p: &ModuleProfile) -> Vec<Branch> {
    let (a, b) = (p.i_min(), p.i_max());
    let mut out = vec![Branch::Fixed(a), Branch::Fixed(b)];
    if b <= a {
        return out;
    }
    let xs: Vec<f64> = (0..=ROOT_SCAN)
        .map(|k| {
            if k == ROOT_SCAN {
                b
            } else {
                a + (b - a) * k as f64 / ROOT_SCAN as f64
            }
        })
        .collect();
    let rs: Vec<f64> = xs.iter().map(|&x| input_rate(p, x)).collect();
    let mut cuts = vec![a];
    for k in 1..ROOT_SCAN {
        let (d0, d1) = (rs[k] - rs[k - 1], rs[k + 1] - rs[k]);
        if d0 * d1 < 0.0 {
            // Refine the turning point on [x_{k-1}, x_{k+1}].
            let sign = d0.signum();
            let (mut lo, mut hi) = (xs[k - 1], xs[k + 1]);
            for _ in 0..100 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if sign * input_rate(p, m1) < sign * input_rate(p, m2) {
                    lo = m1;
                } else {
                    hi = m2;
                }
            }
            cuts.push(0.5 * (lo + hi));
        }
    }
    cuts.push(b);
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi > lo {
            out.push(Branch::Monotone {
                lo,
                hi,
                rate_lo: input_rate(p, lo),
                rate_hi: input_rate(p, hi),
            });
        }
    }
    out
}

/// Current on a monotone branch where `dP_in/dP_out = mu`.
fn branch_current(p: &ModuleProfile, branch: Branch, mu: f64) -> f64 {
    match branch {
        Branch::Fixed(i) => i,
        Branch::Monotone {
            lo,
            hi,
            rate_lo,
            rate_hi,
        } => {
            let rising = rate_hi >= rate_lo;
            let f = |i: f64| {
                let d = input_rate(p, i) - mu;
                if rising {
                    d
                } else {
                    -d
                }
            };
            if f(lo) >= 0.0 {
                lo
            } else if f(hi) < 0.0 {
                hi
            } else {
                bisect_root(&f, lo, hi)
            }
        }
    }
}

/// Best allocation among all combinations of per-module branches whose
/// free modules share one marginal rate and whose outputs meet `target`.
fn enumerate_branches(profiles: &[&ModuleProfile], target: f64) -> Option<Vec<(f64, f64)>> {
    let per_module: Vec<Vec<Branch>> = profiles.iter().map(|p| branches(p)).collect();
    let combos = per_module
        .iter()
        .try_fold(1usize, |acc, b| acc.checked_mul(b.len()))
        .filter(|&n| n <= MAX_BRANCH_COMBINATIONS);
    let Some(combos) = combos else {
        log::warn!("too many branch combinations; keeping the blended response");
        return None;
    };

    let tol = 1e-9 * target.abs().max(1.0);
    let mut best: Option<(f64, Vec<(f64, f64)>)> = None;
    let mut pick = vec![Branch::Fixed(0.0); profiles.len()];
    for mut code in 0..combos {
        for (k, options) in per_module.iter().enumerate() {
            pick[k] = options[code % options.len()];
            code /= options.len();
        }
        let (mut mu_lo, mut mu_hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for b in &pick {
            if let Branch::Monotone {
                rate_lo, rate_hi, ..
            } = *b
            {
                mu_lo = mu_lo.max(rate_lo.min(rate_hi));
                mu_hi = mu_hi.min(rate_lo.max(rate_hi));
            }
        }
        let evaluate = |mu: f64| -> Vec<(f64, f64)> {
            profiles
                .iter()
                .zip(&pick)
                .map(|(p, &b)| {
                    let i = branch_current(p, b, mu);
                    (i, p.pout_poly().eval(i))
                })
                .collect()
        };
        let residual = |mu: f64| evaluate(mu).iter().map(|&(_, po)| po).sum::<f64>() - target;

        let mut roots = Vec::new();
        if mu_lo == f64::NEG_INFINITY {
            // Every module fixed.
            if residual(0.0).abs() <= tol {
                roots.push(0.0);
            }
        } else if mu_lo <= mu_hi {
            let mus: Vec<f64> = (0..=RATE_SCAN)
                .map(|k| mu_lo + (mu_hi - mu_lo) * k as f64 / RATE_SCAN as f64)
                .collect();
            let fs: Vec<f64> = mus.iter().map(|&mu| residual(mu)).collect();
            for k in 0..=RATE_SCAN {
                if fs[k].abs() <= tol {
                    roots.push(mus[k]);
                } else if k < RATE_SCAN && fs[k] * fs[k + 1] < 0.0 && fs[k + 1].abs() > tol {
                    let sign = fs[k + 1].signum();
                    roots.push(bisect_root(&|mu| sign * residual(mu), mus[k], mus[k + 1]));
                }
            }
        }
        for mu in roots {
            let pts = evaluate(mu);
            if (pts.iter().map(|&(_, po)| po).sum::<f64>() - target).abs() > tol {
                continue;
            }
            let pin: f64 = profiles
                .iter()
                .zip(&pts)
                .map(|(p, &(i, _))| p.pin_poly().eval(i))
                .sum();
            if best.as_ref().is_none_or(|(b, _)| pin < *b) {
                best = Some((pin, pts));
            }
        }
    }
    best.map(|(_, pts)| pts)
}
