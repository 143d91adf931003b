//! Simulated-annealing refinement of the power split within a fixed active
//! set.
//!
//! The search state is the vector of module output powers. A move transfers
//! power between two modules, so the total never changes and every state
//! stays feasible. Worse moves are accepted with probability
//! `exp(delta_eta / (boltzmann * T))`; the temperature falls geometrically
//! until it reaches `t_thres`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dispatch::{ActiveSet, Allocation};
use crate::error::{Error, Result};
use crate::profile::{Fleet, ModuleProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealerConfig {
    pub t0: f64,
    /// Per-level temperature ratio.
    pub cooling: f64,
    pub iters_per_temp: usize,
    pub t_thres: f64,
    /// Scale of `delta_eta` in the acceptance exponent.
    pub boltzmann: f64,
    pub seed: u64,
    /// Largest transfer as a fraction of the smaller headroom.
    pub max_transfer_frac: f64,
}

impl Default for AnnealerConfig {
    fn default() -> Self {
        Self {
            t0: 1.0,
            cooling: 0.95,
            iters_per_temp: 100,
            t_thres: 1e-4,
            boltzmann: 0.01,
            seed: 0,
            max_transfer_frac: 0.25,
        }
    }
}

impl AnnealerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Input(format!("annealer config: {what}")));
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return bad("t0 must be positive");
        }
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return bad("cooling must lie in (0, 1)");
        }
        if self.iters_per_temp == 0 {
            return bad("iters_per_temp must be at least 1");
        }
        if !(self.t_thres > 0.0 && self.t_thres < self.t0) {
            return bad("t_thres must lie in (0, t0)");
        }
        if !(self.boltzmann > 0.0 && self.boltzmann.is_finite()) {
            return bad("boltzmann must be positive");
        }
        if !(self.max_transfer_frac > 0.0 && self.max_transfer_frac <= 1.0) {
            return bad("max_transfer_frac must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Temperatures at which perturbations run: `t0 * cooling^k` for
    /// `k = 1, 2, ..`, ending with the first level at or below `t_thres`.
    pub fn temperatures(&self) -> impl Iterator<Item = f64> {
        let (cooling, thres) = (self.cooling, self.t_thres);
        std::iter::successors(Some(self.t0 * cooling), move |&t| {
            (t > thres).then_some(t * cooling)
        })
    }
}

/// Metropolis rule. Improvements are always taken without drawing; otherwise
/// one uniform draw decides with probability `exp(delta / (boltzmann * T))`.
pub fn metropolis_accept<R: Rng + ?Sized>(
    delta_eta: f64,
    temperature: f64,
    config: &AnnealerConfig,
    rng: &mut R,
) -> bool {
    if delta_eta > 0.0 {
        return true;
    }
    let p = (delta_eta / (config.boltzmann * temperature)).exp();
    rng.gen::<f64>() < p
}

/// Moves power between two distinct modules chosen uniformly at random.
/// Returns `(giver, taker, amount)`, or `None` for a single module.
fn transfer<R: Rng + ?Sized>(
    outputs: &mut [f64],
    bounds: &[(f64, f64)],
    config: &AnnealerConfig,
    rng: &mut R,
) -> Option<(usize, usize, f64)> {
    let m = outputs.len();
    if m < 2 {
        return None;
    }
    let giver = rng.gen_range(0..m);
    let mut taker = rng.gen_range(0..m - 1);
    if taker >= giver {
        taker += 1;
    }
    let headroom = (outputs[giver] - bounds[giver].0).min(bounds[taker].1 - outputs[taker]);
    let cap = config.max_transfer_frac * headroom.max(0.0);
    let amount = if cap > 0.0 {
        rng.gen_range(0.0..cap)
    } else {
        0.0
    };
    outputs[giver] = (outputs[giver] - amount).max(bounds[giver].0);
    outputs[taker] = (outputs[taker] + amount).min(bounds[taker].1);
    Some((giver, taker, amount))
}

/// One random pairwise transfer applied to `allocation`. A single-module
/// allocation comes back unchanged.
pub fn perturb<R: Rng + ?Sized>(
    allocation: &Allocation,
    fleet: &Fleet,
    config: &AnnealerConfig,
    rng: &mut R,
) -> Result<Allocation> {
    let active = allocation.active_set();
    let bounds = bounds_of(&active.profiles(fleet)?);
    let mut outputs = allocation.outputs();
    if transfer(&mut outputs, &bounds, config, rng).is_none() {
        return Ok(allocation.clone());
    }
    Allocation::from_outputs(fleet, &active, &outputs)
}

fn bounds_of(profiles: &[&ModuleProfile]) -> Vec<(f64, f64)> {
    profiles
        .iter()
        .map(|p| (p.p_out_min(), p.p_out_max()))
        .collect()
}

/// Uniform weights scaled onto the slack above the lower bounds, capping
/// modules that overflow and rescaling the rest until nothing overflows.
fn random_feasible<R: Rng + ?Sized>(bounds: &[(f64, f64)], demand: f64, rng: &mut R) -> Vec<f64> {
    let m = bounds.len();
    let weights: Vec<f64> = (0..m).map(|_| 1.0 - rng.gen::<f64>()).collect();
    let mut extra = vec![0.0; m];
    let mut capped = vec![false; m];
    let mut slack = demand - bounds.iter().map(|b| b.0).sum::<f64>();
    for _ in 0..m {
        let free_weight: f64 = (0..m).filter(|&k| !capped[k]).map(|k| weights[k]).sum();
        if free_weight <= 0.0 {
            break;
        }
        let mut overflow = false;
        let free: Vec<usize> = (0..m).filter(|&k| !capped[k]).collect();
        let share = slack.max(0.0) / free_weight;
        for &k in &free {
            extra[k] = share * weights[k];
            let room = bounds[k].1 - bounds[k].0;
            if extra[k] > room {
                extra[k] = room;
                capped[k] = true;
                slack -= room;
                overflow = true;
            }
        }
        if !overflow {
            break;
        }
    }
    bounds.iter().zip(extra).map(|(b, e)| b.0 + e).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnealOutcome {
    /// Best allocation visited.
    pub best: Allocation,
    pub initial_eta: f64,
    pub final_eta: f64,
    pub levels: usize,
    pub iterations: usize,
    pub accepted: usize,
    pub seed: u64,
}

/// Anneals the split of `demand` across `active`, starting from
/// `warm_start` when given and from a random feasible point otherwise.
pub fn anneal(
    fleet: &Fleet,
    active: &ActiveSet,
    demand: f64,
    config: &AnnealerConfig,
    warm_start: Option<&Allocation>,
) -> Result<AnnealOutcome> {
    config.validate()?;
    active.check_feasible(fleet, demand)?;
    let profiles = active.profiles(fleet)?;
    let bounds = bounds_of(&profiles);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut outputs = match warm_start {
        Some(start) => warm_outputs(start, active, &bounds, demand)?,
        None => random_feasible(&bounds, demand, &mut rng),
    };
    let input_of = |k: usize, p: f64| -> Result<f64> {
        let profile = profiles[k];
        profile.eval_pin(profile.invert_pout(p)?)
    };
    let mut inputs = outputs
        .iter()
        .enumerate()
        .map(|(k, &p)| input_of(k, p))
        .collect::<Result<Vec<_>>>()?;
    let eta_of =
        |outputs: &[f64], inputs: &[f64]| outputs.iter().sum::<f64>() / inputs.iter().sum::<f64>();

    let initial_eta = eta_of(&outputs, &inputs);
    let mut eta = initial_eta;
    let mut best = outputs.clone();
    let mut best_eta = eta;
    let (mut levels, mut iterations, mut accepted) = (0, 0, 0);

    if outputs.len() > 1 {
        let mut trial = outputs.clone();
        for temperature in config.temperatures() {
            levels += 1;
            for _ in 0..config.iters_per_temp {
                iterations += 1;
                trial.copy_from_slice(&outputs);
                let Some((g, t, amount)) = transfer(&mut trial, &bounds, config, &mut rng) else {
                    break;
                };
                if amount == 0.0 {
                    continue;
                }
                let (in_g, in_t) = (input_of(g, trial[g])?, input_of(t, trial[t])?);
                let (old_g, old_t) = (inputs[g], inputs[t]);
                inputs[g] = in_g;
                inputs[t] = in_t;
                let trial_eta = eta_of(&trial, &inputs);
                if metropolis_accept(trial_eta - eta, temperature, config, &mut rng) {
                    accepted += 1;
                    outputs.copy_from_slice(&trial);
                    eta = trial_eta;
                    if eta > best_eta {
                        best_eta = eta;
                        best.copy_from_slice(&outputs);
                    }
                } else {
                    inputs[g] = old_g;
                    inputs[t] = old_t;
                }
            }
        }
    }

    Ok(AnnealOutcome {
        best: Allocation::from_outputs(fleet, active, &best)?,
        initial_eta,
        final_eta: eta,
        levels,
        iterations,
        accepted,
        seed: config.seed,
    })
}

fn warm_outputs(
    start: &Allocation,
    active: &ActiveSet,
    bounds: &[(f64, f64)],
    demand: f64,
) -> Result<Vec<f64>> {
    if start.active_set() != *active {
        return Err(Error::Input(format!(
            "warm start covers {} but the active set is {active}",
            start.active_set()
        )));
    }
    let outputs = start.outputs();
    let total: f64 = outputs.iter().sum();
    if (total - demand).abs() > 1e-9 * demand.abs().max(1.0) {
        return Err(Error::Input(format!(
            "warm start delivers {total} W, demand is {demand} W"
        )));
    }
    for (p, b) in outputs.iter().zip(bounds) {
        if *p < b.0 || *p > b.1 {
            return Err(Error::Input(format!(
                "warm start output {p} W outside [{}, {}]",
                b.0, b.1
            )));
        }
    }
    Ok(outputs)
}
