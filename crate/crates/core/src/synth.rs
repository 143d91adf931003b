//! Pinned synthetic two-module fleet with the qualitative shape of a pair of
//! dual-active-bridge modules that differ only in series inductance.
//!
//! The high-inductance module is more efficient at light load. The two
//! efficiency curves cross at [`CROSSOVER_W`], and running both modules
//! beats the low-inductance module alone above [`PAIR_SWITCH_W`]. Both
//! figures follow from the loss coefficients below:
//!
//! * crossover: `a0_1 - a0_2 = (a2_2 - a2_1) * P^2`
//! * pair switch: `a0_2 = a2_1^2 / (a2_1 + a2_2) * P^2`
//!
//! with equal linear terms, which cancel in both comparisons.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::profile::{EfficiencySample, Fleet, ModuleProfile, QuadraticLoss};

/// Output-bus voltage; output power is `BUS_VOLTS * I`.
pub const BUS_VOLTS: f64 = 80.0;

pub const CROSSOVER_W: f64 = 290.0;
pub const PAIR_SWITCH_W: f64 = 550.0;

pub const DEFAULT_POINTS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthModule {
    pub module_id: &'static str,
    pub loss: QuadraticLoss,
    pub p_out_min: f64,
    pub p_out_max: f64,
}

const A1: f64 = 0.01;
const A2_LOW_L: f64 = 4.5e-5;
const A2_HIGH_L: f64 = 9.0e-5;

fn a0_high_l() -> f64 {
    A2_LOW_L * A2_LOW_L / (A2_LOW_L + A2_HIGH_L) * PAIR_SWITCH_W * PAIR_SWITCH_W
}

fn a0_low_l() -> f64 {
    a0_high_l() + (A2_HIGH_L - A2_LOW_L) * CROSSOVER_W * CROSSOVER_W
}

/// `[low inductance (100 uH), high inductance (150 uH)]`.
pub fn reference_modules() -> [SynthModule; 2] {
    [
        SynthModule {
            module_id: "dab_100uh",
            loss: QuadraticLoss::new(a0_low_l(), A1, A2_LOW_L),
            p_out_min: 20.0,
            p_out_max: 1000.0,
        },
        SynthModule {
            module_id: "dab_150uh",
            loss: QuadraticLoss::new(a0_high_l(), A1, A2_HIGH_L),
            p_out_min: 20.0,
            p_out_max: 700.0,
        },
    ]
}

impl SynthModule {
    /// Exact profile of the generating model.
    pub fn profile(&self) -> Result<ModuleProfile> {
        self.loss
            .to_profile(self.module_id, BUS_VOLTS, self.p_out_min, self.p_out_max)
    }
}

pub fn reference_fleet() -> Result<Fleet> {
    Fleet::new(
        reference_modules()
            .iter()
            .map(SynthModule::profile)
            .collect::<Result<_>>()?,
    )
}

/// `points` evenly spaced samples per module across its current range.
/// Input powers carry uniform noise of `+-noise_w` drawn from `seed`.
pub fn reference_samples(points: usize, noise_w: f64, seed: u64) -> Result<Vec<EfficiencySample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * points);
    for m in reference_modules() {
        let (i_lo, i_hi) = (m.p_out_min / BUS_VOLTS, m.p_out_max / BUS_VOLTS);
        for k in 0..points {
            let t = if points > 1 {
                k as f64 / (points - 1) as f64
            } else {
                0.0
            };
            let current = i_lo + (i_hi - i_lo) * t;
            let p_out = BUS_VOLTS * current;
            let noise = if noise_w > 0.0 {
                rng.gen_range(-noise_w..=noise_w)
            } else {
                0.0
            };
            out.push(EfficiencySample::new(
                m.module_id,
                current,
                m.loss.input_power(p_out) + noise,
                p_out,
            )?);
        }
    }
    Ok(out)
}
