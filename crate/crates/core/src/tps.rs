//! Minimum-current-stress triple-phase-shift operating points for a dual
//! active bridge.
//!
//! `d1` is the primary inner phase shift, `d2` the outer shift between the
//! bridges and `d3` the secondary inner shift, all as fractions of a half
//! period. The voltage gain `k = n * U_in / U_out` selects boost (`k > 1`) or
//! buck (`k <= 1`) operation, and the per-unit power `p` selects the mode:
//! mode 2 below the boundary, mode 1 at or above it.

use serde::Serialize;

use crate::error::{Error, Result};

/// Negative radicands down to this value are treated as zero.
const RADICAND_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub k: f64,
    pub p: f64,
}

impl OperatingPoint {
    pub fn new(k: f64, p: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Input(format!(
                "voltage gain must be positive, got {k}"
            )));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Input(format!(
                "per-unit power must lie in [0, 1], got {p}"
            )));
        }
        Ok(Self { k, p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    Buck,
    Boost,
}

impl Regime {
    pub fn of(k: f64) -> Self {
        if k > 1.0 {
            Regime::Boost
        } else {
            Regime::Buck
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Buck => "buck",
            Regime::Boost => "boost",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    Mode1,
    Mode2,
}

impl Mode {
    pub fn number(self) -> u8 {
        match self {
            Mode::Mode1 => 1,
            Mode::Mode2 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseShiftSet {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub mode: Mode,
    pub regime: Regime,
}

impl PhaseShiftSet {
    /// `d2` has no stated admissible range; callers may want to flag values
    /// outside `[0, 1]`.
    pub fn d2_in_unit_range(&self) -> bool {
        (0.0..=1.0).contains(&self.d2)
    }
}

/// `n * u_in / u_out`.
pub fn voltage_gain(n: f64, u_in: f64, u_out: f64) -> Result<f64> {
    for (name, v) in [
        ("turns ratio", n),
        ("input voltage", u_in),
        ("output voltage", u_out),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Input(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(n * u_in / u_out)
}

/// Per-unit power separating mode 2 (below) from mode 1 (at or above):
/// `2(k-1)/k^2` when boosting, `2(k-k^2)` when bucking.
pub fn mode_boundary(k: f64) -> f64 {
    match Regime::of(k) {
        Regime::Boost => 2.0 * (k - 1.0) / (k * k),
        Regime::Buck => 2.0 * (k - k * k),
    }
}

fn root(point: OperatingPoint, expression: &'static str, radicand: f64) -> Result<f64> {
    if radicand < -RADICAND_TOLERANCE || radicand.is_nan() {
        return Err(Error::Domain {
            k: point.k,
            p: point.p,
            expression,
            radicand,
        });
    }
    Ok(radicand.max(0.0).sqrt())
}

/// Minimum-current-stress phase shifts for `point`.
pub fn phase_shifts(point: OperatingPoint) -> Result<PhaseShiftSet> {
    let shifts = phase_shifts_in_mode(point, mode_of(point))?;
    if !shifts.d2_in_unit_range() {
        log::warn!(
            "k = {}, p = {}: d2 = {} lies outside [0, 1]",
            point.k,
            point.p,
            shifts.d2
        );
    }
    Ok(shifts)
}

/// Mode selected for `point`: mode 2 strictly below the boundary.
pub fn mode_of(point: OperatingPoint) -> Mode {
    if point.p < mode_boundary(point.k) {
        Mode::Mode2
    } else {
        Mode::Mode1
    }
}

/// `(d1, d3)` from one mode's closed forms regardless of which mode `point`
/// belongs to. Mode 2 at `k = 1` has no finite form and is a domain error.
pub fn inner_shifts_in_mode(point: OperatingPoint, mode: Mode) -> Result<(f64, f64)> {
    let OperatingPoint { k, p } = point;
    Ok(match (Regime::of(k), mode) {
        (Regime::Boost, Mode::Mode2) => (
            1.0 - root(point, "p / (2(k-1))", p / (2.0 * (k - 1.0)))?,
            1.0 - root(point, "p k^2 / (2(k-1))", p * k * k / (2.0 * (k - 1.0)))?,
        ),
        (Regime::Boost, Mode::Mode1) => (
            (k - 1.0)
                * root(
                    point,
                    "(1-p) / (k^2-2k+2)",
                    (1.0 - p) / (k * k - 2.0 * k + 2.0),
                )?,
            0.0,
        ),
        (Regime::Buck, Mode::Mode2) => {
            if k == 1.0 {
                return Err(Error::Domain {
                    k,
                    p,
                    expression: "p / (2k(1-k))",
                    radicand: f64::INFINITY,
                });
            }
            (
                1.0 - root(point, "p / (2k(1-k))", p / (2.0 * k * (1.0 - k)))?,
                1.0 - root(point, "p k / (2(1-k))", p * k / (2.0 * (1.0 - k)))?,
            )
        }
        (Regime::Buck, Mode::Mode1) => (
            0.0,
            (1.0 - k)
                * root(
                    point,
                    "(1-p) / (2k^2-2k+1)",
                    (1.0 - p) / (2.0 * k * k - 2.0 * k + 1.0),
                )?,
        ),
    })
}

/// Full shift set from one mode's closed forms.
///
/// The mode-2 outer shift `d2 = (1 + d1 - d3 - sqrt(1 - d1^2 - d3^2 - p)) / 2`
/// has a negative radicand over part of the mode-2 region (at `p -> 0` it
/// tends to -1); those points are domain errors.
pub fn phase_shifts_in_mode(point: OperatingPoint, mode: Mode) -> Result<PhaseShiftSet> {
    let p = point.p;
    let (d1, d3) = inner_shifts_in_mode(point, mode)?;
    let d2 = match mode {
        Mode::Mode2 => {
            0.5 * (1.0 + d1 - d3 - root(point, "1 - d1^2 - d3^2 - p", 1.0 - d1 * d1 - d3 * d3 - p)?)
        }
        Mode::Mode1 => {
            1.0 - d3
                - root(
                    point,
                    "(1-d1)(1-d3) - p/2",
                    (1.0 - d1) * (1.0 - d3) - p / 2.0,
                )?
        }
    };
    Ok(PhaseShiftSet {
        d1,
        d2,
        d3,
        mode,
        regime: Regime::of(point.k),
    })
}

/// Peak inductor current in per-unit for the given shifts.
pub fn current_stress(k: f64, shifts: &PhaseShiftSet) -> f64 {
    let PhaseShiftSet { d1, d2, d3, .. } = *shifts;
    if k > 1.0 {
        -k * d1 + 2.0 * d2 + d3 + k - 1.0
    } else {
        -k * d1 + 2.0 * k * d2 - d3 * (1.0 - 2.0 * k) + 1.0 - k
    }
}
