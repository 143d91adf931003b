//! Fitted per-module power models.
//!
//! A [`ModuleProfile`] holds two polynomials in the module's output current:
//! input power `P_in(I)` and output power `P_out(I)`. Everything the dispatch
//! layer needs (efficiency, marginal rate `dP_out/dP_in`, the inverse
//! `I(P_out)`, the efficiency peak) is derived from those two curves.
//!
//! Coefficients are stored constant term first: `[c0, c1, .., cN]` means
//! `c0 + c1*I + .. + cN*I^N`. Written highest power first, as is common in
//! measurement reports, the same polynomial reads `cN*I^N + .. + c1*I + c0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of interior points at which profile invariants are checked.
pub const VALIDATION_POINTS: usize = 256;

const PEAK_SCAN_POINTS: usize = 1024;

/// One measured operating point of one module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySample {
    pub module_id: String,
    pub current: f64,
    pub p_in: f64,
    pub p_out: f64,
}

impl EfficiencySample {
    pub fn new(module_id: impl Into<String>, current: f64, p_in: f64, p_out: f64) -> Result<Self> {
        let sample = Self {
            module_id: module_id.into(),
            current,
            p_in,
            p_out,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("current", self.current),
            ("p_in", self.p_in),
            ("p_out", self.p_out),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Input(format!(
                    "sample for `{}`: {name} must be finite and > 0, got {v}",
                    self.module_id
                )));
            }
        }
        if self.p_out > self.p_in {
            return Err(Error::Input(format!(
                "sample for `{}` at {} A has p_out {} > p_in {}",
                self.module_id, self.current, self.p_out, self.p_in
            )));
        }
        Ok(())
    }

    pub fn efficiency(&self) -> f64 {
        self.p_out / self.p_in
    }
}

/// Polynomial with coefficients stored constant term first.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerPolynomial {
    coeffs: Vec<f64>,
}

impl PowerPolynomial {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Input(
                "polynomial needs at least one coefficient".into(),
            ));
        }
        if let Some(c) = coeffs.iter().find(|c| !c.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite polynomial coefficient {c}"
            )));
        }
        Ok(Self { coeffs })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// First derivative at `x`, evaluated analytically.
    pub fn eval_derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c)
    }

    pub fn derivative(&self) -> PowerPolynomial {
        if self.coeffs.len() == 1 {
            return PowerPolynomial { coeffs: vec![0.0] };
        }
        PowerPolynomial {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        }
    }
}

/// Quadratic loss model `P_in = a2*P^2 + (1 + a1)*P + a0` in terms of output
/// power `P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticLoss {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl QuadraticLoss {
    pub fn new(a0: f64, a1: f64, a2: f64) -> Self {
        Self { a0, a1, a2 }
    }

    pub fn loss(&self, p_out: f64) -> f64 {
        self.a2 * p_out * p_out + self.a1 * p_out + self.a0
    }

    pub fn input_power(&self, p_out: f64) -> f64 {
        p_out + self.loss(p_out)
    }

    pub fn efficiency(&self, p_out: f64) -> f64 {
        p_out / self.input_power(p_out)
    }

    /// Output power of peak efficiency, `sqrt(a0 / a2)`.
    pub fn peak_output(&self) -> f64 {
        (self.a0 / self.a2).sqrt()
    }

    /// Profile of a module with a fixed output voltage, so that
    /// `P_out = volts * I` and `P_in(I)` is the loss model composed with it.
    pub fn to_profile(
        &self,
        module_id: impl Into<String>,
        volts: f64,
        p_out_min: f64,
        p_out_max: f64,
    ) -> Result<ModuleProfile> {
        let pout = PowerPolynomial::new(vec![0.0, volts])?;
        let pin = PowerPolynomial::new(vec![
            self.a0,
            (1.0 + self.a1) * volts,
            self.a2 * volts * volts,
        ])?;
        ModuleProfile::new(module_id, pin, pout, p_out_min / volts, p_out_max / volts)
    }
}

/// Fitted power models of one converter module over its operating range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileDocument", into = "ProfileDocument")]
pub struct ModuleProfile {
    module_id: String,
    pin: PowerPolynomial,
    pout: PowerPolynomial,
    i_min: f64,
    i_max: f64,
    p_out_min: f64,
    p_out_max: f64,
}

/// On-disk form of a [`ModuleProfile`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileDocument {
    pub module_id: String,
    /// `P_in(I)` coefficients, constant term first.
    pub pin_coeffs: Vec<f64>,
    /// `P_out(I)` coefficients, constant term first.
    pub pout_coeffs: Vec<f64>,
    pub i_min: f64,
    pub i_max: f64,
}

impl TryFrom<ProfileDocument> for ModuleProfile {
    type Error = Error;

    fn try_from(doc: ProfileDocument) -> Result<Self> {
        ModuleProfile::new(
            doc.module_id,
            PowerPolynomial::new(doc.pin_coeffs)?,
            PowerPolynomial::new(doc.pout_coeffs)?,
            doc.i_min,
            doc.i_max,
        )
    }
}

impl From<ModuleProfile> for ProfileDocument {
    fn from(p: ModuleProfile) -> Self {
        ProfileDocument {
            module_id: p.module_id,
            pin_coeffs: p.pin.coeffs,
            pout_coeffs: p.pout.coeffs,
            i_min: p.i_min,
            i_max: p.i_max,
        }
    }
}

impl ModuleProfile {
    /// Builds a profile and checks its invariants: `P_out` strictly
    /// increasing and `0 < P_out <= P_in` at [`VALIDATION_POINTS`] points
    /// spanning `[i_min, i_max]`.
    pub fn new(
        module_id: impl Into<String>,
        pin: PowerPolynomial,
        pout: PowerPolynomial,
        i_min: f64,
        i_max: f64,
    ) -> Result<Self> {
        let module_id = module_id.into();
        if module_id.is_empty() {
            return Err(Error::Input("module id must not be empty".into()));
        }
        if !(i_min.is_finite() && i_max.is_finite()) || i_min < 0.0 || i_min >= i_max {
            return Err(Error::model(
                &module_id,
                format!("current range [{i_min}, {i_max}] must satisfy 0 <= i_min < i_max"),
            ));
        }
        for k in 0..=VALIDATION_POINTS {
            let i = lerp(i_min, i_max, k as f64 / VALIDATION_POINTS as f64);
            let slope = pout.eval_derivative(i);
            if !(slope > 0.0) {
                return Err(Error::model(
                    &module_id,
                    format!("P_out(I) is not strictly increasing: dP_out/dI = {slope} at I = {i}"),
                ));
            }
            let (po, pi) = (pout.eval(i), pin.eval(i));
            if !(po.is_finite() && pi.is_finite()) {
                return Err(Error::model(
                    &module_id,
                    format!("non-finite power at I = {i}"),
                ));
            }
            // I = 0 is allowed as a range end, where a lossless linear model
            // gives P_out = 0.
            if po < 0.0 || (po == 0.0 && i > 0.0) {
                return Err(Error::model(
                    &module_id,
                    format!("P_out = {po} W at I = {i} A"),
                ));
            }
            if po > pi * (1.0 + 1e-9) {
                return Err(Error::model(
                    &module_id,
                    format!("P_out = {po} W exceeds P_in = {pi} W at I = {i} A"),
                ));
            }
        }
        let p_out_min = pout.eval(i_min);
        let p_out_max = pout.eval(i_max);
        Ok(Self {
            module_id,
            pin,
            pout,
            i_min,
            i_max,
            p_out_min,
            p_out_max,
        })
    }

    pub fn module_id(&self) -> &str {
        &self.module_id
    }

    pub fn pin_poly(&self) -> &PowerPolynomial {
        &self.pin
    }

    pub fn pout_poly(&self) -> &PowerPolynomial {
        &self.pout
    }

    pub fn i_min(&self) -> f64 {
        self.i_min
    }

    pub fn i_max(&self) -> f64 {
        self.i_max
    }

    pub fn p_out_min(&self) -> f64 {
        self.p_out_min
    }

    pub fn p_out_max(&self) -> f64 {
        self.p_out_max
    }

    fn check_current(&self, current: f64) -> Result<f64> {
        let slack = 1e-12 * (self.i_max - self.i_min).max(1.0);
        if !(current >= self.i_min - slack && current <= self.i_max + slack) {
            return Err(Error::Range {
                module: self.module_id.clone(),
                quantity: "current",
                value: current,
                lo: self.i_min,
                hi: self.i_max,
            });
        }
        Ok(current.clamp(self.i_min, self.i_max))
    }

    pub fn eval_pin(&self, current: f64) -> Result<f64> {
        let i = self.check_current(current)?;
        Ok(self.pin.eval(i))
    }

    pub fn eval_pout(&self, current: f64) -> Result<f64> {
        let i = self.check_current(current)?;
        Ok(self.pout.eval(i))
    }

    pub fn efficiency(&self, current: f64) -> Result<f64> {
        let i = self.check_current(current)?;
        Ok(self.pout.eval(i) / self.pin.eval(i))
    }

    /// `dP_out/dP_in` at `current`, from the analytic derivatives of both
    /// polynomials.
    pub fn marginal_rate(&self, current: f64) -> Result<f64> {
        let i = self.check_current(current)?;
        let din = self.pin.eval_derivative(i);
        if din == 0.0 || !din.is_finite() {
            return Err(Error::Singular {
                module: self.module_id.clone(),
                current: i,
            });
        }
        Ok(self.pout.eval_derivative(i) / din)
    }

    /// Current at which the module delivers `p_out`.
    ///
    /// Bisection on the monotone `P_out(I)` bracket, accelerated by Newton
    /// steps that are discarded whenever they leave the bracket.
    pub fn invert_pout(&self, p_out: f64) -> Result<f64> {
        let slack = 1e-12 * self.p_out_max.abs().max(1.0);
        if !(p_out >= self.p_out_min - slack && p_out <= self.p_out_max + slack) {
            return Err(Error::Range {
                module: self.module_id.clone(),
                quantity: "output power",
                value: p_out,
                lo: self.p_out_min,
                hi: self.p_out_max,
            });
        }
        if p_out <= self.p_out_min {
            return Ok(self.i_min);
        }
        if p_out >= self.p_out_max {
            return Ok(self.i_max);
        }

        let (mut lo, mut hi) = (self.i_min, self.i_max);
        let span = self.p_out_max - self.p_out_min;
        let mut x = lo + (hi - lo) * (p_out - self.p_out_min) / span;
        let tol = 4.0 * f64::EPSILON * p_out.abs().max(1.0);
        for _ in 0..200 {
            let f = self.pout.eval(x) - p_out;
            if f.abs() <= tol {
                return Ok(x);
            }
            if f < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            if hi - lo <= 2.0 * f64::EPSILON * hi.abs().max(1.0) {
                return Ok(0.5 * (lo + hi));
            }
            let slope = self.pout.eval_derivative(x);
            if !(slope > 0.0) {
                return Err(Error::model(
                    &self.module_id,
                    format!("P_out(I) is not monotone near I = {x}"),
                ));
            }
            let newton = x - f / slope;
            x = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        Ok(x)
    }

    /// Current and value of maximum efficiency over the operating range:
    /// a 1024-point scan followed by golden-section refinement around the
    /// best scanned point.
    pub fn peak_efficiency(&self) -> (f64, f64) {
        let eta = |i: f64| self.pout.eval(i) / self.pin.eval(i);
        let step = (self.i_max - self.i_min) / (PEAK_SCAN_POINTS - 1) as f64;
        let at = |k: usize| {
            if k == PEAK_SCAN_POINTS - 1 {
                self.i_max
            } else {
                self.i_min + k as f64 * step
            }
        };
        let mut best_k = 0;
        let mut best = f64::NEG_INFINITY;
        for k in 0..PEAK_SCAN_POINTS {
            let e = eta(at(k));
            if e > best {
                best = e;
                best_k = k;
            }
        }
        let a = at(best_k.saturating_sub(1));
        let b = at((best_k + 1).min(PEAK_SCAN_POINTS - 1));
        let (gi, ge) = golden_section_max(eta, a, b);
        if ge > best {
            (gi, ge)
        } else {
            (at(best_k), best)
        }
    }
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * b.abs().max(1.0) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t >= 1.0 {
        b
    } else {
        a + (b - a) * t
    }
}

/// A set of modules with distinct identifiers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Fleet {
    profiles: Vec<ModuleProfile>,
}

impl Fleet {
    pub fn new(profiles: Vec<ModuleProfile>) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::Input("fleet needs at least one module".into()));
        }
        for (k, p) in profiles.iter().enumerate() {
            if profiles[..k].iter().any(|q| q.module_id == p.module_id) {
                return Err(Error::Input(format!(
                    "duplicate module id `{}`",
                    p.module_id
                )));
            }
        }
        Ok(Self { profiles })
    }

    pub fn profiles(&self) -> &[ModuleProfile] {
        &self.profiles
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn get(&self, module_id: &str) -> Result<&ModuleProfile> {
        self.profiles
            .iter()
            .find(|p| p.module_id == module_id)
            .ok_or_else(|| Error::Input(format!("unknown module `{module_id}`")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.profiles.iter().map(|p| p.module_id.as_str())
    }
}
