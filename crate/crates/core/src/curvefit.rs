//! Least-squares polynomial fits of measured power samples.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::profile::{EfficiencySample, ModuleProfile, PowerPolynomial};

/// Lowest polynomial degree accepted for module power models.
pub const MIN_PROFILE_DEGREE: usize = 3;

pub const DEFAULT_DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub degree: usize,
    pub rmse: f64,
    pub r_squared: f64,
    pub max_residual: f64,
    pub sample_count: usize,
}

/// Fits `y ~ p(x)` of the given degree by least squares.
///
/// `x` is mapped onto `[-1, 1]` before a Householder QR solve and the
/// coefficients are expanded back into powers of `x`. Rows are sorted first,
/// so the result does not depend on input order.
pub fn fit_polynomial(
    samples: &[(f64, f64)],
    degree: usize,
) -> Result<(PowerPolynomial, FitReport)> {
    if degree < 1 {
        return Err(Error::Input("polynomial degree must be at least 1".into()));
    }
    let n = samples.len();
    if n < degree + 1 {
        return Err(Error::Input(format!(
            "{n} samples cannot determine a degree-{degree} polynomial (need {})",
            degree + 1
        )));
    }
    if let Some((x, y)) = samples
        .iter()
        .find(|(x, y)| !(x.is_finite() && y.is_finite()))
    {
        return Err(Error::Input(format!("non-finite sample ({x}, {y})")));
    }

    let mut rows = samples.to_vec();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let (x_lo, x_hi) = (rows[0].0, rows[n - 1].0);
    if x_lo == x_hi {
        return Err(Error::Input("all x values are identical".into()));
    }
    let center = 0.5 * (x_lo + x_hi);
    let half_width = 0.5 * (x_hi - x_lo);

    let cols = degree + 1;
    let design = DMatrix::from_fn(n, cols, |r, c| {
        ((rows[r].0 - center) / half_width).powi(c as i32)
    });
    let rhs = DVector::from_iterator(n, rows.iter().map(|&(_, y)| y));

    let qr = design.qr();
    let r = qr.r();
    let r00 = r[(0, 0)].abs();
    for k in 0..cols {
        if r[(k, k)].abs() <= 1e-10 * r00 {
            return Err(Error::Conditioning { degree });
        }
    }
    let qty = qr.q().transpose() * &rhs;
    let scaled = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::Conditioning { degree })?;

    let coeffs = unscale(scaled.as_slice(), center, half_width);
    let poly = PowerPolynomial::new(coeffs)?;
    let report = fit_report(&poly, &rows, degree);
    Ok((poly, report))
}

/// Rewrites `sum c_k ((x - center) / scale)^k` as `sum a_j x^j`.
fn unscale(scaled: &[f64], center: f64, scale: f64) -> Vec<f64> {
    let cols = scaled.len();
    let mut out = vec![0.0; cols];
    for (k, &c) in scaled.iter().enumerate() {
        let ck = c / scale.powi(k as i32);
        // (x - center)^k = sum_j C(k, j) x^j (-center)^(k - j)
        let mut binom = 1.0;
        for j in 0..=k {
            out[j] += ck * binom * (-center).powi((k - j) as i32);
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
    }
    out
}

fn fit_report(poly: &PowerPolynomial, rows: &[(f64, f64)], degree: usize) -> FitReport {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut max_residual: f64 = 0.0;
    for &(x, y) in rows {
        let r = y - poly.eval(x);
        ss_res += r * r;
        ss_tot += (y - mean) * (y - mean);
        max_residual = max_residual.max(r.abs());
    }
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    FitReport {
        degree,
        rmse: (ss_res / n).sqrt(),
        r_squared,
        max_residual,
        sample_count: rows.len(),
    }
}

/// Fit reports for both curves of one module.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileFit {
    pub module_id: String,
    pub p_in: FitReport,
    pub p_out: FitReport,
}

/// Fits `P_in(I)` and `P_out(I)` for one module and validates the result as a
/// [`ModuleProfile`] over the measured current range.
pub fn fit_profile(
    samples: &[EfficiencySample],
    degree: usize,
) -> Result<(ModuleProfile, ProfileFit)> {
    if degree < MIN_PROFILE_DEGREE {
        return Err(Error::Input(format!(
            "degree {degree} is too low: power models need N >= {MIN_PROFILE_DEGREE}"
        )));
    }
    let first = samples
        .first()
        .ok_or_else(|| Error::Input("no samples to fit".into()))?;
    let module_id = first.module_id.clone();
    for s in samples {
        if s.module_id != module_id {
            return Err(Error::Input(format!(
                "samples mix modules `{module_id}` and `{}`",
                s.module_id
            )));
        }
        s.validate()?;
    }

    let pin_rows: Vec<_> = samples.iter().map(|s| (s.current, s.p_in)).collect();
    let pout_rows: Vec<_> = samples.iter().map(|s| (s.current, s.p_out)).collect();
    let (pin, pin_report) = fit_polynomial(&pin_rows, degree)?;
    let (pout, pout_report) = fit_polynomial(&pout_rows, degree)?;

    let i_min = samples
        .iter()
        .map(|s| s.current)
        .fold(f64::INFINITY, f64::min);
    let i_max = samples
        .iter()
        .map(|s| s.current)
        .fold(f64::NEG_INFINITY, f64::max);
    let profile =
        ModuleProfile::new(module_id.clone(), pin, pout, i_min, i_max).map_err(|e| match e {
            Error::Model { module, reason } => Error::Model {
                module,
                reason: format!("{reason}; try a lower degree or more samples"),
            },
            other => other,
        })?;
    Ok((
        profile,
        ProfileFit {
            module_id,
            p_in: pin_report,
            p_out: pout_report,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_exact_cubic() {
        let rows: Vec<_> = [0.5, 1.0, 1.5, 2.0, 2.5]
            .iter()
            .map(|&x: &f64| (x, 2.0 * x.powi(3) + x))
            .collect();
        let (p, rep) = fit_polynomial(&rows, 3).unwrap();
        for (got, want) in p.coefficients().iter().zip([0.0, 1.0, 0.0, 2.0]) {
            assert!((got - want).abs() < 1e-9, "{:?}", p.coefficients());
        }
        assert!(rep.rmse < 1e-9);
        assert_eq!(rep.sample_count, 5);
    }

    #[test]
    fn model_mismatch_leaves_residual() {
        let rows: Vec<_> = (0..=20)
            .map(|k| k as f64 * 0.1)
            .map(|x| (x, x * x))
            .collect();
        let (_, rep) = fit_polynomial(&rows, 1).unwrap();
        assert!(rep.rmse > 0.0);
        assert!(rep.r_squared < 1.0);
    }

    #[test]
    fn noisy_quadratic_loss_recovers_a2() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<_> = (0..50)
            .map(|k| {
                let p = 10.0 + 490.0 * k as f64 / 49.0;
                let noise = rng.gen_range(-0.1..=0.1);
                (p, p + 0.001 * p * p + 5.0 + noise)
            })
            .collect();
        let (poly, _) = fit_polynomial(&rows, 2).unwrap();
        let a2 = poly.coefficients()[2];
        assert!((a2 - 0.001).abs() < 0.1 * 0.001, "a2 = {a2}");
    }

    #[test]
    fn rmse_matches_independent_recomputation() {
        let rows: Vec<_> = (0..30)
            .map(|k| {
                let x = k as f64 * 0.3;
                (x, (x * 1.7).sin() * 10.0 + x)
            })
            .collect();
        let (p, rep) = fit_polynomial(&rows, 4).unwrap();
        let ss: f64 = rows.iter().map(|&(x, y)| (y - p.eval(x)).powi(2)).sum();
        assert!((rep.rmse - (ss / rows.len() as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(
            fit_polynomial(&[(1.0, 1.0), (2.0, 2.0)], 3),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            fit_polynomial(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)], 1),
            Err(Error::Input(_))
        ));
        assert!(fit_polynomial(&[(1.0, 1.0), (2.0, 2.0)], 0).is_err());
        // Enough rows but only two distinct abscissae.
        let rows = [(1.0, 1.0), (1.0, 1.1), (2.0, 2.0), (2.0, 2.1)];
        assert_eq!(
            fit_polynomial(&rows, 2).unwrap_err(),
            Error::Conditioning { degree: 2 }
        );
    }

    #[test]
    fn duplicate_abscissae_are_averaged() {
        let rows = [(0.0, 0.0), (0.0, 2.0), (1.0, 1.0), (1.0, 3.0)];
        let (p, _) = fit_polynomial(&rows, 1).unwrap();
        assert!((p.coefficients()[0] - 1.0).abs() < 1e-12);
        assert!((p.coefficients()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn profile_of_ideal_eighty_percent_converter() {
        let samples: Vec<_> = (1..=10)
            .map(|k| {
                let i = k as f64 * 0.5;
                EfficiencySample::new("ideal", i, 100.0 * i, 80.0 * i).unwrap()
            })
            .collect();
        let (profile, fit) = fit_profile(&samples, 3).unwrap();
        assert_eq!(profile.i_min(), 0.5);
        assert_eq!(profile.i_max(), 5.0);
        assert!(fit.p_out.rmse < 1e-9);
        for k in 0..=100 {
            let i = 0.5 + 4.5 * k as f64 / 100.0;
            assert!((profile.efficiency(i).unwrap() - 0.8).abs() < 1e-9);
        }
    }

    #[test]
    fn profile_rejects_low_degree_and_mixed_modules() {
        let mut samples: Vec<_> = (1..=6)
            .map(|k| {
                EfficiencySample::new("a", k as f64, 100.0 * k as f64, 90.0 * k as f64).unwrap()
            })
            .collect();
        let err = fit_profile(&samples, 2).unwrap_err();
        assert!(err.to_string().contains("N >= 3"), "{err}");
        samples.push(EfficiencySample::new("b", 7.0, 700.0, 600.0).unwrap());
        assert!(matches!(fit_profile(&samples, 3), Err(Error::Input(_))));
    }

    #[test]
    fn profile_rejects_non_monotone_fit() {
        let samples: Vec<_> = [1.0, 2.0, 3.0, 4.0, 5.0]
            .iter()
            .map(|&i: &f64| {
                let p_out = 100.0 - (i - 3.0).powi(2) * 10.0;
                EfficiencySample::new("hump", i, p_out + 20.0, p_out).unwrap()
            })
            .collect();
        let err = fit_profile(&samples, 3).unwrap_err();
        assert!(err.to_string().contains("lower degree"), "{err}");
    }

    proptest! {
        #[test]
        fn exact_polynomials_recovered_at_any_higher_degree(
            coeffs in proptest::collection::vec(-5.0f64..5.0, 2..5),
            extra in 0usize..3,
        ) {
            let truth = PowerPolynomial::new(coeffs.clone()).unwrap();
            let rows: Vec<_> = (0..25).map(|k| {
                let x = 0.2 + 0.4 * k as f64;
                (x, truth.eval(x))
            }).collect();
            let (p, _) = fit_polynomial(&rows, truth.degree() + extra).unwrap();
            let ymax = rows.iter().map(|r| r.1.abs()).fold(0.0, f64::max).max(1.0);
            for &(x, y) in &rows {
                prop_assert!((p.eval(x) - y).abs() < 1e-8 * ymax);
            }
        }

        #[test]
        fn fit_ignores_row_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows: Vec<_> = (0..12).map(|_| {
                let x: f64 = rng.gen_range(0.5..8.0);
                (x, 3.0 + 2.0 * x + 0.4 * x * x + rng.gen_range(-0.5..0.5))
            }).collect();
            let (a, _) = fit_polynomial(&rows, 3).unwrap();
            rows.reverse();
            rows.swap(0, 5);
            let (b, _) = fit_polynomial(&rows, 3).unwrap();
            for (x, y) in a.coefficients().iter().zip(b.coefficients()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}
