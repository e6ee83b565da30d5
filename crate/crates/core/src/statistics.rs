//! Time-series statistics for flow observables: autocovariance estimation,
//! the integrated (central-limit) variance with an automatically selected
//! correlation window, an independent batch-means cross-check, and weighted
//! quadratic fits through the origin for response curves.
//!
//! The integrated variance of a stationary series `y` sampled every `dt` is
//! `sigma^2 = dt * (c_0 + 2 sum_{l=1}^{W} c_l)`, the constant such that the
//! time average over a window `T` fluctuates like `sigma / sqrt(T)`. The
//! window `W` is cut where the empirical autocorrelation stays inside the
//! `2 / sqrt(N)` noise floor for five consecutive lags; the spread across
//! half and double that window enters the reported error.

use crate::dynamics::{FlowSystem, IntegratorConfig, PhasePoint};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Minimum ratio of series length to the largest lag that is considered
/// resolvable.
const LENGTH_PER_LAG: usize = 100;
/// Number of consecutive sub-noise lags required to close the window.
const QUIET_RUN: usize = 5;

/// Biased (`1/N`) autocovariance estimates for lags `0..=max_lag`.
pub fn autocovariance(values: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = values.len();
    let needed = LENGTH_PER_LAG * max_lag.max(1);
    if n < needed {
        return Err(Error::InsufficientLength { needed, have: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut out = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let mut acc = 0.0;
        for k in 0..n - lag {
            acc += (values[k] - mean) * (values[k + lag] - mean);
        }
        out.push(acc / n as f64);
    }
    Ok(out)
}

/// Autocorrelation `rho_l = c_l / c_0` for lags `0..=max_lag`.
pub fn autocorrelation(values: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let c = autocovariance(values, max_lag)?;
    let c0 = c[0];
    if c0 <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "values",
            why: "series is constant; autocorrelation undefined".into(),
        });
    }
    Ok(c.iter().map(|v| v / c0).collect())
}

/// Integrated variance of a sampled observable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceEstimate {
    /// `dt * (c_0 + 2 sum_{l<=window} c_l)`.
    pub value: f64,
    /// Statistical error combined with the window-sensitivity half-band.
    pub std_error: f64,
    /// Chosen cutoff lag.
    pub window: usize,
    /// Estimates at half and double the chosen window.
    pub band: (f64, f64),
    /// Plain variance `c_0` of the sampled values.
    pub static_variance: f64,
    /// Integrated correlation time `value / (2 c_0)`.
    pub correlation_time: f64,
    pub samples: usize,
    pub sample_dt: f64,
}

/// Integrated variance with an automatic correlation window. The series must
/// be long enough that the window is at most `len / 100` lags; otherwise the
/// correlation structure is declared unresolved.
pub fn dynamical_variance(values: &[f64], dt: f64) -> Result<VarianceEstimate> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter {
            name: "dt",
            why: "sampling interval must be positive".into(),
        });
    }
    let n = values.len();
    let max_lag = n / LENGTH_PER_LAG;
    if max_lag < 2 {
        return Err(Error::InsufficientLength {
            needed: 2 * LENGTH_PER_LAG,
            have: n,
        });
    }
    let c = autocovariance(values, max_lag)?;
    let c0 = c[0];
    if c0 <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "values",
            why: "series is constant; variance window undefined".into(),
        });
    }
    let floor = 2.0 / (n as f64).sqrt();
    let mut window = None;
    'search: for l in 1..=max_lag.saturating_sub(QUIET_RUN - 1) {
        for j in l..l + QUIET_RUN {
            if (c[j] / c0).abs() >= floor {
                continue 'search;
            }
        }
        window = Some(l);
        break;
    }
    let window = window.ok_or(Error::InsufficientLength {
        needed: 2 * n,
        have: n,
    })?;

    let integrated = |w: usize| -> f64 {
        let w = w.min(max_lag);
        dt * (c0 + 2.0 * c[1..=w].iter().sum::<f64>())
    };
    let value = integrated(window);
    let lo = integrated((window / 2).max(1));
    let hi = integrated(2 * window);
    let band = (value.min(lo).min(hi), value.max(lo).max(hi));
    // Long-run variance estimates carry a relative error ~ sqrt(4(W+1)/N);
    // fold in half the window-sensitivity spread.
    let stat = value.abs() * (4.0 * (window as f64 + 1.0) / n as f64).sqrt();
    let spread = 0.5 * (band.1 - band.0);
    Ok(VarianceEstimate {
        value,
        std_error: (stat * stat + spread * spread).sqrt(),
        window,
        band,
        static_variance: c0,
        correlation_time: value / (2.0 * c0),
        samples: n,
        sample_dt: dt,
    })
}

/// Independent estimate of the same constant from `batches` consecutive batch
/// means: if the time average over `T_b` fluctuates like `sigma / sqrt(T_b)`,
/// then `T_b * Var(batch means)` recovers `sigma^2`.
pub fn batch_means_variance(values: &[f64], dt: f64, batches: usize) -> Result<f64> {
    let n = values.len();
    let batches = batches.max(2);
    let len = n / batches;
    if len < 2 {
        return Err(Error::InsufficientLength {
            needed: 2 * batches,
            have: n,
        });
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| values[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok(len as f64 * dt * var)
}

/// Variance measurement along an orbit: samples the observable every
/// `sample_every` integrator steps after a discarded transient and runs both
/// the windowed estimator and the batch-means cross-check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceRun {
    pub estimate: VarianceEstimate,
    pub batch_oracle: f64,
    pub mean: f64,
}

pub fn observable_variance(
    sys: &FlowSystem,
    p0: &PhasePoint,
    time: f64,
    transient: f64,
    sample_every: usize,
    icfg: &IntegratorConfig,
    obs: impl Fn(&PhasePoint) -> f64,
) -> Result<VarianceRun> {
    let start = sys.flow(p0, transient, icfg)?;
    let series = sys.observable_series(&start, time, icfg, sample_every, obs)?;
    let dt = icfg.step * sample_every.max(1) as f64;
    let estimate = dynamical_variance(&series, dt)?;
    let batch_oracle = batch_means_variance(&series, dt, 20)?;
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    Ok(VarianceRun {
        estimate,
        batch_oracle,
        mean,
    })
}

/// One measured point of a response curve: coupling `s`, response `e`, and
/// its standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvePoint {
    pub s: f64,
    pub e: f64,
    pub sigma: f64,
}

/// Weighted least-squares fit of `e(s) = b s + c s^2` (the curve is pinned to
/// the origin). Reports the derivatives at zero: `e'(0) = b` and
/// `e''(0) = 2 c`, each with its standard error from the normal-equation
/// covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveFit {
    pub slope: f64,
    pub slope_err: f64,
    pub second_derivative: f64,
    pub second_derivative_err: f64,
    pub chi_squared: f64,
    pub dof: usize,
}

pub fn fit_entropy_curve(points: &[CurvePoint]) -> Result<CurveFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientLength {
            needed: 3,
            have: points.len(),
        });
    }
    for p in points {
        if !(p.sigma > 0.0) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                why: format!("error bars must be positive, got {} at s = {}", p.sigma, p.s),
            });
        }
    }
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let w = 1.0 / (p.sigma * p.sigma);
        let s2 = p.s * p.s;
        a11 += w * s2;
        a12 += w * s2 * p.s;
        a22 += w * s2 * s2;
        b1 += w * p.s * p.e;
        b2 += w * s2 * p.e;
    }
    let det = a11 * a22 - a12 * a12;
    if !(det.abs() > 1e-12 * a11.max(a22).powi(2).max(f64::MIN_POSITIVE)) {
        return Err(Error::InvalidParameter {
            name: "points",
            why: "couplings do not separate slope from curvature".into(),
        });
    }
    let slope = (a22 * b1 - a12 * b2) / det;
    let half_curv = (a11 * b2 - a12 * b1) / det;
    let slope_var = a22 / det;
    let half_curv_var = a11 / det;
    let chi_squared = points
        .iter()
        .map(|p| {
            let fit = slope * p.s + half_curv * p.s * p.s;
            ((p.e - fit) / p.sigma).powi(2)
        })
        .sum();
    Ok(CurveFit {
        slope,
        slope_err: slope_var.sqrt(),
        second_derivative: 2.0 * half_curv,
        second_derivative_err: 2.0 * half_curv_var.sqrt(),
        chi_squared,
        dof: points.len() - 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{field_from_potential, FieldConfig, PotentialSpec};
    use crate::geometry::ManifoldModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ar1(n: usize, a: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = 0.0;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = rng.gen_range(-1.0_f64..1.0);
            y = a * y + xi;
            out.push(y);
        }
        out
    }

    #[test]
    fn autocorrelation_of_ar1_decays_geometrically() {
        let a = 0.8;
        let series = ar1(200_000, a, 7);
        let rho = autocorrelation(&series, 20).unwrap();
        assert!((rho[0] - 1.0).abs() < 1e-12);
        for lag in 1..=10 {
            let expect = a.powi(lag as i32);
            assert!(
                (rho[lag] - expect).abs() < 0.02,
                "lag {lag}: {} vs {expect}",
                rho[lag]
            );
        }
    }

    #[test]
    fn integrated_variance_matches_ar1_closed_form() {
        let a = 0.8;
        let dt = 0.05;
        let series = ar1(400_000, a, 11);
        let est = dynamical_variance(&series, dt).unwrap();
        // Static variance 1/(3 (1 - a^2)) for uniform innovations; the
        // integrated sum gains the factor (1 + a) / (1 - a).
        let expect = dt * (1.0 / (3.0 * (1.0 - a * a))) * (1.0 + a) / (1.0 - a);
        assert!(
            (est.value - expect).abs() < 0.12 * expect,
            "{} vs {expect} (window {})",
            est.value,
            est.window
        );
        assert!(est.band.0 <= est.value && est.value <= est.band.1);
        let oracle = batch_means_variance(&series, dt, 20).unwrap();
        assert!(
            (oracle - expect).abs() < 0.35 * expect,
            "batch oracle {oracle} vs {expect}"
        );
    }

    #[test]
    fn white_noise_variance_is_static_variance() {
        let series = ar1(100_000, 0.0, 3);
        let dt = 0.1;
        let est = dynamical_variance(&series, dt).unwrap();
        assert!(est.window <= 3, "window {}", est.window);
        assert!(
            (est.value - dt * est.static_variance).abs() < 0.05 * est.value.abs(),
            "{} vs {}",
            est.value,
            dt * est.static_variance
        );
        assert!((est.correlation_time / dt - 0.5).abs() < 0.1);
    }

    #[test]
    fn short_series_is_rejected() {
        let series = ar1(150, 0.5, 1);
        match dynamical_variance(&series, 0.1) {
            Err(Error::InsufficientLength { .. }) => {}
            other => panic!("expected length error, got {other:?}"),
        }
        match autocovariance(&series, 10) {
            Err(Error::InsufficientLength { needed: 1000, have: 150 }) => {}
            other => panic!("expected length error, got {other:?}"),
        }
    }

    #[test]
    fn pure_tone_never_closes_the_window() {
        // A non-decaying autocorrelation must be reported as unresolved
        // rather than silently truncated.
        let series: Vec<f64> = (0..50_000).map(|k| (0.3 * k as f64).sin()).collect();
        assert!(matches!(
            dynamical_variance(&series, 0.1),
            Err(Error::InsufficientLength { .. })
        ));
    }

    #[test]
    fn curve_fit_recovers_quadratic_response() {
        let b = 0.31;
        let c = 1.7;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut points = Vec::new();
        for k in 1..=8 {
            let s = 0.05 * k as f64;
            let sigma = 0.002;
            let noise: f64 = rng.gen_range(-1.0_f64..1.0);
            points.push(CurvePoint {
                s,
                e: b * s + c * s * s + sigma * noise,
                sigma,
            });
        }
        let fit = fit_entropy_curve(&points).unwrap();
        assert!((fit.slope - b).abs() < 3.0 * fit.slope_err, "{fit:?}");
        assert!(
            (fit.second_derivative - 2.0 * c).abs() < 3.0 * fit.second_derivative_err,
            "{fit:?}"
        );
        assert!(fit.chi_squared < 3.0 * fit.dof as f64, "{fit:?}");
        // Errors shrink with the data scale.
        assert!(fit.slope_err < 0.05);
    }

    #[test]
    fn curve_fit_rejects_degenerate_input() {
        let p = |s: f64| CurvePoint { s, e: s, sigma: 0.1 };
        assert!(fit_entropy_curve(&[p(0.1), p(0.2)]).is_err());
        // All couplings equal: slope and curvature are not separable.
        assert!(fit_entropy_curve(&[p(0.1), p(0.1), p(0.1)]).is_err());
    }

    fn octagon_variance_run(field: crate::fields::ExternalField) -> VarianceRun {
        let sys = FlowSystem::new(ManifoldModel::Octagon, FieldConfig::gaussian(field, 0.0))
            .unwrap();
        let p0 = PhasePoint::angle(0.04, 0.11, 0.9);
        observable_variance(
            &sys,
            &p0,
            4000.0,
            20.0,
            10,
            &IntegratorConfig::with_step(1e-2),
            |p| sys.theta_observable(p),
        )
        .unwrap()
    }

    #[test]
    fn band_form_observable_resolves_positive_variance() {
        let field = crate::fields::octagon_band_form(1.0, 0.8, 0).unwrap();
        let run = octagon_variance_run(field);
        assert!(
            run.estimate.value > 3.0 * run.estimate.std_error,
            "{:?}",
            run.estimate
        );
        // Independent batch means land in the same range.
        let ratio = run.batch_oracle / run.estimate.value;
        assert!(
            (0.4..2.5).contains(&ratio),
            "windowed {} vs batches {}",
            run.estimate.value,
            run.batch_oracle
        );
        // The alignment observable is odd in velocity: zero mean.
        assert!(run.mean.abs() < 3.0 * (run.estimate.value / 4000.0).sqrt());
    }

    #[test]
    fn exact_derivative_observable_variance_collapses() {
        // When the observable integrates to a difference of a bounded
        // function along orbits, the central-limit variance vanishes even
        // though the pointwise variance stays order one.
        let field =
            field_from_potential(&ManifoldModel::Octagon, PotentialSpec::octagon(1.0, 0.5))
                .unwrap();
        let run = octagon_variance_run(field);
        assert!(run.estimate.static_variance > 0.05, "{:?}", run.estimate);
        assert!(
            run.estimate.value.abs() <= 3.0 * run.estimate.std_error,
            "{:?}",
            run.estimate
        );
        assert!(
            run.batch_oracle
                < 0.5 * run.estimate.sample_dt * run.estimate.static_variance,
            "batch oracle {} static scale {}",
            run.batch_oracle,
            run.estimate.sample_dt * run.estimate.static_variance
        );
    }
}
