//! Lyapunov spectrum of thermostat flows by the classical QR method: a frame
//! of tangent vectors is advanced with the analytic variational equations and
//! re-orthonormalized periodically, the logarithms of the triangular factors
//! telescoping into the exponents. Entropy production estimates derive from
//! the time average of the phase-volume divergence, with batch-mean error
//! bars.
//!
//! Surface states use the full 3-dimensional chart `(x1, x2, phi)`, which
//! coincides with the unit sphere bundle, so all `2n - 1 = 3` exponents are
//! tracked directly. Three-dimensional states live in a 6-dimensional chart
//! with the unit-speed constraint built in dynamically; the frame holds 5
//! vectors kept inside the constraint tangent space by projection at each
//! re-orthonormalization.

use crate::dynamics::{FlowSystem, IntegratorConfig, PhasePoint};
use crate::error::{Error, Result};
use crate::geometry::mobius::c;
use crate::geometry::octagon;
use crate::tensor::*;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Settings for a spectrum run. `time` is the accumulation window after the
/// `transient` warm-up is discarded; both are rounded to whole integrator
/// steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovConfig {
    pub time: f64,
    pub transient: f64,
    /// Interval between QR re-orthonormalizations, in flow time.
    pub renorm_interval: f64,
    /// Convergence gate: largest drift of any exponent between the half-time
    /// and final estimates.
    pub conv_tol: f64,
    pub integrator: IntegratorConfig,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig {
            time: 2000.0,
            transient: 20.0,
            renorm_interval: 1.0,
            conv_tol: 0.01,
            integrator: IntegratorConfig::default(),
        }
    }
}

impl LyapunovConfig {
    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        if !(self.time > 0.0) {
            return Err(Error::InvalidParameter {
                name: "time",
                why: "accumulation window must be positive".into(),
            });
        }
        if self.transient < 0.0 {
            return Err(Error::InvalidParameter {
                name: "transient",
                why: "warm-up time cannot be negative".into(),
            });
        }
        if !(self.renorm_interval > 0.0) {
            return Err(Error::InvalidParameter {
                name: "renorm_interval",
                why: "re-orthonormalization interval must be positive".into(),
            });
        }
        if !(self.conv_tol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "conv_tol",
                why: "convergence tolerance must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Result of a spectrum run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// Exponents in descending order.
    pub exponents: Vec<f64>,
    /// Sum of the exponents (phase-volume growth rate along the orbit).
    pub sum: f64,
    /// Independent time average of the phase-volume divergence over the same
    /// window; agrees with `sum` up to boundary terms of size `O(1/time)`.
    pub divergence_average: f64,
    /// Running estimates `(t, exponents(t))` at re-orthonormalization times,
    /// thinned to at most 128 records.
    pub history: Vec<(f64, Vec<f64>)>,
    /// Whether no exponent drifted more than `conv_tol` between the half-time
    /// and final estimates.
    pub converged: bool,
    /// Actual accumulation window (whole steps).
    pub time: f64,
}

/// Entropy production estimate `- <divergence>` with batch-mean error bars.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub value: f64,
    /// Standard error of the batch means (zero for the field-free exact case).
    pub std_error: f64,
    pub batches: usize,
    pub batch_time: f64,
    /// Time average of the thermostat alignment observable over the same run.
    pub theta_mean: f64,
}

/// Variational state: base phase point plus a tangent frame, advanced jointly
/// at fourth order. The Jacobian is evaluated at the four stage states of the
/// base step, and octagon side pairings met during chart normalization are
/// applied to the frame columns through their derivative maps.
struct VariationalStepper<'a> {
    sys: &'a FlowSystem,
    p: PhasePoint,
    frame: DMatrix<f64>,
    rows: usize,
}

impl<'a> VariationalStepper<'a> {
    fn new(sys: &'a FlowSystem, p0: &PhasePoint) -> Self {
        let (rows, cols) = match p0 {
            PhasePoint::Angle { .. } => (3, 3),
            PhasePoint::Vector { .. } => (6, 5),
        };
        let frame = match p0 {
            PhasePoint::Angle { .. } => DMatrix::identity(rows, cols),
            PhasePoint::Vector { .. } => constraint_tangent_basis(sys, p0),
        };
        VariationalStepper {
            sys,
            p: *p0,
            frame,
            rows,
        }
    }

    fn jacobian(&self, p: &PhasePoint) -> DMatrix<f64> {
        let full = self.sys.linearization(p);
        DMatrix::from_fn(self.rows, self.rows, |i, j| full[i][j])
    }

    /// One joint step; returns the contribution of this step to the
    /// divergence integral (same fourth-order stage quadrature as the flow).
    fn step(&mut self, h: f64, icfg: &IntegratorConfig, renorm: bool) -> Result<f64> {
        let (out, stages) = self.sys.rk4_raw(&self.p.pack(), h);
        let pts = stages.map(|s| self.p.unpack(&s));
        let div = h / 6.0
            * (self.sys.volume_divergence(&pts[0])
                + 2.0 * self.sys.volume_divergence(&pts[1])
                + 2.0 * self.sys.volume_divergence(&pts[2])
                + self.sys.volume_divergence(&pts[3]));

        let j0 = self.jacobian(&pts[0]);
        let j1 = self.jacobian(&pts[1]);
        let j2 = self.jacobian(&pts[2]);
        let j3 = self.jacobian(&pts[3]);
        let k1 = &j0 * &self.frame;
        let q1 = &self.frame + &k1 * (0.5 * h);
        let k2 = &j1 * &q1;
        let q2 = &self.frame + &k2 * (0.5 * h);
        let k3 = &j2 * &q2;
        let q3 = &self.frame + &k3 * h;
        let k4 = &j3 * &q3;
        self.frame += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);

        let mut next = self.p.unpack(&out);
        let path = self.sys.normalize_tracked(&mut next, icfg, renorm)?;
        for (side, z) in path {
            for col in 0..self.frame.ncols() {
                let dz = c(self.frame[(0, col)], self.frame[(1, col)]);
                let (dz_out, dphi_out) =
                    octagon::transport_tangent(side, z, dz, self.frame[(2, col)]);
                self.frame[(0, col)] = dz_out.re;
                self.frame[(1, col)] = dz_out.im;
                self.frame[(2, col)] = dphi_out;
            }
        }
        self.p = next;
        Ok(div)
    }

    /// QR re-orthonormalization; adds `ln |r_ii|` into `sums`. Frames over a
    /// 6-dimensional chart are first projected back onto the constraint
    /// tangent space to strip accumulated off-manifold drift.
    fn reorthonormalize(&mut self, sums: &mut [f64]) {
        if matches!(self.p, PhasePoint::Vector { .. }) {
            project_onto_constraint(self.sys, &self.p, &mut self.frame);
        }
        let qr = self.frame.clone().qr();
        let r = qr.r();
        for (i, s) in sums.iter_mut().enumerate() {
            *s += r[(i, i)].abs().max(1e-300).ln();
        }
        self.frame = qr.q();
    }
}

/// Euclidean chart gradient of the speed constraint `g_ij(x) v^i v^j`.
fn constraint_gradient(sys: &FlowSystem, p: &PhasePoint) -> [f64; 6] {
    let (x, v) = match *p {
        PhasePoint::Vector { x, v } => (x, v),
        PhasePoint::Angle { .. } => unreachable!("surface charts carry no speed constraint"),
    };
    let g = sys.model.metric(&x);
    let dg = sys.model.metric_partials(&x);
    let mut grad = [0.0; 6];
    for l in 0..3 {
        grad[l] = sum2(3, |i, j| dg[l][i][j] * v[i] * v[j]);
        grad[3 + l] = 2.0 * sum1(3, |j| g[l][j] * v[j]);
    }
    grad
}

/// Orthonormal basis of the hyperplane orthogonal to the constraint gradient,
/// via the Householder reflection sending the unit normal to `-sign e_1`.
fn constraint_tangent_basis(sys: &FlowSystem, p: &PhasePoint) -> DMatrix<f64> {
    let grad = constraint_gradient(sys, p);
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let nhat: Vec<f64> = grad.iter().map(|g| g / norm).collect();
    let sign = if nhat[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut w = nhat.clone();
    w[0] += sign;
    let wn = w.iter().map(|g| g * g).sum::<f64>().sqrt();
    for entry in &mut w {
        *entry /= wn;
    }
    // Columns 2..6 of H = I - 2 w w^T are orthonormal and orthogonal to nhat.
    DMatrix::from_fn(6, 5, |i, jcol| {
        let j = jcol + 1;
        (if i == j { 1.0 } else { 0.0 }) - 2.0 * w[i] * w[j]
    })
}

/// Remove from each frame column its component along the constraint normal.
fn project_onto_constraint(sys: &FlowSystem, p: &PhasePoint, frame: &mut DMatrix<f64>) {
    let grad = constraint_gradient(sys, p);
    let nn: f64 = grad.iter().map(|g| g * g).sum();
    if nn == 0.0 {
        return;
    }
    for col in 0..frame.ncols() {
        let mut proj = 0.0;
        for i in 0..6 {
            proj += grad[i] * frame[(i, col)];
        }
        proj /= nn;
        for i in 0..6 {
            frame[(i, col)] -= proj * grad[i];
        }
    }
}

/// Full Lyapunov spectrum along the orbit through `p0`.
pub fn lyapunov_spectrum(
    sys: &FlowSystem,
    p0: &PhasePoint,
    cfg: &LyapunovConfig,
) -> Result<LyapunovReport> {
    cfg.validate()?;
    let h = cfg.integrator.step;
    let block = ((cfg.renorm_interval / h).round() as usize).max(1);
    let warm_steps = (cfg.transient / h).round() as usize;
    let main_steps = ((cfg.time / h).round() as usize).max(1);
    let main_time = main_steps as f64 * h;

    let mut st = VariationalStepper::new(sys, p0);
    let cols = st.frame.ncols();
    let mut sums = vec![0.0; cols];

    // Warm-up: align the frame with the asymptotic splitting, discard logs.
    let mut global = 0usize;
    for k in 0..warm_steps {
        let renorm =
            cfg.integrator.renorm_every > 0 && (k + 1) % cfg.integrator.renorm_every == 0;
        st.step(h, &cfg.integrator, renorm)?;
        global += 1;
        if global % block == 0 {
            st.reorthonormalize(&mut sums);
        }
    }
    sums.iter_mut().for_each(|s| *s = 0.0);

    let mut div_integral = 0.0;
    let mut history: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut half_sums: Option<(f64, Vec<f64>)> = None;
    for k in 0..main_steps {
        let renorm =
            cfg.integrator.renorm_every > 0 && (global + 1) % cfg.integrator.renorm_every == 0;
        div_integral += st.step(h, &cfg.integrator, renorm)?;
        global += 1;
        let elapsed = (k + 1) as f64 * h;
        if global % block == 0 || k + 1 == main_steps {
            st.reorthonormalize(&mut sums);
            history.push((elapsed, sums.iter().map(|s| s / elapsed).collect()));
            if half_sums.is_none() && elapsed >= 0.5 * main_time {
                half_sums = Some((elapsed, sums.clone()));
            }
        }
    }

    let mut exponents: Vec<f64> = sums.iter().map(|s| s / main_time).collect();
    exponents.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let sum = exponents.iter().sum();
    let converged = match &half_sums {
        Some((t_half, s_half)) => {
            let mut half: Vec<f64> = s_half.iter().map(|s| s / t_half).collect();
            half.sort_by(|a, b| b.partial_cmp(a).unwrap());
            exponents
                .iter()
                .zip(&half)
                .all(|(a, b)| (a - b).abs() <= cfg.conv_tol)
        }
        None => false,
    };
    if history.len() > 128 {
        let keep = history.len().div_ceil(128);
        let last = history.last().cloned();
        history = history
            .into_iter()
            .step_by(keep)
            .chain(last)
            .collect();
        history.dedup_by(|a, b| a.0 == b.0);
    }
    Ok(LyapunovReport {
        exponents,
        sum,
        divergence_average: div_integral / main_time,
        history,
        converged,
        time: main_time,
    })
}

/// Entropy production as `- <phase-volume divergence>` along the orbit, with
/// the standard error of `batches` consecutive batch means. When no forcing
/// fields are present the divergence vanishes identically and the exact zero
/// is returned without integrating.
pub fn entropy_production(
    sys: &FlowSystem,
    p0: &PhasePoint,
    time: f64,
    transient: f64,
    batches: usize,
    icfg: &IntegratorConfig,
) -> Result<EntropyEstimate> {
    if !(time > 0.0) {
        return Err(Error::InvalidParameter {
            name: "time",
            why: "averaging window must be positive".into(),
        });
    }
    let batches = batches.max(20);
    if sys.fields.external.is_none() && sys.fields.generalized.is_none() {
        return Ok(EntropyEstimate {
            value: 0.0,
            std_error: 0.0,
            batches,
            batch_time: time / batches as f64,
            theta_mean: 0.0,
        });
    }
    let mut p = sys.flow(p0, transient, icfg)?;
    let batch_time = time / batches as f64;
    let mut means = Vec::with_capacity(batches);
    let mut theta_sum = 0.0;
    for _ in 0..batches {
        let (next, [div_int, theta_int]) = sys.flow_with_integrals(&p, batch_time, icfg, |q| {
            [sys.volume_divergence(q), sys.theta_observable(q)]
        })?;
        means.push(-div_int / batch_time);
        theta_sum += theta_int;
        p = next;
    }
    let value = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - value).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok(EntropyEstimate {
        value,
        std_error: (var / batches as f64).sqrt(),
        batches,
        batch_time,
        theta_mean: theta_sum / time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{field_from_potential, FieldConfig, GeneralizedField, PotentialSpec};
    use crate::geometry::ManifoldModel;

    fn spectrum(
        sys: &FlowSystem,
        p0: &PhasePoint,
        time: f64,
        step: f64,
    ) -> LyapunovReport {
        let cfg = LyapunovConfig {
            time,
            transient: 20.0,
            integrator: IntegratorConfig::with_step(step),
            ..LyapunovConfig::default()
        };
        lyapunov_spectrum(sys, p0, &cfg).unwrap()
    }

    #[test]
    fn constant_negative_curvature_geodesic_spectrum() {
        let sys = FlowSystem::geodesic(ManifoldModel::Octagon);
        let p0 = PhasePoint::angle(0.11, 0.07, 0.83);
        let rep = spectrum(&sys, &p0, 400.0, 1e-3);
        assert!((rep.exponents[0] - 1.0).abs() < 0.02, "{:?}", rep.exponents);
        assert!(rep.exponents[1].abs() < 0.02, "{:?}", rep.exponents);
        assert!((rep.exponents[2] + 1.0).abs() < 0.02, "{:?}", rep.exponents);
        assert!(rep.converged);
        // Volume preserved: the spectrum is symmetric and sums to zero.
        assert!(rep.sum.abs() < 0.03);
        assert!(rep.divergence_average.abs() < 1e-12);
    }

    #[test]
    fn flat_torus_geodesic_spectrum_vanishes() {
        let sys = FlowSystem::geodesic(ManifoldModel::FlatTorus2);
        let p0 = PhasePoint::angle(0.2, 0.55, 0.4);
        let rep = spectrum(&sys, &p0, 200.0, 1e-3);
        for l in &rep.exponents {
            assert!(l.abs() < 5e-3, "{:?}", rep.exponents);
        }
    }

    #[test]
    fn magnetic_spectrum_scales_with_field_strength() {
        // Rotational forcing of strength lambda on curvature -1 shifts the
        // top exponent to sqrt(1 - lambda^2) and keeps the sum at zero.
        let lambda = 0.5;
        let sys = FlowSystem::new(ManifoldModel::Octagon, FieldConfig::magnetic(lambda)).unwrap();
        let p0 = PhasePoint::angle(0.13, -0.05, 0.31);
        let rep = spectrum(&sys, &p0, 400.0, 1e-3);
        let expect = (1.0 - lambda * lambda).sqrt();
        assert!(
            (rep.exponents[0] - expect).abs() < 0.02,
            "{:?} vs {expect}",
            rep.exponents
        );
        assert!((rep.exponents[2] + expect).abs() < 0.02);
        assert!(rep.sum.abs() < 0.03);
    }

    #[test]
    fn exponent_sum_matches_divergence_average() {
        let field =
            field_from_potential(&ManifoldModel::Octagon, PotentialSpec::octagon(1.0, 0.5))
                .unwrap();
        let sys = FlowSystem::new(
            ManifoldModel::Octagon,
            FieldConfig::gaussian(field, 0.3),
        )
        .unwrap();
        let p0 = PhasePoint::angle(0.02, 0.18, 1.2);
        let rep = spectrum(&sys, &p0, 1500.0, 1e-3);
        // QR telescoping and the stage quadrature measure the same volume
        // growth; they differ by boundary terms O(1/T).
        assert!(
            (rep.sum - rep.divergence_average).abs() < 0.01,
            "sum {} vs divergence {}",
            rep.sum,
            rep.divergence_average
        );
        assert!(rep.exponents[1].abs() < 0.02, "{:?}", rep.exponents);
    }

    #[test]
    fn three_dimensional_frame_stays_on_constraint() {
        let m = ManifoldModel::conformal_torus3(0.3);
        let sys = FlowSystem::geodesic(m);
        let p0 = PhasePoint::vector(&m, [0.1, 0.3, 0.7], [0.5, 0.6, 0.2]).unwrap();
        let rep = spectrum(&sys, &p0, 300.0, 1e-3);
        assert_eq!(rep.exponents.len(), 5);
        assert!(rep.sum.abs() < 0.02, "{:?}", rep.exponents);
        assert!(rep.divergence_average.abs() < 1e-12);
    }

    #[test]
    fn dissipative_thermostat_produces_entropy() {
        let m = ManifoldModel::FlatTorus3;
        let field = crate::fields::closed_nonexact_form(&m, [0.0, 0.0, 1.0], 0.4).unwrap();
        let sys = FlowSystem::new(m, FieldConfig::gaussian(field, 0.4)).unwrap();
        let p0 = PhasePoint::vector(&m, [0.21, 0.62, 0.4], [0.8, 0.1, 0.55]).unwrap();
        let rep = spectrum(&sys, &p0, 600.0, 1e-3);
        assert!(rep.sum < -1e-3, "expected volume contraction: {:?}", rep);
        assert!(
            (rep.sum - rep.divergence_average).abs() < 0.02,
            "sum {} vs divergence {}",
            rep.sum,
            rep.divergence_average
        );
        let est = entropy_production(&sys, &p0, 600.0, 20.0, 20, &sys_icfg()).unwrap();
        assert!(est.value > 0.0);
        assert!(
            (est.value + rep.sum).abs() < 3.0 * est.std_error.max(5e-3),
            "entropy {} vs -sum {}",
            est.value,
            -rep.sum
        );
        // The divergence average is -2 s <theta> here.
        assert!(
            (est.value - 2.0 * 0.4 * est.theta_mean).abs() < 1e-10,
            "value {} theta {}",
            est.value,
            est.theta_mean
        );
    }

    fn sys_icfg() -> IntegratorConfig {
        IntegratorConfig::with_step(1e-3)
    }

    #[test]
    fn entropy_vanishes_without_forcing() {
        let sys = FlowSystem::geodesic(ManifoldModel::Octagon);
        let p0 = PhasePoint::angle(0.0, 0.0, 0.2);
        let est = entropy_production(&sys, &p0, 50.0, 0.0, 20, &sys_icfg()).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn generalized_forcing_entropy_matches_spectrum_sum() {
        let m = ManifoldModel::conformal_torus2(0.2);
        let fields = FieldConfig::generalized(GeneralizedField::Uniform { value: 0.7 });
        let sys = FlowSystem::new(m, fields).unwrap();
        let p0 = PhasePoint::angle(0.4, 0.9, 0.1);
        let rep = spectrum(&sys, &p0, 400.0, 1e-3);
        // Constant angular forcing has zero fiber derivative: volume is
        // preserved even though orbits are no longer geodesics.
        assert!(rep.divergence_average.abs() < 1e-12);
        assert!(rep.sum.abs() < 0.02, "{:?}", rep.exponents);
    }
}
