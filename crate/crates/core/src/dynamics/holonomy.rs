//! Closed orbits and circulation integrals.
//!
//! Orbits are located by Newton iteration on the full return displacement,
//! bordered with a phase condition that pins the starting point to the
//! hyperplane through the initial guess orthogonal (in chart coordinates) to
//! the flow direction. Circulations are accumulated at the integrator's own
//! fourth order via [`FlowSystem::flow_with_integral`].

use super::{FlowSystem, IntegratorConfig, PhasePoint};
use crate::error::{Error, Result};
use crate::fields::ExternalField;
use crate::geometry::{octagon, ManifoldModel};
use nalgebra::{DMatrix, DVector};

/// A closed orbit of the flow: a starting state and the first-return period.
#[derive(Debug, Clone, Copy)]
pub struct ClosedOrbit {
    pub start: PhasePoint,
    pub period: f64,
}

/// The closed geodesic running along the diameter of the octagon in
/// direction `axis * pi/4`. Its two arcs join through the midpoints of the
/// opposite sides it crosses; the length is twice the apothem.
pub fn octagon_axis_orbit(axis: usize) -> Result<ClosedOrbit> {
    if axis >= 4 {
        return Err(Error::InvalidParameter {
            name: "axis",
            why: "axis orbits are the four diameters, indices 0..4".into(),
        });
    }
    Ok(ClosedOrbit {
        start: PhasePoint::angle(0.0, 0.0, octagon::side_angle(axis)),
        period: 2.0 * octagon::apothem(),
    })
}

/// Chart displacement `flow_T(u) - u` with torus and angle wrapping.
fn return_gap(sys: &FlowSystem, a: &PhasePoint, b: &PhasePoint) -> Vec<f64> {
    let wrap_x = sys.model.is_torus();
    match (a, b) {
        (PhasePoint::Angle { x: xa, phi: pa }, PhasePoint::Angle { x: xb, phi: pb }) => {
            let mut gap = Vec::with_capacity(3);
            for i in 0..2 {
                let mut d = xa[i] - xb[i];
                if wrap_x {
                    d -= d.round();
                }
                gap.push(d);
            }
            let tau = std::f64::consts::TAU;
            let d = (pa - pb + std::f64::consts::PI).rem_euclid(tau) - std::f64::consts::PI;
            gap.push(d);
            gap
        }
        (PhasePoint::Vector { x: xa, v: va }, PhasePoint::Vector { x: xb, v: vb }) => {
            let mut gap = Vec::with_capacity(6);
            for i in 0..3 {
                let mut d = xa[i] - xb[i];
                d -= d.round();
                gap.push(d);
            }
            for i in 0..3 {
                gap.push(va[i] - vb[i]);
            }
            gap
        }
        _ => unreachable!("mismatched state kinds"),
    }
}

fn shift_state(p: &PhasePoint, delta: &[f64]) -> PhasePoint {
    match *p {
        PhasePoint::Angle { x, phi } => PhasePoint::Angle {
            x: [x[0] + delta[0], x[1] + delta[1], 0.0],
            phi: phi + delta[2],
        },
        PhasePoint::Vector { x, v } => PhasePoint::Vector {
            x: [x[0] + delta[0], x[1] + delta[1], x[2] + delta[2]],
            v: [v[0] + delta[3], v[1] + delta[4], v[2] + delta[5]],
        },
    }
}

fn chart_flow_direction(sys: &FlowSystem, p: &PhasePoint) -> Vec<f64> {
    // Reuse the integrator's derivative through a tiny step quotient to keep
    // the chart vector field private: (flow_h - id)/h at first order would
    // lose digits, so probe with a central difference at modest h.
    let h = 1e-5;
    let cfg = IntegratorConfig {
        step: h,
        renorm_every: 0,
        max_transitions: 4,
    };
    let fwd = sys.step(p, h, &cfg, false).expect("probe step");
    let bwd = sys.step(p, -h, &cfg, false).expect("probe step");
    return_gap(sys, &fwd, &bwd)
        .into_iter()
        .map(|d| d / (2.0 * h))
        .collect()
}

/// Newton refinement of a closed orbit from an approximate starting state
/// and period. The phase condition keeps the start on the section through
/// `guess` orthogonal to the initial flow direction.
pub fn find_closed_orbit(
    sys: &FlowSystem,
    guess: &PhasePoint,
    period_guess: f64,
    cfg: &IntegratorConfig,
    tol: f64,
    max_iter: usize,
) -> Result<ClosedOrbit> {
    let dims = match guess {
        PhasePoint::Angle { .. } => 3,
        PhasePoint::Vector { .. } => 6,
    };
    let section_normal = chart_flow_direction(sys, guess);
    let anchor = *guess;
    let mut p = *guess;
    let mut period = period_guess;
    let mut last_gap = f64::INFINITY;
    for iter in 0..max_iter {
        let end = sys.flow(&p, period, cfg)?;
        let mut residual = return_gap(sys, &end, &p);
        // Phase condition: displacement from the anchor along the flow.
        let anchor_gap = return_gap(sys, &p, &anchor);
        let phase: f64 = (0..dims).map(|i| section_normal[i] * anchor_gap[i]).sum();
        residual.push(phase);
        let gap_norm = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
        last_gap = gap_norm;
        if gap_norm < tol {
            return Ok(ClosedOrbit { start: p, period });
        }

        // Bordered Jacobian by finite differences.
        let mut jac = DMatrix::zeros(dims + 1, dims + 1);
        let fd = 1e-7;
        for col in 0..dims {
            let mut delta = vec![0.0; dims];
            delta[col] = fd;
            let pp = shift_state(&p, &delta);
            delta[col] = -fd;
            let pm = shift_state(&p, &delta);
            let ep = sys.flow(&pp, period, cfg)?;
            let em = sys.flow(&pm, period, cfg)?;
            let gp = return_gap(sys, &ep, &pp);
            let gm = return_gap(sys, &em, &pm);
            for row in 0..dims {
                jac[(row, col)] = (gp[row] - gm[row]) / (2.0 * fd);
            }
            jac[(dims, col)] = section_normal[col];
        }
        // d residual / d period = flow direction at the endpoint.
        let dir_end = chart_flow_direction(sys, &end);
        for row in 0..dims {
            jac[(row, dims)] = dir_end[row];
        }
        jac[(dims, dims)] = 0.0;

        let rhs = DVector::from_iterator(dims + 1, residual.iter().map(|r| -r));
        let delta = jac.lu().solve(&rhs).ok_or(Error::NoOrbitFound {
            iterations: iter,
            last_step: gap_norm,
        })?;
        // Damp wild steps to keep the iterate in the chart.
        let step_norm = delta.norm();
        let damp = if step_norm > 0.2 { 0.2 / step_norm } else { 1.0 };
        let shift: Vec<f64> = (0..dims).map(|i| damp * delta[i]).collect();
        p = shift_state(&p, &shift);
        period += damp * delta[dims];
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::NoOrbitFound {
                iterations: iter,
                last_step: gap_norm,
            });
        }
    }
    Err(Error::NoOrbitFound {
        iterations: max_iter,
        last_step: last_gap,
    })
}

/// Circulation of an observable along a closed orbit.
pub fn loop_integral(
    sys: &FlowSystem,
    orbit: &ClosedOrbit,
    cfg: &IntegratorConfig,
    obs: impl Fn(&PhasePoint) -> f64,
) -> Result<f64> {
    let (_, integral) = sys.flow_with_integral(&orbit.start, orbit.period, cfg, obs)?;
    Ok(integral)
}

/// Circulation of a one-form along a closed orbit of `sys`:
/// `int theta(gamma') dt`. For gradient fields this vanishes on every closed
/// orbit; for closed non-exact forms it reads off the cycle's period.
pub fn circulation(
    sys: &FlowSystem,
    field: &ExternalField,
    orbit: &ClosedOrbit,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let m: ManifoldModel = sys.model;
    loop_integral(sys, orbit, cfg, |p| {
        field.theta(&m, &p.base(), &p.velocity(&m))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{self, FieldConfig, PotentialSpec};

    #[test]
    fn axis_orbits_close_up() {
        let sys = FlowSystem::geodesic(ManifoldModel::Octagon);
        let cfg = IntegratorConfig::default();
        for axis in 0..4 {
            let orbit = octagon_axis_orbit(axis).unwrap();
            let end = sys.flow(&orbit.start, orbit.period, &cfg).unwrap();
            let gap = return_gap(&sys, &end, &orbit.start);
            let norm = gap.iter().map(|g| g * g).sum::<f64>().sqrt();
            assert!(norm < 1e-9, "axis {axis}: return gap {norm}");
        }
    }

    #[test]
    fn band_circulation_counts_crossings() {
        let sys = FlowSystem::geodesic(ManifoldModel::Octagon);
        let cfg = IntegratorConfig::default();
        let band = fields::octagon_band_form(0.3, 1.0, 2).unwrap();
        // The horizontal axis crosses the vertical band once per circuit.
        let crossing = octagon_axis_orbit(0).unwrap();
        let c = circulation(&sys, &band, &crossing, &cfg).unwrap();
        assert!((c - 0.3).abs() < 1e-7, "crossing circulation {c}");
        // The band's own axis stays at constant signed distance: zero.
        let parallel = octagon_axis_orbit(2).unwrap();
        let c0 = circulation(&sys, &band, &parallel, &cfg).unwrap();
        assert!(c0.abs() < 1e-9, "parallel circulation {c0}");
    }

    #[test]
    fn newton_finds_the_isolated_vertical_geodesic() {
        // With f = a cos(2 pi x1), vertical lines at the critical points of
        // f are isolated closed geodesics; the one through x1 = 0 has length
        // e^a. Start Newton from a deliberately sloppy guess.
        let a = 0.1;
        let m = ManifoldModel::conformal_torus2(a);
        let sys = FlowSystem::geodesic(m);
        let cfg = IntegratorConfig::default();
        let guess = PhasePoint::angle(0.03, 0.2, std::f64::consts::FRAC_PI_2 + 0.08);
        let orbit = find_closed_orbit(&sys, &guess, 1.15, &cfg, 1e-9, 50).unwrap();
        match orbit.start {
            PhasePoint::Angle { x, phi } => {
                let x1 = x[0].min(1.0 - x[0]);
                assert!(x1.abs() < 1e-7, "x1 = {}", x[0]);
                assert!(
                    (phi - std::f64::consts::FRAC_PI_2).abs() < 1e-7,
                    "phi = {phi}"
                );
            }
            _ => unreachable!(),
        }
        assert!(
            (orbit.period - a.exp()).abs() < 1e-7,
            "period {} vs {}",
            orbit.period,
            a.exp()
        );
    }

    #[test]
    fn gradient_fields_have_no_circulation() {
        let m = ManifoldModel::conformal_torus2(0.1);
        let sys = FlowSystem::geodesic(m);
        let cfg = IntegratorConfig::default();
        let grad = fields::field_from_potential(&m, PotentialSpec::torus(0.2, [1, 1, 0])).unwrap();
        let guess = PhasePoint::angle(0.01, 0.3, std::f64::consts::FRAC_PI_2);
        let orbit = find_closed_orbit(&sys, &guess, 1.12, &cfg, 1e-9, 50).unwrap();
        let c = circulation(&sys, &grad, &orbit, &cfg).unwrap();
        assert!(c.abs() < 1e-8, "gradient circulation {c}");
    }

    #[test]
    fn missing_orbits_are_reported() {
        // A chaotic thermostat start nowhere near a short closed orbit.
        let m = ManifoldModel::Octagon;
        let field = fields::field_from_potential(&m, PotentialSpec::octagon(0.2, 0.5)).unwrap();
        let sys = FlowSystem::new(m, FieldConfig::gaussian(field, 1.0)).unwrap();
        let cfg = IntegratorConfig::default();
        let guess = PhasePoint::angle(0.3, 0.1, 0.77);
        let out = find_closed_orbit(&sys, &guess, 1.3, &cfg, 1e-11, 4);
        assert!(matches!(out, Err(Error::NoOrbitFound { .. })));
    }
}
