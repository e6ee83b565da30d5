//! Thermostat flows on the unit sphere bundle: equations of motion, a
//! classical fourth-order integrator aware of the octagon side pairings, and
//! the analytic linearization used by the spectrum estimators.
//!
//! Surface states are tracked as `(x, phi)` with the velocity
//! `e^{-f}(cos phi, sin phi)` read against the conformal frame, so the unit
//! speed constraint is built into the chart. Three-dimensional states carry
//! the chart velocity explicitly and are renormalized periodically.

pub mod holonomy;
pub mod surface_ops;

use crate::error::{Error, Result};
use crate::fields::{FieldConfig, LorentzForce};
use crate::geometry::mobius::c;
use crate::geometry::{christoffel, christoffel_partials, octagon, ChartPoint, ManifoldModel};
use crate::tensor::*;
use serde::{Deserialize, Serialize};

const TAU: f64 = std::f64::consts::TAU;

/// Point of the unit sphere bundle in chart coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhasePoint {
    /// Surface state: base coordinates plus the fiber angle against the
    /// conformal orthonormal frame.
    Angle { x: V3, phi: f64 },
    /// Three-dimensional state: base coordinates plus unit chart velocity.
    Vector { x: V3, v: V3 },
}

impl PhasePoint {
    pub fn angle(x1: f64, x2: f64, phi: f64) -> Self {
        PhasePoint::Angle {
            x: [x1, x2, 0.0],
            phi,
        }
    }

    /// Build a 3-dimensional state, normalizing the velocity to unit speed.
    pub fn vector(m: &ManifoldModel, x: V3, v: V3) -> Result<Self> {
        let speed = m.inner(&x, &v, &v).sqrt();
        if !(speed > 0.0) {
            return Err(Error::InvalidParameter {
                name: "velocity",
                why: "cannot normalize a zero velocity".into(),
            });
        }
        Ok(PhasePoint::Vector {
            x,
            v: scale(&v, 1.0 / speed),
        })
    }

    pub fn base(&self) -> V3 {
        match self {
            PhasePoint::Angle { x, .. } | PhasePoint::Vector { x, .. } => *x,
        }
    }

    /// Chart components of the unit velocity.
    pub fn velocity(&self, m: &ManifoldModel) -> V3 {
        match self {
            PhasePoint::Angle { x, phi } => m.unit_vector(x, *phi),
            PhasePoint::Vector { v, .. } => *v,
        }
    }

    /// Riemannian speed (should stay 1 up to integrator drift).
    pub fn speed(&self, m: &ManifoldModel) -> f64 {
        let x = self.base();
        let v = self.velocity(m);
        m.inner(&x, &v, &v).sqrt()
    }

    /// Reverse the velocity, fixing the base point.
    pub fn reversed(&self) -> Self {
        match *self {
            PhasePoint::Angle { x, phi } => PhasePoint::Angle {
                x,
                phi: (phi + std::f64::consts::PI).rem_euclid(TAU),
            },
            PhasePoint::Vector { x, v } => PhasePoint::Vector {
                x,
                v: scale(&v, -1.0),
            },
        }
    }

    pub(crate) fn pack(&self) -> State {
        match *self {
            PhasePoint::Angle { x, phi } => [x[0], x[1], phi, 0.0, 0.0, 0.0],
            PhasePoint::Vector { x, v } => [x[0], x[1], x[2], v[0], v[1], v[2]],
        }
    }

    pub(crate) fn unpack(&self, s: &State) -> Self {
        match self {
            PhasePoint::Angle { .. } => PhasePoint::Angle {
                x: [s[0], s[1], 0.0],
                phi: s[2],
            },
            PhasePoint::Vector { .. } => PhasePoint::Vector {
                x: [s[0], s[1], s[2]],
                v: [s[3], s[4], s[5]],
            },
        }
    }
}

type State = [f64; 6];

/// Integrator controls. `step` is the fixed fourth-order step; velocities of
/// 3-dimensional states are renormalized every `renorm_every` steps;
/// `max_transitions` caps octagon pairing applications per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub step: f64,
    pub renorm_every: usize,
    pub max_transitions: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            step: 1e-3,
            renorm_every: 1,
            max_transitions: 4,
        }
    }
}

impl IntegratorConfig {
    pub fn with_step(step: f64) -> Self {
        IntegratorConfig {
            step,
            ..IntegratorConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step < 0.5) {
            return Err(Error::InvalidParameter {
                name: "step",
                why: format!("step {} outside (0, 0.5)", self.step),
            });
        }
        if self.max_transitions == 0 {
            return Err(Error::InvalidParameter {
                name: "max_transitions",
                why: "need at least one pairing application per step".into(),
            });
        }
        Ok(())
    }
}

/// A model manifold together with the forces acting on its sphere bundle.
#[derive(Debug, Clone, Copy)]
pub struct FlowSystem {
    pub model: ManifoldModel,
    pub fields: FieldConfig,
}

impl FlowSystem {
    pub fn new(model: ManifoldModel, fields: FieldConfig) -> Result<Self> {
        fields.validate(&model)?;
        Ok(FlowSystem { model, fields })
    }

    pub fn geodesic(model: ManifoldModel) -> Self {
        FlowSystem {
            model,
            fields: FieldConfig::geodesic(),
        }
    }

    fn expects_angle(&self) -> bool {
        self.model.dim() == 2
    }

    fn check_state(&self, p: &PhasePoint) -> Result<()> {
        let ok = match p {
            PhasePoint::Angle { .. } => self.expects_angle(),
            PhasePoint::Vector { .. } => !self.expects_angle(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "state",
                why: format!(
                    "state kind does not match a {}-dimensional model",
                    self.model.dim()
                ),
            })
        }
    }

    /// Fiber-rotation coefficient of the surface flow: the full angular
    /// forcing `lambda(x, phi)` collecting the external field's tangential
    /// projection, the Lorentz strength, and any fiber-dependent thermostat.
    pub fn lambda_total(&self, x: &V3, phi: f64) -> f64 {
        let m = &self.model;
        let (sin, cos) = phi.sin_cos();
        let emf = (-m.log_conformal(x)).exp();
        let mut lambda = 0.0;
        if let Some(e) = &self.fields.external {
            let th = e.one_form(m, x);
            lambda += self.fields.scale * emf * (-th[0] * sin + th[1] * cos);
        }
        if let Some(LorentzForce::SurfaceUniform { strength }) = &self.fields.lorentz {
            lambda += strength;
        }
        if let Some(g) = &self.fields.generalized {
            lambda += g.lambda(m, x, phi);
        }
        lambda
    }

    /// Chart time-derivative of a packed state.
    fn deriv(&self, s: &State) -> State {
        let m = &self.model;
        match self.expects_angle() {
            true => {
                let x = [s[0], s[1], 0.0];
                let phi = s[2];
                let (sin, cos) = phi.sin_cos();
                let emf = (-m.log_conformal(&x)).exp();
                let df = m.log_conformal_grad(&x);
                let dphi = emf * (df[1] * cos - df[0] * sin) + self.lambda_total(&x, phi);
                [emf * cos, emf * sin, dphi, 0.0, 0.0, 0.0]
            }
            false => {
                let x = [s[0], s[1], s[2]];
                let v = [s[3], s[4], s[5]];
                let p = ChartPoint::new(*m, x).expect("torus wrap cannot fail");
                let gamma = christoffel(m, &p);
                let a = self.acceleration(&x, &v);
                let dv = v3(|i| {
                    a[i] - sum2(3, |j, k| gamma[i][j][k] * v[j] * v[k])
                });
                [v[0], v[1], v[2], dv[0], dv[1], dv[2]]
            }
        }
    }

    /// Covariant forcing for 3-dimensional states: the isokinetic projection
    /// of the scaled external field plus the Lorentz force.
    fn acceleration(&self, x: &V3, v: &V3) -> V3 {
        let m = &self.model;
        let mut a = [0.0; 3];
        if let Some(ef) = &self.fields.external {
            let e = ef.vector(m, x);
            let thv = dot(3, &ef.one_form(m, x), v);
            for i in 0..3 {
                a[i] += self.fields.scale * (e[i] - thv * v[i]);
            }
        }
        if let Some(l) = &self.fields.lorentz {
            let f = l.force(m, x, v);
            for i in 0..3 {
                a[i] += f[i];
            }
        }
        a
    }

    /// Divergence of the flow generator with respect to the canonical sphere
    /// bundle volume. For surfaces this is the fiber derivative of the total
    /// angular forcing; in higher dimension it is `-(n-1) s theta(v)`.
    pub fn volume_divergence(&self, p: &PhasePoint) -> f64 {
        let m = &self.model;
        match *p {
            PhasePoint::Angle { x, phi } => {
                let mut div = 0.0;
                if let Some(e) = &self.fields.external {
                    let v = m.unit_vector(&x, phi);
                    div -= self.fields.scale * e.theta(m, &x, &v);
                }
                if let Some(g) = &self.fields.generalized {
                    div += g.dlambda_dphi(m, &x, phi);
                }
                div
            }
            PhasePoint::Vector { x, v } => {
                let n = m.dim() as f64;
                self.fields
                    .external
                    .map_or(0.0, |e| -(n - 1.0) * self.fields.scale * e.theta(m, &x, &v))
            }
        }
    }

    /// `theta(v)` of the unscaled external field at the state.
    pub fn theta_observable(&self, p: &PhasePoint) -> f64 {
        let x = p.base();
        let v = p.velocity(&self.model);
        self.fields.theta(&self.model, &x, &v)
    }

    /// Raw fourth-order update, also returning the four stage states so
    /// observables can be integrated alongside at the same order.
    pub(crate) fn rk4_raw(&self, s0: &State, h: f64) -> (State, [State; 4]) {
        let k1 = self.deriv(s0);
        let s1 = advanced(s0, &k1, 0.5 * h);
        let k2 = self.deriv(&s1);
        let s2 = advanced(s0, &k2, 0.5 * h);
        let k3 = self.deriv(&s2);
        let s3 = advanced(s0, &k3, h);
        let k4 = self.deriv(&s3);
        let mut out = *s0;
        for i in 0..6 {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        (out, [*s0, s1, s2, s3])
    }

    /// One fourth-order step of size `h`, then chart normalization: torus
    /// coordinates wrap, octagon exits are folded back by the side pairings,
    /// 3-dimensional velocities renormalize when `renorm` is set.
    pub fn step(
        &self,
        p: &PhasePoint,
        h: f64,
        cfg: &IntegratorConfig,
        renorm: bool,
    ) -> Result<PhasePoint> {
        let (out, _) = self.rk4_raw(&p.pack(), h);
        let mut next = p.unpack(&out);
        self.normalize(&mut next, cfg, renorm)?;
        Ok(next)
    }

    fn normalize(&self, p: &mut PhasePoint, cfg: &IntegratorConfig, renorm: bool) -> Result<()> {
        self.normalize_tracked(p, cfg, renorm).map(|_| ())
    }

    /// Chart normalization that also reports every octagon side pairing that
    /// was applied, as `(side, point before the hop)`, so callers carrying
    /// tangent data can transport it through the same isometries.
    pub(crate) fn normalize_tracked(
        &self,
        p: &mut PhasePoint,
        cfg: &IntegratorConfig,
        renorm: bool,
    ) -> Result<Vec<(usize, crate::geometry::mobius::C)>> {
        let m = self.model;
        let mut path = Vec::new();
        match p {
            PhasePoint::Angle { x, phi } => {
                if m.is_torus() {
                    x[0] = x[0].rem_euclid(1.0);
                    x[1] = x[1].rem_euclid(1.0);
                } else {
                    let z = c(x[0], x[1]);
                    if !octagon::contains(z) {
                        let (red, hops) = octagon::reduce_tracked(z, *phi, cfg.max_transitions)
                            .ok_or(Error::Integrator {
                                t: 0.0,
                                what: "side pairing cap exceeded in one step".into(),
                            })?;
                        x[0] = red.z.re;
                        x[1] = red.z.im;
                        *phi = red.phi;
                        path = hops;
                    }
                }
                *phi = phi.rem_euclid(TAU);
            }
            PhasePoint::Vector { x, v } => {
                for i in 0..3 {
                    x[i] = x[i].rem_euclid(1.0);
                }
                if renorm {
                    let speed = m.inner(x, v, v).sqrt();
                    *v = scale(v, 1.0 / speed);
                }
            }
        }
        Ok(path)
    }

    /// Integrate for `time` with fixed steps (plus one remainder step).
    pub fn flow(&self, p0: &PhasePoint, time: f64, cfg: &IntegratorConfig) -> Result<PhasePoint> {
        self.flow_with(p0, time, cfg, |_, _| {}).map(|(p, _)| p)
    }

    /// Integrate while accumulating `int obs dt` along the trajectory at the
    /// integrator's own fourth order: the accumulator is treated as an extra
    /// state component evaluated at the four stage states of each step.
    pub fn flow_with_integral(
        &self,
        p0: &PhasePoint,
        time: f64,
        cfg: &IntegratorConfig,
        obs: impl Fn(&PhasePoint) -> f64,
    ) -> Result<(PhasePoint, f64)> {
        self.flow_with_integrals(p0, time, cfg, |p| [obs(p)])
            .map(|(p, vals)| (p, vals[0]))
    }

    /// Same augmented quadrature for several observables in one pass.
    pub fn flow_with_integrals<const K: usize>(
        &self,
        p0: &PhasePoint,
        time: f64,
        cfg: &IntegratorConfig,
        obs: impl Fn(&PhasePoint) -> [f64; K],
    ) -> Result<(PhasePoint, [f64; K])> {
        self.check_state(p0)?;
        cfg.validate()?;
        let steps = (time / cfg.step).floor() as usize;
        let remainder = time - steps as f64 * cfg.step;
        let mut p = *p0;
        let mut integral = [0.0; K];
        let mut one = |p: &mut PhasePoint, h: f64, renorm: bool| -> Result<()> {
            let (out, stages) = self.rk4_raw(&p.pack(), h);
            let vals = stages.map(|s| obs(&p.unpack(&s)));
            for i in 0..K {
                integral[i] +=
                    h / 6.0 * (vals[0][i] + 2.0 * vals[1][i] + 2.0 * vals[2][i] + vals[3][i]);
            }
            *p = p.unpack(&out);
            self.normalize(p, cfg, renorm)?;
            Ok(())
        };
        for k in 0..steps {
            let renorm = cfg.renorm_every > 0 && (k + 1) % cfg.renorm_every == 0;
            one(&mut p, cfg.step, renorm)?;
        }
        if remainder > 1e-12 * time.max(1.0) {
            one(&mut p, remainder, true)?;
        }
        Ok((p, integral))
    }

    fn flow_with(
        &self,
        p0: &PhasePoint,
        time: f64,
        cfg: &IntegratorConfig,
        mut after_step: impl FnMut(&PhasePoint, f64),
    ) -> Result<(PhasePoint, usize)> {
        self.check_state(p0)?;
        cfg.validate()?;
        if time < 0.0 {
            return Err(Error::InvalidParameter {
                name: "time",
                why: "integration time must be nonnegative".into(),
            });
        }
        let steps = (time / cfg.step).floor() as usize;
        let remainder = time - steps as f64 * cfg.step;
        let mut p = *p0;
        for k in 0..steps {
            let renorm = cfg.renorm_every > 0 && (k + 1) % cfg.renorm_every == 0;
            p = self.step(&p, cfg.step, cfg, renorm)?;
            after_step(&p, cfg.step);
        }
        if remainder > 1e-12 * time.max(1.0) {
            p = self.step(&p, remainder, cfg, true)?;
            after_step(&p, remainder);
        }
        Ok((p, steps))
    }

    /// Trajectory samples every `sample_every` steps (t = 0 included).
    pub fn trace(
        &self,
        p0: &PhasePoint,
        time: f64,
        cfg: &IntegratorConfig,
        sample_every: usize,
    ) -> Result<Vec<(f64, PhasePoint)>> {
        let every = sample_every.max(1);
        let mut out = vec![(0.0, *p0)];
        let mut k = 0usize;
        let mut t = 0.0;
        self.flow_with(p0, time, cfg, |p, h| {
            k += 1;
            t += h;
            if k % every == 0 {
                out.push((t, *p));
            }
        })?;
        Ok(out)
    }

    /// Time series of an observable sampled every `sample_every` steps,
    /// starting with the value at `p0`.
    pub fn observable_series(
        &self,
        p0: &PhasePoint,
        time: f64,
        cfg: &IntegratorConfig,
        sample_every: usize,
        obs: impl Fn(&PhasePoint) -> f64,
    ) -> Result<Vec<f64>> {
        let every = sample_every.max(1);
        let mut out = vec![obs(p0)];
        let mut k = 0usize;
        self.flow_with(p0, time, cfg, |p, _| {
            k += 1;
            if k % every == 0 {
                out.push(obs(p));
            }
        })?;
        Ok(out)
    }

    /// Jacobian of the chart vector field at `p` (active block is `2n - 1`
    /// by `2n - 1`; surface order `(x1, x2, phi)`, otherwise `(x, v)`).
    pub fn linearization(&self, p: &PhasePoint) -> [[f64; 6]; 6] {
        let m = &self.model;
        let mut jac = [[0.0; 6]; 6];
        match *p {
            PhasePoint::Angle { x, phi } => {
                let (sin, cos) = phi.sin_cos();
                let emf = (-m.log_conformal(&x)).exp();
                let df = m.log_conformal_grad(&x);
                let hess = m.log_conformal_hess(&x);
                // Rows: d/dt x1, x2, phi; columns: x1, x2, phi.
                for j in 0..2 {
                    jac[0][j] = -df[j] * emf * cos;
                    jac[1][j] = -df[j] * emf * sin;
                    jac[2][j] = emf
                        * (-df[j] * (df[1] * cos - df[0] * sin)
                            + (hess[1][j] * cos - hess[0][j] * sin));
                }
                jac[0][2] = -emf * sin;
                jac[1][2] = emf * cos;
                jac[2][2] = emf * (-df[1] * sin - df[0] * cos);
                let (dl_dx, dl_dphi) = self.lambda_partials(&x, phi);
                for j in 0..2 {
                    jac[2][j] += dl_dx[j];
                }
                jac[2][2] += dl_dphi;
            }
            PhasePoint::Vector { x, v } => {
                let p = ChartPoint::new(*m, x).expect("torus wrap cannot fail");
                let gamma = christoffel(m, &p);
                let dgamma = christoffel_partials(m, &p);
                // d xdot / d v = identity.
                for i in 0..3 {
                    jac[i][3 + i] = 1.0;
                }
                let (da_dx, da_dv) = self.acceleration_partials(&x, &v);
                for i in 0..3 {
                    for l in 0..3 {
                        jac[3 + i][l] =
                            -sum2(3, |j, k| dgamma[l][i][j][k] * v[j] * v[k]) + da_dx[i][l];
                        jac[3 + i][3 + l] =
                            -2.0 * sum1(3, |k| gamma[i][l][k] * v[k]) + da_dv[i][l];
                    }
                }
            }
        }
        jac
    }

    /// Chart partials of the surface angular forcing.
    fn lambda_partials(&self, x: &V3, phi: f64) -> (V3, f64) {
        let m = &self.model;
        let (sin, cos) = phi.sin_cos();
        let emf = (-m.log_conformal(x)).exp();
        let df = m.log_conformal_grad(x);
        let mut dl_dx = [0.0; 3];
        let mut dl_dphi = 0.0;
        if let Some(e) = &self.fields.external {
            let th = e.one_form(m, x);
            let jac = e.one_form_jacobian(m, x);
            let tang = -th[0] * sin + th[1] * cos;
            for j in 0..2 {
                dl_dx[j] += self.fields.scale
                    * emf
                    * ((-jac[0][j] * sin + jac[1][j] * cos) - df[j] * tang);
            }
            dl_dphi += self.fields.scale * emf * (-th[0] * cos - th[1] * sin);
        }
        if let Some(g) = &self.fields.generalized {
            let gd = g.dlambda_dx(m, x, phi);
            for j in 0..2 {
                dl_dx[j] += gd[j];
            }
            dl_dphi += g.dlambda_dphi(m, x, phi);
        }
        (dl_dx, dl_dphi)
    }

    /// Chart partials of the 3-dimensional forcing `a(x, v)`.
    fn acceleration_partials(&self, x: &V3, v: &V3) -> (M3, M3) {
        let m = &self.model;
        let mut da_dx = [[0.0; 3]; 3];
        let mut da_dv = [[0.0; 3]; 3];
        if let Some(ef) = &self.fields.external {
            let s = self.fields.scale;
            let th = ef.one_form(m, x);
            let jac = ef.one_form_jacobian(m, x);
            let de = ef.chart_gradient(m, x);
            let thv = dot(3, &th, v);
            for i in 0..3 {
                for l in 0..3 {
                    let dthv_dxl = sum1(3, |j| jac[j][l] * v[j]);
                    da_dx[i][l] += s * (de[i][l] - dthv_dxl * v[i]);
                    da_dv[i][l] += s * (-th[l] * v[i] - if i == l { thv } else { 0.0 });
                }
            }
        }
        if let Some(l) = &self.fields.lorentz {
            let beta = l.two_form(m, x);
            let df = m.log_conformal_grad(x);
            let e2 = (-2.0 * m.log_conformal(x)).exp();
            let f = l.force(m, x, v);
            for i in 0..3 {
                for lcol in 0..3 {
                    da_dx[i][lcol] += -2.0 * df[lcol] * f[i];
                    da_dv[i][lcol] += e2 * beta[i][lcol];
                }
            }
        }
        (da_dx, da_dv)
    }
}

fn advanced(s: &State, k: &State, h: f64) -> State {
    std::array::from_fn(|i| s[i] + h * k[i])
}
