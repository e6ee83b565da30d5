//! External force fields, Lorentz terms, and fiber-dependent thermostats.
//!
//! An [`ExternalField`] is a vector field `E` on the base manifold, stored
//! through its one-form `theta = <E, .>` in chart components so that raising
//! and lowering stay explicit. Every variant provides analytic chart
//! partials; finite differences appear only in the verification helpers.
//!
//! On the octagon quotient a field must be equivariant under the side
//! pairings. Shipped octagon fields achieve this in one of two ways:
//! compact support in the interior of the fundamental domain (bump potential
//! and rotor), or exact invariance of the defining function under the
//! relevant pairing (the band form, built from the signed hyperbolic
//! distance to a closed geodesic, which every pairing along that geodesic
//! preserves).

use crate::error::{Error, Result};
use crate::geometry::mobius::{c, C};
use crate::geometry::{christoffel, octagon, ChartPoint, ManifoldModel};
use crate::tensor::*;
use serde::{Deserialize, Serialize};

const TAU: f64 = std::f64::consts::TAU;

// ---------------------------------------------------------------------------
// Smooth bump and step profiles (C-infinity, compactly supported).
// ---------------------------------------------------------------------------

/// `exp(-1/t)` continued by zero, with guards against underflow.
fn sigma(t: f64) -> f64 {
    if t <= 2e-3 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

fn sigma_prime(t: f64) -> f64 {
    if t <= 2e-3 {
        0.0
    } else {
        (-1.0 / t).exp() / (t * t)
    }
}

/// Smooth step: 0 for `u <= -1`, 1 for `u >= 1`.
pub fn smooth_step(u: f64) -> f64 {
    let a = sigma(u + 1.0);
    let b = sigma(1.0 - u);
    if a == 0.0 {
        0.0
    } else if b == 0.0 {
        1.0
    } else {
        a / (a + b)
    }
}

pub fn smooth_step_d1(u: f64) -> f64 {
    let a = sigma(u + 1.0);
    let b = sigma(1.0 - u);
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let ap = sigma_prime(u + 1.0);
    let bp = -sigma_prime(1.0 - u);
    (ap * b - a * bp) / ((a + b) * (a + b))
}

pub fn smooth_step_d2(u: f64) -> f64 {
    let a = sigma(u + 1.0);
    let b = sigma(1.0 - u);
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let q1 = 1.0 / ((u + 1.0) * (u + 1.0));
    let q2 = 1.0 / ((1.0 - u) * (1.0 - u));
    let p = q1 + q2;
    let q = q1 - q2;
    let pp = -2.0 * q1 / (u + 1.0) + 2.0 * q2 / (1.0 - u);
    let s = a + b;
    let ab = a * b;
    // S' = ab P / s^2; differentiate with (ab)' = ab Q and s' = a q1 - b q2.
    let sp = a * q1 - b * q2;
    ab * (q * p + pp) / (s * s) - 2.0 * ab * p * sp / (s * s * s)
}

/// Smooth bump of the squared radial ratio: 1 at 0, support `rho < 1`.
fn bump(rho: f64) -> f64 {
    if rho >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - rho)).exp()
    }
}

fn bump_d1(rho: f64) -> f64 {
    if rho >= 1.0 {
        0.0
    } else {
        let q = 1.0 / (1.0 - rho);
        -bump(rho) * q * q
    }
}

fn bump_d2(rho: f64) -> f64 {
    if rho >= 1.0 {
        0.0
    } else {
        let q = 1.0 / (1.0 - rho);
        bump(rho) * (q * q * q * q - 2.0 * q * q * q)
    }
}

// ---------------------------------------------------------------------------
// External fields.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExternalField {
    /// Gradient field `E = -grad U` of `U = amplitude * sin(2 pi <freq, x> + phase)`.
    TorusPotential {
        amplitude: f64,
        freq: [i32; 3],
        phase: f64,
    },
    /// Closed one-form `theta = sum_i periods_i dx_i + pert * d(sin 2pi x1 cos 2pi x2)`,
    /// non-exact whenever some period is nonzero.
    TorusClosedForm { periods: [f64; 3], pert: f64 },
    /// Divergence-bounded non-gradient field on 3-tori:
    /// `theta = amplitude (sin 2pi x2 dx1 + sin 2pi x3 dx2 + sin 2pi x1 dx3)`.
    TorusSwirl { amplitude: f64 },
    /// Gradient field of a compactly supported bump `U = amplitude * b(|z|^2/support^2)`
    /// on the octagon (support must stay inside the fundamental domain).
    OctagonPotential { amplitude: f64, support: f64 },
    /// Non-gradient rotational field on the octagon:
    /// `theta = amplitude * b(|z|^2/support^2) (-x2 dx1 + x1 dx2)`.
    OctagonRotor { amplitude: f64, support: f64 },
    /// Closed non-exact one-form on the octagon supported in a hyperbolic
    /// band of half-width `width` around the closed geodesic through the
    /// origin in direction `axis * pi/4`. Equal to `amplitude * d(step)` of a
    /// smooth step of the signed distance, so its period on any cycle that
    /// crosses the band once is exactly `amplitude`.
    OctagonBandForm {
        amplitude: f64,
        width: f64,
        axis: usize,
    },
}

impl ExternalField {
    /// True when the field's formulas are meaningful on `m`.
    pub fn supports(&self, m: &ManifoldModel) -> bool {
        match self {
            ExternalField::TorusPotential { .. }
            | ExternalField::TorusClosedForm { .. } => m.is_torus(),
            ExternalField::TorusSwirl { .. } => m.dim() == 3 && m.is_torus(),
            ExternalField::OctagonPotential { .. }
            | ExternalField::OctagonRotor { .. }
            | ExternalField::OctagonBandForm { .. } => {
                matches!(m, ManifoldModel::Octagon)
            }
        }
    }

    /// Scalar potential with `E = -grad U`, when one exists.
    pub fn potential(&self, _m: &ManifoldModel, x: &V3) -> Option<f64> {
        match *self {
            ExternalField::TorusPotential {
                amplitude,
                freq,
                phase,
            } => {
                let w = wave(&freq);
                Some(amplitude * (dot(3, &w, x) + phase).sin())
            }
            ExternalField::OctagonPotential { amplitude, support } => {
                let rho = (x[0] * x[0] + x[1] * x[1]) / (support * support);
                Some(amplitude * bump(rho))
            }
            _ => None,
        }
    }

    /// Chart components of the one-form `theta_i = g_ij E^j`.
    pub fn one_form(&self, _m: &ManifoldModel, x: &V3) -> V3 {
        match *self {
            ExternalField::TorusPotential {
                amplitude,
                freq,
                phase,
            } => {
                let w = wave(&freq);
                let cos = (dot(3, &w, x) + phase).cos();
                v3(|i| -amplitude * w[i] * cos)
            }
            ExternalField::TorusClosedForm { periods, pert } => {
                let (s1, c1) = (TAU * x[0]).sin_cos();
                let (s2, c2) = (TAU * x[1]).sin_cos();
                [
                    periods[0] + pert * TAU * c1 * c2,
                    periods[1] - pert * TAU * s1 * s2,
                    periods[2],
                ]
            }
            ExternalField::TorusSwirl { amplitude } => [
                amplitude * (TAU * x[1]).sin(),
                amplitude * (TAU * x[2]).sin(),
                amplitude * (TAU * x[0]).sin(),
            ],
            ExternalField::OctagonPotential { amplitude, support } => {
                let s2 = support * support;
                let rho = (x[0] * x[0] + x[1] * x[1]) / s2;
                let d1 = bump_d1(rho);
                v3(|i| {
                    if i < 2 {
                        -amplitude * d1 * 2.0 * x[i] / s2
                    } else {
                        0.0
                    }
                })
            }
            ExternalField::OctagonRotor { amplitude, support } => {
                let s2 = support * support;
                let rho = (x[0] * x[0] + x[1] * x[1]) / s2;
                let b = bump(rho);
                [-amplitude * b * x[1], amplitude * b * x[0], 0.0]
            }
            ExternalField::OctagonBandForm {
                amplitude,
                width,
                axis,
            } => {
                let band = BandGeometry::new(x, axis);
                let sp = smooth_step_d1(band.s / width) / width;
                v3(|i| amplitude * sp * band.ds[i])
            }
        }
    }

    /// Chart Jacobian `jac[i][k] = d theta_i / d x^k`.
    pub fn one_form_jacobian(&self, _m: &ManifoldModel, x: &V3) -> M3 {
        match *self {
            ExternalField::TorusPotential {
                amplitude,
                freq,
                phase,
            } => {
                let w = wave(&freq);
                let sin = (dot(3, &w, x) + phase).sin();
                m3(|i, k| amplitude * w[i] * w[k] * sin)
            }
            ExternalField::TorusClosedForm { pert, .. } => {
                let (s1, c1) = (TAU * x[0]).sin_cos();
                let (s2, c2) = (TAU * x[1]).sin_cos();
                let t2 = TAU * TAU;
                m3(|i, k| match (i, k) {
                    (0, 0) => -pert * t2 * s1 * c2,
                    (0, 1) | (1, 0) => -pert * t2 * c1 * s2,
                    (1, 1) => -pert * t2 * s1 * c2,
                    _ => 0.0,
                })
            }
            ExternalField::TorusSwirl { amplitude } => m3(|i, k| match (i, k) {
                (0, 1) => amplitude * TAU * (TAU * x[1]).cos(),
                (1, 2) => amplitude * TAU * (TAU * x[2]).cos(),
                (2, 0) => amplitude * TAU * (TAU * x[0]).cos(),
                _ => 0.0,
            }),
            ExternalField::OctagonPotential { amplitude, support } => {
                let s2 = support * support;
                let rho = (x[0] * x[0] + x[1] * x[1]) / s2;
                let d1 = bump_d1(rho);
                let d2 = bump_d2(rho);
                m3(|i, k| {
                    if i < 2 && k < 2 {
                        let kron = if i == k { 2.0 * d1 / s2 } else { 0.0 };
                        -amplitude * (d2 * (2.0 * x[i] / s2) * (2.0 * x[k] / s2) + kron)
                    } else {
                        0.0
                    }
                })
            }
            ExternalField::OctagonRotor { amplitude, support } => {
                let s2 = support * support;
                let rho = (x[0] * x[0] + x[1] * x[1]) / s2;
                let b = bump(rho);
                let d1 = bump_d1(rho);
                let sign = [-x[1], x[0], 0.0];
                m3(|i, k| {
                    if i < 2 && k < 2 {
                        let db = d1 * 2.0 * x[k] / s2;
                        let kron = match (i, k) {
                            (0, 1) => -b,
                            (1, 0) => b,
                            _ => 0.0,
                        };
                        amplitude * (db * sign[i] + kron)
                    } else {
                        0.0
                    }
                })
            }
            ExternalField::OctagonBandForm {
                amplitude,
                width,
                axis,
            } => {
                let band = BandGeometry::new(x, axis);
                let sp = smooth_step_d1(band.s / width);
                let spp = smooth_step_d2(band.s / width);
                m3(|i, k| {
                    if i < 2 && k < 2 {
                        amplitude
                            * (spp * band.ds[i] * band.ds[k] / (width * width)
                                + sp * band.dds[i][k] / width)
                    } else {
                        0.0
                    }
                })
            }
        }
    }

    /// Contravariant components `E^i = g^{ij} theta_j`.
    pub fn vector(&self, m: &ManifoldModel, x: &V3) -> V3 {
        m.raise(x, &self.one_form(m, x))
    }

    /// `theta_x(v) = <E(x), v>` for a chart tangent vector `v`.
    pub fn theta(&self, m: &ManifoldModel, x: &V3, v: &V3) -> f64 {
        dot(m.dim(), &self.one_form(m, x), v)
    }

    /// Chart partials `grad[i][k] = d E^i / d x^k` (no connection terms).
    pub fn chart_gradient(&self, m: &ManifoldModel, x: &V3) -> M3 {
        let theta = self.one_form(m, x);
        let jac = self.one_form_jacobian(m, x);
        let df = m.log_conformal_grad(x);
        let e2 = (-2.0 * m.log_conformal(x)).exp();
        // E^i = e^{-2f} theta_i.
        m3(|i, k| e2 * (jac[i][k] - 2.0 * df[k] * theta[i]))
    }

    /// Covariant derivative `grad[i][k] = nabla_k E^i`.
    pub fn covariant_gradient(&self, m: &ManifoldModel, x: &V3) -> M3 {
        let n = m.dim();
        let de = self.chart_gradient(m, x);
        let p = ChartPoint::new(*m, *x).expect("gradient queried outside the chart");
        let gamma = christoffel(m, &p);
        let e = self.vector(m, x);
        m3(|i, k| de[i][k] + sum1(n, |q| gamma[i][k][q] * e[q]))
    }

    /// Riemannian divergence `nabla_i E^i`.
    pub fn divergence(&self, m: &ManifoldModel, x: &V3) -> f64 {
        let g = self.covariant_gradient(m, x);
        sum1(m.dim(), |i| g[i][i])
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExternalField::TorusPotential { .. } => "torus-potential",
            ExternalField::TorusClosedForm { .. } => "torus-closed-form",
            ExternalField::TorusSwirl { .. } => "torus-swirl",
            ExternalField::OctagonPotential { .. } => "octagon-potential",
            ExternalField::OctagonRotor { .. } => "octagon-rotor",
            ExternalField::OctagonBandForm { .. } => "octagon-band-form",
        }
    }
}

fn wave(freq: &[i32; 3]) -> V3 {
    v3(|i| TAU * freq[i] as f64)
}

/// Geometry of the band form at a point: the signed hyperbolic distance `s`
/// to the axis geodesic, with its chart gradient and Hessian. The transverse
/// Euclidean coordinate is `t = -Im(z e^{-i axis pi/4})` and
/// `s = arcsinh(2 t / (1 - |z|^2))`.
struct BandGeometry {
    s: f64,
    ds: V3,
    dds: M3,
}

impl BandGeometry {
    fn new(x: &V3, axis: usize) -> Self {
        let phi = octagon::side_angle(axis);
        let (sin, cos) = phi.sin_cos();
        // t = sin * x1 - cos * x2, constant gradient; oriented so that for
        // the vertical axis (axis = 2) `s` increases with x1.
        let tg = [sin, -cos, 0.0];
        let t = tg[0] * x[0] + tg[1] * x[1];
        let d = 1.0 - x[0] * x[0] - x[1] * x[1];
        let q = 2.0 * t / d;
        let dq = v3(|i| {
            if i < 2 {
                2.0 * tg[i] / d + 4.0 * t * x[i] / (d * d)
            } else {
                0.0
            }
        });
        let ddq = m3(|i, k| {
            if i < 2 && k < 2 {
                let kron = if i == k { 4.0 * t / (d * d) } else { 0.0 };
                4.0 * tg[i] * x[k] / (d * d)
                    + 4.0 * tg[k] * x[i] / (d * d)
                    + kron
                    + 16.0 * t * x[i] * x[k] / (d * d * d)
            } else {
                0.0
            }
        });
        let w = (1.0 + q * q).sqrt();
        let s = q.asinh();
        let ds = v3(|i| dq[i] / w);
        let dds = m3(|i, k| ddq[i][k] / w - dq[i] * dq[k] * q / (w * w * w));
        BandGeometry { s, ds, dds }
    }
}

// ---------------------------------------------------------------------------
// Constructors mandated by the public interface.
// ---------------------------------------------------------------------------

/// Gradient-field constructor. `spec` selects the model-appropriate potential.
pub fn field_from_potential(m: &ManifoldModel, spec: PotentialSpec) -> Result<ExternalField> {
    let field = match (m, spec) {
        (
            ManifoldModel::Octagon,
            PotentialSpec {
                amplitude,
                support: Some(support),
                ..
            },
        ) => {
            // Support must stay strictly inside the fundamental domain so the
            // zero-extension is the smooth equivariant field on the quotient.
            if !(support > 0.0 && support <= 0.9 * octagon::midpoint_radius()) {
                return Err(Error::InvalidParameter {
                    name: "support",
                    why: format!(
                        "need 0 < support <= {:.3} to keep the bump inside the domain",
                        0.9 * octagon::midpoint_radius()
                    ),
                });
            }
            ExternalField::OctagonPotential { amplitude, support }
        }
        (ManifoldModel::Octagon, _) => {
            return Err(Error::InvalidParameter {
                name: "support",
                why: "octagon potentials need a support radius".into(),
            })
        }
        (
            _,
            PotentialSpec {
                amplitude,
                freq,
                phase,
                ..
            },
        ) => ExternalField::TorusPotential {
            amplitude,
            freq,
            phase,
        },
    };
    Ok(field)
}

#[derive(Debug, Clone, Copy)]
pub struct PotentialSpec {
    pub amplitude: f64,
    pub freq: [i32; 3],
    pub phase: f64,
    /// Octagon only: Euclidean support radius of the bump.
    pub support: Option<f64>,
}

impl PotentialSpec {
    pub fn torus(amplitude: f64, freq: [i32; 3]) -> Self {
        PotentialSpec {
            amplitude,
            freq,
            phase: 0.0,
            support: None,
        }
    }

    pub fn octagon(amplitude: f64, support: f64) -> Self {
        PotentialSpec {
            amplitude,
            freq: [0; 3],
            phase: 0.0,
            support: Some(support),
        }
    }
}

/// Closed, non-exact one-form on a torus model with the given periods.
pub fn closed_nonexact_form(
    m: &ManifoldModel,
    periods: [f64; 3],
    pert: f64,
) -> Result<ExternalField> {
    if !m.is_torus() {
        return Err(Error::UnsupportedModel {
            op: "closed_nonexact_form",
            model: m.name().to_string(),
        });
    }
    if sum1(m.dim(), |i| periods[i].abs()) == 0.0 {
        return Err(Error::InvalidParameter {
            name: "periods",
            why: "all periods vanish; the form would be exact".into(),
        });
    }
    Ok(ExternalField::TorusClosedForm { periods, pert })
}

/// Closed, non-exact one-form on the octagon: a band form around the closed
/// geodesic through the origin in direction `axis * pi/4` (`axis` in `0..4`).
pub fn octagon_band_form(amplitude: f64, width: f64, axis: usize) -> Result<ExternalField> {
    if axis >= 4 {
        return Err(Error::InvalidParameter {
            name: "axis",
            why: "band axes are the four diameters, indices 0..4".into(),
        });
    }
    // The band must exit only through the two sides its axis crosses. The
    // nearest point of any other side sits at transverse hyperbolic distance
    // arccosh((2 + sqrt 2)/2) = 1.1284 from the axis, so cap the half-width
    // just below that (the smooth step is exactly flat outside |s| < width).
    if !(width > 0.0 && width <= 1.1) {
        return Err(Error::InvalidParameter {
            name: "width",
            why: "need 0 < width <= 1.1 so the band stays clear of the other sides".into(),
        });
    }
    Ok(ExternalField::OctagonBandForm {
        amplitude,
        width,
        // The form is supported around the axis orthogonal direction; store
        // the axis of the geodesic itself.
        axis,
    })
}

// ---------------------------------------------------------------------------
// One-form view.
// ---------------------------------------------------------------------------

/// Covector view of a field: chart components of `theta` plus the raising map.
#[derive(Debug, Clone, Copy)]
pub struct OneForm {
    pub field: ExternalField,
}

impl OneForm {
    pub fn components(&self, m: &ManifoldModel, x: &V3) -> V3 {
        self.field.one_form(m, x)
    }

    pub fn raise(&self, m: &ManifoldModel, x: &V3) -> V3 {
        self.field.vector(m, x)
    }
}

// ---------------------------------------------------------------------------
// Lorentz forces (antisymmetric, from closed two-forms).
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LorentzForce {
    /// Surfaces: `F(v) = strength * i v` (rotation by +pi/2), the force of
    /// the two-form `strength * dA`.
    SurfaceUniform { strength: f64 },
    /// 3-tori: constant-coefficient closed two-form
    /// `beta = b1 dx2^dx3 + b2 dx3^dx1 + b3 dx1^dx2`, force `F = g^{-1} beta`.
    ConstantTwoForm { beta: [f64; 3] },
}

impl LorentzForce {
    pub fn supports(&self, m: &ManifoldModel) -> bool {
        match self {
            LorentzForce::SurfaceUniform { .. } => m.dim() == 2,
            LorentzForce::ConstantTwoForm { .. } => m.dim() == 3,
        }
    }

    /// Lowered two-form matrix `beta_ij` at `x` (chart components).
    pub fn two_form(&self, m: &ManifoldModel, x: &V3) -> M3 {
        match *self {
            LorentzForce::SurfaceUniform { strength } => {
                // beta = strength * dA = strength * e^{2f} dx1 ^ dx2.
                let e2f = (2.0 * m.log_conformal(x)).exp();
                m3(|i, j| match (i, j) {
                    (0, 1) => strength * e2f,
                    (1, 0) => -strength * e2f,
                    _ => 0.0,
                })
            }
            LorentzForce::ConstantTwoForm { beta } => m3(|i, j| match (i, j) {
                (1, 2) => beta[0],
                (2, 1) => -beta[0],
                (2, 0) => beta[1],
                (0, 2) => -beta[1],
                (0, 1) => beta[2],
                (1, 0) => -beta[2],
                _ => 0.0,
            }),
        }
    }

    /// Force on a chart velocity: `F(v)^i = g^{ik} beta_kj v^j`.
    pub fn force(&self, m: &ManifoldModel, x: &V3, v: &V3) -> V3 {
        let b = self.two_form(m, x);
        let n = m.dim();
        let lowered = v3(|k| sum1(n, |j| b[k][j] * v[j]));
        m.raise(x, &lowered)
    }
}

// ---------------------------------------------------------------------------
// Holomorphic sections and generalized (fiber-dependent) thermostats.
// ---------------------------------------------------------------------------

/// Section of the k-th power of the canonical bundle on a torus model:
/// `q = coeff * dz^k` with `dz = dx1 + i dx2`. Restricted to the unit circle
/// bundle it is the fiber-mode-k function `coeff * e^{-k f} e^{i k phi}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolomorphicSection {
    pub power: u32,
    pub coeff_re: f64,
    pub coeff_im: f64,
}

impl HolomorphicSection {
    pub fn new(power: u32, coeff: (f64, f64)) -> Self {
        HolomorphicSection {
            power,
            coeff_re: coeff.0,
            coeff_im: coeff.1,
        }
    }

    /// Value on the unit circle bundle at `(x, phi)`.
    pub fn on_sphere_bundle(&self, m: &ManifoldModel, x: &V3, phi: f64) -> C {
        let k = self.power as f64;
        let decay = (-k * m.log_conformal(x)).exp();
        (c(self.coeff_re, self.coeff_im) * C::exp_i(k * phi)).scale(decay)
    }
}

/// Fiber-dependent thermostat coefficient `lambda(x, phi)` for surface flows
/// `D gamma'/dt = lambda i gamma'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneralizedField {
    /// `lambda = Re q` for a holomorphic section `q` (pure fiber mode k).
    FromSection { section: HolomorphicSection },
    /// Constant coefficient (uniform magnetic-type term, kept for tests).
    Uniform { value: f64 },
}

impl GeneralizedField {
    pub fn lambda(&self, m: &ManifoldModel, x: &V3, phi: f64) -> f64 {
        match self {
            GeneralizedField::FromSection { section } => {
                section.on_sphere_bundle(m, x, phi).re
            }
            GeneralizedField::Uniform { value } => *value,
        }
    }

    pub fn dlambda_dphi(&self, m: &ManifoldModel, x: &V3, phi: f64) -> f64 {
        match self {
            GeneralizedField::FromSection { section } => {
                let k = section.power as f64;
                (section.on_sphere_bundle(m, x, phi) * c(0.0, k)).re
            }
            GeneralizedField::Uniform { .. } => 0.0,
        }
    }

    pub fn dlambda_dx(&self, m: &ManifoldModel, x: &V3, phi: f64) -> V3 {
        match self {
            GeneralizedField::FromSection { section } => {
                let k = section.power as f64;
                let df = m.log_conformal_grad(x);
                let lam = self.lambda(m, x, phi);
                v3(|i| -k * df[i] * lam)
            }
            GeneralizedField::Uniform { .. } => [0.0; 3],
        }
    }

    /// Dominant fiber mode of `lambda`.
    pub fn fiber_mode(&self) -> u32 {
        match self {
            GeneralizedField::FromSection { section } => section.power,
            GeneralizedField::Uniform { .. } => 0,
        }
    }
}

/// Thermostat coefficient from a holomorphic section (torus models only; on
/// the octagon `dz^k` is not equivariant under the side pairings).
pub fn lambda_from_section(
    m: &ManifoldModel,
    q: &HolomorphicSection,
) -> Result<GeneralizedField> {
    if !m.is_torus() || m.dim() != 2 {
        return Err(Error::UnsupportedModel {
            op: "lambda_from_section",
            model: m.name().to_string(),
        });
    }
    if q.power == 0 {
        return Err(Error::InvalidParameter {
            name: "power",
            why: "need a positive power of the canonical bundle".into(),
        });
    }
    Ok(GeneralizedField::FromSection { section: *q })
}

// ---------------------------------------------------------------------------
// Combined field configuration consumed by the dynamics.
// ---------------------------------------------------------------------------

/// Everything that perturbs the geodesic flow: an external field `E` with a
/// strength multiplier, an optional Lorentz force, and an optional
/// fiber-dependent thermostat (surfaces only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub external: Option<ExternalField>,
    /// Multiplier `s` applied to the external field inside the dynamics.
    /// Observables (`theta`) always refer to the unscaled field.
    pub scale: f64,
    pub lorentz: Option<LorentzForce>,
    pub generalized: Option<GeneralizedField>,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            external: None,
            scale: 1.0,
            lorentz: None,
            generalized: None,
        }
    }
}

impl FieldConfig {
    pub fn geodesic() -> Self {
        FieldConfig::default()
    }

    pub fn gaussian(field: ExternalField, scale: f64) -> Self {
        FieldConfig {
            external: Some(field),
            scale,
            ..FieldConfig::default()
        }
    }

    pub fn magnetic(strength: f64) -> Self {
        FieldConfig {
            lorentz: Some(LorentzForce::SurfaceUniform { strength }),
            ..FieldConfig::default()
        }
    }

    pub fn generalized(g: GeneralizedField) -> Self {
        FieldConfig {
            generalized: Some(g),
            ..FieldConfig::default()
        }
    }

    pub fn validate(&self, m: &ManifoldModel) -> Result<()> {
        if let Some(e) = &self.external {
            if !e.supports(m) {
                return Err(Error::UnsupportedModel {
                    op: "external field",
                    model: m.name().to_string(),
                });
            }
        }
        if let Some(l) = &self.lorentz {
            if !l.supports(m) {
                return Err(Error::UnsupportedModel {
                    op: "lorentz force",
                    model: m.name().to_string(),
                });
            }
        }
        if self.generalized.is_some() && m.dim() != 2 {
            return Err(Error::UnsupportedModel {
                op: "generalized thermostat",
                model: m.name().to_string(),
            });
        }
        Ok(())
    }

    /// `theta` observable of the unscaled external field (0 without one).
    pub fn theta(&self, m: &ManifoldModel, x: &V3, v: &V3) -> f64 {
        self.external.map_or(0.0, |e| e.theta(m, x, v))
    }
}

// ---------------------------------------------------------------------------
// Verification helpers (finite differences allowed here).
// ---------------------------------------------------------------------------

/// Exterior derivative components `(d theta)_ik = d_i theta_k - d_k theta_i`
/// by central differences of step `h`.
pub fn exterior_derivative_fd(m: &ManifoldModel, field: &ExternalField, x: &V3, h: f64) -> M3 {
    let n = m.dim();
    let mut jac = [[0.0; 3]; 3]; // [i][k] = d_i theta_k
    for i in 0..n {
        let mut xp = *x;
        let mut xm = *x;
        xp[i] += h;
        xm[i] -= h;
        let tp = field.one_form(m, &xp);
        let tm = field.one_form(m, &xm);
        for k in 0..n {
            jac[i][k] = (tp[k] - tm[k]) / (2.0 * h);
        }
    }
    m3(|i, k| jac[i][k] - jac[k][i])
}

/// Line integral of `theta` along the straight torus cycle `x0 + t e_dir`,
/// `t` in `[0,1]`, by the trapezoid rule (spectrally accurate here).
pub fn torus_cycle_period(
    m: &ManifoldModel,
    field: &ExternalField,
    x0: &V3,
    dir: usize,
    nodes: usize,
) -> f64 {
    let mut acc = 0.0;
    for j in 0..nodes {
        let t = j as f64 / nodes as f64;
        let mut x = *x0;
        x[dir] += t;
        let x = v3(|i| x[i].rem_euclid(1.0));
        acc += field.one_form(m, &x)[dir];
    }
    acc / nodes as f64
}

/// Maximum equivariance mismatch of an octagon field over samples on the
/// side arcs. A pairing identifies side `k` with side `k+4` pointwise, so at
/// boundary points both chart formulas represent the same quotient covector
/// and must agree after transport; exact quotient fields give round-off here.
/// (Interior points are not compared: there `z` itself, not its translate,
/// is the fundamental-domain representative.)
pub fn octagon_equivariance_defect(field: &ExternalField) -> f64 {
    let m = ManifoldModel::Octagon;
    let center_norm = (octagon::midpoint_radius() + 1.0 / octagon::midpoint_radius()) / 2.0;
    let mut worst: f64 = 0.0;
    for side in 0..octagon::SIDES {
        let t = octagon::pairing(side);
        let center = C::exp_i(octagon::side_angle(side)).scale(center_norm);
        for j in -3..=3 {
            // Side k is the arc of its circle facing the origin; it spans
            // angles within pi/4 of "toward the origin" around the center.
            let alpha = octagon::side_angle(side) + std::f64::consts::PI + 0.24 * j as f64;
            let z = center + C::exp_i(alpha).scale(octagon::side_circle_radius());
            let w = t.apply(z);
            let dt = t.derivative(z);
            // One-forms pull back: theta'(w) . (dT v) = theta(z) . v, i.e. in
            // the conjugate complex representation theta'(w) = theta(z) / T'.
            let th_z = field.one_form(&m, &[z.re, z.im, 0.0]);
            let th_w = field.one_form(&m, &[w.re, w.im, 0.0]);
            let expected = c(th_z[0], -th_z[1]) * dt.inv();
            let got = c(th_w[0], -th_w[1]);
            worst = worst.max((got - expected).norm());
        }
    }
    worst
}
