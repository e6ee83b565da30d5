//! Model manifolds and curvature.
//!
//! Every shipped model is conformally flat in its single chart: the metric is
//! `g_ij = e^{2f} delta_ij` with a model-specific log-factor `f` whose first
//! and second derivatives are available in closed form. Curvature quantities
//! are therefore assembled analytically; finite differences appear only in
//! test oracles.
//!
//! Models:
//! - flat 2-/3-torus, chart `[0,1)^n`, `f = 0`;
//! - conformal 2-/3-torus, `f = a cos(2 pi <m, x>)`;
//! - the hyperbolic octagon quotient (see [`octagon`]), disk chart with
//!   `e^{2f} = 4 / (1 - |z|^2)^2`, curvature `-1`.

pub mod mobius;
pub mod octagon;

use crate::error::{Error, Result};
use crate::tensor::*;
use mobius::{c, C};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ManifoldModel {
    FlatTorus2,
    ConformalTorus2 { amplitude: f64, freq: [i32; 2] },
    FlatTorus3,
    ConformalTorus3 { amplitude: f64, freq: [i32; 3] },
    Octagon,
}

impl ManifoldModel {
    pub fn conformal_torus2(amplitude: f64) -> Self {
        ManifoldModel::ConformalTorus2 {
            amplitude,
            freq: [1, 0],
        }
    }

    pub fn conformal_torus3(amplitude: f64) -> Self {
        ManifoldModel::ConformalTorus3 {
            amplitude,
            freq: [1, 0, 0],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ManifoldModel::FlatTorus2
            | ManifoldModel::ConformalTorus2 { .. }
            | ManifoldModel::Octagon => 2,
            ManifoldModel::FlatTorus3 | ManifoldModel::ConformalTorus3 { .. } => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ManifoldModel::FlatTorus2 => "flat-torus-2",
            ManifoldModel::ConformalTorus2 { .. } => "conformal-torus-2",
            ManifoldModel::FlatTorus3 => "flat-torus-3",
            ManifoldModel::ConformalTorus3 { .. } => "conformal-torus-3",
            ManifoldModel::Octagon => "octagon",
        }
    }

    pub fn is_torus(&self) -> bool {
        !matches!(self, ManifoldModel::Octagon)
    }

    fn wave_vector(&self) -> V3 {
        let tau = std::f64::consts::TAU;
        match self {
            ManifoldModel::ConformalTorus2 { freq, .. } => {
                [tau * freq[0] as f64, tau * freq[1] as f64, 0.0]
            }
            ManifoldModel::ConformalTorus3 { freq, .. } => [
                tau * freq[0] as f64,
                tau * freq[1] as f64,
                tau * freq[2] as f64,
            ],
            _ => [0.0; 3],
        }
    }

    /// Log conformal factor `f` with `g = e^{2f} delta`.
    pub fn log_conformal(&self, x: &V3) -> f64 {
        match self {
            ManifoldModel::FlatTorus2 | ManifoldModel::FlatTorus3 => 0.0,
            ManifoldModel::ConformalTorus2 { amplitude, .. }
            | ManifoldModel::ConformalTorus3 { amplitude, .. } => {
                let w = self.wave_vector();
                amplitude * dot(self.dim(), &w, x).cos()
            }
            ManifoldModel::Octagon => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                2f64.ln() - (1.0 - r2).ln()
            }
        }
    }

    /// Chart gradient of `f`.
    pub fn log_conformal_grad(&self, x: &V3) -> V3 {
        match self {
            ManifoldModel::FlatTorus2 | ManifoldModel::FlatTorus3 => [0.0; 3],
            ManifoldModel::ConformalTorus2 { amplitude, .. }
            | ManifoldModel::ConformalTorus3 { amplitude, .. } => {
                let w = self.wave_vector();
                let s = dot(self.dim(), &w, x).sin();
                v3(|i| -amplitude * w[i] * s)
            }
            ManifoldModel::Octagon => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let d = 2.0 / (1.0 - r2);
                [d * x[0], d * x[1], 0.0]
            }
        }
    }

    /// Chart Hessian of `f`.
    pub fn log_conformal_hess(&self, x: &V3) -> M3 {
        match self {
            ManifoldModel::FlatTorus2 | ManifoldModel::FlatTorus3 => [[0.0; 3]; 3],
            ManifoldModel::ConformalTorus2 { amplitude, .. }
            | ManifoldModel::ConformalTorus3 { amplitude, .. } => {
                let w = self.wave_vector();
                let cos = dot(self.dim(), &w, x).cos();
                m3(|i, j| -amplitude * w[i] * w[j] * cos)
            }
            ManifoldModel::Octagon => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let d = 1.0 - r2;
                m3(|i, j| {
                    let kron = if i == j { 2.0 / d } else { 0.0 };
                    if i < 2 && j < 2 {
                        kron + 4.0 * x[i] * x[j] / (d * d)
                    } else {
                        0.0
                    }
                })
            }
        }
    }

    pub fn metric(&self, x: &V3) -> M3 {
        let e2f = (2.0 * self.log_conformal(x)).exp();
        let n = self.dim();
        m3(|i, j| if i == j && i < n { e2f } else { 0.0 })
    }

    pub fn metric_inverse(&self, x: &V3) -> M3 {
        let e2f = (-2.0 * self.log_conformal(x)).exp();
        let n = self.dim();
        m3(|i, j| if i == j && i < n { e2f } else { 0.0 })
    }

    /// `partials[k][i][j] = d g_ij / d x^k`, in closed form.
    pub fn metric_partials(&self, x: &V3) -> R3 {
        let e2f = (2.0 * self.log_conformal(x)).exp();
        let df = self.log_conformal_grad(x);
        let n = self.dim();
        r3(|k, i, j| {
            if i == j && i < n && k < n {
                2.0 * df[k] * e2f
            } else {
                0.0
            }
        })
    }

    /// Volume density `sqrt(det g) = e^{n f}`.
    pub fn volume_density(&self, x: &V3) -> f64 {
        (self.dim() as f64 * self.log_conformal(x)).exp()
    }

    /// Total Riemannian volume of the model.
    pub fn volume(&self) -> f64 {
        match self {
            ManifoldModel::FlatTorus2 | ManifoldModel::FlatTorus3 => 1.0,
            // Smooth periodic integrand: the trapezoid rule on a fine grid is
            // accurate far beyond anything downstream needs.
            ManifoldModel::ConformalTorus2 { .. } => {
                let n = 256;
                let mut acc = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        let x = [a as f64 / n as f64, b as f64 / n as f64, 0.0];
                        acc += self.volume_density(&x);
                    }
                }
                acc / (n * n) as f64
            }
            ManifoldModel::ConformalTorus3 { .. } => {
                let n = 64;
                let mut acc = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        for cc in 0..n {
                            let x = [
                                a as f64 / n as f64,
                                b as f64 / n as f64,
                                cc as f64 / n as f64,
                            ];
                            acc += self.volume_density(&x);
                        }
                    }
                }
                acc / (n * n * n) as f64
            }
            // Gauss-Bonnet at genus 2 and curvature -1.
            ManifoldModel::Octagon => 4.0 * std::f64::consts::PI,
        }
    }

    /// Riemannian inner product of chart vectors at `x`.
    pub fn inner(&self, x: &V3, u: &V3, v: &V3) -> f64 {
        let e2f = (2.0 * self.log_conformal(x)).exp();
        e2f * dot(self.dim(), u, v)
    }

    pub fn norm(&self, x: &V3, u: &V3) -> f64 {
        self.inner(x, u, u).sqrt()
    }

    /// Lower an index: `w_i = g_ij v^j`.
    pub fn lower(&self, x: &V3, v: &V3) -> V3 {
        let e2f = (2.0 * self.log_conformal(x)).exp();
        scale(v, e2f)
    }

    /// Raise an index: `v^i = g^ij w_j`.
    pub fn raise(&self, x: &V3, w: &V3) -> V3 {
        let e2f = (-2.0 * self.log_conformal(x)).exp();
        scale(w, e2f)
    }

    /// Rotation by +pi/2 in the oriented orthonormal frame (surfaces only).
    /// For a conformal metric this is the Euclidean rotation of components.
    pub fn rotate_quarter(&self, v: &V3) -> V3 {
        debug_assert_eq!(self.dim(), 2);
        [-v[1], v[0], 0.0]
    }

    /// Unit tangent vector (chart components) at angle `phi` against the
    /// conformal orthonormal frame `e_i = e^{-f} d/dx^i` (surfaces only).
    pub fn unit_vector(&self, x: &V3, phi: f64) -> V3 {
        debug_assert_eq!(self.dim(), 2);
        let emf = (-self.log_conformal(x)).exp();
        [emf * phi.cos(), emf * phi.sin(), 0.0]
    }

    /// Frame angle of a chart tangent vector (surfaces only).
    pub fn vector_angle(&self, v: &V3) -> f64 {
        debug_assert_eq!(self.dim(), 2);
        v[1].atan2(v[0])
    }

    /// True when the raw chart coordinates lie in the model's domain.
    pub fn in_domain(&self, coords: &V3) -> bool {
        match self {
            ManifoldModel::Octagon => octagon::contains(c(coords[0], coords[1])),
            _ => true, // tori accept any coordinates modulo wrapping
        }
    }

    /// Canonical chart representative: tori wrap into `[0,1)^n`; the octagon
    /// requires membership in the fundamental domain.
    pub fn normalize_coords(&self, coords: &V3) -> Result<V3> {
        let n = self.dim();
        if self.is_torus() {
            Ok(v3(|i| if i < n { coords[i].rem_euclid(1.0) } else { 0.0 }))
        } else if self.in_domain(coords) {
            Ok([coords[0], coords[1], 0.0])
        } else {
            Err(Error::OutsideChart {
                model: self.name().to_string(),
                coords: coords[..n].to_vec(),
            })
        }
    }
}

/// Chart point tagged with its owning model; constructors normalize, so the
/// coordinates always lie in the model's chart domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub model: ManifoldModel,
    coords: V3,
}

impl ChartPoint {
    pub fn new(model: ManifoldModel, coords: V3) -> Result<Self> {
        Ok(ChartPoint {
            model,
            coords: model.normalize_coords(&coords)?,
        })
    }

    pub fn coords(&self) -> &V3 {
        &self.coords
    }

    pub fn complex(&self) -> C {
        c(self.coords[0], self.coords[1])
    }
}

/// Christoffel symbols `Gamma^i_{jk}` of the Levi-Civita connection, indexed
/// `[i][j][k]`. For `g = e^{2f} delta` these are
/// `f_j delta_ik + f_k delta_ij - f_i delta_jk`.
pub fn christoffel(m: &ManifoldModel, x: &ChartPoint) -> R3 {
    let df = m.log_conformal_grad(x.coords());
    let n = m.dim();
    r3(|i, j, k| {
        if i >= n || j >= n || k >= n {
            return 0.0;
        }
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        df[j] * d(i, k) + df[k] * d(i, j) - df[i] * d(j, k)
    })
}

/// Chart partials `d Gamma^i_{jk} / d x^l`, indexed `[l][i][j][k]`.
pub fn christoffel_partials(m: &ManifoldModel, x: &ChartPoint) -> R4 {
    let hess = m.log_conformal_hess(x.coords());
    let n = m.dim();
    r4(|l, i, j, k| {
        if i >= n || j >= n || k >= n || l >= n {
            return 0.0;
        }
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        hess[j][l] * d(i, k) + hess[k][l] * d(i, j) - hess[i][l] * d(j, k)
    })
}

/// Curvature tensor `R^i_{jkl}`, indexed `[i][j][k][l]`, with the convention
/// `R(e_k, e_l) e_j = R^i_{jkl} e_i`, i.e.
/// `R^i_{jkl} = d_k Gamma^i_{jl} - d_l Gamma^i_{jk} + Gamma^i_{kp} Gamma^p_{jl} - Gamma^i_{lp} Gamma^p_{jk}`.
pub fn riemann(m: &ManifoldModel, x: &ChartPoint) -> R4 {
    let g = christoffel(m, x);
    let dg = christoffel_partials(m, x);
    let n = m.dim();
    r4(|i, j, k, l| {
        dg[k][i][j][l] - dg[l][i][j][k]
            + sum1(n, |p| g[i][k][p] * g[p][j][l] - g[i][l][p] * g[p][j][k])
    })
}

/// Fully lowered curvature tensor `R_{ijkl} = g_ip R^p_{jkl}`.
pub fn riemann_lowered(m: &ManifoldModel, x: &ChartPoint) -> R4 {
    let r = riemann(m, x);
    let e2f = (2.0 * m.log_conformal(x.coords())).exp();
    r4(|i, j, k, l| e2f * r[i][j][k][l])
}

/// Oriented 2-plane in a tangent space, stored as a g-orthonormal basis.
#[derive(Debug, Clone, Copy)]
pub struct TwoPlane {
    pub xi: V3,
    pub eta: V3,
}

impl TwoPlane {
    /// Gram-Schmidt the spanning pair `(u, v)` at `x`. Fails when the vectors
    /// are numerically dependent.
    pub fn new(m: &ManifoldModel, x: &ChartPoint, u: &V3, v: &V3) -> Result<Self> {
        let nu = m.norm(x.coords(), u);
        let nv = m.norm(x.coords(), v);
        if nu == 0.0 || nv == 0.0 {
            return Err(Error::DegeneratePlane { gram_det: 0.0 });
        }
        let xi = scale(u, 1.0 / nu);
        let proj = m.inner(x.coords(), v, &xi);
        let w = sub(v, &scale(&xi, proj));
        let gram_det = m.inner(x.coords(), &w, &w) / (nv * nv);
        if gram_det < 1e-12 {
            return Err(Error::DegeneratePlane { gram_det });
        }
        let nw = m.norm(x.coords(), &w);
        Ok(TwoPlane {
            xi,
            eta: scale(&w, 1.0 / nw),
        })
    }

    /// Max deviation of the basis from g-orthonormality.
    pub fn orthonormality_defect(&self, m: &ManifoldModel, x: &ChartPoint) -> f64 {
        let xx = m.inner(x.coords(), &self.xi, &self.xi) - 1.0;
        let ee = m.inner(x.coords(), &self.eta, &self.eta) - 1.0;
        let xe = m.inner(x.coords(), &self.xi, &self.eta);
        xx.abs().max(ee.abs()).max(xe.abs())
    }
}

/// Sectional curvature of the plane: `K(sigma) = <R(xi,eta) eta, xi>` for a
/// g-orthonormal basis, via `R_{ijkl} xi^i eta^j xi^k eta^l`.
pub fn sectional_curvature(m: &ManifoldModel, x: &ChartPoint, sigma: &TwoPlane) -> f64 {
    debug_assert!(sigma.orthonormality_defect(m, x) < 1e-8);
    let rl = riemann_lowered(m, x);
    let n = m.dim();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    acc += rl[i][j][k][l] * sigma.xi[i] * sigma.eta[j] * sigma.xi[k] * sigma.eta[l];
                }
            }
        }
    }
    acc
}

/// Gauss curvature of a surface model (the sectional curvature of the only
/// tangent plane): `K = -e^{-2f} (f_11 + f_22)`.
pub fn gauss_curvature(m: &ManifoldModel, x: &ChartPoint) -> f64 {
    debug_assert_eq!(m.dim(), 2);
    let hess = m.log_conformal_hess(x.coords());
    let lap = hess[0][0] + hess[1][1];
    -(-2.0 * m.log_conformal(x.coords())).exp() * lap
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(m: &ManifoldModel, coords: V3) -> ChartPoint {
        ChartPoint::new(*m, coords).unwrap()
    }

    /// Finite-difference Christoffel oracle straight from the metric.
    fn christoffel_fd(m: &ManifoldModel, x: &ChartPoint, h: f64) -> R3 {
        let n = m.dim();
        let mut dg = [[[0.0; 3]; 3]; 3]; // [k][i][j]
        for k in 0..n {
            let mut xp = *x.coords();
            let mut xm = *x.coords();
            xp[k] += h;
            xm[k] -= h;
            let gp = m.metric(&xp);
            let gm = m.metric(&xm);
            for i in 0..n {
                for j in 0..n {
                    dg[k][i][j] = (gp[i][j] - gm[i][j]) / (2.0 * h);
                }
            }
        }
        let ginv = m.metric_inverse(x.coords());
        r3(|i, j, k| {
            0.5 * sum1(n, |l| ginv[i][l] * (dg[j][l][k] + dg[k][l][j] - dg[l][j][k]))
        })
    }

    #[test]
    fn flat_models_have_vanishing_connection_and_curvature() {
        for m in [ManifoldModel::FlatTorus2, ManifoldModel::FlatTorus3] {
            let x = pt(&m, [0.37, 0.81, 0.12]);
            let g = christoffel(&m, &x);
            let r = riemann(&m, &x);
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        assert_eq!(g[i][j][k], 0.0);
                        for l in 0..3 {
                            assert_eq!(r[i][j][k][l], 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn conformal_torus_christoffel_matches_metric_finite_differences() {
        let m = ManifoldModel::conformal_torus2(0.1);
        let x = pt(&m, [0.3, 0.7, 0.0]);
        let exact = christoffel(&m, &x);
        let fd = christoffel_fd(&m, &x, 1e-5);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert!(
                        (exact[i][j][k] - fd[i][j][k]).abs() < 1e-9,
                        "Gamma^{i}_{j}{k}: {} vs {}",
                        exact[i][j][k],
                        fd[i][j][k]
                    );
                }
            }
        }
    }

    #[test]
    fn octagon_connection_vanishes_at_the_origin() {
        let m = ManifoldModel::Octagon;
        let x = pt(&m, [0.0, 0.0, 0.0]);
        let g = christoffel(&m, &x);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert_eq!(g[i][j][k], 0.0);
                }
            }
        }
    }

    #[test]
    fn octagon_curvature_is_minus_one_everywhere() {
        let m = ManifoldModel::Octagon;
        for coords in [[0.0, 0.0, 0.0], [0.3, -0.2, 0.0], [-0.1, 0.55, 0.0]] {
            let x = pt(&m, coords);
            assert!((gauss_curvature(&m, &x) + 1.0).abs() < 1e-12);
            let sigma = TwoPlane::new(&m, &x, &[1.0, 0.3, 0.0], &[-0.2, 0.9, 0.0]).unwrap();
            let k = sectional_curvature(&m, &x, &sigma);
            assert!((k + 1.0).abs() < 1e-10, "K = {k}");
        }
    }

    #[test]
    fn conformal_torus_sectional_equals_gauss_formula() {
        let m = ManifoldModel::conformal_torus2(0.1);
        for coords in [[0.05, 0.4, 0.0], [0.3, 0.7, 0.0], [0.92, 0.1, 0.0]] {
            let x = pt(&m, coords);
            let sigma = TwoPlane::new(&m, &x, &[0.8, -0.1, 0.0], &[0.4, 1.1, 0.0]).unwrap();
            let ks = sectional_curvature(&m, &x, &sigma);
            let kg = gauss_curvature(&m, &x);
            assert!((ks - kg).abs() < 1e-10, "{ks} vs {kg}");
        }
    }

    #[test]
    fn riemann_symmetries_hold_on_the_conformal_3_torus() {
        let m = ManifoldModel::ConformalTorus3 {
            amplitude: 0.12,
            freq: [1, 2, 0],
        };
        let x = pt(&m, [0.21, 0.55, 0.83]);
        let rl = riemann_lowered(&m, &x);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        // Antisymmetry in both pairs, pair symmetry, first Bianchi.
                        assert!((rl[i][j][k][l] + rl[i][j][l][k]).abs() < 1e-8);
                        assert!((rl[i][j][k][l] + rl[j][i][k][l]).abs() < 1e-8);
                        assert!((rl[i][j][k][l] - rl[k][l][i][j]).abs() < 1e-8);
                        assert!(
                            (rl[i][j][k][l] + rl[i][k][l][j] + rl[i][l][j][k]).abs() < 1e-8
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn sectional_curvature_is_basis_independent() {
        let m = ManifoldModel::ConformalTorus3 {
            amplitude: 0.12,
            freq: [1, 2, 0],
        };
        let x = pt(&m, [0.21, 0.55, 0.83]);
        let u = [1.0, 0.2, -0.4];
        let v = [0.3, -1.0, 0.5];
        let s1 = TwoPlane::new(&m, &x, &u, &v).unwrap();
        // Re-span the same plane with mixed vectors.
        let u2 = add(&scale(&u, 0.7), &scale(&v, 1.3));
        let v2 = sub(&scale(&u, -0.2), &scale(&v, 0.9));
        let s2 = TwoPlane::new(&m, &x, &u2, &v2).unwrap();
        let k1 = sectional_curvature(&m, &x, &s1);
        let k2 = sectional_curvature(&m, &x, &s2);
        assert!((k1 - k2).abs() < 1e-10, "{k1} vs {k2}");
    }

    #[test]
    fn degenerate_planes_are_rejected() {
        let m = ManifoldModel::FlatTorus3;
        let x = pt(&m, [0.0, 0.0, 0.0]);
        let u = [1.0, 2.0, -0.5];
        let v = scale(&u, 3.0);
        assert!(matches!(
            TwoPlane::new(&m, &x, &u, &v),
            Err(Error::DegeneratePlane { .. })
        ));
    }

    #[test]
    fn torus_coordinates_wrap_and_octagon_rejects_outside_points() {
        let m = ManifoldModel::FlatTorus2;
        let p = ChartPoint::new(m, [1.25, -0.25, 0.0]).unwrap();
        assert!((p.coords()[0] - 0.25).abs() < 1e-15);
        assert!((p.coords()[1] - 0.75).abs() < 1e-15);

        let o = ManifoldModel::Octagon;
        assert!(ChartPoint::new(o, [0.2, -0.3, 0.0]).is_ok());
        assert!(matches!(
            ChartPoint::new(o, [0.9, 0.0, 0.0]),
            Err(Error::OutsideChart { .. })
        ));
    }

    #[test]
    fn conformal_volume_matches_bessel_series_value() {
        // For f = a cos(2 pi x1), the area is the modified Bessel I_0(2a).
        let m = ManifoldModel::conformal_torus2(0.1);
        let i0 = |z: f64| {
            // Power series, converges instantly for small argument.
            let mut term = 1.0;
            let mut acc = 1.0;
            for k in 1..20 {
                term *= (z / (2.0 * k as f64)).powi(2);
                acc += term;
            }
            acc
        };
        assert!((m.volume() - i0(0.2)).abs() < 1e-10);
    }
}
