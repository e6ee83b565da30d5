//! Vector-field calculus on the unit circle bundle of 2-torus models.
//!
//! Functions live on an `nx * nx * nphi` grid (base coordinates in `[0,1)^2`,
//! fiber angle in `[0, 2pi)`). Three first-order operators act on them:
//!
//! * `G`  - derivative along the geodesic generator,
//! * `V`  - derivative along the fiber,
//! * `H = [V, G]` - derivative along the horizontal complement.
//!
//! Fiber derivatives are always spectral. Base derivatives come in two
//! flavors: spectral (exponentially accurate for the analytic test functions
//! used here) and centered differences at the grid spacing (second order) -
//! the latter gives quadrature identities a definite `O(grid^-2)` residual
//! decay that refinement tests can measure.

use crate::geometry::ManifoldModel;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

type Cx = Complex<f64>;

/// Base-derivative backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivKind {
    Spectral,
    CenteredFd,
}

/// Discretization of the circle bundle of a 2-torus model.
#[derive(Debug, Clone, Copy)]
pub struct SmGrid {
    pub model: ManifoldModel,
    pub nx: usize,
    pub nphi: usize,
}

impl SmGrid {
    pub fn new(model: ManifoldModel, nx: usize, nphi: usize) -> Self {
        assert!(model.is_torus() && model.dim() == 2, "2-torus models only");
        assert!(nx >= 4 && nphi >= 4);
        SmGrid { model, nx, nphi }
    }

    pub fn len(&self) -> usize {
        self.nx * self.nx * self.nphi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn index(&self, i1: usize, i2: usize, ip: usize) -> usize {
        (i1 * self.nx + i2) * self.nphi + ip
    }

    pub fn node(&self, i1: usize, i2: usize, ip: usize) -> (f64, f64, f64) {
        (
            i1 as f64 / self.nx as f64,
            i2 as f64 / self.nx as f64,
            std::f64::consts::TAU * ip as f64 / self.nphi as f64,
        )
    }

    /// Sample a function of `(x1, x2, phi)`.
    pub fn sample(&self, f: impl Fn(f64, f64, f64) -> Cx) -> SmField {
        let mut data = vec![Cx::new(0.0, 0.0); self.len()];
        for i1 in 0..self.nx {
            for i2 in 0..self.nx {
                for ip in 0..self.nphi {
                    let (x1, x2, phi) = self.node(i1, i2, ip);
                    data[self.index(i1, i2, ip)] = f(x1, x2, phi);
                }
            }
        }
        SmField { grid: *self, data }
    }

    pub fn sample_real(&self, f: impl Fn(f64, f64, f64) -> f64) -> SmField {
        self.sample(|x1, x2, phi| Cx::new(f(x1, x2, phi), 0.0))
    }

    /// Sample a base-only function (constant along the fiber).
    pub fn sample_base(&self, f: impl Fn(f64, f64) -> f64) -> SmField {
        self.sample(|x1, x2, _| Cx::new(f(x1, x2), 0.0))
    }
}

/// Complex scalar field on the circle bundle grid.
#[derive(Debug, Clone)]
pub struct SmField {
    pub grid: SmGrid,
    pub data: Vec<Cx>,
}

impl SmField {
    pub fn zip_map(&self, other: &SmField, f: impl Fn(Cx, Cx) -> Cx) -> SmField {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        SmField {
            grid: self.grid,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(Cx) -> Cx) -> SmField {
        SmField {
            grid: self.grid,
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn add(&self, other: &SmField) -> SmField {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SmField) -> SmField {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &SmField) -> SmField {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> SmField {
        self.map(|a| a * s)
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Integral against the canonical bundle volume `e^{2f} dx dphi`.
    pub fn integral(&self) -> Cx {
        let g = &self.grid;
        let mut acc = Cx::new(0.0, 0.0);
        for i1 in 0..g.nx {
            for i2 in 0..g.nx {
                let (x1, x2, _) = g.node(i1, i2, 0);
                let dens = (2.0 * g.model.log_conformal(&[x1, x2, 0.0])).exp();
                for ip in 0..g.nphi {
                    acc += self.data[g.index(i1, i2, ip)] * dens;
                }
            }
        }
        acc * (std::f64::consts::TAU / (g.nx * g.nx * g.nphi) as f64)
    }

    /// Derivative along a base axis (0 or 1).
    pub fn dx(&self, axis: usize, kind: DerivKind) -> SmField {
        match kind {
            DerivKind::Spectral => self.spectral_derivative(axis),
            DerivKind::CenteredFd => self.centered_fd(axis),
        }
    }

    /// Fiber derivative (always spectral).
    pub fn dphi(&self) -> SmField {
        self.spectral_derivative(2)
    }

    fn dims(&self) -> [usize; 3] {
        [self.grid.nx, self.grid.nx, self.grid.nphi]
    }

    fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => self.grid.nx * self.grid.nphi,
            1 => self.grid.nphi,
            _ => 1,
        }
    }

    fn centered_fd(&self, axis: usize) -> SmField {
        let dims = self.dims();
        let n = dims[axis];
        let stride = self.stride(axis);
        let h = 1.0 / n as f64; // base coordinates have period 1
        let mut out = vec![Cx::new(0.0, 0.0); self.data.len()];
        self.for_each_line(axis, |base| {
            for j in 0..n {
                let up = base + ((j + 1) % n) * stride;
                let dn = base + ((j + n - 1) % n) * stride;
                out[base + j * stride] = (self.data[up] - self.data[dn]) / (2.0 * h);
            }
        });
        SmField {
            grid: self.grid,
            data: out,
        }
    }

    fn spectral_derivative(&self, axis: usize) -> SmField {
        let dims = self.dims();
        let n = dims[axis];
        let stride = self.stride(axis);
        // Base axes have period 1 (wave numbers 2 pi m); the fiber has
        // period 2 pi (wave numbers m).
        let unit = if axis < 2 { std::f64::consts::TAU } else { 1.0 };
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut out = self.data.clone();
        let mut line = vec![Cx::new(0.0, 0.0); n];
        // Cannot borrow out mutably inside the closure that reads self.data,
        // so gather line indices first.
        let mut bases = Vec::new();
        self.for_each_line(axis, |base| bases.push(base));
        for base in bases {
            for j in 0..n {
                line[j] = self.data[base + j * stride];
            }
            fwd.process(&mut line);
            for (j, value) in line.iter_mut().enumerate() {
                let m = if j <= n / 2 { j as i64 } else { j as i64 - n as i64 };
                // Zero the unmatched mode at the exact Nyquist frequency.
                let m = if 2 * j == n { 0 } else { m };
                *value *= Cx::new(0.0, unit * m as f64);
            }
            inv.process(&mut line);
            for j in 0..n {
                out[base + j * stride] = line[j] / n as f64;
            }
        }
        SmField {
            grid: self.grid,
            data: out,
        }
    }

    fn for_each_line(&self, axis: usize, mut f: impl FnMut(usize)) {
        let dims = self.dims();
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let strides = [self.stride(0), self.stride(1), self.stride(2)];
        for ia in 0..dims[a] {
            for ib in 0..dims[b] {
                f(ia * strides[a] + ib * strides[b]);
            }
        }
    }
}

/// The three generators and composites on a fixed grid, with precomputed
/// conformal-factor tables.
pub struct SurfaceOps {
    pub grid: SmGrid,
    emf: Vec<f64>,   // e^{-f} per base node
    f1: Vec<f64>,    // d f / d x1
    f2: Vec<f64>,    // d f / d x2
    cos_phi: Vec<f64>,
    sin_phi: Vec<f64>,
    pub kind: DerivKind,
}

impl SurfaceOps {
    pub fn new(grid: SmGrid, kind: DerivKind) -> Self {
        let m = grid.model;
        let mut emf = Vec::with_capacity(grid.nx * grid.nx);
        let mut f1 = Vec::with_capacity(grid.nx * grid.nx);
        let mut f2 = Vec::with_capacity(grid.nx * grid.nx);
        for i1 in 0..grid.nx {
            for i2 in 0..grid.nx {
                let (x1, x2, _) = grid.node(i1, i2, 0);
                let x = [x1, x2, 0.0];
                emf.push((-m.log_conformal(&x)).exp());
                let df = m.log_conformal_grad(&x);
                f1.push(df[0]);
                f2.push(df[1]);
            }
        }
        let cos_phi = (0..grid.nphi)
            .map(|ip| (std::f64::consts::TAU * ip as f64 / grid.nphi as f64).cos())
            .collect();
        let sin_phi = (0..grid.nphi)
            .map(|ip| (std::f64::consts::TAU * ip as f64 / grid.nphi as f64).sin())
            .collect();
        SurfaceOps {
            grid,
            emf,
            f1,
            f2,
            cos_phi,
            sin_phi,
            kind,
        }
    }

    fn combine(
        &self,
        u1: &SmField,
        u2: &SmField,
        up: &SmField,
        // coefficients as functions of (base index, fiber index)
        c1: impl Fn(usize, usize) -> f64,
        c2: impl Fn(usize, usize) -> f64,
        cp: impl Fn(usize, usize) -> f64,
    ) -> SmField {
        let g = &self.grid;
        let mut data = vec![Cx::new(0.0, 0.0); g.len()];
        for i1 in 0..g.nx {
            for i2 in 0..g.nx {
                let bx = i1 * g.nx + i2;
                for ip in 0..g.nphi {
                    let idx = g.index(i1, i2, ip);
                    data[idx] = u1.data[idx] * c1(bx, ip)
                        + u2.data[idx] * c2(bx, ip)
                        + up.data[idx] * cp(bx, ip);
                }
            }
        }
        SmField { grid: *g, data }
    }

    /// Geodesic generator.
    pub fn g_apply(&self, u: &SmField) -> SmField {
        let (u1, u2, up) = (u.dx(0, self.kind), u.dx(1, self.kind), u.dphi());
        self.combine(
            &u1,
            &u2,
            &up,
            |bx, ip| self.emf[bx] * self.cos_phi[ip],
            |bx, ip| self.emf[bx] * self.sin_phi[ip],
            |bx, ip| self.emf[bx] * (self.f2[bx] * self.cos_phi[ip] - self.f1[bx] * self.sin_phi[ip]),
        )
    }

    /// Horizontal complement `H = [V, G]`.
    pub fn h_apply(&self, u: &SmField) -> SmField {
        let (u1, u2, up) = (u.dx(0, self.kind), u.dx(1, self.kind), u.dphi());
        self.combine(
            &u1,
            &u2,
            &up,
            |bx, ip| -self.emf[bx] * self.sin_phi[ip],
            |bx, ip| self.emf[bx] * self.cos_phi[ip],
            |bx, ip| {
                -self.emf[bx] * (self.f1[bx] * self.cos_phi[ip] + self.f2[bx] * self.sin_phi[ip])
            },
        )
    }

    /// Fiber generator.
    pub fn v_apply(&self, u: &SmField) -> SmField {
        u.dphi()
    }

    /// Fiber-lowering operator `(G + iH)/2`: sends fiber mode `n` of pure
    /// products `g(x) e^{i n phi}` to mode `n - 1`.
    pub fn eta_minus(&self, u: &SmField) -> SmField {
        let gu = self.g_apply(u);
        let hu = self.h_apply(u);
        gu.zip_map(&hu, |a, b| (a + Cx::new(0.0, 1.0) * b) * 0.5)
    }

    /// Gauss curvature sampled per base node, broadcast along the fiber.
    pub fn curvature_field(&self) -> SmField {
        let m = self.grid.model;
        self.grid.sample_base(|x1, x2| {
            let p = crate::geometry::ChartPoint::new(m, [x1, x2, 0.0]).expect("torus chart");
            crate::geometry::gauss_curvature(&m, &p)
        })
    }
}

/// Largest fiber-mode magnitude per mode index: `out[k] = max_x |c_k(x)|`
/// where `u(x, .) = sum_k c_k(x) e^{i k phi}` and `k` is folded to signed
/// frequencies (`out` index `j` holds `k = j` for `j <= nphi/2`, else
/// `k = j - nphi`).
pub fn fiber_mode_profile(u: &SmField) -> Vec<f64> {
    let g = &u.grid;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(g.nphi);
    let mut out = vec![0.0f64; g.nphi];
    let mut line = vec![Cx::new(0.0, 0.0); g.nphi];
    for i1 in 0..g.nx {
        for i2 in 0..g.nx {
            for ip in 0..g.nphi {
                line[ip] = u.data[g.index(i1, i2, ip)];
            }
            fft.process(&mut line);
            for (j, c) in line.iter().enumerate() {
                out[j] = out[j].max(c.norm() / g.nphi as f64);
            }
        }
    }
    out
}

/// Both sides of the integrated surface energy identity for a thermostat
/// coefficient `lambda(x, phi)`:
///
/// `2 int Hu . V(G_l u) = int (G_l u)^2 + int (Hu)^2
///    - int (K - H(lambda) + lambda^2) (Vu)^2`
///
/// with `G_l = G + lambda V`. Returns `(lhs, rhs)`; on exact calculus the two
/// agree, and the residual measures the discretization backend.
pub fn surface_identity_sides(
    ops: &SurfaceOps,
    u: &SmField,
    lambda: &SmField,
) -> (f64, f64) {
    let gu = ops.g_apply(u);
    let vu = ops.v_apply(u);
    let hu = ops.h_apply(u);
    let glu = gu.add(&lambda.mul(&vu));
    let vglu = ops.v_apply(&glu);
    let lhs = 2.0 * hu.mul(&vglu).integral().re;
    let k = ops.curvature_field();
    let hlam = ops.h_apply(lambda);
    let weight = k.sub(&hlam).add(&lambda.mul(lambda));
    let rhs = glu.mul(&glu).integral().re + hu.mul(&hu).integral().re
        - weight.mul(&vu).mul(&vu).integral().re;
    (lhs, rhs)
}
