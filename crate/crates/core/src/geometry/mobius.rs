//! Möbius transformations of the unit disk, stored as 2x2 complex matrices.
//!
//! A map `z -> (a z + b) / (c z + d)` acts on the Poincaré disk; disk
//! automorphisms additionally satisfy `d = conj(a)`, `c = conj(b)` up to a
//! common factor. Tangent vectors transport by the complex derivative.

use serde::{Deserialize, Serialize};

pub type C = num_complex_like::Complex64;

/// Minimal complex arithmetic. `num-complex` would do, but the handful of
/// operations needed here fits in a few lines and keeps the dependency tree
/// flat (nalgebra re-exports its own complex type anyway).
pub mod num_complex_like {
    use serde::{Deserialize, Serialize};
    use std::ops::{Add, Div, Mul, Neg, Sub};

    #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
    pub struct Complex64 {
        pub re: f64,
        pub im: f64,
    }

    pub const fn c(re: f64, im: f64) -> Complex64 {
        Complex64 { re, im }
    }

    impl Complex64 {
        pub const ZERO: Self = c(0.0, 0.0);
        pub const ONE: Self = c(1.0, 0.0);
        pub const I: Self = c(0.0, 1.0);

        pub fn norm_sqr(self) -> f64 {
            self.re * self.re + self.im * self.im
        }
        pub fn norm(self) -> f64 {
            self.norm_sqr().sqrt()
        }
        pub fn conj(self) -> Self {
            c(self.re, -self.im)
        }
        pub fn arg(self) -> f64 {
            self.im.atan2(self.re)
        }
        pub fn scale(self, s: f64) -> Self {
            c(self.re * s, self.im * s)
        }
        pub fn exp_i(theta: f64) -> Self {
            c(theta.cos(), theta.sin())
        }
        pub fn inv(self) -> Self {
            let n = self.norm_sqr();
            c(self.re / n, -self.im / n)
        }
    }

    impl Add for Complex64 {
        type Output = Self;
        fn add(self, o: Self) -> Self {
            c(self.re + o.re, self.im + o.im)
        }
    }
    impl Sub for Complex64 {
        type Output = Self;
        fn sub(self, o: Self) -> Self {
            c(self.re - o.re, self.im - o.im)
        }
    }
    impl Mul for Complex64 {
        type Output = Self;
        fn mul(self, o: Self) -> Self {
            c(
                self.re * o.re - self.im * o.im,
                self.re * o.im + self.im * o.re,
            )
        }
    }
    impl Div for Complex64 {
        type Output = Self;
        fn div(self, o: Self) -> Self {
            self * o.inv()
        }
    }
    impl Neg for Complex64 {
        type Output = Self;
        fn neg(self) -> Self {
            c(-self.re, -self.im)
        }
    }
}

pub use num_complex_like::c;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mobius {
    pub a: C,
    pub b: C,
    pub c: C,
    pub d: C,
}

impl Mobius {
    pub const IDENTITY: Mobius = Mobius {
        a: C::ONE,
        b: C::ZERO,
        c: C::ZERO,
        d: C::ONE,
    };

    /// Hyperbolic translation of the disk along direction `exp(i phi)` that
    /// moves the origin a hyperbolic distance `len` (metric of curvature -1).
    pub fn translation(phi: f64, len: f64) -> Mobius {
        let tau = (len / 2.0).tanh();
        let u = C::exp_i(phi);
        // Conjugate z -> (z + tau)/(1 + tau z) by the rotation u.
        Mobius {
            a: C::ONE,
            b: u.scale(tau),
            c: u.conj().scale(tau),
            d: C::ONE,
        }
    }

    pub fn apply(&self, z: C) -> C {
        (self.a * z + self.b) / (self.c * z + self.d)
    }

    /// Complex derivative at `z`; transports tangent vectors.
    pub fn derivative(&self, z: C) -> C {
        let det = self.a * self.d - self.b * self.c;
        let den = self.c * z + self.d;
        det / (den * den)
    }

    /// Ratio T''(z)/T'(z), used to transport fiber-angle perturbations.
    pub fn log_derivative_slope(&self, z: C) -> C {
        let den = self.c * z + self.d;
        -(self.c + self.c) / den
    }

    pub fn inverse(&self) -> Mobius {
        Mobius {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    pub fn compose(&self, then: &Mobius) -> Mobius {
        // (then ∘ self)(z)
        Mobius {
            a: then.a * self.a + then.b * self.c,
            b: then.a * self.b + then.b * self.d,
            c: then.c * self.a + then.d * self.c,
            d: then.c * self.b + then.d * self.d,
        }
    }

    pub fn distance_to_identity(&self) -> f64 {
        // Normalize so d = 1 before comparing entries.
        let s = self.d.inv();
        let a = self.a * s - C::ONE;
        let b = self.b * s;
        let c = self.c * s;
        (a.norm_sqr() + b.norm_sqr() + c.norm_sqr()).sqrt()
    }
}

/// Hyperbolic distance between two points of the disk (curvature -1).
pub fn hyperbolic_distance(z: C, w: C) -> f64 {
    let num = (z - w).norm();
    let den = (C::ONE - z.conj() * w).norm();
    2.0 * (num / den).atanh()
}
