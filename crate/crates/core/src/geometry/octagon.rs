//! Regular hyperbolic octagon with opposite sides identified.
//!
//! The fundamental domain is the regular octagon centered at the origin of
//! the Poincaré disk whose interior angles are all pi/4, so the eight corners
//! glue to a single smooth point and the quotient is a closed genus-2 surface
//! of curvature -1. Side `k` (midpoint direction `k pi/4`) is paired with
//! side `k+4` by the hyperbolic translation along that diameter; all eight
//! pairing maps are hard-coded translations of length `2 arccosh(1 + sqrt 2)`
//! (the systole of this surface).
//!
//! Membership in the domain is decided by eight geodesic half-plane tests --
//! one per side circle -- with a `1e-12` boundary band; ties go to the
//! lowest-numbered side.

use super::mobius::{Mobius, C};

pub const SIDES: usize = 8;

/// Width of the boundary band inside which a point still counts as interior.
pub const BOUNDARY_BAND: f64 = 1e-12;

/// Hyperbolic distance from the center to a side midpoint: arccosh(1 + sqrt 2).
pub fn apothem() -> f64 {
    (1.0 + std::f64::consts::SQRT_2).acosh()
}

/// Translation length of every side-pairing map (also the systole).
pub fn pairing_length() -> f64 {
    2.0 * apothem()
}

/// Euclidean radius of the side midpoints: sqrt(sqrt 2 - 1).
pub fn midpoint_radius() -> f64 {
    (std::f64::consts::SQRT_2 - 1.0).sqrt()
}

/// Euclidean radius of the octagon vertices: 2^(-1/4).
pub fn vertex_radius() -> f64 {
    0.25_f64.exp2().recip()
}

/// Direction of the diameter through the midpoint of side `k`.
pub fn side_angle(k: usize) -> f64 {
    k as f64 * std::f64::consts::FRAC_PI_4
}

/// Euclidean center of the circle carrying geodesic side `k`.
pub fn side_circle_center(k: usize) -> C {
    let rm = midpoint_radius();
    C::exp_i(side_angle(k)).scale(0.5 * (rm + 1.0 / rm))
}

/// Euclidean radius of every side circle.
pub fn side_circle_radius() -> f64 {
    let rm = midpoint_radius();
    0.5 * (1.0 / rm - rm)
}

/// Signed clearance from side `k`: positive inside the domain half-plane.
fn side_clearance(z: C, k: usize) -> f64 {
    (z - side_circle_center(k)).norm() - side_circle_radius()
}

/// True when `z` lies in the fundamental octagon (boundary band included).
pub fn contains(z: C) -> bool {
    if z.norm_sqr() >= 1.0 {
        return false;
    }
    (0..SIDES).all(|k| side_clearance(z, k) >= -BOUNDARY_BAND)
}

/// Side whose half-plane test `z` violates, if any (lowest index wins).
pub fn crossed_side(z: C) -> Option<usize> {
    (0..SIDES).find(|&k| side_clearance(z, k) < -BOUNDARY_BAND)
}

/// Map that re-enters the domain after the flow crosses side `k`: the inverse
/// of the translation that pairs side `k+4` onto side `k`.
pub fn pairing(k: usize) -> Mobius {
    Mobius::translation(side_angle(k), -pairing_length())
}

/// Outcome of reducing a point (and a fiber angle) back into the domain.
#[derive(Debug, Clone, Copy)]
pub struct Reduction {
    pub z: C,
    /// Fiber angle measured against the conformal orthonormal frame.
    pub phi: f64,
    /// Number of pairing maps applied.
    pub hops: usize,
}

/// Apply pairing maps until `z` lies in the fundamental domain again,
/// transporting the fiber angle by `arg T'(z)` at each hop. Returns `None`
/// if `max_hops` applications do not suffice (a sign the step left the
/// domain's neighborhood entirely).
pub fn reduce(z: C, phi: f64, max_hops: usize) -> Option<Reduction> {
    reduce_tracked(z, phi, max_hops).map(|(r, _)| r)
}

/// Like [`reduce`], also reporting the sequence of pairing base points and
/// side indices, so callers can transport additional tangent data through
/// the same maps.
pub fn reduce_tracked(
    mut z: C,
    mut phi: f64,
    max_hops: usize,
) -> Option<(Reduction, Vec<(usize, C)>)> {
    let mut hops = 0;
    let mut path = Vec::new();
    while let Some(k) = crossed_side(z) {
        if hops == max_hops {
            return None;
        }
        path.push((k, z));
        let t = pairing(k);
        let d = t.derivative(z);
        z = t.apply(z);
        phi += d.arg();
        hops += 1;
    }
    Some((Reduction { z, phi, hops }, path))
}

/// Transport a chart tangent vector `(dz, dphi)` through the pairing of side
/// `k` at base point `z`. The angle component picks up the derivative of
/// `arg T'` along `dz`.
pub fn transport_tangent(k: usize, z: C, dz: C, dphi: f64) -> (C, f64) {
    let t = pairing(k);
    let dz_out = t.derivative(z) * dz;
    let slope = t.log_derivative_slope(z); // T''/T'
    let dphi_out = dphi + (slope * dz).im;
    (dz_out, dphi_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mobius::{c, hyperbolic_distance};

    fn vertex(j: usize) -> C {
        C::exp_i((2 * j as i32 + 1) as f64 * std::f64::consts::FRAC_PI_8).scale(vertex_radius())
    }

    #[test]
    fn frozen_domain_constants() {
        assert!((apothem() - 1.528_570_919_48).abs() < 1e-10);
        assert!((midpoint_radius() - 0.643_594_252_906).abs() < 1e-10);
        assert!((vertex_radius() - 0.840_896_415_254).abs() < 1e-10);
        assert!((side_circle_radius() - 0.455_089_860_562).abs() < 1e-10);
        // Side circles meet the unit circle at right angles: |c|^2 - r^2 = 1.
        let d = side_circle_center(3).norm_sqr() - side_circle_radius().powi(2);
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vertices_lie_on_adjacent_side_circles() {
        for j in 0..SIDES {
            let v = vertex(j);
            for side in [j, (j + 1) % SIDES] {
                let gap = (v - side_circle_center(side)).norm() - side_circle_radius();
                assert!(gap.abs() < 1e-12, "vertex {j} off circle {side}: {gap}");
            }
        }
    }

    #[test]
    fn membership_basics() {
        assert!(contains(c(0.0, 0.0)));
        assert!(contains(c(0.6, 0.0))); // just inside a side midpoint
        assert!(!contains(c(0.7, 0.0))); // beyond side 0
        assert_eq!(crossed_side(c(0.7, 0.0)), Some(0));
        assert!(!contains(c(0.99, 0.0)));
        // Toward a vertex the domain extends past the midpoint radius.
        let dir = C::exp_i(std::f64::consts::FRAC_PI_8);
        assert!(contains(dir.scale(0.80)));
        assert!(!contains(dir.scale(0.85)));
    }

    #[test]
    fn pairing_is_an_isometry_that_reenters_the_domain() {
        // A point just past the middle of side 2 returns near side 6.
        let z = C::exp_i(side_angle(2)).scale(midpoint_radius() + 1e-3);
        assert_eq!(crossed_side(z), Some(2));
        let w = pairing(2).apply(z);
        assert!(contains(w), "image {w:?} should be interior");
        // Isometry: distances to a second marker point are preserved.
        let m = c(0.1, -0.2);
        let wm = pairing(2).apply(m);
        let before = hyperbolic_distance(z, m);
        let after = hyperbolic_distance(w, wm);
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn pairings_of_opposite_sides_are_mutually_inverse() {
        for k in 0..4 {
            let roundtrip = pairing(k).compose(&pairing(k + 4));
            assert!(roundtrip.distance_to_identity() < 1e-12);
        }
    }

    #[test]
    fn corner_cycle_of_pairings_closes_up() {
        // Follow the single quotient vertex around its eight corners. At each
        // stage apply the pairing of one incident side and continue with the
        // other side incident to the image corner. After eight hops the
        // composition must be the identity (total corner angle 2 pi).
        let mut word = Mobius::IDENTITY;
        let mut v = vertex(0);
        let mut side = 0usize;
        for _ in 0..SIDES {
            let t = pairing(side);
            v = t.apply(v);
            word = word.compose(&t);
            // Identify the image corner and pick its other incident side.
            let j = (0..SIDES)
                .find(|&j| (vertex(j) - v).norm() < 1e-9)
                .expect("pairing must map corners to corners");
            let (s1, s2) = (j, (j + 1) % SIDES);
            let arrived = (side + 4) % SIDES;
            side = if s1 == arrived { s2 } else { s1 };
        }
        assert!((vertex(0) - v).norm() < 1e-9);
        assert!(word.distance_to_identity() < 1e-9);
    }

    #[test]
    fn reduce_handles_corner_exits() {
        // Exit very close to a vertex so the first pairing may land in the
        // neighbouring cell; reduction must still terminate inside.
        let dir = C::exp_i(std::f64::consts::FRAC_PI_8 + 1e-4);
        let z = dir.scale(0.845);
        let red = reduce(z, 0.3, 4).expect("reduction terminates");
        assert!(contains(red.z));
        assert!(red.hops >= 1);
    }
}
