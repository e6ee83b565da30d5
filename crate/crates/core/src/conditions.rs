//! Curvature sign criteria for forced flows.
//!
//! Hyperbolicity and expansivity arguments for thermostat dynamics hinge on
//! the sign of scalar quantities attached to each tangent 2-plane: the
//! sectional curvature corrected by the divergence, norm, and in-plane
//! projection of the forcing field. This module evaluates those quantities at
//! a point and scans their supremum over randomized samples of the chart and
//! of the plane bundle.
//!
//! Two routes are provided for the deformed-connection curvature: a closed
//! formula in terms of metric quantities, and an independent computation from
//! the curvature tensor of the deformed (torsion-free, non-metric) connection
//! itself. Their agreement is a test target, not an assumption.

use crate::fields::ExternalField;
use crate::geometry::mobius::c;
use crate::geometry::{
    christoffel, christoffel_partials, octagon, sectional_curvature, ChartPoint, ManifoldModel,
    TwoPlane,
};
use crate::tensor::{m3, r3, r4, sum1, sum2, v3, M3, V3};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Verdict margin: a scanned supremum must clear zero by this much before the
/// sign is reported as negative.
pub const NEGATIVITY_MARGIN: f64 = 1e-3;

/// Which plane criterion to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CriterionTag {
    /// `K(s) - div_s E - |E|^2 + (5/4)|E_s|^2` on the plane `s`.
    K,
    /// Sectional curvature of the connection obtained by deforming the metric
    /// connection along the field's one-form; equals the first criterion
    /// minus `|E_s|^2 / 4`.
    KWeyl,
    /// `K(s) - div_s E - |E|^2 + [1 + (n/2 - 1)^2] |E_s|^2`, which weights the
    /// in-plane projection by dimension.
    KOne,
}

impl CriterionTag {
    pub fn name(&self) -> &'static str {
        match self {
            CriterionTag::K => "k",
            CriterionTag::KWeyl => "k-weyl",
            CriterionTag::KOne => "k-one",
        }
    }
}

/// All plane quantities evaluated at one `(point, plane)` pair.
#[derive(Debug, Clone, Copy)]
pub struct CriterionValues {
    /// Sectional curvature `K(s)` of the unforced metric.
    pub sectional: f64,
    /// `div_s E`: trace of the field's covariant gradient over the plane.
    pub plane_divergence: f64,
    /// `|E|^2` at the point.
    pub field_norm_sq: f64,
    /// `|E_s|^2`, squared norm of the orthogonal projection onto the plane.
    pub projection_norm_sq: f64,
    pub k: f64,
    pub k_weyl: f64,
    pub k_one: f64,
}

impl CriterionValues {
    pub fn get(&self, tag: CriterionTag) -> f64 {
        match tag {
            CriterionTag::K => self.k,
            CriterionTag::KWeyl => self.k_weyl,
            CriterionTag::KOne => self.k_one,
        }
    }
}

fn scaled_field(
    m: &ManifoldModel,
    field: Option<&ExternalField>,
    scale: f64,
    x: &V3,
) -> (V3, M3, M3) {
    match field {
        Some(f) => {
            let e = f.vector(m, x);
            let cov = f.covariant_gradient(m, x);
            let chart = f.chart_gradient(m, x);
            (
                v3(|i| scale * e[i]),
                m3(|i, k| scale * cov[i][k]),
                m3(|i, k| scale * chart[i][k]),
            )
        }
        None => ([0.0; 3], [[0.0; 3]; 3], [[0.0; 3]; 3]),
    }
}

/// Evaluate every plane criterion at `(x, sigma)` for the forcing field
/// `scale * E`.
pub fn criterion_values(
    m: &ManifoldModel,
    field: Option<&ExternalField>,
    scale: f64,
    x: &ChartPoint,
    sigma: &TwoPlane,
) -> CriterionValues {
    let n = m.dim();
    let xc = x.coords();
    let g = m.metric(xc);
    let ks = sectional_curvature(m, x, sigma);
    let (e, de, _) = scaled_field(m, field, scale, xc);
    let inner = |a: &V3, b: &V3| sum2(n, |i, j| g[i][j] * a[i] * b[j]);
    // (nabla_b E)^i contracted back against b, summed over the plane basis.
    let nabla = |b: &V3| v3(|i| sum1(n, |k| de[i][k] * b[k]));
    let plane_divergence =
        inner(&nabla(&sigma.xi), &sigma.xi) + inner(&nabla(&sigma.eta), &sigma.eta);
    let field_norm_sq = inner(&e, &e);
    let projection_norm_sq = inner(&e, &sigma.xi).powi(2) + inner(&e, &sigma.eta).powi(2);
    let base = ks - plane_divergence - field_norm_sq;
    let half = n as f64 / 2.0 - 1.0;
    CriterionValues {
        sectional: ks,
        plane_divergence,
        field_norm_sq,
        projection_norm_sq,
        k: base + 1.25 * projection_norm_sq,
        k_weyl: base + projection_norm_sq,
        k_one: base + (1.0 + half * half) * projection_norm_sq,
    }
}

/// Single-tag convenience wrapper around [`criterion_values`].
pub fn evaluate_criterion(
    m: &ManifoldModel,
    field: Option<&ExternalField>,
    scale: f64,
    x: &ChartPoint,
    sigma: &TwoPlane,
    tag: CriterionTag,
) -> f64 {
    criterion_values(m, field, scale, x, sigma).get(tag)
}

/// Sectional value `<R(xi, eta) eta, xi>` of the deformed connection
///
/// ```text
/// G^i_{jl} = Gamma^i_{jl} + theta_j d^i_l + theta_l d^i_j - g_{jl} E^i,
/// ```
///
/// with `theta = g(E, .)`, computed from the curvature tensor of `G` itself.
/// This is the independent cross-check for the `k_weyl` formula: the two must
/// agree to rounding error, and they are computed along disjoint code paths.
pub fn deformed_sectional(
    m: &ManifoldModel,
    field: Option<&ExternalField>,
    scale: f64,
    x: &ChartPoint,
    sigma: &TwoPlane,
) -> f64 {
    let n = m.dim();
    let xc = x.coords();
    let g = m.metric(xc);
    let dg = m.metric_partials(xc);
    let gamma = christoffel(m, x);
    let dgamma = christoffel_partials(m, x);
    let (e, _, de) = scaled_field(m, field, scale, xc);
    let kron = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    let theta = v3(|j| sum1(n, |p| g[j][p] * e[p]));
    let dtheta = m3(|k, j| sum1(n, |p| dg[k][j][p] * e[p] + g[j][p] * de[p][k]));
    let tot = r3(|i, j, l| {
        gamma[i][j][l] + theta[j] * kron(i, l) + theta[l] * kron(i, j) - g[j][l] * e[i]
    });
    let dtot = r4(|k, i, j, l| {
        dgamma[k][i][j][l] + dtheta[k][j] * kron(i, l) + dtheta[k][l] * kron(i, j)
            - dg[k][j][l] * e[i]
            - g[j][l] * de[i][k]
    });
    let (xi, eta) = (&sigma.xi, &sigma.eta);
    let mut acc = 0.0;
    for p in 0..n {
        let low = sum1(n, |i| g[i][p] * xi[i]);
        for q in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let rw = dtot[k][p][q][l] - dtot[l][p][q][k]
                        + sum1(n, |w| tot[p][k][w] * tot[w][q][l] - tot[p][l][w] * tot[w][q][k]);
                    acc += low * rw * eta[q] * xi[k] * eta[l];
                }
            }
        }
    }
    acc
}

/// Result of a randomized supremum scan of one criterion.
#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub tag: CriterionTag,
    /// Largest value seen over all sampled `(point, plane)` pairs.
    pub supremum: f64,
    /// Chart coordinates realizing the supremum.
    pub worst_point: V3,
    /// Plane basis realizing the supremum.
    pub worst_plane: TwoPlane,
    pub points: usize,
    pub planes_per_point: usize,
    /// True when the supremum clears zero by [`NEGATIVITY_MARGIN`].
    pub negative: bool,
}

fn sample_chart_point<R: Rng>(m: &ManifoldModel, rng: &mut R) -> V3 {
    if m.is_torus() {
        let n = m.dim();
        v3(|i| if i < n { rng.gen::<f64>() } else { 0.0 })
    } else {
        // Rejection sampling of the fundamental octagon inside its vertex
        // circle; acceptance is about one half.
        let r = octagon::vertex_radius();
        loop {
            let zx = rng.gen_range(-r..r);
            let zy = rng.gen_range(-r..r);
            if octagon::contains(c(zx, zy)) {
                return [zx, zy, 0.0];
            }
        }
    }
}

fn sample_plane<R: Rng>(m: &ManifoldModel, x: &ChartPoint, rng: &mut R) -> TwoPlane {
    let n = m.dim();
    loop {
        let u = v3(|i| if i < n { rng.gen_range(-1.0_f64..1.0) } else { 0.0 });
        let v = v3(|i| if i < n { rng.gen_range(-1.0_f64..1.0) } else { 0.0 });
        if let Ok(sigma) = TwoPlane::new(m, x, &u, &v) {
            return sigma;
        }
    }
}

/// Scan the supremum of a criterion over `points` random chart points with
/// `planes` random tangent planes each.
///
/// Sampling is deterministic in `seed` and prefix-stable: each point draws
/// from its own counter-indexed stream, so enlarging `points` or `planes`
/// re-visits exactly the same earlier samples and the supremum can only grow.
pub fn scan_criterion(
    m: &ManifoldModel,
    field: Option<&ExternalField>,
    scale: f64,
    tag: CriterionTag,
    points: usize,
    planes: usize,
    seed: u64,
) -> Result<CriterionReport> {
    if points == 0 {
        return Err(Error::InvalidParameter {
            name: "points",
            why: "scan needs at least one chart point".into(),
        });
    }
    if planes == 0 {
        return Err(Error::InvalidParameter {
            name: "planes",
            why: "scan needs at least one plane per point".into(),
        });
    }
    let mut supremum = f64::NEG_INFINITY;
    let mut worst_point = [0.0; 3];
    let mut worst_plane = None;
    for i in 0..points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let coords = sample_chart_point(m, &mut rng);
        let x = ChartPoint::new(*m, coords)?;
        for _ in 0..planes {
            let sigma = sample_plane(m, &x, &mut rng);
            let value = evaluate_criterion(m, field, scale, &x, &sigma, tag);
            if value > supremum {
                supremum = value;
                worst_point = coords;
                worst_plane = Some(sigma);
            }
        }
    }
    Ok(CriterionReport {
        tag,
        supremum,
        worst_point,
        worst_plane: worst_plane.expect("at least one sample"),
        points,
        planes_per_point: planes,
        negative: supremum < -NEGATIVITY_MARGIN,
    })
}
