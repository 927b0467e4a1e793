//! Geometry of camera footprints on the unit sphere.
//!
//! A [`SphericalRect`] is the region of the sphere seen by a pinhole camera
//! with horizontal/vertical field of view `alpha`/`beta` looking along its
//! center direction. For fields of view below 180° it is the intersection of
//! four half-spaces through the origin, so it is geodesically convex and the
//! intersection of two rects is a convex spherical polygon bounded by
//! great-circle arcs.
//!
//! World frame: `+z` forward (longitude 0), `+x` right (longitude +90°),
//! `+y` up (latitude +90°).

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, camera_to_world, Mat3, Vec3};

/// Chordal distance under which two polygon vertices are considered equal.
pub const VERTEX_DEDUP_TOL: f64 = 1e-9;
/// Slack used in the half-space tests when collecting intersection vertices.
pub const MEMBERSHIP_EPS: f64 = 1e-9;

/// Reduces a longitude in degrees into `[-180, 180)`.
pub fn wrap_longitude(theta_deg: f64) -> f64 {
    if (-180.0..180.0).contains(&theta_deg) {
        return theta_deg;
    }
    let t = (theta_deg + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if t >= 180.0 {
        t - 360.0
    } else {
        t
    }
}

/// Longitude/latitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalDirection {
    theta: f64,
    phi: f64,
}

impl SphericalDirection {
    /// Builds a direction, wrapping `theta` into `[-180, 180)`. Latitudes
    /// outside `[-90, 90]` are rejected.
    pub fn new(theta_deg: f64, phi_deg: f64) -> Result<Self> {
        if !theta_deg.is_finite() || !phi_deg.is_finite() {
            return Err(invalid("direction angles must be finite"));
        }
        if phi_deg.abs() > 90.0 {
            return Err(invalid(format!("latitude {phi_deg}° outside [-90, 90]")));
        }
        Ok(Self {
            theta: wrap_longitude(theta_deg),
            phi: phi_deg,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn to_vector(&self) -> UnitVector3 {
        dir_to_vec(*self)
    }
}

/// A point on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitVector3 {
    /// Normalizes `(x, y, z)`. Returns `None` for (near) zero vectors.
    pub fn normalize(x: f64, y: f64, z: f64) -> Option<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !(n > 1e-300) || !n.is_finite() {
            return None;
        }
        Some(Self {
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub(crate) fn from_array(v: Vec3) -> Option<Self> {
        Self::normalize(v[0], v[1], v[2])
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &UnitVector3) -> f64 {
        linalg::dot(self.as_array(), other.as_array())
    }

    /// Great-circle distance in degrees.
    pub fn angle_to(&self, other: &UnitVector3) -> f64 {
        let c = linalg::norm(linalg::cross(self.as_array(), other.as_array()));
        c.atan2(self.dot(other)).to_degrees()
    }

    pub fn antipode(&self) -> Self {
        Self {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

pub fn dir_to_vec(d: SphericalDirection) -> UnitVector3 {
    let (st, ct) = d.theta.to_radians().sin_cos();
    let (sp, cp) = d.phi.to_radians().sin_cos();
    UnitVector3 {
        x: cp * st,
        y: sp,
        z: cp * ct,
    }
}

/// Inverse of [`dir_to_vec`]. At the poles the longitude is 0 by convention.
pub fn vec_to_dir(v: UnitVector3) -> SphericalDirection {
    let horiz = v.x.hypot(v.z);
    let phi = v.y.atan2(horiz).to_degrees();
    let theta = if horiz == 0.0 {
        0.0
    } else {
        wrap_longitude(v.x.atan2(v.z).to_degrees())
    };
    SphericalDirection { theta, phi }
}

/// Footprint of a pinhole-camera frustum on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalRect {
    center: SphericalDirection,
    alpha: f64,
    beta: f64,
}

impl SphericalRect {
    /// `alpha` and `beta` are the horizontal and vertical FOV in degrees,
    /// both strictly inside `(0, 180)`.
    pub fn new(center: SphericalDirection, alpha_deg: f64, beta_deg: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha_deg), ("beta", beta_deg)] {
            if !(v > 0.0 && v < 180.0) {
                return Err(invalid(format!("{name} = {v}° must lie in (0, 180)")));
            }
        }
        Ok(Self {
            center,
            alpha: alpha_deg,
            beta: beta_deg,
        })
    }

    pub fn center(&self) -> SphericalDirection {
        self.center
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn frame(&self) -> RectFrame {
        RectFrame::new(self)
    }

    pub fn area(&self) -> f64 {
        rect_area(self)
    }

    pub fn contains(&self, v: &UnitVector3, eps: f64) -> bool {
        rect_contains(self, v, eps)
    }
}

/// Camera frame of a rect plus its boundary-plane normals, in world coordinates.
struct RectFrame {
    rot: Mat3,
    tan_half_alpha: f64,
    tan_half_beta: f64,
}

impl RectFrame {
    fn new(r: &SphericalRect) -> Self {
        Self {
            rot: camera_to_world(r.center.theta, r.center.phi),
            tan_half_alpha: (r.alpha.to_radians() / 2.0).tan(),
            tan_half_beta: (r.beta.to_radians() / 2.0).tan(),
        }
    }

    fn contains(&self, v: Vec3, eps: f64) -> bool {
        let c = self.rot.tmul_vec(v);
        c[0].abs() <= c[2] * self.tan_half_alpha + eps && c[1].abs() <= c[2] * self.tan_half_beta + eps
    }

    /// Inward-pointing normals of the four boundary planes (left, bottom, right, top).
    fn normals(&self) -> [Vec3; 4] {
        let (ta, tb) = (self.tan_half_alpha, self.tan_half_beta);
        [
            [1.0, 0.0, ta],
            [0.0, 1.0, tb],
            [-1.0, 0.0, ta],
            [0.0, -1.0, tb],
        ]
        .map(|n| self.rot.mul_vec(n))
    }

    fn corners(&self) -> [Vec3; 4] {
        let (ta, tb) = (self.tan_half_alpha, self.tan_half_beta);
        [[-ta, -tb, 1.0], [ta, -tb, 1.0], [ta, tb, 1.0], [-ta, tb, 1.0]].map(|c| {
            let w = self.rot.mul_vec(c);
            linalg::scale(w, 1.0 / linalg::norm(w))
        })
    }
}

pub fn rect_contains(r: &SphericalRect, v: &UnitVector3, eps: f64) -> bool {
    r.frame().contains(v.as_array(), eps)
}

/// Closed-form solid angle of a rect in steradians.
pub fn rect_area(r: &SphericalRect) -> f64 {
    let s = (r.alpha.to_radians() / 2.0).sin() * (r.beta.to_radians() / 2.0).sin();
    4.0 * (-s).acos() - 2.0 * PI
}

/// Convex spherical polygon, vertices counterclockwise seen from outside the sphere.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SphericalPolygon {
    vertices: Vec<UnitVector3>,
}

impl SphericalPolygon {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Wraps an ordered vertex list. Only the vertex count is checked here;
    /// convexity is verified when the area is computed.
    pub fn from_vertices(vertices: Vec<UnitVector3>) -> Result<Self> {
        if !vertices.is_empty() && vertices.len() < 3 {
            return Err(invalid(format!(
                "a spherical polygon needs 0 or at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[UnitVector3] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> Result<f64> {
        polygon_area_girard(self)
    }
}

/// Result of intersecting two rects.
#[derive(Debug, Clone, PartialEq)]
pub struct RectIntersection {
    pub polygon: SphericalPolygon,
    /// The rects touch along an edge or at a point but enclose no area.
    pub degenerate: bool,
}

impl RectIntersection {
    pub fn area(&self) -> f64 {
        if self.polygon.is_empty() {
            return 0.0;
        }
        // polygons built by rect_intersection are convex by construction
        polygon_area_girard(&self.polygon).unwrap_or(0.0)
    }
}

pub fn rect_intersection(a: &SphericalRect, b: &SphericalRect) -> RectIntersection {
    let fa = a.frame();
    let fb = b.frame();
    let in_both = |v: Vec3| fa.contains(v, MEMBERSHIP_EPS) && fb.contains(v, MEMBERSHIP_EPS);

    let mut points: Vec<Vec3> = Vec::with_capacity(16);
    let mut push = |p: Vec3| {
        if !points
            .iter()
            .any(|q| linalg::norm(linalg::sub(*q, p)) < VERTEX_DEDUP_TOL)
        {
            points.push(p);
        }
    };

    for c in fa.corners() {
        if fb.contains(c, MEMBERSHIP_EPS) {
            push(c);
        }
    }
    for c in fb.corners() {
        if fa.contains(c, MEMBERSHIP_EPS) {
            push(c);
        }
    }
    for na in fa.normals() {
        for nb in fb.normals() {
            let d = linalg::cross(na, nb);
            let len = linalg::norm(d);
            if len < 1e-12 {
                continue;
            }
            let d = linalg::scale(d, 1.0 / len);
            for p in [d, linalg::scale(d, -1.0)] {
                if in_both(p) {
                    push(p);
                }
            }
        }
    }

    match points.len() {
        0 => RectIntersection {
            polygon: SphericalPolygon::empty(),
            degenerate: false,
        },
        1 | 2 => RectIntersection {
            polygon: SphericalPolygon::empty(),
            degenerate: true,
        },
        _ if on_one_great_circle(&points) => RectIntersection {
            polygon: SphericalPolygon::empty(),
            degenerate: true,
        },
        _ => RectIntersection {
            polygon: SphericalPolygon {
                vertices: sort_counterclockwise(points),
            },
            degenerate: false,
        },
    }
}

fn on_one_great_circle(points: &[Vec3]) -> bool {
    let p0 = points[0];
    let normal = points[1..]
        .iter()
        .map(|&p| linalg::cross(p0, p))
        .find(|n| linalg::norm(*n) > 1e-9);
    match normal {
        None => true,
        Some(n) => {
            let n = linalg::scale(n, 1.0 / linalg::norm(n));
            points.iter().all(|&p| linalg::dot(n, p).abs() < 1e-9)
        }
    }
}

fn sort_counterclockwise(points: Vec<Vec3>) -> Vec<UnitVector3> {
    let sum = points.iter().fold([0.0; 3], |acc, &p| linalg::add(acc, p));
    let c = linalg::scale(sum, 1.0 / linalg::norm(sum));
    let e1 = {
        let p = points[0];
        let t = linalg::sub(p, linalg::scale(c, linalg::dot(p, c)));
        linalg::scale(t, 1.0 / linalg::norm(t))
    };
    let e2 = linalg::cross(c, e1);
    let mut keyed: Vec<(f64, Vec3)> = points
        .into_iter()
        .map(|p| (linalg::dot(p, e2).atan2(linalg::dot(p, e1)), p))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed
        .into_iter()
        .map(|(_, p)| UnitVector3 {
            x: p[0],
            y: p[1],
            z: p[2],
        })
        .collect()
}

/// Area of a convex polygon from its interior angles: `Σω − (n−2)π`.
///
/// The interior angle at a vertex is the dihedral angle between the
/// great-circle planes of its two edges, measured inside the polygon.
pub fn polygon_area_girard(p: &SphericalPolygon) -> Result<f64> {
    let n = p.vertices.len();
    if n == 0 {
        return Ok(0.0);
    }
    if n < 3 {
        return Err(invalid("polygon with fewer than 3 vertices"));
    }
    let mut angle_sum = 0.0;
    for i in 0..n {
        let v = p.vertices[i].as_array();
        let prev = p.vertices[(i + n - 1) % n].as_array();
        let next = p.vertices[(i + 1) % n].as_array();
        let to_prev = tangent_towards(v, prev).ok_or(Error::NonConvexPolygon { vertex: i })?;
        let to_next = tangent_towards(v, next).ok_or(Error::NonConvexPolygon { vertex: i })?;
        let sin = linalg::dot(v, linalg::cross(to_next, to_prev));
        let cos = linalg::dot(to_next, to_prev);
        // collinear vertices give sin ≈ 0; anything clearly negative is a reflex angle
        if sin < -1e-9 {
            return Err(Error::NonConvexPolygon { vertex: i });
        }
        angle_sum += sin.max(0.0).atan2(cos);
    }
    Ok(angle_sum - (n as f64 - 2.0) * PI)
}

/// Unit tangent at `at` along the great circle heading to `to`.
fn tangent_towards(at: Vec3, to: Vec3) -> Option<Vec3> {
    let t = linalg::sub(to, linalg::scale(at, linalg::dot(at, to)));
    let len = linalg::norm(t);
    (len > 1e-15).then(|| linalg::scale(t, 1.0 / len))
}

/// Area of `a ∩ b` in steradians; degenerate contact counts as zero.
pub fn intersection_area(a: &SphericalRect, b: &SphericalRect) -> f64 {
    let area = rect_intersection(a, b).area();
    area.clamp(0.0, rect_area(a).min(rect_area(b)))
}

/// Fraction of `init` covered by `adj`.
pub fn sph_overlap(adj: &SphericalRect, init: &SphericalRect) -> f64 {
    if adj == init {
        return 1.0;
    }
    (intersection_area(adj, init) / rect_area(init)).clamp(0.0, 1.0)
}

/// Intersection over union of two rects.
pub fn sph_iou(adj: &SphericalRect, init: &SphericalRect) -> f64 {
    if adj == init {
        return 1.0;
    }
    // Fixed argument order keeps the result exactly symmetric.
    let key = |r: &SphericalRect| [r.center.theta, r.center.phi, r.alpha, r.beta];
    let (a, b) = if key(adj).iter().zip(key(init)).map(|(x, y)| x.total_cmp(&y)).find(|o| o.is_ne())
        == Some(std::cmp::Ordering::Greater)
    {
        (init, adj)
    } else {
        (adj, init)
    };
    let inter = intersection_area(a, b);
    let union = rect_area(a) + rect_area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Uniform sample on the unit sphere (normalized Gaussian triple).
pub fn sample_sphere<R: rand::Rng + ?Sized>(rng: &mut R) -> UnitVector3 {
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let y: f64 = StandardNormal.sample(rng);
        let z: f64 = StandardNormal.sample(rng);
        if let Some(v) = UnitVector3::normalize(x, y, z) {
            return v;
        }
    }
}

/// Monte-Carlo estimate of the area of `region` from `n` uniform sphere
/// samples. Deterministic for a given seed.
pub fn mc_area_estimate<F>(region: F, n: usize, seed: u64) -> f64
where
    F: Fn(&UnitVector3) -> bool,
{
    assert!(n >= 1, "sample count must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..n).filter(|_| region(&sample_sphere(&mut rng))).count();
    hits as f64 / n as f64 * 4.0 * PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dir(t: f64, p: f64) -> SphericalDirection {
        SphericalDirection::new(t, p).unwrap()
    }

    fn rect(t: f64, p: f64, a: f64, b: f64) -> SphericalRect {
        SphericalRect::new(dir(t, p), a, b).unwrap()
    }

    #[test]
    fn dir_to_vec_axes() {
        let v = dir_to_vec(dir(0.0, 0.0));
        assert_abs_diff_eq!(v.z, 1.0, epsilon = 1e-15);
        let v = dir_to_vec(dir(90.0, 0.0));
        assert_abs_diff_eq!(v.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.z, 0.0, epsilon = 1e-15);
        let v = dir_to_vec(dir(0.0, 90.0));
        assert_abs_diff_eq!(v.y, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn vec_to_dir_conventions() {
        let d = vec_to_dir(UnitVector3 { x: 0.0, y: 0.0, z: 1.0 });
        assert_eq!((d.theta(), d.phi()), (0.0, 0.0));
        let d = vec_to_dir(UnitVector3 { x: 0.0, y: 0.0, z: -1.0 });
        assert_eq!((d.theta(), d.phi()), (-180.0, 0.0));
        let d = vec_to_dir(UnitVector3 { x: -0.0, y: 0.0, z: -1.0 });
        assert_eq!(d.theta(), -180.0);
        let d = vec_to_dir(UnitVector3 { x: 0.0, y: -1.0, z: 0.0 });
        assert_eq!((d.theta(), d.phi()), (0.0, -90.0));
    }

    #[test]
    fn direction_validation() {
        assert!(SphericalDirection::new(0.0, 90.5).is_err());
        assert!(SphericalDirection::new(f64::NAN, 0.0).is_err());
        assert_eq!(dir(185.0, 0.0).theta(), -175.0);
        assert_eq!(dir(180.0, 0.0).theta(), -180.0);
        assert_eq!(dir(-1e-18, 0.0).theta(), -1e-18);
        assert_eq!(dir(-12.3, 0.0).theta(), -12.3);
        assert_eq!(wrap_longitude(-540.0), -180.0);
        assert_eq!(wrap_longitude(-360.0 - 1e-18), 0.0);
    }

    #[test]
    fn rect_rejects_out_of_range_fov() {
        assert!(SphericalRect::new(dir(0.0, 0.0), 180.0, 60.0).is_err());
        assert!(SphericalRect::new(dir(0.0, 0.0), 60.0, 0.0).is_err());
    }

    #[test]
    fn contains_boundary_on_equator() {
        let r = rect(0.0, 0.0, 60.0, 60.0);
        assert!(rect_contains(&r, &dir(0.0, 0.0).to_vector(), 0.0));
        assert!(!rect_contains(&r, &dir(0.0, 0.0).to_vector().antipode(), 0.0));
        assert!(rect_contains(&r, &dir(29.99, 0.0).to_vector(), 0.0));
        assert!(!rect_contains(&r, &dir(30.01, 0.0).to_vector(), 0.0));
    }

    #[test]
    fn area_closed_form_values() {
        assert_abs_diff_eq!(rect_area(&rect(0.0, 0.0, 90.0, 90.0)), 2.0 * PI / 3.0, epsilon = 1e-12);
        let expected = 4.0 * (-0.25f64).acos() - 2.0 * PI;
        assert_abs_diff_eq!(rect_area(&rect(0.0, 0.0, 60.0, 60.0)), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 1.010721020568, epsilon = 1e-11);
        let mc = mc_area_estimate(|v| rect(0.0, 0.0, 60.0, 60.0).contains(v, 0.0), 1_000_000, 21);
        assert!((mc / expected - 1.0).abs() < 0.02);
        // small-angle limit α·β
        let a = 0.01f64;
        let r = rect(0.0, 0.0, a.to_degrees(), a.to_degrees());
        assert!((rect_area(&r) / (a * a) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn octant_triangle_area() {
        let p = SphericalPolygon::from_vertices(vec![
            UnitVector3 { x: 1.0, y: 0.0, z: 0.0 },
            UnitVector3 { x: 0.0, y: 1.0, z: 0.0 },
            UnitVector3 { x: 0.0, y: 0.0, z: 1.0 },
        ])
        .unwrap();
        assert_abs_diff_eq!(polygon_area_girard(&p).unwrap(), PI / 2.0, epsilon = 1e-15);
        assert_eq!(polygon_area_girard(&SphericalPolygon::empty()).unwrap(), 0.0);
    }

    #[test]
    fn clockwise_or_reflex_polygon_is_rejected() {
        // same octant triangle traversed clockwise
        let p = SphericalPolygon::from_vertices(vec![
            UnitVector3 { x: 0.0, y: 0.0, z: 1.0 },
            UnitVector3 { x: 0.0, y: 1.0, z: 0.0 },
            UnitVector3 { x: 1.0, y: 0.0, z: 0.0 },
        ])
        .unwrap();
        assert!(matches!(polygon_area_girard(&p), Err(Error::NonConvexPolygon { .. })));

        // bow-tie ordering of a square around the forward axis
        let sq = |x: f64, y: f64| UnitVector3::normalize(x, y, 1.0).unwrap();
        let p = SphericalPolygon::from_vertices(vec![
            sq(-0.3, -0.3),
            sq(0.3, 0.3),
            sq(0.3, -0.3),
            sq(-0.3, 0.3),
        ])
        .unwrap();
        assert!(polygon_area_girard(&p).is_err());
        assert!(SphericalPolygon::from_vertices(vec![sq(0.0, 0.0), sq(0.1, 0.0)]).is_err());
    }

    #[test]
    fn self_intersection_reproduces_closed_form() {
        let r = rect(12.0, -7.0, 75.14, 60.0);
        let inter = rect_intersection(&r, &r);
        assert_eq!(inter.polygon.len(), 4);
        assert!(!inter.degenerate);
        assert_abs_diff_eq!(inter.area(), rect_area(&r), epsilon = 1e-9);
        assert_abs_diff_eq!(sph_overlap(&r, &r), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sph_iou(&r, &r), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn disjoint_rects() {
        let a = rect(0.0, 0.0, 40.0, 40.0);
        let b = rect(180.0, 0.0, 40.0, 40.0);
        let inter = rect_intersection(&a, &b);
        assert!(inter.polygon.is_empty());
        assert!(!inter.degenerate);
        assert_eq!(sph_overlap(&a, &b), 0.0);
        assert_eq!(sph_iou(&a, &b), 0.0);
    }

    #[test]
    fn shared_edge_is_degenerate() {
        // two 40° wide rects side by side on the equator share the meridian plane at 20°
        let a = rect(0.0, 0.0, 40.0, 40.0);
        let b = rect(40.0, 0.0, 40.0, 40.0);
        let inter = rect_intersection(&a, &b);
        assert!(inter.degenerate, "{inter:?}");
        assert_eq!(inter.area(), 0.0);
        assert_eq!(sph_iou(&a, &b), 0.0);
    }

    #[test]
    fn nested_rect_intersection_is_inner_rect() {
        let outer = rect(0.0, 0.0, 90.0, 80.0);
        let inner = rect(5.0, 3.0, 30.0, 20.0);
        let area = intersection_area(&outer, &inner);
        assert_abs_diff_eq!(area, rect_area(&inner), epsilon = 1e-9);
        assert_abs_diff_eq!(sph_overlap(&outer, &inner), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn shifted_intersection_matches_monte_carlo() {
        let a = rect(0.0, 0.0, 75.14, 60.0);
        let b = rect(5.0, 0.0, 75.14, 60.0);
        let inter = rect_intersection(&a, &b);
        assert!(!inter.polygon.is_empty());
        let mc = mc_area_estimate(|v| a.contains(v, 0.0) && b.contains(v, 0.0), 1_000_000, 7);
        assert!((inter.area() - mc).abs() / mc < 0.02, "{} vs {mc}", inter.area());

        let c = rect(25.0, 0.0, 75.14, 60.0);
        let ov = sph_overlap(&c, &a);
        assert!(ov > 0.0 && ov < 1.0);
        let mc_ratio = mc_area_estimate(|v| a.contains(v, 0.0) && c.contains(v, 0.0), 1_000_000, 8)
            / mc_area_estimate(|v| a.contains(v, 0.0), 1_000_000, 8);
        assert!((ov - mc_ratio).abs() / mc_ratio < 0.02);
    }

    #[test]
    fn monte_carlo_known_areas() {
        assert_eq!(mc_area_estimate(|_| true, 1000, 3), 4.0 * PI);
        let hemi = mc_area_estimate(|v| v.z > 0.0, 1_000_000, 11);
        assert!((hemi / (2.0 * PI) - 1.0).abs() < 0.01);
        let r = rect(0.0, 0.0, 90.0, 90.0);
        let est = mc_area_estimate(|v| r.contains(v, 0.0), 1_000_000, 5);
        assert!((est / (2.0 * PI / 3.0) - 1.0).abs() < 0.02);
        assert_eq!(
            mc_area_estimate(|v| v.x > 0.2, 10_000, 99),
            mc_area_estimate(|v| v.x > 0.2, 10_000, 99)
        );
    }

    fn arb_rect() -> impl Strategy<Value = SphericalRect> {
        (-180.0..180.0f64, -80.0..80.0f64, 10.0..170.0f64, 10.0..170.0f64)
            .prop_map(|(t, p, a, b)| rect(t, p, a, b))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn roundtrip_direction(t in -180.0..180.0f64, p in -89.999..89.999f64) {
            let d = vec_to_dir(dir_to_vec(dir(t, p)));
            prop_assert!((d.phi() - p).abs() < 1e-10);
            prop_assert!(wrap_longitude(d.theta() - t).abs() < 1e-10);
        }

        #[test]
        fn area_increases_with_alpha(beta in 1.0..179.0f64, a0 in 1.0..170.0f64, step in 0.01..8.0f64) {
            let r0 = rect(0.0, 0.0, a0, beta);
            let r1 = rect(0.0, 0.0, a0 + step, beta);
            prop_assert!(rect_area(&r1) > rect_area(&r0));
            prop_assert!(rect_area(&r0) > 0.0 && rect_area(&r0) < 2.0 * PI);
        }

        #[test]
        fn intersection_bounded_and_consistent(a in arb_rect(), b in arb_rect()) {
            let inter = intersection_area(&a, &b);
            prop_assert!(inter <= rect_area(&a).min(rect_area(&b)) + 1e-12);
            let lhs = sph_overlap(&a, &b) * rect_area(&b);
            let rhs = sph_overlap(&b, &a) * rect_area(&a);
            prop_assert!((lhs - rhs).abs() < 1e-9);
            let iou = sph_iou(&a, &b);
            prop_assert!(iou <= sph_overlap(&a, &b).min(sph_overlap(&b, &a)) + 1e-12);
            prop_assert!((iou - sph_iou(&b, &a)).abs() < 1e-12);
        }

        #[test]
        fn girard_self_consistency(r in arb_rect()) {
            let p = rect_intersection(&r, &r).polygon;
            prop_assert!((polygon_area_girard(&p).unwrap() - rect_area(&r)).abs() < 1e-9);
        }
    }
}
