//! Planar block geometry: shapes, poses, convex-polygon predicates and
//! contact extraction.
//!
//! Every block in this crate is a convex quadrilateral (square or isosceles
//! trapezoid), so polygons are stored as fixed `[Vec2; 4]` arrays. Functions
//! that must also handle obstacle squares or the floor take `&[Vec2]`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Max gap and max angular deviation for two edges to count as mated.
/// Also the penetration depth below which two polygons are "touching".
pub const CONTACT_TOL: f64 = 1e-6;
/// Minimum overlap length for a mated edge pair to produce a contact.
pub const CONTACT_MIN_LENGTH: f64 = 1e-4;
/// Boundary tolerance for point containment.
pub const POINT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub z: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, z: 0.0 };

    pub const fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.z * o.z
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.z - self.z * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.z / n)
    }

    /// Counter-clockwise quarter turn.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.z, self.x)
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.z, s * self.x + c * self.z)
    }

    pub fn angle(self) -> f64 {
        self.z.atan2(self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.z + o.z)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.z - o.z)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.z * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.z)
    }
}

/// A block's world-frame outline.
pub type Quad = [Vec2; 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Trapezoid,
}

/// Shape descriptor as it appears in task files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShapeSpec {
    Square { side: f64 },
    Trapezoid { bottom: f64, top: f64, height: f64 },
}

impl ShapeSpec {
    pub const UNIT_SQUARE: ShapeSpec = ShapeSpec::Square { side: 1.0 };
    pub const DEFAULT_TRAPEZOID: ShapeSpec = ShapeSpec::Trapezoid {
        bottom: 1.25,
        top: 0.75,
        height: 1.0,
    };

    pub fn kind(&self) -> ShapeKind {
        match self {
            ShapeSpec::Square { .. } => ShapeKind::Square,
            ShapeSpec::Trapezoid { .. } => ShapeKind::Trapezoid,
        }
    }
}

/// A convex block outline in its local frame: counter-clockwise, centroid at
/// the origin. Vertex 0 is the bottom-left corner and edge `i` runs from
/// vertex `i` to vertex `i + 1`, so edge 0 is the base.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ShapeSpec", try_from = "ShapeSpec")]
pub struct Shape {
    spec: ShapeSpec,
    vertices: Quad,
    area: f64,
}

impl From<Shape> for ShapeSpec {
    fn from(s: Shape) -> Self {
        s.spec
    }
}

impl TryFrom<ShapeSpec> for Shape {
    type Error = Error;
    fn try_from(spec: ShapeSpec) -> Result<Self> {
        Shape::new(spec)
    }
}

impl Shape {
    /// Builds the canonical polygon for a shape descriptor.
    pub fn new(spec: ShapeSpec) -> Result<Self> {
        let vertices = match spec {
            ShapeSpec::Square { side } => {
                if !(side > 0.0 && side.is_finite()) {
                    return Err(Error::InvalidShape(format!("square side must be positive, got {side}")));
                }
                let h = side / 2.0;
                [Vec2::new(-h, -h), Vec2::new(h, -h), Vec2::new(h, h), Vec2::new(-h, h)]
            }
            ShapeSpec::Trapezoid { bottom, top, height } => {
                for (name, v) in [("bottom", bottom), ("top", top), ("height", height)] {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(Error::InvalidShape(format!("trapezoid {name} must be positive, got {v}")));
                    }
                }
                // centroid height above the base
                let zc = height / 3.0 * (bottom + 2.0 * top) / (bottom + top);
                [
                    Vec2::new(-bottom / 2.0, -zc),
                    Vec2::new(bottom / 2.0, -zc),
                    Vec2::new(top / 2.0, height - zc),
                    Vec2::new(-top / 2.0, height - zc),
                ]
            }
        };
        Ok(Self {
            spec,
            area: polygon_area(&vertices),
            vertices,
        })
    }

    pub fn square(side: f64) -> Result<Self> {
        Self::new(ShapeSpec::Square { side })
    }

    pub fn trapezoid(bottom: f64, top: f64, height: f64) -> Result<Self> {
        Self::new(ShapeSpec::Trapezoid { bottom, top, height })
    }

    pub fn unit_square() -> Self {
        Self::new(ShapeSpec::UNIT_SQUARE).expect("valid")
    }

    pub fn default_trapezoid() -> Self {
        Self::new(ShapeSpec::DEFAULT_TRAPEZOID).expect("valid")
    }

    pub fn spec(&self) -> ShapeSpec {
        self.spec
    }

    pub fn kind(&self) -> ShapeKind {
        self.spec.kind()
    }

    pub fn vertices(&self) -> &Quad {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    /// Characteristic length used to normalize placement offsets.
    pub fn block_size(&self) -> f64 {
        self.area.sqrt()
    }

    /// Order of the rotational symmetry group of the outline.
    pub fn symmetry_order(&self) -> u32 {
        match self.spec {
            ShapeSpec::Square { .. } => 4,
            ShapeSpec::Trapezoid { bottom, top, height } => {
                if bottom == top && top == height {
                    4
                } else if bottom == top {
                    2
                } else {
                    1
                }
            }
        }
    }

    /// Maps an orientation to the representative in `[-π/k, π/k)` where `k`
    /// is the symmetry order, so equal outlines share one pose.
    pub fn canonical_theta(&self, theta: f64) -> f64 {
        let period = 2.0 * PI / self.symmetry_order() as f64;
        let half = period / 2.0;
        let mut t = (theta + half).rem_euclid(period) - half;
        if t >= half {
            t -= period;
        }
        t
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t >= PI {
        t - 2.0 * PI
    } else {
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, z: f64, theta: f64) -> Self {
        Self {
            x,
            z,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.z)
    }
}

/// A shape at a pose. `shape_id` indexes the owning task's shape list and is
/// only used for canonical ordering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub shape_id: usize,
    pub shape: Shape,
    pub pose: Pose,
}

impl Placement {
    pub fn new(shape_id: usize, shape: Shape, pose: Pose) -> Self {
        Self { shape_id, shape, pose }
    }

    pub fn polygon(&self) -> Quad {
        world_polygon(self)
    }
}

/// Rotates each local vertex by the pose angle, then translates.
pub fn world_polygon(p: &Placement) -> Quad {
    let (s, c) = p.pose.theta.sin_cos();
    p.shape.vertices.map(|v| Vec2::new(c * v.x - s * v.z + p.pose.x, s * v.x + c * v.z + p.pose.z))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionSpace {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl ConstructionSpace {
    pub const BENCHMARK: ConstructionSpace = ConstructionSpace {
        x_min: -5.0,
        x_max: 5.0,
        z_min: 0.0,
        z_max: 10.0,
    };

    pub fn contains_point(&self, p: Vec2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.z >= self.z_min && p.z <= self.z_max
    }
}

impl Default for ConstructionSpace {
    fn default() -> Self {
        Self::BENCHMARK
    }
}

pub fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum::<f64>() / 2.0
}

pub fn polygon_centroid(poly: &[Vec2]) -> Vec2 {
    let n = poly.len();
    let mut a = 0.0;
    let mut c = Vec2::ZERO;
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        let w = p.cross(q);
        a += w;
        c = c + (p + q) * w;
    }
    c * (1.0 / (3.0 * a))
}

fn project(poly: &[Vec2], axis: Vec2) -> (f64, f64) {
    poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        let d = v.dot(axis);
        (lo.min(d), hi.max(d))
    })
}

/// Smallest projection overlap over the edge normals of both polygons.
/// Negative means a separating gap, zero means touching.
fn min_penetration(a: &[Vec2], b: &[Vec2]) -> f64 {
    let mut best = f64::INFINITY;
    for poly in [a, b] {
        let n = poly.len();
        for i in 0..n {
            let axis = (poly[(i + 1) % n] - poly[i]).perp().normalized();
            let (a0, a1) = project(a, axis);
            let (b0, b1) = project(b, axis);
            best = best.min(a1.min(b1) - a0.max(b0));
        }
    }
    best
}

/// True iff the convex polygons share interior area. Penetration up to
/// [`CONTACT_TOL`] counts as touching.
pub fn polygons_overlap(a: &[Vec2], b: &[Vec2]) -> bool {
    min_penetration(a, b) > CONTACT_TOL
}

/// Inclusive containment test for a counter-clockwise convex polygon.
pub fn point_in_polygon(pt: Vec2, poly: &[Vec2]) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let e = b - a;
        e.cross(pt - a) >= -POINT_TOL * e.norm()
    })
}

/// Strict interior test: points within `eps` of an edge are outside.
pub fn point_strictly_inside(pt: Vec2, poly: &[Vec2], eps: f64) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let e = b - a;
        e.cross(pt - a) > eps * e.norm()
    })
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let e = b - a;
    let len2 = e.dot(e);
    let t = if len2 > 0.0 { ((p - a).dot(e) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + e * t)).norm()
}

/// Euclidean distance between convex polygons; zero when they touch or
/// intersect.
pub fn polygon_distance(a: &[Vec2], b: &[Vec2]) -> f64 {
    if min_penetration(a, b) >= 0.0 {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (p, q) in [(a, b), (b, a)] {
        let n = q.len();
        for v in p {
            for i in 0..n {
                best = best.min(point_segment_distance(*v, q[i], q[(i + 1) % n]));
            }
        }
    }
    best
}

/// A rigid body participating in contact: the fixed floor or a placed block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Body {
    Floor,
    Block(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactSegment {
    pub block_a: Body,
    pub block_b: Body,
    pub endpoints: [Vec2; 2],
    /// Unit normal pointing from `block_a` into `block_b`.
    pub normal: Vec2,
}

impl fmt::Display for Body {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Body::Floor => write!(f, "floor"),
            Body::Block(i) => write!(f, "block {i}"),
        }
    }
}

/// Overlap of edge `b0→b1` with edge `a0→a1`, provided the edges are
/// anti-parallel and collinear within tolerance.
fn mated_overlap(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> Option<[Vec2; 2]> {
    let ea = a1 - a0;
    let la = ea.norm();
    let ta = ea * (1.0 / la);
    let tb = (b1 - b0).normalized();
    if ta.dot(tb) >= 0.0 || ta.cross(tb).abs() > CONTACT_TOL {
        return None;
    }
    // outward normal of a CCW edge
    let na = Vec2::new(ta.z, -ta.x);
    if (b0 - a0).dot(na).abs() > CONTACT_TOL || (b1 - a0).dot(na).abs() > CONTACT_TOL {
        return None;
    }
    let s0 = (b0 - a0).dot(ta);
    let s1 = (b1 - a0).dot(ta);
    let lo = s0.min(s1).max(0.0);
    let hi = s0.max(s1).min(la);
    if hi - lo < CONTACT_MIN_LENGTH {
        return None;
    }
    Some([a0 + ta * lo, a0 + ta * hi])
}

/// Contacts between the floor and blocks and between pairs of blocks.
///
/// One segment per mated edge pair; the normal points from the
/// lower-indexed body into the higher one, the floor being lowest.
pub fn contact_segments(assembly: &[Placement], space: &ConstructionSpace) -> Vec<ContactSegment> {
    let polys: Vec<Quad> = assembly.iter().map(world_polygon).collect();
    contact_segments_of(&polys, space)
}

pub fn contact_segments_of(polys: &[Quad], space: &ConstructionSpace) -> Vec<ContactSegment> {
    let floor_a = Vec2::new(space.x_max, space.z_min);
    let floor_b = Vec2::new(space.x_min, space.z_min);
    let mut out = Vec::new();
    for (j, pj) in polys.iter().enumerate() {
        for k in 0..4 {
            // the floor's top edge runs right-to-left so its outward normal is +z
            if let Some(endpoints) = mated_overlap(floor_a, floor_b, pj[k], pj[(k + 1) % 4]) {
                out.push(ContactSegment {
                    block_a: Body::Floor,
                    block_b: Body::Block(j),
                    endpoints,
                    normal: Vec2::new(0.0, 1.0),
                });
            }
        }
    }
    for (i, pi) in polys.iter().enumerate() {
        for (j, pj) in polys.iter().enumerate().skip(i + 1) {
            if min_penetration(pi, pj) < -CONTACT_TOL {
                continue;
            }
            for ka in 0..4 {
                let (a0, a1) = (pi[ka], pi[(ka + 1) % 4]);
                for kb in 0..4 {
                    if let Some(endpoints) = mated_overlap(a0, a1, pj[kb], pj[(kb + 1) % 4]) {
                        let t = (a1 - a0).normalized();
                        out.push(ContactSegment {
                            block_a: Body::Block(i),
                            block_b: Body::Block(j),
                            endpoints,
                            normal: Vec2::new(t.z, -t.x),
                        });
                    }
                }
            }
        }
    }
    out
}
