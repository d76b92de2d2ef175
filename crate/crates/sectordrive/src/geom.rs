//! Plane geometry shared by the scenario generator and the evaluators:
//! rigid transforms, oriented-rectangle overlap (separating axes), and
//! polygon containment.

use serde::{Deserialize, Serialize};

/// 2D point / vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

/// Oriented rectangle: center, heading of the long axis, and full extents.
#[derive(Debug, Clone, Copy)]
pub struct OrientedRect {
    pub center: Vec2,
    /// Heading of the length axis, radians, measured from +x counterclockwise.
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    pub fn corners(&self) -> [Vec2; 4] {
        let (s, c) = self.heading.sin_cos();
        let fwd = Vec2::new(c, s).scale(self.length / 2.0);
        let side = Vec2::new(-s, c).scale(self.width / 2.0);
        [
            self.center.add(fwd).add(side),
            self.center.add(fwd).sub(side),
            self.center.sub(fwd).sub(side),
            self.center.sub(fwd).add(side),
        ]
    }

    /// Exact overlap test via the separating axis theorem (4 candidate axes).
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let ca = self.corners();
        let cb = other.corners();
        let axes = [
            ca[1].sub(ca[0]),
            ca[3].sub(ca[0]),
            cb[1].sub(cb[0]),
            cb[3].sub(cb[0]),
        ];
        for axis in axes {
            let (mut amin, mut amax) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in ca {
                let d = p.dot(axis);
                amin = amin.min(d);
                amax = amax.max(d);
            }
            let (mut bmin, mut bmax) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in cb {
                let d = p.dot(axis);
                bmin = bmin.min(d);
                bmax = bmax.max(d);
            }
            if amax < bmin || bmax < amin {
                return false;
            }
        }
        true
    }
}

/// Transform a world point into the frame at `pose` (position + heading of
/// the +y forward axis). Output: x lateral (right positive), y forward.
pub fn world_to_frame(point: Vec2, origin: Vec2, heading: f64) -> Vec2 {
    let d = point.sub(origin);
    // Forward axis at `heading` from +x; lateral is clockwise-perpendicular.
    let (s, c) = heading.sin_cos();
    let forward = Vec2::new(c, s);
    let right = Vec2::new(s, -c);
    Vec2::new(d.dot(right), d.dot(forward))
}

/// Inverse of [`world_to_frame`].
pub fn frame_to_world(local: Vec2, origin: Vec2, heading: f64) -> Vec2 {
    let (s, c) = heading.sin_cos();
    let forward = Vec2::new(c, s);
    let right = Vec2::new(s, -c);
    origin.add(right.scale(local.x)).add(forward.scale(local.y))
}

/// Even-odd point-in-polygon test. Points on the boundary count as inside.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        // On-edge check.
        let ab = b.sub(a);
        let ap = p.sub(a);
        if ab.cross(ap).abs() < 1e-12 && ap.dot(ab) >= 0.0 && ap.dot(ab) <= ab.dot(ab) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let t = (p.y - a.y) / (b.y - a.y);
            if a.x + t * (b.x - a.x) > p.x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Proper segment intersection (shared endpoints and collinear touching
/// count as intersecting).
pub fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = q2.sub(q1).cross(p1.sub(q1));
    let d2 = q2.sub(q1).cross(p2.sub(q1));
    let d3 = p2.sub(p1).cross(q1.sub(p1));
    let d4 = p2.sub(p1).cross(q2.sub(p1));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |d: f64, a: Vec2, b: Vec2, p: Vec2| {
        d == 0.0
            && p.x >= a.x.min(b.x)
            && p.x <= a.x.max(b.x)
            && p.y >= a.y.min(b.y)
            && p.y <= a.y.max(b.y)
    };
    on(d1, q1, q2, p1) || on(d2, q1, q2, p2) || on(d3, p1, p2, q1) || on(d4, p1, p2, q2)
}

/// True iff the rectangle lies entirely inside the simple polygon.
pub fn rect_inside_polygon(rect: &OrientedRect, poly: &[Vec2]) -> bool {
    let corners = rect.corners();
    if corners.iter().any(|c| !point_in_polygon(*c, poly)) {
        return false;
    }
    let n = poly.len();
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        for j in 0..n {
            if segments_intersect(a, b, poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_to_frame_round_trip() {
        let p = Vec2::new(3.0, -1.5);
        let origin = Vec2::new(10.0, 4.0);
        let heading = 0.7;
        let local = world_to_frame(p, origin, heading);
        let back = frame_to_world(local, origin, heading);
        assert!((back.x - p.x).abs() < 1e-12 && (back.y - p.y).abs() < 1e-12);
    }

    #[test]
    fn forward_point_is_positive_y() {
        // Heading pi/2 means the frame faces +y of the world.
        let local = world_to_frame(Vec2::new(0.0, 5.0), Vec2::ZERO, std::f64::consts::FRAC_PI_2);
        assert!((local.y - 5.0).abs() < 1e-12);
        assert!(local.x.abs() < 1e-12);
        // A point to the right of that frame is world +x.
        let local = world_to_frame(Vec2::new(2.0, 0.0), Vec2::ZERO, std::f64::consts::FRAC_PI_2);
        assert!((local.x - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sat_disjoint_and_overlapping() {
        let a = OrientedRect { center: Vec2::ZERO, heading: 0.0, length: 4.0, width: 2.0 };
        let b = OrientedRect { center: Vec2::new(10.0, 0.0), heading: 1.0, length: 4.0, width: 2.0 };
        assert!(!a.overlaps(&b));
        let c = OrientedRect { center: Vec2::new(2.0, 0.5), heading: 0.4, length: 4.0, width: 2.0 };
        assert!(a.overlaps(&c));
        assert!(c.overlaps(&a));
    }

    #[test]
    fn rect_in_polygon_basic() {
        let poly = vec![
            Vec2::new(-5.0, -5.0),
            Vec2::new(5.0, -5.0),
            Vec2::new(5.0, 5.0),
            Vec2::new(-5.0, 5.0),
        ];
        let inside = OrientedRect { center: Vec2::ZERO, heading: 0.3, length: 4.0, width: 2.0 };
        assert!(rect_inside_polygon(&inside, &poly));
        let out = OrientedRect { center: Vec2::new(4.5, 0.0), heading: 0.0, length: 4.0, width: 2.0 };
        assert!(!rect_inside_polygon(&out, &poly));
    }
}
