//! Planar primitives used by the scenario generator and the raster codecs.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Rotated by +90 degrees (counter-clockwise).
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_two_pi(theta: f64) -> f64 {
    let t = theta.rem_euclid(std::f64::consts::TAU);
    if t >= std::f64::consts::TAU {
        0.0
    } else {
        t
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_pi(theta: f64) -> f64 {
    let t = wrap_two_pi(theta);
    if t > std::f64::consts::PI {
        t - std::f64::consts::TAU
    } else {
        t
    }
}

/// Intersection of the lines `p + s·u` and `q + t·v`, `None` when parallel.
pub fn line_intersection(p: Vec2, u: Vec2, q: Vec2, v: Vec2) -> Option<Vec2> {
    let den = u.cross(v);
    if den.abs() < 1e-12 {
        return None;
    }
    let s = (q - p).cross(v) / den;
    Some(p + u * s)
}

/// Simple polygon stored as a closed vertex ring (last vertex joins the first).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<Vec2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> Self {
        Polygon { vertices }
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area, positive for counter-clockwise rings.
    pub fn signed_area(&self) -> f64 {
        0.5 * self.edges().map(|(a, b)| a.cross(b)).sum::<f64>()
    }

    /// Even-odd containment; points on the boundary count as inside.
    pub fn contains(&self, p: Vec2) -> bool {
        if self.vertices.len() < 3 {
            return false;
        }
        if self.boundary_distance(p) <= 1e-12 {
            return true;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn boundary_distance(&self, p: Vec2) -> f64 {
        self.edges()
            .map(|(a, b)| segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Zero inside, boundary distance outside.
    pub fn distance(&self, p: Vec2) -> f64 {
        if self.contains(p) {
            0.0
        } else {
            self.boundary_distance(p)
        }
    }

    /// Sutherland–Hodgman clip against an axis-aligned rectangle.
    pub fn clip_to_rect(&self, lo: Vec2, hi: Vec2) -> Polygon {
        let planes: [(Vec2, f64); 4] = [
            (Vec2::new(1.0, 0.0), lo.x),
            (Vec2::new(-1.0, 0.0), -hi.x),
            (Vec2::new(0.0, 1.0), lo.y),
            (Vec2::new(0.0, -1.0), -hi.y),
        ];
        let mut ring = self.vertices.clone();
        for (normal, offset) in planes {
            if ring.is_empty() {
                break;
            }
            let inside = |p: Vec2| normal.dot(p) >= offset;
            let mut out = Vec::with_capacity(ring.len() + 2);
            for i in 0..ring.len() {
                let cur = ring[i];
                let prev = ring[(i + ring.len() - 1) % ring.len()];
                let crossing = |a: Vec2, b: Vec2| {
                    let da = normal.dot(a) - offset;
                    let db = normal.dot(b) - offset;
                    a + (b - a) * (da / (da - db))
                };
                match (inside(prev), inside(cur)) {
                    (true, true) => out.push(cur),
                    (true, false) => out.push(crossing(prev, cur)),
                    (false, true) => {
                        out.push(crossing(prev, cur));
                        out.push(cur);
                    }
                    (false, false) => {}
                }
            }
            ring = out;
        }
        Polygon::new(ring)
    }
}

pub fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Polygon {
        Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ])
    }

    #[test]
    fn containment_and_distance() {
        let sq = unit_square();
        assert!(sq.contains(Vec2::new(0.5, 0.5)));
        assert!(sq.contains(Vec2::new(1.0, 0.5)));
        assert!(!sq.contains(Vec2::new(1.5, 0.5)));
        assert!((sq.distance(Vec2::new(3.0, 0.5)) - 2.0).abs() < 1e-12);
        assert!((sq.signed_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clip_keeps_inner_part() {
        let sq = unit_square();
        let c = sq.clip_to_rect(Vec2::new(0.5, -1.0), Vec2::new(2.0, 2.0));
        assert!((c.signed_area() - 0.5).abs() < 1e-12);
        let gone = sq.clip_to_rect(Vec2::new(2.0, 2.0), Vec2::new(3.0, 3.0));
        assert!(gone.vertices.is_empty());
    }

    #[test]
    fn intersect_lines() {
        let p = line_intersection(
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(0.0, 1.0),
        )
        .unwrap();
        assert_eq!(p, Vec2::new(2.0, 1.0));
        assert!(line_intersection(Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(2.0, 0.0)).is_none());
    }

    #[test]
    fn angle_wrapping() {
        assert!((wrap_pi(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!(wrap_two_pi(-0.5) > 0.0);
    }
}
