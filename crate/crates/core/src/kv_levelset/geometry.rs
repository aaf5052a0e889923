use crate::error::{Error, Result};
use crate::grid_fem::Point;

/// Analytic primitive used for initial guesses and phantoms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Circle {
        center: Point,
        radius: f64,
    },
    /// Semi-axes along the rotated frame, `angle` in radians.
    Ellipse {
        center: Point,
        semi_axes: [f64; 2],
        angle: f64,
    },
}

impl Shape {
    pub fn circle(center: Point, radius: f64) -> Self {
        Shape::Circle { center, radius }
    }

    pub fn ellipse(center: Point, semi_axes: [f64; 2], angle: f64) -> Self {
        Shape::Ellipse {
            center,
            semi_axes,
            angle,
        }
    }

    pub fn center(&self) -> Point {
        match *self {
            Shape::Circle { center, .. } | Shape::Ellipse { center, .. } => center,
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Shape::Circle { radius, .. } => std::f64::consts::PI * radius * radius,
            Shape::Ellipse { semi_axes, .. } => std::f64::consts::PI * semi_axes[0] * semi_axes[1],
        }
    }

    /// Axis-aligned bounding box `[min, max]`.
    pub fn bounding_box(&self) -> [Point; 2] {
        let (c, hx, hy) = match *self {
            Shape::Circle { center, radius } => (center, radius, radius),
            Shape::Ellipse {
                center,
                semi_axes: [a, b],
                angle,
            } => {
                let (s, co) = angle.sin_cos();
                (
                    center,
                    (a * a * co * co + b * b * s * s).sqrt(),
                    (a * a * s * s + b * b * co * co).sqrt(),
                )
            }
        };
        [[c[0] - hx, c[1] - hy], [c[0] + hx, c[1] + hy]]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Circle { radius, center } => {
                radius > 0.0 && center.iter().all(|x| x.is_finite())
            }
            Shape::Ellipse {
                semi_axes,
                center,
                angle,
            } => {
                semi_axes.iter().all(|&a| a > 0.0)
                    && center.iter().all(|x| x.is_finite())
                    && angle.is_finite()
            }
        };
        if !ok {
            return Err(Error::invalid(format!("degenerate shape {self:?}")));
        }
        let [lo, hi] = self.bounding_box();
        if lo[0] < 0.0 || lo[1] < 0.0 || hi[0] > 1.0 || hi[1] > 1.0 {
            return Err(Error::invalid(format!(
                "shape {self:?} exceeds the unit square"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: Point) -> bool {
        match *self {
            Shape::Circle { center, radius } => {
                (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2) < radius * radius
            }
            Shape::Ellipse { .. } => {
                let ([x, y], [a, b]) = self.local(p);
                (x / a).powi(2) + (y / b).powi(2) < 1.0
            }
        }
    }

    /// Signed distance to the boundary, negative inside.
    pub fn signed_distance(&self, p: Point) -> f64 {
        match *self {
            Shape::Circle { center, radius } => (p[0] - center[0]).hypot(p[1] - center[1]) - radius,
            Shape::Ellipse { .. } => {
                let ([x, y], [a, b]) = self.local(p);
                let d = if a >= b {
                    ellipse_distance(a, b, x.abs(), y.abs())
                } else {
                    ellipse_distance(b, a, y.abs(), x.abs())
                };
                if (x / a).powi(2) + (y / b).powi(2) < 1.0 {
                    -d
                } else {
                    d
                }
            }
        }
    }

    fn local(&self, p: Point) -> (Point, [f64; 2]) {
        match *self {
            Shape::Circle { center, radius } => {
                ([p[0] - center[0], p[1] - center[1]], [radius, radius])
            }
            Shape::Ellipse {
                center,
                semi_axes,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                ([c * dx + s * dy, -s * dx + c * dy], semi_axes)
            }
        }
    }
}

/// Distance from `(x0, y0)`, both non-negative, to the ellipse with semi-axes
/// `e0 ≥ e1`. The closest point solves a monotone scalar equation in the
/// Lagrange parameter, found by bisection to machine precision.
fn ellipse_distance(e0: f64, e1: f64, x0: f64, y0: f64) -> f64 {
    if y0 > 0.0 {
        if x0 > 0.0 {
            let (z0, z1) = (x0 / e0, y0 / e1);
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g == 0.0 {
                return 0.0;
            }
            let r0 = (e0 / e1).powi(2);
            let s = ellipse_root(r0, z0, z1, g);
            let x1 = r0 * x0 / (s + r0);
            let y1 = y0 / (s + 1.0);
            (x1 - x0).hypot(y1 - y0)
        } else {
            (y0 - e1).abs()
        }
    } else {
        let numer = e0 * x0;
        let denom = e0 * e0 - e1 * e1;
        if numer < denom {
            let xd = numer / denom;
            let x1 = e0 * xd;
            let y1 = e1 * (1.0 - xd * xd).max(0.0).sqrt();
            (x1 - x0).hypot(y1)
        } else {
            (x0 - e0).abs()
        }
    }
}

fn ellipse_root(r0: f64, z0: f64, z1: f64, g: f64) -> f64 {
    let n0 = r0 * z0;
    let mut s0 = z1 - 1.0;
    let mut s1 = if g < 0.0 { 0.0 } else { n0.hypot(z1) - 1.0 };
    let mut s = 0.0;
    for _ in 0..1100 {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let g = (n0 / (s + r0)).powi(2) + (z1 / (s + 1.0)).powi(2) - 1.0;
        if g > 0.0 {
            s0 = s;
        } else if g < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

/// Pointwise minimum of the signed distances of `shapes`.
pub fn union_distance(shapes: &[Shape], p: Point) -> f64 {
    shapes
        .iter()
        .map(|s| s.signed_distance(p))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn circle_distance() {
        let c = Shape::circle([0.5, 0.5], 0.2);
        assert!((c.signed_distance([0.5, 0.5]) + 0.2).abs() < 1e-15);
        assert!((c.signed_distance([0.5, 0.9]) - 0.2).abs() < 1e-15);
        assert!(c.validate().is_ok());
        assert!(Shape::circle([0.1, 0.5], 0.2).validate().is_err());
    }

    fn sampled_distance(e: &Shape, p: Point) -> f64 {
        let Shape::Ellipse {
            center,
            semi_axes: [a, b],
            angle,
        } = *e
        else {
            unreachable!()
        };
        let pt = |t: f64| {
            let (x, y) = (a * t.cos(), b * t.sin());
            let (s, c) = angle.sin_cos();
            [center[0] + c * x - s * y, center[1] + s * x + c * y]
        };
        let d = |t: f64| {
            let q = pt(t);
            (q[0] - p[0]).hypot(q[1] - p[1])
        };
        let n = 20_000;
        let mut best = (0.0, f64::INFINITY);
        for k in 0..n {
            let t = 2.0 * PI * k as f64 / n as f64;
            if d(t) < best.1 {
                best = (t, d(t));
            }
        }
        let step = 2.0 * PI / n as f64;
        let (mut lo, mut hi) = (best.0 - step, best.0 + step);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if d(m1) < d(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        d(0.5 * (lo + hi))
    }

    #[test]
    fn ellipse_distance_matches_sampling() {
        let e = Shape::ellipse([0.5, 0.5], [0.2, 0.1], 0.0);
        assert!(e.signed_distance([0.5, 0.5]) < 0.0);
        assert!(e.signed_distance([0.8, 0.5]) > 0.0);
        assert!((e.signed_distance([0.8, 0.5]) - 0.1).abs() < 1e-12);
        let rotated = Shape::ellipse([0.45, 0.55], [0.1, 0.25], 0.7);
        for e in [e, rotated] {
            for k in 0..40 {
                let p = [0.02 + 0.024 * k as f64, 0.9 - 0.021 * k as f64];
                let exact = sampled_distance(&e, p);
                assert!((e.signed_distance(p).abs() - exact).abs() < 1e-6, "{p:?}");
            }
        }
    }

    #[test]
    fn ellipse_box_and_area() {
        let e = Shape::ellipse([0.5, 0.5], [0.2, 0.1], PI / 2.0);
        let [lo, hi] = e.bounding_box();
        assert!((lo[0] - 0.4).abs() < 1e-12 && (hi[1] - 0.7).abs() < 1e-12);
        assert!((e.area() - PI * 0.02).abs() < 1e-15);
    }

    #[test]
    fn union_takes_minimum() {
        let s = [
            Shape::circle([0.25, 0.5], 0.1),
            Shape::circle([0.75, 0.5], 0.1),
        ];
        assert!((union_distance(&s, [0.25, 0.5]) + 0.1).abs() < 1e-15);
        assert!((union_distance(&s, [0.5, 0.5]) - 0.15).abs() < 1e-15);
    }
}
