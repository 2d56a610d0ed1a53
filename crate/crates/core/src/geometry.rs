use crate::lattice::Vec2;

pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

pub fn signed_area(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    0.5 * cross(b - a, c - a)
}

pub fn barycenter(p: &[Vec2; 3]) -> Vec2 {
    (p[0] + p[1] + p[2]) / 3.0
}

/// Gradients of the three P1 hat functions and the signed area.
pub fn p1_gradients(p: &[Vec2; 3]) -> Option<([Vec2; 3], f64)> {
    let area = signed_area(p[0], p[1], p[2]);
    if area.abs() < 1e-300 {
        return None;
    }
    let g = |a: Vec2, b: Vec2| {
        let e = b - a;
        Vec2::new(-e.y, e.x) / (2.0 * area)
    };
    Some(([g(p[1], p[2]), g(p[2], p[0]), g(p[0], p[1])], area))
}

pub fn barycentric(p: &[Vec2; 3], x: Vec2) -> [f64; 3] {
    let a = signed_area(p[0], p[1], p[2]);
    [signed_area(x, p[1], p[2]) / a, signed_area(p[0], x, p[2]) / a, signed_area(p[0], p[1], x) / a]
}

pub fn diameter(p: &[Vec2; 3]) -> f64 {
    (p[1] - p[0]).norm().max((p[2] - p[1]).norm()).max((p[0] - p[2]).norm())
}

pub fn polygon_area(poly: &[Vec2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 0..poly.len() {
        s += cross(poly[k], poly[(k + 1) % poly.len()]);
    }
    0.5 * s
}

/// Sutherland-Hodgman clipping of a polygon against a counter-clockwise
/// triangle. Points within `1e-12` (relative) of a clip edge count as inside.
pub fn clip_polygon(subject: &[Vec2], clip: &[Vec2; 3]) -> Vec<Vec2> {
    let scale = diameter(clip).max(1.0);
    let tol = 1e-12 * scale * scale;
    let mut out: Vec<Vec2> = subject.to_vec();
    for k in 0..3 {
        if out.is_empty() {
            break;
        }
        let a = clip[k];
        let b = clip[(k + 1) % 3];
        let side = |p: Vec2| cross(b - a, p - a);
        let input = std::mem::take(&mut out);
        for i in 0..input.len() {
            let p = input[i];
            let q = input[(i + 1) % input.len()];
            let (sp, sq) = (side(p), side(q));
            let (pin, qin) = (sp >= -tol, sq >= -tol);
            if pin {
                out.push(p);
            }
            if pin != qin && (sp.abs() > tol || sq.abs() > tol) {
                let t = sp / (sp - sq);
                if t > 0.0 && t < 1.0 {
                    out.push(p + t * (q - p));
                }
            }
        }
    }
    out
}

/// Area of the intersection of two triangles (both counter-clockwise).
pub fn intersection_area(t: &[Vec2; 3], s: &[Vec2; 3]) -> f64 {
    polygon_area(&clip_polygon(t, s)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hat_gradients_reproduce_linear_functions() {
        let p = [Vec2::new(0.1, 0.2), Vec2::new(2.0, 0.5), Vec2::new(0.7, 1.9)];
        let (g, area) = p1_gradients(&p).unwrap();
        let f = |x: Vec2| 3.0 * x.x - 2.0 * x.y + 1.0;
        let grad = g[0] * f(p[0]) + g[1] * f(p[1]) + g[2] * f(p[2]);
        assert!((grad - Vec2::new(3.0, -2.0)).norm() < 1e-13);
        assert!((area - signed_area(p[0], p[1], p[2])).abs() < 1e-15);
    }

    #[test]
    fn identical_and_disjoint_triangles() {
        let t = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        assert!((intersection_area(&t, &t) - 0.5).abs() < 1e-15);
        let s = [Vec2::new(2.0, 2.0), Vec2::new(3.0, 2.0), Vec2::new(2.0, 3.0)];
        assert_eq!(intersection_area(&t, &s), 0.0);
    }

    #[test]
    fn half_overlap() {
        let t = [Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(0.0, 2.0)];
        let s = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        assert!((intersection_area(&t, &s) - 0.5).abs() < 1e-15);
        let shifted = [Vec2::new(1.0, 0.0), Vec2::new(3.0, 0.0), Vec2::new(1.0, 2.0)];
        assert!((intersection_area(&t, &shifted) - 0.5).abs() < 1e-14);
    }
}
