use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::lattice::{LatticeCoord, Vec2};

use super::region::HexRegion;

/// Lattice-aligned equilateral triangle of side `side` anchored at `(i, j)`.
/// An up triangle has vertices `a, a + s e1, a + s e2`; a down triangle
/// `a + s e1, a + s (e1 + e2), a + s e2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RedTri {
    pub side: i32,
    pub i: i32,
    pub j: i32,
    pub up: bool,
}

impl RedTri {
    pub fn new(i: i32, j: i32, side: i32, up: bool) -> Self {
        RedTri { side, i, j, up }
    }

    pub fn anchor(&self) -> LatticeCoord {
        LatticeCoord::new(self.i, self.j)
    }

    /// Counter-clockwise vertices.
    pub fn vertices(&self) -> [LatticeCoord; 3] {
        let a = self.anchor();
        let s = self.side;
        if self.up {
            [a, a + LatticeCoord::new(s, 0), a + LatticeCoord::new(0, s)]
        } else {
            [a + LatticeCoord::new(s, 0), a + LatticeCoord::new(s, s), a + LatticeCoord::new(0, s)]
        }
    }

    pub fn children(&self) -> [RedTri; 4] {
        let h = self.side / 2;
        let (i, j) = (self.i, self.j);
        if self.up {
            [
                RedTri::new(i, j, h, true),
                RedTri::new(i + h, j, h, true),
                RedTri::new(i, j + h, h, true),
                RedTri::new(i, j, h, false),
            ]
        } else {
            [
                RedTri::new(i + h, j, h, false),
                RedTri::new(i, j + h, h, false),
                RedTri::new(i + h, j + h, h, false),
                RedTri::new(i + h, j + h, h, true),
            ]
        }
    }

    /// Containment of a point in real lattice coordinates, with tolerance.
    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        let du = p.x - self.i as f64;
        let dv = p.y - self.j as f64;
        let s = self.side as f64;
        if self.up {
            du >= -tol && dv >= -tol && du + dv <= s + tol
        } else {
            du <= s + tol && dv <= s + tol && du + dv >= s - tol
        }
    }

    /// Bounding region in the three lattice directions.
    pub fn bounds(&self) -> HexRegion {
        let s = self.side;
        let base = self.i + self.j;
        let (smin, smax) = if self.up { (base, base + s) } else { (base + s, base + 2 * s) };
        HexRegion { imin: self.i, imax: self.i + s, jmin: self.j, jmax: self.j + s, smin, smax }
    }

    /// Whether some canonical unit triangle inside `self` has all vertices in `r`.
    pub fn covers_unit_triangle_of(&self, r: &HexRegion) -> bool {
        let Some(x) = self.bounds().intersect(r) else { return false };
        for i in x.imin..=x.imax {
            for j in x.jmin..=x.jmax {
                for up in [true, false] {
                    let t = RedTri::new(i, j, 1, up);
                    if t.vertices().iter().all(|&v| x.contains(v)) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Red-refinement forest over a hexagon tiled by macro triangles of side `s0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RedGreenTree {
    pub s0: i32,
    pub n: i32,
    pub leaves: BTreeSet<RedTri>,
}

impl RedGreenTree {
    pub fn new(s0: i32, n: i32) -> Self {
        RedGreenTree { s0, n, leaves: Self::macros(s0, n).into_iter().collect() }
    }

    pub fn radius(&self) -> i32 {
        self.s0 * self.n
    }

    fn macros(s0: i32, n: i32) -> Vec<RedTri> {
        let r = s0 * n;
        let mut out = Vec::new();
        for a in -n..n {
            for b in -n..n {
                for up in [true, false] {
                    let t = RedTri::new(a * s0, b * s0, s0, up);
                    if t.vertices().iter().all(|v| v.hex_norm() <= r) {
                        out.push(t);
                    }
                }
            }
        }
        out
    }

    /// Grows the hexagon to `n` macro rings, keeping all existing leaves.
    pub fn enlarge(&mut self, n: i32) {
        let old = self.radius();
        for t in Self::macros(self.s0, n) {
            if t.vertices().iter().any(|v| v.hex_norm() > old) {
                self.leaves.insert(t);
            }
        }
        self.n = n;
    }

    pub fn macro_of(&self, p: Vec2) -> RedTri {
        let s = self.s0 as f64;
        let a = (p.x / s).floor();
        let b = (p.y / s).floor();
        let up = (p.x - a * s) + (p.y - b * s) <= s;
        RedTri::new(a as i32 * self.s0, b as i32 * self.s0, self.s0, up)
    }

    /// Leaf containing a point given in real lattice coordinates.
    pub fn locate(&self, p: Vec2) -> Option<RedTri> {
        let m = self.macro_of(p);
        let s0 = self.s0;
        let mut candidates = vec![m];
        for (da, db) in [(0, 0), (-1, 0), (0, -1), (-1, -1)] {
            for up in [true, false] {
                let t = RedTri::new(m.i + da * s0, m.j + db * s0, s0, up);
                if t != m && t.contains(p, 1e-9) {
                    candidates.push(t);
                }
            }
        }
        candidates.into_iter().find_map(|t| self.descend(t, p))
    }

    fn descend(&self, mut t: RedTri, p: Vec2) -> Option<RedTri> {
        loop {
            if self.leaves.contains(&t) {
                return Some(t);
            }
            if t.side == 1 {
                return None;
            }
            t = *t.children().iter().find(|c| c.contains(p, 1e-9))?;
        }
    }

    pub fn refine(&mut self, t: &RedTri) -> bool {
        if t.side > 1 && self.leaves.remove(t) {
            self.leaves.extend(t.children());
            true
        } else {
            false
        }
    }

    pub fn vertex_set(&self) -> HashSet<LatticeCoord> {
        self.leaves.iter().flat_map(|t| t.vertices()).collect()
    }

    /// Edges of `t` whose midpoint is a vertex of another leaf, as `(k, midpoint)`
    /// where the edge runs from vertex `k` to vertex `k + 1`.
    pub fn hanging_edges(t: &RedTri, verts: &HashSet<LatticeCoord>) -> Vec<(usize, LatticeCoord)> {
        if t.side == 1 {
            return Vec::new();
        }
        let v = t.vertices();
        (0..3)
            .filter_map(|k| {
                let (p, q) = (v[k], v[(k + 1) % 3]);
                let m = LatticeCoord::new((p.i + q.i) / 2, (p.j + q.j) / 2);
                verts.contains(&m).then_some((k, m))
            })
            .collect()
    }

    fn needs_closure(t: &RedTri, verts: &HashSet<LatticeCoord>) -> bool {
        let hanging = Self::hanging_edges(t, verts);
        if hanging.len() >= 2 {
            return true;
        }
        if t.side >= 4 {
            let v = t.vertices();
            for &(k, m) in &hanging {
                let (p, q) = (v[k], v[(k + 1) % 3]);
                let q1 = LatticeCoord::new((p.i + m.i) / 2, (p.j + m.j) / 2);
                let q2 = LatticeCoord::new((m.i + q.i) / 2, (m.j + q.j) / 2);
                if verts.contains(&q1) || verts.contains(&q2) {
                    return true;
                }
            }
        }
        false
    }

    /// Red-refines until every leaf has at most one hanging edge and
    /// neighbours differ by at most one level.
    pub fn close(&mut self) {
        loop {
            let verts = self.vertex_set();
            let todo: Vec<RedTri> = self.leaves.iter().filter(|t| Self::needs_closure(t, &verts)).copied().collect();
            if todo.is_empty() {
                return;
            }
            for t in &todo {
                self.refine(t);
            }
        }
    }

    /// Refines every leaf of side > 1 containing a unit triangle of any region.
    pub fn resolve(&mut self, regions: &[HexRegion]) {
        loop {
            let todo: Vec<RedTri> = self
                .leaves
                .iter()
                .filter(|t| t.side > 1 && regions.iter().any(|r| t.covers_unit_triangle_of(r)))
                .copied()
                .collect();
            if todo.is_empty() {
                return;
            }
            for t in &todo {
                self.refine(t);
            }
        }
    }

    /// Refines leaves until `side <= h(barycentre)`.
    pub fn grade<F: Fn(Vec2) -> f64>(&mut self, h: F) {
        loop {
            let todo: Vec<RedTri> = self
                .leaves
                .iter()
                .filter(|t| {
                    let v = t.vertices();
                    let b = Vec2::new(
                        (v[0].i + v[1].i + v[2].i) as f64 / 3.0,
                        (v[0].j + v[1].j + v[2].j) as f64 / 3.0,
                    );
                    t.side > 1 && t.side as f64 > h(b)
                })
                .copied()
                .collect();
            if todo.is_empty() {
                return;
            }
            for t in &todo {
                self.refine(t);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macros_tile_hexagon() {
        let t = RedGreenTree::new(4, 3);
        let area: i32 = t.leaves.iter().map(|l| l.side * l.side).sum();
        assert_eq!(area, 6 * 12 * 12);
    }

    #[test]
    fn children_partition_parent() {
        for up in [true, false] {
            let t = RedTri::new(2, -4, 4, up);
            let kids = t.children();
            for k in kids {
                for v in k.vertices() {
                    assert!(t.contains(Vec2::new(v.i as f64, v.j as f64), 0.0));
                }
            }
            let mut verts: Vec<_> = kids.iter().flat_map(|k| k.vertices()).collect();
            verts.sort();
            verts.dedup();
            assert_eq!(verts.len(), 6);
        }
    }

    #[test]
    fn closure_keeps_balance() {
        let mut t = RedGreenTree::new(16, 2);
        let target = Vec2::new(0.3, 0.3);
        for _ in 0..4 {
            let l = t.locate(target).unwrap();
            t.refine(&l);
        }
        t.close();
        let verts = t.vertex_set();
        for l in &t.leaves {
            assert!(RedGreenTree::hanging_edges(l, &verts).len() <= 1);
        }
        assert_eq!(t.locate(target).unwrap().side, 1);
    }
}
