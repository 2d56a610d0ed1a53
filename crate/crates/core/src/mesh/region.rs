use serde::{Deserialize, Serialize};

use crate::lattice::{LatticeCoord, Vec2};

/// Convex lattice polygon `{imin <= i <= imax, jmin <= j <= jmax, smin <= i + j <= smax}`.
/// Kept tight (every bound attained) so that widening all bounds by `k` is
/// the Minkowski sum with the hop ball of radius `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HexRegion {
    pub imin: i32,
    pub imax: i32,
    pub jmin: i32,
    pub jmax: i32,
    pub smin: i32,
    pub smax: i32,
}

impl HexRegion {
    pub fn ball(c: LatticeCoord, r: i32) -> Self {
        HexRegion { imin: c.i - r, imax: c.i + r, jmin: c.j - r, jmax: c.j + r, smin: c.i + c.j - r, smax: c.i + c.j + r }
    }

    /// Smallest region containing all points.
    pub fn hull_of(points: &[LatticeCoord]) -> Option<Self> {
        let first = points.first()?;
        let mut h = HexRegion::ball(*first, 0);
        for &c in &points[1..] {
            h = h.hull(&HexRegion::ball(c, 0));
        }
        Some(h)
    }

    pub fn contains(&self, c: LatticeCoord) -> bool {
        let s = c.i + c.j;
        c.i >= self.imin && c.i <= self.imax && c.j >= self.jmin && c.j <= self.jmax && s >= self.smin && s <= self.smax
    }

    pub fn expand(&self, k: i32) -> Self {
        HexRegion {
            imin: self.imin - k,
            imax: self.imax + k,
            jmin: self.jmin - k,
            jmax: self.jmax + k,
            smin: self.smin - k,
            smax: self.smax + k,
        }
    }

    pub fn hull(&self, o: &HexRegion) -> Self {
        HexRegion {
            imin: self.imin.min(o.imin),
            imax: self.imax.max(o.imax),
            jmin: self.jmin.min(o.jmin),
            jmax: self.jmax.max(o.jmax),
            smin: self.smin.min(o.smin),
            smax: self.smax.max(o.smax),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.imin > self.imax
            || self.jmin > self.jmax
            || self.smin > self.smax
            || self.smin > self.imax + self.jmax
            || self.imin + self.jmin > self.smax
    }

    pub fn tighten(mut self) -> Option<Self> {
        loop {
            if self.is_empty() {
                return None;
            }
            let before = self;
            self.imax = self.imax.min(self.smax - self.jmin);
            self.imin = self.imin.max(self.smin - self.jmax);
            self.jmax = self.jmax.min(self.smax - self.imin);
            self.jmin = self.jmin.max(self.smin - self.imax);
            self.smax = self.smax.min(self.imax + self.jmax);
            self.smin = self.smin.max(self.imin + self.jmin);
            if self == before {
                return Some(self);
            }
        }
    }

    pub fn intersect(&self, o: &HexRegion) -> Option<Self> {
        HexRegion {
            imin: self.imin.max(o.imin),
            imax: self.imax.min(o.imax),
            jmin: self.jmin.max(o.jmin),
            jmax: self.jmax.min(o.jmax),
            smin: self.smin.max(o.smin),
            smax: self.smax.min(o.smax),
        }
        .tighten()
    }

    /// Hop distance between the closest lattice points of two regions.
    pub fn hop_distance(&self, o: &HexRegion) -> i32 {
        let mut k = 0;
        while self.expand(k).intersect(o).is_none() {
            k += 1;
        }
        k
    }

    /// Hop-norm distance from a point given in (real) lattice coordinates.
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let s = p.x + p.y;
        [
            self.imin as f64 - p.x,
            p.x - self.imax as f64,
            self.jmin as f64 - p.y,
            p.y - self.jmax as f64,
            self.smin as f64 - s,
            s - self.smax as f64,
            0.0,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Maximal hop norm over the region.
    pub fn hex_extent(&self) -> i32 {
        [self.imin, self.imax, self.jmin, self.jmax, self.smin, self.smax].iter().map(|v| v.abs()).max().unwrap()
    }

    pub fn points(&self) -> Vec<LatticeCoord> {
        let mut out = Vec::new();
        for i in self.imin..=self.imax {
            for j in self.jmin.max(self.smin - i)..=self.jmax.min(self.smax - i) {
                out.push(LatticeCoord::new(i, j));
            }
        }
        out
    }
}
