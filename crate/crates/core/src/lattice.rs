use std::fmt;
use std::io::Write;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

pub const NONE: u32 = u32::MAX;

/// Integer coordinates `(i, j)` of the lattice point `A (i, j)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticeCoord {
    pub i: i32,
    pub j: i32,
}

impl LatticeCoord {
    pub const fn new(i: i32, j: i32) -> Self {
        LatticeCoord { i, j }
    }

    /// Hop distance to the origin on the triangular lattice.
    pub fn hex_norm(self) -> i32 {
        self.i.abs().max(self.j.abs()).max((self.i + self.j).abs())
    }

    pub fn hex_dist(self, other: LatticeCoord) -> i32 {
        (self - other).hex_norm()
    }
}

impl Add for LatticeCoord {
    type Output = LatticeCoord;
    fn add(self, o: LatticeCoord) -> LatticeCoord {
        LatticeCoord::new(self.i + o.i, self.j + o.j)
    }
}

impl Sub for LatticeCoord {
    type Output = LatticeCoord;
    fn sub(self, o: LatticeCoord) -> LatticeCoord {
        LatticeCoord::new(self.i - o.i, self.j - o.j)
    }
}

impl Neg for LatticeCoord {
    type Output = LatticeCoord;
    fn neg(self) -> LatticeCoord {
        LatticeCoord::new(-self.i, -self.j)
    }
}

impl Mul<i32> for LatticeCoord {
    type Output = LatticeCoord;
    fn mul(self, k: i32) -> LatticeCoord {
        LatticeCoord::new(self.i * k, self.j * k)
    }
}

impl fmt::Display for LatticeCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

/// Nearest-neighbour directions in counter-clockwise order, so that
/// direction `(r + 3) % 6` is the reverse of `r` and `r +- 1` are adjacent.
pub const DIRECTIONS: [LatticeCoord; 6] = [
    LatticeCoord::new(1, 0),
    LatticeCoord::new(0, 1),
    LatticeCoord::new(-1, 1),
    LatticeCoord::new(-1, 0),
    LatticeCoord::new(0, -1),
    LatticeCoord::new(1, -1),
];

pub fn opposite(rho: usize) -> usize {
    (rho + 3) % 6
}

pub fn triangular_matrix() -> Mat2 {
    Mat2::new(1.0, 0.5, 0.0, 3f64.sqrt() / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DefectKind {
    None,
    MicroCrack { length: u32 },
    MultiVacancy { sites: Vec<LatticeCoord> },
    ScrewDislocation { burgers: f64, core: [f64; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub kind: DefectKind,
    pub applied_strain: Mat2,
}

impl DefectSpec {
    pub fn none() -> Self {
        DefectSpec { kind: DefectKind::None, applied_strain: Mat2::identity() }
    }

    /// Crack of `k` atoms along `e1` under `B = [[1, gamma], [0, 1 + s]]`.
    pub fn micro_crack(k: u32, s: f64, gamma: f64) -> Self {
        DefectSpec {
            kind: DefectKind::MicroCrack { length: k },
            applied_strain: Mat2::new(1.0, gamma, 0.0, 1.0 + s),
        }
    }

    pub fn vacancies(sites: Vec<LatticeCoord>) -> Self {
        DefectSpec { kind: DefectKind::MultiVacancy { sites }, applied_strain: Mat2::identity() }
    }

    /// Screw dislocation with the core at the barycentre of the triangle `(0, a1, a2)`.
    pub fn screw(burgers: f64) -> Self {
        DefectSpec {
            kind: DefectKind::ScrewDislocation { burgers, core: [0.5, 0.5 / 3f64.sqrt()] },
            applied_strain: Mat2::identity(),
        }
    }

    /// Number of displacement components carried by the model.
    pub fn arity(&self) -> usize {
        match self.kind {
            DefectKind::ScrewDislocation { .. } => 1,
            _ => 2,
        }
    }

    /// Lattice points removed from the homogeneous lattice.
    pub fn removed_sites(&self) -> Vec<LatticeCoord> {
        match &self.kind {
            DefectKind::MicroCrack { length } => crack_sites(*length),
            DefectKind::MultiVacancy { sites } => {
                let mut s = sites.clone();
                s.sort();
                s.dedup();
                s
            }
            _ => Vec::new(),
        }
    }
}

/// Removal set of a crack of `k` atoms: symmetric for odd `k`, shifted by
/// half a spacing towards `-e1` for even `k`.
pub fn crack_sites(k: u32) -> Vec<LatticeCoord> {
    let k = k as i32;
    let (lo, hi) = if k % 2 == 1 { (-(k - 1) / 2, (k - 1) / 2) } else { (-k / 2, k / 2 - 1) };
    (lo..=hi).map(|i| LatticeCoord::new(i, 0)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub lattice_matrix: Mat2,
    pub domain_radius: f64,
    pub defect: DefectSpec,
}

impl LatticeSpec {
    pub fn triangular(radius: f64, defect: DefectSpec) -> Self {
        LatticeSpec { lattice_matrix: triangular_matrix(), domain_radius: radius, defect }
    }
}

/// All points of the homogeneous lattice hexagon `{hex_norm <= R}` with
/// vacancies flagged, nearest-neighbour topology and the canonical
/// triangulation.
#[derive(Clone, Debug)]
pub struct Lattice {
    spec: LatticeSpec,
    radius: i32,
    coords: Vec<LatticeCoord>,
    positions: Vec<Vec2>,
    vacant: Vec<bool>,
    neighbors: Vec<[u32; 6]>,
    lookup: Vec<u32>,
    micro: Vec<[u32; 3]>,
    micro_lookup: Vec<u32>,
    vectors: [Vec2; 6],
    num_sites: usize,
}

impl Lattice {
    pub fn new(spec: LatticeSpec) -> Result<Self> {
        let a = spec.lattice_matrix;
        if !(a.determinant().abs() > 1e-12) {
            return Err(Error::Lattice("lattice matrix is singular".into()));
        }
        if !(spec.domain_radius >= 1.0) {
            return Err(Error::Lattice(format!("domain radius {} too small", spec.domain_radius)));
        }
        let r = spec.domain_radius.floor() as i32;
        let side = (2 * r + 1) as usize;
        let mut lookup = vec![NONE; side * side];
        let mut coords = Vec::new();
        for i in -r..=r {
            for j in -r..=r {
                let c = LatticeCoord::new(i, j);
                if c.hex_norm() <= r {
                    lookup[((i + r) as usize) * side + (j + r) as usize] = coords.len() as u32;
                    coords.push(c);
                }
            }
        }
        let to_phys = |c: LatticeCoord| a * Vec2::new(c.i as f64, c.j as f64);
        let positions: Vec<Vec2> = coords.iter().map(|&c| to_phys(c)).collect();
        let mut vacant = vec![false; coords.len()];
        let index = |c: LatticeCoord| -> Option<usize> {
            if c.hex_norm() > r {
                return None;
            }
            let v = lookup[((c.i + r) as usize) * side + (c.j + r) as usize];
            (v != NONE).then_some(v as usize)
        };
        for c in spec.defect.removed_sites() {
            match index(c) {
                Some(p) if c.hex_norm() < r => vacant[p] = true,
                _ => {
                    return Err(Error::Lattice(format!("removed site {c} lies outside the domain interior")))
                }
            }
        }
        if let DefectKind::ScrewDislocation { core, .. } = spec.defect.kind {
            let xc = Vec2::new(core[0], core[1]);
            for x in &positions {
                if (x - xc).norm() < 1e-9 {
                    return Err(Error::Lattice("dislocation core coincides with a lattice site".into()));
                }
                if (x.y - xc.y).abs() < 1e-9 && x.x >= xc.x {
                    return Err(Error::Lattice("branch cut of the dislocation hits a lattice site".into()));
                }
            }
        }
        let mut neighbors = vec![[NONE; 6]; coords.len()];
        for (p, &c) in coords.iter().enumerate() {
            for (rho, &d) in DIRECTIONS.iter().enumerate() {
                if let Some(q) = index(c + d) {
                    if !vacant[q] {
                        neighbors[p][rho] = q as u32;
                    }
                }
            }
        }
        let cells = (2 * r) as usize;
        let mut micro_lookup = vec![NONE; cells * cells * 2];
        let mut micro = Vec::new();
        for i in -r..r {
            for j in -r..r {
                let base = LatticeCoord::new(i, j);
                let tris = [
                    [base, base + LatticeCoord::new(1, 0), base + LatticeCoord::new(0, 1)],
                    [base + LatticeCoord::new(1, 0), base + LatticeCoord::new(1, 1), base + LatticeCoord::new(0, 1)],
                ];
                for (o, t) in tris.iter().enumerate() {
                    if let (Some(p0), Some(p1), Some(p2)) = (index(t[0]), index(t[1]), index(t[2])) {
                        micro_lookup[(((i + r) as usize) * cells + (j + r) as usize) * 2 + o] = micro.len() as u32;
                        micro.push([p0 as u32, p1 as u32, p2 as u32]);
                    }
                }
            }
        }
        let vectors = std::array::from_fn(|rho| to_phys(DIRECTIONS[rho]));
        let num_sites = vacant.iter().filter(|v| !**v).count();
        Ok(Lattice { spec, radius: r, coords, positions, vacant, neighbors, lookup, micro, micro_lookup, vectors, num_sites })
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn matrix(&self) -> Mat2 {
        self.spec.lattice_matrix
    }

    pub fn det_a(&self) -> f64 {
        self.spec.lattice_matrix.determinant().abs()
    }

    /// Area of one canonical micro triangle.
    pub fn micro_area(&self) -> f64 {
        0.5 * self.det_a()
    }

    pub fn radius(&self) -> i32 {
        self.radius
    }

    /// Number of lattice points including vacancies.
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Number of present atoms.
    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn coord(&self, p: usize) -> LatticeCoord {
        self.coords[p]
    }

    pub fn coords(&self) -> &[LatticeCoord] {
        &self.coords
    }

    pub fn position(&self, p: usize) -> Vec2 {
        self.positions[p]
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn is_vacant(&self, p: usize) -> bool {
        self.vacant[p]
    }

    pub fn is_boundary(&self, p: usize) -> bool {
        self.coords[p].hex_norm() == self.radius
    }

    pub fn vacancies(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&p| self.vacant[p])
    }

    pub fn to_physical(&self, c: LatticeCoord) -> Vec2 {
        self.spec.lattice_matrix * Vec2::new(c.i as f64, c.j as f64)
    }

    /// Lattice coordinates (not rounded) of a physical point.
    pub fn to_lattice(&self, x: Vec2) -> Vec2 {
        self.spec.lattice_matrix.try_inverse().expect("nonsingular") * x
    }

    pub fn index_of(&self, c: LatticeCoord) -> Option<usize> {
        if c.hex_norm() > self.radius {
            return None;
        }
        let side = (2 * self.radius + 1) as usize;
        let v = self.lookup[((c.i + self.radius) as usize) * side + (c.j + self.radius) as usize];
        (v != NONE).then_some(v as usize)
    }

    /// Present neighbour of point `p` in direction `rho`.
    pub fn neighbor(&self, p: usize, rho: usize) -> Option<usize> {
        let q = self.neighbors[p][rho];
        (q != NONE).then_some(q as usize)
    }

    pub fn neighbor_row(&self, p: usize) -> &[u32; 6] {
        &self.neighbors[p]
    }

    pub fn lattice_vector(&self, rho: usize) -> Vec2 {
        self.vectors[rho]
    }

    pub fn lattice_vectors(&self) -> &[Vec2; 6] {
        &self.vectors
    }

    pub fn micro_elements(&self) -> &[[u32; 3]] {
        &self.micro
    }

    /// Micro triangle of cell `c`: `up` is `(c, c+e1, c+e2)`, otherwise
    /// `(c+e1, c+e1+e2, c+e2)`.
    pub fn micro_at(&self, c: LatticeCoord, up: bool) -> Option<usize> {
        let r = self.radius;
        if c.i < -r || c.j < -r || c.i >= r || c.j >= r {
            return None;
        }
        let cells = (2 * r) as usize;
        let v = self.micro_lookup[(((c.i + r) as usize) * cells + (c.j + r) as usize) * 2 + usize::from(!up)];
        (v != NONE).then_some(v as usize)
    }

    /// Differences `y(l + a_rho) - y(l)` over present neighbours.
    pub fn stencil(&self, p: usize, y: &[Vec2]) -> Vec<(usize, Vec2)> {
        (0..6).filter_map(|rho| self.neighbor(p, rho).map(|q| (rho, y[q] - y[p]))).collect()
    }

    /// Replaces values at vacancies by neighbour averages. Only opposite
    /// neighbour pairs are used when one is available, so affine fields are
    /// reproduced exactly.
    pub fn extend_vacancies(&self, y: &mut [Vec2]) {
        let mut pending: Vec<usize> = self.vacancies().collect();
        let mut known = self.vacant.iter().map(|v| !v).collect::<Vec<_>>();
        while !pending.is_empty() {
            let mut next = Vec::new();
            let mut updates = Vec::new();
            for &p in &pending {
                let c = self.coords[p];
                let vals: [Option<Vec2>; 6] = std::array::from_fn(|rho| {
                    self.index_of(c + DIRECTIONS[rho]).filter(|&q| known[q]).map(|q| y[q])
                });
                let mut pair_sum = Vec2::zeros();
                let mut pairs = 0;
                for rho in 0..3 {
                    if let (Some(u), Some(v)) = (vals[rho], vals[rho + 3]) {
                        pair_sum += 0.5 * (u + v);
                        pairs += 1;
                    }
                }
                let present: Vec<Vec2> = vals.iter().flatten().copied().collect();
                if pairs > 0 {
                    updates.push((p, pair_sum / pairs as f64));
                } else if !present.is_empty() {
                    updates.push((p, present.iter().sum::<Vec2>() / present.len() as f64));
                } else {
                    next.push(p);
                }
            }
            if updates.is_empty() {
                for p in next {
                    y[p] = Vec2::zeros();
                }
                break;
            }
            for (p, v) in updates {
                y[p] = v;
                known[p] = true;
            }
            pending = next;
        }
    }

    /// Discrete energy norm `(sum_l sum_rho |D_rho v(l)|^2)^(1/2)` over present atoms.
    pub fn energy_norm(&self, v: &[Vec2]) -> f64 {
        let mut s = 0.0;
        for p in 0..self.len() {
            if self.vacant[p] {
                continue;
            }
            for rho in 0..6 {
                if let Some(q) = self.neighbor(p, rho) {
                    s += (v[q] - v[p]).norm_squared();
                }
            }
        }
        s.sqrt()
    }

    /// Plain-text dump: `sites N`, `index x y flags` lines, then `tri i j k`.
    /// Flags: bit 0 vacancy, bit 1 boundary.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sites {}", self.len())?;
        for p in 0..self.len() {
            let flags = u8::from(self.vacant[p]) | (u8::from(self.is_boundary(p)) << 1);
            let x = self.positions[p];
            writeln!(w, "{} {:.16e} {:.16e} {}", p, x.x, x.y, flags)?;
        }
        for t in &self.micro {
            writeln!(w, "tri {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}
