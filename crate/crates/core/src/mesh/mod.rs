//! Coarse triangulation built from a red-green refinement forest over the
//! lattice, with atomistic regions resolved down to the canonical triangles.

mod region;
mod tree;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use region::HexRegion;
pub use tree::{RedGreenTree, RedTri};

use crate::error::{Error, Result};
use crate::geometry::{barycentric, clip_polygon, diameter, polygon_area, signed_area};
use crate::lattice::{DefectKind, Lattice, LatticeCoord, Mat2, Vec2, DIRECTIONS, NONE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    AtomCore,
    Interface,
    Buffer,
    Continuum,
}

impl RegionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::AtomCore => "atom",
            RegionLabel::Interface => "interface",
            RegionLabel::Buffer => "buffer",
            RegionLabel::Continuum => "continuum",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AtomKind {
    Outside,
    Core,
    Interface,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    /// Initial atomistic radius (hops) around each defect.
    pub ra: i32,
    /// Width of the canonical-triangle band around the atomistic region.
    pub rbuf: i32,
    /// Grading exponent of `h(x) = C (r / R_a)^beta`.
    pub beta: f64,
    pub grading: f64,
    /// Circumradius of the hexagonal domain; a multiple of `macro_side`.
    pub domain_radius: i32,
    /// Side of the coarsest triangles (a power of two).
    pub macro_side: i32,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { ra: 6, rbuf: 3, beta: 1.5, grading: 1.0, domain_radius: 64, macro_side: 32 }
    }
}

impl MeshConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ra < 2 || self.rbuf < 1 {
            return Err(Error::Config("need R_a >= 2 and R_buf >= 1".into()));
        }
        if !(self.beta > 1.0 && self.beta < 2.0) || !(self.grading > 0.0) {
            return Err(Error::Config("grading exponent must lie in (1, 2)".into()));
        }
        let s = self.macro_side;
        if s < 1 || s & (s - 1) != 0 {
            return Err(Error::Config("macro side must be a power of two".into()));
        }
        if self.domain_radius <= 0 || self.domain_radius % s != 0 {
            return Err(Error::Config(format!(
                "domain radius {} must be a positive multiple of the macro side {s}",
                self.domain_radius
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Element {
    pub nodes: [u32; 3],
    pub label: RegionLabel,
    pub leaf: RedTri,
    pub green: bool,
    pub area: f64,
    pub diameter: f64,
    /// Number of vertices inside the atomistic region.
    pub atom_count: u8,
    /// Canonical triangle this element coincides with, if any.
    pub micro: Option<u32>,
}

impl Element {
    pub fn is_micro(&self) -> bool {
        self.micro.is_some()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Edge {
    pub nodes: [u32; 2],
    /// Adjacent elements; the second is `NONE` on the boundary.
    pub elements: [u32; 2],
    pub length: f64,
}

impl Edge {
    pub fn is_interior(&self) -> bool {
        self.elements[1] != NONE
    }
}

#[derive(Clone, Debug)]
pub struct CoarseMesh {
    pub config: MeshConfig,
    pub tree: RedGreenTree,
    pub regions: Vec<HexRegion>,
    a: Mat2,
    a_inv: Mat2,
    nodes: Vec<Vec2>,
    node_coord: Vec<LatticeCoord>,
    node_point: Vec<u32>,
    point_node: Vec<u32>,
    point_kind: Vec<AtomKind>,
    boundary: Vec<bool>,
    elements: Vec<Element>,
    edges: Vec<Edge>,
    leaf_elements: HashMap<RedTri, [u32; 2]>,
    core_atoms: Vec<u32>,
    interface_atoms: Vec<u32>,
    buffer_atoms: Vec<u32>,
}

/// Initial atomistic regions: one hop ball per defect, merged when close.
pub fn initial_regions(lat: &Lattice, ra: i32) -> Vec<HexRegion> {
    let origin = LatticeCoord::new(0, 0);
    let regions = match &lat.spec().defect.kind {
        DefectKind::None | DefectKind::ScrewDislocation { .. } => vec![HexRegion::ball(origin, ra)],
        DefectKind::MicroCrack { .. } => {
            let pts = lat.spec().defect.removed_sites();
            vec![HexRegion::hull_of(&pts).unwrap_or(HexRegion::ball(origin, 0)).expand(ra)]
        }
        DefectKind::MultiVacancy { sites } => {
            if sites.is_empty() {
                vec![HexRegion::ball(origin, ra)]
            } else {
                sites.iter().map(|&c| HexRegion::ball(c, ra)).collect()
            }
        }
    };
    merge_regions(regions).0
}

/// Replaces regions separated by at most two non-atomistic layers with their
/// hull until no such pair remains. Returns the number of merges.
pub fn merge_regions(mut regions: Vec<HexRegion>) -> (Vec<HexRegion>, usize) {
    let mut merges = 0;
    'outer: loop {
        for a in 0..regions.len() {
            for b in a + 1..regions.len() {
                if regions[a].hop_distance(&regions[b]) <= 3 {
                    let h = regions[a].hull(&regions[b]);
                    regions.remove(b);
                    regions[a] = h;
                    merges += 1;
                    continue 'outer;
                }
            }
        }
        return (regions, merges);
    }
}

impl CoarseMesh {
    pub fn initialize(lat: &Lattice, cfg: &MeshConfig) -> Result<Self> {
        cfg.validate()?;
        if lat.radius() != cfg.domain_radius {
            return Err(Error::Mesh("lattice and mesh domain radii differ".into()));
        }
        let regions = initial_regions(lat, cfg.ra);
        let mut tree = RedGreenTree::new(cfg.macro_side, cfg.domain_radius / cfg.macro_side);
        let (ra, c, beta) = (cfg.ra as f64, cfg.grading, cfg.beta);
        let rs = regions.clone();
        tree.grade(|p| {
            let d = rs.iter().map(|r| r.distance_to(p)).fold(f64::INFINITY, f64::min);
            (c * ((ra + d) / ra).powf(beta)).max(1.0)
        });
        Self::assemble(lat, cfg.clone(), tree, regions)
    }

    /// Rebuilds the mesh from a tree, resolving the fine zone and closing.
    pub fn assemble(lat: &Lattice, config: MeshConfig, mut tree: RedGreenTree, regions: Vec<HexRegion>) -> Result<Self> {
        if tree.radius() != lat.radius() {
            return Err(Error::Mesh("tree and lattice domain radii differ".into()));
        }
        let fine: Vec<HexRegion> = regions.iter().map(|r| r.expand(config.rbuf)).collect();
        for f in &fine {
            if f.expand(1).hex_extent() >= lat.radius() {
                return Err(Error::Mesh("atomistic region and buffer reach the domain boundary".into()));
            }
        }
        tree.resolve(&fine);
        tree.close();
        Self::derive(lat, config, tree, regions)
    }

    fn derive(lat: &Lattice, config: MeshConfig, tree: RedGreenTree, regions: Vec<HexRegion>) -> Result<Self> {
        let in_a = |c: LatticeCoord| regions.iter().any(|r| r.contains(c));
        let mut point_kind = vec![AtomKind::Outside; lat.len()];
        for r in &regions {
            for c in r.points() {
                let p = lat.index_of(c).ok_or_else(|| Error::Mesh("atomistic region leaves the domain".into()))?;
                if lat.is_vacant(p) {
                    continue;
                }
                let interface = DIRECTIONS.iter().any(|&d| !in_a(c + d));
                point_kind[p] = if interface { AtomKind::Interface } else { AtomKind::Core };
            }
        }
        for p in lat.vacancies() {
            let c = lat.coord(p);
            if !in_a(c) || DIRECTIONS.iter().any(|&d| !in_a(c + d)) {
                return Err(Error::Mesh(format!("defect site {c} is not inside the atomistic core")));
            }
        }
        for p in 0..lat.len() {
            if point_kind[p] == AtomKind::Interface && (0..6).any(|rho| lat.neighbor(p, rho).is_none()) {
                return Err(Error::Mesh(format!("interface atom {} lacks a full stencil", lat.coord(p))));
            }
        }

        let verts = tree.vertex_set();
        let mut node_coord: Vec<LatticeCoord> = verts.iter().copied().collect();
        node_coord.sort();
        let mut point_node = vec![NONE; lat.len()];
        let mut node_point = Vec::with_capacity(node_coord.len());
        for (n, &c) in node_coord.iter().enumerate() {
            let p = lat.index_of(c).ok_or_else(|| Error::Mesh(format!("mesh node {c} outside the lattice")))?;
            point_node[p] = n as u32;
            node_point.push(p as u32);
        }
        let a = lat.matrix();
        let nodes: Vec<Vec2> = node_coord.iter().map(|&c| lat.to_physical(c)).collect();
        let boundary: Vec<bool> = node_coord.iter().map(|c| c.hex_norm() == lat.radius()).collect();
        let nid = |c: LatticeCoord| point_node[lat.index_of(c).unwrap()];

        let mut elements = Vec::with_capacity(tree.leaves.len() + 64);
        let mut leaf_elements = HashMap::with_capacity(tree.leaves.len());
        for leaf in &tree.leaves {
            let v = leaf.vertices();
            let hanging = RedGreenTree::hanging_edges(leaf, &verts);
            let tris: Vec<[LatticeCoord; 3]> = match hanging.as_slice() {
                [] => vec![v],
                [(k, m)] => {
                    let (p, q, o) = (v[*k], v[(k + 1) % 3], v[(k + 2) % 3]);
                    vec![[p, *m, o], [*m, q, o]]
                }
                _ => return Err(Error::Mesh("closure left a leaf with several hanging edges".into())),
            };
            let green = tris.len() == 2;
            let mut ids = [NONE; 2];
            for (slot, t) in tris.iter().enumerate() {
                let ns = [nid(t[0]), nid(t[1]), nid(t[2])];
                let ps = [nodes[ns[0] as usize], nodes[ns[1] as usize], nodes[ns[2] as usize]];
                let area = signed_area(ps[0], ps[1], ps[2]);
                if area <= 0.0 {
                    return Err(Error::Mesh("element with nonpositive area".into()));
                }
                let kinds: Vec<AtomKind> = t.iter().map(|&c| point_kind[lat.index_of(c).unwrap()]).collect();
                let atom_count = t.iter().filter(|&&c| in_a(c)).count() as u8;
                let micro = if leaf.side == 1 && !green { lat.micro_at(leaf.anchor(), leaf.up).map(|m| m as u32) } else { None };
                let label = if micro.is_none() {
                    RegionLabel::Continuum
                } else if kinds.contains(&AtomKind::Interface) {
                    RegionLabel::Interface
                } else if atom_count == 3 {
                    RegionLabel::AtomCore
                } else {
                    RegionLabel::Buffer
                };
                ids[slot] = elements.len() as u32;
                elements.push(Element {
                    nodes: ns,
                    label,
                    leaf: *leaf,
                    green,
                    area,
                    diameter: diameter(&ps),
                    atom_count,
                    micro,
                });
            }
            leaf_elements.insert(*leaf, ids);
        }

        let mut edge_map: BTreeMap<(u32, u32), [u32; 2]> = BTreeMap::new();
        for (e, el) in elements.iter().enumerate() {
            for k in 0..3 {
                let (p, q) = (el.nodes[k], el.nodes[(k + 1) % 3]);
                let key = (p.min(q), p.max(q));
                let entry = edge_map.entry(key).or_insert([NONE; 2]);
                if entry[0] == NONE {
                    entry[0] = e as u32;
                } else if entry[1] == NONE {
                    entry[1] = e as u32;
                } else {
                    return Err(Error::Mesh("edge shared by more than two elements".into()));
                }
            }
        }
        let edges: Vec<Edge> = edge_map
            .into_iter()
            .map(|((p, q), els)| Edge {
                nodes: [p, q],
                elements: els,
                length: (nodes[p as usize] - nodes[q as usize]).norm(),
            })
            .collect();

        let mut core_atoms = Vec::new();
        let mut interface_atoms = Vec::new();
        let mut buffer_set = HashSet::new();
        for (n, &p) in node_point.iter().enumerate() {
            match point_kind[p as usize] {
                AtomKind::Core => core_atoms.push(n as u32),
                AtomKind::Interface => interface_atoms.push(n as u32),
                AtomKind::Outside => {}
            }
        }
        for el in &elements {
            if el.label == RegionLabel::Buffer {
                for &n in &el.nodes {
                    let p = node_point[n as usize] as usize;
                    if point_kind[p] == AtomKind::Outside && !lat.is_vacant(p) {
                        buffer_set.insert(n);
                    }
                }
            }
        }
        let mut buffer_atoms: Vec<u32> = buffer_set.into_iter().collect();
        buffer_atoms.sort();

        let mesh = CoarseMesh {
            config,
            tree,
            regions,
            a,
            a_inv: a.try_inverse().expect("nonsingular lattice"),
            nodes,
            node_coord,
            node_point,
            point_node,
            point_kind,
            boundary,
            elements,
            edges,
            leaf_elements,
            core_atoms,
            interface_atoms,
            buffer_atoms,
        };
        mesh.check_interface_stars(lat)?;
        Ok(mesh)
    }

    fn check_interface_stars(&self, lat: &Lattice) -> Result<()> {
        for &n in &self.interface_atoms {
            let c = self.node_coord[n as usize];
            let stars = [
                (c, true),
                (c, false),
                (c - LatticeCoord::new(1, 0), true),
                (c - LatticeCoord::new(0, 1), true),
                (c - LatticeCoord::new(1, 0), false),
                (c - LatticeCoord::new(0, 1), false),
            ];
            for (a, up) in stars {
                let t = RedTri::new(a.i, a.j, 1, up);
                if !t.vertices().contains(&c) {
                    continue;
                }
                match self.leaf_elements.get(&t) {
                    Some(ids) if ids[1] == NONE => {}
                    _ => return Err(Error::Mesh(format!("canonical star of interface atom {c} is not resolved"))),
                }
            }
        }
        let _ = lat;
        Ok(())
    }

    /// Red-refines the leaves owning the given elements.
    pub fn refine(&self, lat: &Lattice, marked: &[usize]) -> Result<Self> {
        let mut tree = self.tree.clone();
        for &e in marked {
            tree.refine(&self.elements[e].leaf);
        }
        Self::assemble(lat, self.config.clone(), tree, self.regions.clone())
    }

    /// Widens the selected regions (all when `which` is `None`) by `k` hops
    /// and merges regions that come within two layers. Returns the new mesh
    /// and the number of merges.
    pub fn expand_interface(&self, lat: &Lattice, k: i32, which: Option<&[usize]>) -> Result<(Self, usize)> {
        if k < 1 {
            return Err(Error::Mesh("expansion needs k >= 1".into()));
        }
        let regions: Vec<HexRegion> = self
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| if which.is_none_or(|w| w.contains(&i)) { r.expand(k) } else { *r })
            .collect();
        let (regions, merges) = merge_regions(regions);
        let mesh = Self::assemble(lat, self.config.clone(), self.tree.clone(), regions)?;
        Ok((mesh, merges))
    }

    /// Transfers the mesh to a larger lattice domain with `n` macro rings.
    pub fn enlarge(&self, lat: &Lattice) -> Result<Self> {
        let mut tree = self.tree.clone();
        let s0 = tree.s0;
        if lat.radius() % s0 != 0 || lat.radius() < tree.radius() {
            return Err(Error::Mesh("enlarged radius must be a larger multiple of the macro side".into()));
        }
        tree.enlarge(lat.radius() / s0);
        let mut cfg = self.config.clone();
        cfg.domain_radius = lat.radius();
        Self::assemble(lat, cfg, tree, self.regions.clone())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Vec2] {
        &self.nodes
    }

    pub fn node(&self, n: usize) -> Vec2 {
        self.nodes[n]
    }

    pub fn node_coord(&self, n: usize) -> LatticeCoord {
        self.node_coord[n]
    }

    pub fn node_point(&self, n: usize) -> usize {
        self.node_point[n] as usize
    }

    pub fn point_node(&self, p: usize) -> Option<usize> {
        let n = self.point_node[p];
        (n != NONE).then_some(n as usize)
    }

    pub fn point_kind(&self, p: usize) -> AtomKind {
        self.point_kind[p]
    }

    pub fn is_boundary(&self, n: usize) -> bool {
        self.boundary[n]
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, e: usize) -> &Element {
        &self.elements[e]
    }

    pub fn element_points(&self, e: usize) -> [Vec2; 3] {
        let n = self.elements[e].nodes;
        [self.nodes[n[0] as usize], self.nodes[n[1] as usize], self.nodes[n[2] as usize]]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn core_atoms(&self) -> &[u32] {
        &self.core_atoms
    }

    pub fn interface_atoms(&self) -> &[u32] {
        &self.interface_atoms
    }

    pub fn buffer_atoms(&self) -> &[u32] {
        &self.buffer_atoms
    }

    /// Whether a lattice point lies in the atomistic region (core or interface).
    pub fn is_atomistic_point(&self, p: usize) -> bool {
        self.point_kind[p] != AtomKind::Outside
    }

    pub fn to_lattice(&self, x: Vec2) -> Vec2 {
        self.a_inv * x
    }

    pub fn lattice_matrix(&self) -> Mat2 {
        self.a
    }

    /// Element containing `x` and the barycentric coordinates of `x` in it.
    pub fn locate(&self, x: Vec2) -> Option<(usize, [f64; 3])> {
        let leaf = self.tree.locate(self.a_inv * x)?;
        let ids = self.leaf_elements.get(&leaf)?;
        let mut best: Option<(usize, [f64; 3])> = None;
        for &e in ids.iter().filter(|&&e| e != NONE) {
            let lam = barycentric(&self.element_points(e as usize), x);
            let score = lam.iter().copied().fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, b)| score > b.iter().copied().fold(f64::INFINITY, f64::min)) {
                best = Some((e as usize, lam));
            }
        }
        best
    }

    /// P1 interpolation of nodal values at `x`.
    pub fn interpolate(&self, values: &[crate::Vec2], x: Vec2) -> Option<Vec2> {
        let (e, lam) = self.locate(x)?;
        let n = self.elements[e].nodes;
        Some(values[n[0] as usize] * lam[0] + values[n[1] as usize] * lam[1] + values[n[2] as usize] * lam[2])
    }

    /// `(micro element, |T ∩ T'|)` for every canonical triangle meeting
    /// element `e`. Candidates come from the lattice cells of the bounding box.
    pub fn intersection_areas(&self, lat: &Lattice, e: usize) -> Vec<(usize, f64)> {
        let el = &self.elements[e];
        if let Some(m) = el.micro {
            return vec![(m as usize, el.area)];
        }
        let pts = self.element_points(e);
        let lc: Vec<Vec2> = pts.iter().map(|&p| self.a_inv * p).collect();
        let imin = lc.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).floor() as i32;
        let imax = lc.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).ceil() as i32;
        let jmin = lc.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).floor() as i32;
        let jmax = lc.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).ceil() as i32;
        let mut out = Vec::new();
        for i in imin..imax {
            for j in jmin..jmax {
                for up in [true, false] {
                    let Some(m) = lat.micro_at(LatticeCoord::new(i, j), up) else { continue };
                    let t = lat.micro_elements()[m];
                    let tp = [lat.position(t[0] as usize), lat.position(t[1] as usize), lat.position(t[2] as usize)];
                    let a = polygon_area(&clip_polygon(&tp, &pts));
                    if a > 1e-14 * el.area {
                        out.push((m, a));
                    }
                }
            }
        }
        out
    }

    /// Canonical triangles owned by element `e` with the covered fraction
    /// `|T ∩ T'| / |T'|`; unit weights except along green cuts.
    pub fn micro_weights(&self, lat: &Lattice, e: usize) -> Vec<(usize, f64)> {
        let el = &self.elements[e];
        if let Some(m) = el.micro {
            return vec![(m as usize, 1.0)];
        }
        let pts = self.element_points(e);
        let b = el.leaf.bounds();
        let micro_area = lat.micro_area();
        let mut out = Vec::new();
        for i in b.imin..b.imax {
            for j in b.jmin..b.jmax {
                for up in [true, false] {
                    let t = RedTri::new(i, j, 1, up);
                    let v = t.vertices();
                    let bc = Vec2::new(
                        (v[0].i + v[1].i + v[2].i) as f64 / 3.0,
                        (v[0].j + v[1].j + v[2].j) as f64 / 3.0,
                    );
                    if !el.leaf.contains(bc, 1e-9) {
                        continue;
                    }
                    let Some(m) = lat.micro_at(t.anchor(), up) else { continue };
                    if !el.green {
                        out.push((m, 1.0));
                        continue;
                    }
                    let lam = barycentric(&pts, self.a * bc);
                    let lo = lam.iter().copied().fold(f64::INFINITY, f64::min);
                    if lo > 1e-9 {
                        out.push((m, 1.0));
                    } else if lo > -1e-9 {
                        let tri = lat.micro_elements()[m];
                        let tp = [
                            lat.position(tri[0] as usize),
                            lat.position(tri[1] as usize),
                            lat.position(tri[2] as usize),
                        ];
                        let w = polygon_area(&clip_polygon(&tp, &pts)) / micro_area;
                        if w > 1e-12 {
                            out.push((m, w));
                        }
                    }
                }
            }
        }
        out
    }

    /// Hop-norm distance from a physical point to the nearest atomistic region.
    pub fn distance_to_atomistic(&self, x: Vec2) -> f64 {
        let p = self.a_inv * x;
        self.regions.iter().map(|r| r.distance_to(p)).fold(f64::INFINITY, f64::min)
    }

    /// Index of the region closest to a physical point.
    pub fn nearest_region(&self, x: Vec2) -> usize {
        let p = self.a_inv * x;
        let mut best = 0;
        let mut d = f64::INFINITY;
        for (i, r) in self.regions.iter().enumerate() {
            let di = r.distance_to(p);
            if di < d {
                d = di;
                best = i;
            }
        }
        best
    }

    /// Number of connected components of the atomistic region.
    pub fn atomistic_components(&self) -> usize {
        let pts: HashSet<LatticeCoord> = self.regions.iter().flat_map(|r| r.points()).collect();
        let mut sorted: Vec<LatticeCoord> = pts.iter().copied().collect();
        sorted.sort();
        let mut seen = HashSet::new();
        let mut comps = 0;
        for &s in &sorted {
            if !seen.insert(s) {
                continue;
            }
            comps += 1;
            let mut stack = vec![s];
            while let Some(c) = stack.pop() {
                for d in DIRECTIONS {
                    if pts.contains(&(c + d)) && seen.insert(c + d) {
                        stack.push(c + d);
                    }
                }
            }
        }
        comps
    }

    /// Minimum interior angle over all elements, in degrees.
    pub fn min_angle(&self) -> f64 {
        let mut m = 180.0f64;
        for e in 0..self.elements.len() {
            let p = self.element_points(e);
            for k in 0..3 {
                let u = p[(k + 1) % 3] - p[k];
                let v = p[(k + 2) % 3] - p[k];
                m = m.min((u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
        m
    }

    /// Plain-text snapshot with `nodes`, `elements` and `edges` sections.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "nodes {}", self.nodes.len())?;
        for (n, x) in self.nodes.iter().enumerate() {
            writeln!(w, "{} {:.16e} {:.16e}", n, x.x, x.y)?;
        }
        writeln!(w, "elements {}", self.elements.len())?;
        for (e, el) in self.elements.iter().enumerate() {
            writeln!(w, "{} {} {} {} {}", e, el.nodes[0], el.nodes[1], el.nodes[2], el.label.as_str())?;
        }
        writeln!(w, "edges {}", self.edges.len())?;
        for ed in &self.edges {
            let other = if ed.elements[1] == NONE { -1 } else { ed.elements[1] as i64 };
            writeln!(w, "{} {} {} {} {:.16e}", ed.nodes[0], ed.nodes[1], ed.elements[0], other, ed.length)?;
        }
        Ok(())
    }
}
