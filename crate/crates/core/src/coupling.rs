use crate::error::{Error, Result};
use crate::geometry::p1_gradients;
use crate::kinematics::Kinematics;
use crate::lattice::{Lattice, Mat2, Vec2, NONE};
use crate::mesh::{AtomKind, CoarseMesh, RegionLabel};
use crate::potential::{CauchyBorn, Eam, Stencil, Vec3};

pub type Coefficients = [[f64; 6]; 6];

/// Interface reconstruction coefficients, one 6x6 block per interface atom.
#[derive(Clone, Debug)]
pub struct ReconstructionTable {
    /// Mesh node of each interface atom.
    pub atoms: Vec<u32>,
    pub coeffs: Vec<Coefficients>,
}

impl ReconstructionTable {
    pub fn row_of(&self, node: u32) -> Option<usize> {
        self.atoms.binary_search(&node).ok()
    }
}

/// Bonds towards atomistic neighbours are kept; a bond towards a continuum
/// neighbour is replaced by `2/3` of itself plus `1/3` of each adjacent bond.
pub fn build_reconstruction(lat: &Lattice, mesh: &CoarseMesh) -> Result<ReconstructionTable> {
    let mut atoms = mesh.interface_atoms().to_vec();
    atoms.sort();
    let mut coeffs = Vec::with_capacity(atoms.len());
    for &n in &atoms {
        let p = mesh.node_point(n as usize);
        let mut c = [[0.0; 6]; 6];
        let mut continuum = 0;
        for rho in 0..6 {
            let q = lat
                .neighbor(p, rho)
                .ok_or_else(|| Error::Mesh(format!("interface atom {} has a missing neighbour", lat.coord(p))))?;
            if mesh.point_kind(q) == AtomKind::Outside {
                continuum += 1;
                c[rho][rho] = 2.0 / 3.0;
                c[rho][(rho + 1) % 6] = 1.0 / 3.0;
                c[rho][(rho + 5) % 6] = 1.0 / 3.0;
            } else {
                c[rho][rho] = 1.0;
            }
        }
        if continuum == 0 {
            return Err(Error::Mesh(format!("interface atom {} has no continuum neighbour", lat.coord(p))));
        }
        coeffs.push(c);
    }
    Ok(ReconstructionTable { atoms, coeffs })
}

/// `omega_l` for interface atoms and `omega_T` for elements.
#[derive(Clone, Debug)]
pub struct EffectiveVolumes {
    pub site: Vec<f64>,
    pub element: Vec<f64>,
}

/// Every atom in the atomistic region carries its whole Voronoi cell; a
/// canonical element keeps the share `1 - (atomistic vertices)/3` of its area
/// not claimed by those cells, and larger elements keep all of it.
pub fn build_volumes(mesh: &CoarseMesh, table: &ReconstructionTable) -> EffectiveVolumes {
    let element = mesh
        .elements()
        .iter()
        .map(|e| if e.is_micro() { 1.0 - e.atom_count as f64 / 3.0 } else { 1.0 })
        .collect();
    EffectiveVolumes { site: vec![1.0; table.atoms.len()], element }
}

#[derive(Clone, Debug)]
struct Site {
    node: u32,
    nbr: [u32; 6],
    row: u32,
    reference: f64,
}

#[derive(Clone, Debug)]
pub struct ElementData {
    pub element: u32,
    pub nodes: [u32; 3],
    pub grads: [Vec2; 3],
    pub area: f64,
    pub weight: f64,
    pub base: Mat2,
}

/// The coupled energy `E^ac` over corrector values at mesh nodes.
pub struct AcProblem<'a> {
    pub lat: &'a Lattice,
    pub mesh: &'a CoarseMesh,
    pub kin: &'a Kinematics,
    pub cb: CauchyBorn,
    pub table: ReconstructionTable,
    pub volumes: EffectiveVolumes,
    offsets: Vec<f64>,
    sites: Vec<Site>,
    elems: Vec<ElementData>,
    free: Vec<bool>,
}

impl<'a> AcProblem<'a> {
    pub fn new(lat: &'a Lattice, mesh: &'a CoarseMesh, kin: &'a Kinematics, eam: Eam) -> Result<Self> {
        let table = build_reconstruction(lat, mesh)?;
        let volumes = build_volumes(mesh, &table);
        Self::with_tables(lat, mesh, kin, eam, table, volumes)
    }

    pub fn with_tables(
        lat: &'a Lattice,
        mesh: &'a CoarseMesh,
        kin: &'a Kinematics,
        eam: Eam,
        table: ReconstructionTable,
        volumes: EffectiveVolumes,
    ) -> Result<Self> {
        let cb = CauchyBorn::new(eam, kin.mode(), *lat.lattice_vectors(), lat.det_a());
        let offsets = kin.offsets(mesh.nodes())?;
        let mut problem = AcProblem {
            lat,
            mesh,
            kin,
            cb,
            table,
            volumes,
            offsets,
            sites: Vec::new(),
            elems: Vec::new(),
            free: Vec::new(),
        };
        let mut nodes: Vec<u32> = mesh.core_atoms().iter().chain(mesh.interface_atoms()).copied().collect();
        nodes.sort();
        for n in nodes {
            let p = mesh.node_point(n as usize);
            let mut nbr = [NONE; 6];
            for rho in 0..6 {
                if let Some(q) = lat.neighbor(p, rho) {
                    nbr[rho] = mesh
                        .point_node(q)
                        .ok_or_else(|| Error::Mesh(format!("neighbour of atom {} is not a mesh node", lat.coord(p))))?
                        as u32;
                }
            }
            let row = problem.table.row_of(n).map_or(NONE, |r| r as u32);
            let mut site = Site { node: n, nbr, row, reference: 0.0 };
            let r = problem.reference_stencil(&site);
            site.reference = problem.cb.eam.raw_energy(&r)?;
            problem.sites.push(site);
        }
        for (e, el) in mesh.elements().iter().enumerate() {
            let w = problem.volumes.element[e];
            if w == 0.0 {
                continue;
            }
            let pts = mesh.element_points(e);
            let (grads, area) = p1_gradients(&pts).ok_or_else(|| Error::Domain("collapsed element".into()))?;
            let off = el.nodes.map(|n| problem.offsets[n as usize]);
            let base = kin.base_gradient(&pts, &off)?;
            problem.elems.push(ElementData { element: e as u32, nodes: el.nodes, grads, area, weight: w * area, base });
        }
        problem.free = (0..mesh.num_nodes())
            .map(|n| !mesh.is_boundary(n) && !lat.is_vacant(mesh.node_point(n)))
            .collect();
        Ok(problem)
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    pub fn free(&self) -> &[bool] {
        &self.free
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn element_data(&self) -> &[ElementData] {
        &self.elems
    }

    /// Number of degrees of freedom (free nodes times arity).
    pub fn dofs(&self) -> usize {
        self.free.iter().filter(|f| **f).count() * self.kin.arity()
    }

    fn reconstruct(&self, site: &Site, s: &Stencil) -> Stencil {
        if site.row == NONE {
            return *s;
        }
        let c = &self.table.coeffs[site.row as usize];
        std::array::from_fn(|rho| {
            let mut r = Vec3::zeros();
            for (sig, v) in s.iter().enumerate() {
                if c[rho][sig] != 0.0 {
                    r += c[rho][sig] * v.expect("interface stencils are complete");
                }
            }
            Some(r)
        })
    }

    fn reference_stencil(&self, site: &Site) -> Stencil {
        let n = site.node as usize;
        let s: Stencil = std::array::from_fn(|rho| {
            let m = site.nbr[rho];
            (m != NONE).then(|| {
                self.kin.reference_bond(self.lat.lattice_vector(rho), self.offsets[n], self.offsets[m as usize])
            })
        });
        self.reconstruct(site, &s)
    }

    fn raw_stencil(&self, site: &Site, u: &[Vec2]) -> Stencil {
        let n = site.node as usize;
        std::array::from_fn(|rho| {
            let m = site.nbr[rho];
            (m != NONE).then(|| {
                let m = m as usize;
                self.kin.bond(self.lat.lattice_vector(rho), self.offsets[n], self.offsets[m], u[m] - u[n])
            })
        })
    }

    /// Deformation gradient on an element.
    pub fn element_gradient(&self, d: &ElementData, u: &[Vec2]) -> Mat2 {
        let mut f = d.base;
        for k in 0..3 {
            f += u[d.nodes[k] as usize] * d.grads[k].transpose();
        }
        f
    }

    pub fn energy(&self, u: &[Vec2]) -> Result<f64> {
        let mut e = 0.0;
        for site in &self.sites {
            let s = self.reconstruct(site, &self.raw_stencil(site, u));
            e += self.cb.eam.raw_energy(&s)? - site.reference;
        }
        for d in &self.elems {
            e += d.weight * self.cb.energy(&self.element_gradient(d, u))?;
        }
        Ok(e)
    }

    /// Effective bond derivatives `dE/d(D_s y)` of every atomistic site, projected
    /// onto the unknowns, as `(node, [neighbour node; 6], [derivative; 6])`.
    pub fn site_forces(&self, u: &[Vec2]) -> Result<Vec<(u32, [u32; 6], [Vec2; 6])>> {
        let mut out = Vec::with_capacity(self.sites.len());
        let mut g = [Vec3::zeros(); 6];
        for site in &self.sites {
            self.site_energy_gradient(site, u, &mut g)?;
            out.push((site.node, site.nbr, g.map(|v| self.kin.mode().project(v))));
        }
        Ok(out)
    }

    fn site_energy_gradient(&self, site: &Site, u: &[Vec2], g: &mut [Vec3; 6]) -> Result<f64> {
        let raw = self.raw_stencil(site, u);
        if site.row == NONE {
            return Ok(self.cb.eam.raw_energy_gradient(&raw, g)? - site.reference);
        }
        let s = self.reconstruct(site, &raw);
        let mut gr = [Vec3::zeros(); 6];
        let v = self.cb.eam.raw_energy_gradient(&s, &mut gr)?;
        let c = &self.table.coeffs[site.row as usize];
        for sig in 0..6 {
            let mut acc = Vec3::zeros();
            for rho in 0..6 {
                if c[rho][sig] != 0.0 {
                    acc += c[rho][sig] * gr[rho];
                }
            }
            g[sig] = acc;
        }
        Ok(v - site.reference)
    }

    /// Energy and its gradient with respect to nodal values; the gradient is
    /// zero at constrained nodes.
    pub fn energy_gradient(&self, u: &[Vec2], grad: &mut [Vec2]) -> Result<f64> {
        grad.iter_mut().for_each(|g| *g = Vec2::zeros());
        let mode = self.kin.mode();
        let mut e = 0.0;
        let mut g = [Vec3::zeros(); 6];
        for site in &self.sites {
            e += self.site_energy_gradient(site, u, &mut g)?;
            let n = site.node as usize;
            for rho in 0..6 {
                let m = site.nbr[rho];
                if m != NONE {
                    let f = mode.project(g[rho]);
                    grad[m as usize] += f;
                    grad[n] -= f;
                }
            }
        }
        for d in &self.elems {
            let (w, dw) = self.cb.energy_stress(&self.element_gradient(d, u))?;
            e += d.weight * w;
            for k in 0..3 {
                grad[d.nodes[k] as usize] += d.weight * (dw * d.grads[k]);
            }
        }
        for (n, g) in grad.iter_mut().enumerate() {
            if !self.free[n] {
                *g = Vec2::zeros();
            }
        }
        Ok(e)
    }

    /// Fills corrector values at vacancy nodes from their neighbours.
    pub fn extend_vacancies(&self, u: &mut [Vec2]) {
        let mut field = vec![Vec2::zeros(); self.lat.len()];
        let vac: Vec<usize> = self.lat.vacancies().collect();
        if vac.is_empty() {
            return;
        }
        for n in 0..self.mesh.num_nodes() {
            field[self.mesh.node_point(n)] = u[n];
        }
        self.lat.extend_vacancies(&mut field);
        for p in vac {
            if let Some(n) = self.mesh.point_node(p) {
                u[n] = field[p];
            }
        }
    }

    /// Area of the coupled domain weighted as in the energy; used by the
    /// energy patch test.
    pub fn domain_area(&self) -> f64 {
        self.mesh.elements().iter().map(|e| e.area).sum()
    }

    pub fn labels(&self) -> impl Iterator<Item = RegionLabel> + '_ {
        self.mesh.elements().iter().map(|e| e.label)
    }
}
