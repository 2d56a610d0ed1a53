use crate::error::Result;
use crate::kinematics::Kinematics;
use crate::lattice::{Lattice, Vec2, DIRECTIONS};
use crate::potential::{BondGradient, Eam, Stencil, Vec3};
use crate::sparse::{p1_laplacian, Cholesky};

/// Full lattice energy `E^a` over corrector values at every lattice point,
/// clamped on the outer ring. Outer-ring sites see clamped ghost neighbours
/// outside the domain, so every site carries a full stencil.
pub struct AtomisticProblem<'a> {
    pub lat: &'a Lattice,
    pub kin: &'a Kinematics,
    pub eam: Eam,
    offsets: Vec<f64>,
    reference: Vec<f64>,
    free: Vec<bool>,
    /// Predictor values of the ghost neighbours of each site (`NAN` where the
    /// neighbour is present or a vacancy).
    ghosts: Vec<[f64; 6]>,
}

impl<'a> AtomisticProblem<'a> {
    pub fn new(lat: &'a Lattice, kin: &'a Kinematics, eam: Eam) -> Result<Self> {
        let offsets = kin.offsets(lat.positions())?;
        let mut ghosts = vec![[f64::NAN; 6]; lat.len()];
        for (l, g) in ghosts.iter_mut().enumerate() {
            if !lat.is_boundary(l) {
                continue;
            }
            for (rho, d) in DIRECTIONS.iter().enumerate() {
                let c = lat.coord(l) + *d;
                if lat.index_of(c).is_none() {
                    g[rho] = kin.offset(lat.to_physical(c))?;
                }
            }
        }
        let mut p = AtomisticProblem { lat, kin, eam, offsets, reference: Vec::new(), free: Vec::new(), ghosts };
        let mut reference = vec![0.0; lat.len()];
        for (l, r) in reference.iter_mut().enumerate() {
            if !lat.is_vacant(l) {
                *r = eam.raw_energy(&p.reference_stencil(l))?;
            }
        }
        p.reference = reference;
        p.free = (0..lat.len()).map(|l| !lat.is_vacant(l) && !lat.is_boundary(l)).collect();
        Ok(p)
    }

    pub fn free(&self) -> &[bool] {
        &self.free
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    fn reference_stencil(&self, l: usize) -> Stencil {
        std::array::from_fn(|rho| {
            let a = self.lat.lattice_vector(rho);
            match self.lat.neighbor(l, rho) {
                Some(m) => Some(self.kin.reference_bond(a, self.offsets[l], self.offsets[m])),
                None => self.ghost(l, rho).map(|o| self.kin.reference_bond(a, self.offsets[l], o)),
            }
        })
    }

    fn ghost(&self, l: usize, rho: usize) -> Option<f64> {
        let o = self.ghosts[l][rho];
        (!o.is_nan()).then_some(o)
    }

    pub fn stencil(&self, l: usize, u: &[Vec2]) -> Stencil {
        self.stencil_by(l, |m| u[m])
    }

    /// Stencil of site `l` with corrector values supplied by `u`.
    pub fn stencil_by(&self, l: usize, u: impl Fn(usize) -> Vec2) -> Stencil {
        let ul = u(l);
        std::array::from_fn(|rho| {
            let a = self.lat.lattice_vector(rho);
            match self.lat.neighbor(l, rho) {
                Some(m) => Some(self.kin.bond(a, self.offsets[l], self.offsets[m], u(m) - ul)),
                None => self.ghost(l, rho).map(|o| self.kin.bond(a, self.offsets[l], o, -ul)),
            }
        })
    }

    pub fn energy(&self, u: &[Vec2]) -> Result<f64> {
        let mut e = 0.0;
        for l in 0..self.lat.len() {
            if !self.lat.is_vacant(l) {
                e += self.eam.raw_energy(&self.stencil(l, u))? - self.reference[l];
            }
        }
        Ok(e)
    }

    pub fn energy_gradient(&self, u: &[Vec2], grad: &mut [Vec2]) -> Result<f64> {
        grad.iter_mut().for_each(|g| *g = Vec2::zeros());
        let mode = self.kin.mode();
        let mut g = [Vec3::zeros(); 6];
        let mut e = 0.0;
        for l in 0..self.lat.len() {
            if self.lat.is_vacant(l) {
                continue;
            }
            e += self.eam.raw_energy_gradient(&self.stencil(l, u), &mut g)? - self.reference[l];
            for rho in 0..6 {
                if let Some(m) = self.lat.neighbor(l, rho) {
                    let f = mode.project(g[rho]);
                    grad[m] += f;
                    grad[l] -= f;
                }
            }
        }
        for (l, g) in grad.iter_mut().enumerate() {
            if !self.free[l] {
                *g = Vec2::zeros();
            }
        }
        Ok(e)
    }

    /// Bond derivatives of one site; `None` at vacancies.
    pub fn site_gradient(&self, l: usize, u: &[Vec2]) -> Result<Option<BondGradient>> {
        if self.lat.is_vacant(l) {
            return Ok(None);
        }
        Ok(Some(self.eam.site_gradient(&self.stencil(l, u))?))
    }

    pub fn preconditioner(&self) -> Result<(Cholesky, Vec<usize>)> {
        let (a, map) = p1_laplacian(self.lat.positions(), self.lat.micro_elements(), &self.free, 1e-8);
        let coords: Vec<Vec2> = (0..self.lat.len()).filter(|&l| self.free[l]).map(|l| self.lat.position(l)).collect();
        Ok((Cholesky::factor(&a, &coords)?, map))
    }
}
