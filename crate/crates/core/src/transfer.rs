//! Moving corrector fields between coarse meshes and the lattice.

use crate::error::{Error, Result};
use crate::kinematics::Kinematics;
use crate::lattice::{Lattice, Vec2};
use crate::mesh::CoarseMesh;
use crate::potential::BondMode;
use crate::predictor::ScrewConfig;

/// P1 interpolant of a coarse corrector, evaluated at lattice points. Out of
/// plane the total displacement `u0 + u` is interpolated with the predictor
/// unwrapped around the evaluation point, so that elements crossing the
/// branch cut see a continuous field.
pub struct LatticeInterpolant<'a> {
    mesh: &'a CoarseMesh,
    u: &'a [Vec2],
    screw: Option<ScrewConfig>,
    node_offsets: Vec<f64>,
}

impl<'a> LatticeInterpolant<'a> {
    pub fn new(mesh: &'a CoarseMesh, kin: &Kinematics, u: &'a [Vec2]) -> Result<Self> {
        if u.len() != mesh.num_nodes() {
            return Err(Error::Domain("corrector length does not match the mesh".into()));
        }
        let screw = match kin {
            Kinematics::AntiPlane { screw } => Some(screw.clone()),
            Kinematics::InPlane { .. } => None,
        };
        let node_offsets = kin.offsets(mesh.nodes())?;
        Ok(LatticeInterpolant { mesh, u, screw, node_offsets })
    }

    /// Corrector at `x`; `None` outside the mesh.
    pub fn value(&self, x: Vec2) -> Result<Option<Vec2>> {
        let Some((e, lam)) = self.mesh.locate(x) else { return Ok(None) };
        let nodes = self.mesh.element(e).nodes;
        for k in 0..3 {
            if lam[k] > 1.0 - 1e-12 {
                return Ok(Some(self.u[nodes[k] as usize]));
            }
        }
        let mut v = Vec2::zeros();
        for k in 0..3 {
            v += lam[k] * self.u[nodes[k] as usize];
        }
        if let Some(s) = &self.screw {
            let u0 = s.value(x)?;
            for k in 0..3 {
                v.x += lam[k] * s.wrap(self.node_offsets[nodes[k] as usize] - u0);
            }
        }
        Ok(Some(v))
    }

    /// Values at every point of `lat`, zero outside the mesh.
    pub fn on_lattice(&self, lat: &Lattice) -> Result<Vec<Vec2>> {
        let mut out = vec![Vec2::zeros(); lat.len()];
        let same = lat.radius() == self.mesh.config.domain_radius;
        for (p, o) in out.iter_mut().enumerate() {
            if same {
                if let Some(n) = self.mesh.point_node(p) {
                    *o = self.u[n];
                    continue;
                }
            }
            *o = self.value(lat.position(p))?.unwrap_or_else(Vec2::zeros);
        }
        Ok(out)
    }
}

/// Interpolates a corrector onto a new mesh; nodes outside the old domain and
/// boundary nodes get zero.
pub fn prolongate(old: &CoarseMesh, kin: &Kinematics, u: &[Vec2], new: &CoarseMesh) -> Result<Vec<Vec2>> {
    let interp = LatticeInterpolant::new(old, kin, u)?;
    let mut out = vec![Vec2::zeros(); new.num_nodes()];
    for (n, o) in out.iter_mut().enumerate() {
        if new.is_boundary(n) {
            continue;
        }
        *o = interp.value(new.node(n))?.unwrap_or_else(Vec2::zeros);
    }
    Ok(out)
}

/// `|| grad (I_a u_h - u) ||_{L2}` over the canonical triangles of the
/// reference lattice; the coarse corrector is zero outside its own domain.
pub fn true_error(ref_lat: &Lattice, u_ref: &[Vec2], mesh: &CoarseMesh, kin: &Kinematics, u_h: &[Vec2]) -> Result<f64> {
    if u_ref.len() != ref_lat.len() {
        return Err(Error::Domain("reference solution does not match its lattice".into()));
    }
    if ref_lat.radius() < mesh.config.domain_radius {
        return Err(Error::Domain("reference domain is smaller than the coupled domain".into()));
    }
    let ia = LatticeInterpolant::new(mesh, kin, u_h)?.on_lattice(ref_lat)?;
    let mut d: Vec<Vec2> = ia.iter().zip(u_ref).map(|(a, b)| a - b).collect();
    ref_lat.extend_vacancies(&mut d);
    Ok(lattice_gradient_norm(ref_lat, &d, kin.mode()))
}

/// L2 norm of the canonical P1 gradient of a lattice field.
pub fn lattice_gradient_norm(lat: &Lattice, v: &[Vec2], mode: BondMode) -> f64 {
    let area = lat.micro_area();
    let mut s = 0.0;
    for t in lat.micro_elements() {
        let p = t.map(|k| lat.position(k as usize));
        let Some((g, _)) = crate::geometry::p1_gradients(&p) else { continue };
        let mut grad = crate::lattice::Mat2::zeros();
        for k in 0..3 {
            grad += v[t[k] as usize] * g[k].transpose();
        }
        if mode == BondMode::AntiPlane {
            grad.set_row(1, &nalgebra::RowVector2::zeros());
        }
        s += area * grad.norm_squared();
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{DefectSpec, LatticeSpec};
    use crate::mesh::MeshConfig;

    fn setup(defect: DefectSpec) -> (Lattice, CoarseMesh, Kinematics) {
        let lat = Lattice::new(LatticeSpec::triangular(32.0, defect.clone())).unwrap();
        let cfg = MeshConfig { domain_radius: 32, macro_side: 16, ..MeshConfig::default() };
        let mesh = CoarseMesh::initialize(&lat, &cfg).unwrap();
        (lat, mesh, Kinematics::from_defect(&defect))
    }

    #[test]
    fn affine_fields_are_reproduced() {
        let (lat, mesh, kin) = setup(DefectSpec::none());
        let g = crate::lattice::Mat2::new(0.01, -0.02, 0.03, 0.005);
        let u: Vec<Vec2> = mesh.nodes().iter().map(|x| g * x).collect();
        let ia = LatticeInterpolant::new(&mesh, &kin, &u).unwrap().on_lattice(&lat).unwrap();
        for p in 0..lat.len() {
            assert!((ia[p] - g * lat.position(p)).norm() < 1e-12, "{} {:?} {:?}", lat.coord(p), ia[p], mesh.locate(lat.position(p)));
        }
    }

    #[test]
    fn error_of_identical_fields_is_zero_and_linear_offset_is_exact() {
        let (lat, mesh, kin) = setup(DefectSpec::none());
        let u_h: Vec<Vec2> = mesh.nodes().iter().map(|x| Vec2::new((0.3 * x.x).sin(), x.y.cos()) * 1e-2).collect();
        let u_ref = LatticeInterpolant::new(&mesh, &kin, &u_h).unwrap().on_lattice(&lat).unwrap();
        assert!(true_error(&lat, &u_ref, &mesh, &kin, &u_h).unwrap() < 1e-14);
        let g = crate::lattice::Mat2::new(0.02, 0.0, -0.01, 0.03);
        let zero = vec![Vec2::zeros(); lat.len()];
        let lin: Vec<Vec2> = mesh.nodes().iter().map(|x| g * x).collect();
        let e = true_error(&lat, &zero, &mesh, &kin, &lin).unwrap();
        let area = lat.micro_elements().len() as f64 * lat.micro_area();
        assert!((e - g.norm() * area.sqrt()).abs() < 1e-10 * e);
        let z = vec![Vec2::zeros(); mesh.num_nodes()];
        assert_eq!(true_error(&lat, &zero, &mesh, &kin, &z).unwrap(), 0.0);
    }

    #[test]
    fn screw_interpolant_has_no_jump_artifacts() {
        let (lat, mesh, kin) = setup(DefectSpec::screw(1.0));
        let u = vec![Vec2::zeros(); mesh.num_nodes()];
        let ia = LatticeInterpolant::new(&mesh, &kin, &u).unwrap().on_lattice(&lat).unwrap();
        // P1 interpolation error of the predictor is small away from the core
        for p in 0..lat.len() {
            if lat.position(p).norm() > 8.0 {
                assert!(ia[p].x.abs() < 0.05, "{} {}", lat.coord(p), ia[p].x);
            }
        }
    }

    #[test]
    fn prolongation_onto_refined_mesh_keeps_nodal_values() {
        let (lat, mesh, kin) = setup(DefectSpec::none());
        let u: Vec<Vec2> = mesh.nodes().iter().map(|x| Vec2::new(x.x.sin(), x.y.cos()) * 1e-2).collect();
        let u: Vec<Vec2> = (0..mesh.num_nodes()).map(|n| if mesh.is_boundary(n) { Vec2::zeros() } else { u[n] }).collect();
        let marked: Vec<usize> = (0..mesh.elements().len()).filter(|&e| !mesh.element(e).is_micro()).take(5).collect();
        let fine = mesh.refine(&lat, &marked).unwrap();
        let v = prolongate(&mesh, &kin, &u, &fine).unwrap();
        for n in 0..mesh.num_nodes() {
            let p = mesh.node_point(n);
            let m = fine.point_node(p).unwrap();
            assert!((v[m] - u[n]).norm() < 1e-14);
        }
    }
}
