//! Piecewise constant stresses and the interface stress correction.

use std::collections::HashMap;

use log::warn;
use nalgebra::DMatrix;

use crate::atomistic::AtomisticProblem;
use crate::coupling::AcProblem;
use crate::error::Result;
use crate::geometry::p1_gradients;
use crate::lattice::{Lattice, LatticeCoord, Mat2, Vec2, NONE};
use crate::mesh::{AtomKind, CoarseMesh, RegionLabel};
use crate::potential::Vec3;

/// Counter-clockwise quarter turn.
pub fn rotation() -> Mat2 {
    Mat2::new(0.0, -1.0, 1.0, 0.0)
}

/// One tensor per element of a triangulation (the canonical one for the
/// atomistic stress, the coarse mesh otherwise). Out of plane only the first
/// row is used.
#[derive(Clone, Debug, PartialEq)]
pub struct StressField {
    pub tensors: Vec<Mat2>,
}

impl StressField {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

/// Canonical triangle spanned by `p`, `p + a_rho`, `p + a_{rho+1}`.
pub fn sector_triangle(lat: &Lattice, c: LatticeCoord, rho: usize) -> Option<usize> {
    const SECTOR: [(i32, i32, bool); 6] =
        [(0, 0, true), (-1, 0, false), (-1, 0, true), (-1, -1, false), (0, -1, true), (0, -1, false)];
    let (di, dj, up) = SECTOR[rho % 6];
    lat.micro_at(c + LatticeCoord::new(di, dj), up)
}

/// The two canonical triangles flanking the bond from `c` along `a_rho`.
pub fn bond_triangles(lat: &Lattice, c: LatticeCoord, rho: usize) -> [Option<usize>; 2] {
    [sector_triangle(lat, c, rho), sector_triangle(lat, c, rho + 5)]
}

/// `sigma^a` on the canonical triangles: every ordered bond on the edges of a
/// triangle contributes `dV/dg (x) a / det A`.
pub fn atomistic_stress(p: &AtomisticProblem, u: &[Vec2]) -> Result<StressField> {
    let lat = p.lat;
    let mode = p.kin.mode();
    let scale = 1.0 / lat.det_a();
    let mut tensors = vec![Mat2::zeros(); lat.micro_elements().len()];
    let mut g = [Vec3::zeros(); 6];
    for l in 0..lat.len() {
        if lat.is_vacant(l) {
            continue;
        }
        p.eam.raw_energy_gradient(&p.stencil(l, u), &mut g)?;
        let c = lat.coord(l);
        for rho in 0..6 {
            if lat.neighbor(l, rho).is_none() {
                continue;
            }
            let dyad = scale * mode.project(g[rho]) * lat.lattice_vector(rho).transpose();
            for t in bond_triangles(lat, c, rho).into_iter().flatten() {
                tensors[t] += dyad;
            }
        }
    }
    Ok(StressField { tensors })
}

/// Lattice points whose corrector values enter `sigma^a` on the given
/// canonical triangles (their vertices and the vertices' neighbours).
pub fn stress_support(lat: &Lattice, tris: &[usize]) -> Vec<usize> {
    let mut mark = vec![false; lat.len()];
    let mut out = Vec::new();
    for &t in tris {
        for &v in &lat.micro_elements()[t] {
            let v = v as usize;
            for q in std::iter::once(v).chain((0..6).filter_map(|rho| lat.neighbor(v, rho))) {
                if !mark[q] {
                    mark[q] = true;
                    out.push(q);
                }
            }
        }
    }
    out
}

/// `sigma^a` on selected canonical triangles only; `u` needs to be valid on
/// `stress_support(tris)`.
pub fn atomistic_stress_on(p: &AtomisticProblem, u: &[Vec2], tris: &[usize]) -> Result<Vec<Mat2>> {
    let lat = p.lat;
    let mode = p.kin.mode();
    let scale = 1.0 / lat.det_a();
    let mut cache: HashMap<usize, [Vec3; 6]> = HashMap::new();
    let mut out = Vec::with_capacity(tris.len());
    for &t in tris {
        let tri = lat.micro_elements()[t];
        let mut s = Mat2::zeros();
        for k in 0..3 {
            let (a, b) = (tri[k] as usize, tri[(k + 1) % 3] as usize);
            for (from, to) in [(a, b), (b, a)] {
                if lat.is_vacant(from) || lat.is_vacant(to) {
                    continue;
                }
                let rho = (0..6).find(|&r| lat.neighbor(from, r) == Some(to)).expect("triangle edges are bonds");
                let g = match cache.get(&from) {
                    Some(g) => *g,
                    None => {
                        let mut g = [Vec3::zeros(); 6];
                        p.eam.raw_energy_gradient(&p.stencil_by(from, |m| u[m]), &mut g)?;
                        cache.insert(from, g);
                        g
                    }
                };
                s += scale * mode.project(g[rho]) * lat.lattice_vector(rho).transpose();
            }
        }
        out.push(s);
    }
    Ok(out)
}

/// Mesh element coinciding with each canonical triangle (`NONE` if none).
pub fn micro_to_element(lat: &Lattice, mesh: &CoarseMesh) -> Vec<u32> {
    let mut map = vec![NONE; lat.micro_elements().len()];
    for (e, el) in mesh.elements().iter().enumerate() {
        if let Some(m) = el.micro {
            map[m as usize] = e as u32;
        }
    }
    map
}

/// `sigma^ac` on the coarse mesh: bond dyads of the atomistic and interface
/// sites on the canonical elements around them plus `omega_T dW(grad y_h)`.
pub fn ac_stress(p: &AcProblem, u: &[Vec2]) -> Result<StressField> {
    let lat = p.lat;
    let mesh = p.mesh;
    let scale = 1.0 / lat.det_a();
    let mut tensors = vec![Mat2::zeros(); mesh.elements().len()];
    for d in p.element_data() {
        let (_, dw) = p.cb.energy_stress(&p.element_gradient(d, u))?;
        tensors[d.element as usize] += (d.weight / d.area) * dw;
    }
    let owner = micro_to_element(lat, mesh);
    for (node, nbr, f) in p.site_forces(u)? {
        let c = mesh.node_coord(node as usize);
        for rho in 0..6 {
            if nbr[rho] == NONE {
                continue;
            }
            let dyad = scale * f[rho] * lat.lattice_vector(rho).transpose();
            for t in bond_triangles(lat, c, rho).into_iter().flatten() {
                let e = owner[t];
                if e != NONE {
                    tensors[e as usize] += dyad;
                }
            }
        }
    }
    Ok(StressField { tensors })
}

/// Nonconforming P1 field `c_h` of the interface correction, stored by its
/// values at edge midpoints (indexed like `CoarseMesh::edges`).
#[derive(Clone, Debug)]
pub struct CorrectionField {
    pub midpoints: Vec<Vec2>,
    /// False when the least-squares system was singular and no correction
    /// was applied.
    pub applied: bool,
}

/// Edge indices of every element, ordered so that entry `k` is the edge
/// opposite vertex `k`.
pub fn element_edges(mesh: &CoarseMesh) -> Vec<[u32; 3]> {
    let mut by_nodes = HashMap::with_capacity(mesh.edges().len());
    for (i, ed) in mesh.edges().iter().enumerate() {
        let [a, b] = ed.nodes;
        by_nodes.insert((a.min(b), a.max(b)), i as u32);
    }
    mesh.elements()
        .iter()
        .map(|el| {
            std::array::from_fn(|k| {
                let (a, b) = (el.nodes[(k + 1) % 3], el.nodes[(k + 2) % 3]);
                by_nodes[&(a.min(b), a.max(b))]
            })
        })
        .collect()
}

/// Interface stress correction: the divergence-free field `grad_h c_h J`
/// that best matches `sigma^a - sigma^ac` on the interface elements. `c_h` is
/// piecewise affine and continuous at edge midpoints, and vanishes at the
/// midpoints of edges that do not touch an interface atom.
pub fn correct_stress(
    sigma_a: &StressField,
    sigma_ac: &StressField,
    mesh: &CoarseMesh,
    arity: usize,
) -> (StressField, CorrectionField) {
    let ne = mesh.edges().len();
    let zero = |applied| CorrectionField { midpoints: vec![Vec2::zeros(); ne], applied };
    let interface: Vec<usize> =
        (0..mesh.elements().len()).filter(|&e| mesh.element(e).label == RegionLabel::Interface).collect();
    if interface.is_empty() {
        return (sigma_ac.clone(), zero(true));
    }
    let edges_of = element_edges(mesh);
    let is_iface = |n: u32| mesh.point_kind(mesh.node_point(n as usize)) == AtomKind::Interface;
    let mut unknown = HashMap::new();
    let mut order = Vec::new();
    for &e in &interface {
        for &f in &edges_of[e] {
            let [a, b] = mesh.edges()[f as usize].nodes;
            if is_iface(a) || is_iface(b) {
                unknown.entry(f).or_insert_with(|| {
                    order.push(f);
                    order.len() - 1
                });
            }
        }
    }
    let m = order.len();
    if m == 0 {
        return (sigma_ac.clone(), zero(true));
    }
    let j = rotation();
    let mut h = DMatrix::<f64>::zeros(m, m);
    let mut b = DMatrix::<f64>::zeros(m, arity);
    for &e in &interface {
        let el = mesh.element(e);
        let Some(micro) = el.micro else { continue };
        let Some((g, area)) = p1_gradients(&mesh.element_points(e)) else { continue };
        let r = (sigma_a.tensors[micro as usize] - sigma_ac.tensors[e]) * j.transpose();
        let vars: Vec<Option<usize>> = edges_of[e].iter().map(|f| unknown.get(f).copied()).collect();
        for a in 0..3 {
            let Some(ka) = vars[a] else { continue };
            let ga = -2.0 * g[a];
            for c in 0..arity {
                b[(ka, c)] += area * r.row(c).transpose().dot(&ga);
            }
            for bb in 0..3 {
                if let Some(kb) = vars[bb] {
                    h[(ka, kb)] += area * ga.dot(&(-2.0 * g[bb]));
                }
            }
        }
    }
    let shift = 1e-13 * (0..m).map(|i| h[(i, i)]).fold(0.0, f64::max);
    for i in 0..m {
        h[(i, i)] += shift;
    }
    let Some(chol) = h.cholesky() else {
        warn!("interface correction system is singular; stress left uncorrected");
        return (sigma_ac.clone(), zero(false));
    };
    let x = chol.solve(&b);
    let mut midpoints = vec![Vec2::zeros(); ne];
    for (k, &f) in order.iter().enumerate() {
        for c in 0..arity {
            midpoints[f as usize][c] = x[(k, c)];
        }
    }
    let corrected = apply_correction(sigma_ac, mesh, &edges_of, &midpoints);
    (corrected, CorrectionField { midpoints, applied: true })
}

/// `sigma + grad_h c J` elementwise for a midpoint-continuous field `c`.
pub fn apply_correction(sigma: &StressField, mesh: &CoarseMesh, edges_of: &[[u32; 3]], c: &[Vec2]) -> StressField {
    let j = rotation();
    let mut out = sigma.clone();
    for (e, ed) in edges_of.iter().enumerate() {
        if ed.iter().all(|&f| c[f as usize] == Vec2::zeros()) {
            continue;
        }
        let Some((g, _)) = p1_gradients(&mesh.element_points(e)) else { continue };
        let mut grad = Mat2::zeros();
        for k in 0..3 {
            grad -= 2.0 * c[ed[k] as usize] * g[k].transpose();
        }
        out.tensors[e] += grad * j;
    }
    out
}

/// `sum_T |T| |sigma^a - sigma^ac|^2` over the interface elements.
pub fn interface_mismatch(sigma_a: &StressField, sigma_ac: &StressField, mesh: &CoarseMesh) -> f64 {
    mesh.elements()
        .iter()
        .enumerate()
        .filter(|(_, el)| el.label == RegionLabel::Interface)
        .filter_map(|(e, el)| el.micro.map(|m| el.area * (sigma_a.tensors[m as usize] - sigma_ac.tensors[e]).norm_squared()))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Kinematics;
    use crate::lattice::{DefectSpec, LatticeSpec};
    use crate::mesh::MeshConfig;
    use crate::potential::Eam;
    use crate::solver::{minimize, SolveConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(defect: DefectSpec) -> (Lattice, CoarseMesh, Kinematics) {
        let lat = Lattice::new(LatticeSpec::triangular(32.0, defect.clone())).unwrap();
        let cfg = MeshConfig { domain_radius: 32, macro_side: 16, ..MeshConfig::default() };
        let mesh = CoarseMesh::initialize(&lat, &cfg).unwrap();
        (lat, mesh, Kinematics::from_defect(&defect))
    }

    fn random_field(rng: &mut ChaCha8Rng, free: &[bool], scale: f64) -> Vec<Vec2> {
        free.iter()
            .map(|&f| if f { Vec2::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale)) } else { Vec2::zeros() })
            .collect()
    }

    fn pairing(tensors: &[Mat2], tris: &[[u32; 3]], pos: &dyn Fn(usize) -> Vec2, v: &[Vec2]) -> f64 {
        let mut s = 0.0;
        for (t, tri) in tris.iter().enumerate() {
            let p = tri.map(|k| pos(k as usize));
            let (g, area) = p1_gradients(&p).unwrap();
            let mut grad = Mat2::zeros();
            for k in 0..3 {
                grad += v[tri[k] as usize] * g[k].transpose();
            }
            s += area * tensors[t].component_mul(&grad).sum();
        }
        s
    }

    #[test]
    fn homogeneous_atomistic_stress_is_cauchy_born() {
        let (lat, _, _) = setup(DefectSpec::none());
        let f = Mat2::new(1.02, 0.01, -0.005, 0.99);
        let kin = Kinematics::InPlane { strain: f };
        let p = AtomisticProblem::new(&lat, &kin, Eam::default()).unwrap();
        let s = atomistic_stress(&p, &vec![Vec2::zeros(); lat.len()]).unwrap();
        let cb = crate::potential::CauchyBorn::new(Eam::default(), kin.mode(), *lat.lattice_vectors(), lat.det_a());
        let (_, dw) = cb.energy_stress(&f).unwrap();
        for (t, tri) in lat.micro_elements().iter().enumerate() {
            if tri.iter().all(|&k| !lat.is_boundary(k as usize)) {
                assert!((s.tensors[t] - dw).norm() < 1e-12 * (1.0 + dw.norm()));
            }
        }
    }

    #[test]
    fn atomistic_stress_identity() {
        let d = DefectSpec::micro_crack(5, 0.03, 0.03);
        let (lat, _, kin) = setup(d);
        let p = AtomisticProblem::new(&lat, &kin, Eam::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_field(&mut rng, p.free(), 0.02);
        let s = atomistic_stress(&p, &u).unwrap();
        let mut g = vec![Vec2::zeros(); lat.len()];
        p.energy_gradient(&u, &mut g).unwrap();
        for _ in 0..5 {
            let v = random_field(&mut rng, p.free(), 1.0);
            let lhs: f64 = g.iter().zip(&v).map(|(a, b)| a.dot(b)).sum();
            let rhs = pairing(&s.tensors, lat.micro_elements(), &|k| lat.position(k), &v);
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), "{lhs} {rhs}");
        }
    }

    #[test]
    fn coupled_stress_identity_and_patch_test() {
        let d = DefectSpec::micro_crack(5, 0.03, 0.03);
        let (lat, mesh, kin) = setup(d);
        let p = AcProblem::new(&lat, &mesh, &kin, Eam::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_field(&mut rng, p.free(), 0.02);
        let s = ac_stress(&p, &u).unwrap();
        let mut g = vec![Vec2::zeros(); mesh.num_nodes()];
        p.energy_gradient(&u, &mut g).unwrap();
        let tris: Vec<[u32; 3]> = mesh.elements().iter().map(|e| e.nodes).collect();
        for _ in 0..5 {
            let v = random_field(&mut rng, p.free(), 1.0);
            let lhs: f64 = g.iter().zip(&v).map(|(a, b)| a.dot(b)).sum();
            let rhs = pairing(&s.tensors, &tris, &|k| mesh.node(k), &v);
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), "{lhs} {rhs}");
        }

        let (lat, mesh, _) = setup(DefectSpec::none());
        let f = Mat2::new(1.01, 0.02, 0.0, 0.98);
        let kin = Kinematics::InPlane { strain: f };
        let p = AcProblem::new(&lat, &mesh, &kin, Eam::default()).unwrap();
        let s = ac_stress(&p, &vec![Vec2::zeros(); mesh.num_nodes()]).unwrap();
        let (_, dw) = p.cb.energy_stress(&f).unwrap();
        let at = AtomisticProblem::new(&lat, &kin, Eam::default()).unwrap();
        let sa = atomistic_stress(&at, &vec![Vec2::zeros(); lat.len()]).unwrap();
        let (corr, _) = correct_stress(&sa, &s, &mesh, 2);
        for (e, t) in s.tensors.iter().enumerate() {
            if mesh.element(e).label != RegionLabel::Interface {
                assert!((t - dw).norm() < 1e-10);
            }
            assert!((corr.tensors[e] - dw).norm() < 1e-10);
        }
    }

    #[test]
    fn correction_is_divergence_free_and_idempotent() {
        let d = DefectSpec::micro_crack(5, 0.03, 0.03);
        let (lat, mesh, kin) = setup(d);
        let ac = AcProblem::new(&lat, &mesh, &kin, Eam::default()).unwrap();
        let r = minimize(&ac, vec![Vec2::zeros(); mesh.num_nodes()], &SolveConfig::default()).unwrap();
        let at = AtomisticProblem::new(&lat, &kin, Eam::default()).unwrap();
        let ia = crate::transfer::LatticeInterpolant::new(&mesh, &kin, &r.u).unwrap().on_lattice(&lat).unwrap();
        let sa = atomistic_stress(&at, &ia).unwrap();
        let sac = ac_stress(&ac, &r.u).unwrap();
        let (corr, c) = correct_stress(&sa, &sac, &mesh, 2);
        assert!(c.applied);
        assert!(c.midpoints.iter().any(|v| v.norm() > 0.0));
        assert!(interface_mismatch(&sa, &corr, &mesh) <= interface_mismatch(&sa, &sac, &mesh));

        let diff = StressField { tensors: corr.tensors.iter().zip(&sac.tensors).map(|(a, b)| a - b).collect() };
        let tris: Vec<[u32; 3]> = mesh.elements().iter().map(|e| e.nodes).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scale = diff.tensors.iter().map(|t| t.norm()).fold(0.0, f64::max);
        for _ in 0..20 {
            let v = random_field(&mut rng, ac.free(), 1.0);
            let s = pairing(&diff.tensors, &tris, &|k| mesh.node(k), &v);
            assert!(s.abs() < 1e-10 * scale.max(1.0));
        }

        let is_iface = |n: u32| mesh.point_kind(mesh.node_point(n as usize)) == AtomKind::Interface;
        for (f, ed) in mesh.edges().iter().enumerate() {
            if !is_iface(ed.nodes[0]) && !is_iface(ed.nodes[1]) {
                assert_eq!(c.midpoints[f], Vec2::zeros());
            }
        }

        let (again, c2) = correct_stress(&sa, &corr, &mesh, 2);
        assert!(c2.midpoints.iter().all(|v| v.norm() < 1e-10));
        for (a, b) in again.tensors.iter().zip(&corr.tensors) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn selective_stress_matches_full_evaluation() {
        let d = DefectSpec::micro_crack(5, 0.03, 0.03);
        let (lat, _, kin) = setup(d);
        let p = AtomisticProblem::new(&lat, &kin, Eam::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_field(&mut rng, p.free(), 0.02);
        let full = atomistic_stress(&p, &u).unwrap();
        let tris: Vec<usize> = (0..lat.micro_elements().len()).step_by(7).collect();
        let mut partial = vec![Vec2::new(f64::NAN, f64::NAN); lat.len()];
        for q in stress_support(&lat, &tris) {
            partial[q] = u[q];
        }
        let some = atomistic_stress_on(&p, &partial, &tris).unwrap();
        for (k, &t) in tris.iter().enumerate() {
            assert!((some[k] - full.tensors[t]).norm() < 1e-12);
        }
    }

    #[test]
    fn matching_stresses_need_no_correction() {
        let (lat, mesh, _) = setup(DefectSpec::none());
        let s_ac = StressField { tensors: vec![Mat2::identity(); mesh.elements().len()] };
        let s_a = StressField { tensors: vec![Mat2::identity(); lat.micro_elements().len()] };
        let (out, c) = correct_stress(&s_a, &s_ac, &mesh, 2);
        assert!(c.midpoints.iter().all(|v| v.norm() < 1e-14));
        assert_eq!(out, s_ac);
    }
}
