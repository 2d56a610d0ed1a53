//! Residual error estimators and the elementwise local estimator.

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::atomistic::AtomisticProblem;
use crate::coupling::AcProblem;
use crate::error::{Error, Result};
use crate::geometry::{barycenter, intersection_area};
use crate::lattice::{Mat2, Vec2};
use crate::mesh::{CoarseMesh, RegionLabel};
use crate::stress::{ac_stress, atomistic_stress_on, correct_stress, stress_support, StressField};
use crate::transfer::LatticeInterpolant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorMode {
    #[serde(rename = "original")]
    OriginalExact,
    #[serde(rename = "direct")]
    DirectApprox,
    #[serde(rename = "blended")]
    BlendedApprox,
    #[serde(rename = "coarsening")]
    CoarseningOnly,
}

impl EstimatorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorMode::OriginalExact => "original",
            EstimatorMode::DirectApprox => "direct",
            EstimatorMode::BlendedApprox => "blended",
            EstimatorMode::CoarseningOnly => "coarsening",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(EstimatorMode::OriginalExact),
            "direct" => Ok(EstimatorMode::DirectApprox),
            "blended" => Ok(EstimatorMode::BlendedApprox),
            "coarsening" => Ok(EstimatorMode::CoarseningOnly),
            _ => Err(Error::Config(format!("unknown estimator mode '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MoCgConstant {
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub mode: EstimatorMode,
    /// Blending width in hops (blended mode only).
    pub rbld: f64,
    pub c_tr: f64,
    pub c_th: f64,
    pub c_mo_cg: MoCgConstant,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { mode: EstimatorMode::DirectApprox, rbld: 2.0, c_tr: 1.0, c_th: 1.0, c_mo_cg: MoCgConstant::Auto }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == EstimatorMode::BlendedApprox && !(self.rbld > 1.0) {
            return Err(Error::Config("blending width must exceed 1".into()));
        }
        if !(self.c_tr > 0.0 && self.c_th > 0.0) {
            return Err(Error::Config("estimator constants must be positive".into()));
        }
        if let MoCgConstant::Fixed(c) = self.c_mo_cg {
            if !(c > 0.0) {
                return Err(Error::Config("mo-cg constant must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Linear blending weight: 0 up to distance 1, 1 from `rbld` on.
pub fn blend(r: f64, rbld: f64) -> f64 {
    if r <= 1.0 {
        0.0
    } else if r >= rbld {
        1.0
    } else {
        (r - 1.0) / (rbld - 1.0)
    }
}

/// How the modeling part of an element was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoKind {
    Exact,
    Direct,
    Blended,
    None,
}

impl MoKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MoKind::Exact => "exact",
            MoKind::Direct => "direct",
            MoKind::Blended => "blended",
            MoKind::None => "none",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ElementEstimate {
    pub label: RegionLabel,
    pub h: f64,
    pub eta_cg: f64,
    pub mo_kind: MoKind,
    pub eta_mo: f64,
    pub rho: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub mode: EstimatorMode,
    pub elements: Vec<ElementEstimate>,
    pub eta_tr: f64,
    pub eta_cg: f64,
    /// Global modeling part (approximated unless the mode is exact).
    pub eta_mo: f64,
    /// Modeling part split into elements within `rbuf` of the atomistic
    /// region and the rest.
    pub eta_mo_band: f64,
    pub eta_mo_far: f64,
    pub rho: f64,
    pub c_mo_cg: f64,
    pub correction_applied: bool,
    pub n: usize,
    pub estimate_seconds: f64,
    pub truncation_seconds: f64,
    pub solve_seconds: f64,
}

impl EstimatorReport {
    pub fn rho_values(&self) -> Vec<f64> {
        self.elements.iter().map(|e| e.rho).collect()
    }

    /// Per-element CSV with a trailing totals row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "element_id,region,h_T,eta_cg,eta_mo_kind,eta_mo,rho_T")?;
        for (i, e) in self.elements.iter().enumerate() {
            writeln!(
                w,
                "{},{},{:.16e},{:.16e},{},{:.16e},{:.16e}",
                i,
                e.label.as_str(),
                e.h,
                e.eta_cg,
                e.mo_kind.as_str(),
                e.eta_mo,
                e.rho
            )?;
        }
        writeln!(
            w,
            "total,{},N={},{:.16e},eta_tr={:.16e},{:.16e},{:.16e},t_estimate={:.16e},t_truncation={:.16e},t_solve={:.16e}",
            self.mode.as_str(),
            self.n,
            self.eta_cg,
            self.eta_tr,
            self.eta_mo,
            self.rho,
            self.estimate_seconds,
            self.truncation_seconds,
            self.solve_seconds
        )?;
        Ok(())
    }
}


/// Everything the estimators need about one coupled solution. The atomistic
/// problem lives on the same lattice as the coupled one.
pub struct EstimatorInput<'a> {
    pub ac: &'a AcProblem<'a>,
    pub at: &'a AtomisticProblem<'a>,
    pub u: &'a [Vec2],
}

/// `I_a u_h` on the lattice points of `support`, zero elsewhere.
fn lattice_values(input: &EstimatorInput, support: &[usize]) -> Result<Vec<Vec2>> {
    let mesh = input.ac.mesh;
    let lat = input.ac.lat;
    let interp = LatticeInterpolant::new(mesh, input.ac.kin, input.u)?;
    let mut v = vec![Vec2::zeros(); lat.len()];
    for &p in support {
        v[p] = match mesh.point_node(p) {
            Some(n) => input.u[n],
            None => interp.value(lat.position(p))?.unwrap_or_else(Vec2::zeros),
        };
    }
    Ok(v)
}

/// `sigma^a(I_a u_h)` on the listed canonical triangles.
pub fn interpolated_stress(input: &EstimatorInput, tris: &[usize]) -> Result<Vec<Mat2>> {
    let support = stress_support(input.ac.lat, tris);
    let values = lattice_values(input, &support)?;
    atomistic_stress_on(input.at, &values, tris)
}

fn is_atomistic(label: RegionLabel) -> bool {
    matches!(label, RegionLabel::AtomCore | RegionLabel::Interface)
}

/// Squared local coarsening estimator: each interior edge with a
/// non-atomistic neighbour adds `(h_f |[sigma] nu|)^2 / 2` to both sides.
pub fn coarsening_local_sq(sigma: &StressField, mesh: &CoarseMesh) -> Vec<f64> {
    let mut sq = vec![0.0; mesh.elements().len()];
    for ed in mesh.edges() {
        if !ed.is_interior() {
            continue;
        }
        let [e0, e1] = ed.elements.map(|e| e as usize);
        if is_atomistic(mesh.element(e0).label) && is_atomistic(mesh.element(e1).label) {
            continue;
        }
        let t = mesh.node(ed.nodes[1] as usize) - mesh.node(ed.nodes[0] as usize);
        let nu = Vec2::new(t.y, -t.x) / ed.length;
        let jump = (sigma.tensors[e0] - sigma.tensors[e1]) * nu;
        let c = 0.5 * (ed.length * jump.norm()).powi(2);
        sq[e0] += c;
        sq[e1] += c;
    }
    sq
}

/// Exact squared modeling estimator on the elements of `which` (others get
/// zero). `sigma_ac` is averaged over each canonical triangle using every
/// coarse element that covers it.
pub fn modeling_local_exact_sq(
    input: &EstimatorInput,
    sigma_ac: &StressField,
    which: &[usize],
) -> Result<Vec<f64>> {
    let lat = input.ac.lat;
    let mesh = input.ac.mesh;
    let area = lat.micro_area();
    let owned: Vec<Vec<(usize, f64)>> = which.iter().map(|&e| mesh.micro_weights(lat, e)).collect();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut tris = Vec::new();
    let mut covered = Vec::new();
    let mut avg: Vec<Mat2> = Vec::new();
    for (k, &e) in which.iter().enumerate() {
        for &(t, w) in &owned[k] {
            let i = *slot.entry(t).or_insert_with(|| {
                tris.push(t);
                covered.push(0.0);
                avg.push(Mat2::zeros());
                tris.len() - 1
            });
            covered[i] += w;
            avg[i] += w * sigma_ac.tensors[e];
        }
    }
    // triangles cut by elements outside `which`: redo them by clipping
    // against the neighbourhood of an owner
    let partial: Vec<usize> = (0..tris.len()).filter(|&i| covered[i] < 1.0 - 1e-9).collect();
    if !partial.is_empty() {
        let mut by_node: Vec<Vec<u32>> = vec![Vec::new(); mesh.num_nodes()];
        for (e, el) in mesh.elements().iter().enumerate() {
            for &n in &el.nodes {
                by_node[n as usize].push(e as u32);
            }
        }
        let mut owner: HashMap<usize, usize> = HashMap::new();
        for (k, &e) in which.iter().enumerate() {
            for &(t, _) in &owned[k] {
                owner.entry(t).or_insert(e);
            }
        }
        for i in partial {
            let t = tris[i];
            let pts = lat.micro_elements()[t].map(|v| lat.position(v as usize));
            let mut cand: Vec<u32> =
                mesh.element(owner[&t]).nodes.iter().flat_map(|&n| by_node[n as usize].iter().copied()).collect();
            cand.sort_unstable();
            cand.dedup();
            let mut s = Mat2::zeros();
            let mut c = 0.0;
            for f in cand {
                let a = intersection_area(&pts, &mesh.element_points(f as usize));
                if a > 0.0 {
                    s += a * sigma_ac.tensors[f as usize];
                    c += a;
                }
            }
            if (c - area).abs() > 1e-9 * area {
                warn!("canonical triangle {t} only {:.3} covered", c / area);
            }
            avg[i] = s / area;
        }
    }
    let sa = interpolated_stress(input, &tris)?;
    let mut out = vec![0.0; mesh.elements().len()];
    for (k, &e) in which.iter().enumerate() {
        out[e] = owned[k].iter().map(|&(t, w)| w * area * (sa[slot[&t]] - avg[slot[&t]]).norm_squared()).sum();
    }
    Ok(out)
}

/// Largest `h_T eta_mo(T) / eta_cg(T)` over buffer elements; `None` when
/// every candidate is degenerate.
pub fn estimate_constant(labels: &[RegionLabel], h: &[f64], eta_mo: &[f64], eta_cg: &[f64]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for e in 0..labels.len() {
        if labels[e] != RegionLabel::Buffer || eta_cg[e] < 1e-14 {
            continue;
        }
        let r = h[e] * eta_mo[e] / eta_cg[e];
        best = Some(best.map_or(r, |b: f64| b.max(r)));
    }
    best
}

/// `rho_T` from local modeling and coarsening parts, with the global values
/// they sum to.
pub fn local_estimator(eta_mo: &[f64], eta_cg: &[f64], c_tr: f64, c_th: f64) -> (Vec<f64>, f64, f64) {
    let mo = c_tr * eta_mo.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cg = 3f64.sqrt() * c_tr * c_th * eta_cg.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rho = eta_mo
        .iter()
        .zip(eta_cg)
        .map(|(m, g)| {
            let a = if mo > 0.0 { c_tr * c_tr * m * m / mo } else { 0.0 };
            let b = if cg > 0.0 { 3.0 * (c_tr * c_th).powi(2) * g * g / cg } else { 0.0 };
            a + b
        })
        .collect();
    (rho, mo, cg)
}

/// Distance from `x` to the nearest of `atoms`, in nearest-neighbour units.
fn distance_to(atoms: &[Vec2], x: Vec2) -> f64 {
    atoms.iter().map(|a| (a - x).norm()).fold(f64::INFINITY, f64::min)
}

/// Runs every estimator except the truncation part. `previous` is the last
/// resolved mo-cg constant, used when the automatic one is degenerate.
pub fn estimate(input: &EstimatorInput, cfg: &EstimatorConfig, previous: Option<f64>) -> Result<EstimatorReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mesh = input.ac.mesh;
    let ne = mesh.elements().len();
    let labels: Vec<RegionLabel> = mesh.elements().iter().map(|e| e.label).collect();
    let h: Vec<f64> = mesh.elements().iter().map(|e| e.diameter).collect();

    let sigma_ac = ac_stress(input.ac, input.u)?;
    let near: Vec<usize> = (0..ne).filter(|&e| labels[e] != RegionLabel::Continuum).collect();
    let near_tris: Vec<usize> = near.iter().filter_map(|&e| mesh.element(e).micro.map(|m| m as usize)).collect();
    let sa_near = interpolated_stress(input, &near_tris)?;
    let mut sigma_a = StressField { tensors: vec![Mat2::zeros(); input.ac.lat.micro_elements().len()] };
    for (k, &t) in near_tris.iter().enumerate() {
        sigma_a.tensors[t] = sa_near[k];
    }
    let (corrected, corr) = correct_stress(&sigma_a, &sigma_ac, mesh, input.ac.kin.arity());

    let cg_sq = coarsening_local_sq(&corrected, mesh);
    let eta_cg: Vec<f64> = cg_sq.iter().map(|x| x.sqrt()).collect();

    let buffer: Vec<Vec2> = mesh.buffer_atoms().iter().map(|&n| mesh.node(n as usize)).collect();
    let dist: Vec<f64> = if cfg.mode == EstimatorMode::BlendedApprox {
        (0..ne).map(|e| distance_to(&buffer, barycenter(&mesh.element_points(e)))).collect()
    } else {
        Vec::new()
    };
    let exact: Vec<usize> = match cfg.mode {
        EstimatorMode::OriginalExact => (0..ne).collect(),
        EstimatorMode::DirectApprox => near.clone(),
        EstimatorMode::BlendedApprox => {
            (0..ne).filter(|&e| labels[e] != RegionLabel::Continuum || blend(dist[e], cfg.rbld) > 0.0).collect()
        }
        EstimatorMode::CoarseningOnly => Vec::new(),
    };
    let mo_exact: Vec<f64> =
        modeling_local_exact_sq(input, &corrected, &exact)?.into_iter().map(f64::sqrt).collect();

    let c_mo_cg = match cfg.c_mo_cg {
        MoCgConstant::Fixed(c) => c,
        MoCgConstant::Auto => match estimate_constant(&labels, &h, &mo_exact, &eta_cg) {
            Some(c) => c,
            None => {
                if matches!(cfg.mode, EstimatorMode::DirectApprox | EstimatorMode::BlendedApprox) {
                    warn!("no usable buffer element for the mo-cg constant");
                }
                previous.unwrap_or(1.0)
            }
        },
    };

    let mut kinds = vec![MoKind::Exact; ne];
    let mut eta_mo = mo_exact.clone();
    for e in 0..ne {
        let continuum = labels[e] == RegionLabel::Continuum;
        let approx = if eta_cg[e] > 0.0 { c_mo_cg / h[e] * eta_cg[e] } else { 0.0 };
        match cfg.mode {
            EstimatorMode::OriginalExact => {}
            EstimatorMode::CoarseningOnly => {
                kinds[e] = MoKind::None;
                eta_mo[e] = 0.0;
            }
            EstimatorMode::DirectApprox if continuum => {
                kinds[e] = MoKind::Direct;
                eta_mo[e] = approx;
            }
            EstimatorMode::BlendedApprox if continuum => {
                let b = blend(dist[e], cfg.rbld);
                if b < 1.0 {
                    kinds[e] = MoKind::Blended;
                    eta_mo[e] = b * mo_exact[e] + (1.0 - b) * approx;
                }
            }
            _ => {}
        }
    }

    let (rho_t, mo, cg) = local_estimator(&eta_mo, &eta_cg, cfg.c_tr, cfg.c_th);
    let rbuf = mesh.config.rbuf as f64;
    let in_band: Vec<bool> = (0..ne)
        .map(|e| {
            labels[e] != RegionLabel::Continuum
                || mesh.element_points(e).iter().any(|&x| mesh.distance_to_atomistic(x) <= rbuf)
        })
        .collect();
    let split = |band: bool| -> f64 {
        let s: f64 = (0..ne).filter(|&e| in_band[e] == band).map(|e| eta_mo[e] * eta_mo[e]).sum();
        cfg.c_tr * s.sqrt()
    };
    let elements = (0..ne)
        .map(|e| ElementEstimate {
            label: labels[e],
            h: h[e],
            eta_cg: eta_cg[e],
            mo_kind: kinds[e],
            eta_mo: eta_mo[e],
            rho: rho_t[e],
        })
        .collect();
    Ok(EstimatorReport {
        mode: cfg.mode,
        elements,
        eta_tr: 0.0,
        eta_cg: cg,
        eta_mo: mo,
        eta_mo_band: split(true),
        eta_mo_far: split(false),
        rho: rho_t.iter().sum(),
        c_mo_cg,
        correction_applied: corr.applied,
        n: input.ac.dofs(),
        estimate_seconds: start.elapsed().as_secs_f64(),
        truncation_seconds: 0.0,
        solve_seconds: 0.0,
    })
}

/// `C_tr || sigma^a(I_a u_h) - sigma^0 ||` outside the ball of half the
/// domain radius, with `sigma^0` the Cauchy-Born stress of the predictor.
pub fn truncation_estimator(input: &EstimatorInput, c_tr: f64) -> Result<f64> {
    let lat = input.ac.lat;
    let kin = input.ac.kin;
    let half = 0.5 * input.ac.mesh.config.domain_radius as f64;
    let tris: Vec<usize> = (0..lat.micro_elements().len())
        .filter(|&t| {
            let pts = lat.micro_elements()[t].map(|v| lat.position(v as usize));
            barycenter(&pts).norm() >= half
        })
        .collect();
    let sa = interpolated_stress(input, &tris)?;
    let mut s = 0.0;
    for (k, &t) in tris.iter().enumerate() {
        let tri = lat.micro_elements()[t];
        let pts = tri.map(|v| lat.position(v as usize));
        let off = [kin.offset(pts[0])?, kin.offset(pts[1])?, kin.offset(pts[2])?];
        let (_, s0) = input.ac.cb.energy_stress(&kin.base_gradient(&pts, &off)?)?;
        s += (sa[k] - s0).norm_squared();
    }
    Ok(c_tr * (s * lat.micro_area()).sqrt())
}

/// `estimate` followed by the separately timed truncation estimator.
pub fn estimate_all(input: &EstimatorInput, cfg: &EstimatorConfig, previous: Option<f64>) -> Result<EstimatorReport> {
    let mut r = estimate(input, cfg, previous)?;
    let t = Instant::now();
    r.eta_tr = truncation_estimator(input, cfg.c_tr)?;
    r.truncation_seconds = t.elapsed().as_secs_f64();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Kinematics;
    use crate::lattice::{DefectSpec, Lattice, LatticeSpec};
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

    fn crack() -> DefectSpec {
        DefectSpec::micro_crack(5, 0.03, 0.03)
    }

    #[test]
    fn blending_endpoints() {
        assert_eq!(blend(0.3, 6.0), 0.0);
        assert_eq!(blend(1.0, 6.0), 0.0);
        assert_eq!(blend(6.0, 6.0), 1.0);
        assert_eq!(blend(40.0, 6.0), 1.0);
        assert!((blend(3.5, 6.0) - 0.5).abs() < 1e-15);
        assert!((blend(1.5, 2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_jump_matches_hand_evaluation() {
        let (_, mesh, _) = setup(DefectSpec::none());
        let s1 = Mat2::new(0.3, -0.1, 0.2, 0.5);
        let s2 = Mat2::new(-0.4, 0.25, 0.1, 0.05);
        let t = (0..mesh.elements().len()).find(|&e| mesh.element(e).label == RegionLabel::Continuum).unwrap();
        let mut sigma = StressField { tensors: vec![s1; mesh.elements().len()] };
        sigma.tensors[t] = s2;
        let sq = coarsening_local_sq(&sigma, &mesh);
        let mut hand = 0.0;
        for ed in mesh.edges() {
            if ed.is_interior() && ed.elements.contains(&(t as u32)) {
                let d = mesh.node(ed.nodes[1] as usize) - mesh.node(ed.nodes[0] as usize);
                let nu = Vec2::new(-d.y, d.x) / d.norm();
                hand += 0.5 * (d.norm() * ((s2 - s1) * nu).norm()).powi(2);
            }
        }
        assert!(hand > 0.0);
        assert!((sq[t] - hand).abs() < 1e-14 * hand);
        for e in 0..sq.len() {
            let touches = mesh.edges().iter().any(|ed| ed.is_interior() && ed.elements.contains(&(e as u32)) && ed.elements.contains(&(t as u32)));
            if e != t && !touches {
                assert_eq!(sq[e], 0.0);
            }
        }
    }

    #[test]
    fn coarsening_sum_matches_edge_loop() {
        let (_, mesh, _) = setup(crack());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = StressField {
            tensors: (0..mesh.elements().len()).map(|_| Mat2::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect(),
        };
        let local: f64 = coarsening_local_sq(&sigma, &mesh).iter().sum();
        let mut edge = 0.0;
        for ed in mesh.edges().iter().filter(|e| e.is_interior()) {
            let [a, b] = ed.elements.map(|e| e as usize);
            if is_atomistic(mesh.element(a).label) && is_atomistic(mesh.element(b).label) {
                continue;
            }
            let d = mesh.node(ed.nodes[1] as usize) - mesh.node(ed.nodes[0] as usize);
            let nu = Vec2::new(d.y, -d.x) / d.norm();
            let jump = sigma.tensors[a] * nu - sigma.tensors[b] * nu;
            edge += (d.norm() * jump.norm()).powi(2);
        }
        assert!((local - edge).abs() < 1e-12 * edge);
    }

    #[test]
    fn homogeneous_state_has_zero_estimators() {
        let mut d = DefectSpec::none();
        d.applied_strain = Mat2::new(1.01, 0.02, -0.01, 0.995);
        let (lat, mesh, kin) = setup(d);
        let ac = AcProblem::new(&lat, &mesh, &kin, Eam::default()).unwrap();
        let at = AtomisticProblem::new(&lat, &kin, Eam::default()).unwrap();
        let u = vec![Vec2::zeros(); mesh.num_nodes()];
        let input = EstimatorInput { ac: &ac, at: &at, u: &u };
        let cfg = EstimatorConfig { mode: EstimatorMode::OriginalExact, ..EstimatorConfig::default() };
        let r = estimate_all(&input, &cfg, None).unwrap();
        assert!(r.eta_cg < 1e-10, "{}", r.eta_cg);
        assert!(r.eta_mo < 1e-10, "{}", r.eta_mo);
        assert!(r.eta_tr < 1e-10, "{}", r.eta_tr);
    }

    fn relaxed(lat: &Lattice, mesh: &CoarseMesh, kin: &Kinematics) -> Vec<Vec2> {
        let ac = AcProblem::new(lat, mesh, kin, Eam::default()).unwrap();
        minimize(&ac, vec![Vec2::zeros(); mesh.num_nodes()], &SolveConfig::default()).unwrap().u
    }

    #[test]
    fn exact_modeling_matches_brute_force() {
        let (lat, mesh, kin) = setup(crack());
        let ac = AcProblem::new(&lat, &mesh, &kin, Eam::default()).unwrap();
        let at = AtomisticProblem::new(&lat, &kin, Eam::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u: Vec<Vec2> = ac
            .free()
            .iter()
            .map(|&f| if f { Vec2::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02)) } else { Vec2::zeros() })
            .collect();
        let input = EstimatorInput { ac: &ac, at: &at, u: &u };
        let sigma = StressField {
            tensors: (0..mesh.elements().len()).map(|_| Mat2::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect(),
        };
        let which: Vec<usize> = (0..mesh.elements().len()).filter(|&e| mesh.element(e).green).take(3).chain(
            (0..mesh.elements().len()).filter(|&e| !mesh.element(e).is_micro() && !mesh.element(e).green).take(2),
        ).collect();
        assert!(which.len() >= 3);
        let fast = modeling_local_exact_sq(&input, &sigma, &which).unwrap();
        let all = full_atomistic_stress(&input);
        for &e in &which {
            let mut s = 0.0;
            for (t, a) in mesh.intersection_areas(&lat, e) {
                let pts = lat.micro_elements()[t].map(|v| lat.position(v as usize));
                let mut avg = Mat2::zeros();
                for f in 0..mesh.elements().len() {
                    avg += intersection_area(&pts, &mesh.element_points(f)) / lat.micro_area() * sigma.tensors[f];
                }
                s += a * (all[t] - avg).norm_squared();
            }
            assert!((fast[e] - s).abs() <= 1e-10 * s, "{e}: {} vs {s}", fast[e]);
        }
    }

    fn full_atomistic_stress(input: &EstimatorInput) -> Vec<Mat2> {
        let lat = input.ac.lat;
        let ia = LatticeInterpolant::new(input.ac.mesh, input.ac.kin, input.u).unwrap().on_lattice(lat).unwrap();
        crate::stress::atomistic_stress(input.at, &ia).unwrap().tensors
    }

    #[test]
    fn modes_are_consistent() {
        let (lat, mesh, kin) = setup(crack());
        let u = relaxed(&lat, &mesh, &kin);
        let ac = AcProblem::new(&lat, &mesh, &kin, Eam::default()).unwrap();
        let at = AtomisticProblem::new(&lat, &kin, Eam::default()).unwrap();
        let input = EstimatorInput { ac: &ac, at: &at, u: &u };
        let run = |mode, rbld| {
            let cfg = EstimatorConfig { mode, rbld, ..EstimatorConfig::default() };
            estimate(&input, &cfg, None).unwrap()
        };
        let exact = run(EstimatorMode::OriginalExact, 2.0);
        let direct = run(EstimatorMode::DirectApprox, 2.0);
        let blended = run(EstimatorMode::BlendedApprox, 4.0);
        let coarse = run(EstimatorMode::CoarseningOnly, 2.0);
        for r in [&exact, &direct, &blended, &coarse] {
            let sum: f64 = r.rho_values().iter().sum();
            assert!((sum - (r.eta_mo + r.eta_cg)).abs() <= 1e-12 * sum);
            assert!((r.rho - sum).abs() <= 1e-12 * sum);
            assert!(r.elements.iter().all(|e| e.rho >= 0.0 && e.eta_mo >= 0.0 && e.eta_cg >= 0.0));
            assert!((r.eta_mo_band.powi(2) + r.eta_mo_far.powi(2) - r.eta_mo.powi(2)).abs() <= 1e-10 * r.eta_mo.powi(2).max(1e-300));
            assert_eq!(r.eta_cg, exact.eta_cg);
        }
        assert!(exact.eta_mo > 0.0 && exact.eta_cg > 0.0);
        assert_eq!(coarse.eta_mo, 0.0);
        let mut blended_far = 0;
        for e in 0..exact.elements.len() {
            let (x, d, b) = (&exact.elements[e], &direct.elements[e], &blended.elements[e]);
            if x.label != RegionLabel::Continuum {
                assert_eq!(d.eta_mo, x.eta_mo);
                assert_eq!(b.eta_mo, x.eta_mo);
            } else {
                assert_eq!(d.mo_kind, MoKind::Direct);
                if x.eta_cg == 0.0 {
                    assert_eq!(d.eta_mo, 0.0);
                }
                if b.mo_kind == MoKind::Exact {
                    assert_eq!(b.eta_mo.to_bits(), x.eta_mo.to_bits());
                    blended_far += 1;
                }
            }
        }
        assert!(blended_far > 0);
        // the automatic constant bounds every buffer ratio
        for x in exact.elements.iter().filter(|x| x.label == RegionLabel::Buffer && x.eta_cg >= 1e-14) {
            assert!(x.h * x.eta_mo / x.eta_cg <= direct.c_mo_cg * (1.0 + 1e-12));
        }
    }

    #[test]
    fn constant_is_covariant_and_local_estimator_reduces() {
        let labels = vec![RegionLabel::Buffer, RegionLabel::Buffer, RegionLabel::Continuum, RegionLabel::Buffer];
        let h = vec![1.0, 2.0, 8.0, 1.0];
        let cg = vec![0.5, 0.25, 1.0, 0.0];
        let mo: Vec<f64> = (0..4).map(|e| 0.7 / h[e] * cg[e]).collect();
        assert!((estimate_constant(&labels, &h, &mo, &cg).unwrap() - 0.7).abs() < 1e-15);
        let mo2: Vec<f64> = mo.iter().map(|x| 2.0 * x).collect();
        assert!((estimate_constant(&labels, &h, &mo2, &cg).unwrap() - 1.4).abs() < 1e-15);
        assert!(estimate_constant(&labels[2..], &h[2..], &mo[2..], &cg[2..]).is_none());

        let (rho, mo_g, cg_g) = local_estimator(&[0.0, 0.0], &[0.3, 0.4], 1.0, 1.0);
        assert_eq!(mo_g, 0.0);
        assert!((rho[0] - 3.0 * 0.09 / cg_g).abs() < 1e-15);
        let (rho, mo_g, cg_g) = local_estimator(&[0.2], &[0.5], 1.5, 2.0);
        assert!((mo_g - 0.3).abs() < 1e-15);
        assert!((rho[0] - (1.5 * 0.2 + 3f64.sqrt() * 3.0 * 0.5)).abs() < 1e-12);
        assert!((rho[0] - (mo_g + cg_g)).abs() < 1e-12);
    }

    #[test]
    fn truncation_is_linear_in_constant_and_positive_for_crack() {
        let (lat, mesh, kin) = setup(crack());
        let u = relaxed(&lat, &mesh, &kin);
        let ac = AcProblem::new(&lat, &mesh, &kin, Eam::default()).unwrap();
        let at = AtomisticProblem::new(&lat, &kin, Eam::default()).unwrap();
        let input = EstimatorInput { ac: &ac, at: &at, u: &u };
        let a = truncation_estimator(&input, 1.0).unwrap();
        let b = truncation_estimator(&input, 2.0).unwrap();
        assert!(a > 0.0);
        assert!((b - 2.0 * a).abs() <= 1e-14 * b);
    }

    #[test]
    fn csv_has_one_row_per_element_and_totals() {
        let (lat, mesh, kin) = setup(crack());
        let ac = AcProblem::new(&lat, &mesh, &kin, Eam::default()).unwrap();
        let at = AtomisticProblem::new(&lat, &kin, Eam::default()).unwrap();
        let u = vec![Vec2::zeros(); mesh.num_nodes()];
        let input = EstimatorInput { ac: &ac, at: &at, u: &u };
        let r = estimate(&input, &EstimatorConfig::default(), None).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), mesh.elements().len() + 2);
        assert!(text.lines().last().unwrap().starts_with("total,direct"));
    }
}
