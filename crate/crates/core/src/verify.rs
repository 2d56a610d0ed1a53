//! Invariant suite behind `acoupler verify`.
//!
//! Each check returns the measured quantity next to its tolerance so the same
//! functions serve the command line table and the test suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::atomistic::AtomisticProblem;
use crate::coupling::{build_reconstruction, build_volumes, AcProblem, ReconstructionTable};
use crate::error::Result;
use crate::estimator::{estimate, EstimatorConfig, EstimatorInput, EstimatorMode};
use crate::geometry::{intersection_area, p1_gradients, signed_area};
use crate::kinematics::Kinematics;
use crate::lattice::{DefectSpec, Lattice, LatticeSpec, Mat2, Vec2};
use crate::mesh::{CoarseMesh, MeshConfig};
use crate::potential::Eam;
use crate::solver::{minimize, SolveConfig};
use crate::stats::loglog_slope;
use crate::stress::{ac_stress, atomistic_stress};

pub const CHECKS: [&str; 6] = ["force-patch", "energy-patch", "gradient-fd", "stress-identities", "intersection", "ratio-law"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Every reconstructed diagonal coefficient set to 0.5.
    HalfDiagonal,
}

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Only checks whose name contains this string.
    pub filter: Option<String>,
    pub fault: Option<Fault>,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn below(name: &'static str, value: f64, tolerance: f64, detail: String) -> Self {
        CheckResult { name, value, tolerance, passed: value <= tolerance, detail }
    }
}

fn patch_setup() -> Result<(Lattice, CoarseMesh)> {
    let lat = Lattice::new(LatticeSpec::triangular(32.0, DefectSpec::none()))?;
    let mesh = CoarseMesh::initialize(&lat, &MeshConfig { domain_radius: 32, macro_side: 16, ..MeshConfig::default() })?;
    Ok((lat, mesh))
}

fn crack_setup(radius: i32, side: i32) -> Result<(Lattice, CoarseMesh, Kinematics)> {
    let d = DefectSpec::micro_crack(11, 0.03, 0.03);
    let lat = Lattice::new(LatticeSpec::triangular(radius as f64, d.clone()))?;
    let mesh = CoarseMesh::initialize(&lat, &MeshConfig { domain_radius: radius, macro_side: side, ..MeshConfig::default() })?;
    Ok((lat, mesh, Kinematics::from_defect(&d)))
}

fn inject(table: &mut ReconstructionTable, fault: Fault) {
    match fault {
        Fault::HalfDiagonal => {
            for c in &mut table.coeffs {
                for rho in 0..6 {
                    if c[rho][rho] != 1.0 {
                        c[rho][rho] = 0.5;
                    }
                }
            }
        }
    }
}

fn patch_problem<'a>(lat: &'a Lattice, mesh: &'a CoarseMesh, kin: &'a Kinematics, fault: Option<Fault>) -> Result<AcProblem<'a>> {
    let mut table = build_reconstruction(lat, mesh)?;
    if let Some(f) = fault {
        inject(&mut table, f);
    }
    let volumes = build_volumes(mesh, &table);
    AcProblem::with_tables(lat, mesh, kin, Eam::default(), table, volumes)
}

pub fn random_strains(seed: u64, count: usize, size: f64) -> Vec<Mat2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| Mat2::identity() + Mat2::from_fn(|_, _| rng.random_range(-size..size))).collect()
}

/// Largest force at a free node for uniform deformations, and the largest
/// relative energy mismatch against `|Omega_h| W(F)`.
pub fn patch_tests(strains: &[Mat2], fault: Option<Fault>) -> Result<(f64, f64)> {
    let (lat, mesh) = patch_setup()?;
    let kin = Kinematics::InPlane { strain: Mat2::identity() };
    let p = patch_problem(&lat, &mesh, &kin, fault)?;
    let (mut force, mut energy) = (0.0f64, 0.0f64);
    for f in strains {
        let u: Vec<Vec2> = mesh.nodes().iter().map(|x| (f - Mat2::identity()) * x).collect();
        let mut g = vec![Vec2::zeros(); u.len()];
        let e = p.energy_gradient(&u, &mut g)?;
        let expected = p.domain_area() * p.cb.energy(f)?;
        energy = energy.max((e - expected).abs() / expected.abs().max(f64::MIN_POSITIVE));
        for (n, v) in g.iter().enumerate() {
            if p.free()[n] {
                force = force.max(v.amax());
            }
        }
    }
    Ok((force, energy))
}

fn random_field(rng: &mut ChaCha8Rng, free: &[bool], scale: f64) -> Vec<Vec2> {
    free.iter()
        .map(|&f| if f { Vec2::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale)) } else { Vec2::zeros() })
        .collect()
}

fn fd_error(energy: &dyn Fn(&[Vec2]) -> Result<f64>, u: &[Vec2], g: &[Vec2], v: &[Vec2]) -> Result<f64> {
    let h = 1e-6;
    let up: Vec<Vec2> = u.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let um: Vec<Vec2> = u.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let fd = (energy(&up)? - energy(&um)?) / (2.0 * h);
    let an: f64 = g.iter().zip(v).map(|(a, b)| a.dot(b)).sum();
    Ok((fd - an).abs() / an.abs().max(1.0))
}

/// Worst relative gap between analytic directional derivatives and central
/// differences, over `directions` random directions for each energy.
pub fn gradient_check(seed: u64, directions: usize) -> Result<f64> {
    let (lat, mesh, kin) = crack_setup(32, 16)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ac = AcProblem::new(&lat, &mesh, &kin, Eam::default())?;
    let at = AtomisticProblem::new(&lat, &kin, Eam::default())?;
    let mut worst = 0.0f64;

    let u = random_field(&mut rng, ac.free(), 0.02);
    let mut g = vec![Vec2::zeros(); u.len()];
    ac.energy_gradient(&u, &mut g)?;
    for _ in 0..directions {
        let v = random_field(&mut rng, ac.free(), 1.0);
        worst = worst.max(fd_error(&|w| ac.energy(w), &u, &g, &v)?);
    }

    let u = random_field(&mut rng, at.free(), 0.02);
    let mut g = vec![Vec2::zeros(); u.len()];
    at.energy_gradient(&u, &mut g)?;
    for _ in 0..directions {
        let v = random_field(&mut rng, at.free(), 1.0);
        worst = worst.max(fd_error(&|w| at.energy(w), &u, &g, &v)?);
    }
    Ok(worst)
}

/// `sum_T |T| sigma_T : grad v` over a P1 triangulation.
pub fn stress_pairing(tensors: &[Mat2], tris: &[[u32; 3]], pos: &dyn Fn(usize) -> Vec2, v: &[Vec2]) -> f64 {
    let mut s = 0.0;
    for (t, tri) in tris.iter().enumerate() {
        let p = tri.map(|k| pos(k as usize));
        let Some((g, area)) = p1_gradients(&p) else { continue };
        let mut grad = Mat2::zeros();
        for k in 0..3 {
            grad += v[tri[k] as usize] * g[k].transpose();
        }
        s += area * tensors[t].component_mul(&grad).sum();
    }
    s
}

/// Worst relative gap in `<dE(u), v> = (sigma(u), grad v)` for the atomistic
/// and the coupled stress.
pub fn stress_identities(seed: u64, trials: usize) -> Result<f64> {
    let (lat, mesh, kin) = crack_setup(32, 16)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;

    let at = AtomisticProblem::new(&lat, &kin, Eam::default())?;
    let u = random_field(&mut rng, at.free(), 0.02);
    let s = atomistic_stress(&at, &u)?;
    let mut g = vec![Vec2::zeros(); lat.len()];
    at.energy_gradient(&u, &mut g)?;
    for _ in 0..trials {
        let v = random_field(&mut rng, at.free(), 1.0);
        let lhs: f64 = g.iter().zip(&v).map(|(a, b)| a.dot(b)).sum();
        let rhs = stress_pairing(&s.tensors, lat.micro_elements(), &|k| lat.position(k), &v);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }

    let ac = AcProblem::new(&lat, &mesh, &kin, Eam::default())?;
    let u = random_field(&mut rng, ac.free(), 0.02);
    let s = ac_stress(&ac, &u)?;
    let mut g = vec![Vec2::zeros(); mesh.num_nodes()];
    ac.energy_gradient(&u, &mut g)?;
    let tris: Vec<[u32; 3]> = mesh.elements().iter().map(|e| e.nodes).collect();
    for _ in 0..trials {
        let v = random_field(&mut rng, ac.free(), 1.0);
        let lhs: f64 = g.iter().zip(&v).map(|(a, b)| a.dot(b)).sum();
        let rhs = stress_pairing(&s.tensors, &tris, &|k| mesh.node(k), &v);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug)]
pub struct IntersectionOutcome {
    /// Worst `|sum_T' |T cap T'| - |T|| / |T|` over random and mesh triangles.
    pub partition: f64,
    /// Worst relative gap between a clipped area and its Monte-Carlo estimate.
    pub monte_carlo: f64,
    pub pairs: usize,
}

fn inside(t: &[Vec2; 3], x: Vec2) -> bool {
    let s = signed_area(t[0], t[1], t[2]).signum();
    (0..3).all(|k| s * signed_area(t[k], t[(k + 1) % 3], x) >= 0.0)
}

/// Random coarse triangles against the canonical triangulation. One pair per
/// triangle, chosen with overlap at least a fifth of the micro triangle, is
/// checked against `samples` uniform points.
pub fn intersection_oracle(seed: u64, triangles: usize, samples: usize) -> Result<IntersectionOutcome> {
    let lat = Lattice::new(LatticeSpec::triangular(24.0, DefectSpec::none()))?;
    let micro: Vec<[Vec2; 3]> = lat.micro_elements().iter().map(|t| t.map(|k| lat.position(k as usize))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = IntersectionOutcome { partition: 0.0, monte_carlo: 0.0, pairs: 0 };
    let mut made = 0;
    while made < triangles {
        let c = Vec2::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
        let mut t: [Vec2; 3] = std::array::from_fn(|_| c + Vec2::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)));
        if signed_area(t[0], t[1], t[2]) < 0.0 {
            t.swap(1, 2);
        }
        let area = signed_area(t[0], t[1], t[2]);
        if area < 0.5 {
            continue;
        }
        made += 1;
        let parts: Vec<(usize, f64)> = micro
            .iter()
            .enumerate()
            .map(|(m, s)| (m, intersection_area(&t, s)))
            .filter(|&(_, a)| a > 0.0)
            .collect();
        let sum: f64 = parts.iter().map(|p| p.1).sum();
        out.partition = out.partition.max((sum - area).abs() / area);

        let micro_area = lat.micro_area();
        let Some(&(m, a)) = parts.iter().find(|p| p.1 >= 0.2 * micro_area) else { continue };
        let s = &micro[m];
        let mut hits = 0usize;
        for _ in 0..samples {
            // uniform point in s
            let (mut r1, mut r2) = (rng.random::<f64>(), rng.random::<f64>());
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            let x = s[0] + r1 * (s[1] - s[0]) + r2 * (s[2] - s[0]);
            if inside(&t, x) {
                hits += 1;
            }
        }
        let mc = micro_area * hits as f64 / samples as f64;
        out.monte_carlo = out.monte_carlo.max((mc - a).abs() / a);
        out.pairs += 1;
    }

    let (lat, mesh, _) = crack_setup(32, 16)?;
    for e in 0..mesh.elements().len() {
        let p = mesh.element_points(e);
        let area = signed_area(p[0], p[1], p[2]).abs();
        let sum: f64 = mesh.intersection_areas(&lat, e).iter().map(|x| x.1).sum();
        out.partition = out.partition.max((sum - area).abs() / area);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct RatioOutcome {
    pub slope: f64,
    pub elements: usize,
    pub sizes: Vec<f64>,
}

/// Slope of `eta_mo(T)/eta_cg(T)` against `h_T` on the relaxed micro-crack,
/// over elements with `h_T >= h_min` and both parts nonzero.
pub fn ratio_law(radius: i32, side: i32, h_min: f64) -> Result<RatioOutcome> {
    let (lat, mesh, kin) = crack_setup(radius, side)?;
    let ac = AcProblem::new(&lat, &mesh, &kin, Eam::default())?;
    let r = minimize(&ac, vec![Vec2::zeros(); mesh.num_nodes()], &SolveConfig::default())?;
    let at = AtomisticProblem::new(&lat, &kin, Eam::default())?;
    let cfg = EstimatorConfig { mode: EstimatorMode::OriginalExact, ..EstimatorConfig::default() };
    let rep = estimate(&EstimatorInput { ac: &ac, at: &at, u: &r.u }, &cfg, None)?;
    let (mut h, mut q) = (Vec::new(), Vec::new());
    for el in &rep.elements {
        if el.h >= h_min && el.eta_mo > 0.0 && el.eta_cg > 0.0 {
            h.push(el.h);
            q.push(el.eta_mo / el.eta_cg);
        }
    }
    let mut sizes: Vec<f64> = h.clone();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let slope = loglog_slope(&h, &q).unwrap_or(f64::NAN);
    Ok(RatioOutcome { slope, elements: h.len(), sizes })
}

fn selected(opts: &VerifyOptions, name: &str) -> bool {
    opts.filter.as_deref().is_none_or(|f| name.contains(f))
}

/// Runs the selected checks at the acceptance tolerances.
pub fn run_suite(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let strains = random_strains(opts.seed, 20, 0.05);
    let patch = if selected(opts, "force-patch") || selected(opts, "energy-patch") {
        Some(patch_tests(&strains, opts.fault)?)
    } else {
        None
    };
    if let (true, Some((force, _))) = (selected(opts, "force-patch"), patch) {
        out.push(CheckResult::below("force-patch", force, 1e-10, "max free-node force, 20 strains".into()));
    }
    if let (true, Some((_, energy))) = (selected(opts, "energy-patch"), patch) {
        out.push(CheckResult::below("energy-patch", energy, 1e-10, "relative energy mismatch".into()));
    }
    if selected(opts, "gradient-fd") {
        let e = gradient_check(opts.seed, 50)?;
        out.push(CheckResult::below("gradient-fd", e, 1e-6, "50 directions per energy".into()));
    }
    if selected(opts, "stress-identities") {
        let e = stress_identities(opts.seed, 10)?;
        out.push(CheckResult::below("stress-identities", e, 1e-9, "atomistic and coupled".into()));
    }
    if selected(opts, "intersection") {
        let o = intersection_oracle(opts.seed, 200, 1_000_000)?;
        let passed = o.partition <= 1e-10 && o.monte_carlo <= 1e-2;
        out.push(CheckResult {
            name: "intersection",
            value: o.partition,
            tolerance: 1e-10,
            passed,
            detail: format!("monte carlo gap {:.3e} over {} pairs", o.monte_carlo, o.pairs),
        });
    }
    if selected(opts, "ratio-law") {
        let o = ratio_law(64, 32, 4.0)?;
        let gap = (o.slope + 1.0).abs();
        out.push(CheckResult::below(
            "ratio-law",
            gap,
            0.2,
            format!("slope {:.4} over {} elements, {} sizes", o.slope, o.elements, o.sizes.len()),
        ));
    }
    Ok(out)
}
