//! The solve, estimate, mark and refine loop.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use log::info;
use serde::{Deserialize, Serialize};

use crate::atomistic::AtomisticProblem;
use crate::coupling::AcProblem;
use crate::error::{Error, Result};
use crate::estimator::{estimate_all, EstimatorConfig, EstimatorInput, EstimatorReport};
use crate::kinematics::Kinematics;
use crate::lattice::{DefectSpec, Lattice, LatticeSpec, Vec2};
use crate::mesh::{CoarseMesh, MeshConfig, RegionLabel};
use crate::potential::{Eam, EamParams};
use crate::solver::{minimize, SolveConfig};
use crate::transfer::{prolongate, true_error};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Marking {
    /// Every element with `rho_T` at least the mean.
    AboveMean,
    /// Shortest prefix of the descending sort whose sum reaches the mean.
    Prefix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub n_max: usize,
    pub rho_tol: f64,
    pub r_max: i32,
    pub tau1: f64,
    pub tau2: f64,
    /// Largest interface expansion probed.
    pub k_max: i32,
    pub max_steps: usize,
    pub marking: Marking,
    pub estimator: EstimatorConfig,
    pub mesh: MeshConfig,
    pub solver: SolveConfig,
    pub eam: EamParams,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            n_max: 20000,
            rho_tol: 0.0,
            r_max: 300,
            tau1: 0.7,
            tau2: 1.0,
            k_max: 3,
            max_steps: 40,
            marking: Marking::AboveMean,
            estimator: EstimatorConfig::default(),
            mesh: MeshConfig::default(),
            solver: SolveConfig::default(),
            eam: EamParams::default(),
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > 0.0 && self.tau1 < 1.0) || !(self.tau2 > 0.0) {
            return Err(Error::Config("need 0 < tau1 < 1 and tau2 > 0".into()));
        }
        if self.k_max < 1 {
            return Err(Error::Config("need K >= 1".into()));
        }
        if self.rho_tol.is_nan() {
            return Err(Error::Config("rho tolerance is NaN".into()));
        }
        self.estimator.validate()?;
        self.mesh.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxDofs,
    Tolerance,
    MaxRadius,
    MaxSteps,
    /// Nothing left to refine or expand.
    Stalled,
    SolverFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Refined(usize),
    InterfaceExpanded { k: i32, refined: usize, merges: usize },
    DomainEnlarged(i32),
    Stopped(StopReason),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptiveStep {
    pub step: usize,
    pub n: usize,
    pub elements: usize,
    pub radius: i32,
    pub regions: usize,
    pub rho: f64,
    pub eta_tr: f64,
    pub eta_cg: f64,
    pub eta_mo: f64,
    pub eta_mo_band: f64,
    pub eta_mo_far: f64,
    pub c_mo_cg: f64,
    pub error: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub action: Action,
    pub snapshot: Option<String>,
    pub solve_seconds: f64,
    pub estimate_seconds: f64,
    pub truncation_seconds: f64,
}

/// Fully atomistic solution used to measure true errors.
pub struct Reference {
    pub lattice: Lattice,
    pub u: Vec<Vec2>,
}

/// Where per-step artefacts go; nothing is written without a directory.
#[derive(Clone, Debug, Default)]
pub struct Outputs {
    pub dir: Option<PathBuf>,
    pub snapshots: bool,
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub config: &'a AdaptiveConfig,
    pub defect: &'a DefectSpec,
    pub steps: &'a [AdaptiveStep],
}

/// Elements selected by the marking rule.
pub fn mark(rho: &[f64], rule: Marking) -> Vec<usize> {
    if rho.is_empty() {
        return Vec::new();
    }
    let mean = rho.iter().sum::<f64>() / rho.len() as f64;
    match rule {
        Marking::AboveMean => (0..rho.len()).filter(|&e| rho[e] >= mean).collect(),
        Marking::Prefix => {
            let mut order: Vec<usize> = (0..rho.len()).collect();
            order.sort_by(|&a, &b| rho[b].total_cmp(&rho[a]).then(a.cmp(&b)));
            let mut out = Vec::new();
            let mut s = 0.0;
            for e in order {
                if s >= mean {
                    break;
                }
                s += rho[e];
                out.push(e);
            }
            out.sort_unstable();
            out
        }
    }
}

/// First `k <= k_max` for which the marked elements within `k` hops of the
/// atomistic region carry a `tau1` share of the marked mass, together with
/// those elements.
pub fn probe_interface(
    mesh: &CoarseMesh,
    rho: &[f64],
    marked: &[usize],
    tau1: f64,
    k_max: i32,
) -> Option<(i32, Vec<usize>)> {
    let total: f64 = marked.iter().map(|&e| rho[e]).sum();
    if !(total > 0.0) {
        return None;
    }
    let dist: Vec<f64> = marked
        .iter()
        .map(|&e| {
            if mesh.element(e).label == RegionLabel::AtomCore {
                f64::INFINITY
            } else {
                mesh.element_points(e).iter().map(|&x| mesh.distance_to_atomistic(x)).fold(f64::INFINITY, f64::min)
            }
        })
        .collect();
    for k in 1..=k_max {
        let near: Vec<usize> = (0..marked.len()).filter(|&i| dist[i] <= k as f64).map(|i| marked[i]).collect();
        if near.iter().map(|&e| rho[e]).sum::<f64>() >= tau1 * total {
            return Some((k, near));
        }
    }
    None
}

/// Next admissible domain radius: at least 1.5 times larger, rounded up to
/// a multiple of the macro side.
pub fn enlarged_radius(r: i32, side: i32) -> i32 {
    let target = (1.5 * r as f64).ceil() as i32;
    (target + side - 1) / side * side
}

pub fn lattice_for(defect: &DefectSpec, radius: i32) -> Result<Lattice> {
    Lattice::new(LatticeSpec::triangular(radius as f64, defect.clone()))
}

/// Lattice, mesh and solution of the last step of a run.
pub struct FinalState {
    pub lattice: Lattice,
    pub mesh: CoarseMesh,
    pub u: Vec<Vec2>,
}

/// Runs the adaptive loop. A failed solve ends the run with a
/// `SolverFailed` step instead of an error.
pub fn run(
    cfg: &AdaptiveConfig,
    defect: &DefectSpec,
    reference: Option<&Reference>,
    outputs: &Outputs,
) -> Result<Vec<AdaptiveStep>> {
    run_with_state(cfg, defect, reference, outputs).map(|r| r.0)
}

pub fn run_with_state(
    cfg: &AdaptiveConfig,
    defect: &DefectSpec,
    reference: Option<&Reference>,
    outputs: &Outputs,
) -> Result<(Vec<AdaptiveStep>, FinalState)> {
    cfg.validate()?;
    let kin = Kinematics::from_defect(defect);
    let eam = Eam::new(cfg.eam);
    let mut lat = lattice_for(defect, cfg.mesh.domain_radius)?;
    let mut mesh = CoarseMesh::initialize(&lat, &cfg.mesh)?;
    let mut u: Vec<Vec2> = vec![Vec2::zeros(); mesh.num_nodes()];
    let mut steps: Vec<AdaptiveStep> = Vec::new();
    let mut constant: Option<f64> = None;
    if let Some(dir) = &outputs.dir {
        std::fs::create_dir_all(dir)?;
    }
    for step in 0.. {
        let ev = evaluate(cfg, &lat, &mesh, &kin, &eam, u, reference, constant, step)?;
        u = ev.u;
        let mut row = ev.row;
        let Some(report) = ev.report else {
            steps.push(row);
            break;
        };
        constant = Some(report.c_mo_cg);
        if let Some(dir) = &outputs.dir {
            report.write_csv(BufWriter::new(File::create(dir.join(format!("estimator_{step:03}.csv")))?))?;
            if outputs.snapshots {
                let name = format!("mesh_{step:03}.txt");
                mesh.write_snapshot(BufWriter::new(File::create(dir.join(&name))?))?;
                row.snapshot = Some(name);
            }
        }

        let stop = if row.n > cfg.n_max {
            Some(StopReason::MaxDofs)
        } else if row.rho < cfg.rho_tol {
            Some(StopReason::Tolerance)
        } else if lat.radius() > cfg.r_max {
            Some(StopReason::MaxRadius)
        } else if step + 1 >= cfg.max_steps {
            Some(StopReason::MaxSteps)
        } else {
            None
        };
        if let Some(s) = stop {
            row.action = Action::Stopped(s);
            info!("step {step}: N = {}, rho = {:.3e}, stop {s:?}", row.n, row.rho);
            steps.push(row);
            break;
        }

        let (next, action) = if report.eta_tr > cfg.tau2 * report.rho {
            let r = enlarged_radius(lat.radius(), cfg.mesh.macro_side);
            let big = lattice_for(defect, r)?;
            let m = mesh.enlarge(&big)?;
            (Some((big, m)), Action::DomainEnlarged(r))
        } else {
            let rho = report.rho_values();
            let mut marked = mark(&rho, cfg.marking);
            let mut expanded = None;
            if let Some((k, near)) = probe_interface(&mesh, &rho, &marked, cfg.tau1, cfg.k_max) {
                marked.retain(|e| !near.contains(e));
                let (m, merges) = mesh.expand_interface(&lat, k, None)?;
                expanded = Some((k, merges, m));
            }
            let refinable: Vec<usize> = marked.iter().copied().filter(|&e| !mesh.element(e).is_micro()).collect();
            if expanded.is_none() && refinable.is_empty() && !marked.is_empty() {
                // canonical triangles cannot be bisected; only a larger
                // atomistic region reduces their residual
                let (m, merges) = mesh.expand_interface(&lat, cfg.k_max, None)?;
                expanded = Some((cfg.k_max, merges, m));
            }
            match expanded {
                Some((k, merges, m)) => {
                    // the expanded mesh keeps the same tree, so leaves carry over
                    let m = if refinable.is_empty() { m } else { refine_leaves(&lat, &m, &mesh, &refinable)? };
                    (Some((lat.clone(), m)), Action::InterfaceExpanded { k, refined: refinable.len(), merges })
                }
                None if refinable.is_empty() => (None, Action::Stopped(StopReason::Stalled)),
                None => {
                    let m = mesh.refine(&lat, &refinable)?;
                    if m.num_nodes() == mesh.num_nodes() {
                        (None, Action::Stopped(StopReason::Stalled))
                    } else {
                        (Some((lat.clone(), m)), Action::Refined(refinable.len()))
                    }
                }
            }
        };
        info!("step {step}: N = {}, rho = {:.3e}, eta_tr = {:.3e}, {action:?}", row.n, row.rho, row.eta_tr);
        row.action = action;
        steps.push(row);
        let Some((new_lat, new_mesh)) = next else { break };
        u = prolongate(&mesh, &kin, &u, &new_mesh)?;
        lat = new_lat;
        mesh = new_mesh;
    }
    if let Some(dir) = &outputs.dir {
        let manifest = Manifest { config: cfg, defect, steps: &steps };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("manifest.json"))?), &manifest)
            .map_err(|e| Error::Io(e.into()))?;
    }
    Ok((steps, FinalState { lattice: lat, mesh, u }))
}

/// Outcome of one solve and estimate on a fixed mesh.
pub struct Evaluation {
    pub row: AdaptiveStep,
    /// Missing when the solver did not converge.
    pub report: Option<EstimatorReport>,
    pub u: Vec<Vec2>,
}

/// Solves on `mesh` from `u`, then runs the estimators and, with a large
/// enough reference, the true error. The action is left as `SolverFailed`
/// for the caller to overwrite.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    cfg: &AdaptiveConfig,
    lat: &Lattice,
    mesh: &CoarseMesh,
    kin: &Kinematics,
    eam: &Eam,
    u: Vec<Vec2>,
    reference: Option<&Reference>,
    constant: Option<f64>,
    step: usize,
) -> Result<Evaluation> {
    let ac = AcProblem::new(lat, mesh, kin, eam.clone())?;
    let solved = minimize(&ac, u, &cfg.solver)?;
    let mut row = AdaptiveStep {
        step,
        n: ac.dofs(),
        elements: mesh.elements().len(),
        radius: lat.radius(),
        regions: mesh.regions.len(),
        rho: f64::NAN,
        eta_tr: f64::NAN,
        eta_cg: f64::NAN,
        eta_mo: f64::NAN,
        eta_mo_band: f64::NAN,
        eta_mo_far: f64::NAN,
        c_mo_cg: f64::NAN,
        error: None,
        iterations: solved.iterations,
        converged: solved.converged,
        action: Action::Stopped(StopReason::SolverFailed),
        snapshot: None,
        solve_seconds: solved.seconds,
        estimate_seconds: 0.0,
        truncation_seconds: 0.0,
    };
    if !solved.converged {
        return Ok(Evaluation { row, report: None, u: solved.u });
    }
    let at = AtomisticProblem::new(lat, kin, eam.clone())?;
    let mut report = estimate_all(&EstimatorInput { ac: &ac, at: &at, u: &solved.u }, &cfg.estimator, constant)?;
    report.solve_seconds = solved.seconds;
    fill(&mut row, &report);
    if let Some(r) = reference {
        if r.lattice.radius() >= lat.radius() {
            row.error = Some(true_error(&r.lattice, &r.u, mesh, kin, &solved.u)?);
        }
    }
    Ok(Evaluation { row, report: Some(report), u: solved.u })
}

/// Refines in `target` the leaves that owned `elements` of `source`.
fn refine_leaves(lat: &Lattice, target: &CoarseMesh, source: &CoarseMesh, elements: &[usize]) -> Result<CoarseMesh> {
    let mut tree = target.tree.clone();
    for &e in elements {
        tree.refine(&source.element(e).leaf);
    }
    CoarseMesh::assemble(lat, target.config.clone(), tree, target.regions.clone())
}

fn fill(row: &mut AdaptiveStep, r: &EstimatorReport) {
    row.rho = r.rho;
    row.eta_tr = r.eta_tr;
    row.eta_cg = r.eta_cg;
    row.eta_mo = r.eta_mo;
    row.eta_mo_band = r.eta_mo_band;
    row.eta_mo_far = r.eta_mo_far;
    row.c_mo_cg = r.c_mo_cg;
    row.estimate_seconds = r.estimate_seconds;
    row.truncation_seconds = r.truncation_seconds;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_values_mark_everything() {
        let rho = vec![0.3; 10];
        assert_eq!(mark(&rho, Marking::AboveMean).len(), 10);
    }

    #[test]
    fn dominant_element_is_marked_alone() {
        let mut rho = vec![1.0; 100];
        rho[37] = 100.0;
        assert_eq!(mark(&rho, Marking::AboveMean), vec![37]);
        assert_eq!(mark(&rho, Marking::Prefix), vec![37]);
    }

    #[test]
    fn marking_is_scale_invariant() {
        let rho: Vec<f64> = (0..50).map(|i| ((i * 7919) % 31) as f64 + 0.5).collect();
        let scaled: Vec<f64> = rho.iter().map(|x| 3.7 * x).collect();
        for rule in [Marking::AboveMean, Marking::Prefix] {
            assert_eq!(mark(&rho, rule), mark(&scaled, rule));
        }
        assert!(mark(&[], Marking::AboveMean).is_empty());
    }

    #[test]
    fn enlarged_radius_is_a_multiple_of_the_side() {
        assert_eq!(enlarged_radius(64, 32), 96);
        assert_eq!(enlarged_radius(32, 16), 48);
        assert_eq!(enlarged_radius(48, 16), 80);
    }

    fn small() -> AdaptiveConfig {
        AdaptiveConfig {
            mesh: MeshConfig { domain_radius: 32, macro_side: 16, ra: 4, ..MeshConfig::default() },
            max_steps: 4,
            ..AdaptiveConfig::default()
        }
    }

    #[test]
    fn infinite_tolerance_stops_at_first_step() {
        let cfg = AdaptiveConfig { rho_tol: f64::INFINITY, ..small() };
        let steps = run(&cfg, &DefectSpec::micro_crack(5, 0.03, 0.03), None, &Outputs::default()).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].action, Action::Stopped(StopReason::Tolerance));
    }

    #[test]
    fn crack_run_progresses() {
        let steps = run(&small(), &DefectSpec::micro_crack(5, 0.03, 0.03), None, &Outputs::default()).unwrap();
        assert_eq!(steps.len(), 4);
        for w in steps.windows(2) {
            assert!(w[1].n >= w[0].n);
            assert!(!matches!(w[0].action, Action::Stopped(_)));
        }
        assert!(steps.iter().all(|s| s.converged && s.rho > 0.0));
    }
}
