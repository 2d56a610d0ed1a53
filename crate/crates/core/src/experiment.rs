//! Experiment configuration, reference files and the CSV outputs of the
//! command line driver.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptive::{evaluate, lattice_for, run, Action, AdaptiveConfig, AdaptiveStep, Marking, Outputs, Reference, StopReason};
use crate::error::{Error, Result};
use crate::estimator::EstimatorMode;
use crate::kinematics::Kinematics;
use crate::lattice::{DefectSpec, Lattice, LatticeCoord, Vec2};
use crate::mesh::CoarseMesh;
use crate::potential::Eam;
use crate::solver::{solve_reference, SolveConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    MicroCrack,
    Screw,
    MultiVacancy,
    DefectFree,
}

impl Case {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "micro-crack" | "crack" => Ok(Case::MicroCrack),
            "screw" => Ok(Case::Screw),
            "multi-vacancy" | "vacancies" => Ok(Case::MultiVacancy),
            "defect-free" | "none" => Ok(Case::DefectFree),
            _ => Err(Error::Config(format!("unknown case `{s}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Case::MicroCrack => "micro-crack",
            Case::Screw => "screw",
            Case::MultiVacancy => "multi-vacancy",
            Case::DefectFree => "defect-free",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseParams {
    pub crack_length: u32,
    pub crack_s: f64,
    pub crack_gamma: f64,
    pub burgers: f64,
    /// Pairwise distance of the three vacancies.
    pub vacancy_spacing: i32,
}

impl Default for CaseParams {
    fn default() -> Self {
        CaseParams { crack_length: 11, crack_s: 0.03, crack_gamma: 0.03, burgers: 1.0, vacancy_spacing: 20 }
    }
}

/// Three vacancies on an equilateral triangle of side `d`, centred near the origin.
pub fn vacancy_triangle(d: i32) -> Vec<LatticeCoord> {
    let o = -(d / 3);
    vec![LatticeCoord::new(o, o), LatticeCoord::new(o + d, o), LatticeCoord::new(o, o + d)]
}

pub fn defect_for(case: Case, p: &CaseParams) -> DefectSpec {
    match case {
        Case::MicroCrack => DefectSpec::micro_crack(p.crack_length, p.crack_s, p.crack_gamma),
        Case::Screw => DefectSpec::screw(p.burgers),
        Case::MultiVacancy => DefectSpec::vacancies(vacancy_triangle(p.vacancy_spacing)),
        Case::DefectFree => DefectSpec::none(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Original,
    Coarsening,
    Graded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveSection {
    pub tau1: f64,
    pub tau2: f64,
    pub k_max: i32,
    pub max_steps: usize,
    pub rho_tol: f64,
    pub r_max: i32,
    pub marking: String,
    pub force_tolerance: f64,
}

impl Default for AdaptiveSection {
    fn default() -> Self {
        let a = AdaptiveConfig::default();
        AdaptiveSection {
            tau1: a.tau1,
            tau2: a.tau2,
            k_max: a.k_max,
            max_steps: a.max_steps,
            rho_tol: a.rho_tol,
            r_max: a.r_max,
            marking: "above-mean".into(),
            force_tolerance: SolveConfig::default().force_tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub ra: i32,
    pub beta: f64,
    pub grading: f64,
    pub macro_side: i32,
}

impl Default for MeshSection {
    fn default() -> Self {
        let m = crate::mesh::MeshConfig::default();
        MeshSection { ra: m.ra, beta: m.beta, grading: m.grading, macro_side: m.macro_side }
    }
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: Case,
    pub modes: Vec<EstimatorMode>,
    pub rbuf: Vec<i32>,
    pub rbld: Vec<f64>,
    pub baselines: Vec<Baseline>,
    pub radius: i32,
    pub nmax: usize,
    pub seed: u64,
    pub snapshots: bool,
    pub out: PathBuf,
    /// Reference solution file; computed in process when absent.
    pub reference: Option<PathBuf>,
    /// Skip true errors altogether.
    pub no_error: bool,
    pub adaptive: AdaptiveSection,
    pub mesh: MeshSection,
    pub defect: CaseParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            case: Case::MicroCrack,
            modes: vec![EstimatorMode::DirectApprox],
            rbuf: vec![3],
            rbld: vec![2.0],
            baselines: Vec::new(),
            radius: 96,
            nmax: 20000,
            seed: 0,
            snapshots: false,
            out: PathBuf::from("out"),
            reference: None,
            no_error: false,
            adaptive: AdaptiveSection::default(),
            mesh: MeshSection::default(),
            defect: CaseParams::default(),
        }
    }
}

/// One adaptive (or graded) run of the sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub id: String,
    pub graded: bool,
    pub config: AdaptiveConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn defect(&self) -> DefectSpec {
        defect_for(self.case, &self.defect)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.rbuf.is_empty() || self.rbld.is_empty() {
            return Err(Error::Config("sweep lists must be nonempty".into()));
        }
        if self.radius < 1 || self.radius > 300 {
            return Err(Error::Config(format!("radius {} out of range", self.radius)));
        }
        for spec in self.runs()? {
            spec.config.validate()?;
        }
        Ok(())
    }

    fn adaptive_config(&self, mode: EstimatorMode, rbuf: i32, rbld: f64) -> Result<AdaptiveConfig> {
        let mut cfg = AdaptiveConfig {
            n_max: self.nmax,
            rho_tol: self.adaptive.rho_tol,
            r_max: self.adaptive.r_max,
            tau1: self.adaptive.tau1,
            tau2: self.adaptive.tau2,
            k_max: self.adaptive.k_max,
            max_steps: self.adaptive.max_steps,
            marking: match self.adaptive.marking.as_str() {
                "above-mean" => Marking::AboveMean,
                "prefix" => Marking::Prefix,
                m => return Err(Error::Config(format!("unknown marking `{m}`"))),
            },
            ..AdaptiveConfig::default()
        };
        cfg.estimator.mode = mode;
        cfg.estimator.rbld = rbld;
        cfg.mesh.rbuf = rbuf;
        cfg.mesh.ra = self.mesh.ra;
        cfg.mesh.beta = self.mesh.beta;
        cfg.mesh.grading = self.mesh.grading;
        cfg.mesh.macro_side = self.mesh.macro_side;
        cfg.mesh.domain_radius = self.radius;
        cfg.solver.force_tolerance = self.adaptive.force_tolerance;
        Ok(cfg)
    }

    /// Sweep entries in a fixed order; `rbld` only varies for blended runs.
    pub fn runs(&self) -> Result<Vec<RunSpec>> {
        let mut modes = self.modes.clone();
        for b in &self.baselines {
            let m = match b {
                Baseline::Original => EstimatorMode::OriginalExact,
                Baseline::Coarsening => EstimatorMode::CoarseningOnly,
                Baseline::Graded => continue,
            };
            if !modes.contains(&m) {
                modes.push(m);
            }
        }
        let mut out = Vec::new();
        for &mode in &modes {
            for &rbuf in &self.rbuf {
                let rblds = if mode == EstimatorMode::BlendedApprox { &self.rbld[..] } else { &self.rbld[..1] };
                for &rbld in rblds {
                    out.push(RunSpec {
                        id: format!("{}-rbuf{rbuf}-rbld{rbld}", mode.as_str()),
                        graded: false,
                        config: self.adaptive_config(mode, rbuf, rbld)?,
                    });
                }
            }
        }
        if self.baselines.contains(&Baseline::Graded) {
            let rbuf = self.rbuf[0];
            out.push(RunSpec {
                id: format!("graded-rbuf{rbuf}"),
                graded: true,
                config: self.adaptive_config(EstimatorMode::OriginalExact, rbuf, self.rbld[0])?,
            });
        }
        Ok(out)
    }
}

/// Fully atomistic reference solution on a domain of the given radius.
pub fn compute_reference(defect: &DefectSpec, radius: i32, solver: &SolveConfig) -> Result<Reference> {
    let lattice = lattice_for(defect, radius)?;
    let kin = Kinematics::from_defect(defect);
    let r = solve_reference(&lattice, &kin, Eam::default(), solver)?;
    if !r.converged {
        return Err(Error::Solver(format!("reference solve stopped after {} iterations", r.iterations)));
    }
    Ok(Reference { lattice, u: r.u })
}

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_reference<W: Write>(mut w: W, defect: &DefectSpec, r: &Reference) -> Result<()> {
    let d = serde_json::to_string(defect).map_err(|e| Error::Io(e.into()))?;
    writeln!(w, "# defect {d}")?;
    writeln!(w, "# radius {}", r.lattice.radius())?;
    writeln!(w, "i,j,u1,u2")?;
    for (p, c) in r.lattice.coords().iter().enumerate() {
        writeln!(w, "{},{},{},{}", c.i, c.j, num(r.u[p].x), num(r.u[p].y))?;
    }
    Ok(())
}

pub fn read_reference(path: &Path) -> Result<(DefectSpec, Reference)> {
    let bad = |m: &str| Error::Config(format!("{}: {m}", path.display()));
    let f = BufReader::new(File::open(path).map_err(|e| bad(&e.to_string()))?);
    let mut defect: Option<DefectSpec> = None;
    let mut radius: Option<i32> = None;
    let mut rows: Vec<(LatticeCoord, Vec2)> = Vec::new();
    for line in f.lines() {
        let line = line?;
        if let Some(d) = line.strip_prefix("# defect ") {
            defect = Some(serde_json::from_str(d).map_err(|e| bad(&e.to_string()))?);
        } else if let Some(r) = line.strip_prefix("# radius ") {
            radius = Some(r.trim().parse().map_err(|_| bad("bad radius"))?);
        } else if line.starts_with('#') || line.starts_with("i,") || line.trim().is_empty() {
            continue;
        } else {
            let v: Vec<&str> = line.split(',').collect();
            if v.len() != 4 {
                return Err(bad("expected four columns"));
            }
            let i = v[0].parse().map_err(|_| bad("bad index"))?;
            let j = v[1].parse().map_err(|_| bad("bad index"))?;
            let x = v[2].parse().map_err(|_| bad("bad value"))?;
            let y = v[3].parse().map_err(|_| bad("bad value"))?;
            rows.push((LatticeCoord::new(i, j), Vec2::new(x, y)));
        }
    }
    let (Some(defect), Some(radius)) = (defect, radius) else { return Err(bad("missing header")) };
    let lattice = lattice_for(&defect, radius)?;
    if rows.len() != lattice.len() {
        return Err(bad("row count does not match the lattice"));
    }
    let mut u = vec![Vec2::zeros(); lattice.len()];
    for (c, v) in rows {
        let p = lattice.index_of(c).ok_or_else(|| bad("site outside the lattice"))?;
        u[p] = v;
    }
    Ok((defect, Reference { lattice, u }))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpokeSample {
    pub direction: usize,
    pub r: f64,
    pub du: f64,
}

/// `|Du(l)|` at sites on the six lattice rays from the origin, skipping
/// vacancies and the outer ring.
pub fn spoke_samples(lat: &Lattice, u: &[Vec2]) -> Vec<SpokeSample> {
    let Some(origin) = lat.index_of(LatticeCoord::new(0, 0)) else { return Vec::new() };
    let mut out = Vec::new();
    for rho in 0..6 {
        let mut p = origin;
        while let Some(q) = lat.neighbor(p, rho) {
            p = q;
            if lat.is_vacant(p) || lat.is_boundary(p) {
                continue;
            }
            let mut s = 0.0;
            for sig in 0..6 {
                if let Some(n) = lat.neighbor(p, sig) {
                    if !lat.is_vacant(n) {
                        s += (u[n] - u[p]).norm_squared();
                    }
                }
            }
            out.push(SpokeSample { direction: rho, r: lat.position(p).norm(), du: s.sqrt() });
        }
    }
    out
}

pub fn write_spokes<W: Write>(mut w: W, samples: &[SpokeSample]) -> Result<()> {
    writeln!(w, "direction,r,du")?;
    for s in samples {
        writeln!(w, "{},{},{}", s.direction, num(s.r), num(s.du))?;
    }
    Ok(())
}

/// Log-log slope of spoke samples with `r` in `[r_min, r_max]`.
pub fn decay_slope(samples: &[SpokeSample], r_min: f64, r_max: f64) -> Option<f64> {
    let (r, d): (Vec<f64>, Vec<f64>) =
        samples.iter().filter(|s| s.r >= r_min && s.r <= r_max && s.du > 0.0).map(|s| (s.r, s.du)).unzip();
    crate::stats::loglog_slope(&r, &d)
}

/// A priori graded meshes with growing atomistic radius, each solved from
/// scratch; stops past `n_max` dofs or when the region nears the boundary.
pub fn graded_sequence(cfg: &AdaptiveConfig, defect: &DefectSpec, reference: Option<&Reference>) -> Result<Vec<AdaptiveStep>> {
    cfg.validate()?;
    let kin = Kinematics::from_defect(defect);
    let eam = Eam::new(cfg.eam);
    let lat = lattice_for(defect, cfg.mesh.domain_radius)?;
    let mut steps = Vec::new();
    let mut ra = cfg.mesh.ra as f64;
    for step in 0..cfg.max_steps {
        let mut mesh_cfg = cfg.mesh.clone();
        mesh_cfg.ra = ra.round() as i32;
        if mesh_cfg.ra + mesh_cfg.rbuf + 4 > cfg.mesh.domain_radius / 2 {
            break;
        }
        let mesh = CoarseMesh::initialize(&lat, &mesh_cfg)?;
        let ev = evaluate(cfg, &lat, &mesh, &kin, &eam, vec![Vec2::zeros(); mesh.num_nodes()], reference, None, step)?;
        let mut row = ev.row;
        let failed = ev.report.is_none();
        let done = failed || row.n > cfg.n_max;
        if !failed {
            row.action = if done { Action::Stopped(StopReason::MaxDofs) } else { Action::Refined(0) };
        }
        steps.push(row);
        if done {
            break;
        }
        ra *= 1.5;
    }
    Ok(steps)
}

pub const SUMMARY_HEADER: &str = "run_id,mode,R_buf,R_bld,step,N,error,rho,eta_tr,eta_mo,eta_cg,t_solve,t_estimate";

pub fn write_summary_rows<W: Write>(mut w: W, id: &str, mode: &str, cfg: &AdaptiveConfig, steps: &[AdaptiveStep]) -> Result<()> {
    for s in steps {
        writeln!(
            w,
            "{id},{mode},{},{},{},{},{},{},{},{},{},{},{}",
            cfg.mesh.rbuf,
            num(cfg.estimator.rbld),
            s.step,
            s.n,
            s.error.map(num).unwrap_or_default(),
            num(s.rho),
            num(s.eta_tr),
            num(s.eta_mo),
            num(s.eta_cg),
            num(s.solve_seconds),
            num(s.estimate_seconds + s.truncation_seconds),
        )?;
    }
    Ok(())
}

/// Outcome of a whole sweep; `failed` names runs that ended in a solver failure.
#[derive(Debug, Default)]
pub struct SweepOutcome {
    pub runs: Vec<(RunSpec, Vec<AdaptiveStep>)>,
    pub failed: Vec<String>,
}

/// Runs every sweep entry, writing per-run directories and `summary.csv`
/// under the output directory.
pub fn run_sweep(exp: &ExperimentConfig) -> Result<SweepOutcome> {
    exp.validate()?;
    let defect = exp.defect();
    std::fs::create_dir_all(&exp.out)?;
    let reference = if exp.no_error {
        None
    } else if let Some(path) = &exp.reference {
        let (d, r) = read_reference(path)?;
        if d != defect {
            return Err(Error::Config(format!("{} holds a different defect", path.display())));
        }
        Some(r)
    } else {
        Some(compute_reference(&defect, exp.radius, &SolveConfig::default())?)
    };
    let mut summary = BufWriter::new(File::create(exp.out.join("summary.csv"))?);
    writeln!(summary, "{SUMMARY_HEADER}")?;
    let mut outcome = SweepOutcome::default();
    for spec in exp.runs()? {
        let dir = exp.out.join(&spec.id);
        let steps = if spec.graded {
            std::fs::create_dir_all(&dir)?;
            let steps = graded_sequence(&spec.config, &defect, reference.as_ref())?;
            let manifest = crate::adaptive::Manifest { config: &spec.config, defect: &defect, steps: &steps };
            serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("manifest.json"))?), &manifest)
                .map_err(|e| Error::Io(e.into()))?;
            steps
        } else {
            let outputs = Outputs { dir: Some(dir), snapshots: exp.snapshots };
            run(&spec.config, &defect, reference.as_ref(), &outputs)?
        };
        let mode = if spec.graded { "graded" } else { spec.config.estimator.mode.as_str() };
        write_summary_rows(&mut summary, &spec.id, mode, &spec.config, &steps)?;
        if steps.last().is_some_and(|s| s.action == Action::Stopped(StopReason::SolverFailed)) {
            outcome.failed.push(spec.id.clone());
        }
        outcome.runs.push((spec, steps));
    }
    summary.flush()?;
    Ok(outcome)
}

/// Per-run figures derived from a manifest.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub id: String,
    pub steps: usize,
    pub final_n: usize,
    pub final_error: Option<f64>,
    pub error_slope: Option<f64>,
    pub estimate_slope: Option<f64>,
    /// Smallest and largest `rho / error` over the final five steps.
    pub efficiency: Option<(f64, f64)>,
    pub merges: usize,
    pub expansions: usize,
}

pub fn summarize(id: &str, steps: &[AdaptiveStep]) -> RunReport {
    let with_error: Vec<&AdaptiveStep> = steps.iter().filter(|s| s.error.is_some_and(|e| e > 0.0)).collect();
    let n: Vec<f64> = with_error.iter().map(|s| s.n as f64).collect();
    let e: Vec<f64> = with_error.iter().map(|s| s.error.unwrap()).collect();
    let tn: Vec<f64> = steps.iter().filter(|s| s.estimate_seconds > 0.0).map(|s| s.n as f64).collect();
    let t: Vec<f64> = steps.iter().filter(|s| s.estimate_seconds > 0.0).map(|s| s.estimate_seconds).collect();
    let tail = &with_error[with_error.len().saturating_sub(5)..];
    let eff: Vec<f64> = tail.iter().map(|s| s.rho / s.error.unwrap()).collect();
    let efficiency = (!eff.is_empty())
        .then(|| (eff.iter().copied().fold(f64::INFINITY, f64::min), eff.iter().copied().fold(0.0, f64::max)));
    let mut merges = 0;
    let mut expansions = 0;
    for s in steps {
        if let Action::InterfaceExpanded { merges: m, .. } = s.action {
            expansions += 1;
            merges += m;
        }
    }
    RunReport {
        id: id.to_string(),
        steps: steps.len(),
        final_n: steps.last().map_or(0, |s| s.n),
        final_error: steps.iter().rev().find_map(|s| s.error),
        error_slope: crate::stats::loglog_slope(&n, &e),
        estimate_slope: crate::stats::loglog_slope(&tn, &t),
        efficiency,
        merges,
        expansions,
    }
}

#[derive(Deserialize)]
struct ManifestSteps {
    steps: Vec<AdaptiveStep>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<AdaptiveStep>> {
    let f = BufReader::new(File::open(path)?);
    let m: ManifestSteps = serde_json::from_reader(f).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(m.steps)
}

/// Reports for every `*/manifest.json` below `dir`, sorted by run id.
pub fn report_dir(dir: &Path) -> Result<Vec<RunReport>> {
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        let m = p.join("manifest.json");
        if m.is_file() {
            let id = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            out.push(summarize(&id, &read_manifest(&m)?));
        }
    }
    Ok(out)
}

pub fn write_report<W: Write>(mut w: W, reports: &[RunReport]) -> Result<()> {
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    writeln!(w, "run_id,steps,N_final,error_final,error_slope,estimate_time_slope,efficiency_min,efficiency_max,expansions,merges")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.id,
            r.steps,
            r.final_n,
            opt(r.final_error),
            opt(r.error_slope),
            opt(r.estimate_slope),
            opt(r.efficiency.map(|e| e.0)),
            opt(r.efficiency.map(|e| e.1)),
            r.expansions,
            r.merges
        )?;
    }
    Ok(())
}
