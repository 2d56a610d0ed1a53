use std::time::Instant;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::atomistic::AtomisticProblem;
use crate::coupling::AcProblem;
use crate::error::{Error, Result};
use crate::kinematics::Kinematics;
use crate::lattice::{Lattice, Vec2};
use crate::potential::Eam;
use crate::sparse::{p1_laplacian, Cholesky};

/// Energy functional over nodal corrector values.
pub trait Objective {
    fn free(&self) -> &[bool];
    fn arity(&self) -> usize;
    fn energy(&self, u: &[Vec2]) -> Result<f64>;
    fn energy_gradient(&self, u: &[Vec2], g: &mut [Vec2]) -> Result<f64>;
    /// Factorised scalar Laplacian on the free nodes and the node-to-row map.
    fn preconditioner(&self) -> Result<(Cholesky, Vec<usize>)>;
}

impl Objective for AcProblem<'_> {
    fn free(&self) -> &[bool] {
        AcProblem::free(self)
    }
    fn arity(&self) -> usize {
        self.kin.arity()
    }
    fn energy(&self, u: &[Vec2]) -> Result<f64> {
        AcProblem::energy(self, u)
    }
    fn energy_gradient(&self, u: &[Vec2], g: &mut [Vec2]) -> Result<f64> {
        AcProblem::energy_gradient(self, u, g)
    }
    fn preconditioner(&self) -> Result<(Cholesky, Vec<usize>)> {
        let tris = self.mesh.elements().iter().map(|e| &e.nodes);
        let (a, map) = p1_laplacian(self.mesh.nodes(), tris, AcProblem::free(self), 1e-8);
        let coords: Vec<Vec2> =
            (0..self.mesh.num_nodes()).filter(|&n| AcProblem::free(self)[n]).map(|n| self.mesh.node(n)).collect();
        Ok((Cholesky::factor(&a, &coords)?, map))
    }
}

impl Objective for AtomisticProblem<'_> {
    fn free(&self) -> &[bool] {
        AtomisticProblem::free(self)
    }
    fn arity(&self) -> usize {
        self.kin.arity()
    }
    fn energy(&self, u: &[Vec2]) -> Result<f64> {
        AtomisticProblem::energy(self, u)
    }
    fn energy_gradient(&self, u: &[Vec2], g: &mut [Vec2]) -> Result<f64> {
        AtomisticProblem::energy_gradient(self, u, g)
    }
    fn preconditioner(&self) -> Result<(Cholesky, Vec<usize>)> {
        AtomisticProblem::preconditioner(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Max-norm of the free forces at convergence.
    pub force_tolerance: f64,
    pub max_iterations: usize,
    /// Sufficient decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub precondition: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { force_tolerance: 1e-8, max_iterations: 20000, c1: 1e-4, c2: 0.4, precondition: true }
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub u: Vec<Vec2>,
    pub iterations: usize,
    pub force_norm: f64,
    pub converged: bool,
    pub initial_energy: f64,
    pub energy: f64,
    pub seconds: f64,
}

fn dot(a: &[Vec2], b: &[Vec2]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn max_norm(g: &[Vec2]) -> f64 {
    g.iter().map(|v| v.amax()).fold(0.0, f64::max)
}

struct Precond {
    chol: Option<(Cholesky, Vec<usize>)>,
    arity: usize,
}

impl Precond {
    fn apply(&self, g: &[Vec2]) -> Vec<Vec2> {
        let Some((chol, map)) = &self.chol else { return g.to_vec() };
        let rows = map.iter().filter(|&&r| r != usize::MAX).count();
        let mut z = vec![Vec2::zeros(); g.len()];
        for c in 0..self.arity {
            let mut b = vec![0.0; rows];
            for (n, &r) in map.iter().enumerate() {
                if r != usize::MAX {
                    b[r] = g[n][c];
                }
            }
            chol.solve(&mut b);
            for (n, &r) in map.iter().enumerate() {
                if r != usize::MAX {
                    z[n][c] = b[r];
                }
            }
        }
        z
    }
}

/// Preconditioned Polak-Ribiere nonlinear conjugate gradients with a
/// bracketing line search on the directional derivative.
pub fn minimize<O: Objective>(obj: &O, initial: Vec<Vec2>, cfg: &SolveConfig) -> Result<SolveResult> {
    if !(cfg.force_tolerance > 0.0) {
        return Err(Error::Config("force tolerance must be positive".into()));
    }
    let start = Instant::now();
    let free = obj.free().to_vec();
    let mut u = initial;
    let mut g = vec![Vec2::zeros(); u.len()];
    let e0 = obj.energy_gradient(&u, &mut g)?;
    let mut e = e0;
    let pre = Precond { chol: if cfg.precondition { Some(obj.preconditioner()?) } else { None }, arity: obj.arity() };
    let mut z = pre.apply(&g);
    let mut d: Vec<Vec2> = z.iter().map(|v| -v).collect();
    let mut alpha = 1.0;
    let mut it = 0;
    let mut trial = u.clone();
    let mut gt = g.clone();
    while max_norm(&g) > cfg.force_tolerance && it < cfg.max_iterations {
        it += 1;
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d = z.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let tol_e = 1e-13 * (e.abs() + 1.0);
        let eval = |a: f64, trial: &mut Vec<Vec2>, gt: &mut Vec<Vec2>| -> Option<(f64, f64)> {
            for n in 0..u.len() {
                trial[n] = if free[n] { u[n] + a * d[n] } else { u[n] };
            }
            match obj.energy_gradient(trial, gt) {
                Ok(v) if v.is_finite() => Some((v, dot(gt, &d))),
                _ => None,
            }
        };
        // below the energy noise floor the decrease test is replaced by a bound on
        // the directional derivative, as in approximate Wolfe searches
        let noise = 1e-10 * (e.abs() + 1.0);
        let armijo = |a: f64, v: f64, dv: f64| {
            v <= e + cfg.c1 * a * slope + tol_e || (v <= e + noise && dv <= (1.0 - 2.0 * cfg.c1) * slope.abs())
        };
        let (mut lo, mut dlo) = (0.0, slope);
        let mut hi: Option<(f64, f64)> = None;
        let mut a = alpha;
        let mut accepted = None;
        for _ in 0..60 {
            match eval(a, &mut trial, &mut gt) {
                Some((v, dv)) if armijo(a, v, dv) => {
                    if dv.abs() <= cfg.c2 * slope.abs() {
                        accepted = Some((a, v));
                        break;
                    }
                    if dv > 0.0 {
                        hi = Some((a, dv));
                    } else {
                        lo = a;
                        dlo = dv;
                    }
                }
                _ => hi = Some((a, f64::NAN)),
            }
            a = match hi {
                None => 2.0 * a,
                Some((ah, dh)) => {
                    let secant = if dh.is_finite() && dh > dlo { lo - dlo * (ah - lo) / (dh - dlo) } else { f64::NAN };
                    let (l, r) = (lo + 0.1 * (ah - lo), ah - 0.1 * (ah - lo));
                    if secant.is_finite() && secant > l && secant < r {
                        secant
                    } else {
                        0.5 * (lo + ah)
                    }
                }
            };
        }
        let Some((a_acc, v)) = accepted.or_else(|| {
            // fall back to the best sufficient-decrease point found
            (lo > 0.0).then(|| {
                let (v, _) = eval(lo, &mut trial, &mut gt).expect("previously evaluated");
                (lo, v)
            })
        }) else {
            if d.iter().zip(&z).any(|(x, y)| (x + y).norm() > 0.0) {
                d = z.iter().map(|v| -v).collect();
                continue;
            }
            debug!("line search failed at iteration {it}, force {}", max_norm(&g));
            break;
        };
        std::mem::swap(&mut u, &mut trial);
        std::mem::swap(&mut g, &mut gt);
        e = v;
        alpha = a_acc;
        let z_new = pre.apply(&g);
        let gz_old = dot(&gt, &z);
        let num = dot(&g, &z_new) - dot(&g, &z);
        let beta = if gz_old.abs() > 0.0 { (num / gz_old).max(0.0) } else { 0.0 };
        for n in 0..d.len() {
            d[n] = -z_new[n] + beta * d[n];
        }
        z = z_new;
    }
    let force_norm = max_norm(&g);
    Ok(SolveResult {
        u,
        iterations: it,
        force_norm,
        converged: force_norm <= cfg.force_tolerance,
        initial_energy: e0,
        energy: e,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Fully atomistic equilibrium on the whole lattice, starting from the
/// predictor.
pub fn solve_reference(lat: &Lattice, kin: &Kinematics, eam: Eam, cfg: &SolveConfig) -> Result<SolveResult> {
    let p = AtomisticProblem::new(lat, kin, eam)?;
    minimize(&p, vec![Vec2::zeros(); lat.len()], cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{DefectSpec, LatticeSpec};

    #[test]
    fn relaxes_small_crack() {
        let d = DefectSpec::micro_crack(5, 0.03, 0.03);
        let lat = Lattice::new(LatticeSpec::triangular(12.0, d.clone())).unwrap();
        let kin = Kinematics::from_defect(&d);
        let p = AtomisticProblem::new(&lat, &kin, Eam::default()).unwrap();
        let r = minimize(&p, vec![Vec2::zeros(); lat.len()], &SolveConfig::default()).unwrap();
        assert!(r.converged, "force {}", r.force_norm);
        assert!(r.energy < r.initial_energy);
        let again = minimize(&p, r.u.clone(), &SolveConfig::default()).unwrap();
        assert!(again.iterations <= 1);
        let diff = again.u.iter().zip(&r.u).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        assert!(diff <= 1e-8);
    }

    #[test]
    fn defect_free_is_at_equilibrium() {
        let d = DefectSpec::none();
        let lat = Lattice::new(LatticeSpec::triangular(8.0, d.clone())).unwrap();
        let kin = Kinematics::from_defect(&d);
        let p = AtomisticProblem::new(&lat, &kin, Eam::default()).unwrap();
        let r = minimize(&p, vec![Vec2::zeros(); lat.len()], &SolveConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
    }
}
