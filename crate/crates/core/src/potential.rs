use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Mat2, Vec2};

pub type Vec3 = Vector3<f64>;

/// Bond vectors of a site, indexed by direction; `None` for absent bonds.
pub type Stencil = [Option<Vec3>; 6];

/// Derivatives of the site energy with respect to each bond vector.
pub type BondGradient = [Option<Vec3>; 6];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EamParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rho0: f64,
}

impl Default for EamParams {
    fn default() -> Self {
        let b = 3.0;
        EamParams { a: 4.0, b, c: 10.0, rho0: 6.0 * (-0.9 * b).exp() }
    }
}

/// How bond vectors are built from deformations and projected back.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BondMode {
    /// `r = D y` in the plane.
    InPlane,
    /// `r = (a, D u3)`: reference geometry frozen, only the out-of-plane
    /// component moves.
    AntiPlane,
}

impl BondMode {
    pub fn arity(self) -> usize {
        match self {
            BondMode::InPlane => 2,
            BondMode::AntiPlane => 1,
        }
    }

    /// Component of a bond derivative conjugate to the displacement unknowns.
    pub fn project(self, g: Vec3) -> Vec2 {
        match self {
            BondMode::InPlane => Vec2::new(g.x, g.y),
            BondMode::AntiPlane => Vec2::new(g.z, 0.0),
        }
    }

    /// Bond vector of the homogeneous deformation `F` along `a`. In the
    /// anti-plane case only the first row of `F` (the gradient of `u3`) is used.
    pub fn bond(self, f: &Mat2, a: Vec2) -> Vec3 {
        match self {
            BondMode::InPlane => {
                let r = f * a;
                Vec3::new(r.x, r.y, 0.0)
            }
            BondMode::AntiPlane => Vec3::new(a.x, a.y, f[(0, 0)] * a.x + f[(0, 1)] * a.y),
        }
    }

    /// Deformation gradient of the undeformed state.
    pub fn reference_gradient(self) -> Mat2 {
        match self {
            BondMode::InPlane => Mat2::identity(),
            BondMode::AntiPlane => Mat2::zeros(),
        }
    }
}

/// Nearest-neighbour embedded atom potential with Morse pair term,
/// exponential density and quartic embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Eam {
    pub params: EamParams,
}

impl Eam {
    pub fn new(params: EamParams) -> Self {
        Eam { params }
    }

    pub fn pair(&self, r: f64) -> (f64, f64) {
        let a = self.params.a;
        let e = (-a * (r - 1.0)).exp();
        (e * e - 2.0 * e, -2.0 * a * e * e + 2.0 * a * e)
    }

    pub fn density(&self, r: f64) -> (f64, f64) {
        let b = self.params.b;
        let e = (-b * r).exp();
        (e, -b * e)
    }

    pub fn embed(&self, t: f64) -> (f64, f64) {
        let d = t - self.params.rho0;
        let c = self.params.c;
        (c * (d * d + d.powi(4)), c * (2.0 * d + 4.0 * d.powi(3)))
    }

    fn length(r: &Vec3) -> Result<f64> {
        let n = r.norm();
        if n > 0.0 && n.is_finite() {
            Ok(n)
        } else {
            Err(Error::Domain(format!("bond of length {n}")))
        }
    }

    /// Unnormalised site energy.
    pub fn raw_energy(&self, s: &Stencil) -> Result<f64> {
        let mut pair = 0.0;
        let mut rho = 0.0;
        for r in s.iter().flatten() {
            let n = Self::length(r)?;
            pair += self.pair(n).0;
            rho += self.density(n).0;
        }
        Ok(pair + self.embed(rho).0)
    }

    /// Unnormalised site energy and its bond derivatives; absent bonds get zero.
    pub fn raw_energy_gradient(&self, s: &Stencil, g: &mut [Vec3; 6]) -> Result<f64> {
        let mut lens = [0.0; 6];
        let mut pair = 0.0;
        let mut rho = 0.0;
        for (k, r) in s.iter().enumerate() {
            if let Some(r) = r {
                let n = Self::length(r)?;
                lens[k] = n;
                pair += self.pair(n).0;
                rho += self.density(n).0;
            }
        }
        let (f, df) = self.embed(rho);
        for (k, r) in s.iter().enumerate() {
            g[k] = match r {
                Some(r) => {
                    let n = lens[k];
                    (self.pair(n).1 + df * self.density(n).1) / n * r
                }
                None => Vec3::zeros(),
            };
        }
        Ok(pair + f)
    }

    /// Site energy relative to the same bond set at the reference stencil.
    pub fn site_energy(&self, s: &Stencil, reference: &Stencil) -> Result<f64> {
        Ok(self.raw_energy(s)? - self.raw_energy(reference)?)
    }

    pub fn site_gradient(&self, s: &Stencil) -> Result<BondGradient> {
        let mut g = [Vec3::zeros(); 6];
        self.raw_energy_gradient(s, &mut g)?;
        Ok(std::array::from_fn(|k| s[k].map(|_| g[k])))
    }
}

/// Cauchy-Born density `W(F) = (V(F R) - V(R)) / det A` for one bond mode.
#[derive(Clone, Debug)]
pub struct CauchyBorn {
    pub eam: Eam,
    pub mode: BondMode,
    vectors: [Vec2; 6],
    det_a: f64,
    reference: f64,
}

impl CauchyBorn {
    pub fn new(eam: Eam, mode: BondMode, vectors: [Vec2; 6], det_a: f64) -> Self {
        let r: Stencil = std::array::from_fn(|k| Some(mode.bond(&mode.reference_gradient(), vectors[k])));
        let reference = eam.raw_energy(&r).expect("reference stencil is regular");
        CauchyBorn { eam, mode, vectors, det_a, reference }
    }

    pub fn vectors(&self) -> &[Vec2; 6] {
        &self.vectors
    }

    pub fn det_a(&self) -> f64 {
        self.det_a
    }

    /// Unnormalised homogeneous site energy `V(R)`.
    pub fn reference_energy(&self) -> f64 {
        self.reference
    }

    pub fn stencil(&self, f: &Mat2) -> Result<Stencil> {
        if self.mode == BondMode::InPlane && f.determinant().abs() < 1e-14 {
            return Err(Error::Domain("singular deformation gradient".into()));
        }
        Ok(std::array::from_fn(|k| Some(self.mode.bond(f, self.vectors[k]))))
    }

    pub fn energy(&self, f: &Mat2) -> Result<f64> {
        Ok((self.eam.raw_energy(&self.stencil(f)?)? - self.reference) / self.det_a)
    }

    /// `(W(F), dW(F))` with `dW = (1/det A) sum_rho P(dV_rho) (x) a_rho`.
    pub fn energy_stress(&self, f: &Mat2) -> Result<(f64, Mat2)> {
        let s = self.stencil(f)?;
        let mut g = [Vec3::zeros(); 6];
        let v = self.eam.raw_energy_gradient(&s, &mut g)?;
        let mut sigma = Mat2::zeros();
        for k in 0..6 {
            sigma += self.mode.project(g[k]) * self.vectors[k].transpose();
        }
        Ok(((v - self.reference) / self.det_a, sigma / self.det_a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::triangular_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vectors() -> [Vec2; 6] {
        let a = triangular_matrix();
        std::array::from_fn(|k| {
            let d = crate::lattice::DIRECTIONS[k];
            a * Vec2::new(d.i as f64, d.j as f64)
        })
    }

    fn reference() -> Stencil {
        let v = vectors();
        std::array::from_fn(|k| Some(Vec3::new(v[k].x, v[k].y, 0.0)))
    }

    fn random_stencil(rng: &mut ChaCha8Rng) -> Stencil {
        let v = vectors();
        std::array::from_fn(|k| {
            Some(Vec3::new(
                v[k].x + rng.random_range(-0.1..0.1),
                v[k].y + rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            ))
        })
    }

    #[test]
    fn reference_stencil_has_zero_energy() {
        let eam = Eam::default();
        assert_eq!(eam.site_energy(&reference(), &reference()).unwrap(), 0.0);
    }

    #[test]
    fn single_stretched_bond_closed_form() {
        let eam = Eam::default();
        let mut s = reference();
        let r = 1.07;
        s[0] = Some(Vec3::new(r, 0.0, 0.0));
        let p = |x: f64| (-2.0 * 4.0 * (x - 1.0)).exp() - 2.0 * (-4.0 * (x - 1.0)).exp();
        let psi = |x: f64| (-3.0 * x).exp();
        let rho0 = 6.0 * (-2.7f64).exp();
        let f = |t: f64| 10.0 * ((t - rho0).powi(2) + (t - rho0).powi(4));
        let expected = p(r) - p(1.0) + f(psi(r) + 5.0 * psi(1.0)) - f(6.0 * psi(1.0));
        let got = eam.site_energy(&s, &reference()).unwrap();
        assert!((got - expected).abs() < 1e-13, "{got} vs {expected}");
    }

    #[test]
    fn point_symmetry() {
        let eam = Eam::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s = random_stencil(&mut rng);
            let t: Stencil = std::array::from_fn(|k| s[(k + 3) % 6].map(|r| -r));
            assert!((eam.raw_energy(&s).unwrap() - eam.raw_energy(&t).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let eam = Eam::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-6;
        for _ in 0..100 {
            let mut s = random_stencil(&mut rng);
            if rng.random_bool(0.3) {
                s[rng.random_range(0..6)] = None;
            }
            let g = eam.site_gradient(&s).unwrap();
            for k in 0..6 {
                let Some(gk) = g[k] else { continue };
                for c in 0..3 {
                    let mut sp = s;
                    let mut sm = s;
                    sp[k].as_mut().unwrap()[c] += h;
                    sm[k].as_mut().unwrap()[c] -= h;
                    let fd = (eam.raw_energy(&sp).unwrap() - eam.raw_energy(&sm).unwrap()) / (2.0 * h);
                    assert!((gk[c] - fd).abs() / (1.0 + fd.abs()) < 1e-6, "{} vs {fd}", gk[c]);
                }
            }
        }
    }

    #[test]
    fn gradient_is_rotation_covariant() {
        let eam = Eam::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_stencil(&mut rng);
        let q = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), 0.7);
        let t: Stencil = std::array::from_fn(|k| s[k].map(|r| q * r));
        let gs = eam.site_gradient(&s).unwrap();
        let gt = eam.site_gradient(&t).unwrap();
        for k in 0..6 {
            assert!((q * gs[k].unwrap() - gt[k].unwrap()).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_bond_is_a_domain_error() {
        let mut s = reference();
        s[2] = Some(Vec3::zeros());
        assert!(Eam::default().raw_energy(&s).is_err());
    }

    #[test]
    fn lattice_is_stable_under_stretch() {
        let eam = Eam::default();
        let cb = CauchyBorn::new(eam, BondMode::InPlane, vectors(), triangular_matrix().determinant());
        let w = |t: f64| cb.energy(&(Mat2::identity() * (1.0 + t))).unwrap();
        let h = 1e-3;
        assert!((w(h) + w(-h) - 2.0 * w(0.0)) / (h * h) > 0.0);
    }

    #[test]
    fn cauchy_born_normalisation_and_fd() {
        let eam = Eam::default();
        for mode in [BondMode::InPlane, BondMode::AntiPlane] {
            let cb = CauchyBorn::new(eam, mode, vectors(), triangular_matrix().determinant());
            assert_eq!(cb.energy(&mode.reference_gradient()).unwrap(), 0.0);
            let f = mode.reference_gradient() + Mat2::new(0.01, 0.03, -0.02, 0.015);
            let (_, dw) = cb.energy_stress(&f).unwrap();
            let h = 1e-6;
            for r in 0..mode.arity() {
                for c in 0..2 {
                    let mut fp = f;
                    let mut fm = f;
                    fp[(r, c)] += h;
                    fm[(r, c)] -= h;
                    let fd = (cb.energy(&fp).unwrap() - cb.energy(&fm).unwrap()) / (2.0 * h);
                    assert!((dw[(r, c)] - fd).abs() <= 1e-7 * (1.0 + fd.abs()), "{} vs {fd}", dw[(r, c)]);
                }
            }
        }
    }

    #[test]
    fn cauchy_born_matches_site_energy_of_uniform_stencil() {
        let eam = Eam::default();
        let det = triangular_matrix().determinant();
        let cb = CauchyBorn::new(eam, BondMode::InPlane, vectors(), det);
        let f = Mat2::new(1.02, 0.01, -0.03, 0.99);
        let v = vectors();
        let s: Stencil = std::array::from_fn(|k| {
            let r = f * v[k];
            Some(Vec3::new(r.x, r.y, 0.0))
        });
        let via_site = eam.site_energy(&s, &reference()).unwrap() / det;
        assert!((cb.energy(&f).unwrap() - via_site).abs() < 1e-12);
    }

    #[test]
    fn anti_plane_gradient_is_scalar() {
        let eam = Eam::default();
        let v = vectors();
        let s: Stencil = std::array::from_fn(|k| Some(Vec3::new(v[k].x, v[k].y, 0.05 * k as f64 - 0.1)));
        let g = eam.site_gradient(&s).unwrap();
        let h = 1e-6;
        for k in 0..6 {
            let p = BondMode::AntiPlane.project(g[k].unwrap());
            assert_eq!(p.y, 0.0);
            let mut sp = s;
            let mut sm = s;
            sp[k].as_mut().unwrap().z += h;
            sm[k].as_mut().unwrap().z -= h;
            let fd = (eam.raw_energy(&sp).unwrap() - eam.raw_energy(&sm).unwrap()) / (2.0 * h);
            assert!((p.x - fd).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }
}
