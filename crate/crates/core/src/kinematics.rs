use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::p1_gradients;
use crate::lattice::{DefectKind, DefectSpec, Mat2, Vec2};
use crate::potential::{BondMode, Vec3};
use crate::predictor::ScrewConfig;

/// Maps a corrector `u` to bond vectors: `y = B x + u` in the plane, or
/// `u3 = u0 + u` out of plane with the screw predictor `u0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Kinematics {
    InPlane { strain: Mat2 },
    AntiPlane { screw: ScrewConfig },
}

impl Kinematics {
    pub fn from_defect(d: &DefectSpec) -> Self {
        match d.kind {
            DefectKind::ScrewDislocation { burgers, core } => {
                Kinematics::AntiPlane { screw: ScrewConfig::new(burgers, Vec2::new(core[0], core[1])) }
            }
            _ => Kinematics::InPlane { strain: d.applied_strain },
        }
    }

    pub fn mode(&self) -> BondMode {
        match self {
            Kinematics::InPlane { .. } => BondMode::InPlane,
            Kinematics::AntiPlane { .. } => BondMode::AntiPlane,
        }
    }

    pub fn arity(&self) -> usize {
        self.mode().arity()
    }

    /// Predictor value at a lattice point (zero in the plane).
    pub fn offset(&self, x: Vec2) -> Result<f64> {
        match self {
            Kinematics::InPlane { .. } => Ok(0.0),
            Kinematics::AntiPlane { screw } => screw.value(x),
        }
    }

    pub fn offsets(&self, xs: &[Vec2]) -> Result<Vec<f64>> {
        xs.iter().map(|&x| self.offset(x)).collect()
    }

    /// Bond vector along `a` from a point with predictor value `from` to one
    /// with `to`, for corrector difference `du`.
    #[inline]
    pub fn bond(&self, a: Vec2, from: f64, to: f64, du: Vec2) -> Vec3 {
        match self {
            Kinematics::InPlane { strain } => {
                let r = strain * a + du;
                Vec3::new(r.x, r.y, 0.0)
            }
            Kinematics::AntiPlane { screw } => Vec3::new(a.x, a.y, screw.wrap(to - from) + du.x),
        }
    }

    /// Reference bond used for site energy normalisation (corrector zero).
    pub fn reference_bond(&self, a: Vec2, from: f64, to: f64) -> Vec3 {
        match self {
            Kinematics::InPlane { .. } => Vec3::new(a.x, a.y, 0.0),
            Kinematics::AntiPlane { screw } => Vec3::new(a.x, a.y, screw.wrap(to - from)),
        }
    }

    /// Gradient of the far-field map on a triangle: `B` in the plane, the P1
    /// gradient of the locally unwrapped predictor out of plane.
    pub fn base_gradient(&self, p: &[Vec2; 3], off: &[f64; 3]) -> Result<Mat2> {
        match self {
            Kinematics::InPlane { strain } => Ok(*strain),
            Kinematics::AntiPlane { screw } => {
                let (g, _) = p1_gradients(p).ok_or_else(|| Error::Domain("degenerate element".into()))?;
                let v1 = off[0] + screw.wrap(off[1] - off[0]);
                let v2 = off[0] + screw.wrap(off[2] - off[0]);
                let d = g[0] * off[0] + g[1] * v1 + g[2] * v2;
                Ok(Mat2::new(d.x, d.y, 0.0, 0.0))
            }
        }
    }

    /// Predictor value at `x`, unwrapped to lie within half a Burgers vector
    /// of the anchor value `near`.
    pub fn offset_near(&self, x: Vec2, near: f64) -> Result<f64> {
        match self {
            Kinematics::InPlane { .. } => Ok(0.0),
            Kinematics::AntiPlane { screw } => Ok(near + screw.wrap(screw.value(x)? - near)),
        }
    }
}
