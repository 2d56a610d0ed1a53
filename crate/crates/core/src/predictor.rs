use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Vec2;
use crate::stats::loglog_slope;

/// Anti-plane screw dislocation far field with a branch cut along the
/// horizontal ray from the core towards `+x1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScrewConfig {
    pub burgers: f64,
    pub core: Vec2,
}

impl ScrewConfig {
    pub fn new(burgers: f64, core: Vec2) -> Self {
        ScrewConfig { burgers, core }
    }

    /// `u0(x) = b/(2 pi) arg(x - core)` with `arg` in `[0, 2 pi)`.
    pub fn value(&self, x: Vec2) -> Result<f64> {
        let d = x - self.core;
        if d.norm() == 0.0 {
            return Err(Error::Domain("predictor evaluated at the dislocation core".into()));
        }
        let mut t = d.y.atan2(d.x);
        if t < 0.0 {
            t += 2.0 * PI;
        }
        Ok(self.burgers / (2.0 * PI) * t)
    }

    pub fn gradient(&self, x: Vec2) -> Result<Vec2> {
        let d = x - self.core;
        let r2 = d.norm_squared();
        if r2 == 0.0 {
            return Err(Error::Domain("predictor evaluated at the dislocation core".into()));
        }
        Ok(self.burgers / (2.0 * PI) * Vec2::new(-d.y, d.x) / r2)
    }

    /// Reduces a difference of predictor values to `(-b/2, b/2]`, removing
    /// the jump across the cut.
    pub fn wrap(&self, d: f64) -> f64 {
        let b = self.burgers;
        d - b * (d / b).round()
    }
}

pub fn screw_predictor(x: Vec2, cfg: &ScrewConfig) -> Result<f64> {
    cfg.value(x)
}

/// Log-log slope of the ring-averaged `|grad u0|` against the ring radius.
pub fn predictor_gradient_decay_check(cfg: &ScrewConfig, radii: &[f64]) -> Result<f64> {
    let mut ys = Vec::with_capacity(radii.len());
    for &r in radii {
        let n = 64;
        let mut s = 0.0;
        for k in 0..n {
            let t = 2.0 * PI * (k as f64 + 0.5) / n as f64;
            s += cfg.gradient(cfg.core + r * Vec2::new(t.cos(), t.sin()))?.norm();
        }
        ys.push(s / n as f64);
    }
    loglog_slope(radii, &ys).ok_or_else(|| Error::Config("need at least two distinct radii".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ScrewConfig {
        ScrewConfig::new(1.0, Vec2::new(0.5, 0.5 / 3f64.sqrt()))
    }

    #[test]
    fn jump_across_cut_equals_burgers() {
        let c = cfg();
        for k in 0..20 {
            let x = c.core.x + 0.5 + k as f64;
            let above = c.value(Vec2::new(x, c.core.y + 1e-9)).unwrap();
            let below = c.value(Vec2::new(x, c.core.y - 1e-9)).unwrap();
            assert!((below - above - c.burgers).abs() < 1e-8);
        }
    }

    #[test]
    fn negative_ray_gives_half_burgers() {
        let c = cfg();
        assert!((c.value(c.core - Vec2::new(3.0, 0.0)).unwrap() - 0.5).abs() < 1e-15);
        assert!(c.value(c.core).is_err());
    }

    #[test]
    fn discrete_laplacian_vanishes_off_the_cut() {
        let c = cfg();
        let h = 1e-3;
        for &(x, y) in &[(-3.0, 2.0), (4.0, 5.0), (-6.0, -1.0), (2.0, -7.0)] {
            let p = Vec2::new(x, y);
            let f = |d: Vec2| c.value(p + d).unwrap();
            let lap = (f(Vec2::new(h, 0.0)) + f(Vec2::new(-h, 0.0)) + f(Vec2::new(0.0, h)) + f(Vec2::new(0.0, -h))
                - 4.0 * f(Vec2::zeros()))
                / (h * h);
            assert!(lap.abs() <= 1e-3 / (p - c.core).norm_squared());
        }
    }

    #[test]
    fn gradient_decays_like_inverse_radius() {
        let s = predictor_gradient_decay_check(&cfg(), &[4.0, 8.0, 16.0, 32.0]).unwrap();
        assert!((s + 1.0).abs() < 0.01);
        let twice = ScrewConfig::new(2.0, cfg().core);
        let x = Vec2::new(3.0, 4.0);
        assert!((twice.gradient(x).unwrap().norm() - 2.0 * cfg().gradient(x).unwrap().norm()).abs() < 1e-15);
    }

    #[test]
    fn wrap_removes_jump() {
        let c = cfg();
        assert!((c.wrap(0.9) + 0.1).abs() < 1e-15);
        assert!((c.wrap(-0.2) + 0.2).abs() < 1e-15);
    }
}
