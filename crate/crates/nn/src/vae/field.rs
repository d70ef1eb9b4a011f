use std::path::Path;

use meshflow_core::grid::ScalarGrid;
use meshflow_core::Vec3;

use crate::Result;

/// Central-difference step in normalized coordinates.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Queryable scalar field `D(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldOracle {
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box with half extents `half`.
    Box { center: Vec3, half: Vec3 },
    /// `n·x − offset` for unit `n`.
    Plane { normal: Vec3, offset: f64 },
    /// Trilinear interpolation of cell-centered samples.
    Grid(ScalarGrid),
    Scaled { inner: std::boxed::Box<FieldOracle>, factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientMode {
    /// Closed form where the oracle has one, central differences at
    /// [`DEFAULT_FD_STEP`] otherwise.
    Analytic,
    Central { h: f64 },
}

impl FieldOracle {
    pub fn load_grid(path: &Path) -> Result<Self> {
        Ok(Self::Grid(ScalarGrid::load(path)?))
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self::Scaled {
            inner: std::boxed::Box::new(self),
            factor,
        }
    }

    pub fn value(&self, x: &Vec3) -> f64 {
        match self {
            Self::Sphere { center, radius } => (x - center).norm() - radius,
            Self::Box { center, half } => {
                let q = (x - center).abs() - half;
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
            Self::Plane { normal, offset } => normal.dot(x) - offset,
            Self::Grid(g) => g.sample(x),
            Self::Scaled { inner, factor } => factor * inner.value(x),
        }
    }

    /// Closed-form gradient; `None` for grids and at points where the field
    /// is not differentiable.
    pub fn analytic_gradient(&self, x: &Vec3) -> Option<Vec3> {
        match self {
            Self::Sphere { center, .. } => {
                let d = x - center;
                let n = d.norm();
                (n > 0.0).then(|| d / n)
            }
            Self::Box { center, half } => {
                let p = x - center;
                let q = p.abs() - half;
                let sign = p.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
                if q.max() > 0.0 {
                    let g = q.map(|v| v.max(0.0));
                    Some(g.component_mul(&sign) / g.norm())
                } else {
                    let a = q.imax();
                    let mut g = Vec3::zeros();
                    g[a] = sign[a];
                    Some(g)
                }
            }
            Self::Plane { normal, .. } => Some(*normal),
            Self::Grid(_) => None,
            Self::Scaled { inner, factor } => inner.analytic_gradient(x).map(|g| g * *factor),
        }
    }

    pub fn fd_gradient(&self, x: &Vec3, h: f64) -> Vec3 {
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h;
            g[a] = (self.value(&(x + e)) - self.value(&(x - e))) / (2.0 * h);
        }
        g
    }

    pub fn gradient(&self, x: &Vec3, mode: GradientMode) -> Vec3 {
        match mode {
            GradientMode::Analytic => self
                .analytic_gradient(x)
                .unwrap_or_else(|| self.fd_gradient(x, DEFAULT_FD_STEP)),
            GradientMode::Central { h } => self.fd_gradient(x, h),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_values() {
        let b = FieldOracle::Box {
            center: Vec3::zeros(),
            half: Vec3::new(0.5, 0.4, 0.3),
        };
        assert!((b.value(&Vec3::new(1.0, 0.0, 0.0)) - 0.5).abs() < 1e-15);
        assert!((b.value(&Vec3::zeros()) + 0.3).abs() < 1e-15);
        assert!((b.value(&Vec3::new(0.8, 0.8, 0.0)) - 0.5).abs() < 1e-15);
        assert_eq!(b.analytic_gradient(&Vec3::new(0.0, 0.0, 0.1)), Some(Vec3::z()));
    }

    #[test]
    fn grid_falls_back_to_differences() {
        let g = ScalarGrid::unit_cube(16, |p| p.x);
        let f = FieldOracle::Grid(g);
        let grad = f.gradient(&Vec3::new(0.1, 0.2, -0.3), GradientMode::Analytic);
        assert!((grad - Vec3::x()).norm() < 1e-9);
        assert!(f.analytic_gradient(&Vec3::zeros()).is_none());
    }
}
