//! Dense scalar grids and their binary serialization.
//!
//! Layout on disk (all little-endian):
//!
//! | field      | type      |
//! |------------|-----------|
//! | magic      | `b"SFGD"` |
//! | version    | u32 (= 1) |
//! | resolution | u32 × 3   |
//! | origin     | f64 × 3   |
//! | spacing    | f64       |
//! | values     | f32 × nx·ny·nz, x fastest |

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::{GeomError, Result, Vec3};

pub const GRID_MAGIC: &[u8; 4] = b"SFGD";
pub const GRID_VERSION: u32 = 1;

/// Cell-centered grid. `origin` is the minimum corner of cell `(0,0,0)`;
/// the value of cell `(i,j,k)` is sampled at `origin + (i+½, j+½, k+½)·spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub resolution: [usize; 3],
    pub origin: Vec3,
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(resolution: [usize; 3], origin: Vec3, spacing: f64, values: Vec<f64>) -> Result<Self> {
        let n = resolution.iter().product::<usize>();
        if values.len() != n {
            return Err(GeomError::ShapeMismatch(format!(
                "{} values for resolution {resolution:?}",
                values.len()
            )));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(GeomError::InvalidParameter(format!("spacing {spacing}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::InvalidParameter("non-finite grid value".into()));
        }
        Ok(Self {
            resolution,
            origin,
            spacing,
            values,
        })
    }

    /// `r³` cells covering `[-1, 1]³`, filled from `f(cell center)`.
    pub fn unit_cube(r: usize, f: impl Fn(&Vec3) -> f64) -> Self {
        let spacing = 2.0 / r as f64;
        let origin = Vec3::repeat(-1.0);
        let mut values = Vec::with_capacity(r * r * r);
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    let c = origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * spacing;
                    values.push(f(&c));
                }
            }
        }
        Self {
            resolution: [r, r, r],
            origin,
            spacing,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.resolution[0];
        let ny = self.resolution[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.spacing
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Trilinear interpolation between cell centers, clamped at the border.
    pub fn sample(&self, p: &Vec3) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let g = (p[a] - self.origin[a]) / self.spacing - 0.5;
            let n = self.resolution[a];
            if n == 1 {
                continue;
            }
            let g = g.clamp(0.0, (n - 1) as f64);
            let i = (g.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = g - i as f64;
        }
        let step = |a: usize| usize::from(self.resolution[a] > 1);
        let mut acc = 0.0;
        for corner in 0..8 {
            let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                w *= if o[a] == 1 { frac[a] } else { 1.0 - frac[a] };
                idx[a] = base[a] + o[a] * step(a);
            }
            if w != 0.0 {
                acc += w * self.get(idx[0], idx[1], idx[2]);
            }
        }
        acc
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(GRID_MAGIC)?;
        out.write_u32::<LittleEndian>(GRID_VERSION)?;
        for &r in &self.resolution {
            out.write_u32::<LittleEndian>(r as u32)?;
        }
        for c in self.origin.iter() {
            out.write_f64::<LittleEndian>(*c)?;
        }
        out.write_f64::<LittleEndian>(self.spacing)?;
        for &v in &self.values {
            out.write_f32::<LittleEndian>(v as f32)?;
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(GeomError::Format("bad grid magic".into()));
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != GRID_VERSION {
            return Err(GeomError::Format(format!("unsupported grid version {version}")));
        }
        let mut resolution = [0usize; 3];
        for r in resolution.iter_mut() {
            *r = input.read_u32::<LittleEndian>()? as usize;
        }
        let mut origin = Vec3::zeros();
        for a in 0..3 {
            origin[a] = input.read_f64::<LittleEndian>()?;
        }
        let spacing = input.read_f64::<LittleEndian>()?;
        let n = resolution
            .iter()
            .try_fold(1usize, |acc, &r| acc.checked_mul(r))
            .ok_or_else(|| GeomError::Format("grid too large".into()))?;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(input.read_f32::<LittleEndian>()? as f64);
        }
        Self::new(resolution, origin, spacing, values)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::with_capacity(48 + 4 * self.values.len());
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
