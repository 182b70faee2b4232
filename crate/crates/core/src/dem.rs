//! Ground elevation rasters.

use std::collections::VecDeque;

use crate::cloud::{PointClass, PointCloud};
use crate::error::{Error, Result};
use crate::grid::{Extent, GridSpec};

pub const DEFAULT_NODATA: f64 = -9999.0;

/// Ground elevation per cell. Rows run south to north; `NaN` marks voids in
/// memory, `nodata` is the marker used on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Dem {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub nodata: f64,
}

impl Dem {
    pub fn constant(extent: Extent, resolution: f64, elevation: f64) -> Self {
        let grid = GridSpec::covering(&extent, resolution);
        Dem {
            grid,
            values: vec![elevation; grid.len()],
            nodata: DEFAULT_NODATA,
        }
    }

    /// Samples `f` at every cell center.
    pub fn from_fn(extent: Extent, resolution: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let grid = GridSpec::covering(&extent, resolution);
        let mut values = Vec::with_capacity(grid.len());
        for row in 0..grid.nrows {
            for col in 0..grid.ncols {
                let (x, y) = grid.cell_center(col, row);
                values.push(f(x, y));
            }
        }
        Dem {
            grid,
            values,
            nodata: DEFAULT_NODATA,
        }
    }

    pub fn resolution(&self) -> f64 {
        self.grid.cell_width
    }

    pub fn value(&self, col: usize, row: usize) -> f64 {
        self.values[self.grid.index(col, row)]
    }

    pub fn has_voids(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }

    /// Bilinear interpolation between cell centers. Queries outside the grid
    /// clamp to the nearest cell.
    pub fn elevation_at(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let fx = (x - g.origin_x) / g.cell_width - 0.5;
        let fy = (y - g.origin_y) / g.cell_width - 0.5;
        let (c0, c1, tx) = axis(fx, g.ncols);
        let (r0, r1, ty) = axis(fy, g.nrows);
        let v00 = self.value(c0, r0);
        let v10 = self.value(c1, r0);
        let v01 = self.value(c0, r1);
        let v11 = self.value(c1, r1);
        let south = v00 + (v10 - v00) * tx;
        let north = v01 + (v11 - v01) * tx;
        south + (north - south) * ty
    }

    /// Fills voids with the value of the nearest filled cell, growing
    /// outward ring by ring (4-connected).
    pub fn fill_voids(&mut self) {
        let g = self.grid;
        let mut queue: VecDeque<usize> = (0..self.values.len())
            .filter(|&i| !self.values[i].is_nan())
            .collect();
        if queue.is_empty() {
            return;
        }
        while let Some(i) = queue.pop_front() {
            let (col, row) = (i % g.ncols, i / g.ncols);
            let v = self.values[i];
            let mut visit = |c: usize, r: usize| {
                let j = g.index(c, r);
                if self.values[j].is_nan() {
                    self.values[j] = v;
                    queue.push_back(j);
                }
            };
            if col > 0 {
                visit(col - 1, row);
            }
            if col + 1 < g.ncols {
                visit(col + 1, row);
            }
            if row > 0 {
                visit(col, row - 1);
            }
            if row + 1 < g.nrows {
                visit(col, row + 1);
            }
        }
    }
}

fn axis(f: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let f = f.clamp(0.0, max);
    let i0 = f.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, f - i0 as f64)
}

/// Averages ground returns per cell and fills empty cells from the nearest
/// filled neighbor. Points classified as anything other than ground are
/// ignored.
pub fn build_dem(ground_points: &PointCloud, resolution: f64) -> Result<Dem> {
    if !(resolution > 0.0) {
        return Err(Error::InvalidConfig("DEM resolution must be positive".into()));
    }
    let ground: Vec<_> = ground_points
        .points
        .iter()
        .filter(|p| p.class == PointClass::Ground)
        .collect();
    if ground.is_empty() {
        return Err(Error::EmptyInput("DEM from no ground points"));
    }
    let grid = GridSpec::covering(&ground_points.extent, resolution);
    let mut sum = vec![0.0; grid.len()];
    let mut count = vec![0usize; grid.len()];
    for p in ground {
        let (c, r) = grid.cell_of_clamped(p.x, p.y);
        let i = grid.index(c, r);
        sum[i] += p.z;
        count[i] += 1;
    }
    let values = sum
        .iter()
        .zip(&count)
        .map(|(&s, &n)| if n > 0 { s / n as f64 } else { f64::NAN })
        .collect();
    let mut dem = Dem {
        grid,
        values,
        nodata: DEFAULT_NODATA,
    };
    dem.fill_voids();
    Ok(dem)
}
