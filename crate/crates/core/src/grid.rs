//! Horizontal binning grids and a bucketed spatial index.

use serde::{Deserialize, Serialize};

/// Axis-aligned 2D extent in planar meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Extent {
    pub const fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Extent {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }

    /// Smallest extent containing every `(x, y)`; `None` when empty.
    pub fn bounding<I: IntoIterator<Item = (f64, f64)>>(coords: I) -> Option<Extent> {
        let mut it = coords.into_iter();
        let (x0, y0) = it.next()?;
        let mut e = Extent::new(x0, y0, x0, y0);
        for (x, y) in it {
            e.xmin = e.xmin.min(x);
            e.ymin = e.ymin.min(y);
            e.xmax = e.xmax.max(x);
            e.ymax = e.ymax.max(y);
        }
        Some(e)
    }

    pub fn union(&self, other: &Extent) -> Extent {
        Extent::new(
            self.xmin.min(other.xmin),
            self.ymin.min(other.ymin),
            self.xmax.max(other.xmax),
            self.ymax.max(other.ymax),
        )
    }
}

/// Cell layout of a regular grid anchored at its lower-left corner.
///
/// Binning is half-open: a coordinate on a shared cell border falls into the
/// cell with the larger index. Coordinates on the outer max border are kept in
/// the last row/column so every point of the extent maps to a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_width: f64,
    pub ncols: usize,
    pub nrows: usize,
}

impl GridSpec {
    pub fn covering(extent: &Extent, cell_width: f64) -> Self {
        assert!(cell_width > 0.0, "cell width must be positive");
        let ncols = ((extent.width() / cell_width).ceil() as usize).max(1);
        let nrows = ((extent.height() / cell_width).ceil() as usize).max(1);
        GridSpec {
            origin_x: extent.xmin,
            origin_y: extent.ymin,
            cell_width,
            ncols,
            nrows,
        }
    }

    pub fn len(&self) -> usize {
        self.ncols * self.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extent(&self) -> Extent {
        Extent::new(
            self.origin_x,
            self.origin_y,
            self.origin_x + self.ncols as f64 * self.cell_width,
            self.origin_y + self.nrows as f64 * self.cell_width,
        )
    }

    /// `(col, row)` of the cell holding `(x, y)`, or `None` outside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fc = ((x - self.origin_x) / self.cell_width).floor();
        let fr = ((y - self.origin_y) / self.cell_width).floor();
        let col = Self::axis_index(fc, x, self.origin_x, self.cell_width, self.ncols)?;
        let row = Self::axis_index(fr, y, self.origin_y, self.cell_width, self.nrows)?;
        Some((col, row))
    }

    fn axis_index(f: f64, v: f64, origin: f64, w: f64, n: usize) -> Option<usize> {
        if !f.is_finite() || f < 0.0 {
            return None;
        }
        let i = f as usize;
        if i < n {
            Some(i)
        } else if v <= origin + n as f64 * w * (1.0 + 1e-12) {
            Some(n - 1)
        } else {
            None
        }
    }

    /// Like [`cell_of`](Self::cell_of) but clamps outside coordinates to the
    /// nearest cell.
    pub fn cell_of_clamped(&self, x: f64, y: f64) -> (usize, usize) {
        let fc = ((x - self.origin_x) / self.cell_width).floor();
        let fr = ((y - self.origin_y) / self.cell_width).floor();
        let col = fc.clamp(0.0, (self.ncols - 1) as f64) as usize;
        let row = fr.clamp(0.0, (self.nrows - 1) as f64) as usize;
        (col, row)
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.ncols + col
    }

    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_width,
            self.origin_y + (row as f64 + 0.5) * self.cell_width,
        )
    }
}

/// A grid with one payload per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid<T> {
    pub spec: GridSpec,
    pub cells: Vec<T>,
}

impl<T: Clone> RasterGrid<T> {
    pub fn filled(spec: GridSpec, value: T) -> Self {
        RasterGrid {
            spec,
            cells: vec![value; spec.len()],
        }
    }
}

impl<T> RasterGrid<T> {
    pub fn get(&self, col: usize, row: usize) -> &T {
        &self.cells[self.spec.index(col, row)]
    }

    pub fn get_mut(&mut self, col: usize, row: usize) -> &mut T {
        let i = self.spec.index(col, row);
        &mut self.cells[i]
    }
}

/// Bins point indices into cells; used for LSP extraction and layer stripping.
pub fn bin_points<I>(spec: &GridSpec, coords: I) -> RasterGrid<Vec<usize>>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut grid = RasterGrid::filled(*spec, Vec::new());
    for (i, (x, y)) in coords.into_iter().enumerate() {
        let (c, r) = spec.cell_of_clamped(x, y);
        grid.get_mut(c, r).push(i);
    }
    grid
}

/// Fixed-radius neighbor lookup over a static set of 2D coordinates.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    spec: GridSpec,
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl SpatialIndex {
    pub fn new(coords: &[(f64, f64)], bucket: f64) -> Self {
        let extent = Extent::bounding(coords.iter().copied())
            .unwrap_or(Extent::new(0.0, 0.0, 0.0, 0.0));
        let spec = GridSpec::covering(&extent, bucket.max(1e-6));
        let mut counts = vec![0u32; spec.len() + 1];
        let cells: Vec<usize> = coords
            .iter()
            .map(|&(x, y)| {
                let (c, r) = spec.cell_of_clamped(x, y);
                spec.index(c, r)
            })
            .collect();
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; coords.len()];
        for (i, &c) in cells.iter().enumerate() {
            items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        SpatialIndex {
            spec,
            starts: counts,
            items,
        }
    }

    /// Calls `f` with every index whose bucket intersects the square of
    /// half-side `radius` around `(x, y)`. Callers filter by exact distance.
    pub fn for_each_candidate(&self, x: f64, y: f64, radius: f64, mut f: impl FnMut(usize)) {
        if self.items.is_empty() {
            return;
        }
        let (c0, r0) = self.spec.cell_of_clamped(x - radius, y - radius);
        let (c1, r1) = self.spec.cell_of_clamped(x + radius, y + radius);
        for row in r0..=r1 {
            for col in c0..=c1 {
                let cell = self.spec.index(col, row);
                let (a, b) = (self.starts[cell] as usize, self.starts[cell + 1] as usize);
                for &i in &self.items[a..b] {
                    f(i as usize);
                }
            }
        }
    }

    /// Indices within `radius` of `(x, y)`, in ascending order.
    pub fn within(&self, coords: &[(f64, f64)], x: f64, y: f64, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let mut out = Vec::new();
        self.for_each_candidate(x, y, radius, |i| {
            let (px, py) = coords[i];
            let (dx, dy) = (px - x, py - y);
            if dx * dx + dy * dy <= r2 {
                out.push(i);
            }
        });
        out.sort_unstable();
        out
    }
}
