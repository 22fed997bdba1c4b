use serde::{Deserialize, Serialize};

use super::{FloorPlane, InsertionConfig, InsertionError};
use crate::scene::Scene;

/// 2D floor raster, row-major with `x` varying fastest. `true` = free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(origin: [f64; 2], cell_size: f64, width: usize, height: usize, free: bool) -> Self {
        Self {
            origin,
            cell_size,
            width,
            height,
            cells: vec![free; width * height],
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    #[inline]
    pub fn is_free(&self, i: usize, j: usize) -> bool {
        self.cells[self.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, free: bool) {
        let k = self.index(i, j);
        self.cells[k] = free;
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.cell_size,
            self.origin[1] + (j as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Cell containing `(x, y)`; points on the far boundary map to the last cell.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fi = ((x - self.origin[0]) / self.cell_size).floor();
        let fj = ((y - self.origin[1]) / self.cell_size).floor();
        if fi < -1.0 || fj < -1.0 || !fi.is_finite() || !fj.is_finite() {
            return None;
        }
        let clamp = |f: f64, n: usize| -> Option<usize> {
            if f < 0.0 {
                // within one cell of the origin edge, i.e. rounding
                Some(0)
            } else if (f as usize) < n {
                Some(f as usize)
            } else if (f as usize) == n {
                Some(n - 1)
            } else {
                None
            }
        };
        Some((clamp(fi, self.width)?, clamp(fj, self.height)?))
    }

    pub fn free_count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height).flat_map(move |j| (0..self.width).map(move |i| (i, j))).filter(|&(i, j)| self.is_free(i, j))
    }
}

/// True if `z` lies in the band whose points block placement.
#[inline]
pub(crate) fn in_occupancy_band(z: f64, floor: &FloorPlane, cfg: &InsertionConfig) -> bool {
    z > floor.z + cfg.occupancy_min_height && z < floor.z + cfg.occupancy_max_height
}

/// Rasterizes the scene footprint; cells hit by any object point inside the
/// occupancy band are marked occupied.
pub fn build_floor_map(
    scene: &Scene,
    floor: &FloorPlane,
    cell_size: f64,
    cfg: &InsertionConfig,
) -> Result<OccupancyGrid, InsertionError> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(InsertionError::InvalidParameter(format!("cell size must be positive, got {cell_size}")));
    }
    let aabb = scene.aabb();
    let (lo, hi) = (aabb.min(), aabb.max());
    let cells_along = |extent: f64| ((extent / cell_size) - 1e-9).ceil().max(1.0) as usize;
    let mut grid = OccupancyGrid::new([lo[0], lo[1]], cell_size, cells_along(hi[0] - lo[0]), cells_along(hi[1] - lo[1]), true);
    for obj in scene.objects() {
        for p in scene.object_points(obj) {
            if in_occupancy_band(p[2], floor, cfg) {
                if let Some((i, j)) = grid.cell_of(p[0], p[1]) {
                    grid.set(i, j, false);
                }
            }
        }
    }
    Ok(grid)
}

/// Half-extents, in cells, of the structuring element used for erosion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Footprint {
    pub kx: usize,
    pub ky: usize,
}

/// Cell `(i, j)` stays free iff every cell of the `(2kx+1) x (2ky+1)` window
/// around it is free and inside the grid.
pub fn erode_free(grid: &OccupancyGrid, footprint: Footprint) -> OccupancyGrid {
    let (w, h) = (grid.width, grid.height);
    let Footprint { kx, ky } = footprint;
    // summed-area table of occupied cells, (w+1) x (h+1)
    let stride = w + 1;
    let mut sat = vec![0u32; (w + 1) * (h + 1)];
    for j in 0..h {
        let mut row = 0u32;
        for i in 0..w {
            row += u32::from(!grid.is_free(i, j));
            sat[(j + 1) * stride + i + 1] = sat[j * stride + i + 1] + row;
        }
    }
    let mut out = OccupancyGrid::new(grid.origin, grid.cell_size, w, h, false);
    if 2 * kx + 1 > w || 2 * ky + 1 > h {
        return out;
    }
    for j in ky..h - ky {
        let (j0, j1) = (j - ky, j + ky + 1);
        for i in kx..w - kx {
            let (i0, i1) = (i - kx, i + kx + 1);
            let occupied = sat[j1 * stride + i1] + sat[j0 * stride + i0] - sat[j0 * stride + i1] - sat[j1 * stride + i0];
            if occupied == 0 {
                out.set(i, j, true);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive window scan.
    fn erode_brute(grid: &OccupancyGrid, fp: Footprint) -> OccupancyGrid {
        let mut out = grid.clone();
        for j in 0..grid.height as i64 {
            for i in 0..grid.width as i64 {
                let mut ok = true;
                for dj in -(fp.ky as i64)..=fp.ky as i64 {
                    for di in -(fp.kx as i64)..=fp.kx as i64 {
                        let (x, y) = (i + di, j + dj);
                        let inside = x >= 0 && y >= 0 && x < grid.width as i64 && y < grid.height as i64;
                        ok &= inside && grid.is_free(x as usize, y as usize);
                    }
                }
                out.set(i as usize, j as usize, ok);
            }
        }
        out
    }

    #[test]
    fn all_free_grid_loses_border() {
        let g = OccupancyGrid::new([0.0; 2], 1.0, 10, 10, true);
        let e = erode_free(&g, Footprint { kx: 1, ky: 1 });
        assert_eq!(e.free_count(), 64);
        assert!(!e.is_free(0, 5) && e.is_free(1, 1) && e.is_free(8, 8) && !e.is_free(9, 9));
    }

    #[test]
    fn zero_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = OccupancyGrid::new([0.0; 2], 0.1, 13, 7, true);
        for c in &mut g.cells {
            *c = rng.gen_bool(0.7);
        }
        assert_eq!(erode_free(&g, Footprint { kx: 0, ky: 0 }), g);
    }

    #[test]
    fn kernel_larger_than_grid_leaves_nothing_free() {
        let g = OccupancyGrid::new([0.0; 2], 1.0, 4, 9, true);
        assert_eq!(erode_free(&g, Footprint { kx: 2, ky: 0 }).free_count(), 0);
        assert_eq!(erode_free(&g, Footprint { kx: 1, ky: 4 }).free_count(), 2);
    }

    #[test]
    fn matches_brute_force_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..60 {
            let (w, h) = (rng.gen_range(1..=40), rng.gen_range(1..=40));
            let mut g = OccupancyGrid::new([0.0; 2], 0.05, w, h, true);
            let p = rng.gen_range(0.0..0.2);
            for c in &mut g.cells {
                *c = !rng.gen_bool(p);
            }
            let fp = Footprint { kx: rng.gen_range(0..6), ky: rng.gen_range(0..6) };
            assert_eq!(erode_free(&g, fp), erode_brute(&g, fp));
        }
    }

    #[test]
    fn larger_footprint_never_frees_more() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = OccupancyGrid::new([0.0; 2], 0.05, 30, 30, true);
        for c in &mut g.cells {
            *c = !rng.gen_bool(0.05);
        }
        let mut prev = usize::MAX;
        for k in 0..8 {
            let n = erode_free(&g, Footprint { kx: k, ky: k }).free_count();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn cell_lookup_clamps_far_edge() {
        let g = OccupancyGrid::new([0.0, 0.0], 0.5, 4, 2, true);
        assert_eq!(g.cell_of(2.0, 1.0), Some((3, 1)));
        assert_eq!(g.cell_of(0.0, 0.0), Some((0, 0)));
        assert_eq!(g.cell_of(3.0, 0.0), None);
        assert_eq!(g.cell_center(1, 0), [0.75, 0.25]);
    }
}
