//! Pixel regions and the exact area-overlap resampling between pixel
//! resolution and the attention grid.
//!
//! Images are square, `res x res` pixels. Pixel `(x, y)` covers
//! `[x, x+1) x [y, y+1)`; grid cell `(col, row)` of a `g x g` grid covers
//! `[col*res/g, (col+1)*res/g)` on each axis, so `res` need not be a
//! multiple of `g`. All grids are stored row-major (`y` outer).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegionError {
    #[error("region covers no pixels")]
    Degenerate,
    #[error("region {region:?} exceeds a {res}x{res} image")]
    OutOfBounds { region: String, res: usize },
    #[error("mask is {mask_res}x{mask_res} but image is {res}x{res}")]
    MaskResolution { mask_res: usize, res: usize },
    #[error("pixel grid has no positive mass")]
    EmptyGrid,
    #[error("grid side must be positive and image resolution at least 1")]
    BadGeometry,
    #[error("map has {got} cells, expected {expected}")]
    CellCount { got: usize, expected: usize },
}

/// Axis-aligned box in pixel coordinates, half-open on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn full(res: usize) -> Self {
        Self::new(0, 0, res, res)
    }

    pub fn area(&self) -> usize {
        self.x1.saturating_sub(self.x0) * self.y1.saturating_sub(self.y0)
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// Binary mask at image resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    res: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(res: usize, bits: Vec<bool>) -> Result<Self, RegionError> {
        if bits.len() != res * res {
            return Err(RegionError::MaskResolution {
                mask_res: (bits.len() as f64).sqrt() as usize,
                res,
            });
        }
        Ok(Self { res, bits })
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Annotated image region: a box or a mask.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Box(PixelBox),
    Mask(PixelMask),
}

impl From<PixelBox> for Region {
    fn from(b: PixelBox) -> Self {
        Region::Box(b)
    }
}

impl Region {
    /// Checks the region is nonempty and inside a `res x res` image.
    pub fn validate(&self, res: usize) -> Result<(), RegionError> {
        match self {
            Region::Box(b) => {
                if b.x1 > res || b.y1 > res {
                    return Err(RegionError::OutOfBounds {
                        region: format!("{b:?}"),
                        res,
                    });
                }
                if b.x0 >= b.x1 || b.y0 >= b.y1 {
                    return Err(RegionError::Degenerate);
                }
                Ok(())
            }
            Region::Mask(m) => {
                if m.res != res {
                    return Err(RegionError::MaskResolution {
                        mask_res: m.res,
                        res,
                    });
                }
                if !m.bits.iter().any(|&b| b) {
                    return Err(RegionError::Degenerate);
                }
                Ok(())
            }
        }
    }

    /// Number of covered pixels.
    pub fn pixel_count(&self) -> usize {
        match self {
            Region::Box(b) => b.area(),
            Region::Mask(m) => m.bits.iter().filter(|&&b| b).count(),
        }
    }
}

/// Scalar field over image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    res: usize,
    values: Vec<f64>,
}

impl PixelGrid {
    pub fn zeros(res: usize) -> Self {
        Self {
            res,
            values: vec![0.0; res * res],
        }
    }

    pub fn from_values(res: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), res * res);
        Self { res, values }
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.res + x]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Raises every pixel covered by `region` to at least `value`.
    pub fn paint_max(&mut self, region: &Region, value: f64) {
        let res = self.res;
        match region {
            Region::Box(b) => {
                for y in b.y0..b.y1 {
                    for v in &mut self.values[y * res + b.x0..y * res + b.x1] {
                        *v = v.max(value);
                    }
                }
            }
            Region::Mask(m) => {
                for (v, &bit) in self.values.iter_mut().zip(&m.bits) {
                    if bit {
                        *v = v.max(value);
                    }
                }
            }
        }
    }

    /// Repeats every pixel `factor x factor` times.
    pub fn upscale(&self, factor: usize) -> PixelGrid {
        let res = self.res * factor;
        let mut values = vec![0.0; res * res];
        for y in 0..res {
            for x in 0..res {
                values[y * res + x] = self.get(x / factor, y / factor);
            }
        }
        PixelGrid { res, values }
    }
}

/// Binary rasterization of a region: 1 where covered, 0 elsewhere.
pub fn rasterize_region(region: &Region, res: usize) -> Result<PixelGrid, RegionError> {
    region.validate(res)?;
    let mut grid = PixelGrid::zeros(res);
    grid.paint_max(region, 1.0);
    Ok(grid)
}

/// Rasterizes the union of several regions.
pub fn rasterize_union(regions: &[Region], res: usize) -> Result<PixelGrid, RegionError> {
    if regions.is_empty() {
        return Err(RegionError::Degenerate);
    }
    let mut grid = PixelGrid::zeros(res);
    for r in regions {
        r.validate(res)?;
        grid.paint_max(r, 1.0);
    }
    Ok(grid)
}

/// For each of `g` cells along one axis, the pixels it overlaps and the
/// overlap length in pixel units.
fn axis_overlaps(res: usize, g: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = res as f64 / g as f64;
    (0..g)
        .map(|k| {
            let lo = k as f64 * scale;
            let hi = (k + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(res);
            (first..last)
                .filter_map(|p| {
                    let overlap = (hi.min((p + 1) as f64) - lo.max(p as f64)).max(0.0);
                    (overlap > 0.0).then_some((p, overlap))
                })
                .collect()
        })
        .collect()
}

/// Fraction of each grid cell's area covered by the pixel field, weighted
/// by pixel value. Not normalized.
pub fn cell_coverage(grid: &PixelGrid, g: usize) -> Result<Vec<f64>, RegionError> {
    if g == 0 || grid.res == 0 {
        return Err(RegionError::BadGeometry);
    }
    let overlaps = axis_overlaps(grid.res, g);
    let cell_area = (grid.res as f64 / g as f64).powi(2);
    let mut out = vec![0.0; g * g];
    for (row, ys) in overlaps.iter().enumerate() {
        for (col, xs) in overlaps.iter().enumerate() {
            let mut acc = 0.0;
            for &(y, wy) in ys {
                let line = &grid.values[y * grid.res..(y + 1) * grid.res];
                let mut row_acc = 0.0;
                for &(x, wx) in xs {
                    row_acc += line[x] * wx;
                }
                acc += row_acc * wy;
            }
            out[row * g + col] = acc / cell_area;
        }
    }
    Ok(out)
}

/// Resamples a pixel field onto the `g x g` grid by exact area overlap and
/// scales it to sum to 1.
pub fn resize_normalize(grid: &PixelGrid, g: usize) -> Result<Vec<f64>, RegionError> {
    let mut cells = cell_coverage(grid, g)?;
    let total: f64 = cells.iter().sum();
    if total <= 0.0 {
        return Err(RegionError::EmptyGrid);
    }
    for c in &mut cells {
        *c /= total;
    }
    Ok(cells)
}

/// Spreads a `g x g` cell map over `res x res` pixels in proportion to
/// pixel/cell overlap, then renormalizes to sum 1. When `g` divides `res`
/// this is block replication.
pub fn upsample(cells: &[f64], g: usize, res: usize) -> Result<PixelGrid, RegionError> {
    if g == 0 || res == 0 {
        return Err(RegionError::BadGeometry);
    }
    if cells.len() != g * g {
        return Err(RegionError::CellCount {
            got: cells.len(),
            expected: g * g,
        });
    }
    let overlaps = axis_overlaps(res, g);
    let cell_area = (res as f64 / g as f64).powi(2);
    let mut values = vec![0.0; res * res];
    for (row, ys) in overlaps.iter().enumerate() {
        for (col, xs) in overlaps.iter().enumerate() {
            let w = cells[row * g + col] / cell_area;
            for &(y, wy) in ys {
                for &(x, wx) in xs {
                    values[y * res + x] += w * wy * wx;
                }
            }
        }
    }
    let total: f64 = values.iter().sum();
    if total > 0.0 {
        for v in &mut values {
            *v /= total;
        }
    }
    Ok(PixelGrid { res, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_image_box_rasterizes_to_ones() {
        let g = rasterize_region(&PixelBox::full(8).into(), 8).unwrap();
        assert!(g.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_pixel_box() {
        let g = rasterize_region(&PixelBox::new(2, 3, 3, 4).into(), 5).unwrap();
        assert_eq!(g.sum(), 1.0);
        assert_eq!(g.get(2, 3), 1.0);
    }

    #[test]
    fn degenerate_and_out_of_bounds() {
        assert_eq!(
            rasterize_region(&PixelBox::new(2, 2, 2, 4).into(), 5),
            Err(RegionError::Degenerate)
        );
        assert!(matches!(
            rasterize_region(&PixelBox::new(0, 0, 6, 1).into(), 5),
            Err(RegionError::OutOfBounds { .. })
        ));
        let empty = PixelMask::new(2, vec![false; 4]).unwrap();
        assert_eq!(
            rasterize_region(&Region::Mask(empty), 2),
            Err(RegionError::Degenerate)
        );
    }

    #[test]
    fn union_is_elementwise_or() {
        let a: Region = PixelBox::new(0, 0, 2, 2).into();
        let b: Region = PixelBox::new(3, 1, 4, 4).into();
        let u = rasterize_union(&[a.clone(), b.clone()], 4).unwrap();
        let ra = rasterize_region(&a, 4).unwrap();
        let rb = rasterize_region(&b, 4).unwrap();
        for i in 0..16 {
            let or = if ra.values()[i] == 1.0 || rb.values()[i] == 1.0 {
                1.0
            } else {
                0.0
            };
            assert_eq!(u.values()[i], or);
        }
    }

    #[test]
    fn resize_three_by_three_box() {
        let px = rasterize_region(&PixelBox::new(0, 0, 3, 3).into(), 4).unwrap();
        let w = resize_normalize(&px, 2).unwrap();
        let expected = [4.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0, 1.0 / 9.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{w:?}");
        }
    }

    #[test]
    fn resize_full_and_single_cell() {
        for g in 1..=7 {
            let px = rasterize_region(&PixelBox::full(21).into(), 21).unwrap();
            let w = resize_normalize(&px, g).unwrap();
            for v in w {
                assert!((v - 1.0 / (g * g) as f64).abs() < 1e-12);
            }
        }
        let px = rasterize_region(&PixelBox::new(4, 0, 8, 4).into(), 8).unwrap();
        assert_eq!(resize_normalize(&px, 2).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn resize_rejects_empty() {
        assert_eq!(
            resize_normalize(&PixelGrid::zeros(4), 2),
            Err(RegionError::EmptyGrid)
        );
    }

    #[test]
    fn non_divisible_resolution_conserves_mass() {
        let cells: Vec<f64> = (1..=9).map(|v| v as f64 / 45.0).collect();
        let up = upsample(&cells, 3, 10).unwrap();
        assert!((up.sum() - 1.0).abs() < 1e-12);
        // Mass inside any box equals the coverage-weighted cell sum.
        let bx = PixelBox::new(1, 2, 7, 9);
        let inside: f64 = (bx.y0..bx.y1)
            .flat_map(|y| (bx.x0..bx.x1).map(move |x| (x, y)))
            .map(|(x, y)| up.get(x, y))
            .sum();
        let cov = cell_coverage(&rasterize_region(&bx.into(), 10).unwrap(), 3).unwrap();
        let weighted: f64 = cov.iter().zip(&cells).map(|(c, a)| c * a).sum();
        assert!((inside - weighted).abs() < 1e-12);
    }

    #[test]
    fn upsample_divisible_is_block_replication() {
        let up = upsample(&[0.25, 0.75], 1, 2);
        assert!(up.is_err());
        let up = upsample(&[0.1, 0.2, 0.3, 0.4], 2, 4).unwrap();
        assert!((up.get(3, 3) - 0.1).abs() < 1e-15);
        assert!((up.get(0, 0) - 0.025).abs() < 1e-15);
    }
}
