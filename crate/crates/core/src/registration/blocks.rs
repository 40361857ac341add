use crate::error::{Error, Result};
use crate::raster::{Plane, Raster, Rect, ValidityMask};

pub const DEFAULT_GRID: usize = 4;

/// Non-overlapping `rows × cols` tiling with cut points at
/// `floor(i · dim / n)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    rows: usize,
    cols: usize,
    width: usize,
    height: usize,
}

impl BlockGrid {
    pub fn new(width: usize, height: usize, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(
                "block grid needs at least one row and column".into(),
            ));
        }
        if width < cols || height < rows {
            return Err(Error::TooSmall {
                width,
                height,
                requirement: format!(
                    "a {rows}x{cols} block grid needs at least {cols}x{rows} pixels"
                ),
            });
        }
        Ok(Self {
            rows,
            cols,
            width,
            height,
        })
    }

    /// The 4 × 4 grid.
    pub fn standard(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, DEFAULT_GRID, DEFAULT_GRID)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn cut(dim: usize, n: usize, i: usize) -> usize {
        i * dim / n
    }

    pub fn rect(&self, row: usize, col: usize) -> Rect {
        let x0 = Self::cut(self.width, self.cols, col);
        let x1 = Self::cut(self.width, self.cols, col + 1);
        let y0 = Self::cut(self.height, self.rows, row);
        let y1 = Self::cut(self.height, self.rows, row + 1);
        Rect::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// Block rectangles in row-major order.
    pub fn rects(&self) -> Vec<Rect> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .map(|(r, c)| self.rect(r, c))
            .collect()
    }
}

/// Images that can be cut into and assembled from rectangles.
pub trait Tile: Sized + Clone {
    fn tile_dims(&self) -> (usize, usize);
    fn crop_rect(&self, r: Rect) -> Self;
    fn blank(width: usize, height: usize) -> Self;
    fn paste(&mut self, tile: &Self, x: usize, y: usize);
}

impl Tile for Plane {
    fn tile_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn crop_rect(&self, r: Rect) -> Self {
        self.crop(r)
    }

    fn blank(width: usize, height: usize) -> Self {
        Plane::from_parts(width, height, vec![0.0; width * height])
    }

    fn paste(&mut self, tile: &Self, x0: usize, y0: usize) {
        for y in 0..tile.height() {
            for x in 0..tile.width() {
                self.set(x0 + x, y0 + y, tile.get(x, y));
            }
        }
    }
}

impl Tile for Raster {
    fn tile_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn crop_rect(&self, r: Rect) -> Self {
        self.crop(r)
    }

    fn blank(width: usize, height: usize) -> Self {
        Raster::filled(width, height, [0; 3]).expect("blank raster dimensions are positive")
    }

    fn paste(&mut self, tile: &Self, x0: usize, y0: usize) {
        for y in 0..tile.height() {
            for x in 0..tile.width() {
                self.set_pixel(x0 + x, y0 + y, tile.pixel(x, y));
            }
        }
    }
}

impl Tile for ValidityMask {
    fn tile_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn crop_rect(&self, r: Rect) -> Self {
        self.crop(r)
    }

    fn blank(width: usize, height: usize) -> Self {
        ValidityMask::all_invalid(width, height)
    }

    fn paste(&mut self, tile: &Self, x0: usize, y0: usize) {
        for y in 0..tile.height() {
            for x in 0..tile.width() {
                self.set(x0 + x, y0 + y, tile.get(x, y));
            }
        }
    }
}

/// Cuts `image` into the grid's blocks, row-major.
pub fn partition_blocks<T: Tile>(image: &T, grid: &BlockGrid) -> Result<Vec<T>> {
    if image.tile_dims() != grid.dims() {
        return Err(Error::mismatch(image.tile_dims(), grid.dims()));
    }
    Ok(grid
        .rects()
        .into_iter()
        .map(|r| image.crop_rect(r))
        .collect())
}

/// Places each block at its grid rectangle; the output mask is the
/// composite of the block masks.
pub fn stitch<T: Tile>(
    blocks: &[(T, ValidityMask)],
    grid: &BlockGrid,
) -> Result<(T, ValidityMask)> {
    if blocks.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "grid has {} blocks, got {}",
            grid.len(),
            blocks.len()
        )));
    }
    let (w, h) = grid.dims();
    let mut image = T::blank(w, h);
    let mut mask = ValidityMask::all_invalid(w, h);
    for ((block, block_mask), r) in blocks.iter().zip(grid.rects()) {
        let want = (r.width, r.height);
        if block.tile_dims() != want {
            return Err(Error::mismatch(block.tile_dims(), want));
        }
        if block_mask.dims() != want {
            return Err(Error::mismatch(block_mask.dims(), want));
        }
        image.paste(block, r.x, r.y);
        mask.paste(block_mask, r.x, r.y);
    }
    Ok((image, mask))
}
