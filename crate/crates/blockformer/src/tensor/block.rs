//! A single tile of a blocked matrix.

/// One tile of a matrix: block coordinates plus a row-major payload.
///
/// Interior tiles are `block_dim x block_dim`; tiles on the right or bottom
/// edge carry the exact remainder dimensions, never padding.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlock {
    pub block_row: usize,
    pub block_col: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, length `rows * cols`.
    pub data: Vec<f32>,
}

impl TensorBlock {
    pub fn zeros(block_row: usize, block_col: usize, rows: usize, cols: usize) -> Self {
        Self {
            block_row,
            block_col,
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn key(&self) -> (usize, usize) {
        (self.block_row, self.block_col)
    }

    /// True when the payload length matches the declared dimensions and every
    /// element is finite.
    pub fn is_well_formed(&self) -> bool {
        self.data.len() == self.rows * self.cols && self.data.iter().all(|v| v.is_finite())
    }
}
