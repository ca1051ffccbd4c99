//! Fixtures shared by the benchmarks.

use cbe_core::opuc::CircleGrid;
use cbe_core::sampling::DrawSequence;

/// `n` coefficients at β = 2 and a grid of `grid_mult · n` points.
pub fn fixture(n: usize, grid_mult: usize) -> (DrawSequence, CircleGrid) {
    let draws = DrawSequence::generate(1, 0, 2.0, n).expect("valid parameters");
    let grid = CircleGrid::new(grid_mult * n).expect("non-empty grid");
    (draws, grid)
}
