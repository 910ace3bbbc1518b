//! Dense row-major grids and the metric frame that places them in the plane.

use crate::geometry::Vec2;

/// Placement of an `h × w` grid: cell `(row, col)` covers
/// `[origin.x + col·res, origin.x + (col+1)·res) × [origin.y + row·res, …)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub h: usize,
    pub w: usize,
    pub res: f64,
    pub origin: Vec2,
}

impl GridSpec {
    pub fn new(h: usize, w: usize, res: f64, origin: Vec2) -> Self {
        GridSpec { h, w, res, origin }
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lo(&self) -> Vec2 {
        self.origin
    }

    pub fn hi(&self) -> Vec2 {
        self.origin + Vec2::new(self.w as f64 * self.res, self.h as f64 * self.res)
    }

    pub fn center(&self, row: usize, col: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (col as f64 + 0.5) * self.res,
            self.origin.y + (row as f64 + 0.5) * self.res,
        )
    }

    /// Continuous cell coordinates (column, row) of a point; cell centers sit
    /// at half-integers.
    pub fn to_cell_coords(&self, p: Vec2) -> (f64, f64) {
        ((p.x - self.origin.x) / self.res, (p.y - self.origin.y) / self.res)
    }

    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let (cx, cy) = self.to_cell_coords(p);
        if !(cx >= 0.0 && cy >= 0.0) {
            return None;
        }
        let (col, row) = (cx.floor() as usize, cy.floor() as usize);
        (row < self.h && col < self.w).then_some((row, col))
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.cell_of(p).is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Grid<T> {
    pub fn new(h: usize, w: usize) -> Self {
        Grid {
            h,
            w,
            data: vec![T::default(); h * w],
        }
    }
}

impl<T: Copy> Grid<T> {
    pub fn filled(h: usize, w: usize, v: T) -> Self {
        Grid {
            h,
            w,
            data: vec![v; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), h * w, "grid data length");
        Grid { h, w, data }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.w + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: T) {
        self.data[row * self.w + col] = v;
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.data[row * self.w + col]
    }
}
