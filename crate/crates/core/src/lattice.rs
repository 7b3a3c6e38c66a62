//! Integer lattice points in up to three dimensions.
//!
//! A `Point` always carries three coordinates; in dimension `d < 3` the
//! trailing coordinates are zero. This keeps points `Copy` and hashable
//! without a dimension parameter threaded through every container.

use std::fmt;
use std::ops::{Add, Neg, Sub};

pub const MAX_DIM: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point(pub [i64; MAX_DIM]);

impl Point {
    pub const ORIGIN: Point = Point([0; MAX_DIM]);

    pub fn new1(x: i64) -> Self {
        Point([x, 0, 0])
    }

    pub fn new2(x: i64, y: i64) -> Self {
        Point([x, y, 0])
    }

    pub fn new3(x: i64, y: i64, z: i64) -> Self {
        Point([x, y, z])
    }

    /// Builds a point from `coords`; returns `None` for more than three coordinates.
    pub fn from_slice(coords: &[i64]) -> Option<Self> {
        if coords.len() > MAX_DIM {
            return None;
        }
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Some(Point(c))
    }

    pub fn coords(&self, dim: usize) -> &[i64] {
        &self.0[..dim]
    }

    pub fn l1(&self) -> u64 {
        self.0.iter().map(|c| c.unsigned_abs()).sum()
    }

    /// True when every coordinate at index `>= dim` is zero.
    pub fn fits_dim(&self, dim: usize) -> bool {
        self.0[dim..].iter().all(|&c| c == 0)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point([self.0[0] + rhs.0[0], self.0[1] + rhs.0[1], self.0[2] + rhs.0[2]])
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point([self.0[0] - rhs.0[0], self.0[1] - rhs.0[1], self.0[2] - rhs.0[2]])
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_and_norm() {
        let a = Point::new2(3, -4);
        let b = Point::new2(-1, 1);
        assert_eq!(a + b, Point::new2(2, -3));
        assert_eq!(a - b, Point::new2(4, -5));
        assert_eq!(-a, Point::new2(-3, 4));
        assert_eq!(a.l1(), 7);
        assert!(a.fits_dim(2));
        assert!(!a.fits_dim(1));
    }

    #[test]
    fn from_slice_rejects_four_coordinates() {
        assert_eq!(Point::from_slice(&[1]), Some(Point::new1(1)));
        assert_eq!(Point::from_slice(&[1, 2, 3, 4]), None);
    }
}
