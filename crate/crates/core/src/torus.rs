//! Points and displacements on the flat torus `[0, 2π)²`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;

/// `(2π)⁻²`, the normalization of a Fourier coefficient.
pub const INV_AREA: f64 = 1.0 / (TWO_PI * TWO_PI);

#[inline]
pub fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(TWO_PI);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if r >= TWO_PI {
        0.0
    } else {
        r
    }
}

/// Representative of `a` in `[-π, π)`.
#[inline]
pub fn centered(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    // reduce |a| so that centered(−a) = −centered(a) away from ±π
    let r = a.abs().rem_euclid(TWO_PI);
    let r = if r >= PI { r - TWO_PI } else { r };
    let r = if a < 0.0 { -r } else { r };
    if r >= PI {
        r - TWO_PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    pub x1: f64,
    pub x2: f64,
}

impl TorusPoint {
    pub fn new(x1: f64, x2: f64) -> Self {
        Self {
            x1: wrap(x1),
            x2: wrap(x2),
        }
    }

    #[inline]
    pub fn coords(self) -> [f64; 2] {
        [self.x1, self.x2]
    }

    /// Moves the point by `d` and reduces modulo 2π.
    #[inline]
    pub fn translate(self, d: [f64; 2]) -> Self {
        Self::new(self.x1 + d[0], self.x2 + d[1])
    }

    /// Representative of `self − other` in `[-π, π)²`.
    #[inline]
    pub fn displacement(self, other: TorusPoint) -> [f64; 2] {
        [centered(self.x1 - other.x1), centered(self.x2 - other.x2)]
    }

    /// Geodesic distance on the torus.
    pub fn distance(self, other: TorusPoint) -> f64 {
        let d = self.displacement(other);
        d[0].hypot(d[1])
    }

    /// Bitwise key after reduction; coincident atoms compare equal.
    pub(crate) fn key(self) -> (u64, u64) {
        (self.x1.to_bits(), self.x2.to_bits())
    }
}

impl From<[f64; 2]> for TorusPoint {
    fn from(c: [f64; 2]) -> Self {
        Self::new(c[0], c[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates_reduced() {
        let p = TorusPoint::new(-0.5, 7.0);
        assert!((p.x1 - (TWO_PI - 0.5)).abs() < 1e-15);
        assert!((p.x2 - (7.0 - TWO_PI)).abs() < 1e-15);
        let q = TorusPoint::new(-1e-300, TWO_PI);
        assert!(q.x1 >= 0.0 && q.x1 < TWO_PI);
        assert_eq!(q.x2, 0.0);
    }

    #[test]
    fn displacement_in_half_open_box() {
        let a = TorusPoint::new(0.1, 6.2);
        let b = TorusPoint::new(6.2, 0.1);
        let d = a.displacement(b);
        for c in d {
            assert!((-PI..PI).contains(&c));
        }
        assert!((d[0] - (0.1 - 6.2 + TWO_PI)).abs() < 1e-14);
        assert!((d[1] - (6.2 - 0.1 - TWO_PI)).abs() < 1e-14);
        assert_eq!(centered(PI), -PI);
    }
}
