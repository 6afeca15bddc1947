//! Plain 2-D vector/point types and the exact-arithmetic fallback layer.
//!
//! All coordinates are `f64`. Every `f64` is an exact dyadic rational, so each
//! predicate has a well-defined exact value; the fast path evaluates in floats
//! and defers to `exact` only when the result lands inside the error band.

pub mod exact;

use serde::{Deserialize, Serialize};
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[inline]
pub const fn pt(x: f64, y: f64) -> Point {
    Point { x, y }
}

impl Point {
    pub const ZERO: Point = pt(0.0, 0.0);

    #[inline]
    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of `self × o`; positive when `o` is counterclockwise from `self`.
    #[inline]
    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    /// Counterclockwise quarter turn.
    #[inline]
    pub fn rot90(self) -> Point {
        pt(-self.y, self.x)
    }

    #[inline]
    pub fn norm_inf(self) -> f64 {
        self.x.abs().max(self.y.abs())
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn lex_key(self) -> (f64, f64) {
        (self.x, self.y)
    }

    /// Euclidean norm, used only for error estimates and rendering.
    #[inline]
    pub fn hypot(self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl Add for Point {
    type Output = Point;
    #[inline]
    fn add(self, o: Point) -> Point {
        pt(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    #[inline]
    fn sub(self, o: Point) -> Point {
        pt(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Point {
    type Output = Point;
    #[inline]
    fn neg(self) -> Point {
        pt(-self.x, -self.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    #[inline]
    fn mul(self, s: f64) -> Point {
        pt(self.x * s, self.y * s)
    }
}

impl Div<f64> for Point {
    type Output = Point;
    #[inline]
    fn div(self, s: f64) -> Point {
        pt(self.x / s, self.y / s)
    }
}

/// An exact tie detected by a predicate. The participants are external site
/// keys; the preparation step uses them to pick which point to nudge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tie {
    pub context: &'static str,
    pub participants: Vec<u64>,
}

impl Tie {
    pub fn new(context: &'static str) -> Self {
        Tie { context, participants: Vec::new() }
    }

    pub fn with(context: &'static str, participants: Vec<u64>) -> Self {
        Tie { context, participants }
    }
}

impl std::fmt::Display for Tie {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exact tie in {} (participants {:?})", self.context, self.participants)
    }
}

impl std::error::Error for Tie {}

pub type GeomResult<T> = Result<T, Tie>;

/// Relative tolerance of the float fast path. Values whose magnitude exceeds
/// `FILTER_BAND * scale` are trusted; anything inside the band is re-decided
/// with exact arithmetic.
pub const FILTER_BAND: f64 = 1e-9;

/// Compare a fast float value against zero, falling back to `exact` when the
/// value lies inside the error band. `scale` should bound the magnitude of the
/// terms that produced `fast`. Returns the sign; an exact zero is a `Tie`.
#[inline]
pub fn signum_filtered(
    fast: f64,
    scale: f64,
    context: &'static str,
    exact: impl FnOnce() -> exact::Rat,
) -> GeomResult<std::cmp::Ordering> {
    use std::cmp::Ordering;
    let band = FILTER_BAND * scale.max(f64::MIN_POSITIVE);
    if fast.is_finite() && fast.abs() > band {
        return Ok(if fast > 0.0 { Ordering::Greater } else { Ordering::Less });
    }
    let v = exact();
    match exact::sign(&v) {
        1 => Ok(Ordering::Greater),
        -1 => Ok(Ordering::Less),
        _ => Err(Tie::new(context)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_ops() {
        let a = pt(1.0, 2.0);
        let b = pt(3.0, -1.0);
        assert_eq!(a + b, pt(4.0, 1.0));
        assert_eq!(a - b, pt(-2.0, 3.0));
        assert_eq!(a.dot(b), 1.0);
        assert_eq!(a.cross(b), -7.0);
        assert_eq!(a.rot90(), pt(-2.0, 1.0));
    }

    #[test]
    fn filtered_sign_uses_exact_path_in_band() {
        // 0.1 + 0.2 - 0.3 is a small positive float artifact; the exact value is
        // nonzero as dyadic rationals, and the filter must agree with it.
        let fast = 0.1f64 + 0.2 - 0.3;
        let r = signum_filtered(fast, 1.0, "test", || {
            exact::rat(0.1) + exact::rat(0.2) - exact::rat(0.3)
        })
        .unwrap();
        assert_eq!(r, std::cmp::Ordering::Greater);

        let err = signum_filtered(0.0, 1.0, "test", || exact::Rat::from_integer(0.into()));
        assert!(err.is_err());
    }
}
