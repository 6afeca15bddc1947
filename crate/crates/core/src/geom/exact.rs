//! Exact rational evaluation for the predicate fallback path.

use super::Point;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

pub type Rat = BigRational;

/// Exact conversion; panics on non-finite input (never produced by the pipeline).
pub fn rat(x: f64) -> Rat {
    BigRational::from_float(x).expect("finite coordinate")
}

pub fn sign(r: &Rat) -> i8 {
    if r.is_zero() {
        0
    } else if r.is_positive() {
        1
    } else {
        -1
    }
}

/// Nearest-f64 of a rational. Exactness is never required of this direction;
/// it is used to refine stored positions.
pub fn to_f64(r: &Rat) -> f64 {
    // Scale to keep ~80 bits of the quotient, then divide as floats.
    let num = r.numer();
    let den = r.denom();
    if num.is_zero() {
        return 0.0;
    }
    let shift = (den.bits() as i64 - num.bits() as i64 + 80).max(0) as u64;
    let scaled: BigInt = num << shift;
    let q = &scaled / den;
    let qf = bigint_to_f64(&q);
    qf * 2f64.powi(-(shift as i32))
}

fn bigint_to_f64(v: &BigInt) -> f64 {
    // num-bigint's ToPrimitive saturates cleanly for our magnitudes.
    use num_traits::ToPrimitive;
    v.to_f64().unwrap_or(f64::INFINITY)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RPoint {
    pub x: Rat,
    pub y: Rat,
}

impl RPoint {
    pub fn of(p: Point) -> RPoint {
        RPoint { x: rat(p.x), y: rat(p.y) }
    }

    pub fn to_point(&self) -> Point {
        Point { x: to_f64(&self.x), y: to_f64(&self.y) }
    }

    pub fn sub(&self, o: &RPoint) -> RPoint {
        RPoint { x: &self.x - &o.x, y: &self.y - &o.y }
    }

    pub fn neg(&self) -> RPoint {
        RPoint { x: -self.x.clone(), y: -self.y.clone() }
    }

    pub fn dot(&self, o: &RPoint) -> Rat {
        &self.x * &o.x + &self.y * &o.y
    }

    pub fn cross(&self, o: &RPoint) -> Rat {
        &self.x * &o.y - &self.y * &o.x
    }
}

/// Solves `a11 x + a12 y = b1; a21 x + a22 y = b2`. `None` when singular.
pub fn solve2(a11: &Rat, a12: &Rat, a21: &Rat, a22: &Rat, b1: &Rat, b2: &Rat) -> Option<RPoint> {
    let det = a11 * a22 - a12 * a21;
    if det.is_zero() {
        return None;
    }
    let x = (b1 * a22 - b2 * a12) / &det;
    let y = (a11 * b2 - a21 * b1) / &det;
    Some(RPoint { x, y })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_round_trip() {
        for &v in &[0.1, -3.75, 1e-30, 123456789.125, -0.0] {
            assert_eq!(to_f64(&rat(v)), v);
        }
    }

    #[test]
    fn solve_small_system() {
        let s = solve2(&rat(2.0), &rat(1.0), &rat(1.0), &rat(-1.0), &rat(4.0), &rat(-1.0)).unwrap();
        assert_eq!(s.to_point(), Point { x: 1.0, y: 2.0 });
        assert!(solve2(&rat(1.0), &rat(2.0), &rat(2.0), &rat(4.0), &rat(0.0), &rat(0.0)).is_none());
    }
}
