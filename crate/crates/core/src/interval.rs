//! Closed intervals with outward-rounded arithmetic.
//!
//! Basic operations are computed in round-to-nearest and then widened by one
//! ulp on each side, which encloses the exact result. Library transcendentals
//! are widened by a few ulps instead (certified epsilon-inflation under the
//! assumption that libm is accurate to within 2 ulp).

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::EvalError;

const TRANSCENDENTAL_ULPS: u32 = 4;

#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    pub lo: f64,
    pub hi: f64,
}

impl fmt::Debug for IntervalBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:e}, {:e}]", self.lo, self.hi)
    }
}

fn down(x: f64, n: u32) -> f64 {
    let mut y = x;
    for _ in 0..n {
        y = y.next_down();
    }
    y
}

fn up(x: f64, n: u32) -> f64 {
    let mut y = x;
    for _ in 0..n {
        y = y.next_up();
    }
    y
}

impl IntervalBox {
    /// Panics if `lo > hi` or either bound is NaN.
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "invalid interval [{lo}, {hi}]");
        IntervalBox { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        IntervalBox { lo: x, hi: x }
    }

    fn widened(lo: f64, hi: f64, ulps: u32) -> Self {
        IntervalBox {
            lo: down(lo, ulps),
            hi: up(hi, ulps),
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    pub fn is_subset_of(&self, other: &IntervalBox) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn intersects(&self, other: &IntervalBox) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn hull(&self, other: &IntervalBox) -> IntervalBox {
        IntervalBox {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Smallest absolute value in the interval.
    pub fn mig(&self) -> f64 {
        if self.contains_zero() {
            0.0
        } else {
            self.lo.abs().min(self.hi.abs())
        }
    }

    /// Largest absolute value in the interval.
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn abs(&self) -> IntervalBox {
        IntervalBox {
            lo: self.mig(),
            hi: self.mag(),
        }
    }

    pub fn square(&self) -> IntervalBox {
        let a = self.mig();
        let b = self.mag();
        IntervalBox::widened(a * a, b * b, 1).clamp_nonneg()
    }

    fn clamp_nonneg(self) -> IntervalBox {
        IntervalBox {
            lo: self.lo.max(0.0),
            hi: self.hi,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn split(&self, n: usize) -> Vec<IntervalBox> {
        let w = self.width() / n as f64;
        (0..n)
            .map(|i| {
                let lo = if i == 0 { self.lo } else { self.lo + w * i as f64 };
                let hi = if i + 1 == n {
                    self.hi
                } else {
                    self.lo + w * (i + 1) as f64
                };
                IntervalBox::new(lo, hi.max(lo))
            })
            .collect()
    }

    pub fn recip(&self) -> Result<IntervalBox, EvalError> {
        if self.contains_zero() {
            return Err(EvalError::Pole);
        }
        Ok(IntervalBox::widened(1.0 / self.hi, 1.0 / self.lo, 1))
    }

    pub fn div(&self, other: &IntervalBox) -> Result<IntervalBox, EvalError> {
        if other.contains_zero() {
            return Err(EvalError::Pole);
        }
        let c = [
            self.lo / other.lo,
            self.lo / other.hi,
            self.hi / other.lo,
            self.hi / other.hi,
        ];
        Ok(min_max(&c, 1))
    }

    pub fn powi(&self, n: i32) -> Result<IntervalBox, EvalError> {
        if n == 0 {
            return Ok(IntervalBox::point(1.0));
        }
        if n < 0 {
            return self.powi(-n)?.recip();
        }
        let ulps = 2 * n as u32;
        let r = if n % 2 == 0 {
            let a = self.mig();
            let b = self.mag();
            IntervalBox::widened(a.powi(n), b.powi(n), ulps).clamp_nonneg()
        } else {
            IntervalBox::widened(self.lo.powi(n), self.hi.powi(n), ulps)
        };
        Ok(r)
    }

    pub fn sqrt(&self) -> Result<IntervalBox, EvalError> {
        if self.hi < 0.0 {
            return Err(EvalError::Domain("sqrt of negative interval"));
        }
        let lo = self.lo.max(0.0).sqrt();
        Ok(IntervalBox::widened(lo, self.hi.sqrt(), 1).clamp_nonneg())
    }

    pub fn exp(&self) -> Result<IntervalBox, EvalError> {
        let r = IntervalBox::widened(self.lo.exp(), self.hi.exp(), TRANSCENDENTAL_ULPS);
        if r.hi.is_infinite() {
            return Err(EvalError::Overflow);
        }
        Ok(r.clamp_nonneg())
    }

    pub fn ln(&self) -> Result<IntervalBox, EvalError> {
        if self.lo <= 0.0 {
            return Err(EvalError::Domain("log of nonpositive interval"));
        }
        Ok(IntervalBox::widened(
            self.lo.ln(),
            self.hi.ln(),
            TRANSCENDENTAL_ULPS,
        ))
    }

    pub fn sin(&self) -> IntervalBox {
        self.periodic(f64::sin, FRAC_PI_2)
    }

    pub fn cos(&self) -> IntervalBox {
        self.periodic(f64::cos, 0.0)
    }

    // Extrema of sin/cos sit at `phase + k*pi`; include any that fall inside.
    fn periodic(&self, f: fn(f64) -> f64, phase: f64) -> IntervalBox {
        if self.width() >= 2.0 * PI || !self.is_finite() {
            return IntervalBox::new(-1.0, 1.0);
        }
        let a = f(self.lo);
        let b = f(self.hi);
        let mut lo = a.min(b);
        let mut hi = a.max(b);
        // Conservative bracket of the candidate k range.
        let k0 = ((self.lo - phase) / PI).floor() as i64 - 1;
        let k1 = ((self.hi - phase) / PI).ceil() as i64 + 1;
        for k in k0..=k1 {
            let t = phase + k as f64 * PI;
            // The float t is within an ulp or two of the true extremum;
            // include it when it is near the interval to stay sound.
            let slack = 4.0 * f64::EPSILON * t.abs().max(1.0);
            if t >= self.lo - slack && t <= self.hi + slack {
                if k.rem_euclid(2) == 0 {
                    hi = 1.0;
                } else {
                    lo = -1.0;
                }
            }
        }
        let r = IntervalBox::widened(lo, hi, TRANSCENDENTAL_ULPS);
        IntervalBox {
            lo: r.lo.max(-1.0),
            hi: r.hi.min(1.0),
        }
    }

    pub fn tan(&self) -> Result<IntervalBox, EvalError> {
        if self.width() >= PI || !self.is_finite() {
            return Err(EvalError::Pole);
        }
        let k0 = ((self.lo - FRAC_PI_2) / PI).floor() as i64 - 1;
        let k1 = ((self.hi - FRAC_PI_2) / PI).ceil() as i64 + 1;
        for k in k0..=k1 {
            let t = FRAC_PI_2 + k as f64 * PI;
            let slack = 4.0 * f64::EPSILON * t.abs().max(1.0);
            if t >= self.lo - slack && t <= self.hi + slack {
                return Err(EvalError::Pole);
            }
        }
        Ok(IntervalBox::widened(
            self.lo.tan(),
            self.hi.tan(),
            TRANSCENDENTAL_ULPS,
        ))
    }
}

fn min_max(c: &[f64], ulps: u32) -> IntervalBox {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in c {
        // 0 * inf produces NaN; treat it as unbounded.
        if v.is_nan() {
            return IntervalBox::new(f64::NEG_INFINITY, f64::INFINITY);
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    IntervalBox::widened(lo, hi, ulps)
}

impl Add for IntervalBox {
    type Output = IntervalBox;
    fn add(self, o: IntervalBox) -> IntervalBox {
        IntervalBox::widened(self.lo + o.lo, self.hi + o.hi, 1)
    }
}

impl Sub for IntervalBox {
    type Output = IntervalBox;
    fn sub(self, o: IntervalBox) -> IntervalBox {
        IntervalBox::widened(self.lo - o.hi, self.hi - o.lo, 1)
    }
}

impl Mul for IntervalBox {
    type Output = IntervalBox;
    fn mul(self, o: IntervalBox) -> IntervalBox {
        if self.lo == self.hi && o.lo == o.hi {
            let p = self.lo * o.lo;
            return IntervalBox::widened(p, p, 1);
        }
        min_max(
            &[self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi],
            1,
        )
    }
}

impl Neg for IntervalBox {
    type Output = IntervalBox;
    fn neg(self) -> IntervalBox {
        IntervalBox {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_encloses_rounding() {
        let a = IntervalBox::point(0.1);
        let b = IntervalBox::point(0.2);
        let s = a + b;
        assert!(s.lo < 0.30000000000000004 && s.hi >= 0.30000000000000004);
        assert!(s.contains(0.3));
    }

    #[test]
    fn even_power_of_straddling_interval() {
        let x = IntervalBox::new(-2.0, 1.0);
        let y = x.powi(2).unwrap();
        assert_eq!(y.lo, 0.0);
        assert!(y.hi >= 4.0 && y.hi < 4.0 + 1e-12);
    }

    #[test]
    fn sin_catches_interior_maximum() {
        let x = IntervalBox::new(1.0, 2.0);
        let y = x.sin();
        assert_eq!(y.hi, 1.0);
        assert!(y.lo <= 1.0f64.sin());
    }

    #[test]
    fn cos_over_pi() {
        let y = IntervalBox::new(3.0, 3.5).cos();
        assert_eq!(y.lo, -1.0);
    }

    #[test]
    fn tan_pole_rejected() {
        assert!(IntervalBox::new(1.5, 1.6).tan().is_err());
        assert!(IntervalBox::new(0.0, 1.5).tan().is_ok());
    }

    #[test]
    fn division_by_zero_interval() {
        let a = IntervalBox::point(1.0);
        assert!(a.div(&IntervalBox::new(-1.0, 1.0)).is_err());
        let q = a.div(&IntervalBox::new(2.0, 4.0)).unwrap();
        assert!(q.contains(0.25) && q.contains(0.5));
    }
}
