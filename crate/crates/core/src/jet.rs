//! Scalar abstraction shared by point, interval and jet evaluation, and the
//! third-order jet type.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::interval::IntervalBox;

pub trait Scalar:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    fn cst(c: f64) -> Self;
    fn div(self, o: Self) -> Result<Self, EvalError>;
    fn powi(self, n: i32) -> Result<Self, EvalError>;
    fn sqrt(self) -> Result<Self, EvalError>;
    fn exp(self) -> Result<Self, EvalError>;
    fn ln(self) -> Result<Self, EvalError>;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Result<Self, EvalError>;

    fn sq(self) -> Self {
        self * self
    }
}

fn finite(x: f64) -> Result<f64, EvalError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(EvalError::Overflow)
    }
}

impl Scalar for f64 {
    fn cst(c: f64) -> Self {
        c
    }
    fn div(self, o: Self) -> Result<Self, EvalError> {
        if o == 0.0 {
            return Err(EvalError::Pole);
        }
        finite(self / o)
    }
    fn powi(self, n: i32) -> Result<Self, EvalError> {
        if n < 0 && self == 0.0 {
            return Err(EvalError::Pole);
        }
        finite(f64::powi(self, n))
    }
    fn sqrt(self) -> Result<Self, EvalError> {
        if self < 0.0 {
            return Err(EvalError::Domain("sqrt of negative number"));
        }
        Ok(f64::sqrt(self))
    }
    fn exp(self) -> Result<Self, EvalError> {
        finite(f64::exp(self))
    }
    fn ln(self) -> Result<Self, EvalError> {
        if self <= 0.0 {
            return Err(EvalError::Domain("log of nonpositive number"));
        }
        Ok(f64::ln(self))
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Result<Self, EvalError> {
        let t = f64::tan(self);
        if !t.is_finite() || t.abs() > 1e300 {
            return Err(EvalError::Pole);
        }
        Ok(t)
    }
}

impl Scalar for IntervalBox {
    fn cst(c: f64) -> Self {
        IntervalBox::point(c)
    }
    fn div(self, o: Self) -> Result<Self, EvalError> {
        IntervalBox::div(&self, &o)
    }
    fn powi(self, n: i32) -> Result<Self, EvalError> {
        IntervalBox::powi(&self, n)
    }
    fn sqrt(self) -> Result<Self, EvalError> {
        IntervalBox::sqrt(&self)
    }
    fn exp(self) -> Result<Self, EvalError> {
        IntervalBox::exp(&self)
    }
    fn ln(self) -> Result<Self, EvalError> {
        IntervalBox::ln(&self)
    }
    fn sin(self) -> Self {
        IntervalBox::sin(&self)
    }
    fn cos(self) -> Self {
        IntervalBox::cos(&self)
    }
    fn tan(self) -> Result<Self, EvalError> {
        IntervalBox::tan(&self)
    }
    fn sq(self) -> Self {
        self.square()
    }
}

/// Value and first three derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jet3<T> {
    pub v0: T,
    pub v1: T,
    pub v2: T,
    pub v3: T,
}

impl<T: Scalar> Jet3<T> {
    pub fn new(v0: T, v1: T, v2: T, v3: T) -> Self {
        Jet3 { v0, v1, v2, v3 }
    }

    /// The identity jet (x, 1, 0, 0).
    pub fn var(x: T) -> Self {
        Jet3::new(x, T::cst(1.0), T::cst(0.0), T::cst(0.0))
    }

    pub fn constant(c: T) -> Self {
        let z = T::cst(0.0);
        Jet3::new(c, z, z, z)
    }

    /// Chain rule: given the derivatives (g0..g3) of an outer function at
    /// `self.v0`, returns the jet of the composition.
    pub fn chain(self, g: [T; 4]) -> Self {
        let [g0, g1, g2, g3] = g;
        let u1 = self.v1;
        let u2 = self.v2;
        let u3 = self.v3;
        let u1s = u1.sq();
        Jet3 {
            v0: g0,
            v1: g1 * u1,
            v2: g2 * u1s + g1 * u2,
            v3: g3 * (u1s * u1) + T::cst(3.0) * g2 * u1 * u2 + g1 * u3,
        }
    }

    /// Jet of `outer ∘ inner` where `outer` is the jet of the outer map
    /// taken at `inner.v0`.
    pub fn then(self, outer: Jet3<T>) -> Self {
        self.chain([outer.v0, outer.v1, outer.v2, outer.v3])
    }

    pub fn recip(self) -> Result<Self, EvalError> {
        let u = self.v0;
        let r = T::cst(1.0).div(u)?;
        let r2 = r.sq();
        Ok(self.chain([r, -r2, T::cst(2.0) * r2 * r, T::cst(-6.0) * r2.sq()]))
    }
}

impl<T: Scalar> Add for Jet3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Jet3::new(self.v0 + o.v0, self.v1 + o.v1, self.v2 + o.v2, self.v3 + o.v3)
    }
}

impl<T: Scalar> Sub for Jet3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Jet3::new(self.v0 - o.v0, self.v1 - o.v1, self.v2 - o.v2, self.v3 - o.v3)
    }
}

impl<T: Scalar> Neg for Jet3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Jet3::new(-self.v0, -self.v1, -self.v2, -self.v3)
    }
}

impl<T: Scalar> Mul for Jet3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (u0, u1, u2, u3) = (self.v0, self.v1, self.v2, self.v3);
        let (w0, w1, w2, w3) = (o.v0, o.v1, o.v2, o.v3);
        let two = T::cst(2.0);
        let three = T::cst(3.0);
        Jet3 {
            v0: u0 * w0,
            v1: u0 * w1 + u1 * w0,
            v2: u0 * w2 + two * u1 * w1 + u2 * w0,
            v3: u0 * w3 + three * (u1 * w2 + u2 * w1) + u3 * w0,
        }
    }
}

fn falling(n: i32, k: i32) -> f64 {
    (0..k).map(|i| (n - i) as f64).product()
}

impl<T: Scalar> Scalar for Jet3<T> {
    fn cst(c: f64) -> Self {
        Jet3::constant(T::cst(c))
    }

    fn div(self, o: Self) -> Result<Self, EvalError> {
        Ok(self * o.recip()?)
    }

    fn powi(self, n: i32) -> Result<Self, EvalError> {
        let u = self.v0;
        let mut g = [T::cst(0.0); 4];
        for (k, gk) in g.iter_mut().enumerate() {
            let k = k as i32;
            // Derivatives past the degree of a monomial vanish identically.
            if n >= 0 && k > n {
                break;
            }
            *gk = T::cst(falling(n, k)) * u.powi(n - k)?;
        }
        Ok(self.chain(g))
    }

    fn sqrt(self) -> Result<Self, EvalError> {
        let u = self.v0;
        let s = u.sqrt()?;
        let g1 = T::cst(0.5).div(s)?;
        let inv_u = T::cst(1.0).div(u)?;
        let g2 = T::cst(-0.5) * g1 * inv_u;
        let g3 = T::cst(-1.5) * g2 * inv_u;
        Ok(self.chain([s, g1, g2, g3]))
    }

    fn exp(self) -> Result<Self, EvalError> {
        let e = self.v0.exp()?;
        Ok(self.chain([e, e, e, e]))
    }

    fn ln(self) -> Result<Self, EvalError> {
        let u = self.v0;
        let l = u.ln()?;
        let r = T::cst(1.0).div(u)?;
        let r2 = r.sq();
        Ok(self.chain([l, r, -r2, T::cst(2.0) * r2 * r]))
    }

    fn sin(self) -> Self {
        let s = self.v0.sin();
        let c = self.v0.cos();
        self.chain([s, c, -s, -c])
    }

    fn cos(self) -> Self {
        let s = self.v0.sin();
        let c = self.v0.cos();
        self.chain([c, -s, -c, s])
    }

    fn tan(self) -> Result<Self, EvalError> {
        let t = self.v0.tan()?;
        let t2 = t.sq();
        let sec2 = T::cst(1.0) + t2;
        let g2 = T::cst(2.0) * t * sec2;
        let g3 = sec2 * (T::cst(2.0) + T::cst(6.0) * t2);
        Ok(self.chain([t, sec2, g2, g3]))
    }
}
